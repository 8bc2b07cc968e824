//! Mask run-length encoding: alternating `(unset, set)` run lengths over the
//! row-major pixel sequence, always starting with an unset run (possibly 0).

use thiserror::Error;

use crate::model::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskDecodeError {
    #[error("run-length stream covers {covered} pixels, more than the {expected} of a {width}x{height} frame")]
    TooLong {
        covered: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
    #[error("run-length stream covers {covered} pixels, fewer than the {expected} of a {width}x{height} frame")]
    TooShort {
        covered: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
}

pub fn encode(mask: &BinaryMask) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &bit in mask.bits() {
        if bit == current {
            run += 1;
        } else {
            counts.push(run);
            current = bit;
            run = 1;
        }
    }
    counts.push(run);
    counts
}

pub fn decode(counts: &[u64], width: u32, height: u32) -> Result<BinaryMask, MaskDecodeError> {
    let expected = u64::from(width) * u64::from(height);
    let covered = counts
        .iter()
        .try_fold(0u64, |acc, c| acc.checked_add(*c))
        .unwrap_or(u64::MAX);
    if covered > expected {
        return Err(MaskDecodeError::TooLong {
            covered,
            expected,
            width,
            height,
        });
    }
    if covered < expected {
        return Err(MaskDecodeError::TooShort {
            covered,
            expected,
            width,
            height,
        });
    }
    let mut bits = Vec::with_capacity(expected as usize);
    for (i, &c) in counts.iter().enumerate() {
        let on = i % 2 == 1;
        bits.extend(std::iter::repeat_n(on, c as usize));
    }
    Ok(BinaryMask::from_bits(width, height, bits).expect("length checked above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn starts_with_unset_run() {
        let mut m = BinaryMask::new(3, 1);
        m.set(0, 0, true);
        assert_eq!(encode(&m), vec![0, 1, 2]);
        assert_eq!(encode(&BinaryMask::new(2, 2)), vec![4]);
    }

    #[test]
    fn length_guards() {
        assert!(matches!(
            decode(&[3, 2], 2, 2),
            Err(MaskDecodeError::TooLong { covered: 5, .. })
        ));
        assert!(matches!(
            decode(&[1, 2], 2, 2),
            Err(MaskDecodeError::TooShort { .. })
        ));
        assert!(decode(&[u64::MAX, 2], 2, 2).is_err());
        let m = decode(&[1, 2, 1], 2, 2).unwrap();
        assert_eq!(m.population(), 2);
        assert!(m.get(1, 0) && m.get(0, 1));
    }

    proptest! {
        #[test]
        fn round_trip(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
            let bits: Vec<bool> = (0..w * h)
                .map(|i| (seed.rotate_left(i % 64) ^ u64::from(i)) & 3 == 0)
                .collect();
            let m = BinaryMask::from_bits(w, h, bits).unwrap();
            prop_assert_eq!(decode(&encode(&m), w, h).unwrap(), m);
        }
    }
}
