//! Run configuration file (TOML). Every section and key is optional; missing
//! keys take their defaults and unknown keys are errors.
//!
//! ```toml
//! [fusion]
//! association_distance = 0.5      # meters
//! label_match = "exact-normalized" # or "token-overlap"
//! min_points = 20
//!
//! [perception]
//! chunk_size = 10
//! grounding_threshold = 0.3
//! exclusions = ["wall", "floor", "ceiling", "door frame", "doorframe"]
//! timeout_s = 30.0
//! retries = 2
//!
//! [pruning]
//! max_nodes = 8
//! max_radius = 5.0                # meters around the robot; omit for none
//!
//! [evaluation]
//! match_radius = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::DEFAULT_MATCH_RADIUS;
use crate::fusion::FusionConfig;
use crate::perception::PerceptionConfig;
use crate::pruning::DEFAULT_MAX_NODES;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    pub max_nodes: usize,
    pub max_radius: Option<f64>,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            max_nodes: DEFAULT_MAX_NODES,
            max_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub match_radius: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            match_radius: DEFAULT_MATCH_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub perception: PerceptionConfig,
    pub pruning: PruningConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml_str(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.fusion.validate().map_err(ConfigError::Invalid)?;
        let p = &self.perception;
        if p.chunk_size < 1 {
            return invalid("perception.chunk_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&p.grounding_threshold) {
            return invalid(format!(
                "perception.grounding_threshold must lie in [0, 1], got {}",
                p.grounding_threshold
            ));
        }
        if !(p.timeout_s.is_finite() && p.timeout_s > 0.0) {
            return invalid(format!(
                "perception.timeout_s must be positive, got {}",
                p.timeout_s
            ));
        }
        if self.pruning.max_nodes < 1 {
            return invalid("pruning.max_nodes must be at least 1".into());
        }
        if let Some(r) = self.pruning.max_radius {
            if !(r.is_finite() && r > 0.0) {
                return invalid(format!("pruning.max_radius must be positive, got {r}"));
            }
        }
        let m = self.evaluation.match_radius;
        if !(m.is_finite() && m > 0.0) {
            return invalid(format!("evaluation.match_radius must be positive, got {m}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::LabelMatch;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(
            PipelineConfig::from_toml_str("").unwrap(),
            PipelineConfig::default()
        );
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn documented_example_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = PipelineConfig::from_toml_str(&text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.pruning.max_radius, Some(5.0));
    }

    #[test]
    fn partial_sections() {
        let cfg = PipelineConfig::from_toml_str(
            "[fusion]\nlabel_match = \"token-overlap\"\n[perception]\nexclusions = []\n",
        )
        .unwrap();
        assert_eq!(cfg.fusion.label_match, LabelMatch::TokenOverlap);
        assert_eq!(cfg.fusion.association_distance, 0.5);
        assert!(cfg.perception.exclusions.is_empty());
        assert_eq!(cfg.pruning.max_nodes, 8);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("[fusion]\ntau = 0.4\n").is_err());
        assert!(PipelineConfig::from_toml_str("[extra]\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let cfg = PipelineConfig::from_toml_str("[fusion]\nassociation_distance = -1.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let cfg = PipelineConfig::from_toml_str("[pruning]\nmax_nodes = 0\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
