use std::fmt;

use sg3d_core::config::ConfigError;
use sg3d_core::dataset::DatasetError;
use sg3d_core::evaluation::EvalError;
use sg3d_core::fusion::IngestError;
use sg3d_core::perception::PerceptionError;
use sg3d_core::persistence::PersistenceError;
use sg3d_core::pruning::PruneError;
use sg3d_core::synthetic::SynthError;

/// Process exit codes.
pub mod code {
    pub const CONFIG: i32 = 2;
    pub const PERCEPTION: i32 = 3;
    pub const IO: i32 = 4;
    pub const VALIDATION: i32 = 5;
    pub const NO_CANDIDATE: i32 = 6;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(code::CONFIG, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(code::VALIDATION, message)
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<PerceptionError> for CliError {
    fn from(e: PerceptionError) -> Self {
        let code = match e {
            PerceptionError::Config(_) => code::CONFIG,
            PerceptionError::Recording(_) => code::IO,
            _ => code::PERCEPTION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::MissingManifest(_)
            | DatasetError::Malformed { .. }
            | DatasetError::Invalid(_) => code::CONFIG,
            DatasetError::MissingFiles(_)
            | DatasetError::CorruptImage { .. }
            | DatasetError::Io { .. } => code::IO,
            DatasetError::BadPose { .. } => code::VALIDATION,
        };
        let mut message = e.to_string();
        if matches!(e, DatasetError::MissingManifest(_)) {
            message.push_str(" (expected manifest.json, poses.jsonl, rgb/ and depth/)");
        }
        Self::new(code, message)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Perception(p) => p.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<PersistenceError> for CliError {
    fn from(e: PersistenceError) -> Self {
        let code = match e {
            PersistenceError::Io { .. } => code::IO,
            _ => code::VALIDATION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::NoCandidate(_) => Self::new(code::NO_CANDIDATE, e.to_string()),
            PruneError::InvalidQuery(_) => Self::config(e.to_string()),
            PruneError::InvalidSelection(_) => Self::new(code::PERCEPTION, e.to_string()),
            PruneError::Perception(p) => p.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Io { .. } => code::IO,
            EvalError::InvalidRadius(_) => code::CONFIG,
            _ => code::VALIDATION,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::new(code::IO, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(code::IO, e.to_string())
    }
}
