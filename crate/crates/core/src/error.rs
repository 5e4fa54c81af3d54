use std::error::Error as StdError;

use thiserror::Error;

use crate::classifier::ClassifierError;
use crate::dataio::FormatError;
use crate::masker::MaskerError;
use crate::nn::NnError;
use crate::pipeline::PipelineError;
use crate::pruner::PruneError;
use crate::synth::SynthError;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Masker(#[from] MaskerError),
}

/// Coarse grouping used to pick process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    InvalidInput,
    Format,
    Infeasible,
    Divergence,
}

pub trait Categorize {
    fn category(&self) -> ErrorCategory;
}

impl Categorize for NnError {
    fn category(&self) -> ErrorCategory {
        match self {
            NnError::NonFinite { .. } => ErrorCategory::Divergence,
            _ => ErrorCategory::InvalidInput,
        }
    }
}

impl Categorize for FormatError {
    fn category(&self) -> ErrorCategory {
        match self {
            FormatError::Io(_) => ErrorCategory::Io,
            _ => ErrorCategory::Format,
        }
    }
}

impl Categorize for PipelineError {
    fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Format(f) => f.category(),
            PipelineError::Infeasible(_) => ErrorCategory::Infeasible,
            _ => ErrorCategory::InvalidInput,
        }
    }
}

impl Categorize for SynthError {
    fn category(&self) -> ErrorCategory {
        match self {
            SynthError::Format(f) => f.category(),
            SynthError::Placement { .. } => ErrorCategory::Infeasible,
            SynthError::InvalidSpec(_) => ErrorCategory::InvalidInput,
        }
    }
}

impl Categorize for ClassifierError {
    fn category(&self) -> ErrorCategory {
        match self {
            ClassifierError::Divergence { .. } => ErrorCategory::Divergence,
            ClassifierError::Nn(e) => e.category(),
            ClassifierError::Format(f) => f.category(),
            _ => ErrorCategory::InvalidInput,
        }
    }
}

impl Categorize for PruneError {
    fn category(&self) -> ErrorCategory {
        match self {
            PruneError::Retrain { source, .. } | PruneError::Classifier(source) => {
                source.category()
            }
            PruneError::Nn(e) => e.category(),
            _ => ErrorCategory::InvalidInput,
        }
    }
}

impl Categorize for MaskerError {
    fn category(&self) -> ErrorCategory {
        match self {
            MaskerError::Divergence { .. } => ErrorCategory::Divergence,
            MaskerError::Nn(e) => e.category(),
            MaskerError::Format(f) => f.category(),
            _ => ErrorCategory::InvalidInput,
        }
    }
}

impl Categorize for Error {
    fn category(&self) -> ErrorCategory {
        match self {
            Error::Nn(e) => e.category(),
            Error::Format(e) => e.category(),
            Error::Pipeline(e) => e.category(),
            Error::Synth(e) => e.category(),
            Error::Classifier(e) => e.category(),
            Error::Prune(e) => e.category(),
            Error::Masker(e) => e.category(),
        }
    }
}

/// Category of a library error behind a trait object, if it is one.
pub fn categorize(e: &(dyn StdError + 'static)) -> Option<ErrorCategory> {
    macro_rules! try_types {
        ($($t:ty),*) => {
            $(if let Some(x) = e.downcast_ref::<$t>() {
                return Some(x.category());
            })*
        };
    }
    try_types!(
        Error,
        NnError,
        FormatError,
        PipelineError,
        SynthError,
        ClassifierError,
        PruneError,
        MaskerError
    );
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        let e = Error::from(FormatError::Truncated {
            needed: 4,
            available: 0,
        });
        assert_eq!(e.category(), ErrorCategory::Format);
        let e = PipelineError::Infeasible("x".into());
        assert_eq!(categorize(&e), Some(ErrorCategory::Infeasible));
        let e = ClassifierError::Divergence {
            epoch: 0,
            detail: String::new(),
        };
        assert_eq!(categorize(&e), Some(ErrorCategory::Divergence));
        let io = FormatError::Io(std::io::Error::other("x"));
        assert_eq!(io.category(), ErrorCategory::Io);
    }
}
