use std::fmt;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent input: wrong dimensions, singular covariance, bad order.
    #[error("invalid input: {0}")]
    Input(String),

    /// A trajectory left the admissible region or produced non-finite values.
    #[error("divergence at {0}")]
    Divergence(DivergenceSite),

    /// The requested operation has no meaning for this problem kind.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numerical procedure failed to reach its accuracy target.
    #[error("accuracy not reached: {0}")]
    Accuracy(String),

    /// Gradient descent blew up; the step size is too large.
    #[error("step size too large: {0}")]
    StepSize(String),

    /// One or more configuration keys failed validation.
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Location of a blow-up inside a rollout or training run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DivergenceSite {
    pub step: usize,
    pub particle: Option<usize>,
    pub stage: Option<usize>,
}

impl fmt::Display for DivergenceSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}", self.step)?;
        if let Some(p) = self.particle {
            write!(f, ", particle {p}")?;
        }
        if let Some(s) = self.stage {
            write!(f, ", stage {s}")?;
        }
        Ok(())
    }
}

/// A single rejected configuration key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn divergence(step: usize) -> Self {
        Error::Divergence(DivergenceSite {
            step,
            ..Default::default()
        })
    }

    /// Attach a particle index to a divergence error; other errors pass through.
    pub(crate) fn at_particle(self, particle: usize) -> Self {
        match self {
            Error::Divergence(mut site) => {
                site.particle.get_or_insert(particle);
                Error::Divergence(site)
            }
            other => other,
        }
    }

    /// Attach a stage index to a divergence error; other errors pass through.
    pub(crate) fn at_stage(self, stage: usize) -> Self {
        match self {
            Error::Divergence(mut site) => {
                site.stage.get_or_insert(stage);
                Error::Divergence(site)
            }
            other => other,
        }
    }
}
