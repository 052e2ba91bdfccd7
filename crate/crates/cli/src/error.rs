use msq_core::dists::DistError;
use msq_core::fluid::FluidError;
use msq_core::limitsim::LimitError;
use msq_core::microsim::SimError;
use msq_core::scalestats::verify::VerifyError;
use msq_core::scalestats::ScaleError;

/// Failures, grouped by the exit status they map to.
#[derive(Debug)]
pub enum CliError {
    /// The configuration is malformed or inconsistent.
    Schema(String),
    /// A solver or simulator failed on a valid configuration.
    Numerical(String),
    /// Reading or writing artifacts failed.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Schema(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DistError> for CliError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::Divergence(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Schema(e.to_string()),
        }
    }
}

impl From<FluidError> for CliError {
    fn from(e: FluidError) -> Self {
        match e {
            FluidError::Input(_) => CliError::Schema(e.to_string()),
            FluidError::NoContraction { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<LimitError> for CliError {
    fn from(e: LimitError) -> Self {
        match e {
            LimitError::Input(_) => CliError::Schema(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ScaleError> for CliError {
    fn from(e: ScaleError) -> Self {
        CliError::Schema(e.to_string())
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Sim(e) => e.into(),
            VerifyError::Dist(e) => e.into(),
            VerifyError::Fluid(e) => e.into(),
            VerifyError::Limit(e) => e.into(),
            VerifyError::Scale(e) => e.into(),
        }
    }
}
