use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("flux {flux} Phi0 is at SQUID frustration (|cos(pi*flux)| <= {epsilon})")]
    FluxAtFrustration { flux: f64, epsilon: f64 },

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("target frequency {f_target_hz} Hz unreachable (attainable band {f_min_hz}..{f_max_hz} Hz)")]
    TargetUnreachable {
        f_target_hz: f64,
        f_min_hz: f64,
        f_max_hz: f64,
    },

    #[error("responsivity {r_target} linewidths unreachable on contour (range {r_min}..{r_max})")]
    ResponsivityUnreachable { r_target: f64, r_min: f64, r_max: f64 },

    #[error("stage {stage} is inoperable")]
    StageInoperable { stage: usize },

    #[error("broken path: inoperable stage {broken_stage} blocks data at stage {data_stage}")]
    BrokenPath {
        broken_stage: usize,
        data_stage: usize,
    },

    #[error("{0} is not a perfect square")]
    NotPerfectSquare(u64),

    #[error("calibration states are degenerate: separation {separation} < {threshold}")]
    DegenerateStates { separation: f64, threshold: f64 },

    #[error("transition samples do not span both tails (min P {p_min}, max P {p_max})")]
    InsufficientSpan { p_min: f64, p_max: f64 },

    #[error("value {0} outside the open interval (0, 1)")]
    OutOfDomain(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
