use thiserror::Error;

/// Crate-wide error type.
///
/// `Config` and `Json` map to exit code 2 (rejected input), everything else
/// to exit code 3 (the task itself failed). The CLI prints the variant name
/// as a machine-readable class.
#[derive(Debug, Error)]
pub enum Error {
    /// Scenario or model configuration rejected. `pointer` names the
    /// offending key, e.g. `model.holonomy[0].u`.
    #[error("configuration error at {pointer}: {detail}")]
    Config { pointer: String, detail: String },

    /// Scenario file did not parse as JSON with the expected shape.
    #[error("schema error: {detail}")]
    Json { detail: String },

    /// A form that must be d_B-closed is not.
    #[error("form is not closed: sup defect {defect:.3e}")]
    NotClosed { defect: f64 },

    /// A form that must be i del delbar-exact has a harmonic remainder or a
    /// reconstruction residual above tolerance. When the obstruction is a
    /// nonzero average, `harmonic` renders the offending constant matrix.
    #[error("form is not exact: residual {residual:.3e}{}", harmonic.as_deref().map(|h| format!("; harmonic part {h}")).unwrap_or_default())]
    NotExact { residual: f64, harmonic: Option<String> },

    /// The evolving metric lost positivity (smallest eigenvalue at the worst
    /// grid point dropped to or below the floor).
    #[error("positivity loss at t = {t:.6}, grid point {point}: min eigenvalue {min_eig:.3e}")]
    PositivityLoss { t: f64, point: usize, min_eig: f64 },

    /// The reference family omega-hat(t) is not positive over the requested
    /// horizon.
    #[error("reference family not positive at t = {t:.6}: min eigenvalue {min_eig:.3e}")]
    InfeasibleHorizon { t: f64, min_eig: f64 },

    /// The adaptive step size underflowed.
    #[error("time step underflow at t = {t:.6}: dt = {dt:.3e}")]
    Stalled { t: f64, dt: f64 },

    /// Re-projection onto basic fields required a correction above the
    /// abort threshold; the computation is no longer trustworthy.
    #[error("basicness defect {norm:.3e} exceeds bound {bound:.3e}")]
    BasicDefect { norm: f64, bound: f64 },

    /// Gauduchon factor computation failed (no positive solution at the
    /// requested residual).
    #[error("Gauduchon gauge failure: {detail}")]
    GaugeFailure { detail: String },

    /// Potential recovery from a metric trajectory left a residual above the
    /// step-size-aware tolerance.
    #[error("potential reconstruction residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ReconstructFailure { residual: f64, tol: f64 },

    /// Finite-difference linearization could not be evaluated even after
    /// shrinking the probe amplitude.
    #[error("linearization failure: {detail}")]
    LinearizeFailure { detail: String },

    /// Polynomial fit for a principal-symbol sample left a residual above 5%
    /// of the leading term.
    #[error("symbol fit unresolved: relative residual {residual:.3e}")]
    SymbolUnresolved { residual: f64 },

    /// Checkpoint file rejected (magic, version, shape, checksum, length).
    #[error("checkpoint error: {detail}")]
    Checkpoint { detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(pointer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { pointer: pointer.into(), detail: detail.into() }
    }

    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json { .. } => 2,
            _ => 3,
        }
    }

    /// Short machine-readable class name for error reports.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Json { .. } => "schema",
            Error::NotClosed { .. } => "not_closed",
            Error::NotExact { .. } => "not_exact",
            Error::PositivityLoss { .. } => "positivity_loss",
            Error::InfeasibleHorizon { .. } => "infeasible_horizon",
            Error::Stalled { .. } => "stalled",
            Error::BasicDefect { .. } => "basic_defect",
            Error::GaugeFailure { .. } => "gauge_failure",
            Error::ReconstructFailure { .. } => "reconstruct_failure",
            Error::LinearizeFailure { .. } => "linearize_failure",
            Error::SymbolUnresolved { .. } => "symbol_unresolved",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
