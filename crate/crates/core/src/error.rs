use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or out-of-range arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Data that cannot support the requested computation (e.g. all points equal).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// `L (X'X)^- L'` is singular or `L` is not estimable under the design.
    #[error("contrast is not testable: {0}")]
    NonTestableContrast(String),

    /// The residual Gram matrix vanishes (perfect fit).
    #[error("degenerate fit: residual Gram matrix is numerically zero")]
    DegenerateFit,

    #[error("truncation {requested} exceeds residual rank {rank}")]
    Truncation { requested: usize, rank: usize },

    #[error("anchor count {requested} exceeds landmark residual rank {rank}")]
    AnchorRank { requested: usize, rank: usize },

    #[error("observation {index} has leverage {leverage} (must be < 1)")]
    Leverage { index: usize, leverage: f64 },

    #[error("kernel has no exact finite feature map: {0}")]
    UnsupportedKernel(String),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than by the numerics
    /// of a well-formed problem.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DegenerateData(_)
                | Error::DegenerateDesign(_)
                | Error::NonTestableContrast(_)
                | Error::UnsupportedKernel(_)
        )
    }

    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateData(_) => "degenerate_data",
            Error::DegenerateDesign(_) => "degenerate_design",
            Error::NonTestableContrast(_) => "non_testable_contrast",
            Error::DegenerateFit => "degenerate_fit",
            Error::Truncation { .. } => "truncation",
            Error::AnchorRank { .. } => "anchor_rank",
            Error::Leverage { .. } => "leverage",
            Error::UnsupportedKernel(_) => "unsupported_kernel",
        }
    }
}
