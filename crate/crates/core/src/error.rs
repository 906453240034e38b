use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("voxel spacing must be finite and strictly positive, got ({0}, {1}, {2})")]
    InvalidSpacing(f64, f64, f64),
    #[error("grid dimensions must be positive, got {0}x{1}x{2}")]
    EmptyDims(usize, usize, usize),
    #[error("grid data has {got} values but dimensions require {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("grids are not co-registered (dimensions or spacing differ)")]
    DimensionMismatch,
    #[error("unknown instance id {0}")]
    UnknownInstance(u32),
    #[error("no centers detected")]
    NoCenters,
    #[error("domain mask is empty")]
    EmptyDomain,
    #[error("empty cohort")]
    EmptyCohort,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
    #[error("phantom packing infeasible after {attempts} attempts")]
    InfeasiblePhantom { attempts: usize },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: &'static str) -> Self {
        Error::InvalidParameter { name, reason }
    }
}
