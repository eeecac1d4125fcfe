use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition on arguments other than shapes was violated.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid patch layout: {0}")]
    Layout(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("finite-difference oracle hit a non-finite value at coordinate {index}")]
    Oracle { index: usize },

    #[error("signed-rank test undefined: all differences are zero")]
    UndefinedTest,

    #[error("exact signed-rank test supports at most {max} nonzero differences, got {n}")]
    TestSize { n: usize, max: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
