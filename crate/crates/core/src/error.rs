use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes violate an operation's shape rule.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// A precondition of an operation does not hold.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A primitive produced NaN or infinity.
    #[error("numerical overflow: non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for contract and shape violations (as opposed to numerical failures).
    pub fn is_contract(&self) -> bool {
        matches!(self, Error::Shape { .. } | Error::Contract(_))
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
