use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("structured data has no records")]
    EmptyRecords,
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("plan index {index} out of range for {len} records")]
    PlanIndexOutOfRange { index: usize, len: usize },
    #[error("record {index} appears more than once in the plan")]
    DuplicatePlanIndex { index: usize },
    #[error("plan token {token:?} does not resolve to an unused record")]
    UnresolvedPlanToken { token: String },
    #[error("plan has {len} entries, more than the position limit {max}")]
    PlanTooLong { len: usize, max: usize },
    #[error("ordering has {got} labels but the data has {expected} records")]
    OrderingLength { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),
    #[error("label {label} at step {step} is masked out")]
    MaskedLabel { step: usize, label: usize },
    #[error("record {0} has an empty key span")]
    EmptyKeySpan(usize),
    #[error("source sequence of {len} tokens exceeds the limit {max} and would cut the plan")]
    SourceOverflow { len: usize, max: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("self-BLEU needs at least two outputs, got {0}")]
    TooFewOutputs(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}
