use thiserror::Error;

/// Errors shared across the ledger, consensus, adversary and resolver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdltError {
    #[error("genesis descriptors differ")]
    GenesisMismatch,

    #[error("byzantine members reach the fault threshold: {byzantine} of {committee} (need strictly fewer than half)")]
    QuorumUnavailable { byzantine: usize, committee: usize },

    #[error("no online node to sample a producer from")]
    EmptyNetwork,

    #[error("record evidence does not match the expected consensus kind")]
    EvidenceKindMismatch,

    #[error("coalition stake {coalition} does not strictly exceed half of total {total}")]
    InsufficientStake { coalition: u64, total: u64 },

    #[error("transfer of {amount} from {from} would drive its balance negative")]
    NegativeBalance { from: String, amount: u64 },

    #[error("event sequence length {events} does not match record count {records}")]
    AlignmentError { events: usize, records: usize },

    #[error("power share {0} is outside (0, 1)")]
    InvalidShare(f64),

    #[error("forged evidence carries an honest signer {signer} on a record the honest execution never produced")]
    SignatureForgery { signer: String },

    #[error("adversary id pool exhausted: {needed} honest ids to mirror, {available} pool ids")]
    PoolExhausted { needed: usize, available: usize },

    #[error("genesis carries no Byzantine-agreement committee")]
    NotBaGenesis,

    #[error("genesis carries no initial stake distribution")]
    NotPosGenesis,

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: u64,
        #[source]
        source: Box<SdltError>,
    },

    #[error("malformed canonical encoding: {0}")]
    Decode(String),
}

impl SdltError {
    pub fn at_step(self, step: u64) -> SdltError {
        SdltError::StepFailed {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, SdltError>;
