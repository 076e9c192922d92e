//! Abstract distributed-ledger simulator: a discrete-time state algebra,
//! three consensus transition functions (committee agreement, proof of
//! work, proof of stake), adversary constructions, and machine-checkable
//! forms of the weak, strong and probabilistic statelessness properties a
//! joining node may rely on.
//!
//! Everything is a pure function of explicit inputs and seeds; Monte Carlo
//! aggregates are independent of worker width.

pub mod adversary;
pub mod consensus;
pub mod error;
pub mod exec;
pub mod harness;
pub mod ledger;
pub mod resolvers;

pub use error::{Result, SdltError};
pub use ledger::{
    bag_equal, canonical_bytes, decode_state, is_prefix, truncate, AppendRecord, Evidence,
    GenesisDescriptor, LedgerState, LocalStateBag, NodeId, PayloadDigest,
};

/// Serde helper: byte vectors as hex strings in the JSON mirror.
pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        bytes: &[u8],
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}
