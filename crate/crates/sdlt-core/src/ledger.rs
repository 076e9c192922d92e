//! State algebra of the abstract ledger: append sequences over a fixed
//! genesis, the prefix partial order, truncation, a canonical injective
//! byte encoding, and the local-state bag a joining node observes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SdltError};

/// Fixed-width node identity. Equality is byte equality; honesty is a
/// scenario attribute, never part of the identity.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub [u8; 16]);

impl NodeId {
    pub const LEN: usize = 16;

    /// Deterministic identity from a small index, for rosters built in
    /// configs and tests. The leading tag byte keeps families of ids
    /// (honest rosters, adversary pools) disjoint.
    pub fn from_index(tag: u8, index: u64) -> Self {
        let mut bytes = [0u8; 16];
        bytes[0] = tag;
        bytes[8..].copy_from_slice(&index.to_be_bytes());
        NodeId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let raw = hex::decode(s)
            .map_err(|e| SdltError::InvalidConfiguration(format!("bad node id hex: {e}")))?;
        let bytes: [u8; 16] = raw
            .try_into()
            .map_err(|_| SdltError::InvalidConfiguration("node id must be 16 bytes".into()))?;
        Ok(NodeId(bytes))
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.to_hex())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        NodeId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// The initial state I: the only data a joining node trusts a priori.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenesisDescriptor {
    #[serde(with = "crate::hex_bytes")]
    pub tag: Vec<u8>,
    /// Committee C for Byzantine-agreement scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ba_committee: Option<Vec<NodeId>>,
    /// Initial token distribution for proof-of-stake scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_stake: Option<BTreeMap<NodeId, u64>>,
}

impl GenesisDescriptor {
    pub fn plain(tag: impl Into<Vec<u8>>) -> Self {
        GenesisDescriptor {
            tag: tag.into(),
            ba_committee: None,
            initial_stake: None,
        }
    }

    pub fn ba(tag: impl Into<Vec<u8>>, committee: Vec<NodeId>) -> Result<Self> {
        if committee.is_empty() {
            return Err(SdltError::InvalidConfiguration(
                "BA committee must be non-empty".into(),
            ));
        }
        let distinct: BTreeSet<_> = committee.iter().collect();
        if distinct.len() != committee.len() {
            return Err(SdltError::InvalidConfiguration(
                "BA committee contains duplicate ids".into(),
            ));
        }
        Ok(GenesisDescriptor {
            tag: tag.into(),
            ba_committee: Some(committee),
            initial_stake: None,
        })
    }

    pub fn pos(tag: impl Into<Vec<u8>>, initial_stake: BTreeMap<NodeId, u64>) -> Result<Self> {
        if initial_stake.values().sum::<u64>() == 0 {
            return Err(SdltError::InvalidConfiguration(
                "PoS genesis requires total initial stake > 0".into(),
            ));
        }
        Ok(GenesisDescriptor {
            tag: tag.into(),
            ba_committee: None,
            initial_stake: Some(initial_stake),
        })
    }

    pub fn committee(&self) -> Result<&[NodeId]> {
        self.ba_committee.as_deref().ok_or(SdltError::NotBaGenesis)
    }

    pub fn stake(&self) -> Result<&BTreeMap<NodeId, u64>> {
        self.initial_stake.as_ref().ok_or(SdltError::NotPosGenesis)
    }
}

/// Digest of the ordered event batch a record appended. Payload content is
/// never inspected downstream, only compared.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PayloadDigest(pub [u8; 32]);

impl fmt::Debug for PayloadDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PayloadDigest({})", hex::encode(&self.0[..8]))
    }
}

impl Serialize for PayloadDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for PayloadDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(PayloadDigest(bytes))
    }
}

/// Consensus-specific facts attached to one append.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// Committee members that signed the agreed batch.
    Ba { signers: BTreeSet<NodeId> },
    /// One unit-weighted proof-of-work block and its producer.
    Pow { work: u64, producer: NodeId },
    /// Stake-majority coalition with each member's stake at signing time.
    Pos { signers: BTreeMap<NodeId, u64> },
}

impl Evidence {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Evidence::Ba { .. } => "ba",
            Evidence::Pow { .. } => "pow",
            Evidence::Pos { .. } => "pos",
        }
    }
}

/// One "append": a payload digest plus the evidence that authorized it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AppendRecord {
    pub payload_digest: PayloadDigest,
    pub evidence: Evidence,
}

/// The state S_t: genesis plus the ordered append sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LedgerState {
    pub genesis: GenesisDescriptor,
    pub records: Vec<AppendRecord>,
}

impl LedgerState {
    pub fn genesis_only(genesis: GenesisDescriptor) -> Self {
        LedgerState {
            genesis,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Successor state with one more record. The only way states grow.
    pub fn appended(&self, record: AppendRecord) -> LedgerState {
        let mut next = self.clone();
        next.records.push(record);
        next
    }
}

/// true iff `a.records` is an initial segment of `b.records`. Errors when
/// the two states do not even share a genesis.
pub fn is_prefix(a: &LedgerState, b: &LedgerState) -> Result<bool> {
    if a.genesis != b.genesis {
        return Err(SdltError::GenesisMismatch);
    }
    Ok(a.records.len() <= b.records.len() && b.records[..a.records.len()] == a.records[..])
}

/// S^{-k}: drop the last k appends, saturating at the genesis-only state.
pub fn truncate(s: &LedgerState, k: usize) -> LedgerState {
    let keep = s.records.len().saturating_sub(k);
    LedgerState {
        genesis: s.genesis.clone(),
        records: s.records[..keep].to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Canonical encoding
//
// Length-prefixed, fixed field order, sets emitted in NodeId order. Injective
// by construction; doubles as the on-disk snapshot format. Bumping the layout
// requires bumping VERSION.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"SDLT";
const VERSION: u8 = 1;

const EV_BA: u8 = 1;
const EV_POW: u8 = 2;
const EV_POS: u8 = 3;

fn put_len(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_len(out, b.len());
    out.extend_from_slice(b);
}

/// Deterministic injective encoding of a state; stable across runs,
/// platforms, and process restarts.
pub fn canonical_bytes(s: &LedgerState) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 64 * s.records.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_bytes(&mut out, &s.genesis.tag);
    match &s.genesis.ba_committee {
        None => out.push(0),
        Some(committee) => {
            out.push(1);
            put_len(&mut out, committee.len());
            for id in committee {
                out.extend_from_slice(id.as_bytes());
            }
        }
    }
    match &s.genesis.initial_stake {
        None => out.push(0),
        Some(stake) => {
            out.push(1);
            put_len(&mut out, stake.len());
            for (id, amount) in stake {
                out.extend_from_slice(id.as_bytes());
                out.extend_from_slice(&amount.to_le_bytes());
            }
        }
    }
    put_len(&mut out, s.records.len());
    for record in &s.records {
        out.extend_from_slice(&record.payload_digest.0);
        match &record.evidence {
            Evidence::Ba { signers } => {
                out.push(EV_BA);
                put_len(&mut out, signers.len());
                for id in signers {
                    out.extend_from_slice(id.as_bytes());
                }
            }
            Evidence::Pow { work, producer } => {
                out.push(EV_POW);
                out.extend_from_slice(&work.to_le_bytes());
                out.extend_from_slice(producer.as_bytes());
            }
            Evidence::Pos { signers } => {
                out.push(EV_POS);
                put_len(&mut out, signers.len());
                for (id, stake) in signers {
                    out.extend_from_slice(id.as_bytes());
                    out.extend_from_slice(&stake.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SdltError::Decode("unexpected end of input".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn len(&mut self) -> Result<usize> {
        let raw = self.take(4)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let raw = self.take(8)?;
        Ok(u64::from_le_bytes(raw.try_into().unwrap()))
    }

    fn node_id(&mut self) -> Result<NodeId> {
        let raw = self.take(NodeId::LEN)?;
        Ok(NodeId(raw.try_into().unwrap()))
    }
}

/// Inverse of [`canonical_bytes`].
pub fn decode_state(bytes: &[u8]) -> Result<LedgerState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(SdltError::Decode("bad magic".into()));
    }
    if r.u8()? != VERSION {
        return Err(SdltError::Decode("unsupported version".into()));
    }
    let tag_len = r.len()?;
    let tag = r.take(tag_len)?.to_vec();
    let ba_committee = match r.u8()? {
        0 => None,
        1 => {
            let n = r.len()?;
            let mut committee = Vec::with_capacity(n);
            for _ in 0..n {
                committee.push(r.node_id()?);
            }
            Some(committee)
        }
        other => return Err(SdltError::Decode(format!("bad committee flag {other}"))),
    };
    let initial_stake = match r.u8()? {
        0 => None,
        1 => {
            let n = r.len()?;
            let mut stake = BTreeMap::new();
            for _ in 0..n {
                let id = r.node_id()?;
                let amount = r.u64()?;
                stake.insert(id, amount);
            }
            Some(stake)
        }
        other => return Err(SdltError::Decode(format!("bad stake flag {other}"))),
    };
    let record_count = r.len()?;
    let mut records = Vec::with_capacity(record_count);
    for _ in 0..record_count {
        let digest = PayloadDigest(r.take(32)?.try_into().unwrap());
        let evidence = match r.u8()? {
            EV_BA => {
                let n = r.len()?;
                let mut signers = BTreeSet::new();
                for _ in 0..n {
                    signers.insert(r.node_id()?);
                }
                Evidence::Ba { signers }
            }
            EV_POW => {
                let work = r.u64()?;
                let producer = r.node_id()?;
                Evidence::Pow { work, producer }
            }
            EV_POS => {
                let n = r.len()?;
                let mut signers = BTreeMap::new();
                for _ in 0..n {
                    let id = r.node_id()?;
                    let stake = r.u64()?;
                    signers.insert(id, stake);
                }
                Evidence::Pos { signers }
            }
            other => return Err(SdltError::Decode(format!("bad evidence tag {other}"))),
        };
        records.push(AppendRecord {
            payload_digest: digest,
            evidence,
        });
    }
    if r.pos != bytes.len() {
        return Err(SdltError::Decode("trailing bytes".into()));
    }
    Ok(LedgerState {
        genesis: GenesisDescriptor {
            tag,
            ba_committee,
            initial_stake,
        },
        records,
    })
}

// ---------------------------------------------------------------------------
// Local-state bag
// ---------------------------------------------------------------------------

/// The bag of (node, claimed state) pairs presented to a joining node.
/// One entry per node: a node presenting twice is normalized to its last
/// claim. Iteration is in NodeId order so nothing downstream can depend on
/// insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalStateBag {
    entries: BTreeMap<NodeId, LedgerState>,
}

impl LocalStateBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: NodeId, claim: LedgerState) {
        self.entries.insert(node, claim);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, node: &NodeId) -> Option<&LedgerState> {
        self.entries.get(node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &LedgerState)> {
        self.entries.iter()
    }

    /// Sub-bag holding the entries whose node is selected by the mask over
    /// this bag's NodeId-ordered entries. Used by subset enumeration.
    pub fn subset_by_mask(&self, mask: u64) -> LocalStateBag {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, (id, s))| (*id, s.clone()))
            .collect();
        LocalStateBag { entries }
    }
}

impl FromIterator<(NodeId, LedgerState)> for LocalStateBag {
    fn from_iter<I: IntoIterator<Item = (NodeId, LedgerState)>>(iter: I) -> Self {
        LocalStateBag {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Set equality of two bags under (NodeId, canonical bytes) pairing.
pub fn bag_equal(x: &LocalStateBag, y: &LocalStateBag) -> bool {
    if x.entries.len() != y.entries.len() {
        return false;
    }
    x.entries.iter().zip(y.entries.iter()).all(|((ux, sx), (uy, sy))| {
        ux == uy && canonical_bytes(sx) == canonical_bytes(sy)
    })
}
