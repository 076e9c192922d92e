//! The three state-transition functions: committee agreement, work-weighted
//! leader sampling, and stake-majority signing, plus the work accumulator
//! and stake bookkeeping derived from history.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SdltError};
use crate::ledger::{AppendRecord, Evidence, LedgerState, NodeId, PayloadDigest};

/// Deterministic random source used throughout the simulator.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// One roster entry: identity, honesty, work share and online schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub id: NodeId,
    pub honest: bool,
    /// Work share in [0, 1]; only meaningful for proof-of-work scenarios.
    #[serde(default)]
    pub power: f64,
    /// Steps at which the node is online; `None` means always online.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online_schedule: Option<BTreeSet<u64>>,
}

impl NodeProfile {
    pub fn always_online(id: NodeId, honest: bool, power: f64) -> Self {
        NodeProfile {
            id,
            honest,
            power,
            online_schedule: None,
        }
    }

    pub fn is_online(&self, step: u64) -> bool {
        self.online_schedule
            .as_ref()
            .map_or(true, |sched| sched.contains(&step))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: NodeId,
    pub to: NodeId,
    pub amount: u64,
}

/// E_t: the opaque payload appended at one step, plus optional stake
/// transfers interpreted by the proof-of-stake bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventBatch {
    pub time: u64,
    #[serde(with = "crate::hex_bytes")]
    pub payload: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transfers: Vec<Transfer>,
}

impl EventBatch {
    pub fn empty(time: u64) -> Self {
        EventBatch {
            time,
            payload: Vec::new(),
            transfers: Vec::new(),
        }
    }

    /// Digest committed into the append record. Covers the batch's time and
    /// payload; transfers are stake bookkeeping whose ownership reading is
    /// identity-relative, so they stay out of the identity-free digest.
    pub fn digest(&self) -> PayloadDigest {
        let mut hasher = Sha256::new();
        hasher.update(self.time.to_le_bytes());
        hasher.update((self.payload.len() as u64).to_le_bytes());
        hasher.update(&self.payload);
        PayloadDigest(hasher.finalize().into())
    }
}

/// Token balances at one height. Total supply is invariant under applies.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeLedger {
    pub balances: BTreeMap<NodeId, u64>,
}

impl StakeLedger {
    pub fn new(balances: BTreeMap<NodeId, u64>) -> Self {
        StakeLedger { balances }
    }

    pub fn total(&self) -> u64 {
        self.balances.values().sum()
    }

    pub fn balance(&self, id: &NodeId) -> u64 {
        self.balances.get(id).copied().unwrap_or(0)
    }

    pub fn combined(&self, ids: impl IntoIterator<Item = NodeId>) -> u64 {
        ids.into_iter().map(|id| self.balance(&id)).sum()
    }

    pub fn apply(&mut self, transfers: &[Transfer]) -> Result<()> {
        for t in transfers {
            let from_balance = self.balance(&t.from);
            if from_balance < t.amount {
                return Err(SdltError::NegativeBalance {
                    from: t.from.to_hex(),
                    amount: t.amount,
                });
            }
            *self.balances.entry(t.from).or_insert(0) -= t.amount;
            *self.balances.entry(t.to).or_insert(0) += t.amount;
        }
        Ok(())
    }
}

/// σ_BA: one agreed append signed by the honest committee members.
///
/// Errors when the Byzantine members are not strictly fewer than half the
/// committee; past that threshold agreement is undefined and failing loud
/// beats returning arbitrary output.
pub fn step_ba(
    s: &LedgerState,
    committee: &[NodeId],
    byzantine: &BTreeSet<NodeId>,
    e: &EventBatch,
) -> Result<LedgerState> {
    let expected = s.genesis.committee()?;
    if expected != committee {
        return Err(SdltError::InvalidConfiguration(
            "committee does not match the genesis descriptor".into(),
        ));
    }
    let faulty = committee.iter().filter(|id| byzantine.contains(id)).count();
    if 2 * faulty >= committee.len() {
        return Err(SdltError::QuorumUnavailable {
            byzantine: faulty,
            committee: committee.len(),
        });
    }
    let signers: BTreeSet<NodeId> = committee
        .iter()
        .filter(|id| !byzantine.contains(id))
        .copied()
        .collect();
    Ok(s.appended(AppendRecord {
        payload_digest: e.digest(),
        evidence: Evidence::Ba { signers },
    }))
}

/// σ_PoW: sample one producer proportionally to power and append a
/// unit-work block. Deterministic given the rng state.
pub fn step_pow(
    s: &LedgerState,
    online: &[NodeProfile],
    e: &EventBatch,
    rng: &mut SimRng,
) -> Result<LedgerState> {
    let producer = sample_producer(online, rng)?;
    Ok(s.appended(AppendRecord {
        payload_digest: e.digest(),
        evidence: Evidence::Pow { work: 1, producer },
    }))
}

/// Power-proportional draw over the online roster, in NodeId order so the
/// roster's listing order cannot leak into the outcome.
pub fn sample_producer(online: &[NodeProfile], rng: &mut SimRng) -> Result<NodeId> {
    if online.is_empty() {
        return Err(SdltError::EmptyNetwork);
    }
    let total: f64 = online.iter().map(|n| n.power).sum();
    if !(total - 1.0).abs().le(&1e-9) {
        return Err(SdltError::InvalidConfiguration(format!(
            "online powers sum to {total}, expected 1"
        )));
    }
    let mut ordered: Vec<&NodeProfile> = online.iter().collect();
    ordered.sort_by_key(|n| n.id);
    let draw: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for node in &ordered {
        acc += node.power;
        if draw < acc {
            return Ok(node.id);
        }
    }
    // Rounding pushed acc fractionally below 1; last positive-mass node wins.
    Ok(ordered
        .iter()
        .rev()
        .find(|n| n.power > 0.0)
        .expect("total power is 1")
        .id)
}

/// PoW(S): total work embedded in the state. PoW(I) = 0.
pub fn pow_total(s: &LedgerState) -> Result<u64> {
    let mut total = 0;
    for record in &s.records {
        match &record.evidence {
            Evidence::Pow { work, .. } => total += work,
            _ => return Err(SdltError::EvidenceKindMismatch),
        }
    }
    Ok(total)
}

/// σ_PoS: a coalition holding a strict stake majority signs the append.
/// The caller supplies the stake ledger at this height (see [`replay_stake`]).
pub fn step_pos(
    s: &LedgerState,
    stake: &StakeLedger,
    coalition: &BTreeSet<NodeId>,
    e: &EventBatch,
) -> Result<LedgerState> {
    let total = stake.total();
    let held = stake.combined(coalition.iter().copied());
    if 2 * held <= total {
        return Err(SdltError::InsufficientStake {
            coalition: held,
            total,
        });
    }
    // Validate the batch's transfers against this height's balances.
    let mut probe = stake.clone();
    probe.apply(&e.transfers)?;
    let signers: BTreeMap<NodeId, u64> = coalition
        .iter()
        .map(|id| (*id, stake.balance(id)))
        .collect();
    Ok(s.appended(AppendRecord {
        payload_digest: e.digest(),
        evidence: Evidence::Pos { signers },
    }))
}

/// Stake distribution after replaying `events` over `s`'s history, starting
/// from the genesis allocation. Events must align one-to-one with records.
pub fn replay_stake(s: &LedgerState, events: &[EventBatch]) -> Result<StakeLedger> {
    if events.len() != s.records.len() {
        return Err(SdltError::AlignmentError {
            events: events.len(),
            records: s.records.len(),
        });
    }
    let mut ledger = StakeLedger::new(s.genesis.stake()?.clone());
    for batch in events {
        ledger.apply(&batch.transfers)?;
    }
    Ok(ledger)
}
