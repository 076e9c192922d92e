//! Adversary constructions: fabricated Byzantine claims for committee
//! scenarios, the private-fork mining race, and the proof-of-stake
//! long-range attack built from a mirror bijection over node identities.
//!
//! Nothing here can forge an honest signature: every fabricated record is
//! either copied from the honest execution at the same height or carries
//! adversary-owned identities only, and [`validate_unforgeable`] re-checks
//! that structurally.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{EventBatch, NodeProfile, SimRng, StakeLedger, Transfer};
use crate::error::{Result, SdltError};
use crate::ledger::{
    canonical_bytes, truncate, AppendRecord, Evidence, GenesisDescriptor, LedgerState,
    LocalStateBag, NodeId,
};

/// Rejects any claimed state whose non-honest records carry an honest
/// identity. A record is honest at height i iff it equals the honest
/// execution's record at i.
pub fn validate_unforgeable(
    claim: &LedgerState,
    truth: &LedgerState,
    adversary_owned: &BTreeSet<NodeId>,
) -> Result<()> {
    for (i, record) in claim.records.iter().enumerate() {
        if truth.records.get(i) == Some(record) {
            continue;
        }
        let ids: Vec<NodeId> = match &record.evidence {
            Evidence::Ba { signers } => signers.iter().copied().collect(),
            Evidence::Pow { producer, .. } => vec![*producer],
            Evidence::Pos { signers } => signers.keys().copied().collect(),
        };
        if let Some(honest) = ids.iter().find(|id| !adversary_owned.contains(id)) {
            return Err(SdltError::SignatureForgery {
                signer: honest.to_hex(),
            });
        }
    }
    Ok(())
}

/// Bag presented to a joining node: honest committee members claim the
/// truth, Byzantine members claim the forgery.
pub fn fabricate_ba_bag(
    truth: &LedgerState,
    committee: &[NodeId],
    byzantine: &BTreeSet<NodeId>,
    forgery: &LedgerState,
) -> Result<LocalStateBag> {
    if forgery.genesis != truth.genesis {
        return Err(SdltError::GenesisMismatch);
    }
    if let Some(outsider) = byzantine.iter().find(|id| !committee.contains(id)) {
        return Err(SdltError::InvalidConfiguration(format!(
            "byzantine id {outsider} is not a committee member"
        )));
    }
    validate_unforgeable(forgery, truth, byzantine)?;
    Ok(committee
        .iter()
        .map(|&id| {
            let claim = if byzantine.contains(&id) {
                forgery.clone()
            } else {
                truth.clone()
            };
            (id, claim)
        })
        .collect())
}

/// A state fabricated by Byzantine committee members: the honestly-produced
/// prefix of `truth` up to `keep`, extended by `forged` records signed only
/// by the byzantine set.
pub fn forge_ba_state(
    truth: &LedgerState,
    byzantine: &BTreeSet<NodeId>,
    keep: usize,
    forged: usize,
    salt: u8,
) -> LedgerState {
    let mut s = truncate(truth, truth.len().saturating_sub(keep));
    for i in 0..forged {
        let batch = EventBatch {
            time: (keep + i) as u64,
            payload: vec![b'f', salt, i as u8],
            transfers: Vec::new(),
        };
        s = s.appended(AppendRecord {
            payload_digest: batch.digest(),
            evidence: Evidence::Ba {
                signers: byzantine.clone(),
            },
        });
    }
    s
}

// ---------------------------------------------------------------------------
// Private-fork mining
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PrivateMineParams {
    /// k: how many trailing blocks of the anchor the adversary rewrites.
    pub fork_depth: usize,
    /// Adversary's share of each block draw; must lie in (0, 1).
    pub q_share: f64,
    /// Maximum race length; the unfinished tail is reported as censored.
    pub horizon: u64,
    pub adversary: NodeId,
    /// Identity extending the public chain during the race.
    pub honest_producer: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrivateMineOutcome {
    /// The adversary chain, present iff its total work strictly exceeded the
    /// public chain's within the horizon.
    pub rewritten: Option<LedgerState>,
    /// The public chain at the moment the race ended.
    pub honest_chain: LedgerState,
    /// Draws consumed before success or censoring.
    pub steps: u64,
}

fn race_block(producer: NodeId, height: usize, payload: &'static [u8]) -> AppendRecord {
    let batch = EventBatch {
        time: height as u64,
        payload: payload.to_vec(),
        transfers: Vec::new(),
    };
    AppendRecord {
        payload_digest: batch.digest(),
        evidence: Evidence::Pow {
            work: 1,
            producer,
        },
    }
}

/// The history-rewrite event: fork `fork_depth` blocks below the anchor
/// and race the public chain block by block.
///
/// The fork opens with the adversary's conflicting block already mined (the
/// divergence that motivates the rewrite), so the race starts `fork_depth`
/// work units behind and succeeds when the private chain's total work
/// strictly exceeds the public one's. Success probability is the
/// gambler's-ruin value (q/p)^k.
pub fn private_mine(
    anchor: &LedgerState,
    params: &PrivateMineParams,
    rng: &mut SimRng,
) -> Result<PrivateMineOutcome> {
    if !(params.q_share > 0.0 && params.q_share < 1.0) {
        return Err(SdltError::InvalidShare(params.q_share));
    }
    if anchor.len() < params.fork_depth {
        return Err(SdltError::InvalidConfiguration(format!(
            "anchor has {} records, cannot fork {} deep",
            anchor.len(),
            params.fork_depth
        )));
    }
    if params.fork_depth == 0 {
        // Rewriting zero blocks is the empty rewrite.
        return Ok(PrivateMineOutcome {
            rewritten: Some(anchor.clone()),
            honest_chain: anchor.clone(),
            steps: 0,
        });
    }

    let mut fork = truncate(anchor, params.fork_depth);
    let conflicting = race_block(params.adversary, fork.len(), b"private-fork");
    fork.records.push(conflicting);
    let mut public = anchor.clone();

    for step in 1..=params.horizon {
        if rng.random_bool(params.q_share) {
            let block = race_block(params.adversary, fork.len(), b"private-fork");
            fork.records.push(block);
        } else {
            let block = race_block(params.honest_producer, public.len(), b"public");
            public.records.push(block);
        }
        if fork.len() > public.len() {
            return Ok(PrivateMineOutcome {
                rewritten: Some(fork),
                honest_chain: public,
                steps: step,
            });
        }
    }
    Ok(PrivateMineOutcome {
        rewritten: None,
        honest_chain: public,
        steps: params.horizon,
    })
}

// ---------------------------------------------------------------------------
// Mirror bijection and the long-range attack
// ---------------------------------------------------------------------------

/// The bijection m relabeling honest identities to adversary-owned ones.
/// Fixed points exactly on ids that are already adversary-owned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorMap {
    pairs: BTreeMap<NodeId, NodeId>,
}

impl MirrorMap {
    pub fn map_id(&self, id: &NodeId) -> Result<NodeId> {
        self.pairs.get(id).copied().ok_or_else(|| {
            SdltError::InvalidConfiguration(format!("id {id} is outside the bijection's domain"))
        })
    }

    pub fn inverse(&self) -> MirrorMap {
        MirrorMap {
            pairs: self.pairs.iter().map(|(a, b)| (*b, *a)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.pairs.iter()
    }

    pub fn map_set(&self, ids: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>> {
        ids.iter().map(|id| self.map_id(id)).collect()
    }

    pub fn map_transfer(&self, t: &Transfer) -> Result<Transfer> {
        Ok(Transfer {
            from: self.map_id(&t.from)?,
            to: self.map_id(&t.to)?,
            amount: t.amount,
        })
    }
}

/// Fresh relabeling of the roster's honest ids into the adversary pool;
/// already-malicious ids are fixed points. Deterministic: honest ids in
/// byte order, pool consumed in listed order.
pub fn mirror_network(roster: &[NodeProfile], adversary_pool: &[NodeId]) -> Result<MirrorMap> {
    let roster_ids: BTreeSet<NodeId> = roster.iter().map(|n| n.id).collect();
    if let Some(clash) = adversary_pool.iter().find(|id| roster_ids.contains(id)) {
        return Err(SdltError::InvalidConfiguration(format!(
            "pool id {clash} collides with the roster"
        )));
    }
    let mut honest: Vec<NodeId> = roster.iter().filter(|n| n.honest).map(|n| n.id).collect();
    honest.sort();
    if adversary_pool.len() < honest.len() {
        return Err(SdltError::PoolExhausted {
            needed: honest.len(),
            available: adversary_pool.len(),
        });
    }
    let mut pairs: BTreeMap<NodeId, NodeId> = honest
        .iter()
        .zip(adversary_pool)
        .map(|(h, a)| (*h, *a))
        .collect();
    for node in roster.iter().filter(|n| !n.honest) {
        pairs.insert(node.id, node.id);
    }
    Ok(MirrorMap { pairs })
}

/// Relabels every identity inside a state's evidence through the map.
/// Genesis and payload digests are untouched: the two worlds share I and
/// the same observable event sequence.
pub fn relabel_state(s: &LedgerState, map: &MirrorMap) -> Result<LedgerState> {
    let records = s
        .records
        .iter()
        .map(|r| {
            let evidence = match &r.evidence {
                Evidence::Ba { signers } => Evidence::Ba {
                    signers: map.map_set(signers)?,
                },
                Evidence::Pow { work, producer } => Evidence::Pow {
                    work: *work,
                    producer: map.map_id(producer)?,
                },
                Evidence::Pos { signers } => Evidence::Pos {
                    signers: signers
                        .iter()
                        .map(|(id, stake)| Ok((map.map_id(id)?, *stake)))
                        .collect::<Result<_>>()?,
                },
            };
            Ok(AppendRecord {
                payload_digest: r.payload_digest,
                evidence,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LedgerState {
        genesis: s.genesis.clone(),
        records,
    })
}

/// Two executions of the same events over mirrored networks, plus the bags
/// a joining node would see at each step.
#[derive(Clone, Debug, Serialize)]
pub struct AttackTrace {
    pub honest_states: Vec<LedgerState>,
    pub adversary_states: Vec<LedgerState>,
    pub merged_bags: Vec<LocalStateBag>,
}

impl AttackTrace {
    pub fn final_honest(&self) -> &LedgerState {
        self.honest_states.last().expect("trace holds S_0")
    }

    pub fn final_adversary(&self) -> &LedgerState {
        self.adversary_states.last().expect("trace holds S'_0")
    }

    pub fn final_bag(&self) -> &LocalStateBag {
        self.merged_bags.last().expect("trace holds a bag per step")
    }
}

/// One proof-of-stake execution viewed through a relabeling of identities:
/// genesis stake, coalitions and transfers are all read through `view`.
/// `view = None` is the honest world.
fn run_pos_world(
    genesis: &GenesisDescriptor,
    events: &[EventBatch],
    coalition: &BTreeSet<NodeId>,
    view: Option<&MirrorMap>,
    t: usize,
) -> Result<Vec<LedgerState>> {
    let relabel_id = |id: &NodeId| -> Result<NodeId> {
        match view {
            Some(map) => map.map_id(id),
            None => Ok(*id),
        }
    };
    let initial: BTreeMap<NodeId, u64> = genesis
        .stake()?
        .iter()
        .map(|(id, amount)| Ok((relabel_id(id)?, *amount)))
        .collect::<Result<_>>()?;
    let mut stake = StakeLedger::new(initial);
    let signers: BTreeSet<NodeId> = coalition.iter().map(relabel_id).collect::<Result<_>>()?;

    let mut states = vec![LedgerState::genesis_only(genesis.clone())];
    for (step, batch) in events.iter().take(t).enumerate() {
        let viewed_transfers: Vec<Transfer> = batch
            .transfers
            .iter()
            .map(|tr| match view {
                Some(map) => map.map_transfer(tr),
                None => Ok(tr.clone()),
            })
            .collect::<Result<_>>()?;
        // Same observable batch (identical digest), ownership read through
        // the world's relabeling.
        let viewed_batch = EventBatch {
            time: batch.time,
            payload: batch.payload.clone(),
            transfers: viewed_transfers.clone(),
        };
        let next = crate::consensus::step_pos(states.last().unwrap(), &stake, &signers, &viewed_batch)
            .map_err(|e| e.at_step(step as u64))?;
        stake
            .apply(&viewed_transfers)
            .map_err(|e| e.at_step(step as u64))?;
        states.push(next);
    }
    Ok(states)
}

fn min_by_bytes<'a>(a: &'a LedgerState, b: &'a LedgerState) -> &'a LedgerState {
    if canonical_bytes(a) <= canonical_bytes(b) {
        a
    } else {
        b
    }
}

fn merged_bags(
    roster: &[NodeProfile],
    map: &MirrorMap,
    honest_states: &[LedgerState],
    adversary_states: &[LedgerState],
) -> Result<Vec<LocalStateBag>> {
    honest_states
        .iter()
        .zip(adversary_states)
        .map(|(truth, mirror)| {
            let mut bag = LocalStateBag::new();
            for node in roster {
                if node.honest {
                    bag.insert(node.id, truth.clone());
                    bag.insert(map.map_id(&node.id)?, mirror.clone());
                } else {
                    // Adversary-owned identities tell one story, picked by a
                    // rule symmetric in the two worlds.
                    bag.insert(node.id, min_by_bytes(truth, mirror).clone());
                }
            }
            Ok(bag)
        })
        .collect()
}

/// Long-range attack: replay the same event sequence in the honest
/// networks and in their mirror image, and merge both worlds' claims into
/// the joining node's observable bag at each step.
pub fn long_range_attack(
    genesis: &GenesisDescriptor,
    events: &[EventBatch],
    roster: &[NodeProfile],
    map: &MirrorMap,
    t: usize,
) -> Result<AttackTrace> {
    if t > events.len() {
        return Err(SdltError::InvalidConfiguration(format!(
            "attack step {t} exceeds the {}-step event schedule",
            events.len()
        )));
    }
    let coalition: BTreeSet<NodeId> = roster.iter().filter(|n| n.honest).map(|n| n.id).collect();
    let honest_states = run_pos_world(genesis, events, &coalition, None, t)?;
    let adversary_states = run_pos_world(genesis, events, &coalition, Some(map), t)?;
    let bags = merged_bags(roster, map, &honest_states, &adversary_states)?;
    Ok(AttackTrace {
        honest_states,
        adversary_states,
        merged_bags: bags,
    })
}

/// The other half of the swapped-world pair: the execution in which the
/// mirror identities are the real network and the original ids are the
/// adversary's relabeling. Ground truths swap; the observable bags do not.
pub fn swapped_world(
    trace: &AttackTrace,
    roster: &[NodeProfile],
    map: &MirrorMap,
) -> Result<AttackTrace> {
    let honest_states = trace.adversary_states.clone();
    let adversary_states = trace.honest_states.clone();
    let bags = honest_states
        .iter()
        .zip(&adversary_states)
        .map(|(truth, mirror)| {
            let mut bag = LocalStateBag::new();
            for node in roster {
                if node.honest {
                    bag.insert(map.map_id(&node.id)?, truth.clone());
                    bag.insert(node.id, mirror.clone());
                } else {
                    bag.insert(node.id, min_by_bytes(truth, mirror).clone());
                }
            }
            Ok(bag)
        })
        .collect::<Result<_>>()?;
    Ok(AttackTrace {
        honest_states,
        adversary_states,
        merged_bags: bags,
    })
}
