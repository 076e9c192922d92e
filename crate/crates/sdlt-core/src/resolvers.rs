//! Joining-node resolution functions and machine-checkable forms of the
//! weak, strong and probabilistic statelessness properties, plus the
//! proof-of-stake falsifier.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::adversary::{
    long_range_attack, mirror_network, private_mine, swapped_world, AttackTrace,
    PrivateMineParams,
};
use crate::consensus::{EventBatch, NodeProfile, SimRng};
use crate::error::{Result, SdltError};
use crate::exec;
use crate::ledger::{
    bag_equal, canonical_bytes, is_prefix, truncate, AppendRecord, Evidence, GenesisDescriptor,
    LedgerState, LocalStateBag, NodeId,
};

/// f(I, A): either a resolved state or the distinguished "cannot decide".
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ResolutionOutcome {
    State(LedgerState),
    Bottom,
}

impl ResolutionOutcome {
    pub fn state(&self) -> Option<&LedgerState> {
        match self {
            ResolutionOutcome::State(s) => Some(s),
            ResolutionOutcome::Bottom => None,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, ResolutionOutcome::Bottom)
    }
}

/// A resolution function a joining node can apply to (I, bag).
pub type Resolver = fn(&GenesisDescriptor, &LocalStateBag) -> Result<ResolutionOutcome>;

/// Majority resolver for committee scenarios: the state claimed by strictly
/// more than |C|/2 distinct committee members, else Bottom. Entries from
/// non-committee nodes are ignored.
pub fn resolve_ba(genesis: &GenesisDescriptor, bag: &LocalStateBag) -> Result<ResolutionOutcome> {
    let committee = genesis.committee()?;
    let members: BTreeSet<&NodeId> = committee.iter().collect();
    let mut counts: HashMap<Vec<u8>, (usize, &LedgerState)> = HashMap::new();
    for (node, claim) in bag.iter() {
        if !members.contains(node) {
            continue;
        }
        let entry = counts
            .entry(canonical_bytes(claim))
            .or_insert((0, claim));
        entry.0 += 1;
    }
    for (count, claim) in counts.values() {
        if 2 * count > committee.len() {
            return Ok(ResolutionOutcome::State((*claim).clone()));
        }
    }
    Ok(ResolutionOutcome::Bottom)
}

/// Work-maximizing resolver: the claimed state with the largest cumulative
/// work; ties go to the smallest canonical encoding so the outcome is a
/// function of the bag as a set.
pub fn resolve_pow(genesis: &GenesisDescriptor, bag: &LocalStateBag) -> Result<ResolutionOutcome> {
    let mut best: Option<(u64, Vec<u8>, &LedgerState)> = None;
    for (_, claim) in bag.iter() {
        if claim.genesis != *genesis {
            return Err(SdltError::GenesisMismatch);
        }
        let work = crate::consensus::pow_total(claim)?;
        let bytes = canonical_bytes(claim);
        let better = match &best {
            None => true,
            Some((best_work, best_bytes, _)) => {
                work > *best_work || (work == *best_work && bytes < *best_bytes)
            }
        };
        if better {
            best = Some((work, bytes, claim));
        }
    }
    Ok(best
        .map(|(_, _, s)| ResolutionOutcome::State(s.clone()))
        .unwrap_or(ResolutionOutcome::Bottom))
}

// ---------------------------------------------------------------------------
// Weak / strong statelessness checkers
// ---------------------------------------------------------------------------

/// Weak recovery check: the resolver recovers the exact ground truth from
/// the full bag at every recorded step. Bottom counts as failure.
pub fn check_weak<F>(resolver: F, states: &[LedgerState], bags: &[LocalStateBag]) -> bool
where
    F: Fn(&GenesisDescriptor, &LocalStateBag) -> Result<ResolutionOutcome>,
{
    states.iter().zip(bags).all(|(truth, bag)| {
        match resolver(&truth.genesis, bag) {
            Ok(ResolutionOutcome::State(resolved)) => {
                canonical_bytes(&resolved) == canonical_bytes(truth)
            }
            _ => false,
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StrongReport {
    pub passed: bool,
    /// Whether every subset was enumerated, or only a uniform sample up to
    /// the budget.
    pub exhaustive: bool,
    pub subsets_checked: u64,
    /// (step, bag-entry mask) of the first offending subset, if any.
    pub counterexample: Option<(usize, u64)>,
}

// Sampling must stay reproducible when bags outgrow the budget.
const SUBSET_SAMPLING_SEED: u64 = 0x5d17_5e55;

/// Strong recovery check: the weak check plus, on every subset of every
/// bag, the resolver answers the ground truth or Bottom. Bags small enough
/// for the budget are enumerated exhaustively; larger ones are sampled and
/// flagged as such.
pub fn check_strong<F>(
    resolver: F,
    states: &[LedgerState],
    bags: &[LocalStateBag],
    subset_budget: u64,
) -> StrongReport
where
    F: Fn(&GenesisDescriptor, &LocalStateBag) -> Result<ResolutionOutcome>,
{
    let mut report = StrongReport {
        passed: check_weak(&resolver, states, bags),
        exhaustive: true,
        subsets_checked: 0,
        counterexample: None,
    };
    if !report.passed {
        return report;
    }
    let mut rng = SimRng::seed_from_u64(SUBSET_SAMPLING_SEED);
    for (step, (truth, bag)) in states.iter().zip(bags).enumerate() {
        let truth_bytes = canonical_bytes(truth);
        let n = bag.len() as u32;
        let exhaustive_here = n < 64 && 1u64.checked_shl(n).is_some_and(|c| c <= subset_budget);
        let check_mask = |mask: u64, report: &mut StrongReport| {
            let subset = bag.subset_by_mask(mask);
            report.subsets_checked += 1;
            let ok = match resolver(&truth.genesis, &subset) {
                Ok(ResolutionOutcome::Bottom) => true,
                Ok(ResolutionOutcome::State(s)) => canonical_bytes(&s) == truth_bytes,
                Err(_) => false,
            };
            if !ok && report.counterexample.is_none() {
                report.passed = false;
                report.counterexample = Some((step, mask));
            }
        };
        if exhaustive_here {
            for mask in 0..(1u64 << n) {
                check_mask(mask, &mut report);
            }
        } else {
            report.exhaustive = false;
            for _ in 0..subset_budget {
                let mask = if n >= 64 {
                    rng.random::<u64>()
                } else {
                    rng.random_range(0..(1u64 << n))
                };
                check_mask(mask, &mut report);
            }
        }
        if !report.passed {
            return report;
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Probabilistic statelessness (proof of work)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PowCheckConfig {
    /// Honest work share; must strictly exceed `q`.
    pub p: f64,
    /// Adversary work share; `p + q = 1`.
    pub q: f64,
    /// Race length per trial, in block draws.
    pub horizon: u64,
    /// Honest chain length at the moment the joining node resolves; must
    /// cover the deepest k tested.
    pub base_len: usize,
    pub k_values: Vec<usize>,
    pub trials: u64,
    pub master_seed: u64,
    /// Worker width (0 = auto, 1 = sequential).
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PowCheckRow {
    pub k: usize,
    pub trials: u64,
    pub failures: u64,
    pub failure_rate: f64,
    /// Binomial standard error; worst-case when the estimate is degenerate.
    pub stderr: f64,
    pub ci99_half_width: f64,
    /// (4*lambda)^k with lambda = max over steps of p_t * q_t.
    pub bound: f64,
    /// Independent gambler's-ruin value (q/p)^k.
    pub oracle: f64,
    pub statistically_meaningful: bool,
}

const Z_99: f64 = 2.5758293;

fn binomial_stderr(failures: u64, trials: u64) -> f64 {
    let n = trials as f64;
    if failures == 0 || failures == trials {
        // Degenerate estimate: report the worst-case half-width.
        (0.25 / n).sqrt()
    } else {
        let rate = failures as f64 / n;
        (rate * (1.0 - rate) / n).sqrt()
    }
}

/// Rewrite-rate estimate for the work-maximizing resolver: per truncation
/// depth k, the fraction of adversarial executions in which the resolved
/// state truncated by k fails to prefix the true chain, next to the
/// exponential bound and the closed-form oracle.
pub fn check_probabilistic(cfg: &PowCheckConfig) -> Result<Vec<PowCheckRow>> {
    if !(cfg.p > cfg.q) {
        return Err(SdltError::InvalidConfiguration(format!(
            "hypothesis p > q violated: p = {}, q = {}",
            cfg.p, cfg.q
        )));
    }
    if !(cfg.q > 0.0) || (cfg.p + cfg.q - 1.0).abs() > 1e-9 {
        return Err(SdltError::InvalidShare(cfg.q));
    }
    if cfg.trials == 0 {
        return Err(SdltError::InvalidConfiguration("trials must be >= 1".into()));
    }
    if cfg.k_values.iter().any(|&k| k > cfg.base_len) {
        return Err(SdltError::InvalidConfiguration(format!(
            "base chain of {} records cannot be forked deeper than itself",
            cfg.base_len
        )));
    }

    let lambda = cfg.p * cfg.q;
    let honest_producer = NodeId::from_index(0x01, 0);
    let adversary = NodeId::from_index(0xAD, 0);
    let genesis = GenesisDescriptor::plain(*b"pow-check");

    // Ground-truth chain at resolution time; identical across trials, the
    // randomness is all in the race.
    let mut base = LedgerState::genesis_only(genesis.clone());
    for height in 0..cfg.base_len {
        let batch = EventBatch {
            time: height as u64,
            payload: b"public".to_vec(),
            transfers: Vec::new(),
        };
        base = base.appended(AppendRecord {
            payload_digest: batch.digest(),
            evidence: Evidence::Pow {
                work: 1,
                producer: honest_producer,
            },
        });
    }

    let mut rows = Vec::with_capacity(cfg.k_values.len());
    for (k_index, &k) in cfg.k_values.iter().enumerate() {
        let params = PrivateMineParams {
            fork_depth: k,
            q_share: cfg.q,
            horizon: cfg.horizon,
            adversary,
            honest_producer,
        };
        let failures: u64 = exec::map_indexed(cfg.trials, cfg.threads, |trial| {
            let seed = exec::derive_seed(cfg.master_seed, (k_index as u64) << 32 | trial);
            let mut rng = SimRng::seed_from_u64(seed);
            let outcome = private_mine(&base, &params, &mut rng).expect("validated config");
            // The joining node resolves at the moment the adversary reveals
            // (or at the censored horizon with nothing revealed).
            let mut bag = LocalStateBag::new();
            bag.insert(honest_producer, outcome.honest_chain.clone());
            if let Some(fork) = outcome.rewritten {
                bag.insert(adversary, fork);
            }
            let resolved = resolve_pow(&genesis, &bag).expect("pow bag");
            let failed = match resolved {
                ResolutionOutcome::Bottom => true,
                ResolutionOutcome::State(s) => {
                    !is_prefix(&truncate(&s, k), &outcome.honest_chain).expect("shared genesis")
                }
            };
            u64::from(failed)
        })
        .into_iter()
        .sum();

        let failure_rate = failures as f64 / cfg.trials as f64;
        let stderr = binomial_stderr(failures, cfg.trials);
        rows.push(PowCheckRow {
            k,
            trials: cfg.trials,
            failures,
            failure_rate,
            stderr,
            ci99_half_width: Z_99 * stderr,
            bound: (4.0 * lambda).powi(k as i32),
            oracle: (cfg.q / cfg.p).powi(k as i32),
            statistically_meaningful: cfg.trials >= 100,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Proof-of-stake falsifier
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct PosWitnessReport {
    /// Whether the scenario yields a valid witness that no deterministic
    /// resolver can recover the ground truth.
    pub falsified: bool,
    pub reason: Option<String>,
    pub bags_equal: bool,
    pub truths_equal: bool,
    pub world_a: AttackTrace,
    pub world_b: AttackTrace,
}

/// Mirror-world witness: two executions with byte-identical joining-node
/// input and different ground truths. Any deterministic resolver answers
/// one fixed state on the shared bag and therefore mismatches at least one
/// world's truth.
pub fn falsify_pos_statelessness(
    genesis: &GenesisDescriptor,
    events: &[EventBatch],
    roster: &[NodeProfile],
    adversary_pool: &[NodeId],
    t: usize,
) -> Result<PosWitnessReport> {
    let map = mirror_network(roster, adversary_pool)?;
    // Without an honest stakeholder the mirror map is the identity and no
    // honest execution exists to diverge from; report rather than run.
    let effective_t = if roster.iter().any(|n| n.honest) { t } else { 0 };
    let world_a = long_range_attack(genesis, events, roster, &map, effective_t)?;
    let world_b = swapped_world(&world_a, roster, &map)?;

    let bags_equal = bag_equal(world_a.final_bag(), world_b.final_bag());
    let truths_equal = canonical_bytes(world_a.final_honest())
        == canonical_bytes(world_b.final_honest());

    let reason = if t == 0 {
        Some("degenerate: no appends, not falsified at t=0".into())
    } else if roster.iter().all(|n| !n.honest) {
        Some("no honest stakeholder to mirror; both worlds coincide".into())
    } else if !bags_equal {
        Some("construction defect: merged bags differ".into())
    } else if truths_equal {
        Some("construction defect: ground truths coincide".into())
    } else {
        None
    };

    Ok(PosWitnessReport {
        falsified: bags_equal && !truths_equal,
        reason,
        bags_equal,
        truths_equal,
        world_a,
        world_b,
    })
}
