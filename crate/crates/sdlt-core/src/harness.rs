//! Scenario construction and deterministic execution of full traces, plus
//! Monte Carlo orchestration and the closed-form catch-up oracle.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{forge_ba_state, long_range_attack, mirror_network};
use crate::consensus::{
    step_ba, step_pos, step_pow, EventBatch, NodeProfile, SimRng, StakeLedger, Transfer,
};
use crate::error::{Result, SdltError};
use crate::exec;
use crate::ledger::{GenesisDescriptor, LedgerState, LocalStateBag, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusKind {
    Ba,
    Pow,
    Pos,
}

/// What the adversary does alongside the honest execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum AdversaryStrategy {
    None,
    /// Byzantine committee members present a fabricated state: the honest
    /// prefix of length `keep` extended by `forged` self-signed records.
    BaForge { keep: usize, forged: usize },
    /// Private-fork mining race parameters; the fork stays unrevealed in
    /// the trace (estimation happens in the probabilistic checker).
    PrivateMine {
        fork_depths: Vec<usize>,
        race_horizon: u64,
    },
    /// Proof-of-stake mirror-world attack over a fresh adversary id pool.
    LongRange,
}

/// Full description of one execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub consensus_kind: ConsensusKind,
    pub horizon: u64,
    pub roster: Vec<NodeProfile>,
    pub genesis: GenesisDescriptor,
    pub events: Vec<EventBatch>,
    /// Per-step signing coalitions for PoS; defaults to all honest
    /// stakeholders when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalitions: Option<Vec<Vec<NodeId>>>,
    pub adversary: AdversaryStrategy,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.events.len() as u64 != self.horizon {
            return Err(SdltError::InvalidConfiguration(format!(
                "{} events for horizon {}",
                self.events.len(),
                self.horizon
            )));
        }
        let mut seen = BTreeSet::new();
        for node in &self.roster {
            if !seen.insert(node.id) {
                return Err(SdltError::InvalidConfiguration(format!(
                    "duplicate roster id {}",
                    node.id
                )));
            }
        }
        match self.consensus_kind {
            ConsensusKind::Ba => {
                self.genesis.committee()?;
            }
            ConsensusKind::Pos => {
                self.genesis.stake()?;
                if let Some(coalitions) = &self.coalitions {
                    if coalitions.len() as u64 != self.horizon {
                        return Err(SdltError::InvalidConfiguration(
                            "coalition schedule length must equal the horizon".into(),
                        ));
                    }
                }
            }
            ConsensusKind::Pow => {
                for step in 0..self.horizon {
                    let total: f64 = self
                        .roster
                        .iter()
                        .filter(|n| n.is_online(step))
                        .map(|n| n.power)
                        .sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(SdltError::InvalidConfiguration(format!(
                            "online powers at step {step} sum to {total}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Digest identifying the configuration; recorded in trace metadata so
    /// outputs are attributable.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn byzantine_ids(&self) -> BTreeSet<NodeId> {
        self.roster
            .iter()
            .filter(|n| !n.honest)
            .map(|n| n.id)
            .collect()
    }

    /// Fresh adversary identities, disjoint from any roster built with a
    /// different leading tag byte.
    pub fn adversary_pool(&self) -> Vec<NodeId> {
        (0..self.roster.len() as u64)
            .map(|i| NodeId::from_index(0xAD, i))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub config_digest: String,
}

/// Ground truth S_0..S_T alongside the observable bag at each step.
#[derive(Clone, Debug, Serialize)]
pub struct Trace {
    pub states: Vec<LedgerState>,
    pub bags: Vec<LocalStateBag>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn final_state(&self) -> &LedgerState {
        self.states.last().expect("trace holds S_0")
    }
}

/// Deterministic execution of States(I, sigma, N, E) up to the horizon,
/// with the adversary strategy populating bags alongside honest claims.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Trace> {
    config.validate()?;
    let meta = TraceMeta {
        seed: config.seed,
        config_digest: config.digest(),
    };
    let (states, bags) = match config.consensus_kind {
        ConsensusKind::Ba => run_ba(config)?,
        ConsensusKind::Pow => run_pow(config)?,
        ConsensusKind::Pos => run_pos(config)?,
    };
    Ok(Trace { states, bags, meta })
}

fn honest_bag(config: &ScenarioConfig, step: u64, state: &LedgerState) -> LocalStateBag {
    config
        .roster
        .iter()
        .filter(|n| n.is_online(step))
        .map(|n| (n.id, state.clone()))
        .collect()
}

fn run_ba(config: &ScenarioConfig) -> Result<(Vec<LedgerState>, Vec<LocalStateBag>)> {
    let committee = config.genesis.committee()?.to_vec();
    let byzantine = config.byzantine_ids();
    let mut states = vec![LedgerState::genesis_only(config.genesis.clone())];
    for (step, batch) in config.events.iter().enumerate() {
        let next = step_ba(states.last().unwrap(), &committee, &byzantine, batch)
            .map_err(|e| e.at_step(step as u64))?;
        states.push(next);
    }
    let bags = states
        .iter()
        .enumerate()
        .map(|(step, truth)| match &config.adversary {
            AdversaryStrategy::BaForge { keep, forged } if !byzantine.is_empty() => {
                let forgery = forge_ba_state(truth, &byzantine, *keep, *forged, step as u8);
                crate::adversary::fabricate_ba_bag(truth, &committee, &byzantine, &forgery)
            }
            _ => Ok(honest_bag(config, step as u64, truth)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((states, bags))
}

fn run_pow(config: &ScenarioConfig) -> Result<(Vec<LedgerState>, Vec<LocalStateBag>)> {
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut states = vec![LedgerState::genesis_only(config.genesis.clone())];
    let mut bags = vec![honest_bag(config, 0, states.last().unwrap())];
    for (step, batch) in config.events.iter().enumerate() {
        let online: Vec<NodeProfile> = config
            .roster
            .iter()
            .filter(|n| n.is_online(step as u64))
            .cloned()
            .collect();
        let next = step_pow(states.last().unwrap(), &online, batch, &mut rng)
            .map_err(|e| e.at_step(step as u64))?;
        // A private miner reveals nothing while racing, so trace bags stay
        // unanimous under every PoW strategy.
        bags.push(honest_bag(config, step as u64 + 1, &next));
        states.push(next);
    }
    Ok((states, bags))
}

fn run_pos(config: &ScenarioConfig) -> Result<(Vec<LedgerState>, Vec<LocalStateBag>)> {
    if let AdversaryStrategy::LongRange = config.adversary {
        let map = mirror_network(&config.roster, &config.adversary_pool())?;
        let trace = long_range_attack(
            &config.genesis,
            &config.events,
            &config.roster,
            &map,
            config.horizon as usize,
        )?;
        return Ok((trace.honest_states, trace.merged_bags));
    }

    let mut stake = StakeLedger::new(config.genesis.stake()?.clone());
    let default_coalition: BTreeSet<NodeId> = config
        .roster
        .iter()
        .filter(|n| n.honest)
        .map(|n| n.id)
        .collect();
    let mut states = vec![LedgerState::genesis_only(config.genesis.clone())];
    for (step, batch) in config.events.iter().enumerate() {
        let coalition: BTreeSet<NodeId> = match &config.coalitions {
            Some(schedule) => schedule[step].iter().copied().collect(),
            None => default_coalition.clone(),
        };
        let next = step_pos(states.last().unwrap(), &stake, &coalition, batch)
            .map_err(|e| e.at_step(step as u64))?;
        stake
            .apply(&batch.transfers)
            .map_err(|e| e.at_step(step as u64))?;
        states.push(next);
    }
    let bags = states
        .iter()
        .enumerate()
        .map(|(step, s)| honest_bag(config, step as u64, s))
        .collect();
    Ok((states, bags))
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Runs `trials` independent executions of `base` under per-trial derived
/// seeds, maps each trace to a metric, and folds the metrics in trial
/// order. The fold sees the same sequence whatever the worker width.
pub fn monte_carlo<M, A>(
    base: &ScenarioConfig,
    trials: u64,
    threads: usize,
    metric: impl Fn(&Trace) -> M + Sync,
    init: A,
    fold: impl Fn(A, M) -> A,
) -> Result<A>
where
    M: Send,
{
    if trials == 0 {
        return Err(SdltError::InvalidConfiguration("trials must be >= 1".into()));
    }
    base.validate()?;
    let metrics: Vec<Result<M>> = exec::map_indexed(trials, threads, |trial| {
        let mut config = base.clone();
        config.seed = exec::derive_seed(base.seed, trial);
        run_scenario(&config).map(|trace| metric(&trace))
    });
    let mut acc = init;
    for m in metrics {
        acc = fold(acc, m?);
    }
    Ok(acc)
}

/// Mean / standard error / 99% confidence half-width of a binary metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BinomialSummary {
    pub trials: u64,
    pub successes: u64,
    pub mean: f64,
    pub stderr: f64,
    pub ci99_half_width: f64,
}

pub fn binomial_summary(successes: u64, trials: u64) -> BinomialSummary {
    let n = trials as f64;
    let mean = successes as f64 / n;
    let stderr = if successes == 0 || successes == trials {
        (0.25 / n).sqrt()
    } else {
        (mean * (1.0 - mean) / n).sqrt()
    };
    BinomialSummary {
        trials,
        successes,
        mean,
        stderr,
        ci99_half_width: 2.5758293 * stderr,
    }
}

/// (q/p)^k: the probability that a deficit-k biased random walk ever
/// reaches zero, i.e. the chance a k-behind attacker with work share q ever
/// overtakes honest share p.
pub fn catchup_oracle(p: f64, q: f64, k: u32) -> Result<f64> {
    if !(p > q && q > 0.0) || (p + q - 1.0).abs() > 1e-9 {
        return Err(SdltError::InvalidShare(q));
    }
    Ok((q / p).powi(k as i32))
}

// ---------------------------------------------------------------------------
// Scenario generators
// ---------------------------------------------------------------------------

/// Random small proof-of-stake scenario for the falsifier: 2-5 stakeholders
/// with at least one honest, 1-6 steps, transfers that stay valid and keep
/// the honest coalition's stake majority.
pub fn random_pos_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = SimRng::seed_from_u64(seed);
    let stakeholders = rng.random_range(2..=5u64);
    let steps = rng.random_range(1..=6u64);

    let mut roster = Vec::new();
    let mut stake = std::collections::BTreeMap::new();
    for i in 0..stakeholders {
        let id = NodeId::from_index(0x10, i);
        roster.push(NodeProfile::always_online(id, true, 0.0));
        stake.insert(id, rng.random_range(10..100u64));
    }
    // Optionally demote one stakeholder, keeping the honest stake majority.
    if stakeholders > 2 && rng.random_bool(0.3) {
        let victim = rng.random_range(0..stakeholders) as usize;
        let id = roster[victim].id;
        let total: u64 = stake.values().sum();
        if 2 * stake[&id] < total {
            roster[victim].honest = false;
        }
    }
    let honest: Vec<NodeId> = roster.iter().filter(|n| n.honest).map(|n| n.id).collect();

    let mut balances = StakeLedger::new(stake.clone());
    let mut events = Vec::new();
    for t in 0..steps {
        let mut transfers = Vec::new();
        if honest.len() >= 2 {
            for _ in 0..rng.random_range(0..=2) {
                let from = honest[rng.random_range(0..honest.len())];
                let to = honest[rng.random_range(0..honest.len())];
                let available = balances.balance(&from);
                if from != to && available > 0 {
                    let amount = rng.random_range(1..=available);
                    transfers.push(Transfer { from, to, amount });
                    balances
                        .apply(&[Transfer { from, to, amount }])
                        .expect("generated within balance");
                }
            }
        }
        events.push(EventBatch {
            time: t,
            payload: Vec::new(),
            transfers,
        });
    }

    ScenarioConfig {
        consensus_kind: ConsensusKind::Pos,
        horizon: steps,
        roster,
        genesis: GenesisDescriptor::pos(*b"pos-gen", stake).expect("positive stake"),
        events,
        coalitions: None,
        adversary: AdversaryStrategy::LongRange,
        seed,
    }
}
