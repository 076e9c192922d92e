//! End-to-end acceptance checks. Each test prints one PASS line for the
//! guarantee it verifies; run with `--nocapture` to see them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};

use sdlt_core::adversary::{forge_ba_state, mirror_network, relabel_state};
use sdlt_core::consensus::{replay_stake, step_ba, EventBatch, NodeProfile, SimRng};
use sdlt_core::exec;
use sdlt_core::harness::{random_pos_scenario, run_scenario, AdversaryStrategy, ConsensusKind, ScenarioConfig};
use sdlt_core::ledger::{
    canonical_bytes, decode_state, is_prefix, truncate, AppendRecord, Evidence, GenesisDescriptor,
    LedgerState, LocalStateBag, NodeId, PayloadDigest,
};
use sdlt_core::resolvers::{
    check_probabilistic, check_strong, check_weak, falsify_pos_statelessness, resolve_ba,
    PowCheckConfig,
};

fn committee_ids(n: usize) -> Vec<NodeId> {
    (0..n as u64).map(|i| NodeId::from_index(0x10, i)).collect()
}

fn batch(t: u64) -> EventBatch {
    EventBatch {
        time: t,
        payload: format!("batch-{t}").into_bytes(),
        transfers: Vec::new(),
    }
}

/// Honest execution of a committee ledger for `steps` appends; the faulty
/// members abstain from signing.
fn committee_trace(
    committee: &[NodeId],
    byzantine: &BTreeSet<NodeId>,
    steps: u64,
) -> Vec<LedgerState> {
    let genesis = GenesisDescriptor::ba(b"acceptance".to_vec(), committee.to_vec()).unwrap();
    let mut states = vec![LedgerState::genesis_only(genesis)];
    for t in 0..steps {
        let next = step_ba(states.last().unwrap(), committee, byzantine, &batch(t)).unwrap();
        states.push(next);
    }
    states
}

fn bag_with_forgeries(
    truth: &LedgerState,
    committee: &[NodeId],
    byzantine: &[NodeId],
    claims: &[&LedgerState],
) -> LocalStateBag {
    committee
        .iter()
        .map(|id| match byzantine.iter().position(|b| b == id) {
            Some(j) => (*id, claims[j].clone()),
            None => (*id, truth.clone()),
        })
        .collect()
}

/// Every committee size from 2 to 9, every faulty subset below half, every
/// assignment of a 3-state forgery pool to the faulty members: the majority
/// resolver answers the truth or Bottom on all 2^|C| bag subsets.
#[test]
fn resolver_is_subset_safe_below_the_fault_threshold() {
    let started = Instant::now();
    let mut total_subsets = 0u64;
    for size in 2..=9usize {
        let committee = committee_ids(size);
        let masks: Vec<u64> = (0u64..(1 << size))
            .filter(|mask| 2 * mask.count_ones() < size as u32)
            .collect();

        let checked: Vec<u64> = exec::map_indexed(masks.len() as u64, 0, |slot| {
            let mask = masks[slot as usize];
            let byzantine: Vec<NodeId> = (0..size)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| committee[i])
                .collect();
            let byz_set: BTreeSet<NodeId> = byzantine.iter().copied().collect();
            let states = committee_trace(&committee, &byz_set, 1);
            let truth = states.last().unwrap();
            let pool = [
                forge_ba_state(truth, &byz_set, 0, 1, 0xa1),
                forge_ba_state(truth, &byz_set, 1, 1, 0xa2),
                forge_ba_state(truth, &byz_set, 1, 2, 0xa3),
            ];
            let mut subsets = 0u64;
            for mut assignment in 0..3u64.pow(byzantine.len() as u32) {
                let picked = assignment;
                let claims: Vec<&LedgerState> = byzantine
                    .iter()
                    .map(|_| {
                        let pick = (assignment % 3) as usize;
                        assignment /= 3;
                        &pool[pick]
                    })
                    .collect();
                let bag = bag_with_forgeries(truth, &committee, &byzantine, &claims);
                let report =
                    check_strong(resolve_ba, std::slice::from_ref(truth), &[bag], 1 << size);
                assert!(
                    report.passed && report.exhaustive,
                    "subset safety broke: |C|={size} mask={mask:#b} assignment={picked}"
                );
                subsets += report.subsets_checked;
            }
            subsets
        });
        total_subsets += checked.iter().sum::<u64>();
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget is 60s");
    println!(
        "[1] subset-safe resolution, committees 2..9, {total_subsets} subsets in {elapsed:.2?}: PASS"
    );
}

/// With half the committee colluding on one forged state, no strict majority
/// exists and recovery deterministically fails.
#[test]
fn resolution_fails_once_half_the_committee_colludes() {
    let committee = committee_ids(4);
    let byzantine: Vec<NodeId> = committee[2..].to_vec();
    let byz_set: BTreeSet<NodeId> = byzantine.iter().copied().collect();
    // Truth produced while the pair still behaved; they turn afterwards.
    let states = committee_trace(&committee, &BTreeSet::new(), 2);
    let truth = states.last().unwrap();
    let forged = forge_ba_state(truth, &byz_set, 1, 2, 0xee);
    let claims: Vec<&LedgerState> = byzantine.iter().map(|_| &forged).collect();
    let bags: Vec<LocalStateBag> = states
        .iter()
        .map(|s| bag_with_forgeries(s, &committee, &byzantine, &claims))
        .collect();

    let weak = check_weak(resolve_ba, &states, &bags);
    let strong = check_strong(resolve_ba, &states, &bags, 1 << 4);
    assert!(!weak, "weak recovery should fail with 2 of 4 colluding");
    assert!(!strong.passed);
    println!("[2] recovery fails deterministically at 2 colluding of 4: PASS");
}

/// Rewrite rates for the work-maximizing resolver stay under the (4pq)^k
/// bound and track the gambler's-ruin value (q/p)^k, k = 1..8, 10,000 trials.
#[test]
fn rewrite_rate_is_exponentially_small_in_the_truncation_depth() {
    let started = Instant::now();
    let cfg = PowCheckConfig {
        p: 0.7,
        q: 0.3,
        horizon: 200,
        base_len: 200,
        k_values: (1..=8).collect(),
        trials: 10_000,
        master_seed: 0xACCE,
        threads: 0,
    };
    let rows = check_probabilistic(&cfg).unwrap();
    for row in &rows {
        assert!(row.statistically_meaningful);
        assert!(
            row.failure_rate <= row.bound + 3.0 * row.stderr,
            "k={}: rate {} above bound {} + 3*{}",
            row.k,
            row.failure_rate,
            row.bound,
            row.stderr
        );
        assert!(
            (row.failure_rate - row.oracle).abs() <= 3.0 * row.stderr,
            "k={}: rate {} not within 3 sigma of oracle {}",
            row.k,
            row.failure_rate,
            row.oracle
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget is 5min");
    println!(
        "[3] rewrite rates under (4pq)^k and within 3 sigma of (q/p)^k for k=1..8 in {elapsed:.2?}: PASS"
    );
}

/// 50 random stake scenarios: the mirror construction always yields two
/// executions with identical bags and different ground truths, and
/// relabeling one world through the inverse bijection reproduces the other
/// byte for byte.
#[test]
fn stake_history_is_always_forgeable_and_mirrors_are_consistent() {
    let started = Instant::now();
    let mut witnesses = 0usize;
    let mut relabeled_states = 0usize;
    for seed in 0..50u64 {
        let config = random_pos_scenario(seed);
        let pool = config.adversary_pool();
        let report = falsify_pos_statelessness(
            &config.genesis,
            &config.events,
            &config.roster,
            &pool,
            config.horizon as usize,
        )
        .unwrap();
        assert!(report.falsified, "seed {seed}: {:?}", report.reason);
        assert!(report.bags_equal, "seed {seed}: bags differ");
        assert!(!report.truths_equal, "seed {seed}: truths coincide");
        witnesses += 1;

        let map = mirror_network(&config.roster, &pool).unwrap();
        let inverse = map.inverse();
        for (honest, mirrored) in report
            .world_a
            .honest_states
            .iter()
            .zip(&report.world_a.adversary_states)
        {
            let back = relabel_state(mirrored, &inverse).unwrap();
            assert_eq!(
                canonical_bytes(&back),
                canonical_bytes(honest),
                "seed {seed}: inverse relabeling diverged"
            );
            relabeled_states += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget is 10s");
    println!("[4] stake-history witness found in {witnesses}/50 random scenarios in {elapsed:.2?}: PASS");
    println!("[5] inverse relabeling matched {relabeled_states} states byte for byte: PASS");
}

fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn sdlt(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sdlt"))
        .args(args)
        .env("SDLT_THREADS", threads)
        .output()
        .unwrap()
}

fn pow_demo_config(dir: &Path) -> String {
    let config = ScenarioConfig {
        consensus_kind: ConsensusKind::Pow,
        horizon: 40,
        roster: vec![
            NodeProfile::always_online(NodeId::from_index(0x01, 0), true, 0.7),
            NodeProfile::always_online(NodeId::from_index(0x01, 1), false, 0.3),
        ],
        genesis: GenesisDescriptor::plain(b"determinism".to_vec()),
        events: (0..40).map(batch).collect(),
        coalitions: None,
        adversary: AdversaryStrategy::PrivateMine {
            fork_depths: vec![1, 2, 3],
            race_horizon: 100,
        },
        seed: 99,
    };
    let path = dir.join("pow.json");
    fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

/// Identical (config, seed, format) must give byte-identical output files,
/// and aggregates must not depend on the worker cap.
#[test]
fn outputs_are_reproducible_and_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let config = pow_demo_config(tmp.path());

    let mut snapshots = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = tmp.path().join(name);
        let run = sdlt(
            &[
                "pow-estimate",
                "--config",
                &config,
                "--trials",
                "500",
                "--out",
                out.to_str().unwrap(),
            ],
            threads,
        );
        assert!(
            run.status.success(),
            "pow-estimate failed: {}",
            String::from_utf8_lossy(&run.stderr)
        );
        snapshots.push(dir_snapshot(&out));
    }
    assert_eq!(snapshots[0], snapshots[1], "reruns differ");
    assert_eq!(snapshots[0], snapshots[2], "worker cap leaked into output");

    for (name, threads) in [("ra", "1"), ("rb", "4")] {
        let out = tmp.path().join(name);
        let run = sdlt(
            &["run", "--config", &config, "--out", out.to_str().unwrap()],
            threads,
        );
        assert!(run.status.success());
        snapshots.push(dir_snapshot(&out));
    }
    let n = snapshots.len();
    assert_eq!(snapshots[n - 2], snapshots[n - 1], "trace output differs");
    // The binary snapshot is the canonical encoding and round-trips.
    let state = decode_state(&snapshots[n - 1]["final_state.bin"]).unwrap();
    assert_eq!(canonical_bytes(&state), snapshots[n - 1]["final_state.bin"]);
    println!("[6] byte-identical outputs across reruns and SDLT_THREADS in {{1,4}}: PASS");
}

fn random_state(rng: &mut SimRng) -> LedgerState {
    let genesis = GenesisDescriptor::plain(rng.random::<[u8; 4]>().to_vec());
    let records = (0..rng.random_range(0..8usize))
        .map(|_| random_record(rng))
        .collect();
    LedgerState { genesis, records }
}

fn random_record(rng: &mut SimRng) -> AppendRecord {
    let evidence = match rng.random_range(0..3u8) {
        0 => Evidence::Ba {
            signers: (0..rng.random_range(0..4u64))
                .map(|i| NodeId::from_index(0x10, i))
                .collect(),
        },
        1 => Evidence::Pow {
            work: rng.random_range(1..5),
            producer: NodeId::from_index(0x01, rng.random_range(0..4)),
        },
        _ => Evidence::Pos {
            signers: (0..rng.random_range(0..4u64))
                .map(|i| (NodeId::from_index(0x10, i), rng.random_range(1..50)))
                .collect(),
        },
    };
    AppendRecord {
        payload_digest: PayloadDigest(rng.random()),
        evidence,
    }
}

/// 1,000 generated cases per law: prefix order, truncation composition,
/// encoding round-trip, stake conservation.
#[test]
fn state_algebra_laws_hold_on_generated_cases() {
    let mut rng = SimRng::seed_from_u64(0x1a_0b5);
    for _ in 0..1000 {
        let s = random_state(&mut rng);
        let mut ext = s.clone();
        ext.records.extend((0..rng.random_range(0..4usize)).map(|_| random_record(&mut rng)));
        assert!(is_prefix(&s, &s).unwrap());
        assert!(is_prefix(&s, &ext).unwrap());

        let (a, b) = (rng.random_range(0..10usize), rng.random_range(0..10usize));
        assert!(is_prefix(&truncate(&s, a), &s).unwrap());
        assert_eq!(truncate(&truncate(&s, a), b), truncate(&s, a + b));

        assert_eq!(decode_state(&canonical_bytes(&s)).unwrap(), s);
        assert_eq!(decode_state(&canonical_bytes(&ext)).unwrap(), ext);
    }
    for seed in 0..1000u64 {
        let config = random_pos_scenario(seed);
        let trace = run_scenario(&config).unwrap();
        let stake = replay_stake(trace.final_state(), &config.events).unwrap();
        let initial: u64 = config.genesis.initial_stake.as_ref().unwrap().values().sum();
        assert_eq!(stake.total(), initial, "stake not conserved for seed {seed}");
    }
    println!("[7] state-algebra laws and stake conservation, 1000 cases each: PASS");
}
