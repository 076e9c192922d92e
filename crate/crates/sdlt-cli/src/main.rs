//! `sdlt`: runs scenarios from JSON configs and checks the statelessness
//! properties, writing reports as JSON and CSV.
//!
//! Exit codes are a stable contract: 0 = all properties verified, 1 =
//! property falsified / witness outcome, 2 = usage or config error.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sdlt_core::exec;
use sdlt_core::harness::{run_scenario, AdversaryStrategy, ConsensusKind, ScenarioConfig, Trace};
use sdlt_core::ledger::canonical_bytes;
use sdlt_core::resolvers::{
    check_probabilistic, check_strong, check_weak, falsify_pos_statelessness, resolve_ba,
    PowCheckConfig, PowCheckRow, StrongReport,
};

#[derive(Parser)]
#[command(name = "sdlt", version, about = "Stateless distributed-ledger simulator and checkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Monte Carlo trial count override.
    #[arg(long, global = true)]
    trials: Option<u64>,

    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Verify weak and strong statelessness of a committee scenario.
    BaCheck,
    /// Estimate proof-of-work rewrite rates against the exponential bound.
    PowEstimate,
    /// Construct the proof-of-stake mirror-world witness.
    PosAttack,
    /// Execute a scenario and dump its trace and final-state snapshot.
    Run,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        self != Format::Csv
    }

    fn csv(self) -> bool {
        self != Format::Json
    }
}

struct OutputDir {
    dir: PathBuf,
    force: bool,
}

impl OutputDir {
    fn prepare(dir: &Path, force: bool) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            force,
        })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if path.exists() && !self.force {
            bail!(
                "refusing to overwrite {} (pass --force to allow)",
                path.display()
            );
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(value)?;
        json.push(b'\n');
        self.write(name, &json)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required"))?;
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config: ScenarioConfig =
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    let out = OutputDir::prepare(&cli.out, cli.force)?;
    let threads = exec::width_from_env();
    match cli.command {
        Command::BaCheck => cmd_ba_check(&config, &out, cli.format),
        Command::PowEstimate => {
            cmd_pow_estimate(&config, &out, cli.format, cli.trials.unwrap_or(10_000), threads)
        }
        Command::PosAttack => cmd_pos_attack(&config, &out, cli.format),
        Command::Run => cmd_run(&config, &out, cli.format),
    }
}

// ---------------------------------------------------------------------------
// ba-check
// ---------------------------------------------------------------------------

const SUBSET_BUDGET: u64 = 1 << 12;

#[derive(Serialize)]
struct BaCheckReport {
    config_digest: String,
    seed: u64,
    committee_size: usize,
    byzantine: BTreeSet<String>,
    weak_pass: bool,
    strong: StrongReport,
    verdict: &'static str,
}

fn cmd_ba_check(config: &ScenarioConfig, out: &OutputDir, format: Format) -> Result<ExitCode> {
    if config.consensus_kind != ConsensusKind::Ba {
        bail!("ba-check requires a BA scenario config");
    }
    let committee_size = config
        .genesis
        .committee()
        .map_err(|e| anyhow!("{e}"))?
        .len();
    let trace = run_scenario(config).map_err(|e| anyhow!("scenario failed: {e}"))?;
    let weak_pass = check_weak(resolve_ba, &trace.states, &trace.bags);
    let strong = check_strong(resolve_ba, &trace.states, &trace.bags, SUBSET_BUDGET);
    let passed = weak_pass && strong.passed;

    let report = BaCheckReport {
        config_digest: trace.meta.config_digest.clone(),
        seed: config.seed,
        committee_size,
        byzantine: config.byzantine_ids().iter().map(|id| id.to_hex()).collect(),
        weak_pass,
        strong: strong.clone(),
        verdict: if passed { "PASS" } else { "FAIL" },
    };
    if format.json() {
        out.write_json("ba_check.json", &report)?;
    }
    if format.csv() {
        let mode = if strong.exhaustive {
            format!("exhaustive, {} subsets", strong.subsets_checked)
        } else {
            format!("sampled, {} subsets", strong.subsets_checked)
        };
        let mut csv = String::from("check,result,detail\n");
        csv.push_str(&format!(
            "weak,{},full bag at every step\n",
            if weak_pass { "PASS" } else { "FAIL" }
        ));
        csv.push_str(&format!(
            "strong,{},{}\n",
            if strong.passed { "PASS" } else { "FAIL" },
            mode
        ));
        if let Some((step, mask)) = strong.counterexample {
            csv.push_str(&format!("counterexample,step {step},mask {mask:#b}\n"));
        }
        out.write("ba_check.csv", csv.as_bytes())?;
    }
    for line in ["weak", "strong"] {
        let ok = if line == "weak" { weak_pass } else { strong.passed };
        println!("{line}: {}", if ok { "PASS" } else { "FAIL" });
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

// ---------------------------------------------------------------------------
// pow-estimate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PowEstimateReport {
    config_digest: String,
    seed: u64,
    p: f64,
    q: f64,
    trials: u64,
    statistically_meaningful: bool,
    rows: Vec<PowCheckRow>,
    verdict: &'static str,
}

fn cmd_pow_estimate(
    config: &ScenarioConfig,
    out: &OutputDir,
    format: Format,
    trials: u64,
    threads: usize,
) -> Result<ExitCode> {
    if config.consensus_kind != ConsensusKind::Pow {
        bail!("pow-estimate requires a PoW scenario config");
    }
    let (fork_depths, race_horizon) = match &config.adversary {
        AdversaryStrategy::PrivateMine {
            fork_depths,
            race_horizon,
        } => (fork_depths.clone(), *race_horizon),
        other => bail!("pow-estimate requires a private_mine adversary, got {other:?}"),
    };
    let p: f64 = config.roster.iter().filter(|n| n.honest).map(|n| n.power).sum();
    let q: f64 = config
        .roster
        .iter()
        .filter(|n| !n.honest)
        .map(|n| n.power)
        .sum();
    if p <= q {
        bail!("hypothesis p > q violated: p = {p}, q = {q}");
    }

    let check = PowCheckConfig {
        p,
        q,
        horizon: race_horizon,
        base_len: config.horizon as usize,
        k_values: fork_depths,
        trials,
        master_seed: config.seed,
        threads,
    };
    let rows = check_probabilistic(&check).map_err(|e| anyhow!("{e}"))?;
    let passed = rows
        .iter()
        .all(|r| r.failure_rate <= r.bound + 3.0 * r.stderr);

    let report = PowEstimateReport {
        config_digest: config.digest(),
        seed: config.seed,
        p,
        q,
        trials,
        statistically_meaningful: rows.iter().all(|r| r.statistically_meaningful),
        rows: rows.clone(),
        verdict: if passed { "PASS" } else { "FAIL" },
    };
    if format.json() {
        out.write_json("pow_estimate.json", &report)?;
    }
    if format.csv() {
        let mut csv = String::from("k,failure_rate,stderr,bound,oracle\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.k, r.failure_rate, r.stderr, r.bound, r.oracle
            ));
        }
        out.write("pow_estimate.csv", csv.as_bytes())?;
    }
    for r in &rows {
        let ok = r.failure_rate <= r.bound + 3.0 * r.stderr;
        println!(
            "k={}: rate {:.6} vs bound {:.6} (oracle {:.6}): {}",
            r.k,
            r.failure_rate,
            r.bound,
            r.oracle,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if !report.statistically_meaningful {
        println!("note: trial count too small, estimates statistically meaningless");
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

// ---------------------------------------------------------------------------
// pos-attack
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PosAttackSummary {
    config_digest: String,
    seed: u64,
    steps: u64,
    falsified: bool,
    bags_equal: bool,
    truths_equal: bool,
    reason: Option<String>,
    honest_truth_bytes: String,
    mirrored_truth_bytes: String,
}

fn cmd_pos_attack(config: &ScenarioConfig, out: &OutputDir, format: Format) -> Result<ExitCode> {
    if config.consensus_kind != ConsensusKind::Pos {
        bail!("pos-attack requires a PoS scenario config");
    }
    let pool = config.adversary_pool();
    let report = falsify_pos_statelessness(
        &config.genesis,
        &config.events,
        &config.roster,
        &pool,
        config.horizon as usize,
    )
    .map_err(|e| anyhow!("attack construction failed: {e}"))?;

    let summary = PosAttackSummary {
        config_digest: config.digest(),
        seed: config.seed,
        steps: config.horizon,
        falsified: report.falsified,
        bags_equal: report.bags_equal,
        truths_equal: report.truths_equal,
        reason: report.reason.clone(),
        honest_truth_bytes: hex_of(&canonical_bytes(report.world_a.final_honest())),
        mirrored_truth_bytes: hex_of(&canonical_bytes(report.world_b.final_honest())),
    };
    if format.json() {
        out.write_json("pos_attack_summary.json", &summary)?;
        out.write_json("pos_attack_witness.json", &report)?;
    }
    if format.csv() {
        let csv = format!(
            "verdict,value\nfalsified,{}\nbags_equal,{}\ntruths_equal,{}\n",
            report.falsified, report.bags_equal, report.truths_equal
        );
        out.write("pos_attack.csv", csv.as_bytes())?;
    }
    println!(
        "bags_equal: {}, truths_equal: {}",
        report.bags_equal, report.truths_equal
    );
    if let Some(reason) = &report.reason {
        println!("{reason}");
    }
    Ok(if report.falsified {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(config: &ScenarioConfig, out: &OutputDir, format: Format) -> Result<ExitCode> {
    let trace: Trace = run_scenario(config).map_err(|e| anyhow!("scenario failed: {e}"))?;
    // The canonical encoding is the snapshot format; the JSON trace is its
    // human-readable mirror.
    out.write("final_state.bin", &canonical_bytes(trace.final_state()))?;
    if format.json() {
        out.write_json("trace.json", &trace)?;
    }
    if format.csv() {
        let mut csv = String::from("step,records,bag_entries\n");
        for (step, (state, bag)) in trace.states.iter().zip(&trace.bags).enumerate() {
            csv.push_str(&format!("{step},{},{}\n", state.len(), bag.len()));
        }
        out.write("trace_summary.csv", csv.as_bytes())?;
    }
    println!(
        "ran {:?} scenario for {} steps, final state holds {} records",
        config.consensus_kind,
        config.horizon,
        trace.final_state().len()
    );
    Ok(ExitCode::SUCCESS)
}
