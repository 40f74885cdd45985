//! Command-line interface: `simulate` (replicated runs, sweep timing
//! tables, optional event dumps), `verify` (statistical suites with
//! pass/fail reports), and `replay` (consistency check of a recorded
//! event log).
//!
//! Exit codes: 0 on success, 1 when a verification check or replay
//! fails, 2 for configuration, usage, or input errors.

use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sweepsim_core::engine::simulate_recorded;
use sweepsim_core::observe::{derived_constants, StoppingTimeDetector};
use sweepsim_core::rng::{derive_seed, replicate_rng};
use sweepsim_core::{Engine, StopCondition, StopReason};

use crate::config::{parse_config_file, Draft, SimulateConfig, Suite};
use crate::io::{
    manifest_json, read_trajectory_jsonl, seed_record, sweep_rows_from_log, tool_version,
    write_coupling_csv, write_sweep_csv, write_trajectory_jsonl, JsonlError, RunManifest,
};
use crate::runner::run_replicates;
use crate::verify::run_suite;

#[derive(Parser)]
#[command(
    name = "sweepsim",
    version,
    about = "Simulate and verify a population accumulating beneficial mutations"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicates and write their sweep timing table.
    Simulate(SimulateArgs),
    /// Run a verification suite and write its report.
    Verify(VerifyArgs),
    /// Re-apply a recorded event log and check its consistency.
    Replay(ReplayArgs),
}

/// Knobs shared by `simulate` and `verify`; unset flags fall back to the
/// config file (if given), then to per-suite defaults.
#[derive(Args)]
struct CommonArgs {
    /// Flat key = value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Population size.
    #[arg(long)]
    n: Option<u32>,
    /// Selective advantage per mutation.
    #[arg(long)]
    s: Option<f64>,
    /// Per-individual mutation rate.
    #[arg(long)]
    mu: Option<f64>,
    /// Regime exponent (s must dominate N^-eta).
    #[arg(long)]
    eta: Option<f64>,
    /// Number of sweeps each replicate must complete.
    #[arg(long)]
    k_sweeps: Option<usize>,
    /// Number of replicates.
    #[arg(long)]
    replicates: Option<u64>,
    /// Master seed (default: drawn from the clock and printed).
    #[arg(long)]
    seed: Option<u64>,
    /// Establishment threshold multiplier in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Companion birth-thinning factor in (0, 1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Companion immigration-thinning factor in (0, 1).
    #[arg(long)]
    zeta: Option<f64>,
    /// Death-rate drift tolerance in (0, 1).
    #[arg(long)]
    kappa: Option<f64>,
    /// Settling-window offset multiplier (default: derived).
    #[arg(long)]
    c1: Option<f64>,
    /// Occupancy-floor multiplier (default: derived).
    #[arg(long)]
    c2: Option<f64>,
    /// Rescaled checkpoint times, comma separated.
    #[arg(long, value_delimiter = ',')]
    t_checks: Option<Vec<f64>>,
    /// Population sizes for the coupling grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid_ns: Option<Vec<u32>>,
    /// Significance level for distributional tests.
    #[arg(long)]
    significance: Option<f64>,
    /// Pass-fraction threshold for windowed profile checks.
    #[arg(long)]
    pass_threshold: Option<f64>,
    /// Per-replicate event budget.
    #[arg(long)]
    event_cap: Option<u64>,
    /// Largest event count an event dump may persist.
    #[arg(long)]
    dump_cap: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for output files (created if missing).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also write replicate 0's full event log as JSONL.
    #[arg(long)]
    dump_events: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which verification suite to run.
    #[arg(long, value_enum)]
    suite: Suite,
}

#[derive(Args)]
struct ReplayArgs {
    /// JSONL event log produced by `simulate --dump-events`.
    file: PathBuf,
}

/// Parse the process arguments and run; the binary's whole `main`.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

impl CommonArgs {
    /// CLI flags as a draft, with the config file (if any) filling the gaps.
    fn draft(&self) -> anyhow::Result<Draft> {
        let mut draft = Draft {
            n: self.n,
            s: self.s,
            mu: self.mu,
            eta: self.eta,
            k_sweeps: self.k_sweeps,
            replicates: self.replicates,
            seed: self.seed,
            alpha: self.alpha,
            gamma: self.gamma,
            zeta: self.zeta,
            kappa: self.kappa,
            c1: self.c1,
            c2: self.c2,
            t_checks: self.t_checks.clone(),
            grid_ns: self.grid_ns.clone(),
            significance: self.significance,
            pass_threshold: self.pass_threshold,
            event_cap: self.event_cap,
            dump_cap: self.dump_cap,
            workers: self.workers,
            out_dir: self.out_dir.as_ref().map(|p| p.display().to_string()),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            let file_draft = parse_config_file(&text)
                .with_context(|| format!("config file {}", path.display()))?;
            draft.fill_from(&file_draft);
        }
        Ok(draft)
    }
}

/// Master seed: the explicit one, or a clock-derived value. Either way
/// the caller prints it and stores it in the manifest, so any run can
/// be reproduced by pinning it.
fn master_seed(draft: &Draft) -> u64 {
    draft.seed.unwrap_or_else(|| {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0x5EED);
        derive_seed(nanos, u64::from(std::process::id()))
    })
}

/// Output files written atomically as a set: on any failure every file
/// already written is removed, so a run never leaves partial outputs.
struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputSet {
    fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutputSet { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect()
    }

    fn write_with(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let attempt = || -> std::io::Result<()> {
            let mut w = BufWriter::new(fs::File::create(&path)?);
            write(&mut w)?;
            w.flush()
        };
        match attempt() {
            Ok(()) => {
                self.written.push(path);
                Ok(())
            }
            Err(err) => {
                let _ = fs::remove_file(&path);
                self.discard();
                Err(err).with_context(|| format!("writing {name}"))
            }
        }
    }

    fn write_text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        self.write_with(name, |w| w.write_all(text.as_bytes()))
    }

    fn discard(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let command_line = command_line();
    let draft = args.common.draft()?;
    let config = SimulateConfig::resolve(&draft).map_err(|e| anyhow::anyhow!("{e}"))?;
    let params = config.parameters().map_err(|e| anyhow::anyhow!("{e}"))?;
    let seed = master_seed(&draft);
    println!("master seed: {seed}");

    // Detector depth: the target sweeps plus the width headroom (or a
    // flat margin when no mutation-selection profile exists).
    let k_track = config.k_sweeps
        + derived_constants(&params).map(|d| d.delta as usize + 2).unwrap_or(8);
    let stop = StopCondition::after_events(config.event_cap);
    let runs = run_replicates(
        config.replicates,
        seed,
        draft.workers.unwrap_or(0),
        |_, rng| {
            let mut engine = Engine::from_scratch(params);
            let mut detector = StoppingTimeDetector::new(&params, config.alpha, k_track);
            detector.observe_initial(engine.counts());
            detector.stop_at_establishment = Some(config.k_sweeps);
            let outcome = engine.run_monitored(&stop, &mut detector, rng);
            (detector.into_log(), outcome)
        },
    );

    let mut rows = Vec::new();
    let mut events_total = 0u64;
    let mut capped = 0u64;
    for (i, (log, outcome)) in runs.iter().enumerate() {
        events_total += outcome.events;
        if outcome.reason != StopReason::Predicate {
            capped += 1;
        }
        rows.extend(sweep_rows_from_log(i as u64, log, &params));
    }
    if capped > 0 {
        eprintln!(
            "warning: {capped} of {} replicates stopped before sweep {} \
             (event cap {}); their missing times are blank in the table",
            config.replicates, config.k_sweeps, config.event_cap
        );
    }

    // The optional event dump replays replicate 0's stream: same seed,
    // same event budget, recorded this time.
    let dump = if args.dump_events {
        let events_0 = runs[0].1.events;
        if events_0 > config.dump_cap {
            bail!(
                "event dump skipped: replicate 0 produced {events_0} events, \
                 above the dump cap {}; no files were written",
                config.dump_cap
            );
        }
        let mut rng = replicate_rng(seed, 0);
        let (trajectory, _) = simulate_recorded(
            params,
            &[params.n],
            &StopCondition::after_events(events_0),
            &mut rng,
        )
        .map_err(|e| anyhow::anyhow!("recording replicate 0: {e:?}"))?;
        Some(trajectory)
    } else {
        None
    };

    let out_dir = output_dir(&draft);
    let mut outputs = OutputSet::create(&out_dir)?;
    outputs.write_with("sweeps.csv", |w| write_sweep_csv(w, &rows))?;
    if let Some(trajectory) = &dump {
        outputs.write_with("events.jsonl", |w| write_trajectory_jsonl(w, trajectory))?;
    }
    let mut names = outputs.names();
    names.push("manifest.json".to_string());
    let manifest = RunManifest {
        tool_version: tool_version(),
        command: command_line,
        config: serde_json::to_value(&config).expect("config serializes"),
        config_sha256: config.sha256(),
        master_seed: seed,
        seeds: seed_record(seed, config.replicates),
        outputs: names,
        events_total,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    outputs.write_text("manifest.json", &manifest_json(&manifest))?;

    println!(
        "wrote {} rows for {} replicates ({events_total} events) to {}",
        rows.len(),
        config.replicates,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let command_line = command_line();
    let draft = args.common.draft()?;
    let config = draft.resolve(args.suite).map_err(|e| anyhow::anyhow!("{e}"))?;
    let seed = master_seed(&draft);
    println!("master seed: {seed}");

    let output = run_suite(&config, seed, draft.workers.unwrap_or(0));

    let out_dir = output_dir(&draft);
    let mut outputs = OutputSet::create(&out_dir)?;
    outputs.write_text("report.json", &output.report.to_json())?;
    outputs.write_text("report.txt", &output.report.to_text())?;
    if !output.sweep_rows.is_empty() {
        outputs.write_with("sweeps.csv", |w| write_sweep_csv(w, &output.sweep_rows))?;
    }
    if !output.coupling_rows.is_empty() {
        outputs.write_with("coupling.csv", |w| write_coupling_csv(w, &output.coupling_rows))?;
    }
    let mut names = outputs.names();
    names.push("manifest.json".to_string());
    let manifest = RunManifest {
        tool_version: tool_version(),
        command: command_line,
        config: serde_json::to_value(&config).expect("config serializes"),
        config_sha256: config.sha256(),
        master_seed: seed,
        seeds: seed_record(seed, config.replicates),
        outputs: names,
        events_total: output.events_total,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    outputs.write_text("manifest.json", &manifest_json(&manifest))?;

    print!("{}", output.report.to_text());
    println!("report written to {}", out_dir.display());
    if output.report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_replay(args: ReplayArgs) -> anyhow::Result<ExitCode> {
    let file = fs::File::open(&args.file)
        .with_context(|| format!("opening {}", args.file.display()))?;
    let trajectory = match read_trajectory_jsonl(BufReader::new(file)) {
        Ok(t) => t,
        Err(JsonlError::Io(e)) => {
            return Err(anyhow::Error::new(e)
                .context(format!("reading {}", args.file.display())));
        }
        Err(JsonlError::Line { line, detail }) => {
            bail!("{} line {line}: {detail}", args.file.display());
        }
    };

    match trajectory.final_state() {
        Ok(state) => {
            // Conservation and cache coherence on the replayed state.
            let total: u64 = state.counts.iter().map(|&c| u64::from(c)).sum();
            if total != u64::from(trajectory.params.n) {
                println!(
                    "FAIL after replay: population size {total} != {}",
                    trajectory.params.n
                );
                return Ok(ExitCode::FAILURE);
            }
            let fresh: f64 = state
                .counts
                .iter()
                .enumerate()
                .map(|(k, &c)| f64::from(c) * (1.0 + trajectory.params.s).powi(k as i32))
                .sum();
            if (state.total_fitness - fresh).abs() > 1e-9 * fresh.max(1.0) {
                println!(
                    "FAIL after replay: fitness cache {} != recomputed {fresh}",
                    state.total_fitness
                );
                return Ok(ExitCode::FAILURE);
            }
            let composition: Vec<String> = state
                .counts
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c > 0)
                .map(|(k, &c)| format!("type {k}: {c}"))
                .collect();
            println!(
                "OK: {} events replayed to t = {}; {}",
                trajectory.events.len(),
                state.time,
                composition.join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
        Err((index, err)) => {
            println!("FAIL at event index {index}: {err:?}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn output_dir(draft: &Draft) -> PathBuf {
    draft.out_dir.as_deref().map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}
