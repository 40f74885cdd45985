//! Poisson-limit suite: runs replicates until `k_sweeps` types have
//! established, pools the rescaled establishment increments against the
//! unit exponential, and audits the post-sweep profile (leader occupancy
//! and support width) inside each inter-establishment window.

use sweepsim_core::observe::{derived_constants, StoppingTimeDetector, StoppingTimeLog};
use sweepsim_core::state::Event;
use sweepsim_core::{Engine, Monitor, Parameters, StopCondition, StopReason};

use crate::config::ExperimentConfig;
use crate::io::{sweep_rows_from_log, SweepRow};
use crate::runner::run_replicates;
use crate::stats::{ks_exp1, mean};
use crate::verify::{CheckResult, Exclusion, Report, SuiteOutput};

/// Pull the `k_sweeps` rescaled establishment increments
/// `N mu s (T_k - T_(k-1))` out of a stopping-time log, or report the
/// first type whose establishment is missing.
pub fn rescaled_increments(
    log: &StoppingTimeLog,
    params: &Parameters,
    k_sweeps: usize,
) -> Result<Vec<f64>, usize> {
    let scale = params.n_f64() * params.mu * params.s;
    let mut out = Vec::with_capacity(k_sweeps);
    let mut prev = log.establishment[0].ok_or(0usize)?;
    for k in 1..=k_sweeps {
        let tk = log.establishment.get(k).copied().flatten().ok_or(k)?;
        out.push(scale * (tk - prev));
        prev = tk;
    }
    Ok(out)
}

/// Observes one replicate: feeds the stopping-time detector, tracks the
/// active inter-establishment window, and audits every event inside it.
///
/// The window for sweep `k` is `[T_k + c1_offset, T_(k+1))`, half-open on
/// the right: the event that establishes type `k+1` advances the window
/// and is itself not audited.
struct SweepWatch {
    detector: StoppingTimeDetector,
    k_sweeps: usize,
    delta: usize,
    /// `c1 log N / s`, the settling offset after each establishment.
    c1_offset: f64,
    /// `N - c2 log N / s`, the occupancy floor for the leading type.
    occupancy_floor: f64,
    /// Largest type with a recorded establishment (the active window).
    current: Option<usize>,
    /// Per-window failure marks, indexed by window (sweep) number.
    occupancy_failed: Vec<bool>,
    width_failed: Vec<bool>,
    /// Event-level tallies for the report detail.
    events_audited: u64,
    occupancy_bad_events: u64,
    width_bad_events: u64,
}

impl SweepWatch {
    fn new(params: &Parameters, config: &ExperimentConfig, delta: usize, initial: &[u32]) -> Self {
        let k_track = config.k_sweeps + delta + 2;
        let mut detector = StoppingTimeDetector::new(params, config.alpha, k_track);
        detector.observe_initial(initial);
        let log_n_over_s = params.n_f64().ln() / params.s;
        let mut watch = SweepWatch {
            detector,
            k_sweeps: config.k_sweeps,
            delta,
            c1_offset: config.c1 * log_n_over_s,
            occupancy_floor: params.n_f64() - config.c2 * log_n_over_s,
            current: None,
            occupancy_failed: vec![false; config.k_sweeps],
            width_failed: vec![false; config.k_sweeps],
            events_audited: 0,
            occupancy_bad_events: 0,
            width_bad_events: 0,
        };
        watch.advance();
        watch
    }

    /// Move the active window up past every newly recorded
    /// establishment; reports whether it moved.
    fn advance(&mut self) -> bool {
        let log = self.detector.log();
        let mut moved = false;
        loop {
            let next = self.current.map_or(0, |c| c + 1);
            if next < log.establishment.len() && log.establishment[next].is_some() {
                self.current = Some(next);
                moved = true;
            } else {
                return moved;
            }
        }
    }

    fn done(&self) -> bool {
        self.current.is_some_and(|c| c >= self.k_sweeps)
    }
}

impl Monitor for SweepWatch {
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool {
        self.detector.observe(event, |k| engine.count(k));
        let advanced = self.advance();
        if self.done() {
            return false;
        }
        // An event that establishes the next type closes the previous
        // window; the window is half-open there, so skip the audit.
        if advanced {
            return true;
        }
        let Some(k) = self.current else { return true };
        let t_k = self.detector.log().establishment[k].expect("current implies establishment");
        if event.time < t_k + self.c1_offset {
            return true;
        }
        self.events_audited += 1;
        if f64::from(engine.count(k)) < self.occupancy_floor {
            self.occupancy_bad_events += 1;
            self.occupancy_failed[k] = true;
        }
        let (lo, hi) = engine.window();
        if lo < k || hi > k + self.delta {
            self.width_bad_events += 1;
            self.width_failed[k] = true;
        }
        true
    }
}

struct Replicate {
    log: StoppingTimeLog,
    occupancy_failed: Vec<bool>,
    width_failed: Vec<bool>,
    events_audited: u64,
    occupancy_bad_events: u64,
    width_bad_events: u64,
    reason: StopReason,
    events: u64,
    final_time: f64,
}

pub fn run(config: &ExperimentConfig, master_seed: u64, workers: usize) -> SuiteOutput {
    let params = config.parameters().expect("config was validated");
    let delta = derived_constants(&params)
        .expect("the sweep suite needs mu > 0, s > 0, and eta")
        .delta as usize;
    let stop = StopCondition::after_events(config.event_cap);

    let results = run_replicates(config.replicates, master_seed, workers, |_, rng| {
        let mut engine = Engine::from_scratch(params);
        let mut watch = SweepWatch::new(&params, config, delta, engine.counts());
        let outcome = engine.run_monitored(&stop, &mut watch, rng);
        Replicate {
            log: watch.detector.into_log(),
            occupancy_failed: watch.occupancy_failed,
            width_failed: watch.width_failed,
            events_audited: watch.events_audited,
            occupancy_bad_events: watch.occupancy_bad_events,
            width_bad_events: watch.width_bad_events,
            reason: outcome.reason,
            events: outcome.events,
            final_time: outcome.final_time,
        }
    });

    let mut exclusions = Vec::new();
    let mut increments = Vec::new();
    let mut sweep_rows: Vec<SweepRow> = Vec::new();
    let mut windows_total = 0u64;
    let mut occupancy_failed_windows = 0u64;
    let mut width_failed_windows = 0u64;
    let mut events_audited = 0u64;
    let mut occupancy_bad_events = 0u64;
    let mut width_bad_events = 0u64;
    let mut events_total = 0u64;

    for (i, rep) in results.iter().enumerate() {
        events_total += rep.events;
        let missing = |k: usize| {
            format!(
                "establishment of type {k} never reached (stopped by {:?} after {} events, \
                 t = {:.1})",
                rep.reason, rep.events, rep.final_time
            )
        };
        if rep.reason != StopReason::Predicate {
            let next =
                (0..=config.k_sweeps).find(|&k| rep.log.establishment[k].is_none()).unwrap_or(0);
            exclusions.push(Exclusion { replicate: i as u64, reason: missing(next) });
            continue;
        }
        match rescaled_increments(&rep.log, &params, config.k_sweeps) {
            Ok(sample) => increments.extend(sample),
            Err(k) => {
                exclusions.push(Exclusion { replicate: i as u64, reason: missing(k) });
                continue;
            }
        }
        sweep_rows.extend(sweep_rows_from_log(i as u64, &rep.log, &params));
        windows_total += config.k_sweeps as u64;
        occupancy_failed_windows += rep.occupancy_failed.iter().filter(|&&f| f).count() as u64;
        width_failed_windows += rep.width_failed.iter().filter(|&&f| f).count() as u64;
        events_audited += rep.events_audited;
        occupancy_bad_events += rep.occupancy_bad_events;
        width_bad_events += rep.width_bad_events;
    }

    let mut checks = Vec::new();

    match ks_exp1(&increments) {
        Ok(ks) => checks.push(CheckResult::exceeds(
            "rescaled-increments-exp1-ks",
            ks.p_value,
            config.significance,
            format!(
                "KS D = {:.4} over {} pooled increments; sample mean {:.4} \
                 (the sweep rate runs below N mu s by roughly 1+s at finite s)",
                ks.statistic,
                ks.n,
                mean(&increments)
            ),
        )),
        Err(e) => checks.push(CheckResult::exceeds(
            "rescaled-increments-exp1-ks",
            0.0,
            config.significance,
            format!("KS not computable: {e}"),
        )),
    }

    let fraction = |failed: u64| {
        if windows_total == 0 { 1.0 } else { 1.0 - failed as f64 / windows_total as f64 }
    };
    checks.push(CheckResult::at_least(
        "post-sweep-occupancy",
        fraction(occupancy_failed_windows),
        config.pass_threshold,
        format!(
            "{occupancy_failed_windows} of {windows_total} windows dipped below \
             N - c2 log N / s ({occupancy_bad_events} of {events_audited} audited events)"
        ),
    ));
    checks.push(CheckResult::at_least(
        "support-width",
        fraction(width_failed_windows),
        config.pass_threshold,
        format!(
            "{width_failed_windows} of {windows_total} windows left [k, k + {delta}] \
             ({width_bad_events} of {events_audited} audited events)"
        ),
    ));

    let report =
        Report::assemble(config, master_seed, config.replicates, checks, exclusions);
    SuiteOutput { report, sweep_rows, coupling_rows: Vec::new(), events_total }
}
