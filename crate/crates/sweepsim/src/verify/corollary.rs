//! Mean-path suite: samples the population mean type at fixed rescaled
//! times, compares it against the sweep count (hard bound on width-held
//! checkpoints) and against the Poisson limit law (mean and chi-square
//! at the rescaled time nearest 1).

use sweepsim_core::observe::{derived_constants, sweep_count, StoppingTimeDetector, StoppingTimeLog};
use sweepsim_core::state::{Event, EventKind};
use sweepsim_core::{Engine, Monitor, StopCondition, StopReason};

use crate::config::ExperimentConfig;
use crate::runner::run_replicates;
use crate::stats::{chi_square_gof, mean, standard_error};
use crate::verify::{CheckResult, Exclusion, Report, SuiteOutput};

/// State of one checkpoint as seen by the running monitor: the absolute
/// time it fired, the population's type-sum, and the occupied window.
#[derive(Debug, Clone, Copy)]
struct Snapshot {
    sum: i64,
    window: (usize, usize),
}

/// Tracks the mean type incrementally (an integer sum of type indices)
/// and snapshots it at each checkpoint, strictly before applying the
/// event that crosses the checkpoint time — the population is a step
/// function, right-continuous, so a checkpoint at an event time takes
/// the post-event state.
struct MeanPathWatch {
    detector: StoppingTimeDetector,
    /// Absolute checkpoint times, ascending.
    checkpoints: Vec<f64>,
    next: usize,
    sum: i64,
    window: (usize, usize),
    snapshots: Vec<Snapshot>,
}

impl MeanPathWatch {
    fn new(detector: StoppingTimeDetector, checkpoints: Vec<f64>) -> Self {
        let n = checkpoints.len();
        MeanPathWatch {
            detector,
            checkpoints,
            next: 0,
            sum: 0,
            window: (0, 0),
            snapshots: Vec::with_capacity(n),
        }
    }

    /// Record the current state for every checkpoint before `until`
    /// (exclusive); `None` drains all remaining checkpoints.
    fn drain(&mut self, until: Option<f64>) {
        while self.next < self.checkpoints.len()
            && until.is_none_or(|t| self.checkpoints[self.next] < t)
        {
            self.snapshots.push(Snapshot { sum: self.sum, window: self.window });
            self.next += 1;
        }
    }
}

impl Monitor for MeanPathWatch {
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool {
        self.drain(Some(event.time));
        self.detector.observe(event, |k| engine.count(k));
        match event.kind {
            EventKind::Replacement { dying, parent } => {
                self.sum += i64::from(parent) - i64::from(dying);
            }
            EventKind::Mutation { .. } => self.sum += 1,
        }
        self.window = engine.window();
        true
    }
}

struct Replicate {
    log: StoppingTimeLog,
    snapshots: Vec<Snapshot>,
    reason: StopReason,
    events: u64,
}

pub fn run(config: &ExperimentConfig, master_seed: u64, workers: usize) -> SuiteOutput {
    let params = config.parameters().expect("config was validated");
    let derived = derived_constants(&params).expect("the mean-path suite needs mu > 0 and eta");
    let delta = derived.delta as usize;
    let n_f = params.n_f64();
    let rescale = n_f * params.mu * params.s;

    let t_checks = &config.t_checks;
    let t_max = t_checks.iter().cloned().fold(0.0_f64, f64::max);
    let absolute: Vec<f64> = t_checks.iter().map(|u| u / rescale).collect();
    // Sweeps arrive roughly once per rescaled time unit; leave generous
    // headroom so the detector never saturates its type range.
    let k_track = t_max.ceil() as usize + delta + 12;
    let stop = StopCondition::at_time(t_max / rescale).with_event_cap(config.event_cap);

    let results = run_replicates(config.replicates, master_seed, workers, |_, rng| {
        let mut engine = Engine::from_scratch(params);
        let mut detector = StoppingTimeDetector::new(&params, config.alpha, k_track);
        detector.observe_initial(engine.counts());
        let mut watch = MeanPathWatch::new(detector, absolute.clone());
        let outcome = engine.run_monitored(&stop, &mut watch, rng);
        watch.drain(None);
        Replicate {
            log: watch.detector.into_log(),
            snapshots: watch.snapshots,
            reason: outcome.reason,
            events: outcome.events,
        }
    });

    let mut exclusions = Vec::new();
    let mut events_total = 0u64;
    // Pooled over included replicates.
    let mut checkpoints_total = 0u64;
    let mut width_held = 0u64;
    let mut gated_max: Option<f64> = None;
    let mut ungated_max = 0.0_f64;
    // Index of the rescaled time closest to 1 (the marginal check).
    let star = (0..t_checks.len())
        .min_by(|&a, &b| {
            (t_checks[a] - 1.0).abs().total_cmp(&(t_checks[b] - 1.0).abs())
        })
        .expect("t_checks is non-empty by validation");
    let mut xbar_at_star = Vec::new();

    for (i, rep) in results.iter().enumerate() {
        events_total += rep.events;
        if rep.reason == StopReason::EventCap {
            exclusions.push(Exclusion {
                replicate: i as u64,
                reason: format!(
                    "event cap {} exhausted after {} events before the last checkpoint",
                    config.event_cap, rep.events
                ),
            });
            continue;
        }
        for (j, snap) in rep.snapshots.iter().enumerate() {
            checkpoints_total += 1;
            let xbar = snap.sum as f64 / n_f;
            let v = sweep_count(&rep.log, absolute[j]);
            let (lo, hi) = snap.window;
            ungated_max = ungated_max.max((xbar - v as f64).abs());
            if lo >= v && hi <= v + delta {
                width_held += 1;
                let excess = xbar - v as f64;
                gated_max = Some(gated_max.map_or(excess, |m| m.max(excess)));
            }
            if j == star {
                xbar_at_star.push(xbar);
            }
        }
    }

    let mut checks = Vec::new();

    // Hard algebraic bound: on a width-held checkpoint every type above
    // the sweep count holds at most log N / s individuals, so the mean
    // exceeds the count by at most delta(delta+1)/2 * log N / (N s).
    let bound = (delta * (delta + 1)) as f64 / 2.0 * n_f.ln() / (n_f * params.s);
    let (observed_excess, excess_note) = match gated_max {
        Some(m) => (m, String::new()),
        None => (bound + 1.0, "; no width-held checkpoints, failing by construction".into()),
    };
    checks.push(CheckResult::at_most(
        "mean-vs-count-bound",
        observed_excess,
        bound,
        format!(
            "{width_held} of {checkpoints_total} checkpoints width-held; \
             ungated max |mean - count| = {ungated_max:.4}{excess_note}"
        ),
    ));

    let t_star = t_checks[star];
    checks.push(CheckResult::within(
        "poisson-marginal-mean",
        mean(&xbar_at_star),
        t_star,
        3.0 * standard_error(&xbar_at_star),
        format!(
            "mean type at rescaled time {t_star} over {} replicates \
             (finite-size sweep rate runs below N mu s by roughly 1+s)",
            xbar_at_star.len()
        ),
    ));

    checks.push(poisson_chi_square(&xbar_at_star, t_star, config.significance));

    let report = Report::assemble(config, master_seed, config.replicates, checks, exclusions);
    SuiteOutput::tableless(report, events_total)
}

/// Chi-square of the rounded mean-type sample against the Poisson law
/// with the checkpoint's rescaled time as its mean.
fn poisson_chi_square(xbars: &[f64], t_star: f64, significance: f64) -> CheckResult {
    let name = "poisson-marginal-chisq";
    let counts: Vec<u64> = {
        let rounded: Vec<usize> = xbars.iter().map(|&x| x.round().max(0.0) as usize).collect();
        let top = rounded.iter().copied().max().unwrap_or(0);
        let mut c = vec![0u64; top + 1];
        for m in rounded {
            c[m] += 1;
        }
        c
    };
    // Poisson masses for 0..top, final cell lumping the upper tail.
    let total = xbars.len() as f64;
    let mut expected = Vec::with_capacity(counts.len());
    let mut pmf = (-t_star).exp();
    let mut tail = 1.0;
    for m in 0..counts.len() {
        if m > 0 {
            pmf *= t_star / m as f64;
        }
        expected.push(pmf * total);
        tail -= pmf;
    }
    if let Some(last) = expected.last_mut() {
        *last += tail.max(0.0) * total;
    }
    match chi_square_gof(&counts, &expected) {
        Ok(res) => CheckResult::exceeds(
            name,
            res.p_value,
            significance,
            format!(
                "chi-square {:.3} on {} pooled cells (df {}) over {} samples",
                res.statistic,
                res.cells,
                res.df,
                xbars.len()
            ),
        ),
        Err(e) => CheckResult::exceeds(name, 0.0, significance, format!("not computable: {e}")),
    }
}
