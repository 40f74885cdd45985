//! Classical baseline suite: a single mutant of advantage `s` in a
//! population of `n`, no recurrent mutation. Measures the fixation
//! frequency against the exact absorption probability and the mean
//! fixation time against the `(2/s) log N` approximation.

use sweepsim_core::branching::fixation_probability;
use sweepsim_core::{Engine, StopCondition, StopReason};

use crate::config::ExperimentConfig;
use crate::runner::run_replicates;
use crate::stats::{binomial_se, mean};
use crate::verify::{CheckResult, Exclusion, Report, SuiteOutput};

struct Replicate {
    fixed: bool,
    reason: StopReason,
    events: u64,
    final_time: f64,
}

pub fn run(config: &ExperimentConfig, master_seed: u64, workers: usize) -> SuiteOutput {
    let params = config.parameters().expect("config was validated");
    let n = params.n;
    let stop = StopCondition::after_events(config.event_cap);
    let initial = [n - 1, 1];

    let results = run_replicates(config.replicates, master_seed, workers, |_, rng| {
        let mut engine = Engine::new(params, &initial).expect("two-type start is valid");
        let outcome = engine.run(&stop, rng);
        Replicate {
            fixed: engine.count(1) == n,
            reason: outcome.reason,
            events: outcome.events,
            final_time: outcome.final_time,
        }
    });

    let mut exclusions = Vec::new();
    let mut fixed = 0u64;
    let mut included = 0u64;
    let mut fixation_times = Vec::new();
    let mut loss_times = Vec::new();
    let mut events_total = 0u64;
    for (i, rep) in results.iter().enumerate() {
        events_total += rep.events;
        if rep.reason != StopReason::Absorbed {
            exclusions.push(Exclusion {
                replicate: i as u64,
                reason: format!(
                    "event cap {} exhausted after {} events without absorption (t = {:.1})",
                    config.event_cap, rep.events, rep.final_time
                ),
            });
            continue;
        }
        included += 1;
        if rep.fixed {
            fixed += 1;
            fixation_times.push(rep.final_time);
        } else {
            loss_times.push(rep.final_time);
        }
    }

    let mut checks = Vec::new();

    let p_theory = fixation_probability(n, params.s);
    let frequency = if included == 0 { 0.0 } else { fixed as f64 / included as f64 };
    checks.push(CheckResult::within(
        "fixation-probability",
        frequency,
        p_theory,
        3.0 * binomial_se(p_theory, included),
        format!("{fixed} of {included} absorbed runs fixed"),
    ));

    let expected_duration = (2.0 / params.s) * params.n_f64().ln();
    let (mean_duration, duration_detail) = if fixation_times.is_empty() {
        (0.0, "no fixed runs; conditional duration unmeasured".to_string())
    } else {
        (
            mean(&fixation_times),
            format!(
                "mean over {} fixed runs; lost runs averaged t = {:.1}",
                fixation_times.len(),
                if loss_times.is_empty() { 0.0 } else { mean(&loss_times) }
            ),
        )
    };
    checks.push(CheckResult::within(
        "sweep-duration",
        mean_duration,
        expected_duration,
        0.3 * expected_duration,
        duration_detail,
    ));

    checks.push(CheckResult::at_least(
        "fixed-runs",
        fixed as f64,
        1.0,
        format!("{fixed} fixations among {included} absorbed runs"),
    ));

    let report = Report::assemble(config, master_seed, config.replicates, checks, exclusions);
    SuiteOutput::tableless(report, events_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Draft, Suite};

    #[test]
    fn small_classical_run_matches_the_absorption_law() {
        let mut draft = Draft::default();
        draft.n = Some(50);
        draft.s = Some(0.2);
        draft.replicates = Some(2000);
        let config = draft.resolve(Suite::Classical).unwrap();
        let out = run(&config, 0xC1A551CA1, 0);

        assert_eq!(out.report.replicates_included, 2000, "mu = 0 runs always absorb");
        let fixation = &out.report.checks[0];
        assert_eq!(fixation.name, "fixation-probability");
        // Exact law at n=50, s=0.2: s/((1+s)(1-(1+s)^-n)) ~ 0.1668.
        assert!((fixation.expected - 0.2 / (1.2 * (1.0 - 1.2f64.powi(-50)))).abs() < 1e-12);
        assert!(fixation.pass, "observed {} vs {}", fixation.observed, fixation.expected);
        assert_eq!(out.report.checks[2].name, "fixed-runs");
        assert!(out.report.checks[2].observed >= 1.0);
        assert!(out.sweep_rows.is_empty() && out.coupling_rows.is_empty());
    }

    #[test]
    fn an_impossible_event_cap_excludes_every_replicate() {
        let mut draft = Draft::default();
        draft.n = Some(50);
        draft.s = Some(0.2);
        draft.replicates = Some(5);
        draft.event_cap = Some(1);
        let config = draft.resolve(Suite::Classical).unwrap();
        let out = run(&config, 7, 0);
        assert_eq!(out.report.replicates_included, 0);
        assert_eq!(out.report.exclusions.len(), 5);
        assert!(!out.report.passed);
        assert!(out.report.exclusions[0].reason.contains("event cap 1 exhausted"));
    }
}
