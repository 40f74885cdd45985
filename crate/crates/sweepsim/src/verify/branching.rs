//! Birth-death laboratory suite: Monte Carlo paths of the bounding
//! lineage processes against their closed-form laws — survival odds,
//! extinction-conditioned lifetime integrals, growth moments, the
//! geometric pure-birth law, and the finite/infinite line-of-descent
//! decomposition.

use sweepsim_core::branching::{
    conditioned_total_progeny, moments, simulate_outcome, simulate_two_type, survival_probability,
    two_type_decomposition, yule_law, BranchStop, BranchVerdict, BranchingSpec,
    GeneratingFunctionSpec,
};
use sweepsim_core::rng::{derive_seed, uniform};

use crate::config::ExperimentConfig;
use crate::runner::run_replicates;
use crate::stats::{
    binomial_se, chi_square_gof, mean, standard_error, variance_standard_error,
};
use crate::verify::{CheckResult, Exclusion, Report, SuiteOutput};

/// Ceiling at which a supercritical path is declared surviving; the
/// misclassification odds are `(death/birth)^ceiling`, which at the
/// shallowest slope used here (s = 0.1) is under 1e-8.
const SURVIVAL_CEILING: u64 = 200;

/// Horizons for the growth-moment and pure-birth histogram checks.
const HORIZONS: [f64; 3] = [0.5, 1.0, 2.0];

/// Progeny checks run for the first three bounding types.
const PROGENY_KS: [u32; 3] = [1, 2, 3];

pub fn run(config: &ExperimentConfig, master_seed: u64, workers: usize) -> SuiteOutput {
    let s = config.s;
    let replicates = config.replicates;
    let mut checks = Vec::new();
    let mut exclusions = Vec::new();
    let mut events_total = 0u64;
    // Each sub-experiment draws an independent replicate block; the
    // exclusion index space allots one block per sub-experiment.
    let mut sub = 0u64;
    let mut total_paths = 0u64;
    let next_block = |sub: &mut u64| {
        let block = *sub;
        *sub += 1;
        (derive_seed(master_seed, 1000 + block), block * replicates)
    };

    // 1. Survival odds of a single advantaged lineage.
    {
        let (seed, base) = next_block(&mut sub);
        total_paths += replicates;
        let spec = BranchingSpec::lineage(1.0 + s, 1.0);
        let stop = BranchStop::at_ceiling(SURVIVAL_CEILING);
        let outcomes = run_replicates(replicates, seed, workers, |_, rng| {
            simulate_outcome(&spec, &stop, rng)
        });
        let mut survived = 0u64;
        let mut decided = 0u64;
        for (i, out) in outcomes.iter().enumerate() {
            events_total += out.events;
            match out.verdict {
                BranchVerdict::CeilingReached => {
                    survived += 1;
                    decided += 1;
                }
                BranchVerdict::Extinct => decided += 1,
                other => exclusions.push(Exclusion {
                    replicate: base + i as u64,
                    reason: format!("survival path ended {other:?}"),
                }),
            }
        }
        let expected = survival_probability(&spec);
        checks.push(CheckResult::within(
            "survival-odds",
            survived as f64 / decided.max(1) as f64,
            expected,
            3.0 * binomial_se(expected, decided.max(1)),
            format!("{survived} of {decided} paths reached {SURVIVAL_CEILING}"),
        ));
    }

    // 2. Lifetime integral of doomed lineages, one check per type.
    for k in PROGENY_KS {
        let (seed, base) = next_block(&mut sub);
        total_paths += replicates;
        let birth = (1.0 + s).powi(k as i32);
        let spec = BranchingSpec::lineage(birth, 1.0);
        let stop = BranchStop::at_ceiling(256);
        let outcomes = run_replicates(replicates, seed, workers, |_, rng| {
            simulate_outcome(&spec, &stop, rng)
        });
        let mut integrals = Vec::new();
        for (i, out) in outcomes.iter().enumerate() {
            events_total += out.events;
            match out.verdict {
                BranchVerdict::Extinct => integrals.push(out.progeny_integral),
                BranchVerdict::CeilingReached => {}
                other => exclusions.push(Exclusion {
                    replicate: base + i as u64,
                    reason: format!("progeny path (type {k}) ended {other:?}"),
                }),
            }
        }
        checks.push(CheckResult::within(
            format!("conditioned-progeny-k{k}"),
            mean(&integrals),
            conditioned_total_progeny(k, s),
            3.0 * standard_error(&integrals),
            format!("{} extinct paths of {replicates}", integrals.len()),
        ));
    }

    // 3. Growth moments of a binary-fission process.
    let fission = GeneratingFunctionSpec::binary_fission(1.2, 1.0);
    let fission_sim = BranchingSpec::lineage(1.2, 1.0);
    for t in HORIZONS {
        let (seed, base) = next_block(&mut sub);
        total_paths += replicates;
        let stop = BranchStop::at_time(t);
        let outcomes = run_replicates(replicates, seed, workers, |_, rng| {
            simulate_outcome(&fission_sim, &stop, rng)
        });
        let mut finals = Vec::new();
        for (i, out) in outcomes.iter().enumerate() {
            events_total += out.events;
            match out.verdict {
                BranchVerdict::HorizonReached | BranchVerdict::Extinct => {
                    finals.push(out.final_count as f64);
                }
                other => exclusions.push(Exclusion {
                    replicate: base + i as u64,
                    reason: format!("growth path (t = {t}) ended {other:?}"),
                }),
            }
        }
        let law = moments(&fission, t).expect("binary fission at these rates is non-critical");
        checks.push(CheckResult::within(
            format!("growth-mean-t{t}"),
            mean(&finals),
            law.mean,
            3.0 * standard_error(&finals),
            format!("{} paths", finals.len()),
        ));
        let m = mean(&finals);
        let sample_var = if finals.len() < 2 {
            0.0
        } else {
            finals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (finals.len() - 1) as f64
        };
        checks.push(CheckResult::within(
            format!("growth-variance-t{t}"),
            sample_var,
            law.variance,
            3.0 * variance_standard_error(&finals),
            format!("{} paths", finals.len()),
        ));
    }

    // 4. Pure-birth count histogram against the geometric law.
    let pure_birth = BranchingSpec::new(1.0, 0.0, 0.0, 1).expect("rates are nonnegative");
    for t in HORIZONS {
        let (seed, base) = next_block(&mut sub);
        total_paths += replicates;
        let stop = BranchStop::at_time(t);
        let outcomes = run_replicates(replicates, seed, workers, |_, rng| {
            simulate_outcome(&pure_birth, &stop, rng)
        });
        let mut counts: Vec<u64> = Vec::new();
        for (i, out) in outcomes.iter().enumerate() {
            events_total += out.events;
            if out.verdict != BranchVerdict::HorizonReached {
                exclusions.push(Exclusion {
                    replicate: base + i as u64,
                    reason: format!("pure-birth path (t = {t}) ended {:?}", out.verdict),
                });
                continue;
            }
            let m = out.final_count as usize;
            if counts.len() < m {
                counts.resize(m, 0);
            }
            counts[m - 1] += 1; // cell for count m sits at index m - 1
        }
        let n_paths: u64 = counts.iter().sum();
        let law = yule_law(1.0, t);
        let mut expected: Vec<f64> =
            (1..=counts.len() as u64).map(|m| law.pmf(m) * n_paths as f64).collect();
        if let Some(last) = expected.last_mut() {
            // The last occupied cell also absorbs the unobserved tail.
            *last += law.tail(counts.len() as u64) * n_paths as f64;
        }
        let check = match chi_square_gof(&counts, &expected) {
            Ok(res) => CheckResult::exceeds(
                format!("pure-birth-chisq-t{t}"),
                res.p_value,
                config.significance,
                format!(
                    "chi-square {:.3} on {} pooled cells (df {}) over {n_paths} paths",
                    res.statistic, res.cells, res.df
                ),
            ),
            Err(e) => CheckResult::exceeds(
                format!("pure-birth-chisq-t{t}"),
                0.0,
                config.significance,
                format!("not computable: {e}"),
            ),
        };
        checks.push(check);
    }

    // 5. Finite/infinite line-of-descent decomposition.
    {
        let (seed, base) = next_block(&mut sub);
        total_paths += replicates;
        let spec = two_type_decomposition(s);
        let horizon = 2.0;
        let outcomes = run_replicates(replicates, seed, workers, |_, rng| {
            let root_infinite = uniform(rng) < 1.0 - spec.q;
            simulate_two_type(&spec, root_infinite, horizon, 1_000_000, rng)
        });
        let mut totals = Vec::new();
        let mut infinites = Vec::new();
        for (i, out) in outcomes.iter().enumerate() {
            if out.undecided {
                exclusions.push(Exclusion {
                    replicate: base + i as u64,
                    reason: "line-of-descent path hit its event cap".to_string(),
                });
                continue;
            }
            totals.push(out.total() as f64);
            infinites.push(out.infinite as f64);
        }
        let growth = (s * horizon).exp();
        checks.push(CheckResult::within(
            "line-decomposition-total-mean",
            mean(&totals),
            growth,
            3.0 * standard_error(&totals),
            format!("{} paths at t = {horizon}", totals.len()),
        ));
        checks.push(CheckResult::within(
            "line-decomposition-infinite-mean",
            mean(&infinites),
            (1.0 - spec.q) * growth,
            3.0 * standard_error(&infinites),
            "immortal-line count within each path".to_string(),
        ));
    }

    let report = Report::assemble(config, master_seed, total_paths, checks, exclusions);
    SuiteOutput::tableless(report, events_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Draft, Suite};

    #[test]
    fn the_lab_reports_its_full_check_set_and_passes_at_modest_size() {
        let mut draft = Draft::default();
        draft.replicates = Some(4000);
        let config = draft.resolve(Suite::Branching).unwrap();
        let out = run(&config, 0xB4A2C41, 0);

        let names: Vec<&str> = out.report.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "survival-odds",
                "conditioned-progeny-k1",
                "conditioned-progeny-k2",
                "conditioned-progeny-k3",
                "growth-mean-t0.5",
                "growth-variance-t0.5",
                "growth-mean-t1",
                "growth-variance-t1",
                "growth-mean-t2",
                "growth-variance-t2",
                "pure-birth-chisq-t0.5",
                "pure-birth-chisq-t1",
                "pure-birth-chisq-t2",
                "line-decomposition-total-mean",
                "line-decomposition-infinite-mean",
            ]
        );
        assert_eq!(out.report.replicates_total, 11 * 4000);
        assert!(out.events_total > 0);
        for check in &out.report.checks {
            assert!(check.pass, "{} failed: {} (detail: {})", check.name, check.observed, check.detail);
        }
    }
}
