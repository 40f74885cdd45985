//! Cross-cutting property tests for the simulation core.
//!
//! Each property pins an invariant the unit tests only spot-check:
//! population-size conservation along whole trajectories, the per-type
//! rate identities behind the event sampler, the rate inflations the
//! coupled constructions rely on, online/offline agreement of the
//! stopping-time detector, and coherence of the pure-birth law.

use proptest::prelude::*;
use sweepsim_core::branching::yule_law;
use sweepsim_core::engine::simulate_recorded;
use sweepsim_core::math;
use sweepsim_core::observe::{detect_stopping_times, StoppingTimeDetector};
use sweepsim_core::rng::replicate_rng;
use sweepsim_core::{Engine, Parameters, StopCondition};

// ─── Strategies ───

fn params_strategy() -> impl Strategy<Value = Parameters> {
    (2u32..200, 0.0f64..1.0, prop_oneof![Just(0.0), 1e-5f64..1e-2])
        .prop_map(|(n, s, mu)| Parameters::new(n, s, mu, Some(0.5)).expect("ranges are valid"))
}

/// Split `total` individuals over adjacent types starting at `shift`,
/// proportionally to `weights` (the first slot absorbs the remainder).
fn composition(total: u32, shift: usize, weights: &[u32]) -> Vec<u32> {
    let wsum: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    let mut counts = vec![0u32; shift];
    let mut assigned = 0u32;
    for &w in weights {
        let c = ((u64::from(total) * u64::from(w)) / wsum) as u32;
        counts.push(c);
        assigned += c;
    }
    counts[shift] += total - assigned;
    counts
}

// ─── Rate identities ───

proptest! {
    /// Summing the per-target replacement rates out of a type (mutation
    /// flux folded into the adjacent channel) reproduces `X_k d_k`, the
    /// aggregate outflow the sampler uses; and the per-individual death
    /// rate never falls below the mutation rate.
    #[test]
    fn replacement_channels_sum_to_the_per_type_outflow(
        params in params_strategy(),
        shift in 0usize..4,
        weights in proptest::collection::vec(1u32..100, 1..6),
    ) {
        let initial = composition(params.n, shift, &weights);
        let engine = Engine::new(params, &initial).expect("composition matches n");
        let (lo, hi) = engine.window();
        for k in lo..=hi + 1 {
            let rates = engine.per_type_rates(k);
            prop_assert!(rates.death >= params.mu - 1e-12);
            prop_assert!(rates.birth >= -1e-12);
            prop_assert!(rates.immigration >= 0.0);
            prop_assert!(engine.replacement_rate(k, k).is_err());
            let mut outflow = 0.0;
            for j in 0..=hi + 2 {
                if j != k {
                    outflow += engine.replacement_rate(k, j).expect("distinct types");
                }
            }
            let expected = f64::from(engine.count(k)) * rates.death;
            prop_assert!(
                math::close(outflow, expected, 1e-9),
                "type {}: outflow {} vs X_k d_k {}", k, outflow, expected
            );
        }
    }

    /// The inflated birth rates used by the dominating constructions
    /// really dominate, for every composition and size: `(1+s)^k d_k >=
    /// b_k` for the mutant types and `d_0 / (1+s) >= b_0` for the
    /// original type.
    #[test]
    fn inflated_rates_dominate_for_every_composition(
        params in params_strategy(),
        shift in 0usize..4,
        weights in proptest::collection::vec(1u32..100, 1..6),
    ) {
        let initial = composition(params.n, shift, &weights);
        let engine = Engine::new(params, &initial).expect("composition matches n");
        let (lo, hi) = engine.window();
        let g = 1.0 + params.s;
        for k in lo.max(1)..=hi + 1 {
            let rates = engine.per_type_rates(k);
            let inflated = g.powi(k as i32) * rates.death;
            prop_assert!(
                inflated >= rates.birth * (1.0 - 1e-12),
                "type {}: inflated {} < birth {}", k, inflated, rates.birth
            );
        }
        let r0 = engine.per_type_rates(0);
        prop_assert!(
            r0.death / g >= r0.birth * (1.0 - 1e-12),
            "resident: inflated {} < birth {}", r0.death / g, r0.birth
        );
    }
}

// ─── Trajectories ───

proptest! {
    /// Every event along a recorded trajectory preserves the population
    /// size and advances the clock; the replayed end state matches the
    /// run outcome and its cached fitness matches a fresh recomputation.
    #[test]
    fn trajectories_conserve_size_and_replay_to_the_recorded_end(
        params in params_strategy(),
        seed in 0u64..1_000,
    ) {
        let stop = StopCondition::at_time(30.0).with_event_cap(4_000);
        let mut rng = replicate_rng(0xC0FFEE, seed);
        let (trajectory, outcome) =
            simulate_recorded(params, &[params.n], &stop, &mut rng).expect("monomorphic start");
        let mut last_time = 0.0;
        let final_state = trajectory
            .replay(|event, state| {
                assert_eq!(state.size(), u64::from(params.n), "size drifted at {}", event.time);
                assert!(event.time >= last_time, "clock ran backwards at {}", event.time);
                last_time = event.time;
            })
            .expect("a recorded trajectory replays cleanly");
        prop_assert_eq!(final_state.size(), u64::from(params.n));
        prop_assert_eq!(final_state.time, outcome.final_time);
        prop_assert_eq!(trajectory.events.len() as u64, outcome.events);
        let fresh = final_state.fresh_total_fitness(params.s);
        prop_assert!(
            math::close(final_state.total_fitness, fresh, 1e-9),
            "fitness cache {} vs fresh {}", final_state.total_fitness, fresh
        );
        prop_assert!(fresh >= params.n_f64() * (1.0 - 1e-12));
    }

    /// The incremental caches survive long runs: the audit recomputes
    /// everything from scratch and panics on drift.
    #[test]
    fn caches_survive_long_runs(params in params_strategy(), seed in 0u64..200) {
        let mut engine = Engine::from_scratch(params);
        let mut rng = replicate_rng(0xA0D17, seed);
        engine.run(&StopCondition::after_events(5_000), &mut rng);
        engine.audit();
        let (lo, hi) = engine.window();
        prop_assert!(engine.count(lo) > 0 && engine.count(hi) > 0);
    }

    /// Watching a live run and replaying its recording produce the same
    /// stopping-time log, entry for entry.
    #[test]
    fn online_and_offline_stopping_logs_agree(
        n in 20u32..150,
        s in 0.05f64..0.8,
        mu in 1e-4f64..5e-3,
        seed in 0u64..500,
    ) {
        let params = Parameters::new(n, s, mu, Some(0.5)).expect("ranges are valid");
        let stop = StopCondition::at_time(60.0).with_event_cap(20_000);
        let mut rng = replicate_rng(7_777, seed);
        let (trajectory, _) =
            simulate_recorded(params, &[params.n], &stop, &mut rng).expect("monomorphic start");

        let mut engine = Engine::from_scratch(params);
        let mut detector = StoppingTimeDetector::new(&params, 0.5, 4);
        detector.observe_initial(engine.counts());
        let mut rng_live = replicate_rng(7_777, seed);
        engine.run_monitored(&stop, &mut detector, &mut rng_live);

        let offline = detect_stopping_times(&trajectory, 0.5, 4);
        prop_assert_eq!(detector.into_log(), offline);
    }
}

// ─── Pure-birth law ───

proptest! {
    /// The pure-birth count law is a coherent distribution: pmf and tail
    /// satisfy `P(X <= m) + P(X > m) = 1` at every cutoff, the tail is
    /// nonincreasing, and partial means stay below the closed-form mean.
    #[test]
    fn yule_law_is_a_coherent_distribution(rate in 0.05f64..3.0, t in 0.0f64..3.0) {
        let law = yule_law(rate, t);
        prop_assert_eq!(law.tail(0), 1.0);
        prop_assert!(law.mean() >= 1.0);
        let mut cdf = 0.0;
        let mut partial_mean = 0.0;
        for m in 1..=400u64 {
            let p = law.pmf(m);
            prop_assert!((0.0..=1.0).contains(&p));
            cdf += p;
            partial_mean += m as f64 * p;
            prop_assert!(
                math::close(cdf + law.tail(m), 1.0, 1e-9),
                "mass split at {}: cdf {} + tail {}", m, cdf, law.tail(m)
            );
            prop_assert!(law.tail(m) <= law.tail(m - 1));
        }
        prop_assert!(partial_mean <= law.mean() + 1e-9);
    }
}
