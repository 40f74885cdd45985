//! Observables: threshold-crossing times, mutation counters, derived
//! scale constants, and trajectory analysis helpers.
//!
//! The analyses in this crate hinge on a family of per-type stopping
//! times, all of the form "the first time a running statistic of type `k`
//! exceeds a threshold". They are detected event-driven — predicates can
//! only change at events — either online while a simulation runs (as a
//! [`Monitor`]) or offline by replaying a recorded [`Trajectory`]; both
//! routes produce identical logs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{Engine, Monitor};
use crate::math;
use crate::params::Parameters;
use crate::state::{Event, EventKind, PopulationState, Trajectory};

// ── Derived constants ──

/// Scale constants derived from the parameters.
///
/// * `delta` — upper bound on the number of simultaneously active types:
///   `floor(1/(1-eta)) + 1`, at least 2 for `eta` in (0, 1).
/// * `theta` — rate scale `max(N mu, 1/(N s))`.
/// * `beta[k-1]` — count thresholds `beta_k = theta^(1/2) mu^(k-1)
///   (ln N)^(2k-1) / s^k` for `k = 1..=delta`, decreasing in `k` when the
///   parameters are inside the rare-mutation/strong-selection regime.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    pub delta: u32,
    pub theta: f64,
    pub beta: Vec<f64>,
}

impl DerivedConstants {
    /// `beta_k` for `k = 1..=delta`; `None` outside that range.
    pub fn beta(&self, k: usize) -> Option<f64> {
        if k >= 1 {
            self.beta.get(k - 1).copied()
        } else {
            None
        }
    }
}

/// Why derived constants cannot be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsError {
    /// The parameter set carries no `eta`.
    EtaMissing,
    /// Requires `s > 0`.
    SelectionZero,
    /// Requires `mu > 0`.
    MutationZero,
}

impl fmt::Display for ConstantsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstantsError::EtaMissing => write!(f, "derived constants need eta in (0, 1)"),
            ConstantsError::SelectionZero => write!(f, "derived constants need s > 0"),
            ConstantsError::MutationZero => write!(f, "derived constants need mu > 0"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ConstantsError {}

/// Evaluate the derived constants for a parameter set.
pub fn derived_constants(params: &Parameters) -> Result<DerivedConstants, ConstantsError> {
    let eta = params.eta.ok_or(ConstantsError::EtaMissing)?;
    if params.s <= 0.0 {
        return Err(ConstantsError::SelectionZero);
    }
    if params.mu <= 0.0 {
        return Err(ConstantsError::MutationZero);
    }
    let delta = (math::floor(1.0 / (1.0 - eta)) + 1.0) as u32;
    let n = params.n_f64();
    let theta = (n * params.mu).max(1.0 / (n * params.s));
    let log_n = math::ln(n);
    let mut beta = Vec::with_capacity(delta as usize);
    for k in 1..=delta {
        let k = k as i32;
        let value = math::sqrt(theta) * math::powi(params.mu, k - 1) * math::powi(log_n, 2 * k - 1)
            / math::powi(params.s, k);
        beta.push(value);
    }
    Ok(DerivedConstants { delta, theta, beta })
}

// ── Stopping-time log ──

/// First-crossing times for each tracked type, `None` while not yet
/// crossed. All thresholds are strict (`>`), evaluated after every event
/// and on the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTimeLog {
    /// `alpha` used for the high-fraction crossing.
    pub alpha: f64,
    /// Establishment `T_k`: first time the type-`k` count exceeds
    /// `ln(N)/s` (never set when `s = 0`). Index `k = 0..=k_max`.
    pub establishment: Vec<Option<f64>>,
    /// Takeover completion `T_k'`: first time `t >= T_{k-1}'` with the
    /// type-`(k-1)` count zero; `T_0' = 0` by convention. The definition
    /// is applied literally, so consecutive entries can coincide when
    /// several low types are already extinct.
    pub lower_extinction: Vec<Option<f64>>,
    /// `T_{k,alpha}`: first time the type-`k` count exceeds `alpha N`.
    pub alpha_crossing: Vec<Option<f64>>,
    /// First time the type-`k` count exceeds `beta_{k-1}` (tracked for
    /// `k >= 2`, where the threshold constant exists).
    pub beta_crossing: Vec<Option<f64>>,
    /// First time the cumulative mutation count into type `k` exceeds
    /// `beta_{k-1} / sqrt(ln N)` (tracked for `k >= 2`).
    pub mutation_crossing: Vec<Option<f64>>,
}

impl StoppingTimeLog {
    fn with_capacity(alpha: f64, k_max: usize) -> Self {
        StoppingTimeLog {
            alpha,
            establishment: vec![None; k_max + 1],
            lower_extinction: vec![None; k_max + 1],
            alpha_crossing: vec![None; k_max + 1],
            beta_crossing: vec![None; k_max + 1],
            mutation_crossing: vec![None; k_max + 1],
        }
    }

    /// Largest tracked type index.
    pub fn k_max(&self) -> usize {
        self.establishment.len() - 1
    }
}

/// Count of completed sweeps by time `u`: the largest `k >= 1` whose
/// establishment time is recorded and `<= u` (0 if none).
pub fn sweep_count(log: &StoppingTimeLog, u: f64) -> usize {
    assert!(u >= 0.0, "sweep_count takes a nonnegative time");
    for k in (1..=log.k_max()).rev() {
        if let Some(t) = log.establishment[k] {
            if t <= u {
                return k;
            }
        }
    }
    0
}

// ── Online detector ──

/// Event-driven stopping-time detector.
///
/// Tracks types `0..=k_max`. Feed it the initial composition once, then
/// every event (with access to post-event counts); or use it as a
/// [`Monitor`] on a live engine, optionally stopping the run at a chosen
/// establishment time. Mutation counters `M_k` (initial count plus
/// mutations arriving into `k`) are maintained for the tracked range.
#[derive(Debug, Clone)]
pub struct StoppingTimeDetector {
    log: StoppingTimeLog,
    /// `ln(N)/s`, or infinity when `s = 0`.
    establish_threshold: f64,
    /// `alpha * N`.
    alpha_threshold: f64,
    /// `beta_{k-1}` indexed by `k`, for `k = 2..` where available.
    beta_thresholds: Vec<Option<f64>>,
    /// `beta_{k-1}/sqrt(ln N)` indexed by `k`.
    mutation_thresholds: Vec<Option<f64>>,
    /// `M_k` counters.
    mutations: Vec<u64>,
    /// Smallest `k` whose lower-extinction time is still unset.
    next_extinct: usize,
    /// Earliest among establishment of types `2..=delta` and the
    /// mutation-count crossing of type `delta + 1`; `None` if no such
    /// event yet (or no derived constants).
    interference: Option<f64>,
    delta: Option<u32>,
    /// As a monitor: request a stop once this type's establishment fires.
    pub stop_at_establishment: Option<usize>,
}

impl StoppingTimeDetector {
    /// Track types `0..=k_max` with the given `alpha` in (0, 1).
    ///
    /// Threshold families that need the derived constants (`beta`-count
    /// and mutation-count crossings, and the interference time) are armed
    /// only when the constants are computable for these parameters.
    pub fn new(params: &Parameters, alpha: f64, k_max: usize) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
        let n = params.n_f64();
        let establish_threshold =
            if params.s > 0.0 { math::ln(n) / params.s } else { f64::INFINITY };
        let consts = derived_constants(params).ok();
        let mut beta_thresholds = vec![None; k_max + 1];
        let mut mutation_thresholds = vec![None; k_max + 1];
        if let Some(c) = &consts {
            let sqrt_log_n = math::sqrt(math::ln(n));
            for k in 2..=k_max {
                if let Some(b) = c.beta(k - 1) {
                    beta_thresholds[k] = Some(b);
                    mutation_thresholds[k] = Some(b / sqrt_log_n);
                }
            }
        }
        StoppingTimeDetector {
            log: StoppingTimeLog::with_capacity(alpha, k_max),
            establish_threshold,
            alpha_threshold: alpha * n,
            beta_thresholds,
            mutation_thresholds,
            mutations: vec![0; k_max + 1],
            next_extinct: 0,
            interference: None,
            delta: consts.as_ref().map(|c| c.delta),
            stop_at_establishment: None,
        }
    }

    /// Register the composition at time 0: initializes mutation counters
    /// and evaluates every predicate on the starting state.
    pub fn observe_initial(&mut self, initial: &[u32]) {
        let k_max = self.log.k_max();
        for (k, &count) in initial.iter().enumerate().take(k_max + 1) {
            self.mutations[k] = u64::from(count);
        }
        // T_0' = 0 by convention; chain through types already extinct.
        self.log.lower_extinction[0] = Some(0.0);
        self.next_extinct = 1;
        let count_of = |k: usize| initial.get(k).copied().unwrap_or(0);
        self.extinction_cascade(0.0, &count_of);
        for k in 0..=k_max {
            self.check_count_thresholds(k, 0.0, &count_of);
            if k >= 2 {
                self.check_mutation_threshold(k, 0.0);
            }
        }
    }

    /// Process one event; `count_of` must report post-event counts.
    pub fn observe(&mut self, event: &Event, count_of: impl Fn(usize) -> u32) {
        let t = event.time;
        let k_max = self.log.k_max();
        match event.kind {
            EventKind::Mutation { from } => {
                let to = from as usize + 1;
                if to <= k_max {
                    self.mutations[to] += 1;
                    self.check_mutation_threshold(to, t);
                    self.check_count_thresholds(to, t, &count_of);
                }
            }
            EventKind::Replacement { parent, .. } => {
                let to = parent as usize;
                if to <= k_max {
                    self.check_count_thresholds(to, t, &count_of);
                }
            }
        }
        self.extinction_cascade(t, &count_of);
    }

    /// The finished log (also available while detection is in progress).
    pub fn log(&self) -> &StoppingTimeLog {
        &self.log
    }

    pub fn into_log(self) -> StoppingTimeLog {
        self.log
    }

    /// Current `M_k` counter.
    pub fn mutation_count(&self, k: usize) -> u64 {
        self.mutations.get(k).copied().unwrap_or(0)
    }

    /// Earliest sign that a later sweep interferes with the first: the
    /// minimum of the establishment times of types `2..=delta` and the
    /// mutation-count crossing of type `delta + 1`. `None` until one
    /// fires (requires derived constants).
    pub fn interference_time(&self) -> Option<f64> {
        self.interference
    }

    #[inline]
    fn check_count_thresholds(&mut self, k: usize, t: f64, count_of: &impl Fn(usize) -> u32) {
        let x = f64::from(count_of(k));
        if self.log.establishment[k].is_none() && x > self.establish_threshold {
            self.log.establishment[k] = Some(t);
            self.note_interference_candidate(k, t, false);
        }
        if self.log.alpha_crossing[k].is_none() && x > self.alpha_threshold {
            self.log.alpha_crossing[k] = Some(t);
        }
        if self.log.beta_crossing[k].is_none() {
            if let Some(b) = self.beta_thresholds[k] {
                if x > b {
                    self.log.beta_crossing[k] = Some(t);
                }
            }
        }
    }

    #[inline]
    fn check_mutation_threshold(&mut self, k: usize, t: f64) {
        if self.log.mutation_crossing[k].is_none() {
            if let Some(m) = self.mutation_thresholds[k] {
                if self.mutations[k] as f64 > m {
                    self.log.mutation_crossing[k] = Some(t);
                    self.note_interference_candidate(k, t, true);
                }
            }
        }
    }

    #[inline]
    fn extinction_cascade(&mut self, t: f64, count_of: &impl Fn(usize) -> u32) {
        // T_k' fires at the first instant >= T_{k-1}' with type k-1 empty;
        // fire times are visited in order, so one forward pointer suffices,
        // and chained extinctions share the same timestamp.
        while self.next_extinct <= self.log.k_max() && count_of(self.next_extinct - 1) == 0 {
            self.log.lower_extinction[self.next_extinct] = Some(t);
            self.next_extinct += 1;
        }
    }

    #[inline]
    fn note_interference_candidate(&mut self, k: usize, t: f64, mutation_kind: bool) {
        if self.interference.is_some() {
            return;
        }
        let Some(delta) = self.delta else { return };
        let delta = delta as usize;
        let hit = if mutation_kind { k == delta + 1 } else { (2..=delta).contains(&k) };
        if hit {
            self.interference = Some(t);
        }
    }
}

impl Monitor for StoppingTimeDetector {
    #[inline]
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool {
        self.observe(event, |k| engine.count(k));
        match self.stop_at_establishment {
            Some(k) => self.log.establishment[k].is_none(),
            None => true,
        }
    }
}

/// Offline detection: replay a recorded trajectory through a fresh
/// detector. Produces exactly the log an online detector would have
/// produced on the live run.
pub fn detect_stopping_times(
    trajectory: &Trajectory,
    alpha: f64,
    k_max: usize,
) -> StoppingTimeLog {
    let mut detector = StoppingTimeDetector::new(&trajectory.params, alpha, k_max);
    detector.observe_initial(&trajectory.initial);
    trajectory
        .replay(|event, state| {
            detector.observe(event, |k| state.counts.get(k).copied().unwrap_or(0));
        })
        .expect("recorded trajectories replay cleanly");
    detector.into_log()
}

// ── State summaries ──

/// Average number of mutations per individual: `(1/N) Σ_k k X_k`.
pub fn mean_mutation_count(state: &PopulationState) -> f64 {
    let n = state.size() as f64;
    let weighted: f64 =
        state.counts.iter().enumerate().map(|(k, &c)| k as f64 * f64::from(c)).sum();
    weighted / n
}

/// A checkpoint time lies outside the recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeyondTrajectory {
    pub time: f64,
    pub final_time: f64,
}

impl fmt::Display for BeyondTrajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "time {} lies beyond the trajectory's final time {}", self.time, self.final_time)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for BeyondTrajectory {}

/// Occupied-type interval (lowest, highest) at each checkpoint, evaluated
/// on the state left by the last event at or before the checkpoint.
/// Checkpoints must be sorted ascending and within the trajectory.
pub fn width_profile(
    trajectory: &Trajectory,
    checkpoints: &[f64],
) -> Result<Vec<(usize, usize)>, BeyondTrajectory> {
    assert!(
        checkpoints.windows(2).all(|w| w[0] <= w[1]),
        "checkpoints must be sorted ascending"
    );
    if let Some(&last) = checkpoints.last() {
        if last > trajectory.final_time {
            return Err(BeyondTrajectory { time: last, final_time: trajectory.final_time });
        }
    }
    let support = |counts: &[u32]| -> (usize, usize) {
        let lo = counts.iter().position(|&c| c > 0).expect("population is never empty");
        let hi = counts.iter().rposition(|&c| c > 0).unwrap();
        (lo, hi)
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut counts = trajectory.initial.clone();
    let mut next_event = 0;
    for &t in checkpoints {
        while next_event < trajectory.events.len() && trajectory.events[next_event].time <= t {
            apply_counts_only(&mut counts, &trajectory.events[next_event].kind);
            next_event += 1;
        }
        out.push(support(&counts));
    }
    Ok(out)
}

fn apply_counts_only(counts: &mut Vec<u32>, kind: &EventKind) {
    let (from, to) = match *kind {
        EventKind::Replacement { dying, parent } => (dying as usize, parent as usize),
        EventKind::Mutation { from } => (from as usize, from as usize + 1),
    };
    if counts.len() <= to {
        counts.resize(to + 1, 0);
    }
    counts[from] -= 1;
    counts[to] += 1;
}

/// Integral over `[0, t]` of the per-individual death rate of type `k`
/// (`d_k = 1 - (1+s)^k X_k / S + mu`), evaluated exactly as a sum of
/// piecewise-constant segments along the trajectory.
pub fn lambda_integral(
    trajectory: &Trajectory,
    k: usize,
    t: f64,
) -> Result<f64, BeyondTrajectory> {
    if t > trajectory.final_time {
        return Err(BeyondTrajectory { time: t, final_time: trajectory.final_time });
    }
    assert!(t >= 0.0, "integration endpoint must be nonnegative");
    let params = &trajectory.params;
    let gk = math::powi(1.0 + params.s, k as i32);
    let death_rate = |state: &PopulationState| {
        let xk = f64::from(state.counts.get(k).copied().unwrap_or(0));
        1.0 - gk * xk / state.total_fitness + params.mu
    };
    let mut state = PopulationState::new(trajectory.initial.clone(), params.s);
    let mut integral = 0.0;
    let mut prev_time = 0.0;
    for event in &trajectory.events {
        if event.time >= t {
            break;
        }
        integral += death_rate(&state) * (event.time - prev_time);
        state
            .apply(event, params.s)
            .expect("recorded trajectories replay cleanly");
        prev_time = event.time;
    }
    integral += death_rate(&state) * (t - prev_time);
    Ok(integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate_recorded, Engine, StopCondition};
    use crate::rng::replicate_rng;

    fn params(n: u32, s: f64, mu: f64, eta: Option<f64>) -> Parameters {
        Parameters::new(n, s, mu, eta).unwrap()
    }

    #[test]
    fn derived_constants_examples() {
        // eta = 0.5 -> delta = floor(2) + 1 = 3; eta = 0.75 -> 5.
        let c = derived_constants(&params(1000, 0.1, 1e-6, Some(0.5))).unwrap();
        assert_eq!(c.delta, 3);
        let c75 = derived_constants(&params(1000, 0.1, 1e-6, Some(0.75))).unwrap();
        assert_eq!(c75.delta, 5);
        // theta = max(N mu, 1/(N s)) = max(1e-3, 1e-2) = 1e-2.
        assert!(math::close(c.theta, 1e-2, 1e-12));
        // beta_1 = theta^{1/2} (ln N)/s with these parameters.
        let expect_beta1 = 0.1 * math::ln(1000.0) / 0.1;
        assert!(math::close(c.beta(1).unwrap(), expect_beta1, 1e-12));
        // In regime the thresholds decrease strictly in k.
        assert!(c.beta.windows(2).all(|w| w[1] < w[0]), "beta not decreasing: {:?}", c.beta);
        assert_eq!(c.beta.len(), 3);
        assert_eq!(c.beta(4), None);
        assert_eq!(c.beta(0), None);
    }

    #[test]
    fn derived_constants_rejections() {
        assert_eq!(
            derived_constants(&params(1000, 0.1, 1e-6, None)),
            Err(ConstantsError::EtaMissing)
        );
        assert_eq!(
            derived_constants(&params(1000, 0.0, 1e-6, Some(0.5))),
            Err(ConstantsError::SelectionZero)
        );
        assert_eq!(
            derived_constants(&params(1000, 0.1, 0.0, Some(0.5))),
            Err(ConstantsError::MutationZero)
        );
    }

    #[test]
    fn no_mutation_never_establishes_higher_types() {
        let p = params(100, 0.1, 0.0, None);
        let mut rng = replicate_rng(1, 0);
        let (traj, _) =
            simulate_recorded(p, &[100], &StopCondition::at_time(10.0), &mut rng).unwrap();
        let log = detect_stopping_times(&traj, 0.5, 4);
        // T_0 = 0: the initial count 100 already exceeds ln(100)/0.1 ~ 46.
        assert_eq!(log.establishment[0], Some(0.0));
        for k in 1..=4 {
            assert_eq!(log.establishment[k], None);
        }
        // T_0' = 0 by convention; nothing above ever dies out here.
        assert_eq!(log.lower_extinction[0], Some(0.0));
        assert_eq!(log.lower_extinction[1], None);
    }

    #[test]
    fn hand_built_log_crosses_at_the_recorded_event() {
        // N = 20, s = 1: establishment threshold ln(20) ~ 2.9957, so the
        // third type-1 arrival (count 3) crosses it.
        let p = params(20, 1.0, 1e-3, None);
        let mut traj = Trajectory::new(p, vec![20]);
        let ev = |time, kind| Event { time, kind };
        traj.events = vec![
            ev(1.0, EventKind::Mutation { from: 0 }),
            ev(2.0, EventKind::Replacement { dying: 0, parent: 1 }),
            ev(3.0, EventKind::Replacement { dying: 0, parent: 1 }),
            ev(4.0, EventKind::Replacement { dying: 1, parent: 0 }),
            ev(5.0, EventKind::Mutation { from: 1 }),
        ];
        traj.final_time = 6.0;
        let log = detect_stopping_times(&traj, 0.5, 3);
        assert_eq!(log.establishment[1], Some(3.0));
        assert_eq!(log.establishment[0], Some(0.0));
        assert_eq!(log.establishment[2], None);
        // alpha = 0.5: threshold 10, never crossed by type 1.
        assert_eq!(log.alpha_crossing[1], None);
        assert_eq!(log.alpha_crossing[0], Some(0.0));
    }

    #[test]
    fn lower_extinction_cascades_through_already_empty_types() {
        // Start with every individual of type 2: types 0 and 1 are empty
        // from the outset, so their takeover times chain at 0.
        let p = params(10, 0.5, 0.0, None);
        let traj = Trajectory::new(p, vec![0, 0, 10]);
        let log = detect_stopping_times(&traj, 0.5, 3);
        assert_eq!(log.lower_extinction[0], Some(0.0));
        assert_eq!(log.lower_extinction[1], Some(0.0));
        assert_eq!(log.lower_extinction[2], Some(0.0));
        // Type 2 never dies out (no events at all), so T_3' stays unset.
        assert_eq!(log.lower_extinction[3], None);
    }

    #[test]
    fn lower_extinction_fires_when_the_last_low_individual_dies() {
        let p = params(3, 0.5, 0.0, None);
        let mut traj = Trajectory::new(p, vec![1, 2]);
        traj.events = vec![Event {
            time: 2.5,
            kind: EventKind::Replacement { dying: 0, parent: 1 },
        }];
        traj.final_time = 3.0;
        let log = detect_stopping_times(&traj, 0.5, 2);
        assert_eq!(log.lower_extinction[1], Some(2.5));
        assert_eq!(log.lower_extinction[2], None, "type 1 is still occupied");
    }

    #[test]
    fn online_and_offline_detection_agree_exactly() {
        let p = params(100, 0.3, 1e-3, Some(0.5));
        for rep in 0..5 {
            let stop = StopCondition::at_time(400.0).with_event_cap(2_000_000);
            // Offline: record the run, then detect on the trajectory.
            let mut rng = replicate_rng(12345, rep);
            let (traj, _) = simulate_recorded(p, &[100], &stop, &mut rng).unwrap();
            let offline = detect_stopping_times(&traj, 0.5, 6);
            // Online: same seed, detector riding the live run.
            let mut rng = replicate_rng(12345, rep);
            let mut engine = Engine::from_scratch(p);
            let mut online = StoppingTimeDetector::new(&p, 0.5, 6);
            online.observe_initial(engine.counts());
            engine.run_monitored(&stop, &mut online, &mut rng);
            assert_eq!(online.log(), &offline, "online/offline mismatch on replicate {rep}");
            // Establishment precedes the alpha crossing whenever both
            // exist (threshold ln(N)/s < alpha N here).
            for k in 0..=6 {
                if let (Some(te), Some(ta)) =
                    (offline.establishment[k], offline.alpha_crossing[k])
                {
                    assert!(te <= ta, "T_{k} = {te} after alpha crossing {ta}");
                }
            }
        }
    }

    #[test]
    fn mean_mutation_count_examples_and_per_event_steps() {
        let st = |counts: Vec<u32>| PopulationState::new(counts, 0.2);
        assert_eq!(mean_mutation_count(&st(vec![7])), 0.0);
        assert_eq!(mean_mutation_count(&st(vec![0, 0, 0, 5])), 3.0);
        assert_eq!(mean_mutation_count(&st(vec![0, 2, 2])), 1.5);

        // Across events: a mutation raises the mean by exactly 1/N, a
        // replacement i -> j moves it by (j - i)/N.
        let p = params(30, 0.2, 2e-3, None);
        let mut rng = replicate_rng(9, 9);
        let (traj, _) =
            simulate_recorded(p, &[30], &StopCondition::after_events(20_000), &mut rng).unwrap();
        let n = p.n_f64();
        let mut prev = mean_mutation_count(&PopulationState::new(traj.initial.clone(), p.s));
        traj.replay(|event, state| {
            let now = mean_mutation_count(state);
            let expected_step = match event.kind {
                EventKind::Mutation { .. } => 1.0 / n,
                EventKind::Replacement { dying, parent } => {
                    (f64::from(parent) - f64::from(dying)) / n
                }
            };
            assert!(
                math::abs(now - prev - expected_step) < 1e-12,
                "mean stepped by {} instead of {expected_step}",
                now - prev
            );
            prev = now;
        })
        .unwrap();
    }

    #[test]
    fn sweep_count_examples() {
        let mut log = StoppingTimeLog::with_capacity(0.5, 4);
        log.establishment[1] = Some(5.0);
        log.establishment[2] = Some(12.0);
        assert_eq!(sweep_count(&log, 12.0), 2);
        assert_eq!(sweep_count(&log, 11.9), 1);
        assert_eq!(sweep_count(&log, 4.9), 0);
        assert_eq!(sweep_count(&log, 0.0), 0);
    }

    #[test]
    fn width_profile_examples() {
        let p = params(10, 0.1, 0.0, None);
        // Monomorphic type 3.
        let mut traj = Trajectory::new(p, vec![0, 0, 0, 10]);
        traj.final_time = 2.0;
        assert_eq!(width_profile(&traj, &[0.0, 1.5]).unwrap(), vec![(3, 3), (3, 3)]);
        // Occupied types 2 and 4 only.
        let mut traj = Trajectory::new(p, vec![0, 0, 4, 0, 6]);
        traj.final_time = 1.0;
        assert_eq!(width_profile(&traj, &[0.5]).unwrap(), vec![(2, 4)]);
        // Between events the state is the one left by the earlier event.
        let mut traj = Trajectory::new(p, vec![9, 1]);
        traj.events = vec![
            Event { time: 1.0, kind: EventKind::Replacement { dying: 1, parent: 0 } },
            Event { time: 2.0, kind: EventKind::Mutation { from: 0 } },
        ];
        traj.final_time = 3.0;
        assert_eq!(
            width_profile(&traj, &[0.5, 1.0, 1.5, 2.5]).unwrap(),
            vec![(0, 1), (0, 0), (0, 0), (0, 1)]
        );
        // Past the end: rejected.
        assert!(width_profile(&traj, &[3.5]).is_err());
    }

    #[test]
    fn width_never_exceeds_distinct_occupied_types() {
        let p = params(60, 0.2, 5e-3, None);
        let mut rng = replicate_rng(21, 0);
        let (traj, _) =
            simulate_recorded(p, &[60], &StopCondition::after_events(50_000), &mut rng).unwrap();
        traj.replay(|_, state| {
            let occupied = state.counts.iter().filter(|&&c| c > 0).count();
            let lo = state.counts.iter().position(|&c| c > 0).unwrap();
            let hi = state.counts.iter().rposition(|&c| c > 0).unwrap();
            assert!(hi - lo + 1 >= occupied, "support interval misses occupied types");
        })
        .unwrap();
    }

    #[test]
    fn lambda_integral_piecewise_oracle() {
        // N = 2, s = 0, mu = 0.25. Type-2 death rate: 1 - X_2/2 + 0.25.
        // Segment [0,1): X_2 = 0 -> 1.25. A mutation 1 -> 2 at t = 1 makes
        // X_2 = 1 -> 0.75 on [1,2). Hand sums below.
        let p = params(2, 0.0, 0.25, None);
        let mut traj = Trajectory::new(p, vec![1, 1]);
        traj.events = vec![Event { time: 1.0, kind: EventKind::Mutation { from: 1 } }];
        traj.final_time = 3.0;
        assert_eq!(lambda_integral(&traj, 2, 0.0).unwrap(), 0.0);
        assert!(math::close(lambda_integral(&traj, 2, 1.0).unwrap(), 1.25, 1e-12));
        assert!(math::close(lambda_integral(&traj, 2, 2.0).unwrap(), 2.0, 1e-12));
        // Constant-rate segment beyond the last event: adds 0.75 per unit.
        assert!(math::close(lambda_integral(&traj, 2, 3.0).unwrap(), 2.75, 1e-12));
        // Beyond the trajectory: rejected.
        assert!(lambda_integral(&traj, 2, 3.1).is_err());
    }

    #[test]
    fn detector_stops_a_run_at_establishment() {
        let p = params(200, 0.5, 1e-4, None);
        let mut rng = replicate_rng(77, 1);
        let mut engine = Engine::from_scratch(p);
        let mut detector = StoppingTimeDetector::new(&p, 0.5, 3);
        detector.observe_initial(engine.counts());
        detector.stop_at_establishment = Some(1);
        let outcome = engine.run_monitored(
            &StopCondition::default().with_event_cap(50_000_000),
            &mut detector,
            &mut rng,
        );
        assert_eq!(outcome.reason, crate::engine::StopReason::Predicate);
        let t1 = detector.log().establishment[1].expect("run stopped at establishment");
        assert_eq!(t1, engine.time());
        assert!(f64::from(engine.count(1)) > math::ln(200.0) / 0.5);
    }

    #[test]
    fn mutation_counters_track_arrivals() {
        let p = params(50, 0.1, 0.01, Some(0.5));
        let mut rng = replicate_rng(88, 0);
        let mut engine = Engine::from_scratch(p);
        let mut detector = StoppingTimeDetector::new(&p, 0.5, 5);
        detector.observe_initial(engine.counts());
        let mut mutation_events = [0u64; 6];
        {
            let mut counter = ArrivalTally { counts: &mut mutation_events };
            engine.run_monitored(
                &StopCondition::after_events(30_000),
                &mut (&mut detector, &mut counter),
                &mut rng,
            );
        }
        assert!(mutation_events.iter().sum::<u64>() > 0, "run produced no mutations");
        for k in 1..=5 {
            assert_eq!(detector.mutation_count(k), mutation_events[k]);
        }
    }

    struct ArrivalTally<'a> {
        counts: &'a mut [u64; 6],
    }

    impl Monitor for ArrivalTally<'_> {
        fn after_event(&mut self, _engine: &Engine, event: &Event) -> bool {
            if let EventKind::Mutation { from } = event.kind {
                let to = from as usize + 1;
                if to < self.counts.len() {
                    self.counts[to] += 1;
                }
            }
            true
        }
    }
}
