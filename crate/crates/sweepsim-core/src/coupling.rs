//! Joint (same-randomness) constructions of bounding processes that run
//! alongside the population.
//!
//! Each construction pairs the exact population chain with a companion
//! process built from the *same* event stream — by tagging and thinning
//! the population's own events, plus auxiliary Poisson clocks layered on
//! top — so that a pathwise order between the two holds by construction.
//! Under the time change `λ_k(t) = ∫ d_k`, each companion becomes a plain
//! branching process whose law is known in closed form, which is what the
//! statistical checks in the companion crate verify.
//!
//! The four constructions:
//!
//! * [`couple_family_upper`] — dominates the type-`k` family founded by
//!   early immigrants from above, inflating births to `b̂_k = (1+s)^k d_k`
//!   and (for `k = 1`) immigration to a constant-in-`λ` rate.
//! * [`couple_establishment_lower`] — bounds type 1 from below through
//!   its establishment window by thinning births, deaths, and arrivals.
//! * [`couple_takeoff_lower`] — continues the lower bound from
//!   establishment to the `αN` crossing and measures its growth at a
//!   fixed `λ`-offset.
//! * [`couple_resident_upper`] — dominates the original type after the
//!   sweep takes over, giving a subcritical bound on its extinction time.
//!
//! Rate comparisons that provably hold for every population size are
//! `debug_assert`ed; comparisons guaranteed only asymptotically are
//! checked at run time and recorded as a [`Flag`] — a flagged run ends
//! immediately and is excluded from downstream statistics.

use alloc::vec::Vec;
use core::fmt;

use crate::engine::Engine;
use crate::math;
use crate::observe::{derived_constants, DerivedConstants, StoppingTimeDetector, StoppingTimeLog};
use crate::params::Parameters;
use crate::rng::{exponential, uniform, SimRng};
use crate::state::EventKind;

/// At most this many domination samples are retained per run; beyond it
/// the buffer thins itself to every 2nd, 4th, … event.
const SAMPLE_CAP: usize = 512;

// ── Configuration ──

/// Tuning constants for the coupled constructions, each in (0, 1).
///
/// * `alpha` — high-count fraction: windows end when type 1 exceeds
///   `alpha N`; the resident race uses `(1 - alpha/2) N`.
/// * `gamma` — growth discount of the lower bounds (birth rate
///   `(1 + gamma s) d_1` instead of the true `b_1 ≥ (1 + gamma s) d_1`).
/// * `zeta` — immigration discount of the lower bounds (`(1 - zeta) N mu`).
/// * `kappa` — drift margin: runs note when the death rate `d_k` leaves
///   `[1 - kappa, 1 + kappa]` inside the active window (diagnostic only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingTuning {
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub kappa: f64,
}

impl Default for CouplingTuning {
    fn default() -> Self {
        CouplingTuning { alpha: 0.5, gamma: 0.9, zeta: 0.05, kappa: 0.05 }
    }
}

impl CouplingTuning {
    fn validate(&self) {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("kappa", self.kappa),
        ] {
            assert!(v > 0.0 && v < 1.0, "{name} must lie in (0, 1), got {v}");
        }
    }
}

/// Resource limits for one coupled run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupleLimits {
    /// Hard time horizon (the run ends at exactly this time).
    pub horizon: Option<f64>,
    /// Cap on population events.
    pub main_event_cap: u64,
    /// Cap on the companion's value (guards supercritical growth).
    pub companion_value_cap: u64,
}

impl Default for CoupleLimits {
    fn default() -> Self {
        CoupleLimits { horizon: None, main_event_cap: 50_000_000, companion_value_cap: 5_000_000 }
    }
}

// ── Run records ──

/// One domination check: counts that must be ascending at time `time`.
/// Two-process couplings duplicate the upper count in the last slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomSample3 {
    pub time: f64,
    pub chain: [u64; 3],
}

impl DomSample3 {
    /// Whether the chain is correctly ordered (no violation).
    pub fn ordered(&self) -> bool {
        self.chain[0] <= self.chain[1] && self.chain[1] <= self.chain[2]
    }
}

/// Why a run was flagged and excluded: a rate comparison that the
/// constructions only guarantee for large populations failed here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlagReason {
    /// The inflated immigration bound fell below the true rate.
    ImmigrationDeficit { deficit: f64 },
    /// A thinning acceptance probability exceeded 1.
    ThinningOverflow { probability: f64 },
}

/// A precondition violation observed mid-run; the run stops there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flag {
    pub time: f64,
    pub reason: FlagReason,
}

/// How a coupled run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    /// The construction's natural endpoint was reached (window closed,
    /// growth measured, or the resident race decided).
    Goal,
    /// A precondition flag stopped the run.
    Flagged,
    /// The time horizon was reached first.
    Horizon,
    /// The population event cap was reached first.
    MainEventCap,
    /// The companion value cap was reached first.
    CompanionCap,
    /// The population reached a zero-rate state.
    Absorbed,
}

/// Growth measurement of the takeoff lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSample {
    /// Companion value at the window start (equals the type-1 family
    /// size there).
    pub initial: u64,
    /// Companion value when the `λ`-offset reached `lambda_target`
    /// (`None` if the run ended first).
    pub value: Option<u64>,
    /// The measurement offset `log(alpha N s) / (gamma s)` in `λ`-units.
    pub lambda_target: f64,
    /// Whether the window opened by establishment strictly before any
    /// interference from later types (the conditioning event of the
    /// growth prediction).
    pub conditioning_event: bool,
}

/// First-passage race of the dominated resident bound `W`: extinction
/// (`W = 0`) versus recovery above `(1 - alpha/2) N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionRace {
    pub extinct_at: Option<f64>,
    pub high_at: Option<f64>,
    pub high_threshold: f64,
}

/// Complete record of one coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    /// Which construction produced this run.
    pub construction: &'static str,
    pub params: Parameters,
    pub tuning: CouplingTuning,
    pub end: RunEnd,
    /// Population events consumed.
    pub main_events: u64,
    pub final_time: f64,
    /// When the domination window opened (`None` if it never did).
    pub window_open: Option<f64>,
    /// When it closed (`None` if still open at the end).
    pub window_close: Option<f64>,
    /// Domination checks performed (every event while the claim is active).
    pub events_checked: u64,
    /// Checks that failed. Any nonzero value on an unflagged run is a bug.
    pub violations: u64,
    pub first_violation: Option<DomSample3>,
    /// Thinned sample of the checks, for reports and re-verification.
    pub samples: Vec<DomSample3>,
    pub flag: Option<Flag>,
    /// Whether `d_k` left `[1 - kappa, 1 + kappa]` inside the window.
    pub rate_drift_exceeded: bool,
    /// Companion immigration times on the `λ` clock, ascending.
    pub immigrant_lambda_times: Vec<f64>,
    /// Final value of the construction's `λ` clock (measured from the
    /// window start for the takeoff and resident constructions, from 0
    /// otherwise). Rate checks divide event counts by this exposure —
    /// unlike a mean of completed gaps, that estimator carries no
    /// length bias from the censored last gap.
    pub lambda_final: f64,
    /// Companion birth events (used for the birth-fraction law checks).
    pub births: u64,
    /// Companion death events.
    pub deaths: u64,
    /// Takeoff construction only.
    pub growth: Option<GrowthSample>,
    /// Resident construction only.
    pub race: Option<ExtinctionRace>,
    /// Threshold-crossing log of the underlying population run.
    pub stopping: StoppingTimeLog,
}

impl CoupledRun {
    pub fn flagged(&self) -> bool {
        self.flag.is_some()
    }
}

impl fmt::Display for CoupledRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {:?} after {} events, t = {:.4}, checked {} violations {}{}",
            self.construction,
            self.end,
            self.main_events,
            self.final_time,
            self.events_checked,
            self.violations,
            if self.flagged() { " [flagged]" } else { "" },
        )
    }
}

// ── Aggregated report ──

/// Domination verdict over a batch of coupled runs. Live counters come
/// from the checks performed during the runs (unflagged runs only, since
/// flagged runs carry no domination claim); stored samples are re-checked
/// here independently.
#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    pub runs: usize,
    pub flagged_runs: usize,
    pub live_checked: u64,
    pub live_violations: u64,
    pub samples_rechecked: u64,
    pub sample_violations: u64,
    /// Run index and offending sample of the earliest violation found.
    pub first_violation: Option<(usize, DomSample3)>,
}

impl DominationReport {
    pub fn clean(&self) -> bool {
        self.live_violations == 0 && self.sample_violations == 0
    }
}

/// Summarize domination over a batch of runs from any construction.
pub fn domination_report(runs: &[CoupledRun]) -> DominationReport {
    let mut report = DominationReport {
        runs: runs.len(),
        flagged_runs: 0,
        live_checked: 0,
        live_violations: 0,
        samples_rechecked: 0,
        sample_violations: 0,
        first_violation: None,
    };
    for (index, run) in runs.iter().enumerate() {
        if run.flagged() {
            report.flagged_runs += 1;
            continue;
        }
        report.live_checked += run.events_checked;
        report.live_violations += run.violations;
        if report.first_violation.is_none() {
            if let Some(v) = run.first_violation {
                report.first_violation = Some((index, v));
            }
        }
        for sample in &run.samples {
            report.samples_rechecked += 1;
            if !sample.ordered() {
                report.sample_violations += 1;
                if report.first_violation.is_none() {
                    report.first_violation = Some((index, *sample));
                }
            }
        }
    }
    report
}

// ── Shared mechanics ──

/// Thinning sample buffer: keeps at most [`SAMPLE_CAP`] samples by
/// doubling its stride whenever it fills.
#[derive(Debug, Clone)]
struct SampleBuffer {
    samples: Vec<DomSample3>,
    stride: u64,
    since: u64,
}

impl SampleBuffer {
    fn new() -> Self {
        SampleBuffer { samples: Vec::new(), stride: 1, since: 0 }
    }

    fn push(&mut self, sample: DomSample3) {
        self.since += 1;
        if self.since < self.stride {
            return;
        }
        self.since = 0;
        self.samples.push(sample);
        if self.samples.len() >= SAMPLE_CAP {
            let mut index = 0usize;
            self.samples.retain(|_| {
                let keep = index % 2 == 0;
                index += 1;
                keep
            });
            self.stride *= 2;
        }
    }
}

/// Per-event domination bookkeeping.
#[derive(Debug, Clone)]
struct DomTracker {
    checked: u64,
    violations: u64,
    first: Option<DomSample3>,
    buffer: SampleBuffer,
}

impl DomTracker {
    fn new() -> Self {
        DomTracker { checked: 0, violations: 0, first: None, buffer: SampleBuffer::new() }
    }

    fn check(&mut self, time: f64, chain: [u64; 3]) {
        let sample = DomSample3 { time, chain };
        self.checked += 1;
        if !sample.ordered() {
            self.violations += 1;
            if self.first.is_none() {
                self.first = Some(sample);
            }
        }
        self.buffer.push(sample);
    }
}

/// Drive a companion's private clocks across one inter-event interval of
/// the population (length `dt`), during which the population's rates are
/// frozen. `rates` yields the three channel rates from the current
/// companion state and is re-evaluated after every companion event;
/// `fire` applies one event (channel, offset into the interval) and
/// returns `false` to end the run mid-interval. Returns the stopping
/// offset in that case.
fn drive_interval<S>(
    state: &mut S,
    dt: f64,
    rng: &mut SimRng,
    rates: impl Fn(&S) -> [f64; 3],
    mut fire: impl FnMut(&mut S, usize, f64, &mut SimRng) -> bool,
) -> Option<f64> {
    let mut elapsed = 0.0;
    loop {
        let r = rates(state);
        let total = r[0] + r[1] + r[2];
        if total <= 0.0 {
            return None;
        }
        let gap = exponential(rng, total);
        if elapsed + gap > dt {
            return None;
        }
        elapsed += gap;
        let channel = {
            let mut target = uniform(rng) * total;
            let mut fallback = 0;
            let mut picked = None;
            for (c, &rc) in r.iter().enumerate() {
                if rc > 0.0 {
                    fallback = c;
                    if picked.is_none() && target < rc {
                        picked = Some(c);
                    }
                    target -= rc;
                }
            }
            picked.unwrap_or(fallback)
        };
        if !fire(state, channel, elapsed, rng) {
            return Some(elapsed);
        }
    }
}

/// The sub-count of type-`k` individuals founded by arrivals admitted
/// during a tagging window. Births and deaths within the type are
/// attributed to a uniformly chosen current member — consistent with the
/// exchangeable genealogy, so only the count is stored.
#[derive(Debug, Clone)]
struct TaggedSubpopulation {
    k: u32,
    count: u64,
}

/// What a population event did to the tagged family.
enum TagDelta {
    Arrival,
    Birth,
    Death,
    Untouched,
}

impl TaggedSubpopulation {
    /// Individuals present at time 0 count as founders.
    fn new(k: u32, initial: u32) -> Self {
        TaggedSubpopulation { k, count: u64::from(initial) }
    }

    /// React to one population event. `x_k_pre` is the type-`k` count
    /// just before the event; `admit` states whether an arrival falls
    /// inside the tagging window (per the construction's convention).
    fn on_event(
        &mut self,
        kind: &EventKind,
        x_k_pre: u64,
        admit: bool,
        rng: &mut SimRng,
    ) -> TagDelta {
        match *kind {
            EventKind::Mutation { from } if from + 1 == self.k => {
                if admit {
                    self.count += 1;
                    TagDelta::Arrival
                } else {
                    TagDelta::Untouched
                }
            }
            EventKind::Mutation { from } if from == self.k => self.lose_member(x_k_pre, rng),
            EventKind::Replacement { parent, dying } => {
                if parent == self.k {
                    if self.owns_member(x_k_pre, rng) {
                        self.count += 1;
                        TagDelta::Birth
                    } else {
                        TagDelta::Untouched
                    }
                } else if dying == self.k {
                    self.lose_member(x_k_pre, rng)
                } else {
                    TagDelta::Untouched
                }
            }
            _ => TagDelta::Untouched,
        }
    }

    /// Whether a uniformly chosen type-`k` individual belongs to the
    /// family (probability `count / x_k_pre`).
    fn owns_member(&self, x_k_pre: u64, rng: &mut SimRng) -> bool {
        debug_assert!(x_k_pre >= self.count && x_k_pre >= 1);
        uniform(rng) * (x_k_pre as f64) < self.count as f64
    }

    fn lose_member(&mut self, x_k_pre: u64, rng: &mut SimRng) -> TagDelta {
        if self.owns_member(x_k_pre, rng) {
            self.count -= 1;
            TagDelta::Death
        } else {
            TagDelta::Untouched
        }
    }
}

/// What a population event means for a single type's count.
enum TypeEvent {
    /// Mutation arrival from the type below.
    Arrival,
    /// Replacement birth with a parent of this type.
    Birth,
    /// Replacement death of this type, or mutation out of it.
    Death,
    Unrelated,
}

fn classify(kind: &EventKind, k: u32) -> TypeEvent {
    match *kind {
        EventKind::Mutation { from } if from + 1 == k => TypeEvent::Arrival,
        EventKind::Mutation { from } if from == k => TypeEvent::Death,
        EventKind::Replacement { parent, .. } if parent == k => TypeEvent::Birth,
        EventKind::Replacement { dying, .. } if dying == k => TypeEvent::Death,
        _ => TypeEvent::Unrelated,
    }
}

/// Detector range: cover interference tracking (`delta + 1`) when the
/// derived constants exist, and always at least types `0..=max(k+1, 2)`.
fn k_max_for(consts: &Option<DerivedConstants>, k: usize) -> usize {
    let base = match consts {
        Some(c) => (c.delta as usize + 1).max(k + 1),
        None => k + 1,
    };
    base.max(2)
}

// ── Construction 1: dominating immigrant-family process ──

/// Couple the type-`k` immigrant family with its dominating process.
///
/// The family `X_{k,I}` collects type-`k` individuals founded during the
/// window `I` — `[0, T_1]` for `k = 1` (closed: the establishing arrival
/// is included), `[0, τ_k)` for `k ≥ 2` (open: the arrival that crosses
/// the mutation-count threshold is excluded). A surplus process `Ȳ ≥ 0`
/// starts at 0 and jumps up at rate `Ȳ b̂_k + X_{k,I} (b̂_k - b_k)` with
/// `b̂_k = (1+s)^k d_k`, down at rate `Ȳ d_k`, and (for `k = 1`, while
/// the window is open) immigrates at rate `m̂_1 - m_1` with
/// `m̂_1 = N mu d_1 / (1 - N^(eta-1) log N)`. The sum `Y = X_{k,I} + Ȳ`
/// then dominates the family pathwise, and on the `λ_k` clock `Y` is a
/// branching process with birth rate `(1+s)^k`, death rate 1, and (k = 1)
/// constant immigration — the immigration times on the `λ` clock are
/// recorded for that check. The run ends when the window closes.
///
/// `b̂_k ≥ b_k` holds for every population state (debug-asserted);
/// `m̂_1 ≥ m_1` is only guaranteed for large populations and is flagged
/// when violated.
pub fn couple_family_upper(
    params: Parameters,
    k: u32,
    tuning: CouplingTuning,
    limits: CoupleLimits,
    rng: &mut SimRng,
) -> CoupledRun {
    assert!(k >= 1, "the family coupling bounds mutant types (k >= 1)");
    tuning.validate();
    let consts = derived_constants(&params).ok();
    if k >= 2 {
        let c = consts
            .as_ref()
            .expect("the family window for k >= 2 needs eta, s > 0, and mu > 0");
        assert!(
            (k as usize) <= c.delta as usize + 1,
            "no mutation-count threshold exists above delta + 1"
        );
    } else {
        assert!(params.eta.is_some(), "the k = 1 immigration bound needs eta");
    }
    let n = params.n_f64();
    let ku = k as usize;
    let g_k = math::powi(1.0 + params.s, k as i32);
    // Inflation factor of the immigration bound (k = 1 only). May be
    // negative or huge for tiny populations; that surfaces as a flag.
    let c_n = params
        .eta
        .map(|eta| 1.0 / (1.0 - math::powf(n, eta - 1.0) * math::ln(n)))
        .unwrap_or(1.0);

    let mut engine = Engine::from_scratch(params);
    let mut detector = StoppingTimeDetector::new(&params, tuning.alpha, k_max_for(&consts, ku));
    detector.observe_initial(engine.counts());

    let mut tagged = TaggedSubpopulation::new(k, engine.count(ku));
    let mut bar: u64 = 0;
    let mut dom = DomTracker::new();
    let mut lambda = 0.0;
    let mut immigrants: Vec<f64> = Vec::new();
    let (mut births, mut deaths) = (0u64, 0u64);
    let mut drift = false;
    let mut flag: Option<Flag> = None;
    let end: RunEnd;
    let final_time: f64;

    // Window close per the conventions above.
    let closed_at = |det: &StoppingTimeDetector| -> Option<f64> {
        if k == 1 {
            det.log().establishment[1]
        } else {
            det.log().mutation_crossing[ku]
        }
    };

    loop {
        if closed_at(&detector).is_some() {
            end = RunEnd::Goal;
            final_time = engine.time();
            break;
        }
        if engine.events() >= limits.main_event_cap {
            end = RunEnd::MainEventCap;
            final_time = engine.time();
            break;
        }
        let Some(proposal) = engine.propose(rng) else {
            end = RunEnd::Absorbed;
            final_time = engine.time();
            break;
        };
        let t_start = engine.time();
        let mut dt = proposal.dt;
        let mut truncated = false;
        if let Some(h) = limits.horizon {
            if t_start + dt > h {
                dt = h - t_start;
                truncated = true;
            }
        }

        // Rates are frozen on the interval (population state unchanged).
        let tr = engine.per_type_rates(ku);
        let d_k = tr.death;
        let b_hat = g_k * d_k;
        debug_assert!(
            b_hat >= tr.birth * (1.0 - 1e-12),
            "inflated birth rate fell below the true one"
        );
        let surplus = (b_hat - tr.birth).max(0.0);
        let mut aug = 0.0;
        if k == 1 {
            let m_hat = c_n * n * params.mu * d_k;
            if m_hat < tr.immigration {
                flag = Some(Flag {
                    time: t_start,
                    reason: FlagReason::ImmigrationDeficit { deficit: tr.immigration - m_hat },
                });
                end = RunEnd::Flagged;
                final_time = t_start;
                break;
            }
            aug = m_hat - tr.immigration;
        }
        if math::abs(d_k - 1.0) > tuning.kappa {
            drift = true;
        }

        // Companion clocks inside the interval.
        let x_tagged = tagged.count;
        let lambda_before = lambda;
        let mut interval_end: Option<RunEnd> = None;
        let stopped = drive_interval(
            &mut bar,
            dt,
            rng,
            |bar| {
                let surplus_total = (x_tagged as f64) * surplus;
                let barf = *bar as f64;
                [barf * b_hat + surplus_total, barf * d_k, aug]
            },
            |bar, channel, offset, _rng| {
                match channel {
                    0 => {
                        *bar += 1;
                        births += 1;
                    }
                    1 => {
                        *bar -= 1;
                        deaths += 1;
                    }
                    _ => {
                        *bar += 1;
                        immigrants.push(lambda_before + d_k * offset);
                    }
                }
                let y = x_tagged + *bar;
                dom.check(t_start + offset, [x_tagged, y, y]);
                if y > limits.companion_value_cap {
                    interval_end = Some(RunEnd::CompanionCap);
                    return false;
                }
                true
            },
        );
        if let Some(offset) = stopped {
            lambda += d_k * offset;
            final_time = t_start + offset;
            end = interval_end.expect("mid-interval stop always sets a reason");
            break;
        }
        lambda += d_k * dt;
        if truncated {
            final_time = limits.horizon.expect("truncation implies a horizon");
            end = RunEnd::Horizon;
            break;
        }

        // Population event, then the family's reaction to it.
        let x_k_pre = u64::from(engine.count(ku));
        let event = engine.apply(&proposal);
        detector.observe(&event, |j| engine.count(j));
        // Closed window for k = 1: the arrival that establishes the type
        // is still admitted (the close time was unset before the event).
        // Open window for k >= 2: the arrival that crosses the threshold
        // is already outside, so admission looks at the post-event state.
        let admit = if k == 1 { true } else { closed_at(&detector).is_none() };
        match tagged.on_event(&event.kind, x_k_pre, admit, rng) {
            TagDelta::Arrival => immigrants.push(lambda),
            TagDelta::Birth => births += 1,
            TagDelta::Death => deaths += 1,
            TagDelta::Untouched => {}
        }
        // While the window admits every arrival, the family IS the type.
        debug_assert!(
            closed_at(&detector).is_some() || tagged.count == u64::from(engine.count(ku)),
            "tagged family diverged from the full type count inside the window"
        );
        let y = tagged.count + bar;
        dom.check(event.time, [tagged.count, y, y]);
    }

    let window_close = closed_at(&detector);
    CoupledRun {
        construction: "family-upper",
        params,
        tuning,
        end,
        main_events: engine.events(),
        final_time,
        window_open: Some(0.0),
        window_close,
        events_checked: dom.checked,
        violations: dom.violations,
        first_violation: dom.first,
        samples: dom.buffer.samples,
        flag,
        rate_drift_exceeded: drift,
        immigrant_lambda_times: immigrants,
        lambda_final: lambda,
        births,
        deaths,
        growth: None,
        race: None,
        stopping: detector.into_log(),
    }
}

// ── Construction 2: thinned lower bound through establishment ──

/// Couple type 1 with a thinned lower bound `Z ≤ X_1` through its
/// establishment window.
///
/// On the window `(0, T_1 ∧ T_int]` (closed at the right, where `T_int`
/// is the first interference from later types) each type-1 event of the
/// population is copied into `Z` with a thinning probability evaluated
/// just before the event: births with `(1 + γs) Z d_1 / (X_1 b_1)`,
/// deaths with `Z / X_1`, and mutation arrivals with
/// `(1 - ζ) N d_1 / X_0`. A probability above 1 flags the run (the rate
/// comparisons behind the construction hold only for large populations).
/// After the window `Z` runs autonomously with rates
/// `((1+γs) Z d_1, Z d_1, (1-ζ) N mu d_1)` until type 1 crosses `αN`.
///
/// On the `λ_1` clock `Z` is a branching process with birth rate
/// `1 + γs`, death rate 1, and immigration `(1 - ζ) N mu` — immigration
/// times on that clock are recorded, and birth/death tallies feed the
/// birth-fraction check `(1+γs)/(2+γs)`.
pub fn couple_establishment_lower(
    params: Parameters,
    tuning: CouplingTuning,
    limits: CoupleLimits,
    rng: &mut SimRng,
) -> CoupledRun {
    tuning.validate();
    let n = params.n_f64();
    let gs = tuning.gamma * params.s;
    let consts = derived_constants(&params).ok();
    let mut engine = Engine::from_scratch(params);
    let mut detector = StoppingTimeDetector::new(&params, tuning.alpha, k_max_for(&consts, 1));
    detector.observe_initial(engine.counts());

    let mut z: u64 = u64::from(engine.count(1));
    let mut dom = DomTracker::new();
    let mut lambda = 0.0;
    let mut immigrants: Vec<f64> = Vec::new();
    let (mut births, mut deaths) = (0u64, 0u64);
    let mut drift = false;
    let mut flag: Option<Flag> = None;
    let end: RunEnd;
    let final_time: f64;
    let mut window_close: Option<f64> = None;

    loop {
        if let Some(t) = detector.log().alpha_crossing[1] {
            end = RunEnd::Goal;
            final_time = t.max(engine.time());
            break;
        }
        if engine.events() >= limits.main_event_cap {
            end = RunEnd::MainEventCap;
            final_time = engine.time();
            break;
        }
        let Some(proposal) = engine.propose(rng) else {
            end = RunEnd::Absorbed;
            final_time = engine.time();
            break;
        };
        let t_start = engine.time();
        let mut dt = proposal.dt;
        let mut truncated = false;
        if let Some(h) = limits.horizon {
            if t_start + dt > h {
                dt = h - t_start;
                truncated = true;
            }
        }

        let tr = engine.per_type_rates(1);
        let d1 = tr.death;
        let b1 = tr.birth;
        let in_window = detector.log().establishment[1].is_none()
            && detector.interference_time().is_none();
        if in_window && math::abs(d1 - 1.0) > tuning.kappa {
            drift = true;
        }
        let lambda_before = lambda;

        if !in_window {
            // Autonomous phase: private clocks between population events.
            let imm_rate = (1.0 - tuning.zeta) * n * params.mu * d1;
            let mut interval_end: Option<RunEnd> = None;
            let stopped = drive_interval(
                &mut z,
                dt,
                rng,
                |z| {
                    let zf = *z as f64;
                    [(1.0 + gs) * zf * d1, zf * d1, imm_rate]
                },
                |z, channel, offset, _rng| {
                    match channel {
                        0 => {
                            *z += 1;
                            births += 1;
                        }
                        1 => {
                            *z -= 1;
                            deaths += 1;
                        }
                        _ => {
                            *z += 1;
                            immigrants.push(lambda_before + d1 * offset);
                        }
                    }
                    if *z > limits.companion_value_cap {
                        interval_end = Some(RunEnd::CompanionCap);
                        return false;
                    }
                    true
                },
            );
            if let Some(offset) = stopped {
                lambda += d1 * offset;
                final_time = t_start + offset;
                end = interval_end.expect("mid-interval stop always sets a reason");
                break;
            }
        }
        lambda += d1 * dt;
        if truncated {
            final_time = limits.horizon.expect("truncation implies a horizon");
            end = RunEnd::Horizon;
            break;
        }

        let x1_pre = u64::from(engine.count(1));
        let x0_pre = u64::from(engine.count(0));
        let event = engine.apply(&proposal);
        detector.observe(&event, |j| engine.count(j));

        if in_window {
            // Thinning phase: the window is closed at the right, so the
            // event that ends it is still thinned.
            match classify(&event.kind, 1) {
                TypeEvent::Birth => {
                    let p = (1.0 + gs) * (z as f64) * d1 / ((x1_pre as f64) * b1);
                    if p > 1.0 {
                        flag = Some(Flag {
                            time: event.time,
                            reason: FlagReason::ThinningOverflow { probability: p },
                        });
                        end = RunEnd::Flagged;
                        final_time = event.time;
                        break;
                    }
                    if uniform(rng) < p {
                        z += 1;
                        births += 1;
                    }
                }
                TypeEvent::Death => {
                    // Probability z / x1_pre, structurally at most 1.
                    if uniform(rng) * (x1_pre as f64) < z as f64 {
                        z -= 1;
                        deaths += 1;
                    }
                }
                TypeEvent::Arrival => {
                    let p = (1.0 - tuning.zeta) * n * d1 / (x0_pre as f64);
                    if p > 1.0 {
                        flag = Some(Flag {
                            time: event.time,
                            reason: FlagReason::ThinningOverflow { probability: p },
                        });
                        end = RunEnd::Flagged;
                        final_time = event.time;
                        break;
                    }
                    if uniform(rng) < p {
                        z += 1;
                        immigrants.push(lambda);
                    }
                }
                TypeEvent::Unrelated => {}
            }
            let x1_now = u64::from(engine.count(1));
            dom.check(event.time, [z, x1_now, x1_now]);
            let closed_now = detector.log().establishment[1].is_some()
                || detector.interference_time().is_some();
            if closed_now && window_close.is_none() {
                window_close = Some(event.time);
            }
        }
    }

    CoupledRun {
        construction: "establishment-lower",
        params,
        tuning,
        end,
        main_events: engine.events(),
        final_time,
        window_open: Some(0.0),
        window_close,
        events_checked: dom.checked,
        violations: dom.violations,
        first_violation: dom.first,
        samples: dom.buffer.samples,
        flag,
        rate_drift_exceeded: drift,
        immigrant_lambda_times: immigrants,
        lambda_final: lambda,
        births,
        deaths,
        growth: None,
        race: None,
        stopping: detector.into_log(),
    }
}

// ── Construction 3: takeoff continuation of the lower bound ──

/// Couple the established type-1 family with a thinned lower bound from
/// establishment to the `αN` crossing, and measure the bound's growth.
///
/// The family `X^(1)` is the type-1 subpopulation founded by arrivals in
/// `[0, T_1 ∧ T_int]` (tag window closed at the right). At the window
/// start the companion is set equal to the family; on
/// `(T_1 ∧ T_int, T_{1,α} ∧ T_int]` family births are copied with
/// probability `(1 + γs) Z d_1 / (X^(1) b_1)` and family deaths with
/// `Z / X^(1)`, giving `Z ≤ X^(1) ≤ X_1` pathwise. Afterwards `Z` runs
/// autonomously with rates `((1+γs) Z d_1, Z d_1)` and no immigration.
///
/// On the `λ_1` clock offset from the window start, `Z` is a branching
/// process with birth rate `1 + γs` and death rate 1; its value is
/// recorded when the offset reaches `t_0 = log(αNs)/(γs)`, where its
/// conditional mean is `initial · αNs` given that establishment came
/// strictly before interference.
pub fn couple_takeoff_lower(
    params: Parameters,
    tuning: CouplingTuning,
    limits: CoupleLimits,
    rng: &mut SimRng,
) -> CoupledRun {
    tuning.validate();
    assert!(params.s > 0.0, "takeoff growth needs s > 0");
    let n = params.n_f64();
    let gs = tuning.gamma * params.s;
    let alpha_ns = tuning.alpha * n * params.s;
    assert!(alpha_ns > 1.0, "growth target needs alpha N s > 1");
    let lambda_target = math::ln(alpha_ns) / gs;

    let consts = derived_constants(&params).ok();
    let mut engine = Engine::from_scratch(params);
    let mut detector = StoppingTimeDetector::new(&params, tuning.alpha, k_max_for(&consts, 1));
    detector.observe_initial(engine.counts());

    let mut tagged = TaggedSubpopulation::new(1, engine.count(1));
    let mut z: Option<u64> = None;
    let mut z_initial: u64 = 0;
    let mut growth_value: Option<u64> = None;
    let mut conditioning = false;
    let mut window_open: Option<f64> = None;
    let mut window_close: Option<f64> = None;
    let mut lambda_offset = 0.0;
    let mut dom = DomTracker::new();
    let (mut births, mut deaths) = (0u64, 0u64);
    let mut drift = false;
    let mut flag: Option<Flag> = None;
    let end: RunEnd;
    let final_time: f64;

    loop {
        if engine.events() >= limits.main_event_cap {
            end = RunEnd::MainEventCap;
            final_time = engine.time();
            break;
        }
        let Some(proposal) = engine.propose(rng) else {
            end = RunEnd::Absorbed;
            final_time = engine.time();
            break;
        };
        let t_start = engine.time();
        let mut dt = proposal.dt;
        let mut truncated = false;
        if let Some(h) = limits.horizon {
            if t_start + dt > h {
                dt = h - t_start;
                truncated = true;
            }
        }

        let tr = engine.per_type_rates(1);
        let d1 = tr.death;
        let b1 = tr.birth;
        let started = z.is_some();
        let thin_closed = detector.log().alpha_crossing[1].is_some()
            || detector.interference_time().is_some();
        if started && !thin_closed && math::abs(d1 - 1.0) > tuning.kappa {
            drift = true;
        }
        let lambda_off_before = lambda_offset;

        if started && thin_closed && growth_value.is_none() {
            // Autonomous phase; watch for the λ-offset target inside the
            // interval (the value just before the crossing is recorded).
            let zz = z.as_mut().expect("started implies a companion value");
            let mut interval_end: Option<RunEnd> = None;
            let stopped = drive_interval(
                zz,
                dt,
                rng,
                |z| {
                    let zf = *z as f64;
                    [(1.0 + gs) * zf * d1, zf * d1, 0.0]
                },
                |z, channel, offset, _rng| {
                    if lambda_off_before + d1 * offset >= lambda_target {
                        growth_value = Some(*z);
                        interval_end = Some(RunEnd::Goal);
                        return false;
                    }
                    match channel {
                        0 => {
                            *z += 1;
                            births += 1;
                        }
                        _ => {
                            *z -= 1;
                            deaths += 1;
                        }
                    }
                    if *z > limits.companion_value_cap {
                        interval_end = Some(RunEnd::CompanionCap);
                        return false;
                    }
                    true
                },
            );
            if let Some(offset) = stopped {
                lambda_offset += d1 * offset;
                final_time = t_start + offset;
                end = interval_end.expect("mid-interval stop always sets a reason");
                break;
            }
        }
        if started {
            lambda_offset += d1 * dt;
            if growth_value.is_none() && lambda_offset >= lambda_target {
                // Crossed between events: the companion was constant here.
                growth_value = Some(z.expect("started implies a companion value"));
                end = RunEnd::Goal;
                final_time = t_start + (lambda_target - lambda_off_before) / d1;
                break;
            }
        }
        if truncated {
            final_time = limits.horizon.expect("truncation implies a horizon");
            end = RunEnd::Horizon;
            break;
        }

        let x1_pre = u64::from(engine.count(1));
        let x_tagged_pre = tagged.count;
        // Tag window [0, T_1 ∧ T_int] is closed at the right: arrivals
        // are admitted while the window start is still unset pre-event.
        let admit = z.is_none();
        let event = engine.apply(&proposal);
        detector.observe(&event, |j| engine.count(j));
        let delta = tagged.on_event(&event.kind, x1_pre, admit, rng);

        if started && !thin_closed {
            // Thinning phase (window closed at the right: the event that
            // ends it is still thinned).
            let zv = z.as_mut().expect("started implies a companion value");
            match delta {
                TagDelta::Birth => {
                    let p = (1.0 + gs) * (*zv as f64) * d1 / ((x_tagged_pre as f64) * b1);
                    if p > 1.0 {
                        flag = Some(Flag {
                            time: event.time,
                            reason: FlagReason::ThinningOverflow { probability: p },
                        });
                        end = RunEnd::Flagged;
                        final_time = event.time;
                        break;
                    }
                    if uniform(rng) < p {
                        *zv += 1;
                        births += 1;
                    }
                }
                TagDelta::Death => {
                    if uniform(rng) * (x_tagged_pre as f64) < *zv as f64 {
                        *zv -= 1;
                        deaths += 1;
                    }
                }
                TagDelta::Arrival | TagDelta::Untouched => {}
            }
            let x1_now = u64::from(engine.count(1));
            dom.check(event.time, [*zv, tagged.count, x1_now]);
            let closed_now = detector.log().alpha_crossing[1].is_some()
                || detector.interference_time().is_some();
            if closed_now && window_close.is_none() {
                window_close = Some(event.time);
            }
        } else if z.is_none() {
            // Window start: establishment or interference, post-event.
            let established = detector.log().establishment[1].is_some();
            let interfered = detector.interference_time().is_some();
            if established || interfered {
                z = Some(tagged.count);
                z_initial = tagged.count;
                window_open = Some(event.time);
                conditioning = established && !interfered;
                // The tag window covered everything so far, so the family
                // is the whole type at the start.
                debug_assert_eq!(tagged.count, u64::from(engine.count(1)));
            }
        }
    }

    CoupledRun {
        construction: "takeoff-lower",
        params,
        tuning,
        end,
        main_events: engine.events(),
        final_time,
        window_open,
        window_close,
        events_checked: dom.checked,
        violations: dom.violations,
        first_violation: dom.first,
        samples: dom.buffer.samples,
        flag,
        rate_drift_exceeded: drift,
        immigrant_lambda_times: Vec::new(),
        lambda_final: lambda_offset,
        births,
        deaths,
        growth: window_open.map(|_| GrowthSample {
            initial: z_initial,
            value: growth_value,
            lambda_target,
            conditioning_event: conditioning,
        }),
        race: None,
        stopping: detector.into_log(),
    }
}

// ── Construction 4: dominating resident process ──

/// Couple the original type with a dominating process after the sweep
/// takes over.
///
/// The window opens at `T_{1,α} ∧ T_1'` with a surplus `W̄ = 0`; it jumps
/// up at rate `W̄ b̂_0 + X_0 (b̂_0 - b_0)` with `b̂_0 = d_0 / (1+s)`, and
/// down at rate `W̄ d_0`. Then `W = X_0 + W̄ ≥ X_0` pathwise, and on the
/// `λ_0` clock `W` is a subcritical branching process with birth rate
/// `1/(1+s)` and death rate 1 (`b̂_0 ≥ b_0` holds for every state, so no
/// flags arise). The run records which comes first: extinction of `W` or
/// `W` exceeding `(1 - α/2) N`, and ends there.
pub fn couple_resident_upper(
    params: Parameters,
    tuning: CouplingTuning,
    limits: CoupleLimits,
    rng: &mut SimRng,
) -> CoupledRun {
    tuning.validate();
    let n = params.n_f64();
    let high_threshold = (1.0 - tuning.alpha / 2.0) * n;
    let consts = derived_constants(&params).ok();
    let mut engine = Engine::from_scratch(params);
    let mut detector = StoppingTimeDetector::new(&params, tuning.alpha, k_max_for(&consts, 1));
    detector.observe_initial(engine.counts());

    let mut w_bar: u64 = 0;
    let mut opened: Option<f64> = None;
    let mut race =
        ExtinctionRace { extinct_at: None, high_at: None, high_threshold };
    let mut dom = DomTracker::new();
    let (mut births, mut deaths) = (0u64, 0u64);
    let mut drift = false;
    // λ_0 clock, measured from the window open.
    let mut lambda = 0.0;
    let end: RunEnd;
    let final_time: f64;

    // The window can open at time 0 (a non-standard initial composition
    // may already satisfy either opening condition).
    if detector.log().alpha_crossing[1].is_some() || detector.log().lower_extinction[1].is_some()
    {
        opened = Some(0.0);
        let x0 = u64::from(engine.count(0));
        if x0 == 0 {
            race.extinct_at = Some(0.0);
        } else if x0 as f64 > high_threshold {
            race.high_at = Some(0.0);
        }
    }

    loop {
        if race.extinct_at.is_some() || race.high_at.is_some() {
            // Only the decided-at-time-zero case reaches this check; every
            // later decision breaks at its own event.
            end = RunEnd::Goal;
            final_time = race.extinct_at.or(race.high_at).expect("a decided race has a time");
            break;
        }
        if engine.events() >= limits.main_event_cap {
            end = RunEnd::MainEventCap;
            final_time = engine.time();
            break;
        }
        let Some(proposal) = engine.propose(rng) else {
            end = RunEnd::Absorbed;
            final_time = engine.time();
            break;
        };
        let t_start = engine.time();
        let mut dt = proposal.dt;
        let mut truncated = false;
        if let Some(h) = limits.horizon {
            if t_start + dt > h {
                dt = h - t_start;
                truncated = true;
            }
        }

        let tr = engine.per_type_rates(0);
        let d0 = tr.death;
        let b0 = tr.birth;
        let b_hat = d0 / (1.0 + params.s);
        debug_assert!(
            b_hat >= b0 * (1.0 - 1e-12),
            "inflated resident birth rate fell below the true one"
        );

        if opened.is_some() {
            if math::abs(d0 - 1.0) > tuning.kappa {
                drift = true;
            }
            let surplus = (b_hat - b0).max(0.0);
            let x0 = u64::from(engine.count(0));
            let mut interval_end: Option<RunEnd> = None;
            let stopped = drive_interval(
                &mut w_bar,
                dt,
                rng,
                |w| {
                    let wf = *w as f64;
                    [wf * b_hat + (x0 as f64) * surplus, wf * d0, 0.0]
                },
                |w, channel, offset, _rng| {
                    let t = t_start + offset;
                    match channel {
                        0 => {
                            *w += 1;
                            births += 1;
                        }
                        _ => {
                            *w -= 1;
                            deaths += 1;
                        }
                    }
                    let w0 = x0 + *w;
                    dom.check(t, [x0, w0, w0]);
                    if w0 == 0 {
                        race.extinct_at = Some(t);
                        interval_end = Some(RunEnd::Goal);
                        return false;
                    }
                    if w0 as f64 > high_threshold {
                        race.high_at = Some(t);
                        interval_end = Some(RunEnd::Goal);
                        return false;
                    }
                    if w0 > limits.companion_value_cap {
                        interval_end = Some(RunEnd::CompanionCap);
                        return false;
                    }
                    true
                },
            );
            if let Some(offset) = stopped {
                lambda += d0 * offset;
                final_time = t_start + offset;
                end = interval_end.expect("mid-interval stop always sets a reason");
                break;
            }
            lambda += d0 * dt;
        }
        if truncated {
            final_time = limits.horizon.expect("truncation implies a horizon");
            end = RunEnd::Horizon;
            break;
        }

        let event = engine.apply(&proposal);
        detector.observe(&event, |j| engine.count(j));

        if opened.is_some() {
            match classify(&event.kind, 0) {
                TypeEvent::Birth => births += 1,
                TypeEvent::Death => deaths += 1,
                TypeEvent::Arrival | TypeEvent::Unrelated => {}
            }
            let x0 = u64::from(engine.count(0));
            let w0 = x0 + w_bar;
            dom.check(event.time, [x0, w0, w0]);
            if w0 == 0 {
                race.extinct_at = Some(event.time);
                end = RunEnd::Goal;
                final_time = event.time;
                break;
            }
            if w0 as f64 > high_threshold {
                race.high_at = Some(event.time);
                end = RunEnd::Goal;
                final_time = event.time;
                break;
            }
        } else if detector.log().alpha_crossing[1].is_some()
            || detector.log().lower_extinction[1].is_some()
        {
            opened = Some(event.time);
            w_bar = 0;
            let x0 = u64::from(engine.count(0));
            if x0 == 0 {
                race.extinct_at = Some(event.time);
                end = RunEnd::Goal;
                final_time = event.time;
                break;
            }
            if x0 as f64 > high_threshold {
                race.high_at = Some(event.time);
                end = RunEnd::Goal;
                final_time = event.time;
                break;
            }
        }
    }

    CoupledRun {
        construction: "resident-upper",
        params,
        tuning,
        end,
        main_events: engine.events(),
        final_time,
        window_open: opened,
        window_close: race.extinct_at.or(race.high_at),
        events_checked: dom.checked,
        violations: dom.violations,
        first_violation: dom.first,
        samples: dom.buffer.samples,
        flag: None,
        rate_drift_exceeded: drift,
        immigrant_lambda_times: Vec::new(),
        lambda_final: lambda,
        births,
        deaths,
        growth: None,
        race: Some(race),
        stopping: detector.into_log(),
    }
}
