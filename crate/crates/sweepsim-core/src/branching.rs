//! Birth-death branching processes with immigration: closed forms and
//! exact simulators.
//!
//! These processes bound the population simulator's type counts from
//! above and below (see [`crate::coupling`]), and their closed-form laws
//! serve as analytical oracles for the statistical test suites:
//!
//! * survival and fixation probabilities,
//! * the expected lifetime integral of a process conditioned to die out,
//! * the finite/infinite line-of-descent decomposition, under which the
//!   individuals with surviving progeny form a pure-birth (Yule) process,
//! * mean and variance at fixed times from the offspring generating
//!   function,
//! * the geometric law of a Yule-process count at a fixed time.

use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use crate::math;
use crate::rng;

/// Default per-path event cap for the simulators: paths that exceed it
/// are reported as undecided and must be excluded (and counted) by
/// statistics that condition on an outcome.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

// ── Specs ──

/// A binary-fission birth-death process with Poisson immigration: each
/// individual splits at rate `birth` and dies at rate `death`; new
/// individuals immigrate at rate `immigration` (0 for none).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingSpec {
    pub birth: f64,
    pub death: f64,
    pub immigration: f64,
    pub initial: u64,
}

/// Invalid rate passed to a spec constructor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeRate;

impl fmt::Display for NegativeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "branching-process rates must be finite and >= 0")
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NegativeRate {}

impl BranchingSpec {
    pub fn new(birth: f64, death: f64, immigration: f64, initial: u64) -> Result<Self, NegativeRate> {
        let ok = |r: f64| r.is_finite() && r >= 0.0;
        if ok(birth) && ok(death) && ok(immigration) {
            Ok(BranchingSpec { birth, death, immigration, initial })
        } else {
            Err(NegativeRate)
        }
    }

    /// Single ancestor, no immigration.
    pub fn lineage(birth: f64, death: f64) -> Self {
        BranchingSpec::new(birth, death, 0.0, 1).expect("rates checked by caller")
    }
}

// ── Closed forms ──

/// Probability that a single beneficial mutant (fitness `1+s` against a
/// resident population of fitness 1, total size `n`) takes over rather
/// than dying out: `s / ((1+s)(1 - (1+s)^{-n}))`, with the neutral limit
/// `1/n` at `s = 0`.
///
/// The count of mutants is a birth-death chain whose down/up rate ratio
/// is `1/(1+s)` in every state, so this is a gambler's-ruin evaluation.
pub fn fixation_probability(n: u32, s: f64) -> f64 {
    assert!(n >= 1, "population size must be at least 1");
    assert!(s.is_finite() && s >= 0.0, "selective advantage must be finite and >= 0");
    if s == 0.0 {
        return 1.0 / f64::from(n);
    }
    // 1 - (1+s)^{-n} = -expm1(-n ln(1+s)), stable for small s*n.
    let denom = -math::exp_m1(-f64::from(n) * math::ln_1p(s));
    s / ((1.0 + s) * denom)
}

/// Probability that a lineage (single ancestor, no immigration) survives
/// forever: `max(0, 1 - death/birth)`. Critical and subcritical lineages
/// return 0.
pub fn survival_probability(spec: &BranchingSpec) -> f64 {
    assert!(spec.immigration == 0.0, "survival is a single-lineage question; no immigration");
    assert!(spec.initial == 1, "survival is defined for a single ancestor");
    if spec.birth <= 0.0 {
        return 0.0;
    }
    (1.0 - spec.death / spec.birth).max(0.0)
}

/// Expected lifetime integral `E[∫ Y(t) dt]` of a lineage with birth rate
/// `(1+s)^k` and death rate 1, conditioned to die out: `1/((1+s)^k - 1)`.
/// Checked against the elementary bound `1/(s k)`.
pub fn conditioned_total_progeny(k: u32, s: f64) -> f64 {
    assert!(k >= 1, "type index must be at least 1");
    assert!(s > 0.0 && s.is_finite(), "requires a positive selective advantage");
    let value = 1.0 / math::exp_m1(f64::from(k) * math::ln_1p(s));
    let bound = 1.0 / (s * f64::from(k));
    assert!(
        value <= bound * (1.0 + 1e-12),
        "conditioned progeny {value} exceeds its bound {bound}"
    );
    value
}

// ── Finite/infinite line-of-descent decomposition ──

/// A supercritical lineage split by whether each individual's progeny
/// eventually dies out (finite line) or survives forever (infinite line).
///
/// For a parent process with birth rate `b` and death rate `d < b`, the
/// extinction probability is `q = d/b`, and the two-variable offspring
/// generating functions yield:
///
/// * finite-line individuals branch as a birth-death process with the
///   rates *swapped*: birth `b q = d`, death `d / q = b`;
/// * infinite-line individuals split into two infinite lines at rate
///   `b(1 - q) = b - d` (a Yule process), and additionally emit a
///   finite-line child at rate `2 b q = 2 d` (the cross term of the
///   generating function), which does not change the infinite count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTypeSpec {
    /// Birth rate of a finite-line individual (`= d` of the parent).
    pub finite_birth: f64,
    /// Death rate of a finite-line individual (`= b` of the parent).
    pub finite_death: f64,
    /// Rate at which an infinite-line individual splits into two
    /// infinite-line individuals (`= b - d`).
    pub infinite_branch: f64,
    /// Rate at which an infinite-line individual emits one finite-line
    /// child (`= 2 d`).
    pub infinite_finite_spawn: f64,
    /// Extinction probability of the parent lineage (`= d/b`).
    pub q: f64,
}

/// Decompose the lineage with birth rate `1+s` and death rate 1.
pub fn two_type_decomposition(s: f64) -> TwoTypeSpec {
    assert!(s > 0.0 && s.is_finite(), "decomposition needs a supercritical lineage");
    decompose(1.0 + s, 1.0)
}

fn decompose(birth: f64, death: f64) -> TwoTypeSpec {
    debug_assert!(birth > death, "decomposition requires supercriticality");
    let q = death / birth;
    TwoTypeSpec {
        finite_birth: birth * q * q / q,
        finite_death: death / q,
        infinite_branch: birth * (1.0 - q),
        infinite_finite_spawn: 2.0 * birth * q,
        q,
    }
}

// ── Moments from the offspring generating function ──

/// A branching process described by its event rate `b` (the inverse mean
/// lifetime of an individual) and offspring distribution `p_k`: at the end
/// of its life an individual is replaced by `k` children with probability
/// `p_k`. The mean growth rate is `lambda = b (Σ k p_k - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingFunctionSpec {
    pub event_rate: f64,
    pub offspring: Vec<f64>,
}

/// Invalid offspring distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenSpecError {
    RateInvalid,
    ProbabilitiesInvalid,
}

impl fmt::Display for GenSpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenSpecError::RateInvalid => write!(f, "event rate must be finite and >= 0"),
            GenSpecError::ProbabilitiesInvalid => {
                write!(f, "offspring probabilities must be >= 0 and sum to 1")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GenSpecError {}

impl GeneratingFunctionSpec {
    pub fn new(event_rate: f64, offspring: Vec<f64>) -> Result<Self, GenSpecError> {
        if !event_rate.is_finite() || event_rate < 0.0 {
            return Err(GenSpecError::RateInvalid);
        }
        let sum: f64 = offspring.iter().sum();
        if offspring.iter().any(|&p| !(0.0..=1.0).contains(&p)) || math::abs(sum - 1.0) > 1e-9 {
            return Err(GenSpecError::ProbabilitiesInvalid);
        }
        Ok(GeneratingFunctionSpec { event_rate, offspring })
    }

    /// Binary fission with the given birth and death rates: event rate
    /// `birth + death`, offspring 0 or 2.
    pub fn binary_fission(birth: f64, death: f64) -> Self {
        let total = birth + death;
        assert!(total > 0.0, "at least one of birth/death must be positive");
        GeneratingFunctionSpec::new(
            total,
            alloc::vec![death / total, 0.0, birth / total],
        )
        .expect("fission probabilities are a distribution by construction")
    }

    /// Mean growth rate `lambda = b (f'(1) - 1)`.
    pub fn lambda(&self) -> f64 {
        let mean_offspring: f64 =
            self.offspring.iter().enumerate().map(|(k, &p)| k as f64 * p).sum();
        self.event_rate * (mean_offspring - 1.0)
    }

    /// Second factorial-moment term `u''(1) = b f''(1) = b Σ k(k-1) p_k`.
    pub fn u_double_prime_one(&self) -> f64 {
        let f2: f64 = self
            .offspring
            .iter()
            .enumerate()
            .map(|(k, &p)| (k * k.saturating_sub(1)) as f64 * p)
            .sum();
        self.event_rate * f2
    }
}

/// Mean and variance of the count at time `t`, started from one individual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// The variance formula divides by `lambda`; critical processes are
/// rejected rather than given a removable-singularity special case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticalProcess;

impl fmt::Display for CriticalProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "variance formula requires lambda != 0 (non-critical process)")
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CriticalProcess {}

/// Closed-form moments at time `t`: mean `e^{lambda t}`, variance
/// `((u''(1) - lambda)/lambda)(e^{2 lambda t} - e^{lambda t})`.
pub fn moments(spec: &GeneratingFunctionSpec, t: f64) -> Result<Moments, CriticalProcess> {
    let lambda = spec.lambda();
    if lambda == 0.0 {
        return Err(CriticalProcess);
    }
    let mean = math::exp(lambda * t);
    let variance = (spec.u_double_prime_one() - lambda) / lambda
        * (math::exp(2.0 * lambda * t) - math::exp(lambda * t));
    Ok(Moments { mean, variance })
}

// ── Yule law ──

/// Law of a pure-birth (Yule) process count at a fixed time, started from
/// one individual: geometric on `{1, 2, ...}` with success probability
/// `e^{-rate * t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YuleLaw {
    pub success: f64,
}

pub fn yule_law(rate: f64, t: f64) -> YuleLaw {
    assert!(rate > 0.0 && rate.is_finite(), "Yule law needs a positive branch rate");
    assert!(t >= 0.0 && t.is_finite(), "time must be finite and >= 0");
    YuleLaw { success: math::exp(-rate * t) }
}

impl YuleLaw {
    /// `P(count = m)` for `m >= 1`.
    pub fn pmf(&self, m: u64) -> f64 {
        assert!(m >= 1, "a Yule process never has fewer than 1 individual");
        self.success * math::powf(1.0 - self.success, (m - 1) as f64)
    }

    /// `E[count] = e^{rate t}`.
    pub fn mean(&self) -> f64 {
        1.0 / self.success
    }

    /// `P(count > m) = (1 - e^{-rate t})^m`.
    pub fn tail(&self, m: u64) -> f64 {
        math::powf(1.0 - self.success, m as f64)
    }
}

// ── Simulators ──

/// Stop rule for a simulated path. Absorption at 0 (with no immigration)
/// always stops a path; the event cap marks it undecided instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchStop {
    pub horizon: Option<f64>,
    /// Stop (verdict `CeilingReached`) when the count reaches this value;
    /// used to classify survival with error `(death/birth)^ceiling`.
    pub size_ceiling: Option<u64>,
    pub event_cap: u64,
}

impl Default for BranchStop {
    fn default() -> Self {
        BranchStop { horizon: None, size_ceiling: None, event_cap: DEFAULT_EVENT_CAP }
    }
}

impl BranchStop {
    pub fn at_time(horizon: f64) -> Self {
        BranchStop { horizon: Some(horizon), ..BranchStop::default() }
    }

    pub fn at_ceiling(ceiling: u64) -> Self {
        BranchStop { size_ceiling: Some(ceiling), ..BranchStop::default() }
    }
}

/// How a simulated path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchVerdict {
    /// Count hit 0 with no immigration to restart it.
    Extinct,
    HorizonReached,
    CeilingReached,
    /// Event cap hit; the path's fate is unknown and it must not be
    /// counted as either extinct or surviving.
    Undecided,
    /// All rates vanished with the count stuck above 0 (birth = death = 0).
    Frozen,
}

/// Summary of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchOutcome {
    pub verdict: BranchVerdict,
    pub final_count: u64,
    pub final_time: f64,
    /// `∫ Y(t) dt` over the simulated span (the "total progeny" integral).
    pub progeny_integral: f64,
    pub events: u64,
}

/// One simulated path with its state sequence and immigrant arrival times.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPath {
    /// Event times (not including time 0).
    pub times: Vec<f64>,
    /// Count after each event, aligned with `times`.
    pub counts: Vec<u64>,
    pub immigrant_times: Vec<f64>,
    pub outcome: BranchOutcome,
}

/// Simulate a path, keeping only the summary.
pub fn simulate_outcome<R: RngCore>(
    spec: &BranchingSpec,
    stop: &BranchStop,
    rng: &mut R,
) -> BranchOutcome {
    simulate_impl(spec, stop, rng, |_, _, _| {})
}

/// Simulate a path, recording the full state sequence.
pub fn simulate_branching<R: RngCore>(
    spec: &BranchingSpec,
    stop: &BranchStop,
    rng: &mut R,
) -> BranchPath {
    let mut times = Vec::new();
    let mut counts = Vec::new();
    let mut immigrant_times = Vec::new();
    let outcome = simulate_impl(spec, stop, rng, |t, count, immigrated| {
        times.push(t);
        counts.push(count);
        if immigrated {
            immigrant_times.push(t);
        }
    });
    BranchPath { times, counts, immigrant_times, outcome }
}

fn simulate_impl<R: RngCore>(
    spec: &BranchingSpec,
    stop: &BranchStop,
    rng: &mut R,
    mut record: impl FnMut(f64, u64, bool),
) -> BranchOutcome {
    let mut count = spec.initial;
    let mut t = 0.0;
    let mut integral = 0.0;
    let mut events = 0u64;
    let done = |verdict, count, t, integral, events| BranchOutcome {
        verdict,
        final_count: count,
        final_time: t,
        progeny_integral: integral,
        events,
    };
    loop {
        if count == 0 && spec.immigration == 0.0 {
            return done(BranchVerdict::Extinct, count, t, integral, events);
        }
        if let Some(ceiling) = stop.size_ceiling {
            if count >= ceiling {
                return done(BranchVerdict::CeilingReached, count, t, integral, events);
            }
        }
        if events >= stop.event_cap {
            return done(BranchVerdict::Undecided, count, t, integral, events);
        }
        let c = count as f64;
        let rate_birth = c * spec.birth;
        let rate_death = c * spec.death;
        let total = rate_birth + rate_death + spec.immigration;
        if total <= 0.0 {
            // count > 0 but birth = death = 0: the path is stuck.
            if let Some(h) = stop.horizon {
                integral += c * (h - t);
                return done(BranchVerdict::HorizonReached, count, h, integral, events);
            }
            return done(BranchVerdict::Frozen, count, t, integral, events);
        }
        let dt = rng::exponential(rng, total);
        if let Some(h) = stop.horizon {
            if t + dt > h {
                integral += c * (h - t);
                return done(BranchVerdict::HorizonReached, count, h, integral, events);
            }
        }
        t += dt;
        integral += c * dt;
        events += 1;
        let u = rng::uniform(rng) * total;
        let mut immigrated = false;
        if u < rate_birth {
            count += 1;
        } else if u < rate_birth + rate_death {
            count -= 1;
        } else {
            count += 1;
            immigrated = true;
        }
        record(t, count, immigrated);
    }
}

/// Final counts of a simulated two-type (finite/infinite line) path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTypeOutcome {
    pub finite: u64,
    pub infinite: u64,
    pub undecided: bool,
}

impl TwoTypeOutcome {
    pub fn total(&self) -> u64 {
        self.finite + self.infinite
    }
}

/// Simulate the decomposed process to a fixed horizon, starting from a
/// single individual whose line class is given by `root_infinite`.
///
/// To reproduce the unconditioned parent law, draw the root class as
/// infinite with probability `1 - q`.
pub fn simulate_two_type<R: RngCore>(
    spec: &TwoTypeSpec,
    root_infinite: bool,
    horizon: f64,
    event_cap: u64,
    rng: &mut R,
) -> TwoTypeOutcome {
    let (mut finite, mut infinite) = if root_infinite { (0u64, 1u64) } else { (1u64, 0u64) };
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        if finite == 0 && infinite == 0 {
            return TwoTypeOutcome { finite, infinite, undecided: false };
        }
        if events >= event_cap {
            return TwoTypeOutcome { finite, infinite, undecided: true };
        }
        let rf = finite as f64;
        let ri = infinite as f64;
        let r_fb = rf * spec.finite_birth;
        let r_fd = rf * spec.finite_death;
        let r_ib = ri * spec.infinite_branch;
        let r_is = ri * spec.infinite_finite_spawn;
        let total = r_fb + r_fd + r_ib + r_is;
        let dt = rng::exponential(rng, total);
        if t + dt > horizon {
            return TwoTypeOutcome { finite, infinite, undecided: false };
        }
        t += dt;
        events += 1;
        let u = rng::uniform(rng) * total;
        if u < r_fb {
            finite += 1;
        } else if u < r_fb + r_fd {
            finite -= 1;
        } else if u < r_fb + r_fd + r_ib {
            infinite += 1;
        } else {
            finite += 1;
        }
    }
}
