//! The exact event-driven simulator.
//!
//! Between events every rate is constant, so the simulation draws an
//! exponential holding time at the total composition-changing rate and
//! then picks one event in proportion to its rate. Two kinds of event
//! exist: an individual of type `i` is replaced by the offspring of a
//! parent of a *different* type `j` (rate `X_i * (1+s)^j * X_j / S`), and
//! an individual of type `i` mutates to type `i+1` (rate `X_i * mu`).
//! Same-type replacements never change the composition and are excluded
//! from the event space, so a monomorphic population without mutation has
//! total rate zero and is reported as absorbed.
//!
//! Performance notes. Occupied types always form a short contiguous band,
//! so per-event work touches only the window `[lo, hi]`. Fitness factors
//! `(1+s)^k` come from an append-only power table indexed by `k - base`;
//! when the window drifts upward the origin `base` is advanced (one
//! division of the cached fitness sum, no table rebuild) so table indexes
//! stay small and the cached sums stay well-scaled even after millions of
//! fixations. The total-fitness sum is maintained incrementally and
//! re-verified against a fresh computation every [`AUDIT_STRIDE`] events;
//! simulated time uses compensated summation so runs of 10^8+ short
//! holding times do not lose precision.

use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use crate::math;
use crate::params::Parameters;
use crate::rng;
use crate::state::{Event, EventKind, PopulationState, Trajectory};

/// How often (in events) the engine re-derives its incremental caches from
/// scratch and asserts they agree: conservation, window tightness, and
/// fitness-cache coherence to 1e-9 relative. Always on, also in release.
pub const AUDIT_STRIDE: u64 = 10_000;

/// Advance the power-table origin once the window sits this far above it,
/// keeping relative exponents (and thus fitness factors) small.
const REBASE_GAP: usize = 32;

/// Relative tolerance for the fitness-cache coherence check.
const CACHE_TOL: f64 = 1e-9;

/// Why constructing an engine failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineError {
    /// Initial counts do not sum to the configured population size.
    SizeMismatch { expected: u32, got: u64 },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::SizeMismatch { expected, got } => {
                write!(f, "initial counts sum to {got}, expected population size {expected}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EngineError {}

/// A sampled-but-not-yet-applied event: the holding time until it fires
/// and what it does. Produced by [`Engine::propose`], consumed by
/// [`Engine::apply`]; valid only for the state it was proposed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub dt: f64,
    pub kind: EventKind,
}

/// When a run should stop (besides absorption or a monitor's request).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopCondition {
    /// Stop once the clock would pass this time (the clock is advanced to
    /// exactly the horizon and the pending event is discarded).
    pub horizon: Option<f64>,
    /// Stop after this many applied events in the current run.
    pub max_events: Option<u64>,
}

impl StopCondition {
    pub fn at_time(horizon: f64) -> Self {
        StopCondition { horizon: Some(horizon), max_events: None }
    }

    pub fn after_events(cap: u64) -> Self {
        StopCondition { horizon: None, max_events: Some(cap) }
    }

    pub fn with_event_cap(mut self, cap: u64) -> Self {
        self.max_events = Some(cap);
        self
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The clock reached the configured horizon.
    Horizon,
    /// The per-run event cap was reached; the run is incomplete and should
    /// be treated differently from a normal stop.
    EventCap,
    /// Total event rate fell to zero (monomorphic, `mu = 0`).
    Absorbed,
    /// The monitor (stopping predicate) requested the stop.
    Predicate,
}

/// Summary of one `run_*` call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub reason: StopReason,
    /// Events applied during this call (not the engine's lifetime count).
    pub events: u64,
    /// Clock value when the call returned.
    pub final_time: f64,
}

/// Per-event observer with the power to stop the run.
///
/// `after_event` is called with the engine state *after* the event has
/// been applied; returning `false` ends the run with
/// [`StopReason::Predicate`]. Implementations should be O(1) per event —
/// they sit on the hot path.
pub trait Monitor {
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool;
}

/// No-op monitor.
impl Monitor for () {
    #[inline(always)]
    fn after_event(&mut self, _engine: &Engine, _event: &Event) -> bool {
        true
    }
}

/// Monitors compose by mutable reference, so one can be retained after
/// the run for inspection.
impl<M: Monitor> Monitor for &mut M {
    #[inline(always)]
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool {
        (**self).after_event(engine, event)
    }
}

/// Run two monitors side by side; the run stops when either asks.
impl<A: Monitor, B: Monitor> Monitor for (A, B) {
    #[inline(always)]
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool {
        // Evaluate both so neither misses an event.
        let a = self.0.after_event(engine, event);
        let b = self.1.after_event(engine, event);
        a && b
    }
}

/// Adapter turning a stopping predicate into a [`Monitor`]: the run stops
/// as soon as the predicate returns `true`.
pub struct StopWhen<F>(pub F);

impl<F: FnMut(&Engine, &Event) -> bool> Monitor for StopWhen<F> {
    #[inline(always)]
    fn after_event(&mut self, engine: &Engine, event: &Event) -> bool {
        !(self.0)(engine, event)
    }
}

/// Monitor that records every event (used by [`simulate_recorded`]).
#[derive(Debug, Default)]
pub struct Recording(pub Vec<Event>);

impl Monitor for Recording {
    #[inline(always)]
    fn after_event(&mut self, _engine: &Engine, event: &Event) -> bool {
        self.0.push(*event);
        true
    }
}

///// Live simulation state: composition, clock, and the caches that make
/// event sampling O(window width).
pub struct Engine {
    params: Parameters,
    n_f: f64,
    n_mu: f64,
    g1: f64,
    counts: Vec<u32>,
    /// Lowest and highest occupied type; counts outside are zero.
    lo: usize,
    hi: usize,
    /// Power-table origin: `pow[r] = (1+s)^r`, used for types `base + r`.
    base: usize,
    pow: Vec<f64>,
    /// Total fitness divided by `(1+s)^base`, maintained incrementally.
    fitness_rel: f64,
    time: f64,
    /// Compensation term of the clock's Kahan summation.
    time_comp: f64,
    /// Lifetime applied-event count (drives the periodic audit).
    events: u64,
}

impl Engine {
    /// Build an engine over the given initial composition.
    pub fn new(params: Parameters, initial: &[u32]) -> Result<Self, EngineError> {
        let total: u64 = initial.iter().map(|&c| u64::from(c)).sum();
        if total != u64::from(params.n) {
            return Err(EngineError::SizeMismatch { expected: params.n, got: total });
        }
        let lo = initial.iter().position(|&c| c > 0).expect("n >= 1 guarantees an occupied type");
        let hi = initial.iter().rposition(|&c| c > 0).unwrap();
        let mut counts = Vec::with_capacity(hi + 8);
        counts.extend_from_slice(&initial[..=hi]);
        let g1 = 1.0 + params.s;
        let mut pow = Vec::with_capacity(hi - lo + REBASE_GAP + 8);
        pow.push(1.0);
        while pow.len() <= hi - lo {
            let last = *pow.last().unwrap();
            pow.push(last * g1);
        }
        let mut engine = Engine {
            params,
            n_f: params.n_f64(),
            n_mu: params.n_f64() * params.mu,
            g1,
            counts,
            lo,
            hi,
            base: lo,
            pow,
            fitness_rel: 0.0,
            time: 0.0,
            time_comp: 0.0,
            events: 0,
        };
        engine.fitness_rel = engine.fresh_fitness_rel();
        Ok(engine)
    }

    /// Engine starting from the all-type-0 composition.
    pub fn from_scratch(params: Parameters) -> Self {
        Engine::new(params, &[params.n]).expect("monomorphic counts always match n")
    }

    // ── Accessors ──

    #[inline]
    pub fn params(&self) -> &Parameters {
        &self.params
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Lifetime count of applied events.
    #[inline]
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Count of type-`k` individuals (0 for any unoccupied type).
    #[inline]
    pub fn count(&self, k: usize) -> u32 {
        self.counts.get(k).copied().unwrap_or(0)
    }

    /// Occupied-type window `(lo, hi)`: all individuals have types in
    /// `lo..=hi` and both endpoints are occupied.
    #[inline]
    pub fn window(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    /// Raw counts indexed by type (may include leading/trailing zeros).
    #[inline]
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Snapshot of the current state (with an absolute fitness sum; only
    /// meaningful while `(1+s)^hi` is representable, which holds for every
    /// analysis this crate performs).
    pub fn state(&self) -> PopulationState {
        PopulationState {
            counts: self.counts.clone(),
            time: self.time,
            total_fitness: self.total_fitness(),
        }
    }

    /// Total fitness `S = Σ (1+s)^k X_k` (absolute scale).
    pub fn total_fitness(&self) -> f64 {
        self.fitness_rel * math::powi(self.g1, self.base as i32)
    }

    // ── Rates ──

    /// Rate of the replacement event "a type-`i` individual is replaced by
    /// the offspring of a type-`j` parent" (`X_i (1+s)^j X_j / S`), with
    /// the mutation flux `X_i * mu` folded into the `j = i + 1` entry.
    /// Rejects `i = j`: same-type replacements are not events.
    pub fn replacement_rate(&self, i: usize, j: usize) -> Result<f64, SelfReplacementRate> {
        if i == j {
            return Err(SelfReplacementRate { type_index: i });
        }
        let xi = f64::from(self.count(i));
        let xj = f64::from(self.count(j));
        let gj = math::powi(self.g1, (j as i64 - self.base as i64) as i32);
        let mut rate = xi * gj * xj / self.fitness_rel;
        if j == i + 1 {
            rate += xi * self.params.mu;
        }
        Ok(rate)
    }

    /// The three per-type aggregate rates: immigration into type `k` by
    /// mutation from below (`X_{k-1} mu`, zero for `k = 0`), per-individual
    /// birth rate `(N - X_k)(1+s)^k / S`, and per-individual death rate
    /// `1 - (1+s)^k X_k / S + mu`.
    pub fn per_type_rates(&self, k: usize) -> TypeRates {
        let gk = math::powi(self.g1, (k as i64 - self.base as i64) as i32);
        let xk = f64::from(self.count(k));
        let immigration =
            if k == 0 { 0.0 } else { f64::from(self.count(k - 1)) * self.params.mu };
        let birth = (self.n_f - xk) * gk / self.fitness_rel;
        let death = 1.0 - gk * xk / self.fitness_rel + self.params.mu;
        TypeRates { immigration, birth, death }
    }

    /// Total rate of composition-changing events (zero only when the
    /// population is monomorphic and `mu = 0`).
    pub fn total_rate(&self) -> f64 {
        self.replacement_mass() + self.n_mu
    }

    /// Sum over `i` of `X_i (S - (1+s)^i X_i) / S`: the total replacement
    /// rate excluding same-type replacements.
    #[inline]
    fn replacement_mass(&self) -> f64 {
        if self.lo == self.hi {
            return 0.0;
        }
        let mut xf = 0.0;
        let pows = &self.pow[self.lo - self.base..];
        for (c, g) in self.counts[self.lo..=self.hi].iter().zip(pows) {
            let x = f64::from(*c);
            xf += x * x * g;
        }
        (self.n_f - xf / self.fitness_rel).max(0.0)
    }

    // ── Event sampling ──

    /// Sample the next event: holding time plus event choice. Returns
    /// `None` when every composition-changing rate is zero (absorbed).
    /// Consumes randomness but does not modify the state.
    pub fn propose<R: RngCore>(&self, rng: &mut R) -> Option<Proposal> {
        let r_repl = self.replacement_mass();
        let r_tot = r_repl + self.n_mu;
        if r_tot <= 0.0 {
            return None;
        }
        let dt = rng::exponential(rng, r_tot);
        let u = rng::uniform(rng) * r_tot;
        let kind = if self.n_mu > 0.0 && (u < self.n_mu || r_repl == 0.0) {
            self.pick_mutation(u)
        } else {
            self.pick_replacement(u - self.n_mu, rng)
        };
        Some(Proposal { dt, kind })
    }

    /// Pick the mutating type: weight `X_k`, walk target `u / mu` in `[0, N]`.
    #[inline]
    fn pick_mutation(&self, u: f64) -> EventKind {
        let target = u / self.params.mu;
        let mut cum = 0.0;
        let mut pick = None;
        for k in self.lo..=self.hi {
            let x = f64::from(self.counts[k]);
            if x > 0.0 {
                cum += x;
                pick = Some(k);
                if cum > target {
                    break;
                }
            }
        }
        // `pick` falls through to the highest occupied type when rounding
        // pushes the target to the full mass.
        EventKind::Mutation { from: pick.expect("window holds an occupied type") as u32 }
    }

    /// Pick the replacement pair: dying type `i` with weight
    /// `X_i (S - (1+s)^i X_i)`, then parent type `j != i` with weight
    /// `(1+s)^j X_j`. `w` is uniform in `[0, replacement mass)`.
    #[inline]
    fn pick_replacement<R: RngCore>(&self, w: f64, rng: &mut R) -> EventKind {
        let target = w.max(0.0) * self.fitness_rel;
        let mut cum = 0.0;
        let mut dying = None;
        for k in self.lo..=self.hi {
            let x = f64::from(self.counts[k]);
            let weight = x * (self.fitness_rel - x * self.pow[k - self.base]);
            if weight > 0.0 {
                cum += weight;
                dying = Some(k);
                if cum > target {
                    break;
                }
            }
        }
        let i = dying.expect("replacement sampled while total replacement weight is zero");
        let phi_i = f64::from(self.counts[i]) * self.pow[i - self.base];
        let v = rng::uniform(rng) * (self.fitness_rel - phi_i);
        let mut cum = 0.0;
        let mut parent = None;
        for k in self.lo..=self.hi {
            if k == i {
                continue;
            }
            let phi = f64::from(self.counts[k]) * self.pow[k - self.base];
            if phi > 0.0 {
                cum += phi;
                parent = Some(k);
                if cum > v {
                    break;
                }
            }
        }
        let j = parent.expect("a positive replacement weight implies a second occupied type");
        EventKind::Replacement { dying: i as u32, parent: j as u32 }
    }

    /// Apply a proposal from the current state: advance the clock, update
    /// counts, window, and fitness cache. Returns the realized event.
    pub fn apply(&mut self, proposal: &Proposal) -> Event {
        let (t_next, comp_next) = self.clock_after(proposal.dt);
        self.time = t_next;
        self.time_comp = comp_next;
        let (from, to) = match proposal.kind {
            EventKind::Replacement { dying, parent } => (dying as usize, parent as usize),
            EventKind::Mutation { from } => (from as usize, from as usize + 1),
        };
        self.shift(from, to);
        self.events += 1;
        debug_assert!(
            self.counts.iter().map(|&c| u64::from(c)).sum::<u64>() == u64::from(self.params.n),
            "population size not conserved"
        );
        if self.events % AUDIT_STRIDE == 0 {
            self.audit();
            self.fitness_rel = self.fresh_fitness_rel();
        }
        Event { time: t_next, kind: proposal.kind }
    }

    /// Fused propose-and-apply. Returns the applied event, or `None` when
    /// the population is absorbed.
    #[inline]
    pub fn step<R: RngCore>(&mut self, rng: &mut R) -> Option<Event> {
        let proposal = self.propose(rng)?;
        Some(self.apply(&proposal))
    }

    /// Compensated clock advance; guarantees strict monotonicity even for
    /// holding times below the clock's current resolution.
    #[inline]
    fn clock_after(&self, dt: f64) -> (f64, f64) {
        let y = dt - self.time_comp;
        let t = self.time + y;
        if t <= self.time {
            // Holding time vanished in rounding: bump by one ulp so event
            // times stay strictly increasing (replay depends on it).
            return (self.time.next_up(), 0.0);
        }
        (t, (t - self.time) - y)
    }

    /// Move one individual from type `from` to type `to`, maintaining the
    /// occupied window, the power table, and the fitness cache.
    #[inline]
    fn shift(&mut self, from: usize, to: usize) {
        debug_assert!(self.counts[from] > 0, "event removes from an empty type");
        debug_assert!(from != to);
        if to > self.hi {
            if self.counts.len() <= to {
                self.counts.resize(to + 1, 0);
            }
            while self.pow.len() <= to - self.base {
                let last = *self.pow.last().unwrap();
                self.pow.push(last * self.g1);
            }
            self.hi = to;
        }
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.fitness_rel += self.pow[to - self.base] - self.pow[from - self.base];
        if from == self.lo {
            while self.counts[self.lo] == 0 && self.lo < self.hi {
                self.lo += 1;
            }
        } else if from == self.hi {
            while self.counts[self.hi] == 0 && self.hi > self.lo {
                self.hi -= 1;
            }
        }
        if self.lo - self.base >= REBASE_GAP {
            // pow[r] depends only on the relative exponent r, so advancing
            // the origin rescales the cached sum and nothing else.
            self.fitness_rel /= self.pow[self.lo - self.base];
            self.base = self.lo;
        }
    }

    // ── Runs ──

    /// Run until the stop condition, absorption, or the monitor stops it.
    pub fn run_monitored<M: Monitor, R: RngCore>(
        &mut self,
        stop: &StopCondition,
        monitor: &mut M,
        rng: &mut R,
    ) -> RunOutcome {
        let start_events = self.events;
        loop {
            if let Some(cap) = stop.max_events {
                if self.events - start_events >= cap {
                    return self.outcome(StopReason::EventCap, start_events);
                }
            }
            let Some(proposal) = self.propose(rng) else {
                return self.outcome(StopReason::Absorbed, start_events);
            };
            if let Some(horizon) = stop.horizon {
                if self.clock_after(proposal.dt).0 > horizon {
                    if horizon > self.time {
                        self.time = horizon;
                        self.time_comp = 0.0;
                    }
                    return self.outcome(StopReason::Horizon, start_events);
                }
            }
            let event = self.apply(&proposal);
            if !monitor.after_event(self, &event) {
                return self.outcome(StopReason::Predicate, start_events);
            }
        }
    }

    /// Run with no observer.
    pub fn run<R: RngCore>(&mut self, stop: &StopCondition, rng: &mut R) -> RunOutcome {
        self.run_monitored(stop, &mut (), rng)
    }

    fn outcome(&self, reason: StopReason, start_events: u64) -> RunOutcome {
        RunOutcome { reason, events: self.events - start_events, final_time: self.time }
    }

    // ── Invariant audit ──

    /// Re-derive every incremental cache from scratch and panic on any
    /// mismatch: size conservation, window tightness, and fitness-cache
    /// coherence within 1e-9 relative. Runs automatically every
    /// [`AUDIT_STRIDE`] events; callers may also invoke it directly.
    pub fn audit(&self) {
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        assert!(
            total == u64::from(self.params.n),
            "population size drifted: {total} != {}",
            self.params.n
        );
        assert!(self.counts[self.lo] > 0, "window lower edge {} is unoccupied", self.lo);
        assert!(self.counts[self.hi] > 0, "window upper edge {} is unoccupied", self.hi);
        assert!(
            self.counts[..self.lo].iter().all(|&c| c == 0)
                && self.counts[self.hi + 1..].iter().all(|&c| c == 0),
            "occupied types outside the window"
        );
        let fresh = self.fresh_fitness_rel();
        assert!(
            math::abs(self.fitness_rel - fresh) <= CACHE_TOL * fresh,
            "fitness cache drifted: cached {} vs fresh {fresh}",
            self.fitness_rel
        );
        // The fitness sum never falls below the population size: every
        // power-table entry is >= 1 and the origin sits at/below the window.
        assert!(fresh >= self.n_f * (1.0 - 1e-12), "total fitness below population size");
    }

    fn fresh_fitness_rel(&self) -> f64 {
        let mut total = 0.0;
        for k in self.lo..=self.hi {
            total += f64::from(self.counts[k]) * self.pow[k - self.base];
        }
        total
    }
}

/// `i = j` passed to [`Engine::replacement_rate`]: same-type replacements
/// are excluded from the event space and have no rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfReplacementRate {
    pub type_index: usize,
}

impl fmt::Display for SelfReplacementRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "replacement within type {} is not an event (it cannot change the composition)",
            self.type_index
        )
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SelfReplacementRate {}

/// Per-type aggregate rates; see [`Engine::per_type_rates`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeRates {
    /// Arrival rate of new type-`k` individuals by mutation from type `k-1`.
    pub immigration: f64,
    /// Per-individual birth rate of type `k`.
    pub birth: f64,
    /// Per-individual death rate of type `k`.
    pub death: f64,
}

/// Run a fresh engine and record the full trajectory.
pub fn simulate_recorded<R: RngCore>(
    params: Parameters,
    initial: &[u32],
    stop: &StopCondition,
    rng: &mut R,
) -> Result<(Trajectory, RunOutcome), EngineError> {
    let mut engine = Engine::new(params, initial)?;
    let mut recording = Recording::default();
    let outcome = engine.run_monitored(stop, &mut recording, rng);
    let trajectory = Trajectory {
        params,
        initial: initial.to_vec(),
        events: recording.0,
        final_time: engine.time(),
    };
    Ok((trajectory, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn engine(n: u32, s: f64, mu: f64, counts: &[u32]) -> Engine {
        Engine::new(Parameters::new(n, s, mu, None).unwrap(), counts).unwrap()
    }

    #[test]
    fn total_fitness_examples() {
        // All type 0: the fitness sum is the population size for any s.
        assert_eq!(engine(5, 0.3, 0.0, &[5]).total_fitness(), 5.0);
        // 2 of type 0 and 3 of type 1 at s = 0.5: 2 + 4.5 = 6.5.
        assert_eq!(engine(5, 0.5, 0.0, &[2, 3]).total_fitness(), 6.5);
        // A single type-2 individual at s = 0.1: 1.1^2 = 1.21.
        let e = engine(1, 0.1, 0.0, &[0, 0, 1]);
        assert!((e.total_fitness() - 1.21).abs() < 1e-12);
    }

    #[test]
    fn replacement_rate_examples() {
        // X_0 = X_1 = 1 at s = 1: S = 3, rate(1 -> 0) = 1*1*1/3.
        let e = engine(2, 1.0, 0.0, &[1, 1]);
        assert!((e.replacement_rate(1, 0).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // Same composition with mu = 0.1: the 0 -> 1 entry carries the
        // mutation flux, 1*2*1/3 + 0.1.
        let e = engine(2, 1.0, 0.1, &[1, 1]);
        assert!((e.replacement_rate(0, 1).unwrap() - (2.0 / 3.0 + 0.1)).abs() < 1e-12);
        // No individuals of the dying type: rate 0.
        assert_eq!(e.replacement_rate(3, 0).unwrap(), 0.0);
        // Same-type replacement is rejected, not rated 0.
        assert_eq!(e.replacement_rate(1, 1), Err(SelfReplacementRate { type_index: 1 }));
    }

    #[test]
    fn per_type_rates_examples() {
        // Monomorphic: no one else to give birth to a slot, death rate mu.
        let e = engine(7, 0.2, 0.01, &[0, 7]);
        let r = e.per_type_rates(1);
        assert_eq!(r.birth, 0.0);
        assert!((r.death - 0.01).abs() < 1e-15);
        // Immigration into type 2 from 7 type-1 individuals at mu = 0.01.
        assert!((e.per_type_rates(2).immigration - 0.07).abs() < 1e-15);
        // X_0 = X_1 = 1 at s = 1, mu = 0: b_1 = 2/3, d_1 = 1/3.
        let e = engine(2, 1.0, 0.0, &[1, 1]);
        let r = e.per_type_rates(1);
        assert!((r.birth - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.death - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.immigration, 0.0);
        // m_0 is identically zero: nothing mutates into type 0.
        assert_eq!(e.per_type_rates(0).immigration, 0.0);
    }

    #[test]
    fn outflow_identity_between_rate_views() {
        // For every occupied k, summing replacement_rate(k, j) over j != k
        // (whose k -> k+1 entry already carries the mutation flux) equals
        // X_k * d_k. Checked on an irregular composition.
        let e = engine(12, 0.35, 0.007, &[3, 0, 4, 5]);
        let (lo, hi) = e.window();
        for k in lo..=hi {
            let xk = f64::from(e.count(k));
            if xk == 0.0 {
                continue;
            }
            let outflow: f64 =
                (0..=hi + 1).filter(|&j| j != k).map(|j| e.replacement_rate(k, j).unwrap()).sum();
            let dk = e.per_type_rates(k).death;
            assert!(
                (outflow - xk * dk).abs() <= 1e-9 * (xk * dk),
                "type {k}: outflow {outflow} vs X_k d_k {}",
                xk * dk
            );
        }
    }

    #[test]
    fn sampled_event_frequencies_match_rates() {
        // X_0 = X_1 = 1, s = 1, mu = 0: total rate 1, the parent is type 1
        // with probability 2/3 and type 0 with probability 1/3.
        let e = engine(2, 1.0, 0.0, &[1, 1]);
        let mut rng = crate::rng::replicate_rng(11, 0);
        let n = 100_000;
        let mut upward = 0u32;
        let mut dt_sum = 0.0;
        for _ in 0..n {
            let p = e.propose(&mut rng).unwrap();
            dt_sum += p.dt;
            match p.kind {
                EventKind::Replacement { dying: 0, parent: 1 } => upward += 1,
                EventKind::Replacement { dying: 1, parent: 0 } => {}
                other => panic!("impossible event {other:?}"),
            }
        }
        let frac = f64::from(upward) / n as f64;
        let se = (2.0 / 9.0f64 / n as f64).sqrt();
        assert!((frac - 2.0 / 3.0).abs() < 3.0 * se, "upward fraction {frac}");
        // Holding times are Exp(1): mean 1 within 3 SE (sd of Exp(1) is 1).
        let mean_dt = dt_sum / n as f64;
        let se_dt = 1.0 / (n as f64).sqrt();
        assert!((mean_dt - 1.0).abs() < 3.0 * se_dt, "mean holding time {mean_dt}");
    }

    #[test]
    fn absorbed_when_monomorphic_without_mutation() {
        let mut e = engine(50, 0.1, 0.0, &[50]);
        let mut rng = crate::rng::replicate_rng(1, 0);
        assert!(e.propose(&mut rng).is_none());
        let outcome = e.run(&StopCondition::at_time(100.0), &mut rng);
        assert_eq!(outcome.reason, StopReason::Absorbed);
        assert_eq!(outcome.events, 0);
    }

    #[test]
    fn horizon_stop_discards_pending_event_and_sets_clock() {
        let params = Parameters::new(40, 0.1, 0.0, None).unwrap();
        let mut rng = crate::rng::replicate_rng(5, 0);
        let (traj, outcome) =
            simulate_recorded(params, &[40], &StopCondition::at_time(5.0), &mut rng).unwrap();
        assert_eq!(outcome.reason, StopReason::Absorbed, "mu = 0, monomorphic");
        // A polymorphic run with mu = 0 stopped early by a horizon:
        let mut rng = crate::rng::replicate_rng(5, 1);
        let (traj2, outcome2) =
            simulate_recorded(params, &[20, 20], &StopCondition::at_time(0.5), &mut rng).unwrap();
        assert_eq!(traj.events.len(), 0);
        assert_eq!(outcome2.reason, StopReason::Horizon);
        assert_eq!(outcome2.final_time, 0.5);
        assert_eq!(traj2.final_time, 0.5);
        assert!(traj2.events.iter().all(|ev| ev.time <= 0.5));
    }

    #[test]
    fn event_cap_reported_distinctly() {
        let mut e = engine(30, 0.2, 1e-3, &[30]);
        let mut rng = crate::rng::replicate_rng(9, 0);
        let outcome = e.run(&StopCondition::after_events(10), &mut rng);
        assert_eq!(outcome.reason, StopReason::EventCap);
        assert_eq!(outcome.events, 10);
    }

    #[test]
    fn same_seed_reproduces_the_trajectory_exactly() {
        let params = Parameters::new(30, 0.1, 1e-3, None).unwrap();
        let stop = StopCondition::at_time(50.0).with_event_cap(200_000);
        let mut rng_a = crate::rng::replicate_rng(123, 7);
        let mut rng_b = crate::rng::replicate_rng(123, 7);
        let (ta, _) = simulate_recorded(params, &[30], &stop, &mut rng_a).unwrap();
        let (tb, _) = simulate_recorded(params, &[30], &stop, &mut rng_b).unwrap();
        assert_eq!(ta, tb);
        assert!(!ta.events.is_empty());
    }

    #[test]
    fn replay_reproduces_the_final_engine_state() {
        let params = Parameters::new(25, 0.15, 5e-3, None).unwrap();
        let stop = StopCondition::after_events(30_000);
        let mut rng = crate::rng::replicate_rng(77, 0);
        let mut engine = Engine::new(params, &[25]).unwrap();
        let mut recording = Recording::default();
        engine.run_monitored(&stop, &mut recording, &mut rng);
        let traj = Trajectory {
            params,
            initial: vec![25],
            events: recording.0,
            final_time: engine.time(),
        };
        let replayed = traj.final_state().unwrap();
        // Counts match exactly (modulo trailing zeros); times are the same f64.
        let live = engine.state();
        let trim = |c: &[u32]| c.iter().rposition(|&x| x > 0).map_or(0, |p| p + 1);
        assert_eq!(replayed.counts[..trim(&replayed.counts)], live.counts[..trim(&live.counts)]);
        assert_eq!(replayed.time, live.time);
        // Event times are strictly increasing (replay relies on it).
        assert!(traj.events.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn neutral_composition_mean_is_conserved() {
        // With s = 0 and mu = 0 the expected count of each type is
        // constant in time. 10^4 replicates from X_0 = X_1 = 10 at
        // horizon 2.0; the mean of X_1 stays near 10.
        let params = Parameters::new(20, 0.0, 0.0, None).unwrap();
        let reps = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..reps {
            let mut rng = crate::rng::replicate_rng(2024, i);
            let mut e = Engine::new(params, &[10, 10]).unwrap();
            e.run(&StopCondition::at_time(2.0), &mut rng);
            let x1 = f64::from(e.count(1));
            sum += x1;
            sumsq += x1 * x1;
        }
        let mean = sum / reps as f64;
        let var = (sumsq / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - 10.0).abs() < 3.0 * se,
            "neutral mean drifted: {mean} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn long_run_passes_audits_and_rebases_the_power_origin() {
        // High mutation pressure pushes the window upward through many
        // origins; the periodic audit validates caches along the way.
        let params = Parameters::new(10, 0.0, 1.0, None).unwrap();
        let mut rng = crate::rng::replicate_rng(31337, 0);
        let mut e = Engine::from_scratch(params);
        let outcome = e.run(&StopCondition::after_events(200_000), &mut rng);
        assert_eq!(outcome.reason, StopReason::EventCap);
        e.audit();
        assert!(e.base > 1_000, "power origin never advanced (base = {})", e.base);
        let (lo, hi) = e.window();
        assert!(hi - lo < 64, "window unexpectedly wide");
    }

    #[test]
    fn window_tracks_fixation_downward_and_growth_upward() {
        // Drive type 1 to fixation with mu = 0; the window must collapse
        // to a single occupied type and absorb.
        let params = Parameters::new(100, 0.5, 0.0, None).unwrap();
        let mut rng = crate::rng::replicate_rng(4, 2);
        let mut e = Engine::new(params, &[50, 50]).unwrap();
        let outcome = e.run(&StopCondition::default(), &mut rng);
        assert_eq!(outcome.reason, StopReason::Absorbed);
        let (lo, hi) = e.window();
        assert_eq!(lo, hi);
        assert_eq!(e.count(lo), 100);
        e.audit();
    }

    #[test]
    fn monitors_compose_and_predicates_stop_runs() {
        let params = Parameters::new(60, 0.3, 0.0, None).unwrap();
        let mut rng = crate::rng::replicate_rng(8, 8);
        let mut e = Engine::new(params, &[30, 30]).unwrap();
        let mut counter = Recording::default();
        let stopper = StopWhen(|eng: &Engine, _ev: &Event| eng.count(1) >= 45);
        let outcome =
            e.run_monitored(&StopCondition::default(), &mut (counter, stopper), &mut rng);
        assert_eq!(outcome.reason, StopReason::Predicate);
        assert!(e.count(1) >= 45);
        assert_eq!(outcome.events, e.events());
    }

    #[test]
    fn fixation_probability_of_a_single_beneficial_mutant() {
        // One type-1 individual among 99 type-0 at s = 0.1, mu = 0. The
        // chance it takes over is (1 - (1+s)^-1) / (1 - (1+s)^-N), about
        // 0.0909. 20k runs keep this test quick; 3 SE ~ 0.0061.
        let params = Parameters::new(100, 0.1, 0.0, None).unwrap();
        let reps = 20_000u32;
        let mut fixed = 0u32;
        for i in 0..reps {
            let mut rng = crate::rng::replicate_rng(555, u64::from(i));
            let mut e = Engine::new(params, &[99, 1]).unwrap();
            e.run(&StopCondition::default(), &mut rng);
            if e.count(1) == 100 {
                fixed += 1;
            }
        }
        let p_hat = f64::from(fixed) / f64::from(reps);
        let p = crate::branching::fixation_probability(100, 0.1);
        let se = (p * (1.0 - p) / f64::from(reps)).sqrt();
        assert!((p_hat - p).abs() < 3.0 * se, "fixation rate {p_hat} vs {p}");
    }

    #[test]
    fn proposals_do_not_mutate_state() {
        let e = engine(10, 0.2, 1e-2, &[4, 6]);
        let mut rng = crate::rng::replicate_rng(3, 3);
        let before: Vec<u32> = e.counts().to_vec();
        let t_before = e.time();
        for _ in 0..100 {
            let _ = e.propose(&mut rng);
        }
        assert_eq!(e.counts(), &before[..]);
        assert_eq!(e.time(), t_before);
    }
}
