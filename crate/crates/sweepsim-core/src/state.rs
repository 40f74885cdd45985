//! Population state, events, and recorded trajectories.

use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::params::Parameters;

/// A composition-changing event.
///
/// Self-replacements (an individual replaced by the offspring of a parent
/// of the same type) leave the composition unchanged and are not events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// An individual of type `dying` is replaced by the offspring of a
    /// parent of type `parent`; the two types differ.
    Replacement { dying: u32, parent: u32 },
    /// An individual of type `from` mutates to type `from + 1`.
    Mutation { from: u32 },
}

/// An event together with the absolute time at which it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Why applying an event to a state is impossible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyError {
    /// The event removes an individual from a type with count zero.
    EmptySource { type_index: u32 },
    /// A replacement names the same type as dying and parent.
    SelfReplacement { type_index: u32 },
    /// The event time is not ahead of the state's current time.
    NonMonotoneTime,
}

impl fmt::Display for ApplyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApplyError::EmptySource { type_index } => {
                write!(f, "event removes an individual of type {type_index}, which has count 0")
            }
            ApplyError::SelfReplacement { type_index } => {
                write!(f, "replacement within type {type_index} does not change the composition")
            }
            ApplyError::NonMonotoneTime => write!(f, "event time does not advance the clock"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ApplyError {}

/// The composition of the population at a point in time.
///
/// `counts[k]` is the number of type-`k` individuals; their sum is the
/// population size. `total_fitness` caches the sum of `(1+s)^k * counts[k]`
/// and is kept in step with `counts` incrementally; it is always at least
/// the population size because every fitness factor is at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub counts: Vec<u32>,
    pub time: f64,
    pub total_fitness: f64,
}

impl PopulationState {
    /// Build a state at time 0 from raw counts, computing the fitness cache.
    pub fn new(counts: Vec<u32>, s: f64) -> Self {
        let total_fitness = total_fitness_of(&counts, s);
        PopulationState { counts, time: 0.0, total_fitness }
    }

    /// The state with all `n` individuals of type 0.
    pub fn monomorphic(params: &Parameters) -> Self {
        let mut counts = Vec::with_capacity(8);
        counts.push(params.n);
        PopulationState::new(counts, params.s)
    }

    /// Population size (sum of all counts).
    pub fn size(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Recompute the fitness sum from scratch, bypassing the cache.
    pub fn fresh_total_fitness(&self, s: f64) -> f64 {
        total_fitness_of(&self.counts, s)
    }

    /// Apply one event, updating counts, clock, and fitness cache.
    ///
    /// This is the checked path used for replaying recorded event logs;
    /// it reports exactly which rule a malformed event breaks.
    pub fn apply(&mut self, event: &Event, s: f64) -> Result<(), ApplyError> {
        if !(event.time > self.time) {
            return Err(ApplyError::NonMonotoneTime);
        }
        let (from, to) = match event.kind {
            EventKind::Replacement { dying, parent } => {
                if dying == parent {
                    return Err(ApplyError::SelfReplacement { type_index: dying });
                }
                (dying, parent)
            }
            EventKind::Mutation { from } => (from, from + 1),
        };
        let from = from as usize;
        let to = to as usize;
        if self.counts.get(from).copied().unwrap_or(0) == 0 {
            return Err(ApplyError::EmptySource { type_index: from as u32 });
        }
        if self.counts.len() <= to {
            self.counts.resize(to + 1, 0);
        }
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.total_fitness += math::powi(1.0 + s, to as i32) - math::powi(1.0 + s, from as i32);
        self.time = event.time;
        Ok(())
    }
}

fn total_fitness_of(counts: &[u32], s: f64) -> f64 {
    let mut total = 0.0;
    let mut factor = 1.0;
    for &c in counts {
        total += f64::from(c) * factor;
        factor *= 1.0 + s;
    }
    total
}

/// A recorded run: parameters, the starting composition, every event, and
/// the time the run stopped (which may lie beyond the last event when the
/// run ended at a fixed horizon).
///
/// Replaying the events through [`PopulationState::apply`] reproduces the
/// exact state sequence of the run that recorded them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: Parameters,
    pub initial: Vec<u32>,
    pub events: Vec<Event>,
    pub final_time: f64,
}

impl Trajectory {
    pub fn new(params: Parameters, initial: Vec<u32>) -> Self {
        Trajectory { params, initial, events: Vec::new(), final_time: 0.0 }
    }

    /// Replay all events, calling `visit` with the state after each one.
    ///
    /// Returns the final state (clock advanced to `final_time`), or the
    /// index of the first inapplicable event together with the error.
    pub fn replay(
        &self,
        mut visit: impl FnMut(&Event, &PopulationState),
    ) -> Result<PopulationState, (usize, ApplyError)> {
        let mut state = PopulationState::new(self.initial.clone(), self.params.s);
        for (idx, event) in self.events.iter().enumerate() {
            state.apply(event, self.params.s).map_err(|e| (idx, e))?;
            visit(event, &state);
        }
        if self.final_time > state.time {
            state.time = self.final_time;
        }
        Ok(state)
    }

    /// Replay without observing intermediate states.
    pub fn final_state(&self) -> Result<PopulationState, (usize, ApplyError)> {
        self.replay(|_, _| {})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params() -> Parameters {
        Parameters::new(6, 0.5, 1e-3, None).unwrap()
    }

    #[test]
    fn total_fitness_of_small_compositions() {
        // counts [3, 2], s = 0.5: 3*1 + 2*1.5 = 6.0? No: 3 + 3.0 = 6.0.
        let st = PopulationState::new(vec![3, 2], 0.5);
        assert_eq!(st.total_fitness, 6.0);
        // counts [2, 2, 1], s = 0.5: 2 + 3 + 2.25 = 7.25.
        let st = PopulationState::new(vec![2, 2, 1], 0.5);
        assert_eq!(st.total_fitness, 7.25);
        // A fitness sum never falls below the population size.
        assert!(st.total_fitness >= st.size() as f64);
        // Neutral case: fitness sum equals the population size.
        let st = PopulationState::new(vec![4, 5, 6], 0.0);
        assert_eq!(st.total_fitness, 15.0);
    }

    #[test]
    fn apply_updates_counts_clock_and_cache() {
        let p = params();
        let mut st = PopulationState::new(vec![4, 2], p.s);
        st.apply(
            &Event { time: 0.25, kind: EventKind::Replacement { dying: 0, parent: 1 } },
            p.s,
        )
        .unwrap();
        assert_eq!(st.counts, vec![3, 3]);
        assert_eq!(st.time, 0.25);
        assert!((st.total_fitness - st.fresh_total_fitness(p.s)).abs() < 1e-12);

        // A mutation off the current top type grows the counts vector.
        st.apply(&Event { time: 0.5, kind: EventKind::Mutation { from: 1 } }, p.s).unwrap();
        assert_eq!(st.counts, vec![3, 2, 1]);
        assert!((st.total_fitness - st.fresh_total_fitness(p.s)).abs() < 1e-12);
    }

    #[test]
    fn apply_rejects_malformed_events() {
        let p = params();
        let mut st = PopulationState::new(vec![4, 2], p.s);
        let bad_time = Event { time: 0.0, kind: EventKind::Mutation { from: 0 } };
        assert_eq!(st.apply(&bad_time, p.s), Err(ApplyError::NonMonotoneTime));
        let self_repl = Event { time: 0.1, kind: EventKind::Replacement { dying: 1, parent: 1 } };
        assert_eq!(
            st.apply(&self_repl, p.s),
            Err(ApplyError::SelfReplacement { type_index: 1 })
        );
        let empty = Event { time: 0.1, kind: EventKind::Mutation { from: 7 } };
        assert_eq!(st.apply(&empty, p.s), Err(ApplyError::EmptySource { type_index: 7 }));
        // State is untouched after rejected events.
        assert_eq!(st.counts, vec![4, 2]);
        assert_eq!(st.time, 0.0);
    }

    #[test]
    fn replay_reports_first_bad_event_index() {
        let p = params();
        let mut traj = Trajectory::new(p, vec![4, 2]);
        traj.events.push(Event { time: 0.1, kind: EventKind::Mutation { from: 1 } });
        traj.events.push(Event { time: 0.2, kind: EventKind::Replacement { dying: 2, parent: 0 } });
        // Corrupt the log: type 5 was never populated.
        traj.events.push(Event { time: 0.3, kind: EventKind::Mutation { from: 5 } });
        let err = traj.final_state().unwrap_err();
        assert_eq!(err, (2, ApplyError::EmptySource { type_index: 5 }));
    }

    #[test]
    fn replay_conserves_population_size() {
        let p = params();
        let mut traj = Trajectory::new(p, vec![4, 2]);
        traj.events.push(Event { time: 0.1, kind: EventKind::Mutation { from: 0 } });
        traj.events.push(Event { time: 0.3, kind: EventKind::Replacement { dying: 0, parent: 2 } });
        let mut sizes = vec![];
        let final_state = traj.replay(|_, st| sizes.push(st.size())).unwrap();
        assert_eq!(sizes, vec![6, 6]);
        assert_eq!(final_state.counts, vec![2, 3, 1]);
        assert_eq!(final_state.time, 0.3);
    }
}
