//! Model parameters and the parameter-regime report.

use core::fmt;

use crate::math;

/// Parameters of the population model.
///
/// * `n` — population size, constant over time.
/// * `s` — selective advantage per mutation: type `k` has fitness `(1+s)^k`.
/// * `mu` — mutation rate per individual (type `k` to `k+1`).
/// * `eta` — optional exponent in `(0, 1)` used by the threshold-scale
///   constants and the auxiliary immigration rate; analyses that need it
///   reject parameters without it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameters {
    pub n: u32,
    pub s: f64,
    pub mu: f64,
    pub eta: Option<f64>,
}

/// Why a parameter set was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamError {
    /// Population size must be at least 1.
    PopulationEmpty,
    /// `s` must be finite and nonnegative.
    SelectionInvalid,
    /// `mu` must be finite and nonnegative.
    MutationInvalid,
    /// `eta`, when given, must lie strictly between 0 and 1.
    EtaOutOfRange,
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamError::PopulationEmpty => write!(f, "population size must be at least 1"),
            ParamError::SelectionInvalid => {
                write!(f, "selective advantage must be finite and >= 0")
            }
            ParamError::MutationInvalid => write!(f, "mutation rate must be finite and >= 0"),
            ParamError::EtaOutOfRange => write!(f, "eta must lie strictly between 0 and 1"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParamError {}

impl Parameters {
    /// Validate and construct a parameter set.
    pub fn new(n: u32, s: f64, mu: f64, eta: Option<f64>) -> Result<Self, ParamError> {
        if n == 0 {
            return Err(ParamError::PopulationEmpty);
        }
        if !s.is_finite() || s < 0.0 {
            return Err(ParamError::SelectionInvalid);
        }
        if !mu.is_finite() || mu < 0.0 {
            return Err(ParamError::MutationInvalid);
        }
        if let Some(eta) = eta {
            if !eta.is_finite() || eta <= 0.0 || eta >= 1.0 {
                return Err(ParamError::EtaOutOfRange);
            }
        }
        Ok(Parameters { n, s, mu, eta })
    }

    /// Population size as a float, used in nearly every rate formula.
    #[inline]
    pub fn n_f64(&self) -> f64 {
        f64::from(self.n)
    }

    /// Check the asymptotic parameter regime the limit theorems assume:
    /// mutations rare (`mu < 1/(N ln N)`) and selection not too weak
    /// (`s > N^(-eta)`). Simulation itself works for any valid parameters;
    /// the report only says whether the scaling results should be expected
    /// to show at this size.
    pub fn regime(&self) -> RegimeReport {
        let n = self.n_f64();
        let mu_bound = if self.n > 1 { 1.0 / (n * math::ln(n)) } else { f64::INFINITY };
        let s_floor = self.eta.map(|eta| math::powf(n, -eta));
        let mutation_rare = self.mu < mu_bound;
        let selection_strong = match s_floor {
            Some(floor) => self.s > floor,
            None => false,
        };
        RegimeReport { mu_bound, s_floor, mutation_rare, selection_strong }
    }
}

/// Outcome of [`Parameters::regime`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    /// Upper bound `1/(N ln N)` that `mu` is compared against.
    pub mu_bound: f64,
    /// Lower bound `N^(-eta)` that `s` is compared against (`None` when the
    /// parameter set carries no `eta`).
    pub s_floor: Option<f64>,
    /// `mu < mu_bound`.
    pub mutation_rare: bool,
    /// `s > s_floor`; false when `eta` is absent.
    pub selection_strong: bool,
}

impl RegimeReport {
    /// Both regime conditions hold.
    pub fn in_regime(&self) -> bool {
        self.mutation_rare && self.selection_strong
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_standard_parameters() {
        let p = Parameters::new(1000, 0.1, 1e-6, Some(0.5)).unwrap();
        assert_eq!(p.n, 1000);
        assert_eq!(p.n_f64(), 1000.0);
    }

    #[test]
    fn rejects_each_bad_field() {
        assert_eq!(Parameters::new(0, 0.1, 1e-6, None), Err(ParamError::PopulationEmpty));
        assert_eq!(Parameters::new(10, -0.1, 1e-6, None), Err(ParamError::SelectionInvalid));
        assert_eq!(
            Parameters::new(10, f64::NAN, 1e-6, None),
            Err(ParamError::SelectionInvalid)
        );
        assert_eq!(Parameters::new(10, 0.1, -1e-6, None), Err(ParamError::MutationInvalid));
        assert_eq!(
            Parameters::new(10, 0.1, f64::INFINITY, None),
            Err(ParamError::MutationInvalid)
        );
        assert_eq!(Parameters::new(10, 0.1, 1e-6, Some(0.0)), Err(ParamError::EtaOutOfRange));
        assert_eq!(Parameters::new(10, 0.1, 1e-6, Some(1.0)), Err(ParamError::EtaOutOfRange));
    }

    #[test]
    fn neutral_and_mutationless_parameters_are_valid() {
        // s = 0 supports the neutral-fixation checks, mu = 0 the
        // fixed-initial-condition sweep experiments.
        assert!(Parameters::new(100, 0.0, 1e-6, None).is_ok());
        assert!(Parameters::new(100, 0.1, 0.0, None).is_ok());
    }

    #[test]
    fn regime_report_matches_hand_computation() {
        // N = 1000: 1/(N ln N) = 1/(1000 * 6.90776) = 1.4476e-4.
        let p = Parameters::new(1000, 0.1, 1e-7, Some(0.5)).unwrap();
        let r = p.regime();
        assert!((r.mu_bound - 1.4476482730108395e-4).abs() < 1e-18);
        // N^(-1/2) = 0.0316...; s = 0.1 exceeds it.
        assert!((r.s_floor.unwrap() - 0.03162277660168379).abs() < 1e-15);
        assert!(r.mutation_rare && r.selection_strong && r.in_regime());

        // Same N with mu too large fails the first condition.
        let p = Parameters::new(1000, 0.1, 1e-3, Some(0.5)).unwrap();
        assert!(!p.regime().mutation_rare);
        assert!(!p.regime().in_regime());

        // Without eta the selection condition cannot be certified.
        let p = Parameters::new(1000, 0.1, 1e-7, None).unwrap();
        assert!(p.regime().s_floor.is_none());
        assert!(!p.regime().selection_strong);
    }
}
