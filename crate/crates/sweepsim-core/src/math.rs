//! Float math that works with and without `std`.
//!
//! With the `std` feature the intrinsics on `f64` are used directly; in
//! `no_std` builds the same operations come from `libm`. Everything else
//! in the crate calls through these wrappers so the choice is made in
//! exactly one place.

#[cfg(feature = "std")]
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    x.ln()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn ln_1p(x: f64) -> f64 {
    x.ln_1p()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    x.exp()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn exp_m1(x: f64) -> f64 {
    x.exp_m1()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn exp_m1(x: f64) -> f64 {
    libm::expm1(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn sqrt(x: f64) -> f64 {
    x.sqrt()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    x.powf(y)
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn powi(x: f64, n: i32) -> f64 {
    x.powi(n)
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn powi(x: f64, n: i32) -> f64 {
    // libm has no dedicated integer-power routine; pow is exact enough for
    // the small exponents used here.
    libm::pow(x, n as f64)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn floor(x: f64) -> f64 {
    x.floor()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn abs(x: f64) -> f64 {
    x.abs()
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
#[inline(always)]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// `|a - b| <= tol * max(|a|, |b|, 1)`: closeness up to a relative
/// tolerance that degrades gracefully to absolute near zero.
#[inline]
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    let scale = abs(a).max(abs(b)).max(1.0);
    abs(a - b) <= tol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrappers_agree_with_std() {
        assert_eq!(ln(2.0), 2.0f64.ln());
        assert_eq!(ln_1p(0.5), 0.5f64.ln_1p());
        assert_eq!(exp(1.0), 1.0f64.exp());
        assert_eq!(exp_m1(1e-12), 1e-12f64.exp_m1());
        assert_eq!(sqrt(2.0), 2.0f64.sqrt());
        assert_eq!(powf(1.1, 3.5), 1.1f64.powf(3.5));
        assert_eq!(powi(1.1, 7), 1.1f64.powi(7));
        assert_eq!(floor(-1.5), -2.0);
        assert_eq!(abs(-3.0), 3.0);
    }

    #[test]
    fn close_mixes_relative_and_absolute() {
        assert!(close(1e12, 1e12 * (1.0 + 1e-12), 1e-9));
        assert!(!close(1e12, 1e12 * (1.0 + 1e-6), 1e-9));
        assert!(close(0.0, 1e-10, 1e-9));
        assert!(!close(0.0, 1e-6, 1e-9));
    }
}
