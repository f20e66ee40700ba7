//! CRRA utility functions, their convex conjugates, and Fenchel-inequality
//! primitives.
//!
//! Power utility `U(x) = x^p / p` (`p < 1`, `p != 0`) and logarithmic
//! utility `U(x) = log x` are supported. The conjugate exponent `q`
//! satisfies `1 - q = 1/(1 - p)`, i.e. `q = p/(p - 1)`; for log utility
//! `q = 0` by convention. The conjugate is `V(y) = -y^q / q` for power and
//! `V(y) = -(1 + log y)` for log.
//!
//! Log utility is its own variant, not a `p -> 0` limit, to avoid 0/0 in
//! `x^p / p`.

use crate::error::{Error, Result};

/// A CRRA preference together with its derived conjugate exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilitySpec {
    /// `U(x) = x^p / p`, `p < 1`, `p != 0`.
    Power { p: f64, q: f64 },
    /// `U(x) = log x`; formally `p = q = 0`.
    Log,
}

impl UtilitySpec {
    pub fn power(p: f64) -> Result<Self> {
        if !p.is_finite() || p >= 1.0 || p == 0.0 {
            return Err(Error::domain(
                "UtilitySpec::power",
                format!("require p < 1 and p != 0, got p = {p}"),
            ));
        }
        Ok(UtilitySpec::Power { p, q: p / (p - 1.0) })
    }

    pub fn log() -> Self {
        UtilitySpec::Log
    }

    /// The power exponent; 0 for log utility.
    pub fn p(&self) -> f64 {
        match self {
            UtilitySpec::Power { p, .. } => *p,
            UtilitySpec::Log => 0.0,
        }
    }

    /// The conjugate exponent; 0 for log utility.
    pub fn q(&self) -> f64 {
        match self {
            UtilitySpec::Power { q, .. } => *q,
            UtilitySpec::Log => 0.0,
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, UtilitySpec::Log)
    }
}

fn check_positive(op: &'static str, name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::domain(op, format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// `U(x)`.
pub fn u_value(u: &UtilitySpec, x: f64) -> Result<f64> {
    check_positive("u_value", "x", x)?;
    Ok(match u {
        UtilitySpec::Power { p, .. } => x.powf(*p) / p,
        UtilitySpec::Log => x.ln(),
    })
}

/// Marginal utility `U'(x) = x^{p-1}` (power) or `1/x` (log).
pub fn marginal(u: &UtilitySpec, x: f64) -> Result<f64> {
    check_positive("marginal", "x", x)?;
    Ok(match u {
        UtilitySpec::Power { p, .. } => x.powf(p - 1.0),
        UtilitySpec::Log => 1.0 / x,
    })
}

/// Inverse of marginal utility, `I(y) = (U')^{-1}(y)`.
pub fn inverse_marginal(u: &UtilitySpec, y: f64) -> Result<f64> {
    check_positive("inverse_marginal", "y", y)?;
    Ok(match u {
        UtilitySpec::Power { p, .. } => y.powf(1.0 / (p - 1.0)),
        UtilitySpec::Log => 1.0 / y,
    })
}

/// Convex conjugate `V(y) = sup_x [U(x) - xy]`.
///
/// Closed forms: `-y^q / q` for power, `-(1 + log y)` for log.
pub fn conjugate_value(u: &UtilitySpec, y: f64) -> Result<f64> {
    check_positive("conjugate_value", "y", y)?;
    Ok(match u {
        UtilitySpec::Power { q, .. } => -y.powf(*q) / q,
        UtilitySpec::Log => -(1.0 + y.ln()),
    })
}

/// `V'(y) = -I(y)`.
pub fn conjugate_derivative(u: &UtilitySpec, y: f64) -> Result<f64> {
    Ok(-inverse_marginal(u, y)?)
}

/// Fenchel gap `V(y) - U(x) + xy`, non-negative, zero iff `y = U'(x)`.
pub fn fenchel_gap(u: &UtilitySpec, x: f64, y: f64) -> Result<f64> {
    let v = conjugate_value(u, y)?;
    let uu = u_value(u, x)?;
    Ok(v - uu + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pow(p: f64) -> UtilitySpec {
        UtilitySpec::power(p).unwrap()
    }

    #[test]
    fn exponent_identity() {
        for p in [-1.0, 0.5, 0.9] {
            let u = pow(p);
            assert_eq!((1.0 - u.q()) * (1.0 - p), 1.0);
        }
        assert_eq!(UtilitySpec::Log.q(), 0.0);
    }

    #[test]
    fn u_values() {
        assert!((u_value(&pow(0.5), 4.0).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(u_value(&UtilitySpec::Log, 1.0).unwrap(), 0.0);
        assert!((u_value(&pow(-1.0), 2.0).unwrap() - (-0.5)).abs() < 1e-15);
        assert!(u_value(&pow(0.5), 0.0).is_err());
        assert!(u_value(&UtilitySpec::Log, -1.0).is_err());
    }

    #[test]
    fn marginals() {
        assert!((marginal(&pow(0.5), 4.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((marginal(&UtilitySpec::Log, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(marginal(&pow(0.5), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn inverse_marginal_round_trip() {
        for u in [pow(-1.0), pow(0.5), pow(0.9), UtilitySpec::Log] {
            for x in [0.1, 1.0, 10.0] {
                let y = marginal(&u, x).unwrap();
                let back = inverse_marginal(&u, y).unwrap();
                assert!((back - x).abs() / x < 1e-12, "{u:?} x={x}");
            }
        }
        assert!((inverse_marginal(&pow(0.5), 0.5).unwrap() - 4.0).abs() < 1e-12);
        assert!((inverse_marginal(&UtilitySpec::Log, 2.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conjugate_values() {
        // p = 0.5 so q = -1; V(y) = 1/y.
        assert!((conjugate_value(&pow(0.5), 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((conjugate_value(&UtilitySpec::Log, 1.0).unwrap() + 1.0).abs() < 1e-15);
        // Equality case of the Fenchel bound: V(U'(1)) = U(1) - 1*U'(1).
        let u = pow(0.5);
        let v1 = conjugate_value(&u, 1.0).unwrap();
        assert!((v1 - (u_value(&u, 1.0).unwrap() - 1.0)).abs() < 1e-15);
        assert!((v1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conjugate_derivative_matches_central_difference() {
        for u in [pow(-1.0), pow(0.5), UtilitySpec::Log] {
            assert!(
                (conjugate_derivative(&u, 0.5).unwrap() + inverse_marginal(&u, 0.5).unwrap())
                    .abs()
                    < 1e-15
            );
            for y in [0.3, 1.0, 3.0] {
                let h = 1e-5 * y;
                let fd = (conjugate_value(&u, y + h).unwrap()
                    - conjugate_value(&u, y - h).unwrap())
                    / (2.0 * h);
                let d = conjugate_derivative(&u, y).unwrap();
                assert!((fd - d).abs() < 1e-6 * d.abs().max(1.0), "{u:?} y={y}");
            }
        }
        assert!((conjugate_derivative(&pow(0.5), 0.5).unwrap() + 4.0).abs() < 1e-12);
        assert!((conjugate_derivative(&UtilitySpec::Log, 1.0).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn fenchel_gap_cases() {
        // y = U'(x) saturates the bound.
        assert!(fenchel_gap(&pow(0.5), 4.0, 0.5).unwrap().abs() < 1e-12);
        // Direct evaluation: V(2) - U(1) + 2 = 1 - log 2.
        let g = fenchel_gap(&UtilitySpec::Log, 1.0, 2.0).unwrap();
        assert!((g - (1.0 - 2.0_f64.ln())).abs() < 1e-12);
        // Perturbed y is strictly positive.
        for u in [pow(-1.0), pow(0.5), UtilitySpec::Log] {
            for x in [0.2, 1.0, 7.0] {
                let y = marginal(&u, x).unwrap() * 1.05;
                assert!(fenchel_gap(&u, x, y).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn inada_proxies() {
        for u in [pow(-1.0), pow(0.5), pow(0.9), UtilitySpec::Log] {
            assert!(marginal(&u, 1e-200).unwrap() > 1e10);
            assert!(marginal(&u, 1e200).unwrap() < 1e-10);
        }
    }
}
