//! Utility functions and their convex conjugates.
//!
//! ```text
//! V(y) = sup_{x ≥ 0} [U(x) − x y]
//!
//! log          V(y) = −log y − 1
//! x^p / p      V(y) = (1 − p)/p · y^{p/(p−1)}
//! −e^{−λx}     V(y) = (y/λ)(log(y/λ) − 1)   for y < λ,   −1 otherwise
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Log,
    /// `x^p / p` with `p ∈ (−∞, 0) ∪ (0, 1)`.
    Power { p: f64 },
    /// `−e^{−λx}` with `λ > 0`.
    Exponential { lambda: f64 },
}

impl UtilitySpec {
    pub fn power(p: f64) -> Result<Self> {
        let u = UtilitySpec::Power { p };
        u.validate()?;
        Ok(u)
    }

    pub fn exponential(lambda: f64) -> Result<Self> {
        let u = UtilitySpec::Exponential { lambda };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Log => Ok(()),
            UtilitySpec::Power { p } if p.is_finite() && p < 1.0 && p != 0.0 => Ok(()),
            UtilitySpec::Power { p } => Err(Error::config("utility.p", format!("need p < 1, p != 0, got {p}"))),
            UtilitySpec::Exponential { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            UtilitySpec::Exponential { lambda } => {
                Err(Error::config("utility.lambda", format!("need lambda > 0, got {lambda}")))
            }
        }
    }

    /// `U(0) > −∞`.
    pub fn bounded_below(&self) -> bool {
        match *self {
            UtilitySpec::Log => false,
            UtilitySpec::Power { p } => p > 0.0,
            UtilitySpec::Exponential { .. } => true,
        }
    }

    /// `U(x)`; `−∞` at `x = 0` where the utility is unbounded below.
    pub fn u(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Log => x.ln(),
            UtilitySpec::Power { p } => x.powf(p) / p,
            UtilitySpec::Exponential { lambda } => -(-lambda * x).exp(),
        }
    }

    /// `U'(x)`.
    pub fn u_prime(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Log => 1.0 / x,
            UtilitySpec::Power { p } => x.powf(p - 1.0),
            UtilitySpec::Exponential { lambda } => lambda * (-lambda * x).exp(),
        }
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilitySpec::Log => f.write_str("log"),
            UtilitySpec::Power { p } => write!(f, "power:{p}"),
            UtilitySpec::Exponential { lambda } => write!(f, "exp:{lambda}"),
        }
    }
}

/// Parses `log`, `power:<p>` or `exp:<lambda>`.
impl FromStr for UtilitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::config("utility", format!("`{kind}` needs a parameter, e.g. `{kind}:0.5`")))?
                .parse::<f64>()
                .map_err(|e| Error::config("utility", e.to_string()))
        };
        match kind {
            "log" if arg.is_none() => Ok(UtilitySpec::Log),
            "power" => UtilitySpec::power(num(arg)?),
            "exp" | "exponential" => UtilitySpec::exponential(num(arg)?),
            _ => Err(Error::config("utility", format!("unknown utility `{s}` (log | power:<p> | exp:<lambda>)"))),
        }
    }
}

/// `V(y) = sup_{x ≥ 0}[U(x) − xy]` in closed form. `y < 0` yields `+∞`.
pub fn eval_conjugate(utility: &UtilitySpec, y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(Error::Domain("conjugate evaluated at NaN".into()));
    }
    if y < 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(match *utility {
        UtilitySpec::Log => -y.ln() - 1.0,
        UtilitySpec::Power { p } => {
            if y == 0.0 {
                if p > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                (1.0 - p) / p * y.powf(p / (p - 1.0))
            }
        }
        UtilitySpec::Exponential { lambda } => {
            if y >= lambda {
                -1.0
            } else if y == 0.0 {
                0.0
            } else {
                let r = y / lambda;
                r * (r.ln() - 1.0)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::golden_section_max;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert_eq!(eval_conjugate(&UtilitySpec::Log, 1.0).unwrap(), -1.0);
        let v = eval_conjugate(&UtilitySpec::Power { p: 0.5 }, 0.5).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        assert_eq!(eval_conjugate(&UtilitySpec::Exponential { lambda: 1.0 }, 2.0).unwrap(), -1.0);
        assert_eq!(eval_conjugate(&UtilitySpec::Log, -1.0).unwrap(), f64::INFINITY);
        assert!(eval_conjugate(&UtilitySpec::Log, f64::NAN).is_err());
    }

    #[test]
    fn parse_and_display() {
        for s in ["log", "power:0.5", "power:-2", "exp:1.5"] {
            let u: UtilitySpec = s.parse().unwrap();
            assert_eq!(u.to_string(), s);
        }
        assert!("power:1".parse::<UtilitySpec>().is_err());
        assert!("exp:0".parse::<UtilitySpec>().is_err());
        assert!("nope".parse::<UtilitySpec>().is_err());
    }

    fn numeric_conjugate(u: &UtilitySpec, y: f64) -> f64 {
        // x ↦ U(x) − xy is concave; search on a log scale.
        let g = |s: f64| {
            let x = s.exp();
            u.u(x) - x * y
        };
        let (_, interior) = golden_section_max(g, -30.0, 30.0, 1e-12);
        let boundary = if u.u(0.0).is_finite() { u.u(0.0) } else { f64::NEG_INFINITY };
        interior.max(boundary)
    }

    proptest! {
        #[test]
        fn matches_numeric_maximization(
            y in 0.05f64..5.0,
            p in prop_oneof![-3.0f64..-0.1, 0.1f64..0.9],
            lambda in 0.2f64..3.0,
        ) {
            for u in [UtilitySpec::Log, UtilitySpec::Power { p }, UtilitySpec::Exponential { lambda }] {
                let exact = eval_conjugate(&u, y).unwrap();
                let numeric = numeric_conjugate(&u, y);
                prop_assert!((exact - numeric).abs() < 1e-7 * (1.0 + exact.abs()), "{u}: {exact} vs {numeric}");
            }
        }

        #[test]
        fn conjugate_is_convex_and_nonincreasing(y in 0.05f64..5.0, h in 0.001f64..0.5, p in 0.1f64..0.9) {
            for u in [UtilitySpec::Log, UtilitySpec::Power { p }, UtilitySpec::Exponential { lambda: 1.0 }] {
                let (a, b, c) = (
                    eval_conjugate(&u, y).unwrap(),
                    eval_conjugate(&u, y + h).unwrap(),
                    eval_conjugate(&u, y + 2.0 * h).unwrap(),
                );
                prop_assert!(b <= a + 1e-12);
                prop_assert!(b <= 0.5 * (a + c) + 1e-10 * (1.0 + a.abs()));
            }
        }
    }
}
