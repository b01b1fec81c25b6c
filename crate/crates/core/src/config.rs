//! Hyper-parameters of the weight space and their resolution against a
//! concrete pixel count.
//!
//! The feasible weightings are `{w : ||w||_p <= gamma, ||w||_inf <= tau}` with
//! `gamma = n^(-1/q)` (the p-norm of the uniform weighting `1/n`) and
//! `tau = gamma * m^(-1/p)`, so that `m = (gamma / tau)^p`. The user-facing
//! parametrization is `(p, m)`; `m` bounds from below how many pixels the
//! optimal weighting supports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// How `m` is specified: an absolute pixel count or a fraction of the valid
/// pixels seen by each call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MSpec {
    Absolute(f64),
    Fraction(f64),
}

impl MSpec {
    /// Resolves `m` against `n` pixels.
    ///
    /// Fractions are clamped into `[1, n]` (a 25% budget on a 2-pixel crop
    /// still means one pixel). Absolute values must already lie in `[1, n]`.
    pub fn resolve(self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::EmptyPixelSet);
        }
        let nf = n as f64;
        match self {
            MSpec::Absolute(m) => {
                if !(1.0..=nf).contains(&m) {
                    return Err(Error::InvalidM { m, n });
                }
                Ok(m)
            }
            MSpec::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidFraction(f));
                }
                Ok((f * nf).clamp(1.0, nf))
            }
        }
    }
}

impl fmt::Display for MSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MSpec::Absolute(m) => write!(f, "{m}"),
            MSpec::Fraction(frac) => write!(f, "{}%", frac * 100.0),
        }
    }
}

impl FromStr for MSpec {
    type Err = Error;

    /// Parses `"25%"` as a fraction and `"25"` as an absolute count.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(pct) = s.strip_suffix('%') {
            let v: f64 = pct
                .trim()
                .parse()
                .map_err(|_| Error::invalid("m", format!("cannot parse percentage {s:?}")))?;
            if !(v > 0.0 && v <= 100.0) {
                return Err(Error::InvalidFraction(v / 100.0));
            }
            Ok(MSpec::Fraction(v / 100.0))
        } else {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::invalid("m", format!("cannot parse {s:?}")))?;
            if !(v.is_finite() && v >= 1.0) {
                return Err(Error::invalid("m", format!("absolute m must be >= 1, got {v}")));
            }
            Ok(MSpec::Absolute(v))
        }
    }
}

impl Serialize for MSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(MSpec::Absolute(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a norm exponent; `"inf"` (or `"∞"`) denotes the max-norm.
pub fn parse_p(s: &str) -> Result<f64> {
    let s = s.trim();
    let p = match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "∞" => f64::INFINITY,
        _ => s
            .parse::<f64>()
            .map_err(|_| Error::invalid("p", format!("cannot parse {s:?}")))?,
    };
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidP(p));
    }
    Ok(p)
}

pub fn format_p(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p}")
    }
}

/// Serde adapter writing an infinite exponent as the string `"inf"`.
pub mod p_serde {
    use super::*;

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v >= 1.0 => Ok(v),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("p must be >= 1, got {v}"))),
            Raw::Str(s) => parse_p(&s).map_err(serde::de::Error::custom),
        }
    }

    /// The same encoding for `Option<f64>` fields.
    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(p: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
            match p {
                Some(p) => super::serialize(p, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
            super::deserialize(d).map(Some)
        }
    }
}

/// The `(p, m)` hyper-parameters of loss max-pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingConfig {
    #[serde(with = "p_serde")]
    pub p: f64,
    pub m: MSpec,
}

impl PoolingConfig {
    pub fn new(p: f64, m: MSpec) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidP(p));
        }
        if let MSpec::Fraction(f) = m {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidFraction(f));
            }
        }
        Ok(Self { p, m })
    }

    pub fn absolute(p: f64, m: f64) -> Result<Self> {
        Self::new(p, MSpec::Absolute(m))
    }

    pub fn fraction(p: f64, frac: f64) -> Result<Self> {
        Self::new(p, MSpec::Fraction(frac))
    }

    pub fn resolve(&self, n: usize) -> Result<PoolingParams> {
        derive_parameters(self.p, self.m, n)
    }
}

impl Default for PoolingConfig {
    /// `p = 1.3` with `m` at 25% of the valid pixels.
    fn default() -> Self {
        Self {
            p: 1.3,
            m: MSpec::Fraction(0.25),
        }
    }
}

/// Fully resolved weight-space parameters for a given pixel count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolingParams {
    pub n: usize,
    pub p: f64,
    /// Dual exponent `p / (p - 1)`; infinite for `p = 1`, one for `p = inf`.
    pub q: f64,
    pub gamma: f64,
    pub tau: f64,
    pub m: f64,
}

impl PoolingParams {
    pub fn is_max_norm_limit(&self) -> bool {
        self.p.is_infinite()
    }
}

/// Resolves `(p, m)` against `n` pixels into `(q, gamma, tau, m)`.
pub fn derive_parameters(p: f64, m_spec: MSpec, n: usize) -> Result<PoolingParams> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidP(p));
    }
    let m = m_spec.resolve(n)?;
    let nf = n as f64;
    let (q, gamma, tau) = if p == 1.0 {
        (f64::INFINITY, 1.0, 1.0 / m)
    } else if p.is_infinite() {
        // tau = gamma * m^(-1/p) -> gamma as p -> inf
        (1.0, 1.0 / nf, 1.0 / nf)
    } else {
        let q = p / (p - 1.0);
        let gamma = nf.powf(-1.0 / q);
        let tau = if m == nf { 1.0 / nf } else { gamma * m.powf(-1.0 / p) };
        (q, gamma, tau)
    };
    Ok(PoolingParams {
        n,
        p,
        q,
        gamma,
        tau,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn p2_m1_n2() {
        let r = derive_parameters(2.0, MSpec::Absolute(1.0), 2).unwrap();
        assert_eq!(r.q, 2.0);
        assert!(close(r.gamma, std::f64::consts::FRAC_1_SQRT_2, 1e-15));
        assert!(close(r.tau, std::f64::consts::FRAC_1_SQRT_2, 1e-15));
    }

    #[test]
    fn p1_limit() {
        let r = derive_parameters(1.0, MSpec::Absolute(2.0), 4).unwrap();
        assert!(r.q.is_infinite());
        assert_eq!(r.gamma, 1.0);
        assert_eq!(r.tau, 0.5);
    }

    #[test]
    fn p13_quarter_of_100() {
        // reference values evaluated at 40 significant digits
        let r = derive_parameters(1.3, MSpec::Fraction(0.25), 100).unwrap();
        assert_eq!(r.m, 25.0);
        assert!(close(r.q, 4.333_333_333_333_333, 1e-14));
        assert!(close(r.gamma, 0.345_510_729_459_221_93, 1e-14));
        assert!(close(r.tau, 0.029_048_457_122_286_5, 1e-13));
    }

    #[test]
    fn max_norm_limit() {
        let r = derive_parameters(f64::INFINITY, MSpec::Absolute(3.0), 10).unwrap();
        assert_eq!(r.q, 1.0);
        assert_eq!(r.gamma, 0.1);
        assert_eq!(r.tau, 0.1);
    }

    #[test]
    fn m_relation_holds() {
        for &(p, m, n) in &[(1.5, 3.0, 10), (2.0, 7.5, 9), (4.0, 1.0, 50)] {
            let r = derive_parameters(p, MSpec::Absolute(m), n).unwrap();
            assert!(close((r.gamma / r.tau).powf(p), m, 1e-12));
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(matches!(
            derive_parameters(0.5, MSpec::Absolute(1.0), 3),
            Err(Error::InvalidP(_))
        ));
        assert!(matches!(
            derive_parameters(2.0, MSpec::Absolute(4.0), 3),
            Err(Error::InvalidM { .. })
        ));
        assert!(matches!(
            derive_parameters(2.0, MSpec::Absolute(0.5), 3),
            Err(Error::InvalidM { .. })
        ));
        assert!(matches!(
            derive_parameters(2.0, MSpec::Absolute(1.0), 0),
            Err(Error::EmptyPixelSet)
        ));
        assert!(derive_parameters(f64::NAN, MSpec::Absolute(1.0), 3).is_err());
    }

    #[test]
    fn fraction_is_clamped() {
        assert_eq!(MSpec::Fraction(0.25).resolve(2).unwrap(), 1.0);
        assert_eq!(MSpec::Fraction(1.0).resolve(7).unwrap(), 7.0);
        assert!(MSpec::Fraction(0.0).resolve(7).is_err());
        assert!(MSpec::Fraction(1.5).resolve(7).is_err());
    }

    #[test]
    fn parse_m_and_p() {
        assert_eq!("25%".parse::<MSpec>().unwrap(), MSpec::Fraction(0.25));
        assert_eq!("25".parse::<MSpec>().unwrap(), MSpec::Absolute(25.0));
        assert!("0%".parse::<MSpec>().is_err());
        assert!("abc".parse::<MSpec>().is_err());
        assert!(parse_p("inf").unwrap().is_infinite());
        assert_eq!(parse_p("1.3").unwrap(), 1.3);
        assert!(parse_p("0.9").is_err());
    }

    #[test]
    fn serde_shape() {
        let c = PoolingConfig::fraction(f64::INFINITY, 0.25).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"p":"inf","m":"25%"}"#);
        let back: PoolingConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let abs: PoolingConfig = serde_json::from_str(r#"{"p":1.3,"m":12}"#).unwrap();
        assert_eq!(abs.m, MSpec::Absolute(12.0));
        assert!(serde_json::from_str::<PoolingConfig>(r#"{"p":0.5,"m":1}"#).is_err());
    }
}
