//! Exponent calculus as a function of the signature `(p, q)`.
//!
//! All values are exact rationals. Signatures with `q > p` are reordered to `p ≥ q`
//! before any lookup, since the tables are symmetric under `Q ↦ −Q`.

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::forms::{Rational, Signature};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExponentError {
    #[error("unsupported signature {sig}: {reason}")]
    UnsupportedSignature {
        sig: Signature,
        reason: &'static str,
    },
}

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

fn supported(sig: Signature) -> Result<(i64, i64), ExponentError> {
    let c = sig.canonical();
    if c.q == 0 {
        return Err(ExponentError::UnsupportedSignature {
            sig,
            reason: "form is definite",
        });
    }
    if c.n() < 3 {
        return Err(ExponentError::UnsupportedSignature {
            sig,
            reason: "need p + q ≥ 3",
        });
    }
    Ok((c.p as i64, c.q as i64))
}

/// Bound on the integrability exponent `p(G)` (or `p(π)` in the rank-one and `(2,2)` cases).
pub fn p_bound(sig: Signature) -> Result<Rational, ExponentError> {
    let (p, q) = supported(sig)?;
    let n = p + q;
    Ok(match (p, q) {
        (_, 1) => int(2 * (n - 2)),
        (2, 2) => int(2),
        (3, 2) => int(4),
        (4, 2) | (3, 3) => int(6),
        (5, 2) | (4, 3) | (6, 3) => int(2 * (p - 1)),
        _ => int(n - 2),
    })
}

/// Smallest even integer `l ≥ p_bound / 2`.
pub fn l_rule(p_bound: &Rational) -> i64 {
    let half = p_bound / int(2);
    let mut l = half.ceil().to_integer();
    if (&l % BigInt::from(2)) != BigInt::zero() {
        l += 1;
    }
    i64::try_from(l).expect("p bound fits in i64").max(2)
}

/// Signatures whose `κ₁` does not come from the l-rule.
fn kappa1_override(p: i64, q: i64) -> Option<Rational> {
    match (p, q) {
        (_, 1) => Some(rat(1, 2 * (p + q - 2))),
        (2, 2) => Some(rat(1, 2)),
        (4, 2) | (3, 3) => Some(rat(1, 8)),
        (6, 3) => Some(rat(1, 12)),
        _ => None,
    }
}

pub fn kappa1(sig: Signature) -> Result<Rational, ExponentError> {
    let (p, q) = supported(sig)?;
    if let Some(k) = kappa1_override(p, q) {
        return Ok(k);
    }
    let l = l_rule(&p_bound(sig)?);
    Ok(rat(1, 2 * l))
}

pub fn kappa0(sig: Signature) -> Result<Rational, ExponentError> {
    let (p, q) = supported(sig)?;
    Ok(kappa1(sig)? * int(2 * q * (p - 1)))
}

/// The four-case `n mod 4` table for `κ₁`, valid for `n ≥ 5`.
pub fn kappa1_closed_form(n: usize) -> Result<Rational, ExponentError> {
    if n < 5 {
        return Err(ExponentError::UnsupportedSignature {
            sig: Signature::new(n, 0),
            reason: "closed form needs n ≥ 5",
        });
    }
    let n = n as i64;
    Ok(match n % 4 {
        0 => rat(1, n),
        1 => rat(1, n - 1),
        2 => rat(1, n - 2),
        _ => rat(1, n + 1),
    })
}

/// Upper bound on attainable `κ₁`; the bound is a strict supremum when `p = q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UpperBound {
    #[serde(serialize_with = "ser_rational")]
    pub value: Rational,
    pub strict: bool,
}

pub fn kappa_upper(sig: Signature) -> Result<UpperBound, ExponentError> {
    let (p, q) = supported(sig)?;
    if p < 3 {
        return Err(ExponentError::UnsupportedSignature {
            sig,
            reason: "upper bound needs p ≥ 3",
        });
    }
    Ok(if p > q {
        UpperBound {
            value: rat(1, p - 1),
            strict: false,
        }
    } else {
        UpperBound {
            value: rat(1, p),
            strict: true,
        }
    })
}

/// Placeholder for the logarithmic exponent in the ball-volume law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogExponent {
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExponentProfile {
    pub sig: Signature,
    pub n: usize,
    #[serde(rename = "pG", serialize_with = "ser_rational")]
    pub p_bound: Rational,
    /// `None` where an override replaces the l-rule.
    pub l: Option<i64>,
    #[serde(serialize_with = "ser_rational")]
    pub kappa1: Rational,
    /// `κ₁` is a supremum: every smaller exponent is admissible.
    pub kappa1_is_supremum: bool,
    #[serde(serialize_with = "ser_rational")]
    pub kappa0: Rational,
    pub kappa_upper: Option<UpperBound>,
    pub volume_exponent: usize,
    pub log_exponent_delta: LogExponent,
    pub tempered: bool,
}

pub fn profile(sig: Signature) -> Result<ExponentProfile, ExponentError> {
    let (p, q) = supported(sig)?;
    let canonical = sig.canonical();
    let pg = p_bound(sig)?;
    let l = kappa1_override(p, q).is_none().then(|| l_rule(&pg));
    Ok(ExponentProfile {
        sig: canonical,
        n: canonical.n(),
        p_bound: pg,
        l,
        kappa1: kappa1(sig)?,
        kappa1_is_supremum: true,
        kappa0: kappa0(sig)?,
        kappa_upper: kappa_upper(sig).ok(),
        volume_exponent: (q * (p - 1)) as usize,
        log_exponent_delta: LogExponent::Unknown,
        tempered: matches!((p, q), (2, 1) | (2, 2)),
    })
}

/// `"num/den"`, or `"num"` for integers.
pub fn format_rational(x: &Rational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

fn ser_rational<S: serde::Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(x))
}
