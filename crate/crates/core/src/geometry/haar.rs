//! Haar density in Cartan coordinates and volumes of norm balls.

use super::quadrature::integrate;
use super::{check_signature, CartanVector, GeometryError};
use crate::forms::Signature;

/// `∏_{i<j} sinh(h_i−h_j)·sinh(h_i+h_j) · ∏_i sinh(h_i)^{p−q}`.
pub fn haar_density(h: &CartanVector) -> f64 {
    density_unchecked(h.sig().p - h.sig().q, h.h())
}

fn density_unchecked(excess: usize, h: &[f64]) -> f64 {
    let mut d = 1.0;
    for i in 0..h.len() {
        for j in (i + 1)..h.len() {
            d *= (h[i] - h[j]).sinh() * (h[i] + h[j]).sinh();
        }
        if excess > 0 {
            d *= h[i].sinh().powi(excess as i32);
        }
    }
    d
}

/// The norm ball `{g : ‖g⁻¹‖_op ≤ T}` of `SO⁺(p, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallSpec {
    pub sig: Signature,
    pub t: f64,
}

impl BallSpec {
    pub fn new(sig: Signature, t: f64) -> Result<Self, GeometryError> {
        check_signature(sig)?;
        if !(t > 1.0 && t.is_finite()) {
            return Err(GeometryError::InvalidRadius(t));
        }
        Ok(Self { sig, t })
    }

    /// Chamber bound `h₁ ≤ log T`.
    pub fn log_radius(&self) -> f64 {
        self.t.ln()
    }
}

const INNER_REL: f64 = 1e-11;
const OUTER_REL: f64 = 1e-9;

/// Integral of the Haar density over the chamber part of the ball, with an error estimate.
///
/// The compact factors contribute a constant and are left out.
pub fn ball_volume_with_error(spec: &BallSpec) -> Result<(f64, f64), GeometryError> {
    let (p, q) = (spec.sig.p, spec.sig.q);
    if q > 3 {
        return Err(GeometryError::UnsupportedRank(q));
    }
    let excess = p - q;
    let l = spec.log_radius();
    let symmetric_last = p == q;
    // Lower limit for the last coordinate given the previous one.
    let last_lo = |prev: f64| if symmetric_last { -prev } else { 0.0 };
    let r = match q {
        1 => {
            let lo = if symmetric_last { -l } else { 0.0 };
            integrate(|h1| density_unchecked(excess, &[h1]), lo, l, 0.0, OUTER_REL)
        }
        2 => integrate(
            |h1| {
                integrate(
                    |h2| density_unchecked(excess, &[h1, h2]),
                    last_lo(h1),
                    h1,
                    0.0,
                    INNER_REL,
                )
                .value
            },
            0.0,
            l,
            0.0,
            OUTER_REL,
        ),
        _ => integrate(
            |h1| {
                integrate(
                    |h2| {
                        integrate(
                            |h3| density_unchecked(excess, &[h1, h2, h3]),
                            last_lo(h2),
                            h2,
                            0.0,
                            INNER_REL,
                        )
                        .value
                    },
                    0.0,
                    h1,
                    0.0,
                    INNER_REL,
                )
                .value
            },
            0.0,
            l,
            0.0,
            OUTER_REL,
        ),
    };
    Ok((r.value, r.error))
}

pub fn ball_volume(spec: &BallSpec) -> Result<f64, GeometryError> {
    ball_volume_with_error(spec).map(|(v, _)| v)
}
