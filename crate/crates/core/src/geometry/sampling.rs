//! Haar-distributed samples from norm balls and Monte Carlo overlap estimates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::haar::BallSpec;
use super::{exp_cartan, group_residual, op_norm, CartanVector, GeometryError};
use crate::seeds;

/// Consecutive rejections after which the Cartan sampler gives up.
const MAX_REJECTIONS: u64 = 100_000;

/// Samples per independently seeded Monte Carlo block.
pub const OVERLAP_BLOCK: usize = 4096;

/// A Haar-random element of `SO(k)`: QR of a Gaussian matrix with the sign of `diag R` removed.
pub fn haar_orthogonal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DMatrix<f64> {
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let z = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

fn block_diag(a: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), d.nrows());
    let mut m = DMatrix::zeros(p + q, p + q);
    m.view_mut((0, 0), (p, p)).copy_from(a);
    m.view_mut((p, p), (q, q)).copy_from(d);
    m
}

/// Draws from `e^{c·h}` truncated to `[0, l]` by inversion.
fn truncated_exponential<R: Rng + ?Sized>(c: f64, l: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if c == 0.0 {
        u * l
    } else {
        ((u * (c * l).exp_m1()).ln_1p() / c).clamp(0.0, l)
    }
}

fn ln_sinh(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else if x > 20.0 {
        x - std::f64::consts::LN_2 + (-2.0 * x).exp().ln_1p()
    } else {
        x.sinh().ln()
    }
}

/// Cartan coordinates distributed by the Haar density on the chamber part of the ball.
///
/// Proposals come from `∏ e^{(p+q−2i)h_i}` on `[0, log T]^q`, which dominates the density
/// after scaling by `4^{−q(q−1)/2}·2^{−q(p−q)}`.
fn sample_cartan<R: Rng + ?Sized>(spec: &BallSpec, rng: &mut R) -> Result<Vec<f64>, GeometryError> {
    let (p, q) = (spec.sig.p, spec.sig.q);
    let l = spec.log_radius();
    let rates: Vec<f64> = (1..=q).map(|i| (p + q - 2 * i) as f64).collect();
    let ln_c = -((q * (q - 1) / 2) as f64) * 4f64.ln() - ((q * (p - q)) as f64) * 2f64.ln();
    let excess = (p - q) as i32;
    let mut h = vec![0.0; q];
    for proposed in 1..=MAX_REJECTIONS {
        for (hi, &c) in h.iter_mut().zip(&rates) {
            *hi = truncated_exponential(c, l, rng);
        }
        if p == q && rng.random_bool(0.5) {
            h[q - 1] = -h[q - 1];
        }
        let ordered = h.windows(2).all(|w| w[0] >= w[1].abs());
        if !ordered {
            continue;
        }
        let mut ln_density = 0.0;
        for i in 0..q {
            for j in (i + 1)..q {
                ln_density += ln_sinh(h[i] - h[j]) + ln_sinh(h[i] + h[j]);
            }
            if excess > 0 {
                ln_density += excess as f64 * ln_sinh(h[i]);
            }
        }
        let ln_envelope = ln_c + rates.iter().zip(&h).map(|(c, x)| c * x.abs()).sum::<f64>();
        let u: f64 = rng.random();
        if u.ln() < ln_density - ln_envelope {
            return Ok(h);
        }
        if proposed == MAX_REJECTIONS {
            break;
        }
    }
    Err(GeometryError::RejectionStall {
        accepted: 0,
        proposed: MAX_REJECTIONS,
    })
}

/// A Haar sample from the ball together with its Cartan coordinates.
pub fn sample_ball_with_cartan<R: Rng + ?Sized>(
    spec: &BallSpec,
    rng: &mut R,
) -> Result<(DMatrix<f64>, CartanVector), GeometryError> {
    let (p, q) = (spec.sig.p, spec.sig.q);
    let h = CartanVector::new(spec.sig, sample_cartan(spec, rng)?)?;
    let k1 = block_diag(&haar_orthogonal(p, rng), &haar_orthogonal(q, rng));
    let k2 = block_diag(&haar_orthogonal(p, rng), &haar_orthogonal(q, rng));
    Ok((k1 * exp_cartan(&h) * k2, h))
}

pub fn sample_ball<R: Rng + ?Sized>(
    spec: &BallSpec,
    rng: &mut R,
) -> Result<DMatrix<f64>, GeometryError> {
    sample_ball_with_cartan(spec, rng).map(|(g, _)| g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapEstimate {
    /// Fraction of Haar samples `g` of the ball with `γg` still in the ball.
    pub fraction: f64,
    /// `√(p̂(1−p̂)/N)`.
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `m(γ·G_T ∩ G_T) / m(G_T)` in standard coordinates.
///
/// Samples are drawn in blocks of [`OVERLAP_BLOCK`], each seeded from `(seed, block index)`,
/// so the estimate depends only on the seed and not on scheduling.
pub fn gamma_ball_overlap(
    gamma: &DMatrix<f64>,
    spec: &BallSpec,
    num_samples: usize,
    seed: u64,
) -> Result<OverlapEstimate, GeometryError> {
    let n = spec.sig.n();
    if gamma.nrows() != n || gamma.ncols() != n {
        return Err(GeometryError::NotInGroup(format!(
            "shape {}×{}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    let residual = group_residual(spec.sig, gamma) / gamma.amax().powi(2).max(1.0);
    if !(residual <= 1e-8) {
        return Err(GeometryError::NotInGroup(format!(
            "relative residual {residual:e}"
        )));
    }
    let blocks = num_samples.div_ceil(OVERLAP_BLOCK);
    let hits = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeds::stream(seed, "overlap", b as u64);
            let size = OVERLAP_BLOCK.min(num_samples - b * OVERLAP_BLOCK);
            let mut hits = 0usize;
            for _ in 0..size {
                let g = sample_ball(spec, &mut rng)?;
                // For elements of O(J₀), ‖x⁻¹‖_op = ‖J₀xᵀJ₀‖_op = ‖x‖_op.
                if op_norm(&(gamma * g)) <= spec.t {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<_>, GeometryError>>()?
        .into_iter()
        .sum::<usize>();
    let n = num_samples.max(1) as f64;
    let fraction = hits as f64 / n;
    Ok(OverlapEstimate {
        fraction,
        stderr: (fraction * (1.0 - fraction) / n).sqrt(),
        samples: num_samples,
    })
}
