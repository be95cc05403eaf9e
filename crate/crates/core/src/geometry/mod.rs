//! Numerical Lie geometry of `SO⁺(p, q)` in standard coordinates.
//!
//! The standard form is `J₀ = diag(1,…,1,−1,…,−1)` with the positive block first.
//! The Cartan subgroup acts by hyperbolic rotations on the coordinate pairs
//! `(i, n−1−i)` for `i < q`; the maximal compact subgroup is `SO(p) × SO(q)`.

mod double_cover;
mod haar;
mod kak;
mod quadrature;
mod sampling;

pub use double_cover::{full_ball_contains, iota, sl2_t, wb_ball_contains};
pub use haar::{ball_volume, ball_volume_with_error, haar_density, BallSpec};
pub use kak::{kak_decompose, Kak};
pub use quadrature::{integrate, Integral};
pub use sampling::{
    gamma_ball_overlap, haar_orthogonal, sample_ball, sample_ball_with_cartan, OverlapEstimate,
    OVERLAP_BLOCK,
};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::forms::{standard_matrix, Signature};

/// Slack allowed when checking chamber inequalities.
pub const CHAMBER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("{0:?} is outside the closed Weyl chamber")]
    ChamberViolation(Vec<f64>),
    #[error("signature {0} is not supported here: {1}")]
    UnsupportedSignature(Signature, &'static str),
    #[error("expected {expected} Cartan coordinates, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not in SO⁺(p,q): {0}")]
    NotInGroup(String),
    #[error("quadrature over rank {0} is not supported (q ≤ 3)")]
    UnsupportedRank(usize),
    #[error("ball radius T = {0} must exceed 1")]
    InvalidRadius(f64),
    #[error("rejection sampler accepted {accepted} of {proposed} proposals")]
    RejectionStall { accepted: u64, proposed: u64 },
    #[error("determinant {0} is not 1")]
    NotUnimodular(f64),
}

fn check_signature(sig: Signature) -> Result<(), GeometryError> {
    if sig.q == 0 {
        return Err(GeometryError::UnsupportedSignature(sig, "need q ≥ 1"));
    }
    if sig.q > sig.p {
        return Err(GeometryError::UnsupportedSignature(sig, "need p ≥ q"));
    }
    Ok(())
}

/// Coordinates `h₁,…,h_q` of an element of the closed positive Weyl chamber.
#[derive(Debug, Clone, PartialEq)]
pub struct CartanVector {
    h: Vec<f64>,
    sig: Signature,
}

impl CartanVector {
    /// Checks `h₁ ≥ … ≥ h_q ≥ 0` (or `h_{q−1} ≥ |h_q|` when `p = q`).
    pub fn new(sig: Signature, h: Vec<f64>) -> Result<Self, GeometryError> {
        check_signature(sig)?;
        if h.len() != sig.q {
            return Err(GeometryError::DimensionMismatch {
                expected: sig.q,
                found: h.len(),
            });
        }
        if !in_chamber(sig, &h) {
            return Err(GeometryError::ChamberViolation(h));
        }
        Ok(Self { h, sig })
    }

    pub fn zero(sig: Signature) -> Result<Self, GeometryError> {
        Self::new(sig, vec![0.0; sig.q])
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn sig(&self) -> Signature {
        self.sig
    }

    /// `log ‖exp H‖_op`: the largest `|h_i|`.
    pub fn log_norm(&self) -> f64 {
        self.h.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

fn in_chamber(sig: Signature, h: &[f64]) -> bool {
    let q = sig.q;
    if h.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let ordered = h
        .windows(2)
        .take(q.saturating_sub(2))
        .all(|w| w[0] >= w[1] - CHAMBER_TOLERANCE);
    if sig.p == sig.q {
        if q == 1 {
            return true;
        }
        ordered && h[q - 2] >= h[q - 1].abs() - CHAMBER_TOLERANCE
    } else {
        let last_pair = q < 2 || h[q - 2] >= h[q - 1] - CHAMBER_TOLERANCE;
        ordered && last_pair && h[q - 1] >= -CHAMBER_TOLERANCE
    }
}

/// `exp H`: a hyperbolic rotation by `h_i` on each coordinate pair `(i, n−1−i)`.
pub fn exp_cartan(h: &CartanVector) -> DMatrix<f64> {
    let n = h.sig.n();
    let mut g = DMatrix::identity(n, n);
    for (i, &hi) in h.h.iter().enumerate() {
        let j = n - 1 - i;
        let (c, s) = (hi.cosh(), hi.sinh());
        g[(i, i)] = c;
        g[(j, j)] = c;
        g[(i, j)] = s;
        g[(j, i)] = s;
    }
    g
}

/// Largest singular value, from the symmetric eigenproblem of `gᵀg`.
pub fn op_norm(g: &DMatrix<f64>) -> f64 {
    let gtg = g.transpose() * g;
    SymmetricEigen::new(gtg).eigenvalues.max().max(0.0).sqrt()
}

/// `‖g‖ = ‖g⁻¹‖_op`.
pub fn paper_norm(g: &DMatrix<f64>) -> Result<f64, GeometryError> {
    let inv = g.clone().try_inverse().ok_or(GeometryError::Singular)?;
    Ok(op_norm(&inv))
}

/// `max |g·J₀·gᵀ − J₀|`.
pub fn group_residual(sig: Signature, g: &DMatrix<f64>) -> f64 {
    let j0 = standard_matrix(sig);
    (g * &j0 * g.transpose() - j0).amax()
}

/// Rotation by `θ` in the first two coordinates: `[[cos θ, sin θ], [−sin θ, cos θ]] ⊕ I`.
pub fn k_theta(theta: f64, n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::identity(n, n);
    let (s, c) = theta.sin_cos();
    k[(0, 0)] = c;
    k[(0, 1)] = s;
    k[(1, 0)] = -s;
    k[(1, 1)] = c;
    k
}

/// Weight `sin(θ)^{n−3}` of `θ` in the decomposition `K = M·k_θ·M`.
pub fn k_theta_density(theta: f64, n: usize) -> f64 {
    theta.sin().powi(n as i32 - 3)
}

/// Rank-one element `a_t` of `SO(n−1, 1)`.
pub fn rank_one(t: f64, n: usize) -> DMatrix<f64> {
    let sig = Signature::new(n - 1, 1);
    exp_cartan(&CartanVector { h: vec![t], sig })
}

/// The `t` with `a_{t₁}·k_θ·a_{t₂} ∈ K·a_t·K`.
///
/// Evaluates `cosh t = cosh t₁ cosh t₂ + cos θ sinh t₁ sinh t₂` through
/// `cosh t − 1 = 2 sinh²((t₁−t₂)/2) + 2 cos²(θ/2) sinh t₁ sinh t₂`, which keeps full
/// relative accuracy for small `t`.
pub fn compose_rank1(t1: f64, theta: f64, t2: f64) -> f64 {
    let half = 0.5 * (t1 - t2);
    let c = (0.5 * theta).cos();
    let y = 2.0 * half.sinh().powi(2) + 2.0 * c * c * t1.sinh() * t2.sinh();
    let y = y.max(0.0);
    (y + (y * (y + 2.0)).sqrt()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SVD;
    use proptest::prelude::*;

    fn cv(p: usize, q: usize, h: &[f64]) -> CartanVector {
        CartanVector::new(Signature::new(p, q), h.to_vec()).unwrap()
    }

    #[test]
    fn chamber_checks() {
        assert!(CartanVector::new(Signature::new(3, 2), vec![1.0, 2.0]).is_err());
        assert!(CartanVector::new(Signature::new(3, 2), vec![1.0, -0.5]).is_err());
        assert!(CartanVector::new(Signature::new(2, 2), vec![1.0, -0.5]).is_ok());
        assert!(CartanVector::new(Signature::new(2, 2), vec![1.0, -1.5]).is_err());
        assert!(CartanVector::new(Signature::new(3, 3), vec![2.0, 1.0, -1.0]).is_ok());
        assert!(CartanVector::new(Signature::new(3, 1), vec![1.0, 0.0]).is_err());
        assert!(CartanVector::new(Signature::new(1, 2), vec![1.0]).is_err());
    }

    #[test]
    fn exp_cartan_examples() {
        let n = 4;
        let g = exp_cartan(&cv(3, 1, &[0.7]));
        assert_eq!(g[(0, 0)], 0.7f64.cosh());
        assert_eq!(g[(n - 1, n - 1)], 0.7f64.cosh());
        assert_eq!(g[(0, n - 1)], 0.7f64.sinh());
        assert_eq!(g[(n - 1, 0)], 0.7f64.sinh());
        assert_eq!(g[(1, 1)], 1.0);
        assert_eq!(
            exp_cartan(&CartanVector::zero(Signature::new(3, 2)).unwrap()),
            DMatrix::identity(5, 5)
        );
    }

    #[test]
    fn exp_cartan_singular_values() {
        let h = cv(4, 2, &[1.3, 0.4]);
        let mut sv: Vec<f64> = SVD::new(exp_cartan(&h), false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let mut expected = vec![
            1.3f64.exp(),
            0.4f64.exp(),
            1.0,
            1.0,
            (-0.4f64).exp(),
            (-1.3f64).exp(),
        ];
        expected.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in sv.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn norm_examples() {
        assert!((op_norm(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-15);
        let g = exp_cartan(&cv(2, 2, &[2.0, 1.0]));
        assert!((op_norm(&g) / 2f64.exp() - 1.0).abs() < 1e-12);
        assert!((paper_norm(&g).unwrap() / 2f64.exp() - 1.0).abs() < 1e-12);
        assert_eq!(
            paper_norm(&DMatrix::zeros(2, 2)),
            Err(GeometryError::Singular)
        );
    }

    #[test]
    fn k_theta_examples() {
        assert_eq!(k_theta(0.0, 3), DMatrix::identity(3, 3));
        let k = k_theta(std::f64::consts::FRAC_PI_2, 3);
        assert!((k[(0, 1)] - 1.0).abs() < 1e-15 && (k[(1, 0)] + 1.0).abs() < 1e-15);
        assert!(k[(0, 0)].abs() < 1e-15);
        assert!((k_theta_density(std::f64::consts::FRAC_PI_2, 4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        assert!((compose_rank1(1.2, 0.0, 0.7) - 1.9).abs() < 1e-12);
        assert!((compose_rank1(1.2, std::f64::consts::PI, 0.7) - 0.5).abs() < 1e-12);
        let t = compose_rank1(1.0, std::f64::consts::FRAC_PI_2, 1.0);
        assert!((t - 1f64.cosh().powi(2).acosh()).abs() < 1e-12);
        assert!((t - 1.513_374_006_596_504).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn exp_cartan_is_in_group(h in proptest::collection::vec(0.0f64..4.0, 3), extra in 0usize..3) {
            let mut h = h;
            h.sort_by(|a, b| b.total_cmp(a));
            let sig = Signature::new(3 + extra, 3);
            let g = exp_cartan(&CartanVector::new(sig, h).unwrap());
            prop_assert!(group_residual(sig, &g) <= 1e-12 * g.amax().powi(2));
            prop_assert!((g.determinant() - 1.0).abs() <= 1e-12 * g.amax().powi(6));
        }

        #[test]
        fn op_norm_matches_svd(entries in proptest::collection::vec(-3.0f64..3.0, 25)) {
            let g = DMatrix::from_row_slice(5, 5, &entries);
            let sv = SVD::new(g.clone(), false, false).singular_values.max();
            prop_assert!((op_norm(&g) - sv).abs() <= 1e-9 * sv.max(1e-300));
        }

        #[test]
        fn compose_matches_matrix_product(t1 in 0.0f64..5.0, theta in 0.0f64..std::f64::consts::PI, t2 in 0.0f64..5.0) {
            let g = rank_one(t1, 3) * k_theta(theta, 3) * rank_one(t2, 3);
            let oracle = op_norm(&g).ln();
            let t = compose_rank1(t1, theta, t2);
            prop_assert!((t - oracle).abs() <= 1e-9);
            let lower = 2.0 * (0.5 * theta).cos().powi(2) * t1.sinh() * t2.sinh();
            prop_assert!(t.cosh() >= lower * (1.0 - 1e-12));
        }
    }
}
