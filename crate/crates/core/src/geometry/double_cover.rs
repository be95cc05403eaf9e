//! The double cover `SL₂(ℝ) × SL₂(ℝ) → SO⁺(2, 2)` of the determinant form.

use nalgebra::{DMatrix, Matrix2};

use super::GeometryError;

const DET_TOLERANCE: f64 = 1e-10;

fn check_unimodular(g: &Matrix2<f64>) -> Result<(), GeometryError> {
    let det = g.determinant();
    if (det - 1.0).abs() > DET_TOLERANCE {
        return Err(GeometryError::NotUnimodular(det));
    }
    Ok(())
}

/// Matrix of `M ↦ g₁·M·g₂ᵀ` on `M = [[a, b], [c, d]]` in coordinates `(a, b, c, d)`.
///
/// With row-major vectorization this is the Kronecker product `g₁ ⊗ g₂`.
pub fn iota(g1: &Matrix2<f64>, g2: &Matrix2<f64>) -> Result<DMatrix<f64>, GeometryError> {
    check_unimodular(g1)?;
    check_unimodular(g2)?;
    Ok(DMatrix::from_fn(4, 4, |r, c| {
        g1[(r / 2, c / 2)] * g2[(r % 2, c % 2)]
    }))
}

/// `t(g) = 2·log σ_max(g)`, computed as `arccosh(‖g‖_F² / 2)`.
pub fn sl2_t(g: &Matrix2<f64>) -> Result<f64, GeometryError> {
    check_unimodular(g)?;
    Ok((0.5 * g.norm_squared()).max(1.0).acosh())
}

/// Membership of `ι(g₁, g₂)` in the well-balanced ball: `max(t(g₁), t(g₂)) ≤ log T`.
pub fn wb_ball_contains(
    g1: &Matrix2<f64>,
    g2: &Matrix2<f64>,
    t: f64,
) -> Result<bool, GeometryError> {
    Ok(sl2_t(g1)?.max(sl2_t(g2)?) <= t.ln())
}

/// Membership of `ι(g₁, g₂)` in the full norm ball: `t(g₁) + t(g₂) ≤ 2·log T`.
pub fn full_ball_contains(
    g1: &Matrix2<f64>,
    g2: &Matrix2<f64>,
    t: f64,
) -> Result<bool, GeometryError> {
    Ok(sl2_t(g1)? + sl2_t(g2)? <= 2.0 * t.ln())
}
