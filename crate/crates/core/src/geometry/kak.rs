//! Cartan (KAK) decomposition in standard coordinates.
//!
//! For `g = k₁·exp(H)·k₂` the off-diagonal `p×q` block of `g` equals
//! `A₁·E·diag(sinh h)·F·D₂`, where `E` embeds the first `q` coordinates and `F`
//! reverses them. Its singular value decomposition therefore yields `H`, the first
//! `q` columns of `A₁` and all of `D₂`; the remaining factors follow from the
//! diagonal blocks.

use nalgebra::{DMatrix, DVector};

use super::{check_signature, exp_cartan, group_residual, CartanVector, GeometryError};
use crate::forms::Signature;

/// Membership tolerance for the input of [`kak_decompose`].
pub const GROUP_TOLERANCE: f64 = 1e-8;

/// Entries below this are skipped when fixing column signs.
const SIGN_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Kak {
    pub k1: DMatrix<f64>,
    pub h: CartanVector,
    pub k2: DMatrix<f64>,
}

impl Kak {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.k1 * exp_cartan(&self.h) * &self.k2
    }
}

fn block_diag(a: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), d.nrows());
    let mut m = DMatrix::zeros(p + q, p + q);
    m.view_mut((0, 0), (p, p)).copy_from(a);
    m.view_mut((p, p), (q, q)).copy_from(d);
    m
}

/// Appends orthonormal columns to `x` until it is square; deterministic.
fn complete_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x.nrows();
    let mut cols: Vec<DVector<f64>> = x.column_iter().map(|c| c.into_owned()).collect();
    while cols.len() < p {
        let mut best: Option<DVector<f64>> = None;
        for e in 0..p {
            let mut v = DVector::zeros(p);
            v[e] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&v);
                    v -= c * proj;
                }
            }
            if best.as_ref().is_none_or(|b| v.norm() > b.norm() + 1e-12) {
                best = Some(v);
            }
        }
        let v = best.expect("p ≥ 1");
        let norm = v.norm();
        cols.push(v / norm);
    }
    DMatrix::from_columns(&cols)
}

const JACOBI_SWEEPS: usize = 64;

/// Thin SVD `b = x·diag(σ)·yᵀ` by one-sided Jacobi rotations, `σ` descending.
///
/// Backward stable even for clustered singular values. Columns of `x` for
/// negligible `σ` are filled by [`complete_basis`].
fn jacobi_svd(b: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (p, q) = (b.nrows(), b.ncols());
    let mut w = b.clone();
    let mut v = DMatrix::<f64>::identity(q, q);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..q {
            for j in i + 1..q {
                let a = w.column(i).norm_squared();
                let d = w.column(j).norm_squared();
                let c = w.column(i).dot(&w.column(j));
                if c == 0.0 || c.abs() <= f64::EPSILON * (a * d).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (d - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let cs = 1.0 / t.hypot(1.0);
                let sn = cs * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let (mi, mj) = (m[(r, i)], m[(r, j)]);
                        m[(r, i)] = cs * mi - sn * mj;
                        m[(r, j)] = sn * mi + cs * mj;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..q).map(|i| w.column(i).norm()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let floor = 1e-14 * sigma.first().copied().unwrap_or(0.0).max(1.0);
    let cols: Vec<DVector<f64>> = order
        .iter()
        .filter(|&&i| norms[i] > floor)
        .map(|&i| w.column(i) / norms[i])
        .collect();
    let x = if cols.is_empty() {
        DMatrix::zeros(p, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    let x = complete_basis(&x).columns(0, q).into_owned();
    let y = DMatrix::from_fn(q, q, |r, c| v[(r, order[c])]);
    (sigma, x, y)
}

fn first_significant_sign(col: nalgebra::DVectorView<'_, f64>) -> f64 {
    col.iter()
        .find(|x| x.abs() > SIGN_THRESHOLD)
        .map_or(1.0, |x| x.signum())
}

/// Decomposes `g ∈ SO⁺(J₀)` as `k₁·exp(H)·k₂` with `k₁, k₂ ∈ SO(p)×SO(q)` and `H` in the chamber.
///
/// Sign conventions: singular values are sorted descending, the first significant entry of
/// each of the first `q` columns of `k₁` is positive, `det D₂ = 1` is restored by flipping the
/// last singular pair, and for `p = q` the sign of `h_q` absorbs `det A₁`.
pub fn kak_decompose(sig: Signature, g: &DMatrix<f64>) -> Result<Kak, GeometryError> {
    check_signature(sig)?;
    let (p, q, n) = (sig.p, sig.q, sig.n());
    if g.nrows() != n || g.ncols() != n {
        return Err(GeometryError::NotInGroup(format!(
            "shape {}×{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let residual = group_residual(sig, g) / g.amax().powi(2).max(1.0);
    if !(residual <= GROUP_TOLERANCE) {
        return Err(GeometryError::NotInGroup(format!(
            "relative residual {residual:e}"
        )));
    }

    let (sigma, mut x, mut y) = jacobi_svd(&g.view((0, p), (p, q)).into_owned());

    for c in 0..q {
        if first_significant_sign(x.column(c)) < 0.0 {
            x.column_mut(c).neg_mut();
            y.column_mut(c).neg_mut();
        }
    }

    // D₂ has row q−1−i equal to Y[:, i]ᵀ.
    let build_d2 = |y: &DMatrix<f64>| DMatrix::from_fn(q, q, |r, c| y[(c, q - 1 - r)]);
    if build_d2(&y).determinant() < 0.0 {
        x.column_mut(q - 1).neg_mut();
        y.column_mut(q - 1).neg_mut();
    }
    let d2 = build_d2(&y);

    let mut h: Vec<f64> = sigma.iter().map(|s| s.asinh()).collect();
    let mut a1 = complete_basis(&x);
    if a1.determinant() < 0.0 {
        if p > q {
            a1.column_mut(p - 1).neg_mut();
        } else {
            a1.column_mut(q - 1).neg_mut();
            h[q - 1] = -h[q - 1];
        }
    }

    let cosh: Vec<f64> = h.iter().map(|x| x.cosh()).collect();
    // A₂ = diag(cosh h, 1)⁻¹·A₁ᵀ·g_pp.
    let mut a2 = a1.transpose() * g.view((0, 0), (p, p));
    for (i, c) in cosh.iter().enumerate() {
        a2.row_mut(i).unscale_mut(*c);
    }
    // D₁ = g_qq·D₂ᵀ·diag(cosh h reversed)⁻¹.
    let mut d1 = g.view((p, p), (q, q)) * d2.transpose();
    for (i, c) in cosh.iter().enumerate() {
        d1.column_mut(q - 1 - i).unscale_mut(*c);
    }
    if a2.determinant() < 0.0 || d1.determinant() < 0.0 {
        return Err(GeometryError::NotInGroup(
            "not in the identity component".into(),
        ));
    }

    let h = CartanVector::new(sig, h)?;
    Ok(Kak {
        k1: block_diag(&a1, &d1),
        h,
        k2: block_diag(&a2, &d2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::haar_orthogonal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_h(sig: Signature, rng: &mut impl Rng) -> Vec<f64> {
        let mut h: Vec<f64> = (0..sig.q).map(|_| rng.random_range(0.0..3.0)).collect();
        h.sort_by(|a, b| b.total_cmp(a));
        if sig.p == sig.q && rng.random_bool(0.5) {
            h[sig.q - 1] = -h[sig.q - 1];
        }
        h
    }

    fn is_orthogonal_block(k: &DMatrix<f64>, p: usize) -> bool {
        let n = k.nrows();
        let ortho = (k.transpose() * k - DMatrix::identity(n, n)).amax() <= 1e-9;
        let off = k
            .view((0, p), (p, n - p))
            .amax()
            .max(k.view((p, 0), (n - p, p)).amax());
        ortho && off <= 1e-9
    }

    #[test]
    fn identity_decomposes_trivially() {
        let sig = Signature::new(3, 2);
        let kak = kak_decompose(sig, &DMatrix::identity(5, 5)).unwrap();
        assert!(kak.h.h().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn cartan_elements_round_trip() {
        let sig = Signature::new(4, 2);
        let h = CartanVector::new(sig, vec![1.5, 0.25]).unwrap();
        let g = exp_cartan(&h);
        let kak = kak_decompose(sig, &g).unwrap();
        assert!((kak.reconstruct() - &g).amax() <= 1e-10);
        for (a, b) in kak.h.h().iter().zip(h.h()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_non_members() {
        let sig = Signature::new(2, 1);
        let mut g = DMatrix::identity(3, 3);
        g[(0, 1)] = 0.5;
        assert!(matches!(
            kak_decompose(sig, &g),
            Err(GeometryError::NotInGroup(_))
        ));
        let mut flip = DMatrix::identity(3, 3);
        flip[(0, 0)] = -1.0;
        flip[(2, 2)] = -1.0;
        assert!(matches!(
            kak_decompose(sig, &flip),
            Err(GeometryError::NotInGroup(_))
        ));
    }

    #[test]
    fn clustered_coordinates_round_trip() {
        let sig = Signature::new(3, 3);
        let h = CartanVector::new(sig, vec![3.3780360489, 3.3743572966, 2.1516554101]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let k1 = block_diag(&haar_orthogonal(3, &mut rng), &haar_orthogonal(3, &mut rng));
            let k2 = block_diag(&haar_orthogonal(3, &mut rng), &haar_orthogonal(3, &mut rng));
            let g = &k1 * exp_cartan(&h) * &k2;
            let kak = kak_decompose(sig, &g).unwrap();
            assert!((kak.reconstruct() - &g).amax() <= 1e-12);
        }
    }

    #[test]
    fn jacobi_svd_handles_rank_deficiency() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let (sigma, x, y) = jacobi_svd(&b);
        assert!((sigma[0] - 5.0).abs() < 1e-14 && sigma[1] < 1e-14);
        assert!((x.transpose() * &x - DMatrix::identity(2, 2)).amax() < 1e-14);
        let back = &x * DMatrix::from_diagonal(&DVector::from_vec(sigma)) * y.transpose();
        assert!((back - b).amax() < 1e-14);
    }

    #[test]
    fn construct_then_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(p, q) in &[(2, 1), (3, 1), (4, 2), (2, 2), (3, 3), (5, 2), (1, 1)] {
            let sig = Signature::new(p, q);
            for _ in 0..200 {
                let h = CartanVector::new(sig, random_h(sig, &mut rng)).unwrap();
                let k1 = block_diag(&haar_orthogonal(p, &mut rng), &haar_orthogonal(q, &mut rng));
                let k2 = block_diag(&haar_orthogonal(p, &mut rng), &haar_orthogonal(q, &mut rng));
                let g = &k1 * exp_cartan(&h) * &k2;
                let kak = kak_decompose(sig, &g).unwrap();
                assert!((kak.reconstruct() - &g).amax() <= 1e-8, "({p},{q})");
                for (a, b) in kak.h.h().iter().zip(h.h()) {
                    assert!((a - b).abs() <= 1e-8, "({p},{q}) {a} vs {b}");
                }
                assert!(is_orthogonal_block(&kak.k1, p) && is_orthogonal_block(&kak.k2, p));
                assert!(kak.k1.determinant() > 0.0 && kak.k2.determinant() > 0.0);
            }
        }
    }
}
