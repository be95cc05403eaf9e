//! Integer points of `SO⁺_Q`: enumeration by norm, stabilizers of characters,
//! and shrinking-target experiments on the torus `ℝⁿ/ℤⁿ`.
//!
//! Elements act on row vectors, so `γ` preserves `Q` when `γ·J·γᵀ = J`. The norm of
//! an element is `‖γ⁻¹‖_op`, computed from the exact integer inverse `J·γᵀ·J⁻¹`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::forms::{invert, FormError, QuadraticForm, Rational, StandardNormalizer};
use crate::geometry::op_norm;
use crate::search::{gap_at, min_gap, SearchError, SearchProblem};
use crate::stats::log_log_fit;

/// Relative margin of the floating-point norm filter.
pub const NORM_MARGIN: f64 = 1e-9;

/// Block determinants closer to zero than this are not classified.
pub const COMPONENT_MARGIN: f64 = 1e-6;

/// Largest number of row prefixes the enumerator agrees to visit.
pub const MAX_SEARCH_NODES: f64 = 1e9;

/// Norm slack constant `c` of the torus reduction.
pub const NORM_SLACK: f64 = 2.0;

/// Ratio `κ'/κ` between the target exponent and the tested exponent.
pub const KAPPA_SLACK: f64 = 1.05;

/// Slack allowed on `|Q(v+α) − ξ| ≤ ε` when verifying a reduction.
pub const CHAIN_TOLERANCE: f64 = 1e-9;

const GRID_STEPS: i64 = 8;
const GRID_GAP: f64 = 0.25;
const MAX_N0: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("form entries cannot be scaled to 64-bit integers")]
    NonIntegerForm,
    #[error("search space of about {estimate:.3e} nodes exceeds {MAX_SEARCH_NODES:e}")]
    SearchSpaceTooLarge { estimate: f64 },
    #[error("identity component undecided: block determinant {0:e}")]
    BorderlineComponent(f64),
    #[error("reduction chain violated: {0}")]
    ChainViolation(String),
    #[error("no N ≤ {MAX_N0} makes the target nonempty for xi = {0}")]
    NotFound(f64),
    #[error("target is empty: {0}")]
    EmptyTarget(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// An element of `SO_Q(ℤ)` with its norm `‖γ⁻¹‖_op`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeElement {
    pub n: usize,
    /// Row-major entries of `γ`.
    pub gamma: Vec<i64>,
    /// Row-major entries of `γ⁻¹`.
    pub inverse: Vec<i64>,
    pub norm: f64,
    pub in_identity_component: bool,
    /// The norm lies within the exactness margin of the requested bound.
    pub borderline: bool,
}

impl LatticeElement {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.n, self.gamma.iter().map(|&x| x as f64))
    }

    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.n, self.inverse.iter().map(|&x| x as f64))
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.gamma[i * self.n + j] == i64::from(i == j)))
    }
}

/// `J` scaled to integers, with `J⁻¹ = inv_num / inv_den`.
#[derive(Debug, Clone)]
struct IntegerForm {
    n: usize,
    j: Vec<i128>,
    inv_num: Vec<i128>,
    inv_den: i128,
}

impl IntegerForm {
    fn new(form: &QuadraticForm) -> Result<Self, LatticeError> {
        let n = form.dim();
        let (ints, _) = form
            .integral_scaling()
            .ok_or(LatticeError::NonIntegerForm)?;
        let exact: Vec<Rational> = ints
            .iter()
            .map(|&x| Rational::from_integer(x.into()))
            .collect();
        let inv = invert(n, &exact).ok_or(FormError::SingularForm)?;
        let den = inv
            .iter()
            .fold(num_bigint::BigInt::one(), |acc, x| acc.lcm(x.denom()));
        let inv_num = inv
            .iter()
            .map(|x| (x.numer() * (&den / x.denom())).to_i128())
            .collect::<Option<Vec<_>>>()
            .ok_or(LatticeError::NonIntegerForm)?;
        let inv_den = den.to_i128().ok_or(LatticeError::NonIntegerForm)?;
        Ok(Self {
            n,
            j: ints.into_iter().map(i128::from).collect(),
            inv_num,
            inv_den,
        })
    }

    fn at(&self, i: usize, k: usize) -> i128 {
        self.j[i * self.n + k]
    }

    /// `x·J·yᵀ`.
    fn pair(&self, x: &[i64], y: &[i64]) -> i128 {
        let n = self.n;
        let mut acc = 0i128;
        for i in 0..n {
            if x[i] == 0 {
                continue;
            }
            let row: i128 = (0..n).map(|k| self.at(i, k) * y[k] as i128).sum();
            acc += x[i] as i128 * row;
        }
        acc
    }

    /// `γ·J·γᵀ = J`, exactly.
    fn preserves(&self, gamma: &[i64]) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            (i..n).all(|k| {
                self.pair(&gamma[i * n..(i + 1) * n], &gamma[k * n..(k + 1) * n]) == self.at(i, k)
            })
        })
    }

    /// `J·γᵀ·J⁻¹` for an element preserving the form.
    fn inverse(&self, gamma: &[i64]) -> Option<Vec<i64>> {
        let n = self.n;
        // (J γᵀ)_{ik} = Σ_l J_il γ_kl
        let mut jg = vec![0i128; n * n];
        for i in 0..n {
            for k in 0..n {
                jg[i * n + k] = (0..n)
                    .map(|l| self.at(i, l) * gamma[k * n + l] as i128)
                    .sum();
            }
        }
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                let num: i128 = (0..n)
                    .map(|l| jg[i * n + l] * self.inv_num[l * n + k])
                    .sum();
                if num % self.inv_den != 0 {
                    return None;
                }
                out.push(i64::try_from(num / self.inv_den).ok()?);
            }
        }
        Some(out)
    }
}

/// Exact determinant of a small integer matrix by fraction-free elimination.
fn integer_det(n: usize, m: &[i64]) -> i128 {
    let mut a: Vec<i128> = m.iter().map(|&x| x as i128).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if a[k * n + k] == 0 {
            let Some(r) = (k + 1..n).find(|&r| a[r * n + k] != 0) else {
                return 0;
            };
            for c in 0..n {
                a.swap(k * n + c, r * n + c);
            }
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i * n + j] = (a[i * n + j] * a[k * n + k] - a[i * n + k] * a[k * n + j]) / prev;
            }
        }
        prev = a[k * n + k];
    }
    sign * a[n * n - 1]
}

/// Whether `γ` lies in the identity component, decided in standard coordinates.
///
/// The element is transported to `R·γ·R⁻¹`, which preserves `diag(1,…,1,−1,…,−1)`;
/// it is in `SO⁺` iff its leading `p×p` block has positive determinant.
pub fn component_test(
    gamma: &DMatrix<f64>,
    normalizer: &StandardNormalizer,
) -> Result<bool, LatticeError> {
    let n = normalizer.sig.n();
    if gamma.nrows() != n || gamma.ncols() != n {
        return Err(LatticeError::DimensionMismatch {
            expected: n,
            found: gamma.nrows(),
        });
    }
    let p = normalizer.sig.p;
    let g = normalizer.to_standard(gamma);
    let det = g.view((0, 0), (p, p)).into_owned().determinant();
    if det.abs() < COMPONENT_MARGIN {
        return Err(LatticeError::BorderlineComponent(det));
    }
    Ok(det > 0.0)
}

/// Condition number `‖J‖_op·‖J⁻¹‖_op`.
fn condition_number(form: &QuadraticForm) -> f64 {
    let eig = SymmetricEigen::new(form.real_matrix()).eigenvalues;
    let abs: Vec<f64> = eig.iter().map(|x| x.abs()).collect();
    let hi = abs.iter().cloned().fold(0.0, f64::max);
    let lo = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Extreme eigenvalues of `J`.
fn eigen_range(form: &QuadraticForm) -> (f64, f64) {
    let eig = SymmetricEigen::new(form.real_matrix()).eigenvalues;
    (eig.min(), eig.max())
}

/// Integer vectors `r` with `‖r‖² ≤ bound_sq` and `r·J·rᵀ = target`, in lexicographic order.
///
/// All coordinates but the one with the largest `|J_kk|` are enumerated; that one is solved for.
fn row_candidates(form: &IntegerForm, target: i128, bound_sq: i64) -> Vec<Vec<i64>> {
    let n = form.n;
    let piv = (0..n)
        .max_by_key(|&k| (form.at(k, k).abs(), std::cmp::Reverse(k)))
        .unwrap();
    let free: Vec<usize> = (0..n).filter(|&k| k != piv).collect();
    let mut out = Vec::new();
    let mut x = vec![0i64; n];
    fn walk(
        form: &IntegerForm,
        free: &[usize],
        piv: usize,
        target: i128,
        depth: usize,
        left: i64,
        x: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) {
        if depth == free.len() {
            let m = left.isqrt();
            let a = form.at(piv, piv);
            let mut b = 0i128;
            let mut c = 0i128;
            for &k in free {
                b += 2 * form.at(piv, k) * x[k] as i128;
                for &l in free {
                    c += form.at(k, l) * x[k] as i128 * x[l] as i128;
                }
            }
            let c = c - target;
            let mut roots: Vec<i64> = Vec::new();
            if a != 0 {
                let disc = b * b - 4 * a * c;
                if disc >= 0 {
                    let s = disc.isqrt();
                    if s * s == disc {
                        for num in [-b - s, -b + s] {
                            if num % (2 * a) == 0 {
                                roots.push((num / (2 * a)) as i64);
                            }
                        }
                    }
                }
            } else if b != 0 {
                if c % b == 0 {
                    roots.push((-c / b) as i64);
                }
            } else if c == 0 {
                roots.extend(-m..=m);
            }
            roots.sort_unstable();
            roots.dedup();
            for r in roots {
                if r.abs() <= m {
                    x[piv] = r;
                    out.push(x.clone());
                }
            }
            x[piv] = 0;
            return;
        }
        let k = free[depth];
        let m = left.isqrt();
        for v in -m..=m {
            x[k] = v;
            walk(form, free, piv, target, depth + 1, left - v * v, x, out);
        }
        x[k] = 0;
    }
    walk(form, &free, piv, target, 0, bound_sq, &mut x, &mut out);
    out.sort();
    out
}

/// Bound on the Euclidean norm of each row: `‖rᵢ‖ ≤ ‖γ‖_op ≤ cond₂(J)·‖γ⁻¹‖_op`.
fn row_norm_bound(form: &QuadraticForm, t: f64) -> f64 {
    condition_number(form) * t * (1.0 + NORM_MARGIN) * (1.0 + 1e-9)
}

/// Upper estimate of the nodes visited by [`enumerate_gamma`] while generating rows.
pub fn search_space_estimate(form: &QuadraticForm, t: f64) -> f64 {
    let n = form.dim();
    (2.0 * row_norm_bound(form, t).floor() + 1.0).powi(n as i32 - 1) * n as f64
}

struct Enumeration {
    form: IntegerForm,
    normalizer: StandardNormalizer,
    /// Row indices in the order they are filled.
    order: Vec<usize>,
    /// Candidate rows for each row index.
    cands: Vec<std::sync::Arc<Vec<Vec<i64>>>>,
}

impl Enumeration {
    fn new(qf: &QuadraticForm, t: f64) -> Result<Self, LatticeError> {
        if !(t >= 1.0 && t.is_finite()) {
            return Err(LatticeError::InvalidParameter {
                name: "T",
                reason: format!("{t} is not ≥ 1"),
            });
        }
        let form = IntegerForm::new(qf)?;
        let n = form.n;
        let bound = row_norm_bound(qf, t);
        let estimate = search_space_estimate(qf, t);
        if !(estimate <= MAX_SEARCH_NODES) {
            return Err(LatticeError::SearchSpaceTooLarge { estimate });
        }
        let bound_sq = (bound * bound).floor() as i64;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| std::cmp::Reverse((0..n).filter(|&k| form.at(i, k) != 0).count()));
        let mut cache: Vec<(i128, std::sync::Arc<Vec<Vec<i64>>>)> = Vec::new();
        let mut cands = Vec::with_capacity(n);
        for i in 0..n {
            let target = form.at(i, i);
            let list = match cache.iter().find(|(d, _)| *d == target) {
                Some((_, l)) => l.clone(),
                None => {
                    let l = std::sync::Arc::new(row_candidates(&form, target, bound_sq));
                    cache.push((target, l.clone()));
                    l
                }
            };
            cands.push(list);
        }
        let normalizer = qf.normalize_to_standard()?;
        Ok(Self {
            form,
            normalizer,
            order,
            cands,
        })
    }

    /// Completes the rows after `chosen` (indexed by fill position) by backtracking.
    fn extend(&self, chosen: &mut Vec<Vec<i64>>, found: &mut Vec<Vec<i64>>) {
        let n = self.form.n;
        let depth = chosen.len();
        if depth == n {
            let mut gamma = vec![0i64; n * n];
            for (pos, &row) in self.order.iter().enumerate() {
                gamma[row * n..(row + 1) * n].copy_from_slice(&chosen[pos]);
            }
            found.push(gamma);
            return;
        }
        let row = self.order[depth];
        for cand in self.cands[row].iter() {
            let ok = (0..depth).all(|m| {
                let other = self.order[m];
                self.form.pair(cand, &chosen[m]) == self.form.at(row, other)
            });
            if ok {
                chosen.push(cand.clone());
                self.extend(chosen, found);
                chosen.pop();
            }
        }
    }

    fn element(&self, gamma: Vec<i64>, t: f64) -> Result<Option<LatticeElement>, LatticeError> {
        let n = self.form.n;
        if integer_det(n, &gamma) != 1 {
            return Ok(None);
        }
        let inverse = self
            .form
            .inverse(&gamma)
            .ok_or(LatticeError::NonIntegerForm)?;
        let inv = DMatrix::from_row_iterator(n, n, inverse.iter().map(|&x| x as f64));
        let norm = op_norm(&inv);
        let margin = NORM_MARGIN * t;
        if norm > t + margin {
            return Ok(None);
        }
        let g = DMatrix::from_row_iterator(n, n, gamma.iter().map(|&x| x as f64));
        let in_identity_component = component_test(&g, &self.normalizer)?;
        Ok(Some(LatticeElement {
            n,
            gamma,
            inverse,
            norm,
            in_identity_component,
            borderline: (norm - t).abs() <= margin,
        }))
    }
}

fn sort_elements(v: &mut [LatticeElement]) {
    v.sort_by(|a, b| {
        a.norm
            .total_cmp(&b.norm)
            .then_with(|| a.gamma.cmp(&b.gamma))
    });
}

/// Every `γ ∈ SO_Q(ℤ)` with `‖γ⁻¹‖_op ≤ T`, both components, sorted by `(norm, entries)`.
pub fn enumerate_automorphisms(
    form: &QuadraticForm,
    t: f64,
) -> Result<Vec<LatticeElement>, LatticeError> {
    let en = Enumeration::new(form, t)?;
    let first = en.order[0];
    let per_first: Vec<Result<Vec<LatticeElement>, LatticeError>> = en.cands[first]
        .par_iter()
        .map(|row| {
            let mut found = Vec::new();
            en.extend(&mut vec![row.clone()], &mut found);
            let mut out = Vec::new();
            for gamma in found {
                if let Some(e) = en.element(gamma, t)? {
                    out.push(e);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for part in per_first {
        all.extend(part?);
    }
    sort_elements(&mut all);
    Ok(all)
}

/// `{γ ∈ SO⁺_Q(ℤ) : ‖γ⁻¹‖_op ≤ T}`, sorted by `(norm, entries)`.
///
/// Forms with rational entries are scaled to integers first; this does not change the group.
pub fn enumerate_gamma(form: &QuadraticForm, t: f64) -> Result<Vec<LatticeElement>, LatticeError> {
    let mut all = enumerate_automorphisms(form, t)?;
    all.retain(|e| e.in_identity_component);
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthPoint {
    pub t: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthTable {
    pub points: Vec<GrowthPoint>,
    /// Least-squares slope of `log N` against `log T`.
    pub slope: f64,
    pub r2: f64,
}

fn check_grid(t_grid: &[f64]) -> Result<f64, LatticeError> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t >= 1.0 && t.is_finite())) {
        return Err(LatticeError::InvalidParameter {
            name: "t_grid",
            reason: "needs at least one finite value, all ≥ 1".into(),
        });
    }
    Ok(t_grid.iter().cloned().fold(1.0, f64::max))
}

fn count_by_norm<'a>(
    elements: impl Iterator<Item = &'a LatticeElement> + Clone,
    t_grid: &[f64],
) -> Vec<GrowthPoint> {
    t_grid
        .iter()
        .map(|&t| GrowthPoint {
            t,
            count: elements
                .clone()
                .filter(|e| e.norm <= t + NORM_MARGIN * t)
                .count() as u64,
        })
        .collect()
}

fn growth_table(points: Vec<GrowthPoint>) -> Result<GrowthTable, LatticeError> {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.t, p.count as f64)).unzip();
    let fit = log_log_fit(&x, &y).ok_or(LatticeError::InvalidParameter {
        name: "t_grid",
        reason: "a slope needs at least two distinct radii".into(),
    })?;
    Ok(GrowthTable {
        points,
        slope: fit.slope,
        r2: fit.r2,
    })
}

/// `N(T) = #{γ ∈ Γ : ‖γ⁻¹‖_op ≤ T}` on a grid, from a single enumeration at the largest `T`.
pub fn count_growth(form: &QuadraticForm, t_grid: &[f64]) -> Result<GrowthTable, LatticeError> {
    let t_max = check_grid(t_grid)?;
    let all = enumerate_gamma(form, t_max)?;
    growth_table(count_by_norm(all.iter(), t_grid))
}

/// An integer frequency vector `w` of a character of `ℝⁿ/ℤⁿ` with its dual value `Q*(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterSpec {
    pub w: Vec<i64>,
    pub dual_value: Rational,
}

impl CharacterSpec {
    pub fn new(form: &QuadraticForm, w: Vec<i64>) -> Result<Self, LatticeError> {
        if w.len() != form.dim() {
            return Err(LatticeError::DimensionMismatch {
                expected: form.dim(),
                found: w.len(),
            });
        }
        if w.iter().all(|&x| x == 0) {
            return Err(LatticeError::InvalidParameter {
                name: "w",
                reason: "must be nonzero".into(),
            });
        }
        let exact: Vec<Rational> = w
            .iter()
            .map(|&x| Rational::from_integer(x.into()))
            .collect();
        let dual_value = form.dual().evaluate_exact(&exact)?;
        Ok(Self { w, dual_value })
    }

    /// `w·γᵀ = w`.
    pub fn is_fixed_by(&self, e: &LatticeElement) -> bool {
        let n = e.n;
        (0..n).all(|i| (0..n).map(|k| e.gamma[i * n + k] * self.w[k]).sum::<i64>() == self.w[i])
    }
}

/// Counts of `γ ∈ Γ` with `w·γᵀ = w` and `‖γ⁻¹‖_op ≤ T` on a grid.
pub fn stabilizer_count(
    form: &QuadraticForm,
    w: &CharacterSpec,
    t_grid: &[f64],
) -> Result<Vec<GrowthPoint>, LatticeError> {
    if w.w.len() != form.dim() {
        return Err(LatticeError::DimensionMismatch {
            expected: form.dim(),
            found: w.w.len(),
        });
    }
    let t_max = check_grid(t_grid)?;
    let all = enumerate_gamma(form, t_max)?;
    Ok(count_by_norm(
        all.iter().filter(|e| w.is_fixed_by(e)),
        t_grid,
    ))
}

/// The set `{x : ‖x‖ ≤ N₀, |Q(x) − ξ| ≤ ε}`.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub n0: f64,
    pub xi: f64,
    pub eps: f64,
    pub form: QuadraticForm,
}

impl TargetSpec {
    /// Rejects empty targets.
    ///
    /// `Q` takes every value of `[N₀²·λ_min, N₀²·λ_max]` on the ball, so the target is
    /// nonempty iff that interval meets `[ξ−ε, ξ+ε]`.
    pub fn new(form: QuadraticForm, n0: f64, xi: f64, eps: f64) -> Result<Self, LatticeError> {
        if !(n0 > 0.0 && n0.is_finite()) {
            return Err(LatticeError::InvalidParameter {
                name: "N0",
                reason: format!("{n0} is not > 0"),
            });
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(LatticeError::InvalidParameter {
                name: "eps",
                reason: format!("{eps} is not ≥ 0"),
            });
        }
        if !xi.is_finite() {
            return Err(LatticeError::InvalidParameter {
                name: "xi",
                reason: "not finite".into(),
            });
        }
        let (lo, hi) = eigen_range(&form);
        let (lo, hi) = (n0 * n0 * lo.min(0.0), n0 * n0 * hi.max(0.0));
        if xi + eps < lo || xi - eps > hi {
            return Err(LatticeError::EmptyTarget(format!(
                "Q ranges over [{lo}, {hi}] on the ball, target [{}, {}]",
                xi - eps,
                xi + eps
            )));
        }
        Ok(Self { n0, xi, eps, form })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self, LatticeError> {
        Self::new(self.form.clone(), self.n0, self.xi, eps)
    }
}

/// A `u ∈ ℤⁿ` with `‖β+u‖ ≤ N₀` and `|Q(β+u) − ξ| ≤ ε`, if one exists.
///
/// `u` ranges over the box of radius `⌈N₀⌉+1`. Among witnesses the smallest gap wins,
/// then the smallest `‖β+u‖`, then the lexicographically smallest `u`.
///
/// # Panics
///
/// If `beta` does not have the form's dimension.
pub fn target_contains(beta: &[f64], spec: &TargetSpec) -> Option<Vec<i64>> {
    let n = spec.form.dim();
    assert_eq!(beta.len(), n, "beta has the wrong dimension");
    let r = spec.n0.ceil() as i64 + 1;
    let n0_sq = spec.n0 * spec.n0;
    let mut u = vec![-r; n];
    let mut best: Option<(f64, f64, Vec<i64>)> = None;
    loop {
        let norm_sq: f64 = beta
            .iter()
            .zip(&u)
            .map(|(b, &x)| (b + x as f64).powi(2))
            .sum();
        if norm_sq <= n0_sq {
            let gap = gap_at(&spec.form, beta, spec.xi, &u);
            if gap <= spec.eps {
                let better = match &best {
                    None => true,
                    Some((g, s, _)) => gap < *g || (gap == *g && norm_sq < *s),
                };
                if better {
                    best = Some((gap, norm_sq, u.clone()));
                }
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                return best.map(|(_, _, u)| u);
            }
            k -= 1;
            if u[k] < r {
                u[k] += 1;
                break;
            }
            u[k] = -r;
        }
    }
}

/// Smallest integer `N ≥ 2` for which the grid `(ℤ/8)ⁿ` meets `{‖x‖ ≤ N, |Q(x) − ξ| ≤ 1/4}`.
pub fn choose_n0(form: &QuadraticForm, xi: f64) -> Result<f64, LatticeError> {
    if !form.signature().is_indefinite() {
        return Err(LatticeError::InvalidParameter {
            name: "form",
            reason: "must be indefinite".into(),
        });
    }
    if !xi.is_finite() {
        return Err(LatticeError::InvalidParameter {
            name: "xi",
            reason: "not finite".into(),
        });
    }
    let steps = Rational::from_integer(GRID_STEPS.into());
    let grid_form = form.scaled(&(Rational::one() / (&steps * &steps)))?;
    let (lo, hi) = eigen_range(form);
    let zero = vec![0.0; form.dim()];
    for n in 2..=MAX_N0 {
        let nf = f64::from(n);
        if xi - GRID_GAP > nf * nf * hi || xi + GRID_GAP < nf * nf * lo {
            continue;
        }
        let prob = SearchProblem::new(grid_form.clone(), zero.clone(), xi, nf * GRID_STEPS as f64);
        if min_gap(&prob)?.gap <= GRID_GAP {
            return Ok(nf);
        }
    }
    Err(LatticeError::NotFound(xi))
}

fn euclid(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Turns a torus hit `x = αγ + u ∈ Ã_{N₀,ε}` into `v = u·γ⁻¹` and checks it.
///
/// Asserts `|Q(v+α) − ξ| ≤ ε + 10⁻⁹`, `‖v‖ ≤ N₀·‖γ⁻¹‖_op + ‖α‖` and `‖v‖ ≤ 2cN₀t`.
/// Any failure is reported as [`LatticeError::ChainViolation`].
#[allow(clippy::too_many_arguments)]
pub fn reduction_chain_verify(
    form: &QuadraticForm,
    alpha: &[f64],
    gamma: &LatticeElement,
    u: &[i64],
    spec: &TargetSpec,
    t: f64,
    c: f64,
) -> Result<Vec<i64>, LatticeError> {
    let n = form.dim();
    for len in [alpha.len(), u.len(), gamma.n] {
        if len != n {
            return Err(LatticeError::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    let int_form = IntegerForm::new(form)?;
    if !int_form.preserves(&gamma.gamma) || integer_det(n, &gamma.gamma) != 1 {
        return Err(LatticeError::ChainViolation("γ is not in SO_Q(ℤ)".into()));
    }
    let inverse = int_form
        .inverse(&gamma.gamma)
        .ok_or_else(|| LatticeError::ChainViolation("J·γᵀ·J⁻¹ is not integral".into()))?;
    let v: Vec<i64> = (0..n)
        .map(|k| (0..n).map(|i| u[i] * inverse[i * n + k]).sum())
        .collect();
    let gap = gap_at(form, alpha, spec.xi, &v);
    if !(gap <= spec.eps + CHAIN_TOLERANCE) {
        return Err(LatticeError::ChainViolation(format!(
            "|Q(v+α) − ξ| = {gap:e} exceeds ε = {:e} for v = {v:?}",
            spec.eps
        )));
    }
    let inv_norm = op_norm(&DMatrix::from_row_iterator(
        n,
        n,
        inverse.iter().map(|&x| x as f64),
    ));
    let v_norm = euclid(v.iter().map(|&x| x as f64));
    let alpha_norm = euclid(alpha.iter().cloned());
    let bound = spec.n0 * inv_norm + alpha_norm;
    if !(v_norm <= bound * (1.0 + CHAIN_TOLERANCE)) {
        return Err(LatticeError::ChainViolation(format!(
            "‖v‖ = {v_norm} exceeds N₀‖γ⁻¹‖ + ‖α‖ = {bound}"
        )));
    }
    let outer = 2.0 * c * spec.n0 * t;
    if !(v_norm <= outer * (1.0 + CHAIN_TOLERANCE)) {
        return Err(LatticeError::ChainViolation(format!(
            "‖v‖ = {v_norm} exceeds 2cN₀t = {outer}"
        )));
    }
    Ok(v)
}

/// `α·γ` for a row vector `α`.
pub fn act(alpha: &[f64], gamma: &LatticeElement) -> Vec<f64> {
    let n = gamma.n;
    (0..n)
        .map(|k| {
            (0..n)
                .map(|i| alpha[i] * gamma.gamma[i * n + k] as f64)
                .sum()
        })
        .collect()
}

/// The first `γ` (in list order) with norm ≤ `t` whose image `frac(αγ)` lies in the target.
///
/// Returns the index of `γ`, the torus witness `u'` for `frac(αγ)`, and `u` with `αγ + u = frac(αγ) + u'`.
pub fn first_hit(
    alpha: &[f64],
    gammas: &[LatticeElement],
    spec: &TargetSpec,
    t: f64,
) -> Option<(usize, Vec<i64>, Vec<i64>)> {
    gammas
        .iter()
        .enumerate()
        .filter(|(_, g)| g.norm <= t + NORM_MARGIN * t)
        .find_map(|(id, g)| {
            let x = act(alpha, g);
            let floor: Vec<f64> = x.iter().map(|y| y.floor()).collect();
            let beta: Vec<f64> = x.iter().zip(&floor).map(|(y, f)| y - f).collect();
            let witness = target_contains(&beta, spec)?;
            let u = witness
                .iter()
                .zip(&floor)
                .map(|(&w, &f)| w - f as i64)
                .collect();
            Some((id, witness, u))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitRecord {
    pub shift_id: usize,
    pub t: f64,
    pub eps: f64,
    pub hit: bool,
    /// Index into [`TorusRun::gammas`].
    pub gamma_id: Option<usize>,
    pub witness_u: Option<Vec<i64>>,
    pub v: Option<Vec<i64>>,
    pub verified: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusRun {
    pub n0: f64,
    pub c: f64,
    pub kappa_prime: f64,
    pub gammas: Vec<LatticeElement>,
    pub rows: Vec<HitRecord>,
}

impl TorusRun {
    /// Hit fraction over shifts at each radius of the grid.
    pub fn hit_fractions(&self) -> Vec<(f64, f64)> {
        let mut ts: Vec<f64> = self.rows.iter().map(|r| r.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.into_iter()
            .map(|t| {
                let at: Vec<&HitRecord> = self.rows.iter().filter(|r| r.t == t).collect();
                (
                    t,
                    at.iter().filter(|r| r.hit).count() as f64 / at.len() as f64,
                )
            })
            .collect()
    }

    pub fn all_hits_verified(&self) -> bool {
        self.rows.iter().filter(|r| r.hit).all(|r| r.verified)
    }
}

/// Shared state of a torus run: `N₀`, the enumerated `γ` and one target per radius.
#[derive(Debug, Clone)]
pub struct TorusExperiment {
    pub form: QuadraticForm,
    pub n0: f64,
    pub kappa_prime: f64,
    pub t_grid: Vec<f64>,
    pub gammas: Vec<LatticeElement>,
    specs: Vec<TargetSpec>,
}

impl TorusExperiment {
    /// Chooses `N₀`, enumerates `Γ` up to the largest radius and sets `ε = t^{−κ'}` with `κ' = 1.05κ`.
    pub fn prepare(
        form: &QuadraticForm,
        xi: f64,
        kappa: f64,
        t_grid: &[f64],
    ) -> Result<Self, LatticeError> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(LatticeError::InvalidParameter {
                name: "kappa",
                reason: format!("{kappa} is not > 0"),
            });
        }
        let t_max = check_grid(t_grid)?;
        let n0 = choose_n0(form, xi)?;
        let kappa_prime = KAPPA_SLACK * kappa;
        let gammas = enumerate_gamma(form, t_max)?;
        let base = TargetSpec::new(form.clone(), n0, xi, 1.0)?;
        let specs = t_grid
            .iter()
            .map(|&t| base.with_eps(t.powf(-kappa_prime)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            form: form.clone(),
            n0,
            kappa_prime,
            t_grid: t_grid.to_vec(),
            gammas,
            specs,
        })
    }

    /// One row per radius for the shift `α`.
    pub fn run_shift(
        &self,
        shift_id: usize,
        alpha: &[f64],
    ) -> Result<Vec<HitRecord>, LatticeError> {
        let n = self.form.dim();
        if alpha.len() != n {
            return Err(LatticeError::DimensionMismatch {
                expected: n,
                found: alpha.len(),
            });
        }
        let rows = self
            .t_grid
            .iter()
            .zip(&self.specs)
            .map(|(&t, spec)| {
                let mut rec = HitRecord {
                    shift_id,
                    t,
                    eps: spec.eps,
                    hit: false,
                    gamma_id: None,
                    witness_u: None,
                    v: None,
                    verified: false,
                    diagnostic: None,
                };
                if let Some((id, witness, u)) = first_hit(alpha, &self.gammas, spec, t) {
                    rec.hit = true;
                    rec.gamma_id = Some(id);
                    rec.witness_u = Some(witness);
                    match reduction_chain_verify(
                        &self.form,
                        alpha,
                        &self.gammas[id],
                        &u,
                        spec,
                        t,
                        NORM_SLACK,
                    ) {
                        Ok(v) => {
                            rec.v = Some(v);
                            rec.verified = true;
                        }
                        Err(e) => rec.diagnostic = Some(e.to_string()),
                    }
                }
                rec
            })
            .collect();
        Ok(rows)
    }
}

/// For each shift `α` and radius `t`, looks for `γ ∈ Γ` with `‖γ⁻¹‖_op ≤ t` and
/// `frac(αγ) ∈ A_t`, the torus image of `Ã_{N₀, t^{−κ'}}`, then verifies the reduction.
///
/// Rows are ordered by shift, then by radius as given.
pub fn torus_hit_experiment(
    form: &QuadraticForm,
    xi: f64,
    kappa: f64,
    alphas: &[Vec<f64>],
    t_grid: &[f64],
) -> Result<TorusRun, LatticeError> {
    let exp = TorusExperiment::prepare(form, xi, kappa, t_grid)?;
    let rows = alphas
        .par_iter()
        .enumerate()
        .map(|(id, alpha)| exp.run_shift(id, alpha))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TorusRun {
        n0: exp.n0,
        c: NORM_SLACK,
        kappa_prime: exp.kappa_prime,
        gammas: exp.gammas,
        rows: rows.into_iter().flatten().collect(),
    })
}

/// `true` iff the exact value `Q(w)` of the dual form is negative.
pub fn has_compact_stabilizer(w: &CharacterSpec) -> bool {
    w.dual_value < Rational::zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(d: &[i64]) -> QuadraticForm {
        let rows: Vec<Vec<i64>> = (0..d.len())
            .map(|i| {
                (0..d.len())
                    .map(|j| if i == j { d[i] } else { 0 })
                    .collect()
            })
            .collect();
        QuadraticForm::from_integer_rows(&rows).unwrap()
    }

    fn lorentz3() -> QuadraticForm {
        diag(&[1, 1, -1])
    }

    #[test]
    fn determinant_matches_expansion() {
        assert_eq!(integer_det(3, &[2, 0, 1, 1, 3, 2, 1, 1, 2]), 6);
        assert_eq!(integer_det(2, &[0, 1, 1, 0]), -1);
        assert_eq!(integer_det(3, &[1, 2, 3, 4, 5, 6, 7, 8, 9]), 0);
        assert_eq!(
            integer_det(4, &[0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0]),
            1
        );
    }

    #[test]
    fn unit_ball_of_lorentz_group() {
        let got = enumerate_gamma(&lorentz3(), 1.0).unwrap();
        let mut mats: Vec<Vec<i64>> = got.iter().map(|e| e.gamma.clone()).collect();
        mats.sort();
        let mut expected = vec![
            vec![1, 0, 0, 0, 1, 0, 0, 0, 1],
            vec![0, -1, 0, 1, 0, 0, 0, 0, 1],
            vec![-1, 0, 0, 0, -1, 0, 0, 0, 1],
            vec![0, 1, 0, -1, 0, 0, 0, 0, 1],
        ];
        expected.sort();
        assert_eq!(mats, expected);
        assert!(got.iter().all(|e| e.borderline && e.in_identity_component));
    }

    #[test]
    fn other_component_is_excluded() {
        let all = enumerate_automorphisms(&lorentz3(), 1.0).unwrap();
        assert_eq!(all.len(), 8);
        let flip = all
            .iter()
            .find(|e| e.gamma == vec![1, 0, 0, 0, -1, 0, 0, 0, -1])
            .unwrap();
        assert!(!flip.in_identity_component);
    }

    #[test]
    fn identity_always_present() {
        let forms = [
            lorentz3(),
            diag(&[2, 3, -5]),
            QuadraticForm::from_integer_rows(&[vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]])
                .unwrap(),
            QuadraticForm::builtin("Q1").unwrap().unwrap(),
        ];
        for f in &forms {
            let got = enumerate_gamma(f, 1.5).unwrap();
            assert!(got.iter().any(LatticeElement::is_identity), "{f:?}");
        }
    }

    #[test]
    fn component_examples() {
        let norm = lorentz3().normalize_to_standard().unwrap();
        let id = DMatrix::identity(3, 3);
        assert!(component_test(&id, &norm).unwrap());
        assert!(component_test(
            &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -1.0, 1.0])),
            &norm
        )
        .unwrap());
        assert!(!component_test(
            &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0, -1.0])),
            &norm
        )
        .unwrap());
        assert!(matches!(
            component_test(&DMatrix::zeros(3, 3), &norm),
            Err(LatticeError::BorderlineComponent(_))
        ));
    }

    #[test]
    fn elements_are_exact() {
        let f = diag(&[1, 1, 1, -1]);
        let int = IntegerForm::new(&f).unwrap();
        for e in enumerate_gamma(&f, 4.0).unwrap() {
            assert!(int.preserves(&e.gamma));
            assert_eq!(integer_det(4, &e.gamma), 1);
            let prod = e.matrix() * e.inverse_matrix();
            assert_eq!(prod, DMatrix::identity(4, 4));
            assert!((e.norm - op_norm(&e.inverse_matrix())).abs() <= 1e-9 * e.norm);
        }
    }

    #[test]
    fn closure_at_unit_norm() {
        let f = diag(&[1, 1, 1, -1]);
        let unit = enumerate_gamma(&f, 1.0).unwrap();
        let set: std::collections::HashSet<Vec<i64>> =
            unit.iter().map(|e| e.gamma.clone()).collect();
        for a in &unit {
            assert!(set.contains(&a.inverse));
            for b in &unit {
                let prod = a.matrix() * b.matrix();
                let key: Vec<i64> = prod.transpose().iter().map(|&x| x as i64).collect();
                assert!(set.contains(&key));
            }
        }
        assert_eq!(unit.len(), 24);
    }

    #[test]
    fn rational_form_is_scaled() {
        let q1 = QuadraticForm::builtin("Q1").unwrap().unwrap();
        let scaled = q1.scaled(&Rational::from_integer(2.into())).unwrap();
        let a = enumerate_gamma(&q1, 3.0).unwrap();
        let b = enumerate_gamma(&scaled, 3.0).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 1);
    }

    #[test]
    fn large_searches_are_refused() {
        let err = enumerate_gamma(&diag(&[1, 1, 1, 1, 1, -1]), 1e3).unwrap_err();
        assert!(matches!(err, LatticeError::SearchSpaceTooLarge { .. }));
        assert!(enumerate_gamma(&lorentz3(), 0.5).is_err());
    }

    #[test]
    fn growth_is_monotone() {
        let table = count_growth(&lorentz3(), &[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        assert_eq!(table.points[0].count, 4);
        assert!(table.points.windows(2).all(|w| w[0].count <= w[1].count));
        for p in &table.points {
            assert_eq!(
                p.count,
                enumerate_gamma(&lorentz3(), p.t).unwrap().len() as u64
            );
        }
    }

    #[test]
    fn negative_dual_value_gives_finite_stabilizer() {
        let f = lorentz3();
        let w = CharacterSpec::new(&f, vec![0, 0, 1]).unwrap();
        assert_eq!(w.dual_value, Rational::from_integer((-1).into()));
        assert!(has_compact_stabilizer(&w));
        let counts = stabilizer_count(&f, &w, &[1.0, 4.0, 16.0, 32.0]).unwrap();
        assert!(counts.iter().all(|p| p.count == 4));
        assert!(CharacterSpec::new(&f, vec![0, 0, 0]).is_err());
    }

    #[test]
    fn target_examples() {
        let spec = TargetSpec::new(lorentz3(), 2.0, 0.0, 0.1).unwrap();
        let u = target_contains(&[0.0; 3], &spec).unwrap();
        assert_eq!(gap_at(&lorentz3(), &[0.0; 3], 0.0, &u), 0.0);
        let isotropic = [1i64, 0, 1];
        assert_eq!(gap_at(&lorentz3(), &[0.0; 3], 0.0, &isotropic), 0.0);
        assert!(euclid(isotropic.iter().map(|&x| x as f64)) <= 2.0);

        let irrational = TargetSpec::new(lorentz3(), 2.0, 2f64.sqrt(), 0.0).unwrap();
        assert_eq!(target_contains(&[0.0, 0.5, 0.25], &irrational), None);
        assert!(TargetSpec::new(lorentz3(), 2.0, 10.0, 0.1).is_err());
        assert!(TargetSpec::new(lorentz3(), 2.0, -4.0, 0.0).is_ok());
    }

    #[test]
    fn n0_examples() {
        assert_eq!(choose_n0(&lorentz3(), 0.0).unwrap(), 2.0);
        assert_eq!(choose_n0(&lorentz3(), 100.0).unwrap(), 10.0);
        assert_eq!(
            choose_n0(&QuadraticForm::builtin("Q1").unwrap().unwrap(), 0.5).unwrap(),
            2.0
        );
        assert!(matches!(
            choose_n0(&lorentz3(), 5000.0),
            Err(LatticeError::NotFound(_))
        ));
        assert!(choose_n0(&diag(&[1, 1, 1]), 1.0).is_err());
    }

    #[test]
    fn identity_chain() {
        let f = lorentz3();
        let alpha = [0.3, 0.7, 0.1];
        let spec = TargetSpec::new(f.clone(), 2.0, 3f64.sqrt(), 0.2).unwrap();
        let unit = enumerate_gamma(&f, 1.0).unwrap();
        let id = unit.iter().find(|e| e.is_identity()).unwrap();
        let u = target_contains(&alpha, &spec).unwrap();
        let v = reduction_chain_verify(&f, &alpha, id, &u, &spec, 1.0, NORM_SLACK).unwrap();
        assert_eq!(v, u);
    }

    #[test]
    fn wrong_gamma_is_a_violation() {
        let f = lorentz3();
        let alpha = [0.3, 0.7, 0.1];
        let spec = TargetSpec::new(f.clone(), 2.0, 3f64.sqrt(), 0.05).unwrap();
        let u = target_contains(&alpha, &spec).unwrap();
        let gammas = enumerate_gamma(&f, 8.0).unwrap();
        let violations = gammas
            .iter()
            .filter(|g| !g.is_identity())
            .filter(|g| {
                matches!(
                    reduction_chain_verify(&f, &alpha, g, &u, &spec, 8.0, NORM_SLACK),
                    Err(LatticeError::ChainViolation(_))
                )
            })
            .count();
        assert!(violations > 0);
        let mut fake = gammas[0].clone();
        fake.gamma = vec![2, 0, 0, 0, 1, 0, 0, 0, 1];
        assert!(matches!(
            reduction_chain_verify(&f, &alpha, &fake, &u, &spec, 8.0, NORM_SLACK),
            Err(LatticeError::ChainViolation(_))
        ));
    }

    #[test]
    fn zero_shift_reduces_to_isotropy() {
        let run =
            torus_hit_experiment(&lorentz3(), 0.0, 0.5, &[vec![0.0; 3]], &[2.0, 4.0]).unwrap();
        assert!(run
            .rows
            .iter()
            .all(|r| r.hit && r.verified && r.gamma_id == Some(0)));
        assert!(run.rows.iter().all(|r| r.witness_u == Some(vec![0, 0, 0])));
    }

    #[test]
    fn hits_persist_as_the_ball_grows() {
        let f = lorentz3();
        let gammas = enumerate_gamma(&f, 16.0).unwrap();
        let spec = TargetSpec::new(f, 2.0, 3f64.sqrt(), 0.02).unwrap();
        let mut rng = crate::seeds::stream(3, "test", 0);
        for _ in 0..20 {
            let alpha: Vec<f64> = (0..3).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            let mut seen = false;
            for t in [2.0, 4.0, 8.0, 16.0] {
                let hit = first_hit(&alpha, &gammas, &spec, t).is_some();
                assert!(hit || !seen);
                seen |= hit;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn determinant_matches_rational_elimination(m in proptest::collection::vec(-4i64..=4, 16)) {
            let exact: Vec<Rational> = m.iter().map(|&x| Rational::from_integer(x.into())).collect();
            let expected = crate::forms::determinant(4, &exact);
            prop_assert_eq!(Rational::from_integer(integer_det(4, &m).into()), expected);
        }

        #[test]
        fn witnesses_agree_with_larger_box(
            beta in proptest::collection::vec(0.0f64..1.0, 3),
            xi in -3.0f64..3.0,
            eps in 0.01f64..0.5,
        ) {
            let spec = TargetSpec::new(lorentz3(), 2.0, xi, eps).unwrap();
            let got = target_contains(&beta, &spec);
            let mut exists = false;
            for a in -4i64..=4 {
                for b in -4i64..=4 {
                    for c in -4i64..=4 {
                        let x = [beta[0] + a as f64, beta[1] + b as f64, beta[2] + c as f64];
                        if euclid(x) <= 2.0 && gap_at(&lorentz3(), &beta, xi, &[a, b, c]) <= eps {
                            exists = true;
                        }
                    }
                }
            }
            prop_assert_eq!(got.is_some(), exists);
            if let Some(u) = got {
                prop_assert!(gap_at(&lorentz3(), &beta, xi, &u) <= eps);
            }
        }

        #[test]
        fn norms_agree_up_to_condition_number(t in 1.0f64..6.0) {
            let f = diag(&[2, 1, -3]);
            let cond = condition_number(&f);
            for e in enumerate_gamma(&f, t).unwrap() {
                let fwd = op_norm(&e.matrix());
                prop_assert!(fwd <= cond * e.norm * (1.0 + 1e-9));
                prop_assert!(e.norm <= cond * fwd * (1.0 + 1e-9));
            }
        }
    }
}
