//! Exact-rational quadratic forms.
//!
//! A form `Q(v) = v J vᵀ` is stored as its symmetric matrix `J` with
//! [`BigRational`] entries. Signature, duality and the congruence
//! diagonalization are computed exactly; only [`QuadraticForm::normalize_to_standard`]
//! leaves the rationals, because reaching `diag(1,…,1,−1,…,−1)` needs square roots.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational scalar used throughout the form algebra.
pub type Rational = BigRational;

/// Residual allowed between `R J Rᵀ` and the standard diagonal form.
pub const NORMALIZER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("form matrix is singular")]
    SingularForm,
    #[error("form matrix is not symmetric at entry ({0}, {1})")]
    NonSymmetric(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("a quadratic form needs at least 2 variables, got {0}")]
    TooSmall(usize),
    #[error("could not parse form: {0}")]
    Parse(String),
    #[error("normalizer residual {0:e} exceeds {NORMALIZER_TOLERANCE:e}")]
    NormalizationResidual(f64),
}

/// Counts of positive and negative squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub p: usize,
    pub q: usize,
}

impl Signature {
    pub const fn new(p: usize, q: usize) -> Self {
        Self { p, q }
    }

    pub const fn n(&self) -> usize {
        self.p + self.q
    }

    pub const fn is_indefinite(&self) -> bool {
        self.p > 0 && self.q > 0
    }

    /// The same signature with `p ≥ q`.
    pub const fn canonical(&self) -> Self {
        if self.q > self.p {
            Self {
                p: self.q,
                q: self.p,
            }
        } else {
            *self
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.p, self.q)
    }
}

impl FromStr for Signature {
    type Err = FormError;

    /// Parses `"p,q"` (parentheses optional).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut parts = trimmed.split(',').map(str::trim);
        let parse = |x: Option<&str>| -> Result<usize, FormError> {
            x.ok_or_else(|| FormError::Parse(format!("bad signature {s:?}")))?
                .parse()
                .map_err(|_| FormError::Parse(format!("bad signature {s:?}")))
        };
        let p = parse(parts.next())?;
        let q = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(FormError::Parse(format!("bad signature {s:?}")));
        }
        Ok(Self { p, q })
    }
}

/// A non-degenerate quadratic form with exact rational Gram matrix.
#[derive(Clone)]
pub struct QuadraticForm {
    n: usize,
    entries: Vec<Rational>,
    real: Vec<f64>,
    sig: OnceLock<Signature>,
}

impl fmt::Debug for QuadraticForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticForm")
            .field("n", &self.n)
            .field("J", &self.rows_as_strings())
            .finish()
    }
}

impl PartialEq for QuadraticForm {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.entries == other.entries
    }
}

impl Eq for QuadraticForm {}

impl QuadraticForm {
    /// Builds a form from the rows of `J`, checking symmetry and invertibility exactly.
    pub fn new(rows: Vec<Vec<Rational>>) -> Result<Self, FormError> {
        let n = rows.len();
        if n < 2 {
            return Err(FormError::TooSmall(n));
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(FormError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            entries.extend(row);
        }
        Self::from_entries(n, entries)
    }

    fn from_entries(n: usize, entries: Vec<Rational>) -> Result<Self, FormError> {
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(FormError::NonSymmetric(i, j));
                }
            }
        }
        if determinant(n, &entries).is_zero() {
            return Err(FormError::SingularForm);
        }
        let real = entries.iter().map(rational_to_f64).collect();
        Ok(Self {
            n,
            entries,
            real,
            sig: OnceLock::new(),
        })
    }

    /// Integer Gram matrix.
    pub fn from_integer_rows(rows: &[Vec<i64>]) -> Result<Self, FormError> {
        Self::new(
            rows.iter()
                .map(|r| {
                    r.iter()
                        .map(|&x| Rational::from_integer(x.into()))
                        .collect()
                })
                .collect(),
        )
    }

    pub fn diagonal(diag: &[Rational]) -> Result<Self, FormError> {
        let n = diag.len();
        let mut rows = vec![vec![Rational::zero(); n]; n];
        for (i, d) in diag.iter().enumerate() {
            rows[i][i] = d.clone();
        }
        Self::new(rows)
    }

    /// `Q₀ = x₁² + … + x_p² − x_{p+1}² − … − x_n²`.
    pub fn standard(sig: Signature) -> Result<Self, FormError> {
        let diag: Vec<Rational> = (0..sig.n())
            .map(|i| {
                if i < sig.p {
                    Rational::one()
                } else {
                    -Rational::one()
                }
            })
            .collect();
        Self::diagonal(&diag)
    }

    /// `Q₁(a,b,c,d) = ad − bc`, the determinant of `[[a,b],[c,d]]`.
    pub fn determinant_form() -> Self {
        let half = Rational::new(BigInt::one(), BigInt::from(2));
        let z = Rational::zero();
        let rows = vec![
            vec![z.clone(), z.clone(), z.clone(), half.clone()],
            vec![z.clone(), z.clone(), -half.clone(), z.clone()],
            vec![z.clone(), -half.clone(), z.clone(), z.clone()],
            vec![half, z.clone(), z.clone(), z],
        ];
        Self::new(rows).expect("Q1 is non-degenerate")
    }

    /// Resolves a built-in name: `"Q1"` or `"Q0:p,q"`.
    pub fn builtin(name: &str) -> Option<Result<Self, FormError>> {
        let name = name.trim();
        if name == "Q1" {
            return Some(Ok(Self::determinant_form()));
        }
        let spec = name.strip_prefix("Q0:")?;
        Some(spec.parse::<Signature>().and_then(Self::standard))
    }

    /// Parses the JSON form file: `{"n": 3, "J": [["1","0","0"], …]}`.
    pub fn from_json(text: &str) -> Result<Self, FormError> {
        let file: FormFile =
            serde_json::from_str(text).map_err(|e| FormError::Parse(e.to_string()))?;
        if file.j.len() != file.n {
            return Err(FormError::DimensionMismatch {
                expected: file.n,
                found: file.j.len(),
            });
        }
        let rows = file
            .j
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| parse_rational(s))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    /// The on-disk representation consumed by [`QuadraticForm::from_json`].
    pub fn to_form_file(&self) -> FormFile {
        FormFile {
            n: self.n,
            j: self.rows_as_strings(),
        }
    }

    fn rows_as_strings(&self) -> Vec<Vec<String>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.entry(i, j).to_string()).collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &Rational {
        &self.entries[i * self.n + j]
    }

    /// `J` rounded to `f64`, row-major.
    pub fn real_entries(&self) -> &[f64] {
        &self.real
    }

    pub fn real_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.real)
    }

    pub fn negated(&self) -> Self {
        let entries = self.entries.iter().map(|x| -x.clone()).collect();
        Self::from_entries(self.n, entries).expect("negation preserves non-degeneracy")
    }

    pub fn scaled(&self, factor: &Rational) -> Result<Self, FormError> {
        let entries = self.entries.iter().map(|x| x * factor).collect();
        Self::from_entries(self.n, entries)
    }

    /// Returns the form with `p ≥ q`, negating when needed; the flag records the negation.
    pub fn oriented(&self) -> (Self, bool) {
        let sig = self.signature();
        if sig.q > sig.p {
            (self.negated(), true)
        } else {
            (self.clone(), false)
        }
    }

    pub fn is_integral(&self) -> bool {
        self.entries.iter().all(|x| x.is_integer())
    }

    /// `J` multiplied by the least common denominator of its entries, with that multiplier.
    ///
    /// Returns `None` if an entry does not fit in `i64`.
    pub fn integral_scaling(&self) -> Option<(Vec<i64>, BigInt)> {
        let lcm = self
            .entries
            .iter()
            .fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        let ints = self
            .entries
            .iter()
            .map(|x| (x.numer() * (&lcm / x.denom())).to_i64())
            .collect::<Option<Vec<_>>>()?;
        Some((ints, lcm))
    }

    pub fn signature(&self) -> Signature {
        *self.sig.get_or_init(|| {
            let (_, diag) = self.congruence_diagonalization();
            let p = diag.iter().filter(|d| d.is_positive()).count();
            let q = diag.iter().filter(|d| d.is_negative()).count();
            Signature { p, q }
        })
    }

    /// Exact Lagrange reduction: returns `(S, d)` with `S J Sᵀ = diag(d)`, `S` row-major.
    ///
    /// Zero pivots with a nonzero off-diagonal `J_ij` are resolved by the unimodular-up-to-2
    /// substitution `xᵢ → xᵢ + xⱼ`, `xⱼ → xᵢ − xⱼ`.
    pub fn congruence_diagonalization(&self) -> (Vec<Rational>, Vec<Rational>) {
        let n = self.n;
        let mut a = self.entries.clone();
        let mut s = identity(n);
        for k in 0..n {
            if a[k * n + k].is_zero() {
                if let Some(i) = (k + 1..n).find(|&i| !a[i * n + i].is_zero()) {
                    swap_congruent(n, &mut a, &mut s, k, i);
                } else if let Some((i, j)) = (k..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .find(|&(i, j)| !a[i * n + j].is_zero())
                {
                    sum_difference_substitution(n, &mut a, &mut s, i, j);
                    if i != k {
                        swap_congruent(n, &mut a, &mut s, k, i);
                    }
                } else {
                    // The trailing block vanishes; impossible for a non-degenerate form.
                    break;
                }
            }
            let pivot = a[k * n + k].clone();
            for r in (k + 1)..n {
                if a[r * n + k].is_zero() {
                    continue;
                }
                let f = &a[r * n + k] / &pivot;
                for c in 0..n {
                    let delta = &f * &a[k * n + c];
                    a[r * n + c] -= delta;
                }
                for c in 0..n {
                    let delta = &f * &a[c * n + k];
                    a[c * n + r] -= delta;
                }
                for c in 0..n {
                    let delta = &f * &s[k * n + c];
                    s[r * n + c] -= delta;
                }
            }
        }
        let diag = (0..n).map(|i| a[i * n + i].clone()).collect();
        (s, diag)
    }

    /// Exact value `x J xᵀ`.
    pub fn evaluate_exact(&self, x: &[Rational]) -> Result<Rational, FormError> {
        self.check_dim(x.len())?;
        let n = self.n;
        let mut acc = Rational::zero();
        for i in 0..n {
            if x[i].is_zero() {
                continue;
            }
            let mut row = Rational::zero();
            for j in 0..n {
                row += &self.entries[i * n + j] * &x[j];
            }
            acc += row * &x[i];
        }
        Ok(acc)
    }

    /// `x J xᵀ` in floating point with error-free transformations (dot2-style accuracy).
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, FormError> {
        self.check_dim(x.len())?;
        Ok(self.evaluate_minus(x, 0.0))
    }

    /// `x J xᵀ − offset` accumulated as a single compensated sum.
    ///
    /// The caller guarantees `x.len() == self.dim()`.
    pub fn evaluate_minus(&self, x: &[f64], offset: f64) -> f64 {
        let n = self.n;
        let mut acc = CompensatedSum::default();
        acc.add(-offset);
        for i in 0..n {
            for j in 0..n {
                let jij = self.real[i * n + j];
                if jij == 0.0 {
                    continue;
                }
                acc.add_product3(jij, x[i], x[j]);
            }
        }
        acc.total()
    }

    fn check_dim(&self, len: usize) -> Result<(), FormError> {
        if len == self.n {
            Ok(())
        } else {
            Err(FormError::DimensionMismatch {
                expected: self.n,
                found: len,
            })
        }
    }

    /// The dual form `v J⁻¹ vᵀ`.
    pub fn dual(&self) -> Self {
        let inv = invert(self.n, &self.entries).expect("form is non-degenerate");
        Self::from_entries(self.n, inv).expect("inverse of symmetric invertible is symmetric")
    }

    /// A real `R` with `R J Rᵀ = diag(1,…,1,−1,…,−1)` (positive block first).
    pub fn normalize_to_standard(&self) -> Result<StandardNormalizer, FormError> {
        let n = self.n;
        let (s, d) = self.congruence_diagonalization();
        if d.iter().any(Zero::is_zero) {
            return Err(FormError::SingularForm);
        }
        let s_inv = invert(n, &s).ok_or(FormError::SingularForm)?;
        // Stable order: positive pivots first, then negative ones.
        let order: Vec<usize> = (0..n)
            .filter(|&i| d[i].is_positive())
            .chain((0..n).filter(|&i| d[i].is_negative()))
            .collect();
        let mut r = DMatrix::zeros(n, n);
        let mut r_inv = DMatrix::zeros(n, n);
        for (row, &src) in order.iter().enumerate() {
            let scale = rational_to_f64(&d[src].abs()).sqrt();
            for c in 0..n {
                r[(row, c)] = rational_to_f64(&s[src * n + c]) / scale;
                r_inv[(c, row)] = rational_to_f64(&s_inv[c * n + src]) * scale;
            }
        }
        let sig = self.signature();
        let target = standard_matrix(sig);
        let residual = (&r * self.real_matrix() * r.transpose() - &target).amax();
        if residual > NORMALIZER_TOLERANCE {
            return Err(FormError::NormalizationResidual(residual));
        }
        Ok(StandardNormalizer {
            r,
            r_inv,
            sig,
            residual,
        })
    }
}

/// Conjugation data taking a form to its standard diagonal model.
#[derive(Debug, Clone)]
pub struct StandardNormalizer {
    pub r: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    pub sig: Signature,
    pub residual: f64,
}

impl StandardNormalizer {
    /// Transports `γ` with `γ J γᵀ = J` to `R γ R⁻¹`, which preserves the standard form.
    pub fn to_standard(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * gamma * &self.r_inv
    }
}

/// `diag(1,…,1,−1,…,−1)` for a signature.
pub fn standard_matrix(sig: Signature) -> DMatrix<f64> {
    DMatrix::from_fn(sig.n(), sig.n(), |i, j| match (i == j, i < sig.p) {
        (false, _) => 0.0,
        (true, true) => 1.0,
        (true, false) => -1.0,
    })
}

/// JSON form-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFile {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: Vec<Vec<String>>,
}

/// Parses `"num/den"` or `"int"`.
pub fn parse_rational(s: &str) -> Result<Rational, FormError> {
    let t = s.trim();
    let bad = || FormError::Parse(format!("bad rational {s:?}"));
    match t.split_once('/') {
        Some((num, den)) => {
            let num: BigInt = num.trim().parse().map_err(|_| bad())?;
            let den: BigInt = den.trim().parse().map_err(|_| bad())?;
            if den.is_zero() {
                return Err(bad());
            }
            Ok(Rational::new(num, den))
        }
        None => Ok(Rational::from_integer(t.parse().map_err(|_| bad())?)),
    }
}

pub fn rational_to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn identity(n: usize) -> Vec<Rational> {
    (0..n * n)
        .map(|k| {
            if k / n == k % n {
                Rational::one()
            } else {
                Rational::zero()
            }
        })
        .collect()
}

fn swap_congruent(n: usize, a: &mut [Rational], s: &mut [Rational], i: usize, j: usize) {
    for c in 0..n {
        a.swap(i * n + c, j * n + c);
        s.swap(i * n + c, j * n + c);
    }
    for r in 0..n {
        a.swap(r * n + i, r * n + j);
    }
}

/// Rows and columns `(i, j)` become `(i + j, i − j)`.
fn sum_difference_substitution(
    n: usize,
    a: &mut [Rational],
    s: &mut [Rational],
    i: usize,
    j: usize,
) {
    for m in [&mut *a, &mut *s] {
        for c in 0..n {
            let (x, y) = (m[i * n + c].clone(), m[j * n + c].clone());
            m[i * n + c] = &x + &y;
            m[j * n + c] = x - y;
        }
    }
    for r in 0..n {
        let (x, y) = (a[r * n + i].clone(), a[r * n + j].clone());
        a[r * n + i] = &x + &y;
        a[r * n + j] = x - y;
    }
}

/// Exact determinant by rational Gaussian elimination.
pub fn determinant(n: usize, m: &[Rational]) -> Rational {
    let mut a = m.to_vec();
    let mut det = Rational::one();
    for k in 0..n {
        let Some(piv) = (k..n).find(|&r| !a[r * n + k].is_zero()) else {
            return Rational::zero();
        };
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            det = -det;
        }
        let p = a[k * n + k].clone();
        det *= &p;
        for r in (k + 1)..n {
            if a[r * n + k].is_zero() {
                continue;
            }
            let f = &a[r * n + k] / &p;
            for c in k..n {
                let delta = &f * &a[k * n + c];
                a[r * n + c] -= delta;
            }
        }
    }
    det
}

/// Exact inverse by Gauss–Jordan; `None` when singular.
pub fn invert(n: usize, m: &[Rational]) -> Option<Vec<Rational>> {
    let mut a = m.to_vec();
    let mut inv = identity(n);
    for k in 0..n {
        let piv = (k..n).find(|&r| !a[r * n + k].is_zero())?;
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
                inv.swap(k * n + c, piv * n + c);
            }
        }
        let p = a[k * n + k].clone();
        for c in 0..n {
            a[k * n + c] /= &p;
            inv[k * n + c] /= &p;
        }
        for r in 0..n {
            if r == k || a[r * n + k].is_zero() {
                continue;
            }
            let f = a[r * n + k].clone();
            for c in 0..n {
                let da = &f * &a[k * n + c];
                a[r * n + c] -= da;
                let di = &f * &inv[k * n + c];
                inv[r * n + c] -= di;
            }
        }
    }
    Some(inv)
}

#[inline]
pub(crate) fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Neumaier summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Adds `a·b·c` with the error of both products carried to first order.
    #[inline]
    pub(crate) fn add_product3(&mut self, a: f64, b: f64, c: f64) {
        let (p1, e1) = two_product(b, c);
        let (p2, e2) = two_product(a, p1);
        self.add(p2);
        self.add(e2);
        self.add(a * e1);
    }

    #[inline]
    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn ri(n: i64) -> Rational {
        Rational::from_integer(n.into())
    }

    fn diag(xs: &[i64]) -> QuadraticForm {
        QuadraticForm::diagonal(&xs.iter().map(|&x| ri(x)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn signature_examples() {
        assert_eq!(diag(&[1, 1, -1]).signature(), Signature::new(2, 1));
        assert_eq!(
            QuadraticForm::determinant_form().signature(),
            Signature::new(2, 2)
        );
        assert_eq!(diag(&[2, -3]).signature(), Signature::new(1, 1));
    }

    #[test]
    fn rejects_bad_matrices() {
        let nonsym = QuadraticForm::new(vec![vec![ri(1), ri(2)], vec![ri(0), ri(1)]]);
        assert_eq!(nonsym.unwrap_err(), FormError::NonSymmetric(0, 1));
        let singular = QuadraticForm::new(vec![vec![ri(1), ri(1)], vec![ri(1), ri(1)]]);
        assert_eq!(singular.unwrap_err(), FormError::SingularForm);
        assert_eq!(
            QuadraticForm::new(vec![vec![ri(1)]]).unwrap_err(),
            FormError::TooSmall(1)
        );
    }

    #[test]
    fn evaluate_examples() {
        let q1 = QuadraticForm::determinant_form();
        assert_eq!(
            q1.evaluate_exact(&[ri(1), ri(0), ri(0), ri(1)]).unwrap(),
            ri(1)
        );
        assert_eq!(q1.evaluate(&[1.0, 0.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(q1.evaluate(&[0.0; 4]).unwrap(), 0.0);
        let q0 = QuadraticForm::standard(Signature::new(2, 1)).unwrap();
        assert_eq!(
            q0.evaluate_exact(&[r(3, 2), r(1, 2), r(1, 2)]).unwrap(),
            r(9, 4)
        );
        assert_eq!(q0.evaluate(&[1.5, 0.5, 0.5]).unwrap(), 2.25);
        assert!(matches!(
            q0.evaluate(&[1.0, 2.0]),
            Err(FormError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn evaluate_survives_cancellation() {
        // x² − y² with x, y huge and close: naive evaluation loses every digit.
        let f = diag(&[1, -1]);
        let x = 1.0e8 + 1.0;
        let y = 1.0e8;
        assert_eq!(f.evaluate(&[x, y]).unwrap(), 2.0e8 + 1.0);
    }

    #[test]
    fn dual_examples() {
        assert_eq!(diag(&[1, 1, -1]).dual(), diag(&[1, 1, -1]));
        let d = QuadraticForm::diagonal(&[ri(2), ri(-1)]).unwrap().dual();
        assert_eq!(d, QuadraticForm::diagonal(&[r(1, 2), ri(-1)]).unwrap());
        let q1_dual = QuadraticForm::determinant_form().dual();
        let expected = QuadraticForm::from_integer_rows(&[
            vec![0, 0, 0, 2],
            vec![0, 0, -2, 0],
            vec![0, -2, 0, 0],
            vec![2, 0, 0, 0],
        ])
        .unwrap();
        assert_eq!(q1_dual, expected);
    }

    #[test]
    fn normalizer_examples() {
        let n = diag(&[4, -9]).normalize_to_standard().unwrap();
        assert!((n.r[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((n.r[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(n.r[(0, 1)], 0.0);
        let id = diag(&[1, 1, -1]).normalize_to_standard().unwrap();
        assert_eq!(id.r, DMatrix::identity(3, 3));
        // Negative entry first still yields the positive block first.
        let swapped = diag(&[-1, 1, 1]).normalize_to_standard().unwrap();
        let target = standard_matrix(Signature::new(2, 1));
        let back = &swapped.r * diag(&[-1, 1, 1]).real_matrix() * swapped.r.transpose();
        assert!((back - target).amax() < 1e-14);
    }

    #[test]
    fn normalizer_preserves_values_on_q1() {
        let q1 = QuadraticForm::determinant_form();
        let norm = q1.normalize_to_standard().unwrap();
        assert!(norm.residual <= NORMALIZER_TOLERANCE);
        let q0 = QuadraticForm::standard(Signature::new(2, 2)).unwrap();
        let mut state = 0x9e3779b97f4a7c15_u64;
        for _ in 0..100 {
            let w: Vec<f64> = (0..4)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
                })
                .collect();
            // Q(v) = Q₀(v R⁻¹) since R J Rᵀ = J₀.
            let v = DMatrix::from_row_slice(1, 4, &w) * &norm.r;
            let lhs = q1.evaluate(v.as_slice()).unwrap();
            let rhs = q0.evaluate(&w).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn congruence_diagonalization_is_exact() {
        let q1 = QuadraticForm::determinant_form();
        let (s, d) = q1.congruence_diagonalization();
        let n = 4;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Rational::zero();
                for k in 0..n {
                    for l in 0..n {
                        acc += &s[i * n + k] * q1.entry(k, l) * &s[j * n + l];
                    }
                }
                let expected = if i == j {
                    d[i].clone()
                } else {
                    Rational::zero()
                };
                assert_eq!(acc, expected);
            }
        }
    }

    #[test]
    fn builtin_and_json() {
        let q = QuadraticForm::builtin("Q0:3,2").unwrap().unwrap();
        assert_eq!(q.signature(), Signature::new(3, 2));
        assert!(QuadraticForm::builtin("nope").is_none());
        let json = r#"{"n": 2, "J": [["1/2", "0"], ["0", "-3"]]}"#;
        let f = QuadraticForm::from_json(json).unwrap();
        assert_eq!(f.entry(0, 0), &r(1, 2));
        assert_eq!(f.signature(), Signature::new(1, 1));
        let file = QuadraticForm::determinant_form().to_form_file();
        assert_eq!(file.j[0][3], "1/2");
        assert!(QuadraticForm::from_json(r#"{"n": 2, "J": [["1", "x"], ["x", "1"]]}"#).is_err());
        assert!(QuadraticForm::from_json(r#"{"n": 3, "J": [["1"]]}"#).is_err());
    }

    #[test]
    fn oriented_flips_negative_majority() {
        let (f, flipped) = diag(&[1, -1, -1]).oriented();
        assert!(flipped);
        assert_eq!(f.signature(), Signature::new(2, 1));
    }

    #[test]
    fn integral_scaling_of_q1() {
        let (ints, scale) = QuadraticForm::determinant_form()
            .integral_scaling()
            .unwrap();
        assert_eq!(scale, BigInt::from(2));
        assert_eq!(ints[3], 1);
        assert_eq!(ints[6], -1);
    }

    fn small_rational() -> impl Strategy<Value = Rational> {
        (-100i64..=100, 1i64..=100).prop_map(|(n, d)| r(n, d))
    }

    fn random_form(max_n: usize) -> impl Strategy<Value = QuadraticForm> {
        (2..=max_n)
            .prop_flat_map(|n| proptest::collection::vec(small_rational(), n * (n + 1) / 2))
            .prop_filter_map("singular", |upper| {
                let n = ((((8 * upper.len() + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
                let mut rows = vec![vec![Rational::zero(); n]; n];
                let mut k = 0;
                for i in 0..n {
                    for j in i..n {
                        rows[i][j] = upper[k].clone();
                        rows[j][i] = upper[k].clone();
                        k += 1;
                    }
                }
                QuadraticForm::new(rows).ok()
            })
    }

    fn invertible(n: usize) -> impl Strategy<Value = Vec<Rational>> {
        proptest::collection::vec(small_rational(), n * n)
            .prop_filter("singular", move |m| !determinant(n, m).is_zero())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn signature_is_congruence_invariant(
            (form, s) in random_form(5).prop_flat_map(|f| { let n = f.dim(); (Just(f), invertible(n)) })
        ) {
            let n = form.dim();
            let mut rows = vec![vec![Rational::zero(); n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = Rational::zero();
                    for k in 0..n {
                        for l in 0..n {
                            acc += &s[i * n + k] * form.entry(k, l) * &s[j * n + l];
                        }
                    }
                    rows[i][j] = acc;
                }
            }
            let congruent = QuadraticForm::new(rows).unwrap();
            prop_assert_eq!(congruent.signature(), form.signature());
        }

        #[test]
        fn dual_is_exact_involution(form in random_form(5)) {
            let d = form.dual();
            prop_assert_eq!(d.signature(), form.signature());
            prop_assert_eq!(d.dual(), form);
        }

        #[test]
        fn normalizer_residual_bound(form in random_form(6)) {
            let norm = form.normalize_to_standard().unwrap();
            prop_assert!(norm.residual <= NORMALIZER_TOLERANCE);
            prop_assert_eq!(norm.sig, form.signature());
        }

        #[test]
        fn evaluate_matches_naive_loop(
            (form, x) in random_form(6).prop_flat_map(|f| {
                let n = f.dim();
                (Just(f), proptest::collection::vec(-10.0f64..10.0, n))
            })
        ) {
            let n = form.dim();
            let j = form.real_entries();
            let mut naive = 0.0;
            let mut magnitude = 0.0;
            for a in 0..n {
                for b in 0..n {
                    naive += x[a] * j[a * n + b] * x[b];
                    magnitude += (x[a] * j[a * n + b] * x[b]).abs();
                }
            }
            let fast = form.evaluate(&x).unwrap();
            prop_assert!((fast - naive).abs() <= 1e-12 * magnitude.max(1e-300));
        }

        #[test]
        fn evaluate_is_near_exact_on_dyadic_inputs(
            xs in proptest::collection::vec(-4096i64..4096, 3),
            js in proptest::collection::vec(-64i64..64, 6),
        ) {
            let rows = vec![
                vec![ri(js[0]), r(js[1], 4), r(js[2], 8)],
                vec![r(js[1], 4), ri(js[3]), r(js[4], 2)],
                vec![r(js[2], 8), r(js[4], 2), r(js[5], 16)],
            ];
            if let Ok(form) = QuadraticForm::new(rows) {
                let exact: Vec<Rational> = xs.iter().map(|&v| r(v, 64)).collect();
                let float: Vec<f64> = xs.iter().map(|&v| v as f64 / 64.0).collect();
                let e = rational_to_f64(&form.evaluate_exact(&exact).unwrap());
                let f = form.evaluate(&float).unwrap();
                prop_assert!((e - f).abs() <= 8.0 * f64::EPSILON * 3.0 * e.abs());
            }
        }
    }
}
