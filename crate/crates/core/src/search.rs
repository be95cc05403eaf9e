//! Minimal values of `|Q(v+α) − ξ|` over integer vectors in a Euclidean ball.
//!
//! The engine fixes a pivot coordinate `j` and enumerates the remaining coordinates.
//! Along the line through each prefix, `Q(v+α) − ξ` is a polynomial `a·y² + b·y + c`
//! in `y = v_j + α_j`, so the best integer on the line is found among at most eight
//! candidates instead of scanning it.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::forms::{CompensatedSum, QuadraticForm};
use crate::stats::linear_fit;

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Limit on `(2⌊t⌋+1)ⁿ` for [`brute_force_min_gap`].
pub const BRUTE_FORCE_LIMIT: f64 = 1e8;

/// Values of `|Q|` beyond this leave fewer than one significant bit for the gap.
pub const PRECISION_LIMIT: f64 = 4_503_599_627_370_496.0;

const RADIUS_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("radius t = {0} does not define a ball")]
    EmptyBall(f64),
    #[error("shift has {found} coordinates, form has dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} exceeds the supported maximum {MAX_DIM}")]
    UnsupportedDimension(usize),
    #[error("brute force would visit {0:.3e} points (limit {BRUTE_FORCE_LIMIT:e})")]
    TooLarge(f64),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("only {0} positive gaps; a fit needs at least 3")]
    DegenerateSeries(usize),
}

/// Either an absolute tolerance or an exponent `κ` meaning `ε = t^(−κ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Epsilon(f64),
    Kappa(f64),
}

impl Threshold {
    pub fn epsilon(&self, t: f64) -> f64 {
        match *self {
            Threshold::Epsilon(e) => e,
            Threshold::Kappa(k) => t.powf(-k),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchProblem {
    pub form: QuadraticForm,
    pub alpha: Vec<f64>,
    pub xi: f64,
    pub t: f64,
    pub threshold: Option<Threshold>,
}

impl SearchProblem {
    pub fn new(form: QuadraticForm, alpha: Vec<f64>, xi: f64, t: f64) -> Self {
        Self {
            form,
            alpha,
            xi,
            t,
            threshold: None,
        }
    }

    pub fn with_threshold(mut self, threshold: Threshold) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn with_radius(&self, t: f64) -> Self {
        Self { t, ..self.clone() }
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.threshold.map(|th| th.epsilon(self.t))
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let n = self.form.dim();
        if n > MAX_DIM {
            return Err(SearchError::UnsupportedDimension(n));
        }
        if self.alpha.len() != n {
            return Err(SearchError::DimensionMismatch {
                expected: n,
                found: self.alpha.len(),
            });
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(SearchError::EmptyBall(self.t));
        }
        if !self.xi.is_finite() {
            return Err(SearchError::InvalidParameter {
                name: "xi",
                reason: "not finite".into(),
            });
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(SearchError::InvalidParameter {
                name: "alpha",
                reason: "not finite".into(),
            });
        }
        match self.threshold {
            Some(Threshold::Epsilon(e)) if !(e > 0.0 && e.is_finite()) => {
                Err(SearchError::InvalidParameter {
                    name: "eps",
                    reason: format!("{e} is not > 0"),
                })
            }
            Some(Threshold::Kappa(k)) if !(k > 0.0 && k.is_finite()) => {
                Err(SearchError::InvalidParameter {
                    name: "kappa",
                    reason: format!("{k} is not > 0"),
                })
            }
            _ => Ok(()),
        }
    }

    /// Largest integer `B` with `‖v‖² ≤ B ⟺ ‖v‖ ≤ t` on integer vectors.
    pub fn norm_bound_sq(&self) -> i64 {
        norm_bound_sq(self.t)
    }

    fn magnitude_bound(&self) -> f64 {
        let jsum: f64 = self.form.real_entries().iter().map(|x| x.abs()).sum();
        let amax = self.alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        jsum * (self.t + amax).powi(2) + self.xi.abs()
    }
}

pub fn norm_bound_sq(t: f64) -> i64 {
    (t * t * (1.0 + RADIUS_SLACK)).floor() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapResult {
    pub v_best: Vec<i64>,
    pub gap: f64,
    pub solutions_within: Option<u64>,
    pub nodes: u64,
    /// Set when `|Q|` on the ball can exceed 2⁵².
    pub precision_warning: bool,
}

/// `|Q(v+α) − ξ|` with compensated accumulation of every product.
///
/// This is the single evaluation used for final gaps, comparisons and tie-breaking.
pub fn gap_at(form: &QuadraticForm, alpha: &[f64], xi: f64, v: &[i64]) -> f64 {
    let n = form.dim();
    let j = form.real_entries();
    let mut acc = CompensatedSum::default();
    acc.add(-xi);
    for i in 0..n {
        let vi = v[i] as f64;
        for k in 0..n {
            let jik = j[i * n + k];
            if jik == 0.0 {
                continue;
            }
            let vk = v[k] as f64;
            acc.add_product3(jik, vi, vk);
            acc.add_product3(jik, vi, alpha[k]);
            acc.add_product3(jik, alpha[i], vk);
            acc.add_product3(jik, alpha[i], alpha[k]);
        }
    }
    acc.total().abs()
}

/// Orders candidates by gap, then lexicographically by `v`.
fn better(gap: f64, v: &[i64], best_gap: f64, best_v: &[i64]) -> bool {
    gap < best_gap || (gap == best_gap && v < best_v)
}

#[derive(Clone, Copy)]
struct Prefix {
    partial: i64,
    b: f64,
    c: f64,
    lin: [f64; MAX_DIM],
    v: [i64; MAX_DIM],
}

/// The polynomial `a·y² + b·y + c` along one line, with `|x| ≤ r` admissible.
struct Line<'p> {
    base: &'p Prefix,
    last: usize,
    x_last: i64,
    b: f64,
    c: f64,
    r: i64,
}

impl Line<'_> {
    #[inline]
    fn vector(&self, pivot: usize, x: i64) -> [i64; MAX_DIM] {
        let mut v = self.base.v;
        v[self.last] = self.x_last;
        v[pivot] = x;
        v
    }
}

/// Prefix enumeration over every coordinate except the pivot.
struct Enumerator<'a> {
    n: usize,
    pivot: usize,
    order: Vec<usize>,
    j: &'a [f64],
    alpha: &'a [f64],
    bsq: i64,
    a: f64,
    half_inv_a: f64,
}

impl<'a> Enumerator<'a> {
    fn new(prob: &'a SearchProblem) -> Self {
        let n = prob.form.dim();
        let j = prob.form.real_entries();
        let pivot = (0..n)
            .max_by(|&x, &y| {
                j[x * n + x]
                    .abs()
                    .total_cmp(&j[y * n + y].abs())
                    .then(y.cmp(&x))
            })
            .expect("n ≥ 2");
        let order = (0..n).filter(|&i| i != pivot).collect();
        let a = j[pivot * n + pivot];
        let half_inv_a = if a != 0.0 { 0.5 / a } else { 0.0 };
        Self {
            n,
            pivot,
            order,
            j,
            alpha: &prob.alpha,
            bsq: prob.norm_bound_sq(),
            a,
            half_inv_a,
        }
    }

    fn root(&self, xi: f64) -> Prefix {
        Prefix {
            partial: 0,
            b: 0.0,
            c: -xi,
            lin: [0.0; MAX_DIM],
            v: [0; MAX_DIM],
        }
    }

    #[inline]
    fn range(&self, st: &Prefix) -> i64 {
        isqrt(self.bsq - st.partial)
    }

    /// Sets coordinate `order[depth]` to `x`.
    #[inline]
    fn apply(&self, st: &Prefix, depth: usize, x: i64) -> Prefix {
        let n = self.n;
        let k = self.order[depth];
        let w = x as f64 + self.alpha[k];
        let mut next = *st;
        next.partial += x * x;
        next.c += (self.j[k * n + k] * w + 2.0 * st.lin[k]) * w;
        next.b += 2.0 * self.j[k * n + self.pivot] * w;
        for &k2 in &self.order[depth + 1..] {
            next.lin[k2] += self.j[k2 * n + k] * w;
        }
        next.v[k] = x;
        next
    }

    /// Visits every line below `st`.
    ///
    /// The last prefix coordinate is unrolled so that no prefix state is copied per line.
    fn descend<F: FnMut(&Line<'_>)>(&self, st: &Prefix, depth: usize, visit: &mut F) {
        let m = self.order.len();
        let r = self.range(st);
        if depth == m {
            visit(&Line {
                base: st,
                last: self.pivot,
                x_last: 0,
                b: st.b,
                c: st.c,
                r,
            });
            return;
        }
        if depth + 1 == m {
            let n = self.n;
            let k = self.order[depth];
            let jkk = self.j[k * n + k];
            let jkp = 2.0 * self.j[k * n + self.pivot];
            let lin = 2.0 * st.lin[k];
            let ak = self.alpha[k];
            let room = self.bsq - st.partial;
            for x in -r..=r {
                let w = x as f64 + ak;
                visit(&Line {
                    base: st,
                    last: k,
                    x_last: x,
                    b: st.b + jkp * w,
                    c: st.c + (jkk * w + lin) * w,
                    r: isqrt(room - x * x),
                });
            }
            return;
        }
        for x in -r..=r {
            let next = self.apply(st, depth, x);
            self.descend(&next, depth + 1, visit);
        }
    }

    /// Runs `task` independently for each value of the first prefix coordinate.
    fn split<T: Send, F>(&self, xi: f64, task: F) -> Vec<T>
    where
        F: Fn(&Prefix) -> T + Sync,
    {
        let root = self.root(xi);
        let r0 = self.range(&root);
        (-r0..=r0)
            .into_par_iter()
            .map(|x0| task(&self.apply(&root, 0, x0)))
            .collect()
    }
}

/// `⌊√m⌋` for `m ≥ 0` (and 0 for negative `m`).
#[inline]
pub(crate) fn isqrt(m: i64) -> i64 {
    if m <= 0 {
        return 0;
    }
    let mut r = (m as f64).sqrt() as i64;
    while r * r > m {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= m {
        r += 1;
    }
    r
}

#[inline]
fn push_near(y: f64, shift: f64, r: i64, out: &mut [i64; 8], k: &mut usize) {
    let x = (y - shift).floor() as i64;
    out[*k] = x.clamp(-r, r);
    out[*k + 1] = x.saturating_add(1).clamp(-r, r);
    *k += 2;
}

/// Integers in `[−r, r]` among which `|a·y² + b·y + c|`, `y = x + shift`, is minimal.
///
/// `half_inv_a` is `1/(2a)`, or unused when `a = 0`.
#[inline]
fn line_candidates(
    a: f64,
    half_inv_a: f64,
    b: f64,
    c: f64,
    shift: f64,
    r: i64,
    out: &mut [i64; 8],
) -> usize {
    out[0] = -r;
    out[1] = r;
    let mut k = 2;
    if a != 0.0 {
        push_near(-b * half_inv_a, shift, r, out, &mut k);
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + disc.sqrt().copysign(b));
            if q != 0.0 {
                push_near(2.0 * q * half_inv_a, shift, r, out, &mut k);
                push_near(c / q, shift, r, out, &mut k);
            }
        }
    } else if b != 0.0 {
        push_near(-c / b, shift, r, out, &mut k);
    }
    k
}

/// Real solutions `y` of `a·y² + b·y + c = 0`, appended to `out`.
fn real_roots(a: f64, b: f64, c: f64, out: &mut Vec<f64>) {
    if a != 0.0 {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + disc.sqrt().copysign(b));
            if q != 0.0 {
                out.push(q / a);
                out.push(c / q);
            } else {
                out.push(0.0);
            }
        }
    } else if b != 0.0 {
        out.push(-c / b);
    }
}

struct Partial {
    best: Option<(f64, Vec<i64>)>,
    count: u64,
    nodes: u64,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.count += other.count;
        self.nodes += other.nodes;
        self.best = match (self.best, other.best) {
            (Some(x), Some(y)) => Some(if better(y.0, &y.1, x.0, &x.1) { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        };
        self
    }
}

/// Line scan shared by [`min_gap`] and [`count_solutions`].
struct LineWork<'a> {
    prob: &'a SearchProblem,
    en: &'a Enumerator<'a>,
    tol: f64,
    /// A gap known to be attained inside the ball; prunes exact evaluations.
    upper: f64,
    eps: Option<f64>,
    want_min: bool,
}

impl LineWork<'_> {
    fn run(&self, start: &Prefix) -> Partial {
        let en = self.en;
        let pivot = en.pivot;
        let shift = en.alpha[pivot];
        let mut best_gap = f64::INFINITY;
        let mut best_v = [0i64; MAX_DIM];
        let mut found = false;
        let mut count = 0u64;
        let mut nodes = 0u64;
        let mut cands = [0i64; 8];
        let mut breaks = Vec::with_capacity(8);
        let mut specials = Vec::with_capacity(24);
        en.descend(start, 1, &mut |line: &Line<'_>| {
            nodes += 1;
            if self.want_min {
                let (a, b, c) = (en.a, line.b, line.c);
                let k = line_candidates(a, en.half_inv_a, b, c, shift, line.r, &mut cands);
                let cutoff = best_gap.min(self.upper) + self.tol;
                for &x in &cands[..k] {
                    let y = x as f64 + shift;
                    let approx = ((a * y + b) * y + c).abs();
                    if approx <= cutoff {
                        let v = line.vector(pivot, x);
                        let v = &v[..en.n];
                        let g = gap_at(&self.prob.form, en.alpha, self.prob.xi, v);
                        if !found || better(g, v, best_gap, &best_v[..en.n]) {
                            best_gap = g;
                            best_v[..en.n].copy_from_slice(v);
                            found = true;
                        }
                    }
                }
            }
            if let Some(eps) = self.eps {
                count += self.count_line(line, eps, &mut breaks, &mut specials);
            }
        });
        Partial {
            best: found.then(|| (best_gap, best_v[..en.n].to_vec())),
            count,
            nodes,
        }
    }

    /// Number of `x ∈ [−r, r]` on the line with gap `< eps`.
    fn count_line(
        &self,
        line: &Line<'_>,
        eps: f64,
        breaks: &mut Vec<f64>,
        specials: &mut Vec<i64>,
    ) -> u64 {
        let en = self.en;
        let pivot = en.pivot;
        let shift = en.alpha[pivot];
        let (a, b, c, r) = (en.a, line.b, line.c, line.r);
        breaks.clear();
        real_roots(a, b, c - eps, breaks);
        real_roots(a, b, c + eps, breaks);
        if a != 0.0 {
            breaks.push(-b / (2.0 * a));
        }
        specials.clear();
        for &y in breaks.iter() {
            let x = (y - shift).floor();
            if x.is_finite() && x >= (-r - 2) as f64 && x <= (r + 2) as f64 {
                let x = x as i64;
                specials.extend((x - 1..=x + 2).filter(|z| (-r..=r).contains(z)));
            }
        }
        specials.sort_unstable();
        specials.dedup();
        let within = |x: i64| {
            let v = line.vector(pivot, x);
            gap_at(&self.prob.form, en.alpha, self.prob.xi, &v[..en.n]) < eps
        };
        let mut total = 0u64;
        let mut lo = -r;
        for &s in specials.iter().chain(std::iter::once(&(r + 1))) {
            // Integers in [lo, s) lie strictly between two breakpoints.
            if s > lo && within(lo) {
                total += (s - lo) as u64;
            }
            if s <= r && within(s) {
                total += 1;
            }
            lo = s + 1;
        }
        total
    }
}

/// Radius below which no upper bound is precomputed.
const SEED_RADIUS: f64 = 16.0;

fn run_engine(prob: &SearchProblem, want_min: bool, eps: Option<f64>) -> Partial {
    let en = Enumerator::new(prob);
    let tol = 64.0 * f64::EPSILON * prob.magnitude_bound() + f64::MIN_POSITIVE;
    let upper = if want_min && prob.t > SEED_RADIUS {
        let inner = SearchProblem {
            threshold: None,
            ..prob.with_radius(prob.t / 4.0)
        };
        run_engine(&inner, true, None)
            .best
            .map_or(f64::INFINITY, |(g, _)| g)
    } else {
        f64::INFINITY
    };
    let work = LineWork {
        prob,
        en: &en,
        tol,
        upper,
        eps,
        want_min,
    };
    en.split(prob.xi, |start| work.run(start)).into_iter().fold(
        Partial {
            best: None,
            count: 0,
            nodes: 0,
        },
        Partial::merge,
    )
}

/// Exact minimum of `|Q(v+α) − ξ|` over `v ∈ ℤⁿ`, `‖v‖ ≤ t`.
///
/// Ties are broken by the lexicographically smallest `v`, so the result does not
/// depend on the thread count.
pub fn min_gap(prob: &SearchProblem) -> Result<GapResult, SearchError> {
    prob.validate()?;
    let eps = prob.epsilon();
    let part = run_engine(prob, true, eps);
    let (gap, v_best) = part.best.expect("v = 0 is always admissible");
    Ok(GapResult {
        v_best,
        gap,
        solutions_within: eps.map(|_| part.count),
        nodes: part.nodes,
        precision_warning: prob.magnitude_bound() > PRECISION_LIMIT,
    })
}

/// Number of `v ∈ ℤⁿ`, `‖v‖ ≤ t`, with `|Q(v+α) − ξ| < ε`.
pub fn count_solutions(prob: &SearchProblem) -> Result<u64, SearchError> {
    prob.validate()?;
    let eps = prob.epsilon().ok_or(SearchError::InvalidParameter {
        name: "threshold",
        reason: "counting needs eps or kappa".into(),
    })?;
    Ok(run_engine(prob, false, Some(eps)).count)
}

/// Exhaustive scan of `[−⌊t⌋, ⌊t⌋]ⁿ` in lexicographic order.
pub fn brute_force_min_gap(prob: &SearchProblem) -> Result<GapResult, SearchError> {
    prob.validate()?;
    let n = prob.form.dim();
    let side = prob.t.floor() as i64;
    let size = ((2 * side + 1) as f64).powi(n as i32);
    if size > BRUTE_FORCE_LIMIT {
        return Err(SearchError::TooLarge(size));
    }
    let bsq = prob.norm_bound_sq();
    let eps = prob.epsilon();
    let mut v = vec![-side; n];
    let mut best_v = vec![0; n];
    let mut best_gap = f64::INFINITY;
    let mut count = 0u64;
    let mut nodes = 0u64;
    loop {
        nodes += 1;
        if v.iter().map(|x| x * x).sum::<i64>() <= bsq {
            let g = gap_at(&prob.form, &prob.alpha, prob.xi, &v);
            if g < best_gap {
                best_gap = g;
                best_v.copy_from_slice(&v);
            }
            if eps.is_some_and(|e| g < e) {
                count += 1;
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(GapResult {
                    v_best: best_v,
                    gap: best_gap,
                    solutions_within: eps.map(|_| count),
                    nodes,
                    precision_warning: prob.magnitude_bound() > PRECISION_LIMIT,
                });
            }
            i -= 1;
            if v[i] < side {
                v[i] += 1;
                break;
            }
            v[i] = -side;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    pub gap: f64,
    pub v_best: Vec<i64>,
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecaySeries {
    pub points: Vec<DecayPoint>,
    /// Every gap is exactly zero.
    pub degenerate_zero: bool,
}

impl DecaySeries {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.t, p.gap)).collect()
    }
}

/// `[2^lo, …, 2^hi]`.
pub fn dyadic_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(k)).collect()
}

/// [`min_gap`] along an increasing grid of radii.
pub fn decay_series(
    form: &QuadraticForm,
    xi: f64,
    alpha: &[f64],
    t_grid: &[f64],
) -> Result<DecaySeries, SearchError> {
    if let Some(w) = t_grid.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(SearchError::InvalidParameter {
            name: "t_grid",
            reason: format!("not increasing at {} → {}", w[0], w[1]),
        });
    }
    let base = SearchProblem::new(form.clone(), alpha.to_vec(), xi, 0.0);
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let res = min_gap(&base.with_radius(t))?;
        points.push(DecayPoint {
            t,
            gap: res.gap,
            v_best: res.v_best,
            nodes: res.nodes,
        });
    }
    let degenerate_zero = !points.is_empty() && points.iter().all(|p| p.gap == 0.0);
    Ok(DecaySeries {
        points,
        degenerate_zero,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub kappa_hat: f64,
    pub r2: f64,
    /// Points dropped because their gap was zero.
    pub dropped: usize,
}

/// Least-squares `κ̂` in `gap ≈ C·t^(−κ̂)`.
pub fn fit_exponent(series: &[(f64, f64)]) -> Result<ExponentFit, SearchError> {
    let (x, y): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|(t, g)| *g > 0.0 && *t > 0.0)
        .map(|(t, g)| (t.ln(), g.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(SearchError::DegenerateSeries(x.len()));
    }
    let fit = linear_fit(&x, &y).ok_or(SearchError::DegenerateSeries(x.len()))?;
    Ok(ExponentFit {
        kappa_hat: -fit.slope,
        r2: fit.r2,
        dropped: series.len() - x.len(),
    })
}
