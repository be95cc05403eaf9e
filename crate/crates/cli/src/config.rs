//! Experiment configuration: the raw flag/JSON form and its validated counterpart.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shiftform_core::exponents;
use shiftform_core::geometry::BallSpec;
use shiftform_core::lattice::{self, MAX_SEARCH_NODES};
use shiftform_core::search::{BRUTE_FORCE_LIMIT, MAX_DIM};
use shiftform_core::{QuadraticForm, SearchProblem, Signature, Threshold};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Exponents,
    Search,
    Decay,
    Lattice,
    Targets,
    Volume,
    Overlap,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Exponents => "exponents",
            ExperimentKind::Search => "search",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Lattice => "lattice",
            ExperimentKind::Targets => "targets",
            ExperimentKind::Volume => "volume",
            ExperimentKind::Overlap => "overlap",
        }
    }

    /// Fields that the experiment reads, besides the global ones.
    fn fields(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Exponents => &["signature"],
            ExperimentKind::Search => &["form", "shift", "xi", "t", "eps", "kappa", "brute-force"],
            ExperimentKind::Decay => &["form", "xi", "num-shifts", "t-min", "t-max", "t-grid"],
            ExperimentKind::Lattice => &["form", "max-norm", "t-grid"],
            ExperimentKind::Targets => &["form", "xi", "kappa", "num-shifts", "t-grid"],
            ExperimentKind::Volume => &["signature", "t-grid"],
            ExperimentKind::Overlap => &["signature", "t", "samples", "num-gammas"],
        }
    }

    /// File name of the main output.
    pub fn default_output(self) -> &'static str {
        match self {
            ExperimentKind::Exponents => "exponents.json",
            ExperimentKind::Search => "search.json",
            ExperimentKind::Decay => "decay.csv",
            ExperimentKind::Lattice => "gamma.csv",
            ExperimentKind::Targets => "hits.csv",
            ExperimentKind::Volume => "volume.csv",
            ExperimentKind::Overlap => "overlap.csv",
        }
    }
}

/// Every setting of an experiment, as given on the command line or in a JSON file.
///
/// Keys in JSON files are the flag names without the leading dashes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brute_force: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_shifts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_gammas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            experiment,
            form,
            signature,
            shift,
            xi,
            t,
            eps,
            kappa,
            brute_force,
            num_shifts,
            t_min,
            t_max,
            t_grid,
            max_norm,
            samples,
            num_gammas,
            seed,
            threads,
            out_dir,
            out
        );
        self
    }

    /// Names of the experiment-specific fields that are set.
    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! check {
            ($($f:ident => $name:literal),*) => { $( if self.$f.is_some() { out.push($name); } )* };
        }
        check!(
            form => "form", signature => "signature", shift => "shift", xi => "xi", t => "t",
            eps => "eps", kappa => "kappa", brute_force => "brute-force", num_shifts => "num-shifts",
            t_min => "t-min", t_max => "t-max", t_grid => "t-grid", max_norm => "max-norm",
            samples => "samples", num_gammas => "num-gammas"
        );
        out
    }
}

/// A form together with the reference it was loaded from.
#[derive(Debug, Clone)]
pub struct FormRef {
    pub name: String,
    pub form: QuadraticForm,
}

impl FormRef {
    /// A built-in name (`Q1`, `Q0:p,q`) or the path of a JSON form file.
    pub fn load(reference: &str) -> Result<Self, String> {
        let form = match QuadraticForm::builtin(reference) {
            Some(r) => r.map_err(|e| e.to_string())?,
            None => {
                let text =
                    std::fs::read_to_string(reference).map_err(|e| format!("{reference}: {e}"))?;
                QuadraticForm::from_json(&text).map_err(|e| format!("{reference}: {e}"))?
            }
        };
        Ok(Self {
            name: reference.to_string(),
            form,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Exponents {
        sig: Signature,
    },
    Search {
        form: FormRef,
        shift: Vec<f64>,
        xi: f64,
        t: f64,
        threshold: Option<Threshold>,
        brute_force: bool,
    },
    Decay {
        form: FormRef,
        xi: f64,
        num_shifts: usize,
        t_grid: Vec<f64>,
    },
    Lattice {
        form: FormRef,
        max_norm: f64,
        t_grid: Option<Vec<f64>>,
    },
    Targets {
        form: FormRef,
        xi: f64,
        kappa: f64,
        num_shifts: usize,
        t_grid: Vec<f64>,
    },
    Volume {
        sig: Signature,
        t_grid: Vec<f64>,
    },
    Overlap {
        sig: Signature,
        t: f64,
        samples: usize,
        num_gammas: usize,
    },
}

/// A configuration that passed every check.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub out: PathBuf,
    /// The input with defaults filled in.
    pub normalized: RawConfig,
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        self.normalized
            .experiment
            .expect("validated configs carry a kind")
    }

    /// The main output path, resolved against the output directory.
    pub fn output_path(&self) -> PathBuf {
        self.out_dir.join(&self.out)
    }
}

pub const DEFAULT_DECAY_SHIFTS: usize = 10;
pub const DEFAULT_TARGET_SHIFTS: usize = 20;
pub const DEFAULT_T_MIN: f64 = 16.0;
pub const DEFAULT_T_MAX: f64 = 4096.0;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_GAMMAS: usize = 20;

/// Collects violations instead of stopping at the first.
#[derive(Default)]
struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn fail(&mut self, field: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{field}: {msg}"));
    }

    fn required<T: Clone>(&mut self, field: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.fail(field, "required");
        }
        v.clone()
    }

    fn form(&mut self, v: &Option<String>) -> Option<FormRef> {
        let r = self.required("form", v)?;
        FormRef::load(&r).map_err(|e| self.fail("form", e)).ok()
    }

    fn signature(&mut self, v: &Option<String>) -> Option<Signature> {
        let s = self.required("signature", v)?;
        s.parse::<Signature>()
            .map_err(|e| self.fail("signature", e))
            .ok()
    }

    fn decimal(&mut self, field: &str, v: &Option<String>) -> Option<f64> {
        let s = self.required(field, v)?;
        match s.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                self.fail(field, format!("{s:?} is not a finite decimal"));
                None
            }
        }
    }

    fn positive(&mut self, field: &str, v: Option<f64>) -> Option<f64> {
        let x = v?;
        if x > 0.0 && x.is_finite() {
            Some(x)
        } else {
            self.fail(field, format!("{x} is not > 0"));
            None
        }
    }

    fn count(&mut self, field: &str, v: Option<usize>, default: usize) -> usize {
        let x = v.unwrap_or(default);
        if x == 0 {
            self.fail(field, "must be at least 1");
        }
        x
    }

    fn grid(&mut self, field: &str, v: &Option<String>) -> Option<Vec<f64>> {
        let s = v.as_ref()?;
        let parsed: Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
        match parsed {
            Ok(g) if !g.is_empty() && g.iter().all(|x| x.is_finite()) => {
                if g.windows(2).any(|w| !(w[0] < w[1])) {
                    self.fail(field, "must be strictly increasing");
                    None
                } else {
                    Some(g)
                }
            }
            _ => {
                self.fail(
                    field,
                    format!("{s:?} is not a comma-separated list of numbers"),
                );
                None
            }
        }
    }
}

fn dyadic_exponent(t: f64) -> Option<i32> {
    let k = t.log2().round();
    (t > 0.0 && 2f64.powi(k as i32) == t).then_some(k as i32)
}

/// Checks every field and every precondition the chosen experiment can check without running.
///
/// On failure all violations are reported together.
pub fn validate_config(raw: &RawConfig) -> Result<ExperimentConfig, HarnessError> {
    let mut c = Checker::default();
    let Some(kind) = raw.experiment else {
        return Err(HarnessError::Validation(
            vec!["experiment: required".into()],
        ));
    };
    let mut normalized = raw.clone();
    for f in raw.set_fields() {
        if !kind.fields().contains(&f) {
            c.fail(f, format!("not used by the {} experiment", kind.name()));
        }
    }
    let experiment = match kind {
        ExperimentKind::Exponents => {
            let sig = c.signature(&raw.signature);
            if let Some(sig) = sig {
                if let Err(e) = exponents::profile(sig) {
                    c.fail("signature", e);
                }
            }
            sig.map(|sig| Experiment::Exponents { sig })
        }
        ExperimentKind::Search => {
            let form = c.form(&raw.form);
            let shift = c.required("shift", &raw.shift).and_then(|s| {
                s.split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| {
                        c.fail(
                            "shift",
                            format!("{s:?} is not a comma-separated list of decimals"),
                        )
                    })
                    .ok()
            });
            let xi = c.decimal("xi", &raw.xi);
            let t = c.required("t", &raw.t);
            let threshold = match (raw.eps, raw.kappa) {
                (Some(_), Some(_)) => {
                    c.fail("eps", "give at most one of eps and kappa");
                    None
                }
                (Some(e), None) => Some(Threshold::Epsilon(e)),
                (None, Some(k)) => Some(Threshold::Kappa(k)),
                (None, None) => None,
            };
            let brute_force = raw.brute_force.unwrap_or(false);
            normalized.brute_force = Some(brute_force);
            match (form, shift, xi, t) {
                (Some(form), Some(shift), Some(xi), Some(t)) => {
                    let mut prob = SearchProblem::new(form.form.clone(), shift.clone(), xi, t);
                    if let Some(th) = threshold {
                        prob = prob.with_threshold(th);
                    }
                    if let Err(e) = prob.validate() {
                        c.fail("search", e);
                    }
                    let side = 2.0 * t.floor() + 1.0;
                    if brute_force && side.powi(form.form.dim() as i32) > BRUTE_FORCE_LIMIT {
                        c.fail(
                            "brute-force",
                            format!("box too large for the exhaustive scan at t = {t}"),
                        );
                    }
                    Some(Experiment::Search {
                        form,
                        shift,
                        xi,
                        t,
                        threshold,
                        brute_force,
                    })
                }
                _ => None,
            }
        }
        ExperimentKind::Decay => {
            let form = c.form(&raw.form);
            let xi = c.decimal("xi", &raw.xi);
            let num_shifts = c.count("num-shifts", raw.num_shifts, DEFAULT_DECAY_SHIFTS);
            normalized.num_shifts = Some(num_shifts);
            let t_grid = if raw.t_grid.is_some() {
                if raw.t_min.is_some() || raw.t_max.is_some() {
                    c.fail("t-grid", "give either t-grid or t-min/t-max");
                }
                c.grid("t-grid", &raw.t_grid)
            } else {
                let lo = raw.t_min.unwrap_or(DEFAULT_T_MIN);
                let hi = raw.t_max.unwrap_or(DEFAULT_T_MAX);
                normalized.t_min = Some(lo);
                normalized.t_max = Some(hi);
                match (dyadic_exponent(lo), dyadic_exponent(hi)) {
                    (Some(a), Some(b)) if a < b => Some(shiftform_core::search::dyadic_grid(a, b)),
                    (Some(_), Some(_)) => {
                        c.fail("t-max", "must exceed t-min");
                        None
                    }
                    _ => {
                        c.fail("t-min", "t-min and t-max must be powers of two");
                        None
                    }
                }
            };
            if let Some(g) = &t_grid {
                if g.len() < 3 {
                    c.fail("t-grid", "a decay fit needs at least 3 radii");
                }
                if g[0] < 1.0 {
                    c.fail("t-grid", "radii must be ≥ 1");
                }
            }
            if let Some(f) = &form {
                if f.form.dim() > MAX_DIM {
                    c.fail(
                        "form",
                        format!("dimension {} exceeds {MAX_DIM}", f.form.dim()),
                    );
                }
            }
            match (form, xi, t_grid) {
                (Some(form), Some(xi), Some(t_grid)) => Some(Experiment::Decay {
                    form,
                    xi,
                    num_shifts,
                    t_grid,
                }),
                _ => None,
            }
        }
        ExperimentKind::Lattice => {
            let form = c.form(&raw.form);
            let max_norm = c.required("max-norm", &raw.max_norm);
            let t_grid = c.grid("t-grid", &raw.t_grid);
            if let (Some(m), Some(g)) = (max_norm, &t_grid) {
                if g[0] < 1.0 || *g.last().unwrap() > m {
                    c.fail("t-grid", format!("radii must lie in [1, max-norm = {m}]"));
                }
            }
            if let Some(m) = max_norm {
                if !(m >= 1.0 && m.is_finite()) {
                    c.fail("max-norm", format!("{m} is not ≥ 1"));
                } else if let Some(f) = &form {
                    check_enumeration(&mut c, &f.form, m);
                }
            }
            match (form, max_norm) {
                (Some(form), Some(max_norm)) => Some(Experiment::Lattice {
                    form,
                    max_norm,
                    t_grid,
                }),
                _ => None,
            }
        }
        ExperimentKind::Targets => {
            let form = c.form(&raw.form);
            let xi = c.decimal("xi", &raw.xi);
            let kappa = c.required("kappa", &raw.kappa);
            let kappa = c.positive("kappa", kappa);
            let num_shifts = c.count("num-shifts", raw.num_shifts, DEFAULT_TARGET_SHIFTS);
            normalized.num_shifts = Some(num_shifts);
            let t_grid = c
                .required("t-grid", &raw.t_grid)
                .and(c.grid("t-grid", &raw.t_grid));
            if let Some(g) = &t_grid {
                if g[0] < 1.0 {
                    c.fail("t-grid", "radii must be ≥ 1");
                }
            }
            if let Some(f) = &form {
                if !f.form.signature().is_indefinite() {
                    c.fail("form", "must be indefinite");
                }
                if let Some(g) = &t_grid {
                    check_enumeration(&mut c, &f.form, *g.last().unwrap());
                }
            }
            match (form, xi, kappa, t_grid) {
                (Some(form), Some(xi), Some(kappa), Some(t_grid)) => Some(Experiment::Targets {
                    form,
                    xi,
                    kappa,
                    num_shifts,
                    t_grid,
                }),
                _ => None,
            }
        }
        ExperimentKind::Volume => {
            let sig = c.signature(&raw.signature);
            let t_grid = c
                .required("t-grid", &raw.t_grid)
                .and(c.grid("t-grid", &raw.t_grid));
            if let (Some(sig), Some(g)) = (sig, &t_grid) {
                if sig.q > 3 {
                    c.fail("signature", "volumes are computed for real rank q ≤ 3");
                }
                for &t in g {
                    if let Err(e) = BallSpec::new(sig, t) {
                        c.fail("t-grid", e);
                        break;
                    }
                }
            }
            match (sig, t_grid) {
                (Some(sig), Some(t_grid)) => Some(Experiment::Volume { sig, t_grid }),
                _ => None,
            }
        }
        ExperimentKind::Overlap => {
            let sig = c.signature(&raw.signature);
            let t = c.required("t", &raw.t);
            let samples = c.count("samples", raw.samples, DEFAULT_SAMPLES);
            let num_gammas = c.count("num-gammas", raw.num_gammas, DEFAULT_GAMMAS);
            normalized.samples = Some(samples);
            normalized.num_gammas = Some(num_gammas);
            if let (Some(sig), Some(t)) = (sig, t) {
                if let Err(e) = BallSpec::new(sig, t) {
                    c.fail("signature", e);
                }
                if !(t * t / 4.0 > 1.0) {
                    c.fail("t", "the translate ball of radius t²/4 needs t > 2");
                }
                if sig.q > 3 {
                    c.fail("signature", "overlap sampling supports q ≤ 3");
                }
            }
            match (sig, t) {
                (Some(sig), Some(t)) => Some(Experiment::Overlap {
                    sig,
                    t,
                    samples,
                    num_gammas,
                }),
                _ => None,
            }
        }
    };
    if raw.threads == Some(0) {
        c.fail("threads", "must be at least 1");
    }
    if !c.errors.is_empty() {
        return Err(HarnessError::Validation(c.errors));
    }
    let experiment = experiment.expect("no violations implies a complete experiment");
    let seed = raw.seed.unwrap_or(0);
    let out_dir = raw.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let out = raw
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(kind.default_output()));
    normalized.seed = Some(seed);
    normalized.out_dir = Some(out_dir.clone());
    normalized.out = Some(out.clone());
    Ok(ExperimentConfig {
        experiment,
        seed,
        threads: raw.threads,
        out_dir,
        out,
        normalized,
    })
}

fn check_enumeration(c: &mut Checker, form: &QuadraticForm, t: f64) {
    if form.integral_scaling().is_none() {
        c.fail("form", "entries cannot be scaled to 64-bit integers");
        return;
    }
    let estimate = lattice::search_space_estimate(form, t);
    if !(estimate <= MAX_SEARCH_NODES) {
        c.fail(
            "max-norm",
            format!("enumeration would visit about {estimate:.3e} nodes"),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> RawConfig {
        RawConfig {
            experiment: Some(ExperimentKind::Decay),
            form: Some("Q0:2,1".into()),
            xi: Some("1.7320508075688772".into()),
            ..Default::default()
        }
    }

    #[test]
    fn missing_xi_is_named() {
        let raw = RawConfig {
            xi: None,
            ..decay()
        };
        match validate_config(&raw) {
            Err(HarnessError::Validation(v)) => assert_eq!(v, vec!["xi: required".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let raw = RawConfig {
            xi: None,
            form: Some("no-such-form.json".into()),
            t_min: Some(10.0),
            samples: Some(3),
            ..decay()
        };
        let Err(HarnessError::Validation(v)) = validate_config(&raw) else {
            panic!()
        };
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v.iter().any(|e| e.starts_with("samples: not used")));
        assert!(v.iter().any(|e| e.starts_with("t-min")));
    }

    #[test]
    fn unsupported_signature_fails_before_running() {
        let raw = RawConfig {
            experiment: Some(ExperimentKind::Exponents),
            signature: Some("1,1".into()),
            ..Default::default()
        };
        let Err(HarnessError::Validation(v)) = validate_config(&raw) else {
            panic!()
        };
        assert!(v[0].contains("unsupported signature"), "{v:?}");
    }

    #[test]
    fn defaults_are_echoed() {
        let cfg = validate_config(&decay()).unwrap();
        assert_eq!(cfg.normalized.num_shifts, Some(DEFAULT_DECAY_SHIFTS));
        assert_eq!(cfg.normalized.t_min, Some(16.0));
        assert_eq!(cfg.normalized.seed, Some(0));
        let Experiment::Decay { t_grid, .. } = cfg.experiment else {
            panic!()
        };
        assert_eq!(t_grid.len(), 9);
    }

    #[test]
    fn json_mirrors_flags() {
        let raw = RawConfig::from_json(
            r#"{"experiment": "decay", "form": "Q0:2,1", "xi": "1.5", "num-shifts": 2, "t-min": 4, "t-max": 64}"#,
        )
        .unwrap();
        assert_eq!(raw.num_shifts, Some(2));
        assert!(RawConfig::from_json(r#"{"experiment": "decay", "bogus": 1}"#).is_err());
        let merged = raw.overlay(RawConfig {
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.t_max, Some(64.0));
    }

    #[test]
    fn oversized_lattice_is_rejected() {
        let raw = RawConfig {
            experiment: Some(ExperimentKind::Lattice),
            form: Some("Q0:5,1".into()),
            max_norm: Some(1e4),
            ..Default::default()
        };
        let Err(HarnessError::Validation(v)) = validate_config(&raw) else {
            panic!()
        };
        assert!(v[0].starts_with("max-norm"));
    }
}
