//! Dispatch of validated configurations to the core modules.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, RngCore};
use serde_json::{json, Value};
use shiftform_core::exponents::{self, format_rational};
use shiftform_core::forms::rational_to_f64;
use shiftform_core::geometry::{
    ball_volume_with_error, gamma_ball_overlap, paper_norm, sample_ball, BallSpec,
};
use shiftform_core::lattice::{self, TorusExperiment, NORM_MARGIN};
use shiftform_core::search::{brute_force_min_gap, fit_exponent, min_gap};
use shiftform_core::stats::{log_log_fit, median};
use shiftform_core::{seeds, QuadraticForm, SearchProblem, Signature};

use crate::config::{Experiment, ExperimentConfig, FormRef};
use crate::error::HarnessError;
use crate::report::{fmt_opt, write_json, CsvSink, Provenance, Report, Series};

/// Agreement required between the search engine and the exhaustive scan.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// The `i`-th random shift in `[0,1)ⁿ` for a master seed.
pub fn shift(seed: u64, i: usize, n: usize) -> Vec<f64> {
    let mut rng = seeds::stream(seed, "shift", i as u64);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn reference_kappa0(sig: Signature) -> Option<f64> {
    exponents::kappa0(sig).ok().map(|k| rational_to_f64(&k))
}

fn volume_exponent(sig: Signature) -> f64 {
    let c = sig.canonical();
    (c.q * (c.p - 1)) as f64
}

fn form_json(f: &FormRef) -> Value {
    json!({ "name": f.name, "signature": f.form.signature().canonical().to_string() })
}

struct Outcome {
    results: Value,
    outputs: Vec<PathBuf>,
    series: Vec<Series>,
    falsifications: Vec<String>,
}

impl Outcome {
    fn new(results: Value, output: PathBuf) -> Self {
        Self {
            results,
            outputs: vec![output],
            series: Vec::new(),
            falsifications: Vec::new(),
        }
    }
}

/// Runs the experiment, writing its main output and a `<kind>_report.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let start = Instant::now();
    let path = cfg.output_path();
    let outcome = match &cfg.experiment {
        Experiment::Exponents { sig } => run_exponents(*sig, path)?,
        Experiment::Search {
            form,
            shift,
            xi,
            t,
            threshold,
            brute_force,
        } => {
            let mut prob = SearchProblem::new(form.form.clone(), shift.clone(), *xi, *t);
            if let Some(th) = threshold {
                prob = prob.with_threshold(*th);
            }
            run_search(form, &prob, *brute_force, path)?
        }
        Experiment::Decay {
            form,
            xi,
            num_shifts,
            t_grid,
        } => run_decay(form, *xi, *num_shifts, t_grid, cfg.seed, path)?,
        Experiment::Lattice {
            form,
            max_norm,
            t_grid,
        } => run_lattice(form, *max_norm, t_grid.as_deref(), path)?,
        Experiment::Targets {
            form,
            xi,
            kappa,
            num_shifts,
            t_grid,
        } => run_targets(form, *xi, *kappa, *num_shifts, t_grid, cfg.seed, path)?,
        Experiment::Volume { sig, t_grid } => run_volume(*sig, t_grid, path)?,
        Experiment::Overlap {
            sig,
            t,
            samples,
            num_gammas,
        } => run_overlap(*sig, *t, *samples, *num_gammas, cfg.seed, path)?,
    };
    let kind = cfg.kind();
    let mut report = Report {
        kind,
        results: outcome.results,
        provenance: Provenance {
            config: cfg.normalized.clone(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        outputs: outcome.outputs,
        series: outcome.series,
        falsifications: outcome.falsifications,
    };
    let report_path = cfg.out_dir.join(format!("{}_report.json", kind.name()));
    report.outputs.push(report_path.clone());
    write_json(&report_path, &report)?;
    Ok(report)
}

fn run_exponents(sig: Signature, path: PathBuf) -> Result<Outcome, HarnessError> {
    let profile = exponents::profile(sig).map_err(|e| HarnessError::runtime("exponents", e))?;
    let results =
        serde_json::to_value(&profile).map_err(|e| HarnessError::runtime("exponents", e))?;
    write_json(&path, &results)?;
    Ok(Outcome::new(results, path))
}

fn run_search(
    form: &FormRef,
    prob: &SearchProblem,
    brute: bool,
    path: PathBuf,
) -> Result<Outcome, HarnessError> {
    let res = min_gap(prob).map_err(|e| HarnessError::runtime("search", e))?;
    let mut results = json!({
        "form": form_json(form),
        "v": res.v_best,
        "gap": res.gap,
        "count": res.solutions_within,
        "nodes": res.nodes,
        "precision_warning": res.precision_warning,
    });
    let mut falsifications = Vec::new();
    if brute {
        let oracle =
            brute_force_min_gap(prob).map_err(|e| HarnessError::runtime("brute force", e))?;
        let agree = (oracle.gap - res.gap).abs() <= ORACLE_TOLERANCE
            && oracle.solutions_within == res.solutions_within;
        results["brute_force"] = json!({
            "v": oracle.v_best,
            "gap": oracle.gap,
            "count": oracle.solutions_within,
            "agree": agree,
        });
        if !agree {
            falsifications.push(format!(
                "search gap {} at {:?} disagrees with exhaustive gap {} at {:?}",
                res.gap, res.v_best, oracle.gap, oracle.v_best
            ));
        }
    }
    write_json(&path, &results)?;
    let mut out = Outcome::new(results, path);
    out.falsifications = falsifications;
    Ok(out)
}

fn run_decay(
    form: &FormRef,
    xi: f64,
    num_shifts: usize,
    t_grid: &[f64],
    seed: u64,
    path: PathBuf,
) -> Result<Outcome, HarnessError> {
    let n = form.form.dim();
    let sig = form.form.signature();
    let kappa_ref = reference_kappa0(sig);
    let mut sink = CsvSink::create(&path, &["shift_id", "t", "gap", "kappa_hat_running"])?;
    let mut shifts = Vec::with_capacity(num_shifts);
    let mut series = Vec::new();
    let mut gaps_by_t = vec![Vec::with_capacity(num_shifts); t_grid.len()];
    let mut kappas = Vec::new();
    for i in 0..num_shifts {
        let alpha = shift(seed, i, n);
        let base = SearchProblem::new(form.form.clone(), alpha.clone(), xi, 0.0);
        let mut pairs = Vec::with_capacity(t_grid.len());
        for (k, &t) in t_grid.iter().enumerate() {
            let res =
                min_gap(&base.with_radius(t)).map_err(|e| HarnessError::runtime("decay", e))?;
            pairs.push((t, res.gap));
            gaps_by_t[k].push(res.gap);
            let running = fit_exponent(&pairs).ok().map(|f| f.kappa_hat);
            sink.row(&[
                i.to_string(),
                t.to_string(),
                res.gap.to_string(),
                fmt_opt(running),
            ])?;
        }
        let fit = fit_exponent(&pairs).ok();
        if let Some(f) = &fit {
            kappas.push(f.kappa_hat);
        }
        shifts.push(json!({
            "shift_id": i,
            "alpha": alpha,
            "kappa_hat": fit.as_ref().map(|f| f.kappa_hat),
            "r2": fit.as_ref().map(|f| f.r2),
            "dropped": fit.as_ref().map(|f| f.dropped),
        }));
        series.push(Series {
            name: format!("decay_shift_{i}"),
            x_label: "t".into(),
            y_label: "gap".into(),
            points: pairs,
            fitted_slope: fit.map(|f| -f.kappa_hat),
            reference_slope: kappa_ref.map(|k| -k),
        });
    }
    let median_kappa = median(&kappas);
    series.push(Series {
        name: "decay_median".into(),
        x_label: "t".into(),
        y_label: "median gap".into(),
        points: t_grid
            .iter()
            .zip(&gaps_by_t)
            .map(|(&t, g)| (t, median(g).unwrap_or(0.0)))
            .collect(),
        fitted_slope: median_kappa.map(|k| -k),
        reference_slope: kappa_ref.map(|k| -k),
    });
    let results = json!({
        "form": form_json(form),
        "xi": xi,
        "t_grid": t_grid,
        "shifts": shifts,
        "median_kappa_hat": median_kappa,
        "reference_kappa0": exponents::kappa0(sig).ok().map(|k| format_rational(&k)),
        "optimal_exponent": n as i64 - 2,
    });
    let mut out = Outcome::new(results, path);
    out.series = series;
    Ok(out)
}

fn run_lattice(
    form: &FormRef,
    max_norm: f64,
    t_grid: Option<&[f64]>,
    path: PathBuf,
) -> Result<Outcome, HarnessError> {
    let n = form.form.dim();
    let elements = lattice::enumerate_gamma(&form.form, max_norm)
        .map_err(|e| HarnessError::runtime("lattice", e))?;
    let mut header: Vec<String> = (0..n)
        .flat_map(|i| (0..n).map(move |j| format!("g{}{}", i + 1, j + 1)))
        .collect();
    header.push("norm".into());
    header.push("component".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(&path, &header_refs)?;
    for e in &elements {
        let mut row: Vec<String> = e.gamma.iter().map(i64::to_string).collect();
        row.push(e.norm.to_string());
        row.push(
            if e.in_identity_component {
                "identity"
            } else {
                "other"
            }
            .into(),
        );
        sink.row(&row)?;
    }
    let mut results = json!({
        "form": form_json(form),
        "max_norm": max_norm,
        "count": elements.len(),
        "borderline": elements.iter().filter(|e| e.borderline).count(),
    });
    let mut series = Vec::new();
    if let Some(grid) = t_grid {
        let counts: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| {
                (
                    t,
                    elements
                        .iter()
                        .filter(|e| e.norm <= t + NORM_MARGIN * t)
                        .count() as f64,
                )
            })
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = counts.iter().cloned().unzip();
        let fit = log_log_fit(&x, &y);
        results["growth"] = json!(counts
            .iter()
            .map(|&(t, c)| json!({"t": t, "count": c as u64}))
            .collect::<Vec<_>>());
        results["growth_slope"] = json!(fit.map(|f| f.slope));
        series.push(Series {
            name: "lattice_growth".into(),
            x_label: "T".into(),
            y_label: "N(T)".into(),
            points: counts,
            fitted_slope: fit.map(|f| f.slope),
            reference_slope: Some(volume_exponent(form.form.signature())),
        });
    }
    let mut out = Outcome::new(results, path);
    out.series = series;
    Ok(out)
}

fn run_targets(
    form: &FormRef,
    xi: f64,
    kappa: f64,
    num_shifts: usize,
    t_grid: &[f64],
    seed: u64,
    path: PathBuf,
) -> Result<Outcome, HarnessError> {
    let n = form.form.dim();
    let exp = TorusExperiment::prepare(&form.form, xi, kappa, t_grid)
        .map_err(|e| HarnessError::runtime("targets", e))?;
    let mut sink = CsvSink::create(
        &path,
        &["shift_id", "t", "hit", "gamma_id", "witness_u", "verified"],
    )?;
    let mut hits_at = vec![0usize; t_grid.len()];
    let (mut hits, mut verified) = (0usize, 0usize);
    let mut falsifications = Vec::new();
    for i in 0..num_shifts {
        let rows = exp
            .run_shift(i, &shift(seed, i, n))
            .map_err(|e| HarnessError::runtime("targets", e))?;
        for (k, r) in rows.iter().enumerate() {
            let witness = r
                .witness_u
                .as_ref()
                .map(|u| u.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))
                .unwrap_or_default();
            sink.row(&[
                r.shift_id.to_string(),
                r.t.to_string(),
                r.hit.to_string(),
                r.gamma_id.map(|g| g.to_string()).unwrap_or_default(),
                witness,
                r.verified.to_string(),
            ])?;
            if r.hit {
                hits += 1;
                hits_at[k] += 1;
                if r.verified {
                    verified += 1;
                } else {
                    falsifications.push(format!(
                        "shift {} at t = {}: {}",
                        r.shift_id,
                        r.t,
                        r.diagnostic.as_deref().unwrap_or("unverified")
                    ));
                }
            }
        }
    }
    let results = json!({
        "form": form_json(form),
        "xi": xi,
        "kappa": kappa,
        "kappa_prime": exp.kappa_prime,
        "n0": exp.n0,
        "c": lattice::NORM_SLACK,
        "num_gammas": exp.gammas.len(),
        "hit_fraction": t_grid.iter().zip(&hits_at)
            .map(|(&t, &h)| json!({"t": t, "fraction": h as f64 / num_shifts as f64}))
            .collect::<Vec<_>>(),
        "hits": hits,
        "verified": verified,
    });
    let mut out = Outcome::new(results, path);
    out.falsifications = falsifications;
    Ok(out)
}

fn run_volume(sig: Signature, t_grid: &[f64], path: PathBuf) -> Result<Outcome, HarnessError> {
    let mut sink = CsvSink::create(&path, &["T", "volume", "running_slope"])?;
    let mut points = Vec::with_capacity(t_grid.len());
    let mut rows = Vec::new();
    for &t in t_grid {
        let spec = BallSpec::new(sig, t).map_err(|e| HarnessError::runtime("volume", e))?;
        let (v, err) =
            ball_volume_with_error(&spec).map_err(|e| HarnessError::runtime("volume", e))?;
        points.push((t, v));
        let (x, y): (Vec<f64>, Vec<f64>) = points.iter().cloned().unzip();
        let running = log_log_fit(&x, &y).map(|f| f.slope);
        sink.row(&[t.to_string(), v.to_string(), fmt_opt(running)])?;
        rows.push(json!({"t": t, "volume": v, "error": err}));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().cloned().unzip();
    let fit = log_log_fit(&x, &y);
    let results = json!({
        "signature": sig.to_string(),
        "points": rows,
        "slope": fit.map(|f| f.slope),
        "r2": fit.map(|f| f.r2),
        "reference_exponent": volume_exponent(sig),
    });
    let mut out = Outcome::new(results, path);
    out.series.push(Series {
        name: "volume".into(),
        x_label: "T".into(),
        y_label: "volume".into(),
        points,
        fitted_slope: fit.map(|f| f.slope),
        reference_slope: Some(volume_exponent(sig)),
    });
    Ok(out)
}

/// The `i`-th translate for the overlap experiment: a Haar sample from the ball of radius `t²/4`.
pub fn overlap_gamma(
    sig: Signature,
    t: f64,
    seed: u64,
    i: usize,
) -> Result<nalgebra::DMatrix<f64>, HarnessError> {
    let spec = BallSpec::new(sig, t * t / 4.0).map_err(|e| HarnessError::runtime("overlap", e))?;
    sample_ball(&spec, &mut seeds::stream(seed, "gamma", i as u64))
        .map_err(|e| HarnessError::runtime("overlap", e))
}

fn run_overlap(
    sig: Signature,
    t: f64,
    samples: usize,
    num_gammas: usize,
    seed: u64,
    path: PathBuf,
) -> Result<Outcome, HarnessError> {
    let spec = BallSpec::new(sig, t).map_err(|e| HarnessError::runtime("overlap", e))?;
    let mut sink = CsvSink::create(
        &path,
        &["gamma_id", "gamma_norm", "fraction", "stderr", "samples"],
    )?;
    let mut estimates = Vec::with_capacity(num_gammas);
    for i in 0..num_gammas {
        let gamma = overlap_gamma(sig, t, seed, i)?;
        let norm = paper_norm(&gamma).map_err(|e| HarnessError::runtime("overlap", e))?;
        let mc_seed = seeds::stream(seed, "overlap-seed", i as u64).next_u64();
        let est = gamma_ball_overlap(&gamma, &spec, samples, mc_seed)
            .map_err(|e| HarnessError::runtime("overlap", e))?;
        sink.row(&[
            i.to_string(),
            norm.to_string(),
            est.fraction.to_string(),
            est.stderr.to_string(),
            est.samples.to_string(),
        ])?;
        estimates.push(json!({"gamma_id": i, "gamma_norm": norm, "fraction": est.fraction, "stderr": est.stderr}));
    }
    let min_fraction = estimates
        .iter()
        .filter_map(|e| e["fraction"].as_f64())
        .fold(f64::INFINITY, f64::min);
    let results = json!({
        "signature": sig.to_string(),
        "t": t,
        "samples": samples,
        "estimates": estimates,
        "min_fraction": min_fraction,
    });
    Ok(Outcome::new(results, path))
}

/// Loads a form reference the same way configurations do.
pub fn load_form(reference: &str) -> Result<QuadraticForm, HarnessError> {
    FormRef::load(reference)
        .map(|f| f.form)
        .map_err(|e| HarnessError::Validation(vec![format!("form: {e}")]))
}
