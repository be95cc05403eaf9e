use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shiftform_cli::{
    render_report, run_experiment, validate_config, ExperimentKind, HarnessError, RawConfig,
    EXIT_FALSIFIED,
};

/// Experiments on values of shifted indefinite quadratic forms at integer points.
#[derive(Parser, Debug)]
#[command(name = "shiftform", version, about)]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for all outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON file with the same keys as the flags; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Skip SVG rendering.
    #[arg(long, global = true)]
    no_plots: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exponent profile of a signature.
    Exponents {
        #[arg(long)]
        signature: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest |Q(v+α) − ξ| over an integer ball.
    Search {
        /// Built-in name (Q1, Q0:p,q) or JSON form file.
        #[arg(long)]
        form: Option<String>,
        /// Comma-separated decimals.
        #[arg(long, allow_hyphen_values = true)]
        shift: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<String>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Also run the exhaustive scan and compare.
        #[arg(long)]
        brute_force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gap decay along a dyadic grid for random shifts.
    Decay {
        #[arg(long)]
        form: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<String>,
        #[arg(long)]
        num_shifts: Option<usize>,
        #[arg(long)]
        t_min: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integer points of SO⁺_Q up to a norm bound.
    Lattice {
        #[arg(long)]
        form: Option<String>,
        #[arg(long)]
        max_norm: Option<f64>,
        /// Radii at which to count elements.
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shrinking-target hits on the torus with verified reductions.
    Targets {
        #[arg(long)]
        form: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        num_shifts: Option<usize>,
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Haar volumes of norm balls.
    Volume {
        #[arg(long)]
        signature: Option<String>,
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo overlap of translated norm balls.
    Overlap {
        #[arg(long)]
        signature: Option<String>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        num_gammas: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn into_raw(self) -> RawConfig {
        let d = RawConfig::default();
        match self {
            Command::Exponents { signature, out } => RawConfig {
                experiment: Some(ExperimentKind::Exponents),
                signature,
                out,
                ..d
            },
            Command::Search {
                form,
                shift,
                xi,
                t,
                eps,
                kappa,
                brute_force,
                out,
            } => RawConfig {
                experiment: Some(ExperimentKind::Search),
                form,
                shift,
                xi,
                t,
                eps,
                kappa,
                brute_force: brute_force.then_some(true),
                out,
                ..d
            },
            Command::Decay {
                form,
                xi,
                num_shifts,
                t_min,
                t_max,
                t_grid,
                out,
            } => RawConfig {
                experiment: Some(ExperimentKind::Decay),
                form,
                xi,
                num_shifts,
                t_min,
                t_max,
                t_grid,
                out,
                ..d
            },
            Command::Lattice {
                form,
                max_norm,
                t_grid,
                out,
            } => RawConfig {
                experiment: Some(ExperimentKind::Lattice),
                form,
                max_norm,
                t_grid,
                out,
                ..d
            },
            Command::Targets {
                form,
                xi,
                kappa,
                num_shifts,
                t_grid,
                out,
            } => RawConfig {
                experiment: Some(ExperimentKind::Targets),
                form,
                xi,
                kappa,
                num_shifts,
                t_grid,
                out,
                ..d
            },
            Command::Volume {
                signature,
                t_grid,
                out,
            } => RawConfig {
                experiment: Some(ExperimentKind::Volume),
                signature,
                t_grid,
                out,
                ..d
            },
            Command::Overlap {
                signature,
                t,
                samples,
                num_gammas,
                out,
            } => RawConfig {
                experiment: Some(ExperimentKind::Overlap),
                signature,
                t,
                samples,
                num_gammas,
                out,
                ..d
            },
        }
    }
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    let base = match &cli.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    if cli.command.is_none() && cli.config.is_none() {
        return Err(HarnessError::Validation(vec![
            "give a subcommand or --config".into(),
        ]));
    }
    let flags = RawConfig {
        seed: cli.seed,
        threads: cli.threads,
        out_dir: cli.out_dir,
        ..Default::default()
    };
    let raw = base
        .overlay(cli.command.map(Command::into_raw).unwrap_or_default())
        .overlay(flags);
    let cfg = validate_config(&raw)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Runtime {
                stage: "thread pool",
                message: e.to_string(),
            })?;
    }
    let report = run_experiment(&cfg)?;
    if matches!(
        report.kind,
        ExperimentKind::Exponents | ExperimentKind::Search
    ) {
        println!(
            "{}",
            serde_json::to_string_pretty(&report.results).expect("results are valid JSON")
        );
    }
    for path in &report.outputs {
        eprintln!("wrote {}", path.display());
    }
    if !cli.no_plots && !report.series.is_empty() {
        for path in render_report(&report, &cfg.out_dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    if report.falsifications.is_empty() {
        Ok(0)
    } else {
        for f in &report.falsifications {
            eprintln!("falsified: {f}");
        }
        Ok(EXIT_FALSIFIED)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
