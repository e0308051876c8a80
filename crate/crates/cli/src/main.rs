use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stationbid::evaluation::{linspace, EvalMode, SensitivityParam};
use stationbid::lp::Tolerances;
use stationbid::market_data::Market;
use stationbid::pipeline::{self, RunConfig, Sweep};
use stationbid::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "stationbid",
    version,
    about = "Day-ahead and intraday bidding for a hybrid charging station"
)]
struct Cli {
    /// Worker threads for SDDP sampling and Monte Carlo (0: all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `scenarios.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_da: Option<usize>,
    #[arg(long)]
    k_id: Option<usize>,
    /// Overrides `scenarios.confidence`.
    #[arg(long, conflicts_with = "confidence_epsilon")]
    confidence: Option<f64>,
    /// Tail mass ε trimmed before clustering; sets `scenarios.confidence` to 1 − ε.
    #[arg(long)]
    confidence_epsilon: Option<f64>,
    /// Overrides `scenarios.z_threshold`.
    #[arg(long)]
    zscore_threshold: Option<f64>,
    /// Overrides `solver.grid_steps`.
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Overrides `solver.intervals`.
    #[arg(long)]
    intervals: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean both price histories and write clean_da.csv / clean_id.csv.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Clean only this market (`da` or `id`), without date alignment.
        #[arg(long)]
        market: Option<Market>,
    },
    /// Write the reduced scenario sets.
    Scenarios(Common),
    /// Solve the bidding problem and write curves, schedule and traces.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also solve the extensive form and report the difference.
        #[arg(long)]
        oracle: bool,
    },
    /// Monte Carlo evaluation of the solved policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Sensitivity sweep, e.g. `--sweep lambda_h 0.5:1.5:5`.
        #[arg(long, num_args = 2, value_names = ["PARAM", "LO:HI:N"])]
        sweep: Option<Vec<String>>,
        #[arg(long)]
        n_draws: Option<usize>,
        /// `reoptimize` or `replay`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Solve the extensive form directly.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Also write the model in LP text format.
        #[arg(long)]
        write_lp: Option<PathBuf>,
    },
    /// Print a summary of the artifacts in the output directory.
    Report(Common),
    /// Write a synthetic dataset and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    let s = &mut cfg.settings;
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(v) = common.seed {
        s.scenarios.seed = v;
    }
    if let Some(v) = common.k_da {
        s.scenarios.k_da = v;
    }
    if let Some(v) = common.k_id {
        s.scenarios.k_id = v;
    }
    if let Some(v) = common.confidence {
        s.scenarios.confidence = v;
    }
    if let Some(e) = common.confidence_epsilon {
        s.scenarios.confidence = 1.0 - e;
    }
    if let Some(v) = common.zscore_threshold {
        s.scenarios.z_threshold = v;
    }
    if let Some(v) = common.grid_steps {
        s.solver.grid_steps = v;
    }
    if let Some(v) = common.intervals {
        s.solver.intervals = v;
    }
    s.validate().map_err(|msg| Error::Config {
        path: common.config.clone(),
        msg,
    })?;
    Ok(cfg)
}

fn parse_sweep(args: &[String]) -> Result<Sweep, Error> {
    let param: SensitivityParam = args[0].parse()?;
    let bad = || Error::InvalidArgument(format!("sweep range must be LO:HI:N, got `{}`", args[1]));
    let parts: Vec<&str> = args[1].split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(Sweep {
        param,
        multipliers: linspace(lo, hi, n),
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotOptimal { .. } => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let tol = Tolerances::default();
    match cli.command {
        Command::Ingest { common, market } => {
            let cfg = load(&common)?;
            let r = match market {
                Some(m) => pipeline::cmd_ingest_market(&cfg, m)?,
                None => pipeline::cmd_ingest(&cfg)?,
            };
            println!(
                "{} days kept ({} incomplete, {} outlier, {} unmatched)",
                r.days, r.incomplete_days, r.outlier_days, r.unmatched_days
            );
        }
        Command::Scenarios(c) => {
            let cfg = load(&c)?;
            let tree = pipeline::cmd_scenarios(&cfg)?;
            println!(
                "{} DA scenarios, {} leaves",
                tree.da.len(),
                tree.leaves.len()
            );
        }
        Command::Solve { common, oracle } => {
            let cfg = load(&common)?;
            let out = pipeline::cmd_solve(&cfg, oracle, &tol)?;
            let r = &out.report;
            println!(
                "objective {:.6} EUR, gap {:.3e}, {} iterations",
                r.objective, r.gap, r.iterations
            );
            if let Some(o) = &r.oracle {
                println!("oracle {:.6} EUR, delta {:+.3e}", o.objective, o.delta);
            }
            if !r.converged {
                eprintln!(
                    "warning: gap above tolerance after {} iterations",
                    r.iterations
                );
                return Ok(EXIT_NOT_CONVERGED);
            }
        }
        Command::Evaluate {
            common,
            sweep,
            n_draws,
            mode,
        } => {
            let sweep = sweep.as_deref().map(parse_sweep).transpose()?;
            let overrides = (
                n_draws,
                mode.as_deref().map(str::parse::<EvalMode>).transpose()?,
            );
            let mut cfg = load(&common)?;
            if let Some(n) = overrides.0 {
                cfg.settings.evaluation.n_draws = n;
            }
            if let Some(m) = overrides.1 {
                cfg.settings.evaluation.mode = m;
            }
            let out = pipeline::cmd_evaluate(&cfg, sweep.as_ref(), &tol)?;
            if let Some(r) = &out.report {
                if r.empty {
                    println!("no draws");
                } else {
                    println!(
                        "mean {:.6} EUR, variance {:.6}, {} draws",
                        r.mean,
                        r.variance,
                        r.draws.len()
                    );
                }
            }
            for p in &out.sensitivity {
                match (&p.profit, &p.error) {
                    (Some(v), _) => println!("{} x{}: {:.6}", p.param, p.multiplier, v),
                    (None, Some(e)) => println!("{} x{}: failed ({e})", p.param, p.multiplier),
                    _ => {}
                }
            }
        }
        Command::Oracle { common, write_lp } => {
            let cfg = load(&common)?;
            let r = pipeline::cmd_oracle(&cfg, write_lp.as_deref(), &tol)?;
            println!("extensive objective {:.6} EUR", r.lp_objective);
        }
        Command::Report(c) => {
            let cfg = load(&c)?;
            pipeline::cmd_report(&cfg, &mut std::io::stdout())?;
        }
        Command::Synth { out, days, seed } => {
            let path = pipeline::write_synthetic_dataset(&out, days, seed)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
