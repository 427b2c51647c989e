use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergorate::chain::{
    build_birth_death, build_example21, build_example22, is_reversible_with, Distribution,
    WeightFunction,
};
use ergorate::drift::drift_with;
use ergorate::montecarlo::{empirical_fnorm, sample_paths, Start};
use ergorate::semigroup::{
    characteristic_rate, default_grid, default_window_for, fit_rate, log_grid, uniform_grid,
    FitMode,
};
use ergorate::spec_file::ChainFile;
use ergorate::spectral::ergodicity_report_with;
use ergorate::verify::{run_battery, Fault, VerifyConfig};
use ergorate::{ChainSpec, ErgoError, Semigroup, Tolerances};
use serde_json::{json, Value};

/// Spectral gap and f-norm ergodicity analysis of finite continuous-time
/// Markov chains.
#[derive(Parser, Debug)]
#[command(name = "ergorate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full spectral report: gap, spectrum, rate and constants.
    Analyze(ChainArgs),
    /// Spectral gap only.
    Gap(ChainArgs),
    /// f-norm decay curve of one state as CSV.
    Decay {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Empirical exponential rate of a decay curve.
    Fit {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Fit window `t_min,t_max` (default `[2/rate, 6/rate]`, widened to two
        /// periods for oscillating curves).
        #[arg(long, value_delimiter = ',', num_args = 2)]
        window: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
        mode: ModeArg,
    },
    /// Foster-Lyapunov drift constants for the weight f.
    Drift {
        #[command(flatten)]
        chain: ChainArgs,
        /// States of the small set.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        small_set: Vec<usize>,
    },
    /// Run the property battery over the built-in families.
    Verify {
        /// Comma-separated check groups to run.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
        /// State count of the sized families.
        #[arg(long, default_value_t = 5)]
        n: usize,
        /// Deliberate defect, e.g. `asymmetric`.
        #[arg(long)]
        inject_fault: Option<String>,
        #[command(flatten)]
        tol: TolArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the decay curve as CSV `t,fnorm_est,stderr`.
    Simulate {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start every path from the stationary law instead of `--state`.
        #[arg(long)]
        stationary_start: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Example21,
    Example22,
    #[value(name = "birth_death", alias = "birth-death")]
    BirthDeath,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Auto,
    Linear,
    Peak,
}

#[derive(Args, Debug)]
struct ChainArgs {
    /// Built-in chain family.
    #[arg(
        long,
        value_enum,
        conflicts_with = "input",
        required_unless_present = "input"
    )]
    family: Option<FamilyArg>,
    /// JSON chain-spec file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Stationary law for example21.
    #[arg(long, value_delimiter = ',')]
    pi: Option<Vec<f64>>,
    /// Weight of the states `i >= 1` for example21.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Weight function (example22, birth_death, or overriding a file).
    #[arg(long, value_delimiter = ',')]
    f: Option<Vec<f64>>,
    /// Birth rates `k -> k+1` for birth_death.
    #[arg(long, value_delimiter = ',')]
    birth: Option<Vec<f64>>,
    /// Death rates `k+1 -> k` for birth_death.
    #[arg(long, value_delimiter = ',')]
    death: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    state: usize,
    #[command(flatten)]
    tol: TolArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Last grid time.
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args, Debug, Clone, Copy)]
struct TolArgs {
    #[arg(long)]
    row_tol: Option<f64>,
    #[arg(long)]
    stat_tol: Option<f64>,
    #[arg(long)]
    rev_tol: Option<f64>,
    #[arg(long)]
    eig_tol: Option<f64>,
}

enum Failure {
    Input(ErgoError),
    Io(String),
    Verification,
}

impl From<ErgoError> for Failure {
    fn from(e: ErgoError) -> Self {
        Failure::Input(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn bad(msg: impl Into<String>) -> Failure {
    Failure::Input(ErgoError::Parse(msg.into()))
}

impl TolArgs {
    fn resolve(&self) -> CliResult<Tolerances> {
        let mut t = Tolerances::default();
        for (slot, v, name) in [
            (&mut t.row, self.row_tol, "row-tol"),
            (&mut t.stationary, self.stat_tol, "stat-tol"),
            (&mut t.reversibility, self.rev_tol, "rev-tol"),
            (&mut t.eigen, self.eig_tol, "eig-tol"),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(bad(format!("--{name} must be positive, got {v}")));
                }
                *slot = v;
            }
        }
        Ok(t)
    }
}

fn tolerance_echo(tol: &Tolerances) -> Value {
    json!({ "values": tol, "overridden": !tol.is_default() })
}

fn load_chain(args: &ChainArgs, tol: &Tolerances) -> CliResult<ChainSpec> {
    let weight = |f: &Option<Vec<f64>>| f.clone().map(WeightFunction::new).transpose();
    let spec = if let Some(path) = &args.input {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let spec = ChainFile::parse(&text)?.build_with(tol)?;
        match weight(&args.f)? {
            Some(f) => spec.with_weight(f)?,
            None => spec,
        }
    } else {
        match args.family.expect("clap requires --family or --input") {
            FamilyArg::Example21 => {
                let pi = args.pi.clone().unwrap_or_else(|| vec![0.5, 0.25, 0.25]);
                build_example21(&Distribution::new(pi)?, args.beta)?
            }
            FamilyArg::Example22 => build_example22(weight(&args.f)?)?,
            FamilyArg::BirthDeath => {
                let (Some(b), Some(d)) = (&args.birth, &args.death) else {
                    return Err(bad("birth_death needs --birth and --death"));
                };
                build_birth_death(b, d, weight(&args.f)?)?
            }
        }
    };
    spec.check_state(args.state)?;
    Ok(spec)
}

/// Writes `text` to `path` through a temporary file and a rename, or to
/// stdout.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    let io = |e: std::io::Error| Failure::Io(e.to_string());
    match path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(io)?;
            out.flush().map_err(io)
        }
        Some(p) => {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
            tmp.write_all(text.as_bytes()).map_err(io)?;
            tmp.persist(p).map_err(|e| io(e.error))?;
            Ok(())
        }
    }
}

fn emit_json(path: Option<&Path>, v: &Value) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    emit(path, &s)
}

fn time_grid(
    grid: &GridArgs,
    default_tmax: f64,
    default_points: usize,
    log: bool,
) -> CliResult<Vec<f64>> {
    let tmax = grid.tmax.unwrap_or(default_tmax);
    let points = grid.points.unwrap_or(default_points);
    if !(tmax.is_finite() && tmax > 0.0) {
        return Err(bad(format!("--tmax must be positive, got {tmax}")));
    }
    if points < 2 {
        return Err(bad("--points must be at least 2"));
    }
    Ok(if log {
        log_grid(0.01_f64.min(tmax / 2.0), tmax, points)
    } else {
        uniform_grid(0.0, tmax, points)
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(args) => {
            let tol = args.tol.resolve()?;
            let spec = load_chain(&args, &tol)?;
            let report = ergodicity_report_with(&spec, &tol)?;
            let exceeds = report.true_decay_rate > report.gap + 1e-9;
            let v = json!({
                "label": spec.label,
                "n": spec.n(),
                "stationary": spec.stationary().as_slice(),
                "f": spec.weight().as_slice(),
                "report": report,
                "comparison": {
                    "gap": report.gap,
                    "true_decay_rate": report.true_decay_rate,
                    "true_rate_exceeds_gap": exceeds,
                },
                "tolerances": tolerance_echo(&tol),
            });
            emit_json(args.output.as_deref(), &v)
        }
        Command::Gap(args) => {
            let tol = args.tol.resolve()?;
            let spec = load_chain(&args, &tol)?;
            let rev = is_reversible_with(spec.rate_matrix(), spec.stationary(), &tol);
            let gap = ergorate::spectral::gap_with(spec.rate_matrix(), spec.stationary(), &tol)?;
            let v = json!({
                "label": spec.label,
                "gap": gap,
                "reversible": rev.reversible,
                "computed_on": if rev.reversible { "generator" } else { "reversibilization" },
                "tolerances": tolerance_echo(&tol),
            });
            emit_json(args.output.as_deref(), &v)
        }
        Command::Decay { chain, grid } => {
            let tol = chain.tol.resolve()?;
            let spec = load_chain(&chain, &tol)?;
            let report = ergodicity_report_with(&spec, &tol)?;
            let times = if grid.tmax.is_none() && grid.points.is_none() {
                default_grid(&report)
            } else {
                time_grid(&grid, 10.0 / characteristic_rate(&report), 60, true)?
            };
            let curve = Semigroup::new(&spec)?.decay_curve(&report, chain.state, &times)?;
            emit(chain.output.as_deref(), &curve.to_csv())
        }
        Command::Fit {
            chain,
            grid,
            window,
            mode,
        } => {
            let tol = chain.tol.resolve()?;
            let spec = load_chain(&chain, &tol)?;
            let report = ergodicity_report_with(&spec, &tol)?;
            let window = match window {
                Some(w) => (w[0], w[1]),
                None => default_window_for(&report),
            };
            let times = time_grid(&grid, window.1, 400, false)?;
            let curve = Semigroup::new(&spec)?.decay_curve(&report, chain.state, &times)?;
            let mode = match mode {
                ModeArg::Auto => FitMode::Auto,
                ModeArg::Linear => FitMode::Linear,
                ModeArg::Peak => FitMode::PeakEnvelope,
            };
            let fit = fit_rate(&curve, Some(window), mode)?;
            let v = json!({
                "label": spec.label,
                "state": chain.state,
                "fit": fit,
                "gap": report.gap,
                "true_decay_rate": report.true_decay_rate,
                "tolerances": tolerance_echo(&tol),
            });
            emit_json(chain.output.as_deref(), &v)
        }
        Command::Drift { chain, small_set } => {
            let tol = chain.tol.resolve()?;
            let spec = load_chain(&chain, &tol)?;
            let r = drift_with(&spec, &small_set, &tol)?;
            let v = json!({
                "label": spec.label,
                "drift": r,
                "drift_rate_below_gap": r.c_max < r.gap,
                "tolerances": tolerance_echo(&tol),
            });
            emit_json(chain.output.as_deref(), &v)
        }
        Command::Verify {
            only,
            n,
            inject_fault,
            tol,
            output,
        } => {
            let cfg = VerifyConfig {
                only,
                n,
                fault: inject_fault
                    .as_deref()
                    .map(str::parse::<Fault>)
                    .transpose()?,
                tol: tol.resolve()?,
            };
            let report = run_battery(&cfg)?;
            eprint!("{}", report.table());
            let mut v = serde_json::to_value(&report).expect("reports serialize");
            v["tolerances"] = tolerance_echo(&cfg.tol);
            emit_json(output.as_deref(), &v)?;
            if report.all_passed() {
                Ok(())
            } else {
                eprintln!(
                    "first failure: {}",
                    report.first_failure.as_deref().unwrap_or("?")
                );
                Err(Failure::Verification)
            }
        }
        Command::Simulate {
            chain,
            grid,
            paths,
            seed,
            stationary_start,
        } => {
            let tol = chain.tol.resolve()?;
            let spec = load_chain(&chain, &tol)?;
            let report = ergodicity_report_with(&spec, &tol)?;
            let times = time_grid(&grid, 2.0 / characteristic_rate(&report), 11, false)?;
            let start = if stationary_start {
                Start::Law(spec.stationary().clone())
            } else {
                Start::State(chain.state)
            };
            let ens = sample_paths(&spec, start, &times, paths, seed)?;
            let est = empirical_fnorm(&ens, spec.stationary(), spec.weight())?;
            emit(chain.output.as_deref(), &est.to_csv())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ERGORATE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        bad(format!(
            "ERGORATE_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Io(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            let v = json!({ "error": e.kind(), "row": e.row(), "message": e.to_string() });
            eprintln!("{v}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            let v = json!({ "error": "Io", "row": null, "message": msg });
            eprintln!("{v}");
            ExitCode::from(2)
        }
    }
}
