//! `sbjgm` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a fit or evaluation fails at run time, 2 on
//! usage errors and on unreadable or invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sbjgm::io::{self, ConfigFile};
use sbjgm::metrics::{self, Metrics};
use sbjgm::simgen::{self, SimDesign};
use sbjgm::{Dataset, EmConfig, Error, FitResult, Hyperparams, Setting, Topology};

#[derive(Parser, Debug)]
#[command(name = "sbjgm", version, about = "Supervised Bayesian joint graphical model")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model with a fixed number of subgroups.
    Fit(FitArgs),
    /// Simulate a dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Fit a grid of (K, v0, u) and keep the minimum-BIC model.
    Select(SelectArgs),
    /// Score fitted results against simulated truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Headerless predictor CSV, one subject per row.
    #[arg(long)]
    data: PathBuf,
    /// Two-column CSV of log observed time and event indicator.
    #[arg(long)]
    surv: PathBuf,
    /// JSON file with `hyperparams` overrides and `em` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Fit on the predictors as given instead of centring and scaling them.
    #[arg(long)]
    no_standardize: bool,
    /// Worker threads.
    #[arg(long, env = "SBJGM_JOBS", default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of subgroups.
    #[arg(long)]
    k: usize,
    /// Result file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Candidate K values, as a list (`1,2,3`) or an inclusive range (`1..5`).
    #[arg(long, default_value = "1..5")]
    kgrid: String,
    #[arg(long, default_value = "0.001,0.005,0.01,0.05")]
    v0grid: String,
    #[arg(long, default_value = "0,0.1,1,10")]
    ugrid: String,
    /// Winning result file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// BIC table (CSV).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Per-iteration trace of the winning fit (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "power-law")]
    topology: Topology,
    #[arg(long, default_value = "S1")]
    setting: Setting,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    /// Comma-separated subgroup sizes (default 150 each).
    #[arg(long)]
    sizes: Option<String>,
    /// Complete design JSON; replaces every other design flag except --seed.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Target censoring fraction.
    #[arg(long)]
    censoring: Option<f64>,
    /// Directory receiving X.csv, surv.csv, truth.json and design.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Result file of a single fit.
    #[arg(long, requires = "truth", conflicts_with = "replicate_dir")]
    result: Option<PathBuf>,
    /// Truth file matching --result.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory of replicate subdirectories, each holding result.json and
    /// truth.json; adds mean and sd rows.
    #[arg(long, required_unless_present = "result")]
    replicate_dir: Option<PathBuf>,
    /// Metrics CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Json { .. }
            | Error::DimensionMismatch(_)
            | Error::NonFinite { .. }
            | Error::InvalidIndicator { .. }
            | Error::InvalidHyperparams(_)
            | Error::InvalidConfig(_)
            | Error::InvalidDesign(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Select(a) => cmd_select(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

struct Prepared {
    data: Dataset,
    hyper: Hyperparams,
    em: EmConfig,
}

fn prepare(a: &DataArgs) -> Result<Prepared, Failure> {
    let raw = io::load_dataset(&a.data, &a.surv)?;
    let data = if a.no_standardize { raw } else { raw.standardized() };
    let config: ConfigFile = match &a.config {
        Some(path) => io::read_json(path)?,
        None => ConfigFile::default(),
    };
    let hyper = config.hyperparams.apply(Hyperparams::default_for(data.n(), data.p()));
    hyper.validate()?;
    let mut em = config.em;
    if let Some(seed) = a.seed {
        em.seed = seed;
    }
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    em.jobs = a.jobs;
    em.validate()?;
    Ok(Prepared { data, hyper, em })
}

fn write_outputs(fit: &FitResult, out: &Path, trace: Option<&Path>) -> Result<(), Failure> {
    io::save_result(out, fit)?;
    if let Some(path) = trace {
        io::write_trace(path, fit)?;
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    let prep = prepare(&a.data)?;
    let fit = sbjgm::fit(&prep.data, a.k, &prep.hyper, &prep.em)?;
    if !fit.converged {
        log::warn!("EM stopped at max_iter = {} before converging", prep.em.max_iter);
    }
    write_outputs(&fit, &a.out, a.trace.as_deref())
}

fn cmd_select(a: SelectArgs) -> Result<(), Failure> {
    let prep = prepare(&a.data)?;
    let k_grid = parse_k_grid(&a.kgrid)?;
    let v0_grid = parse_list(&a.v0grid, "--v0grid")?;
    let u_grid = parse_list(&a.ugrid, "--ugrid")?;
    for &v0 in &v0_grid {
        Hyperparams { v0, ..prep.hyper }.validate()?;
    }
    for &u in &u_grid {
        Hyperparams { u, ..prep.hyper }.validate()?;
    }
    let sel = match sbjgm::select_model(&prep.data, &k_grid, &v0_grid, &u_grid, &prep.hyper, &prep.em) {
        Ok(sel) => sel,
        Err(Error::AllFitsFailed { table }) => {
            if let Some(path) = &a.table {
                io::write_selection_table(path, &table)?;
            }
            return Err(Failure::Runtime("every grid fit failed".into()));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = &a.table {
        io::write_selection_table(path, &sel.table)?;
    }
    let row = &sel.table[sel.best_row];
    log::info!("selected K = {}, v0 = {}, u = {} (BIC {:.3})", row.k, row.v0, row.u, row.bic);
    write_outputs(&sel.best, &a.out, a.trace.as_deref())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut design = match &a.design {
        Some(path) => io::read_json::<SimDesign>(path)?,
        None => {
            let mut d = SimDesign::new(a.k, a.p, a.topology, a.setting, a.seed)?;
            if let Some(sizes) = &a.sizes {
                d.sizes = parse_sizes(sizes)?;
            }
            if let Some(rate) = a.censoring {
                d.censoring_rate = rate;
            }
            d
        }
    };
    design.seed = a.seed;
    design.validate()?;
    let sim = simgen::simulate(&design)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|source| Error::Io { path: a.out_dir.display().to_string(), source })?;
    io::write_predictors(&a.out_dir.join("X.csv"), &sim.dataset.x)?;
    io::write_survival(&a.out_dir.join("surv.csv"), &sim.dataset.t, &sim.dataset.delta)?;
    io::save_truth(&a.out_dir.join("truth.json"), &sim.truth)?;
    io::write_json(&a.out_dir.join("design.json"), &design)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let rows = match (&a.result, &a.truth, &a.replicate_dir) {
        (Some(result), Some(truth), None) => {
            vec![("result".to_string(), score(result, truth)?)]
        }
        (None, _, Some(dir)) => {
            let mut reps: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|source| Error::Io { path: dir.display().to_string(), source })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            reps.sort();
            if reps.is_empty() {
                return Err(Failure::Usage(format!("{}: no replicate subdirectories", dir.display())));
            }
            let mut rows = Vec::with_capacity(reps.len() + 2);
            for rep in &reps {
                let name = rep.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                rows.push((name, score(&rep.join("result.json"), &rep.join("truth.json"))?));
            }
            let all: Vec<Metrics> = rows.iter().map(|r| r.1).collect();
            if let Some((mean, sd)) = metrics::summarize(&all) {
                rows.push(("mean".into(), mean));
                rows.push(("sd".into(), sd));
            }
            rows
        }
        _ => return Err(Failure::Usage("give --result with --truth, or --replicate-dir".into())),
    };
    match &a.out {
        Some(path) => io::write_metrics(path, &rows)?,
        None => io::write_metrics_to(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn score(result: &Path, truth: &Path) -> Result<Metrics, Failure> {
    let fit = io::load_result(result)?;
    let truth = io::load_truth(truth)?;
    Ok(metrics::evaluate(&fit, &truth)?)
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<f64>, Failure> {
    let values: Result<Vec<f64>, _> = s.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match values {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(Failure::Usage(format!("{flag}: expected comma-separated numbers, got '{s}'"))),
    }
}

fn parse_k_grid(s: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Usage(format!("--kgrid: expected a list like 1,2,3 or a range like 1..5, got '{s}'"));
    let grid: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        s.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?
    };
    if grid.is_empty() || grid.contains(&0) {
        return Err(bad());
    }
    Ok(grid)
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("--sizes: expected comma-separated counts, got '{s}'")))
}
