use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use mpinn::harness::{
    build_reference, evaluate_saved, run_experiment, sweep, write_experiment_outputs, write_sweep_outputs,
    ExperimentConfig, HarnessError,
};
use mpinn::network::ParameterVector;
use mpinn::physics::Variable;

#[derive(Parser)]
#[command(
    name = "mpinn",
    version,
    about = "Conductivity, head and concentration estimation with physics-informed networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replication seeds, e.g. `1,2,3`.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for seed-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the reference K, h and C fields of the configured field source.
    Generate,
    /// Train every configured method on every seed.
    Train,
    /// Repeat the experiment over the configured sweep axis.
    Sweep,
    /// Errors of saved networks against the reference fields.
    Eval {
        /// Directory holding `<method>_seed<seed>_<var>.bin` files;
        /// defaults to `<out>/networks`.
        #[arg(long)]
        networks: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    Partial,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seeds) = &cli.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("results").join(&cfg.experiment))
}

fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Status, HarnessError> {
    let r = build_reference(cfg)?;
    std::fs::create_dir_all(dir)?;
    for v in Variable::ALL {
        let path = dir.join(format!("{}.txt", v.symbol()));
        r.get(v).save(&path)?;
        info!("wrote {}", path.display());
    }
    Ok(Status::Ok)
}

fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<Status, HarnessError> {
    let report = run_experiment(cfg)?;
    write_experiment_outputs(&report, dir)?;
    for a in report.aggregates() {
        let fmt = |i: usize| a.eps[i].map_or("-".into(), |s| format!("{:.4e}", s.mean));
        println!(
            "{:<12} eps_K {}  eps_h {}  eps_C {}",
            a.method.name(),
            fmt(0),
            fmt(1),
            fmt(2)
        );
    }
    Ok(if report.partial() { Status::Partial } else { Status::Ok })
}

fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Status, HarnessError> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| HarnessError::Config("configuration has no [sweep] section".into()))?;
    let report = sweep(cfg, s.axis, &s.values)?;
    write_sweep_outputs(&report, dir)?;
    Ok(if report.partial() { Status::Partial } else { Status::Ok })
}

/// Group `<method>_seed<seed>_<var>.bin` files by run.
fn saved_networks(dir: &Path) -> Result<BTreeMap<String, Vec<(Variable, ParameterVector)>>, HarnessError> {
    let mut runs: BTreeMap<String, Vec<(Variable, ParameterVector)>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.extension().and_then(|e| e.to_str()) != Some("bin") {
            continue;
        }
        let Some((run, var)) = stem.rsplit_once('_') else {
            continue;
        };
        let Some(v) = Variable::ALL.into_iter().find(|v| v.symbol() == var) else {
            continue;
        };
        runs.entry(run.to_string())
            .or_default()
            .push((v, ParameterVector::load(&path)?));
    }
    if runs.is_empty() {
        return Err(HarnessError::Config(format!("no saved networks in {}", dir.display())));
    }
    Ok(runs)
}

fn eval(cfg: &ExperimentConfig, dir: &Path, networks: Option<PathBuf>) -> Result<Status, HarnessError> {
    let reference = build_reference(cfg)?;
    let runs = saved_networks(&networks.unwrap_or_else(|| dir.join("networks")))?;
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    w.write_record(["run", "eps_K", "eps_h", "eps_C"])?;
    for (run, nets) in runs {
        let eps = evaluate_saved(&reference, &nets, cfg.training.log_conductivity)?;
        let mut row = vec![run];
        row.extend(eps.iter().map(|e| e.map(|x| x.to_string()).unwrap_or_default()));
        println!("{}", row.join(","));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(Status::Ok)
}

fn run(cli: Cli) -> Result<Status, HarnessError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    let cfg = load_config(&cli)?;
    let dir = out_dir(&cli, &cfg);
    match cli.command {
        Command::Generate => generate(&cfg, &dir),
        Command::Train => train(&cfg, &dir),
        Command::Sweep => run_sweep(&cfg, &dir),
        Command::Eval { networks } => eval(&cfg, &dir, networks),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(3),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
