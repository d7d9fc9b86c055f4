use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::Context;
use clap::{Parser, Subcommand};
use molcf::pipeline::run;
use molcf::pipeline::sweep::{run_sweep, SweepAxis};
use molcf::pipeline::{PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "molcf", version, about = "Text-guided counterfactual explanations for molecular graph classifiers")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set ca.epochs=50`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Preprocess and split the raw dataset and generate text pairs.
    PrepareData,
    /// Train the graph classifier on the prepared splits.
    TrainGtgnn,
    /// Pretrain the text encoder against the classifier embeddings.
    PretrainEncoder,
    /// Train the counterfactual autoencoder for every seed and generate counterfactuals.
    Train,
    /// Recompute the reports of a run directory.
    Evaluate { run_dir: PathBuf },
    /// Run one training run per grid point of an axis.
    Sweep {
        /// feedback-iters, pretrain-epochs or beta-alpha.
        #[arg(long)]
        axis: SweepAxis,
        /// Grid values; the axis default when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Concurrent training processes.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Sweep directory; reusing one resumes it.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Headline metrics of one or more run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Per-stage wall-clock of one or more run directories.
    Time {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Ask the LLM to edit each class-0 molecule directly and score the replies.
    Direct,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.with_overrides(&cli.sets)
}

fn sweep(cfg: &RunConfig, cli: &Cli, axis: SweepAxis, values: &[f64], workers: usize, dir: Option<&Path>) -> anyhow::Result<()> {
    let values = if values.is_empty() { axis.default_values() } else { values.to_vec() };
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.layout().root.join("sweeps").join(axis.as_str()));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let base = dir.join("base.toml");
    std::fs::write(&base, cfg.to_toml()).with_context(|| format!("writing {}", base.display()))?;
    let exe = std::env::current_exe().context("locating the molcf executable")?;
    let verbose = cli.verbose;
    let rows = run_sweep(cfg, axis, &values, &dir, workers, |overrides| {
        let mut cmd = Command::new(&exe);
        cmd.arg("--config").arg(&base).arg("train");
        for o in overrides {
            cmd.arg("--set").arg(o);
        }
        if verbose > 0 {
            cmd.arg(format!("-{}", "v".repeat(verbose as usize)));
        }
        let out = cmd.output().map_err(|e| PipelineError::io(&exe, e))?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        if !out.status.success() {
            return Err(PipelineError::Stage {
                stage: "sweep",
                message: format!("{overrides:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()),
            });
        }
        stdout
            .lines()
            .last()
            .map(PathBuf::from)
            .ok_or_else(|| PipelineError::Stage { stage: "sweep", message: "train printed no run directory".into() })
    })?;
    println!("{:<10} {:>10} {:>10} {:>12} {:>12}", axis.as_str(), "validity", "feasible", "proximity", "prox. feas");
    let p = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    for r in rows {
        println!(
            "{:<10} {:>10.2} {:>10.2} {:>12} {:>12}",
            r.value,
            r.validity,
            r.validity_feas,
            p(r.proximity),
            p(r.proximity_feas)
        );
    }
    eprintln!("results in {}", dir.display());
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = || load_config(cli);
    match &cli.cmd {
        Cmd::PrepareData => println!("{}", run::prepare_data(&cfg()?)?),
        Cmd::TrainGtgnn => {
            let (_, report) = run::train_gtgnn(&cfg()?)?;
            println!("train {:.4}  val {:.4}  test {:.4}", report.train_acc, report.val_acc, report.test_acc);
        }
        Cmd::PretrainEncoder => {
            let cfg = cfg()?;
            let gt = run::load_gtgnn(&cfg.layout())?;
            let (_, report, path) = run::pretrain_encoder(&cfg, &gt)?;
            if let Some(r) = report {
                println!("retrieval@1 {:.3} -> {:.3}", r.retrieval_before, r.retrieval_after);
            }
            println!("{}", path.display());
        }
        Cmd::Train => {
            let dir = run::train(&cfg()?)?;
            println!("{}", dir.display());
        }
        Cmd::Evaluate { run_dir } => {
            let (reports, summary) = run::evaluate(run_dir)?;
            for (seed, r) in &reports {
                println!("seed {seed}\n{}", r.table());
            }
            print!("{}", summary.table());
        }
        Cmd::Sweep { axis, values, workers, dir } => sweep(&cfg()?, cli, *axis, values, *workers, dir.as_deref())?,
        Cmd::Report { run_dirs } => print!("{}", run::report(run_dirs)?),
        Cmd::Time { run_dirs } => print!("{}", run::timing(run_dirs)?),
        Cmd::Direct => {
            let (dir, report) = run::direct_baseline(&cfg()?)?;
            print!("{}", report.table());
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.downcast_ref::<PipelineError>().map(PipelineError::stage);
            match stage {
                Some(_) => eprintln!("molcf: {e:#}"),
                None => eprintln!("molcf: error: {e:#}"),
            }
            ExitCode::from(match stage.unwrap_or("error") {
                "config" => 2,
                "missing-input" => 3,
                _ => 1,
            })
        }
    }
}

