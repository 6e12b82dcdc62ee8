use anyhow::Context;
use clap::{Parser, Subcommand};
use memsim::config::{ExperimentConfig, Scale};
use memsim::MemsimError;
use memsim_cli::artifacts::{artifact_root, ArtifactDir};
use memsim_cli::plot::{load_chart, PlotKind};
use memsim_cli::runner::execute;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "memsim", version, about = "Memristor-crossbar accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Use the full-size presets regardless of the config's `scale`.
        #[arg(long)]
        paper_scale: bool,
        /// Worker threads; overrides the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a summary or loss-history CSV as an SVG line chart.
    Plot {
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output file; defaults to the CSV path with an `.svg` extension.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, paper_scale: bool, threads: Option<usize>) -> memsim::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if paper_scale {
        cfg.scale = Scale::Paper;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg.normalized())
}

fn run(path: PathBuf, paper_scale: bool, threads: Option<usize>) -> ExitCode {
    let cfg = match load_config(&path, paper_scale, threads) {
        Ok(cfg) => cfg,
        Err(e @ MemsimError::Config { .. }) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("cannot load config {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    if cfg.threads > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let result = (|| {
        let label = format!(
            "{}-{}",
            serde_json::to_value(cfg.experiment)?.as_str().unwrap_or("run"),
            serde_json::to_value(cfg.task)?.as_str().unwrap_or("task")
        );
        let mut dir = ArtifactDir::create(&artifact_root(), &label)?;
        log::info!("writing artifacts to {}", dir.path().display());
        execute(&cfg, &mut dir)?;
        let mut inputs = vec![path.clone()];
        inputs.extend(cfg.geodesy.body_file.clone());
        inputs.extend(cfg.gcnet.dataset.clone());
        dir.finish(&cfg, &inputs)
    })();
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("run failed: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn plot(csv: PathBuf, kind: PlotKind, out: Option<PathBuf>) -> anyhow::Result<()> {
    let chart = load_chart(&csv, kind)?;
    let out = out.unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&out, chart.to_svg()).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, paper_scale, threads } => run(config, paper_scale, threads),
        Command::Plot { csv, kind, out } => match plot(csv, kind, out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("plot failed: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
