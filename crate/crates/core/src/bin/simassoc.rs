use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use simassoc::baselines::CostKind;
use simassoc::config::RunConfig;
use simassoc::pipeline::{self, Models, DATA_ENV};
use simassoc::tracker::Solver;

#[derive(Parser)]
#[command(name = "simassoc", version, about = "Learned similarity and association for 3D multi-object tracking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set simnet.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Data directory [env: SIMASSOC_DATA, default: data].
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training and test sequences.
    GenerateData,
    /// Train a network.
    Train {
        #[arg(value_enum)]
        network: Network,
        /// Directory receiving checkpoints and the training log.
        #[arg(long, default_value = "models")]
        models: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Similarity used to build assocnet training maps.
        #[arg(long, default_value = "simnet")]
        cost: String,
    },
    /// Track every sequence of a directory (scenario files or KITTI labels).
    Track {
        /// Input directory [default: <data>/test].
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "models")]
        models: PathBuf,
        #[arg(long, default_value = "assocnet")]
        association: String,
        #[arg(long, default_value = "simnet")]
        cost: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// CLEAR MOT metrics of hypothesis tracks against ground-truth labels.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Also write report.txt and report.kv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Track and evaluate all six cost/association combinations.
    Ablate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "models")]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Network {
    Simnet,
    Assocnet,
}

fn data_dir(common: &Common) -> PathBuf {
    common
        .data
        .clone()
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn cost(s: &str) -> Result<CostKind> {
    CostKind::parse(s).with_context(|| format!("unknown cost {s:?} (expected simnet, euclidean, manhattan, bhattacharyya or chisquare)"))
}

fn emit(record: serde_json::Value) {
    println!("{record}");
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), &cli.common.set)?;
    let data = data_dir(&cli.common);
    match cli.command {
        Command::GenerateData => {
            let s = pipeline::generate_data(&cfg, &data)?;
            emit(serde_json::json!({ "command": "generate-data", "data": data, "summary": s }));
        }
        Command::Train { network: Network::Simnet, models, resume, .. } => {
            let r = pipeline::train_simnet_cmd(&cfg, &data, &models, resume.as_deref())?;
            emit(serde_json::json!({
                "command": "train", "network": "simnet", "best_epoch": r.best_epoch,
                "best_val_accuracy": r.best_val_accuracy, "stopped_early": r.stopped_early,
            }));
        }
        Command::Train { network: Network::Assocnet, models, resume, cost: c } => {
            let r = pipeline::train_assocnet_cmd(&cfg, &data, &models, cost(&c)?, resume.as_deref())?;
            emit(serde_json::json!({
                "command": "train", "network": "assocnet", "best_epoch": r.best_epoch,
                "best_val_accuracy": r.best_val_accuracy, "stopped_early": r.stopped_early,
            }));
        }
        Command::Track { input, models, association, cost: c, out } => {
            let solver: Solver = association.parse().map_err(anyhow::Error::msg)?;
            let c = cost(&c)?;
            let m = Models::load(&models, c, solver)?;
            let input = input.unwrap_or_else(|| data.join("test"));
            let s = pipeline::track_cmd(&cfg, &input, &m, c, solver, &out)?;
            log::info!("tracked {} frames at {:.2} ms/frame", s.frames, s.mean_frame_ms);
            emit(serde_json::json!({ "command": "track", "summary": s }));
        }
        Command::Evaluate { gt, hyp, out } => {
            let r = pipeline::evaluate_dirs(&cfg, &gt, &hyp)?;
            let label = hyp.file_name().map_or_else(|| hyp.display().to_string(), |n| n.to_string_lossy().into_owned());
            let rows = vec![(label, r.clone())];
            print!("{}", simassoc::eval::MotReport::table(&rows));
            if let Some(out) = out {
                pipeline::write_report(&out, &rows)?;
            }
            if r.gt == 0 {
                log::warn!("no ground truth objects: MOTA is undefined");
            }
        }
        Command::Ablate { input, models, out } => {
            let m = Models::load_for(&models, &pipeline::ABLATION)?;
            let input = input.unwrap_or_else(|| data.join("test"));
            let rows = pipeline::ablate_cmd(&cfg, &input, &m, &out)?;
            let table: Vec<_> = rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect();
            print!("{}", simassoc::eval::MotReport::table(&table));
            for r in &rows {
                emit(serde_json::json!({ "command": "ablate", "row": r.label, "summary": r.summary }));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
