use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scene_cluster::clustering::Method;
use scene_cluster::config::PipelineConfig;
use scene_cluster::pipeline::{run_stage, RunOptions, Stage};
use scene_cluster::Error;

#[derive(Parser, Debug)]
#[command(name = "scene-cluster", version, about = "Cluster eating-scene images by eating environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Recompute even when cached outputs are current.
    #[arg(long)]
    force: bool,
    /// Also write per-image component tables.
    #[arg(long)]
    dump_intermediates: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic study.
    Synth(Common),
    /// Mask images, find the fiducial marker, crop local regions.
    Preprocess(Common),
    /// Extract pooled global and local feature vectors.
    Extract(Common),
    /// Cluster each participant's images.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// Overrides cluster.method from the config.
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Score clusterings of the test participants.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Grid search over fusion weight and layer on the validation participants.
    Sweep(Common),
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Command {
    fn split(self) -> (Stage, Common, Option<Method>) {
        match self {
            Command::Synth(c) => (Stage::Synth, c, None),
            Command::Preprocess(c) => (Stage::Preprocess, c, None),
            Command::Extract(c) => (Stage::Extract, c, None),
            Command::Cluster { common, method } => (Stage::Cluster, common, method),
            Command::Evaluate { common, method } => (Stage::Evaluate, common, method),
            Command::Sweep(c) => (Stage::Sweep, c, None),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingStage(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (stage, common, method) = Cli::parse().command.split();
    let opts = RunOptions {
        jobs: common.jobs,
        force: common.force,
        dump_intermediates: common.dump_intermediates,
        method,
    };
    let result = PipelineConfig::load(&common.config).and_then(|cfg| run_stage(&cfg, stage, &opts));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({
                "error": {
                    "stage": stage.as_str(),
                    "kind": e.kind(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{line}");
            ExitCode::from(exit_code(&e))
        }
    }
}
