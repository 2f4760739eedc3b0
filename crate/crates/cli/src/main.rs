//! `freeview`: runs pipeline stages from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use freeview_core::pipeline::{run_stage, PipelineConfig, PipelineError, Stage};
use freeview_core::synthetic::{write_synthetic_bundle, SYNTHETIC_SEED};
use log::error;

#[derive(Parser, Debug)]
#[command(name = "freeview", version, about = "Certainty-guided free-view generation for Gaussian scenes")]
struct Args {
    /// Pipeline config (key = value lines under [section] headers).
    #[arg(long, required_unless_present = "write_synthetic")]
    config: Option<PathBuf>,

    /// grid, candidates, graph, select, render, batches, schedule or all.
    #[arg(long, default_value = "all")]
    stage: Stage,

    /// Worker thread cap; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,

    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Write the bundled synthetic scene (scene.ply, transforms.json) here and exit.
    #[arg(long, value_name = "DIR")]
    write_synthetic: Option<PathBuf>,
}

fn run(args: Args) -> anyhow::Result<()> {
    if let Some(dir) = &args.write_synthetic {
        write_synthetic_bundle(dir, SYNTHETIC_SEED).with_context(|| format!("writing {}", dir.display()))?;
        return Ok(());
    }
    let path = args.config.expect("clap enforces --config");
    let mut config = PipelineConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if let Some(out) = args.output {
        config.output_dir = out;
    }
    rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global()?;
    let manifest = run_stage(args.stage, &config)?;
    if let Some(c) = manifest.counts {
        println!("pool {} -> feasible {} -> nms {} -> gated {} -> final {}", c.pool, c.feasible, c.nms, c.gated, c.r#final);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            // distinct codes let scripts tell a missing input from a bad config
            match e.downcast_ref::<PipelineError>() {
                Some(PipelineError::MissingPrerequisite(_)) => ExitCode::from(3),
                Some(PipelineError::ConfigParse { .. }) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
