use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use holofit_bench::experiments::{bestterm, eval, learn};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "holofit", version = holofit_bench::provenance::BUILD_ID, about = "Sparse Legendre learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv and meta.json.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Best s-term curves of the product target.
    Bestterm(RunArgs),
    /// Sparse polynomial learning from samples.
    Learn(RunArgs),
    /// Learning with trained emulation networks.
    LearnDnn(RunArgs),
    /// Hilbert-valued learning of the parametric diffusion problem.
    Fem(RunArgs),
    /// Evaluate a saved network on CSV points.
    Eval {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn learn_mode(args: &RunArgs, mode: learn::Mode) -> Result<()> {
    let mut cfg: learn::LearnConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = learn::run_to_dir(&cfg, mode, args.threads, &args.out)?;
    let failed = out.rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{}: {} cells, {failed} failed, results in {}",
        mode.name(),
        out.rows.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Bestterm(args) => {
            let mut cfg: bestterm::BesttermConfig = read_config(&args.config)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let out = bestterm::run_to_dir(&cfg, args.threads, &args.out)?;
            for s in &out.summary {
                println!(
                    "d = {:>2}: slope {:+.3}  rms(alg) {:.3}  rms(exp) {:.3}",
                    s.d, s.slope, s.alg_rms_log_residual, s.exp_rms_log_residual
                );
            }
        }
        Cmd::Learn(args) => learn_mode(&args, learn::Mode::Learn)?,
        Cmd::LearnDnn(args) => learn_mode(&args, learn::Mode::LearnDnn)?,
        Cmd::Fem(args) => learn_mode(&args, learn::Mode::Fem)?,
        Cmd::Eval { network, input, out } => {
            let net = eval::load_network(&network)?;
            let input = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let n = eval::eval_network(&net, input, BufWriter::new(File::create(&out)?))?;
            println!("evaluated {n} points");
        }
    }
    Ok(())
}
