use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eet_core::config::Config;
use eet_core::formats;
use eet_core::pipeline::{self, FitInputs};

#[derive(Parser)]
#[command(name = "eet", version, about = "Token-pruned ViT hashing and Hamming retrieval")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer token counts, cost model and median timings.
    Profile {
        /// Timed runs per variant (default `profile.runs`; 0 skips timing).
        #[arg(long)]
        runs: Option<usize>,
        /// Optional per-layer CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic image set with manifests and teacher codes.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Encodes a manifest into features, hash outputs and packed codes.
    Encode {
        #[arg(long)]
        manifest: PathBuf,
        /// Model weights; seeded random weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solves for binary training codes from manifest labels.
    OptimizeCodes {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fits the classification and hash heads to target codes.
    FitHeads {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        masked: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// mAP and precision-recall of query codes against database codes.
    Eval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<Config> {
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg: Config = text.parse()?;
    for kv in &c.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn profile(cfg: &Config, runs: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let runs = runs.unwrap_or(cfg.profile_runs);
    let r = pipeline::cmd_profile(cfg, runs)?;
    println!("profile {} schedule {}", cfg.profile_name, cfg.schedule);
    println!("layer  tokens  tokens_pruned  gmacs  gmacs_pruned");
    for (i, (u, p)) in r.unpruned.layers.iter().zip(&r.pruned.layers).enumerate() {
        println!(
            "{:>5}  {:>6}  {:>13}  {:.4}  {:.4}",
            i + 1,
            u.tokens,
            p.tokens,
            u.total() as f64 / 1e9,
            p.total() as f64 / 1e9
        );
    }
    println!("GFLOPs (multiply-accumulates): {:.3} -> {:.3}", r.unpruned.gmacs(), r.pruned.gmacs());
    println!(
        "raw FLOPs (2 per MAC): {:.3}G -> {:.3}G",
        r.unpruned.flops() as f64 / 1e9,
        r.pruned.flops() as f64 / 1e9
    );
    println!("ratio pruned/unpruned: {:.4}", r.macs_ratio());
    if let Some((u, p)) = r.timing {
        println!(
            "median encoder ms over {runs} runs: {:.3} -> {:.3} (ratio {:.4}); heads {:.4} ms",
            u.encoder * 1e3,
            p.encoder * 1e3,
            p.encoder / u.encoder,
            p.heads * 1e3
        );
    }
    if let Some(path) = out {
        let mut f = formats::create(&path)?;
        writeln!(f, "layer,tokens,tokens_pruned,macs,macs_pruned")?;
        for (i, (u, p)) in r.unpruned.layers.iter().zip(&r.pruned.layers).enumerate() {
            writeln!(f, "{},{},{},{},{}", i + 1, u.tokens, p.tokens, u.total(), p.total())?;
        }
        f.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.common)?;
    match cli.cmd {
        Command::Profile { runs, out } => profile(&cfg, runs, out)?,
        Command::Synth { out } => {
            let s = pipeline::cmd_synth(&cfg, &out)?;
            println!("wrote {} train and {} query images to {}", s.train, s.query, out.display());
        }
        Command::Encode { manifest, weights, out } => {
            let s = pipeline::cmd_encode(&cfg, &manifest, weights.as_deref(), &out)?;
            println!("encoded {} items, {} failed", s.encoded, s.failures.len());
            for (p, e) in &s.failures {
                eprintln!("failed: {}: {e}", p.display());
            }
            if !s.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::OptimizeCodes { manifest, out } => {
            let s = pipeline::cmd_optimize_codes(&cfg, &manifest, &out)?;
            println!(
                "{} codes, {} iterations, objective {:.6e}",
                s.codes.len(),
                s.objective_trace.len() - 1,
                s.objective_trace.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::FitHeads {
            features,
            codes,
            masked,
            teacher,
            weights,
            out,
        } => {
            let inputs = FitInputs {
                features: &features,
                masked: masked.as_deref(),
                codes: &codes,
                teacher: teacher.as_deref(),
                weights: weights.as_deref(),
            };
            let r = pipeline::cmd_fit_heads(&cfg, &inputs, &out)?;
            println!(
                "loss {:.6} -> {:.6} (hash {:.6}, cls {:.6}, drg {:.6}, dkt {:.6}); bit error rate {:.4}",
                r.loss_trace[0],
                r.final_loss.total,
                r.final_loss.hash,
                r.final_loss.cls,
                r.final_loss.drg,
                r.final_loss.dkt,
                r.bit_error_rate
            );
        }
        Command::Eval { queries, db, out } => {
            let r = pipeline::cmd_eval(&cfg, &queries, &db, &out)?;
            println!("mAP {}", pipeline::format_map(r.map));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
