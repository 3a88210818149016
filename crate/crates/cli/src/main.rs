//! `hetero-embed` command-line runner.
//!
//! Exit codes: 0 success, 2 config/parse/I/O, 3 sampler infeasibility,
//! 4 numerical failure, 5 shape mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetero_embed::dataset::{generate_synthetic, load_manifest};
use hetero_embed::pipeline::{compare, evaluate, train, MatchReport};
use hetero_embed::{Dataset, EmbeddingNet, Error, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "hetero-embed",
    about = "Heterogeneity-aware embedding training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain manifest
    Synth(CommonArgs),
    /// Train an embedding network and write a checkpoint plus a training log
    Train(CommonArgs),
    /// Evaluate a checkpoint on the held-out identities
    Eval(CommonArgs),
    /// Train the triplet baseline and the hetero loss on the same stream and compare
    Compare(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,

    /// Input manifest (.hem); synthetic data from the config when omitted
    #[arg(long)]
    data: Option<PathBuf>,

    /// Output file: manifest (synth), checkpoint (train) or report (eval, compare)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,

    /// Checkpoint to evaluate
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Training log CSV (train); defaults to <out>.log.csv
    #[arg(long)]
    log_out: Option<PathBuf>,

    /// ROC curve CSV (eval; the hetero run for compare)
    #[arg(long)]
    roc_out: Option<PathBuf>,

    /// CMC curve CSV (eval; the hetero run for compare)
    #[arg(long)]
    cmc_out: Option<PathBuf>,
}

impl CommonArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }

    fn dataset(&self, cfg: &RunConfig) -> Result<Dataset> {
        match &self.data {
            Some(p) => load_manifest(p),
            None => generate_synthetic(&cfg.synth),
        }
    }

    fn required_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_curves(args: &CommonArgs, report: &MatchReport) -> Result<()> {
    if let Some(p) = &args.roc_out {
        write(p, &report.roc.to_csv())?;
    }
    if let Some(p) = &args.cmc_out {
        write(p, &report.ident.to_csv())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let cfg = args.run_config()?;
            let out = args.required_out()?;
            let data = generate_synthetic(&cfg.synth)?;
            data.save_manifest(out)?;
            println!("samples={}", data.len());
            println!("identities={}", data.identities().len());
            println!("domains={}", data.domains().join(","));
        }
        Command::Train(args) => {
            let cfg = args.run_config()?;
            let out = args.required_out()?;
            let data = args.dataset(&cfg)?;
            let outcome = train(&cfg, &data)?;
            outcome.net.save(out)?;
            let log_path = args.log_out.clone().unwrap_or_else(|| {
                let mut name = out.as_os_str().to_owned();
                name.push(".log.csv");
                PathBuf::from(name)
            });
            outcome.log.save(&log_path)?;
            for r in &outcome.log.records {
                println!(
                    "epoch={} mean_loss={:.6} mean_l1={:.6} mean_l2={:.6} active={:.4} lr={:e}",
                    r.epoch, r.mean_loss, r.mean_l1, r.mean_l2, r.active_fraction, r.lr
                );
            }
        }
        Command::Eval(args) => {
            let cfg = args.run_config()?;
            let ckpt = args
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
            let net = EmbeddingNet::load(ckpt)?;
            let data = args.dataset(&cfg)?;
            let outcome = evaluate(&cfg, &net, &data)?;
            let report = outcome.to_report();
            print!("{report}");
            if let Some(out) = &args.out {
                write(out, &report)?;
            }
            write_curves(&args, &outcome.overall)?;
        }
        Command::Compare(args) => {
            let cfg = args.run_config()?;
            let data = args.dataset(&cfg)?;
            let cmp = compare(&cfg, &data)?;
            let report = cmp.to_report();
            print!("{report}");
            if let Some(out) = &args.out {
                write(out, &report)?;
            }
            write_curves(&args, &cmp.hetero.eval.overall)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
