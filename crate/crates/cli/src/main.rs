use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use npode::metrics::CiKind;
use npode::DecoderKind;
use npode_cli::commands::{self, CONFIG_FILE, PREDICTIONS_FILE};
use npode_cli::{CliError, ModelKind, RunConfig};

#[derive(Parser)]
#[command(name = "npode", version, about = "Neural-process surrogates with an ODE decoder")]
struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for inputs and outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides data.seed, split.seed and train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["npode", "np", "gp-matern", "gp-poly"])]
    model: Option<String>,
    #[arg(long, global = true, value_parser = ["one_sigma", "ci95"])]
    ci: Option<String>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated dataset and its metadata sidecar.
    Generate,
    /// Split, normalize and fit the configured model.
    Train,
    /// Score a trained run on its held-out rows or on --data.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict at the x columns of a CSV file.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Draw SVG figures from the run's evaluation.
    Plot {
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Decoder parameter counts; both decoders unless --model is given.
    Params,
}

fn resolve(cli: &Cli, reads_run: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if reads_run && cli.out.join(CONFIG_FILE).exists() => RunConfig::load(&cli.out.join(CONFIG_FILE))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        for key in ["data.seed", "split.seed", "train.seed"] {
            cfg.set(key, &seed.to_string())?;
        }
    }
    if let Some(model) = &cli.model {
        cfg.set("model.kind", model)?;
    }
    if let Some(ci) = &cli.ci {
        cfg.set("eval.ci", ci)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let reads_run = !matches!(cli.command, Command::Generate | Command::Train | Command::Params);
    let cfg = resolve(&cli, reads_run)?;
    match &cli.command {
        Command::Generate => {
            let s = commands::generate(&cfg, &cli.out)?;
            println!("wrote {} ({} rows, {} x-columns, {} y-columns)", s.path.display(), s.rows, s.x_dim, s.y_dim);
        }
        Command::Train => {
            let s = commands::train(&cfg, &cli.out)?;
            println!(
                "trained {} on {} rows ({} held out) in {:.1}s -> {}",
                s.kind.as_str(),
                s.train_rows,
                s.test_rows,
                s.seconds,
                s.artifact.display()
            );
            if let Some(loss) = s.final_loss {
                println!("final loss {loss:.6}");
            }
        }
        Command::Evaluate { data } => {
            let ci: CiKind = cfg.ci()?;
            let e = commands::evaluate(&cli.out, &cfg, data.as_deref(), ci)?;
            println!("{} test rows", e.rows);
            println!("physical   {}", e.physical.summary_line());
            println!("normalized {}", e.normalized.summary_line());
            if e.train_rmse > e.physical.rmse {
                eprintln!(
                    "warning: training rmse {:.6} exceeds test rmse {:.6}",
                    e.train_rmse, e.physical.rmse
                );
            }
        }
        Command::Predict { input, output } => {
            let output = output.clone().unwrap_or_else(|| cli.out.join(PREDICTIONS_FILE));
            let n = commands::predict(&cli.out, &cfg, input, &output)?;
            println!("wrote {n} predictions to {}", output.display());
        }
        Command::Plot { reference } => {
            for path in commands::plot(&cli.out, reference.as_deref())? {
                println!("wrote {}", path.display());
            }
        }
        Command::Params => {
            let kinds = match cli.model.as_deref() {
                None => vec![DecoderKind::Npode, DecoderKind::Mlp],
                Some(m) => {
                    let kind: ModelKind = m.parse().map_err(CliError::Config)?;
                    vec![kind
                        .decoder()
                        .ok_or_else(|| CliError::Config(format!("{m} has no decoder to count")))?]
                }
            };
            std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
            let mut totals = Vec::new();
            for kind in kinds {
                let report = commands::params(&cfg, kind)?;
                print!("{}", report.to_text());
                let path = cli.out.join(format!("params_{}.csv", kind.as_str()));
                std::fs::write(&path, report.to_csv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                totals.push(report.total);
            }
            if let [npode, mlp] = totals[..] {
                println!("ratio {:.2}x ({mlp} / {npode})", mlp as f64 / npode as f64);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
