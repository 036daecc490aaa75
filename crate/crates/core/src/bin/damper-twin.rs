use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use damper_twin::dataset::split_by_runs;
use damper_twin::metrics::REPORT_HEADER;
use damper_twin::{
    dump_predictions, evaluate, run_ablation, run_pipeline, train, Error, MlpModel, PreparedDataset,
    RawDataset, Result, RunConfig, ScalingState, StageToggles,
};

#[derive(Parser)]
#[command(name = "damper-twin", version, about = "Shock absorber digital twin toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the test program and write the raw CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data_seed` of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split, scale and prepare the training partition of a raw CSV.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated subset of index,augment,oversample, or `none`.
        #[arg(long)]
        stages: String,
        /// Prepared training data.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scaled, otherwise untouched test partition.
        #[arg(long)]
        test_out: Option<PathBuf>,
        #[arg(long)]
        scaling_out: Option<PathBuf>,
        /// Stage audit log (stage,rows_in,rows_out).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train a regressor on a prepared CSV.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-epoch training loss.
        #[arg(long)]
        loss_out: Option<PathBuf>,
    },
    /// Score a model on a prepared test CSV; prints one report row.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "model")]
        name: String,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run the stage ablation end to end.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-configuration predictions and stage logs.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.data_seed = seed;
            }
            let data = cfg.generate()?;
            data.save_csv(&out)?;
            eprintln!("wrote {} records to {}", data.len(), out.display());
        }
        Command::Preprocess {
            input,
            stages,
            out,
            config,
            test_out,
            scaling_out,
            log,
        } => {
            let cfg = load_config(config.as_deref())?;
            let stages = StageToggles::parse(&stages)?;
            let raw = RawDataset::load_csv(&input)?;
            let (train_raw, test_raw) = split_by_runs(&raw, &cfg.held_out())?;
            let scaling = ScalingState::fit(&train_raw)?;
            let prepared = run_pipeline(&train_raw, stages, &cfg.pipeline, &scaling)?;
            prepared.data.save_csv(&out)?;
            if let Some(path) = test_out {
                scaling.apply(&test_raw).save_csv(path)?;
            }
            if let Some(path) = scaling_out {
                scaling.save_json(path)?;
            }
            if let Some(path) = log {
                prepared.log.save_csv(path)?;
            }
            for e in prepared.log.entries() {
                eprintln!("{:>10}: {} -> {}", e.stage.name(), e.rows_in, e.rows_out);
            }
        }
        Command::Train {
            input,
            model_out,
            config,
            loss_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = PreparedDataset::load_csv(&input)?;
            let model = MlpModel::init(&cfg.mlp)?;
            let outcome = train(&model, &data, &cfg.mlp)?;
            outcome.model.save_json(&model_out)?;
            if let Some(path) = loss_out {
                let mut text = String::from("epoch,loss\n");
                for (i, l) in outcome.loss_history.iter().enumerate() {
                    text.push_str(&format!("{},{l}\n", i + 1));
                }
                std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
            }
            if let Some(loss) = outcome.model.metadata.final_train_loss {
                eprintln!("final train loss {loss:.6e}");
            }
        }
        Command::Evaluate {
            model,
            test,
            name,
            predictions,
        } => {
            let model = MlpModel::load_json(&model)?;
            let test = PreparedDataset::load_csv(&test)?;
            let y_pred = model.forward_batch(&test.inputs())?;
            let report = evaluate(&test.targets(), &y_pred)?;
            println!("{REPORT_HEADER}");
            println!("{}", report.csv_row(&name));
            if let Some(path) = predictions {
                dump_predictions(&model, &test, path)?;
            }
        }
        Command::Ablate {
            config,
            report,
            artifacts,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = cfg.generate()?;
            let result = run_ablation(&cfg.ablation_spec(), &data)?;
            result.save_csv(&report)?;
            if let Some(dir) = artifacts {
                result.save_artifacts(dir)?;
            }
            print!("{}", result.to_csv());
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
