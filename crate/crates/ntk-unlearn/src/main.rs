//! Experiment CLI: dataset generation, per-step training/scrubbing/baselines,
//! checkpoint evaluation, full pipeline runs, and report display.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ntk_unlearn::harness::{
    accuracy, calibrated_init, checkpoint_path, dataset_for_seed, ensure_output_dirs,
    execute_method, load_config, per_class_accuracy, run_experiment_opts, save_dataset,
    train_full_model, Dataset, ExperimentConfig, Method, SplitTag, RELEARN_CAP, RELEARN_THRESHOLD,
};
use ntk_unlearn::models::{load_checkpoint, save_checkpoint, select_params, Model};
use ntk_unlearn::rng::sub_seed;
use ntk_unlearn::trainer::relearn_epochs;
use ntk_unlearn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ntk-unlearn",
    version,
    about = "Parameter-efficient kernel-based machine unlearning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed to operate on; defaults to the first seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Retrain,
    Maxloss,
    Randomlabel,
}

impl BaselineKind {
    fn method(self) -> Method {
        match self {
            BaselineKind::Retrain => Method::Retrain,
            BaselineKind::Maxloss => Method::MaxLoss,
            BaselineKind::Randomlabel => Method::RandomLabel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate one seed's dataset and save it as a binary container.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to <output_dir>/dataset_<seed>.bin.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune on the full training split, saving init and full checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// One-shot scrub of the fine-tuned checkpoint (run `train` first).
    Scrub {
        #[command(flatten)]
        common: Common,
    },
    /// Run one baseline from its starting checkpoint (run `train` first).
    Baseline {
        #[arg(value_enum)]
        which: BaselineKind,
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy and relearning metrics for a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full pipeline: every seed, every method, aggregated report.
    Run {
        /// Experiment config file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Run seeds on worker threads (identical output, unordered progress).
        #[arg(long)]
        parallel_seeds: bool,
    },
    /// Print the report produced by a previous `run`.
    Report {
        /// Experiment config file (TOML).
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let mut config = load_config(path)?;
    config.apply_env_overrides()?;
    config.validate()?;
    Ok(config)
}

fn load_with_seed(common: &Common) -> Result<(ExperimentConfig, u64)> {
    let config = load(&common.config)?;
    let seed = common.seed.unwrap_or(config.seeds[0]);
    Ok((config, seed))
}

fn split_sizes(dataset: &Dataset) -> String {
    format!(
        "{} retain, {} forget, {} holdout",
        dataset.count(SplitTag::Retain),
        dataset.count(SplitTag::Forget),
        dataset.count(SplitTag::Holdout)
    )
}

fn load_required(config: &ExperimentConfig, name: &str, seed: u64) -> Result<Model> {
    let path = checkpoint_path(config, name, seed);
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "missing checkpoint {} (run `ntk-unlearn train` for this seed first)",
            path.display()
        )));
    }
    load_checkpoint(&path)
}

fn print_split_accuracies(model: &Model, dataset: &Dataset) -> Result<()> {
    for tag in [SplitTag::Retain, SplitTag::Forget, SplitTag::Holdout] {
        if dataset.count(tag) == 0 {
            println!("acc_{tag} = -");
            continue;
        }
        println!("acc_{tag} = {:.4}", accuracy(model, dataset, &[tag])?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let (config, seed) = load_with_seed(&common)?;
            let dataset = dataset_for_seed(&config, seed)?;
            let path = match out {
                Some(p) => p,
                None => {
                    std::fs::create_dir_all(&config.output_dir)?;
                    config.output_dir.join(format!("dataset_{seed}.bin"))
                }
            };
            save_dataset(&dataset, &path)?;
            println!(
                "wrote {} ({} samples: {})",
                path.display(),
                dataset.len(),
                split_sizes(&dataset)
            );
        }
        Command::Train { common } => {
            let (config, seed) = load_with_seed(&common)?;
            ensure_output_dirs(&config)?;
            let dataset = dataset_for_seed(&config, seed)?;
            let model_init = calibrated_init(&config, &dataset, seed)?;
            save_checkpoint(&model_init, &checkpoint_path(&config, "init", seed))?;
            let model_full = train_full_model(&config, &dataset, seed, &model_init)?;
            // Saves the checkpoint through the same path as the pipeline.
            let model_full =
                execute_method(&config, &dataset, seed, Method::Full, &model_init, &model_full)?;
            println!(
                "trained seed {seed} on {} samples ({})",
                dataset.count(SplitTag::Retain) + dataset.count(SplitTag::Forget),
                split_sizes(&dataset)
            );
            print_split_accuracies(&model_full, &dataset)?;
        }
        Command::Scrub { common } => {
            let (config, seed) = load_with_seed(&common)?;
            ensure_output_dirs(&config)?;
            let dataset = dataset_for_seed(&config, seed)?;
            let model_init = load_required(&config, "init", seed)?;
            let model_full = load_required(&config, "full", seed)?;
            let scrubbed = execute_method(
                &config,
                &dataset,
                seed,
                Method::FastNtk,
                &model_init,
                &model_full,
            )?;
            let report_path = config.output_dir.join(format!("scrub_{seed}.txt"));
            print!("{}", std::fs::read_to_string(&report_path)?);
            print_split_accuracies(&scrubbed, &dataset)?;
        }
        Command::Baseline { which, common } => {
            let (config, seed) = load_with_seed(&common)?;
            ensure_output_dirs(&config)?;
            let dataset = dataset_for_seed(&config, seed)?;
            let method = which.method();
            let model_init = load_required(&config, "init", seed)?;
            // Retrain starts from the init; the post-hoc baselines need Full.
            let model_full = match method {
                Method::Retrain => model_init.clone(),
                _ => load_required(&config, "full", seed)?,
            };
            let model = execute_method(&config, &dataset, seed, method, &model_init, &model_full)?;
            println!("{} finished for seed {seed}", method.label());
            print_split_accuracies(&model, &dataset)?;
        }
        Command::Eval { common, checkpoint } => {
            let (config, seed) = load_with_seed(&common)?;
            let dataset = dataset_for_seed(&config, seed)?;
            let model = load_checkpoint(&checkpoint)?;
            println!("checkpoint {}", checkpoint.display());
            print_split_accuracies(&model, &dataset)?;
            if dataset.count(SplitTag::Holdout) > 0 {
                let per_class = per_class_accuracy(&model, &dataset, &[SplitTag::Holdout])?;
                let cells: Vec<String> = per_class
                    .iter()
                    .map(|v| match v {
                        Some(a) => format!("{a:.4}"),
                        None => "-".into(),
                    })
                    .collect();
                println!("holdout_per_class = [{}]", cells.join(", "));
            }
            let mask = select_params(&config.model, &config.mask_strategy)?;
            let relearn_cfg = config.train.to_config(mask, sub_seed(seed, "relearn_eval"));
            let (forget_inputs, forget_labels) = dataset.select(&[SplitTag::Forget]);
            let relearn = relearn_epochs(
                &model,
                &forget_inputs,
                &forget_labels,
                &relearn_cfg,
                RELEARN_THRESHOLD,
                RELEARN_CAP,
            )?;
            println!(
                "relearn_epochs = {} (threshold {}, cap {})",
                relearn.epochs_label(),
                relearn.threshold,
                relearn.cap
            );
        }
        Command::Run {
            config,
            parallel_seeds,
        } => {
            let config = load(&config)?;
            let report = run_experiment_opts(&config, parallel_seeds)?;
            print!("{}", report.to_text());
            println!("\nartifacts under {}", config.output_dir.display());
        }
        Command::Report { config } => {
            let config = load(&config)?;
            let path = config.output_dir.join("metrics_report.txt");
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "no report at {} (run `ntk-unlearn run` first)",
                    path.display()
                )));
            }
            print!("{}", std::fs::read_to_string(&path)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
