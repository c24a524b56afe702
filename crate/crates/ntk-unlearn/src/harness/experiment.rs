//! Experiment orchestration: config parsing, per-seed runs of every method,
//! metric aggregation, and the artifacts written under the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    accuracy, gen_blobs, load_idx, per_class_accuracy, split_forget, Dataset, SplitTag,
};
use crate::models::{param_accounting, select_params, MaskStrategy, Model, ModelSpec, ParamMask};
use crate::ntk::memory_estimate;
use crate::numerics::{DenseMatrix, JitterPolicy};
use crate::rng::sub_seed;
use crate::scrub::{scrub, EvalPoint, ScrubOptions};
use crate::trainer::{
    finetune_monitored, history_csv, logits_accuracy, max_loss_unlearn, model_accuracy,
    random_label_unlearn, relearn_epochs, HistoryRow, Loss, Optimizer, RelearnEpochs,
    RelearnResult, TrainConfig,
};

/// Overrides `output_dir` when set in the environment.
pub const ENV_OUTPUT_DIR: &str = "NTK_UNLEARN_OUTPUT_DIR";
/// Overrides `memory_budget` (bytes) when set in the environment.
pub const ENV_MEMORY_BUDGET: &str = "NTK_UNLEARN_MEMORY_BUDGET";

/// Mean forget loss below this counts as relearned.
pub const RELEARN_THRESHOLD: f64 = 0.05;
/// Relearning epochs are capped here; past it the count reports as ">cap".
pub const RELEARN_CAP: usize = 100;

/// An unlearning method evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fine-tune on all training data; the "nothing forgotten" anchor.
    Full,
    /// Gradient ascent on the forget loss from the fine-tuned model.
    MaxLoss,
    /// Fine-tune the fine-tuned model on randomly relabeled forget samples.
    RandomLabel,
    /// One-shot kernel scrub of the fine-tuned model.
    FastNtk,
    /// Fine-tune from the initialization on retain data only; the gold
    /// standard the others are judged against.
    Retrain,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Full,
        Method::MaxLoss,
        Method::RandomLabel,
        Method::FastNtk,
        Method::Retrain,
    ];

    /// Human-facing name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Full => "Full",
            Method::MaxLoss => "MaxLoss",
            Method::RandomLabel => "RandomLabel",
            Method::FastNtk => "FastNTK",
            Method::Retrain => "Retrain",
        }
    }

    /// Stable lowercase tag used in file names and seed derivation.
    pub fn tag(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::MaxLoss => "maxloss",
            Method::RandomLabel => "randomlabel",
            Method::FastNtk => "fastntk",
            Method::Retrain => "retrain",
        }
    }
}

/// Where the data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// Synthetic Gaussian clusters regenerated per seed.
    Blobs {
        num_classes: usize,
        images_per_class: usize,
        input_dim: usize,
        class_separation: f64,
    },
    /// IDX image/label pairs, identical across seeds.
    IdxFiles {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holdout_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holdout_labels: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit_per_class: Option<usize>,
    },
}

/// Optimizer settings shared by every training run in an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    /// Mirrors `TrainConfig::new`; a test pins the two together.
    fn default() -> Self {
        TrainSettings {
            loss: Loss::MseOnehot,
            optimizer: Optimizer::SgdMomentum,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, mask: ParamMask, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            mask,
        }
    }
}

/// Settings for the one-shot scrub.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrubSettings {
    pub jitter: JitterPolicy,
    pub residuals_at: EvalPoint,
    pub block_size: usize,
}

impl Default for ScrubSettings {
    fn default() -> Self {
        let defaults = ScrubOptions::default();
        ScrubSettings {
            jitter: defaults.policy,
            residuals_at: defaults.residuals_at,
            block_size: defaults.block_size,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Full description of an experiment. Scalar fields precede the nested tables
/// so the TOML serializer can emit the struct in declaration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub forget_classes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_budget: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub model: ModelSpec,
    pub mask_strategy: MaskStrategy,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub scrub: ScrubSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let mask = select_params(&self.model, &self.mask_strategy)?;
        self.train.to_config(mask, 0).validate()?;
        self.scrub.jitter.validate()?;
        if self.scrub.block_size == 0 {
            return Err(Error::InvalidConfig("scrub block_size must be >= 1".into()));
        }
        if self.forget_classes.is_empty() {
            return Err(Error::InvalidConfig(
                "forget_classes must name at least one class".into(),
            ));
        }
        for &class in &self.forget_classes {
            if class >= self.model.num_classes {
                return Err(Error::UnknownClass {
                    class,
                    num_classes: self.model.num_classes,
                });
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must list at least one seed".into()));
        }
        for required in [Method::FastNtk, Method::Retrain] {
            if !self.methods.contains(&required) {
                return Err(Error::InvalidConfig(format!(
                    "methods must include {} (comparisons are anchored to it)",
                    required.label()
                )));
            }
        }
        if let DataConfig::Blobs {
            num_classes,
            input_dim,
            images_per_class,
            class_separation,
        } = &self.data
        {
            if *num_classes != self.model.num_classes || *input_dim != self.model.input_dim {
                return Err(Error::InvalidConfig(format!(
                    "blob data is {num_classes} classes x {input_dim} dims but the model expects {} x {}",
                    self.model.num_classes, self.model.input_dim
                )));
            }
            if *images_per_class == 0 || !(*class_separation > 0.0) {
                return Err(Error::InvalidConfig(
                    "blobs need images_per_class >= 1 and class_separation > 0".into(),
                ));
            }
        }
        if let DataConfig::IdxFiles {
            holdout_images,
            holdout_labels,
            ..
        } = &self.data
        {
            if holdout_images.is_some() != holdout_labels.is_some() {
                return Err(Error::InvalidConfig(
                    "holdout_images and holdout_labels must be given together".into(),
                ));
            }
        }
        Ok(())
    }

    /// Applies explicit overrides; `None` keeps the config value.
    pub fn apply_overrides(
        &mut self,
        output_dir: Option<String>,
        memory_budget: Option<String>,
    ) -> Result<()> {
        if let Some(dir) = output_dir {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(raw) = memory_budget {
            let bytes: u64 = raw.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("memory budget override {raw:?} is not a byte count"))
            })?;
            self.memory_budget = Some(bytes);
        }
        Ok(())
    }

    /// Applies the `NTK_UNLEARN_*` environment overrides.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        self.apply_overrides(
            std::env::var(ENV_OUTPUT_DIR).ok(),
            std::env::var(ENV_MEMORY_BUDGET).ok(),
        )
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        Error::InvalidConfig(format!("{}: {e}", path.display()))
    })
}

/// Per-seed metric rows for one method, in the experiment's seed order.
#[derive(Debug, Clone)]
pub struct MethodMetrics {
    pub method: Method,
    pub acc_retain: Vec<f64>,
    pub acc_forget: Vec<f64>,
    pub acc_holdout: Vec<f64>,
    /// Hold-out accuracy per class, per seed; `None` where the class has no
    /// hold-out samples.
    pub holdout_per_class: Vec<Vec<Option<f64>>>,
    pub relearn: Vec<RelearnResult>,
}

impl MethodMetrics {
    fn new(method: Method) -> Self {
        MethodMetrics {
            method,
            acc_retain: Vec::new(),
            acc_forget: Vec::new(),
            acc_holdout: Vec::new(),
            holdout_per_class: Vec::new(),
            relearn: Vec::new(),
        }
    }

    pub fn csv(&self, seeds: &[u64]) -> String {
        let mut out = String::from("seed,acc_retain,acc_forget,acc_holdout,relearn_epochs\n");
        for (i, &seed) in seeds.iter().enumerate() {
            out.push_str(&format!(
                "{seed},{},{},{},{}\n",
                self.acc_retain[i],
                self.acc_forget[i],
                self.acc_holdout[i],
                self.relearn[i].epochs_label()
            ));
        }
        out
    }
}

/// Aggregated results for a whole experiment.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub seeds: Vec<u64>,
    pub num_classes: usize,
    /// Masked fraction of all trainable parameters.
    pub params_ratio: f64,
    /// Masked fraction when the head is counted as masked too (what a
    /// deployment that always adapts its head would update).
    pub params_ratio_with_head: f64,
    pub methods: Vec<MethodMetrics>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

fn acc_cell(values: &[f64]) -> String {
    if values.iter().any(|v| v.is_nan()) {
        return "-".into();
    }
    let (mean, std) = mean_std(values);
    format!("{mean:.4} \u{b1} {std:.4}")
}

pub(super) fn relearn_cell(relearn: &[RelearnResult]) -> String {
    if let Some(overflowed) = relearn
        .iter()
        .find(|r| r.epochs == RelearnEpochs::Overflow)
    {
        return format!(">{}", overflowed.cap);
    }
    let counts: Vec<f64> = relearn
        .iter()
        .map(|r| match r.epochs {
            RelearnEpochs::Count(k) => k as f64,
            RelearnEpochs::Overflow => unreachable!(),
        })
        .collect();
    let (mean, std) = mean_std(&counts);
    format!("{mean:.1} \u{b1} {std:.1}")
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = format!("unlearning metrics over seeds [{}]\n", seeds.join(", "));
        out.push_str(&format!(
            "masked parameter ratio: {:.6} (head included: {:.6})\n\n",
            self.params_ratio, self.params_ratio_with_head
        ));
        out.push_str(&format!(
            "{:<13}{:>18}{:>18}{:>18}{:>14}\n",
            "method", "retain", "forget", "holdout", "relearn"
        ));
        for m in &self.methods {
            out.push_str(&format!(
                "{:<13}{:>18}{:>18}{:>18}{:>14}\n",
                m.method.label(),
                acc_cell(&m.acc_retain),
                acc_cell(&m.acc_forget),
                acc_cell(&m.acc_holdout),
                relearn_cell(&m.relearn)
            ));
        }
        out.push_str("\nhold-out accuracy by class (mean over seeds)\n");
        out.push_str(&format!("{:<13}", "method"));
        for class in 0..self.num_classes {
            out.push_str(&format!("{:>10}", format!("class {class}")));
        }
        out.push('\n');
        for m in &self.methods {
            out.push_str(&format!("{:<13}", m.method.label()));
            for class in 0..self.num_classes {
                let values: Vec<f64> = m
                    .holdout_per_class
                    .iter()
                    .filter_map(|per_seed| per_seed[class])
                    .collect();
                if values.len() == self.seeds.len() {
                    out.push_str(&format!("{:>10.4}", mean_std(&values).0));
                } else {
                    out.push_str(&format!("{:>10}", "-"));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn build_dataset(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &config.data {
        DataConfig::Blobs {
            num_classes,
            images_per_class,
            input_dim,
            class_separation,
        } => gen_blobs(
            *num_classes,
            *images_per_class,
            *input_dim,
            *class_separation,
            seed,
        ),
        DataConfig::IdxFiles {
            images,
            labels,
            holdout_images,
            holdout_labels,
            limit_per_class,
        } => {
            let c = Some(config.model.num_classes);
            let train = load_idx(images, labels, *limit_per_class, c)?;
            let Some((h_images, h_labels)) = holdout_images.as_ref().zip(holdout_labels.as_ref())
            else {
                return Ok(train);
            };
            let holdout = load_idx(h_images, h_labels, *limit_per_class, c)?;
            if holdout.input_dim() != train.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "idx holdout".into(),
                    expected: format!("{} input dims", train.input_dim()),
                    got: format!("{}", holdout.input_dim()),
                });
            }
            let n = train.len() + holdout.len();
            let mut inputs = DenseMatrix::zeros(n, train.input_dim());
            let mut all_labels = Vec::with_capacity(n);
            let mut tags = Vec::with_capacity(n);
            for s in 0..train.len() {
                inputs.row_mut(s).copy_from_slice(train.inputs.row(s));
                all_labels.push(train.labels[s]);
                tags.push(SplitTag::Retain);
            }
            for s in 0..holdout.len() {
                inputs
                    .row_mut(train.len() + s)
                    .copy_from_slice(holdout.inputs.row(s));
                all_labels.push(holdout.labels[s]);
                tags.push(SplitTag::Holdout);
            }
            Dataset::new(inputs, all_labels, config.model.num_classes, tags)
        }
    }
}

/// Hold-out metrics degrade to NaN/None when the split is empty (IDX runs
/// without hold-out files) and the report renders them as "-".
fn holdout_metrics(model: &Model, dataset: &Dataset) -> Result<(f64, Vec<Option<f64>>)> {
    if dataset.count(SplitTag::Holdout) == 0 {
        return Ok((f64::NAN, vec![None; dataset.num_classes]));
    }
    Ok((
        accuracy(model, dataset, &[SplitTag::Holdout])?,
        per_class_accuracy(model, dataset, &[SplitTag::Holdout])?,
    ))
}

struct SeedRun<'a> {
    config: &'a ExperimentConfig,
    dataset: Dataset,
    mask: ParamMask,
    seed: u64,
    retain_inputs: DenseMatrix,
    retain_labels: Vec<usize>,
    forget_inputs: DenseMatrix,
    forget_labels: Vec<usize>,
}

impl<'a> SeedRun<'a> {
    fn new(config: &'a ExperimentConfig, dataset: Dataset, mask: ParamMask, seed: u64) -> Self {
        let (retain_inputs, retain_labels) = dataset.select(&[SplitTag::Retain]);
        let (forget_inputs, forget_labels) = dataset.select(&[SplitTag::Forget]);
        SeedRun {
            config,
            dataset,
            mask,
            seed,
            retain_inputs,
            retain_labels,
            forget_inputs,
            forget_labels,
        }
    }
}

impl SeedRun<'_> {
    fn write(&self, rel: &str, contents: &str) -> Result<()> {
        let path = self.config.output_dir.join(rel);
        std::fs::write(path, contents)?;
        Ok(())
    }

    fn save_model(&self, name: &str, model: &Model) -> Result<()> {
        let path = self
            .config
            .output_dir
            .join("models")
            .join(format!("{name}_{}.ckpt", self.seed));
        crate::models::save_checkpoint(model, &path)
    }

    /// Fine-tune with a monitored history CSV carrying per-epoch retain and
    /// forget accuracy. `row_tags` labels each training row with its split so
    /// both accuracies come from the epoch-end logits; when the training set
    /// carries no forget rows (retraining), the forget split gets its own
    /// forward pass.
    fn monitored_finetune(
        &self,
        start: &Model,
        inputs: &DenseMatrix,
        labels: &[usize],
        row_tags: &[SplitTag],
        config: &TrainConfig,
        history_name: &str,
    ) -> Result<Model> {
        let rows_of = |tag: SplitTag| -> Vec<usize> {
            (0..row_tags.len()).filter(|&i| row_tags[i] == tag).collect()
        };
        let retain_rows = rows_of(SplitTag::Retain);
        let forget_rows = rows_of(SplitTag::Forget);
        let mut rows: Vec<HistoryRow> = Vec::with_capacity(config.epochs);
        let (trained, _) =
            finetune_monitored(start, inputs, labels, config, |epoch, loss, m, logits| {
                let retain_acc = logits_accuracy(logits, labels, &retain_rows)
                    .ok_or_else(|| Error::EmptySplit {
                        filter: "retain".into(),
                    })?;
                let forget_acc = match logits_accuracy(logits, labels, &forget_rows) {
                    Some(acc) => acc,
                    None => model_accuracy(m, &self.forget_inputs, &self.forget_labels)?,
                };
                rows.push(HistoryRow {
                    epoch,
                    loss,
                    retain_acc,
                    forget_acc,
                });
                Ok(())
            })?;
        self.write(
            &format!("history/{history_name}_{}.csv", self.seed),
            &history_csv(&rows),
        )?;
        Ok(trained)
    }

    fn write_loss_history(&self, name: &str, losses: &[f64]) -> Result<()> {
        let mut out = String::from("epoch,loss\n");
        for (i, loss) in losses.iter().enumerate() {
            out.push_str(&format!("{},{loss}\n", i + 1));
        }
        self.write(&format!("history/{name}_{}.csv", self.seed), &out)
    }

    fn train_config(&self, tag: &str) -> TrainConfig {
        self.config
            .train
            .to_config(self.mask.clone(), sub_seed(self.seed, tag))
    }

    /// Produces the model for one method, writing its artifacts.
    fn run_method(&self, method: Method, model_init: &Model, model_full: &Model) -> Result<Model> {
        match method {
            Method::Full => Ok(model_full.clone()),
            Method::MaxLoss => {
                let cfg = self.train_config("train_maxloss");
                let (model, losses) =
                    max_loss_unlearn(model_full, &self.forget_inputs, &self.forget_labels, &cfg)?;
                self.write_loss_history(method.tag(), &losses)?;
                Ok(model)
            }
            Method::RandomLabel => {
                let cfg = self.train_config("train_randomlabel");
                let (model, losses) = random_label_unlearn(
                    model_full,
                    &self.forget_inputs,
                    self.config.model.num_classes,
                    &cfg,
                )?;
                self.write_loss_history(method.tag(), &losses)?;
                Ok(model)
            }
            Method::FastNtk => {
                let options = ScrubOptions {
                    policy: self.config.scrub.jitter,
                    residuals_at: self.config.scrub.residuals_at,
                    block_size: self.config.scrub.block_size,
                    memory_budget: self.config.memory_budget,
                };
                let (report, model) = scrub(
                    model_full,
                    model_init,
                    &self.retain_inputs,
                    &self.retain_labels,
                    &self.forget_inputs,
                    &self.forget_labels,
                    &self.mask,
                    &options,
                )?;
                self.write(&format!("scrub_{}.txt", self.seed), &report.to_text())?;
                Ok(model)
            }
            Method::Retrain => {
                let cfg = self.train_config("train_retrain");
                self.monitored_finetune(
                    model_init,
                    &self.retain_inputs,
                    &self.retain_labels,
                    &vec![SplitTag::Retain; self.retain_inputs.rows()],
                    &cfg,
                    method.tag(),
                )
            }
        }
    }
}

/// The seed's dataset with forget/retain tags applied.
pub fn dataset_for_seed(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    split_forget(&build_dataset(config, seed)?, &config.forget_classes)
}

/// Tags of the rows `Dataset::select` returns for the same filter, aligned
/// row for row (both preserve dataset order).
fn selected_tags(dataset: &Dataset, tags: &[SplitTag]) -> Vec<SplitTag> {
    dataset
        .split_tags
        .iter()
        .copied()
        .filter(|t| tags.contains(t))
        .collect()
}

/// Initial model for one seed, with normalization statistics calibrated on
/// the training split.
pub fn calibrated_init(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Model> {
    let mut model = Model::init(config.model.clone(), seed)?;
    let (train_inputs, _) = dataset.select(&[SplitTag::Retain, SplitTag::Forget]);
    model.calibrate_norm_stats(&train_inputs)?;
    Ok(model)
}

/// Where a method or init checkpoint lives under the config's output_dir.
pub fn checkpoint_path(config: &ExperimentConfig, name: &str, seed: u64) -> PathBuf {
    config
        .output_dir
        .join("models")
        .join(format!("{name}_{seed}.ckpt"))
}

pub fn ensure_output_dirs(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(config.output_dir.join("models"))?;
    std::fs::create_dir_all(config.output_dir.join("history"))?;
    Ok(())
}

/// Fine-tunes on the whole training split from the init, writing the
/// monitored history CSV. The returned model anchors every post-hoc method.
pub fn train_full_model(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    model_init: &Model,
) -> Result<Model> {
    let mask = select_params(&config.model, &config.mask_strategy)?;
    let run = SeedRun::new(config, dataset.clone(), mask, seed);
    let (train_inputs, train_labels) = dataset.select(&[SplitTag::Retain, SplitTag::Forget]);
    let cfg = run.train_config("train_full");
    run.monitored_finetune(
        model_init,
        &train_inputs,
        &train_labels,
        &selected_tags(dataset, &[SplitTag::Retain, SplitTag::Forget]),
        &cfg,
        Method::Full.tag(),
    )
}

/// Runs one method from its starting models and writes that method's
/// artifacts (checkpoint plus loss history or scrub report).
pub fn execute_method(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    method: Method,
    model_init: &Model,
    model_full: &Model,
) -> Result<Model> {
    let mask = select_params(&config.model, &config.mask_strategy)?;
    let run = SeedRun::new(config, dataset.clone(), mask, seed);
    let model = run.run_method(method, model_init, model_full)?;
    run.save_model(method.tag(), &model)?;
    Ok(model)
}

/// One method's metric row for a single seed.
struct MethodRow {
    acc_retain: f64,
    acc_forget: f64,
    acc_holdout: f64,
    per_class: Vec<Option<f64>>,
    relearn: RelearnResult,
}

/// Rows in `config.methods` order.
struct SeedOutcome {
    rows: Vec<MethodRow>,
}

fn run_seed(config: &ExperimentConfig, mask: &ParamMask, seed: u64) -> Result<SeedOutcome> {
    let run = SeedRun::new(config, dataset_for_seed(config, seed)?, mask.clone(), seed);
    for (rows, name) in [
        (run.retain_inputs.rows(), "retain"),
        (run.forget_inputs.rows(), "forget"),
    ] {
        if rows == 0 {
            return Err(Error::EmptySplit {
                filter: name.into(),
            });
        }
    }
    if let Some(budget) = config.memory_budget {
        let estimate = memory_estimate(
            run.retain_inputs.rows(),
            run.forget_inputs.rows(),
            config.model.num_classes,
            mask.len(),
        );
        if estimate > budget {
            return Err(Error::BudgetExceeded { estimate, budget });
        }
    }

    let model_init = calibrated_init(config, &run.dataset, seed)?;
    run.save_model("init", &model_init)?;

    // Always trained: the starting point for every method except Retrain.
    let (train_inputs, train_labels) = run.dataset.select(&[SplitTag::Retain, SplitTag::Forget]);
    let full_cfg = run.train_config("train_full");
    let model_full = run.monitored_finetune(
        &model_init,
        &train_inputs,
        &train_labels,
        &selected_tags(&run.dataset, &[SplitTag::Retain, SplitTag::Forget]),
        &full_cfg,
        Method::Full.tag(),
    )?;

    let mut rows = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let model = run.run_method(method, &model_init, &model_full)?;
        run.save_model(method.tag(), &model)?;

        let (acc_holdout, per_class) = holdout_metrics(&model, &run.dataset)?;
        let relearn_cfg = run.train_config(&format!("relearn_{}", method.tag()));
        rows.push(MethodRow {
            acc_retain: accuracy(&model, &run.dataset, &[SplitTag::Retain])?,
            acc_forget: accuracy(&model, &run.dataset, &[SplitTag::Forget])?,
            acc_holdout,
            per_class,
            relearn: relearn_epochs(
                &model,
                &run.forget_inputs,
                &run.forget_labels,
                &relearn_cfg,
                RELEARN_THRESHOLD,
                RELEARN_CAP,
            )?,
        });
    }
    Ok(SeedOutcome { rows })
}

/// Runs every seed and method, writes all artifacts under `output_dir`, and
/// returns the aggregated report (also written as `metrics_report.txt`).
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment_opts(config, false)
}

/// `run_experiment` with seed-level parallelism opt-in. Seeds are fully
/// independent (own data, models, artifact files); aggregation order is fixed
/// by the config's seed list, so reports match the sequential run bitwise.
pub fn run_experiment_opts(
    config: &ExperimentConfig,
    parallel_seeds: bool,
) -> Result<MetricsReport> {
    config.validate()?;
    ensure_output_dirs(config)?;
    let resolved = toml::to_string(config)
        .map_err(|e| Error::InvalidConfig(format!("config serialization failed: {e}")))?;
    std::fs::write(config.output_dir.join("config.toml"), resolved)?;

    let mask = select_params(&config.model, &config.mask_strategy)?;
    let accounting = param_accounting(&config.model, &config.mask_strategy)?;

    let outcomes: Vec<SeedOutcome> = if parallel_seeds {
        let mask_ref = &mask;
        std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .seeds
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(config, mask_ref, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        config
            .seeds
            .iter()
            .map(|&seed| run_seed(config, &mask, seed))
            .collect::<Result<Vec<_>>>()?
    };

    let mut methods: Vec<MethodMetrics> =
        config.methods.iter().map(|&m| MethodMetrics::new(m)).collect();
    for outcome in &outcomes {
        for (metrics, row) in methods.iter_mut().zip(&outcome.rows) {
            metrics.acc_retain.push(row.acc_retain);
            metrics.acc_forget.push(row.acc_forget);
            metrics.acc_holdout.push(row.acc_holdout);
            metrics.holdout_per_class.push(row.per_class.clone());
            metrics.relearn.push(row.relearn);
        }
    }

    let report = MetricsReport {
        seeds: config.seeds.clone(),
        num_classes: config.model.num_classes,
        params_ratio: accounting.ratio,
        params_ratio_with_head: accounting.ratio_with_head,
        methods,
    };
    for metrics in &report.methods {
        std::fs::write(
            config
                .output_dir
                .join(format!("{}_metrics.csv", metrics.method.tag())),
            metrics.csv(&report.seeds),
        )?;
    }
    std::fs::write(
        config.output_dir.join("metrics_report.txt"),
        report.to_text(),
    )?;
    Ok(report)
}
