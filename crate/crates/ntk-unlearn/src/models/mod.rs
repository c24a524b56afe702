//! Desk-scale differentiable models, parameter layout, masking, per-sample
//! gradients, and parameter accounting.
//!
//! Three architectures: an MLP with per-layer affine normalization, a
//! single-convolution CNN with batch normalization, and a single-head
//! attention block with learnable key/value prompts. All normalization runs
//! with frozen stored statistics, so a batch forward equals per-sample
//! forwards stacked, bitwise.

mod attn;
mod checkpoint;
mod cnn;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::rng;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MlpNorm,
    CnnBn,
    AttnPrompt,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::MlpNorm => write!(f, "mlp_norm"),
            Architecture::CnnBn => write!(f, "cnn_bn"),
            Architecture::AttnPrompt => write!(f, "attn_prompt"),
        }
    }
}

fn default_groups() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Structural description of a model; the source of truth for the parameter
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Hidden widths (mlp_norm only).
    #[serde(default)]
    pub layer_sizes: Vec<usize>,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Prompt row count L_p (attn_prompt only).
    #[serde(default)]
    pub prompt_length: usize,
    /// Token embedding width E (attn_prompt only).
    #[serde(default)]
    pub embed_dim: usize,
    /// Square kernel side K (cnn_bn only).
    #[serde(default)]
    pub kernel_size: usize,
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub out_channels: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    /// Whether linear layers carry bias vectors. Off makes the model purely
    /// linear in its weights, which the closed-form oracles rely on.
    #[serde(default = "default_true")]
    pub use_bias: bool,
    /// When set, attention softmax runs only over real token slots and the
    /// prompts receive no attention mass (comparison harness for the
    /// zero-prompt equivalence check; default keeps prompts attended).
    #[serde(default)]
    pub prompt_slots_masked: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.input_dim == 0 {
            return fail("input_dim must be >= 1".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes must be >= 2".into());
        }
        match self.architecture {
            Architecture::MlpNorm => {
                if self.layer_sizes.iter().any(|&w| w == 0) {
                    return fail("layer_sizes entries must be >= 1".into());
                }
            }
            Architecture::CnnBn => {
                if self.kernel_size == 0 || self.in_channels == 0 || self.out_channels == 0 {
                    return fail("cnn_bn needs kernel_size, in_channels, out_channels >= 1".into());
                }
                if self.groups == 0
                    || self.in_channels % self.groups != 0
                    || self.out_channels % self.groups != 0
                {
                    return fail(format!(
                        "groups {} must divide in_channels {} and out_channels {}",
                        self.groups, self.in_channels, self.out_channels
                    ));
                }
                let side = self.image_side()?;
                if side < self.kernel_size {
                    return fail(format!(
                        "image side {side} smaller than kernel {}",
                        self.kernel_size
                    ));
                }
            }
            Architecture::AttnPrompt => {
                if self.embed_dim == 0 {
                    return fail("attn_prompt needs embed_dim >= 1".into());
                }
                if self.prompt_length == 0 {
                    return fail("attn_prompt needs prompt_length >= 1".into());
                }
                if self.input_dim % self.embed_dim != 0 {
                    return fail(format!(
                        "input_dim {} must be a multiple of embed_dim {}",
                        self.input_dim, self.embed_dim
                    ));
                }
            }
        }
        Ok(())
    }

    /// Square image side for cnn_bn inputs (input_dim = in_channels·side²).
    pub fn image_side(&self) -> Result<usize> {
        if self.input_dim % self.in_channels != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_dim {} not divisible by in_channels {}",
                self.input_dim, self.in_channels
            )));
        }
        let area = self.input_dim / self.in_channels;
        let side = (area as f64).sqrt().round() as usize;
        if side * side != area {
            return Err(Error::InvalidConfig(format!(
                "input_dim/in_channels = {area} is not a perfect square"
            )));
        }
        Ok(side)
    }

    /// Token count for attn_prompt inputs.
    pub fn seq_len(&self) -> usize {
        self.input_dim / self.embed_dim
    }

    /// Flattened width entering the classification head.
    pub fn head_in_dim(&self) -> Result<usize> {
        Ok(match self.architecture {
            Architecture::MlpNorm => *self.layer_sizes.last().unwrap_or(&self.input_dim),
            Architecture::CnnBn => {
                let out_side = self.image_side()? - self.kernel_size + 1;
                self.out_channels * out_side * out_side
            }
            Architecture::AttnPrompt => self.embed_dim,
        })
    }

    /// Fixed tensor order: embedding/blocks first, head last; within a layer
    /// weight, bias, γ, β.
    pub fn layout(&self) -> Result<Vec<TensorMeta>> {
        self.validate()?;
        let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
        match self.architecture {
            Architecture::MlpNorm => {
                let mut prev = self.input_dim;
                for (i, &w) in self.layer_sizes.iter().enumerate() {
                    tensors.push((format!("layers.{i}.weight"), vec![w, prev]));
                    if self.use_bias {
                        tensors.push((format!("layers.{i}.bias"), vec![w]));
                    }
                    tensors.push((format!("layers.{i}.gamma"), vec![w]));
                    tensors.push((format!("layers.{i}.beta"), vec![w]));
                    prev = w;
                }
            }
            Architecture::CnnBn => {
                tensors.push((
                    "conv.weight".into(),
                    vec![
                        self.out_channels,
                        self.in_channels / self.groups,
                        self.kernel_size,
                        self.kernel_size,
                    ],
                ));
                tensors.push(("bn.gamma".into(), vec![self.out_channels]));
                tensors.push(("bn.beta".into(), vec![self.out_channels]));
            }
            Architecture::AttnPrompt => {
                let e = self.embed_dim;
                tensors.push(("attn.w_q".into(), vec![e, e]));
                tensors.push(("attn.w_k".into(), vec![e, e]));
                tensors.push(("attn.w_v".into(), vec![e, e]));
                tensors.push(("attn.p_k".into(), vec![self.prompt_length, e]));
                tensors.push(("attn.p_v".into(), vec![self.prompt_length, e]));
                tensors.push(("mlp.w1".into(), vec![4 * e, e]));
                tensors.push(("mlp.w2".into(), vec![e, 4 * e]));
            }
        }
        tensors.push(("head.weight".into(), vec![self.num_classes, self.head_in_dim()?]));
        if self.use_bias {
            tensors.push(("head.bias".into(), vec![self.num_classes]));
        }

        let mut layout = Vec::with_capacity(tensors.len());
        let mut offset = 0;
        for (name, shape) in tensors {
            let len: usize = shape.iter().product();
            layout.push(TensorMeta { name, shape, offset });
            offset += len;
        }
        Ok(layout)
    }

    /// Names of the normalization scale/shift tensors, in layout order.
    fn norm_affine_names(&self) -> Vec<String> {
        match self.architecture {
            Architecture::MlpNorm => self
                .layer_sizes
                .iter()
                .enumerate()
                .flat_map(|(i, _)| [format!("layers.{i}.gamma"), format!("layers.{i}.beta")])
                .collect(),
            Architecture::CnnBn => vec!["bn.gamma".into(), "bn.beta".into()],
            Architecture::AttnPrompt => Vec::new(),
        }
    }

    fn head_names(&self) -> Vec<String> {
        let mut names = vec!["head.weight".to_string()];
        if self.use_bias {
            names.push("head.bias".into());
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorMeta {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector plus its named layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Vec<TensorMeta>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<TensorMeta>) -> Self {
        let d = layout.last().map_or(0, |t| t.offset + t.len());
        ParamVector {
            layout,
            values: vec![0.0; d],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[TensorMeta] {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorMeta> {
        self.layout.iter().find(|t| t.name == name)
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        let t = self.tensor(name).unwrap_or_else(|| panic!("no tensor {name}"));
        &self.values[t.range()]
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self
            .tensor(name)
            .unwrap_or_else(|| panic!("no tensor {name}"))
            .range();
        &mut self.values[r]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Strictly increasing index subset of a ParamVector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    indices: Vec<usize>,
    strategy_name: String,
}

impl ParamMask {
    /// Builds from explicit indices; they must be strictly increasing,
    /// in-bounds for `d`, and non-empty.
    pub fn new(indices: Vec<usize>, strategy_name: &str, d: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "mask {strategy_name} selects no parameters"
            )));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidConfig(format!(
                    "mask {strategy_name} indices not strictly increasing"
                )));
            }
        }
        if *indices.last().unwrap() >= d {
            return Err(Error::InvalidConfig(format!(
                "mask {strategy_name} index {} out of bounds for d = {d}",
                indices.last().unwrap()
            )));
        }
        Ok(ParamMask {
            indices,
            strategy_name: strategy_name.to_string(),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn strategy_name(&self) -> &str {
        &self.strategy_name
    }
}

/// Which parameter subset a fine-tune or scrub may touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskStrategy {
    Full,
    NormAffine,
    PromptOnly,
    HeadOnly,
    NamedList { names: Vec<String> },
}

impl MaskStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Full => "full",
            MaskStrategy::NormAffine => "norm_affine",
            MaskStrategy::PromptOnly => "prompt_only",
            MaskStrategy::HeadOnly => "head_only",
            MaskStrategy::NamedList { .. } => "named_list",
        }
    }
}

/// Resolves a masking strategy to concrete flat indices over the layout.
pub fn select_params(spec: &ModelSpec, strategy: &MaskStrategy) -> Result<ParamMask> {
    let layout = spec.layout()?;
    let d: usize = layout.iter().map(TensorMeta::len).sum();
    let invalid = || Error::InvalidStrategy {
        strategy: strategy.name().to_string(),
        architecture: spec.architecture.to_string(),
    };

    let names: Vec<String> = match strategy {
        MaskStrategy::Full => {
            let all: Vec<usize> = (0..d).collect();
            return ParamMask::new(all, strategy.name(), d);
        }
        MaskStrategy::NormAffine => {
            let names = spec.norm_affine_names();
            if names.is_empty() {
                return Err(invalid());
            }
            names
        }
        MaskStrategy::PromptOnly => {
            if spec.architecture != Architecture::AttnPrompt {
                return Err(invalid());
            }
            vec!["attn.p_k".into(), "attn.p_v".into()]
        }
        MaskStrategy::HeadOnly => spec.head_names(),
        MaskStrategy::NamedList { names } => {
            for n in names {
                if !layout.iter().any(|t| &t.name == n) {
                    return Err(Error::InvalidConfig(format!(
                        "named_list mask references unknown tensor {n}"
                    )));
                }
            }
            names.clone()
        }
    };

    let mut indices = Vec::new();
    for t in &layout {
        if names.iter().any(|n| n == &t.name) {
            indices.extend(t.range());
        }
    }
    ParamMask::new(indices, strategy.name(), d)
}

/// Adds `delta` to the masked entries, leaving every other entry untouched.
pub fn apply_delta(params: &ParamVector, mask: &ParamMask, delta: &[f64]) -> Result<ParamVector> {
    if delta.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            context: "apply_delta".into(),
            expected: format!("{} delta entries", mask.len()),
            got: format!("{}", delta.len()),
        });
    }
    let mut out = params.clone();
    for (i, &idx) in mask.indices().iter().enumerate() {
        out.values[idx] += delta[i];
    }
    Ok(out)
}

/// Exact parameter counts for a strategy on an architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accounting {
    pub d_total: usize,
    pub d_masked: usize,
    pub ratio: f64,
    /// Masked count with the classification head added in (when the mask
    /// does not already cover it), for reporting under both conventions.
    pub d_masked_with_head: usize,
    pub ratio_with_head: f64,
}

pub fn param_accounting(spec: &ModelSpec, strategy: &MaskStrategy) -> Result<Accounting> {
    let layout = spec.layout()?;
    let d_total: usize = layout.iter().map(TensorMeta::len).sum();
    let mask = select_params(spec, strategy)?;
    let d_masked = mask.len();

    let head_ranges: Vec<std::ops::Range<usize>> = spec
        .head_names()
        .iter()
        .filter_map(|n| layout.iter().find(|t| &t.name == n))
        .map(TensorMeta::range)
        .collect();
    let head_extra: usize = head_ranges
        .iter()
        .map(|r| r.clone().filter(|i| mask.indices().binary_search(i).is_err()).count())
        .sum();
    let d_masked_with_head = d_masked + head_extra;

    Ok(Accounting {
        d_total,
        d_masked,
        ratio: d_masked as f64 / d_total as f64,
        d_masked_with_head,
        ratio_with_head: d_masked_with_head as f64 / d_total as f64,
    })
}

/// Frozen statistics for one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLayerStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) enum Cache {
    Mlp(mlp::Cache),
    Cnn(cnn::Cache),
    Attn(attn::Cache),
}

/// A model: spec, flat parameters, and frozen normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub stats: Vec<NormLayerStats>,
    /// 1/sqrt(var + eps) per stats entry, derived; kept in sync with `stats`.
    pub(crate) istd: Vec<Vec<f64>>,
}

pub(crate) fn istd_of(stats: &[NormLayerStats]) -> Vec<Vec<f64>> {
    stats
        .iter()
        .map(|s| s.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect())
        .collect()
}

impl Model {
    pub(crate) fn assemble(spec: ModelSpec, params: ParamVector, stats: Vec<NormLayerStats>) -> Model {
        let istd = istd_of(&stats);
        Model { spec, params, stats, istd }
    }

    pub(crate) fn refresh_istd(&mut self) {
        self.istd = istd_of(&self.stats);
    }
    /// Seeded random initialization: weights are Gaussian scaled by
    /// 1/sqrt(fan_in), biases and shifts zero, scales one, statistics
    /// mean 0 / variance 1 until calibrated.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model> {
        let layout = spec.layout()?;
        let mut params = ParamVector::zeros(layout);
        let mut rng = rng::rng_for(seed, "model_init");
        for t in params.layout.clone() {
            let values = &mut params.values[t.range()];
            if t.name.ends_with(".gamma") {
                values.fill(1.0);
            } else if t.name.ends_with(".beta") || t.name.ends_with(".bias") {
                values.fill(0.0);
            } else {
                let fan_in = match t.name.as_str() {
                    "conv.weight" => t.shape[1] * t.shape[2] * t.shape[3],
                    "attn.p_k" | "attn.p_v" => t.shape[1],
                    _ => t.shape[1],
                };
                let scale = (1.0 / fan_in as f64).sqrt();
                for v in values.iter_mut() {
                    *v = scale * rng::gaussian(&mut rng);
                }
            }
        }
        let stats = default_stats(&spec)?;
        Ok(Model::assemble(spec, params, stats))
    }

    pub fn d(&self) -> usize {
        self.params.len()
    }

    pub fn stats_for(&self, name: &str) -> &NormLayerStats {
        self.stats
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("no stats for {name}"))
    }

    pub(crate) fn check_inputs(&self, inputs: &DenseMatrix) -> Result<()> {
        if inputs.cols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "model forward".into(),
                expected: format!("{} input columns", self.spec.input_dim),
                got: format!("{}", inputs.cols()),
            });
        }
        if !inputs.all_finite() {
            return Err(Error::NonFinite {
                context: "model inputs".into(),
            });
        }
        if !self.params.all_finite() {
            return Err(Error::NonFinite {
                context: "model parameters".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_single_cached(&self, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
        let (logits, cache) = match self.spec.architecture {
            Architecture::MlpNorm => {
                let (l, c) = mlp::forward(self, x);
                (l, Cache::Mlp(c))
            }
            Architecture::CnnBn => {
                let (l, c) = cnn::forward(self, x);
                (l, Cache::Cnn(c))
            }
            Architecture::AttnPrompt => {
                let (l, c) = attn::forward(self, x);
                (l, Cache::Attn(c))
            }
        };
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "model logits".into(),
            });
        }
        Ok((logits, cache))
    }

    /// Adds the full-parameter gradient of `dot(dlogits, logits)` into `grad`.
    pub(crate) fn backward_single(&self, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.d());
        debug_assert_eq!(dlogits.len(), self.spec.num_classes);
        match (self.spec.architecture, cache) {
            (Architecture::MlpNorm, Cache::Mlp(c)) => mlp::backward(self, c, dlogits, grad),
            (Architecture::CnnBn, Cache::Cnn(c)) => cnn::backward(self, c, dlogits, grad),
            (Architecture::AttnPrompt, Cache::Attn(c)) => attn::backward(self, c, dlogits, grad),
            _ => unreachable!("cache/architecture mismatch"),
        }
    }

    /// Batch logits, n×C; equals per-sample forwards stacked, bitwise.
    pub fn forward(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_inputs(inputs)?;
        let n = inputs.rows();
        let c = self.spec.num_classes;
        let mut out = DenseMatrix::zeros(n, c);
        for i in 0..n {
            let (logits, _) = self.forward_single_cached(inputs.row(i))?;
            out.row_mut(i).copy_from_slice(&logits);
        }
        Ok(out)
    }

    /// Per-sample, per-class output gradients over the masked parameters.
    ///
    /// Row layout is sample-major, class-minor: row = sample·C + class.
    /// One backward pass per (sample, class).
    pub fn per_sample_jacobian(&self, inputs: &DenseMatrix, mask: &ParamMask) -> Result<DenseMatrix> {
        self.check_inputs(inputs)?;
        let n = inputs.rows();
        let c = self.spec.num_classes;
        let d = self.d();
        let mut jac = DenseMatrix::zeros(n * c, mask.len());
        let mut grad = vec![0.0; d];
        let mut dlogits = vec![0.0; c];
        for s in 0..n {
            let (_, cache) = self.forward_single_cached(inputs.row(s))?;
            for class in 0..c {
                grad.fill(0.0);
                dlogits.fill(0.0);
                dlogits[class] = 1.0;
                self.backward_single(&cache, &dlogits, &mut grad);
                let row = jac.row_mut(s * c + class);
                for (k, &idx) in mask.indices().iter().enumerate() {
                    row[k] = grad[idx];
                }
            }
        }
        if !jac.all_finite() {
            return Err(Error::NonFinite {
                context: "jacobian".into(),
            });
        }
        Ok(jac)
    }

    /// Masked gradient of `sum_i dot(cotangents[i], logits_i)`, accumulated
    /// over samples in ascending order.
    pub fn batch_gradient(
        &self,
        inputs: &DenseMatrix,
        cotangents: &DenseMatrix,
        mask: &ParamMask,
    ) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        if cotangents.rows() != inputs.rows() || cotangents.cols() != self.spec.num_classes {
            return Err(Error::DimensionMismatch {
                context: "batch_gradient cotangents".into(),
                expected: format!("{}x{}", inputs.rows(), self.spec.num_classes),
                got: format!("{}x{}", cotangents.rows(), cotangents.cols()),
            });
        }
        let d = self.d();
        let mut grad = vec![0.0; d];
        for s in 0..inputs.rows() {
            let (_, cache) = self.forward_single_cached(inputs.row(s))?;
            self.backward_single(&cache, cotangents.row(s), &mut grad);
        }
        Ok(mask.indices().iter().map(|&i| grad[i]).collect())
    }

    /// Returns a copy with `delta` added on the masked entries.
    pub fn with_delta(&self, mask: &ParamMask, delta: &[f64]) -> Result<Model> {
        Ok(Model {
            spec: self.spec.clone(),
            params: apply_delta(&self.params, mask, delta)?,
            stats: self.stats.clone(),
            istd: self.istd.clone(),
        })
    }

    /// Freezes normalization statistics to the per-unit mean and population
    /// variance of the pre-normalization activations over `inputs`,
    /// layer by layer. A no-op for architectures without normalization.
    pub fn calibrate_norm_stats(&mut self, inputs: &DenseMatrix) -> Result<()> {
        self.check_inputs(inputs)?;
        if self.stats.is_empty() {
            return Ok(());
        }
        if inputs.rows() == 0 {
            return Err(Error::InvalidConfig(
                "normalization calibration needs at least one sample".into(),
            ));
        }
        match self.spec.architecture {
            Architecture::MlpNorm => mlp::calibrate(self, inputs),
            Architecture::CnnBn => cnn::calibrate(self, inputs),
            Architecture::AttnPrompt => {}
        }
        self.refresh_istd();
        Ok(())
    }
}

pub(crate) fn default_stats(spec: &ModelSpec) -> Result<Vec<NormLayerStats>> {
    spec.validate()?;
    Ok(match spec.architecture {
        Architecture::MlpNorm => spec
            .layer_sizes
            .iter()
            .enumerate()
            .map(|(i, &w)| NormLayerStats {
                name: format!("layers.{i}"),
                mean: vec![0.0; w],
                var: vec![1.0; w],
            })
            .collect(),
        Architecture::CnnBn => vec![NormLayerStats {
            name: "bn".into(),
            mean: vec![0.0; spec.out_channels],
            var: vec![1.0; spec.out_channels],
        }],
        Architecture::AttnPrompt => Vec::new(),
    })
}
