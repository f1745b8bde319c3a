//! Desk-scale source classifier.
//!
//! `conv1d(k=9, s=4) → relu → conv1d(k=9, s=4) → relu → attention-pool →
//! dense(K)`, with a single-head attention score per step computed as
//! `v · tanh(W h_t + b)`. Probabilities are always the softmax of the
//! logits produced by the same forward pass.

use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{split_holdout, Dataset};
use crate::nnet::{
    io, ops, AdamHyper, AdamState, ArchDescriptor, Graph, LayerDesc, OpKind, ParamSet, Tensor, Var,
};
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::{Error, Result};

pub const KERNEL_WIDTH: usize = 9;
pub const STRIDE: usize = 4;
pub const MIN_INPUT_LEN: usize = 64;
const EVAL_CHUNK: usize = 256;

/// Channel widths of the two convolutions and the attention bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub conv1: usize,
    pub conv2: usize,
    pub attention: usize,
}

impl WidthConfig {
    /// `multiplier` × the base widths (8, 16, 8).
    pub fn scaled(multiplier: usize) -> Self {
        let m = multiplier.max(1);
        Self {
            conv1: 8 * m,
            conv2: 16 * m,
            attention: 8 * m,
        }
    }
}

impl Default for WidthConfig {
    fn default() -> Self {
        Self::scaled(1)
    }
}

/// Shape-level description of the network; parameters live separately so a
/// trainable copy can share the same forward code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceArch {
    pub class_count: usize,
    pub input_len: usize,
    pub width: WidthConfig,
}

impl SourceArch {
    pub fn new(class_count: usize, input_len: usize, width: WidthConfig) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config(format!("class count must be >= 2, got {class_count}")));
        }
        if input_len < MIN_INPUT_LEN {
            return Err(Error::Config(format!(
                "input length {input_len} is too short for two stride-{STRIDE} convolutions (need >= {MIN_INPUT_LEN})"
            )));
        }
        if width.conv1 == 0 || width.conv2 == 0 || width.attention == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(Self {
            class_count,
            input_len,
            width,
        })
    }

    /// Number of attention steps after both convolutions.
    pub fn steps(&self) -> usize {
        let l1 = ops::conv1d_out_len(self.input_len, KERNEL_WIDTH, STRIDE).unwrap();
        ops::conv1d_out_len(l1, KERNEL_WIDTH, STRIDE).unwrap()
    }

    fn layers(&self) -> Vec<LayerDesc> {
        let w = self.width;
        let k = self.class_count;
        let spec: [(&str, OpKind, Vec<usize>); 9] = [
            ("conv1.kernel", OpKind::Conv1d, vec![KERNEL_WIDTH, 1, w.conv1]),
            ("conv1.bias", OpKind::Conv1d, vec![w.conv1]),
            ("conv2.kernel", OpKind::Conv1d, vec![KERNEL_WIDTH, w.conv1, w.conv2]),
            ("conv2.bias", OpKind::Conv1d, vec![w.conv2]),
            ("attn.proj", OpKind::Attention, vec![w.conv2, w.attention]),
            ("attn.bias", OpKind::Attention, vec![w.attention]),
            ("attn.score", OpKind::Attention, vec![w.attention, 1]),
            ("head.weight", OpKind::Dense, vec![w.conv2, k]),
            ("head.bias", OpKind::Dense, vec![k]),
        ];
        spec.into_iter()
            .map(|(name, kind, dims)| LayerDesc {
                name: name.into(),
                kind,
                dims: dims.into_iter().map(|d| d as u32).collect(),
            })
            .collect()
    }

    /// Seeded initialization: He-scaled convolutions, unit-fan-in dense maps,
    /// zero biases.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        for layer in self.layers() {
            let shape: Vec<usize> = layer.dims.iter().map(|&d| d as usize).collect();
            let t = if layer.name.ends_with("bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let gain = if layer.kind == OpKind::Conv1d { 2.0 } else { 1.0 };
                Tensor::randn(&shape, (gain / fan_in as f64).sqrt(), &mut r)
            };
            p.push(layer.name, t).expect("layer names are unique");
        }
        p
    }

    /// Adds every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, params: &ParamSet) -> Vec<Var> {
        params.tensors().map(|t| g.leaf(t.clone())).collect()
    }

    /// Logits `[batch, K]` for inputs `x` of shape `[batch, d_S]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_len {
            return Err(Error::Shape(format!(
                "source model expects [batch, {}], got {shape:?}",
                self.input_len
            )));
        }
        let b = shape[0];
        let x3 = g.reshape(x, &[b, self.input_len, 1])?;
        let c1 = g.conv1d(x3, p[0], p[1], STRIDE)?;
        let h1 = g.relu(c1)?;
        let c2 = g.conv1d(h1, p[2], p[3], STRIDE)?;
        let h2 = g.relu(c2)?;
        let proj = g.linear(h2, p[4], Some(p[5]))?;
        let u = g.tanh(proj)?;
        let s = g.linear(u, p[6], None)?;
        let steps = g.value(s).shape()[1];
        let s = g.reshape(s, &[b, steps])?;
        let ctx = g.attention_pool(h2, s)?;
        g.linear(ctx, p[7], Some(p[8]))
    }

    /// Logits for a batch evaluated with explicit parameters.
    pub fn logits_with(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let rows = x.shape().first().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(rows * self.class_count);
        for start in (0..rows).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(rows);
            let chunk = Tensor::new(
                vec![end - start, self.input_len],
                x.data()[start * self.input_len..end * self.input_len].to_vec(),
            )?;
            let mut g = Graph::inference();
            let vars = self.bind(&mut g, params);
            let xv = g.leaf(chunk);
            let z = self.forward(&mut g, &vars, xv)?;
            out.extend_from_slice(g.value(z).data());
        }
        Tensor::new(vec![rows, self.class_count], out)
    }
}

/// The frozen source classifier f_S = softmax ∘ z_S.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    arch: SourceArch,
    params: ParamSet,
}

/// RMSE-form source risk: mean ‖f(x) − onehot(y)‖₂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRiskEstimate {
    pub epsilon_s: f64,
    pub n_eval: usize,
    pub dataset: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceHyper {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the dataset held out for the risk estimate.
    pub holdout: f64,
}

impl Default for SourceHyper {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch: 32,
            epochs: 30,
            seed: 0,
            holdout: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSource {
    pub model: SourceModel,
    pub risk: SourceRiskEstimate,
    pub heldout_accuracy: f64,
    pub train_loss: Vec<f64>,
}

/// Builds an untrained source model with seeded parameters.
pub fn build_source_arch(class_count: usize, input_len: usize, width: WidthConfig, seed: u64) -> Result<SourceModel> {
    let arch = SourceArch::new(class_count, input_len, width)?;
    let params = arch.init_params(seed);
    Ok(SourceModel { arch, params })
}

/// Stacks series values into a `[n, len]` tensor.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, len: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != len {
            return Err(Error::Shape(format!("row of length {} where {len} expected", r.len())));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new(vec![n, len], data)
}

impl SourceModel {
    pub fn arch(&self) -> &SourceArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_len
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn is_frozen(&self) -> bool {
        self.params.is_frozen()
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Pre-softmax outputs z_S(x) for `x` of shape `[batch, d_S]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.arch.logits_with(&self.params, x)
    }

    /// Returns (logits, probabilities) from one forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let z = self.logits(x)?;
        let p = ops::softmax(&z)?;
        Ok((z, p))
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.length() != self.input_len() || dataset.class_count() != self.class_count() {
            return Err(Error::Config(format!(
                "dataset {:?} is {}-class with length {}, model is {}-class with length {}",
                dataset.name(),
                dataset.class_count(),
                dataset.length(),
                self.class_count(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn dataset_inputs(&self, dataset: &Dataset) -> Result<Tensor> {
        stack_rows(dataset.series().iter().map(|s| s.values.as_slice()), self.input_len())
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        self.check_dataset(dataset)?;
        let z = self.logits(&self.dataset_inputs(dataset)?)?;
        let correct = dataset
            .series()
            .iter()
            .enumerate()
            .filter(|(i, s)| argmax(z.row(*i)) == s.label)
            .count();
        Ok(correct as f64 / dataset.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save_model(&self.params, &self.descriptor(), path)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::encode_model(&self.params, &self.descriptor())
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            input_len: self.arch.input_len as u32,
            class_count: self.arch.class_count as u32,
            frozen: self.params.is_frozen(),
            layers: self.arch.layers(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, desc) = io::load_model(path)?;
        Self::from_parts(params, &desc)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, desc) = io::decode_model(bytes)?;
        Self::from_parts(params, &desc)
    }

    fn from_parts(params: ParamSet, desc: &ArchDescriptor) -> Result<Self> {
        let dim = |name: &str, i: usize| -> Result<usize> {
            desc.layers
                .iter()
                .find(|l| l.name == name)
                .and_then(|l| l.dims.get(i))
                .map(|&d| d as usize)
                .ok_or_else(|| Error::Corrupt(format!("descriptor lacks layer {name:?}")))
        };
        let width = WidthConfig {
            conv1: dim("conv1.kernel", 2)?,
            conv2: dim("conv2.kernel", 2)?,
            attention: dim("attn.proj", 1)?,
        };
        let arch = SourceArch::new(desc.class_count as usize, desc.input_len as usize, width)?;
        io::check_alignment(&params, &arch.layers())?;
        Ok(Self { arch, params })
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    // first maximum wins ties
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean Euclidean distance between predicted probabilities and one-hot labels.
pub fn source_risk(model: &SourceModel, dataset: &Dataset) -> Result<SourceRiskEstimate> {
    model.check_dataset(dataset)?;
    let p = model.probs(&model.dataset_inputs(dataset)?)?;
    let labels = dataset.labels();
    Ok(SourceRiskEstimate {
        epsilon_s: rmse_risk(&p, &labels),
        n_eval: dataset.len(),
        dataset: dataset.name().to_string(),
    })
}

/// Mean over rows of ‖p_i − onehot(labels_i)‖₂.
pub fn rmse_risk(probs: &Tensor, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            probs
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let d = p - if k == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / labels.len() as f64
}

/// Cross-entropy training with Adam; the returned model is frozen and its
/// risk is measured on a seeded held-out split.
pub fn train_source(model: &SourceModel, dataset: &Dataset, hyper: &SourceHyper) -> Result<TrainedSource> {
    model.check_dataset(dataset)?;
    if hyper.batch == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if hyper.lr.is_nan() || hyper.lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be > 0, got {}", hyper.lr)));
    }
    let (train_idx, held_idx) = split_holdout(dataset.len(), hyper.holdout, derive_seed(hyper.seed, "holdout"))?;
    let train = dataset.subset(&train_idx)?;
    let held = dataset.subset(&held_idx)?.with_name(format!("{}-heldout", dataset.name()));

    let arch = model.arch;
    let mut params = model.params.thawed_copy();
    let mut adam = AdamState::new(&params, AdamHyper::with_lr(hyper.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng(derive_indexed(hyper.seed, "source-epoch", epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch) {
            let x = stack_rows(chunk.iter().map(|&i| train.series()[i].values.as_slice()), arch.input_len)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.series()[i].label).collect();
            let mut g = Graph::new();
            let vars = arch.bind(&mut g, &params);
            let xv = g.leaf(x);
            let z = arch.forward(&mut g, &vars, xv)?;
            let loss = g.cross_entropy(z, &labels)?;
            total += g.value(loss).item() * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut params, &grads)?;
        }
        let mean = total / train.len() as f64;
        debug!("source epoch {epoch}: train loss {mean:.5}");
        train_loss.push(mean);
    }
    params.freeze();
    let trained = SourceModel { arch, params };
    let risk = source_risk(&trained, &held)?;
    let heldout_accuracy = trained.accuracy(&held)?;
    Ok(TrainedSource {
        model: trained,
        risk,
        heldout_accuracy,
        train_loss,
    })
}
