//! The BiGRU + multi-head attention classifier.
//!
//! ```text
//! X [T × input_dim]
//!   → BiGRU                    H [T × 2·hidden]
//!   → multi-head attention     A [T × 2·hidden]
//!   → layer_norm(H + A)        F [T × 2·hidden]
//!   → mean over T, dense       logits [classes]
//! ```

mod checkpoint;

pub use checkpoint::{
    encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    bigru_backward, bigru_forward, cross_entropy, fuse, fuse_backward, head_backward, head_dim, head_forward,
    mha_backward, mha_forward, BiGruCache, FuseCache, GruCellParams, HeadParams, MhaCache, MhaParams,
};
use crate::numerics::{softmax, Matrix, LAYER_NORM_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// State width of each GRU direction; the attention width is twice this.
    pub hidden: usize,
    pub heads: usize,
    pub classes: usize,
    pub seq_len: usize,
    pub l2_lambda: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 1,
            hidden: 24,
            heads: 3,
            classes: 3,
            seq_len: 8,
            l2_lambda: 0.001,
            layer_norm_eps: LAYER_NORM_EPS,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        2 * self.hidden
    }

    pub fn d_head(&self) -> Result<usize> {
        head_dim(self.d_model(), self.heads)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("classes must be at least 2, got {}", self.classes)));
        }
        self.d_head()?;
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(Error::Config(format!("l2_lambda must be non-negative, got {}", self.l2_lambda)));
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return Err(Error::Config(format!(
                "layer_norm_eps must be positive, got {}",
                self.layer_norm_eps
            )));
        }
        Ok(())
    }
}

/// Role of a tensor; only weights are L2-penalised and Glorot-initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub kind: ParamKind,
    pub shape: (usize, usize),
}

/// Every trainable tensor. Gradients and optimiser moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub fwd: GruCellParams,
    pub bwd: GruCellParams,
    pub mha: MhaParams,
    pub fuse_gain: Matrix,
    pub fuse_bias: Matrix,
    pub w_c: Matrix,
    pub b_c: Matrix,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model();
        Ok(ModelParams {
            fwd: GruCellParams::zeros(cfg.input_dim, cfg.hidden),
            bwd: GruCellParams::zeros(cfg.input_dim, cfg.hidden),
            mha: MhaParams::zeros(d, cfg.heads)?,
            fuse_gain: Matrix::zeros(1, d),
            fuse_bias: Matrix::zeros(1, d),
            w_c: Matrix::zeros(d, cfg.classes),
            b_c: Matrix::zeros(1, cfg.classes),
        })
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        out
    }

    /// Names, roles and shapes in canonical order. The order fixes the
    /// initialisation draw sequence and the checkpoint tensor table.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (prefix, cell) in [("gru_fwd", &self.fwd), ("gru_bwd", &self.bwd)] {
            for (name, m) in cell.named() {
                let kind = if name.starts_with('b') { ParamKind::Bias } else { ParamKind::Weight };
                out.push(TensorInfo {
                    name: format!("{prefix}.{name}"),
                    kind,
                    shape: m.shape(),
                });
            }
        }
        for (i, h) in self.mha.heads.iter().enumerate() {
            for (name, m) in [("w_q", &h.w_q), ("w_k", &h.w_k), ("w_v", &h.w_v)] {
                out.push(TensorInfo {
                    name: format!("mha.head{i}.{name}"),
                    kind: ParamKind::Weight,
                    shape: m.shape(),
                });
            }
        }
        let tail = [
            ("mha.w_o", ParamKind::Weight, &self.mha.w_o),
            ("fuse.gain", ParamKind::Gain, &self.fuse_gain),
            ("fuse.bias", ParamKind::Bias, &self.fuse_bias),
            ("head.w_c", ParamKind::Weight, &self.w_c),
            ("head.b_c", ParamKind::Bias, &self.b_c),
        ];
        for (name, kind, m) in tail {
            out.push(TensorInfo {
                name: name.to_string(),
                kind,
                shape: m.shape(),
            });
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::new();
        out.extend(self.fwd.named().into_iter().map(|(_, m)| m));
        out.extend(self.bwd.named().into_iter().map(|(_, m)| m));
        for h in &self.mha.heads {
            out.extend([&h.w_q, &h.w_k, &h.w_v]);
        }
        out.extend([&self.mha.w_o, &self.fuse_gain, &self.fuse_bias, &self.w_c, &self.b_c]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.fwd.named_mut().into_iter().map(|(_, m)| m));
        out.extend(self.bwd.named_mut().into_iter().map(|(_, m)| m));
        for h in &mut self.mha.heads {
            let HeadParams { w_q, w_k, w_v } = h;
            out.extend([w_q, w_k, w_v]);
        }
        out.extend([
            &mut self.mha.w_o,
            &mut self.fuse_gain,
            &mut self.fuse_bias,
            &mut self.w_c,
            &mut self.b_c,
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += s · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, s: f64) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, s)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t.as_mut_slice() {
                *v *= s;
            }
        }
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(cfg)?;
        let (want, got) = (expected.layout(), self.layout());
        if want.len() != got.len() {
            return Err(Error::Internal(format!(
                "parameter set has {} tensors, config implies {}",
                got.len(),
                want.len()
            )));
        }
        for (w, g) in want.iter().zip(&got) {
            if w.shape != g.shape {
                return Err(Error::Dimension {
                    op: "model_params",
                    left: w.shape,
                    right: g.shape,
                });
            }
        }
        Ok(())
    }
}

/// Closed-form parameter count for a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (i, h, c) = (cfg.input_dim, cfg.hidden, cfg.classes);
    let d = 2 * h;
    let gru = 3 * i * h + 3 * h * h + 3 * h;
    // per-head q/k/v together span d columns each
    2 * gru + 3 * d * d + d * d + 2 * d + d * c + c
}

/// Glorot-uniform weights, zero biases, unit gains.
///
/// Draw order: tensors in [`ModelParams::layout`] order, entries row-major,
/// one `u ∈ [0, 1)` per weight entry mapped to `a·(2u − 1)` with
/// `a = √(6 / (rows + cols))`. Non-weight tensors consume no draws.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = params.layout();
    for (info, t) in layout.iter().zip(params.tensors_mut()) {
        match info.kind {
            ParamKind::Weight => {
                let (fan_in, fan_out) = info.shape;
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in t.as_mut_slice() {
                    *v = a * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            ParamKind::Gain => t.as_mut_slice().fill(1.0),
            ParamKind::Bias => {}
        }
    }
    Ok(params)
}

/// One labelled input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Matrix,
    pub label: usize,
}

/// Activations of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    bigru: BiGruCache,
    mha: MhaCache,
    fuse: FuseCache,
    pooled: Matrix,
    steps: usize,
}

impl ForwardCache {
    /// Attention weights of every head, `T × T` each.
    pub fn attention_weights(&self) -> Vec<Matrix> {
        self.mha.weights()
    }
}

fn check_input(cfg: &ModelConfig, x: &Matrix) -> Result<()> {
    if x.shape() != (cfg.seq_len, cfg.input_dim) {
        return Err(Error::Dimension {
            op: "model_forward",
            left: (cfg.seq_len, cfg.input_dim),
            right: x.shape(),
        });
    }
    Ok(())
}

/// Inference-mode forward pass.
pub fn forward(params: &ModelParams, cfg: &ModelConfig, x: &Matrix) -> Result<Vec<f64>> {
    forward_train(params, cfg, x).map(|(logits, _)| logits)
}

/// Forward pass that also returns the cache needed by [`backward`].
pub fn forward_train(params: &ModelParams, cfg: &ModelConfig, x: &Matrix) -> Result<(Vec<f64>, ForwardCache)> {
    check_input(cfg, x)?;
    let (h, bigru) = bigru_forward(x, &params.fwd, &params.bwd)?;
    let (a, mha) = mha_forward(&h, &params.mha)?;
    let (f, fuse_cache) = fuse(&h, &a, &params.fuse_gain, &params.fuse_bias, cfg.layer_norm_eps)?;
    let (logits, pooled) = head_forward(&f, &params.w_c, &params.b_c)?;
    Ok((
        logits,
        ForwardCache {
            bigru,
            mha,
            fuse: fuse_cache,
            pooled,
            steps: x.rows(),
        },
    ))
}

/// Adjoint of [`forward_train`]. Adds parameter gradients into `grads` and
/// returns the gradient with respect to the input sequence.
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_logits: &[f64], grads: &mut ModelParams) -> Result<Matrix> {
    if d_logits.len() != params.b_c.cols() {
        return Err(Error::Internal(format!(
            "upstream gradient has {} entries for {} classes",
            d_logits.len(),
            params.b_c.cols()
        )));
    }
    let d_f = head_backward(
        d_logits,
        &cache.pooled,
        cache.steps,
        &params.w_c,
        &mut grads.w_c,
        &mut grads.b_c,
    )?;
    let d_sum = fuse_backward(
        &d_f,
        &cache.fuse,
        &params.fuse_gain,
        &mut grads.fuse_gain,
        &mut grads.fuse_bias,
    )?;
    // residual: the pre-norm sum feeds both the attention output and H directly
    let mut d_h = mha_backward(&d_sum, &cache.mha, &params.mha, &mut grads.mha)?;
    d_h.add_assign(&d_sum)?;
    bigru_backward(&d_h, &cache.bigru, &params.fwd, &params.bwd, &mut grads.fwd, &mut grads.bwd)
}

/// `(λ/2) Σ ‖W‖²` over weight matrices only.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    let layout = params.layout();
    let sum: f64 = layout
        .iter()
        .zip(params.tensors())
        .filter(|(info, _)| info.kind == ParamKind::Weight)
        .map(|(_, t)| t.sum_squares())
        .sum();
    0.5 * lambda * sum
}

/// Adds `λ·W` to the gradient of every weight matrix.
pub fn add_l2_gradient(params: &ModelParams, grads: &mut ModelParams, lambda: f64) -> Result<()> {
    let layout = params.layout();
    for ((info, g), w) in layout.iter().zip(grads.tensors_mut()).zip(params.tensors()) {
        if info.kind == ParamKind::Weight {
            g.add_scaled(w, lambda)?;
        }
    }
    Ok(())
}

/// Result of one pass over a minibatch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Mean cross-entropy plus the L2 term.
    pub loss: f64,
    pub grads: ModelParams,
    /// Logits of each sample, in batch order.
    pub logits: Vec<Vec<f64>>,
}

/// Loss, gradients and per-sample logits for a minibatch. Sample gradients
/// are summed in batch order, then averaged.
pub fn batch_loss_and_grads(params: &ModelParams, cfg: &ModelConfig, batch: &[Sample]) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let mut data_loss = 0.0;
    let mut logits_out = Vec::with_capacity(batch.len());
    for s in batch {
        let (logits, cache) = forward_train(params, cfg, &s.x)?;
        let (loss, d_logits) = cross_entropy(&logits, s.label)?;
        backward(params, &cache, &d_logits, &mut grads)?;
        data_loss += loss;
        logits_out.push(logits);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    add_l2_gradient(params, &mut grads, cfg.l2_lambda)?;
    Ok(BatchResult {
        loss: data_loss / n + l2_penalty(params, cfg.l2_lambda),
        grads,
        logits: logits_out,
    })
}

pub fn loss_and_grads(params: &ModelParams, cfg: &ModelConfig, batch: &[Sample]) -> Result<(f64, ModelParams)> {
    batch_loss_and_grads(params, cfg, batch).map(|r| (r.loss, r.grads))
}

/// Objective value only; used by gradient checks.
pub fn batch_loss(params: &ModelParams, cfg: &ModelConfig, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        let logits = forward(params, cfg, &s.x)?;
        total += cross_entropy(&logits, s.label)?.0;
    }
    Ok(total / batch.len() as f64 + l2_penalty(params, cfg.l2_lambda))
}

pub fn predict_proba(params: &ModelParams, cfg: &ModelConfig, x: &Matrix) -> Result<Vec<f64>> {
    Ok(softmax(&forward(params, cfg, x)?))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
