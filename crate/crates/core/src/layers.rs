//! Building blocks of the network: GRU cell, bidirectional scan, multi-head
//! self-attention, residual layer-norm fusion and the pooled classifier head.
//!
//! Every forward pass returns a cache holding exactly what its backward pass
//! consumes. Backward passes *accumulate* into gradient structs shaped like
//! the parameters, so a batch can be summed in place in sample order.

use crate::error::{Error, Result};
use crate::numerics::{layer_norm_full, softmax, softmax_rows, Matrix};

/// Weights of one GRU cell. `w_*` map the input, `u_*` the previous state.
///
/// Gates follow Cho et al.:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)          retain gate
/// r  = σ(x·W_r + h·U_r + b_r)          reset gate
/// h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = z ⊙ h + (1 − z) ⊙ h̃
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruCellParams {
            w_z: Matrix::zeros(input_dim, hidden),
            w_r: Matrix::zeros(input_dim, hidden),
            w_h: Matrix::zeros(input_dim, hidden),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: Matrix::zeros(1, hidden),
            b_r: Matrix::zeros(1, hidden),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden());
        let expected = [
            (&self.w_z, (i, h)),
            (&self.w_r, (i, h)),
            (&self.w_h, (i, h)),
            (&self.u_z, (h, h)),
            (&self.u_r, (h, h)),
            (&self.u_h, (h, h)),
            (&self.b_z, (1, h)),
            (&self.b_r, (1, h)),
            (&self.b_h, (1, h)),
        ];
        for (m, shape) in expected {
            if m.shape() != shape {
                return Err(Error::Dimension {
                    op: "gru_params",
                    left: shape,
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }

    /// Tensors in canonical order, with their short names.
    pub fn named(&self) -> [(&'static str, &Matrix); 9] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Matrix); 9] {
        [
            ("w_z", &mut self.w_z),
            ("w_r", &mut self.w_r),
            ("w_h", &mut self.w_h),
            ("u_z", &mut self.u_z),
            ("u_r", &mut self.u_r),
            ("u_h", &mut self.u_h),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
        ]
    }
}

/// Activations of one GRU step.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Matrix,
    pub h_prev: Matrix,
    pub z: Matrix,
    pub r: Matrix,
    pub h_tilde: Matrix,
    /// `r ⊙ h_prev`
    pub rh: Matrix,
}

fn check_row(v: &Matrix, len: usize, op: &'static str) -> Result<()> {
    if v.shape() != (1, len) {
        return Err(Error::Dimension {
            op,
            left: (1, len),
            right: v.shape(),
        });
    }
    Ok(())
}

/// One GRU step on row vectors `x_t` (1 × input_dim) and `h_prev` (1 × hidden).
pub fn gru_cell_forward(x_t: &Matrix, h_prev: &Matrix, p: &GruCellParams) -> Result<(Matrix, GruStepCache)> {
    check_row(x_t, p.input_dim(), "gru_cell_forward(x)")?;
    check_row(h_prev, p.hidden(), "gru_cell_forward(h_prev)")?;

    let z = x_t
        .matmul(&p.w_z)?
        .add(&h_prev.matmul(&p.u_z)?)?
        .add(&p.b_z)?
        .sigmoid();
    let r = x_t
        .matmul(&p.w_r)?
        .add(&h_prev.matmul(&p.u_r)?)?
        .add(&p.b_r)?
        .sigmoid();
    let rh = r.hadamard(h_prev)?;
    let h_tilde = x_t
        .matmul(&p.w_h)?
        .add(&rh.matmul(&p.u_h)?)?
        .add(&p.b_h)?
        .tanh();

    let mut h = Matrix::zeros(1, p.hidden());
    for j in 0..p.hidden() {
        let zj = z[(0, j)];
        h[(0, j)] = zj * h_prev[(0, j)] + (1.0 - zj) * h_tilde[(0, j)];
    }
    let cache = GruStepCache {
        x: x_t.clone(),
        h_prev: h_prev.clone(),
        z,
        r,
        h_tilde,
        rh,
    };
    Ok((h, cache))
}

/// Backward through one GRU step. Accumulates parameter gradients into
/// `grads` and returns `(dx, dh_prev)`.
pub fn gru_cell_backward(
    dh: &Matrix,
    cache: &GruStepCache,
    p: &GruCellParams,
    grads: &mut GruCellParams,
) -> Result<(Matrix, Matrix)> {
    let hidden = p.hidden();
    check_row(dh, hidden, "gru_cell_backward")?;

    let mut dh_prev = Matrix::zeros(1, hidden);
    let mut da_z = Matrix::zeros(1, hidden);
    let mut da_h = Matrix::zeros(1, hidden);
    for j in 0..hidden {
        let g = dh[(0, j)];
        let z = cache.z[(0, j)];
        let ht = cache.h_tilde[(0, j)];
        dh_prev[(0, j)] = g * z;
        let dz = g * (cache.h_prev[(0, j)] - ht);
        da_z[(0, j)] = dz * z * (1.0 - z);
        da_h[(0, j)] = g * (1.0 - z) * (1.0 - ht * ht);
    }

    // candidate branch
    grads.w_h.add_assign(&cache.x.t_matmul(&da_h)?)?;
    grads.u_h.add_assign(&cache.rh.t_matmul(&da_h)?)?;
    grads.b_h.add_assign(&da_h)?;
    let d_rh = da_h.matmul_t(&p.u_h)?;
    let mut da_r = Matrix::zeros(1, hidden);
    for j in 0..hidden {
        let r = cache.r[(0, j)];
        let dr = d_rh[(0, j)] * cache.h_prev[(0, j)];
        da_r[(0, j)] = dr * r * (1.0 - r);
        dh_prev[(0, j)] += d_rh[(0, j)] * r;
    }

    grads.w_z.add_assign(&cache.x.t_matmul(&da_z)?)?;
    grads.u_z.add_assign(&cache.h_prev.t_matmul(&da_z)?)?;
    grads.b_z.add_assign(&da_z)?;
    grads.w_r.add_assign(&cache.x.t_matmul(&da_r)?)?;
    grads.u_r.add_assign(&cache.h_prev.t_matmul(&da_r)?)?;
    grads.b_r.add_assign(&da_r)?;

    dh_prev.add_assign(&da_z.matmul_t(&p.u_z)?)?;
    dh_prev.add_assign(&da_r.matmul_t(&p.u_r)?)?;

    let mut dx = da_z.matmul_t(&p.w_z)?;
    dx.add_assign(&da_r.matmul_t(&p.w_r)?)?;
    dx.add_assign(&da_h.matmul_t(&p.w_h)?)?;
    Ok((dx, dh_prev))
}

/// Per-step caches of both scan directions, indexed by time.
#[derive(Debug, Clone)]
pub struct BiGruCache {
    pub fwd: Vec<GruStepCache>,
    pub bwd: Vec<GruStepCache>,
}

/// Runs a forward GRU over `t = 0..T` and a backward GRU over `t = T-1..0`,
/// both from zero state. Row `t` of the result is `[h_fwd[t], h_bwd[t]]`.
pub fn bigru_forward(x: &Matrix, fwd: &GruCellParams, bwd: &GruCellParams) -> Result<(Matrix, BiGruCache)> {
    let steps = x.rows();
    if steps == 0 {
        return Err(Error::InvalidInput("bigru_forward: empty sequence".into()));
    }
    if fwd.hidden() != bwd.hidden() || fwd.input_dim() != bwd.input_dim() {
        return Err(Error::Dimension {
            op: "bigru_forward(directions)",
            left: (fwd.input_dim(), fwd.hidden()),
            right: (bwd.input_dim(), bwd.hidden()),
        });
    }
    let hidden = fwd.hidden();
    let mut out = Matrix::zeros(steps, 2 * hidden);
    let rows: Vec<Matrix> = (0..steps).map(|t| Matrix::row_vector(x.row(t))).collect();

    let mut fwd_cache = Vec::with_capacity(steps);
    let mut h = Matrix::zeros(1, hidden);
    for (t, x_t) in rows.iter().enumerate() {
        let (next, c) = gru_cell_forward(x_t, &h, fwd)?;
        out.row_mut(t)[..hidden].copy_from_slice(next.as_slice());
        fwd_cache.push(c);
        h = next;
    }

    let mut bwd_cache: Vec<Option<GruStepCache>> = vec![None; steps];
    let mut h = Matrix::zeros(1, hidden);
    for t in (0..steps).rev() {
        let (next, c) = gru_cell_forward(&rows[t], &h, bwd)?;
        out.row_mut(t)[hidden..].copy_from_slice(next.as_slice());
        bwd_cache[t] = Some(c);
        h = next;
    }
    let bwd_cache = bwd_cache.into_iter().map(|c| c.expect("every step visited")).collect();

    Ok((
        out,
        BiGruCache {
            fwd: fwd_cache,
            bwd: bwd_cache,
        },
    ))
}

/// Backpropagation through time for both directions. Returns `dX`.
pub fn bigru_backward(
    d_out: &Matrix,
    cache: &BiGruCache,
    fwd: &GruCellParams,
    bwd: &GruCellParams,
    g_fwd: &mut GruCellParams,
    g_bwd: &mut GruCellParams,
) -> Result<Matrix> {
    let steps = cache.fwd.len();
    let hidden = fwd.hidden();
    if cache.bwd.len() != steps || d_out.shape() != (steps, 2 * hidden) {
        return Err(Error::Internal(format!(
            "bigru cache holds {}+{} steps, upstream gradient is {:?}",
            steps,
            cache.bwd.len(),
            d_out.shape()
        )));
    }
    let mut dx = Matrix::zeros(steps, fwd.input_dim());

    // forward direction: state flows t -> t+1, so unroll from the end
    let mut carry = Matrix::zeros(1, hidden);
    for t in (0..steps).rev() {
        let mut dh = Matrix::row_vector(&d_out.row(t)[..hidden]);
        dh.add_assign(&carry)?;
        let (dx_t, dh_prev) = gru_cell_backward(&dh, &cache.fwd[t], fwd, g_fwd)?;
        for (o, v) in dx.row_mut(t).iter_mut().zip(dx_t.as_slice()) {
            *o += v;
        }
        carry = dh_prev;
    }

    // backward direction: state flows t -> t-1
    let mut carry = Matrix::zeros(1, hidden);
    for t in 0..steps {
        let mut dh = Matrix::row_vector(&d_out.row(t)[hidden..]);
        dh.add_assign(&carry)?;
        let (dx_t, dh_prev) = gru_cell_backward(&dh, &cache.bwd[t], bwd, g_bwd)?;
        for (o, v) in dx.row_mut(t).iter_mut().zip(dx_t.as_slice()) {
            *o += v;
        }
        carry = dh_prev;
    }
    Ok(dx)
}

/// Query/key/value projections of one attention head (d_model × d_head each).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Multi-head self-attention weights. `w_o` is d_model × d_model.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Matrix,
}

impl MhaParams {
    pub fn zeros(d_model: usize, heads: usize) -> Result<Self> {
        let d_head = head_dim(d_model, heads)?;
        Ok(MhaParams {
            heads: (0..heads)
                .map(|_| HeadParams {
                    w_q: Matrix::zeros(d_model, d_head),
                    w_k: Matrix::zeros(d_model, d_head),
                    w_v: Matrix::zeros(d_model, d_head),
                })
                .collect(),
            w_o: Matrix::zeros(d_model, d_model),
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_o.rows()
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d_model = self.d_model();
        let d_head = head_dim(d_model, self.num_heads())?;
        if self.w_o.shape() != (d_model, d_model) {
            return Err(Error::Dimension {
                op: "mha_params(w_o)",
                left: (d_model, d_model),
                right: self.w_o.shape(),
            });
        }
        for h in &self.heads {
            for m in [&h.w_q, &h.w_k, &h.w_v] {
                if m.shape() != (d_model, d_head) {
                    return Err(Error::Dimension {
                        op: "mha_params(head)",
                        left: (d_model, d_head),
                        right: m.shape(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Width of each head; `d_model` must split evenly across `heads`.
pub fn head_dim(d_model: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {d_model} is not divisible by {heads} attention heads"
        )));
    }
    Ok(d_model / heads)
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub weights: Matrix,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    pub input: Matrix,
    pub heads: Vec<HeadCache>,
    /// Head outputs spliced along the feature axis, before `w_o`.
    pub concat: Matrix,
}

impl MhaCache {
    pub fn weights(&self) -> Vec<Matrix> {
        self.heads.iter().map(|h| h.weights.clone()).collect()
    }
}

/// Scaled dot-product self-attention over the rows of `h`, one pass per
/// head, then `concat(heads) · W_o`. No positional encoding is added.
pub fn mha_forward(h: &Matrix, p: &MhaParams) -> Result<(Matrix, MhaCache)> {
    p.validate()?;
    let d_model = p.d_model();
    if h.cols() != d_model {
        return Err(Error::Dimension {
            op: "mha_forward",
            left: h.shape(),
            right: (h.rows(), d_model),
        });
    }
    let d_head = head_dim(d_model, p.num_heads())?;
    let scale = 1.0 / (d_head as f64).sqrt();

    let mut concat = Matrix::zeros(h.rows(), d_model);
    let mut caches = Vec::with_capacity(p.num_heads());
    for (i, hp) in p.heads.iter().enumerate() {
        let q = h.matmul(&hp.w_q)?;
        let k = h.matmul(&hp.w_k)?;
        let v = h.matmul(&hp.w_v)?;
        let weights = softmax_rows(&q.matmul_t(&k)?.scale(scale));
        let out = weights.matmul(&v)?;
        concat.set_columns(i * d_head, &out);
        caches.push(HeadCache { q, k, v, weights });
    }
    let a = concat.matmul(&p.w_o)?;
    Ok((
        a,
        MhaCache {
            input: h.clone(),
            heads: caches,
            concat,
        },
    ))
}

/// Backward through attention. Returns `dH`.
pub fn mha_backward(d_a: &Matrix, cache: &MhaCache, p: &MhaParams, grads: &mut MhaParams) -> Result<Matrix> {
    let d_model = p.d_model();
    let d_head = head_dim(d_model, p.num_heads())?;
    if cache.heads.len() != p.num_heads() || d_a.shape() != cache.concat.shape() {
        return Err(Error::Internal("attention cache does not match parameters".into()));
    }
    let scale = 1.0 / (d_head as f64).sqrt();

    grads.w_o.add_assign(&cache.concat.t_matmul(d_a)?)?;
    let d_concat = d_a.matmul_t(&p.w_o)?;

    let steps = cache.input.rows();
    let mut d_h = Matrix::zeros(steps, d_model);
    for (i, (hp, hc)) in p.heads.iter().zip(&cache.heads).enumerate() {
        let d_out = d_concat.columns(i * d_head, d_head);
        let d_weights = d_out.matmul_t(&hc.v)?;
        let d_v = hc.weights.t_matmul(&d_out)?;

        // softmax adjoint, row by row
        let mut d_scores = Matrix::zeros(steps, steps);
        for r in 0..steps {
            let w = hc.weights.row(r);
            let g = d_weights.row(r);
            let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
            for (c, out) in d_scores.row_mut(r).iter_mut().enumerate() {
                *out = w[c] * (g[c] - dot) * scale;
            }
        }
        let d_q = d_scores.matmul(&hc.k)?;
        let d_k = d_scores.t_matmul(&hc.q)?;

        let gh = &mut grads.heads[i];
        gh.w_q.add_assign(&cache.input.t_matmul(&d_q)?)?;
        gh.w_k.add_assign(&cache.input.t_matmul(&d_k)?)?;
        gh.w_v.add_assign(&cache.input.t_matmul(&d_v)?)?;

        d_h.add_assign(&d_q.matmul_t(&hp.w_q)?)?;
        d_h.add_assign(&d_k.matmul_t(&hp.w_k)?)?;
        d_h.add_assign(&d_v.matmul_t(&hp.w_v)?)?;
    }
    Ok(d_h)
}

#[derive(Debug, Clone)]
pub struct FuseCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
}

/// `F[t] = layer_norm(H[t] + A[t])`.
pub fn fuse(h: &Matrix, a: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<(Matrix, FuseCache)> {
    let sum = h.add(a)?;
    check_row(gain, h.cols(), "fuse(gain)")?;
    check_row(bias, h.cols(), "fuse(bias)")?;
    let mut out = Matrix::zeros(h.rows(), h.cols());
    let mut x_hat = Matrix::zeros(h.rows(), h.cols());
    let mut inv_std = Vec::with_capacity(h.rows());
    for t in 0..h.rows() {
        let ln = layer_norm_full(sum.row(t), gain.as_slice(), bias.as_slice(), eps)?;
        out.set_row(t, &ln.y);
        x_hat.set_row(t, &ln.x_hat);
        inv_std.push(ln.inv_std);
    }
    Ok((out, FuseCache { x_hat, inv_std }))
}

/// Returns the gradient w.r.t. the pre-norm sum, which is both `dH` and `dA`.
pub fn fuse_backward(
    d_f: &Matrix,
    cache: &FuseCache,
    gain: &Matrix,
    d_gain: &mut Matrix,
    d_bias: &mut Matrix,
) -> Result<Matrix> {
    if d_f.shape() != cache.x_hat.shape() {
        return Err(Error::Internal("fuse cache does not match upstream gradient".into()));
    }
    let (steps, width) = d_f.shape();
    let n = width as f64;
    let mut d_sum = Matrix::zeros(steps, width);
    for t in 0..steps {
        let dy = d_f.row(t);
        let xh = cache.x_hat.row(t);
        let mut d_xhat = vec![0.0; width];
        for j in 0..width {
            d_gain[(0, j)] += dy[j] * xh[j];
            d_bias[(0, j)] += dy[j];
            d_xhat[j] = dy[j] * gain[(0, j)];
        }
        let sum_d: f64 = d_xhat.iter().sum();
        let sum_dx: f64 = d_xhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let k = cache.inv_std[t] / n;
        for (j, out) in d_sum.row_mut(t).iter_mut().enumerate() {
            *out = k * (n * d_xhat[j] - sum_d - xh[j] * sum_dx);
        }
    }
    Ok(d_sum)
}

/// Mean-pools `F` over time and applies the dense classifier.
/// Returns `(logits, pooled)`.
pub fn head_forward(f: &Matrix, w_c: &Matrix, b_c: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if w_c.cols() < 2 {
        return Err(Error::Config("classifier needs at least 2 classes".into()));
    }
    check_row(b_c, w_c.cols(), "head_forward(b_c)")?;
    let pooled = f.column_mean();
    let logits = pooled.matmul(w_c)?.add(b_c)?;
    Ok((logits.into_vec(), pooled))
}

/// Returns `dF`; every row receives `dpooled / T`.
pub fn head_backward(
    d_logits: &[f64],
    pooled: &Matrix,
    steps: usize,
    w_c: &Matrix,
    d_w_c: &mut Matrix,
    d_b_c: &mut Matrix,
) -> Result<Matrix> {
    let dl = Matrix::row_vector(d_logits);
    d_w_c.add_assign(&pooled.t_matmul(&dl)?)?;
    d_b_c.add_assign(&dl)?;
    let d_pooled = dl.matmul_t(w_c)?.scale(1.0 / steps as f64);
    let mut d_f = Matrix::zeros(steps, w_c.rows());
    for t in 0..steps {
        d_f.set_row(t, d_pooled.as_slice());
    }
    Ok(d_f)
}

/// Softmax cross-entropy. Returns `(−ln p[label], p − onehot(label))`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    // log-sum-exp keeps the loss finite for confident predictions
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}
