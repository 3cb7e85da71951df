//! Oracles and fixtures shared by the integration tests. Each oracle is
//! written longhand, without calling the code it checks.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ssd_health::layers::{GruCellParams, MhaParams};
use ssd_health::model::{batch_loss, loss_and_grads, ModelConfig, ModelParams, ParamKind, Sample};
use ssd_health::numerics::Matrix;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_gru(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruCellParams {
    let mut p = GruCellParams::zeros(input, hidden);
    for (_, m) in p.named_mut() {
        let (r, c) = m.shape();
        *m = random_matrix(rng, r, c, 0.8);
    }
    p
}

/// Every tensor randomised, biases and gains included, so no gradient is
/// trivially zero.
pub fn random_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::zeros(cfg).unwrap();
    let kinds: Vec<ParamKind> = p.layout().into_iter().map(|i| i.kind).collect();
    for (t, kind) in p.tensors_mut().into_iter().zip(kinds) {
        let (r, c) = t.shape();
        *t = match kind {
            ParamKind::Weight => random_matrix(rng, r, c, 0.6),
            ParamKind::Bias => random_matrix(rng, r, c, 0.3),
            ParamKind::Gain => random_matrix(rng, r, c, 0.3).map(|v| 1.0 + v),
        };
    }
    p
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop GRU step.
pub fn gru_step_longhand(x: &[f64], h: &[f64], p: &GruCellParams) -> Vec<f64> {
    let hidden = h.len();
    let lin = |w: &Matrix, u: &Matrix, b: &Matrix, hv: &[f64], j: usize| {
        let mut s = b[(0, j)];
        for (i, xi) in x.iter().enumerate() {
            s += xi * w[(i, j)];
        }
        for (i, hi) in hv.iter().enumerate() {
            s += hi * u[(i, j)];
        }
        s
    };
    let z: Vec<f64> = (0..hidden).map(|j| sig(lin(&p.w_z, &p.u_z, &p.b_z, h, j))).collect();
    let r: Vec<f64> = (0..hidden).map(|j| sig(lin(&p.w_r, &p.u_r, &p.b_r, h, j))).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    (0..hidden)
        .map(|j| {
            let cand = lin(&p.w_h, &p.u_h, &p.b_h, &rh, j).tanh();
            z[j] * h[j] + (1.0 - z[j]) * cand
        })
        .collect()
}

/// Two sequential passes of the longhand cell, forward half first.
pub fn bigru_longhand(x: &Matrix, fwd: &GruCellParams, bwd: &GruCellParams) -> Vec<Vec<f64>> {
    let t_len = x.rows();
    let hidden = fwd.b_z.cols();
    let mut f_states = Vec::with_capacity(t_len);
    let mut h = vec![0.0; hidden];
    for t in 0..t_len {
        h = gru_step_longhand(x.row(t), &h, fwd);
        f_states.push(h.clone());
    }
    let mut b_states = vec![Vec::new(); t_len];
    let mut h = vec![0.0; hidden];
    for t in (0..t_len).rev() {
        h = gru_step_longhand(x.row(t), &h, bwd);
        b_states[t] = h.clone();
    }
    f_states
        .into_iter()
        .zip(b_states)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect()
}

/// Attention evaluated entry by entry, for any T and head count.
pub fn mha_longhand(h: &Matrix, p: &MhaParams) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let (t_len, d) = h.shape();
    let dh = d / p.heads.len();
    let proj = |w: &Matrix, t: usize, j: usize| (0..d).map(|i| h[(t, i)] * w[(i, j)]).sum::<f64>();
    let mut concat = vec![vec![0.0; d]; t_len];
    let mut all_weights = Vec::new();
    for (k, head) in p.heads.iter().enumerate() {
        let mut weights = vec![vec![0.0; t_len]; t_len];
        for a in 0..t_len {
            let logits: Vec<f64> = (0..t_len)
                .map(|b| (0..dh).map(|j| proj(&head.w_q, a, j) * proj(&head.w_k, b, j)).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for b in 0..t_len {
                weights[a][b] = e[b] / s;
            }
            for j in 0..dh {
                concat[a][k * dh + j] = (0..t_len).map(|b| weights[a][b] * proj(&head.w_v, b, j)).sum();
            }
        }
        all_weights.push(weights);
    }
    let out = (0..t_len)
        .map(|a| (0..d).map(|j| (0..d).map(|i| concat[a][i] * p.w_o[(i, j)]).sum()).collect())
        .collect();
    (out, all_weights)
}

/// Agreement between analytic gradients and central differences.
pub struct GradCheck {
    /// Largest `|a − n| / max(1e-8, |a| + |n|)` over every entry.
    pub max_rel: f64,
    pub worst_entry: String,
    pub max_abs: f64,
    /// Entries whose relative error is at least 1e-6.
    pub over_tolerance: usize,
    /// Largest `|a|` among those entries.
    pub largest_offending: f64,
    pub entries: usize,
}

pub fn gradient_check(params: &ModelParams, cfg: &ModelConfig, batch: &[Sample], h: f64) -> GradCheck {
    let (_, grads) = loss_and_grads(params, cfg, batch).unwrap();
    let names: Vec<String> = params.layout().into_iter().map(|i| i.name).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.as_slice().to_vec()).collect();
    let mut out = GradCheck {
        max_rel: 0.0,
        worst_entry: String::new(),
        max_abs: 0.0,
        over_tolerance: 0,
        largest_offending: 0.0,
        entries: 0,
    };
    let mut probe = params.clone();
    for (ti, name) in names.iter().enumerate() {
        for (k, &a) in analytic[ti].iter().enumerate() {
            let orig = probe.tensors()[ti].as_slice()[k];
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig + h;
            let up = batch_loss(&probe, cfg, batch).unwrap();
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig - h;
            let down = batch_loss(&probe, cfg, batch).unwrap();
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let abs = (a - numeric).abs();
            let rel = abs / (a.abs() + numeric.abs()).max(1e-8);
            out.entries += 1;
            out.max_abs = out.max_abs.max(abs);
            if rel >= 1e-6 {
                out.over_tolerance += 1;
                out.largest_offending = out.largest_offending.max(a.abs());
            }
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst_entry = format!("{name}[{k}] (analytic {a:.6e}, numeric {numeric:.6e})");
            }
        }
    }
    out
}

/// Two-component Gaussian mixture fitted by EM; returns the sorted means.
pub fn two_component_means(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (mut mu, mut var, mut w) = ([lo, hi], [25.0, 25.0], [0.5, 0.5]);
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    for _ in 0..500 {
        let mut sums = [[0.0; 3]; 2];
        for &x in xs {
            let p0 = w[0] * pdf(x, mu[0], var[0]);
            let p1 = w[1] * pdf(x, mu[1], var[1]);
            let r0 = p0 / (p0 + p1);
            for (k, r) in [r0, 1.0 - r0].into_iter().enumerate() {
                sums[k][0] += r;
                sums[k][1] += r * x;
                sums[k][2] += r * x * x;
            }
        }
        for k in 0..2 {
            w[k] = sums[k][0] / n;
            mu[k] = sums[k][1] / sums[k][0];
            var[k] = (sums[k][2] / sums[k][0] - mu[k] * mu[k]).max(1e-6);
        }
    }
    (mu[0].min(mu[1]), mu[0].max(mu[1]))
}

/// Tie-adjusted pair counting: P(positive outscores negative), ties ½.
pub fn pair_count_auc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}
