//! Adam with global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Matrix;

/// A fixed, ordered set of named tensors.
pub trait TensorSet {
    fn tensor_names(&self) -> Vec<String>;
    fn tensor_refs(&self) -> Vec<&Matrix>;
    fn tensor_refs_mut(&mut self) -> Vec<&mut Matrix>;
}

impl TensorSet for ModelParams {
    fn tensor_names(&self) -> Vec<String> {
        self.layout().into_iter().map(|i| i.name).collect()
    }
    fn tensor_refs(&self) -> Vec<&Matrix> {
        self.tensors()
    }
    fn tensor_refs_mut(&mut self) -> Vec<&mut Matrix> {
        self.tensors_mut()
    }
}

impl TensorSet for Vec<Matrix> {
    fn tensor_names(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("tensor{i}")).collect()
    }
    fn tensor_refs(&self) -> Vec<&Matrix> {
        self.iter().collect()
    }
    fn tensor_refs_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub threshold: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { threshold: 1.0 }
    }
}

/// L2 norm over every entry of every tensor.
pub fn global_norm<T: TensorSet + ?Sized>(grads: &T) -> f64 {
    grads
        .tensor_refs()
        .iter()
        .map(|t| t.sum_squares())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all tensors jointly so their global norm does not exceed
/// `threshold`. Returns the factor applied (1.0 when untouched).
pub fn clip_global_norm<T: TensorSet + ?Sized>(grads: &mut T, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Config(format!("clip threshold must be positive, got {threshold}")));
    }
    let names = grads.tensor_names();
    for (name, t) in names.iter().zip(grads.tensor_refs()) {
        if !t.is_finite() {
            return Err(Error::NonFinite { tensor: name.clone() });
        }
    }
    let norm = global_norm(grads);
    if norm <= threshold {
        return Ok(1.0);
    }
    let scale = threshold / norm;
    for t in grads.tensor_refs_mut() {
        for v in t.as_mut_slice() {
            *v *= scale;
        }
    }
    Ok(scale)
}

/// Moment estimates and hyperparameters of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new<T: TensorSet + ?Sized>(params: &T, lr: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .tensor_refs()
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: TensorSet + ?Sized>(params: &mut T, grads: &T, state: &mut AdamState) -> Result<()> {
    let grads = grads.tensor_refs();
    let mut params = params.tensor_refs_mut();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Internal(format!(
            "adam: {} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(&grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let p = p.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Vec<Matrix> {
        vec![Matrix::row_vector(&[v])]
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![Matrix::row_vector(&[0.3, 0.4])];
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 1.0);
        assert_eq!(g[0].as_slice(), &[0.3, 0.4]);

        let mut g = vec![Matrix::row_vector(&[3.0, 4.0])];
        let s = clip_global_norm(&mut g, 1.0).unwrap();
        assert!((s - 0.2).abs() < 1e-15);
        assert!((g[0][(0, 0)] - 0.6).abs() < 1e-15 && (g[0][(0, 1)] - 0.8).abs() < 1e-15);

        // exactly at the threshold: untouched
        let mut g = vec![Matrix::row_vector(&[0.6, 0.8])];
        let before = g.clone();
        let norm = global_norm(&g);
        assert_eq!(clip_global_norm(&mut g, norm).unwrap(), 1.0);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_spans_all_tensors() {
        let mut g = vec![Matrix::row_vector(&[3.0]), Matrix::row_vector(&[4.0])];
        clip_global_norm(&mut g, 1.0).unwrap();
        assert!((g[0][(0, 0)] - 0.6).abs() < 1e-15);
        assert!((g[1][(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_names_non_finite_tensor() {
        let mut g = vec![Matrix::row_vector(&[1.0]), Matrix::row_vector(&[f64::NAN])];
        match clip_global_norm(&mut g, 1.0) {
            Err(Error::NonFinite { tensor }) => assert_eq!(tensor, "tensor1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![Matrix::row_vector(&[1.5, -2.0])];
        let g = vec![Matrix::zeros(1, 2)];
        let mut st = AdamState::new(&p, 0.001);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p[0].as_slice(), &[1.5, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p, 0.001);
        adam_step(&mut p, &scalar(1.0), &mut st).unwrap();
        // m̂ = v̂ = 1 after bias correction
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0][(0, 0)] - expected).abs() < 1e-18);
        assert!((p[0][(0, 0)] + 0.00099999999).abs() < 1e-13);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p, 0.001);
        let g = vec![Matrix::zeros(1, 2)];
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(Error::Dimension { .. })));
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p, 0.001);
        for _ in 0..5000 {
            let g = scalar(2.0 * p[0][(0, 0)]);
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert!(p[0][(0, 0)].abs() < 0.1, "{}", p[0][(0, 0)]);
    }

    proptest! {
        #[test]
        fn clipped_norm_within_threshold(values in prop::collection::vec(-50.0f64..50.0, 1..40), threshold in 0.01f64..10.0) {
            let mut g = vec![Matrix::row_vector(&values)];
            clip_global_norm(&mut g, threshold).unwrap();
            prop_assert!(global_norm(&g) <= threshold + 1e-12);
            let once = g.clone();
            clip_global_norm(&mut g, threshold).unwrap();
            for (a, b) in g[0].as_slice().iter().zip(once[0].as_slice()) {
                prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
            }
        }

        #[test]
        fn adam_opposes_gradient_sign(g in prop::sample::select(vec![-3.0, -1e-3, 1e-6, 0.5, 7.0])) {
            let mut p = scalar(0.25);
            let mut st = AdamState::new(&p, 0.001);
            adam_step(&mut p, &scalar(g), &mut st).unwrap();
            let delta = p[0][(0, 0)] - 0.25;
            prop_assert!(delta * g < 0.0);
        }

        #[test]
        fn adam_is_deterministic(values in prop::collection::vec(-5.0f64..5.0, 1..10)) {
            let g = vec![Matrix::row_vector(&values)];
            let run = || {
                let mut p = vec![Matrix::filled(1, values.len(), 0.3)];
                let mut st = AdamState::new(&p, 0.01);
                for _ in 0..3 {
                    adam_step(&mut p, &g, &mut st).unwrap();
                }
                (p, st)
            };
            prop_assert_eq!(run(), run());
        }
    }
}
