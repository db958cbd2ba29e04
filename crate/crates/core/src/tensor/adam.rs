use super::{Grads, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for t in grads.by_param.iter().flatten() {
        for &x in t.data() {
            sq += x.to_f64() * x.to_f64();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for t in grads.by_param.iter_mut().flatten() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// One bias-corrected Adam update. Missing gradients count as zero.
pub fn adam_step(params: &mut ParamSet<f32>, grads: &Grads<f32>, state: &mut AdamState) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Graph(format!(
            "adam state holds {} tensors, parameter set {}",
            state.m.len(),
            params.len()
        )));
    }
    for k in 0..params.len() {
        if let Some(g) = grads.get(k) {
            if g.shape() != params.tensor(k).shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: params.tensor(k).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(params.name(k).to_string()));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
    // 1 - beta2 loses most of its digits when formed in f32
    let (one_b1, one_b2) = ((1.0 - c.beta1) as f32, (1.0 - c.beta2) as f32);
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let step_size = (c.lr / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let eps = c.eps as f32;
    for k in 0..params.len() {
        let Some(g) = grads.get(k) else {
            // zero gradient: moments decay, parameters still move while m != 0
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            for ((p, mi), vi) in params.tensor_mut(k).data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                *mi *= b1;
                *vi *= b2;
                if *mi != 0.0 {
                    *p -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
                }
            }
            continue;
        };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((p, &gi), mi), vi) in params
            .tensor_mut(k)
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *p -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}
