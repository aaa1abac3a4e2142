use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: 1.0,
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}

#[inline]
fn flush_subnormal(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Adaptive-moment optimizer with global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips `grads` by global norm, then applies one update. Returns the
    /// pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, mut grads: Vec<Tensor>) -> Result<f64> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(&grads) {
            if g.shape() != params.get(id).shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer_step",
                    left: params.get(id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        let norm = clip_global_norm(&mut grads, self.config.max_grad_norm);
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((id, g), (m, v)) in params
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(&grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            if g.data().iter().all(|&x| x == 0.0) && m.iter().all(|&x| x == 0.0) {
                // Moments stay zero and the update would be exactly zero.
                continue;
            }
            let g = g.data();
            let (inv1, inv2) = (1.0 / bias1, 1.0 / bias2);
            params.update(id, |p| {
                let n = p.len();
                let (m, v, g) = (&mut m[..n], &mut v[..n], &g[..n]);
                for i in 0..n {
                    // Moments of long-idle weights decay into subnormals,
                    // which are an order of magnitude slower to compute with.
                    let mi = flush_subnormal(c.beta1 * m[i] + (1.0 - c.beta1) * g[i]);
                    let vi = flush_subnormal(c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i]);
                    m[i] = mi;
                    v[i] = vi;
                    p[i] -= c.learning_rate * (mi * inv1) / ((vi * inv2).sqrt() + c.epsilon);
                }
            });
        }
        Ok(norm)
    }

    /// Moment buffers and step counter as container entries.
    pub fn entries(&self, prefix: &str, params: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.first.len() + 1);
        for ((name, t), (m, v)) in params.iter().zip(self.first.iter().zip(&self.second)) {
            let shape = t.shape().to_vec();
            out.push((
                format!("{prefix}m/{name}"),
                Tensor::from_parts(shape.clone(), m.clone()),
            ));
            out.push((
                format!("{prefix}v/{name}"),
                Tensor::from_parts(shape, v.clone()),
            ));
        }
        out.push((format!("{prefix}step"), Tensor::scalar(self.step as f64)));
        out
    }

    pub fn load_entries(
        &mut self,
        prefix: &str,
        params: &ParamStore,
        entries: &[(String, Tensor)],
    ) -> Result<()> {
        let find = |key: String| {
            entries
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| TensorError::Io(format!("missing entry {key}")))
        };
        for (i, (name, _)) in params.iter().enumerate() {
            self.first[i] = find(format!("{prefix}m/{name}"))?.data().to_vec();
            self.second[i] = find(format!("{prefix}v/{name}"))?.data().to_vec();
        }
        self.step = find(format!("{prefix}step"))?.data()[0] as u64;
        Ok(())
    }
}
