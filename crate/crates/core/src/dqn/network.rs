use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Axes, ParamId, ParamStore, Reduce, Result, Tape, Tensor, TensorError, Var};

/// Layer sizes of the dueling Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QNetConfig {
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self {
            conv1_channels: 16,
            conv1_kernel: 5,
            conv1_stride: 2,
            conv2_channels: 32,
            conv2_kernel: 3,
            conv2_stride: 2,
            hidden: 128,
            actions: 4,
        }
    }
}

fn conv_out(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel > input || stride == 0 {
        return Err(TensorError::KernelTooLarge {
            kernel: (kernel, kernel),
            input: (input, input),
        });
    }
    Ok((input - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    conv1: Linear,
    conv2: Linear,
    value1: Linear,
    value2: Linear,
    adv1: Linear,
    adv2: Linear,
}

/// Convolutional backbone with separate value and advantage streams.
#[derive(Debug, Clone)]
pub struct QNetwork {
    params: ParamStore,
    layers: Layers,
    config: QNetConfig,
    image_side: usize,
    flat: usize,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(config: &QNetConfig, image_side: usize, rng: &mut R) -> Result<Self> {
        let c = config;
        let s1 = conv_out(image_side, c.conv1_kernel, c.conv1_stride)?;
        let s2 = conv_out(s1, c.conv2_kernel, c.conv2_stride)?;
        let flat = c.conv2_channels * s2 * s2;
        let mut p = ParamStore::new();
        let mut linear = |p: &mut ParamStore, name: &str, w_shape: &[usize], fan_in: usize, out: usize| {
            Linear {
                w: p.add_uniform(format!("{name}.weight"), w_shape, fan_in, rng),
                b: p.add_uniform(format!("{name}.bias"), &[out], fan_in, rng),
            }
        };
        let k1 = c.conv1_kernel;
        let k2 = c.conv2_kernel;
        let layers = Layers {
            conv1: linear(&mut p, "conv1", &[c.conv1_channels, 1, k1, k1], k1 * k1, c.conv1_channels),
            conv2: linear(
                &mut p,
                "conv2",
                &[c.conv2_channels, c.conv1_channels, k2, k2],
                c.conv1_channels * k2 * k2,
                c.conv2_channels,
            ),
            value1: linear(&mut p, "value1", &[flat, c.hidden], flat, c.hidden),
            value2: linear(&mut p, "value2", &[c.hidden, 1], c.hidden, 1),
            adv1: linear(&mut p, "advantage1", &[flat, c.hidden], flat, c.hidden),
            adv2: linear(&mut p, "advantage2", &[c.hidden, c.actions], c.hidden, c.actions),
        };
        Ok(Self {
            params: p,
            layers,
            config: config.clone(),
            image_side,
            flat,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn config(&self) -> &QNetConfig {
        &self.config
    }

    pub fn actions(&self) -> usize {
        self.config.actions
    }

    /// Flattened feature size after the convolutional backbone.
    pub fn feature_size(&self) -> usize {
        self.flat
    }

    fn bind(&self, tape: &mut Tape, l: Linear, trainable: bool) -> (Var, Var) {
        if trainable {
            (tape.param(&self.params, l.w), tape.param(&self.params, l.b))
        } else {
            (
                tape.frozen_param(&self.params, l.w),
                tape.frozen_param(&self.params, l.b),
            )
        }
    }

    /// Value `[n, 1]` and advantage `[n, actions]` streams for `obs` of shape
    /// `[n, 1, H, W]`.
    pub fn streams(&self, tape: &mut Tape, obs: Var, trainable: bool) -> Result<(Var, Var)> {
        let shape = tape.shape(obs)?.to_vec();
        let want = [1, self.image_side, self.image_side];
        if shape.len() != 4 || shape[1..] != want {
            return Err(TensorError::ShapeMismatch {
                op: "q_values",
                left: vec![0, 1, self.image_side, self.image_side],
                right: shape,
            });
        }
        let n = shape[0];
        let l = self.layers;
        let (w, b) = self.bind(tape, l.conv1, trainable);
        let h = tape.conv2d(obs, w, b, self.config.conv1_stride)?;
        let h = tape.relu(h)?;
        let (w, b) = self.bind(tape, l.conv2, trainable);
        let h = tape.conv2d(h, w, b, self.config.conv2_stride)?;
        let h = tape.relu(h)?;
        let features = tape.reshape(h, vec![n, self.flat])?;
        let head = |tape: &mut Tape, first: Linear, second: Linear| -> Result<Var> {
            let (w, b) = self.bind(tape, first, trainable);
            let z = tape.affine(features, w, b)?;
            let z = tape.relu(z)?;
            let (w, b) = self.bind(tape, second, trainable);
            tape.affine(z, w, b)
        };
        let value = head(tape, l.value1, l.value2)?;
        let advantage = head(tape, l.adv1, l.adv2)?;
        Ok((value, advantage))
    }

    /// Q-values `[n, actions]`.
    pub fn forward(&self, tape: &mut Tape, obs: Var, trainable: bool) -> Result<Var> {
        let (value, advantage) = self.streams(tape, obs, trainable)?;
        dueling_combine(tape, value, advantage)
    }

    /// Q-values of a single `[1, H, W]` observation, without gradients.
    pub fn q_values(&self, obs: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut shape = vec![1];
        shape.extend_from_slice(obs.shape());
        let x = tape.constant(obs.reshape(shape)?);
        let q = self.forward(&mut tape, x, false)?;
        Ok(tape.value(q)?.data().to_vec())
    }

    /// Copies all parameters from `other` (same architecture).
    pub fn copy_from(&mut self, other: &QNetwork) -> Result<()> {
        self.params.copy_from(&other.params)
    }
}

/// `Q = V + (A - mean_a A)` for `value [n, 1]` and `advantage [n, k]`.
pub fn dueling_combine(tape: &mut Tape, value: Var, advantage: Var) -> Result<Var> {
    let shape = tape.shape(advantage)?.to_vec();
    let (n, k) = (shape[0], shape[1]);
    let mean = tape.reduce(Reduce::Mean, advantage, &Axes::Only(vec![1]))?;
    let rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mean = tape.gather(mean, rows.clone(), vec![n, k])?;
    let value = tape.gather(value, rows, vec![n, k])?;
    let centered = tape.sub(advantage, mean)?;
    tape.add(centered, value)
}

/// Scalar form of [`dueling_combine`], evaluated in the same order.
pub fn combine_values(value: f64, advantage: &[f64]) -> Vec<f64> {
    let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
    advantage.iter().map(|a| (a - mean) + value).collect()
}
