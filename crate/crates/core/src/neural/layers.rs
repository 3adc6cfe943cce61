//! Building blocks shared by the networks: parameter layout, dense maps,
//! inverted dropout and batch normalisation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    /// Included in the L2 penalty.
    pub decay: bool,
}

impl Block {
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

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<Block>,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, decay: bool) -> usize {
        let offset = self.size();
        self.blocks.push(Block {
            name: name.into(),
            offset,
            shape,
            decay,
        });
        self.blocks.len() - 1
    }

    pub fn size(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    /// `sum w^2` over decayed blocks.
    pub fn l2_norm_sq(&self, params: &[f64]) -> f64 {
        self.blocks
            .iter()
            .filter(|b| b.decay)
            .map(|b| params[b.range()].iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// `grad += 2 * l2 * w` over decayed blocks.
    pub fn add_l2_grad(&self, params: &[f64], grad: &mut [f64], l2: f64) {
        for b in self.blocks.iter().filter(|b| b.decay) {
            for i in b.range() {
                grad[i] += 2.0 * l2 * params[i];
            }
        }
    }

    pub fn view2<'a>(&self, params: &'a [f64], id: usize) -> ArrayView2<'a, f64> {
        let b = &self.blocks[id];
        ArrayView2::from_shape((b.shape[0], b.shape[1]), &params[b.range()]).expect("block shape")
    }

    pub fn slice<'a>(&self, params: &'a [f64], id: usize) -> &'a [f64] {
        &params[self.blocks[id].range()]
    }
}

/// Uniform He-style initialisation: weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
/// the `fan_in` of each decayed block being its last dimension.
/// Non-decayed blocks start at their `fill` value.
pub fn init_params(layout: &Layout, fill: &dyn Fn(&Block) -> f64, rng: &mut Rng) -> Vec<f64> {
    let mut p = vec![0.0; layout.size()];
    for b in &layout.blocks {
        if b.decay {
            let fan_in = *b.shape.last().expect("non-empty shape") as f64;
            let bound = (6.0 / fan_in).sqrt();
            for v in &mut p[b.range()] {
                *v = rng.random_range(-bound..bound);
            }
        } else {
            let f = fill(b);
            p[b.range()].iter_mut().for_each(|v| *v = f);
        }
    }
    p
}

/// `x W^T + b` for `W` of shape `out x in`.
pub fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    for mut row in z.rows_mut() {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    z
}

/// Gradients of `affine` given upstream `dz`: `(dW, db, dx)`.
pub fn affine_backward(x: &Array2<f64>, w: ArrayView2<f64>, dz: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    // dot on a transposed view may come back column-major
    (dz.t().dot(x).as_standard_layout().into_owned(), dz.sum_axis(Axis(0)), dz.dot(&w))
}

pub fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Inverted-dropout mask: 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    #[serde(with = "crate::codec::vec")]
    pub running_mean: Vec<f64>,
    #[serde(with = "crate::codec::vec")]
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
}

/// Train mode normalises with the batch mean and biased variance and moves
/// the running statistics by `momentum` (the running variance uses the
/// unbiased batch estimate). Eval mode uses the running statistics.
pub fn batchnorm_forward(
    state: &mut BatchNormState,
    gamma: &[f64],
    beta: &[f64],
    z: &Array2<f64>,
    mode: Mode,
) -> Result<(Array2<f64>, BatchNormCache)> {
    let (n, w) = z.dim();
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::invalid("batch normalisation in train mode needs a batch of at least 2"));
            }
            let mean: Vec<f64> = z.mean_axis(Axis(0)).expect("non-empty").to_vec();
            let var: Vec<f64> = (0..w)
                .map(|j| z.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64)
                .collect();
            for j in 0..w {
                let unbiased = var[j] * n as f64 / (n - 1) as f64;
                state.running_mean[j] = (1.0 - BN_MOMENTUM) * state.running_mean[j] + BN_MOMENTUM * mean[j];
                state.running_var[j] = (1.0 - BN_MOMENTUM) * state.running_var[j] + BN_MOMENTUM * unbiased;
            }
            (mean, var)
        }
        Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let normalized = Array2::from_shape_fn((n, w), |(i, j)| (z[[i, j]] - mean[j]) * inv_std[j]);
    let out = Array2::from_shape_fn((n, w), |(i, j)| gamma[j] * normalized[[i, j]] + beta[j]);
    Ok((out, BatchNormCache { normalized, inv_std, mode }))
}

/// Returns `(dz, dgamma, dbeta)`.
pub fn batchnorm_backward(cache: &BatchNormCache, gamma: &[f64], dout: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let (n, w) = dout.dim();
    let xh = &cache.normalized;
    let mut dgamma = vec![0.0; w];
    let mut dbeta = vec![0.0; w];
    for i in 0..n {
        for j in 0..w {
            dgamma[j] += dout[[i, j]] * xh[[i, j]];
            dbeta[j] += dout[[i, j]];
        }
    }
    let dz = match cache.mode {
        Mode::Eval => Array2::from_shape_fn((n, w), |(i, j)| dout[[i, j]] * gamma[j] * cache.inv_std[j]),
        Mode::Train => {
            let nf = n as f64;
            // dxhat = dout * gamma
            let mut sum_dxh = vec![0.0; w];
            let mut sum_dxh_xh = vec![0.0; w];
            for i in 0..n {
                for j in 0..w {
                    let d = dout[[i, j]] * gamma[j];
                    sum_dxh[j] += d;
                    sum_dxh_xh[j] += d * xh[[i, j]];
                }
            }
            Array2::from_shape_fn((n, w), |(i, j)| {
                let d = dout[[i, j]] * gamma[j];
                cache.inv_std[j] / nf * (nf * d - sum_dxh[j] - xh[[i, j]] * sum_dxh_xh[j])
            })
        }
    };
    (dz, dgamma, dbeta)
}
