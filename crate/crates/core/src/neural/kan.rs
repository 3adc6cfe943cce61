//! KAN-style classifier. Each input coordinate passes through its own stack
//! of three ReLU layers (1 -> u -> u -> u); the `d * u` concatenation feeds
//! dense layers with batch normalisation, ReLU and dropout.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::ffn::standardize;
use super::layers::{
    affine, affine_backward, batchnorm_backward, batchnorm_forward, dropout_mask, init_params, relu, BatchNormCache,
    BatchNormState, Layout, Mode,
};
use super::train::{run, LoopOptions, Monitor, Network, StepLr, TrainLog};
use crate::dataset::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::learners::{cross_entropy, softmax_rows};
use crate::rng::{Rng, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KanConfig {
    pub univariate_width: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: StepLr,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub monitor: Monitor,
    pub standardize: bool,
}

impl Default for KanConfig {
    fn default() -> Self {
        KanConfig {
            univariate_width: 8,
            hidden: vec![128, 64, 32, 16],
            dropout: 0.1,
            l2: 1e-4,
            learning_rate: 0.01,
            batch_size: 256,
            epochs: 200,
            schedule: StepLr { step_size: 25, gamma: 0.5 },
            patience: Some(15),
            monitor: Monitor::TestLoss,
            standardize: true,
        }
    }
}

impl KanConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.univariate_width == 0 || self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(Error::invalid("layer widths and batch size must be positive"));
        }
        if self.schedule.step_size == 0 {
            return Err(Error::invalid("schedule step_size must be positive"));
        }
        if let Monitor::Validation { fraction } = self.monitor {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::invalid(format!("validation fraction {fraction} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanModel {
    pub n_features: usize,
    pub width: usize,
    /// Dense widths after the concatenation, output last.
    pub dense: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub layout: Layout,
    #[serde(with = "crate::codec::vec")]
    pub params: Vec<f64>,
    pub batchnorm: Vec<BatchNormState>,
    pub standardizer: Option<crate::learners::Standardizer>,
}

/// Pre-activations of the univariate stacks, flattened `[row][input][unit]`.
#[derive(Debug, Clone)]
pub struct UnivariateCache {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    /// `rows x (d * u)`; input `j` owns columns `j*u .. (j+1)*u`.
    pub out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct KanCache {
    pub univariate: UnivariateCache,
    /// Input to every dense layer, the first being `univariate.out`.
    pub inputs: Vec<Array2<f64>>,
    /// Batch-norm outputs (pre-ReLU) of the hidden layers.
    pub normalized: Vec<Array2<f64>>,
    pub bn: Vec<BatchNormCache>,
    pub masks: Vec<Option<Array2<f64>>>,
    pub proba: Array2<f64>,
    /// Running statistics after this pass (changed only in train mode).
    pub bn_states: Vec<BatchNormState>,
}

const U1W: usize = 0;
const U1B: usize = 1;
const U2W: usize = 2;
const U2B: usize = 3;
const U3W: usize = 4;
const U3B: usize = 5;

impl KanModel {
    pub fn new(n_features: usize, width: usize, hidden: &[usize], n_classes: usize, dropout: f64, l2: f64) -> Self {
        let (d, u) = (n_features, width);
        let mut layout = Layout::default();
        layout.push("uni1_w", vec![d, u, 1], true);
        layout.push("uni1_b", vec![d, u], false);
        layout.push("uni2_w", vec![d, u, u], true);
        layout.push("uni2_b", vec![d, u], false);
        layout.push("uni3_w", vec![d, u, u], true);
        layout.push("uni3_b", vec![d, u], false);
        let mut fan_in = d * u;
        for (l, &h) in hidden.iter().enumerate() {
            layout.push(format!("dense{l}_w"), vec![h, fan_in], true);
            layout.push(format!("dense{l}_b"), vec![h], false);
            layout.push(format!("gamma{l}"), vec![h], false);
            layout.push(format!("beta{l}"), vec![h], false);
            fan_in = h;
        }
        layout.push("out_w", vec![n_classes, fan_in], true);
        layout.push("out_b", vec![n_classes], false);
        let mut dense = hidden.to_vec();
        dense.push(n_classes);
        KanModel {
            n_features,
            width,
            dense,
            dropout,
            l2,
            params: vec![0.0; layout.size()],
            layout,
            batchnorm: hidden.iter().map(|&h| BatchNormState::new(h)).collect(),
            standardizer: None,
        }
    }

    /// He-uniform weights, zero biases, unit batch-norm scales.
    pub fn init(&mut self, seed: Seed) {
        let fill = |b: &super::layers::Block| if b.name.starts_with("gamma") { 1.0 } else { 0.0 };
        self.params = init_params(&self.layout, &fill, &mut seed.rng());
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        *self.dense.last().expect("output layer")
    }

    fn n_hidden(&self) -> usize {
        self.dense.len() - 1
    }

    fn dense_block(&self, l: usize) -> usize {
        6 + 4 * l
    }

    /// The per-coordinate stacks. Column block `j` of the output depends on
    /// `x[:, j]` alone.
    pub fn univariate_forward(&self, x: &Array2<f64>) -> Result<UnivariateCache> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let (n, d, u) = (x.nrows(), self.n_features, self.width);
        let p = &self.params;
        let lay = &self.layout;
        let (w1, b1) = (lay.slice(p, U1W), lay.slice(p, U1B));
        let (w2, b2) = (lay.slice(p, U2W), lay.slice(p, U2B));
        let (w3, b3) = (lay.slice(p, U3W), lay.slice(p, U3B));
        let mut z1 = vec![0.0; n * d * u];
        let mut z2 = vec![0.0; n * d * u];
        let mut z3 = vec![0.0; n * d * u];
        let mut out = Array2::zeros((n, d * u));
        let mut h1 = vec![0.0; u];
        let mut h2 = vec![0.0; u];
        for r in 0..n {
            for j in 0..d {
                let base = (r * d + j) * u;
                let xv = x[[r, j]];
                for k in 0..u {
                    let z = w1[j * u + k] * xv + b1[j * u + k];
                    z1[base + k] = z;
                    h1[k] = z.max(0.0);
                }
                for o in 0..u {
                    let row = &w2[(j * u + o) * u..(j * u + o + 1) * u];
                    let z = row.iter().zip(&h1).map(|(a, b)| a * b).sum::<f64>() + b2[j * u + o];
                    z2[base + o] = z;
                }
                for o in 0..u {
                    h2[o] = z2[base + o].max(0.0);
                }
                for o in 0..u {
                    let row = &w3[(j * u + o) * u..(j * u + o + 1) * u];
                    let z = row.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>() + b3[j * u + o];
                    z3[base + o] = z;
                    out[[r, j * u + o]] = z.max(0.0);
                }
            }
        }
        Ok(UnivariateCache { z1, z2, z3, out })
    }

    /// Network forward on standardised input. Train mode uses batch
    /// statistics and needs `rng` when dropout is positive.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode, mut rng: Option<&mut Rng>) -> Result<KanCache> {
        let univariate = self.univariate_forward(x)?;
        let mut inputs = vec![univariate.out.clone()];
        let mut normalized = Vec::new();
        let mut bn = Vec::new();
        let mut masks = Vec::new();
        let mut bn_states = self.batchnorm.clone();
        let p = &self.params;
        for l in 0..self.n_hidden() {
            let id = self.dense_block(l);
            let z = affine(&inputs[l], self.layout.view2(p, id), self.layout.slice(p, id + 1));
            let (y, cache) =
                batchnorm_forward(&mut bn_states[l], self.layout.slice(p, id + 2), self.layout.slice(p, id + 3), &z, mode)?;
            let mut a = relu(&y);
            let mask = if mode == Mode::Train && self.dropout > 0.0 {
                let r = rng.as_deref_mut().ok_or_else(|| Error::invalid("train-mode dropout needs a random stream"))?;
                let m = dropout_mask(a.dim(), self.dropout, r);
                a *= &m;
                Some(m)
            } else {
                None
            };
            normalized.push(y);
            bn.push(cache);
            masks.push(mask);
            inputs.push(a);
        }
        let id = self.dense_block(self.n_hidden());
        let mut proba = affine(inputs.last().expect("input"), self.layout.view2(p, id), self.layout.slice(p, id + 1));
        softmax_rows(&mut proba);
        Ok(KanCache {
            univariate,
            inputs,
            normalized,
            bn,
            masks,
            proba,
            bn_states,
        })
    }

    pub fn loss(&self, cache: &KanCache, y: &[usize]) -> f64 {
        cross_entropy(&cache.proba, y) + self.l2 * self.layout.l2_norm_sq(&self.params)
    }

    pub fn backward(&self, x: &Array2<f64>, cache: &KanCache, y: &[usize]) -> Vec<f64> {
        let p = &self.params;
        let lay = &self.layout;
        let mut grad = vec![0.0; p.len()];
        let mut dz = cache.proba.clone();
        for (i, &c) in y.iter().enumerate() {
            dz[[i, c]] -= 1.0;
        }
        dz /= y.len() as f64;
        let id = self.dense_block(self.n_hidden());
        let (dw, db, mut da) = affine_backward(cache.inputs.last().expect("input"), lay.view2(p, id), &dz);
        grad[lay.block(id).range()].copy_from_slice(dw.as_slice().expect("standard layout"));
        grad[lay.block(id + 1).range()].copy_from_slice(db.as_slice().expect("standard layout"));
        for l in (0..self.n_hidden()).rev() {
            let id = self.dense_block(l);
            let mut d = da;
            d.zip_mut_with(&cache.normalized[l], |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            });
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
            let (dzl, dgamma, dbeta) = batchnorm_backward(&cache.bn[l], lay.slice(p, id + 2), &d);
            let (dw, db, dprev) = affine_backward(&cache.inputs[l], lay.view2(p, id), &dzl);
            grad[lay.block(id).range()].copy_from_slice(dw.as_slice().expect("standard layout"));
            grad[lay.block(id + 1).range()].copy_from_slice(db.as_slice().expect("standard layout"));
            grad[lay.block(id + 2).range()].copy_from_slice(&dgamma);
            grad[lay.block(id + 3).range()].copy_from_slice(&dbeta);
            da = dprev;
        }
        self.univariate_backward(x, &cache.univariate, &da, &mut grad);
        lay.add_l2_grad(p, &mut grad, self.l2);
        grad
    }

    fn univariate_backward(&self, x: &Array2<f64>, uc: &UnivariateCache, dout: &Array2<f64>, grad: &mut [f64]) {
        let (n, d, u) = (x.nrows(), self.n_features, self.width);
        let p = &self.params;
        let lay = &self.layout;
        let (w2, w3) = (lay.slice(p, U2W), lay.slice(p, U3W));
        let (o1w, o1b) = (lay.block(U1W).offset, lay.block(U1B).offset);
        let (o2w, o2b) = (lay.block(U2W).offset, lay.block(U2B).offset);
        let (o3w, o3b) = (lay.block(U3W).offset, lay.block(U3B).offset);
        let mut dz3 = vec![0.0; u];
        let mut dz2 = vec![0.0; u];
        let mut dz1 = vec![0.0; u];
        for r in 0..n {
            for j in 0..d {
                let base = (r * d + j) * u;
                for o in 0..u {
                    dz3[o] = if uc.z3[base + o] > 0.0 { dout[[r, j * u + o]] } else { 0.0 };
                }
                dz2.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..u {
                    if dz3[o] == 0.0 {
                        continue;
                    }
                    grad[o3b + j * u + o] += dz3[o];
                    let wrow = (j * u + o) * u;
                    for i in 0..u {
                        grad[o3w + wrow + i] += dz3[o] * uc.z2[base + i].max(0.0);
                        dz2[i] += w3[wrow + i] * dz3[o];
                    }
                }
                for i in 0..u {
                    if uc.z2[base + i] <= 0.0 {
                        dz2[i] = 0.0;
                    }
                }
                dz1.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..u {
                    if dz2[o] == 0.0 {
                        continue;
                    }
                    grad[o2b + j * u + o] += dz2[o];
                    let wrow = (j * u + o) * u;
                    for i in 0..u {
                        grad[o2w + wrow + i] += dz2[o] * uc.z1[base + i].max(0.0);
                        dz1[i] += w2[wrow + i] * dz2[o];
                    }
                }
                let xv = x[[r, j]];
                for k in 0..u {
                    if uc.z1[base + k] > 0.0 {
                        grad[o1w + j * u + k] += dz1[k] * xv;
                        grad[o1b + j * u + k] += dz1[k];
                    }
                }
            }
        }
    }

    fn prepare(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.standardizer {
            Some(s) => s.transform(x),
            None => x.clone(),
        }
    }

    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(&self.prepare(x), Mode::Eval, None).expect("dimension checked by caller").proba
    }

    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let m = x.to_owned().insert_axis(Axis(0));
        self.predict_proba_matrix(&m).row(0).to_vec()
    }
}

impl Network for KanModel {
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn min_batch(&self) -> usize {
        2
    }

    fn train_step(&mut self, x: &Array2<f64>, y: &[usize], rng: &mut Rng) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(x, Mode::Train, Some(rng))?;
        let out = (self.loss(&cache, y), self.backward(x, &cache, y));
        self.batchnorm = cache.bn_states;
        Ok(out)
    }

    fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x, Mode::Eval, None).expect("training dimensions").proba
    }
}

pub fn train_kan_logged(train: &Dataset, test: Option<&Dataset>, config: &KanConfig, seed: Seed) -> (Result<KanModel>, TrainLog) {
    let fail = |e| (Err(e), TrainLog::default());
    if let Err(e) = config.validate() {
        return fail(e);
    }
    if let Some(t) = test {
        if t.d() != train.d() {
            return fail(Error::DimensionMismatch {
                expected: train.d(),
                got: t.d(),
            });
        }
    }
    let seed = seed.derive("kan");
    let (fit_part, held_out) = match config.monitor {
        Monitor::Validation { fraction } => match stratified_split(train, fraction, seed.derive("validation")) {
            Ok((a, b)) => (a, Some(b)),
            Err(e) => return fail(e),
        },
        Monitor::TestLoss => (train.clone(), None),
    };
    if fit_part.n() < 2 {
        return fail(Error::invalid("batch-normalised training needs at least 2 rows"));
    }
    let mut model = KanModel::new(
        train.d(),
        config.univariate_width,
        &config.hidden,
        train.n_classes(),
        config.dropout,
        config.l2,
    );
    model.init(seed.derive("init"));
    let (x, xe, scaler) = standardize(&fit_part, test, config.standardize);
    let xv = held_out.as_ref().map(|v| match &scaler {
        Some(s) => s.transform(v.features()),
        None => v.features().clone(),
    });
    let eval = xe.as_ref().zip(test).map(|(xe, t)| (xe, t.labels()));
    let monitor = xv.as_ref().zip(held_out.as_ref()).map(|(xv, v)| (xv, v.labels()));
    let opts = LoopOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        schedule: Some(config.schedule),
        patience: config.patience,
    };
    let (result, log) = run(&mut model, &x, fit_part.labels(), eval, monitor, &opts, seed.derive("train"));
    model.standardizer = scaler;
    (result.map(|_| model), log)
}

pub fn train_kan(train: &Dataset, test: Option<&Dataset>, config: &KanConfig, seed: Seed) -> Result<(KanModel, TrainLog)> {
    let (model, log) = train_kan_logged(train, test, config, seed);
    Ok((model?, log))
}
