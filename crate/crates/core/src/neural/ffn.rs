//! Feedforward classifier: dense ReLU layers with inverted dropout and a
//! softmax output.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::layers::{affine, affine_backward, dropout_mask, init_params, relu, Layout, Mode};
use super::train::{run, LoopOptions, Network, TrainLog};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{cross_entropy, softmax_rows, Standardizer};
use crate::rng::{Rng, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FfnConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub standardize: bool,
}

impl Default for FfnConfig {
    fn default() -> Self {
        FfnConfig {
            hidden: vec![128, 192],
            dropout: 0.1033,
            l2: 4.918e-3,
            learning_rate: 3.885e-4,
            batch_size: 256,
            epochs: 200,
            standardize: true,
        }
    }
}

impl FfnConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(Error::invalid("layer widths and batch size must be positive"));
        }
        if !(self.l2 >= 0.0 && self.learning_rate >= 0.0) {
            return Err(Error::invalid("l2 and learning rate must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnModel {
    /// Layer widths from input to output.
    pub dims: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub layout: Layout,
    #[serde(with = "crate::codec::vec")]
    pub params: Vec<f64>,
    pub standardizer: Option<Standardizer>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FfnCache {
    /// Input of every layer (post-dropout for hidden layers).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pub pre: Vec<Array2<f64>>,
    pub masks: Vec<Option<Array2<f64>>>,
    pub proba: Array2<f64>,
}

impl FfnModel {
    /// Zero parameters; `init` draws weights.
    pub fn new(dims: Vec<usize>, dropout: f64, l2: f64) -> Self {
        let mut layout = Layout::default();
        for l in 0..dims.len() - 1 {
            layout.push(format!("w{l}"), vec![dims[l + 1], dims[l]], true);
            layout.push(format!("b{l}"), vec![dims[l + 1]], false);
        }
        let params = vec![0.0; layout.size()];
        FfnModel {
            dims,
            dropout,
            l2,
            layout,
            params,
            standardizer: None,
        }
    }

    pub fn init(&mut self, seed: Seed) {
        self.params = init_params(&self.layout, &|_| 0.0, &mut seed.rng());
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_features(&self) -> usize {
        self.dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().expect("at least two widths")
    }

    /// Network forward on already standardised input. Train mode with
    /// positive dropout needs `rng`.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode, mut rng: Option<&mut Rng>) -> Result<FfnCache> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::new();
        let mut masks = Vec::new();
        let last = self.n_layers() - 1;
        for l in 0..last {
            let z = affine(&inputs[l], self.layout.view2(&self.params, 2 * l), self.layout.slice(&self.params, 2 * l + 1));
            let mut a = relu(&z);
            let mask = if mode == Mode::Train && self.dropout > 0.0 {
                let r = rng.as_deref_mut().ok_or_else(|| Error::invalid("train-mode dropout needs a random stream"))?;
                let m = dropout_mask(a.dim(), self.dropout, r);
                a *= &m;
                Some(m)
            } else {
                None
            };
            pre.push(z);
            masks.push(mask);
            inputs.push(a);
        }
        let mut proba = affine(&inputs[last], self.layout.view2(&self.params, 2 * last), self.layout.slice(&self.params, 2 * last + 1));
        softmax_rows(&mut proba);
        Ok(FfnCache { inputs, pre, masks, proba })
    }

    /// Mean cross-entropy plus `l2 * sum W^2`.
    pub fn loss(&self, cache: &FfnCache, y: &[usize]) -> f64 {
        cross_entropy(&cache.proba, y) + self.l2 * self.layout.l2_norm_sq(&self.params)
    }

    /// Gradient of [`FfnModel::loss`] in layout order.
    pub fn backward(&self, cache: &FfnCache, y: &[usize]) -> Vec<f64> {
        let b = y.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut dz = cache.proba.clone();
        for (i, &c) in y.iter().enumerate() {
            dz[[i, c]] -= 1.0;
        }
        dz /= b;
        for l in (0..self.n_layers()).rev() {
            let w = self.layout.view2(&self.params, 2 * l);
            let (dw, db, da) = affine_backward(&cache.inputs[l], w, &dz);
            grad[self.layout.block(2 * l).range()].copy_from_slice(dw.as_slice().expect("standard layout"));
            grad[self.layout.block(2 * l + 1).range()].copy_from_slice(db.as_slice().expect("standard layout"));
            if l > 0 {
                let z = &cache.pre[l - 1];
                let mut d = da;
                d.zip_mut_with(z, |g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0
                    }
                });
                if let Some(m) = &cache.masks[l - 1] {
                    d *= m;
                }
                dz = d;
            }
        }
        self.layout.add_l2_grad(&self.params, &mut grad, self.l2);
        grad
    }

    fn prepare(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.standardizer {
            Some(s) => s.transform(x),
            None => x.clone(),
        }
    }

    /// Eval-mode probabilities for raw (unstandardised) rows.
    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(&self.prepare(x), Mode::Eval, None).expect("dimension checked by caller").proba
    }

    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let m = x.to_owned().insert_axis(ndarray::Axis(0));
        self.predict_proba_matrix(&m).row(0).to_vec()
    }
}

impl Network for FfnModel {
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn min_batch(&self) -> usize {
        1
    }

    fn train_step(&mut self, x: &Array2<f64>, y: &[usize], rng: &mut Rng) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(x, Mode::Train, Some(rng))?;
        Ok((self.loss(&cache, y), self.backward(&cache, y)))
    }

    fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x, Mode::Eval, None).expect("training dimensions").proba
    }
}

/// Standardised inputs for training / evaluation plus the fitted scaler.
pub(crate) fn standardize(
    train: &Dataset,
    test: Option<&Dataset>,
    enabled: bool,
) -> (Array2<f64>, Option<Array2<f64>>, Option<Standardizer>) {
    if enabled {
        let s = Standardizer::fit(train.features());
        let xt = s.transform(train.features());
        let xe = test.map(|t| s.transform(t.features()));
        (xt, xe, Some(s))
    } else {
        (train.features().clone(), test.map(|t| t.features().clone()), None)
    }
}

/// Trains and returns the model with its log; a divergence error comes back
/// alongside the epochs completed before it.
pub fn train_ffn_logged(train: &Dataset, test: Option<&Dataset>, config: &FfnConfig, seed: Seed) -> (Result<FfnModel>, TrainLog) {
    if let Err(e) = config.validate() {
        return (Err(e), TrainLog::default());
    }
    if let Some(t) = test {
        if t.d() != train.d() {
            return (
                Err(Error::DimensionMismatch {
                    expected: train.d(),
                    got: t.d(),
                }),
                TrainLog::default(),
            );
        }
    }
    let seed = seed.derive("ffn");
    let mut dims = vec![train.d()];
    dims.extend(&config.hidden);
    dims.push(train.n_classes());
    let mut model = FfnModel::new(dims, config.dropout, config.l2);
    model.init(seed.derive("init"));
    let (x, xe, scaler) = standardize(train, test, config.standardize);
    let eval = xe.as_ref().zip(test).map(|(xe, t)| (xe, t.labels()));
    let opts = LoopOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        schedule: None,
        patience: None,
    };
    let (result, log) = run(&mut model, &x, train.labels(), eval, None, &opts, seed.derive("train"));
    model.standardizer = scaler;
    (result.map(|_| model), log)
}

pub fn train_ffn(train: &Dataset, test: Option<&Dataset>, config: &FfnConfig, seed: Seed) -> Result<(FfnModel, TrainLog)> {
    let (model, log) = train_ffn_logged(train, test, config, seed);
    Ok((model?, log))
}
