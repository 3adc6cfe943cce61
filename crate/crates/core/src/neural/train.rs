//! Mini-batch training loop shared by the networks, with the learning-rate
//! schedule, early stopping and the per-epoch log.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::learners::{argmax, cross_entropy};
use crate::rng::{Rng, Seed};

/// Multiplies the base rate by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLr {
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    /// Rate for the 0-based `epoch`.
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        base * self.gamma.powi((epoch / self.step_size.max(1)) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Tracks the best monitored loss; signals a stop after `patience`
/// consecutive epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Wait
            }
        }
    }
}

/// Which loss drives early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum Monitor {
    /// Cross-entropy on the evaluation set passed to the trainer (training
    /// loss when none is passed).
    TestLoss,
    /// Cross-entropy on a stratified split held out from the training data.
    Validation { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept by early stopping.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Seconds; excluded from equality and serialisation so logs of equal
    /// runs compare equal.
    #[serde(skip)]
    pub wall_time: f64,
}

impl TrainLog {
    /// `epoch,train_loss,train_acc,test_acc`; an empty cell when there is no
    /// evaluation set.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,test_acc\n");
        for e in &self.epochs {
            let _ = write!(s, "{},{},{},", e.epoch, e.train_loss, e.train_acc);
            if let Some(a) = e.test_acc {
                let _ = write!(s, "{a}");
            }
            s.push('\n');
        }
        s
    }

}

impl PartialEq for TrainLog {
    fn eq(&self, other: &TrainLog) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch && self.stopped_early == other.stopped_early
    }
}

/// A network trained by [`run`]. Inputs are already standardised.
pub(crate) trait Network: Clone {
    fn params_mut(&mut self) -> &mut [f64];
    /// Smallest batch a train-mode step accepts.
    fn min_batch(&self) -> usize;
    /// Train-mode forward and backward on one batch; commits running
    /// statistics. Returns the penalised loss and its gradient.
    fn train_step(&mut self, x: &Array2<f64>, y: &[usize], rng: &mut Rng) -> Result<(f64, Vec<f64>)>;
    /// Eval-mode class probabilities.
    fn infer(&self, x: &Array2<f64>) -> Array2<f64>;
}

#[derive(Debug, Clone)]
pub(crate) struct LoopOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: Option<StepLr>,
    pub patience: Option<usize>,
}

fn accuracy(proba: &Array2<f64>, y: &[usize]) -> f64 {
    let hits = proba
        .axis_iter(Axis(0))
        .zip(y)
        .filter(|(r, &c)| argmax(r) == c)
        .count();
    hits as f64 / y.len() as f64
}

/// Batch boundaries over `n` rows. The last partial batch is kept; when it
/// is smaller than `min_batch` it is folded into the previous one.
pub(crate) fn batch_bounds(n: usize, batch: usize, min_batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch.max(1)).map(|s| (s, (s + batch).min(n))).collect();
    if out.len() > 1 {
        let (s, e) = *out.last().expect("non-empty");
        if e - s < min_batch {
            out.pop();
            out.last_mut().expect("non-empty").1 = e;
        }
    }
    out
}

/// Shuffled mini-batch Adam. `monitor` is the early-stopping set (falls back
/// to the training data); `eval` feeds the test columns of the log.
/// On divergence the error is returned together with the log so far.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run<N: Network>(
    net: &mut N,
    x: &Array2<f64>,
    y: &[usize],
    eval: Option<(&Array2<f64>, &[usize])>,
    monitor: Option<(&Array2<f64>, &[usize])>,
    opts: &LoopOptions,
    seed: Seed,
) -> (Result<()>, TrainLog) {
    let start = Instant::now();
    let mut log = TrainLog::default();
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed.derive("shuffle").rng();
    let mut dropout_rng = seed.derive("dropout").rng();
    let n_params = net.params_mut().len();
    let mut adam = AdamState::new(n_params);
    let mut stopper = opts.patience.map(EarlyStopping::new);
    let mut best: Option<N> = None;
    let monitor = monitor.or(eval).unwrap_or((x, y));
    let result = (|| -> Result<()> {
        for epoch in 0..opts.epochs {
            let lr = opts.schedule.map_or(opts.learning_rate, |s| s.rate(opts.learning_rate, epoch));
            order.shuffle(&mut shuffle_rng);
            for (s, e) in batch_bounds(n, opts.batch_size, net.min_batch()) {
                let rows = &order[s..e];
                let xb = x.select(Axis(0), rows);
                let yb: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
                let (loss, grad) = net.train_step(&xb, &yb, &mut dropout_rng)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch: epoch + 1,
                        message: "non-finite training loss".into(),
                    });
                }
                adam.step(net.params_mut(), &grad, lr).map_err(|g| Error::Divergence {
                    epoch: epoch + 1,
                    message: format!("non-finite gradient at parameter {}", g.index),
                })?;
            }
            let p_train = net.infer(x);
            let (test_loss, test_acc) = match eval {
                Some((xe, ye)) => {
                    let p = net.infer(xe);
                    (Some(cross_entropy(&p, ye)), Some(accuracy(&p, ye)))
                }
                None => (None, None),
            };
            log.epochs.push(EpochRecord {
                epoch: epoch + 1,
                learning_rate: lr,
                train_loss: cross_entropy(&p_train, y),
                train_acc: accuracy(&p_train, y),
                test_loss,
                test_acc,
            });
            if let Some(stopper) = stopper.as_mut() {
                let monitored = cross_entropy(&net.infer(monitor.0), monitor.1);
                match stopper.observe(epoch + 1, monitored) {
                    StopDecision::Improved => best = Some(net.clone()),
                    StopDecision::Wait => {}
                    StopDecision::Stop => {
                        log.stopped_early = true;
                        break;
                    }
                }
            }
        }
        Ok(())
    })();
    if result.is_ok() {
        if let (Some(stopper), Some(b)) = (stopper, best) {
            *net = b;
            log.best_epoch = Some(stopper.best_epoch);
        }
    }
    log.wall_time = start.elapsed().as_secs_f64();
    (result, log)
}
