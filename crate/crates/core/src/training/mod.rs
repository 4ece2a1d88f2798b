//! Network training through ideal or non-ideal analog weight storage.

pub mod analog;
pub mod conv;
pub mod dataset;
pub mod network;

use std::io::Write;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::SimRng;
pub use analog::{AdcMode, BackpropWeights, CellConfig, LayerHardware, PeripheryConfig};
pub use conv::{im2col_map, Shape3};
pub use dataset::{load_cifar10, load_idx, load_mnist, Dataset, Split};
pub use network::{softmax_cross_entropy, LayerSpec, Network, NetworkSpec, Storage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalogPath {
    #[default]
    Ideal,
    Nonideal,
}

/// Per-layer replacement of the shared hardware settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOverride {
    /// Index among the weighted layers.
    pub layer: usize,
    #[serde(default)]
    pub cells: Option<CellConfig>,
    #[serde(default)]
    pub periphery: Option<PeripheryConfig>,
    #[serde(default)]
    pub w_limit: Option<f64>,
}

/// Hardware shared by every analog layer unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub cells: CellConfig,
    #[serde(default)]
    pub periphery: PeripheryConfig,
    #[serde(default = "default_array")]
    pub array_rows: usize,
    #[serde(default = "default_array")]
    pub array_cols: usize,
    /// Weight range `[-w_limit, w_limit]`; defaults to four He-init standard deviations.
    #[serde(default)]
    pub w_limit: Option<f64>,
    #[serde(default = "default_refresh")]
    pub parasitic_refresh: usize,
    #[serde(default)]
    pub overrides: Vec<LayerOverride>,
}

fn default_array() -> usize {
    128
}
fn default_refresh() -> usize {
    1
}

impl HardwareConfig {
    pub fn new(cells: CellConfig) -> Self {
        Self {
            cells,
            periphery: PeripheryConfig::default(),
            array_rows: default_array(),
            array_cols: default_array(),
            w_limit: None,
            parasitic_refresh: default_refresh(),
            overrides: Vec::new(),
        }
    }

    /// One [`LayerHardware`] per weighted layer of shape `(fan_in, outputs)`.
    pub fn resolve(&self, dims: &[(usize, usize)]) -> Result<Vec<LayerHardware>> {
        if let Some(o) = self.overrides.iter().find(|o| o.layer >= dims.len()) {
            return Err(SimError::Config(format!(
                "override for weighted layer {} but the network has {}",
                o.layer,
                dims.len()
            )));
        }
        Ok(dims
            .iter()
            .enumerate()
            .map(|(k, &(fan_in, _))| {
                let o = self.overrides.iter().find(|o| o.layer == k);
                let auto = 4.0 * (2.0 / fan_in as f64).sqrt();
                LayerHardware {
                    cells: o.and_then(|o| o.cells.clone()).unwrap_or_else(|| self.cells.clone()),
                    periphery: o.and_then(|o| o.periphery.clone()).unwrap_or_else(|| self.periphery.clone()),
                    w_limit: o.and_then(|o| o.w_limit).or(self.w_limit).unwrap_or(auto),
                    array_rows: self.array_rows,
                    array_cols: self.array_cols,
                    parasitic_refresh: self.parasitic_refresh,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub analog_path: AnalogPath,
    /// Required when `analog_path` is non-ideal.
    #[serde(default)]
    pub hardware: Option<HardwareConfig>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub backprop: BackpropWeights,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Fill `wall_time`; off by default so metrics stay reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_validation() -> f64 {
    0.1
}
fn default_eval_batch() -> usize {
    500
}

impl TrainConfig {
    pub fn ideal(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size,
            seed,
            analog_path: AnalogPath::Ideal,
            hardware: None,
            validation_fraction: default_validation(),
            backprop: BackpropWeights::default(),
            eval_batch: default_eval_batch(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(SimError::Config("batch sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(SimError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.analog_path == AnalogPath::Nonideal && self.hardware.is_none() {
            return Err(SimError::Config("the non-ideal path needs a hardware section".into()));
        }
        Ok(())
    }

    pub fn storage(&self, spec: &NetworkSpec) -> Result<Storage> {
        Ok(match (self.analog_path, &self.hardware) {
            (AnalogPath::Ideal, _) => Storage::Ideal,
            (AnalogPath::Nonideal, Some(hw)) => Storage::Analog {
                layers: hw.resolve(&spec.weighted_dims()?)?,
                backprop: self.backprop,
                seed: self.seed,
            },
            (AnalogPath::Nonideal, None) => return Err(SimError::Config("missing hardware section".into())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,val_acc,test_acc,wall_time";

/// CSV with header [`METRICS_HEADER`]; floats use the shortest round-trip form.
pub fn write_metrics_csv<W: Write>(history: &[EpochMetrics], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in history {
        writeln!(out, "{},{},{},{},{},{}", m.epoch, m.loss, m.train_acc, m.val_acc, m.test_acc, m.wall_time)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Epoch with the highest validation accuracy (ties to the earliest).
    pub best_epoch: usize,
    pub network: Network,
}

impl TrainReport {
    pub fn best(&self) -> &EpochMetrics {
        self.history.iter().find(|m| m.epoch == self.best_epoch).expect("best epoch is in the history")
    }

    pub fn last(&self) -> &EpochMetrics {
        self.history.last().expect("history is never empty")
    }
}

/// Loss and accuracy of `net` on `data`, evaluated in batches without recalibration.
pub fn evaluate(net: &mut Network, data: &Dataset, batch: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for start in (0..data.len()).step_by(batch.max(1)) {
        let end = (start + batch).min(data.len());
        let x = data.images.slice(ndarray::s![start..end, ..]);
        let acts = net.forward(x, false)?;
        let (l, _, c) = softmax_cross_entropy(acts.logits.view(), &data.labels[start..end])?;
        loss += l * (end - start) as f64;
        correct += c;
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Train `spec` with minibatch SGD. Deterministic for a fixed seed.
///
/// Holds out `validation_fraction` of `train` for model selection. With
/// `epochs == 0` the history has a single epoch-0 row for the untrained net.
pub fn run_training(spec: &NetworkSpec, train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    spec.validate()?;
    for d in [train, test] {
        if d.shape != spec.input || d.classes != spec.classes {
            return Err(SimError::Shape(format!(
                "dataset {:?} with {} classes does not fit network input {:?} with {} classes",
                d.shape, d.classes, spec.input, spec.classes
            )));
        }
    }
    let started = Instant::now();
    let clock = |t: &Instant| if config.record_wall_time { t.elapsed().as_secs_f64() } else { 0.0 };
    let mut rng = SimRng::seed_from_u64(config.seed);
    let (train, val) = train.split_validation(config.validation_fraction, &mut rng)?;
    if train.is_empty() && config.epochs > 0 {
        return Err(SimError::Config("no training samples left after the validation split".into()));
    }
    let mut net = Network::new(spec.clone(), &config.storage(spec)?, &mut rng)?;
    let mut history = Vec::new();

    if config.epochs == 0 {
        let (loss, train_acc) = evaluate(&mut net, &train, config.eval_batch)?;
        let (_, val_acc) = evaluate(&mut net, &val, config.eval_batch)?;
        let (_, test_acc) = evaluate(&mut net, test, config.eval_batch)?;
        history.push(EpochMetrics { epoch: 0, loss, train_acc, val_acc, test_acc, wall_time: clock(&started) });
        return Ok(TrainReport { history, best_epoch: 0, network: net });
    }

    let recal = config
        .hardware
        .as_ref()
        .map_or(usize::MAX, |h| h.periphery.recalibrate_every.max(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train.images.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let acts = net.forward(x.view(), step % recal == 0)?;
            let (loss, dlogits, c) = softmax_cross_entropy(acts.logits.view(), &y)?;
            if !loss.is_finite() {
                return Err(SimError::Divergence(format!(
                    "loss became {loss} at epoch {epoch}, batch {b}; lower the learning rate"
                )));
            }
            let grads = net.backward(&acts, dlogits.view())?;
            net.apply_gradients(&grads, config.learning_rate)?;
            loss_sum += loss * chunk.len() as f64;
            correct += c;
            step += 1;
        }
        let (_, val_acc) = evaluate(&mut net, &val, config.eval_batch)?;
        let (_, test_acc) = evaluate(&mut net, test, config.eval_batch)?;
        history.push(EpochMetrics {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
            test_acc,
            wall_time: clock(&started),
        });
    }
    let best_epoch = history
        .iter()
        .fold(None::<&EpochMetrics>, |best, m| match best {
            Some(b) if !(m.val_acc > b.val_acc) => Some(b),
            _ => Some(m),
        })
        .map_or(1, |m| m.epoch);
    Ok(TrainReport { history, best_epoch, network: net })
}
