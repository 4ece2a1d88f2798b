//! TOML experiment configuration.
//!
//! `[device]` and `[meminductor]` accept `preset = "<name>"`; any other keys in
//! those sections override the preset's fields. Unknown keys anywhere are
//! reported together as one config error.

use std::path::{Path, PathBuf};

use memsim::costmodel::{PlanConfig, TechConfig};
use memsim::crossbar::CrossbarConfig;
use memsim::devices::DeviceParams;
use memsim::meminductor::vmm::MeminductorArrayConfig;
use memsim::meminductor::MeminductorParams;
use memsim::training::analog::{BackpropWeights, PeripheryConfig};
use memsim::training::{AnalogPath, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::report::ReportFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    VmmBench,
    Hysteresis,
    Sweep,
    Amoeba,
    Cost,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::VmmBench => "vmm-bench",
            ExperimentKind::Hysteresis => "hysteresis",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Amoeba => "amoeba",
            ExperimentKind::Cost => "cost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkChoice {
    #[default]
    MnistCnn,
    MnistMlp,
    Vgg8,
}

impl NetworkChoice {
    pub fn spec(self, hidden: usize) -> NetworkSpec {
        match self {
            NetworkChoice::MnistCnn => NetworkSpec::mnist_cnn(),
            NetworkChoice::MnistMlp => NetworkSpec::mnist_mlp(hidden),
            NetworkChoice::Vgg8 => NetworkSpec::vgg8(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetChoice {
    #[default]
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    #[default]
    Device,
    Meminductor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub network: NetworkChoice,
    /// Hidden width of `mnist-mlp`.
    pub hidden: usize,
    pub dataset: DatasetChoice,
    /// Defaults to `MNIST_DIR` or `data/mnist` (`CIFAR10_DIR` or `data/cifar10`).
    pub data_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub path: AnalogPath,
    pub cells: CellKind,
    pub backprop: BackpropWeights,
    pub validation_fraction: f64,
    pub eval_batch: usize,
    /// Adds measured seconds to the metrics; makes the CSV non-reproducible.
    pub record_wall_time: bool,
    pub array_rows: usize,
    pub array_cols: usize,
    pub w_limit: Option<f64>,
    pub parasitic_refresh: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            network: NetworkChoice::default(),
            hidden: 32,
            dataset: DatasetChoice::default(),
            data_dir: None,
            train_limit: None,
            test_limit: None,
            learning_rate: 0.05,
            epochs: 1,
            batch_size: 32,
            path: AnalogPath::default(),
            cells: CellKind::default(),
            backprop: BackpropWeights::default(),
            validation_fraction: 0.1,
            eval_batch: 500,
            record_wall_time: false,
            array_rows: 128,
            array_cols: 128,
            w_limit: None,
            parasitic_refresh: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VmmSection {
    pub rows: usize,
    pub cols: usize,
    /// One benchmark point per wire resistance (ohms per segment).
    pub r_line: Vec<f64>,
    pub trials: usize,
    /// Weights are drawn uniformly from `[-w_range, w_range]`.
    pub w_range: f64,
}

impl Default for VmmSection {
    fn default() -> Self {
        Self { rows: 64, cols: 64, r_line: vec![0.0, 0.5, 1.0, 2.0, 5.0], trials: 8, w_range: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HysteresisSection {
    pub v_m: f64,
    pub f: f64,
    pub cycles: usize,
    pub steps_per_cycle: usize,
    /// Write the full time series as `trace`.
    pub trace: bool,
}

impl Default for HysteresisSection {
    fn default() -> Self {
        Self { v_m: 0.5, f: 3.0e6, cycles: 8, steps_per_cycle: 2000, trace: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    /// Drive frequency, Hz.
    #[default]
    Frequency,
    /// Drive amplitude, V.
    Amplitude,
}

/// Hysteresis runs at each value of one drive parameter; the other comes from `[hysteresis]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { parameter: SweepParameter::Frequency, values: vec![1.5e6, 2.25e6, 3.0e6, 4.5e6, 6.0e6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmoebaSection {
    pub r: f64,
    pub c: f64,
    pub baseline: f64,
    pub depth: f64,
    pub period: f64,
    pub width: f64,
    pub count: usize,
    pub dt: f64,
    /// Hold the inductance at its baseline (plain RLC).
    pub frozen: bool,
    /// Largest lag searched by the cross-correlation, in samples.
    pub max_lag: usize,
}

impl Default for AmoebaSection {
    fn default() -> Self {
        Self {
            r: 1.0e3,
            c: 10.0e-12,
            baseline: 1.0,
            depth: 0.5,
            period: 2.0e-6,
            width: 0.4e-6,
            count: 4,
            dt: 1.0e-10,
            frozen: false,
            max_lag: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    #[default]
    Inference,
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSection {
    pub network: NetworkChoice,
    pub hidden: usize,
    pub mode: CostMode,
    pub samples: u64,
    pub input_bits: u32,
    pub adc_bits: u32,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { network: NetworkChoice::Vgg8, hidden: 32, mode: CostMode::Inference, samples: 1, input_bits: 8, adc_bits: 5 }
    }
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub format: Vec<ReportFormat>,
    /// Worker cap for sweeps; `--threads` and `MEMSIM_THREADS` take precedence.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub device: Option<DeviceParams>,
    #[serde(default)]
    pub crossbar: CrossbarConfig,
    #[serde(default)]
    pub periphery: PeripheryConfig,
    #[serde(default)]
    pub meminductor: Option<MeminductorParams>,
    #[serde(default)]
    pub meminductor_array: MeminductorArrayConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub vmm: VmmSection,
    #[serde(default)]
    pub hysteresis: HysteresisSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub amoeba: AmoebaSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub tech: TechConfig,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn preset_table<T: Serialize>(value: Option<T>, section: &str, name: &str) -> CliResult<toml::Table> {
    let value = value.ok_or_else(|| CliError::Config(format!("unknown {section} preset `{name}`")))?;
    toml::Table::try_from(value).map_err(config_err)
}

/// Replace `preset = "..."` in `section` by the preset's fields, keeping explicit overrides.
fn expand_preset<T: Serialize>(
    root: &mut toml::Table,
    section: &str,
    default: Option<&str>,
    lookup: impl Fn(&str) -> Option<T>,
) -> CliResult<()> {
    let user = match root.remove(section) {
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => return Err(CliError::Config(format!("`{section}` must be a table"))),
        None => None,
    };
    let name = match user.as_ref().and_then(|t| t.get("preset")) {
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(CliError::Config(format!("`{section}.preset` must be a string"))),
        None if user.is_none() => default.map(str::to_string),
        None => None,
    };
    let mut merged = match &name {
        Some(n) => preset_table(lookup(n), section, n)?,
        None => toml::Table::new(),
    };
    if let Some(user) = user {
        for (k, v) in user {
            if k != "preset" {
                merged.insert(k, v);
            }
        }
    }
    if !merged.is_empty() {
        root.insert(section.to_string(), toml::Value::Table(merged));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse, expand presets and reject unknown keys.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut root: toml::Table = text.parse().map_err(config_err)?;
        let kind = root.get("experiment").and_then(|v| v.as_str()).unwrap_or_default();
        let mem_default = match kind {
            "amoeba" => "amoeba",
            "train" => "zedboard",
            _ => "tiox-meminductor",
        };
        expand_preset(&mut root, "device", Some("tiox-memristor"), DeviceParams::preset)?;
        expand_preset(&mut root, "meminductor", Some(mem_default), MeminductorParams::preset)?;
        let mut unknown = Vec::new();
        let cfg: Self = serde_ignored::deserialize(toml::Value::Table(root), |p| unknown.push(p.to_string()))
            .map_err(config_err)?;
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let sim = |r: memsim::Result<()>| r.map_err(config_err);
        if self.format.is_empty() {
            return Err(CliError::Config("`format` lists no output formats".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("`threads` must be at least 1".into()));
        }
        if let Some(d) = &self.device {
            sim(d.validate())?;
        }
        if let Some(m) = &self.meminductor {
            sim(m.validate())?;
        }
        sim(self.crossbar.validate())?;
        match self.experiment {
            ExperimentKind::Train => {
                sim(self.periphery.validate())?;
                sim(self.meminductor_array.validate())?;
                let t = &self.train;
                if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
                    return Err(CliError::Config("`train.learning_rate` must be positive".into()));
                }
                if t.batch_size == 0 || t.eval_batch == 0 || t.parasitic_refresh == 0 {
                    return Err(CliError::Config(
                        "`train.batch_size`, `train.eval_batch` and `train.parasitic_refresh` must be at least 1".into(),
                    ));
                }
                let expected = match t.dataset {
                    DatasetChoice::Mnist => (28, 28, 1),
                    DatasetChoice::Cifar10 => (32, 32, 3),
                };
                let spec = t.network.spec(t.hidden);
                sim(spec.validate())?;
                if (spec.input.h, spec.input.w, spec.input.c) != expected {
                    return Err(CliError::Config(format!(
                        "network `{:?}` does not accept `{:?}` images",
                        t.network, t.dataset
                    )));
                }
            }
            ExperimentKind::VmmBench => {
                let v = &self.vmm;
                if v.rows == 0 || v.cols == 0 || v.trials == 0 {
                    return Err(CliError::Config("`vmm.rows`, `vmm.cols` and `vmm.trials` must be at least 1".into()));
                }
                if !(v.w_range > 0.0 && v.w_range.is_finite()) {
                    return Err(CliError::Config("`vmm.w_range` must be positive".into()));
                }
                if v.r_line.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
                    return Err(CliError::Config("`vmm.r_line` values must be finite and >= 0".into()));
                }
            }
            ExperimentKind::Hysteresis | ExperimentKind::Sweep => {
                let h = &self.hysteresis;
                if h.cycles < 4 || h.steps_per_cycle < 1000 {
                    return Err(CliError::Config(
                        "`hysteresis.cycles` must be >= 4 and `hysteresis.steps_per_cycle` >= 1000".into(),
                    ));
                }
                let bad = |x: f64| !(x > 0.0 && x.is_finite());
                if bad(h.f) || bad(h.v_m) || self.sweep.values.iter().any(|&x| bad(x)) {
                    return Err(CliError::Config("drive frequency, amplitude and sweep values must be positive".into()));
                }
            }
            ExperimentKind::Amoeba => {
                let a = &self.amoeba;
                let positive = [("r", a.r), ("c", a.c), ("period", a.period), ("width", a.width), ("dt", a.dt)];
                if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
                    return Err(CliError::Config(format!("`amoeba.{k}` must be positive, got {v}")));
                }
                if a.count == 0 || a.width >= a.period {
                    return Err(CliError::Config("need `amoeba.count` >= 1 and `amoeba.width` < `amoeba.period`".into()));
                }
            }
            ExperimentKind::Cost => {
                sim(self.tech.validate())?;
                if self.cost.samples == 0 {
                    return Err(CliError::Config("`cost.samples` must be at least 1".into()));
                }
                if !(1..=16).contains(&self.cost.adc_bits) || !(1..=32).contains(&self.cost.input_bits) {
                    return Err(CliError::Config("`cost.adc_bits` must lie in 1..=16 and `cost.input_bits` in 1..=32".into()));
                }
                sim(self.cost.network.spec(self.cost.hidden).validate())?;
            }
        }
        Ok(())
    }

    /// Experiments that need `--long-run`.
    pub fn is_long_run(&self) -> bool {
        self.experiment == ExperimentKind::Train
            && (self.train.network == NetworkChoice::Vgg8 || self.train.dataset == DatasetChoice::Cifar10)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn device(&self) -> DeviceParams {
        self.device.clone().unwrap_or_else(DeviceParams::tiox_memristor)
    }

    pub fn meminductor(&self) -> MeminductorParams {
        self.meminductor.clone().unwrap_or_else(MeminductorParams::tiox_meminductor)
    }
}
