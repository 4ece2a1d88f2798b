//! Weight storage backends for trainable layers.
//!
//! [`IdealBackend`] keeps float weights. [`AnalogBackend`] stores a layer on
//! tiles of differential arrays and reads it through the periphery pipeline:
//! input scaling and bit slicing, one array read per slice, per-slice ADC
//! conversion and shift-and-add recombination. Updates become device pulses
//! (memristive/memcapacitive cells) or level steps (meminductor cells).

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::crossbar::{Access, CrossbarArray, CrossbarConfig, Polarity, WeightMapping};
use crate::devices::{invert_curve, DeviceKind, DeviceParams, Direction};
use crate::error::{Result, SimError};
use crate::meminductor::vmm::{default_mapping, MeminductorArrayConfig, MeminductorCrossbar};
use crate::meminductor::MeminductorParams;
use crate::periphery::{calibrate_edges, slice_weights, QuantizerConfig, MAX_INPUT_BITS};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdcMode {
    /// Slices are read at full precision.
    Exact,
    /// Equal-width bins spanning the observed partial-sum range.
    Uniform,
    /// Equal-population bins fitted to observed partial sums.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeripheryConfig {
    #[serde(default = "default_input_bits")]
    pub input_bits: u32,
    #[serde(default)]
    pub adc: AdcMode,
    #[serde(default = "default_adc_bits")]
    pub adc_bits: u32,
    /// Refit the ADC every this many training batches.
    #[serde(default = "default_recalibrate")]
    pub recalibrate_every: usize,
}

fn default_input_bits() -> u32 {
    8
}
fn default_adc_bits() -> u32 {
    5
}
fn default_recalibrate() -> usize {
    50
}

impl Default for PeripheryConfig {
    fn default() -> Self {
        Self {
            input_bits: default_input_bits(),
            adc: AdcMode::default(),
            adc_bits: default_adc_bits(),
            recalibrate_every: default_recalibrate(),
        }
    }
}

impl PeripheryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_INPUT_BITS).contains(&self.input_bits) {
            return Err(SimError::Config(format!("input_bits must lie in 1..={MAX_INPUT_BITS}")));
        }
        if self.adc != AdcMode::Exact {
            QuantizerConfig::uniform(self.input_bits, self.adc_bits, 0.0, 1.0)?;
        }
        if self.recalibrate_every == 0 {
            return Err(SimError::Config("recalibrate_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cell technology of an analog layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cell", rename_all = "kebab-case")]
pub enum CellConfig {
    Device {
        device: DeviceParams,
        #[serde(default)]
        crossbar: CrossbarConfig,
    },
    Meminductor {
        params: MeminductorParams,
        #[serde(default)]
        array: MeminductorArrayConfig,
    },
}

/// Fully resolved hardware description of one analog layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHardware {
    pub cells: CellConfig,
    pub periphery: PeripheryConfig,
    /// Weights are mapped onto `[-w_limit, w_limit]`.
    pub w_limit: f64,
    pub array_rows: usize,
    pub array_cols: usize,
    /// Recompute wire-resistance transfer matrices every this many updates.
    pub parasitic_refresh: usize,
}

/// Weights used to propagate errors backwards through an analog layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackpropWeights {
    /// Read back from the cells.
    #[default]
    Effective,
    /// The software copy of the intended weights.
    Target,
}

pub trait Backend: Send + std::fmt::Debug {
    /// `(fan_in, outputs)`.
    fn shape(&self) -> (usize, usize);
    /// `x · W` for a batch of rows; `calibrate` lets the periphery refit to this batch.
    fn forward(&mut self, x: ArrayView2<f64>, calibrate: bool) -> Result<Array2<f64>>;
    /// Matrix whose transpose carries errors backwards.
    fn backprop_weights(&self) -> Array2<f64>;
    /// Weights currently held, in weight units.
    fn stored_weights(&self) -> Array2<f64>;
    /// Apply the SGD step `-lr * grad`.
    fn update(&mut self, grad: ArrayView2<f64>, lr: f64) -> Result<()>;
    /// Overwrite all weights (open-loop programming for analog storage).
    fn set_weights(&mut self, w: ArrayView2<f64>) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct IdealBackend {
    pub w: Array2<f64>,
}

impl Backend for IdealBackend {
    fn shape(&self) -> (usize, usize) {
        self.w.dim()
    }

    fn forward(&mut self, x: ArrayView2<f64>, _calibrate: bool) -> Result<Array2<f64>> {
        check_cols(x, self.w.nrows())?;
        Ok(x.dot(&self.w))
    }

    fn backprop_weights(&self) -> Array2<f64> {
        self.w.clone()
    }

    fn stored_weights(&self) -> Array2<f64> {
        self.w.clone()
    }

    fn update(&mut self, grad: ArrayView2<f64>, lr: f64) -> Result<()> {
        check_dim(grad, self.w.dim())?;
        self.w.scaled_add(-lr, &grad);
        Ok(())
    }

    fn set_weights(&mut self, w: ArrayView2<f64>) -> Result<()> {
        check_dim(w, self.w.dim())?;
        self.w.assign(&w);
        Ok(())
    }
}

fn check_cols(x: ArrayView2<f64>, rows: usize) -> Result<()> {
    if x.ncols() != rows {
        return Err(SimError::Shape(format!("{} input features for a {rows}-row layer", x.ncols())));
    }
    Ok(())
}

fn check_dim(a: ArrayView2<f64>, dim: (usize, usize)) -> Result<()> {
    if a.dim() != dim {
        return Err(SimError::Shape(format!("matrix {:?} does not match layer {dim:?}", a.dim())));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Cells {
    Device(CrossbarArray),
    Meminductor(MeminductorCrossbar),
}

#[derive(Debug, Clone)]
struct Tile {
    rows: Range<usize>,
    cols: Range<usize>,
    cells: Cells,
    /// Read transfer in weight units: slice output = bits · transfer.
    transfer: Array2<f64>,
    stale: bool,
}

impl Tile {
    fn refresh(&mut self) -> Result<()> {
        self.transfer = match &self.cells {
            Cells::Device(a) => {
                let m = a.mapping;
                let t = a.transfer_matrix()?;
                t * (m.span() / (m.s_on - m.s_off)) + m.offset()
            }
            Cells::Meminductor(a) => a.effective_weights(),
        };
        self.stale = false;
        Ok(())
    }

    fn stored(&self) -> Array2<f64> {
        match &self.cells {
            Cells::Device(a) => a.read_effective_weights(),
            Cells::Meminductor(a) => a.effective_weights(),
        }
    }
}

/// A layer held on analog arrays.
#[derive(Debug, Clone)]
pub struct AnalogBackend {
    rows: usize,
    cols: usize,
    tiles: Vec<Tile>,
    col_blocks: usize,
    /// Per layer row: `(region index, row within region)`.
    row_slot: Vec<(usize, usize)>,
    col_slot: Vec<(usize, usize)>,
    periphery: PeripheryConfig,
    quantizer: Option<QuantizerConfig>,
    w_limit: f64,
    /// Weight change of one pulse / level.
    step: f64,
    max_pulses: i64,
    residual: Array2<f64>,
    target: Array2<f64>,
    backprop: BackpropWeights,
    parasitic_refresh: usize,
    updates: usize,
    rng: SimRng,
}

impl AnalogBackend {
    /// Place `w` (clamped to the mapping range) on fresh tiles covering `regions` of rows.
    pub fn new(
        w: ArrayView2<f64>,
        regions: &[Range<usize>],
        hw: &LayerHardware,
        backprop: BackpropWeights,
        seed: u64,
    ) -> Result<Self> {
        hw.periphery.validate()?;
        let (rows, cols) = w.dim();
        if rows == 0 || cols == 0 {
            return Err(SimError::Shape("layer must be non-empty".into()));
        }
        if !(hw.w_limit > 0.0 && hw.w_limit.is_finite()) {
            return Err(SimError::Config(format!("w_limit must be positive, got {}", hw.w_limit)));
        }
        if hw.array_rows == 0 || hw.array_cols == 0 || hw.parasitic_refresh == 0 {
            return Err(SimError::Config("array size and parasitic_refresh must be positive".into()));
        }
        let covered: usize = regions.iter().map(|r| r.len()).sum();
        if covered != rows || regions.iter().any(|r| r.is_empty() || r.len() > hw.array_rows) {
            return Err(SimError::Mapping(format!(
                "row regions cover {covered} of {rows} rows or exceed {} array rows",
                hw.array_rows
            )));
        }
        if let CellConfig::Device { crossbar, .. } = &hw.cells {
            if crossbar.access == Access::OneTransistor && crossbar.r_line > 0.0 {
                return Err(SimError::Config(
                    "training with wire resistance needs passive arrays; 1T1R reads are input-dependent".into(),
                ));
            }
        }
        let mut d2d = SimRng::seed_from_u64(seed);
        d2d.set_stream(1);
        let mut rng = SimRng::seed_from_u64(seed);
        rng.set_stream(2);

        let (mapping, step, max_pulses) = match &hw.cells {
            CellConfig::Device { device, crossbar } => {
                device.validate()?;
                crossbar.validate()?;
                let m = WeightMapping::for_device(-hw.w_limit, hw.w_limit, device);
                (m, m.pulse_step(device.p_max), i64::from(device.p_max))
            }
            CellConfig::Meminductor { params, array } => {
                params.validate()?;
                array.validate()?;
                let m = default_mapping(-hw.w_limit, hw.w_limit, params);
                (m, m.span() / f64::from(array.levels - 1), i64::from(array.levels - 1))
            }
        };
        let target = w.map(|&v| v.clamp(-hw.w_limit, hw.w_limit));
        let col_ranges: Vec<Range<usize>> =
            (0..cols.div_ceil(hw.array_cols)).map(|k| k * hw.array_cols..((k + 1) * hw.array_cols).min(cols)).collect();
        let mut tiles = Vec::with_capacity(regions.len() * col_ranges.len());
        for r in regions {
            for c in &col_ranges {
                let block = target.slice(s![r.clone(), c.clone()]);
                let cells = match &hw.cells {
                    CellConfig::Device { device, crossbar } => {
                        let mut a = CrossbarArray::fresh(r.len(), c.len(), mapping, device, crossbar, &mut d2d)?;
                        a.program(block, &mut rng)?;
                        Cells::Device(a)
                    }
                    CellConfig::Meminductor { params, array } => {
                        let mut a = MeminductorCrossbar::new(r.len(), c.len(), params, mapping, array)?;
                        a.program(block)?;
                        Cells::Meminductor(a)
                    }
                };
                let mut tile = Tile { rows: r.clone(), cols: c.clone(), cells, transfer: Array2::zeros((0, 0)), stale: true };
                tile.refresh()?;
                tiles.push(tile);
            }
        }
        let mut row_slot = vec![(0, 0); rows];
        for (k, r) in regions.iter().enumerate() {
            for (local, i) in r.clone().enumerate() {
                row_slot[i] = (k, local);
            }
        }
        let col_slot = (0..cols).map(|j| (j / hw.array_cols, j % hw.array_cols)).collect();
        Ok(Self {
            rows,
            cols,
            tiles,
            col_blocks: col_ranges.len(),
            row_slot,
            col_slot,
            periphery: hw.periphery.clone(),
            quantizer: None,
            w_limit: hw.w_limit,
            step,
            max_pulses,
            residual: Array2::zeros((rows, cols)),
            target,
            backprop,
            parasitic_refresh: hw.parasitic_refresh,
            updates: 0,
            rng,
        })
    }

    /// Weight change of one programming pulse or level.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn residual(&self) -> &Array2<f64> {
        &self.residual
    }

    pub fn tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn quantizer(&self) -> Option<&QuantizerConfig> {
        self.quantizer.as_ref()
    }

    /// Integer pulse counts that the next update of `grad` would issue, without applying them.
    pub fn pulse_counts(&self, grad: ArrayView2<f64>, lr: f64) -> Array2<i64> {
        Zip::from(&self.residual).and(&grad).map_collect(|&r, &g| self.pulses_for(r - lr * g))
    }

    fn pulses_for(&self, r: f64) -> i64 {
        ((r / self.step).round() as i64).clamp(-self.max_pulses, self.max_pulses)
    }

    /// Each slice's partial sums for every tile, handed to `f` with the slice weight.
    fn for_each_partial(
        &self,
        q: &Array2<i64>,
        mut f: impl FnMut(&Tile, i64, &Array2<f64>, &[bool]) -> Result<()>,
    ) -> Result<()> {
        let bits = self.periphery.input_bits;
        let weights = slice_weights(bits);
        let p = q.nrows();
        for tile in &self.tiles {
            let qt = q.slice(s![.., tile.rows.clone()]);
            let mut b = Array2::<f64>::zeros((p, tile.rows.len()));
            let mut active = vec![false; p];
            for (slice, &w) in weights.iter().enumerate() {
                let k = bits - 1 - slice as u32;
                active.iter_mut().for_each(|a| *a = false);
                Zip::from(b.rows_mut()).and(qt.rows()).and(&mut active).for_each(|mut br, qr, act| {
                    for (o, &v) in br.iter_mut().zip(qr) {
                        let bit = (v >> k) & 1;
                        *o = bit as f64;
                        *act |= bit != 0;
                    }
                });
                if !active.iter().any(|&a| a) {
                    continue;
                }
                let z = b.dot(&tile.transfer);
                f(tile, w, &z, &active)?;
            }
        }
        Ok(())
    }

    fn calibrate(&mut self, q: &Array2<i64>) -> Result<()> {
        let mut samples = Vec::new();
        self.for_each_partial(q, |_, _, z, active| {
            for (row, &a) in z.rows().into_iter().zip(active) {
                if a {
                    samples.extend(row.iter().copied());
                }
            }
            Ok(())
        })?;
        let (ib, ab) = (self.periphery.input_bits, self.periphery.adc_bits);
        let fitted = match self.periphery.adc {
            AdcMode::Exact => return Ok(()),
            AdcMode::Calibrated => calibrate_edges(&samples, ib, ab),
            AdcMode::Uniform => {
                let (lo, hi) = samples
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                QuantizerConfig::uniform(ib, ab, lo, hi)
            }
        };
        // Degenerate batches (too few or identical partial sums) keep the previous fit.
        if let Ok(qz) = fitted {
            self.quantizer = Some(qz);
        }
        Ok(())
    }

    fn refresh_stale(&mut self, force: bool) -> Result<()> {
        for t in self.tiles.iter_mut().filter(|t| t.stale) {
            let wired = matches!(&t.cells, Cells::Device(a) if a.config.r_line > 0.0 && a.kind() == DeviceKind::Memristor);
            if force || !wired {
                t.refresh()?;
            }
        }
        Ok(())
    }

    fn steer(&mut self, i: usize, j: usize, n: i64) -> Result<()> {
        let (region, li) = self.row_slot[i];
        let (block, lj) = self.col_slot[j];
        let tile = &mut self.tiles[region * self.col_blocks + block];
        tile.stale = true;
        // Move the opposite polarity back towards its floor before raising this one.
        let (lower, raise) = if n > 0 { (Polarity::Neg, Polarity::Pos) } else { (Polarity::Pos, Polarity::Neg) };
        let m = n.abs();
        match &mut tile.cells {
            Cells::Device(a) => {
                let x = a.devices(lower)[[li, lj]].x;
                let room = pulses_to_floor(x, a.mapping.s_off, &a.params)?;
                let k = m.min(room);
                if k > 0 {
                    a.pulse(lower, li, lj, -k, &mut self.rng)?;
                }
                if m > k {
                    a.pulse(raise, li, lj, m - k, &mut self.rng)?;
                }
            }
            Cells::Meminductor(a) => {
                let low = a.level(lower, li, lj);
                let k = m.min(low.max(0));
                a.set_level(lower, li, lj, low - k);
                let up = a.level(raise, li, lj);
                a.set_level(raise, li, lj, up + (m - k));
            }
        }
        Ok(())
    }
}

/// Depression pulses that take a device from `x` down to `floor` on the nominal curve.
fn pulses_to_floor(x: f64, floor: f64, p: &DeviceParams) -> Result<i64> {
    let at = invert_curve(x.clamp(p.x_min, p.x_max), Direction::Ltd, p, p.a_ltd)?;
    let end = invert_curve(floor.clamp(p.x_min, p.x_max), Direction::Ltd, p, p.a_ltd)?;
    Ok(((end - at).round() as i64).max(0))
}

impl Backend for AnalogBackend {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn forward(&mut self, x: ArrayView2<f64>, calibrate: bool) -> Result<Array2<f64>> {
        check_cols(x, self.rows)?;
        let mut y = Array2::zeros((x.nrows(), self.cols));
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !scale.is_finite() {
            return Err(SimError::Domain("non-finite layer input".into()));
        }
        if scale == 0.0 {
            return Ok(y);
        }
        let bits = self.periphery.input_bits;
        let half = (1i64 << (bits - 1)) as f64;
        let (lo, hi) = (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1);
        let q = x.map(|&v| ((v / scale * half).round_ties_even() as i64).clamp(lo, hi));
        if self.periphery.adc == AdcMode::Exact {
            let qf = q.map(|&v| v as f64);
            for t in &self.tiles {
                let part = qf.slice(s![.., t.rows.clone()]).dot(&t.transfer);
                y.slice_mut(s![.., t.cols.clone()]).scaled_add(scale / half, &part);
            }
            return Ok(y);
        }
        if calibrate || self.quantizer.is_none() {
            self.calibrate(&q)?;
        }
        let quantizer = self.quantizer.clone();
        self.for_each_partial(&q, |tile, w, z, active| {
            let mut out = y.slice_mut(s![.., tile.cols.clone()]);
            let gain = w as f64 * scale / half;
            for ((mut orow, zrow), &a) in out.rows_mut().into_iter().zip(z.rows()).zip(active) {
                if !a {
                    continue;
                }
                for (o, &v) in orow.iter_mut().zip(zrow) {
                    let read = quantizer.as_ref().map_or(v, |qz| qz.reconstruct(v));
                    *o += gain * read;
                }
            }
            Ok(())
        })?;
        Ok(y)
    }

    fn backprop_weights(&self) -> Array2<f64> {
        match self.backprop {
            BackpropWeights::Effective => self.stored_weights(),
            BackpropWeights::Target => self.target.clone(),
        }
    }

    fn stored_weights(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.rows, self.cols));
        for t in &self.tiles {
            w.slice_mut(s![t.rows.clone(), t.cols.clone()]).assign(&t.stored());
        }
        w
    }

    fn update(&mut self, grad: ArrayView2<f64>, lr: f64) -> Result<()> {
        check_dim(grad, (self.rows, self.cols))?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let dw = -lr * grad[[i, j]];
                if dw == 0.0 {
                    continue;
                }
                self.target[[i, j]] = (self.target[[i, j]] + dw).clamp(-self.w_limit, self.w_limit);
                let r = self.residual[[i, j]] + dw;
                let n = self.pulses_for(r);
                self.residual[[i, j]] = r - n as f64 * self.step;
                if n != 0 {
                    self.steer(i, j, n)?;
                }
            }
        }
        self.updates += 1;
        let force = self.updates % self.parasitic_refresh == 0;
        self.refresh_stale(force)
    }

    fn set_weights(&mut self, w: ArrayView2<f64>) -> Result<()> {
        check_dim(w, (self.rows, self.cols))?;
        self.target = w.map(|&v| v.clamp(-self.w_limit, self.w_limit));
        self.residual.fill(0.0);
        for t in &mut self.tiles {
            let block = self.target.slice(s![t.rows.clone(), t.cols.clone()]);
            match &mut t.cells {
                Cells::Device(a) => a.program(block, &mut self.rng)?,
                Cells::Meminductor(a) => a.program(block)?,
            }
            t.refresh()?;
        }
        Ok(())
    }
}
