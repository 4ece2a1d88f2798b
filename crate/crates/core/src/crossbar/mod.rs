//! Crossbar arrays: weight mapping, ideal VMM and wire-resistance-aware VMM.
//!
//! Signed weights use a differential pair of arrays. A weight `w` is written
//! as a positive-polarity device state and a negative-polarity device state,
//! and the column output is the difference of the two column currents.

pub mod nodal;

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::devices::{apply_pulses, invert_curve, sample_population, DeviceKind, DeviceParams, DeviceState, Direction};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    /// Passive array: every cell conducts during a read.
    #[default]
    Passive,
    /// One access transistor per cell: cells on rows driven at 0 V are open.
    #[serde(rename = "1t1r")]
    OneTransistor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    /// Wire resistance per cell-to-cell segment (ohm).
    #[serde(default)]
    pub r_line: f64,
    /// Read voltage applied for an active input bit (V).
    #[serde(default = "default_v_read")]
    pub v_read: f64,
    #[serde(default)]
    pub access: Access,
    /// Scalar output attenuation applied to memcapacitive arrays.
    #[serde(default = "default_attenuation")]
    pub cap_attenuation: f64,
}

fn default_v_read() -> f64 {
    0.2
}

fn default_attenuation() -> f64 {
    1.0
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self {
            r_line: 0.0,
            v_read: default_v_read(),
            access: Access::Passive,
            cap_attenuation: default_attenuation(),
        }
    }
}

impl CrossbarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_line >= 0.0) || !self.r_line.is_finite() {
            return Err(SimError::Parameter(format!("r_line must be >= 0, got {}", self.r_line)));
        }
        if !(self.v_read > 0.0) || !self.v_read.is_finite() {
            return Err(SimError::Parameter(format!("v_read must be > 0, got {}", self.v_read)));
        }
        if !(self.cap_attenuation > 0.0 && self.cap_attenuation <= 1.0) {
            return Err(SimError::Parameter(format!(
                "cap_attenuation must lie in (0, 1], got {}",
                self.cap_attenuation
            )));
        }
        Ok(())
    }
}

/// Linear map between weight values and device states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMapping {
    pub w_min: f64,
    pub w_max: f64,
    /// State representing the largest weight magnitude.
    pub s_on: f64,
    /// State representing zero (signed) or `w_min` (unsigned).
    pub s_off: f64,
}

impl WeightMapping {
    /// Full device range: `s_off = x_min`, `s_on = x_max`.
    pub fn for_device(w_min: f64, w_max: f64, params: &DeviceParams) -> Self {
        Self { w_min, w_max, s_on: params.x_max, s_off: params.x_min }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_min, self.w_max, self.s_on, self.s_off];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Parameter("weight mapping values must be finite".into()));
        }
        if !(self.w_max > self.w_min) {
            return Err(SimError::Parameter(format!(
                "need w_max > w_min, got [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        if self.s_on == self.s_off {
            return Err(SimError::Parameter("s_on and s_off must differ".into()));
        }
        Ok(())
    }

    /// Signed ranges use the differential pair; `w_min >= 0` maps onto the positive array only.
    pub fn is_signed(&self) -> bool {
        self.w_min < 0.0
    }

    /// Weight change represented by the full `s_off..s_on` swing of one device.
    pub fn span(&self) -> f64 {
        if self.is_signed() {
            self.w_min.abs().max(self.w_max.abs())
        } else {
            self.w_max - self.w_min
        }
    }

    /// Weight value of the all-`s_off` pair.
    pub fn offset(&self) -> f64 {
        if self.is_signed() {
            0.0
        } else {
            self.w_min
        }
    }

    fn check(&self, w: f64) -> Result<()> {
        if !(w >= self.w_min && w <= self.w_max) {
            return Err(SimError::Domain(format!(
                "weight {w} outside mapping range [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }

    /// Single-device target state over the whole weight range.
    pub fn target_state(&self, w: f64) -> Result<f64> {
        self.check(w)?;
        Ok((w - self.w_min) / (self.w_max - self.w_min) * (self.s_on - self.s_off) + self.s_off)
    }

    /// Target states `(positive, negative)` for the differential pair.
    pub fn pair_targets(&self, w: f64) -> Result<(f64, f64)> {
        self.check(w)?;
        let swing = self.s_on - self.s_off;
        if !self.is_signed() {
            return Ok((self.target_state(w)?, self.s_off));
        }
        let level = w.abs() / self.span() * swing + self.s_off;
        Ok(if w >= 0.0 { (level, self.s_off) } else { (self.s_off, level) })
    }

    /// Inverse of [`Self::pair_targets`].
    #[inline]
    pub fn weight_of(&self, s_pos: f64, s_neg: f64) -> f64 {
        self.offset() + (s_pos - s_neg) / (self.s_on - self.s_off) * self.span()
    }

    /// Weight change produced by one pulse on a linear device.
    pub fn pulse_step(&self, p_max: u32) -> f64 {
        self.span() / f64::from(p_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Pos,
    Neg,
}

#[derive(Debug, Clone)]
pub struct CrossbarArray {
    pub params: DeviceParams,
    pub mapping: WeightMapping,
    pub config: CrossbarConfig,
    pos: Array2<DeviceState>,
    neg: Array2<DeviceState>,
}

/// Sample a fresh differential array and program `w` onto it open-loop.
pub fn map_weights<R: Rng + ?Sized>(
    w: ArrayView2<f64>,
    mapping: WeightMapping,
    params: &DeviceParams,
    config: &CrossbarConfig,
    rng: &mut R,
) -> Result<CrossbarArray> {
    let mut array = CrossbarArray::fresh(w.nrows(), w.ncols(), mapping, params, config, rng)?;
    array.program(w, rng)?;
    Ok(array)
}

impl CrossbarArray {
    /// Unprogrammed array with D2D variation and stuck faults sampled.
    pub fn fresh<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        mapping: WeightMapping,
        params: &DeviceParams,
        config: &CrossbarConfig,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        mapping.validate()?;
        config.validate()?;
        for s in [mapping.s_on, mapping.s_off] {
            if s < params.x_min || s > params.x_max {
                return Err(SimError::Parameter(format!(
                    "mapping state {s} outside device range [{}, {}]",
                    params.x_min, params.x_max
                )));
            }
        }
        let pos = sample_population(params, rows, cols, rng)?;
        let neg = sample_population(params, rows, cols, rng)?;
        Ok(Self { params: params.clone(), mapping, config: config.clone(), pos, neg })
    }

    /// Array with hand-set states and no variation, for fixtures and diagnostics.
    pub fn from_states(
        params: &DeviceParams,
        mapping: WeightMapping,
        config: &CrossbarConfig,
        pos: ArrayView2<f64>,
        neg: ArrayView2<f64>,
    ) -> Result<Self> {
        mapping.validate()?;
        config.validate()?;
        if pos.dim() != neg.dim() || pos.is_empty() {
            return Err(SimError::Shape(format!(
                "state matrices {:?} and {:?} must match and be non-empty",
                pos.dim(),
                neg.dim()
            )));
        }
        if pos.iter().chain(neg.iter()).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(SimError::Domain("states must be finite and non-negative".into()));
        }
        let wrap = |x: &f64| DeviceState { x: *x, a_i: params.a_ltp, stuck: false, stuck_value: params.x_min };
        Ok(Self {
            params: params.clone(),
            mapping,
            config: config.clone(),
            pos: pos.map(wrap),
            neg: neg.map(wrap),
        })
    }

    pub fn rows(&self) -> usize {
        self.pos.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pos.ncols()
    }

    pub fn kind(&self) -> DeviceKind {
        self.params.kind
    }

    pub fn devices(&self, polarity: Polarity) -> &Array2<DeviceState> {
        match polarity {
            Polarity::Pos => &self.pos,
            Polarity::Neg => &self.neg,
        }
    }

    /// Analog states of one polarity.
    pub fn states(&self, polarity: Polarity) -> Array2<f64> {
        self.devices(polarity).map(|d| d.x)
    }

    /// Reset every healthy device to `x_min` and program `w` with open-loop pulse counts.
    pub fn program<R: Rng + ?Sized>(&mut self, w: ArrayView2<f64>, rng: &mut R) -> Result<()> {
        if w.dim() != self.pos.dim() {
            return Err(SimError::Shape(format!(
                "weights {:?} do not match array {:?}",
                w.dim(),
                self.pos.dim()
            )));
        }
        let targets = w.map(|&x| self.mapping.pair_targets(x));
        for ((i, j), t) in targets.indexed_iter() {
            let (tp, tn) = t.clone()?;
            program_device(&mut self.pos[[i, j]], tp, &self.params, rng)?;
            program_device(&mut self.neg[[i, j]], tn, &self.params, rng)?;
        }
        Ok(())
    }

    /// Apply `n` pulses to one device (positive potentiates).
    pub fn pulse<R: Rng + ?Sized>(&mut self, polarity: Polarity, i: usize, j: usize, n: i64, rng: &mut R) -> Result<()> {
        let devices = match polarity {
            Polarity::Pos => &mut self.pos,
            Polarity::Neg => &mut self.neg,
        };
        let dev = devices
            .get_mut([i, j])
            .ok_or_else(|| SimError::Shape(format!("cell ({i}, {j}) out of range")))?;
        *dev = apply_pulses(dev, n, &self.params, rng)?;
        Ok(())
    }

    /// Differential state matrix `s⁺ - s⁻`.
    pub fn differential(&self) -> Array2<f64> {
        let mut d = self.states(Polarity::Pos);
        Zip::from(&mut d).and(&self.neg).for_each(|a, n| *a -= n.x);
        d
    }

    fn check_input(&self, v: ArrayView1<f64>) -> Result<()> {
        if v.len() != self.rows() {
            return Err(SimError::Shape(format!("{} inputs for {} rows", v.len(), self.rows())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SimError::Domain("input voltages must be finite".into()));
        }
        Ok(())
    }

    fn output_gain(&self) -> f64 {
        match self.kind() {
            DeviceKind::Memristor => 1.0,
            DeviceKind::Memcapacitor => self.config.cap_attenuation,
        }
    }

    /// Column outputs with ideal wires: currents (A) or charges (C) for memcapacitive arrays.
    pub fn ideal_vmm(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(v)?;
        Ok(self.differential().t().dot(&v) * self.output_gain())
    }

    /// Column currents from a full nodal solve of the wired grid.
    ///
    /// Memcapacitive arrays and `r_line == 0` fall back to [`Self::ideal_vmm`].
    pub fn parasitic_vmm(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(v)?;
        if self.kind() == DeviceKind::Memcapacitor || self.config.r_line == 0.0 {
            return self.ideal_vmm(v);
        }
        let mut out = Array1::zeros(self.cols());
        for (polarity, sign) in [(Polarity::Pos, 1.0), (Polarity::Neg, -1.0)] {
            let mut g = self.states(polarity);
            if self.config.access == Access::OneTransistor {
                for (i, mut row) in g.rows_mut().into_iter().enumerate() {
                    if v[i] == 0.0 {
                        row.fill(0.0);
                    }
                }
            }
            let sol = nodal::solve(g.view(), self.config.r_line, v)?;
            out.scaled_add(sign, &sol.currents);
        }
        Ok(out)
    }

    /// Matrix `M` such that the column outputs are `M^T v` for every input `v`.
    ///
    /// Includes wire resistance for passive memristive arrays.
    pub fn transfer_matrix(&self) -> Result<Array2<f64>> {
        if self.kind() == DeviceKind::Memcapacitor || self.config.r_line == 0.0 {
            return Ok(self.differential() * self.output_gain());
        }
        if self.config.access == Access::OneTransistor {
            return Err(SimError::Parameter(
                "1T1R arrays with line resistance have an input-dependent transfer matrix".into(),
            ));
        }
        let pos = nodal::transfer_matrix(self.states(Polarity::Pos).view(), self.config.r_line)?;
        let neg = nodal::transfer_matrix(self.states(Polarity::Neg).view(), self.config.r_line)?;
        Ok(pos - neg)
    }

    /// Weights currently stored in the devices, in weight units.
    pub fn read_effective_weights(&self) -> Array2<f64> {
        let m = self.mapping;
        Zip::from(&self.pos).and(&self.neg).map_collect(|p, n| m.weight_of(p.x, n.x))
    }

    /// Dump the array as CSV: a `#` header with parameters, then one line per device.
    ///
    /// Columns: `polarity,row,col,x,a_i,stuck`.
    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let p = &self.params;
        writeln!(
            out,
            "# kind={:?} rows={} cols={} x_min={} x_max={} p_max={} a_ltp={} a_ltd={} r_line={} v_read={}",
            p.kind,
            self.rows(),
            self.cols(),
            p.x_min,
            p.x_max,
            p.p_max,
            p.a_ltp,
            p.a_ltd,
            self.config.r_line,
            self.config.v_read
        )?;
        writeln!(out, "polarity,row,col,x,a_i,stuck")?;
        for (name, devices) in [("pos", &self.pos), ("neg", &self.neg)] {
            for ((i, j), d) in devices.indexed_iter() {
                writeln!(out, "{name},{i},{j},{},{},{}", d.x, d.a_i, u8::from(d.stuck))?;
            }
        }
        Ok(())
    }
}

/// Erase to `x_min` and pulse towards `target` using the nominal curve.
fn program_device<R: Rng + ?Sized>(
    dev: &mut DeviceState,
    target: f64,
    params: &DeviceParams,
    rng: &mut R,
) -> Result<()> {
    if dev.stuck {
        return Ok(());
    }
    dev.x = params.x_min;
    let p = invert_curve(target.clamp(params.x_min, params.x_max), Direction::Ltp, params, params.a_ltp)?;
    let n = (p.round() as i64).clamp(0, i64::from(params.p_max));
    *dev = apply_pulses(dev, n, params, rng)?;
    Ok(())
}
