//! Vector-matrix multiplication on an array of meminductor cells.
//!
//! Each cell stores a weight as its inverse meminductance `S`, set through the
//! emulator state `rho` (the current law is linear in `rho`). A read applies
//! `v_i` for `t_read`, so the cell sees flux `v_i t_read` and carries
//! `S v_i t_read`; column currents pass through a sense resistor, giving
//! `Y_j = R Σ_i S_ij v_i t_read`.
//!
//! Signed weight ranges use a differential pair of cells per weight.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::MeminductorParams;
use crate::crossbar::{Polarity, WeightMapping};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeminductorArrayConfig {
    /// Sense resistor (ohm).
    #[serde(default = "default_r_sense")]
    pub r_sense: f64,
    /// Read pulse width (s).
    #[serde(default = "default_t_read")]
    pub t_read: f64,
    /// Read voltage for an active input bit (V).
    #[serde(default = "default_v_read")]
    pub v_read: f64,
    /// Programmable inverse-meminductance levels per cell.
    #[serde(default = "default_levels")]
    pub levels: u32,
}

fn default_r_sense() -> f64 {
    1.5e3
}
fn default_t_read() -> f64 {
    1e-9
}
fn default_v_read() -> f64 {
    0.2
}
fn default_levels() -> u32 {
    32
}

impl Default for MeminductorArrayConfig {
    fn default() -> Self {
        Self { r_sense: default_r_sense(), t_read: default_t_read(), v_read: default_v_read(), levels: default_levels() }
    }
}

impl MeminductorArrayConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r_sense", self.r_sense), ("t_read", self.t_read), ("v_read", self.v_read)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.levels < 2 {
            return Err(SimError::Parameter("need at least 2 levels".into()));
        }
        Ok(())
    }
}

/// Default `S` window: half to one and a half times the baseline magnitude.
pub fn default_mapping(w_min: f64, w_max: f64, params: &MeminductorParams) -> WeightMapping {
    let base = params.baseline().abs();
    WeightMapping { w_min, w_max, s_on: 1.5 * base, s_off: 0.5 * base }
}

#[derive(Debug, Clone)]
pub struct MeminductorCrossbar {
    pub params: MeminductorParams,
    pub mapping: WeightMapping,
    pub config: MeminductorArrayConfig,
    rho_pos: Array2<f64>,
    rho_neg: Array2<f64>,
}

impl MeminductorCrossbar {
    /// Array with every cell at `s_off`.
    pub fn new(rows: usize, cols: usize, params: &MeminductorParams, mapping: WeightMapping, config: &MeminductorArrayConfig) -> Result<Self> {
        params.validate()?;
        mapping.validate()?;
        config.validate()?;
        if rows == 0 || cols == 0 {
            return Err(SimError::Shape("array must be non-empty".into()));
        }
        if params.slope() == 0.0 {
            return Err(SimError::Parameter("cells with gm3 = 0 cannot be programmed".into()));
        }
        if !(mapping.s_on > 0.0 && mapping.s_off > 0.0) {
            return Err(SimError::Parameter("inverse meminductance targets must be positive".into()));
        }
        let mut a = Self {
            params: params.clone(),
            mapping,
            config: config.clone(),
            rho_pos: Array2::zeros((rows, cols)),
            rho_neg: Array2::zeros((rows, cols)),
        };
        let off = a.rho_for(mapping.s_off);
        a.rho_pos.fill(off);
        a.rho_neg.fill(off);
        Ok(a)
    }

    /// Array with hand-set inverse meminductances.
    pub fn from_inverse_meminductances(
        params: &MeminductorParams,
        mapping: WeightMapping,
        config: &MeminductorArrayConfig,
        pos: ArrayView2<f64>,
        neg: ArrayView2<f64>,
    ) -> Result<Self> {
        if pos.dim() != neg.dim() {
            return Err(SimError::Shape("polarity matrices differ in shape".into()));
        }
        let mut a = Self::new(pos.nrows(), pos.ncols(), params, mapping, config)?;
        a.rho_pos = pos.map(|&s| a.rho_for(s));
        a.rho_neg = neg.map(|&s| a.rho_for(s));
        Ok(a)
    }

    pub fn rows(&self) -> usize {
        self.rho_pos.nrows()
    }

    pub fn cols(&self) -> usize {
        self.rho_pos.ncols()
    }

    fn polarity_sign(&self) -> f64 {
        self.params.baseline().signum()
    }

    /// Emulator state giving inverse meminductance magnitude `s`.
    fn rho_for(&self, s: f64) -> f64 {
        (self.polarity_sign() * s - self.params.baseline()) / self.params.slope()
    }

    fn rho(&self, polarity: Polarity) -> &Array2<f64> {
        match polarity {
            Polarity::Pos => &self.rho_pos,
            Polarity::Neg => &self.rho_neg,
        }
    }

    /// Inverse meminductance magnitudes of one polarity.
    pub fn inverse_meminductances(&self, polarity: Polarity) -> Array2<f64> {
        let sign = self.polarity_sign();
        self.rho(polarity).map(|&r| sign * self.params.m_inv(r))
    }

    pub fn level_step(&self) -> f64 {
        (self.mapping.s_on - self.mapping.s_off) / f64::from(self.config.levels - 1)
    }

    /// Nearest programmable level of a cell.
    pub fn level(&self, polarity: Polarity, i: usize, j: usize) -> i64 {
        let s = self.polarity_sign() * self.params.m_inv(self.rho(polarity)[[i, j]]);
        ((s - self.mapping.s_off) / self.level_step()).round() as i64
    }

    /// Set a cell to programmable level `k`, clamped to the available range.
    pub fn set_level(&mut self, polarity: Polarity, i: usize, j: usize, k: i64) {
        let k = k.clamp(0, i64::from(self.config.levels - 1));
        let s = self.mapping.s_off + k as f64 * self.level_step();
        let rho = self.rho_for(s);
        match polarity {
            Polarity::Pos => self.rho_pos[[i, j]] = rho,
            Polarity::Neg => self.rho_neg[[i, j]] = rho,
        }
    }

    /// Quantize `w` onto the programmable levels.
    pub fn program(&mut self, w: ArrayView2<f64>) -> Result<()> {
        if w.dim() != self.rho_pos.dim() {
            return Err(SimError::Shape(format!("weights {:?} do not match array {:?}", w.dim(), self.rho_pos.dim())));
        }
        for ((i, j), &x) in w.indexed_iter() {
            let (sp, sn) = self.mapping.pair_targets(x)?;
            let to_level = |s: f64| ((s - self.mapping.s_off) / self.level_step()).round() as i64;
            let (kp, kn) = (to_level(sp), to_level(sn));
            self.set_level(Polarity::Pos, i, j, kp);
            self.set_level(Polarity::Neg, i, j, kn);
        }
        Ok(())
    }

    /// Current carried by one cell during a read at voltage `v`.
    pub fn cell_current(&self, polarity: Polarity, i: usize, j: usize, v: f64) -> f64 {
        let flux = v * self.config.t_read;
        self.polarity_sign() * self.params.current(flux, self.rho(polarity)[[i, j]])
    }

    /// Output voltage per input volt: `Y = M^T v`.
    pub fn transfer_matrix(&self) -> Array2<f64> {
        let gain = self.config.r_sense * self.config.t_read;
        let pos = self.inverse_meminductances(Polarity::Pos);
        if self.mapping.is_signed() {
            (pos - self.inverse_meminductances(Polarity::Neg)) * gain
        } else {
            pos * gain
        }
    }

    /// Sense-resistor output voltages for row voltages `v`.
    pub fn forward(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.rows() {
            return Err(SimError::Shape(format!("{} inputs for {} rows", v.len(), self.rows())));
        }
        let signed = self.mapping.is_signed();
        let mut y = Array1::zeros(self.cols());
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for j in 0..self.cols() {
                let mut cur = self.cell_current(Polarity::Pos, i, j, vi);
                if signed {
                    cur -= self.cell_current(Polarity::Neg, i, j, vi);
                }
                y[j] += self.config.r_sense * cur;
            }
        }
        Ok(y)
    }

    /// Stored weights in weight units.
    pub fn effective_weights(&self) -> Array2<f64> {
        let m = self.mapping;
        let pos = self.inverse_meminductances(Polarity::Pos);
        if m.is_signed() {
            let neg = self.inverse_meminductances(Polarity::Neg);
            Zip::from(&pos).and(&neg).map_collect(|&p, &n| m.weight_of(p, n))
        } else {
            pos.map(|&p| m.weight_of(p, m.s_off))
        }
    }
}

/// Program `weights` onto a fresh meminductor array and read it with `v_in`.
pub fn meminductor_vmm_forward(
    weights: ArrayView2<f64>,
    v_in: ArrayView1<f64>,
    params: &MeminductorParams,
    mapping: WeightMapping,
    config: &MeminductorArrayConfig,
) -> Result<Array1<f64>> {
    let mut a = MeminductorCrossbar::new(weights.nrows(), weights.ncols(), params, mapping, config)?;
    a.program(weights)?;
    a.forward(v_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn setup() -> (MeminductorParams, MeminductorArrayConfig) {
        (MeminductorParams::zedboard(), MeminductorArrayConfig::default())
    }

    #[test]
    fn minimum_weights_sit_at_s_off() {
        let (p, cfg) = setup();
        let m = default_mapping(0.0, 1.0, &p);
        let mut a = MeminductorCrossbar::new(2, 3, &p, m, &cfg).unwrap();
        a.program(Array2::zeros((2, 3)).view()).unwrap();
        for s in a.inverse_meminductances(Polarity::Pos) {
            assert!((s - m.s_off).abs() <= 1e-9 * m.s_off);
        }
        let top = {
            a.program(Array2::ones((2, 3)).view()).unwrap();
            a.inverse_meminductances(Polarity::Pos)
        };
        for s in top {
            assert!((s - m.s_on).abs() <= 1e-9 * m.s_on);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (p, cfg) = setup();
        let w = array![[0.3, -0.2], [0.9, 0.1]];
        let y = meminductor_vmm_forward(w.view(), array![0.0, 0.0].view(), &p, default_mapping(-1.0, 1.0, &p), &cfg).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_reads_single_cell() {
        let (p, cfg) = setup();
        let m = default_mapping(0.0, 1.0, &p);
        let base = p.baseline().abs();
        let s = array![[0.6, 0.7, 0.8], [0.9, 1.0, 1.1], [1.2, 1.3, 1.4]] * base;
        let a = MeminductorCrossbar::from_inverse_meminductances(&p, m, &cfg, s.view(), s.view()).unwrap();
        let v = 0.2;
        let y = a.forward(array![0.0, v, 0.0].view()).unwrap();
        for j in 0..3 {
            // Single-element current law at flux v * t_read.
            let rho = (p.baseline().signum() * s[[1, j]] - p.baseline()) / p.slope();
            let i = p.current(v * cfg.t_read, rho).abs();
            assert!((y[j] - cfg.r_sense * i).abs() <= 1e-12 * y[j].abs());
            assert!((y[j] - cfg.r_sense * s[[1, j]] * v * cfg.t_read).abs() <= 1e-9 * y[j].abs());
        }
    }

    #[test]
    fn forward_matches_transfer_matrix_and_weights() {
        let (p, cfg) = setup();
        let m = default_mapping(-1.0, 1.0, &p);
        let w = array![[0.5, -1.0, 0.0], [1.0, 0.25, -0.75]];
        let mut a = MeminductorCrossbar::new(2, 3, &p, m, &cfg).unwrap();
        a.program(w.view()).unwrap();
        let v = array![0.2, -0.1];
        let y = a.forward(v.view()).unwrap();
        let via = a.transfer_matrix().t().dot(&v);
        for (x, z) in y.iter().zip(via.iter()) {
            assert!((x - z).abs() <= 1e-9 * y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        let eff = a.effective_weights();
        let step = m.span() / f64::from(cfg.levels - 1);
        for (x, e) in w.iter().zip(eff.iter()) {
            assert!((x - e).abs() <= 0.5 * step + 1e-9);
        }
    }

    #[test]
    fn levels_round_trip() {
        let (p, cfg) = setup();
        let mut a = MeminductorCrossbar::new(1, 1, &p, default_mapping(-1.0, 1.0, &p), &cfg).unwrap();
        for k in [0, 5, 31, 40, -3] {
            a.set_level(Polarity::Neg, 0, 0, k);
            assert_eq!(a.level(Polarity::Neg, 0, 0), k.clamp(0, 31));
        }
    }

    #[test]
    fn frozen_cells_cannot_be_programmed() {
        let (p, cfg) = setup();
        let frozen = MeminductorParams { gm3: 0.0, ..p.clone() };
        assert!(MeminductorCrossbar::new(1, 1, &frozen, default_mapping(0.0, 1.0, &p), &cfg).is_err());
    }
}
