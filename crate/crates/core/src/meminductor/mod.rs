//! Behavioral model of the three-OTA, two-capacitor meminductor emulator.
//!
//! The emulator integrates its input voltage twice: flux `phi = ∫v dt` and
//! `rho = ∫phi dt`. Its input current is `i = m_inv(rho) * phi`, where the
//! inverse meminductance depends linearly on `rho`:
//!
//! ```text
//! m_inv(rho) = (K gm1 / C1) * (V_ss + V_t ∓ gm1 gm3 rho / (C1 C2))
//! ```
//!
//! with `-` in decremental mode and `+` in incremental mode.

pub mod amoeba;
pub mod compose;
pub mod hysteresis;
pub mod vmm;

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtaParams {
    /// Device parameter `mu_n * C_ox * W / L` (A/V²).
    pub k: f64,
    pub v_b: f64,
    pub v_ss: f64,
    pub v_t: f64,
}

/// OTA transconductance `(K / √2) (V_b - V_ss - 2 V_t)`.
///
/// Negative results mean the bias is below cutoff; see [`ota_gm_checked`].
pub fn ota_gm(p: &OtaParams) -> f64 {
    p.k / SQRT_2 * (p.v_b - p.v_ss - 2.0 * p.v_t)
}

/// [`ota_gm`] that rejects non-finite inputs and cut-off bias points.
pub fn ota_gm_checked(p: &OtaParams) -> Result<f64> {
    let gm = ota_gm(p);
    if !gm.is_finite() {
        return Err(SimError::Parameter(format!("non-finite transconductance from {p:?}")));
    }
    if gm <= 0.0 {
        return Err(SimError::Parameter(format!("bias {} V is below cutoff (gm = {gm:e} S)", p.v_b)));
    }
    Ok(gm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Decremental,
    Incremental,
}

/// How the sign of the constant term of `m_inv` is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    /// Use the current law as written; with `V_ss + V_t < 0` the baseline is negative.
    #[default]
    Literal,
    /// Flip the overall sign when needed so the baseline inverse meminductance is positive.
    PositiveBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeminductorParams {
    pub k: f64,
    pub gm1: f64,
    pub gm3: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_ss: f64,
    pub v_t: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub sign: SignConvention,
}

impl MeminductorParams {
    /// Parameters centred on frequency `f0`: the time constant equals `1/f0`,
    /// the first capacitor is `2 gm / (2π f0)`, and `K` is chosen so the
    /// baseline inverse meminductance has magnitude `baseline` (1/H).
    pub fn design_point(f0: f64, gm: f64, v_m: f64, v_ss: f64, v_t: f64, baseline: f64) -> Result<Self> {
        let omega = 2.0 * PI * f0;
        let c1 = 2.0 * gm / omega;
        let k = baseline * c1 / (gm * (v_ss + v_t).abs());
        let c2 = k * gm * gm * v_m / (2.0 * PI * f0 * c1);
        let p = Self { k, gm1: gm, gm3: gm, c1, c2, v_ss, v_t, mode: Mode::Decremental, sign: SignConvention::Literal };
        p.validate()?;
        Ok(p)
    }

    /// Simulation preset: 3 MHz optimum lobe at a 500 mV drive, baseline |m_inv| = 1 /H.
    pub fn tiox_meminductor() -> Self {
        Self::design_point(3.0e6, 967e-6, 0.5, -0.9, 0.45, 1.0).expect("preset is valid")
    }

    /// Bench-emulator values: K = 4.02e-4, gm = 967 µS, C1 = 1 pF, C2 = 300 pF.
    pub fn zedboard() -> Self {
        Self {
            k: 4.02e-4,
            gm1: 967e-6,
            gm3: 967e-6,
            c1: 1e-12,
            c2: 300e-12,
            v_ss: -0.9,
            v_t: 0.45,
            mode: Mode::Decremental,
            sign: SignConvention::Literal,
        }
    }

    /// Amoeba-circuit preset: baseline inductance 100 µH, positive by convention.
    pub fn amoeba() -> Self {
        let (k, gm, v_ss, v_t): (f64, f64, f64, f64) = (4.02e-4, 967e-6, -0.9, 0.45);
        let c1 = k * gm * (v_ss + v_t).abs() / 1.0e4;
        Self { k, gm1: gm, gm3: gm, c1, c2: 1e-9, v_ss, v_t, mode: Mode::Decremental, sign: SignConvention::PositiveBaseline }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiox-meminductor" => Some(Self::tiox_meminductor()),
            "zedboard" => Some(Self::zedboard()),
            "amoeba" => Some(Self::amoeba()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k", self.k),
            ("gm1", self.gm1),
            ("gm3", self.gm3),
            ("c1", self.c1),
            ("c2", self.c2),
            ("v_ss", self.v_ss),
            ("v_t", self.v_t),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(SimError::Parameter(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(SimError::Parameter("capacitances must be positive".into()));
        }
        if !(self.k > 0.0) {
            return Err(SimError::Parameter("K must be positive".into()));
        }
        if self.gm1 <= 0.0 || self.gm3 < 0.0 {
            return Err(SimError::Parameter("need gm1 > 0 and gm3 >= 0".into()));
        }
        Ok(())
    }

    fn sign_factor(&self) -> f64 {
        match self.sign {
            SignConvention::Literal => 1.0,
            SignConvention::PositiveBaseline if self.v_ss + self.v_t < 0.0 => -1.0,
            SignConvention::PositiveBaseline => 1.0,
        }
    }

    /// Inverse meminductance at `rho = 0` (1/H).
    pub fn baseline(&self) -> f64 {
        self.sign_factor() * self.k * self.gm1 * (self.v_ss + self.v_t) / self.c1
    }

    /// `d m_inv / d rho`.
    pub fn slope(&self) -> f64 {
        let mag = self.k * self.gm1 * self.gm1 * self.gm3 / (self.c1 * self.c1 * self.c2);
        let dir = match self.mode {
            Mode::Decremental => -1.0,
            Mode::Incremental => 1.0,
        };
        self.sign_factor() * dir * mag
    }

    /// Inverse meminductance for state `rho` (1/H).
    #[inline]
    pub fn m_inv(&self, rho: f64) -> f64 {
        self.baseline() + self.slope() * rho
    }

    /// Input current for flux `phi` and state `rho`.
    #[inline]
    pub fn current(&self, phi: f64, rho: f64) -> f64 {
        self.m_inv(rho) * phi
    }

    /// `2π C1 C2 / (K gm1 gm3 V_m)`; the optimum lobe occurs when it equals one drive period.
    pub fn time_constant(&self, v_m: f64) -> f64 {
        2.0 * PI * self.c1 * self.c2 / (self.k * self.gm1 * self.gm3 * v_m)
    }

    /// Peak-to-peak `m_inv` modulation in closed form, `K gm1 gm3 V_m / (ω C1 C2)`.
    pub fn modulation_closed_form(&self, v_m: f64, f: f64) -> f64 {
        self.k * self.gm1 * self.gm3 * v_m / (2.0 * PI * f * self.c1 * self.c2)
    }

    /// Peak-to-peak modulation implied by the state equations under a zero-mean
    /// sinusoidal drive, where `rho` swings by `±V_m / ω²`.
    pub fn modulation_from_state(&self, v_m: f64, f: f64) -> f64 {
        let omega = 2.0 * PI * f;
        2.0 * self.slope().abs() * v_m / (omega * omega)
    }

    /// Area of one lobe of the steady-state `(phi, i)` orbit under a zero-mean sine drive.
    pub fn lobe_area_closed_form(&self, v_m: f64, f: f64) -> f64 {
        let omega = 2.0 * PI * f;
        2.0 / 3.0 * self.slope().abs() * v_m.powi(3) / omega.powi(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeminductorState {
    /// Flux `∫v dt` (V·s).
    pub phi: f64,
    /// `∫phi dt` (V·s²).
    pub rho: f64,
    pub t: f64,
}

/// Output of one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: MeminductorState,
    pub i_in: f64,
    pub m_inv: f64,
}

/// Advance one RK4 step under the drive `v(t)`.
pub fn step_with<F: Fn(f64) -> f64>(
    state: &MeminductorState,
    drive: F,
    dt: f64,
    params: &MeminductorParams,
) -> Result<StepOutput> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::Domain(format!("time step must be positive, got {dt}")));
    }
    let MeminductorState { phi, rho, t } = *state;
    let (v1, v2, v4) = (drive(t), drive(t + 0.5 * dt), drive(t + dt));
    let k1r = phi;
    let k2r = phi + 0.5 * dt * v1;
    let k3r = phi + 0.5 * dt * v2;
    let k4r = phi + dt * v2;
    let next = MeminductorState {
        phi: phi + dt / 6.0 * (v1 + 4.0 * v2 + v4),
        rho: rho + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r),
        t: t + dt,
    };
    if !next.phi.is_finite() || !next.rho.is_finite() {
        return Err(SimError::Integration(format!("non-finite state at t = {}", next.t)));
    }
    let m_inv = params.m_inv(next.rho);
    Ok(StepOutput { state: next, i_in: m_inv * next.phi, m_inv })
}

/// Advance one RK4 step with a constant input voltage.
pub fn step(state: &MeminductorState, v_in: f64, dt: f64, params: &MeminductorParams) -> Result<StepOutput> {
    step_with(state, |_| v_in, dt, params)
}

/// Time series of a meminductor simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub v_in: Vec<f64>,
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub i_in: Vec<f64>,
    pub m_inv: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, v: f64, out: &StepOutput) {
        self.t.push(out.state.t);
        self.v_in.push(v);
        self.phi.push(out.state.phi);
        self.rho.push(out.state.rho);
        self.i_in.push(out.i_in);
        self.m_inv.push(out.m_inv);
    }

    /// CSV with header `t,v_in,phi,rho,i_in,m_inv`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,v_in,phi,rho,i_in,m_inv")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.t[k], self.v_in[k], self.phi[k], self.rho[k], self.i_in[k], self.m_inv[k]
            )?;
        }
        Ok(())
    }
}

/// Sinusoidal drive `V_m sin(2π f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineDrive {
    pub v_m: f64,
    pub f: f64,
}

impl SineDrive {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_m.is_finite() && self.f > 0.0 && self.f.is_finite()) {
            return Err(SimError::Parameter(format!("invalid sine drive {self:?}")));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f
    }

    #[inline]
    pub fn voltage(&self, t: f64) -> f64 {
        self.v_m * (self.omega() * t).sin()
    }

    /// Initial state whose flux and `rho` are both zero-mean under this drive.
    pub fn initial_state(&self) -> MeminductorState {
        MeminductorState { phi: -self.v_m / self.omega(), rho: 0.0, t: 0.0 }
    }
}

/// Integrate one element under a sine drive for `cycles * steps_per_cycle` steps.
pub fn simulate_sine(params: &MeminductorParams, drive: SineDrive, cycles: usize, steps_per_cycle: usize) -> Result<Trace> {
    params.validate()?;
    drive.validate()?;
    let dt = 1.0 / (drive.f * steps_per_cycle as f64);
    let mut state = drive.initial_state();
    let mut trace = Trace::default();
    let first = StepOutput { state, i_in: params.current(state.phi, state.rho), m_inv: params.m_inv(state.rho) };
    trace.push(drive.voltage(0.0), &first);
    for n in 1..=cycles * steps_per_cycle {
        let out = step_with(&state, |t| drive.voltage(t), dt, params)?;
        // Re-anchor time to the step index so long runs do not accumulate rounding.
        state = MeminductorState { t: n as f64 * dt, ..out.state };
        trace.push(drive.voltage(state.t), &StepOutput { state, ..out });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gm_zero_at_cutoff_and_linear_in_bias() {
        let p = OtaParams { k: 4.02e-4, v_b: -0.9 + 0.9, v_ss: -0.9, v_t: 0.45 };
        assert_eq!(ota_gm(&p), 0.0);
        let hi = OtaParams { v_b: p.v_b + 0.1, ..p };
        assert!((ota_gm(&hi) - ota_gm(&p) - p.k * 0.1 / SQRT_2).abs() < 1e-18);
        assert!(ota_gm_checked(&p).is_err());
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let p = MeminductorParams::tiox_meminductor();
        let mut s = MeminductorState::default();
        for _ in 0..1000 {
            let out = step(&s, 0.0, 1e-9, &p).unwrap();
            assert_eq!((out.state.phi, out.state.rho, out.i_in), (0.0, 0.0, 0.0));
            s = out.state;
        }
    }

    #[test]
    fn current_vanishes_with_flux() {
        let p = MeminductorParams::tiox_meminductor();
        for rho in [-1e-12, 0.0, 3e-14, 1e-9] {
            assert_eq!(p.current(0.0, rho), 0.0);
        }
    }

    #[test]
    fn incremental_and_decremental_are_mirror_images() {
        let dec = MeminductorParams::zedboard();
        let inc = MeminductorParams { mode: Mode::Incremental, ..dec.clone() };
        let sum = 2.0 * dec.k * dec.gm1 * (dec.v_ss + dec.v_t) / dec.c1;
        for rho in [-2e-16, -1e-17, 0.0, 5e-17, 3e-16] {
            let got = inc.m_inv(rho) + dec.m_inv(rho);
            assert!((got - sum).abs() <= 1e-12 * sum.abs());
        }
    }

    #[test]
    fn preset_sits_on_its_design_point() {
        let p = MeminductorParams::tiox_meminductor();
        let f = 3.0e6;
        assert!((p.time_constant(0.5) * f - 1.0).abs() < 1e-12);
        assert!((p.baseline().abs() - 1.0).abs() < 1e-12);
        let printed = p.modulation_closed_form(0.5, f);
        let derived = p.modulation_from_state(0.5, f);
        assert!((printed - derived).abs() <= 1e-12 * printed);
    }

    #[test]
    fn positive_baseline_flips_sign_only() {
        let lit = MeminductorParams::tiox_meminductor();
        let pos = MeminductorParams { sign: SignConvention::PositiveBaseline, ..lit.clone() };
        assert!(lit.baseline() < 0.0 && pos.baseline() > 0.0);
        assert_eq!(lit.m_inv(1e-15), -pos.m_inv(1e-15));
    }

    #[test]
    fn rk4_integrates_polynomial_drive_exactly() {
        // v = t: phi = t²/2, rho = t³/6 are integrated exactly by RK4.
        let p = MeminductorParams::tiox_meminductor();
        let mut s = MeminductorState::default();
        for _ in 0..100 {
            s = step_with(&s, |t| t, 0.01, &p).unwrap().state;
        }
        assert!((s.phi - 0.5).abs() < 1e-12);
        assert!((s.rho - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_step() {
        let p = MeminductorParams::tiox_meminductor();
        assert!(step(&MeminductorState::default(), 0.1, 0.0, &p).is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let p = MeminductorParams::tiox_meminductor();
        let tr = simulate_sine(&p, SineDrive { v_m: 0.5, f: 3e6 }, 1, 10).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,v_in,phi,rho,i_in,m_inv");
        assert_eq!(text.lines().count(), 12);
    }
}
