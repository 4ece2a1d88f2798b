//! Series R - meminductor - C loop whose capacitor voltage mimics the delayed
//! response of an amoeba to periodic temperature dips.
//!
//! State: meminductor flux `phi`, its integral `rho`, capacitor voltage `v_c`.
//!
//! ```text
//! dphi/dt = v_in - R i - v_c
//! dv_c/dt = i / C
//! drho/dt = phi,     i = m_inv(rho) * phi
//! ```

use std::io::Write;

use super::MeminductorParams;
use crate::error::{Result, SimError};

/// Input sampled at a fixed step; values between samples are interpolated linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn constant(level: f64, dt: f64, n: usize) -> Self {
        Self { dt, samples: vec![level; n] }
    }

    /// Baseline level with `count` rectangular dips of `depth`, one per `period`.
    pub fn dip_train(baseline: f64, depth: f64, period: f64, width: f64, count: usize, dt: f64) -> Self {
        let n = ((count as f64 * period) / dt).round() as usize + 1;
        let samples = (0..n)
            .map(|k| {
                let phase = (k as f64 * dt) % period;
                // Dips start half a period in so the circuit settles first.
                if phase >= 0.5 * period && phase < 0.5 * period + width {
                    baseline - depth
                } else {
                    baseline
                }
            })
            .collect();
        Self { dt, samples }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmoebaTrace {
    pub t: Vec<f64>,
    pub v_in: Vec<f64>,
    pub v_out: Vec<f64>,
    pub i: Vec<f64>,
}

impl AmoebaTrace {
    /// CSV with header `t,v_in,v_out,i`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,v_in,v_out,i")?;
        for k in 0..self.t.len() {
            writeln!(out, "{},{},{},{}", self.t[k], self.v_in[k], self.v_out[k], self.i[k])?;
        }
        Ok(())
    }
}

/// Bound on `|v_c|` relative to the input swing before declaring a blow-up.
const BLOWUP_FACTOR: f64 = 1e3;

/// Integrate the loop from rest over every sample interval of `input`.
pub fn simulate_amoeba(params: &MeminductorParams, r: f64, c: f64, input: &Waveform) -> Result<AmoebaTrace> {
    params.validate()?;
    if !(r >= 0.0 && r.is_finite() && c > 0.0 && c.is_finite()) {
        return Err(SimError::Parameter(format!("need R >= 0 and C > 0, got R={r} C={c}")));
    }
    if !(input.dt > 0.0) || input.samples.is_empty() || input.samples.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Parameter("waveform needs dt > 0 and finite samples".into()));
    }
    let dt = input.dt;
    let swing = input.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let limit = BLOWUP_FACTOR * swing.max(f64::MIN_POSITIVE);
    let f = |v: f64, s: [f64; 3]| -> [f64; 3] {
        let [phi, v_c, rho] = s;
        let i = params.m_inv(rho) * phi;
        [v - r * i - v_c, i / c, phi]
    };
    let mut s = [0.0f64; 3];
    let n = input.samples.len();
    let mut out = AmoebaTrace {
        t: Vec::with_capacity(n),
        v_in: Vec::with_capacity(n),
        v_out: Vec::with_capacity(n),
        i: Vec::with_capacity(n),
    };
    let record = |out: &mut AmoebaTrace, k: usize, s: &[f64; 3]| {
        out.t.push(k as f64 * dt);
        out.v_in.push(input.samples[k]);
        out.v_out.push(s[1]);
        out.i.push(params.m_inv(s[2]) * s[0]);
    };
    record(&mut out, 0, &s);
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    for k in 0..n - 1 {
        let (v0, v1) = (input.samples[k], input.samples[k + 1]);
        let vm = 0.5 * (v0 + v1);
        let k1 = f(v0, s);
        let k2 = f(vm, add(s, k1, 0.5 * dt));
        let k3 = f(vm, add(s, k2, 0.5 * dt));
        let k4 = f(v1, add(s, k3, dt));
        for j in 0..3 {
            s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if s.iter().any(|x| !x.is_finite()) || s[1].abs() > limit {
            return Err(SimError::Integration(format!(
                "capacitor voltage diverged at t = {:e} s; reduce dt",
                (k + 1) as f64 * dt
            )));
        }
        record(&mut out, k + 1, &s);
    }
    Ok(out)
}

/// Capacitor voltage of a series RLC loop after a step of height `v` at `t = 0`.
pub fn rlc_step_response(v: f64, r: f64, l: f64, c: f64, t: f64) -> f64 {
    let alpha = r / (2.0 * l);
    let w0_sq = 1.0 / (l * c);
    let wd_sq = w0_sq - alpha * alpha;
    let decay = (-alpha * t).exp();
    if wd_sq > 0.0 {
        let wd = wd_sq.sqrt();
        v * (1.0 - decay * ((wd * t).cos() + alpha / wd * (wd * t).sin()))
    } else if wd_sq == 0.0 {
        v * (1.0 - decay * (1.0 + alpha * t))
    } else {
        let g = (-wd_sq).sqrt();
        v * (1.0 - decay * ((g * t).cosh() + alpha / g * (g * t).sinh()))
    }
}

/// Lag (in samples) maximising the cross-correlation of the mean-removed signals,
/// searched over `0..=max_lag` in both directions; positive means `b` trails `a`.
pub fn peak_lag(a: &[f64], b: &[f64], max_lag: usize) -> isize {
    let n = a.len().min(b.len());
    let mean = |x: &[f64]| x[..n].iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let corr = |lag: isize| -> f64 {
        (0..n)
            .filter_map(|k| {
                let j = k as isize + lag;
                (j >= 0 && (j as usize) < n).then(|| (a[k] - ma) * (b[j as usize] - mb))
            })
            .sum()
    };
    let max_lag = max_lag.min(n.saturating_sub(1)) as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        let c = corr(lag);
        if c > best.1 {
            best = (lag, c);
        }
    }
    best.0
}
