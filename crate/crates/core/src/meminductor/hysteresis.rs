//! Steady-state fingerprints of the pinched `(phi, i)` hysteresis loop.

use std::io::Write;

use super::{simulate_sine, MeminductorParams, SineDrive, Trace};
use crate::error::{Result, SimError};

/// Fractional change of lobe area allowed between the last two cycles.
pub const STEADY_STATE_TOL: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Hysteresis {
    pub trace: Trace,
    /// Shoelace area of the positive-flux lobe over the final cycle.
    pub lobe_area: f64,
    pub previous_lobe_area: f64,
    /// Largest `|i|` at a flux zero crossing, relative to the cycle's peak `|i|`.
    pub pinch_residual: f64,
    /// Peak-to-peak `m_inv` over the final cycle.
    pub m_inv_amplitude: f64,
    /// Mean flux over the final cycle, removed before the lobe analysis.
    pub flux_dc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleMetrics {
    pub lobe_area: f64,
    pub pinch_residual: f64,
}

/// Simulate `cycles` periods of a sine drive and measure the final cycle.
pub fn hysteresis_trace(
    params: &MeminductorParams,
    v_m: f64,
    f: f64,
    cycles: usize,
    steps_per_cycle: usize,
) -> Result<Hysteresis> {
    if cycles < 4 {
        return Err(SimError::Parameter(format!("need at least 4 cycles, got {cycles}")));
    }
    if steps_per_cycle < 1000 {
        return Err(SimError::Parameter(format!("need at least 1000 steps per cycle, got {steps_per_cycle}")));
    }
    let trace = simulate_sine(params, SineDrive { v_m, f }, cycles, steps_per_cycle)?;
    let n = steps_per_cycle;
    let last = (cycles - 1) * n..=cycles * n;
    let prev = (cycles - 2) * n..=(cycles - 1) * n;
    let dc_of = |r: &std::ops::RangeInclusive<usize>| {
        let s = &trace.phi[*r.start()..*r.end()];
        s.iter().sum::<f64>() / s.len() as f64
    };
    let flux_dc = dc_of(&last);
    let cur = cycle_metrics(&trace.phi[last.clone()], &trace.i_in[last.clone()], flux_dc)?;
    let before = cycle_metrics(&trace.phi[prev.clone()], &trace.i_in[prev.clone()], dc_of(&prev))?;
    let change = (cur.lobe_area - before.lobe_area).abs() / cur.lobe_area.max(f64::MIN_POSITIVE);
    if change > STEADY_STATE_TOL {
        return Err(SimError::SteadyState(format!(
            "lobe area changed by {:.3}% between the last two cycles",
            100.0 * change
        )));
    }
    let m = &trace.m_inv[last];
    let (lo, hi) = m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(Hysteresis {
        lobe_area: cur.lobe_area,
        previous_lobe_area: before.lobe_area,
        pinch_residual: cur.pinch_residual,
        m_inv_amplitude: hi - lo,
        flux_dc,
        trace,
    })
}

/// Lobe area and pinch residual of one cycle of samples.
pub fn cycle_metrics(phi: &[f64], i: &[f64], flux_dc: f64) -> Result<CycleMetrics> {
    if phi.len() != i.len() || phi.len() < 3 {
        return Err(SimError::Shape("cycle needs matching phi/i samples".into()));
    }
    let x: Vec<f64> = phi.iter().map(|p| p - flux_dc).collect();
    let peak = i.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let crossing = |k: usize| {
        let w = x[k] / (x[k] - x[k + 1]);
        i[k] + w * (i[k + 1] - i[k])
    };
    let mut pinch = 0.0f64;
    let mut up = None;
    let mut lobe = None;
    for k in 0..x.len() - 1 {
        let (a, b) = (x[k], x[k + 1]);
        let sign_change = (a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0);
        if !sign_change || a == b {
            continue;
        }
        pinch = pinch.max(crossing(k).abs());
        if a < 0.0 {
            up = Some(k);
        } else if let (Some(start), None) = (up, lobe) {
            lobe = Some((start, k));
        }
    }
    let (start, end) = lobe.ok_or_else(|| SimError::SteadyState("no complete flux lobe in the final cycle".into()))?;
    let mut poly = Vec::with_capacity(end - start + 2);
    poly.push((0.0, crossing(start)));
    poly.extend((start + 1..=end).map(|k| (x[k], i[k])));
    poly.push((0.0, crossing(end)));
    Ok(CycleMetrics {
        lobe_area: shoelace(&poly),
        pinch_residual: if peak > 0.0 { pinch / peak } else { 0.0 },
    })
}

/// Absolute area of a closed polygon.
pub fn shoelace(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|k| {
            let (x0, y0) = points[k];
            let (x1, y1) = points[(k + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    0.5 * twice.abs()
}

/// One row of a parameter sweep summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub sweep_param: f64,
    pub lobe_area: f64,
    pub pinch_residual: f64,
    pub m_inv_amplitude: f64,
}

impl From<(f64, &Hysteresis)> for SweepRow {
    fn from((sweep_param, h): (f64, &Hysteresis)) -> Self {
        Self { sweep_param, lobe_area: h.lobe_area, pinch_residual: h.pinch_residual, m_inv_amplitude: h.m_inv_amplitude }
    }
}

/// CSV with header `sweep_param,lobe_area,pinch_residual,m_inv_amplitude`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "sweep_param,lobe_area,pinch_residual,m_inv_amplitude")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.sweep_param, r.lobe_area, r.pinch_residual, r.m_inv_amplitude)?;
    }
    Ok(())
}
