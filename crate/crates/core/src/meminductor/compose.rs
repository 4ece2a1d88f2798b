//! Series and parallel combinations of meminductors under a common drive.
//!
//! Parallel elements share the terminal flux and their currents add. Series
//! elements carry one current `i`; element `k` holds flux `i / m_k`, so the
//! terminal flux fixes `i = phi_total / Σ 1/m_k` in closed form.

use serde::{Deserialize, Serialize};

use super::{simulate_sine, MeminductorParams, SineDrive, Trace};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Series,
    Parallel,
}

/// Terminal trace of `elements` connected in `topology`.
///
/// `phi` and `i_in` are the terminal flux and current; `rho` and `m_inv`
/// report the first element's state.
pub fn compose(
    elements: &[MeminductorParams],
    topology: Topology,
    drive: SineDrive,
    cycles: usize,
    steps_per_cycle: usize,
) -> Result<Trace> {
    let first = elements.first().ok_or_else(|| SimError::Parameter("composition needs at least one element".into()))?;
    if elements.len() == 1 {
        return simulate_sine(first, drive, cycles, steps_per_cycle);
    }
    for e in elements {
        e.validate()?;
    }
    drive.validate()?;
    match topology {
        Topology::Parallel => {
            // Every element sees the same flux, so one integration suffices.
            let mut trace = simulate_sine(first, drive, cycles, steps_per_cycle)?;
            for k in 0..trace.len() {
                let (phi, rho) = (trace.phi[k], trace.rho[k]);
                trace.i_in[k] = elements.iter().map(|e| e.current(phi, rho)).sum();
            }
            Ok(trace)
        }
        Topology::Series => series(elements, drive, cycles, steps_per_cycle),
    }
}

fn series_current(elements: &[MeminductorParams], phi: f64, rho: &[f64]) -> Result<f64> {
    let mut inv_sum = 0.0;
    for (e, &r) in elements.iter().zip(rho) {
        let m = e.m_inv(r);
        if m == 0.0 || !m.is_finite() {
            return Err(SimError::Integration("series element reached zero inverse meminductance".into()));
        }
        inv_sum += 1.0 / m;
    }
    Ok(phi / inv_sum)
}

fn series(elements: &[MeminductorParams], drive: SineDrive, cycles: usize, steps_per_cycle: usize) -> Result<Trace> {
    let n = elements.len();
    let dt = 1.0 / (drive.f * steps_per_cycle as f64);
    let init = drive.initial_state();
    let mut phi = init.phi;
    // Each element starts with its share of the terminal flux and zero rho.
    let mut rho = vec![0.0; n];
    let deriv = |phi: f64, rho: &[f64], out: &mut [f64]| -> Result<()> {
        let i = series_current(elements, phi, rho)?;
        for ((o, e), &r) in out.iter_mut().zip(elements).zip(rho) {
            *o = i / e.m_inv(r);
        }
        Ok(())
    };
    let mut trace = Trace::default();
    let record = |trace: &mut Trace, t: f64, phi: f64, rho: &[f64]| -> Result<()> {
        trace.t.push(t);
        trace.v_in.push(drive.voltage(t));
        trace.phi.push(phi);
        trace.rho.push(rho[0]);
        trace.i_in.push(series_current(elements, phi, rho)?);
        trace.m_inv.push(elements[0].m_inv(rho[0]));
        Ok(())
    };
    record(&mut trace, 0.0, phi, &rho)?;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..cycles * steps_per_cycle {
        let t = step as f64 * dt;
        let (v1, v2, v4) = (drive.voltage(t), drive.voltage(t + 0.5 * dt), drive.voltage(t + dt));
        deriv(phi, &rho, &mut k1)?;
        tmp.iter_mut().zip(&rho).zip(&k1).for_each(|((o, r), k)| *o = r + 0.5 * dt * k);
        deriv(phi + 0.5 * dt * v1, &tmp, &mut k2)?;
        tmp.iter_mut().zip(&rho).zip(&k2).for_each(|((o, r), k)| *o = r + 0.5 * dt * k);
        deriv(phi + 0.5 * dt * v2, &tmp, &mut k3)?;
        tmp.iter_mut().zip(&rho).zip(&k3).for_each(|((o, r), k)| *o = r + dt * k);
        deriv(phi + dt * v2, &tmp, &mut k4)?;
        for j in 0..n {
            rho[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        phi += dt / 6.0 * (v1 + 4.0 * v2 + v4);
        if !phi.is_finite() || rho.iter().any(|r| !r.is_finite()) {
            return Err(SimError::Integration(format!("non-finite series state at t = {}", t + dt)));
        }
        record(&mut trace, (step + 1) as f64 * dt, phi, &rho)?;
    }
    Ok(trace)
}

/// Sample indices of the last `steps` samples where `|phi| > frac * max|phi|`.
pub fn matched_flux_samples(trace: &Trace, steps: usize, frac: f64) -> Vec<usize> {
    let start = trace.len().saturating_sub(steps);
    let peak = trace.phi[start..].iter().fold(0.0f64, |m, p| m.max(p.abs()));
    (start..trace.len()).filter(|&k| trace.phi[k].abs() > frac * peak).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive() -> SineDrive {
        SineDrive { v_m: 0.5, f: 3e6 }
    }

    #[test]
    fn single_element_equals_plain_simulation() {
        let p = MeminductorParams::tiox_meminductor();
        let plain = simulate_sine(&p, drive(), 4, 1000).unwrap();
        for topo in [Topology::Series, Topology::Parallel] {
            assert_eq!(compose(std::slice::from_ref(&p), topo, drive(), 4, 1000).unwrap(), plain);
        }
    }

    #[test]
    fn ordering_at_matched_flux() {
        let p = MeminductorParams::tiox_meminductor();
        let pair = vec![p.clone(), p.clone()];
        let single = compose(std::slice::from_ref(&p), Topology::Series, drive(), 4, 1000).unwrap();
        let par = compose(&pair, Topology::Parallel, drive(), 4, 1000).unwrap();
        let ser = compose(&pair, Topology::Series, drive(), 4, 1000).unwrap();
        let idx = matched_flux_samples(&single, 1000, 0.1);
        assert!(!idx.is_empty());
        for k in idx {
            assert!((par.phi[k] - single.phi[k]).abs() <= 1e-12 * single.phi[k].abs());
            assert!((ser.phi[k] - single.phi[k]).abs() <= 1e-12 * single.phi[k].abs());
            let (a, b, c) = (par.i_in[k].abs(), single.i_in[k].abs(), ser.i_in[k].abs());
            assert!(a > b && b > c, "k={k}: {a} {b} {c}");
        }
    }

    #[test]
    fn identical_series_pair_halves_current() {
        let p = MeminductorParams::tiox_meminductor();
        let pair = vec![p.clone(), p.clone()];
        let ser = compose(&pair, Topology::Series, drive(), 4, 1000).unwrap();
        // With identical elements each takes half the flux, so rho grows at half rate.
        for k in (0..ser.len()).step_by(97) {
            let want = p.m_inv(ser.rho[k]) * ser.phi[k] / 2.0;
            assert!((ser.i_in[k] - want).abs() <= 1e-12 * want.abs().max(1e-30));
        }
    }

    #[test]
    fn empty_composition_rejected() {
        assert!(compose(&[], Topology::Parallel, drive(), 4, 1000).is_err());
    }
}
