//! Programmable analog devices (memristor and memcapacitor cells).
//!
//! A device's analog state `x` moves along a saturating exponential curve as
//! programming pulses are applied. Potentiation (LTP) starts at `x_min` and
//! depression (LTD) starts at `x_max`; both curves share the normalization
//! `B = (x_max - x_min) / (1 - exp(-p_max / a))`, which pins the endpoints
//! exactly. Smaller `a` means a more nonlinear update.
//!
//! Non-idealities modelled here:
//! * device-to-device (D2D) spread of the nonlinearity factor `a`,
//! * cycle-to-cycle (C2C) Gaussian noise on every programming pulse,
//! * stuck devices that never leave their frozen state.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceKind {
    /// State is a conductance in siemens.
    Memristor,
    /// State is a capacitance in farads.
    Memcapacitor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Potentiation, moving from `x_min` towards `x_max`.
    Ltp,
    /// Depression, moving from `x_max` towards `x_min`.
    Ltd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub kind: DeviceKind,
    pub x_min: f64,
    pub x_max: f64,
    /// Pulses needed to traverse the full range.
    pub p_max: u32,
    pub a_ltp: f64,
    pub a_ltd: f64,
    /// Relative standard deviation of `a` across devices.
    #[serde(default)]
    pub sigma_d2d: f64,
    /// Per-pulse noise, as a fraction of `x_max - x_min`.
    #[serde(default)]
    pub sigma_c2c: f64,
    #[serde(default)]
    pub stuck_prob: f64,
}

impl DeviceParams {
    /// TiOx memristor: 10 kOhm on-state, 25 MOhm off-state, 32 conductance states.
    pub fn tiox_memristor() -> Self {
        Self {
            kind: DeviceKind::Memristor,
            x_min: 1.0 / 25.0e6,
            x_max: 1.0 / 1.0e4,
            p_max: 31,
            a_ltp: 16.0,
            a_ltd: 16.0,
            sigma_d2d: 0.0,
            sigma_c2c: 0.0,
            stuck_prob: 0.0,
        }
    }

    /// Si memcapacitor: 2 pF to 30 pF, 32 capacitance states.
    pub fn si_memcapacitor() -> Self {
        Self {
            kind: DeviceKind::Memcapacitor,
            x_min: 2.0e-12,
            x_max: 30.0e-12,
            p_max: 31,
            a_ltp: 16.0,
            a_ltd: 16.0,
            sigma_d2d: 0.0,
            sigma_c2c: 0.0,
            stuck_prob: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiox-memristor" => Some(Self::tiox_memristor()),
            "si-memcapacitor" => Some(Self::si_memcapacitor()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("x_min", self.x_min),
            ("x_max", self.x_max),
            ("a_ltp", self.a_ltp),
            ("a_ltd", self.a_ltd),
            ("sigma_d2d", self.sigma_d2d),
            ("sigma_c2c", self.sigma_c2c),
            ("stuck_prob", self.stuck_prob),
        ] {
            if !v.is_finite() {
                return Err(SimError::Parameter(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.x_min > 0.0 && self.x_max > self.x_min) {
            return Err(SimError::Parameter(format!(
                "need x_max > x_min > 0, got x_min={} x_max={}",
                self.x_min, self.x_max
            )));
        }
        if self.p_max < 1 {
            return Err(SimError::Parameter("p_max must be at least 1".into()));
        }
        if self.a_ltp <= 0.0 || self.a_ltd <= 0.0 {
            return Err(SimError::Parameter("nonlinearity factors must be positive".into()));
        }
        if self.sigma_d2d < 0.0 || self.sigma_c2c < 0.0 {
            return Err(SimError::Parameter("variation sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.stuck_prob) {
            return Err(SimError::Parameter(format!(
                "stuck_prob must lie in [0, 1], got {}",
                self.stuck_prob
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn range(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Nonlinearity factor used for `direction` by a device whose LTP factor is `a_i`.
    #[inline]
    pub fn factor_for(&self, direction: Direction, a_i: f64) -> f64 {
        match direction {
            Direction::Ltp => a_i,
            Direction::Ltd => a_i * (self.a_ltd / self.a_ltp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub x: f64,
    /// This device's sampled LTP nonlinearity factor.
    pub a_i: f64,
    pub stuck: bool,
    pub stuck_value: f64,
}

impl DeviceState {
    /// A healthy device at `x_min` with the nominal nonlinearity.
    pub fn fresh(params: &DeviceParams) -> Self {
        Self {
            x: params.x_min,
            a_i: params.a_ltp,
            stuck: false,
            stuck_value: params.x_min,
        }
    }
}

fn check_factor(a: f64) -> Result<()> {
    ensure_finite("nonlinearity factor", a)?;
    if a <= 0.0 {
        return Err(SimError::Parameter(format!("nonlinearity factor must be > 0, got {a}")));
    }
    Ok(())
}

/// Analog state reached after `p` pulses along `direction`.
///
/// `p` counts pulses from the starting end of the curve (`x_min` for LTP,
/// `x_max` for LTD); fractional positions are allowed.
pub fn weight_update_curve(p: f64, direction: Direction, params: &DeviceParams, a: f64) -> Result<f64> {
    ensure_finite("pulse index", p)?;
    check_factor(a)?;
    let p_max = f64::from(params.p_max);
    if !(0.0..=p_max).contains(&p) {
        return Err(SimError::Domain(format!("pulse index {p} outside [0, {p_max}]")));
    }
    let b = params.range() / -(-p_max / a).exp_m1();
    let rise = -(-p / a).exp_m1();
    let x = match direction {
        Direction::Ltp => b * rise + params.x_min,
        Direction::Ltd => params.x_max - b * rise,
    };
    Ok(x.clamp(params.x_min, params.x_max))
}

/// Pulse position at which the curve passes through `x`.
pub fn invert_curve(x: f64, direction: Direction, params: &DeviceParams, a: f64) -> Result<f64> {
    ensure_finite("analog state", x)?;
    check_factor(a)?;
    if x < params.x_min || x > params.x_max {
        return Err(SimError::Domain(format!(
            "state {x} outside [{}, {}]",
            params.x_min, params.x_max
        )));
    }
    let p_max = f64::from(params.p_max);
    let b = params.range() / -(-p_max / a).exp_m1();
    let travelled = match direction {
        Direction::Ltp => x - params.x_min,
        Direction::Ltd => params.x_max - x,
    };
    let p = -a * (-travelled / b).ln_1p();
    Ok(p.clamp(0.0, p_max))
}

/// Apply `n` programming pulses: potentiation for `n > 0`, depression for `n < 0`.
pub fn apply_pulses<R: Rng + ?Sized>(
    state: &DeviceState,
    n: i64,
    params: &DeviceParams,
    rng: &mut R,
) -> Result<DeviceState> {
    if state.stuck || n == 0 {
        return Ok(*state);
    }
    let count = n.unsigned_abs();
    if count > u64::from(params.p_max) {
        return Err(SimError::Domain(format!(
            "pulse count {n} exceeds p_max {}",
            params.p_max
        )));
    }
    let direction = if n > 0 { Direction::Ltp } else { Direction::Ltd };
    let a = params.factor_for(direction, state.a_i);
    let x0 = state.x.clamp(params.x_min, params.x_max);
    let p = invert_curve(x0, direction, params, a)?;
    let p_next = (p + count as f64).min(f64::from(params.p_max));
    let mut x = weight_update_curve(p_next, direction, params, a)?;
    if params.sigma_c2c > 0.0 {
        // Independent per-pulse increments sum to one Gaussian with variance |n| sigma^2.
        let z: f64 = StandardNormal.sample(rng);
        x += z * params.sigma_c2c * params.range() * (count as f64).sqrt();
    }
    Ok(DeviceState {
        x: x.clamp(params.x_min, params.x_max),
        ..*state
    })
}

/// Draw a fresh array of devices with D2D spread and stuck faults.
pub fn sample_population<R: Rng + ?Sized>(
    params: &DeviceParams,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Array2<DeviceState>> {
    params.validate()?;
    if rows == 0 || cols == 0 {
        return Err(SimError::Shape(format!("population must be non-empty, got {rows}x{cols}")));
    }
    let spread = params.sigma_d2d * params.a_ltp;
    let normal = if spread > 0.0 {
        Some(Normal::new(params.a_ltp, spread).map_err(|e| SimError::Parameter(e.to_string()))?)
    } else {
        None
    };
    let mut out = Array2::from_elem((rows, cols), DeviceState::fresh(params));
    for dev in out.iter_mut() {
        if let Some(normal) = &normal {
            // Truncate to a > 0 by resampling; the nominal mean keeps rejections rare.
            let mut a = normal.sample(rng);
            let mut tries = 0;
            while a <= 0.0 {
                a = normal.sample(rng);
                tries += 1;
                if tries > 1000 {
                    a = f64::MIN_POSITIVE.max(params.a_ltp * 1e-6);
                    break;
                }
            }
            dev.a_i = a;
        }
        if params.stuck_prob > 0.0 && rng.random::<f64>() < params.stuck_prob {
            dev.stuck = true;
            // Frozen at whichever endpoint is nearer the creation-time state.
            dev.stuck_value = if dev.x - params.x_min <= params.x_max - dev.x {
                params.x_min
            } else {
                params.x_max
            };
            dev.x = dev.stuck_value;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> DeviceParams {
        DeviceParams::tiox_memristor()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn curve_endpoints() {
        let p = params();
        let pm = f64::from(p.p_max);
        assert_eq!(weight_update_curve(0.0, Direction::Ltp, &p, p.a_ltp).unwrap(), p.x_min);
        assert!(rel(weight_update_curve(pm, Direction::Ltp, &p, p.a_ltp).unwrap(), p.x_max) <= 1e-12);
        assert_eq!(weight_update_curve(0.0, Direction::Ltd, &p, p.a_ltd).unwrap(), p.x_max);
        assert!(rel(weight_update_curve(pm, Direction::Ltd, &p, p.a_ltd).unwrap(), p.x_min) <= 1e-12);
    }

    #[test]
    fn linear_limit_midpoint() {
        let p = params();
        let pm = f64::from(p.p_max);
        let x = weight_update_curve(pm / 2.0, Direction::Ltp, &p, 1e6 * pm).unwrap();
        let mid = 0.5 * (p.x_min + p.x_max);
        assert!(rel(x, mid) < 1e-3, "{x} vs {mid}");
    }

    #[test]
    fn curve_rejects_bad_inputs() {
        let p = params();
        assert!(matches!(
            weight_update_curve(f64::NAN, Direction::Ltp, &p, 1.0),
            Err(SimError::Domain(_))
        ));
        assert!(matches!(
            weight_update_curve(1.0, Direction::Ltp, &p, 0.0),
            Err(SimError::Parameter(_))
        ));
        assert!(matches!(
            invert_curve(p.x_max * 2.0, Direction::Ltp, &p, 1.0),
            Err(SimError::Domain(_))
        ));
    }

    #[test]
    fn invert_endpoints() {
        let p = params();
        assert_eq!(invert_curve(p.x_min, Direction::Ltp, &p, p.a_ltp).unwrap(), 0.0);
        let top = invert_curve(p.x_max, Direction::Ltp, &p, p.a_ltp).unwrap();
        assert!((top - f64::from(p.p_max)).abs() < 1e-9);
    }

    #[test]
    fn invert_round_trip_random() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let pulses = rng.random::<f64>() * f64::from(p.p_max);
            for dir in [Direction::Ltp, Direction::Ltd] {
                let x = weight_update_curve(pulses, dir, &p, p.a_ltp).unwrap();
                let back = invert_curve(x, dir, &p, p.a_ltp).unwrap();
                let x2 = weight_update_curve(back, dir, &p, p.a_ltp).unwrap();
                assert!(rel(x2, x) < 1e-10);
                assert!((back - pulses).abs() < 1e-6 * f64::from(p.p_max));
            }
        }
    }

    #[test]
    fn zero_pulses_is_identity() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DeviceState { x: 3.3e-5, ..DeviceState::fresh(&p) };
        assert_eq!(apply_pulses(&s, 0, &p, &mut rng).unwrap(), s);
    }

    #[test]
    fn full_sweep_reaches_top() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = apply_pulses(&DeviceState::fresh(&p), i64::from(p.p_max), &p, &mut rng).unwrap();
        assert_eq!(s.x, p.x_max);
    }

    #[test]
    fn too_many_pulses_rejected() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = apply_pulses(&DeviceState::fresh(&p), i64::from(p.p_max) + 1, &p, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn noiseless_pulses_follow_curve_composition() {
        // Oracle: track the pulse position directly and evaluate the curve once.
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut state = DeviceState::fresh(&p);
            let mut pos = 0.0f64;
            let mut dir = Direction::Ltp;
            for _ in 0..20 {
                let n: i64 = rng.random_range(-8..=8);
                state = apply_pulses(&state, n, &p, &mut rng).unwrap();
                if n == 0 {
                    continue;
                }
                let new_dir = if n > 0 { Direction::Ltp } else { Direction::Ltd };
                if new_dir != dir {
                    // Position on the other curve that yields the same state.
                    let x = weight_update_curve(pos, dir, &p, p.a_ltp).unwrap();
                    pos = invert_curve(x, new_dir, &p, p.a_ltp).unwrap();
                    dir = new_dir;
                }
                pos = (pos + n.unsigned_abs() as f64).min(f64::from(p.p_max));
                let expected = weight_update_curve(pos, dir, &p, p.a_ltp).unwrap();
                assert!(rel(state.x, expected) < 1e-9, "{} vs {}", state.x, expected);
            }
        }
    }

    #[test]
    fn stuck_devices_never_move() {
        let p = DeviceParams { stuck_prob: 1.0, sigma_c2c: 0.05, ..params() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop = sample_population(&p, 4, 4, &mut rng).unwrap();
        for dev in pop.iter() {
            assert!(dev.stuck);
            let mut s = *dev;
            for n in [5, -3, 31, -31, 2] {
                s = apply_pulses(&s, n, &p, &mut rng).unwrap();
                assert_eq!(s.x, dev.stuck_value);
            }
        }
    }

    #[test]
    fn population_without_variation() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pop = sample_population(&p, 16, 16, &mut rng).unwrap();
        assert!(pop.iter().all(|d| d.a_i == p.a_ltp && !d.stuck && d.x == p.x_min));
    }

    #[test]
    fn population_d2d_spread() {
        let p = DeviceParams { sigma_d2d: 0.1, ..params() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pop = sample_population(&p, 128, 128, &mut rng).unwrap();
        let n = pop.len() as f64;
        let mean = pop.iter().map(|d| d.a_i).sum::<f64>() / n;
        let var = pop.iter().map(|d| (d.a_i - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let nominal = 0.1 * p.a_ltp;
        assert!(rel(var.sqrt(), nominal) < 0.1, "std {} vs {}", var.sqrt(), nominal);
        assert!(pop.iter().all(|d| d.a_i > 0.0));
    }

    #[test]
    fn population_rejects_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(sample_population(&params(), 0, 3, &mut rng), Err(SimError::Shape(_))));
    }

    proptest! {
        #[test]
        fn curve_strictly_monotone(a in 0.05f64..1e4, p1 in 0.0f64..31.0, dp in 1e-3f64..5.0) {
            let p = params();
            let p2 = (p1 + dp).min(31.0);
            prop_assume!(p2 > p1);
            let up1 = weight_update_curve(p1, Direction::Ltp, &p, a).unwrap();
            let up2 = weight_update_curve(p2, Direction::Ltp, &p, a).unwrap();
            let dn1 = weight_update_curve(p1, Direction::Ltd, &p, a).unwrap();
            let dn2 = weight_update_curve(p2, Direction::Ltd, &p, a).unwrap();
            // Very small a saturates in floating point; only demand strictness where it is representable.
            prop_assert!(up2 >= up1);
            prop_assert!(dn2 <= dn1);
            if a > 1.0 {
                prop_assert!(up2 > up1);
                prop_assert!(dn2 < dn1);
            }
        }

        #[test]
        fn same_direction_pulses_are_path_independent(split in 0i64..=12, total in 0i64..=12) {
            let p = params();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let first = split.min(total);
            let a = apply_pulses(&DeviceState::fresh(&p), first, &p, &mut rng).unwrap();
            let a = apply_pulses(&a, total - first, &p, &mut rng).unwrap();
            let b = apply_pulses(&DeviceState::fresh(&p), total, &p, &mut rng).unwrap();
            prop_assert!((a.x - b.x).abs() <= 1e-9 * p.x_max);
        }
    }
}
