//! Input encoding, ADC quantization and shift-and-add accumulation.
//!
//! Inputs in `[-1, 1)` become signed fixed-point integers, fed to the array one
//! two's-complement bit slice at a time (MSB first). Each slice's column
//! outputs are digitized by an ADC and the digital results are recombined
//! with signed powers of two.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SimError};

/// Largest supported input width; keeps integer arithmetic in `i64` exact.
pub const MAX_INPUT_BITS: u32 = 32;
/// Largest supported ADC width.
pub const MAX_ADC_BITS: u32 = 20;

fn check_input_bits(bits: u32) -> Result<()> {
    if !(1..=MAX_INPUT_BITS).contains(&bits) {
        return Err(SimError::Parameter(format!("input_bits must lie in 1..={MAX_INPUT_BITS}, got {bits}")));
    }
    Ok(())
}

fn check_adc_bits(bits: u32) -> Result<()> {
    if !(1..=MAX_ADC_BITS).contains(&bits) {
        return Err(SimError::Parameter(format!("adc_bits must lie in 1..={MAX_ADC_BITS}, got {bits}")));
    }
    Ok(())
}

/// Signed fixed-point value of `x` with `bits` bits, round-half-even, saturating.
pub fn quantize_input(x: f64, bits: u32) -> Result<i64> {
    check_input_bits(bits)?;
    ensure_finite("input", x)?;
    let half = 1i64 << (bits - 1);
    let q = (x * half as f64).round_ties_even();
    Ok((q as i64).clamp(-half, half - 1))
}

/// Bit slices of the quantized inputs, MSB (sign bit) first.
pub fn encode_input(x: &[f64], bits: u32) -> Result<Vec<Vec<u8>>> {
    let q = x.iter().map(|&v| quantize_input(v, bits)).collect::<Result<Vec<_>>>()?;
    Ok(slice_integers(&q, bits))
}

/// Two's-complement bit slices of already-quantized integers, MSB first.
pub fn slice_integers(q: &[i64], bits: u32) -> Vec<Vec<u8>> {
    (0..bits)
        .rev()
        .map(|k| q.iter().map(|&v| ((v >> k) & 1) as u8).collect())
        .collect()
}

/// Weight of each slice in MSB-first order: `-2^(bits-1), 2^(bits-2), ..., 1`.
pub fn slice_weights(bits: u32) -> Vec<i64> {
    (0..bits)
        .rev()
        .map(|k| if k == bits - 1 { -(1i64 << k) } else { 1i64 << k })
        .collect()
}

/// Reconstruct real values from bit slices produced by [`encode_input`].
pub fn decode_input(slices: &[Vec<u8>], bits: u32) -> Result<Vec<f64>> {
    check_input_bits(bits)?;
    let codes: Vec<Vec<i64>> = slices.iter().map(|s| s.iter().map(|&b| i64::from(b)).collect()).collect();
    let ints = shift_accumulate(&codes, &slice_weights(bits))?;
    let half = (1i64 << (bits - 1)) as f64;
    Ok(ints.into_iter().map(|v| v as f64 / half).collect())
}

/// `out = sum_k weights[k] * codes[k]`, element-wise over the slice vectors.
pub fn shift_accumulate(codes: &[Vec<i64>], weights: &[i64]) -> Result<Vec<i64>> {
    if codes.len() != weights.len() {
        return Err(SimError::Shape(format!(
            "{} code slices for {} slice weights",
            codes.len(),
            weights.len()
        )));
    }
    let width = codes.first().map_or(0, Vec::len);
    if codes.iter().any(|c| c.len() != width) {
        return Err(SimError::Shape("code slices differ in length".into()));
    }
    let mut out = vec![0i64; width];
    for (slice, &w) in codes.iter().zip(weights) {
        for (o, &c) in out.iter_mut().zip(slice) {
            *o += w * c;
        }
    }
    Ok(out)
}

/// ADC transfer characteristic: thresholds plus one output level per code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub input_bits: u32,
    pub adc_bits: u32,
    pub edges: Vec<f64>,
    pub levels: Vec<f64>,
}

impl QuantizerConfig {
    /// Equal-width bins over `[lo, hi)`, levels at bin centres.
    pub fn uniform(input_bits: u32, adc_bits: u32, lo: f64, hi: f64) -> Result<Self> {
        check_adc_bits(adc_bits)?;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(SimError::Parameter(format!("uniform ADC needs lo < hi, got [{lo}, {hi})")));
        }
        let n = 1usize << adc_bits;
        let width = (hi - lo) / n as f64;
        let edges = (1..n).map(|k| lo + k as f64 * width).collect();
        let levels = (0..n).map(|k| lo + (k as f64 + 0.5) * width).collect();
        let cfg = Self { input_bits, adc_bits, edges, levels };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_input_bits(self.input_bits)?;
        check_adc_bits(self.adc_bits)?;
        let n = 1usize << self.adc_bits;
        if self.edges.len() != n - 1 || self.levels.len() != n {
            return Err(SimError::Parameter(format!(
                "{}-bit ADC needs {} edges and {} levels, got {} and {}",
                self.adc_bits,
                n - 1,
                n,
                self.edges.len(),
                self.levels.len()
            )));
        }
        if self.edges.iter().chain(&self.levels).any(|v| !v.is_finite()) {
            return Err(SimError::Parameter("ADC edges and levels must be finite".into()));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::Parameter("ADC edges must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Output code: the number of edges at or below `analog`.
    #[inline]
    pub fn code(&self, analog: f64) -> u32 {
        self.edges.partition_point(|&e| e <= analog) as u32
    }

    /// Representative value of the code `analog` falls into.
    #[inline]
    pub fn reconstruct(&self, analog: f64) -> f64 {
        self.levels[self.code(analog) as usize]
    }
}

/// Convenience wrapper around [`QuantizerConfig::code`].
pub fn adc_quantize(analog: f64, config: &QuantizerConfig) -> u32 {
    config.code(analog)
}

/// Equal-probability ADC edges fitted to observed partial sums.
///
/// Edges sit midway between adjacent distinct sorted samples near each
/// quantile, so no bin is empty; levels are the bin medians.
pub fn calibrate_edges(samples: &[f64], input_bits: u32, adc_bits: u32) -> Result<QuantizerConfig> {
    check_adc_bits(adc_bits)?;
    let n_bins = 1usize << adc_bits;
    if samples.len() < n_bins {
        return Err(SimError::Calibration(format!(
            "{} samples cannot fill {n_bins} bins",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Calibration("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = Vec::with_capacity(n_bins - 1);
    let mut last_cut = 0usize;
    for k in 1..n_bins {
        let ideal = k * n / n_bins;
        // Earliest cut at or after the quantile that leaves the previous bin non-empty
        // and separates two distinct values.
        let mut cut = ideal.max(last_cut + 1);
        while cut < n && sorted[cut - 1] == sorted[cut] {
            cut += 1;
        }
        if cut >= n {
            return Err(SimError::Calibration(format!(
                "only {} distinct values for a {adc_bits}-bit ADC",
                count_distinct(&sorted)
            )));
        }
        let (a, b) = (sorted[cut - 1], sorted[cut]);
        let mut edge = a + (b - a) / 2.0;
        if edge <= a {
            edge = b;
        }
        edges.push(edge);
        last_cut = cut;
    }
    let mut levels = Vec::with_capacity(n_bins);
    let mut start = 0usize;
    for k in 0..n_bins {
        let end = if k + 1 < n_bins { sorted.partition_point(|&v| v < edges[k]) } else { n };
        levels.push(if end > start {
            median_sorted(&sorted[start..end])
        } else {
            let lo = if k == 0 { edges[0] } else { edges[k - 1] };
            let hi = if k + 1 < n_bins { edges[k] } else { lo };
            0.5 * (lo + hi)
        });
        start = end;
    }
    let cfg = QuantizerConfig { input_bits: input_bits.max(1), adc_bits, edges, levels };
    cfg.validate()?;
    Ok(cfg)
}

fn count_distinct(sorted: &[f64]) -> usize {
    1 + sorted.windows(2).filter(|w| w[0] != w[1]).count()
}

fn median_sorted(v: &[f64]) -> f64 {
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
