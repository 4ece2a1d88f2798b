//! Chip-level cost estimates: tile planning, H-tree interconnect, and
//! event-count energy / latency / area accounting.
//!
//! A chip is a set of identical square tiles. Each tile holds a grid of
//! `pes_per_tile_side²` processing elements, and each PE a square grid of
//! crossbar arrays. Every technology constant is an explicit input.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::training::{LayerSpec, NetworkSpec};

/// Weight matrix of one layer as seen by the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    /// Fan-in, including the kernel window for convolutions.
    pub rows: usize,
    /// Output channels / units.
    pub cols: usize,
    /// Output positions per sample (1 for dense layers).
    pub positions: usize,
}

impl LayerShape {
    pub fn new(name: &str, rows: usize, cols: usize, positions: usize) -> Self {
        Self { name: name.to_string(), rows, cols, positions }
    }
}

/// VGG-8 for 32x32x3 inputs: six 3x3 convolutions and two dense layers.
pub fn vgg8_layers() -> Vec<LayerShape> {
    vec![
        LayerShape::new("conv1", 27, 128, 1024),
        LayerShape::new("conv2", 1152, 128, 1024),
        LayerShape::new("conv3", 1152, 256, 256),
        LayerShape::new("conv4", 2304, 256, 256),
        LayerShape::new("conv5", 2304, 512, 64),
        LayerShape::new("conv6", 4608, 512, 64),
        LayerShape::new("fc1", 8192, 1024, 1),
        LayerShape::new("fc2", 1024, 10, 1),
    ]
}

/// Weighted layers of `spec`, named `conv<k>` / `fc<k>` in order.
pub fn layers_from_spec(spec: &NetworkSpec) -> Result<Vec<LayerShape>> {
    let shapes = spec.shapes()?;
    let (mut convs, mut dense) = (0, 0);
    let mut out = Vec::new();
    for (k, layer) in spec.layers.iter().enumerate() {
        let (input, output) = (shapes[k], shapes[k + 1]);
        match *layer {
            LayerSpec::Conv { filters, kernel, .. } => {
                convs += 1;
                out.push(LayerShape::new(&format!("conv{convs}"), kernel * kernel * input.c, filters, output.h * output.w));
            }
            LayerSpec::Dense { units } => {
                dense += 1;
                out.push(LayerShape::new(&format!("fc{dense}"), input.len(), units, 1));
            }
            LayerSpec::Relu | LayerSpec::MaxPool => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    #[serde(default = "default_array")]
    pub array_rows: usize,
    #[serde(default = "default_array")]
    pub array_cols: usize,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
    #[serde(default = "default_cell_bits")]
    pub cell_bits: u32,
    #[serde(default = "default_pe_side")]
    pub pes_per_tile_side: usize,
    /// Smallest tile side, in arrays, the search may reach.
    #[serde(default = "default_min_tile")]
    pub min_tile_arrays: usize,
    /// Chip capacity in tiles; unlimited when absent.
    #[serde(default)]
    pub max_tiles: Option<usize>,
}

fn default_array() -> usize {
    128
}
fn default_weight_bits() -> u32 {
    8
}
fn default_cell_bits() -> u32 {
    1
}
fn default_pe_side() -> usize {
    2
}
fn default_min_tile() -> usize {
    8
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            array_rows: default_array(),
            array_cols: default_array(),
            weight_bits: default_weight_bits(),
            cell_bits: default_cell_bits(),
            pes_per_tile_side: default_pe_side(),
            min_tile_arrays: default_min_tile(),
            max_tiles: None,
        }
    }
}

impl PlanConfig {
    /// Array columns used per weight.
    pub fn cols_per_weight(&self) -> usize {
        self.weight_bits.div_ceil(self.cell_bits) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.array_rows == 0 || self.array_cols == 0 || self.weight_bits == 0 || self.cell_bits == 0 {
            return Err(SimError::Config("array size and bit widths must be positive".into()));
        }
        if self.pes_per_tile_side == 0 || self.min_tile_arrays == 0 {
            return Err(SimError::Config("tile geometry must be positive".into()));
        }
        if self.min_tile_arrays % self.pes_per_tile_side != 0 || !self.min_tile_arrays.is_power_of_two() {
            return Err(SimError::Config(format!(
                "min_tile_arrays {} must be a power of two divisible by pes_per_tile_side {}",
                self.min_tile_arrays, self.pes_per_tile_side
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAssignment {
    pub name: String,
    pub tiles: usize,
    /// Arrays holding at least one weight of this layer.
    pub arrays_used: usize,
    pub mapped_cells: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChipPlan {
    pub array_rows: usize,
    pub array_cols: usize,
    /// Tile side in arrays.
    pub tile_arrays: usize,
    pub pes_per_tile_side: usize,
    pub layers: Vec<LayerAssignment>,
    pub total_tiles: usize,
    pub utilization: f64,
    /// Every `(tile_arrays, utilization)` evaluated, largest tile first.
    pub search: Vec<(usize, f64)>,
}

impl ChipPlan {
    pub fn arrays_per_pe_side(&self) -> usize {
        self.tile_arrays / self.pes_per_tile_side
    }

    pub fn total_arrays(&self) -> usize {
        self.total_tiles * self.tile_arrays * self.tile_arrays
    }

    pub fn cells_per_tile(&self) -> u64 {
        (self.tile_arrays * self.array_rows * self.tile_arrays * self.array_cols) as u64
    }
}

fn assign(layers: &[LayerShape], cfg: &PlanConfig, tile: usize) -> (Vec<LayerAssignment>, usize, f64) {
    let (side_r, side_c) = (tile * cfg.array_rows, tile * cfg.array_cols);
    let mut out = Vec::with_capacity(layers.len());
    let (mut mapped, mut tiles_total) = (0u64, 0usize);
    for l in layers {
        let cells_c = l.cols * cfg.cols_per_weight();
        let tiles = l.rows.div_ceil(side_r) * cells_c.div_ceil(side_c);
        let arrays_used = l.rows.div_ceil(cfg.array_rows) * cells_c.div_ceil(cfg.array_cols);
        let cells = (l.rows * cells_c) as u64;
        mapped += cells;
        tiles_total += tiles;
        out.push(LayerAssignment { name: l.name.clone(), tiles, arrays_used, mapped_cells: cells });
    }
    let instantiated = tiles_total as u64 * (side_r * side_c) as u64;
    (out, tiles_total, mapped as f64 / instantiated as f64)
}

/// Choose the tile size with the best memory utilization.
///
/// The search starts from the smallest power-of-two tile that holds the
/// largest layer dimension and halves down to `min_tile_arrays`; ties go to
/// the smaller tile. Utilization is mapped cells over all cells of the
/// instantiated tiles.
pub fn plan_tiles(layers: &[LayerShape], cfg: &PlanConfig) -> Result<ChipPlan> {
    cfg.validate()?;
    if layers.is_empty() || layers.iter().any(|l| l.rows == 0 || l.cols == 0 || l.positions == 0) {
        return Err(SimError::Planning("network must have non-empty layers".into()));
    }
    let need = layers
        .iter()
        .map(|l| l.rows.div_ceil(cfg.array_rows).max((l.cols * cfg.cols_per_weight()).div_ceil(cfg.array_cols)))
        .max()
        .unwrap_or(1);
    let start = need.next_power_of_two().max(cfg.min_tile_arrays).max(cfg.pes_per_tile_side);
    let mut best: Option<(usize, Vec<LayerAssignment>, usize, f64)> = None;
    let mut search = Vec::new();
    let mut tile = start;
    while tile >= cfg.min_tile_arrays && tile >= cfg.pes_per_tile_side && tile % cfg.pes_per_tile_side == 0 {
        let (assignments, tiles, util) = assign(layers, cfg, tile);
        search.push((tile, util));
        if best.as_ref().is_none_or(|b| util >= b.3) {
            best = Some((tile, assignments, tiles, util));
        }
        if tile == 1 {
            break;
        }
        tile /= 2;
    }
    let (tile_arrays, assignments, total_tiles, utilization) =
        best.ok_or_else(|| SimError::Planning("no admissible tile size".into()))?;
    if let Some(cap) = cfg.max_tiles {
        if total_tiles > cap {
            return Err(SimError::Planning(format!("network needs {total_tiles} tiles, chip has {cap}")));
        }
    }
    Ok(ChipPlan {
        array_rows: cfg.array_rows,
        array_cols: cfg.array_cols,
        tile_arrays,
        pes_per_tile_side: cfg.pes_per_tile_side,
        layers: assignments,
        total_tiles,
        utilization,
        search,
    })
}

/// Technology constants. Defaults are a plausible 22 nm-class set, not foundry data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TechConfig {
    pub clock_hz: f64,
    /// Energy of one array read cycle (one input bit slice on one array), J.
    pub e_array_read: f64,
    pub e_adc_per_bit: f64,
    pub e_accumulate: f64,
    pub e_buffer_per_bit: f64,
    pub e_interconnect_per_bit_mm: f64,
    /// Area of one crossbar cell, mm².
    pub area_cell: f64,
    pub area_adc: f64,
    pub area_accumulator: f64,
    pub area_buffer_per_bit: f64,
    pub buffer_bits_per_tile: f64,
    /// ADCs per array; columns share them by multiplexing.
    pub adcs_per_array: f64,
    /// Clock cycles per ADC conversion.
    pub adc_cycles: f64,
    pub wire_pitch_mm: f64,
    pub wire_delay_per_mm: f64,
    pub leakage_power: f64,
}

impl Default for TechConfig {
    fn default() -> Self {
        Self {
            clock_hz: 1e9,
            e_array_read: 1.5e-12,
            e_adc_per_bit: 0.2e-12,
            e_accumulate: 0.05e-12,
            e_buffer_per_bit: 0.02e-12,
            e_interconnect_per_bit_mm: 0.05e-12,
            area_cell: 2.0e-8,
            area_adc: 3.0e-4,
            area_accumulator: 2.0e-4,
            area_buffer_per_bit: 1.0e-7,
            buffer_bits_per_tile: 65536.0,
            adcs_per_array: 16.0,
            adc_cycles: 1.0,
            wire_pitch_mm: 1e-4,
            wire_delay_per_mm: 1e-10,
            leakage_power: 0.05,
        }
    }
}

impl TechConfig {
    pub fn constants(&self) -> [(&'static str, f64); 16] {
        [
            ("clock_hz", self.clock_hz),
            ("e_array_read", self.e_array_read),
            ("e_adc_per_bit", self.e_adc_per_bit),
            ("e_accumulate", self.e_accumulate),
            ("e_buffer_per_bit", self.e_buffer_per_bit),
            ("e_interconnect_per_bit_mm", self.e_interconnect_per_bit_mm),
            ("area_cell", self.area_cell),
            ("area_adc", self.area_adc),
            ("area_accumulator", self.area_accumulator),
            ("area_buffer_per_bit", self.area_buffer_per_bit),
            ("buffer_bits_per_tile", self.buffer_bits_per_tile),
            ("adcs_per_array", self.adcs_per_array),
            ("adc_cycles", self.adc_cycles),
            ("wire_pitch_mm", self.wire_pitch_mm),
            ("wire_delay_per_mm", self.wire_delay_per_mm),
            ("leakage_power", self.leakage_power),
        ]
    }

    /// Every constant must be finite and positive; errors name the offender.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.constants() {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("technology constant `{name}` must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HtreeMetrics {
    pub wirelength_mm: f64,
    pub latency_s: f64,
    pub energy_per_bit: f64,
}

/// Total H-tree wirelength `unit * Σ_{l=1..levels} 2^l 2^-ceil(l/2)`.
pub fn htree_wirelength(levels: u32, unit_length: f64) -> f64 {
    unit_length * (1..=levels).map(|l| 2f64.powi(l as i32) * 2f64.powi(-(l.div_ceil(2) as i32))).sum::<f64>()
}

pub fn htree_metrics(levels: u32, unit_length: f64, tech: &TechConfig) -> Result<HtreeMetrics> {
    if levels < 1 {
        return Err(SimError::Parameter("an H-tree needs at least one level".into()));
    }
    if !(unit_length > 0.0 && unit_length.is_finite()) {
        return Err(SimError::Parameter(format!("unit length must be positive, got {unit_length}")));
    }
    let wl = htree_wirelength(levels, unit_length);
    Ok(HtreeMetrics {
        wirelength_mm: wl,
        latency_s: wl * tech.wire_delay_per_mm,
        energy_per_bit: wl * tech.e_interconnect_per_bit_mm,
    })
}

/// Hardware events of one layer for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerTraffic {
    pub macs: u64,
    pub array_reads: u64,
    pub adc_conversions: u64,
    pub accumulations: u64,
    pub buffer_bits: u64,
    pub interconnect_bits: u64,
    /// Clock cycles the layer needs per sample.
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficStats {
    pub samples: u64,
    pub layers: Vec<LayerTraffic>,
}

impl TrafficStats {
    /// Event counts of bit-serial inference over `samples` inputs.
    pub fn inference(layers: &[LayerShape], plan: &ChipPlan, cfg: &PlanConfig, tech: &TechConfig, samples: u64, input_bits: u32) -> Self {
        let bits = u64::from(input_bits);
        let per_read = (cfg.array_cols as f64 / tech.adcs_per_array).ceil() * tech.adc_cycles;
        let traffic = layers
            .iter()
            .map(|l| {
                let p = l.positions as u64;
                let cells_c = (l.cols * cfg.cols_per_weight()) as u64;
                let row_blocks = l.rows.div_ceil(plan.array_rows) as u64;
                let arrays = plan.layers.iter().find(|a| a.name == l.name).map_or(0, |a| a.arrays_used) as u64;
                let io_bits = p * (l.rows as u64 + l.cols as u64) * bits;
                LayerTraffic {
                    macs: p * (l.rows * l.cols) as u64,
                    array_reads: p * bits * arrays,
                    adc_conversions: p * bits * row_blocks * cells_c,
                    accumulations: p * bits * row_blocks * cells_c,
                    buffer_bits: io_bits,
                    interconnect_bits: io_bits,
                    cycles: p * bits * per_read.max(1.0) as u64,
                }
            })
            .collect();
        Self { samples, layers: traffic }
    }

    /// Training counts: forward, error backpropagation and weight-gradient passes.
    pub fn training(layers: &[LayerShape], plan: &ChipPlan, cfg: &PlanConfig, tech: &TechConfig, samples: u64, input_bits: u32) -> Self {
        let mut t = Self::inference(layers, plan, cfg, tech, samples, input_bits);
        for l in &mut t.layers {
            *l = LayerTraffic {
                macs: 3 * l.macs,
                array_reads: 3 * l.array_reads,
                adc_conversions: 3 * l.adc_conversions,
                accumulations: 3 * l.accumulations,
                buffer_bits: 3 * l.buffer_bits,
                interconnect_bits: 3 * l.interconnect_bits,
                cycles: 3 * l.cycles,
            };
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub area_mm2: f64,
    /// Latency for all samples through the layer pipeline, s.
    pub latency_s: f64,
    pub dynamic_energy_j: f64,
    pub leakage_energy_j: f64,
    pub tops: f64,
    pub tops_per_w: f64,
    pub utilization: f64,
    pub area_breakdown: Vec<(String, f64)>,
    pub energy_breakdown: Vec<(String, f64)>,
    pub latency_breakdown: Vec<(String, f64)>,
}

impl CostReport {
    fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("area_mm2".to_string(), self.area_mm2),
            ("latency_s".to_string(), self.latency_s),
            ("dynamic_energy_j".to_string(), self.dynamic_energy_j),
            ("leakage_energy_j".to_string(), self.leakage_energy_j),
            ("tops".to_string(), self.tops),
            ("tops_per_w".to_string(), self.tops_per_w),
            ("utilization".to_string(), self.utilization),
        ];
        for (prefix, list) in [("area", &self.area_breakdown), ("energy", &self.energy_breakdown), ("latency", &self.latency_breakdown)] {
            rows.extend(list.iter().map(|(k, v)| (format!("{prefix}.{k}"), *v)));
        }
        rows
    }

    /// CSV with header `metric,value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "metric,value")?;
        for (k, v) in self.rows() {
            writeln!(out, "{k},{v}")?;
        }
        Ok(())
    }

    /// Aligned text table with the same rows as the CSV.
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  value", "metric");
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<width$}  {v}");
        }
        s
    }
}

/// Event-count cost accounting for a planned chip.
pub fn estimate_costs(plan: &ChipPlan, traffic: &TrafficStats, tech: &TechConfig, adc_bits: u32) -> Result<CostReport> {
    tech.validate()?;
    if traffic.layers.len() != plan.layers.len() {
        return Err(SimError::Shape(format!(
            "traffic for {} layers, plan has {}",
            traffic.layers.len(),
            plan.layers.len()
        )));
    }
    let samples = traffic.samples as f64;
    let tile_cells = plan.cells_per_tile() as f64;
    let tile_side_mm = (tile_cells * tech.area_cell).sqrt();
    let levels = (plan.total_tiles.max(2) as f64).log2().ceil().max(1.0) as u32;
    let tree = htree_metrics(levels, tile_side_mm, tech)?;

    let sum = |f: &dyn Fn(&LayerTraffic) -> u64| traffic.layers.iter().map(|l| f(l) as f64).sum::<f64>() * samples;
    let energy_breakdown = vec![
        ("array".to_string(), sum(&|l| l.array_reads) * tech.e_array_read),
        ("adc".to_string(), sum(&|l| l.adc_conversions) * f64::from(adc_bits) * tech.e_adc_per_bit),
        ("accumulation".to_string(), sum(&|l| l.accumulations) * tech.e_accumulate),
        ("buffer".to_string(), sum(&|l| l.buffer_bits) * tech.e_buffer_per_bit),
        ("interconnect".to_string(), sum(&|l| l.interconnect_bits) * tree.energy_per_bit),
    ];
    let dynamic_energy_j: f64 = energy_breakdown.iter().map(|(_, v)| v).sum();

    let stages = traffic.layers.len() as f64;
    let slots = if traffic.samples == 0 { 0.0 } else { samples + stages - 1.0 };
    let slowest = traffic.layers.iter().map(|l| l.cycles).max().unwrap_or(0) as f64 / tech.clock_hz;
    let latency_breakdown = vec![
        ("compute".to_string(), slowest * slots),
        ("interconnect".to_string(), tree.latency_s * slots),
    ];
    let latency_s: f64 = latency_breakdown.iter().map(|(_, v)| v).sum();

    let arrays = plan.total_arrays() as f64;
    let area_breakdown = vec![
        ("arrays".to_string(), arrays * (plan.array_rows * plan.array_cols) as f64 * tech.area_cell),
        ("adc".to_string(), arrays * tech.adcs_per_array * tech.area_adc),
        ("accumulation".to_string(), arrays * tech.area_accumulator),
        ("buffer".to_string(), plan.total_tiles as f64 * tech.buffer_bits_per_tile * tech.area_buffer_per_bit),
        ("interconnect".to_string(), tree.wirelength_mm * tech.wire_pitch_mm),
    ];
    let area_mm2: f64 = area_breakdown.iter().map(|(_, v)| v).sum();

    let macs = sum(&|l| l.macs);
    let (tops, tops_per_w) = if latency_s > 0.0 {
        let tops = 2.0 * macs / latency_s / 1e12;
        let power = dynamic_energy_j / latency_s;
        (tops, if power > 0.0 { tops / power } else { 0.0 })
    } else {
        (0.0, 0.0)
    };
    Ok(CostReport {
        area_mm2,
        latency_s,
        dynamic_energy_j,
        leakage_energy_j: tech.leakage_power * latency_s,
        tops,
        tops_per_w,
        utilization: plan.utilization,
        area_breakdown,
        energy_breakdown,
        latency_breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg8_spec_matches_layer_table() {
        assert_eq!(layers_from_spec(&NetworkSpec::vgg8()).unwrap(), vgg8_layers());
    }

    #[test]
    fn mnist_cnn_layers() {
        let l = layers_from_spec(&NetworkSpec::mnist_cnn()).unwrap();
        let dims: Vec<(usize, usize, usize)> = l.iter().map(|l| (l.rows, l.cols, l.positions)).collect();
        assert_eq!(dims, [(9, 5, 676), (45, 15, 121), (135, 25, 9), (225, 10, 1)]);
    }
    use proptest::prelude::*;

    fn unit_cfg() -> PlanConfig {
        PlanConfig { weight_bits: 1, cell_bits: 1, pes_per_tile_side: 1, min_tile_arrays: 1, ..Default::default() }
    }

    #[test]
    fn htree_small_cases() {
        assert_eq!(htree_wirelength(1, 2.5), 2.5);
        // 2·½ + 4·½ + 8·¼ + 16·¼
        assert_eq!(htree_wirelength(4, 1.0), 1.0 + 2.0 + 2.0 + 4.0);
        let w: Vec<f64> = (1..10).map(|l| htree_wirelength(l, 1.0)).collect();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!(htree_metrics(0, 1.0, &TechConfig::default()).is_err());
    }

    #[test]
    fn one_full_array() {
        let plan = plan_tiles(&[LayerShape::new("fc", 128, 128, 1)], &unit_cfg()).unwrap();
        assert_eq!(plan.total_tiles, 1);
        assert_eq!(plan.tile_arrays, 1);
        assert_eq!(plan.utilization, 1.0);
    }

    #[test]
    fn half_array() {
        let plan = plan_tiles(&[LayerShape::new("fc", 64, 128, 1)], &unit_cfg()).unwrap();
        assert_eq!(plan.total_arrays(), 1);
        assert_eq!(plan.utilization, 0.5);
    }

    #[test]
    fn vgg8_default_plan() {
        let plan = plan_tiles(&vgg8_layers(), &PlanConfig::default()).unwrap();
        assert_eq!(plan.tile_arrays, 8);
        assert!((plan.utilization - 0.8998).abs() < 1e-4, "{}", plan.utilization);
        assert!(plan.search.windows(2).all(|w| w[1].0 < w[0].0));
    }

    #[test]
    fn capacity_limit() {
        let cfg = PlanConfig { max_tiles: Some(3), ..Default::default() };
        assert!(matches!(plan_tiles(&vgg8_layers(), &cfg), Err(SimError::Planning(_))));
    }

    fn report(tech: &TechConfig, samples: u64) -> CostReport {
        let cfg = PlanConfig::default();
        let layers = vgg8_layers();
        let plan = plan_tiles(&layers, &cfg).unwrap();
        let traffic = TrafficStats::training(&layers, &plan, &cfg, tech, samples, 8);
        estimate_costs(&plan, &traffic, tech, 5).unwrap()
    }

    #[test]
    fn faster_clock_halves_compute_latency_only() {
        let tech = TechConfig::default();
        let fast = TechConfig { clock_hz: 2.0 * tech.clock_hz, ..tech.clone() };
        let (a, b) = (report(&tech, 100), report(&fast, 100));
        assert!((a.latency_breakdown[0].1 / b.latency_breakdown[0].1 - 2.0).abs() < 1e-12);
        assert_eq!(a.dynamic_energy_j, b.dynamic_energy_j);
    }

    #[test]
    fn zero_traffic_zero_energy() {
        let r = report(&TechConfig::default(), 0);
        assert_eq!(r.dynamic_energy_j, 0.0);
        assert_eq!(r.tops, 0.0);
    }

    #[test]
    fn breakdowns_sum_to_totals() {
        let r = report(&TechConfig::default(), 50_000);
        for (list, total) in [(&r.area_breakdown, r.area_mm2), (&r.energy_breakdown, r.dynamic_energy_j), (&r.latency_breakdown, r.latency_s)] {
            let s: f64 = list.iter().map(|(_, v)| v).sum();
            assert!((s - total).abs() <= 1e-9 * total);
        }
    }

    #[test]
    fn missing_constant_is_named() {
        let tech = TechConfig { e_adc_per_bit: f64::NAN, ..TechConfig::default() };
        let err = tech.validate().unwrap_err();
        assert!(err.to_string().contains("e_adc_per_bit"));
    }

    #[test]
    fn text_mirrors_csv() {
        let r = report(&TechConfig::default(), 10);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        let text = r.to_text();
        assert_eq!(csv.lines().count(), text.lines().count());
        for (c, t) in csv.lines().skip(1).zip(text.lines().skip(1)) {
            let (k, v) = c.split_once(',').unwrap();
            let mut parts = t.split_whitespace();
            assert_eq!(parts.next(), Some(k));
            assert_eq!(parts.next(), Some(v));
        }
    }

    proptest! {
        #[test]
        fn efficiency_identity(clock in 1e8f64..5e9, e in 1e-13f64..1e-11, adc in 1e-14f64..1e-12, samples in 1u64..100_000) {
            let tech = TechConfig { clock_hz: clock, e_array_read: e, e_adc_per_bit: adc, ..TechConfig::default() };
            let r = report(&tech, samples);
            let power = r.dynamic_energy_j / r.latency_s;
            prop_assert_eq!(r.tops_per_w, r.tops / power);
        }

        #[test]
        fn more_traffic_more_energy(samples in 1u64..10_000, extra in 1u64..10_000) {
            let tech = TechConfig::default();
            prop_assert!(report(&tech, samples + extra).dynamic_energy_j >= report(&tech, samples).dynamic_energy_j);
        }

        #[test]
        fn bigger_network_more_area(rows in 1usize..5000, cols in 1usize..600, grow in 1usize..3000) {
            let cfg = PlanConfig::default();
            let tech = TechConfig::default();
            let area = |r: usize| {
                let layers = vec![LayerShape::new("a", r, cols, 1), LayerShape::new("b", 4096, 256, 1)];
                let plan = plan_tiles(&layers, &cfg).unwrap();
                let t = TrafficStats::inference(&layers, &plan, &cfg, &tech, 1, 8);
                estimate_costs(&plan, &t, &tech, 5).unwrap().area_mm2
            };
            prop_assert!(area(rows + grow) >= area(rows));
        }

        #[test]
        fn utilization_in_unit_interval(rows in 1usize..9000, cols in 1usize..1100) {
            let plan = plan_tiles(&[LayerShape::new("x", rows, cols, 1)], &PlanConfig::default()).unwrap();
            prop_assert!(plan.utilization > 0.0 && plan.utilization <= 1.0);
        }
    }
}
