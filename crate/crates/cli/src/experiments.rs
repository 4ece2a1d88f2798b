//! One function per experiment kind; each returns the tables to emit.

use std::path::PathBuf;

use memsim::costmodel::{estimate_costs, layers_from_spec, plan_tiles, vgg8_layers, TrafficStats};
use memsim::crossbar::{map_weights, WeightMapping};
use memsim::meminductor::amoeba::{peak_lag, simulate_amoeba, Waveform};
use memsim::meminductor::hysteresis::{hysteresis_trace, Hysteresis, SweepRow};
use memsim::meminductor::{MeminductorParams, Trace};
use memsim::training::dataset::default_mnist_dir;
use memsim::training::{
    load_cifar10, load_mnist, run_training, write_metrics_csv, CellConfig, HardwareConfig, Split, TrainConfig,
};
use memsim::rng_from_seed;
use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{CellKind, CostMode, DatasetChoice, ExperimentConfig, NetworkChoice, SweepParameter};
use crate::error::CliResult;
use crate::report::{cells, Table};

fn table_from_writer(name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<Table> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Table::from_csv(name, &String::from_utf8(buf).expect("CSV writers emit UTF-8"))
}

pub fn train(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    let t = &cfg.train;
    let spec = t.network.spec(t.hidden);
    let (train, test) = match t.dataset {
        DatasetChoice::Mnist => {
            let dir = t.data_dir.clone().unwrap_or_else(default_mnist_dir);
            (load_mnist(&dir, Split::Train, t.train_limit)?, load_mnist(&dir, Split::Test, t.test_limit)?)
        }
        DatasetChoice::Cifar10 => {
            let dir = t.data_dir.clone().unwrap_or_else(|| {
                std::env::var_os("CIFAR10_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/cifar10"))
            });
            (load_cifar10(&dir, Split::Train, t.train_limit)?, load_cifar10(&dir, Split::Test, t.test_limit)?)
        }
    };
    let cells = match t.cells {
        CellKind::Device => CellConfig::Device { device: cfg.device(), crossbar: cfg.crossbar.clone() },
        CellKind::Meminductor => {
            CellConfig::Meminductor { params: cfg.meminductor(), array: cfg.meminductor_array.clone() }
        }
    };
    let hardware = HardwareConfig {
        cells,
        periphery: cfg.periphery.clone(),
        array_rows: t.array_rows,
        array_cols: t.array_cols,
        w_limit: t.w_limit,
        parasitic_refresh: t.parasitic_refresh,
        overrides: Vec::new(),
    };
    let train_cfg = TrainConfig {
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: cfg.seed,
        analog_path: t.path,
        hardware: Some(hardware),
        validation_fraction: t.validation_fraction,
        backprop: t.backprop,
        eval_batch: t.eval_batch,
        record_wall_time: t.record_wall_time,
    };
    let report = run_training(&spec, &train, &test, &train_cfg)?;
    let metrics = table_from_writer("metrics", |w| write_metrics_csv(&report.history, w))?;
    let best = report.best();
    let mut summary = Table::new("summary", &["best_epoch", "best_val_acc", "test_acc_at_best", "final_test_acc"]);
    summary.push(cells![report.best_epoch, best.val_acc, best.test_acc, report.last().test_acc]);
    Ok(vec![metrics, summary])
}

pub fn vmm_bench(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    let v = &cfg.vmm;
    let params = cfg.device();
    let mapping = WeightMapping::for_device(-v.w_range, v.w_range, &params);
    let points: Vec<CliResult<(f64, f64)>> = v
        .r_line
        .par_iter()
        .map(|&r_line| {
            let crossbar = memsim::crossbar::CrossbarConfig { r_line, ..cfg.crossbar.clone() };
            let (mut sum, mut max) = (0.0f64, 0.0f64);
            for trial in 0..v.trials {
                // The same weights and inputs at every wire resistance.
                let mut rng = rng_from_seed(cfg.seed);
                rng.set_stream(trial as u64);
                let w = Array2::from_shape_fn((v.rows, v.cols), |_| rng.random_range(-v.w_range..=v.w_range));
                let input = Array1::from_shape_fn(v.rows, |_| rng.random_range(0.0..=crossbar.v_read));
                let array = map_weights(w.view(), mapping, &params, &crossbar, &mut rng)?;
                let ideal = array.ideal_vmm(input.view())?;
                let real = array.parasitic_vmm(input.view())?;
                let norm = ideal.dot(&ideal).sqrt();
                let diff = &real - &ideal;
                let rel = if norm > 0.0 { diff.dot(&diff).sqrt() / norm } else { 0.0 };
                sum += rel;
                max = max.max(rel);
            }
            Ok((sum / v.trials as f64, max))
        })
        .collect();
    let mut table = Table::new("vmm", &["r_line", "rows", "cols", "trials", "mean_rel_error", "max_rel_error"]);
    for (&r_line, p) in v.r_line.iter().zip(points) {
        let (mean, max) = p?;
        table.push(cells![r_line, v.rows, v.cols, v.trials, mean, max]);
    }
    Ok(vec![table])
}

fn trace_table(trace: &Trace) -> CliResult<Table> {
    table_from_writer("trace", |w| trace.write_csv(w))
}

pub fn hysteresis(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    let h = &cfg.hysteresis;
    let params = cfg.meminductor();
    let result = hysteresis_trace(&params, h.v_m, h.f, h.cycles, h.steps_per_cycle)?;
    let mut summary = Table::new(
        "summary",
        &["f", "v_m", "lobe_area", "pinch_residual", "m_inv_amplitude", "m_inv_amplitude_closed_form"],
    );
    summary.push(cells![
        h.f,
        h.v_m,
        result.lobe_area,
        result.pinch_residual,
        result.m_inv_amplitude,
        params.modulation_closed_form(h.v_m, h.f)
    ]);
    let mut tables = vec![summary];
    if h.trace {
        tables.push(trace_table(&result.trace)?);
    }
    Ok(tables)
}

pub fn sweep(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    let h = &cfg.hysteresis;
    let params = cfg.meminductor();
    let run = |x: f64| -> memsim::Result<Hysteresis> {
        let (v_m, f) = match cfg.sweep.parameter {
            SweepParameter::Frequency => (h.v_m, x),
            SweepParameter::Amplitude => (x, h.f),
        };
        hysteresis_trace(&params, v_m, f, h.cycles, h.steps_per_cycle)
    };
    let results: Vec<memsim::Result<SweepRow>> =
        cfg.sweep.values.par_iter().map(|&x| run(x).map(|r| SweepRow::from((x, &r)))).collect();
    let mut table = Table::new("sweep", &["sweep_param", "lobe_area", "pinch_residual", "m_inv_amplitude"]);
    for r in results {
        let r = r?;
        table.push(cells![r.sweep_param, r.lobe_area, r.pinch_residual, r.m_inv_amplitude]);
    }
    Ok(vec![table])
}

pub fn amoeba(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    let a = &cfg.amoeba;
    let mut params = cfg.meminductor();
    if a.frozen {
        params = MeminductorParams { gm3: 0.0, ..params };
    }
    let input = Waveform::dip_train(a.baseline, a.depth, a.period, a.width, a.count, a.dt);
    let trace = simulate_amoeba(&params, a.r, a.c, &input)?;
    let lag = peak_lag(&trace.v_in, &trace.v_out, a.max_lag);
    let (lo, hi) = trace.v_out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut summary = Table::new("summary", &["lag_samples", "lag_seconds", "v_out_min", "v_out_max"]);
    summary.push(cells![lag, lag as f64 * a.dt, lo, hi]);
    let trace = table_from_writer("trace", |w| trace.write_csv(w))?;
    Ok(vec![summary, trace])
}

pub fn cost(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    let c = &cfg.cost;
    let layers = match c.network {
        NetworkChoice::Vgg8 => vgg8_layers(),
        other => layers_from_spec(&other.spec(c.hidden))?,
    };
    let plan = plan_tiles(&layers, &cfg.plan)?;
    let traffic = match c.mode {
        CostMode::Inference => TrafficStats::inference(&layers, &plan, &cfg.plan, &cfg.tech, c.samples, c.input_bits),
        CostMode::Training => TrafficStats::training(&layers, &plan, &cfg.plan, &cfg.tech, c.samples, c.input_bits),
    };
    let report = estimate_costs(&plan, &traffic, &cfg.tech, c.adc_bits)?;
    let costs = table_from_writer("cost", |w| report.write_csv(w))?;
    let mut layer_table = Table::new("plan", &["layer", "rows", "cols", "positions", "tiles", "arrays_used", "mapped_cells"]);
    for (shape, a) in layers.iter().zip(&plan.layers) {
        layer_table.push(cells![a.name, shape.rows, shape.cols, shape.positions, a.tiles, a.arrays_used, a.mapped_cells]);
    }
    let mut search = Table::new("search", &["tile_arrays", "utilization"]);
    for &(arrays, util) in &plan.search {
        search.push(cells![arrays, util]);
    }
    Ok(vec![costs, layer_table, search])
}

pub fn dispatch(cfg: &ExperimentConfig) -> CliResult<Vec<Table>> {
    use crate::config::ExperimentKind::*;
    match cfg.experiment {
        Train => train(cfg),
        VmmBench => vmm_bench(cfg),
        Hysteresis => hysteresis(cfg),
        Sweep => sweep(cfg),
        Amoeba => amoeba(cfg),
        Cost => cost(cfg),
    }
}
