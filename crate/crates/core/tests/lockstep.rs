//! In-situ training on linear devices against a software quantized-SGD oracle.

use memsim::crossbar::CrossbarConfig;
use memsim::devices::DeviceParams;
use memsim::training::{
    softmax_cross_entropy, AdcMode, BackpropWeights, CellConfig, LayerHardware, LayerSpec, Network, NetworkSpec,
    PeripheryConfig, Shape3, Storage,
};
use memsim::{rng_from_seed, SimRng};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

const P_MAX: i64 = 31;

struct OracleLayer {
    kp: Array2<i64>,
    kn: Array2<i64>,
    residual: Array2<f64>,
    bias: Array1<f64>,
    step: f64,
}

impl OracleLayer {
    fn from_weights(w: &Array2<f64>, bias: &Array1<f64>, step: f64) -> Self {
        let levels = w.mapv(|v| (v / step).round() as i64);
        Self {
            kp: levels.mapv(|l| l.max(0)),
            kn: levels.mapv(|l| (-l).max(0)),
            residual: Array2::zeros(w.dim()),
            bias: bias.clone(),
            step,
        }
    }

    fn weights(&self) -> Array2<f64> {
        (&self.kp - &self.kn).mapv(|l| l as f64 * self.step)
    }

    fn update(&mut self, g: &Array2<f64>, gb: &Array1<f64>, lr: f64) {
        for ((i, j), &gij) in g.indexed_iter() {
            let r = self.residual[[i, j]] - lr * gij;
            let n = ((r / self.step).round() as i64).clamp(-P_MAX, P_MAX);
            self.residual[[i, j]] = r - n as f64 * self.step;
            let (lower, raise) = if n > 0 { (&mut self.kn, &mut self.kp) } else { (&mut self.kp, &mut self.kn) };
            let m = n.abs();
            let k = m.min(lower[[i, j]]);
            lower[[i, j]] -= k;
            raise[[i, j]] = (raise[[i, j]] + m - k).min(P_MAX);
        }
        self.bias.scaled_add(-lr, gb);
    }
}

#[test]
fn linear_devices_track_quantized_sgd_for_100_steps() {
    let spec = NetworkSpec {
        input: Shape3::new(1, 1, 6),
        classes: 3,
        layers: vec![LayerSpec::Dense { units: 4 }, LayerSpec::Relu, LayerSpec::Dense { units: 3 }],
    };
    let device = DeviceParams { a_ltp: 1e12, a_ltd: 1e12, ..DeviceParams::tiox_memristor() };
    let hw = |w_limit| LayerHardware {
        cells: CellConfig::Device { device: device.clone(), crossbar: CrossbarConfig::default() },
        periphery: PeripheryConfig { input_bits: 32, adc: AdcMode::Exact, adc_bits: 8, recalibrate_every: 1 },
        w_limit,
        array_rows: 128,
        array_cols: 128,
        parasitic_refresh: 1,
    };
    let limits = [1.5, 1.5];
    let storage = Storage::Analog { layers: limits.iter().map(|&l| hw(l)).collect(), backprop: BackpropWeights::Effective, seed: 5 };
    let mut rng: SimRng = rng_from_seed(17);
    let mut net = Network::new(spec, &storage, &mut rng).unwrap();
    let params = net.parameters();
    let mut oracle: Vec<OracleLayer> =
        params.iter().zip(limits).map(|((w, b), l)| OracleLayer::from_weights(w, b, l / P_MAX as f64)).collect();
    for (o, (w, _)) in oracle.iter().zip(&params) {
        let diff = (&o.weights() - w).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6 * o.step, "initial programming off by {diff}");
    }

    let lr = 0.5;
    let mut moved = 0usize;
    for step in 0..100 {
        let x = Array2::from_shape_fn((8, 6), |_| rng.random_range(0.0..1.0));
        let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();

        let acts = net.forward(x.view(), false).unwrap();
        let (_, d, _) = softmax_cross_entropy(acts.logits.view(), &y).unwrap();
        let grads = net.backward(&acts, d.view()).unwrap();
        net.apply_gradients(&grads, lr).unwrap();

        // Oracle forward/backward in plain floating point.
        let (w1, w2) = (oracle[0].weights(), oracle[1].weights());
        let pre = x.dot(&w1) + &oracle[0].bias;
        let h = pre.mapv(|v| v.max(0.0));
        let logits = h.dot(&w2) + &oracle[1].bias;
        let (_, d, _) = softmax_cross_entropy(logits.view(), &y).unwrap();
        let g2 = h.t().dot(&d);
        let mut dh = d.dot(&w2.t());
        dh.zip_mut_with(&pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        let g1 = x.t().dot(&dh);
        let before: Vec<Array2<f64>> = oracle.iter().map(OracleLayer::weights).collect();
        oracle[0].update(&g1, &dh.sum_axis(Axis(0)), lr);
        oracle[1].update(&g2, &d.sum_axis(Axis(0)), lr);
        moved += oracle.iter().zip(&before).map(|(o, b)| (&o.weights() - b).iter().filter(|v| v.abs() > 0.0).count()).sum::<usize>();

        for (k, (o, (w, b))) in oracle.iter().zip(net.parameters()).enumerate() {
            let dw = (&o.weights() - &w).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let db = (&o.bias - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dw < 1e-6 * o.step, "step {step}, layer {k}: weights differ by {dw}");
            assert!(db < 1e-6, "step {step}, layer {k}: biases differ by {db}");
        }
    }
    assert!(moved > 50, "only {moved} weight moves; the oracle is not exercised");
}
