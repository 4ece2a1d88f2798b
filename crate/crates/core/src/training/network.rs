//! Layer stacks, forward/backward passes and softmax cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::analog::{AnalogBackend, Backend, BackpropWeights, IdealBackend, LayerHardware};
use super::conv::{col2im, dense_regions, im2col, im2col_map, max_pool, max_pool_backward, Shape3};
use crate::error::{Result, SimError};

fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default)]
        padding: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    /// 2x2, stride 2.
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape3,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Three 3x3 convolutions with 5, 15 and 25 filters, then one dense layer.
    pub fn mnist_cnn() -> Self {
        use LayerSpec::*;
        Self {
            input: Shape3::new(28, 28, 1),
            classes: 10,
            layers: vec![
                Conv { filters: 5, kernel: 3, padding: 0 },
                Relu,
                MaxPool,
                Conv { filters: 15, kernel: 3, padding: 0 },
                Relu,
                MaxPool,
                Conv { filters: 25, kernel: 3, padding: 0 },
                Relu,
                Dense { units: 10 },
            ],
        }
    }

    /// Single-hidden-layer perceptron on flattened MNIST.
    pub fn mnist_mlp(hidden: usize) -> Self {
        Self {
            input: Shape3::new(28, 28, 1),
            classes: 10,
            layers: vec![LayerSpec::Dense { units: hidden }, LayerSpec::Relu, LayerSpec::Dense { units: 10 }],
        }
    }

    /// VGG-8 for 32x32x3 images.
    pub fn vgg8() -> Self {
        use LayerSpec::*;
        let conv = |filters| Conv { filters, kernel: 3, padding: 1 };
        Self {
            input: Shape3::new(32, 32, 3),
            classes: 10,
            layers: vec![
                conv(128), Relu, conv(128), Relu, MaxPool,
                conv(256), Relu, conv(256), Relu, MaxPool,
                conv(512), Relu, conv(512), Relu, MaxPool,
                Dense { units: 1024 }, Relu, Dense { units: 10 },
            ],
        }
    }

    /// Input shape of every layer plus the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        if self.input.is_empty() || self.classes == 0 {
            return Err(SimError::Shape("input and class count must be non-empty".into()));
        }
        let mut shapes = vec![self.input];
        for (k, l) in self.layers.iter().enumerate() {
            let cur = *shapes.last().expect("starts non-empty");
            let next = match *l {
                LayerSpec::Conv { filters, kernel, padding } => {
                    if filters == 0 {
                        return Err(SimError::Shape(format!("layer {k}: conv needs filters")));
                    }
                    cur.conv_out(kernel, padding, filters)
                        .ok_or_else(|| SimError::Shape(format!("layer {k}: kernel {kernel} does not fit {cur:?}")))?
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(SimError::Shape(format!("layer {k}: dense needs units")));
                    }
                    Shape3::new(1, 1, units)
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool => cur.pool_out().ok_or_else(|| SimError::Shape(format!("layer {k}: cannot pool {cur:?}")))?,
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.classes => Ok(()),
            _ => Err(SimError::Shape(format!(
                "final layer must be dense with {} units, output is {:?}",
                self.classes,
                shapes.last()
            ))),
        }
    }

    /// `(fan_in, outputs)` of each weighted layer, in order.
    pub fn weighted_dims(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .filter_map(|(l, s)| match *l {
                LayerSpec::Conv { filters, kernel, .. } => Some((kernel * kernel * s.c, filters)),
                LayerSpec::Dense { units } => Some((s.len(), units)),
                _ => None,
            })
            .collect())
    }
}

/// How weighted layers store their weights.
#[derive(Debug, Clone)]
pub enum Storage {
    Ideal,
    /// One hardware description per weighted layer.
    Analog { layers: Vec<LayerHardware>, backprop: BackpropWeights, seed: u64 },
}

#[derive(Debug)]
enum Op {
    Conv { in_shape: Shape3, out_shape: Shape3, kernel: usize, padding: usize },
    Dense,
    Relu,
    MaxPool { in_shape: Shape3 },
}

#[derive(Debug)]
struct Layer {
    op: Op,
    weights: Option<(Box<dyn Backend>, Array1<f64>)>,
}

#[derive(Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// What each layer saved during the forward pass.
#[derive(Debug, Clone)]
enum Saved {
    /// Input to a matrix multiply (patches for convolutions).
    Input(Array2<f64>),
    Mask(Array2<bool>),
    Argmax(Vec<usize>),
}

/// Intermediates of a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    saved: Vec<Saved>,
    pub logits: Array2<f64>,
}

/// Weight and bias gradients of each weighted layer, in order.
pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

impl Network {
    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, storage: &Storage, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.shapes()?;
        let dims = spec.weighted_dims()?;
        if let Storage::Analog { layers, .. } = storage {
            if layers.len() != dims.len() {
                return Err(SimError::Config(format!(
                    "{} hardware descriptions for {} weighted layers",
                    layers.len(),
                    dims.len()
                )));
            }
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut widx = 0;
        for (k, l) in spec.layers.iter().enumerate() {
            let (in_shape, out_shape) = (shapes[k], shapes[k + 1]);
            let op = match *l {
                LayerSpec::Conv { kernel, padding, .. } => Op::Conv { in_shape, out_shape, kernel, padding },
                LayerSpec::Dense { .. } => Op::Dense,
                LayerSpec::Relu => Op::Relu,
                LayerSpec::MaxPool => Op::MaxPool { in_shape },
            };
            let weights = match l {
                LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => {
                    let (fan_in, out) = dims[widx];
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    let w = Array2::from_shape_fn((fan_in, out), |_| normal.sample(rng));
                    let backend: Box<dyn Backend> = match storage {
                        Storage::Ideal => Box::new(IdealBackend { w }),
                        Storage::Analog { layers: hw, backprop, seed } => {
                            let hw = &hw[widx];
                            let regions = match *l {
                                LayerSpec::Conv { kernel, filters, .. } => {
                                    im2col_map(kernel, in_shape.c, filters, hw.array_rows)?.regions
                                }
                                _ => dense_regions(fan_in, hw.array_rows),
                            };
                            let layer_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(widx as u64 + 1));
                            Box::new(AnalogBackend::new(w.view(), &regions, hw, *backprop, layer_seed)?)
                        }
                    };
                    widx += 1;
                    Some((backend, Array1::zeros(out)))
                }
                _ => None,
            };
            layers.push(Layer { op, weights });
        }
        Ok(Self { spec, layers })
    }

    fn weighted(&self) -> impl Iterator<Item = &(Box<dyn Backend>, Array1<f64>)> {
        self.layers.iter().filter_map(|l| l.weights.as_ref())
    }

    fn weighted_mut(&mut self) -> impl Iterator<Item = &mut (Box<dyn Backend>, Array1<f64>)> {
        self.layers.iter_mut().filter_map(|l| l.weights.as_mut())
    }

    /// Stored weights and biases of each weighted layer.
    pub fn parameters(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        self.weighted().map(|(b, bias)| (b.stored_weights(), bias.clone())).collect()
    }

    /// Overwrite weights and biases (analog layers are reprogrammed).
    pub fn set_parameters(&mut self, params: &[(Array2<f64>, Array1<f64>)]) -> Result<()> {
        let n = self.weighted().count();
        if params.len() != n {
            return Err(SimError::Shape(format!("{} parameter sets for {n} layers", params.len())));
        }
        for ((backend, bias), (w, b)) in self.weighted_mut().zip(params) {
            if b.len() != bias.len() {
                return Err(SimError::Shape("bias length mismatch".into()));
            }
            backend.set_weights(w.view())?;
            bias.assign(b);
        }
        Ok(())
    }

    /// Run a batch (one flattened NHWC sample per row) through the network.
    pub fn forward(&mut self, x: ArrayView2<f64>, calibrate: bool) -> Result<Activations> {
        if x.ncols() != self.spec.input.len() {
            return Err(SimError::Shape(format!(
                "{} input features, network expects {}",
                x.ncols(),
                self.spec.input.len()
            )));
        }
        let batch = x.nrows();
        let mut a = x.to_owned();
        let mut saved = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            a = match (&layer.op, &mut layer.weights) {
                (Op::Conv { in_shape, out_shape, kernel, padding }, Some((backend, bias))) => {
                    let cols = im2col(a.view(), *in_shape, *kernel, *padding)?;
                    let mut y = backend.forward(cols.view(), calibrate)?;
                    y += &*bias;
                    saved.push(Saved::Input(cols));
                    y.into_shape_with_order((batch, out_shape.len())).map_err(|e| SimError::Shape(e.to_string()))?
                }
                (Op::Dense, Some((backend, bias))) => {
                    let mut y = backend.forward(a.view(), calibrate)?;
                    y += &*bias;
                    saved.push(Saved::Input(a));
                    y
                }
                (Op::Relu, _) => {
                    let mask = a.mapv(|v| v > 0.0);
                    a.mapv_inplace(|v| v.max(0.0));
                    saved.push(Saved::Mask(mask));
                    a
                }
                (Op::MaxPool { in_shape }, _) => {
                    let (y, arg) = max_pool(a.view(), *in_shape)?;
                    saved.push(Saved::Argmax(arg));
                    y
                }
                _ => unreachable!("weighted ops always carry weights"),
            };
        }
        Ok(Activations { saved, logits: a })
    }

    /// Gradients of the mean loss given `dlogits = d loss / d logits`.
    pub fn backward(&self, acts: &Activations, dlogits: ArrayView2<f64>) -> Result<Gradients> {
        if dlogits.dim() != acts.logits.dim() {
            return Err(SimError::Shape("logit gradient does not match the forward pass".into()));
        }
        let batch = dlogits.nrows();
        let mut grads = Vec::new();
        let mut d = dlogits.to_owned();
        for (layer, saved) in self.layers.iter().zip(&acts.saved).rev() {
            d = match (&layer.op, &layer.weights, saved) {
                (Op::Conv { in_shape, out_shape, kernel, padding }, Some((backend, _)), Saved::Input(cols)) => {
                    let dy = d
                        .into_shape_with_order((batch * out_shape.h * out_shape.w, out_shape.c))
                        .map_err(|e| SimError::Shape(e.to_string()))?;
                    grads.push((cols.t().dot(&dy), dy.sum_axis(Axis(0))));
                    let dcols = dy.dot(&backend.backprop_weights().t());
                    col2im(dcols.view(), batch, *in_shape, *kernel, *padding)?
                }
                (Op::Dense, Some((backend, _)), Saved::Input(x)) => {
                    grads.push((x.t().dot(&d), d.sum_axis(Axis(0))));
                    d.dot(&backend.backprop_weights().t())
                }
                (Op::Relu, _, Saved::Mask(mask)) => {
                    ndarray::Zip::from(&mut d).and(mask).for_each(|g, &m| {
                        if !m {
                            *g = 0.0;
                        }
                    });
                    d
                }
                (Op::MaxPool { in_shape }, _, Saved::Argmax(arg)) => max_pool_backward(d.view(), arg, in_shape.len()),
                _ => return Err(SimError::Shape("forward intermediates do not match the network".into())),
            };
        }
        grads.reverse();
        Ok(grads)
    }

    /// SGD step on every weighted layer.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for ((backend, bias), (gw, gb)) in self.weighted_mut().zip(grads) {
            backend.update(gw.view(), lr)?;
            bias.scaled_add(-lr, gb);
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy, the gradient w.r.t. the logits and the number of correct argmaxes.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>, usize)> {
    if logits.nrows() != labels.len() || logits.nrows() == 0 {
        return Err(SimError::Shape(format!("{} logit rows for {} labels", logits.nrows(), labels.len())));
    }
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let (mut loss, mut correct) = (0.0, 0);
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        if y >= row.len() {
            return Err(SimError::Shape(format!("label {y} outside {} classes", row.len())));
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (gk, &v) in g.iter_mut().zip(row) {
            *gk = (v - log_z).exp() / n;
        }
        g[y] -= 1.0 / n;
        let best = row.iter().enumerate().fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
        correct += usize::from(best == y);
    }
    Ok((loss / n, grad, correct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            input: Shape3::new(1, 1, 6),
            classes: 3,
            layers: vec![LayerSpec::Dense { units: 5 }, LayerSpec::Relu, LayerSpec::Dense { units: 3 }],
        }
    }

    fn conv_spec() -> NetworkSpec {
        NetworkSpec {
            input: Shape3::new(6, 6, 2),
            classes: 3,
            layers: vec![
                LayerSpec::Conv { filters: 3, kernel: 3, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Conv { filters: 4, kernel: 3, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 3 },
            ],
        }
    }

    fn loss_of(net: &mut Network, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let acts = net.forward(x, false).unwrap();
        softmax_cross_entropy(acts.logits.view(), y).unwrap().0
    }

    fn finite_difference_check(spec: NetworkSpec, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(spec.clone(), &Storage::Ideal, &mut rng).unwrap();
        let mut params = net.parameters();
        for (_, b) in &mut params {
            b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        net.set_parameters(&params).unwrap();
        let x = Array2::from_shape_fn((4, spec.input.len()), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..4).map(|k| k % spec.classes).collect();
        let acts = net.forward(x.view(), false).unwrap();
        let (_, dlogits, _) = softmax_cross_entropy(acts.logits.view(), &y).unwrap();
        let grads = net.backward(&acts, dlogits.view()).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for (layer, (gw, gb)) in grads.iter().enumerate() {
            for (idx, &g) in gw.indexed_iter() {
                let mut p = params.clone();
                p[layer].0[idx] += h;
                net.set_parameters(&p).unwrap();
                let up = loss_of(&mut net, x.view(), &y);
                p[layer].0[idx] -= 2.0 * h;
                net.set_parameters(&p).unwrap();
                let down = loss_of(&mut net, x.view(), &y);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - g).abs() / g.abs().max(1e-3));
            }
            for (idx, &g) in gb.indexed_iter() {
                let mut p = params.clone();
                p[layer].1[idx] += h;
                net.set_parameters(&p).unwrap();
                let up = loss_of(&mut net, x.view(), &y);
                p[layer].1[idx] -= 2.0 * h;
                net.set_parameters(&p).unwrap();
                let down = loss_of(&mut net, x.view(), &y);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - g).abs() / g.abs().max(1e-3));
            }
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        for seed in 0..3 {
            finite_difference_check(toy_spec(), seed);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        finite_difference_check(conv_spec(), 11);
    }

    #[test]
    fn softmax_gradient_hand_formula() {
        let logits = array![[0.3, -1.2, 2.0]];
        let (loss, g, _) = softmax_cross_entropy(logits.view(), &[1]).unwrap();
        let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        assert!((loss - (z.ln() + 1.2)).abs() < 1e-12);
        for k in 0..3 {
            let want = e[k] / z - if k == 1 { 1.0 } else { 0.0 };
            assert!((g[[0, k]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_output_dense_gradient_is_activation_times_error() {
        let spec = NetworkSpec { input: Shape3::new(1, 1, 4), classes: 2, layers: vec![LayerSpec::Dense { units: 2 }] };
        let mut net = Network::new(spec, &Storage::Ideal, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = array![[0.5, -1.0, 2.0, 0.25]];
        let acts = net.forward(x.view(), false).unwrap();
        let (_, d, _) = softmax_cross_entropy(acts.logits.view(), &[0]).unwrap();
        let g = net.backward(&acts, d.view()).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                assert!((g[0].0[[i, k]] - x[[0, i]] * d[[0, k]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_error_zero_gradients() {
        let mut net = Network::new(conv_spec(), &Storage::Ideal, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = Array2::from_elem((2, 72), 0.3);
        let acts = net.forward(x.view(), false).unwrap();
        let g = net.backward(&acts, Array2::zeros((2, 3)).view()).unwrap();
        assert!(g.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_input_zero_logits() {
        let mut net = Network::new(NetworkSpec::mnist_cnn(), &Storage::Ideal, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let acts = net.forward(Array2::zeros((2, 784)).view(), false).unwrap();
        assert!(acts.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ideal_forward_matches_reference_conv_net() {
        let spec = conv_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::new(spec, &Storage::Ideal, &mut rng).unwrap();
        let params = net.parameters();
        let x = Array2::from_shape_fn((2, 72), |_| rng.random_range(-1.0..1.0));
        let got = net.forward(x.view(), false).unwrap().logits;

        // Straightforward nested-loop reference.
        let conv = |img: &Array4<f64>, w: &Array2<f64>, b: &Array1<f64>, pad: usize| {
            let (n, h, wd, c) = img.dim();
            let f = w.ncols();
            let (oh, ow) = (h + 2 * pad - 2, wd + 2 * pad - 2);
            Array4::from_shape_fn((n, oh, ow, f), |(s, oy, ox, o)| {
                let mut acc = b[o];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = ((oy + ky) as isize - pad as isize, (ox + kx) as isize - pad as isize);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ch in 0..c {
                            acc += img[[s, iy as usize, ix as usize, ch]] * w[[(ky * 3 + kx) * c + ch, o]];
                        }
                    }
                }
                acc.max(0.0)
            })
        };
        let img = x.to_shape((2, 6, 6, 2)).unwrap().to_owned();
        let a1 = conv(&img, &params[0].0, &params[0].1, 1);
        let p1 = Array4::from_shape_fn((2, 3, 3, 3), |(s, y, x, c)| {
            let mut m = f64::NEG_INFINITY;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                m = m.max(a1[[s, 2 * y + dy, 2 * x + dx, c]]);
            }
            m
        });
        let a2 = conv(&p1, &params[1].0, &params[1].1, 0);
        let flat = a2.to_shape((2, 4)).unwrap();
        let want = flat.dot(&params[2].0) + &params[2].1;
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::mnist_cnn().validate().is_ok());
        assert_eq!(NetworkSpec::mnist_cnn().weighted_dims().unwrap(), vec![(9, 5), (45, 15), (135, 25), (225, 10)]);
        assert!(NetworkSpec::vgg8().validate().is_ok());
        let mut bad = NetworkSpec::mnist_mlp(32);
        bad.classes = 7;
        assert!(bad.validate().is_err());
        let tiny = NetworkSpec { input: Shape3::new(2, 2, 1), classes: 2, layers: vec![LayerSpec::Conv { filters: 2, kernel: 3, padding: 0 }, LayerSpec::Dense { units: 2 }] };
        assert!(tiny.validate().is_err());
    }
}
