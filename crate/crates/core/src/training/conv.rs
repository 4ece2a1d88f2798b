//! Patch extraction for convolutions and the mapping of kernels onto array rows.
//!
//! Activations are stored NHWC, one sample per row of a 2-D array. Unrolled
//! patches order their columns `(ky, kx, c)`, so the `K·K` spatial
//! sub-matrices of a kernel occupy consecutive `D`-row blocks of the unrolled
//! weight matrix.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output shape of a stride-1 convolution, if the kernel fits.
    pub fn conv_out(&self, kernel: usize, padding: usize, filters: usize) -> Option<Shape3> {
        let (h, w) = (self.h + 2 * padding, self.w + 2 * padding);
        (kernel >= 1 && h >= kernel && w >= kernel).then(|| Shape3::new(h - kernel + 1, w - kernel + 1, filters))
    }

    /// Output shape of 2x2 stride-2 max pooling (odd edges are dropped).
    pub fn pool_out(&self) -> Option<Shape3> {
        (self.h >= 2 && self.w >= 2).then(|| Shape3::new(self.h / 2, self.w / 2, self.c))
    }
}

/// Unroll every `kernel x kernel` patch of each sample into one row.
///
/// Returns `(batch * out_h * out_w, kernel * kernel * c)`; rows run over
/// `(sample, oy, ox)`, columns over `(ky, kx, c)`. Zero padding.
pub fn im2col(x: ArrayView2<f64>, shape: Shape3, kernel: usize, padding: usize) -> Result<Array2<f64>> {
    let out = check_conv(x, shape, kernel, padding)?;
    let (b, k, c) = (x.nrows(), kernel, shape.c);
    let mut cols = Array2::zeros((b * out.h * out.w, k * k * c));
    let data = cols.as_slice_mut().expect("fresh array is contiguous");
    let width = k * k * c;
    for s in 0..b {
        let img = x.row(s);
        let img = img.as_slice().map(std::borrow::Cow::Borrowed).unwrap_or_else(|| img.to_vec().into());
        for oy in 0..out.h {
            for ox in 0..out.w {
                let row = &mut data[((s * out.h + oy) * out.w + ox) * width..][..width];
                for ky in 0..k {
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= shape.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox + kx) as isize - padding as isize;
                        if ix < 0 || ix >= shape.w as isize {
                            continue;
                        }
                        let src = (iy as usize * shape.w + ix as usize) * c;
                        row[(ky * k + kx) * c..][..c].copy_from_slice(&img[src..src + c]);
                    }
                }
            }
        }
    }
    Ok(cols)
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the images.
pub fn col2im(cols: ArrayView2<f64>, batch: usize, shape: Shape3, kernel: usize, padding: usize) -> Result<Array2<f64>> {
    let out = shape
        .conv_out(kernel, padding, 1)
        .ok_or_else(|| SimError::Shape(format!("kernel {kernel} does not fit {shape:?}")))?;
    let (k, c) = (kernel, shape.c);
    let width = k * k * c;
    if cols.dim() != (batch * out.h * out.w, width) {
        return Err(SimError::Shape(format!("patch gradient {:?} does not match {shape:?}", cols.dim())));
    }
    let mut x = Array2::zeros((batch, shape.len()));
    for s in 0..batch {
        let mut img = x.row_mut(s);
        for oy in 0..out.h {
            for ox in 0..out.w {
                let row = cols.row((s * out.h + oy) * out.w + ox);
                for ky in 0..k {
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= shape.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox + kx) as isize - padding as isize;
                        if ix < 0 || ix >= shape.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * shape.w + ix as usize) * c;
                        for ch in 0..c {
                            img[dst + ch] += row[(ky * k + kx) * c + ch];
                        }
                    }
                }
            }
        }
    }
    Ok(x)
}

fn check_conv(x: ArrayView2<f64>, shape: Shape3, kernel: usize, padding: usize) -> Result<Shape3> {
    if x.ncols() != shape.len() {
        return Err(SimError::Shape(format!("{} features for input shape {shape:?}", x.ncols())));
    }
    shape
        .conv_out(kernel, padding, 1)
        .ok_or_else(|| SimError::Shape(format!("kernel {kernel} does not fit {shape:?}")))
}

/// 2x2 stride-2 max pooling. Returns the pooled batch and, per output, the
/// flat input index that won.
pub fn max_pool(x: ArrayView2<f64>, shape: Shape3) -> Result<(Array2<f64>, Vec<usize>)> {
    let out = shape.pool_out().ok_or_else(|| SimError::Shape(format!("cannot pool {shape:?}")))?;
    if x.ncols() != shape.len() {
        return Err(SimError::Shape(format!("{} features for input shape {shape:?}", x.ncols())));
    }
    let mut y = Array2::zeros((x.nrows(), out.len()));
    let mut arg = vec![0usize; x.nrows() * out.len()];
    for s in 0..x.nrows() {
        let img = x.row(s);
        for oy in 0..out.h {
            for ox in 0..out.w {
                for ch in 0..shape.c {
                    let mut best = (usize::MAX, f64::NEG_INFINITY);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * oy + dy) * shape.w + 2 * ox + dx) * shape.c + ch;
                        if img[idx] > best.1 || best.0 == usize::MAX {
                            best = (idx, img[idx]);
                        }
                    }
                    let o = (oy * out.w + ox) * out.c + ch;
                    y[[s, o]] = best.1;
                    arg[s * out.len() + o] = best.0;
                }
            }
        }
    }
    Ok((y, arg))
}

/// Route pooled gradients back to the winning inputs.
pub fn max_pool_backward(dy: ArrayView2<f64>, arg: &[usize], in_len: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((dy.nrows(), in_len));
    let out_len = dy.ncols();
    for s in 0..dy.nrows() {
        for o in 0..out_len {
            dx[[s, arg[s * out_len + o]]] += dy[[s, o]];
        }
    }
    dx
}

/// One spatial tap of a kernel: the `D x N` block of weights applied at `(ky, kx)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubMatrix {
    pub ky: usize,
    pub kx: usize,
    /// Rows of the unrolled weight matrix holding this tap.
    pub rows: Range<usize>,
}

/// Placement of an unrolled conv kernel on arrays with `array_rows` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvMap {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub sub_matrices: Vec<SubMatrix>,
    /// Row ranges read as one array region; their partial sums are added digitally.
    pub regions: Vec<Range<usize>>,
}

/// Split a `kernel x kernel x D -> N` convolution into its `K·K` sub-matrices
/// and pack them, whole where possible, into array regions of at most
/// `array_rows` rows. A tap wider than an array is split across regions.
pub fn im2col_map(kernel: usize, in_channels: usize, out_channels: usize, array_rows: usize) -> Result<ConvMap> {
    if kernel == 0 || in_channels == 0 || out_channels == 0 || array_rows == 0 {
        return Err(SimError::Mapping("kernel, channels and array rows must be positive".into()));
    }
    let d = in_channels;
    let sub_matrices: Vec<SubMatrix> = (0..kernel * kernel)
        .map(|t| SubMatrix { ky: t / kernel, kx: t % kernel, rows: t * d..(t + 1) * d })
        .collect();
    let mut regions: Vec<Range<usize>> = Vec::new();
    for sm in &sub_matrices {
        if d > array_rows {
            let mut start = sm.rows.start;
            while start < sm.rows.end {
                let end = (start + array_rows).min(sm.rows.end);
                regions.push(start..end);
                start = end;
            }
            continue;
        }
        match regions.last_mut() {
            Some(r) if r.end == sm.rows.start && r.len() + d <= array_rows => r.end = sm.rows.end,
            _ => regions.push(sm.rows.clone()),
        }
    }
    Ok(ConvMap { kernel, in_channels, out_channels, sub_matrices, regions })
}

/// Row regions for a dense layer: consecutive chunks of `array_rows`.
pub fn dense_regions(rows: usize, array_rows: usize) -> Vec<Range<usize>> {
    (0..rows.div_ceil(array_rows)).map(|k| k * array_rows..((k + 1) * array_rows).min(rows)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_conv(x: &Array4<f64>, w: &Array4<f64>, padding: usize) -> Array4<f64> {
        // x: (b, h, w, c); w: (ky, kx, c, n)
        let (b, h, wd, c) = x.dim();
        let (k, _, _, n) = w.dim();
        let (oh, ow) = (h + 2 * padding - k + 1, wd + 2 * padding - k + 1);
        let mut y = Array4::zeros((b, oh, ow, n));
        for s in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for f in 0..n {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (oy + ky, ox + kx);
                                if iy < padding || ix < padding || iy - padding >= h || ix - padding >= wd {
                                    continue;
                                }
                                for ch in 0..c {
                                    acc += x[[s, iy - padding, ix - padding, ch]] * w[[ky, kx, ch, f]];
                                }
                            }
                        }
                        y[[s, oy, ox, f]] = acc;
                    }
                }
            }
        }
        y
    }

    fn random4(dim: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn first_layer_has_nine_taps() {
        let m = im2col_map(3, 1, 5, 128).unwrap();
        assert_eq!(m.sub_matrices.len(), 9);
        assert!(m.sub_matrices.iter().all(|s| s.rows.len() == 1));
        assert_eq!(m.regions, vec![0..9]);
    }

    #[test]
    fn wide_taps_are_split_and_packed() {
        let m = im2col_map(3, 100, 8, 128).unwrap();
        assert_eq!(m.regions.len(), 9);
        let m = im2col_map(3, 200, 8, 128).unwrap();
        assert_eq!(m.regions.len(), 18);
        assert!(m.regions.iter().all(|r| r.len() <= 128));
        let m = im2col_map(3, 40, 8, 128).unwrap();
        assert_eq!(m.regions, vec![0..120, 120..240, 240..360]);
        assert!(im2col_map(3, 0, 8, 128).is_err());
    }

    #[test]
    fn partial_sums_equal_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (c, n, padding) in [(1, 5, 0), (3, 4, 0), (2, 3, 1)] {
            let x = random4((2, 4, 4, c), &mut rng);
            let w = random4((3, 3, c, n), &mut rng);
            let shape = Shape3::new(4, 4, c);
            let flat = x.to_shape((2, 16 * c)).unwrap().to_owned();
            let cols = im2col(flat.view(), shape, 3, padding).unwrap();
            let wm = w.to_shape((9 * c, n)).unwrap().to_owned();
            let map = im2col_map(3, c, n, 4).unwrap();
            let mut y = Array2::<f64>::zeros((cols.nrows(), n));
            for r in &map.regions {
                y += &cols.slice(ndarray::s![.., r.clone()]).dot(&wm.slice(ndarray::s![r.clone(), ..]));
            }
            let want = direct_conv(&x, &w, padding);
            let want = want.to_shape((cols.nrows(), n)).unwrap();
            for (a, b) in y.iter().zip(want.iter()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn unit_kernel_is_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((3, 2 * 2 * 4), |_| rng.random_range(-1.0..1.0));
        let cols = im2col(x.view(), Shape3::new(2, 2, 4), 1, 0).unwrap();
        assert_eq!(cols, x.to_shape((12, 4)).unwrap());
        assert_eq!(im2col_map(1, 4, 6, 128).unwrap().regions, vec![0..4]);
    }

    #[test]
    fn col2im_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = Shape3::new(5, 4, 2);
        let x = Array2::from_shape_fn((2, shape.len()), |_| rng.random_range(-1.0..1.0));
        let cols = im2col(x.view(), shape, 3, 1).unwrap();
        let g = Array2::from_shape_fn(cols.dim(), |_| rng.random_range(-1.0..1.0));
        let back = col2im(g.view(), 2, shape, 3, 1).unwrap();
        let lhs: f64 = (&cols * &g).sum();
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pooling_picks_maxima() {
        let shape = Shape3::new(3, 4, 1);
        let x = Array2::from_shape_vec((1, 12), (0..12).map(f64::from).collect()).unwrap();
        let (y, arg) = max_pool(x.view(), shape).unwrap();
        assert_eq!(y.row(0).to_vec(), vec![5.0, 7.0]);
        let dx = max_pool_backward(Array2::ones((1, 2)).view(), &arg, 12);
        assert_eq!(dx[[0, 5]], 1.0);
        assert_eq!(dx.sum(), 2.0);
    }
}
