//! Nodal analysis of a resistive crossbar with wire resistance.
//!
//! Each crosspoint `(i, j)` owns two nodes: one on row wire `i` and one on
//! column wire `j`, joined by the device conductance. Adjacent nodes along a
//! wire are joined by the segment conductance `1 / r_line`. Row `i` is driven
//! from the left through one segment; every column is sensed at virtual
//! ground through one segment below its last row.
//!
//! Small grids are solved with a banded Cholesky factorization; larger ones
//! with alternating line relaxation (exact tridiagonal solves along every row
//! wire, then every column wire).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Result, SimError};

/// Largest `min(rows, cols)` handled by the direct banded solver.
pub const DIRECT_LIMIT: usize = 256;

const RELAX_TOL: f64 = 1e-14;
const RELAX_MAX_SWEEPS: usize = 50_000;

#[derive(Debug, Clone)]
pub struct NodalSolution {
    pub row_v: Array2<f64>,
    pub col_v: Array2<f64>,
    /// Current flowing into the virtual-ground sense node of each column.
    pub currents: Array1<f64>,
}

/// Symmetric banded matrix stored by rows: row `i` keeps columns `i - bw ..= i`.
#[derive(Debug, Clone)]
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    fn add(&mut self, a: usize, b: usize, v: f64) {
        let (i, j) = if a >= b { (a, b) } else { (b, a) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// In-place Cholesky `A = L L^T`.
    fn factor(&mut self) -> Result<()> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let ri = i * w + self.bw - i;
            for j in lo..=i {
                let rj = j * w + self.bw - j;
                let s = self.data[ri + j] - dot(&self.data[ri + lo..ri + j], &self.data[rj + lo..rj + j]);
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(SimError::Numeric(format!(
                            "nonpositive pivot {s:e} at node {i}; the grid has a floating node"
                        )));
                    }
                    self.data[ri + i] = s.sqrt();
                } else {
                    self.data[ri + j] = s / self.data[rj + j];
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let start = b.iter().position(|&v| v != 0.0).unwrap_or(self.n);
        self.solve_from(b, start);
    }

    /// Solve assuming `b[..start]` is zero.
    fn solve_from(&self, b: &mut [f64], start: usize) {
        let w = self.bw + 1;
        for i in start..self.n {
            let lo = i.saturating_sub(self.bw).max(start);
            let ri = i * w + self.bw - i;
            b[i] = (b[i] - dot(&self.data[ri + lo..ri + i], &b[lo..i])) / self.data[ri + i];
        }
        for i in (0..self.n).rev() {
            let ri = i * w + self.bw - i;
            b[i] /= self.data[ri + i];
            let xi = b[i];
            let lo = i.saturating_sub(self.bw);
            for (bk, &l) in b[lo..i].iter_mut().zip(&self.data[ri + lo..ri + i]) {
                *bk -= l * xi;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Node numbering that keeps the bandwidth at `2 * min(rows, cols)`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    rows: usize,
    cols: usize,
    row_major: bool,
}

impl Layout {
    fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_major: cols <= rows }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, column_node: bool) -> usize {
        let cell = if self.row_major { i * self.cols + j } else { j * self.rows + i };
        cell * 2 + usize::from(column_node)
    }

    fn bandwidth(&self) -> usize {
        2 * self.rows.min(self.cols)
    }
}

enum Method {
    Direct { layout: Layout, band: Band },
    Relax,
}

/// A crossbar grid prepared for repeated solves with different excitations.
pub struct GridSolver<'a> {
    g: ArrayView2<'a, f64>,
    gw: f64,
    method: Method,
}

impl<'a> GridSolver<'a> {
    /// `g` holds device conductances (zero for an open cell).
    pub fn new(g: ArrayView2<'a, f64>, r_line: f64) -> Result<Self> {
        let (rows, cols) = g.dim();
        if rows == 0 || cols == 0 {
            return Err(SimError::Shape("empty grid".into()));
        }
        if !(r_line > 0.0) || !r_line.is_finite() {
            return Err(SimError::Parameter(format!("nodal solve needs r_line > 0, got {r_line}")));
        }
        if g.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(SimError::Domain("device conductances must be finite and non-negative".into()));
        }
        let gw = 1.0 / r_line;
        let method = if rows.min(cols) <= DIRECT_LIMIT {
            let layout = Layout::new(rows, cols);
            let mut band = Band::zeros(2 * rows * cols, layout.bandwidth());
            for i in 0..rows {
                for j in 0..cols {
                    let (r, c) = (layout.idx(i, j, false), layout.idx(i, j, true));
                    let gd = g[[i, j]];
                    band.add(r, r, gd);
                    band.add(c, c, gd);
                    band.add(r, c, -gd);
                    if j == 0 {
                        band.add(r, r, gw);
                    }
                    if i + 1 == rows {
                        band.add(c, c, gw);
                    }
                    if j + 1 < cols {
                        let r2 = layout.idx(i, j + 1, false);
                        band.add(r, r, gw);
                        band.add(r2, r2, gw);
                        band.add(r, r2, -gw);
                    }
                    if i + 1 < rows {
                        let c2 = layout.idx(i + 1, j, true);
                        band.add(c, c, gw);
                        band.add(c2, c2, gw);
                        band.add(c, c2, -gw);
                    }
                }
            }
            band.factor()?;
            Method::Direct { layout, band }
        } else {
            Method::Relax
        };
        Ok(Self { g, gw, method })
    }

    pub fn segment_conductance(&self) -> f64 {
        self.gw
    }

    /// Solve with current injections `b_row` / `b_col` at each node.
    pub fn solve(&self, b_row: &Array2<f64>, b_col: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let dim = self.g.dim();
        if b_row.dim() != dim || b_col.dim() != dim {
            return Err(SimError::Shape("excitation does not match grid".into()));
        }
        match &self.method {
            Method::Direct { layout, band } => {
                let mut x = vec![0.0; band.n];
                for ((i, j), &b) in b_row.indexed_iter() {
                    x[layout.idx(i, j, false)] = b;
                }
                for ((i, j), &b) in b_col.indexed_iter() {
                    x[layout.idx(i, j, true)] = b;
                }
                band.solve(&mut x);
                let row_v = Array2::from_shape_fn(dim, |(i, j)| x[layout.idx(i, j, false)]);
                let col_v = Array2::from_shape_fn(dim, |(i, j)| x[layout.idx(i, j, true)]);
                Ok((row_v, col_v))
            }
            Method::Relax => self.relax(b_row, b_col),
        }
    }

    fn relax(&self, b_row: &Array2<f64>, b_col: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (rows, cols) = self.g.dim();
        let gw = self.gw;
        let scale = b_row.iter().chain(b_col.iter()).fold(0.0f64, |m, v| m.max(v.abs())) / gw;
        let mut row_v = Array2::<f64>::zeros((rows, cols));
        let mut col_v = Array2::<f64>::zeros((rows, cols));
        if scale == 0.0 {
            return Ok((row_v, col_v));
        }
        let n = rows.max(cols);
        let (mut diag, mut rhs, mut out) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut scratch = vec![0.0; n];
        for _sweep in 0..RELAX_MAX_SWEEPS {
            let mut change = 0.0f64;
            for i in 0..rows {
                for j in 0..cols {
                    let gd = self.g[[i, j]];
                    diag[j] = gd + gw + if j + 1 < cols { gw } else { 0.0 };
                    rhs[j] = b_row[[i, j]] + gd * col_v[[i, j]];
                }
                thomas(&diag[..cols], -gw, &rhs[..cols], &mut out[..cols], &mut scratch[..cols]);
                for j in 0..cols {
                    change = change.max((out[j] - row_v[[i, j]]).abs());
                    row_v[[i, j]] = out[j];
                }
            }
            for j in 0..cols {
                for i in 0..rows {
                    let gd = self.g[[i, j]];
                    diag[i] = gd + gw + if i > 0 { gw } else { 0.0 };
                    rhs[i] = b_col[[i, j]] + gd * row_v[[i, j]];
                }
                thomas(&diag[..rows], -gw, &rhs[..rows], &mut out[..rows], &mut scratch[..rows]);
                for i in 0..rows {
                    change = change.max((out[i] - col_v[[i, j]]).abs());
                    col_v[[i, j]] = out[i];
                }
            }
            if change <= RELAX_TOL * scale {
                return Ok((row_v, col_v));
            }
        }
        Err(SimError::Numeric(format!(
            "line relaxation did not converge in {RELAX_MAX_SWEEPS} sweeps"
        )))
    }
}

/// Tridiagonal solve with a constant off-diagonal.
fn thomas(diag: &[f64], off: f64, rhs: &[f64], out: &mut [f64], c: &mut [f64]) {
    let n = diag.len();
    let mut denom = diag[0];
    c[0] = off / denom;
    out[0] = rhs[0] / denom;
    for k in 1..n {
        denom = diag[k] - off * c[k - 1];
        c[k] = off / denom;
        out[k] = (rhs[k] - off * out[k - 1]) / denom;
    }
    for k in (0..n - 1).rev() {
        out[k] -= c[k] * out[k + 1];
    }
}

/// Node voltages and column currents for row drive voltages `v`.
pub fn solve(g: ArrayView2<f64>, r_line: f64, v: ArrayView1<f64>) -> Result<NodalSolution> {
    let (rows, cols) = g.dim();
    if v.len() != rows {
        return Err(SimError::Shape(format!("{} drive voltages for {rows} rows", v.len())));
    }
    let solver = GridSolver::new(g, r_line)?;
    let gw = solver.segment_conductance();
    let mut b_row = Array2::zeros((rows, cols));
    for i in 0..rows {
        b_row[[i, 0]] = gw * v[i];
    }
    let b_col = Array2::zeros((rows, cols));
    let (row_v, col_v) = solver.solve(&b_row, &b_col)?;
    let currents = col_v.row(rows - 1).mapv(|x| x * gw);
    Ok(NodalSolution { row_v, col_v, currents })
}

/// Matrix `M` with column currents `I = M^T v` for any drive vector `v`.
///
/// Uses one solve per column: by reciprocity the response at every driver
/// node to a unit injection at a sense node gives one column of `M`.
pub fn transfer_matrix(g: ArrayView2<f64>, r_line: f64) -> Result<Array2<f64>> {
    let (rows, cols) = g.dim();
    let solver = GridSolver::new(g, r_line)?;
    let gw = solver.segment_conductance();
    let mut m = Array2::zeros((rows, cols));
    match &solver.method {
        Method::Direct { layout, band } => {
            let mut x = vec![0.0; band.n];
            for j in 0..cols {
                x.fill(0.0);
                let start = layout.idx(rows - 1, j, true);
                x[start] = 1.0;
                band.solve_from(&mut x, start);
                for k in 0..rows {
                    m[[k, j]] = gw * gw * x[layout.idx(k, 0, false)];
                }
            }
        }
        Method::Relax => {
            let b_row = Array2::zeros((rows, cols));
            for j in 0..cols {
                let mut b_col = Array2::zeros((rows, cols));
                b_col[[rows - 1, j]] = 1.0;
                let (row_v, _) = solver.solve(&b_row, &b_col)?;
                for k in 0..rows {
                    m[[k, j]] = gw * gw * row_v[[k, 0]];
                }
            }
        }
    }
    Ok(m)
}
