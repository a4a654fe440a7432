//! Periodic cell-centered / face-centered grid functions on a uniform square
//! grid and the staggered difference, average, divergence and Laplacian
//! operators acting on them.
//!
//! Cells are stored zero-based: cell `(i, j)` has its center at
//! `((i + 1/2) h, (j + 1/2) h)`, which is the one-based point `p_{i+1}`.
//! Face arrays use the same `n x n` shape as cell arrays: `x[i, j]` lives on
//! the east face `(i + 1/2, j)` of cell `(i, j)` and `y[i, j]` on its north
//! face `(i, j + 1/2)`. Storage is row-major in `i` (`idx = i * n + j`).

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Uniform periodic square grid with `n` cells per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n: usize,
    length: f64,
    h: f64,
}

impl GridSpec {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n = {n} must be at least 4")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length = {length} must be positive")));
        }
        Ok(Self { n, length, h: length / n as f64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Domain area `L^2`.
    pub fn area(&self) -> f64 {
        self.length * self.length
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        i * self.n + j
    }

    /// Wraps a possibly negative or out-of-range index into `0..n`.
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    /// Cell-center coordinate of zero-based index `i`.
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    pub(crate) fn same_as(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: (self.n, self.length),
                right: (other.n, other.length),
            })
        }
    }

    #[inline]
    fn next(&self, i: usize) -> usize {
        if i + 1 == self.n {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.n - 1
        } else {
            i - 1
        }
    }
}

/// Sums a slice in fixed row-block order so reductions are reproducible and
/// the rounding error grows with `sqrt(n)` blocks rather than `n^2` terms.
pub(crate) fn blocked_sum(values: &[f64], block: usize) -> f64 {
    values
        .chunks(block.max(1))
        .map(|row| row.iter().sum::<f64>())
        .sum()
}

/// A periodic grid function at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_vec(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { i: k / grid.n, j: k % grid.n });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    /// Builds a field from a function of zero-based `(i, j)`.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = grid.n;
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                values.push(f(i, j));
            }
        }
        Self { grid, values }
    }

    /// Builds a field by sampling `f(x, y)` at cell centers.
    pub fn sample(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(grid, |i, j| f(grid.center(i), grid.center(j)))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic access: any integer pair is reduced modulo `n`.
    pub fn at(&self, i: isize, j: isize) -> f64 {
        self.values[self.grid.idx(self.grid.wrap(i), self.grid.wrap(j))]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn sum(&self) -> f64 {
        blocked_sum(&self.values, self.grid.n)
    }

    /// Grid average `h^2/|Omega| * sum`.
    pub fn mean(&self) -> f64 {
        self.sum() / self.grid.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &CellField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &CellField) {
        debug_assert_eq!(self.grid, x.grid);
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn add_scalar(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v += c);
    }

    /// Returns a copy with the mean removed.
    pub fn centered(&self) -> Self {
        let m = self.mean();
        self.map(|v| v - m)
    }
}

impl Add for &CellField {
    type Output = CellField;
    fn add(self, rhs: &CellField) -> CellField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &CellField {
    type Output = CellField;
    fn sub(self, rhs: &CellField) -> CellField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &CellField {
    type Output = CellField;
    fn mul(self, rhs: f64) -> CellField {
        self.map(|a| a * rhs)
    }
}

impl Mul<f64> for CellField {
    type Output = CellField;
    fn mul(mut self, rhs: f64) -> CellField {
        self.scale(rhs);
        self
    }
}

/// A pair of periodic face-centered functions: `x` on east-west faces
/// `(i + 1/2, j)` and `y` on north-south faces `(i, j + 1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    grid: GridSpec,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, x: vec![c; grid.len()], y: vec![c; grid.len()] }
    }

    pub fn from_parts(grid: GridSpec, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != grid.len() || y.len() != grid.len() {
            return Err(Error::InvalidGrid("edge component length mismatch".into()));
        }
        Ok(Self { grid, x, y })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            x: self.x.iter().map(|&v| f(v)).collect(),
            y: self.y.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &EdgeField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            x: self.x.iter().zip(&other.x).map(|(&a, &b)| f(a, b)).collect(),
            y: self.y.iter().zip(&other.y).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Pointwise product on faces.
    pub fn product(&self, other: &EdgeField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn min(&self) -> f64 {
        self.x.iter().chain(&self.y).copied().fold(f64::INFINITY, f64::min)
    }

    /// First face (as `(axis, i, j)`) whose value is not strictly positive.
    pub fn first_nonpositive(&self) -> Option<(char, usize, usize)> {
        let n = self.grid.n;
        if let Some(k) = self.x.iter().position(|&v| v <= 0.0 || v.is_nan()) {
            return Some(('x', k / n, k % n));
        }
        self.y.iter().position(|&v| v <= 0.0 || v.is_nan()).map(|k| ('y', k / n, k % n))
    }
}

// ---------------------------------------------------------------------------
// Cell -> face operators
// ---------------------------------------------------------------------------

/// `D_x u` at `(i + 1/2, j)`.
pub fn diff_x(u: &CellField) -> Vec<f64> {
    let g = u.grid;
    let inv_h = 1.0 / g.h;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        let ip = g.next(i);
        for j in 0..g.n {
            out[g.idx(i, j)] = (u.values[g.idx(ip, j)] - u.values[g.idx(i, j)]) * inv_h;
        }
    }
    out
}

/// `D_y u` at `(i, j + 1/2)`.
pub fn diff_y(u: &CellField) -> Vec<f64> {
    let g = u.grid;
    let inv_h = 1.0 / g.h;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        for j in 0..g.n {
            let jp = g.next(j);
            out[g.idx(i, j)] = (u.values[g.idx(i, jp)] - u.values[g.idx(i, j)]) * inv_h;
        }
    }
    out
}

/// `A_x u` at `(i + 1/2, j)`.
pub fn avg_x(u: &CellField) -> Vec<f64> {
    let g = u.grid;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        let ip = g.next(i);
        for j in 0..g.n {
            out[g.idx(i, j)] = 0.5 * (u.values[g.idx(ip, j)] + u.values[g.idx(i, j)]);
        }
    }
    out
}

/// `A_y u` at `(i, j + 1/2)`.
pub fn avg_y(u: &CellField) -> Vec<f64> {
    let g = u.grid;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        for j in 0..g.n {
            let jp = g.next(j);
            out[g.idx(i, j)] = 0.5 * (u.values[g.idx(i, jp)] + u.values[g.idx(i, j)]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Face -> cell operators
// ---------------------------------------------------------------------------

/// `d_x f` at cell `(i, j)` for an east-west face function.
pub fn diff_back_x(grid: &GridSpec, fx: &[f64]) -> CellField {
    let g = *grid;
    let inv_h = 1.0 / g.h;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        let im = g.prev(i);
        for j in 0..g.n {
            out[g.idx(i, j)] = (fx[g.idx(i, j)] - fx[g.idx(im, j)]) * inv_h;
        }
    }
    CellField { grid: g, values: out }
}

/// `d_y f` at cell `(i, j)` for a north-south face function.
pub fn diff_back_y(grid: &GridSpec, fy: &[f64]) -> CellField {
    let g = *grid;
    let inv_h = 1.0 / g.h;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        for j in 0..g.n {
            let jm = g.prev(j);
            out[g.idx(i, j)] = (fy[g.idx(i, j)] - fy[g.idx(i, jm)]) * inv_h;
        }
    }
    CellField { grid: g, values: out }
}

/// `a_x f` at cell `(i, j)`.
pub fn avg_back_x(grid: &GridSpec, fx: &[f64]) -> CellField {
    let g = *grid;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        let im = g.prev(i);
        for j in 0..g.n {
            out[g.idx(i, j)] = 0.5 * (fx[g.idx(i, j)] + fx[g.idx(im, j)]);
        }
    }
    CellField { grid: g, values: out }
}

/// `a_y f` at cell `(i, j)`.
pub fn avg_back_y(grid: &GridSpec, fy: &[f64]) -> CellField {
    let g = *grid;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n {
        for j in 0..g.n {
            let jm = g.prev(j);
            out[g.idx(i, j)] = 0.5 * (fy[g.idx(i, j)] + fy[g.idx(i, jm)]);
        }
    }
    CellField { grid: g, values: out }
}

// ---------------------------------------------------------------------------
// Composite operators
// ---------------------------------------------------------------------------

/// Face average `A_h u = (A_x u, A_y u)`.
pub fn face_average(u: &CellField) -> EdgeField {
    EdgeField { grid: u.grid, x: avg_x(u), y: avg_y(u) }
}

/// Discrete gradient `(D_x u, D_y u)`.
pub fn gradient(u: &CellField) -> EdgeField {
    EdgeField { grid: u.grid, x: diff_x(u), y: diff_y(u) }
}

/// Discrete divergence `d_x f^x + d_y f^y`.
pub fn divergence(f: &EdgeField) -> CellField {
    let mut out = diff_back_x(&f.grid, &f.x);
    let dy = diff_back_y(&f.grid, &f.y);
    for (o, v) in out.values.iter_mut().zip(dy.values) {
        *o += v;
    }
    out
}

/// Face-to-cell average `a_x f^x + a_y f^y`.
pub fn face_to_cell_sum(f: &EdgeField) -> CellField {
    let mut out = avg_back_x(&f.grid, &f.x);
    let ay = avg_back_y(&f.grid, &f.y);
    for (o, v) in out.values.iter_mut().zip(ay.values) {
        *o += v;
    }
    out
}

/// Five-point Laplacian, evaluated as `divergence(gradient(u))`.
pub fn laplacian(u: &CellField) -> CellField {
    divergence(&gradient(u))
}

/// `d_x(D f^x) + d_y(D f^y)`: pointwise face product followed by the
/// backward divergence.
pub fn weighted_divergence(coef: &EdgeField, f: &EdgeField) -> CellField {
    divergence(&coef.product(f))
}

/// Like [`weighted_divergence`], but rejects coefficients that are not
/// strictly positive on every face.
pub fn weighted_divergence_positive(coef: &EdgeField, f: &EdgeField) -> Result<CellField> {
    if let Some((axis, i, j)) = coef.first_nonpositive() {
        return Err(Error::NonPositiveCoefficient { axis, i, j });
    }
    Ok(weighted_divergence(coef, f))
}

// ---------------------------------------------------------------------------
// Inner products and norms
// ---------------------------------------------------------------------------

/// `<u, v> = h^2 sum u v`.
pub fn inner_cell(u: &CellField, v: &CellField) -> f64 {
    debug_assert_eq!(u.grid, v.grid);
    let h2 = u.grid.h * u.grid.h;
    let n = u.grid.n;
    let row_sums = u.values.chunks(n).zip(v.values.chunks(n)).map(|(a, b)| {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    });
    h2 * row_sums.sum::<f64>()
}

/// `[f, g] = <a_x(f^x g^x), 1> + <a_y(f^y g^y), 1>`.
pub fn inner_edge(f: &EdgeField, g: &EdgeField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    let prod = f.product(g);
    let h2 = f.grid.h * f.grid.h;
    h2 * (avg_back_x(&f.grid, &prod.x).sum() + avg_back_y(&f.grid, &prod.y).sum())
}

pub fn norm_l2(u: &CellField) -> f64 {
    inner_cell(u, u).sqrt()
}

/// `||u||_p = <|u|^p, 1>^{1/p}` for `p >= 1`.
pub fn norm_lp(u: &CellField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidParameter(format!("l^p norm needs p >= 1, got {p}")));
    }
    let h2 = u.grid.h * u.grid.h;
    let s = blocked_sum(&u.values.iter().map(|v| v.abs().powf(p)).collect::<Vec<_>>(), u.grid.n);
    Ok((h2 * s).powf(1.0 / p))
}

pub fn norm_linf(u: &CellField) -> f64 {
    u.max_abs()
}

/// `||grad_h u||_2`.
pub fn norm_grad_l2(u: &CellField) -> f64 {
    let g = gradient(u);
    inner_edge(&g, &g).sqrt()
}

/// Discrete `H^1` norm: `sqrt(||u||_2^2 + ||grad_h u||_2^2)`.
pub fn norm_h1(u: &CellField) -> f64 {
    let g = gradient(u);
    (inner_cell(u, u) + inner_edge(&g, &g)).sqrt()
}
