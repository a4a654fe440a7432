//! Discrete `H^{-1}` machinery on mean-zero cell fields.
//!
//! On a uniform periodic grid the five-point operator `-Δ_h` is diagonalized
//! by the 2-D DFT with eigenvalues
//! `λ(k1, k2) = (4/h^2) (sin^2(π k1/n) + sin^2(π k2/n))`, so `(-Δ_h)^{-1}`
//! and any other function of `-Δ_h` is applied exactly (to roundoff) with two
//! FFTs. A conjugate-gradient route is kept for cross-checking and for the
//! variable-coefficient operator `-∇_h·(D ∇_h ·)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{self, inner_cell, CellField, EdgeField, GridSpec};

/// A cell field with its mean removed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanZeroField {
    inner: CellField,
    removed_mean: f64,
}

impl MeanZeroField {
    /// Re-centers `field`, recording the mean that was subtracted.
    pub fn new(field: CellField) -> Self {
        let m = field.mean();
        let mut inner = field;
        inner.add_scalar(-m);
        Self { inner, removed_mean: m }
    }

    pub fn inner(&self) -> &CellField {
        &self.inner
    }

    pub fn into_inner(self) -> CellField {
        self.inner
    }

    pub fn removed_mean(&self) -> f64 {
        self.removed_mean
    }
}

/// FFT plans and the symbol of `-Δ_h` for one grid. Immutable after
/// construction, so it can be shared between threads.
#[derive(Clone)]
pub struct Spectral {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    eigenvalues: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish_non_exhaustive()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let h2 = grid.h() * grid.h();
        let s2: Vec<f64> = (0..n).map(|k| (PI * k as f64 / n as f64).sin().powi(2)).collect();
        let mut eigenvalues = vec![0.0; grid.len()];
        for a in 0..n {
            for b in 0..n {
                eigenvalues[a * n + b] = 4.0 / h2 * (s2[a] + s2[b]);
            }
        }
        Self { grid, forward, inverse, eigenvalues }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Eigenvalues of `-Δ_h`, indexed by wavenumber pair. The table is
    /// symmetric under swapping the two wavenumbers.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest nonzero eigenvalue of `-Δ_h`.
    pub fn lambda_min(&self) -> f64 {
        let n = self.grid.n() as f64;
        4.0 / (self.grid.h() * self.grid.h()) * (PI / n).sin().powi(2)
    }

    /// Tabulates `f(λ)` over all wavenumbers (including `λ = 0`).
    pub fn multiplier(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| f(l)).collect()
    }

    fn transpose(&self, buf: &mut [Complex<f64>]) {
        let n = self.grid.n();
        for a in 0..n {
            for b in (a + 1)..n {
                buf.swap(a * n + b, b * n + a);
            }
        }
    }

    fn forward_2d(&self, buf: &mut [Complex<f64>]) {
        self.forward.process(buf);
        self.transpose(buf);
        self.forward.process(buf);
    }

    fn inverse_2d(&self, buf: &mut [Complex<f64>]) {
        self.inverse.process(buf);
        self.transpose(buf);
        self.inverse.process(buf);
    }

    /// Applies the Fourier multiplier `m` (a table from [`Self::multiplier`]).
    pub fn apply(&self, u: &CellField, m: &[f64]) -> CellField {
        let n2 = self.grid.len() as f64;
        let mut buf: Vec<Complex<f64>> = u.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward_2d(&mut buf);
        for (z, &w) in buf.iter_mut().zip(m) {
            *z *= w;
        }
        self.inverse_2d(&mut buf);
        CellField::from_raw(self.grid, buf.iter().map(|z| z.re / n2).collect())
    }

    /// Applies multipliers `m1` to `u1` and `m2` to `u2` with a single
    /// complex transform pair, packing the two real fields as `u1 + i u2`.
    pub fn apply_pair(
        &self,
        u1: &CellField,
        u2: &CellField,
        m1: &[f64],
        m2: &[f64],
    ) -> (CellField, CellField) {
        let n = self.grid.n();
        let n2 = self.grid.len() as f64;
        let mut buf: Vec<Complex<f64>> = u1
            .values()
            .iter()
            .zip(u2.values())
            .map(|(&a, &b)| Complex::new(a, b))
            .collect();
        self.forward_2d(&mut buf);
        let z = buf.clone();
        for a in 0..n {
            let na = (n - a) % n;
            for b in 0..n {
                let k = a * n + b;
                let conj_neg = z[na * n + (n - b) % n].conj();
                let f1 = (z[k] + conj_neg) * 0.5;
                // f2 = (z - conj_neg) / (2i); i * m2 * f2 = m2 * (z - conj_neg) / 2
                let if2 = (z[k] - conj_neg) * 0.5;
                buf[k] = f1 * m1[k] + if2 * m2[k];
            }
        }
        self.inverse_2d(&mut buf);
        let v1 = buf.iter().map(|z| z.re / n2).collect();
        let v2 = buf.iter().map(|z| z.im / n2).collect();
        (CellField::from_raw(self.grid, v1), CellField::from_raw(self.grid, v2))
    }

    fn inverse_symbol(&self) -> Vec<f64> {
        self.multiplier(|l| if l > 0.0 { 1.0 / l } else { 0.0 })
    }

    /// `(-Δ_h)^{-1}` on the mean-zero part of `u`; the result has zero mean.
    pub fn solve_neg_laplacian(&self, u: &CellField) -> CellField {
        let out = self.apply(u, &self.inverse_symbol());
        out.centered()
    }

    /// `(-Δ_h)^{-1}` applied to two fields at once.
    pub fn solve_neg_laplacian_pair(&self, u1: &CellField, u2: &CellField) -> (CellField, CellField) {
        let m = self.inverse_symbol();
        let (a, b) = self.apply_pair(u1, u2, &m, &m);
        (a.centered(), b.centered())
    }

    pub fn inv_laplacian(&self, phi: &MeanZeroField) -> MeanZeroField {
        MeanZeroField { inner: self.solve_neg_laplacian(phi.inner()), removed_mean: 0.0 }
    }

    /// `<φ1, φ2>_{-1,h} = <φ1, (-Δ_h)^{-1} φ2>`.
    pub fn inner_m1h(&self, phi1: &MeanZeroField, phi2: &MeanZeroField) -> f64 {
        inner_cell(phi1.inner(), &self.solve_neg_laplacian(phi2.inner()))
    }

    pub fn norm_m1h(&self, phi: &MeanZeroField) -> f64 {
        self.inner_m1h(phi, phi).max(0.0).sqrt()
    }

    /// `||u - mean(u)||_{-1,h}^2` for an arbitrary cell field.
    pub fn norm_m1h_sq(&self, u: &CellField) -> f64 {
        let c = u.centered();
        inner_cell(&c, &self.solve_neg_laplacian(&c)).max(0.0)
    }
}

/// Solves `-Δ_h ψ = φ` with `mean(ψ) = 0`.
pub fn inv_laplacian(phi: &MeanZeroField) -> MeanZeroField {
    Spectral::new(*phi.inner().grid()).inv_laplacian(phi)
}

pub fn inner_m1h(phi1: &MeanZeroField, phi2: &MeanZeroField) -> Result<f64> {
    phi1.inner().grid().same_as(phi2.inner().grid())?;
    Ok(Spectral::new(*phi1.inner().grid()).inner_m1h(phi1, phi2))
}

pub fn norm_m1h(phi: &MeanZeroField) -> f64 {
    Spectral::new(*phi.inner().grid()).norm_m1h(phi)
}

/// Outcome of a Krylov solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned CG for the SPD operator `apply` restricted to mean-zero
/// fields. `precondition` must also be SPD on that subspace.
pub(crate) fn pcg_mean_zero(
    rhs: &CellField,
    apply: impl Fn(&CellField) -> CellField,
    precondition: impl Fn(&CellField) -> CellField,
    rel_tol: f64,
    max_iter: usize,
) -> (CellField, CgStats) {
    let grid = *rhs.grid();
    let b = rhs.centered();
    let b_norm = grid::norm_l2(&b);
    let mut x = CellField::zeros(grid);
    if b_norm == 0.0 {
        return (x, CgStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = b;
    let mut z = precondition(&r).centered();
    let mut p = z.clone();
    let mut rz = inner_cell(&r, &z);
    let mut rel = 1.0;
    for it in 0..max_iter {
        let ap = apply(&p).centered();
        let pap = inner_cell(&p, &ap);
        if pap <= 0.0 {
            return (x, CgStats { iterations: it, relative_residual: rel });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        rel = grid::norm_l2(&r) / b_norm;
        if rel <= rel_tol {
            return (x.centered(), CgStats { iterations: it + 1, relative_residual: rel });
        }
        z = precondition(&r).centered();
        let rz_new = inner_cell(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_new = z.clone();
        p_new.axpy(beta, &p);
        p = p_new;
    }
    (x.centered(), CgStats { iterations: max_iter, relative_residual: rel })
}

/// Unpreconditioned CG solve of `-Δ_h ψ = φ`, used to cross-check the
/// spectral route.
pub fn inv_laplacian_cg(phi: &MeanZeroField, rel_tol: f64, max_iter: usize) -> Result<MeanZeroField> {
    let (psi, stats) = pcg_mean_zero(
        phi.inner(),
        |v| grid::laplacian(v) * -1.0,
        |r| r.clone(),
        rel_tol,
        max_iter,
    );
    if stats.relative_residual > rel_tol {
        return Err(Error::InvalidParameter(format!(
            "CG for -Δ_h did not reach {rel_tol:e} in {max_iter} iterations (residual {:e})",
            stats.relative_residual
        )));
    }
    Ok(MeanZeroField { inner: psi, removed_mean: 0.0 })
}

/// Solves `L_D ψ = -∇_h·(D ∇_h ψ) = φ` for a strictly positive face
/// coefficient `D`, by CG preconditioned with `(-Δ_h)^{-1}` scaled by the
/// mean of `D`.
pub fn inv_weighted_laplacian(
    coef: &EdgeField,
    phi: &MeanZeroField,
    rel_tol: f64,
) -> Result<(MeanZeroField, CgStats)> {
    coef.grid().same_as(phi.inner().grid())?;
    if let Some((axis, i, j)) = coef.first_nonpositive() {
        return Err(Error::NonPositiveCoefficient { axis, i, j });
    }
    let spectral = Spectral::new(*coef.grid());
    let n = coef.x.len() as f64;
    let d_mean = (coef.x.iter().sum::<f64>() + coef.y.iter().sum::<f64>()) / (2.0 * n);
    let (psi, stats) = pcg_mean_zero(
        phi.inner(),
        |v| grid::weighted_divergence(coef, &grid::gradient(v)) * -1.0,
        |r| spectral.solve_neg_laplacian(r) * (1.0 / d_mean),
        rel_tol,
        10 * coef.grid().len(),
    );
    if stats.relative_residual > rel_tol {
        return Err(Error::InvalidParameter(format!(
            "CG for L_D stalled at relative residual {:e}",
            stats.relative_residual
        )));
    }
    Ok((MeanZeroField { inner: psi, removed_mean: 0.0 }, stats))
}

/// `<φ1, φ2>_{L_D^{-1}} = [D ∇ψ1, ∇ψ2]` with `L_D ψi = φi`.
pub fn inner_weighted(coef: &EdgeField, phi1: &MeanZeroField, phi2: &MeanZeroField) -> Result<f64> {
    let (psi1, _) = inv_weighted_laplacian(coef, phi1, 1e-12)?;
    let (psi2, _) = inv_weighted_laplacian(coef, phi2, 1e-12)?;
    let g1 = grid::gradient(psi1.inner());
    let g2 = grid::gradient(psi2.inner());
    Ok(grid::inner_edge(&coef.product(&g1), &g2))
}
