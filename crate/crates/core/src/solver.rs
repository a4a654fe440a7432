//! Safeguarded inexact Newton method for strictly convex objectives over
//! mass-constrained pairs inside the Gibbs triangle.
//!
//! Every search direction is projected to the mean-zero subspace, so means
//! are invariant. Step lengths are capped cellwise so that `φ1`, `φ2` and
//! `1 - φ1 - φ2` each keep at least `1 - boundary_fraction` of their current
//! value; the objective is therefore never evaluated outside the triangle.

use crate::energy::PhasePair;
use crate::error::{Error, Result};

/// How curvature products are formed inside the Krylov solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    /// Hand-linearized Hessian supplied by the objective.
    #[default]
    Analytic,
    /// Forward difference of the gradient, step `1e-7 (1 + |x|_inf)`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Bound on the `h^2`-weighted l2 norm of the projected gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub boundary_fraction: f64,
    /// Relative residual target of the inner conjugate-gradient solve.
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    pub armijo_c: f64,
    pub hessian: HessianMode,
}

impl SolverParams {
    /// Defaults with `grad_tol = 1e-10 L` for a domain of side `L`.
    pub fn for_domain(length: f64) -> Self {
        Self {
            grad_tol: 1e-10 * length,
            max_iters: 200,
            boundary_fraction: 0.9,
            linear_tol: 1e-8,
            max_linear_iters: 500,
            armijo_c: 1e-4,
            hessian: HessianMode::Analytic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol must be positive");
        }
        if self.max_iters == 0 || self.max_linear_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction < 1.0) {
            return bad("boundary_fraction must lie in (0, 1)");
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return bad("linear_tol must lie in (0, 1)");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        Ok(())
    }
}

impl Default for SolverParams {
    fn default() -> Self {
        Self::for_domain(64.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// `‖r‖_{-1,h}` of the equation residual at the returned iterate, when
    /// the objective defines one.
    pub final_residual_m1h: f64,
    pub line_search_backtracks: usize,
    /// Negative-curvature or non-descent events answered by steepest descent.
    pub fallbacks: usize,
    pub cg_iterations: usize,
    /// Times an objective evaluation was requested outside the triangle.
    pub exterior_evaluations: usize,
    /// Steps accepted by the roundoff rule instead of Armijo.
    pub roundoff_accepts: usize,
    pub converged: bool,
}

/// A smooth, strictly convex objective on admissible pairs.
///
/// Gradients are with respect to the `<·,·>` inner product; the solver
/// projects them to mean-zero directions itself.
pub trait Objective {
    fn value(&self, x: &PhasePair) -> f64;

    fn gradient(&self, x: &PhasePair) -> PhasePair;

    /// Hessian at `x` applied to `w`. Defaults to a forward difference.
    fn hessian_apply(&self, x: &PhasePair, w: &PhasePair) -> PhasePair {
        fd_hessian_apply(self, x, w)
    }

    /// Approximate inverse Hessian, frozen at `x`, for the Krylov solve.
    fn preconditioner<'a>(&'a self, _x: &PhasePair) -> Box<dyn Fn(&PhasePair) -> PhasePair + 'a> {
        Box::new(|r: &PhasePair| r.clone())
    }

    /// Equation-residual norm for a projected gradient, if meaningful.
    fn residual_m1h(&self, _x: &PhasePair, _g: &PhasePair) -> f64 {
        f64::NAN
    }
}

/// `(∇J(x + s w) - ∇J(x)) / s`, shrinking `s` until `x + s w` is admissible.
pub fn fd_hessian_apply<O: Objective + ?Sized>(obj: &O, x: &PhasePair, w: &PhasePair) -> PhasePair {
    let wmax = w.max_abs();
    if wmax == 0.0 {
        return PhasePair::zeros(*x.grid());
    }
    let mut s = 1e-7 * (1.0 + x.max_abs()) / wmax;
    let mut shifted = x.clone();
    shifted.axpy(s, w);
    while !shifted.is_admissible() {
        s *= 0.1;
        shifted = x.clone();
        shifted.axpy(s, w);
    }
    obj.gradient(&shifted).sub(&obj.gradient(x)).scaled(1.0 / s)
}

/// Outcome of [`search_direction`].
#[derive(Debug, Clone)]
pub struct Direction {
    pub direction: PhasePair,
    pub cg_iterations: usize,
    pub fallback: bool,
}

/// Inexact Newton direction by preconditioned CG on mean-zero pairs.
///
/// Falls back to `-P g` when non-positive curvature is met on the first
/// Krylov vector or the result fails to descend.
pub fn search_direction(
    gradient: &PhasePair,
    hessian: impl Fn(&PhasePair) -> PhasePair,
    precondition: impl Fn(&PhasePair) -> PhasePair,
    sp: &SolverParams,
) -> Direction {
    let g = gradient.centered();
    let gnorm = g.norm();
    let mut d = PhasePair::zeros(*g.grid());
    if gnorm == 0.0 {
        return Direction { direction: d, cg_iterations: 0, fallback: false };
    }
    let mut r = g.scaled(-1.0);
    let mut z = precondition(&r).centered();
    let steepest = z.clone();
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut iterations = 0;
    let mut fallback = false;
    for k in 0..sp.max_linear_iters {
        let hp = hessian(&p).centered();
        let php = p.dot(&hp);
        iterations = k + 1;
        if !(php > 0.0) {
            if k == 0 {
                d = steepest.clone();
                fallback = true;
            }
            break;
        }
        let alpha = rz / php;
        d.axpy(alpha, &p);
        r.axpy(-alpha, &hp);
        if r.norm() <= sp.linear_tol * gnorm {
            break;
        }
        z = precondition(&r).centered();
        let rz_next = r.dot(&z);
        p = z.add(&p.scaled(rz_next / rz));
        rz = rz_next;
    }
    if !fallback && !(g.dot(&d) < 0.0) {
        d = steepest;
        fallback = true;
    }
    Direction { direction: d, cg_iterations: iterations, fallback }
}

/// Largest `t ≤ 1` with `u + t w ≥ (1 - fraction) u` cellwise for
/// `u ∈ {φ1, φ2, 1 - φ1 - φ2}` along direction `d`.
pub fn boundary_cap(x: &PhasePair, d: &PhasePair, fraction: f64) -> f64 {
    let mut cap: f64 = 1.0;
    let (x1, x2) = (x.phi1.values(), x.phi2.values());
    let (d1, d2) = (d.phi1.values(), d.phi2.values());
    for k in 0..x1.len() {
        for (u, w) in [(x1[k], d1[k]), (x2[k], d2[k]), (1.0 - x1[k] - x2[k], -d1[k] - d2[k])] {
            if w < 0.0 {
                cap = cap.min(fraction * u / -w);
            }
        }
    }
    cap
}

/// Accepted trial of [`safeguarded_line_search`].
#[derive(Debug, Clone)]
pub struct LineStep {
    pub step: f64,
    pub trial: PhasePair,
    pub value: f64,
    /// Gradient at the trial, when the roundoff rule had to compute it.
    pub gradient: Option<PhasePair>,
    pub backtracks: usize,
    pub roundoff: bool,
}

fn guarded_value<O: Objective + ?Sized>(obj: &O, x: &PhasePair, report: &mut SolveReport) -> f64 {
    if x.is_admissible() {
        obj.value(x)
    } else {
        report.exterior_evaluations += 1;
        f64::INFINITY
    }
}

/// Fraction-to-boundary cap followed by Armijo backtracking.
///
/// Returns `Ok(None)` for a zero direction. Near convergence, where `J`
/// differences drown in roundoff, a trial is also accepted if its value is
/// within `10 ε |J|` of the current one and its projected gradient is
/// smaller.
pub fn safeguarded_line_search<O: Objective + ?Sized>(
    obj: &O,
    x: &PhasePair,
    value: f64,
    gradient: &PhasePair,
    direction: &PhasePair,
    sp: &SolverParams,
    report: &mut SolveReport,
) -> Result<Option<LineStep>> {
    if direction.max_abs() == 0.0 {
        return Ok(None);
    }
    let slope = gradient.centered().dot(direction);
    let gnorm = gradient.centered().norm();
    let cap = boundary_cap(x, direction, sp.boundary_fraction);
    let mut t = cap;
    let mut backtracks = 0;
    while t >= 1e-14 {
        let mut trial = x.clone();
        trial.axpy(t, direction);
        let v = guarded_value(obj, &trial, report);
        if v <= value + sp.armijo_c * t * slope {
            return Ok(Some(LineStep { step: t, trial, value: v, gradient: None, backtracks, roundoff: false }));
        }
        if v - value <= 10.0 * f64::EPSILON * value.abs() {
            let g = obj.gradient(&trial);
            if g.centered().norm() < gnorm {
                return Ok(Some(LineStep { step: t, trial, value: v, gradient: Some(g), backtracks, roundoff: true }));
            }
        }
        t *= 0.5;
        backtracks += 1;
    }
    Err(Error::SolverFailure {
        reason: format!(
            "line search collapsed below 1e-14 (boundary cap {cap:e}, gibbs margin {:e}, slope {slope:e})",
            x.gibbs_margin()
        ),
        report: report.clone(),
        best: Box::new(x.clone()),
    })
}

/// Minimizes `obj` from an admissible `start` whose means equal `targets`.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    start: PhasePair,
    targets: (f64, f64),
    sp: &SolverParams,
) -> Result<(PhasePair, SolveReport)> {
    sp.validate()?;
    start.check_admissible()?;
    check_means(&start, targets, 1e-10)?;
    let mut report = SolveReport::default();
    let mut x = start;
    let mut value = obj.value(&x);
    let mut g = obj.gradient(&x);
    loop {
        let pg = g.centered();
        report.final_grad_norm = pg.norm();
        if report.final_grad_norm <= sp.grad_tol {
            report.converged = true;
            report.final_residual_m1h = obj.residual_m1h(&x, &pg);
            check_means(&x, targets, 1e-12)?;
            return Ok((x, report));
        }
        if report.iterations >= sp.max_iters {
            report.final_residual_m1h = obj.residual_m1h(&x, &pg);
            return Err(Error::SolverFailure {
                reason: format!(
                    "no convergence in {} iterations (gradient norm {:e} > {:e})",
                    sp.max_iters, report.final_grad_norm, sp.grad_tol
                ),
                report,
                best: Box::new(x),
            });
        }
        let precondition = obj.preconditioner(&x);
        let dir = match sp.hessian {
            HessianMode::Analytic => search_direction(&pg, |w| obj.hessian_apply(&x, w), &precondition, sp),
            HessianMode::FiniteDifference => {
                search_direction(&pg, |w| fd_hessian_apply(obj, &x, w), &precondition, sp)
            }
        };
        drop(precondition);
        report.cg_iterations += dir.cg_iterations;
        report.fallbacks += usize::from(dir.fallback);
        report.iterations += 1;
        let Some(ls) = safeguarded_line_search(obj, &x, value, &g, &dir.direction, sp, &mut report)? else {
            // a zero direction from a nonzero gradient cannot make progress
            report.final_residual_m1h = obj.residual_m1h(&x, &pg);
            return Err(Error::SolverFailure {
                reason: "search direction vanished before convergence".into(),
                report,
                best: Box::new(x),
            });
        };
        report.line_search_backtracks += ls.backtracks;
        report.roundoff_accepts += usize::from(ls.roundoff);
        x = ls.trial;
        value = ls.value;
        g = ls.gradient.unwrap_or_else(|| obj.gradient(&x));
    }
}

fn check_means(x: &PhasePair, targets: (f64, f64), tol: f64) -> Result<()> {
    let (m1, m2) = x.means();
    for (phase, mean, target) in [(1, m1, targets.0), (2, m2, targets.1)] {
        if (mean - target).abs() > tol * target.abs().max(1.0) {
            return Err(Error::MassConstraint { phase, mean, target });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{self, CellField, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `‖φ - target‖_2^2` with an identity preconditioner scaled to `1/2`.
    struct Quadratic {
        target: PhasePair,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &PhasePair) -> f64 {
            let d = x.sub(&self.target);
            d.dot(&d)
        }
        fn gradient(&self, x: &PhasePair) -> PhasePair {
            x.sub(&self.target).scaled(2.0)
        }
        fn hessian_apply(&self, _x: &PhasePair, w: &PhasePair) -> PhasePair {
            w.scaled(2.0)
        }
    }

    /// Entropy plus Dirichlet energy; convex with a logarithmic barrier.
    struct Entropic;

    impl Objective for Entropic {
        fn value(&self, x: &PhasePair) -> f64 {
            let x3 = x.phi3();
            let ent: f64 = x.phi1.values().iter().chain(x.phi2.values()).chain(x3.values())
                .map(|&u| u * u.ln())
                .sum();
            let h2 = x.grid().h().powi(2);
            h2 * ent + 0.5 * (grid::norm_grad_l2(&x.phi1).powi(2) + grid::norm_grad_l2(&x.phi2).powi(2))
        }
        fn gradient(&self, x: &PhasePair) -> PhasePair {
            let l3 = x.phi3().map(f64::ln);
            PhasePair {
                phi1: &(&x.phi1.map(f64::ln) - &l3) - &grid::laplacian(&x.phi1),
                phi2: &(&x.phi2.map(f64::ln) - &l3) - &grid::laplacian(&x.phi2),
            }
        }
    }

    fn random_state(g: GridSpec, rng: &mut ChaCha8Rng) -> PhasePair {
        PhasePair {
            phi1: CellField::from_fn(g, |_, _| rng.random_range(0.05..0.4)),
            phi2: CellField::from_fn(g, |_, _| rng.random_range(0.05..0.4)),
        }
    }

    #[test]
    fn zero_gradient_gives_zero_direction() {
        let g = GridSpec::new(8, 1.0).unwrap();
        let d = search_direction(&PhasePair::zeros(g), |w| w.clone(), |r| r.clone(), &SolverParams::default());
        assert_eq!(d.direction.max_abs(), 0.0);
        assert_eq!(d.cg_iterations, 0);
    }

    #[test]
    fn laplacian_curvature_inverts_single_mode() {
        let n = 16;
        let l = 8.0;
        let g = GridSpec::new(n, l).unwrap();
        let k = 3.0;
        let mode = CellField::sample(g, |x, _| (2.0 * std::f64::consts::PI * k * x / l).cos());
        let lambda = 4.0 / g.h().powi(2) * (std::f64::consts::PI * k * g.h() / l).sin().powi(2);
        let gp = PhasePair { phi1: mode.clone(), phi2: mode.clone() * 0.5 };
        let neg_lap = |w: &PhasePair| PhasePair {
            phi1: grid::laplacian(&w.phi1) * -1.0,
            phi2: grid::laplacian(&w.phi2) * -1.0,
        };
        let d = search_direction(&gp, neg_lap, |r| r.clone(), &SolverParams::default());
        let expect = gp.scaled(-1.0 / lambda);
        assert!(d.direction.sub(&expect).max_abs() <= 1e-12 * expect.max_abs());
        assert!(!d.fallback);
    }

    #[test]
    fn directions_descend() {
        let g = GridSpec::new(8, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sp = SolverParams::default();
        for _ in 0..100 {
            let x = random_state(g, &mut rng);
            let grad = Entropic.gradient(&x).centered();
            let d = search_direction(&grad, |w| Entropic.hessian_apply(&x, w), |r| r.clone(), &sp);
            assert!(grad.dot(&d.direction) < 0.0);
            let m = d.direction.means();
            assert!(m.0.abs() < 1e-15 && m.1.abs() < 1e-15);
        }
    }

    #[test]
    fn negative_curvature_falls_back_to_steepest_descent() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grad = random_state(g, &mut rng).centered();
        let d = search_direction(&grad, |w| w.scaled(-1.0), |r| r.clone(), &SolverParams::default());
        assert!(d.fallback);
        assert!(d.direction.sub(&grad.scaled(-1.0)).max_abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges_in_two_newton_steps() {
        let g = GridSpec::new(8, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = random_state(g, &mut rng);
        let (m1, m2) = target.means();
        let start = PhasePair::constant(g, m1, m2);
        let sp = SolverParams { grad_tol: 1e-12, ..SolverParams::default() };
        let (x, rep) = minimize(&Quadratic { target: target.clone() }, start, (m1, m2), &sp).unwrap();
        assert!(rep.converged && rep.iterations <= 2, "{rep:?}");
        assert!(x.sub(&target).max_abs() < 1e-12);
    }

    #[test]
    fn stationary_start_needs_no_iterations() {
        let g = GridSpec::new(8, 2.0).unwrap();
        let x0 = PhasePair::constant(g, 0.2, 0.3);
        let (x, rep) = minimize(&Entropic, x0.clone(), (0.2, 0.3), &SolverParams::default()).unwrap();
        assert!(rep.converged && rep.iterations <= 1);
        assert!(x.sub(&x0).max_abs() < 1e-14);
    }

    #[test]
    fn entropic_minimizer_is_uniform_and_interior() {
        let g = GridSpec::new(16, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0 = random_state(g, &mut rng);
        let means = x0.means();
        let (x, rep) = minimize(&Entropic, x0, means, &SolverParams::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.exterior_evaluations, 0);
        assert!(x.gibbs_margin() > 0.0);
        assert!((x.phi1.max() - x.phi1.min()) < 1e-8);
        let (m1, m2) = x.means();
        assert!((m1 - means.0).abs() <= 1e-12 && (m2 - means.1).abs() <= 1e-12);
    }

    #[test]
    fn finite_difference_mode_agrees() {
        let g = GridSpec::new(8, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = random_state(g, &mut rng);
        let means = x0.means();
        let sp = SolverParams { hessian: HessianMode::FiniteDifference, ..SolverParams::default() };
        let (x, rep) = minimize(&Entropic, x0, means, &sp).unwrap();
        assert!(rep.converged);
        assert!((x.phi2.max() - x.phi2.min()) < 1e-8);
    }

    #[test]
    fn boundary_cap_stops_short_of_crossing() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let x = PhasePair::constant(g, 0.2, 0.3);
        let mut d = PhasePair::zeros(g);
        d.phi1.set(1, 2, -1.0);
        d.phi1.set(2, 2, 1.0);
        // φ1 at cell (1, 2) reaches zero at t* = 0.2
        let cap = boundary_cap(&x, &d, 0.9);
        assert!((cap - 0.18).abs() < 1e-15);
        let mut trial = x.clone();
        trial.axpy(cap, &d);
        assert!((trial.phi1.get(1, 2) - 0.02).abs() < 1e-15);
        assert!(trial.is_admissible());
    }

    #[test]
    fn inward_direction_from_near_boundary_is_accepted() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let mut x = PhasePair::constant(g, 0.2, 0.3);
        x.phi1.set(0, 0, 1e-9);
        x.phi1.set(0, 1, 0.2 + 0.2 - 1e-9);
        let obj = Entropic;
        let v = obj.value(&x);
        let grad = obj.gradient(&x);
        let d = grad.centered().scaled(-1e-10);
        let mut rep = SolveReport::default();
        let ls = safeguarded_line_search(&obj, &x, v, &grad, &d, &SolverParams::default(), &mut rep)
            .unwrap()
            .unwrap();
        assert!(ls.step > 0.0 && ls.trial.gibbs_margin() > 0.0);
        assert_eq!(rep.exterior_evaluations, 0);
    }

    #[test]
    fn zero_direction_is_stationary() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let x = PhasePair::constant(g, 0.2, 0.3);
        let zero = PhasePair::zeros(g);
        let r = safeguarded_line_search(&Entropic, &x, 0.0, &zero, &zero, &SolverParams::default(), &mut SolveReport::default());
        assert!(r.unwrap().is_none());
    }

    #[test]
    fn rejects_mass_mismatch_and_bad_params() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let x = PhasePair::constant(g, 0.2, 0.3);
        assert!(matches!(
            minimize(&Entropic, x.clone(), (0.21, 0.3), &SolverParams::default()),
            Err(Error::MassConstraint { phase: 1, .. })
        ));
        let sp = SolverParams { boundary_fraction: 1.0, ..SolverParams::default() };
        assert!(minimize(&Entropic, x, (0.2, 0.3), &sp).is_err());
    }
}
