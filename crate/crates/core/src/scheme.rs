//! BDF2 convex-splitting scheme with Douglas–Dupont regularization.
//!
//! Each step solves
//!
//! ```text
//! (3φ_i - 4φ_i^n + φ_i^{n-1}) / (2Δt) = M_i Δ_h μ_i
//! μ_i = δ_i G_c(φ) + ∂_i H(2φ^n - φ^{n-1}) - A_i Δt Δ_h (φ_i - φ_i^n)
//! ```
//!
//! by minimizing the equivalent strictly convex functional
//!
//! ```text
//! J(φ) = Σ_i 1/(12 M_i Δt) ‖3φ_i - 4φ_i^n + φ_i^{n-1}‖²_{-1,h} + G_c(φ)
//!      + Σ_i <∂_i H(φ̂), φ_i> + Σ_i A_i Δt / 2 ‖∇_h(φ_i - φ_i^n)‖²
//! ```
//!
//! whose gradient `g_i` satisfies `-M_i Δ_h g_i = r_i`, the equation residual.
//! The first step uses a Crank–Nicolson-type initialization with a
//! second-order correction of the explicit concave term.

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::energy::{self, ModelParams, Phase, PhasePair};
use crate::error::{Error, Result};
use crate::grid::{self, CellField};
use crate::hinv::Spectral;
use crate::solver::{self, Objective, SolveReport, SolverParams};

/// Choice of the regularization coefficients `A_1`, `A_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum APreset {
    /// `A_1 = 1.25 χ13² + 0.25 c²`, `A_2 = 2 χ23² + 2 c²`, `c = χ12 - χ13 - χ23`.
    Experiment,
    /// `A_i = M_i (3χ13 + 3χ23 + 2χ12)² / 4`; energy decay of `E` is proven.
    Certified,
    /// `A_1 = 2 χ13² + 0.5 c²`, `A_2 = 2 χ23² + 0.5 c²`; decay of `F` with unit mobilities.
    Alternate,
    Explicit { a1: f64, a2: f64 },
}

impl APreset {
    pub fn values(&self, params: &ModelParams) -> (f64, f64) {
        let c2 = params.chi_cross().powi(2);
        match *self {
            APreset::Experiment => (1.25 * params.chi13.powi(2) + 0.25 * c2, 2.0 * params.chi23.powi(2) + 2.0 * c2),
            APreset::Certified => certified_threshold(params),
            APreset::Alternate => alternate_values(params),
            APreset::Explicit { a1, a2 } => (a1, a2),
        }
    }
}

/// Thresholds above which `E^{n+1,n}` provably decays.
pub fn certified_threshold(params: &ModelParams) -> (f64, f64) {
    let s = (3.0 * params.chi13 + 3.0 * params.chi23 + 2.0 * params.chi12).powi(2) / 4.0;
    (params.mob1 * s, params.mob2 * s)
}

/// Values for which `F^{n+1}` provably decays when `M_1 = M_2 = 1`.
pub fn alternate_values(params: &ModelParams) -> (f64, f64) {
    let c2 = params.chi_cross().powi(2);
    (2.0 * params.chi13.powi(2) + 0.5 * c2, 2.0 * params.chi23.powi(2) + 0.5 * c2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub dt: f64,
    pub a1: f64,
    pub a2: f64,
    pub solver: SolverParams,
}

/// Which decay results apply to a parameter choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certification {
    pub threshold: (f64, f64),
    pub e_decay: bool,
    pub f_decay: bool,
}

impl SchemeParams {
    pub fn new(dt: f64, preset: APreset, params: &ModelParams, solver: SolverParams) -> Result<Self> {
        let (a1, a2) = preset.values(params);
        let sp = Self { dt, a1, a2, solver };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.a1 >= 0.0 && self.a2 >= 0.0 && self.a1.is_finite() && self.a2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "A1, A2 must be non-negative, got {}, {}",
                self.a1, self.a2
            )));
        }
        self.solver.validate()
    }

    pub fn a(&self, which: Phase) -> f64 {
        match which {
            Phase::One => self.a1,
            Phase::Two => self.a2,
        }
    }

    pub fn certification(&self, params: &ModelParams) -> Certification {
        let threshold = certified_threshold(params);
        let alt = alternate_values(params);
        Certification {
            threshold,
            e_decay: self.a1 >= threshold.0 && self.a2 >= threshold.1,
            f_decay: params.mob1 == 1.0 && params.mob2 == 1.0 && self.a1 >= alt.0 && self.a2 >= alt.1,
        }
    }
}

/// Two-level history `(φ^n, φ^{n-1})`.
///
/// Before the initialization step (`step == 0`) both levels hold the
/// initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeState {
    pub current: PhasePair,
    pub previous: PhasePair,
    pub step: usize,
    pub time: f64,
    /// Means of the initial data.
    pub mass: (f64, f64),
    /// Report of the solve that produced `current`.
    pub report: SolveReport,
}

impl SchemeState {
    pub fn initial(phi: PhasePair) -> Result<Self> {
        phi.check_admissible()?;
        let mass = phi.means();
        Ok(Self { previous: phi.clone(), current: phi, step: 0, time: 0.0, mass, report: SolveReport::default() })
    }

    /// `2φ^n - φ^{n-1}`
    pub fn extrapolated(&self) -> PhasePair {
        self.current.scaled(2.0).sub(&self.previous)
    }

    fn advance(&self, next: PhasePair, dt: f64, report: SolveReport) -> Self {
        let step = self.step + 1;
        Self {
            previous: self.current.clone(),
            current: next,
            step,
            time: step as f64 * dt,
            mass: self.mass,
            report,
        }
    }
}

fn mixing_grad_pair(p: &PhasePair, params: &ModelParams) -> PhasePair {
    PhasePair {
        phi1: energy::mixing_derivative(p, params, Phase::One),
        phi2: energy::mixing_derivative(p, params, Phase::Two),
    }
}

/// `μ_i^{n+1}` for a candidate `φ^{n+1}`.
pub fn chemical_potential(
    candidate: &PhasePair,
    state: &SchemeState,
    params: &ModelParams,
    sp: &SchemeParams,
    which: Phase,
) -> Result<CellField> {
    let mut mu = energy::var_deriv_convex(candidate, params, which)?;
    mu.axpy(-1.0, &energy::var_deriv_concave(&state.extrapolated(), params, which));
    let incr = candidate.get(which) - state.current.get(which);
    mu.axpy(-sp.a(which) * sp.dt, &grid::laplacian(&incr));
    Ok(mu)
}

/// `r_i = (3φ_i - 4φ_i^n + φ_i^{n-1}) / (2Δt) - M_i Δ_h μ_i`.
pub fn bdf2_residual(
    candidate: &PhasePair,
    state: &SchemeState,
    params: &ModelParams,
    sp: &SchemeParams,
) -> Result<(CellField, CellField)> {
    let res = |which: Phase| -> Result<CellField> {
        let mu = chemical_potential(candidate, state, params, sp, which)?;
        let mut r = candidate.get(which) * 3.0;
        r.axpy(-4.0, state.current.get(which));
        r.axpy(1.0, state.previous.get(which));
        r.scale(0.5 / sp.dt);
        r.axpy(-params.mobility(which), &grid::laplacian(&mu));
        Ok(r)
    };
    Ok((res(Phase::One)?, res(Phase::Two)?))
}

/// The functional minimized by one step:
///
/// `Σ c_i/2 ‖φ_i - t_i‖²_{-1,h} + w G_c(φ) + Σ <ℓ_i, φ_i> + Σ r_i/2 ‖∇_h(φ_i - a_i)‖²`
pub(crate) struct StepProblem<'a> {
    params: &'a ModelParams,
    spectral: &'a Spectral,
    coef: [f64; 2],
    center: PhasePair,
    weight: f64,
    linear: PhasePair,
    reg: [f64; 2],
    anchor: PhasePair,
}

impl<'a> StepProblem<'a> {
    pub(crate) fn bdf2(state: &SchemeState, params: &'a ModelParams, sp: &SchemeParams, spectral: &'a Spectral) -> Self {
        let coef = [1.5 / (params.mob1 * sp.dt), 1.5 / (params.mob2 * sp.dt)];
        let center = state.current.scaled(4.0).sub(&state.previous).scaled(1.0 / 3.0);
        Self {
            params,
            spectral,
            coef,
            center,
            weight: 1.0,
            linear: mixing_grad_pair(&state.extrapolated(), params),
            reg: [sp.a1 * sp.dt, sp.a2 * sp.dt],
            anchor: state.current.clone(),
        }
    }

    pub(crate) fn init(initial: &PhasePair, params: &'a ModelParams, sp: &SchemeParams, spectral: &'a Spectral) -> Self {
        let coef = [1.0 / (params.mob1 * sp.dt), 1.0 / (params.mob2 * sp.dt)];
        let gc = energy::convex_gradient_unchecked(initial, params);
        let dh = mixing_grad_pair(initial, params);
        let rate = initial_rate(initial, params);
        let mut linear = gc.scaled(0.5).add(&dh);
        linear.phi1.axpy(0.5 * sp.dt * energy::hessian_h_diag(params, Phase::One), &rate.phi1);
        linear.phi2.axpy(0.5 * sp.dt * energy::hessian_h_diag(params, Phase::Two), &rate.phi2);
        Self {
            params,
            spectral,
            coef,
            center: initial.clone(),
            weight: 0.5,
            linear,
            reg: [0.0, 0.0],
            anchor: initial.clone(),
        }
    }
}

/// Surrogate for `∂_t φ_i` at `t = 0`: `M_i Δ_h (δ_i G_c(φ^0) + ∂_i H(φ^0))`.
pub fn initial_rate(initial: &PhasePair, params: &ModelParams) -> PhasePair {
    let mu = energy::convex_gradient_unchecked(initial, params).add(&mixing_grad_pair(initial, params));
    PhasePair {
        phi1: grid::laplacian(&mu.phi1) * params.mob1,
        phi2: grid::laplacian(&mu.phi2) * params.mob2,
    }
}

impl Objective for StepProblem<'_> {
    fn value(&self, x: &PhasePair) -> f64 {
        let d = x.sub(&self.center).centered();
        let a = x.sub(&self.anchor);
        let mut v = 0.5 * self.coef[0] * self.spectral.norm_m1h_sq(&d.phi1)
            + 0.5 * self.coef[1] * self.spectral.norm_m1h_sq(&d.phi2);
        v += self.weight * energy::energy_convex_unchecked(x, self.params);
        v += self.linear.dot(x);
        if self.reg[0] != 0.0 {
            v += 0.5 * self.reg[0] * grid::norm_grad_l2(&a.phi1).powi(2);
        }
        if self.reg[1] != 0.0 {
            v += 0.5 * self.reg[1] * grid::norm_grad_l2(&a.phi2).powi(2);
        }
        v
    }

    fn gradient(&self, x: &PhasePair) -> PhasePair {
        let d = x.sub(&self.center);
        let (l1, l2) = self.spectral.solve_neg_laplacian_pair(&d.phi1, &d.phi2);
        let mut g = energy::convex_gradient_unchecked(x, self.params).scaled(self.weight);
        g.axpy(1.0, &self.linear);
        g.phi1.axpy(self.coef[0], &l1);
        g.phi2.axpy(self.coef[1], &l2);
        let a = x.sub(&self.anchor);
        if self.reg[0] != 0.0 {
            g.phi1.axpy(-self.reg[0], &grid::laplacian(&a.phi1));
        }
        if self.reg[1] != 0.0 {
            g.phi2.axpy(-self.reg[1], &grid::laplacian(&a.phi2));
        }
        g
    }

    fn hessian_apply(&self, x: &PhasePair, w: &PhasePair) -> PhasePair {
        let (l1, l2) = self.spectral.solve_neg_laplacian_pair(&w.phi1, &w.phi2);
        let mut out = energy::convex_hessian_apply(x, self.params, w).scaled(self.weight);
        out.phi1.axpy(self.coef[0], &l1);
        out.phi2.axpy(self.coef[1], &l2);
        out.phi1.axpy(-self.reg[0], &grid::laplacian(&w.phi1));
        out.phi2.axpy(-self.reg[1], &grid::laplacian(&w.phi2));
        out
    }

    /// Per component `1 / (c_i/λ + c_S + k_i λ)` in Fourier space, with
    /// `c_S = max(1, min S'')` and `k_i` the surface and regularization
    /// stiffness at the mean composition.
    fn preconditioner<'b>(&'b self, x: &PhasePair) -> Box<dyn Fn(&PhasePair) -> PhasePair + 'b> {
        let p = self.params;
        let mut c_s = f64::INFINITY;
        for (&a, &b) in x.phi1.values().iter().zip(x.phi2.values()) {
            let (s11, _, s22) = p.ideal_hessian(a, b);
            c_s = c_s.min(s11).min(s22);
        }
        let c_s = self.weight * c_s.max(1.0);
        let (m1, m2) = x.means();
        let surf3 = p.eps3 * p.eps3 / (18.0 * (1.0 - m1 - m2));
        let k1 = self.weight * (p.eps1 * p.eps1 / (18.0 * m1) + surf3) + self.reg[0];
        let k2 = self.weight * (p.eps2 * p.eps2 / (18.0 * m2) + surf3) + self.reg[1];
        let table = |c: f64, k: f64| self.spectral.multiplier(|l| 1.0 / (c / l + c_s + k * l));
        let t1 = table(self.coef[0], k1);
        let t2 = table(self.coef[1], k2);
        Box::new(move |r: &PhasePair| {
            let (phi1, phi2) = self.spectral.apply_pair(&r.phi1, &r.phi2, &t1, &t2);
            PhasePair { phi1, phi2 }
        })
    }

    /// `‖-M Δ_h g‖_{-1,h} = M ‖∇_h g‖`, combined over both phases.
    fn residual_m1h(&self, _x: &PhasePair, g: &PhasePair) -> f64 {
        let r1 = self.params.mob1 * grid::norm_grad_l2(&g.phi1);
        let r2 = self.params.mob2 * grid::norm_grad_l2(&g.phi2);
        r1.hypot(r2)
    }
}

fn check_mass(p: &PhasePair, mass: (f64, f64), tol: f64) -> Result<()> {
    let (m1, m2) = p.means();
    for (phase, mean, target) in [(1, m1, mass.0), (2, m2, mass.1)] {
        if (mean - target).abs() > tol {
            return Err(Error::MassConstraint { phase, mean, target });
        }
    }
    Ok(())
}

/// `J_h^n` at an admissible candidate with the conserved means.
pub fn objective(candidate: &PhasePair, state: &SchemeState, params: &ModelParams, sp: &SchemeParams) -> Result<f64> {
    candidate.check_admissible()?;
    check_mass(candidate, state.mass, 1e-10)?;
    let spectral = Spectral::new(*candidate.grid());
    Ok(StepProblem::bdf2(state, params, sp, &spectral).value(candidate))
}

/// Analytic gradient of [`objective`] (not projected).
pub fn objective_gradient(
    candidate: &PhasePair,
    state: &SchemeState,
    params: &ModelParams,
    sp: &SchemeParams,
) -> Result<PhasePair> {
    candidate.check_admissible()?;
    let spectral = Spectral::new(*candidate.grid());
    Ok(StepProblem::bdf2(state, params, sp, &spectral).gradient(candidate))
}

/// Owns the transform plans for repeated steps on one grid.
#[derive(Debug)]
pub struct Integrator {
    pub params: ModelParams,
    pub sp: SchemeParams,
    spectral: Spectral,
}

impl Integrator {
    pub fn new(grid: crate::grid::GridSpec, params: ModelParams, sp: SchemeParams) -> Result<Self> {
        params.validate()?;
        sp.validate()?;
        Ok(Self { params, sp, spectral: Spectral::new(grid) })
    }

    /// Initialization step `φ^0 → φ^1`.
    pub fn step_init(&self, initial: &PhasePair) -> Result<SchemeState> {
        let state = SchemeState::initial(initial.clone())?;
        self.spectral.grid().same_as(initial.grid())?;
        let problem = StepProblem::init(initial, &self.params, &self.sp, &self.spectral);
        let (next, report) = solver::minimize(&problem, initial.clone(), state.mass, &self.sp.solver)?;
        Ok(state.advance(next, self.sp.dt, report))
    }

    /// One BDF2 step `(φ^n, φ^{n-1}) → (φ^{n+1}, φ^n)`.
    pub fn step(&self, state: &SchemeState) -> Result<SchemeState> {
        self.spectral.grid().same_as(state.current.grid())?;
        let problem = StepProblem::bdf2(state, &self.params, &self.sp, &self.spectral);
        let guess = state.extrapolated();
        let start = if guess.is_admissible() { guess } else { state.current.clone() };
        let (next, report) = solver::minimize(&problem, start, state.mass, &self.sp.solver)?;
        Ok(state.advance(next, self.sp.dt, report))
    }

    /// Advances with the initialization step first when `state.step == 0`.
    pub fn advance(&self, state: &SchemeState) -> Result<SchemeState> {
        if state.step == 0 {
            self.step_init(&state.current)
        } else {
            self.step(state)
        }
    }
}

/// One BDF2 step; see [`Integrator::step`].
pub fn step(state: &SchemeState, params: &ModelParams, sp: &SchemeParams) -> Result<SchemeState> {
    Integrator::new(*state.current.grid(), *params, *sp)?.step(state)
}

/// Initialization step; see [`Integrator::step_init`].
pub fn step_init(initial: &PhasePair, params: &ModelParams, sp: &SchemeParams) -> Result<SchemeState> {
    Integrator::new(*initial.grid(), *params, *sp)?.step_init(initial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Abort,
}

/// Callbacks invoked by [`run`].
pub trait Observer {
    /// Called for every record (steps divisible by `diag_stride`, and the last).
    fn on_record(&mut self, _state: &SchemeState, _record: &DiagnosticsRecord) -> Control {
        Control::Continue
    }

    /// Called at steps divisible by `snapshot_stride`, and the last.
    fn on_snapshot(&mut self, _state: &SchemeState) -> Result<Control> {
        Ok(Control::Continue)
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub diag_stride: usize,
    /// `0` disables snapshots.
    pub snapshot_stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { diag_stride: 1, snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SchemeState,
    pub records: Vec<DiagnosticsRecord>,
    /// Step at which an observer stopped the run, if any.
    pub stopped_at: Option<usize>,
}

/// Number of steps to reach `t_final`, which must be a multiple of `dt`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::TimeGrid { t_final, dt });
    }
    let k = (t_final / dt).round();
    if (k * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::TimeGrid { t_final, dt });
    }
    Ok(k as usize)
}

/// Steps from `initial` to `t_final`, recording diagnostics along the way.
pub fn run(
    initial: &PhasePair,
    params: &ModelParams,
    sp: &SchemeParams,
    t_final: f64,
    options: RunOptions,
    observer: &mut dyn Observer,
) -> Result<RunOutput> {
    let steps = step_count(t_final, sp.dt)?;
    if options.diag_stride == 0 {
        return Err(Error::InvalidParameter("diag_stride must be positive".into()));
    }
    let integrator = Integrator::new(*initial.grid(), *params, *sp)?;
    let mut state = SchemeState::initial(initial.clone())?;
    let mut out = RunOutput { records: Vec::new(), state: state.clone(), stopped_at: None };
    let first = diagnostics::record(&state, params, sp)?;
    let mut stop = observer.on_record(&state, &first) == Control::Abort;
    out.records.push(first);
    if options.snapshot_stride > 0 {
        stop |= observer.on_snapshot(&state)? == Control::Abort;
    }
    while !stop && state.step < steps {
        state = match integrator.advance(&state) {
            Ok(s) => s,
            Err(e) => {
                out.state = state;
                return Err(Error::RunAborted { step: out.state.step + 1, partial: Box::new(out), source: Box::new(e) });
            }
        };
        let last = state.step == steps;
        if state.step % options.diag_stride == 0 || last {
            let rec = diagnostics::record(&state, params, sp)?;
            stop |= observer.on_record(&state, &rec) == Control::Abort;
            out.records.push(rec);
        }
        if options.snapshot_stride > 0 && (state.step % options.snapshot_stride == 0 || last) {
            match observer.on_snapshot(&state) {
                Ok(c) => stop |= c == Control::Abort,
                Err(e) => {
                    out.state = state;
                    return Err(Error::RunAborted { step: out.state.step, partial: Box::new(out), source: Box::new(e) });
                }
            }
        }
    }
    if stop && state.step < steps {
        out.stopped_at = Some(state.step);
    }
    out.state = state;
    Ok(out)
}
