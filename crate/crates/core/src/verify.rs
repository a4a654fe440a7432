//! Randomized self-checks of the discrete operators, the `H^{-1}` solver,
//! the energy derivatives and the convex splitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{self, ModelParams, Phase, PhasePair};
use crate::grid::{self, CellField, EdgeField, GridSpec};
use crate::hinv::{self, MeanZeroField};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy, relative unless stated otherwise.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }

    fn push(&mut self, name: &str, worst: f64, tolerance: f64) {
        self.checks.push(Check { name: name.to_string(), passed: worst <= tolerance, worst, tolerance });
    }
}

fn random_field(g: GridSpec, rng: &mut ChaCha8Rng) -> CellField {
    CellField::from_fn(g, |_, _| rng.random_range(-1.0..1.0))
}

fn random_edge(g: GridSpec, rng: &mut ChaCha8Rng) -> EdgeField {
    let x = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    EdgeField::from_parts(g, x, y).expect("finite")
}

/// A random admissible pair with moderate gradients.
pub fn random_admissible(g: GridSpec, rng: &mut ChaCha8Rng) -> PhasePair {
    PhasePair {
        phi1: CellField::from_fn(g, |_, _| rng.random_range(0.1..0.3)),
        phi2: CellField::from_fn(g, |_, _| rng.random_range(0.2..0.5)),
    }
}

/// Summation by parts `<ψ, ∇·f> + [∇ψ, f] = 0` on `n ∈ {4, 8, 16, 32}`.
pub fn summation_by_parts(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for n in [4, 8, 16, 32] {
        let g = GridSpec::new(n, 2.0 + n as f64 / 8.0).expect("valid grid");
        for _ in 0..trials {
            let psi = random_field(g, rng);
            let f = random_edge(g, rng);
            let div = grid::divergence(&f);
            let a = grid::inner_cell(&psi, &div);
            let b = grid::inner_edge(&grid::gradient(&psi), &f);
            let scale = grid::norm_l2(&psi) * grid::norm_l2(&div);
            worst = worst.max((a + b).abs() / scale);
        }
    }
    worst
}

/// `Δ_h u` against `∇_h·∇_h u` and the five-point formula.
pub fn laplacian_identity(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for n in [4, 8, 16, 32] {
        let g = GridSpec::new(n, 1.0 + n as f64).expect("valid grid");
        let u = random_field(g, rng);
        let lap = grid::laplacian(&u);
        let dg = grid::divergence(&grid::gradient(&u));
        let h2 = g.h() * g.h();
        let scale = 8.0 * u.max_abs() / h2;
        for i in 0..n as isize {
            for j in 0..n as isize {
                let five = (u.at(i + 1, j) + u.at(i - 1, j) + u.at(i, j + 1) + u.at(i, j - 1) - 4.0 * u.at(i, j)) / h2;
                let k = g.idx(i as usize, j as usize);
                worst = worst.max((lap.values()[k] - five).abs() / scale);
                worst = worst.max((lap.values()[k] - dg.values()[k]).abs() / scale);
            }
        }
    }
    worst
}

/// `-Δ_h ψ = φ` for `ψ = inv_laplacian(φ)`.
pub fn hinv_round_trip(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for n in [8, 16, 32] {
        let g = GridSpec::new(n, 16.0).expect("valid grid");
        for _ in 0..trials {
            let phi = MeanZeroField::new(random_field(g, rng));
            let psi = hinv::inv_laplacian(&phi);
            let back = grid::laplacian(psi.inner());
            let err = grid::norm_l2(&(&back + phi.inner())) / grid::norm_l2(phi.inner());
            worst = worst.max(err);
        }
    }
    worst
}

/// `Δ_h cos(2πkx/L) = -(4/h²) sin²(πkh/L) cos(2πkx/L)` and the matching
/// `H^{-1}` norm.
pub fn single_mode(_rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for (n, l, k) in [(16usize, 64.0, 3.0), (32, 10.0, 5.0), (8, 1.0, 1.0)] {
        let g = GridSpec::new(n, l).expect("valid grid");
        let u = CellField::sample(g, |x, _| (2.0 * std::f64::consts::PI * k * x / l).cos());
        let lambda = 4.0 / (g.h() * g.h()) * (std::f64::consts::PI * k * g.h() / l).sin().powi(2);
        let lap = grid::laplacian(&u);
        let err = grid::norm_linf(&(&lap + &(&u * lambda))) / (lambda * u.max_abs());
        let m1h = hinv::norm_m1h(&MeanZeroField::new(u.clone())).powi(2);
        let expect = grid::norm_l2(&u).powi(2) / lambda;
        worst = worst.max(err).max((m1h - expect).abs() / expect);
    }
    worst
}

/// Central differences of `G_c` against `<δ_i G_c, ψ>`.
pub fn convex_gradient_oracle(rng: &mut ChaCha8Rng, params: &ModelParams, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for n in [8, 16] {
        let g = GridSpec::new(n, n as f64).expect("valid grid");
        for _ in 0..trials {
            let x = random_admissible(g, rng);
            for which in Phase::BOTH {
                let psi = random_field(g, rng).centered() * 0.1;
                let s = 1e-5;
                let at = |t: f64| {
                    let mut y = x.clone();
                    match which {
                        Phase::One => y.phi1.axpy(t, &psi),
                        Phase::Two => y.phi2.axpy(t, &psi),
                    }
                    energy::energy_convex(&y, params).expect("admissible")
                };
                let fd = (at(s) - at(-s)) / (2.0 * s);
                let an = grid::inner_cell(&energy::var_deriv_convex(&x, params, which).expect("admissible"), &psi);
                worst = worst.max((fd - an).abs() / an.abs());
            }
        }
    }
    worst
}

/// Central differences of `G_e = -<H, 1>` against `<δ_i G_e, ψ>`.
pub fn concave_gradient_oracle(rng: &mut ChaCha8Rng, params: &ModelParams, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for n in [8, 16] {
        let g = GridSpec::new(n, n as f64).expect("valid grid");
        for _ in 0..trials {
            let x = random_admissible(g, rng);
            for which in Phase::BOTH {
                let psi = random_field(g, rng).centered() * 0.1;
                let s = 1e-3;
                let at = |t: f64| {
                    let mut y = x.clone();
                    match which {
                        Phase::One => y.phi1.axpy(t, &psi),
                        Phase::Two => y.phi2.axpy(t, &psi),
                    }
                    -energy::mixing_energy(&y, params)
                };
                let fd = (at(s) - at(-s)) / (2.0 * s);
                let an = grid::inner_cell(&energy::var_deriv_concave(&x, params, which), &psi);
                worst = worst.max((fd - an).abs() / an.abs());
            }
        }
    }
    worst
}

/// `G_h = G_c - G_e` on random admissible pairs.
pub fn splitting_identity(rng: &mut ChaCha8Rng, params: &ModelParams, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for n in [8, 16] {
        let g = GridSpec::new(n, n as f64).expect("valid grid");
        for _ in 0..trials {
            let x = random_admissible(g, rng);
            let total = energy::energy_total(&x, params).expect("admissible");
            let split = energy::energy_convex(&x, params).expect("admissible")
                - energy::energy_concave(&x, params).expect("admissible");
            worst = worst.max((total - split).abs() / total.abs());
        }
    }
    worst
}

/// Largest midpoint-convexity violation (absolute) of `G_c`, and of `<H, 1>`
/// with the inequality reversed.
pub fn midpoint_convexity(rng: &mut ChaCha8Rng, params: &ModelParams, trials: usize) -> (f64, f64) {
    let mut worst_c = f64::NEG_INFINITY;
    let mut worst_h = f64::NEG_INFINITY;
    let g = GridSpec::new(8, 8.0).expect("valid grid");
    for _ in 0..trials {
        let a = random_admissible(g, rng);
        let b = random_admissible(g, rng);
        for t in [0.25, 0.5, 0.75] {
            let m = a.scaled(t).add(&b.scaled(1.0 - t));
            let gc = |p: &PhasePair| energy::energy_convex(p, params).expect("admissible");
            let hh = |p: &PhasePair| energy::mixing_energy(p, params);
            worst_c = worst_c.max(gc(&m) - (t * gc(&a) + (1.0 - t) * gc(&b)));
            worst_h = worst_h.max((t * hh(&a) + (1.0 - t) * hh(&b)) - hh(&m));
        }
    }
    (worst_c, worst_h)
}

/// Largest violation of
/// `G_h(φ) - G_h(ψ) ≤ Σ_i <δ_i G_c(φ) - δ_i G_e(ψ), φ_i - ψ_i>`.
pub fn splitting_inequality(rng: &mut ChaCha8Rng, params: &ModelParams, trials: usize) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let g = GridSpec::new(8, 8.0).expect("valid grid");
    for _ in 0..trials {
        let phi = random_admissible(g, rng);
        let psi = random_admissible(g, rng);
        let lhs = energy::energy_total(&phi, params).expect("admissible")
            - energy::energy_total(&psi, params).expect("admissible");
        let mut rhs = 0.0;
        for which in Phase::BOTH {
            let d = &energy::var_deriv_convex(&phi, params, which).expect("admissible")
                - &energy::var_deriv_concave(&psi, params, which);
            rhs += grid::inner_cell(&d, &(phi.get(which) - psi.get(which)));
        }
        worst = worst.max(lhs - rhs);
    }
    worst
}

/// Runs every suite with a fixed seed.
pub fn run_all(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::default();
    let mut r = Report::default();
    r.push("summation by parts", summation_by_parts(&mut rng, 25), 1e-12);
    r.push("laplacian = div grad", laplacian_identity(&mut rng), 1e-15);
    r.push("H^-1 round trip", hinv_round_trip(&mut rng, 10), 1e-11);
    r.push("single-mode eigenvalues", single_mode(&mut rng), 1e-12);
    r.push("dG_c/dphi oracle", convex_gradient_oracle(&mut rng, &params, 10), 1e-6);
    r.push("dG_e/dphi oracle", concave_gradient_oracle(&mut rng, &params, 10), 1e-8);
    r.push("splitting identity", splitting_identity(&mut rng, &params, 50), 1e-12);
    let (c, h) = midpoint_convexity(&mut rng, &params, 100);
    r.push("G_c convexity (abs)", c, 1e-10);
    r.push("<H,1> concavity (abs)", h, 1e-10);
    r.push("splitting inequality (abs)", splitting_inequality(&mut rng, &params, 100), 1e-10);
    r
}
