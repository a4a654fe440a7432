//! Initial data, grid transfer and the Cauchy-difference convergence study.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{ModelParams, PhasePair};
use crate::error::{Error, Result};
use crate::grid::{self, CellField, GridSpec};
use crate::scheme::{self, APreset, NoObserver, RunOptions, SchemeParams, SchemeState};
use crate::solver::SolverParams;

/// Initial-data recipes.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// `φ1 = 0.1 + 0.01 c(x) c(y)`, `φ2 = 0.5 + 0.01 c(x) c(y)`, `c(s) = cos(3πs/32)`.
    Example1,
    /// `φ1 = 0.1 + r`, `φ2 = 0.4 + r` with `r ~ U[-0.01, 0.01]` per cell.
    /// With `independent`, each phase draws its own `r`.
    Example2 { seed: u64, independent: bool },
    Constant { phi1: f64, phi2: f64 },
    File(PathBuf),
}

pub fn build_initial(spec: &InitialSpec, grid: GridSpec) -> Result<PhasePair> {
    let pair = match spec {
        InitialSpec::Example1 => {
            let k = 3.0 * std::f64::consts::PI / 32.0;
            let bump = CellField::sample(grid, |x, y| 0.01 * (k * x).cos() * (k * y).cos());
            PhasePair { phi1: bump.map(|v| 0.1 + v), phi2: bump.map(|v| 0.5 + v) }
        }
        InitialSpec::Example2 { seed, independent } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut p1 = Vec::with_capacity(grid.len());
            let mut p2 = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                let r = rng.random_range(-0.01..=0.01);
                let s = if *independent { rng.random_range(-0.01..=0.01) } else { r };
                p1.push(0.1 + r);
                p2.push(0.4 + s);
            }
            PhasePair::new(CellField::from_vec(grid, p1)?, CellField::from_vec(grid, p2)?)?
        }
        InitialSpec::Constant { phi1, phi2 } => PhasePair::constant(grid, *phi1, *phi2),
        InitialSpec::File(path) => {
            let snap = crate::io::load_snapshot(path)?;
            snap.state.grid().same_as(&grid)?;
            snap.state
        }
    };
    pair.check_admissible()?;
    Ok(pair)
}

/// Coarse-to-fine transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    /// Copy each coarse cell into its four children.
    Nearest,
    /// Tensor-product linear interpolation between cell centers (weights 3/4, 1/4).
    #[default]
    Bilinear,
}

/// Interpolates `u` from `n` to `2n` cells per side on the same domain.
pub fn coarse_to_fine(u: &CellField, mode: Interp) -> Result<CellField> {
    let gc = *u.grid();
    let gf = GridSpec::new(2 * gc.n(), gc.length())?;
    let n = gc.n() as isize;
    let out = match mode {
        Interp::Nearest => CellField::from_fn(gf, |i, j| u.get(i / 2, j / 2)),
        Interp::Bilinear => CellField::from_fn(gf, |i, j| {
            // fine child 2k sits a quarter coarse cell below coarse center k
            let side = |f: usize| -> (isize, isize) {
                let c = (f / 2) as isize;
                if f % 2 == 0 { (c, c - 1) } else { (c, c + 1) }
            };
            let (i0, i1) = side(i);
            let (j0, j1) = side(j);
            let at = |a: isize, b: isize| u.at(a.rem_euclid(n), b.rem_euclid(n));
            0.5625 * at(i0, j0) + 0.1875 * (at(i1, j0) + at(i0, j1)) + 0.0625 * at(i1, j1)
        }),
    };
    Ok(out)
}

/// Per-phase norms of `φ_fine - I(φ_coarse)` on the fine grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyErrors {
    pub l2: [f64; 2],
    pub linf: [f64; 2],
}

pub fn cauchy_difference(fine: &SchemeState, coarse: &SchemeState, mode: Interp) -> Result<CauchyErrors> {
    if (fine.time - coarse.time).abs() > 1e-9 * fine.time.abs().max(1.0) {
        return Err(Error::TimeMismatch(fine.time, coarse.time));
    }
    let gf = *fine.current.grid();
    let gc = *coarse.current.grid();
    if gf.n() != 2 * gc.n() || gf.length() != gc.length() {
        return Err(Error::GridMismatch { left: (gf.n(), gf.length()), right: (gc.n(), gc.length()) });
    }
    let d1 = &fine.current.phi1 - &coarse_to_fine(&coarse.current.phi1, mode)?;
    let d2 = &fine.current.phi2 - &coarse_to_fine(&coarse.current.phi2, mode)?;
    Ok(CauchyErrors {
        l2: [grid::norm_l2(&d1), grid::norm_l2(&d2)],
        linf: [grid::norm_linf(&d1), grid::norm_linf(&d2)],
    })
}

/// Doubling grids with `Δt = dt_coef · h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementPath {
    pub grids: Vec<GridSpec>,
    pub dt_coef: f64,
    pub t_final: f64,
}

impl RefinementPath {
    pub fn new(length: f64, sizes: &[usize], dt_coef: f64, t_final: f64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter("a refinement path needs at least two grids".into()));
        }
        if sizes.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::InvalidParameter(format!("grid sizes must double: {sizes:?}")));
        }
        let grids = sizes.iter().map(|&n| GridSpec::new(n, length)).collect::<Result<Vec<_>>>()?;
        let path = Self { grids, dt_coef, t_final };
        for g in &path.grids {
            scheme::step_count(t_final, path.dt(g))?;
        }
        Ok(path)
    }

    pub fn dt(&self, grid: &GridSpec) -> f64 {
        self.dt_coef * grid.h()
    }
}

/// Errors between two consecutive grids and rates against the previous pair.
///
/// Columns are `(l2 φ1, l2 φ2, linf φ1, linf φ2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub errors: [f64; 4],
    pub rates: Option<[Option<f64>; 4]>,
}

impl ConvergenceRow {
    pub fn label(&self) -> String {
        format!("{}^2-{}^2", self.n_coarse, self.n_fine)
    }
}

pub const COLUMNS: [&str; 4] = ["l2_phi1", "l2_phi2", "linf_phi1", "linf_phi2"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub interp: Interp,
    /// Grids whose run failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

fn rate(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > 1e-14 && fine > 1e-14).then(|| (coarse / fine).log2())
}

impl ConvergenceTable {
    pub fn from_states(states: &[SchemeState], interp: Interp) -> Result<Self> {
        let mut rows: Vec<ConvergenceRow> = Vec::new();
        for w in states.windows(2) {
            let e = cauchy_difference(&w[1], &w[0], interp)?;
            let errors = [e.l2[0], e.l2[1], e.linf[0], e.linf[1]];
            let rates = rows.last().map(|prev| std::array::from_fn(|k| rate(prev.errors[k], errors[k])));
            rows.push(ConvergenceRow {
                n_coarse: w[0].current.grid().n(),
                n_fine: w[1].current.grid().n(),
                errors,
                rates,
            });
        }
        Ok(Self { rows, interp, failures: Vec::new() })
    }

    /// All rates that are defined.
    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rates).flatten().flatten().collect()
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<14}", "grids");
        for c in COLUMNS {
            let _ = write!(s, " {:>12} {:>6}", c, "rate");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<14}", r.label());
            for k in 0..4 {
                let rate = match r.rates.map(|x| x[k]) {
                    Some(Some(v)) => format!("{v:.2}"),
                    Some(None) => "n/a".into(),
                    None => "-".into(),
                };
                let _ = write!(s, " {:>12.4e} {:>6}", r.errors[k], rate);
            }
            s.push('\n');
        }
        for (n, msg) in &self.failures {
            let _ = writeln!(s, "run on {n}^2 failed: {msg}");
        }
        s
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config { line: None, msg: format!("csv: {e}") };
        let mut header = vec!["n_coarse".to_string(), "n_fine".to_string()];
        for c in COLUMNS {
            header.push(c.to_string());
            header.push(format!("rate_{c}"));
        }
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![r.n_coarse.to_string(), r.n_fine.to_string()];
            for k in 0..4 {
                rec.push(format!("{:.16e}", r.errors[k]));
                rec.push(r.rates.and_then(|x| x[k]).map(|v| format!("{v:.6}")).unwrap_or_default());
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Everything except the time step that a study run needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudySetup {
    pub params: ModelParams,
    pub preset: APreset,
    pub solver: SolverParams,
    pub interp: Interp,
}

/// Runs every grid of `path` to `t_final` (in parallel) and tabulates the
/// Cauchy differences of consecutive pairs.
pub fn run_convergence_study(path: &RefinementPath, spec: &InitialSpec, setup: &StudySetup) -> Result<ConvergenceTable> {
    let results: Vec<Result<SchemeState>> = path
        .grids
        .par_iter()
        .map(|g| {
            let sp = SchemeParams::new(path.dt(g), setup.preset, &setup.params, setup.solver)?;
            let init = build_initial(spec, *g)?;
            let opts = RunOptions { diag_stride: usize::MAX, snapshot_stride: 0 };
            Ok(scheme::run(&init, &setup.params, &sp, path.t_final, opts, &mut NoObserver)?.state)
        })
        .collect();
    let mut states = Vec::new();
    let mut failures = Vec::new();
    for (g, r) in path.grids.iter().zip(results) {
        match r {
            Ok(s) if failures.is_empty() => states.push(s),
            Ok(_) => {}
            Err(e) => failures.push((g.n(), e.to_string())),
        }
    }
    let mut table = ConvergenceTable::from_states(&states, setup.interp)?;
    table.failures = failures;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_is_admissible_and_deterministic() {
        for n in [4, 16, 64] {
            let g = GridSpec::new(n, 64.0).unwrap();
            let a = build_initial(&InitialSpec::Example1, g).unwrap();
            assert_eq!(a, build_initial(&InitialSpec::Example1, g).unwrap());
            assert!(a.phi1.min() >= 0.09 && a.phi1.max() <= 0.11);
            assert!(a.phi2.min() >= 0.49 && a.phi2.max() <= 0.51);
        }
    }

    #[test]
    fn example2_seeded_noise() {
        let g = GridSpec::new(32, 64.0).unwrap();
        let spec = InitialSpec::Example2 { seed: 42, independent: false };
        let a = build_initial(&spec, g).unwrap();
        assert_eq!(a, build_initial(&spec, g).unwrap());
        let diff = &a.phi2 - &a.phi1;
        assert!(diff.values().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(a.phi1.values().iter().all(|&v| (0.09..=0.11).contains(&v)));
        assert!((a.phi1.mean() - 0.1).abs() < 0.01 * 3.0 / 32.0);
        let other = build_initial(&InitialSpec::Example2 { seed: 43, independent: false }, g).unwrap();
        assert_ne!(a, other);
        let ind = build_initial(&InitialSpec::Example2 { seed: 42, independent: true }, g).unwrap();
        assert!((&ind.phi2 - &ind.phi1).max() - (&ind.phi2 - &ind.phi1).min() > 1e-3);
    }

    #[test]
    fn inadmissible_initial_data_rejected() {
        let g = GridSpec::new(8, 1.0).unwrap();
        assert!(build_initial(&InitialSpec::Constant { phi1: 0.6, phi2: 0.5 }, g).is_err());
    }

    #[test]
    fn transfer_preserves_constants() {
        let g = GridSpec::new(8, 3.0).unwrap();
        let c = CellField::constant(g, 0.37);
        for mode in [Interp::Nearest, Interp::Bilinear] {
            let f = coarse_to_fine(&c, mode).unwrap();
            assert_eq!(f.grid().n(), 16);
            assert!(f.values().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn nearest_replicates_spike_and_mean() {
        let g = GridSpec::new(4, 1.0).unwrap();
        let mut u = CellField::zeros(g);
        u.set(1, 2, 1.0);
        let f = coarse_to_fine(&u, Interp::Nearest).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let inside = (2..4).contains(&i) && (4..6).contains(&j);
                assert_eq!(f.get(i, j), if inside { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(f.mean(), u.mean());
    }

    #[test]
    fn bilinear_is_second_order_on_a_mode() {
        let err = |n: usize| {
            let g = GridSpec::new(n, 64.0).unwrap();
            let k = 2.0 * std::f64::consts::PI * 3.0 / 64.0;
            let f = |x: f64, y: f64| (k * x).cos() * (k * y).sin();
            let fine = coarse_to_fine(&CellField::sample(g, f), Interp::Bilinear).unwrap();
            let exact = CellField::sample(*fine.grid(), f);
            grid::norm_linf(&(&fine - &exact))
        };
        let (e1, e2, e3) = (err(32), err(64), err(128));
        assert!((e1 / e2).log2() > 1.9 && (e2 / e3).log2() > 1.9);
    }

    #[test]
    fn cauchy_difference_checks() {
        let gc = GridSpec::new(8, 8.0).unwrap();
        let gf = GridSpec::new(16, 8.0).unwrap();
        let c = SchemeState::initial(PhasePair::constant(gc, 0.1, 0.5)).unwrap();
        let f = SchemeState::initial(PhasePair::constant(gf, 0.1, 0.5)).unwrap();
        let e = cauchy_difference(&f, &c, Interp::Nearest).unwrap();
        assert_eq!(e.l2, [0.0, 0.0]);
        let mut late = f.clone();
        late.time = 0.5;
        assert!(matches!(cauchy_difference(&late, &c, Interp::Nearest), Err(Error::TimeMismatch(..))));
        assert!(cauchy_difference(&c, &c, Interp::Nearest).is_err());
    }

    #[test]
    fn refinement_path_validation() {
        let p = RefinementPath::new(64.0, &[16, 32, 64, 128], 0.002, 0.4).unwrap();
        assert!((p.dt(&p.grids[0]) - 0.008).abs() < 1e-15);
        assert!(RefinementPath::new(64.0, &[16, 48], 0.002, 0.4).is_err());
        assert!(RefinementPath::new(64.0, &[16, 32], 0.002, 0.4003).is_err());
    }

    #[test]
    fn constant_data_study_has_zero_errors_and_no_rates() {
        let path = RefinementPath::new(8.0, &[4, 8, 16], 0.01, 0.02).unwrap();
        let setup = StudySetup {
            params: ModelParams::default(),
            preset: APreset::Experiment,
            solver: SolverParams::for_domain(8.0),
            interp: Interp::Bilinear,
        };
        let t = run_convergence_study(&path, &InitialSpec::Constant { phi1: 0.1, phi2: 0.5 }, &setup).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.errors.iter().all(|&e| e < 1e-14)));
        assert!(t.rows[0].rates.is_none());
        assert!(t.rows[1].rates.unwrap().iter().all(Option::is_none));
        assert!(t.rates().is_empty());
        assert!(t.to_text().contains("n/a"));
    }
}
