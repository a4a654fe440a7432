//! Run configuration (TOML), binary snapshots and the diagnostics CSV.

use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::diagnostics::DiagnosticsRecord;
use crate::energy::{ModelParams, PhasePair};
use crate::error::{Error, Result};
use crate::grid::{CellField, GridSpec};
use crate::harness::{InitialSpec, Interp, RefinementPath};
use crate::scheme::{self, APreset, SchemeParams};
use crate::solver::{HessianMode, SolverParams};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

type Field<T> = Option<Spanned<T>>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: Option<Spanned<RawGrid>>,
    model: Option<Spanned<RawModel>>,
    scheme: Option<Spanned<RawScheme>>,
    solver: Option<Spanned<RawSolver>>,
    initial: Option<Spanned<RawInitial>>,
    run: Option<Spanned<RawRun>>,
    converge: Option<Spanned<RawConverge>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n: Field<usize>,
    length: Field<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    m0: Field<f64>,
    n0: Field<f64>,
    chi12: Field<f64>,
    chi13: Field<f64>,
    chi23: Field<f64>,
    eps1: Field<f64>,
    eps2: Field<f64>,
    eps3: Field<f64>,
    mob1: Field<f64>,
    mob2: Field<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    dt: Field<f64>,
    preset: Field<String>,
    a1: Field<f64>,
    a2: Field<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    grad_tol: Field<f64>,
    max_iters: Field<usize>,
    max_linear_iters: Field<usize>,
    boundary_fraction: Field<f64>,
    linear_tol: Field<f64>,
    armijo_c: Field<f64>,
    hessian: Field<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: Field<String>,
    seed: Field<u64>,
    independent: Field<bool>,
    phi1: Field<f64>,
    phi2: Field<f64>,
    path: Field<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    t_final: Field<f64>,
    output_dir: Field<String>,
    diag_stride: Field<usize>,
    snapshot_stride: Field<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConverge {
    sizes: Field<Vec<usize>>,
    dt_coef: Field<f64>,
    t_final: Field<f64>,
    interp: Field<String>,
}

/// Settings of the `converge` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeConfig {
    pub path: RefinementPath,
    pub interp: Interp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub model: ModelParams,
    pub preset: APreset,
    pub scheme: SchemeParams,
    pub initial: InitialSpec,
    pub t_final: f64,
    pub output_dir: PathBuf,
    pub diag_stride: usize,
    pub snapshot_stride: usize,
    pub converge: ConvergeConfig,
    /// Non-fatal findings, also sent to the log.
    pub warnings: Vec<String>,
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn err(&self, span: Option<Range<usize>>, msg: impl Into<String>) -> Error {
        Error::Config { line: span.map(|s| self.line(s)), msg: msg.into() }
    }

    fn get<T: Clone>(&self, f: &Field<T>, default: T) -> (T, Option<Range<usize>>) {
        match f {
            Some(s) => (s.get_ref().clone(), Some(s.span())),
            None => (default, None),
        }
    }
}

fn section<T: Default>(s: Option<Spanned<T>>) -> (T, Option<Range<usize>>) {
    match s {
        Some(s) => {
            let span = s.span();
            (s.into_inner(), Some(span))
        }
        None => (T::default(), None),
    }
}

/// Parses and validates a configuration; an empty text yields all defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let ctx = Ctx { text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| ctx.err(e.span(), e.message().to_string()))?;
    let mut warnings = Vec::new();

    let (g, _) = section(raw.grid);
    let (n, n_span) = ctx.get(&g.n, 64);
    let (length, l_span) = ctx.get(&g.length, 64.0);
    let grid = GridSpec::new(n, length).map_err(|e| ctx.err(n_span.or(l_span), e.to_string()))?;

    let (m, m_span) = section(raw.model);
    let d = ModelParams::default();
    let fields = [
        ("m0", &m.m0, d.m0),
        ("n0", &m.n0, d.n0),
        ("chi12", &m.chi12, d.chi12),
        ("chi13", &m.chi13, d.chi13),
        ("chi23", &m.chi23, d.chi23),
        ("eps1", &m.eps1, d.eps1),
        ("eps2", &m.eps2, d.eps2),
        ("eps3", &m.eps3, d.eps3),
        ("mob1", &m.mob1, d.mob1),
        ("mob2", &m.mob2, d.mob2),
    ];
    let mut v = [0.0; 10];
    for (k, (name, f, def)) in fields.iter().enumerate() {
        let (x, span) = ctx.get(f, *def);
        if !(x > 0.0 && x.is_finite()) {
            return Err(ctx.err(span, format!("{name} must be positive, got {x}")));
        }
        v[k] = x;
    }
    let chi_span = m.chi12.as_ref().or(m.chi13.as_ref()).or(m.chi23.as_ref()).map(|s| s.span());
    let model = ModelParams::new(v[0], v[1], v[2], v[3], v[4], [v[5], v[6], v[7]], [v[8], v[9]])
        .map_err(|e| ctx.err(chi_span.or(m_span), e.to_string()))?;

    let (sv, sv_span) = section(raw.solver);
    let mut solver = SolverParams::for_domain(length);
    solver.grad_tol = ctx.get(&sv.grad_tol, solver.grad_tol).0;
    solver.max_iters = ctx.get(&sv.max_iters, solver.max_iters).0;
    solver.max_linear_iters = ctx.get(&sv.max_linear_iters, solver.max_linear_iters).0;
    solver.boundary_fraction = ctx.get(&sv.boundary_fraction, solver.boundary_fraction).0;
    solver.linear_tol = ctx.get(&sv.linear_tol, solver.linear_tol).0;
    solver.armijo_c = ctx.get(&sv.armijo_c, solver.armijo_c).0;
    let (hess, h_span) = ctx.get(&sv.hessian, "analytic".to_string());
    solver.hessian = match hess.as_str() {
        "analytic" => HessianMode::Analytic,
        "finite-difference" => HessianMode::FiniteDifference,
        other => return Err(ctx.err(h_span, format!("unknown hessian mode {other:?} (analytic | finite-difference)"))),
    };
    solver.validate().map_err(|e| ctx.err(sv_span, e.to_string()))?;

    let (s, s_span) = section(raw.scheme);
    let (dt, dt_span) = ctx.get(&s.dt, 1e-3);
    let (preset_name, p_span) = ctx.get(&s.preset, "experiment".to_string());
    let preset = match (preset_name.as_str(), &s.a1, &s.a2) {
        (_, Some(a1), Some(a2)) => APreset::Explicit { a1: *a1.get_ref(), a2: *a2.get_ref() },
        (_, Some(a), None) | (_, None, Some(a)) => {
            return Err(ctx.err(Some(a.span()), "a1 and a2 must be given together"));
        }
        ("experiment", ..) => APreset::Experiment,
        ("certified", ..) => APreset::Certified,
        ("alternate", ..) => APreset::Alternate,
        (other, ..) => {
            return Err(ctx.err(
                p_span,
                format!("unknown preset {other:?} (experiment | certified | alternate, or a1/a2)"),
            ))
        }
    };
    let scheme = SchemeParams::new(dt, preset, &model, solver)
        .map_err(|e| ctx.err(dt_span.clone().or(s.a1.as_ref().map(|a| a.span())).or(s_span), e.to_string()))?;
    let cert = scheme.certification(&model);
    for (name, a, thr) in [("a1", scheme.a1, cert.threshold.0), ("a2", scheme.a2, cert.threshold.1)] {
        if a < thr {
            let w = format!("{name} = {a} is below the energy-decay threshold {thr:.4}");
            log::warn!("{w}");
            warnings.push(w);
        }
    }

    let (ini, i_span) = section(raw.initial);
    let (kind, k_span) = ctx.get(&ini.kind, "example2".to_string());
    let initial = match kind.as_str() {
        "example1" => InitialSpec::Example1,
        "example2" => InitialSpec::Example2 {
            seed: ctx.get(&ini.seed, 0).0,
            independent: ctx.get(&ini.independent, false).0,
        },
        "constant" => {
            let (Some(p1), Some(p2)) = (&ini.phi1, &ini.phi2) else {
                return Err(ctx.err(k_span, "constant initial data needs phi1 and phi2"));
            };
            let (a, b) = (*p1.get_ref(), *p2.get_ref());
            if !(a > 0.0 && b > 0.0 && a + b < 1.0) {
                return Err(ctx.err(Some(p1.span()), format!("({a}, {b}) is outside the Gibbs triangle")));
            }
            InitialSpec::Constant { phi1: a, phi2: b }
        }
        "file" => match &ini.path {
            Some(p) => InitialSpec::File(PathBuf::from(p.get_ref())),
            None => return Err(ctx.err(k_span.or(i_span), "file initial data needs path")),
        },
        other => {
            return Err(ctx.err(k_span, format!("unknown initial kind {other:?} (example1 | example2 | constant | file)")))
        }
    };

    let (r, _) = section(raw.run);
    let (t_final, t_span) = ctx.get(&r.t_final, 0.1);
    scheme::step_count(t_final, dt).map_err(|e| ctx.err(t_span.or(dt_span), e.to_string()))?;
    let (diag_stride, ds_span) = ctx.get(&r.diag_stride, 1);
    if diag_stride == 0 {
        return Err(ctx.err(ds_span, "diag_stride must be positive"));
    }

    let (c, c_span) = section(raw.converge);
    let (sizes, sz_span) = ctx.get(&c.sizes, vec![16, 32, 64, 128]);
    let (dt_coef, dc_span) = ctx.get(&c.dt_coef, 0.002);
    let (ct, ct_span) = ctx.get(&c.t_final, 0.4);
    let (interp_name, ip_span) = ctx.get(&c.interp, "bilinear".to_string());
    let interp = match interp_name.as_str() {
        "bilinear" => Interp::Bilinear,
        "nearest" => Interp::Nearest,
        other => return Err(ctx.err(ip_span, format!("unknown interpolation {other:?} (bilinear | nearest)"))),
    };
    if !(dt_coef > 0.0) {
        return Err(ctx.err(dc_span, "dt_coef must be positive"));
    }
    let path = RefinementPath::new(length, &sizes, dt_coef, ct)
        .map_err(|e| ctx.err(sz_span.or(ct_span).or(c_span), e.to_string()))?;

    Ok(RunConfig {
        grid,
        model,
        preset,
        scheme,
        initial,
        t_final,
        output_dir: PathBuf::from(ctx.get(&r.output_dir, "out".to_string()).0),
        diag_stride,
        snapshot_stride: ctx.get(&r.snapshot_stride, 0).0,
        converge: ConvergeConfig { path, interp },
        warnings,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"MMCSNAP\0";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8 + 8 + 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: PhasePair,
    pub time: f64,
    pub step: u64,
}

/// Layout (little-endian): magic, version u32, n u32, L f64, time f64,
/// step u64, payload crc32, header crc32, then `φ1` and `φ2` row-major f64.
/// Written to a sibling temporary file and renamed into place.
pub fn store_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    let g = snap.state.grid();
    let mut payload = Vec::with_capacity(16 * g.len());
    for v in snap.state.phi1.values().iter().chain(snap.state.phi2.values()) {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(SNAPSHOT_MAGIC);
    header.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    header.extend_from_slice(&(g.n() as u32).to_le_bytes());
    header.extend_from_slice(&g.length().to_le_bytes());
    header.extend_from_slice(&snap.time.to_le_bytes());
    header.extend_from_slice(&snap.step.to_le_bytes());
    header.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    let hcrc = crc32fast::hash(&header);
    header.extend_from_slice(&hcrc.to_le_bytes());

    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&header)?;
        f.write_all(&payload)?;
        f.sync_all()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let bad = |msg: String| Error::Snapshot { path: path.to_path_buf(), msg };
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let u64_at = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let f64_at = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    if crc32fast::hash(&bytes[..HEADER_LEN - 4]) != u32_at(HEADER_LEN - 4) {
        return Err(bad("header checksum mismatch".into()));
    }
    let version = u32_at(8);
    if version != SNAPSHOT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u32_at(12) as usize;
    let length = f64_at(16);
    let time = f64_at(24);
    let step = u64_at(32);
    let grid = GridSpec::new(n, length).map_err(|e| bad(e.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 16 * grid.len() {
        return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), 16 * grid.len())));
    }
    if crc32fast::hash(payload) != u32_at(40) {
        return Err(bad("payload checksum mismatch".into()));
    }
    let mut vals = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let phi1: Vec<f64> = vals.by_ref().take(grid.len()).collect();
    let phi2: Vec<f64> = vals.collect();
    let state = PhasePair::new(
        CellField::from_vec(grid, phi1).map_err(|e| bad(e.to_string()))?,
        CellField::from_vec(grid, phi2).map_err(|e| bad(e.to_string()))?,
    )?;
    Ok(Snapshot { state, time, step })
}

// ---------------------------------------------------------------------------
// Diagnostics CSV
// ---------------------------------------------------------------------------

pub const CSV_HEADER: [&str; 15] = [
    "step",
    "time",
    "energy_gh",
    "energy_E",
    "energy_F",
    "mass1",
    "mass2",
    "min1",
    "max1",
    "min2",
    "max2",
    "min_comp",
    "gibbs_margin",
    "solver_iters",
    "solver_grad_norm",
];

fn csv_row(r: &DiagnosticsRecord) -> Vec<String> {
    let f = |v: f64| format!("{v:.16e}");
    vec![
        r.step.to_string(),
        f(r.time),
        f(r.energy_gh),
        f(r.energy_e_mod),
        f(r.energy_f_mod),
        f(r.mass1),
        f(r.mass2),
        f(r.min1),
        f(r.max1),
        f(r.min2),
        f(r.max2),
        f(r.min_sum_complement),
        f(r.gibbs_margin),
        r.solver.iterations.to_string(),
        f(r.solver.final_grad_norm),
    ]
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Snapshot { path: path.to_path_buf(), msg: format!("csv: {other:?}") },
    }
}

/// Appends one record, writing the header first if the file is new or empty.
pub fn append_diag_csv(path: &Path, record: &DiagnosticsRecord) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    }
    w.write_record(csv_row(record)).map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a diagnostics CSV. Solver fields other than the iteration count
/// and gradient norm come back as defaults.
pub fn read_diag_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Snapshot { path: path.to_path_buf(), msg: "unexpected CSV header".into() });
    }
    let mut out = Vec::new();
    for (k, row) in rd.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = || Error::Snapshot { path: path.to_path_buf(), msg: format!("malformed row {}", k + 1) };
        let f = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad);
        let u = |i: usize| row.get(i).and_then(|s| s.parse::<usize>().ok()).ok_or_else(bad);
        let mut rec = DiagnosticsRecord {
            step: u(0)?,
            time: f(1)?,
            energy_gh: f(2)?,
            energy_e_mod: f(3)?,
            energy_f_mod: f(4)?,
            mass1: f(5)?,
            mass2: f(6)?,
            min1: f(7)?,
            max1: f(8)?,
            min2: f(9)?,
            max2: f(10)?,
            min_sum_complement: f(11)?,
            gibbs_margin: f(12)?,
            solver: Default::default(),
        };
        rec.solver.iterations = u(13)?;
        rec.solver.final_grad_norm = f(14)?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.model, ModelParams::default());
        assert_eq!(c.preset, APreset::Experiment);
        assert!((c.scheme.a1 - 139.44).abs() < 1e-12);
        assert_eq!(c.grid.n(), 64);
        assert_eq!(c.converge.path.grids.len(), 4);
        // experiment preset sits below the certified threshold
        assert_eq!(c.warnings.len(), 2);
    }

    #[test]
    fn low_a_warns_with_threshold() {
        let c = parse_config("[scheme]\na1 = 100.0\na2 = 500.0\n").unwrap();
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("457.96"), "{}", c.warnings[0]);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config("[grid]\nn = 32\n\n[model]\nchi99 = 1.0\n").unwrap_err();
        match err {
            Error::Config { line: Some(5), msg } => assert!(msg.contains("chi99"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_concave_mixing_rejected() {
        let err = parse_config("[model]\nchi12 = 40.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err:?}");
    }

    #[test]
    fn invalid_values_report_lines() {
        let e = parse_config("[model]\nm0 = 0.16\nn0 = -1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(3), .. }), "{e:?}");
        let e = parse_config("[scheme]\ndt = 0.003\n[run]\nt_final = 0.01\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(4), .. }), "{e:?}");
        let e = parse_config("[initial]\nkind = \"sphere\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(2), .. }), "{e:?}");
        let e = parse_config("[grid]\nn = \"x\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(2), .. }), "{e:?}");
    }

    #[test]
    fn full_config() {
        let text = r#"
[grid]
n = 32
length = 64.0

[scheme]
dt = 0.001
preset = "alternate"

[solver]
hessian = "finite-difference"

[initial]
kind = "example2"
seed = 7
independent = true

[run]
t_final = 0.5
diag_stride = 10

[converge]
sizes = [8, 16]
interp = "nearest"
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.preset, APreset::Alternate);
        assert_eq!(c.scheme.solver.hessian, HessianMode::FiniteDifference);
        assert_eq!(c.initial, InitialSpec::Example2 { seed: 7, independent: true });
        assert_eq!(c.diag_stride, 10);
        assert_eq!(c.converge.interp, Interp::Nearest);
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let g = GridSpec::new(8, 3.0).unwrap();
        let state = crate::harness::build_initial(&InitialSpec::Example2 { seed: 1, independent: true }, g).unwrap();
        let snap = Snapshot { state, time: 0.125, step: 125 };
        store_snapshot(&path, &snap).unwrap();
        assert_eq!(load_snapshot(&path).unwrap(), snap);
        assert!(!dir.path().join("s.bin.tmp").exists());

        let mut bytes = fs::read(&path).unwrap();
        bytes[HEADER_LEN + 37] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_snapshot(&path), Err(Error::Snapshot { .. })));

        let mut bytes = fs::read(&path).unwrap();
        bytes[HEADER_LEN + 37] ^= 0x01;
        bytes[8] = 2;
        fs::write(&path, &bytes).unwrap();
        assert!(load_snapshot(&path).is_err());
    }

    #[test]
    fn missing_snapshot_is_io_error() {
        assert!(matches!(load_snapshot(Path::new("/nonexistent/x.bin")), Err(Error::Io { .. })));
    }
}
