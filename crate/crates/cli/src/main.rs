use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use mmc_core::diagnostics::{self, DiagnosticsRecord, EnergyCheck};
use mmc_core::harness::{self, StudySetup};
use mmc_core::io::{self, RunConfig, Snapshot};
use mmc_core::scheme::{self, Control, Observer, RunOptions, SchemeState};
use mmc_core::{verify, Error};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "mmc", version, about = "Ternary Cahn-Hilliard solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration to t_final.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for binary snapshots (default: <output_dir>/snapshots).
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Grid-refinement study with Cauchy differences.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized operator and energy self-checks.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

/// Writes each record to CSV and each snapshot to disk.
struct FileObserver {
    csv: PathBuf,
    snapshots: Option<PathBuf>,
    error: Option<Error>,
}

impl Observer for FileObserver {
    fn on_record(&mut self, _state: &SchemeState, record: &DiagnosticsRecord) -> Control {
        match io::append_diag_csv(&self.csv, record) {
            Ok(()) => Control::Continue,
            Err(e) => {
                self.error = Some(e);
                Control::Abort
            }
        }
    }

    fn on_snapshot(&mut self, state: &SchemeState) -> mmc_core::Result<Control> {
        if let Some(dir) = &self.snapshots {
            let path = dir.join(format!("step_{:08}.snap", state.step));
            let snap = Snapshot { state: state.current.clone(), time: state.time, step: state.step as u64 };
            io::store_snapshot(&path, &snap)?;
        }
        Ok(Control::Continue)
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    // warnings are logged by the loader
    io::load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_run(config: &Path, snapshots: Option<PathBuf>) -> Result<u8> {
    let cfg = load(config)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let csv = cfg.output_dir.join("diagnostics.csv");
    if csv.exists() {
        fs::remove_file(&csv).with_context(|| format!("removing stale {}", csv.display()))?;
    }

    let mut snapshot_stride = cfg.snapshot_stride;
    let snap_dir = match snapshots {
        Some(d) => {
            if snapshot_stride == 0 {
                // final state only
                snapshot_stride = usize::MAX;
            }
            Some(d)
        }
        None if snapshot_stride > 0 => Some(cfg.output_dir.join("snapshots")),
        None => None,
    };
    if let Some(d) = &snap_dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }

    let initial = harness::build_initial(&cfg.initial, cfg.grid)?;
    let options = RunOptions { diag_stride: cfg.diag_stride, snapshot_stride };
    let mut observer = FileObserver { csv: csv.clone(), snapshots: snap_dir, error: None };
    info!(
        "run: n = {}, L = {}, dt = {}, a = ({}, {}), t_final = {}",
        cfg.grid.n(),
        cfg.grid.length(),
        cfg.scheme.dt,
        cfg.scheme.a1,
        cfg.scheme.a2,
        cfg.t_final
    );
    let out = scheme::run(&initial, &cfg.model, &cfg.scheme, cfg.t_final, options, &mut observer)?;
    if let Some(e) = observer.error {
        return Err(e).context("writing diagnostics");
    }

    let cert = cfg.scheme.certification(&cfg.model);
    let check = if cert.e_decay {
        EnergyCheck::E
    } else if cert.f_decay {
        EnergyCheck::F
    } else {
        EnergyCheck::None
    };
    let c = diagnostics::certify(&out.records, check);
    println!(
        "steps {}  t = {}  mass drift {:.3e}  min gibbs margin {:.3e}  max energy increase {:.3e}",
        out.state.step, out.state.time, c.max_mass_drift, c.min_gibbs_margin, c.max_energy_increase
    );
    println!("diagnostics: {}", csv.display());
    match c.first_violation() {
        Some(v) => {
            println!("violation at step {}: {:?} ({:.3e})", v.step, v.kind, v.amount);
            Ok(EXIT_VERIFY)
        }
        None => Ok(0),
    }
}

fn cmd_converge(config: &Path) -> Result<u8> {
    let cfg = load(config)?;
    let setup = StudySetup {
        params: cfg.model,
        preset: cfg.preset,
        solver: cfg.scheme.solver,
        interp: cfg.converge.interp,
    };
    let table = harness::run_convergence_study(&cfg.converge.path, &cfg.initial, &setup)?;
    print!("{}", table.to_text());
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let path = cfg.output_dir.join("convergence.csv");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    table.write_csv(file)?;
    if table.is_complete() {
        Ok(0)
    } else {
        Ok(EXIT_SOLVER)
    }
}

fn cmd_verify(seed: u64) -> u8 {
    let report = verify::run_all(seed);
    for c in &report.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {:<28} worst {:.3e}  tol {:.1e}", c.name, c.worst, c.tolerance);
    }
    println!("{}/{} checks passed", report.passed(), report.checks.len());
    if report.all_passed() {
        0
    } else {
        EXIT_VERIFY
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::SolverFailure { .. } | Error::RunAborted { .. }) => EXIT_SOLVER,
        _ => EXIT_USAGE,
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MMC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).with_context(|| format!("MMC_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Run { config, snapshots } => cmd_run(&config, snapshots),
        Command::Converge { config } => cmd_converge(&config),
        Command::Verify { seed } => Ok(cmd_verify(seed)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
