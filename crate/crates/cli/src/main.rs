//! `bandedge`: band structures, gap edges and degeneracy removal from the
//! command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod config;
mod json;

use std::path::PathBuf;
use std::process::ExitCode;

use bandedge::bands::{edge_set, find_gaps, sample_bands, BandGrid, BlochModel, EdgeOptions, EdgeSide};
use bandedge::discrete::{checkerboard_bands, verify_nondegenerate_min_on};
use bandedge::lattice::{ShiftVector, Vec2};
use bandedge::perturb::{remove_degeneracy, second_order_z_full, verify_expansion, PipelineModel, PipelineOptions};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::{Model, RunConfig};

/// Version tag written into every JSON document.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "bandedge", version, about = "Band structures and gap-edge analysis of 2D periodic operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the band functions on a grid (CSV, plus JSON with --out).
    Bands(Common),
    /// List the spectral gaps of the sampled bands.
    Gaps(Common),
    /// Locate and classify the points attaining a gap edge.
    Edges(Common),
    /// Check the second-order correction against supercell diagonalization.
    Zcheck(Common),
    /// Run the degeneracy-removal pipeline and emit its trace.
    Remove(Common),
    /// Model-specific report for the discrete models.
    Discrete(Common),
}

#[derive(Args)]
struct Common {
    /// JSON or TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Grid size, as `N` or `N1xN2`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    e_cut: Option<f64>,
    #[arg(long)]
    n_bands: Option<usize>,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for output files; without it results go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<bandedge::Error> for Failure {
    fn from(e: bandedge::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn parse_grid(s: &str) -> Outcome<[usize; 2]> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Config(format!("invalid --grid {s:?}")))?;
    match nums[..] {
        [n] => Ok([n, n]),
        [a, b] => Ok([a, b]),
        _ => Err(Failure::Config(format!("invalid --grid {s:?}"))),
    }
}

fn load_config(c: &Common) -> Outcome<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(g) = &c.grid {
        cfg.grid = Some(parse_grid(g)?);
    }
    if c.e_cut.is_some() {
        cfg.e_cut = c.e_cut;
    }
    if c.n_bands.is_some() {
        cfg.n_bands = c.n_bands;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn bloch(model: &Model) -> &dyn BlochModel {
    match model {
        Model::Pipeline(m) => m,
        Model::NSite(m) => m,
    }
}

struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn emit(&self, name: &str, contents: &str, to_stdout: bool) -> Outcome<()> {
        match &self.dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
                let path = dir.join(name);
                std::fs::write(&path, contents).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
                eprintln!("wrote {}", path.display());
            }
            None if to_stdout => print!("{contents}"),
            None => {}
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Outcome<()> {
        let s = json::to_string(value).map_err(|e| Failure::Numerical(format!("serialization failed: {e}")))?;
        self.emit(name, &s, true)
    }
}

fn sample(cfg: &RunConfig, model: &Model) -> Outcome<BandGrid> {
    Ok(sample_bands(bloch(model), cfg.grid(model), cfg.n_bands(model))?)
}

fn cmd_bands(cfg: &RunConfig, out: &Output) -> Outcome<()> {
    let model = cfg.model().map_err(Failure::Config)?;
    let bg = sample(cfg, &model)?;
    out.emit("bands.csv", &bg.to_csv(), true)?;
    if out.dir.is_some() {
        out.json("bands.json", &json!({ "version": SCHEMA_VERSION, "bands": bg }))?;
    }
    Ok(())
}

fn cmd_gaps(cfg: &RunConfig, out: &Output) -> Outcome<()> {
    let model = cfg.model().map_err(Failure::Config)?;
    let bg = sample(cfg, &model)?;
    let report = find_gaps(&bg, cfg.tolerances.min_gap);
    out.json(
        "gaps.json",
        &json!({ "version": SCHEMA_VERSION, "grid": bg.dims, "n_bands": bg.n_bands, "band_floor": report.band_floor, "gaps": report.gaps }),
    )
}

fn cmd_edges(cfg: &RunConfig, out: &Output) -> Outcome<()> {
    let model = cfg.model().map_err(Failure::Config)?;
    let bg = sample(cfg, &model)?;
    let report = find_gaps(&bg, cfg.tolerances.min_gap);
    let (gap, value, side) = match cfg.edges.gap {
        None => (None, report.band_floor, EdgeSide::Upper),
        Some(i) => {
            let g = *report
                .gaps
                .get(i)
                .ok_or_else(|| Failure::Numerical(format!("gap {i} not found: {} gap(s) in the sampled bands", report.gaps.len())))?;
            let value = match cfg.edges.side {
                EdgeSide::Lower => g.lower,
                EdgeSide::Upper => g.upper,
            };
            (Some(g), value, cfg.edges.side)
        }
    };
    let opts = EdgeOptions { edge_tol: cfg.tolerances.edge_tol, hess_tol: cfg.tolerances.hess_tol, refine: cfg.edges.refine };
    let es = edge_set(bloch(&model), &bg, value, side, &opts)?;
    out.json("edges.json", &json!({ "version": SCHEMA_VERSION, "gap": gap, "edge_set": es }))
}

fn cmd_zcheck(cfg: &RunConfig, out: &Output) -> Outcome<()> {
    let z = cfg.zcheck.as_ref().ok_or_else(|| Failure::Config("zcheck needs a [zcheck] section".into()))?;
    if cfg.model != config::ModelKind::PlaneWave {
        return Err(Failure::Config("zcheck works on plane-wave models only".into()));
    }
    let m = cfg.plane_wave().map_err(Failure::Config)?;
    let nu = ShiftVector::from_spec(&z.shift, m.potential.dual()).map_err(|e| Failure::Config(format!("zcheck.shift: {e}")))?;
    let k = Vec2::new(z.k[0], z.k[1]);
    let split = second_order_z_full(&m.potential, &k, &nu, m.e_cut, z.band)?;
    let fit = verify_expansion(&m.potential, &k, &nu, &z.eps, m.e_cut, z.band)?;
    out.json("zcheck.json", &json!({ "version": SCHEMA_VERSION, "z": split, "fit": fit }))
}

fn cmd_remove(cfg: &RunConfig, out: &Output) -> Outcome<()> {
    let r = cfg.remove.as_ref().ok_or_else(|| Failure::Config("remove needs a [remove] section".into()))?;
    let model = match cfg.model().map_err(Failure::Config)? {
        Model::Pipeline(m) => m,
        Model::NSite(_) => return Err(Failure::Config("remove does not support the n-site model".into())),
    };
    let interval = match r.interval {
        Some([lo, hi]) => (lo, hi),
        None => {
            let wrapped = Model::Pipeline(model.clone());
            let bg = sample(cfg, &wrapped)?;
            let report = find_gaps(&bg, cfg.tolerances.min_gap);
            let g = report
                .gaps
                .get(r.gap)
                .ok_or_else(|| Failure::Numerical(format!("gap {} not found: {} gap(s) in the sampled bands", r.gap, report.gaps.len())))?;
            (g.lower, g.upper)
        }
    };
    let mut opts = PipelineOptions { edge: r.side, grid: cfg.grid, min_gap: cfg.tolerances.min_gap, delta: r.delta, ..PipelineOptions::default() };
    if let Some(cap) = r.basis_cap {
        opts.basis_cap = cap;
    }
    let (_, trace) = remove_degeneracy(model, interval, r.budget, r.max_rounds, &opts)?;
    out.json("remove.json", &trace)
}

fn cmd_discrete(cfg: &RunConfig, out: &Output) -> Outcome<()> {
    let model = cfg.model().map_err(Failure::Config)?;
    let grid = cfg.grid(&model);
    let report = match &model {
        Model::Pipeline(PipelineModel::Checkerboard(m)) => {
            let bg = sample(cfg, &model)?;
            let closed = checkerboard_bands(m);
            let sampled: Vec<(f64, f64)> = (0..2).map(|j| bg.band_range(j)).collect();
            json!({ "version": SCHEMA_VERSION, "model": "checkerboard", "closed_form_bands": closed, "sampled_bands": sampled,
                    "gaps": find_gaps(&bg, cfg.tolerances.min_gap).gaps })
        }
        Model::Pipeline(PipelineModel::Doubled(m)) => {
            json!({ "version": SCHEMA_VERSION, "model": "doubled", "upper_band_minimum": verify_nondegenerate_min_on(m, grid)? })
        }
        Model::NSite(m) => {
            let bg = sample(cfg, &model)?;
            let ranges: Vec<(f64, f64)> = (0..bg.n_bands).map(|j| bg.band_range(j)).collect();
            json!({ "version": SCHEMA_VERSION, "model": "nsite", "v": m.v, "bands": ranges, "constraint_warning": m.constraint_warning(),
                    "gaps": find_gaps(&bg, cfg.tolerances.min_gap).gaps })
        }
        Model::Pipeline(PipelineModel::PlaneWave(_)) => {
            return Err(Failure::Config("discrete needs model = checkerboard, nsite or doubled".into()));
        }
    };
    out.json("discrete.json", &report)
}

fn run(cli: Cli) -> Outcome<()> {
    let (Command::Bands(c) | Command::Gaps(c) | Command::Edges(c) | Command::Zcheck(c) | Command::Remove(c) | Command::Discrete(c)) =
        &cli.command;
    if let Some(n) = c.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot start {n} workers: {e}")))?;
    }
    let cfg = load_config(c)?;
    let out = Output { dir: c.out.clone() };
    match &cli.command {
        Command::Bands(_) => cmd_bands(&cfg, &out),
        Command::Gaps(_) => cmd_gaps(&cfg, &out),
        Command::Edges(_) => cmd_edges(&cfg, &out),
        Command::Zcheck(_) => cmd_zcheck(&cfg, &out),
        Command::Remove(_) => cmd_remove(&cfg, &out),
        Command::Discrete(_) => cmd_discrete(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

