//! Experiment driver behind the `symmbem` binary: refinement sweeps,
//! single forward solves and sphere mesh generation.

mod cache;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::bem_ops::{OperatorSet, QuadratureOptions};
use crate::error::{Error, Result};
use crate::formulation::{assemble_rhs, assemble_system, conductivity_rescale, BlockSystem};
use crate::geometry::off::{load_off, save_off};
use crate::geometry::{make_icosphere, NestedModel, Point};
use crate::krylov::{minres, FnOperator};
use crate::oracle::{layered_sphere_potential, SphereSpec};
use crate::precond::{unpreconditioned_condition, PrecondOperator};

pub use cache::assemble_cached;
pub use config::{ExperimentConfig, ModelSource, PAPER_FIG1};

pub const CSV_HEADER: &str =
    "subdiv,one_over_h,dofs,cond_raw,cond_prec,iters_raw,iters_prec,relerr_oracle,assemble_seconds,solve_seconds";

/// The recovered residual of the preconditioned solve may exceed the
/// solver tolerance by this factor before the deflation is deemed inconsistent.
pub const RECOVERY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub subdiv: usize,
    pub one_over_h: f64,
    pub dofs: usize,
    pub cond_raw: Option<f64>,
    pub cond_prec: Option<f64>,
    pub iters_raw: usize,
    pub iters_prec: usize,
    pub relerr_oracle: Option<f64>,
    pub assemble_seconds: f64,
    pub solve_seconds: f64,
    pub converged_raw: bool,
    pub converged_prec: bool,
}

impl SweepRow {
    pub fn converged(&self) -> bool {
        self.converged_raw && self.converged_prec
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{},{},{},{},{:.3},{:.3}",
            self.subdiv,
            self.one_over_h,
            self.dofs,
            opt(self.cond_raw),
            opt(self.cond_prec),
            self.iters_raw,
            self.iters_prec,
            opt(self.relerr_oracle),
            self.assemble_seconds,
            self.solve_seconds
        )
    }
}

#[derive(Debug)]
pub enum RowOutcome {
    Done(SweepRow),
    Failed { subdiv: usize, error: Error },
}

pub fn build_model(cfg: &ExperimentConfig, subdiv: usize) -> Result<NestedModel> {
    match &cfg.model {
        ModelSource::Spheres { radii } => NestedModel::concentric_spheres(subdiv, radii, cfg.conductivities.clone()),
        ModelSource::Files(paths) => {
            let meshes = paths.iter().map(load_off).collect::<Result<Vec<_>>>()?;
            NestedModel::new(meshes, cfg.conductivities.clone())
        }
    }
}

/// Everything assembled for one refinement level.
pub struct Assembled {
    pub model: NestedModel,
    pub system: BlockSystem,
    pub seconds: f64,
}

pub fn assemble(cfg: &ExperimentConfig, subdiv: usize) -> Result<Assembled> {
    let start = Instant::now();
    let model = build_model(cfg, subdiv)?;
    let ops = operators(&model, &cfg.quadrature, cfg.cache_dir.as_deref())?;
    let mut system = assemble_system(&model, &ops)?;
    drop(ops);
    system.rhs = assemble_rhs(&model, &system, &cfg.dipoles)?;
    conductivity_rescale(&model, &mut system);
    Ok(Assembled {
        model,
        system,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn operators(model: &NestedModel, opts: &QuadratureOptions, cache: Option<&Path>) -> Result<OperatorSet> {
    match cache {
        Some(dir) => assemble_cached(model, opts, dir),
        None => OperatorSet::assemble(model, opts),
    }
}

/// Potentials of the outermost surface with zero vertex mean.
pub fn scalp_potential(system: &BlockSystem, x: &DVector<f64>) -> Vec<f64> {
    let outer = system.layout.blocks.last().unwrap().surface;
    let v: Vec<f64> = system.potential(x, outer).iter().copied().collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.into_iter().map(|a| a - mean).collect()
}

/// Relative ℓ2 error between two vertex potentials after removing means.
pub fn relative_error_mean_free(x: &[f64], reference: &[f64]) -> f64 {
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let mr = reference.iter().sum::<f64>() / reference.len() as f64;
    let num: f64 = x.iter().zip(reference).map(|(a, b)| ((a - mx) - (b - mr)).powi(2)).sum();
    let den: f64 = reference.iter().map(|b| (b - mr).powi(2)).sum();
    (num / den).sqrt()
}

/// Layered-sphere reference at the outer vertices, available for sphere
/// models with an insulating exterior and every dipole in the innermost ball.
pub fn oracle_potential(cfg: &ExperimentConfig, model: &NestedModel) -> Option<Result<Vec<f64>>> {
    let ModelSource::Spheres { radii } = &cfg.model else {
        return None;
    };
    if !model.insulated() || cfg.dipoles.iter().any(|d| d.position.norm() >= radii[0]) {
        return None;
    }
    let spec = match SphereSpec::new(radii.clone(), cfg.conductivities[..radii.len()].to_vec()) {
        Ok(s) => s,
        Err(e) => return Some(Err(e)),
    };
    let points = &model.surfaces.last().unwrap().vertices;
    let mut total = vec![0.0; points.len()];
    for d in &cfg.dipoles {
        match layered_sphere_potential(&spec, &d.position, &d.moment, points) {
            Ok(v) => total.iter_mut().zip(v).for_each(|(t, x)| *t += x),
            Err(e) => return Some(Err(e)),
        }
    }
    Some(Ok(total))
}

pub fn run_row(cfg: &ExperimentConfig, subdiv: usize) -> Result<SweepRow> {
    let asm = assemble(cfg, subdiv)?;
    let sys = &asm.system;
    let start = Instant::now();
    let op = PrecondOperator::build(sys, &asm.model)?;
    let prec = op.solve(cfg.tolerance, cfg.max_iterations, RECOVERY_FACTOR)?;
    let solve_seconds = start.elapsed().as_secs_f64();

    let raw = FnOperator {
        dim: sys.dim(),
        f: |x: &DVector<f64>| Ok(op.apply_z(x)),
    };
    let (_, raw_report) = minres(&raw, op.projected_rhs(), cfg.tolerance, cfg.max_iterations)?;

    let (cond_raw, cond_prec) = if cfg.skip_conditioning {
        (None, None)
    } else {
        (
            estimate_or_blank(unpreconditioned_condition(sys), "cond_raw", subdiv)?,
            estimate_or_blank(op.condition(), "cond_prec", subdiv)?,
        )
    };
    let relerr_oracle = match oracle_potential(cfg, &asm.model) {
        Some(reference) => Some(relative_error_mean_free(&scalp_potential(sys, &prec.solution), &reference?)),
        None => None,
    };
    let edge = asm.model.surfaces.iter().map(|s| s.average_edge_length()).sum::<f64>()
        / asm.model.num_surfaces() as f64;
    Ok(SweepRow {
        subdiv,
        one_over_h: 1.0 / edge,
        dofs: sys.dim(),
        cond_raw,
        cond_prec,
        iters_raw: raw_report.iterations,
        iters_prec: prec.report.iterations,
        relerr_oracle,
        assemble_seconds: asm.seconds,
        solve_seconds,
        converged_raw: raw_report.converged,
        converged_prec: prec.report.converged,
    })
}

/// An unconverged eigenvalue estimate leaves the column blank instead of
/// discarding the whole row.
fn estimate_or_blank(
    estimate: Result<crate::krylov::ConditionEstimate>,
    column: &str,
    subdiv: usize,
) -> Result<Option<f64>> {
    match estimate {
        Ok(c) => Ok(Some(c.cond)),
        Err(e @ Error::NotConverged { .. }) => {
            eprintln!("warning: subdiv {subdiv}: {column} left blank: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs every level; a failing level is reported, not fatal. File-based
/// models have a single level, reported as subdivision 0.
pub fn run_sweep(cfg: &ExperimentConfig) -> Vec<RowOutcome> {
    let levels = match cfg.model {
        ModelSource::Spheres { .. } => cfg.subdivisions.clone(),
        ModelSource::Files(_) => vec![0],
    };
    levels
        .into_iter()
        .map(|s| match run_row(cfg, s) {
            Ok(row) => RowOutcome::Done(row),
            Err(error) => RowOutcome::Failed { subdiv: s, error },
        })
        .collect()
}

/// CSV with the fixed header; failed levels become `# error` comment lines.
pub fn write_csv<W: Write>(mut w: W, rows: &[RowOutcome]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        match row {
            RowOutcome::Done(r) => writeln!(w, "{}", r.to_csv())?,
            RowOutcome::Failed { subdiv, error } => writeln!(w, "# error subdiv={subdiv}: {error}")?,
        }
    }
    Ok(())
}

/// Preconditioned forward solve at the finest configured level; returns the
/// outer surface vertices and their zero-mean potentials.
pub fn solve_once(cfg: &ExperimentConfig) -> Result<(Vec<Point>, Vec<f64>)> {
    let subdiv = *cfg.subdivisions.iter().max().unwrap();
    let asm = assemble(cfg, subdiv)?;
    let op = PrecondOperator::build(&asm.system, &asm.model)?;
    let out = op.solve(cfg.tolerance, cfg.max_iterations, RECOVERY_FACTOR)?;
    if !out.report.converged {
        return Err(Error::NotConverged {
            solver: "preconditioned cg",
            iterations: out.report.iterations,
            residual: out.report.final_residual(),
        });
    }
    let v = scalp_potential(&asm.system, &out.solution);
    Ok((asm.model.surfaces.last().unwrap().vertices.clone(), v))
}

pub fn write_potentials<W: Write>(mut w: W, points: &[Point], values: &[f64]) -> Result<()> {
    writeln!(w, "# x y z potential")?;
    for (p, v) in points.iter().zip(values) {
        writeln!(w, "{:.16e} {:.16e} {:.16e} {:.16e}", p.x, p.y, p.z, v)?;
    }
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "symmbem", version, about = "Symmetric BEM forward solver for layered conductors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Refinement sweep: conditioning, iteration counts and accuracy per level.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// One forward solve; writes the outer-surface potential per vertex.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Writes an icosphere as an OFF file.
    MakeSphere {
        #[arg(long)]
        subdiv: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::paper_fig1(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command; the returned code is 0 iff everything completed
/// and converged.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Sweep { config, out, overrides } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let rows = run_sweep(&cfg);
            let mut ok = true;
            for row in &rows {
                match row {
                    RowOutcome::Done(r) => {
                        eprintln!("subdiv {}: {}", r.subdiv, r.to_csv());
                        ok &= r.converged();
                    }
                    RowOutcome::Failed { subdiv, error } => {
                        eprintln!("subdiv {subdiv} failed: {error}");
                        ok = false;
                    }
                }
            }
            write_csv(std::fs::File::create(&out)?, &rows)?;
            Ok(if ok { 0 } else { 1 })
        }
        Command::Solve { config, out, overrides } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let (points, values) = solve_once(&cfg)?;
            write_potentials(std::io::BufWriter::new(std::fs::File::create(&out)?), &points, &values)?;
            Ok(0)
        }
        Command::MakeSphere { subdiv, radius, out } => {
            save_off(&make_icosphere(subdiv, radius)?, &out)?;
            Ok(0)
        }
    }
}

/// Sizes the global thread pool from `SYMMBEM_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SYMMBEM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("SYMMBEM_THREADS: {e}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Parse(format!("thread pool: {e}")))?;
    }
    Ok(())
}
