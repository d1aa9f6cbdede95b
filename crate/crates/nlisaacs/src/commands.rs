//! Subcommands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nlisaacs_core::analysis::{consistency_order, refinement_study, stability_excess, truncation_distance, AnalysisError, Ingredient, Reference, StudySpec};
use nlisaacs_core::stencil::assemble;
use nlisaacs_core::stepper::{assemble_diffusion_correction, solve_from};
use nlisaacs_core::{ControlProblem, DiffusionCorrection, Grid, SchemeParams};

use crate::checks::{self, Setup, SuiteResult};
use crate::config::{ReferenceName, RunConfig};
use crate::io;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "nlisaacs", version, about = "Monotone schemes for nonlocal Isaacs equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Refinement levels (overrides `study.levels`).
    #[arg(long)]
    pub level_count: Option<usize>,
    /// Seed of the sampling-based validators (overrides `check.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and write the solution CSV.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume from a checkpoint CSV.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the property suites.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Test hook: negate a jump weight before the nonnegativity suite.
        #[arg(long)]
        inject_negative_kappa: bool,
    },
    /// Run refinement, truncation and consistency studies.
    Rates {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Self::Solve { common, .. } | Self::Check { common, .. } | Self::Rates { common } => common,
        }
    }
}

/// Whether every property or rate requirement held.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
}

fn load(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.check.seed = seed;
    }
    if let Some(levels) = common.level_count {
        cfg.study.get_or_insert_with(Default::default).levels = levels;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Plan {
    problem: ControlProblem,
    grid: Grid,
    params: SchemeParams,
}

fn plan(cfg: &RunConfig) -> Result<Plan, CliError> {
    let problem = cfg.problem()?;
    let grid = cfg.grid(&problem)?;
    let params = cfg.scheme.params();
    params.validate()?;
    Ok(Plan { problem, grid, params })
}

fn correction(cfg: &RunConfig, p: &Plan) -> Result<DiffusionCorrection, CliError> {
    if cfg.scheme.corrected {
        let delta = p.params.resolve_delta(p.problem.measure().sigma(), p.grid.dx(), p.grid.dt())?;
        Ok(assemble_diffusion_correction(&p.problem, &p.grid, delta)?)
    } else {
        Ok(DiffusionCorrection::disabled())
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Solve { common, resume } => cmd_solve(&load(common)?, resume.as_deref()),
        Command::Check { common, inject_negative_kappa } => cmd_check(&load(common)?, *inject_negative_kappa),
        Command::Rates { common } => cmd_rates(&load(common)?),
    }
}

pub fn cmd_solve(cfg: &RunConfig, resume: Option<&std::path::Path>) -> Result<Outcome, CliError> {
    let p = plan(cfg)?;
    let corr = correction(cfg, &p)?;
    let delta = p.params.resolve_delta(p.problem.measure().sigma(), p.grid.dx(), p.grid.dt())?;
    let (start, initial) = match resume {
        Some(path) => io::read_checkpoint(path, &p.grid)?,
        None => (0, p.grid.sample(&*p.problem.initial_fn())),
    };
    let mut stencils = Vec::new();
    for point in &cfg.output.stencil_points {
        if point.len() != p.grid.dim() {
            return Err(CliError::Config(format!("stencil point {point:?} has the wrong dimension")));
        }
        for a in 0..p.problem.controls_a() {
            for b in 0..p.problem.controls_b() {
                let w = assemble(&p.problem, p.grid.time(1), point, a, b, delta, p.grid.dx()).map_err(nlisaacs_core::SolverError::from)?;
                stencils.push((a, b, w));
            }
        }
    }

    let field = solve_from(&p.problem, &p.grid, &p.params, &corr, start, initial)?;
    let dir = &cfg.output.dir;
    io::write_file(&io::out_path(dir, "solution.csv"), &io::solution_csv(&field, cfg.output.slice_stride))?;
    if cfg.output.checkpoint {
        io::write_file(&io::out_path(dir, "checkpoint.csv"), &io::checkpoint_csv(&field))?;
    }
    if !stencils.is_empty() {
        io::write_file(&io::out_path(dir, "stencil.csv"), &io::stencil_csv(p.grid.dim(), &stencils))?;
    }
    let final_norm = field.sup_norm(field.len() - 1);
    let excess = stability_excess(&p.problem, &field);
    let limit = checks::COMPARISON_SLACK * p.params.fixed_point_tol;
    let passed = excess <= limit;
    let summary = format!(
        "problem,steps,dx,dt,delta,final_linf,stability_excess,stability_passed\n{},{},{},{},{},{},{},{}\n",
        p.problem.name(),
        p.grid.steps(),
        p.grid.dx(),
        p.grid.dt(),
        delta,
        final_norm,
        excess,
        passed
    );
    io::write_file(&io::out_path(dir, "summary.csv"), &summary)?;
    println!("solved {} to t = {} ({} steps, delta = {delta})", p.problem.name(), p.grid.horizon(), p.grid.steps());
    println!("final Linf norm {final_norm}");
    println!("stability bound {} (excess {excess:e})", if passed { "holds" } else { "VIOLATED" });
    Ok(Outcome { passed })
}

pub fn cmd_check(cfg: &RunConfig, inject: bool) -> Result<Outcome, CliError> {
    let p = plan(cfg)?;
    let setup = Setup { problem: &p.problem, grid: &p.grid, params: p.params, corrected: cfg.scheme.corrected };
    let c = &cfg.check;
    let results: Vec<SuiteResult> = vec![
        checks::assumptions(&setup, c.assumption_samples, c.seed),
        checks::partition(&setup, c.partition_points, c.stencil_samples, c.seed)?,
        checks::nonnegativity(&setup, inject)?,
        checks::comparison(&setup, c.pairs, c.seed)?,
        checks::stability(&setup)?,
        checks::time_regularity(&setup)?,
    ];
    let mut csv = String::from("suite,passed,worst,detail\n");
    for r in &results {
        csv.push_str(&format!("{},{},{},\"{}\"\n", r.name, r.passed, r.worst, r.detail.replace('"', "'")));
        println!("{:<26} {} (worst {:e}) {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.worst, r.detail);
    }
    io::write_file(&io::out_path(&cfg.output.dir, "check.csv"), &csv)?;
    Ok(Outcome { passed: results.iter().all(|r| r.passed) })
}

pub fn cmd_rates(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let study = cfg.study.clone().ok_or_else(|| CliError::Config("rates needs a [study] section".into()))?;
    let p = plan(cfg)?;
    let dir = &cfg.output.dir;
    let mut passed = true;
    let mut table = String::new();

    if study.refinement {
        let spec = StudySpec {
            base_dx: study.base_dx.unwrap_or(cfg.grid.dx),
            levels: study.levels,
            box_radius: cfg.grid.box_radius,
            extension: cfg.grid.extension.into(),
            coupling: study.coupling(),
            reference: match study.reference {
                ReferenceName::FineGrid => Reference::FineGrid { factor: study.reference_factor },
                ReferenceName::Exact => Reference::Exact(cfg.problem.manufactured.expect("validated").target()),
            },
            params: p.params,
            corrected: cfg.scheme.corrected,
            k_u0_finite: study.k_u0_finite,
        };
        match refinement_study(&p.problem, &spec) {
            Ok(report) => {
                io::write_file(&io::out_path(dir, "rates.csv"), &io::rate_csv(&report))?;
                table.push_str(&io::rate_table(&report));
                passed &= report.passed;
            }
            Err(AnalysisError::Level { level, source, partial }) => {
                let mut csv = String::from("dx,dt,delta,error\n");
                for r in &partial {
                    csv.push_str(&format!("{},{},{},{}\n", r.dx, r.dt, r.delta, r.error));
                }
                io::write_file(&io::out_path(dir, "rates.csv"), &csv)?;
                return Err(AnalysisError::Level { level, source, partial }.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if !study.truncation_deltas.is_empty() {
        let r = truncation_distance(&p.problem, &p.grid, &p.params, &study.truncation_deltas)?;
        io::write_file(&io::out_path(dir, "truncation.csv"), &io::truncation_csv(&r))?;
        table.push_str(&io::truncation_table(&r));
        passed &= r.passed;
    }
    if !study.consistency.is_empty() {
        let sigma = p.problem.measure().sigma();
        let mut reports = Vec::new();
        for name in &study.consistency {
            let ing: Ingredient = (*name).into();
            reports.push(consistency_order(ing, sigma, &ing.default_sweep())?);
        }
        io::write_file(&io::out_path(dir, "consistency.csv"), &io::consistency_csv(&reports))?;
        table.push_str(&io::consistency_table(&reports));
        passed &= reports.iter().all(|r| r.passed);
    }
    io::write_file(&io::out_path(dir, "rates.txt"), &table)?;
    print!("{table}");
    Ok(Outcome { passed })
}
