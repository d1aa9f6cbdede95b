//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nlisaacs::checks::{self, Setup};
use nlisaacs_core::analysis::{
    consistency_order, manufactured_source, refinement_study, time_regularity_constant, truncation_distance, Coupling, DecayingGaussian, Ingredient,
    RateReport, Reference, StudySpec,
};
use nlisaacs_core::problem::CANONICAL_PROBLEMS;
use nlisaacs_core::stepper::solve;
use nlisaacs_core::{canonical_problem, ControlProblem, DiffusionCorrection, Extension, Grid, ImplicitSolver, LevyMeasure, ProblemOverrides, SchemeParams};

// Tolerances and thresholds.
const PARTITION_POINTS: usize = 1_000_000;
const KAPPA_ASSEMBLIES: usize = 1_000;
const CLOSED_FORM_TOL: f64 = 1e-8;
const CONSISTENCY_TOL: f64 = 0.15;
const COMPARISON_PAIRS: usize = 100;
const REGULARITY_SPREAD: f64 = 3.0;
const RATE_8A: f64 = 0.4;
const RATE_8B: f64 = 0.4;
const RATE_8C: f64 = 0.15;
const TRUNCATION_SLACK: f64 = 0.1;

type Outcome = Result<String, String>;

fn overrides(sigma: f64) -> ProblemOverrides {
    ProblemOverrides { sigma: Some(sigma), ..Default::default() }
}

fn fractional(sigma: f64) -> ControlProblem {
    canonical_problem("fractional_linear", &overrides(sigma)).unwrap()
}

fn grid(dx: f64, dt: f64, horizon: f64, box_radius: f64) -> Grid {
    Grid::new(1, dx, horizon, dt, box_radius, Extension::ConstantNearest).unwrap()
}

fn implicit(delta: f64) -> SchemeParams {
    SchemeParams::implicit(delta).with_solver(ImplicitSolver::PolicyIteration)
}

fn ac1_partition() -> Outcome {
    let mut details = Vec::new();
    for (name, sigma) in [("fractional_linear", 0.5), ("fractional_linear", 1.5), ("two_player_nonconvex", 1.5), ("smooth_u0_variant", 1.0)] {
        let p = canonical_problem(name, &overrides(sigma)).unwrap();
        let g = grid(0.0625, 0.0625, p.horizon(), 4.0);
        let setup = Setup { problem: &p, grid: &g, params: SchemeParams::implicit(0.0625), corrected: false };
        let r = checks::partition(&setup, PARTITION_POINTS, KAPPA_ASSEMBLIES, 17).map_err(|e| e.to_string())?;
        if !r.passed {
            return Err(format!("{name} sigma {sigma}: {}", r.detail));
        }
        details.push(format!("{name}/{sigma}: worst {:.1e}", r.worst));
    }
    Ok(details.join(", "))
}

fn ac2_closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    for dim in 1..=3 {
        let area = [2.0, 2.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI][dim - 1];
        for sigma in [0.5, 1.0, 1.5] {
            let m = LevyMeasure::truncated_stable(dim, sigma, 1.0).unwrap();
            for k in 1..=6 {
                let d = 0.5f64.powi(k);
                let mass = area * (d.powf(-sigma) - 1.0) / sigma;
                let second = area * d.powf(2.0 - sigma) / (2.0 - sigma);
                let e1 = (m.truncated_mass(d).unwrap() - mass).abs() / mass;
                let e2 = (m.small_jump_second_moment(d).unwrap() - second).abs() / second;
                worst = worst.max(e1).max(e2);
            }
        }
    }
    if worst <= CLOSED_FORM_TOL {
        Ok(format!("worst relative error {worst:.2e} (limit {CLOSED_FORM_TOL:e})"))
    } else {
        Err(format!("worst relative error {worst:.2e}"))
    }
}

fn ac3_consistency() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for sigma in [0.5, 1.5] {
        for ing in [Ingredient::Truncation, Ingredient::Quadrature, Ingredient::Drift, Ingredient::LocalCorrection] {
            let r = consistency_order(ing, sigma, &ing.default_sweep()).map_err(|e| e.to_string())?;
            let good = (r.fit.slope - r.expected).abs() <= CONSISTENCY_TOL;
            ok &= good;
            parts.push(format!("{}@{sigma}={:.3}/{:.2}", ing.name(), r.fit.slope, r.expected));
        }
    }
    if ok {
        Ok(parts.join(" "))
    } else {
        Err(parts.join(" "))
    }
}

fn ac4_comparison() -> Outcome {
    let mut parts = Vec::new();
    for sigma in [0.5, 1.5] {
        let p = fractional(sigma).with_horizon(0.25).unwrap();
        let dx = 0.0625;
        let explicit_dt = if sigma < 1.0 { 0.0625 } else { 0.0078125 };
        for (label, g, params) in
            [("explicit", grid(dx, explicit_dt, 0.25, 2.0), SchemeParams::explicit(dx)), ("implicit", grid(dx, 0.0625, 0.25, 2.0), SchemeParams::implicit(dx))]
        {
            let setup = Setup { problem: &p, grid: &g, params, corrected: false };
            let r = checks::comparison(&setup, COMPARISON_PAIRS, 4).map_err(|e| e.to_string())?;
            if !r.passed {
                return Err(format!("sigma {sigma} {label}: violation {:e}", r.worst));
            }
            parts.push(format!("{label}@{sigma}: {:.1e}", r.worst));
        }
    }
    Ok(format!("{COMPARISON_PAIRS} pairs each, worst violations {}", parts.join(", ")))
}

/// A grid and scheme for each canonical problem that satisfies its CFL condition.
fn canonical_setups() -> Vec<(String, ControlProblem, Grid, SchemeParams)> {
    let mut out = Vec::new();
    for name in CANONICAL_PROBLEMS {
        for sigma in [0.5, 1.5] {
            let p = canonical_problem(name, &overrides(sigma)).unwrap();
            let label = format!("{name}@{sigma}");
            out.push((label.clone() + "/implicit", p.clone(), grid(0.0625, 0.0625, p.horizon(), 3.0), SchemeParams::implicit(0.0625)));
            let dt = if p.has_no_jumps() {
                0.03125
            } else if sigma < 1.0 {
                0.015625
            } else {
                0.00390625
            };
            out.push((label + "/explicit", p.clone(), grid(0.0625, dt, p.horizon(), 3.0), SchemeParams::explicit(0.0625)));
            if name == "linear_advection" {
                break;
            }
        }
    }
    out
}

fn ac5_stability() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for (label, p, g, params) in canonical_setups() {
        let setup = Setup { problem: &p, grid: &g, params, corrected: false };
        let r = checks::stability(&setup).map_err(|e| format!("{label}: {e}"))?;
        if !r.passed {
            return Err(format!("{label}: excess {:e}", r.worst));
        }
        worst = worst.max(r.worst);
    }
    Ok(format!("all canonical problems, largest excess over the bound {worst:.2e}"))
}

fn ac6_nonnegativity() -> Outcome {
    let mut count = 0;
    for (label, p, g, params) in canonical_setups() {
        let setup = Setup { problem: &p, grid: &g, params, corrected: false };
        let r = checks::nonnegativity(&setup, false).map_err(|e| format!("{label}: {e}"))?;
        if !r.passed || r.detail.contains("vacuous") {
            return Err(format!("{label}: {} ({})", r.worst, r.detail));
        }
        let injected = checks::nonnegativity(&setup, true).map_err(|e| format!("{label}: {e}"))?;
        if p.has_no_jumps() {
            continue;
        }
        if injected.passed {
            return Err(format!("{label}: injected negative kappa not detected"));
        }
        count += 1;
    }
    Ok(format!("all coefficients >= 0 on every CFL-admissible canonical setup; fault injection detected in {count} setups"))
}

fn ac7_time_regularity() -> Outcome {
    let mut parts = Vec::new();
    for sigma in [0.5, 1.5] {
        let p = fractional(sigma);
        let mut ks = Vec::new();
        for level in 0..3 {
            let dx = 0.125 / f64::from(1 << level);
            let f = solve(&p, &grid(dx, dx, 1.0, 4.0), &implicit(dx), &DiffusionCorrection::disabled()).map_err(|e| e.to_string())?;
            ks.push(time_regularity_constant(&f, sigma, 2.0));
        }
        let spread = ks.iter().copied().fold(0.0, f64::max) / ks.iter().copied().fold(f64::INFINITY, f64::min);
        if spread > REGULARITY_SPREAD {
            return Err(format!("sigma {sigma}: constants {ks:?}, spread {spread:.3}"));
        }
        parts.push(format!("sigma {sigma}: K = [{:.3}, {:.3}, {:.3}] spread {spread:.3}", ks[0], ks[1], ks[2]));
    }
    Ok(parts.join("; "))
}

fn study(base_dx: f64, box_radius: f64, params: SchemeParams) -> StudySpec {
    StudySpec {
        base_dx,
        levels: 4,
        box_radius,
        extension: Extension::ConstantNearest,
        coupling: Coupling { dt_coeff: 0.5, ..Coupling::default() },
        reference: Reference::FineGrid { factor: 4 },
        params,
        corrected: false,
        k_u0_finite: None,
    }
}

fn ac8_rates() -> Outcome {
    let check = |tag: &str, r: &RateReport, limit: f64| -> Result<String, String> {
        let line = format!("({tag}) slope {:.3} >= {limit}", r.space_fit.slope);
        if r.space_fit.slope >= limit {
            Ok(line)
        } else {
            Err(format!("{line} failed, errors {:?}", r.rows.iter().map(|x| x.error).collect::<Vec<_>>()))
        }
    };
    let a = refinement_study(&canonical_problem("linear_advection", &ProblemOverrides::default()).unwrap(), &study(0.125, 4.0, SchemeParams::explicit(1.0)))
        .map_err(|e| e.to_string())?;
    let b = refinement_study(&fractional(0.5), &study(0.125, 4.0, implicit(1.0))).map_err(|e| e.to_string())?;
    let smooth = canonical_problem("smooth_u0_variant", &overrides(1.5)).unwrap();
    let c = refinement_study(&smooth, &study(0.125, 3.0, implicit(1.0))).map_err(|e| e.to_string())?;
    let lines = [check("a", &a, RATE_8A)?, check("b", &b, RATE_8B)?, check("c", &c, RATE_8C)?];
    Ok(format!("{}; theory (c) space {:.2} [{}]", lines.join(", "), c.theory.space, c.theory.branch))
}

fn ac9_truncation() -> Outcome {
    let mut parts = Vec::new();
    let g = grid(1.0 / 256.0, 1.0 / 64.0, 1.0, 4.0);
    for sigma in [0.5, 1.5] {
        let r = truncation_distance(&fractional(sigma), &g, &implicit(1.0), &[0.5, 0.25, 0.125, 0.0625, 0.015625]).map_err(|e| e.to_string())?;
        let limit = 1.0 - sigma / 2.0 - TRUNCATION_SLACK;
        if r.fit.slope < limit {
            return Err(format!("sigma {sigma}: slope {:.3} < {limit}", r.fit.slope));
        }
        parts.push(format!("sigma {sigma}: slope {:.3} >= {limit:.2}", r.fit.slope));
    }
    Ok(parts.join(", "))
}

fn ac10_correction() -> Outcome {
    let target = Arc::new(DecayingGaussian { rate: 1.0 });
    let p = manufactured_source(&fractional(1.5), target.clone()).map_err(|e| e.to_string())?;
    let run = |corrected: bool| {
        let spec = StudySpec {
            base_dx: 0.125,
            levels: 4,
            box_radius: 4.0,
            extension: Extension::InitialProfile,
            coupling: Coupling { dt_coeff: 1.0, dt_power: 1.0, delta_coeff: 1.0, delta_power: 0.5 },
            reference: Reference::Exact(target.clone()),
            params: implicit(1.0),
            corrected,
            k_u0_finite: Some(true),
        };
        refinement_study(&p, &spec).map_err(|e| e.to_string())
    };
    let plain = run(false)?;
    let corrected = run(true)?;
    let pairs: Vec<(f64, f64)> = plain.rows.iter().zip(&corrected.rows).map(|(a, b)| (a.error, b.error)).collect();
    let text = pairs.iter().map(|(a, b)| format!("{b:.2e}<={a:.2e}")).collect::<Vec<_>>().join(" ");
    if pairs.iter().all(|(a, b)| b <= a) {
        Ok(format!("corrected vs plain per level: {text}"))
    } else {
        Err(text)
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nlisaacs")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn ac11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let config = d.join("run.toml");
    std::fs::write(
        &config,
        r#"
[problem]
name = "two_player_nonconvex"
sigma = 1.5
horizon = 0.5

[grid]
dx = 0.0625
dt = 0.0625
box_radius = 3.0
extension = "constant_nearest"

[scheme]
theta = 1.0
vartheta = 1.0
delta_rule = "optimal_thm35"
fixed_point_tol = 1e-12
fixed_point_max_iter = 10000
solver = "fixed_point"

[study]
levels = 3
base_dx = 0.25
dt_coeff = 1.0
dt_power = 1.0
delta_coeff = 1.0
delta_power = 1.0
reference = "fine_grid"
reference_factor = 4
consistency = ["quadrature"]
"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = config.to_str().unwrap();
    let mut compared = 0;
    for cmd in ["solve", "rates"] {
        let dirs: Vec<_> = ["1", "8"].iter().map(|t| (t.to_string(), d.join(format!("{cmd}-{t}")))).collect();
        for (t, out) in &dirs {
            cli(&[cmd, "--config", cfg, "--threads", t, "--out", out.to_str().unwrap()])?;
        }
        for entry in std::fs::read_dir(&dirs[0].1).map_err(|e| e.to_string())? {
            let name = entry.map_err(|e| e.to_string())?.file_name();
            if !Path::new(&name).extension().is_some_and(|e| e == "csv") {
                continue;
            }
            let a = std::fs::read(dirs[0].1.join(&name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].1.join(&name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{cmd}: {} differs between 1 and 8 threads", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} CSV files byte-identical at --threads 1 and 8"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("partition of unity", ac1_partition),
        ("measure closed forms", ac2_closed_forms),
        ("consistency orders", ac3_consistency),
        ("monotonicity / comparison", ac4_comparison),
        ("Linf stability", ac5_stability),
        ("coefficient nonnegativity", ac6_nonnegativity),
        ("discrete time regularity", ac7_time_regularity),
        ("convergence exponents", ac8_rates),
        ("truncation-distance rate", ac9_truncation),
        ("corrected scheme", ac10_correction),
        ("determinism", ac11_determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("AC{} PASS {name}: {detail} [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("AC{} FAIL {name}: {detail} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
