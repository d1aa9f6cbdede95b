//! CSV and table output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nlisaacs_core::analysis::{ConsistencyReport, RateReport, TruncationReport};
use nlisaacs_core::{Grid, SolutionField, StencilWeights};

use crate::CliError;

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn coord_header(out: &mut String, dim: usize) {
    for i in 1..=dim {
        let _ = write!(out, ",x{i}");
    }
}

/// Columns `t, x1..xN, value`; every `stride`-th level plus the last.
pub fn solution_csv(field: &SolutionField, stride: usize) -> String {
    let g = field.grid();
    let mut out = String::from("t");
    coord_header(&mut out, g.dim());
    out.push_str(",value\n");
    let mut x = vec![0.0; g.dim()];
    let last = field.len() - 1;
    for (n, slice) in field.slices() {
        if n % stride != 0 && n != last {
            continue;
        }
        let t = g.time(n);
        for (j, v) in slice.iter().enumerate() {
            g.coords(j, &mut x);
            let _ = write!(out, "{t}");
            for c in &x {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{v}");
        }
    }
    out
}

/// Latest slice as `time_index,node,value`.
pub fn checkpoint_csv(field: &SolutionField) -> String {
    let n = field.len() - 1;
    let mut out = String::from("time_index,node,value\n");
    for (j, v) in field.last().iter().enumerate() {
        let _ = writeln!(out, "{n},{j},{v}");
    }
    out
}

/// Parses a checkpoint written by [`checkpoint_csv`] for `grid`.
pub fn read_checkpoint(path: &Path, grid: &Grid) -> Result<(usize, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let bad = |line: usize, msg: &str| CliError::Config(format!("{}:{line}: {msg}", path.display()));
    let mut values = vec![f64::NAN; grid.node_count()];
    let mut level = None;
    for (k, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad(k + 1, "expected three columns"));
        }
        let n: usize = cols[0].parse().map_err(|_| bad(k + 1, "bad time index"))?;
        let j: usize = cols[1].parse().map_err(|_| bad(k + 1, "bad node index"))?;
        let v: f64 = cols[2].parse().map_err(|_| bad(k + 1, "bad value"))?;
        if *level.get_or_insert(n) != n || j >= values.len() {
            return Err(bad(k + 1, "inconsistent time index or node out of range"));
        }
        values[j] = v;
    }
    let level = level.ok_or_else(|| bad(1, "empty checkpoint"))?;
    if level > grid.steps() || values.iter().any(|v| v.is_nan()) {
        return Err(bad(1, "checkpoint does not match the grid"));
    }
    Ok((level, values))
}

/// Columns `a, b, kind, o1..oN, weight`.
pub fn stencil_csv(dim: usize, stencils: &[(usize, usize, StencilWeights)]) -> String {
    let mut out = String::from("a,b,kind");
    for i in 1..=dim {
        let _ = write!(out, ",o{i}");
    }
    out.push_str(",weight\n");
    for (a, b, s) in stencils {
        for (kind, o, w) in s.rows() {
            let _ = write!(out, "{a},{b},{kind}");
            for c in &o[..dim] {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{w}");
        }
    }
    out
}

pub fn rate_csv(r: &RateReport) -> String {
    let mut out = String::from("dx,dt,delta,error\n");
    for row in &r.rows {
        let _ = writeln!(out, "{},{},{},{}", row.dx, row.dt, row.delta, row.error);
    }
    out
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn rate_table(r: &RateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "refinement study: {}", r.label);
    let _ = writeln!(out, "{:>12} {:>12} {:>12} {:>14}", "dx", "dt", "delta", "Linf error");
    for row in &r.rows {
        let _ = writeln!(out, "{:>12.6e} {:>12.6e} {:>12.6e} {:>14.6e}", row.dx, row.dt, row.delta, row.error);
    }
    let _ = writeln!(out, "fitted space exponent {:.4} (residual {:.2e})", r.space_fit.slope, r.space_fit.residual);
    let _ = writeln!(out, "fitted time exponent  {:.4} (residual {:.2e})", r.time_fit.slope, r.time_fit.residual);
    let _ = writeln!(
        out,
        "theory [{}]: time {:.4}, space {:.4}{}",
        r.theory.branch,
        r.theory.time,
        r.theory.space,
        if r.theory.log_factors { " (with log factors)" } else { "" }
    );
    let _ = writeln!(out, "expected under coupling {:.4}, tolerance {}", r.expected, r.tolerance);
    if r.degenerate {
        let _ = writeln!(out, "degenerate: exact");
    }
    let _ = writeln!(out, "{}", verdict(r.passed));
    out
}

pub fn truncation_csv(r: &TruncationReport) -> String {
    let mut out = String::from("delta,difference\n");
    for (d, e) in r.deltas.iter().zip(&r.differences) {
        let _ = writeln!(out, "{d},{e}");
    }
    out
}

pub fn truncation_table(r: &TruncationReport) -> String {
    let mut out = String::from("truncation distance\n");
    for (d, e) in r.deltas.iter().zip(&r.differences) {
        let _ = writeln!(out, "{d:>12.6e} {e:>14.6e}");
    }
    let _ = writeln!(out, "fitted delta exponent {:.4}, expected >= {:.4} - 0.1", r.fit.slope, r.expected);
    if r.degenerate {
        let _ = writeln!(out, "degenerate: exact");
    }
    let _ = writeln!(out, "{}", verdict(r.passed));
    out
}

pub fn consistency_csv(reports: &[ConsistencyReport]) -> String {
    let mut out = String::from("ingredient,sigma,parameter,error\n");
    for r in reports {
        for (h, e) in r.sweep.iter().zip(&r.errors) {
            let _ = writeln!(out, "{},{},{h},{e}", r.ingredient.name(), r.sigma);
        }
    }
    out
}

pub fn consistency_table(reports: &[ConsistencyReport]) -> String {
    let mut out = String::from("consistency orders\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<18} sigma {:<4} slope {:.4} expected {:.4} +- {} {}",
            r.ingredient.name(),
            r.sigma,
            r.fit.slope,
            r.expected,
            r.tolerance,
            verdict(r.passed)
        );
    }
    out
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
