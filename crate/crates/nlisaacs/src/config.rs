//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nlisaacs_core::analysis::{Coupling, DecayingCosine, DecayingGaussian, Ingredient, SmoothTarget};
use nlisaacs_core::problem::CANONICAL_PROBLEMS;
use nlisaacs_core::sampling::DEFAULT_SEED;
use nlisaacs_core::{canonical_problem, ControlProblem, DeltaRule, Extension, Grid, ImplicitSolver, LevyMeasure, ProblemOverrides, SchemeParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Problems available in addition to the canonical ones.
pub const UTILITY_PROBLEMS: [&str; 2] = ["pure_decay", "stationary"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tempering_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_bound: Option<f64>,
    /// Replace the source by a manufactured one with this exact solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<TargetName>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    /// `e^{-t} cos x`.
    DecayingCosine,
    /// `e^{-t} exp(-|x|²)`.
    DecayingGaussian,
}

impl TargetName {
    pub fn target(self) -> Arc<dyn SmoothTarget> {
        match self {
            Self::DecayingCosine => Arc::new(DecayingCosine { rate: 1.0, frequency: 1.0 }),
            Self::DecayingGaussian => Arc::new(DecayingGaussian { rate: 1.0 }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionName {
    ConstantNearest,
    InitialProfile,
}

impl From<ExtensionName> for Extension {
    fn from(e: ExtensionName) -> Self {
        match e {
            ExtensionName::ConstantNearest => Extension::ConstantNearest,
            ExtensionName::InitialProfile => Extension::InitialProfile,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dx: f64,
    /// Time step; must divide the horizon. Defaults to `dx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub box_radius: f64,
    pub extension: ExtensionName,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dx: 0.0625, dt: None, steps: None, box_radius: 4.0, extension: ExtensionName::ConstantNearest }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Manual,
    OptimalThm33,
    OptimalThm34,
    OptimalThm35,
}

impl From<RuleName> for DeltaRule {
    fn from(r: RuleName) -> Self {
        match r {
            RuleName::Manual => DeltaRule::Manual,
            RuleName::OptimalThm33 => DeltaRule::OptimalThm33,
            RuleName::OptimalThm34 => DeltaRule::OptimalThm34,
            RuleName::OptimalThm35 => DeltaRule::OptimalThm35,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    FixedPoint,
    PolicyIteration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub theta: f64,
    pub vartheta: f64,
    /// Used when `delta_rule = "manual"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub delta_rule: RuleName,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    pub solver: SolverName,
    /// Add the small-jump diffusion correction (fully implicit only).
    #[serde(default)]
    pub corrected: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        let d = SchemeParams::default();
        Self {
            theta: d.theta,
            vartheta: d.vartheta,
            delta: None,
            delta_rule: RuleName::OptimalThm35,
            fixed_point_tol: d.fixed_point_tol,
            fixed_point_max_iter: d.fixed_point_max_iter,
            solver: SolverName::FixedPoint,
            corrected: false,
        }
    }
}

impl SchemeConfig {
    pub fn params(&self) -> SchemeParams {
        SchemeParams {
            theta: self.theta,
            vartheta: self.vartheta,
            delta: self.delta.unwrap_or(1.0),
            delta_rule: self.delta_rule.into(),
            fixed_point_tol: self.fixed_point_tol,
            fixed_point_max_iter: self.fixed_point_max_iter,
            solver: match self.solver {
                SolverName::FixedPoint => ImplicitSolver::FixedPoint,
                SolverName::PolicyIteration => ImplicitSolver::PolicyIteration,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceName {
    FineGrid,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngredientName {
    Truncation,
    Drift,
    Quadrature,
    LocalCorrection,
}

impl From<IngredientName> for Ingredient {
    fn from(i: IngredientName) -> Self {
        match i {
            IngredientName::Truncation => Ingredient::Truncation,
            IngredientName::Drift => Ingredient::Drift,
            IngredientName::Quadrature => Ingredient::Quadrature,
            IngredientName::LocalCorrection => Ingredient::LocalCorrection,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Run a refinement study.
    #[serde(default = "yes")]
    pub refinement: bool,
    pub levels: usize,
    /// Coarsest mesh; defaults to `grid.dx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dx: Option<f64>,
    pub dt_coeff: f64,
    pub dt_power: f64,
    pub delta_coeff: f64,
    pub delta_power: f64,
    pub reference: ReferenceName,
    pub reference_factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_u0_finite: Option<bool>,
    /// Truncation radii for a truncation-distance sweep on the `grid` mesh.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncation_deltas: Vec<f64>,
    /// Ingredients whose consistency order is measured at the problem's `σ`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub consistency: Vec<IngredientName>,
}

fn yes() -> bool {
    true
}

impl Default for StudyConfig {
    fn default() -> Self {
        let c = Coupling::default();
        Self {
            refinement: true,
            levels: 4,
            base_dx: None,
            dt_coeff: c.dt_coeff,
            dt_power: c.dt_power,
            delta_coeff: c.delta_coeff,
            delta_power: c.delta_power,
            reference: ReferenceName::FineGrid,
            reference_factor: 4,
            k_u0_finite: None,
            truncation_deltas: Vec::new(),
            consistency: Vec::new(),
        }
    }
}

impl StudyConfig {
    pub fn coupling(&self) -> Coupling {
        Coupling { dt_coeff: self.dt_coeff, dt_power: self.dt_power, delta_coeff: self.delta_coeff, delta_power: self.delta_power }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Ordered initial pairs for the comparison suite.
    pub pairs: usize,
    /// Random points for the tent partition-of-unity check.
    pub partition_points: usize,
    /// Random stencil assemblies for the `Σκ` check.
    pub stencil_samples: usize,
    /// Sample points for assumption validation.
    pub assumption_samples: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { pairs: 20, partition_points: 100_000, stencil_samples: 200, assumption_samples: 200, seed: DEFAULT_SEED }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write every `slice_stride`-th time level (the last one always).
    pub slice_stride: usize,
    /// Write `checkpoint.csv` with the final slice.
    #[serde(default)]
    pub checkpoint: bool,
    /// Points at which the first-step stencil is dumped.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stencil_points: Vec<Vec<f64>>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), slice_stride: 1, checkpoint: false, stencil_points: Vec::new() }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Range checks that do not need to build anything.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if !CANONICAL_PROBLEMS.contains(&p.name.as_str()) && !UTILITY_PROBLEMS.contains(&p.name.as_str()) {
            return Err(invalid(format!("unknown problem `{}`", p.name)));
        }
        if let Some(s) = p.sigma {
            if !(0.0..2.0).contains(&s) {
                return Err(invalid(format!("sigma = {s} is outside [0, 2)")));
            }
        }
        let g = &self.grid;
        if !(g.dx > 0.0 && g.dx.is_finite()) || !(g.box_radius > g.dx) {
            return Err(invalid("grid needs dx > 0 and box_radius > dx"));
        }
        if g.dt.is_some() && g.steps.is_some() {
            return Err(invalid("give either grid.dt or grid.steps, not both"));
        }
        let s = &self.scheme;
        if !(0.0..=1.0).contains(&s.theta) || !(0.0..=1.0).contains(&s.vartheta) {
            return Err(invalid("theta and vartheta must lie in [0, 1]"));
        }
        if s.delta_rule == RuleName::Manual && s.delta.is_none() {
            return Err(invalid("delta_rule = \"manual\" needs scheme.delta"));
        }
        if !(s.fixed_point_tol > 0.0) || s.fixed_point_max_iter == 0 {
            return Err(invalid("fixed_point_tol and fixed_point_max_iter must be positive"));
        }
        if let Some(st) = &self.study {
            if st.levels < 3 {
                return Err(invalid("study.levels must be at least 3"));
            }
            if st.reference == ReferenceName::FineGrid && (st.reference_factor < 4 || !st.reference_factor.is_power_of_two()) {
                return Err(invalid("study.reference_factor must be a power of two >= 4"));
            }
            if st.reference == ReferenceName::Exact && p.manufactured.is_none() {
                return Err(invalid("study.reference = \"exact\" needs problem.manufactured"));
            }
            if !(st.dt_coeff > 0.0 && st.delta_coeff > 0.0 && st.dt_power > 0.0 && st.delta_power > 0.0) {
                return Err(invalid("coupling coefficients and powers must be positive"));
            }
        }
        if self.output.slice_stride == 0 {
            return Err(invalid("output.slice_stride must be positive"));
        }
        Ok(())
    }

    pub fn overrides(&self) -> ProblemOverrides {
        let p = &self.problem;
        ProblemOverrides {
            sigma: p.sigma,
            density_constant: p.density_constant,
            tempering_rate: p.tempering_rate,
            drift: p.drift,
            horizon: p.horizon,
            lipschitz_bound: p.lipschitz_bound,
        }
    }

    /// The configured problem, before any manufactured source.
    pub fn base_problem(&self) -> Result<ControlProblem, CliError> {
        let p = &self.problem;
        let horizon = p.horizon.unwrap_or(1.0);
        let built = match p.name.as_str() {
            "pure_decay" => {
                ControlProblem::new("pure_decay", 1, LevyMeasure::zero(1)?, horizon)?.with_discount(Arc::new(|_, _, _, _| 1.0)).with_initial(Arc::new(|_| 1.0))
            }
            "stationary" => {
                ControlProblem::new("stationary", 1, LevyMeasure::zero(1)?, horizon)?.with_initial(Arc::new(|x: &[f64]| (1.0 - x[0].abs()).max(0.0)))
            }
            name => canonical_problem(name, &self.overrides())?,
        };
        Ok(built)
    }

    /// The configured problem with the manufactured source applied.
    pub fn problem(&self) -> Result<ControlProblem, CliError> {
        let base = self.base_problem()?;
        match self.problem.manufactured {
            Some(t) => Ok(nlisaacs_core::analysis::manufactured_source(&base, t.target())?),
            None => Ok(base),
        }
    }

    pub fn grid(&self, problem: &ControlProblem) -> Result<Grid, CliError> {
        let g = &self.grid;
        let grid = match g.steps {
            Some(steps) => Grid::with_steps(problem.space_dim(), g.dx, problem.horizon(), steps, g.box_radius, g.extension.into())?,
            None => Grid::new(problem.space_dim(), g.dx, problem.horizon(), g.dt.unwrap_or(g.dx), g.box_radius, g.extension.into())?,
        };
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[problem]
name = "fractional_linear"
sigma = 1.5
horizon = 0.5

[grid]
dx = 0.125
dt = 0.0625
box_radius = 3.0
extension = "initial_profile"

[scheme]
theta = 1.0
vartheta = 1.0
delta_rule = "manual"
delta = 0.125
fixed_point_tol = 1e-11
fixed_point_max_iter = 500
solver = "policy_iteration"

[study]
levels = 3
dt_coeff = 0.5
dt_power = 1.0
delta_coeff = 1.0
delta_power = 0.5
reference = "fine_grid"
reference_factor = 4
truncation_deltas = [0.5, 0.25, 0.125]
consistency = ["drift", "local_correction"]

[output]
dir = "results"
slice_stride = 2
stencil_points = [[0.0], [0.5]]
"#;

    #[test]
    fn round_trip_is_stable() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let echoed = cfg.to_toml();
        let again = RunConfig::parse(&echoed).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(echoed, again.to_toml());
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::parse("[problem]\nname = \"linear_advection\"\n").unwrap();
        assert_eq!(cfg.grid, GridConfig::default());
        assert_eq!(cfg.scheme.params(), SchemeParams::default());
        assert!(cfg.study.is_none());
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            "[problem]\nname = \"nope\"\n",
            "[problem]\nname = \"fractional_linear\"\nsigma = 2.0\n",
            "[problem]\nname = \"fractional_linear\"\nunknown = 1\n",
            "[problem]\nname = \"fractional_linear\"\n[scheme]\ntheta = 1.0\nvartheta = 1.0\ndelta_rule = \"manual\"\nfixed_point_tol = 1e-10\nfixed_point_max_iter = 10\nsolver = \"fixed_point\"\n",
            "[problem]\nname = \"fractional_linear\"\n[study]\nlevels = 2\ndt_coeff = 1.0\ndt_power = 1.0\ndelta_coeff = 1.0\ndelta_power = 1.0\nreference = \"fine_grid\"\nreference_factor = 4\n",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn builds_everything() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let p = cfg.problem().unwrap();
        let g = cfg.grid(&p).unwrap();
        assert_eq!(g.steps(), 8);
        assert_eq!(p.measure().sigma(), 1.5);
        let decay = RunConfig::parse("[problem]\nname = \"pure_decay\"\n").unwrap().problem().unwrap();
        assert_eq!(decay.discount(0.0, &[0.3], 0, 0), 1.0);
    }
}
