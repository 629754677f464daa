//! Run configuration shared by every command.
//!
//! A configuration is a JSON document; every section and field is optional
//! and falls back to the defaults below. Command-line overrides address
//! fields by dotted path, e.g. `irgnm.stopping.kappa=0.5`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{Decay, RateConfig};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFn};
use crate::irgnm::{IrgnmConfig, SourceCondition, SubproblemSolver};
use crate::iv::OperatorForm;
use crate::kde::KdeConfig;
use crate::penalty::{Penalty, DEFAULT_ENTROPY_FLOOR};
use crate::sim::SimDesign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub design: SimDesign,
    pub grids: GridSizes,
    pub operator: OperatorConfig,
    pub kde: KdeConfig,
    pub penalty: PenaltyConfig,
    pub irgnm: IrgnmConfig,
    pub simulate: SimulateConfig,
    pub montecarlo: MonteCarloConfig,
    pub svd: SvdConfig,
    pub rates: RatesConfig,
    pub outputs: OutputConfig,
}

/// Node counts. `n_y` and `n_z` also size the kernel estimate and take
/// precedence over `kde.n_y` / `kde.n_z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSizes {
    pub n_y: usize,
    pub n_z: usize,
    pub n_u: usize,
}

impl Default for GridSizes {
    fn default() -> Self {
        Self { n_y: 256, n_z: 256, n_u: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub form: OperatorForm,
    /// Weight of the scalar moment condition in the codomain norm.
    pub scalar_weight: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { form: OperatorForm::CdfForm, scalar_weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    Quadratic,
    Entropy,
    QuadraticWithBox,
}

/// `phi0` is `"mean_y"` (the constant `E[Y]` of the density in use),
/// `"constant:<value>"`, or the path of a `x,value` CSV on the `z`-grid.
/// The same function is the initial guess of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub phi0: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub entropy_floor: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::Quadratic,
            phi0: "mean_y".into(),
            lower: None,
            upper: None,
            entropy_floor: DEFAULT_ENTROPY_FLOOR,
        }
    }
}

impl PenaltyConfig {
    /// Initial guess on `z_grid`.
    pub fn initial_guess(&self, z_grid: Grid1D, ey: f64) -> Result<GridFn> {
        let spec = self.phi0.trim();
        if spec == "mean_y" {
            return GridFn::constant(z_grid, ey);
        }
        if let Some(v) = spec.strip_prefix("constant:") {
            let c: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("penalty.phi0: cannot parse constant {v:?}")))?;
            return GridFn::constant(z_grid, c);
        }
        let f = GridFn::load_csv(Path::new(spec))?;
        z_grid.check_same(f.grid())?;
        Ok(f)
    }

    pub fn build(&self, phi0: &GridFn) -> Result<Penalty> {
        match self.kind {
            PenaltyKind::Quadratic => Ok(Penalty::quadratic(phi0.clone())),
            PenaltyKind::Entropy => Penalty::entropy(self.entropy_floor),
            PenaltyKind::QuadraticWithBox => {
                let lower = self.lower.unwrap_or(f64::NEG_INFINITY);
                let upper = self.upper.unwrap_or(f64::INFINITY);
                Penalty::quadratic_with_box(phi0.clone(), lower, upper)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n: 1000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub replications: usize,
    pub n_list: Vec<usize>,
    pub master_seed: u64,
    /// Largest tolerated share of failed replications per sample size.
    pub max_failure_fraction: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { replications: 100, n_list: vec![1000, 10_000], master_seed: 2024, max_failure_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdConfig {
    /// Number of leading singular values in the log-linear fit.
    pub fit_count: usize,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self { fit_count: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub source: SourceCondition,
    pub decay: Decay,
    pub experiment: RateConfig,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            source: SourceCondition::holder(0.5).expect("valid exponent"),
            decay: Decay::Polynomial { a: 2.0 },
            experiment: RateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("out") }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.design.validate().map_err(as_config)?;
        for (name, n) in [("grids.n_y", self.grids.n_y), ("grids.n_z", self.grids.n_z), ("grids.n_u", self.grids.n_u)] {
            if n < 3 {
                return Err(Error::Config(format!("{name} must be at least 3, got {n}")));
            }
        }
        positive("operator.scalar_weight", self.operator.scalar_weight)?;
        self.kde_config().validate()?;
        self.irgnm.validate()?;
        positive("penalty.entropy_floor", self.penalty.entropy_floor)?;
        if self.penalty.kind != PenaltyKind::Quadratic && matches!(self.irgnm.subproblem, SubproblemSolver::Cg { .. }) {
            return Err(Error::Config(
                "non-quadratic penalties need irgnm.subproblem.kind = \"fista\"".into(),
            ));
        }
        if self.penalty.kind == PenaltyKind::QuadraticWithBox {
            let (lo, hi) = (self.penalty.lower.unwrap_or(f64::NEG_INFINITY), self.penalty.upper.unwrap_or(f64::INFINITY));
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::Config(format!("penalty box needs lower < upper, got [{lo}, {hi}]")));
            }
        }
        if self.simulate.n < 2 {
            return Err(Error::Config("simulate.n must be at least 2".into()));
        }
        let mc = &self.montecarlo;
        if mc.replications == 0 {
            return Err(Error::Config("montecarlo.replications must be at least 1".into()));
        }
        if mc.n_list.is_empty() || mc.n_list.iter().any(|&n| n < 2) {
            return Err(Error::Config("montecarlo.n_list needs sample sizes of at least 2".into()));
        }
        if !(0.0..=1.0).contains(&mc.max_failure_fraction) {
            return Err(Error::Config(format!(
                "montecarlo.max_failure_fraction must lie in [0, 1], got {}",
                mc.max_failure_fraction
            )));
        }
        if self.svd.fit_count < 2 {
            return Err(Error::Config("svd.fit_count must be at least 2".into()));
        }
        self.rates.source.validate().map_err(as_config)?;
        match self.rates.decay {
            Decay::Polynomial { a } => positive("rates.decay.a", a)?,
            Decay::Exponential { c } => positive("rates.decay.c", c)?,
        }
        if self.rates.experiment.dimension < 2 {
            return Err(Error::Config("rates.experiment.dimension must be at least 2".into()));
        }
        Ok(())
    }

    /// Kernel settings with the grid sizes taken from `grids`.
    pub fn kde_config(&self) -> KdeConfig {
        KdeConfig { n_y: self.grids.n_y, n_z: self.grids.n_z, ..self.kde }
    }

    pub fn z_grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grids.n_z, 0.0, 1.0)
    }

    /// Parses `text` (or the defaults when `None`), applies `key=value`
    /// overrides in order and validates the result.
    pub fn from_json_with_overrides(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let base: RunConfig = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
            None => RunConfig::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_scalar(raw))?;
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = path.map(std::fs::read_to_string).transpose()?;
        Self::from_json_with_overrides(text.as_deref(), overrides)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// JSON literal if `raw` parses as one, otherwise the string itself.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `root[a][b]...` for the dotted `key`. Intermediate objects must
/// exist; the leaf may be new so that enum variants can gain their fields.
fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("override {key:?}: unknown section {:?}", parts[..=i].join("."))))?;
    }
    unreachable!("split yields at least one part")
}
