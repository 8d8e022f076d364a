//! Experiment configuration: TOML (or JSON) with a schema version.

use std::path::Path;

use lgflow::bundled;
use lgflow::grid::{GridSpec, ScalarField};
use lgflow::lagrangian::LagrangianSpec;
use lgflow::solver::{InnerMethod, Problem, SolveConfig};
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub lagrangian: LagrangianConfig,
    #[serde(default, deserialize_with = "solve_section")]
    pub solve: SolveConfig,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Indicator of [a, b] on the unit interval, zero data.
    #[serde(rename = "plateau_1d")]
    Plateau1d,
    /// Annulus 0.5 ≤ |x| ≤ 1 with the explicit radial solution as data.
    RadialAnnulus,
    #[serde(rename = "bump_2d")]
    Bump2d,
    #[serde(rename = "disk_2d")]
    Disk2d,
    /// Seeded random profile with constant data.
    #[serde(rename = "random_1d")]
    Random1d,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Cells per axis.
    pub n: usize,
    pub horizon: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_a() -> f64 {
    0.3
}
fn default_b() -> f64 {
    0.7
}
fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq, Default)]
#[serde(rename_all = "snake_case")]
pub enum LagrangianKindConfig {
    #[default]
    Tv,
    Area,
    AnisotropicTv,
    WeightedTv,
}

#[derive(Clone, Debug, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LagrangianConfig {
    #[serde(default)]
    pub kind: LagrangianKindConfig,
    /// Per-axis weights for anisotropic_tv.
    #[serde(default)]
    pub weights: Vec<f64>,
    /// weighted_tv: w(x) = 1 + weight_slope·x_1.
    #[serde(default)]
    pub weight_slope: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    /// Random test functions on top of the canonical set.
    pub battery: usize,
    pub seed: u64,
    /// Overrides the method default (1e-3 primal-dual, 1e-6 Newton).
    pub tol_cert: Option<f64>,
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection { battery: 16, seed: 0, tol_cert: None }
    }
}

/// The `[solve]` table as written; unset fields come from the preset of
/// the chosen method.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveSection {
    tau: Option<f64>,
    mu: Option<f64>,
    method: Option<InnerMethod>,
    max_iters: Option<usize>,
    tol_rel: Option<f64>,
    tol_abs: Option<f64>,
    theta_pd: Option<f64>,
    sigma: Option<f64>,
    tau_pd: Option<f64>,
    accelerate: Option<bool>,
    adaptive: Option<bool>,
    check_every: Option<usize>,
}

fn solve_section<'de, D: Deserializer<'de>>(d: D) -> Result<SolveConfig, D::Error> {
    let s = SolveSection::deserialize(d)?;
    let def = SolveConfig::default();
    let (tau, mu) = (s.tau.unwrap_or(def.tau), s.mu.unwrap_or(def.mu));
    let base = match s.method.unwrap_or(def.method) {
        InnerMethod::Newton => SolveConfig::newton(tau, mu),
        InnerMethod::PrimalDual => SolveConfig { tau, mu, ..def },
    };
    Ok(SolveConfig {
        max_iters: s.max_iters.unwrap_or(base.max_iters),
        tol_rel: s.tol_rel.unwrap_or(base.tol_rel),
        tol_abs: s.tol_abs.unwrap_or(base.tol_abs),
        theta_pd: s.theta_pd.unwrap_or(base.theta_pd),
        sigma: s.sigma.or(base.sigma),
        tau_pd: s.tau_pd.or(base.tau_pd),
        accelerate: s.accelerate.unwrap_or(base.accelerate),
        adaptive: s.adaptive.unwrap_or(base.adaptive),
        check_every: s.check_every.unwrap_or(base.check_every),
        ..base
    })
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Also write the final frame as CSV.
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "lgflow-out".into(), csv: true }
    }
}

impl Config {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Config, CliError> {
        let name = path.display();
        let cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| CliError::Input(format!("{name}: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Input(format!("{name}: {e}")))?
        };
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "{name}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.problem_spec()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Config, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Input(format!("{}: not UTF-8: {e}", path.display())))?;
        Ok((Config::parse(text, path)?, bytes))
    }

    fn grid(&self) -> Result<GridSpec, CliError> {
        let p = &self.problem;
        let g = match p.kind {
            ProblemKind::Plateau1d | ProblemKind::Random1d => GridSpec::new_1d(p.n, 1.0 / p.n as f64, 0.0),
            ProblemKind::RadialAnnulus => bundled::annulus_grid(p.n, 0.5, 1.0),
            ProblemKind::Bump2d | ProblemKind::Disk2d => GridSpec::unit(2, p.n),
        };
        g.map_err(|e| CliError::Input(format!("problem: {e}")))
    }

    pub fn problem_spec(&self) -> Result<LagrangianSpec, CliError> {
        let l = &self.lagrangian;
        let bad = |e: lgflow::Error| CliError::Input(format!("lagrangian: {e}"));
        match l.kind {
            LagrangianKindConfig::Tv => Ok(LagrangianSpec::total_variation()),
            LagrangianKindConfig::Area => Ok(LagrangianSpec::area()),
            LagrangianKindConfig::AnisotropicTv => LagrangianSpec::anisotropic_tv(l.weights.clone()).map_err(bad),
            LagrangianKindConfig::WeightedTv => {
                let g = self.grid()?;
                let s = l.weight_slope;
                LagrangianSpec::weighted_tv(ScalarField::from_fn(&g, |x| 1.0 + s * x[0])).map_err(bad)
            }
        }
    }

    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let p = &self.problem;
        let spec = self.problem_spec()?;
        let bad = |e: lgflow::Error| CliError::Input(format!("problem: {e}"));
        let base = match p.kind {
            ProblemKind::Plateau1d => bundled::plateau_1d(p.n, p.a, p.b, p.horizon),
            ProblemKind::RadialAnnulus => bundled::radial_annulus(p.n, p.horizon),
            ProblemKind::Bump2d => bundled::bump_2d(p.n, p.horizon, spec.clone()),
            ProblemKind::Disk2d => bundled::disk_2d(p.n, p.horizon, spec.clone()),
            ProblemKind::Random1d => bundled::random_problem_1d(p.n, p.horizon, p.seed, p.amplitude),
        }
        .map_err(bad)?;
        Problem::new(base.grid, base.horizon, base.g, base.u0, spec).map_err(bad)
    }
}
