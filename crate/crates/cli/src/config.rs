//! Experiment configuration (TOML).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use lowmach_core::compressible::SolverConfig;
use lowmach_core::diagnostics::{DEFAULT_BETA, DEFAULT_ORDER};
use lowmach_core::incompressible::NsScheme;
use lowmach_core::init::InitSpec;
use lowmach_core::linearized::CoefficientFamily;
use lowmach_core::model::{equilibrium_radiation, Eos, IdealGas, Model, PhysParams};
use lowmach_core::spectral::{SnapshotFormat, SpectralGrid};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub eos: EosConfig,
    pub init: InitSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub linearized: LinearizedConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub extent: f64,
    pub dealias: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dim: 2,
            n: 64,
            extent: 2.0 * PI,
            dealias: true,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<SpectralGrid, CliError> {
        SpectralGrid::new(self.dim, self.n, self.extent, self.dealias).map_err(|e| CliError::Config(format!("grid: {e}")))
    }
}

/// Physical parameters; `n_bar` defaults to the compatible equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub mu: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub nu: f64,
    pub sigma_a: f64,
    pub sigma_tilde: f64,
    pub delta: f64,
    pub rho_bar: f64,
    pub theta_bar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bar: Option<f64>,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = PhysParams::default();
        ParamsConfig {
            mu: p.mu,
            lambda: p.lambda,
            kappa: p.kappa,
            nu: p.nu,
            sigma_a: p.sigma_a,
            sigma_tilde: p.sigma_tilde,
            delta: p.delta,
            rho_bar: p.rho_bar,
            theta_bar: p.theta_bar,
            n_bar: None,
        }
    }
}

impl ParamsConfig {
    pub fn build(&self) -> Result<PhysParams, CliError> {
        let cfg = |e: lowmach_core::Error| CliError::Config(format!("params: {e}"));
        let n_bar = match self.n_bar {
            Some(n) => n,
            None => equilibrium_radiation(self.theta_bar, self.sigma_a, self.sigma_tilde).map_err(cfg)?,
        };
        let p = PhysParams {
            mu: self.mu,
            lambda: self.lambda,
            kappa: self.kappa,
            nu: self.nu,
            sigma_a: self.sigma_a,
            sigma_tilde: self.sigma_tilde,
            delta: self.delta,
            rho_bar: self.rho_bar,
            theta_bar: self.theta_bar,
            n_bar,
        };
        p.validate().map_err(cfg)?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EosConfig {
    /// `P = Rρθ`, `e = c_v θ`.
    Ideal {
        #[serde(default = "one")]
        r_gas: f64,
        #[serde(default = "one")]
        c_v: f64,
    },
    /// `P = Rρθ`, `e = c_v θ + 1/ρ`; violates the thermodynamic relation and
    /// exists to exercise the consistency check.
    Inconsistent {
        #[serde(default = "one")]
        r_gas: f64,
        #[serde(default = "one")]
        c_v: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for EosConfig {
    fn default() -> Self {
        EosConfig::Ideal { r_gas: 1.0, c_v: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InconsistentGas {
    pub r_gas: f64,
    pub c_v: f64,
}

impl Eos for InconsistentGas {
    fn name(&self) -> &str {
        "inconsistent"
    }
    fn pressure(&self, rho: f64, theta: f64) -> f64 {
        self.r_gas * rho * theta
    }
    fn energy(&self, rho: f64, theta: f64) -> f64 {
        self.c_v * theta + 1.0 / rho
    }
}

impl EosConfig {
    pub fn build(&self) -> Result<Arc<dyn Eos>, CliError> {
        let check = |r: f64, c: f64| {
            if r > 0.0 && c > 0.0 && r.is_finite() && c.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("eos: r_gas and c_v must be positive (got {r}, {c})")))
            }
        };
        Ok(match *self {
            EosConfig::Ideal { r_gas, c_v } => {
                check(r_gas, c_v)?;
                Arc::new(IdealGas { r_gas, c_v })
            }
            EosConfig::Inconsistent { r_gas, c_v } => {
                check(r_gas, c_v)?;
                Arc::new(InconsistentGas { r_gas, c_v })
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Sobolev order `l` of the bundle and energy.
    pub order: u32,
    pub beta: f64,
    pub lemma_probes: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            order: DEFAULT_ORDER,
            beta: DEFAULT_BETA,
            lemma_probes: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceInit {
    /// Leray projection of the generated velocity.
    #[default]
    Init,
    TaylorGreen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Pair `run` with an incompressible reference.
    pub enabled: bool,
    pub scheme: NsScheme,
    /// Initial velocity of the `reference` subcommand.
    pub initial: ReferenceInit,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            enabled: true,
            scheme: NsScheme::CrankNicolson,
            initial: ReferenceInit::Init,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Strictly decreasing, each in `(0, 1]`.
    pub deltas: Vec<f64>,
    /// Shared seed; falls back to `init.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Append the linearized estimate rows to the sweep CSV.
    pub linearized: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            deltas: vec![0.2, 0.1, 0.05, 0.025],
            seed: None,
            linearized: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizedConfig {
    /// Points per axis; the dimension follows `grid.dim`.
    pub n: usize,
    pub deltas: Vec<f64>,
    pub families: Vec<CoefficientFamily>,
    pub dt: f64,
    pub horizon: f64,
    /// Sobolev order `N` of the estimate.
    pub order: u32,
    pub c0: f64,
    pub amplitude: f64,
    pub forcing_amplitude: f64,
    pub seed: u64,
}

impl Default for LinearizedConfig {
    fn default() -> Self {
        LinearizedConfig {
            n: 32,
            deltas: vec![0.2, 0.1, 0.05],
            families: vec![
                CoefficientFamily::Constant { value: 1.0 },
                CoefficientFamily::StandingWave { amplitude: 0.5 },
            ],
            dt: 0.01,
            horizon: 1.0,
            order: lowmach_core::linearized::DEFAULT_ORDER,
            c0: 0.0,
            amplitude: 1.0,
            forcing_amplitude: 1.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random smooth fields for the right-hand-side equivalences.
    pub fields: usize,
    /// Random points for the pointwise identities.
    pub points: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub h5_coefficients: [f64; 3],
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            fields: 20,
            points: 10_000,
            amplitude: 0.05,
            seed: 2024,
            h5_coefficients: lowmach_core::model::H5_COEFFICIENTS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Diagnostic sampling interval; every step when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cadence: Option<f64>,
    pub formats: Vec<OutputFormat>,
    /// Write the final perturbation fields.
    pub snapshots: bool,
    pub snapshot_format: SnapshotFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            cadence: None,
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            snapshots: false,
            snapshot_format: SnapshotFormat::Binary,
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

fn delta_list(name: &str, v: &[f64], strict: bool) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Config(format!("{name}: list is empty")));
    }
    for d in v {
        if !(*d > 0.0 && *d <= 1.0) {
            return Err(CliError::Config(format!("{name}: {d} outside (0, 1]")));
        }
    }
    if strict && v.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config(format!("{name}: values must be strictly decreasing")));
    }
    Ok(())
}

/// Required keys, as `(section, key)`.
const REQUIRED_KEYS: [(&str, &str); 2] = [("init", "budget"), ("solver", "t_end")];

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

impl ExperimentConfig {
    /// Smallest complete configuration: the given budget and horizon,
    /// everything else at its default.
    pub fn with_required(budget: f64, t_end: f64) -> Self {
        ExperimentConfig {
            grid: GridConfig::default(),
            params: ParamsConfig::default(),
            eos: EosConfig::default(),
            init: InitSpec::new(budget, 0),
            solver: SolverConfig::new(t_end),
            diagnostics: DiagnosticsConfig::default(),
            reference: ReferenceConfig::default(),
            sweep: SweepConfig::default(),
            linearized: LinearizedConfig::default(),
            verify: VerifyConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        Self::parse(text, false)
    }

    /// Like [`ExperimentConfig::from_toml_str`], but fills absent required
    /// keys with the values of [`ExperimentConfig::with_required`]`(0.5, 0.5)`
    /// for commands that never read them.
    pub fn from_toml_str_lenient(text: &str) -> Result<Self, CliError> {
        Self::parse(text, true)
    }

    fn parse(text: &str, fill: bool) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        if fill {
            for (section, key) in REQUIRED_KEYS {
                let t = table
                    .entry(section)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                if let toml::Value::Table(t) = t {
                    t.entry(key).or_insert(toml::Value::Float(0.5));
                }
            }
        }
        let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
        let de = toml::Deserializer::parse(&text).map_err(|e| CliError::Config(e.message().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            let key = msg
                .strip_prefix("missing field `")
                .and_then(|r| r.split('`').next())
                .map(|f| if path == "." || path.is_empty() { f.to_string() } else { format!("{path}.{f}") })
                .map(|k| match REQUIRED_KEYS.iter().find(|(s, _)| *s == k) {
                    Some((s, f)) => format!("{s}.{f}"),
                    None => k,
                });
            match key {
                Some(k) => CliError::Config(format!("missing required key `{k}`")),
                None => CliError::Config(format!("at `{path}`: {msg}")),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read_config(path)?, false)
    }

    pub fn load_lenient(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read_config(path)?, true)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid.build()?;
        self.params.build()?;
        self.eos.build()?;
        self.init.validate(&grid).map_err(|e| CliError::Config(format!("init: {e}")))?;
        self.solver.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        if !(0.0..=1.0).contains(&self.diagnostics.beta) {
            return Err(CliError::Config("diagnostics.beta must lie in [0, 1]".into()));
        }
        if let Some(c) = self.output.cadence {
            if !(c > 0.0 && c.is_finite()) {
                return Err(CliError::Config(format!("output.cadence must be positive (got {c})")));
            }
        }
        delta_list("sweep.deltas", &self.sweep.deltas, true)?;
        let lin = &self.linearized;
        delta_list("linearized.deltas", &lin.deltas, false)?;
        if lin.n < 4 {
            return Err(CliError::Config("linearized.n must be at least 4".into()));
        }
        if !(lin.dt > 0.0 && lin.horizon > 0.0) {
            return Err(CliError::Config("linearized.dt and linearized.horizon must be positive".into()));
        }
        if lin.order == 0 || !(lin.c0 >= 0.0) {
            return Err(CliError::Config("linearized.order must be >= 1 and linearized.c0 >= 0".into()));
        }
        for f in &lin.families {
            lowmach_core::linearized::Coefficient::from_family(*f)
                .map_err(|e| CliError::Config(format!("linearized.families: {e}")))?;
        }
        if self.verify.fields == 0 || self.verify.points == 0 {
            return Err(CliError::Config("verify.fields and verify.points must be positive".into()));
        }
        Ok(())
    }

    /// Overrides every seed in the configuration.
    pub fn apply_seed(&mut self, seed: u64) {
        self.init.seed = seed;
        self.sweep.seed = Some(seed);
        self.linearized.seed = seed;
        self.verify.seed = seed;
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut s = self.solver.clone();
        if self.output.cadence.is_some() {
            s.cadence = self.output.cadence;
        }
        s
    }

    pub fn sweep_seed(&self) -> u64 {
        self.sweep.seed.unwrap_or(self.init.seed)
    }

    pub fn model_at(&self, delta: f64) -> Result<Model, CliError> {
        let p = self.params.build()?.with_delta(delta).map_err(|e| CliError::Config(format!("params: {e}")))?;
        Ok(Model::new(p, self.eos.build()?)?)
    }

    pub fn model(&self) -> Result<Model, CliError> {
        self.model_at(self.params.delta)
    }
}

/// Annotated TOML listing every key with its default.
pub fn config_reference() -> String {
    let cfg = ExperimentConfig::with_required(0.5, 0.5);
    let body = toml::to_string_pretty(&cfg).expect("default configuration serializes");
    let mut out = String::new();
    out.push_str("# lowmach experiment configuration, all defaults.\n");
    out.push_str("# Required keys: init.budget, solver.t_end (values below are examples).\n");
    out.push_str("# Optional keys not shown: params.n_bar (defaults to sigma_tilde*theta_bar^4/sigma_a),\n");
    out.push_str("#   solver.dt (defaults to 0.25*dx/max(1, |u0|_inf)), output.cadence (every step),\n");
    out.push_str("#   sweep.seed (defaults to init.seed).\n");
    out.push_str("# eos.kind: ideal | inconsistent; init.mode: local-thm | global-thm;\n");
    out.push_str("# solver.formulation: primitive | perturbation; solver.scheme: euler | ars222;\n");
    out.push_str("# reference.scheme: crank-nicolson | backward-euler; reference.initial: init | taylor-green;\n");
    out.push_str("# linearized.families entries: {kind = \"constant\", value} | {kind = \"standing-wave\", amplitude};\n");
    out.push_str("# output.formats: csv, json; output.snapshot_format: binary | csv.\n\n");
    out.push_str(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[init]\nbudget = 0.5\n[solver]\nt_end = 0.1\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c, ExperimentConfig::with_required(0.5, 0.1));
    }

    #[test]
    fn missing_keys_are_named() {
        let e = ExperimentConfig::from_toml_str("[init]\nbudget = 0.5\n[solver]\n").unwrap_err();
        assert!(e.to_string().contains("solver.t_end"), "{e}");
        let e = ExperimentConfig::from_toml_str("[init]\n[solver]\nt_end = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("init.budget"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_and_invalid_values_are_rejected() {
        let e = ExperimentConfig::from_toml_str(&format!("{MINIMAL}[grid]\nsize = 3\n")).unwrap_err();
        assert!(e.to_string().contains("grid"), "{e}");
        let e = ExperimentConfig::from_toml_str(&format!("{MINIMAL}[sweep]\ndeltas = [0.1, 0.2]\n")).unwrap_err();
        assert!(e.to_string().contains("decreasing"), "{e}");
        let e = ExperimentConfig::from_toml_str(&format!("{MINIMAL}[output]\ncadence = 0.0\n")).unwrap_err();
        assert!(e.to_string().contains("cadence"), "{e}");
        let e = ExperimentConfig::from_toml_str(&format!("{MINIMAL}[params]\nn_bar = 0.3\n")).unwrap_err();
        assert!(e.to_string().contains("params"), "{e}");
    }

    #[test]
    fn reference_output_round_trips() {
        let text = config_reference();
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(c, ExperimentConfig::with_required(0.5, 0.5));
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut c = ExperimentConfig::with_required(0.5, 0.1);
        c.apply_seed(99);
        assert_eq!((c.init.seed, c.sweep_seed(), c.linearized.seed, c.verify.seed), (99, 99, 99, 99));
    }

    #[test]
    fn lenient_parse_fills_only_absent_required_keys() {
        let e = ExperimentConfig::from_toml_str("[grid]\nn = 32\n").unwrap_err();
        assert!(e.to_string().contains("`init.budget`"), "{e}");
        let c = ExperimentConfig::from_toml_str_lenient("[grid]\nn = 32\n[init]\nbudget = 2.0\n").unwrap();
        assert_eq!((c.grid.n, c.init.budget, c.solver.t_end), (32, 2.0, 0.5));
    }
}
