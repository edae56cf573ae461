//! Run configuration: one TOML document, every section optional, unknown
//! keys rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::MonitorConfig;
use crate::error::{Error, Result};
use crate::forms::{FlowScheme, DEFAULT_U_FLOOR};
use crate::grid::PeriodicGrid;
use crate::reduced::ReducedModel;
use crate::scenarios::ScenarioSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output: PathBuf,
    pub seed: u64,
    pub grid: GridConfig,
    pub flow: FlowConfig,
    pub monitor: MonitorSection,
    pub scenario: ScenarioSpec,
    pub reduced: ReducedConfig,
    pub counterexample: CounterexampleConfig,
    pub soliton: SolitonConfig,
    pub verify: VerifyConfig,
    pub poincare: PoincareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            seed: 42,
            grid: GridConfig::default(),
            flow: FlowConfig::default(),
            monitor: MonitorSection::default(),
            scenario: ScenarioSpec::Omega {},
            reduced: ReducedConfig::default(),
            counterexample: CounterexampleConfig::default(),
            soliton: SolitonConfig::default(),
            verify: VerifyConfig::default(),
            poincare: PoincareConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    /// Defaults to 2π per axis.
    pub lengths: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dims: vec![16; 4], lengths: None }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<PeriodicGrid> {
        let lengths = self.lengths.clone().unwrap_or_else(|| vec![2.0 * PI; self.dims.len()]);
        PeriodicGrid::new(&self.dims, &lengths)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// `FlowScheme` spelling, e.g. "conformal", "power_u:0.25", "matrix_b2".
    pub scheme: String,
    pub t_end: f64,
    pub cfl_safety: f64,
    pub u_floor: f64,
    pub fixed_dt: Option<f64>,
    pub sample_every: f64,
    pub snapshot_every: Option<f64>,
    /// Snapshot to continue from instead of building the scenario.
    pub resume: Option<PathBuf>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            scheme: "conformal".into(),
            t_end: 1.0,
            cfl_safety: 0.25,
            u_floor: DEFAULT_U_FLOOR,
            fixed_dt: None,
            sample_every: 0.1,
            snapshot_every: None,
            resume: None,
        }
    }
}

impl FlowConfig {
    pub fn scheme(&self) -> Result<FlowScheme> {
        self.scheme.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorSection {
    pub a1: f64,
    pub shi_a: f64,
    pub shi_b: f64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        let m = MonitorConfig::default();
        Self { a1: m.a1, shi_a: m.shi_a, shi_b: m.shi_b }
    }
}

impl From<MonitorSection> for MonitorConfig {
    fn from(m: MonitorSection) -> Self {
        MonitorConfig { a1: m.a1, shi_a: m.shi_a, shi_b: m.shi_b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducedConfig {
    pub model: ReducedModel,
    pub dims: Vec<usize>,
    /// Initial field 1 + amplitude·sin x₁; for the (a, b) system, random
    /// band-limited a, b with max gradient `amplitude`.
    pub amplitude: f64,
    pub band: usize,
    pub t_end: f64,
    pub sample_every: f64,
    pub cfl_safety: f64,
    pub u_floor: f64,
}

impl Default for ReducedConfig {
    fn default() -> Self {
        Self {
            model: ReducedModel::FastDiffusion,
            dims: vec![128, 128],
            amplitude: 0.5,
            band: 2,
            t_end: 2.0,
            sample_every: 0.1,
            cfl_safety: 0.25,
            u_floor: DEFAULT_U_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    /// Omitted: A₀ = 2Ae.
    pub a0: Option<f64>,
    pub n1d: usize,
    pub dims: Vec<usize>,
    pub t_end: f64,
    pub sample_every: f64,
    pub oracle_terms: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { a0: None, n1d: 512, dims: vec![64, 8, 8, 8], t_end: 1.0, sample_every: 0.05, oracle_terms: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolitonConfig {
    pub n: usize,
    pub v: [f64; 2],
    /// Forcing from a* = 2 + amplitude·cos x cos y; zero forcing otherwise.
    pub manufactured: bool,
    pub amplitude: f64,
    /// Constant initial iterate.
    pub initial: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tau: f64,
    pub explicit: bool,
}

impl Default for SolitonConfig {
    fn default() -> Self {
        Self {
            n: 128,
            v: [1.0, 0.5],
            manufactured: true,
            amplitude: 0.5,
            initial: 2.0,
            tol: 1e-10,
            max_iter: 1000,
            tau: 1.0,
            explicit: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Algebra,
    Calculus,
    Identities,
    Reductions,
    Inequalities,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub suite: Suite,
    pub resolution: usize,
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suite: Suite::Algebra, resolution: 16, samples: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoincareConfig {
    pub probes: usize,
    pub eps: f64,
    pub band: usize,
}

impl Default for PoincareConfig {
    fn default() -> Self {
        Self { probes: 50, eps: 0.05, band: 3 }
    }
}

/// Sets `a.b.c = value` in a TOML table; the value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let f = &self.flow;
        self.flow.scheme()?;
        if !(f.t_end >= 0.0 && f.t_end.is_finite()) {
            return bad(format!("flow.t_end = {} must be finite and nonnegative", f.t_end));
        }
        if !(f.cfl_safety > 0.0 && f.cfl_safety <= 1.0) {
            return bad(format!("flow.cfl_safety = {} outside (0, 1]", f.cfl_safety));
        }
        if !(f.u_floor >= 0.0) {
            return bad("flow.u_floor must be nonnegative".into());
        }
        if !(f.sample_every > 0.0) {
            return bad("flow.sample_every must be positive".into());
        }
        if f.snapshot_every.is_some_and(|s| !(s > 0.0)) || f.fixed_dt.is_some_and(|s| !(s > 0.0)) {
            return bad("flow.snapshot_every and flow.fixed_dt must be positive".into());
        }
        if self.grid.dims.len() != 4 {
            return bad(format!("grid.dims must have 4 entries, got {}", self.grid.dims.len()));
        }
        self.grid.build().map_err(|e| Error::Config(e.to_string()))?;
        let r = &self.reduced;
        if !matches!(r.dims.len(), 1 | 2) {
            return bad("reduced.dims must have 1 or 2 entries".into());
        }
        if r.model == ReducedModel::AbSystem && r.dims.len() != 2 {
            return bad("the (a, b) system needs a 2D grid".into());
        }
        if !(r.t_end >= 0.0 && r.sample_every > 0.0 && r.cfl_safety > 0.0 && r.cfl_safety <= 1.0) {
            return bad("reduced.t_end, sample_every or cfl_safety out of range".into());
        }
        let c = &self.counterexample;
        if c.dims.len() != 4 || c.n1d < 512 {
            return bad("counterexample needs 4 dims and n1d >= 512".into());
        }
        let s = &self.soliton;
        if !(s.tol > 0.0 && s.tau > 0.0 && s.initial > 0.0) {
            return bad("soliton.tol, tau and initial must be positive".into());
        }
        if self.verify.resolution < 8 {
            return bad("verify.resolution must be at least 8".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.flow.scheme().unwrap(), FlowScheme::conformal());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1", &[]).is_err());
        assert!(RunConfig::from_toml_str("[flow]\nt_ned = 1.0", &[]).is_err());
        assert!(RunConfig::from_toml_str("[scenario]\nkind = \"omega\"\neps = 0.1", &[]).is_err());
    }

    #[test]
    fn overrides() {
        let text = "[flow]\nscheme = \"linear\"\nt_end = 2.0\n[scenario]\nkind = \"random_near_omega\"\neps = 0.05";
        let c = RunConfig::from_toml_str(
            text,
            &["flow.t_end=5".into(), "flow.scheme=matrix_b2".into(), "scenario.seed=7".into(), "grid.dims=[8,8,8,8]".into()],
        )
        .unwrap();
        assert_eq!(c.flow.t_end, 5.0);
        assert_eq!(c.flow.scheme().unwrap(), FlowScheme::MatrixB2);
        assert_eq!(c.scenario, ScenarioSpec::RandomNearOmega { eps: 0.05, band: 4, seed: Some(7) });
        assert_eq!(c.grid.dims, vec![8; 4]);
        assert!(RunConfig::from_toml_str("", &["flow".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["flow.cfl_safety=2".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["flow.scheme=nope".into()]).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 43;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
