//! Scenario configuration: built-in scenarios, the key-value file format, and validation.
//!
//! File format (TOML). Every key is optional; unset keys come from the base scenario.
//!
//! ```toml
//! scenario = "fig1"              # base scenario: fig1 | ho-sanity
//! model = "quartic-number"       # quartic-number | ho
//! omega = 1.0                    # ho frequency
//! hbar = 1.0
//! b = 1.0
//! c = 1.0                        # b * c must equal hbar
//! z0 = [0.3535, 0.0]             # complex label (re, im); or q0/p0
//! zf = [0.3535, 0.0]             # or zf_q/zf_p
//! t_min = 0.05
//! t_max = 3.0
//! steps = 200
//! methods = ["exact", "bare", "uniform"]
//! w = [1.0, 0.0]                 # conjugate endpoint u'' (required for method "conjugate")
//! search_half_width = 2.0        # multistart box around the continued root (bare)
//! search_grid = 12
//! include_all_roots = false
//! out = "fig1.csv"
//! format = "csv"                 # csv | json
//! seed = 0
//! ```

use std::path::Path;

use bargmann::core::{Label, StateParams};
use bargmann::propagators::Method;
use num_complex::Complex64 as C64;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("unknown scenario `{0}` (built-in: fig1, ho-sanity)")]
    UnknownScenario(String),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (csv | json)")),
        }
    }
}

/// How a coherent-state label is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelSpec {
    Z(C64),
    Qp(f64, f64),
}

impl LabelSpec {
    pub fn label(&self, params: &StateParams) -> Label {
        match *self {
            LabelSpec::Z(z) => Label::from_z(z, params),
            LabelSpec::Qp(q, p) => Label::from_qp(q, p, params),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: String,
    pub omega: f64,
    pub hbar: f64,
    pub b: f64,
    pub c: f64,
    pub z0: LabelSpec,
    pub zf: LabelSpec,
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
    pub methods: Vec<Method>,
    pub w: Option<C64>,
    pub search: Option<(f64, usize)>,
    pub include_all_roots: bool,
    pub out: Option<String>,
    pub format: Format,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        let z = C64::new(1.0 / (2.0 * 2f64.sqrt()), 0.0);
        let base = ScenarioConfig {
            name: name.to_string(),
            model: "quartic-number".into(),
            omega: 1.0,
            hbar: 1.0,
            b: 1.0,
            c: 1.0,
            z0: LabelSpec::Z(z),
            zf: LabelSpec::Z(z),
            t_min: 0.05,
            t_max: 3.0,
            steps: 200,
            methods: vec![Method::Exact, Method::Bare, Method::Uniform],
            w: None,
            search: None,
            include_all_roots: false,
            out: None,
            format: Format::Csv,
            seed: 0,
        };
        match name {
            "fig1" => Ok(base),
            "ho-sanity" => Ok(ScenarioConfig {
                model: "ho".into(),
                z0: LabelSpec::Z(C64::new(0.3, 0.2)),
                zf: LabelSpec::Z(C64::new(-0.1, 0.4)),
                t_min: 0.0,
                t_max: 4.0 * std::f64::consts::PI,
                steps: 50,
                methods: vec![Method::Exact, Method::Bare],
                ..base
            }),
            other => Err(ConfigError::UnknownScenario(other.to_string())),
        }
    }

    /// A built-in scenario name, or a config file whose keys override its `scenario` base.
    pub fn load(source_name: &str) -> Result<Self, ConfigError> {
        let path = Path::new(source_name);
        if !path.is_file() {
            return Self::builtin(source_name);
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: source_name.to_string(), source })?;
        let file: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse { path: source_name.to_string(), message: e.to_string() })?;
        let mut cfg = Self::builtin(file.scenario.as_deref().unwrap_or("fig1"))?;
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| source_name.to_string());
        file.apply(&mut cfg)?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<StateParams, ConfigError> {
        StateParams::with_omega(self.hbar, self.b, self.c, self.omega).map_err(|e| invalid("b", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params()?;
        if !(self.t_min.is_finite() && self.t_min >= 0.0) {
            return Err(invalid("t_min", format!("must be finite and >= 0, got {}", self.t_min)));
        }
        if !(self.t_max.is_finite() && self.t_max >= self.t_min) {
            return Err(invalid("t_max", format!("must be finite and >= t_min, got {}", self.t_max)));
        }
        if self.steps < 1 {
            return Err(invalid("steps", "must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        if self.methods.contains(&Method::Conjugate) && self.w.is_none() {
            return Err(invalid("w", "method `conjugate` needs the endpoint w"));
        }
        if let Some((hw, n)) = self.search {
            if !(hw.is_finite() && hw > 0.0) || n < 2 {
                return Err(invalid("search_half_width", "needs a positive half width and search_grid >= 2"));
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.t_min];
        }
        (0..self.steps).map(|k| self.t_min + (self.t_max - self.t_min) * k as f64 / (self.steps - 1) as f64).collect()
    }
}

pub fn parse_methods(list: &[String]) -> Result<Vec<Method>, ConfigError> {
    let mut out: Vec<Method> = Vec::new();
    for s in list {
        let m = s.parse::<Method>().map_err(|e| invalid("methods", e))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    model: Option<String>,
    omega: Option<f64>,
    hbar: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    z0: Option<[f64; 2]>,
    q0: Option<f64>,
    p0: Option<f64>,
    zf: Option<[f64; 2]>,
    zf_q: Option<f64>,
    zf_p: Option<f64>,
    t_min: Option<f64>,
    t_max: Option<f64>,
    steps: Option<usize>,
    methods: Option<Vec<String>>,
    w: Option<[f64; 2]>,
    search_half_width: Option<f64>,
    search_grid: Option<usize>,
    include_all_roots: Option<bool>,
    out: Option<String>,
    format: Option<String>,
    seed: Option<u64>,
}

fn label_from(z: Option<[f64; 2]>, q: Option<f64>, p: Option<f64>, field: &'static str) -> Result<Option<LabelSpec>, ConfigError> {
    match (z, q, p) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(invalid(field, "give either the complex label or q/p, not both")),
        (Some([re, im]), None, None) => Ok(Some(LabelSpec::Z(C64::new(re, im)))),
        (None, None, None) => Ok(None),
        (None, q, p) => Ok(Some(LabelSpec::Qp(q.unwrap_or(0.0), p.unwrap_or(0.0)))),
    }
}

impl FileConfig {
    fn apply(self, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(model, omega, hbar, b, c, t_min, t_max, steps, include_all_roots, seed);
        if let Some(l) = label_from(self.z0, self.q0, self.p0, "z0")? {
            cfg.z0 = l;
        }
        if let Some(l) = label_from(self.zf, self.zf_q, self.zf_p, "zf")? {
            cfg.zf = l;
        }
        if let Some(m) = self.methods {
            cfg.methods = parse_methods(&m)?;
        }
        if let Some([re, im]) = self.w {
            cfg.w = Some(C64::new(re, im));
        }
        match (self.search_half_width, self.search_grid) {
            (None, None) => {}
            (hw, n) => cfg.search = Some((hw.unwrap_or(2.0), n.unwrap_or(12))),
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if let Some(f) = self.format {
            cfg.format = f.parse().map_err(|e: String| invalid("format", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_base() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quick.toml");
        std::fs::write(&path, "scenario = \"ho-sanity\"\nsteps = 3\nq0 = 1.0\nmethods = [\"exact\"]\n").unwrap();
        let cfg = ScenarioConfig::load(path.to_str().unwrap()).unwrap();
        assert_eq!((cfg.model.as_str(), cfg.steps, cfg.methods.clone()), ("ho", 3, vec![Method::Exact]));
        assert_eq!(cfg.z0, LabelSpec::Qp(1.0, 0.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_reported() {
        let err = toml::from_str::<FileConfig>("stepz = 3").unwrap_err().to_string();
        assert!(err.contains("stepz"));
    }

    #[test]
    fn widths_must_match_hbar() {
        let mut cfg = ScenarioConfig::builtin("fig1").unwrap();
        cfg.b = 2.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { field: "b", .. })));
    }

    #[test]
    fn single_step_uses_t_min() {
        let mut cfg = ScenarioConfig::builtin("fig1").unwrap();
        (cfg.steps, cfg.t_min, cfg.t_max) = (1, 0.0, 0.0);
        assert_eq!(cfg.times(), vec![0.0]);
    }
}
