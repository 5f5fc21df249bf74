//! `key = value` configuration with dotted sections.
//!
//! Lines are `section.key = value`; a `[section]` header prefixes the keys
//! that follow it. Blank lines and lines starting with `#` are ignored.
//! Flags are merged in afterwards as more `key = value` pairs and win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Every key the front end understands.
pub const KNOWN_KEYS: &[&str] = &[
    "example",
    "example.half_width",
    "example.dim",
    "potential.family",
    "potential.lambda",
    "potential.delta",
    "potential.table",
    "grid.x_min",
    "grid.x_max",
    "grid.n",
    "flow.t_max",
    "flow.dt",
    "flow.samples",
    "report.fit_lo",
    "report.fit_hi",
    "mc.n_particles",
    "mc.dt",
    "mc.horizon",
    "mc.resample",
    "mc.bridge_correction",
    "mc.record_every",
    "mc.threads",
    "mc.fit_lo",
    "mc.fit_hi",
    "initial.family",
    "initial.lo",
    "initial.hi",
    "initial.mean",
    "initial.sd",
    "initial.path",
    "cdfi.lambda0_lower",
    "cdfi.form",
    "output",
    "seed",
];

/// Raw keys and values, in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Syntax { line: i + 1, message: format!("expected key = value, got `{line}`") });
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::Syntax { line: i + 1, message: "empty key".into() });
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Syntax { line: i + 1, message: format!("duplicate key {key}") });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialBlock {
    pub family: Option<String>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowBlock {
    pub t_max: f64,
    pub dt: Option<f64>,
    pub samples: usize,
    pub fit_window: (Option<f64>, Option<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McBlock {
    pub n_particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub resample: bool,
    pub bridge_correction: bool,
    pub record_every: usize,
    pub threads: Option<usize>,
    pub fit_window: (Option<f64>, Option<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialBlock {
    pub family: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfiBlock {
    pub lambda0_lower: Option<f64>,
    pub form: String,
}

/// Typed configuration, before semantic validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub example: Option<String>,
    pub half_width: f64,
    pub dim: usize,
    pub potential: PotentialBlock,
    pub grid: GridBlock,
    pub flow: FlowBlock,
    pub mc: McBlock,
    pub initial: InitialBlock,
    pub cdfi: CdfiBlock,
    pub output: PathBuf,
    pub seed: u64,
}

struct Reader<'a> {
    map: &'a ConfigMap,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn parsed<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let raw = self.map.get(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.problems.push(format!("{key} must be {what}, got `{raw}`"));
                None
            }
        }
    }

    fn real(&mut self, key: &str) -> Option<f64> {
        self.parsed(key, "a number")
    }

    fn count(&mut self, key: &str) -> Option<usize> {
        self.parsed(key, "a non-negative integer")
    }

    fn flag(&mut self, key: &str) -> Option<bool> {
        self.parsed(key, "true or false")
    }

    fn text(&self, key: &str) -> Option<String> {
        self.map.get(key).map(str::to_string)
    }
}

impl RunConfig {
    /// Types every known key; unknown keys and unparsable values are
    /// reported together.
    pub fn from_map(map: &ConfigMap) -> Result<Self, CliError> {
        let mut r = Reader { map, problems: Vec::new() };
        for k in map.keys() {
            if !KNOWN_KEYS.contains(&k) {
                r.problems.push(format!("{k} is not a known key"));
            }
        }
        let cfg = RunConfig {
            example: r.text("example"),
            half_width: r.real("example.half_width").unwrap_or(1.0),
            dim: r.count("example.dim").unwrap_or(1),
            potential: PotentialBlock {
                family: r.text("potential.family"),
                lambda: r.real("potential.lambda"),
                delta: r.real("potential.delta"),
                table: r.text("potential.table").map(PathBuf::from),
            },
            grid: GridBlock {
                x_min: r.real("grid.x_min"),
                x_max: r.real("grid.x_max"),
                n: r.count("grid.n").unwrap_or(1999),
            },
            flow: FlowBlock {
                t_max: r.real("flow.t_max").unwrap_or(2.0),
                dt: r.real("flow.dt"),
                samples: r.count("flow.samples").unwrap_or(200),
                fit_window: (r.real("report.fit_lo"), r.real("report.fit_hi")),
            },
            mc: McBlock {
                n_particles: r.count("mc.n_particles").unwrap_or(10_000),
                dt: r.real("mc.dt").unwrap_or(1e-3),
                horizon: r.real("mc.horizon").unwrap_or(1.0),
                resample: r.flag("mc.resample").unwrap_or(false),
                bridge_correction: r.flag("mc.bridge_correction").unwrap_or(true),
                record_every: r.count("mc.record_every").unwrap_or(1),
                threads: r.count("mc.threads"),
                fit_window: (r.real("mc.fit_lo"), r.real("mc.fit_hi")),
            },
            initial: InitialBlock {
                family: r.text("initial.family").unwrap_or_else(|| "uniform".into()),
                lo: r.real("initial.lo"),
                hi: r.real("initial.hi"),
                mean: r.real("initial.mean"),
                sd: r.real("initial.sd"),
                path: r.text("initial.path").map(PathBuf::from),
            },
            cdfi: CdfiBlock {
                lambda0_lower: r.real("cdfi.lambda0_lower"),
                form: r.text("cdfi.form").unwrap_or_else(|| "refined".into()),
            },
            output: r.text("output").map_or_else(|| PathBuf::from("."), PathBuf::from),
            seed: r.parsed("seed", "a non-negative integer").unwrap_or(0),
        };
        if r.problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Validation(r.problems.join("; ")))
        }
    }

    /// Potential family after applying the example defaults.
    pub fn family(&self) -> Option<&str> {
        match (self.potential.family.as_deref(), self.example.as_deref()) {
            (Some(f), _) => Some(f),
            (None, Some("brownian")) => Some("zero"),
            (None, Some("ou")) => Some("quadratic"),
            _ => None,
        }
    }
}

const FAMILIES: &[&str] = &["zero", "quadratic", "shifted-power", "tabulated"];
const INITIAL: &[&str] = &["uniform", "gaussian-truncated", "qsd", "csv"];

/// Semantic checks; an empty list means the configuration is usable.
pub fn validate(cfg: &RunConfig) -> Vec<String> {
    let mut d = Vec::new();
    match cfg.example.as_deref() {
        None | Some("brownian") | Some("ou") => {}
        Some(e) => d.push(format!("example must be brownian or ou, got `{e}`")),
    }
    if !(cfg.half_width > 0.0 && cfg.half_width.is_finite()) {
        d.push("example.half_width must be > 0".into());
    }
    if cfg.dim == 0 {
        d.push("example.dim must be ≥ 1".into());
    }
    match (cfg.example.as_deref(), cfg.potential.family.as_deref()) {
        (Some("brownian"), Some(f)) if f != "zero" => {
            d.push(format!("potential.family = {f} contradicts example = brownian"))
        }
        (Some("ou"), Some(f)) if f != "quadratic" => d.push(format!("potential.family = {f} contradicts example = ou")),
        _ => {}
    }
    match cfg.family() {
        None => d.push("potential.family is required when no example is given".into()),
        Some(f) if !FAMILIES.contains(&f) => d.push(format!("potential.family must be one of {FAMILIES:?}, got `{f}`")),
        Some("quadratic") => {
            if let Some(l) = cfg.potential.lambda {
                if !(l > 0.0 && l.is_finite()) {
                    d.push("potential.lambda must be > 0".into());
                }
            }
        }
        Some("shifted-power") => match cfg.potential.delta {
            None => d.push("potential.delta is required for shifted-power".into()),
            Some(delta) if !(delta > 2.0 && delta.is_finite()) => d.push(format!(
                "potential.delta must be > 2 for shifted-power (V = (x+1)^δ needs δ > 2), got {delta}"
            )),
            _ => {}
        },
        Some("tabulated") => match &cfg.potential.table {
            None => d.push("potential.table is required for tabulated".into()),
            Some(p) if !p.is_file() => d.push(format!("potential.table: {} does not exist", p.display())),
            _ => {}
        },
        Some(_) => {}
    }
    if cfg.family() == Some("zero") && cfg.example.is_none() && (cfg.grid.x_min.is_none() || cfg.grid.x_max.is_none())
    {
        d.push("grid.x_min and grid.x_max are required for the zero potential".into());
    }
    if cfg.grid.n < 3 {
        d.push("grid.n must be ≥ 3".into());
    }
    if let (Some(a), Some(b)) = (cfg.grid.x_min, cfg.grid.x_max) {
        if !(a < b) {
            d.push(format!("grid.x_min must be < grid.x_max, got {a} and {b}"));
        }
    }
    if matches!(cfg.family(), Some("quadratic") | Some("shifted-power")) && cfg.grid.x_min.is_some_and(|a| a < 0.0) {
        d.push("grid.x_min must be ≥ 0: the process is absorbed at 0".into());
    }
    if !(cfg.flow.t_max > 0.0 && cfg.flow.t_max.is_finite()) {
        d.push("flow.t_max must be > 0".into());
    }
    if cfg.flow.dt.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
        d.push("flow.dt must be > 0".into());
    }
    if cfg.flow.samples < 5 {
        d.push("flow.samples must be ≥ 5".into());
    }
    if let (Some(a), Some(b)) = cfg.flow.fit_window {
        if !(a < b) {
            d.push("report.fit_lo must be < report.fit_hi".into());
        }
    }
    if cfg.mc.n_particles < qsd_core::montecarlo::MIN_PARTICLES {
        d.push(format!("mc.n_particles must be ≥ {}", qsd_core::montecarlo::MIN_PARTICLES));
    }
    if !(cfg.mc.dt > 0.0 && cfg.mc.dt.is_finite()) {
        d.push("mc.dt must be > 0".into());
    }
    if !(cfg.mc.horizon > 0.0 && cfg.mc.horizon.is_finite()) {
        d.push("mc.horizon must be > 0".into());
    }
    if cfg.mc.record_every == 0 {
        d.push("mc.record_every must be ≥ 1".into());
    }
    if cfg.mc.threads == Some(0) {
        d.push("mc.threads must be ≥ 1".into());
    }
    if !INITIAL.contains(&cfg.initial.family.as_str()) {
        d.push(format!("initial.family must be one of {INITIAL:?}, got `{}`", cfg.initial.family));
    }
    if let (Some(a), Some(b)) = (cfg.initial.lo, cfg.initial.hi) {
        if !(a < b) {
            d.push("initial.lo must be < initial.hi".into());
        }
    }
    if cfg.initial.sd.is_some_and(|s| !(s > 0.0)) {
        d.push("initial.sd must be > 0".into());
    }
    if cfg.initial.family == "csv" {
        match &cfg.initial.path {
            None => d.push("initial.path is required for initial.family = csv".into()),
            Some(p) if !p.is_file() => d.push(format!("initial.path: {} does not exist", p.display())),
            _ => {}
        }
    }
    if cfg.cdfi.lambda0_lower.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
        d.push("cdfi.lambda0_lower must be > 0".into());
    }
    if !matches!(cfg.cdfi.form.as_str(), "basic" | "refined") {
        d.push(format!("cdfi.form must be basic or refined, got `{}`", cfg.cdfi.form));
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::from_map(&ConfigMap::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn sections_comments_and_duplicates() {
        let m = ConfigMap::parse("# lab\nseed = 4\n[grid]\nn = 11\n x_min=0 \n\n[mc]\nresample = true\n").unwrap();
        assert_eq!(m.get("grid.n"), Some("11"));
        assert_eq!(m.get("grid.x_min"), Some("0"));
        assert_eq!(m.get("mc.resample"), Some("true"));
        assert_eq!(m.get("seed"), Some("4"));
        assert!(matches!(ConfigMap::parse("a = 1\na = 2"), Err(CliError::Syntax { line: 2, .. })));
        assert!(ConfigMap::parse("no equals sign").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_key() {
        let err = RunConfig::from_map(&ConfigMap::parse("grid.m = 3\ngrid.n = many").unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.m") && msg.contains("grid.n"), "{msg}");
    }

    #[test]
    fn grid_size_diagnostic() {
        let d = validate(&cfg("example = brownian\ngrid.n = 2"));
        assert_eq!(d, vec!["grid.n must be ≥ 3".to_string()]);
    }

    #[test]
    fn delta_diagnostic() {
        let d = validate(&cfg("potential.family = shifted-power\npotential.delta = 2"));
        assert_eq!(d.len(), 1);
        assert!(d[0].starts_with("potential.delta") && d[0].contains("> 2"), "{d:?}");
    }

    #[test]
    fn valid_ou_config() {
        let c = cfg("example = ou\npotential.lambda = 1\n[grid]\nx_min = 0\nx_max = 8\nn = 999");
        assert!(validate(&c).is_empty());
        assert_eq!(c.family(), Some("quadratic"));
    }

    #[test]
    fn contradictions_and_missing_files() {
        assert!(!validate(&cfg("example = ou\npotential.family = zero")).is_empty());
        let d = validate(&cfg("example = brownian\ninitial.family = csv\ninitial.path = /nonexistent.csv"));
        assert!(d[0].starts_with("initial.path"));
        assert!(!validate(&cfg("potential.family = zero")).is_empty());
    }
}
