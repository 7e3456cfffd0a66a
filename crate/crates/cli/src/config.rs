//! Flat `key = value` experiment files with dotted section keys and comma lists.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mvlab_core::model_zoo;

use crate::error::{CliError, Result};
use crate::suite;

/// Value shapes a key may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Float,
    PositiveFloat,
    Count,
    FloatList,
    CountList,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(f64),
    Count(usize),
    FloatList(Vec<f64>),
    CountList(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Option<String>,
    pub model_params: BTreeMap<String, f64>,
    pub horizon: Option<f64>,
    pub n_steps: Option<usize>,
    pub particles: Option<usize>,
    pub runs: Option<usize>,
    pub seed: u64,
    pub checks: Vec<String>,
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Per-check parameters keyed `check.name`.
    pub params: BTreeMap<String, Value>,
}

pub const DEFAULT_SEED: u64 = 9;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: None,
            model_params: BTreeMap::new(),
            horizon: None,
            n_steps: None,
            particles: None,
            runs: None,
            seed: DEFAULT_SEED,
            checks: Vec::new(),
            out: PathBuf::from("results"),
            threads: None,
            params: BTreeMap::new(),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config { key: key.to_string(), message: message.into() }
}

fn list_items(raw: &str) -> Vec<&str> {
    let inner = raw.trim();
    let inner = inner.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(inner);
    inner.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_float(key: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| bad(key, format!("expected a number, got '{}'", raw.trim())))?;
    if !v.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(v)
}

fn parse_count(key: &str, raw: &str) -> Result<usize> {
    raw.trim().parse().map_err(|_| bad(key, format!("expected a non-negative integer, got '{}'", raw.trim())))
}

pub fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<Value> {
    Ok(match kind {
        Kind::Float => Value::Float(parse_float(key, raw)?),
        Kind::PositiveFloat => {
            let v = parse_float(key, raw)?;
            if v <= 0.0 {
                return Err(bad(key, "must be positive"));
            }
            Value::Float(v)
        }
        Kind::Count => Value::Count(parse_count(key, raw)?),
        Kind::FloatList => Value::FloatList(list_items(raw).iter().map(|s| parse_float(key, s)).collect::<Result<_>>()?),
        Kind::CountList => Value::CountList(list_items(raw).iter().map(|s| parse_count(key, s)).collect::<Result<_>>()?),
    })
}

fn positive_count(key: &str, raw: &str) -> Result<usize> {
    let n = parse_count(key, raw)?;
    if n == 0 {
        return Err(bad(key, "must be at least 1"));
    }
    Ok(n)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse and validate; nothing is simulated or written here.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", lineno + 1), "expected 'key = value'"))?;
            let key = key.trim();
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(bad(key, "given more than once"));
            }
            cfg.set(key, raw.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "model" => {
                if model_zoo::builtin_parameters(raw).is_none() {
                    return Err(bad(key, format!("unknown model '{raw}'")));
                }
                self.model = Some(raw.to_string());
            }
            "grid.t" => {
                let Value::Float(t) = parse_value(key, Kind::PositiveFloat, raw)? else { unreachable!() };
                self.horizon = Some(t);
            }
            "grid.n_steps" => self.n_steps = Some(positive_count(key, raw)?),
            "ensemble.n" => self.particles = Some(positive_count(key, raw)?),
            "ensemble.runs" => self.runs = Some(positive_count(key, raw)?),
            "seed" => {
                self.seed = raw.parse().map_err(|_| bad(key, format!("expected an unsigned integer, got '{raw}'")))?;
            }
            "checks" => self.checks = list_items(raw).into_iter().map(String::from).collect(),
            "out" => {
                if raw.is_empty() {
                    return Err(bad(key, "must not be empty"));
                }
                self.out = PathBuf::from(raw);
            }
            "threads" => self.threads = Some(positive_count(key, raw)?),
            _ => {
                if let Some(name) = key.strip_prefix("model.") {
                    self.model_params.insert(name.to_string(), parse_float(key, raw)?);
                    return Ok(());
                }
                let (check, name) = key.split_once('.').ok_or_else(|| bad(key, "unknown key"))?;
                let def = suite::find(check).ok_or_else(|| bad(key, "unknown key"))?;
                let kind = def.param_kind(name).ok_or_else(|| bad(key, format!("check '{check}' has no parameter '{name}'")))?;
                self.params.insert(key.to_string(), parse_value(key, kind, raw)?);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.checks {
            if suite::find(c).is_none() {
                return Err(bad("checks", format!("unknown check '{c}'")));
            }
        }
        match &self.model {
            Some(id) => {
                model_zoo::builtin_with(id, &self.model_params).map_err(|e| bad("model", e.to_string()))?;
            }
            None if !self.model_params.is_empty() => {
                let first = self.model_params.keys().next().expect("nonempty");
                return Err(bad(&format!("model.{first}"), "model parameters given without a model"));
            }
            None => {}
        }
        Ok(())
    }

    pub fn param(&self, check: &str, name: &str) -> Option<&Value> {
        self.params.get(&format!("{check}.{name}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_accept_brackets() {
        let cfg = ExperimentConfig::parse("checks = [gamma_identity, wasserstein]\n").unwrap();
        assert_eq!(cfg.checks, ["gamma_identity", "wasserstein"]);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = ExperimentConfig::parse("# header\n\nseed = 4 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert!(cfg.checks.is_empty());
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("grid.t = soon", "grid.t"),
            ("colour = red", "colour"),
            ("picard.lambda = x", "picard.lambda"),
            ("picard.flavour = 1", "picard.flavour"),
            ("model = ou\nmodel.kappa = 1", "model"),
            ("model.theta = 1", "model.theta"),
            ("seed = 1\nseed = 2", "seed"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(CliError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn check_parameters_are_typed() {
        let cfg = ExperimentConfig::parse("picard.lambda = 5\ncoupling_trend.dts = 1e-2, 1e-3\n").unwrap();
        assert_eq!(cfg.param("picard", "lambda"), Some(&Value::Float(5.0)));
        assert_eq!(cfg.param("coupling_trend", "dts"), Some(&Value::FloatList(vec![1e-2, 1e-3])));
    }
}
