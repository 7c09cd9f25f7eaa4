//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::network::WeightMode;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    DuplicateKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Every recognised key, in the order used when echoing a config.
pub const KEYS: [&str; 17] = [
    "ai",
    "goods",
    "services",
    "taxonomy",
    "delay",
    "alpha",
    "samples",
    "seed",
    "early",
    "late",
    "min-validations",
    "weights",
    "fdr",
    "self-links",
    "min-layer-total",
    "top-k",
    "countries",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Input locations; `demo:<file>` names a bundled file.
    pub ai: Option<String>,
    pub goods: Option<String>,
    pub services: Option<String>,
    /// Extra taxonomy merged over the bundled AI one.
    pub taxonomy: Option<String>,
    pub delay: i32,
    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
    pub early: RangeInclusive<i32>,
    pub late: RangeInclusive<i32>,
    pub min_validations: usize,
    pub weights: WeightMode,
    pub fdr: bool,
    pub self_links: bool,
    pub min_layer_total: f64,
    pub top_k: usize,
    /// Countries to report on; empty means all.
    pub countries: Vec<String>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ai: None,
            goods: None,
            services: None,
            taxonomy: None,
            delay: 3,
            alpha: 0.05,
            samples: 1000,
            seed: 0,
            early: 2010..=2014,
            late: 2017..=2019,
            min_validations: 1,
            weights: WeightMode::ValidatedOnly,
            fdr: false,
            self_links: false,
            min_layer_total: 0.0,
            top_k: 10,
            countries: Vec::new(),
            output: PathBuf::from("prognet-out"),
        }
    }
}

fn parse_range(s: &str) -> Option<RangeInclusive<i32>> {
    let (a, b) = s.split_once('-')?;
    Some(a.trim().parse().ok()?..=b.trim().parse().ok()?)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn optional(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

impl RunConfig {
    /// The bundled synthetic dataset with seed 7.
    pub fn demo() -> Self {
        Self {
            ai: Some("demo:ai.csv".into()),
            goods: Some("demo:goods.csv".into()),
            services: Some("demo:services.csv".into()),
            taxonomy: Some("demo:taxonomy.csv".into()),
            seed: 7,
            ..Self::default()
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses a config file over the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies a config file on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    /// Sets one key from its textual form, as in a config file or CLI flag.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "ai" => self.ai = optional(value),
            "goods" => self.goods = optional(value),
            "services" => self.services = optional(value),
            "taxonomy" => self.taxonomy = optional(value),
            "output" => self.output = PathBuf::from(value),
            "delay" => self.delay = value.parse().map_err(|_| bad("expected an integer"))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("expected a number"))?,
            "samples" => self.samples = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "early" => self.early = parse_range(value).ok_or_else(|| bad("expected FROM-TO years"))?,
            "late" => self.late = parse_range(value).ok_or_else(|| bad("expected FROM-TO years"))?,
            "min-validations" => {
                self.min_validations = value.parse().map_err(|_| bad("expected a positive integer"))?
            }
            "weights" => {
                self.weights = match value {
                    "validated" => WeightMode::ValidatedOnly,
                    "all" => WeightMode::AllPairs,
                    _ => return Err(bad("expected `validated` or `all`")),
                }
            }
            "fdr" => self.fdr = parse_bool(value).ok_or_else(|| bad("expected true or false"))?,
            "self-links" => self.self_links = parse_bool(value).ok_or_else(|| bad("expected true or false"))?,
            "min-layer-total" => {
                self.min_layer_total = value.parse().map_err(|_| bad("expected a number"))?
            }
            "top-k" => self.top_k = value.parse().map_err(|_| bad("expected a positive integer"))?,
            "countries" => {
                self.countries = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.delay < 0 {
            return invalid(format!("delay must be >= 0, got {}", self.delay));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.samples < 1 {
            return invalid("samples must be >= 1".into());
        }
        if self.top_k < 1 {
            return invalid("top-k must be >= 1".into());
        }
        if self.min_validations < 1 {
            return invalid("min-validations must be >= 1".into());
        }
        if !(self.min_layer_total >= 0.0 && self.min_layer_total.is_finite()) {
            return invalid(format!("min-layer-total must be >= 0, got {}", self.min_layer_total));
        }
        for (name, r) in [("early", &self.early), ("late", &self.late)] {
            if r.is_empty() {
                return invalid(format!("{name} period {}-{} is empty", r.start(), r.end()));
            }
        }
        if self.ai.is_none() {
            return invalid("an AI panel (ai) is required".into());
        }
        if self.goods.is_none() && self.services.is_none() {
            return invalid("at least one of goods or services is required".into());
        }
        Ok(())
    }

    /// The resolved configuration in file form. The output directory is left
    /// out so that identical runs into different directories match.
    pub fn to_config_string(&self) -> String {
        let mut s = String::from("# prognet resolved configuration\n");
        for key in KEYS {
            let value = match key {
                "ai" => self.ai.clone().unwrap_or_default(),
                "goods" => self.goods.clone().unwrap_or_default(),
                "services" => self.services.clone().unwrap_or_default(),
                "taxonomy" => self.taxonomy.clone().unwrap_or_default(),
                "delay" => self.delay.to_string(),
                "alpha" => self.alpha.to_string(),
                "samples" => self.samples.to_string(),
                "seed" => self.seed.to_string(),
                "early" => format!("{}-{}", self.early.start(), self.early.end()),
                "late" => format!("{}-{}", self.late.start(), self.late.end()),
                "min-validations" => self.min_validations.to_string(),
                "weights" => match self.weights {
                    WeightMode::ValidatedOnly => "validated".into(),
                    WeightMode::AllPairs => "all".into(),
                },
                "fdr" => self.fdr.to_string(),
                "self-links" => self.self_links.to_string(),
                "min-layer-total" => self.min_layer_total.to_string(),
                "top-k" => self.top_k.to_string(),
                "countries" => self.countries.join(","),
                _ => unreachable!(),
            };
            if value.is_empty() {
                let _ = writeln!(s, "{key} =");
            } else {
                let _ = writeln!(s, "{key} = {value}");
            }
        }
        s
    }
}
