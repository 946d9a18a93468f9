//! JSON experiment configuration with dotted-path overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::connectivity::AnalysisParams;
use crate::data::{gen_blobs, load_csv, Dataset};
use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::pruning::CoveragePolicy;
use crate::trainer::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Rp,
    Csp,
    N2nskipRp,
    N2nskipCsp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline,
        Method::Rp,
        Method::Csp,
        Method::N2nskipRp,
        Method::N2nskipCsp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rp => "rp",
            Method::Csp => "csp",
            Method::N2nskipRp => "n2nskip-rp",
            Method::N2nskipCsp => "n2nskip-csp",
        }
    }

    pub fn has_skips(self) -> bool {
        matches!(self, Method::N2nskipRp | Method::N2nskipCsp)
    }

    pub fn is_pruned(self) -> bool {
        self != Method::Baseline
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layer_dims: Vec<usize>,
    #[serde(default = "default_span")]
    pub skip_span: usize,
}

fn default_span() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        seed: u64,
    },
    Csv {
        path: String,
        classes: usize,
    },
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetConfig::Blobs {
                classes,
                dim,
                per_class,
                spread,
                seed,
            } => gen_blobs(*classes, *dim, *per_class, *spread, *seed),
            DatasetConfig::Csv { path, classes } => load_csv(Path::new(path), *classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Diffusion time for signatures and distances.
    pub t: f64,
    /// Fraction of the `n − 1` admissible eigenvalues in the scree numerator.
    pub k_fraction: f64,
    pub t_grid: Vec<f64>,
    pub threshold: f64,
    /// Use `|w|` edge weights instead of binary edges.
    pub weighted: bool,
    /// Analyze trained weights (true) or the weights at initialization.
    pub post_training: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            t: 1.5,
            k_fraction: 0.5,
            t_grid: default_t_grid(),
            threshold: 0.97,
            weighted: true,
            post_training: true,
        }
    }
}

/// `0` followed by 120 log-spaced points from 1e-2 to 1e4.
pub fn default_t_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..120).map(|i| 10f64.powf(-2.0 + 6.0 * i as f64 / 119.0)))
        .collect()
}

impl AnalysisConfig {
    pub fn params(&self) -> AnalysisParams {
        AnalysisParams {
            t: self.t,
            k_fraction: self.k_fraction,
            t_grid: self.t_grid.clone(),
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coverage {
    Strict,
    #[default]
    BestEffort,
}

impl From<Coverage> for CoveragePolicy {
    fn from(c: Coverage) -> Self {
        match c {
            Coverage::Strict => CoveragePolicy::Strict,
            Coverage::BestEffort => CoveragePolicy::BestEffort,
        }
    }
}

/// Grid for the `sweep` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub network: NetworkConfig,
    pub method: Method,
    /// Ignored by `baseline`.
    #[serde(default = "one")]
    pub density: f64,
    /// Share of the budget given to skips; used by `n2nskip-*`.
    #[serde(default = "half")]
    pub split_ratio: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub hyperparams: HyperParams,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Samples used for connection sensitivity.
    #[serde(default = "default_csp_batch")]
    pub csp_batch: usize,
    #[serde(default)]
    pub rp_coverage: Coverage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_root: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_csp_batch() -> usize {
    128
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `--a.b value` style overrides.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, val) in overrides {
            apply_override(&mut v, k, val)?;
        }
        Self::from_value(v)
    }

    pub fn network_spec(&self, seed: u64) -> NetworkSpec {
        NetworkSpec::new(
            self.network.layer_dims.clone(),
            self.network.skip_span,
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "invalid experiment name {:?}",
                self.name
            )));
        }
        self.network_spec(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.hyperparams.validate()?;
        validate_method_density(self.method, self.density)?;
        if self.method.has_skips() && !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "{} needs split_ratio in (0, 1), got {}",
                self.method, self.split_ratio
            )));
        }
        if self.method.has_skips() && self.network.skip_span > self.network.layer_dims.len() - 1 {
            return Err(Error::Config(format!(
                "skip span {} exceeds the {} weight layers",
                self.network.skip_span,
                self.network.layer_dims.len() - 1
            )));
        }
        let a = &self.analysis;
        if !(a.t >= 0.0 && a.t.is_finite()) {
            return Err(Error::Config(format!(
                "analysis.t must be >= 0, got {}",
                a.t
            )));
        }
        if !(a.k_fraction > 0.0 && a.k_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "analysis.k_fraction must lie in (0, 1], got {}",
                a.k_fraction
            )));
        }
        if !(a.threshold > 0.0 && a.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "analysis.threshold must lie in (0, 1], got {}",
                a.threshold
            )));
        }
        if a.t_grid.is_empty()
            || a.t_grid
                .windows(2)
                .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
            || a.t_grid[0] < 0.0
        {
            return Err(Error::Config(
                "analysis.t_grid must be non-empty, non-negative and strictly ascending".into(),
            ));
        }
        if self.csp_batch == 0 {
            return Err(Error::Config("csp_batch must be positive".into()));
        }
        if let Some(s) = &self.sweep {
            if s.methods.is_empty() || s.densities.is_empty() {
                return Err(Error::Config("sweep needs methods and densities".into()));
            }
            for &d in &s.densities {
                for &m in &s.methods {
                    validate_method_density(m, d)?;
                }
            }
        }
        Ok(())
    }
}

fn validate_method_density(m: Method, d: f64) -> Result<()> {
    if m.is_pruned() && !(d > 0.0 && d <= 1.0) {
        return Err(Error::Config(format!(
            "{m} needs density in (0, 1], got {d}"
        )));
    }
    Ok(())
}

/// Sets `key` (dot-separated path) in `root` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("bad override key {key:?}")));
        }
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {key:?}: {part:?} is not inside an object"
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses `--a.b value` / `--a.b=value` pairs.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            return Err(Error::Config(format!("expected --key, found {a:?}")));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| Error::Config(format!("override --{key} is missing a value")))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}
