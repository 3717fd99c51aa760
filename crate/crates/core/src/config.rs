//! Flat `key = value` model configuration and the bundled example catalog.
//!
//! ```text
//! # comment
//! catalog = halfplane2
//! U = "0.05*x1"
//! box = "-4:4, 0.25:4"
//! tol.oracle = 1e-4
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::parse;
use crate::metric::{validate_metric, MetricModel, Topology, ValidityBox};

pub const CATALOG: &[&str] = &[
    "euclidean2",
    "sphere2",
    "halfplane2",
    "randers2",
    "randers2-wind",
    "torus2-cosine",
    "quartic2",
];

pub const VALIDATION_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Euclidean,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub catalog: Option<String>,
    pub dimension: usize,
    pub f2: String,
    pub u: String,
    pub topology: TopologyKind,
    pub bounds: Option<ValidityBox>,
    pub reversible: bool,
    pub tolerances: BTreeMap<String, f64>,
}

/// Default tolerance context embedded in every report.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("oracle", 1e-4),
        ("identity", 1e-9),
        ("level_set", 1e-10),
        ("symmetry", 1e-8),
        ("zero_guard", 1e-8),
        ("conjugate", 1e-6),
        ("darboux", 1e-7),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn tau_box() -> ValidityBox {
    let tau = 2.0 * std::f64::consts::PI;
    ValidityBox {
        lo: vec![0.0, 0.0],
        hi: vec![tau, tau],
    }
}

fn square(a: f64) -> ValidityBox {
    ValidityBox {
        lo: vec![-a, -a],
        hi: vec![a, a],
    }
}

impl ModelConfig {
    /// Expand a bundled catalog entry.
    pub fn catalog(name: &str) -> Result<Self> {
        let (f2, u, topology, bounds, reversible) = match name {
            "euclidean2" => ("y1^2+y2^2", "0", TopologyKind::Euclidean, square(5.0), true),
            "sphere2" => (
                "4*(y1^2+y2^2)/(1+x1^2+x2^2)^2",
                "0",
                TopologyKind::Euclidean,
                square(2.0),
                true,
            ),
            "halfplane2" => (
                "(y1^2+y2^2)/x2^2",
                "0",
                TopologyKind::Euclidean,
                ValidityBox {
                    lo: vec![-4.0, 0.25],
                    hi: vec![4.0, 4.0],
                },
                true,
            ),
            "randers2" => (
                "(sqrt(y1^2+y2^2)+0.5*y1)^2",
                "0",
                TopologyKind::Euclidean,
                square(5.0),
                false,
            ),
            "randers2-wind" => (
                "(sqrt(y1^2+y2^2)+0.3*sin(x2)*y1)^2",
                "0",
                TopologyKind::Euclidean,
                square(5.0),
                false,
            ),
            "torus2-cosine" => ("y1^2+y2^2", "0.1*cos(x1)", TopologyKind::Torus, tau_box(), true),
            "quartic2" => (
                "y1^2+y2^2+0.1*sqrt(y1^4+y2^4)",
                "0",
                TopologyKind::Euclidean,
                square(5.0),
                true,
            ),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown catalog entry `{name}` (known: {})",
                    CATALOG.join(", ")
                )))
            }
        };
        Ok(ModelConfig {
            catalog: Some(name.to_string()),
            dimension: 2,
            f2: f2.into(),
            u: u.into(),
            topology,
            bounds: Some(bounds),
            reversible,
            tolerances: default_tolerances(),
        })
    }

    /// Build the metric model without running validation.
    pub fn model(&self) -> Result<MetricModel> {
        let mut m = MetricModel::new(self.dimension, &self.f2, &self.u)?
            .with_reversible(self.reversible)
            .with_topology(match self.topology {
                TopologyKind::Euclidean => Topology::Euclidean,
                TopologyKind::Torus => Topology::Torus,
            });
        if let Some(b) = &self.bounds {
            m = m.with_box(b.clone());
        }
        if let Some(g) = self.tolerances.get("zero_guard") {
            m = m.with_zero_guard(*g);
        }
        Ok(m)
    }

    /// Build and validate; a failing validation carries the report as JSON.
    pub fn validated_model(&self) -> Result<MetricModel> {
        let m = self.model()?;
        let rep = validate_metric(&m, VALIDATION_SAMPLES);
        if !rep.pass {
            return Err(Error::Validation(serde_json::to_string(&rep).unwrap_or_default()));
        }
        Ok(m)
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances
            .get(key)
            .copied()
            .or_else(|| default_tolerances().get(key).copied())
            .unwrap_or(f64::NAN)
    }

    /// Apply a `KEY=VAL` override to the tolerance table.
    pub fn override_tolerance(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("tolerance override `{spec}` is not KEY=VAL")))?;
        let k = k.trim().trim_start_matches("tol.");
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("tolerance `{k}` has a non-numeric value `{v}`")))?;
        if !default_tolerances().contains_key(k) {
            return Err(Error::InvalidInput(format!("unknown tolerance `{k}`")));
        }
        self.tolerances.insert(k.to_string(), v);
        Ok(())
    }

    /// Canonical text form; the report hash is taken over this.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        if let Some(c) = &self.catalog {
            s.push_str(&format!("catalog = {c}\n"));
        }
        s.push_str(&format!("dimension = {}\n", self.dimension));
        s.push_str(&format!("F2 = \"{}\"\n", self.f2));
        s.push_str(&format!("U = \"{}\"\n", self.u));
        s.push_str(&format!(
            "topology = {}\n",
            match self.topology {
                TopologyKind::Euclidean => "euclidean",
                TopologyKind::Torus => "torus",
            }
        ));
        if let Some(b) = &self.bounds {
            let parts: Vec<String> = b
                .lo
                .iter()
                .zip(&b.hi)
                .map(|(l, h)| format!("{l:e}:{h:e}"))
                .collect();
            s.push_str(&format!("box = \"{}\"\n", parts.join(", ")));
        }
        s.push_str(&format!("reversible = {}\n", self.reversible));
        for (k, v) in &self.tolerances {
            s.push_str(&format!("tol.{k} = {v:e}\n"));
        }
        s
    }
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn unquote(v: &str, line: usize) -> Result<String> {
    let v = v.trim();
    if let Some(rest) = v.strip_prefix('"') {
        rest.strip_suffix('"')
            .map(str::to_string)
            .ok_or_else(|| config_err(line, "unterminated string"))
    } else {
        Ok(v.to_string())
    }
}

fn parse_box(v: &str, line: usize) -> Result<ValidityBox> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in v.split(',') {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| config_err(line, format!("box interval `{}` is not lo:hi", part.trim())))?;
        let a: f64 = a.trim().parse().map_err(|_| config_err(line, format!("bad number `{}`", a.trim())))?;
        let b: f64 = b.trim().parse().map_err(|_| config_err(line, format!("bad number `{}`", b.trim())))?;
        if !(a < b) {
            return Err(config_err(line, format!("empty interval {a}:{b}")));
        }
        lo.push(a);
        hi.push(b);
    }
    Ok(ValidityBox { lo, hi })
}

fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(line, format!("expected a boolean, got `{v}`"))),
    }
}

/// Parse configuration text. Keys that follow `catalog` override it.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg: Option<ModelConfig> = None;
    let mut dimension: Option<usize> = None;
    let mut f2: Option<(String, usize)> = None;
    let mut u: Option<(String, usize)> = None;
    let mut topology: Option<TopologyKind> = None;
    let mut bounds: Option<ValidityBox> = None;
    let mut periods: Option<Vec<f64>> = None;
    let mut reversible: Option<bool> = None;
    let mut tols: Vec<(String, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected `key = value`"))?;
        let (k, v) = (k.trim(), unquote(v, line)?);
        match k {
            "catalog" => cfg = Some(ModelConfig::catalog(&v).map_err(|e| config_err(line, e.to_string()))?),
            "dimension" => {
                dimension = Some(
                    v.parse()
                        .ok()
                        .filter(|d| *d >= 1)
                        .ok_or_else(|| config_err(line, format!("bad dimension `{v}`")))?,
                )
            }
            "F2" | "f2" => f2 = Some((v, line)),
            "U" | "u" => u = Some((v, line)),
            "topology" => {
                topology = Some(match v.as_str() {
                    "euclidean" | "plane" | "chart" => TopologyKind::Euclidean,
                    "torus" => TopologyKind::Torus,
                    _ => return Err(config_err(line, format!("unknown topology `{v}`"))),
                })
            }
            "box" => bounds = Some(parse_box(&v, line)?),
            "periods" => {
                periods = Some(
                    v.split(',')
                        .map(|s| s.trim().parse::<f64>().map_err(|_| config_err(line, format!("bad period `{}`", s.trim()))))
                        .collect::<Result<_>>()?,
                )
            }
            "reversible" => reversible = Some(parse_bool(&v, line)?),
            _ if k.starts_with("tol.") => {
                let key = &k[4..];
                if !default_tolerances().contains_key(key) {
                    return Err(config_err(line, format!("unknown tolerance `{key}`")));
                }
                let val: f64 = v.parse().map_err(|_| config_err(line, format!("bad tolerance `{v}`")))?;
                tols.push((key.to_string(), val));
            }
            _ => return Err(config_err(line, format!("unknown key `{k}`"))),
        }
    }
    let mut cfg = match cfg {
        Some(c) => c,
        None => {
            let (f2_src, _) = f2
                .clone()
                .ok_or_else(|| config_err(0, "missing `F2` (and no `catalog`)"))?;
            ModelConfig {
                catalog: None,
                dimension: dimension.unwrap_or(0),
                f2: f2_src,
                u: "0".into(),
                topology: TopologyKind::Euclidean,
                bounds: None,
                reversible: false,
                tolerances: default_tolerances(),
            }
        }
    };
    if let Some((src, _)) = f2 {
        cfg.f2 = src;
        cfg.catalog = cfg.catalog.take().map(|c| format!("{c} (modified)"));
    }
    if let Some((src, _)) = &u {
        cfg.u = src.clone();
    }
    if let Some(d) = dimension {
        cfg.dimension = d;
    }
    if cfg.dimension == 0 {
        return Err(config_err(0, "missing `dimension`"));
    }
    if let Some(t) = topology {
        cfg.topology = t;
    }
    if let Some(p) = periods {
        cfg.bounds = Some(ValidityBox {
            lo: vec![0.0; p.len()],
            hi: p,
        });
    }
    if let Some(b) = bounds {
        cfg.bounds = Some(b);
    }
    if let Some(r) = reversible {
        cfg.reversible = r;
    }
    for (k, v) in tols {
        cfg.tolerances.insert(k, v);
    }
    if let Some(b) = &cfg.bounds {
        if b.lo.len() != cfg.dimension {
            return Err(config_err(0, format!("box has {} intervals for dimension {}", b.lo.len(), cfg.dimension)));
        }
    }
    if cfg.topology == TopologyKind::Torus && cfg.bounds.is_none() {
        return Err(config_err(0, "torus topology needs `periods` or `box`"));
    }
    // Surface expression errors with their spans before building.
    parse(&cfg.f2, cfg.dimension)?;
    parse(&cfg.u, cfg.dimension)?;
    Ok(cfg)
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Load a config file, or expand a bare catalog name, then validate.
pub fn load_config(path: &str) -> Result<(ModelConfig, MetricModel)> {
    let cfg = if Path::new(path).is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
        parse_config(&text)?
    } else if CATALOG.contains(&path) {
        ModelConfig::catalog(path)?
    } else {
        return Err(Error::Io(format!("{path}: no such file or catalog entry")));
    };
    let model = cfg.validated_model()?;
    Ok((cfg, model))
}
