//! The `x=a,b,...;p=c,d,...` point syntax shared by all subcommands.

use anyhow::{bail, Context, Result};
use finsler::{legendre_to_cotangent, MetricModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

fn numbers(key: &str, list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("`{key}` has a non-numeric entry `{}`", s.trim()))
        })
        .collect()
}

/// Parse a point; tangent data given as `y=` is mapped to a covector.
pub fn parse_point(text: &str, model: &MetricModel) -> Result<Point> {
    let n = model.dimension();
    let mut x = None;
    let mut p = None;
    let mut y = None;
    for part in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((key, list)) = part.split_once('=') else {
            bail!("point component `{part}` is not KEY=LIST");
        };
        let key = key.trim();
        let slot = match key {
            "x" => &mut x,
            "p" => &mut p,
            "y" => &mut y,
            _ => bail!("unknown point component `{key}` (expected x, p or y)"),
        };
        if slot.is_some() {
            bail!("point component `{key}` given twice");
        }
        let vals = numbers(key, list)?;
        if vals.len() != n {
            bail!("`{key}` has {} entries but the model has dimension {n}", vals.len());
        }
        *slot = Some(vals);
    }
    let x = x.context("point is missing `x=`")?;
    let p = match (p, y) {
        (Some(p), None) => p,
        (None, Some(y)) => legendre_to_cotangent(model, &x, &y)?.as_slice().to_vec(),
        (Some(_), Some(_)) => bail!("give either `p=` or `y=`, not both"),
        (None, None) => bail!("point is missing `p=` or `y=`"),
    };
    Ok(Point { x, p })
}
