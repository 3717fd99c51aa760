//! One function per subcommand. Each returns the report payload, an
//! optional CSV table and whether the command's criterion held.

use anyhow::{bail, Result};
use finsler::curvature::{curvature_map, MapKind};
use finsler::hyperbolicity::{
    anosov_criterion, central_state, lyapunov_estimate, negativity_scan, riemannian_corollary, sample_level_set,
    Convention, GridSpec, LyapunovEstimate,
};
use finsler::jacobi::{closed_form_vs_oracle, conjugate_points, matrix_rows, ComparisonReport};
use finsler::linalg::symmetric_eigen;
use finsler::metric::sample_point;
use finsler::report::to_csv;
use finsler::{chern_connection, validate_metric, FlowOptions, HamiltonianSystem, MetricModel, ModelConfig, PhaseState};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::point::{parse_point, Point};

pub struct Outcome {
    pub result: Value,
    pub table: Option<String>,
    pub pass: bool,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Outcome {
            result,
            table: None,
            pass: true,
        }
    }
}

fn state_vector(pt: &Point) -> DVector<f64> {
    DVector::from_vec(pt.x.iter().chain(&pt.p).copied().collect())
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn validate(model: &MetricModel, samples: usize) -> Result<Outcome> {
    let rep = validate_metric(model, samples);
    Ok(Outcome {
        pass: rep.pass,
        result: serde_json::to_value(&rep)?,
        table: None,
    })
}

pub fn tensors(model: &MetricModel, at: &str) -> Result<Outcome> {
    let pt = parse_point(at, model)?;
    let state = PhaseState::from_cotangent(model, &pt.x, &pt.p)?;
    let tb = chern_connection(model, &pt.x, state.v.as_slice())?;
    Ok(Outcome::ok(json!({
        "x": pt.x,
        "p": pt.p,
        "v": vec_of(&tb.v),
        "g": matrix_rows(&tb.g),
        "g_inv": matrix_rows(&tb.g_inv),
        "cartan": tb.cartan,
        "gamma": tb.gamma,
        "spray": vec_of(&tb.spray),
        "nonlinear": matrix_rows(&tb.nonlinear),
        "chern": tb.chern,
    })))
}

pub fn curvature(model: &MetricModel, at: &str, kind: MapKind, breakdown: bool) -> Result<Outcome> {
    let pt = parse_point(at, model)?;
    let state = PhaseState::from_cotangent(model, &pt.x, &pt.p)?;
    let map = curvature_map(model, &state, kind, None)?;
    let (eig, _) = symmetric_eigen(&map.matrix);
    let mut out = json!({
        "kind": kind,
        "x": pt.x,
        "p": pt.p,
        "v": vec_of(&state.v),
        "matrix": matrix_rows(&map.matrix),
        "eigenvalues": eig,
        "basis": matrix_rows(&map.basis),
        "asymmetry": map.asymmetry,
    });
    if breakdown {
        let b = &map.breakdown;
        out["breakdown"] = json!({
            "riemann": matrix_rows(&b.riemann),
            "hessian": matrix_rows(&b.hessian),
            "chern": matrix_rows(&b.chern),
            "gradient": matrix_rows(&b.gradient),
        });
    }
    Ok(Outcome::ok(out))
}

pub fn flow(sys: &HamiltonianSystem, from: &str, time: f64, dt: f64, monodromy: bool) -> Result<Outcome> {
    let pt = parse_point(from, sys.model())?;
    let opts = FlowOptions {
        dt,
        adaptive: None,
        monodromy,
    };
    let tr = finsler::flow(sys, &state_vector(&pt), time, &opts)?;
    let n = sys.dimension();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.push("H".into());
    let rows: Vec<Vec<f64>> = tr
        .times
        .iter()
        .zip(&tr.states)
        .zip(&tr.energies)
        .map(|((t, z), h)| std::iter::once(*t).chain(z.iter().copied()).chain([*h]).collect())
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(Outcome {
        result: json!({
            "from": state_vector(&pt).as_slice(),
            "final_time": tr.final_time(),
            "final_state": vec_of(tr.final_state()),
            "steps": tr.times.len() - 1,
            "energy_drift": tr.max_energy_drift(),
            "symplectic_defect": if monodromy { Some(tr.max_symplectic_defect()) } else { None },
        }),
        table: Some(to_csv(&header, &rows)),
        pass: true,
    })
}

/// States of speed `F*(p) = 1` at deterministic sample points.
fn sample_states(model: &MetricModel, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dimension();
    (0..count)
        .map(|_| {
            let (x, y) = sample_point(model, &mut rng);
            let s = PhaseState::from_tangent(model, &x, &y)?;
            let p = &s.p / s.f_star;
            Ok(DVector::from_fn(2 * n, |i, _| if i < n { x[i] } else { p[i - n] }))
        })
        .collect()
}

pub fn jacobi_verify(
    sys: &HamiltonianSystem,
    cfg: &ModelConfig,
    at: Option<&str>,
    kinds: &[MapKind],
    samples: usize,
    seed: u64,
) -> Result<Outcome> {
    let states = match at {
        Some(at) => vec![state_vector(&parse_point(at, sys.model())?)],
        None => sample_states(sys.model(), samples, seed)?,
    };
    let kinds: Vec<MapKind> = kinds
        .iter()
        .copied()
        .filter(|k| *k == MapKind::Nonreduced || sys.dimension() >= 2)
        .collect();
    if kinds.is_empty() {
        bail!("the reduced map needs dimension >= 2");
    }
    let tol = cfg.tolerance("oracle");
    let jobs: Vec<(MapKind, &DVector<f64>)> = kinds.iter().flat_map(|k| states.iter().map(move |z| (*k, z))).collect();
    let reports: Vec<ComparisonReport> = jobs
        .par_iter()
        .map(|(k, z)| closed_form_vs_oracle(sys, z, *k, tol))
        .collect::<finsler::Result<_>>()?;
    let worst = reports.iter().map(|r| r.relative_difference).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);
    Ok(Outcome {
        result: json!({
            "tolerance": tol,
            "comparisons": reports.len(),
            "max_relative_difference": worst,
            "pass": pass,
            "reports": reports,
        }),
        table: None,
        pass,
    })
}

pub fn conjugate(sys: &HamiltonianSystem, from: &str, time: f64, kind: MapKind, dt: f64) -> Result<Outcome> {
    let pt = parse_point(from, sys.model())?;
    let cps = conjugate_points(sys, &state_vector(&pt), kind, time, dt)?;
    let rows: Vec<Vec<f64>> = cps.iter().map(|c| vec![c.time, c.sigma_min]).collect();
    Ok(Outcome {
        result: json!({
            "kind": kind,
            "from": state_vector(&pt).as_slice(),
            "time": time,
            "first": cps.first().map(|c| c.time),
            "points": cps,
        }),
        table: Some(to_csv(&["time", "sigma_min"], &rows)),
        pass: true,
    })
}

/// Lyapunov run from every sampled direction at the central base point;
/// the run that stays in the chart longest is kept.
fn central_lyapunov(
    sys: &HamiltonianSystem,
    sample: &finsler::hyperbolicity::LevelSetSample,
    t: f64,
) -> Result<Option<(LyapunovEstimate, Vec<f64>)>> {
    let Some(centre) = central_state(sample) else {
        return Ok(None);
    };
    let starts: Vec<DVector<f64>> = sample
        .states
        .iter()
        .filter(|s| s.x == centre.x)
        .map(|s| s.to_vector())
        .collect();
    let runs: Vec<LyapunovEstimate> = starts
        .par_iter()
        .map(|z| lyapunov_estimate(sys, z, t))
        .collect::<finsler::Result<_>>()?;
    let best = runs
        .into_iter()
        .zip(starts)
        .reduce(|a, b| if b.0.time > a.0.time { b } else { a });
    Ok(best.map(|(est, z)| (est, vec_of(&z))))
}

pub fn scan(sys: &HamiltonianSystem, energy: f64, grid: usize, lyapunov: Option<f64>) -> Result<Outcome> {
    let spec = GridSpec::cube(grid);
    let sample = sample_level_set(sys, energy, &spec)?;
    let mut rep = negativity_scan(sys, &sample)?;
    let mut start = None;
    if let Some(t) = lyapunov {
        if let Some((est, z)) = central_lyapunov(sys, &sample, t)? {
            rep.lyapunov = Some(est);
            start = Some(z);
        }
    }
    let n = sys.dimension();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.push("max_eigenvalue".into());
    let rows: Vec<Vec<f64>> = rep
        .entries
        .iter()
        .map(|e| e.x.iter().chain(&e.p).copied().chain([e.max_eigenvalue]).collect())
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut result = serde_json::to_value(&rep)?;
    result["lyapunov_start"] = json!(start);
    result["max_level_residual"] = json!(sample.max_level_residual);
    Ok(Outcome {
        pass: rep.pass,
        result,
        table: Some(to_csv(&header, &rows)),
    })
}

pub fn anosov(
    sys: &HamiltonianSystem,
    energy: f64,
    grid: usize,
    conventions: &[Convention],
    k: Option<f64>,
    corollary: bool,
) -> Result<Outcome> {
    let spec = GridSpec::cube(grid);
    let reports = conventions
        .iter()
        .map(|c| anosov_criterion(sys, energy, &spec, *c, k))
        .collect::<finsler::Result<Vec<_>>>()?;
    let mut pass = reports.iter().all(|r| r.pass);
    let mut result = json!({ "energy": energy, "grid": spec, "reports": reports });
    if corollary {
        let cor = riemannian_corollary(sys, energy, &spec, k)?;
        pass &= cor.pass;
        result["corollary"] = serde_json::to_value(&cor)?;
    }
    result["pass"] = json!(pass);
    Ok(Outcome {
        result,
        table: None,
        pass,
    })
}
