//! Sampled hyperbolicity and Anosov criteria on energy levels, plus
//! Lyapunov-exponent estimates.
//!
//! Every verdict here is sampled evidence on a finite grid, not a proof.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    curvature_forms, curvature_map_from_forms, full_basis, potential_derivatives_with, riemann_tensor,
    MapKind,
};
use crate::dynamics::{variational_flow, HamiltonianSystem};
use crate::error::{Error, Result};
use crate::jacobi::Splitting;
use crate::linalg;
use crate::metric::{cartan_tensor, validate_metric, PhaseState, Topology, ValidityBox};

pub const EVIDENCE_NOTE: &str = "sampled evidence, not a proof";
/// Limit applied to unbounded boxes before gridding.
pub const SAMPLING_CLIP: f64 = 5.0;
pub const LEVEL_TOL: f64 = 1e-10;

/// Grid over the chart box times a set of unit covector directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per coordinate axis, placed at cell centres.
    pub points_per_axis: usize,
    pub directions: usize,
    /// Overrides the model's validity box.
    pub region: Option<ValidityBox>,
    /// Seed for direction sampling when `n ≥ 3`.
    pub seed: u64,
}

impl GridSpec {
    /// The `m × … × m` base grid with `m` directions.
    pub fn cube(m: usize) -> Self {
        GridSpec {
            points_per_axis: m,
            directions: m,
            region: None,
            seed: 0x5eed_0002,
        }
    }

    pub fn with_region(mut self, region: ValidityBox) -> Self {
        self.region = Some(region);
        self
    }

    fn base_points(&self, sys: &HamiltonianSystem) -> Vec<Vec<f64>> {
        let model = sys.model();
        let n = model.dimension();
        let b = self
            .region
            .clone()
            .unwrap_or_else(|| model.validity_box().clipped(SAMPLING_CLIP));
        let m = self.points_per_axis.max(1);
        let total = m.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|i| {
                        let k = idx % m;
                        idx /= m;
                        b.lo[i] + (k as f64 + 0.5) * (b.hi[i] - b.lo[i]) / m as f64
                    })
                    .collect()
            })
            .collect()
    }

    fn unit_directions(&self, n: usize) -> Vec<DVector<f64>> {
        let m = self.directions.max(1);
        if n == 1 {
            return vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
        }
        if n == 2 {
            return (0..m)
                .map(|j| {
                    let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
                    DVector::from_vec(vec![th.cos(), th.sin()])
                })
                .collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..m)
            .map(|_| loop {
                let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let r = u.norm();
                if r > 1e-3 && r <= 1.0 {
                    break u / r;
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LevelSetSample {
    pub energy: f64,
    pub states: Vec<PhaseState>,
    /// Grid points where `U(x) ≥ c`.
    pub skipped: usize,
    pub grid: GridSpec,
    pub max_level_residual: f64,
}

/// States `(x, r·u)` with `H = c`, one per grid point and direction.
pub fn sample_level_set(sys: &HamiltonianSystem, c: f64, grid: &GridSpec) -> Result<LevelSetSample> {
    let model = sys.model();
    let n = model.dimension();
    let dirs = grid.unit_directions(n);
    let points = grid.base_points(sys);
    let per_point: Vec<Result<Option<Vec<(PhaseState, f64)>>>> = points
        .par_iter()
        .map(|x| {
            let u0 = model.potential(x)?;
            if u0 >= c {
                return Ok(None);
            }
            let mut out = Vec::with_capacity(dirs.len());
            for u in &dirs {
                let s = PhaseState::from_cotangent(model, x, u.as_slice())?;
                // F* is 1-homogeneous, so the ray hits the level at this r.
                let mut r = (2.0 * (c - u0)).sqrt() / s.f_star;
                let mut state = PhaseState::from_cotangent(model, x, (u * r).as_slice())?;
                for _ in 0..8 {
                    let res = sys.energy_of(&state)? - c;
                    if res.abs() <= 0.1 * LEVEL_TOL * c.abs().max(1.0) {
                        break;
                    }
                    r -= res / (r * s.f_star * s.f_star);
                    state = PhaseState::from_cotangent(model, x, (u * r).as_slice())?;
                }
                let res = (sys.energy_of(&state)? - c).abs();
                out.push((state, res));
            }
            Ok(Some(out))
        })
        .collect();
    let mut states = Vec::new();
    let mut skipped = 0;
    let mut worst = 0.0f64;
    for r in per_point {
        match r? {
            None => skipped += 1,
            Some(v) => {
                for (s, res) in v {
                    worst = worst.max(res);
                    states.push(s);
                }
            }
        }
    }
    if worst > LEVEL_TOL * c.abs().max(1.0) {
        return Err(Error::Hypothesis(format!("level-set residual {worst:e} exceeds {LEVEL_TOL:e}")));
    }
    Ok(LevelSetSample {
        energy: c,
        states,
        skipped,
        grid: grid.clone(),
        max_level_residual: worst,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanEntry {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub energy: f64,
    pub samples: usize,
    pub skipped: usize,
    pub entries: Vec<ScanEntry>,
    pub global_max: f64,
    pub argmax: usize,
    /// `−global_max`; the criterion holds on the sample iff it is positive.
    pub margin: f64,
    pub pass: bool,
    pub anosov: Vec<AnosovReport>,
    pub lyapunov: Option<LyapunovEstimate>,
    pub note: String,
}

/// Largest eigenvalue of the reduced curvature map at every sampled state.
pub fn negativity_scan(sys: &HamiltonianSystem, sample: &LevelSetSample) -> Result<ScanReport> {
    if sys.dimension() < 2 {
        return Err(Error::InvalidInput("the negativity scan needs n >= 2".into()));
    }
    let model = sys.model();
    let entries: Vec<ScanEntry> = sample
        .states
        .par_iter()
        .map(|s| -> Result<ScanEntry> {
            let forms = curvature_forms(model, s)?;
            let m = curvature_map_from_forms(&forms, MapKind::Reduced, None)?;
            Ok(ScanEntry {
                x: s.x.iter().copied().collect(),
                p: s.p.iter().copied().collect(),
                max_eigenvalue: linalg::max_eigenvalue(&m.matrix),
            })
        })
        .collect::<Result<_>>()?;
    if entries.is_empty() {
        return Err(Error::Hypothesis("the energy level has no sampled states".into()));
    }
    let (argmax, global_max) = entries
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, e)| if e.max_eigenvalue > bv { (i, e.max_eigenvalue) } else { (bi, bv) });
    Ok(ScanReport {
        energy: sample.energy,
        samples: entries.len(),
        skipped: sample.skipped,
        entries,
        global_max,
        argmax,
        margin: -global_max,
        pass: -global_max > 0.0,
        anosov: Vec::new(),
        lyapunov: None,
        note: EVIDENCE_NOTE.into(),
    })
}

/// Normalization of `F(v)` and `F(w)` on the level `H = c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `F(v)² = F(w)² = 2(c − U)`, the reading consistent with `H = c`.
    A,
    /// `F(v) = F(w) = 2(c − U)`, the literal reading.
    B,
}

impl Convention {
    pub fn target_norm(self, c: f64, u: f64) -> f64 {
        match self {
            Convention::A => (2.0 * (c - u)).sqrt(),
            Convention::B => 2.0 * (c - u),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Convention::A => "a: F(v)^2 = F(w)^2 = 2(c-U), consistent with the energy level",
            Convention::B => "b: F(v) = F(w) = 2(c-U), literal normalization",
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Convention::A),
            "b" | "B" => Ok(Convention::B),
            _ => Err(Error::InvalidInput(format!("unknown convention `{s}` (expected a or b)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnosovReport {
    pub convention: Convention,
    pub convention_label: String,
    pub energy: f64,
    /// Upper flag-curvature bound used on the right-hand side.
    pub k: f64,
    pub k_sampled: bool,
    pub lhs_max: f64,
    /// Right-hand side `−4k(c − U)²` at the point of the smallest margin.
    pub rhs_at_worst: f64,
    /// Smallest pointwise `rhs − lhs`.
    pub min_margin: f64,
    pub worst_x: Vec<f64>,
    pub pass: bool,
    pub note: String,
}

/// Unit `g_v`-orthonormal directions spanning `Π` plus their pairwise
/// bisectors, used to maximize a quadratic form constrained by `F(w)`.
fn pi_directions(pi: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = pi.ncols();
    let mut out = Vec::new();
    for a in 0..k {
        out.push(pi.column(a).into_owned());
        for b in a + 1..k {
            for s in [1.0, -1.0] {
                out.push((pi.column(a) + pi.column(b) * s) / 2f64.sqrt());
            }
        }
    }
    out
}

/// Sampled maximum of the flag curvature over the grid.
pub fn sampled_flag_curvature_max(sys: &HamiltonianSystem, grid: &GridSpec) -> Result<f64> {
    let model = sys.model();
    let n = model.dimension();
    let dirs = grid.unit_directions(n);
    let points = grid.base_points(sys);
    let vals: Vec<f64> = points
        .par_iter()
        .map(|x| -> Result<f64> {
            let mut best = f64::NEG_INFINITY;
            for u in &dirs {
                let cb = riemann_tensor(model, x, u.as_slice())?;
                let pi = crate::curvature::pi_basis(&cb.tensors.g, u, None);
                for w in pi_directions(&pi) {
                    best = best.max(cb.flag_curvature(&w)?);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Sufficient condition of Anosov type for the flow on `H = c`, evaluated
/// at the grid points and tangent directions.
pub fn anosov_criterion(
    sys: &HamiltonianSystem,
    c: f64,
    grid: &GridSpec,
    convention: Convention,
    k: Option<f64>,
) -> Result<AnosovReport> {
    let model = sys.model();
    let n = model.dimension();
    if n < 2 {
        return Err(Error::InvalidInput("the Anosov criterion needs n >= 2".into()));
    }
    let val = validate_metric(model, 64);
    if !val.reversible {
        return Err(Error::Hypothesis(format!(
            "the Anosov criterion assumes a reversible metric; sampled reversibility gap is {:e}",
            val.max_reversibility_gap
        )));
    }
    let (k, k_sampled) = match k {
        Some(k) => (k, false),
        None => (sampled_flag_curvature_max(sys, grid)?, true),
    };
    let dirs = grid.unit_directions(n);
    let points = grid.base_points(sys);
    // (lhs, rhs, margin) per point.
    let per_point: Vec<Option<(f64, f64, f64, Vec<f64>)>> = points
        .par_iter()
        .map(|x| -> Result<Option<(f64, f64, f64, Vec<f64>)>> {
            let u0 = model.potential(x)?;
            if u0 >= c {
                return Ok(None);
            }
            let target = convention.target_norm(c, u0);
            let mut lhs = f64::NEG_INFINITY;
            for d in &dirs {
                let v = d * (target / model.norm(x, d.as_slice())?);
                let state = PhaseState::from_tangent(model, x, v.as_slice())?;
                let forms = curvature_forms(model, &state)?;
                let pi = crate::curvature::pi_basis(&forms.g, &forms.v, None);
                let gdu = {
                    let (_, du, _) = model.potential_jet(x)?;
                    du
                };
                let grad_coef = 3.0 / (4.0 * (c - u0).powi(2));
                for w0 in pi_directions(&pi) {
                    let w = &w0 * (target / model.norm(x, w0.as_slice())?);
                    let q = w.dot(&((&forms.hessian + &forms.chern) * &w));
                    let gw = w.dot(&gdu);
                    lhs = lhs.max(q + grad_coef * gw * gw);
                }
            }
            let rhs = -4.0 * k * (c - u0).powi(2);
            Ok(Some((lhs, rhs, rhs - lhs, x.clone())))
        })
        .collect::<Result<_>>()?;
    let mut lhs_max = f64::NEG_INFINITY;
    let mut worst: Option<(f64, f64, Vec<f64>)> = None;
    for (lhs, rhs, margin, x) in per_point.into_iter().flatten() {
        lhs_max = lhs_max.max(lhs);
        if worst.as_ref().is_none_or(|w| margin < w.0) {
            worst = Some((margin, rhs, x));
        }
    }
    let (min_margin, rhs_at_worst, worst_x) =
        worst.ok_or_else(|| Error::Hypothesis("the energy level has no sampled points".into()))?;
    Ok(AnosovReport {
        convention,
        convention_label: convention.label().into(),
        energy: c,
        k,
        k_sampled,
        lhs_max,
        rhs_at_worst,
        min_margin,
        worst_x,
        pass: min_margin > 0.0,
        note: EVIDENCE_NOTE.into(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub energy: f64,
    pub k: f64,
    pub k_sampled: bool,
    /// Max over `x` of `‖Hess U‖/(2(c−U)) + 3‖∇U‖²/(4(c−U)²)`.
    pub lhs_max: f64,
    pub worst_x: Vec<f64>,
    pub pass: bool,
    pub note: String,
}

pub const RIEMANNIAN_CARTAN_TOL: f64 = 1e-8;

/// Riemannian specialization of the Anosov condition.
pub fn riemannian_corollary(
    sys: &HamiltonianSystem,
    c: f64,
    grid: &GridSpec,
    k: Option<f64>,
) -> Result<CorollaryReport> {
    let model = sys.model();
    let n = model.dimension();
    if n < 2 {
        return Err(Error::InvalidInput("the Riemannian corollary needs n >= 2".into()));
    }
    let points = grid.base_points(sys);
    let dirs = grid.unit_directions(n);
    for x in points.iter().take(16) {
        for d in dirs.iter().take(4) {
            let cm = cartan_tensor(model, x, d.as_slice())?.max_abs();
            if cm > RIEMANNIAN_CARTAN_TOL {
                return Err(Error::Hypothesis(format!(
                    "the corollary needs a Riemannian metric; Cartan tensor magnitude {cm:e} at x = {x:?}"
                )));
            }
        }
    }
    let (k, k_sampled) = match k {
        Some(k) => (k, false),
        None => (sampled_flag_curvature_max(sys, grid)?, true),
    };
    let vals: Vec<Option<(f64, Vec<f64>)>> = points
        .par_iter()
        .map(|x| -> Result<Option<(f64, Vec<f64>)>> {
            let u0 = model.potential(x)?;
            if u0 >= c {
                return Ok(None);
            }
            let d = &dirs[0];
            let tb = crate::metric::chern_connection(model, x, d.as_slice())?;
            let pd = potential_derivatives_with(model, &tb)?;
            let e = full_basis(&tb.g, &tb.v, None);
            let h = e.transpose() * &pd.hessian * &e;
            let (eig, _) = linalg::symmetric_eigen(&h);
            let hnorm = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let grad2 = pd.differential.dot(&(&tb.g_inv * &pd.differential));
            let lhs = hnorm / (2.0 * (c - u0)) + 3.0 * grad2 / (4.0 * (c - u0).powi(2));
            Ok(Some((lhs, x.clone())))
        })
        .collect::<Result<_>>()?;
    let (lhs_max, worst_x) = vals
        .into_iter()
        .flatten()
        .fold((f64::NEG_INFINITY, Vec::new()), |a, b| if b.0 > a.0 { b } else { a });
    Ok(CorollaryReport {
        energy: c,
        k,
        k_sampled,
        lhs_max,
        worst_x,
        pass: lhs_max < -k,
        note: EVIDENCE_NOTE.into(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub exponent: f64,
    /// Integration time actually used.
    pub time: f64,
    /// The trajectory left the validity box before the requested time.
    pub truncated: bool,
    pub renormalizations: usize,
}

pub const LYAPUNOV_INTERVAL: f64 = 0.5;
pub const LYAPUNOV_DT: f64 = 1e-2;

/// Leading diagonal of an upper-triangular QR factor, sign-normalized.
fn qr_step(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let qr = m.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let mut q = q.columns(0, m.ncols()).into_owned();
    let mut lead = r[(0, 0)];
    if lead < 0.0 {
        lead = -lead;
        let c = -q.column(0).into_owned();
        q.set_column(0, &c);
    }
    (q, lead)
}

/// Top Lyapunov exponent of the flow on the energy level through `z0`.
///
/// Tangent vectors are measured in the reduced splitting with `H⃗` and the
/// Euler direction discarded, and the frame is QR-reorthogonalized every
/// interval. The frame is seeded with `(t_a + ξ_a)/√2` and `(t_a − ξ_a)/√2`;
/// both orderings are run and the larger leading exponent is reported.
pub fn lyapunov_estimate(sys: &HamiltonianSystem, z0: &DVector<f64>, t_end: f64) -> Result<LyapunovEstimate> {
    let n = sys.dimension();
    if n < 2 {
        return Ok(LyapunovEstimate {
            exponent: 0.0,
            time: 0.0,
            truncated: false,
            renormalizations: 0,
        });
    }
    let k = n - 1;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut best: Option<LyapunovEstimate> = None;
    for sign in [1.0, -1.0] {
        let mut coords = DMatrix::zeros(2 * k, 2 * k);
        for a in 0..k {
            coords[(a, 2 * a)] = sign * s;
            coords[(k + a, 2 * a)] = s;
            coords[(a, 2 * a + 1)] = -sign * s;
            coords[(k + a, 2 * a + 1)] = s;
        }
        let est = lyapunov_run(sys, z0, t_end, coords)?;
        if best.as_ref().is_none_or(|b| est.exponent > b.exponent) {
            best = Some(est);
        }
    }
    Ok(best.expect("two runs"))
}

fn lyapunov_run(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    t_end: f64,
    mut coords: DMatrix<f64>,
) -> Result<LyapunovEstimate> {
    let k = sys.dimension() - 1;
    let mut z = z0.clone();
    let mut frame_sp = Splitting::new(sys, &z, MapKind::Reduced, None)?;
    let mut sum = 0.0;
    let mut t = 0.0;
    let mut count = 0;
    let mut truncated = false;
    while t < t_end - 1e-12 {
        let h = LYAPUNOV_INTERVAL.min(t_end - t);
        let tr = match variational_flow(sys, &z, h, LYAPUNOV_DT) {
            Ok(tr) => tr,
            Err(Error::LeftValidityBox { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let phi = tr.monodromy.as_ref().expect("monodromy").last().expect("samples").clone();
        let vecs = &frame_sp.vertical * coords.rows(0, k) + &frame_sp.transversal * coords.rows(k, k);
        let moved = phi * vecs;
        z = tr.final_state().clone();
        let next = Splitting::new(sys, &z, MapKind::Reduced, None)?;
        let reduced = next.coefficients(&moved)?.rows(0, 2 * k).into_owned();
        let (q, lead) = qr_step(&reduced);
        sum += lead.ln();
        coords = q;
        frame_sp = next;
        t += h;
        count += 1;
    }
    if t <= 0.0 {
        return Err(Error::Hypothesis("the trajectory leaves the validity box immediately".into()));
    }
    Ok(LyapunovEstimate {
        exponent: sum / t,
        time: t,
        truncated,
        renormalizations: count,
    })
}

/// Sample state nearest to the centre of the region, used as a start point.
pub fn central_state<'a>(sample: &'a LevelSetSample) -> Option<&'a PhaseState> {
    let n = sample.states.first()?.x.len();
    let mut centre = DVector::zeros(n);
    for s in &sample.states {
        centre += &s.x;
    }
    centre /= sample.states.len() as f64;
    sample
        .states
        .iter()
        .min_by(|a, b| (&a.x - &centre).norm().total_cmp(&(&b.x - &centre).norm()))
}

/// Convenience: flat-torus periods never bound a trajectory.
pub fn is_compact_chart(sys: &HamiltonianSystem) -> bool {
    *sys.model().topology() == Topology::Torus
}
