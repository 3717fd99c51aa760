//! Jacobi curves of extremals, their canonical splittings, the numerical
//! curvature-map oracle, normal moving frames and conjugate points.
//!
//! Tangent vectors to `T*M` are stacked as `(δx, δp)` and the symplectic
//! form is `σ = dx ∧ dp`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvature::{
    curvature_map_from_forms, curvature_forms, full_basis, pi_basis, pi_drop_index, MapKind,
};
use crate::dynamics::{rk4_advance, rk4_generic, variational_flow, HamiltonianSystem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::{chern_connection, PhaseState};

/// Columns spanning a subspace of a symplectic vector space.
#[derive(Debug, Clone)]
pub struct SubspaceFrame {
    pub columns: DMatrix<f64>,
}

impl SubspaceFrame {
    /// Matrix `σ(c_a, c_b)`.
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.columns.nrows() / 2;
        self.columns.transpose() * linalg::symplectic_j(n) * &self.columns
    }

    pub fn isotropy_defect(&self) -> f64 {
        if self.columns.ncols() == 0 {
            0.0
        } else {
            self.sigma_matrix().amax()
        }
    }

    pub fn min_singular_value(&self) -> f64 {
        self.columns
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

/// `(Γp)_{ij} = Γ^k_ij p_k`, symmetric in `i, j`.
fn gamma_p(chern: &crate::tensor::Tensor3, p: &DVector<f64>) -> DMatrix<f64> {
    let n = p.len();
    DMatrix::from_fn(n, n, |i, j| (0..n).map(|k| chern[(k, i, j)] * p[k]).sum())
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = (top.nrows(), top.ncols());
    DMatrix::from_fn(2 * n, k, |r, c| if r < n { top[(r, c)] } else { bottom[(r - n, c)] })
}

/// Chern horizontal lifts `∂/∂x^i + Γ^k_ij p_k ∂/∂p_j` of the coordinate
/// vectors.
pub fn canonical_complement_nonreduced(sys: &HamiltonianSystem, z: &DVector<f64>) -> Result<SubspaceFrame> {
    let s = sys.state(z)?;
    let tb = chern_connection(sys.model(), s.x.as_slice(), s.v.as_slice())?;
    let n = s.x.len();
    let gp = gamma_p(&tb.chern, &s.p);
    Ok(SubspaceFrame {
        columns: stack(&DMatrix::identity(n, n), &gp),
    })
}

/// Chern lifts of the Π basis vectors `w`, corrected by
/// `−(dU(w)/F²)·(0, p)`.
pub fn canonical_complement_reduced(sys: &HamiltonianSystem, z: &DVector<f64>) -> Result<SubspaceFrame> {
    let sp = Splitting::new(sys, z, MapKind::Reduced, None)?;
    Ok(SubspaceFrame {
        columns: sp.transversal,
    })
}

/// A Darboux-adapted splitting `[Ξ | T]` of the tangent space at a state,
/// extended by `[H⃗ | (0, p)]` for the reduced kind.
#[derive(Debug, Clone)]
pub struct Splitting {
    pub kind: MapKind,
    pub state: PhaseState,
    /// `g_v`-orthonormal basis `e_a` as columns.
    pub basis: DMatrix<f64>,
    /// `ξ_a = (0, g e_a)`.
    pub vertical: DMatrix<f64>,
    /// Canonical complement `t_a`, with `σ(t_a, ξ_b) = δ_ab`.
    pub transversal: DMatrix<f64>,
    pub extra: DMatrix<f64>,
    pub drop: usize,
    full: DMatrix<f64>,
}

impl Splitting {
    pub fn new(sys: &HamiltonianSystem, z: &DVector<f64>, kind: MapKind, drop: Option<usize>) -> Result<Self> {
        let model = sys.model();
        let n = sys.dimension();
        let state = sys.state(z)?;
        let tb = chern_connection(model, state.x.as_slice(), state.v.as_slice())?;
        let drop = drop.unwrap_or_else(|| pi_drop_index(&tb.g, &state.v));
        let basis = match kind {
            MapKind::Nonreduced => full_basis(&tb.g, &state.v, Some(drop)),
            MapKind::Reduced => pi_basis(&tb.g, &state.v, Some(drop)),
        };
        let gp = gamma_p(&tb.chern, &state.p);
        let vertical = stack(&DMatrix::zeros(n, basis.ncols()), &(&tb.g * &basis));
        let mut lift_p = &gp * &basis;
        let extra = match kind {
            MapKind::Nonreduced => DMatrix::zeros(2 * n, 0),
            MapKind::Reduced => {
                let (_, du, _) = model.potential_jet(state.x.as_slice())?;
                let f2 = state.f_star * state.f_star;
                for a in 0..basis.ncols() {
                    let c = basis.column(a).dot(&du) / f2;
                    for j in 0..n {
                        lift_p[(j, a)] -= c * state.p[j];
                    }
                }
                let h = sys.vector_field(z)?;
                let mut e = DMatrix::zeros(2 * n, 2);
                e.set_column(0, &h);
                for j in 0..n {
                    e[(n + j, 1)] = state.p[j];
                }
                e
            }
        };
        let transversal = stack(&basis, &lift_p);
        let k = basis.ncols();
        let mut full = DMatrix::zeros(2 * n, 2 * n);
        full.view_mut((0, 0), (2 * n, k)).copy_from(&vertical);
        full.view_mut((0, k), (2 * n, k)).copy_from(&transversal);
        full.view_mut((0, 2 * k), (2 * n, extra.ncols())).copy_from(&extra);
        Ok(Splitting {
            kind,
            state,
            basis,
            vertical,
            transversal,
            extra,
            drop,
            full,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Coefficients of `y` in `[Ξ | T | extra]`.
    pub fn coefficients(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        linalg::solve(&self.full, y, "splitting")
    }

    /// `(P, Q)` with `y ≡ Ξ P + T Q` modulo the extra directions.
    pub fn decompose(&self, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let c = self.coefficients(y)?;
        let k = self.rank();
        Ok((
            c.rows(0, k).into_owned(),
            c.rows(k, k).into_owned(),
        ))
    }

    /// Vertical directions at this state that generate the Jacobi curve:
    /// all of `(0, δp)` for the nonreduced kind, `(0, g w)` for `w ∈ Π`.
    pub fn generating_vertical(&self) -> DMatrix<f64> {
        self.vertical.clone()
    }
}

/// Graph coordinates `S(t)` of a Jacobi curve over the splitting at `t = 0`.
#[derive(Debug, Clone)]
pub struct GraphCoordinates {
    pub kind: MapKind,
    pub times: Vec<f64>,
    pub s: Vec<DMatrix<f64>>,
    /// Max `σ`-isotropy defect of the propagated frames.
    pub lagrangian_defect: f64,
    /// Max `|S − Sᵀ|` entry.
    pub symmetry_defect: f64,
    pub basis: DMatrix<f64>,
    pub drop: usize,
}

/// `(z(t), Φ(t))` at each requested time, integrating outward from zero.
pub fn monodromy_at(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    times: &[f64],
    dt: f64,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    let n = sys.dimension();
    let mut out: Vec<Option<(DVector<f64>, DMatrix<f64>)>> = vec![None; times.len()];
    for sign in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..times.len())
            .filter(|&i| times[i] * sign > 0.0)
            .collect();
        idx.sort_by(|&a, &b| (times[a] * sign).total_cmp(&(times[b] * sign)));
        let mut t_prev = 0.0;
        let mut z = z0.clone();
        let mut phi = DMatrix::identity(2 * n, 2 * n);
        for i in idx {
            let seg = times[i] - t_prev;
            if seg != 0.0 {
                let tr = variational_flow(sys, &z, seg, dt)?;
                phi = tr.monodromy.as_ref().expect("monodromy").last().expect("samples") * &phi;
                z = tr.final_state().clone();
                t_prev = times[i];
            }
            out[i] = Some((z.clone(), phi.clone()));
        }
    }
    Ok(out
        .into_iter()
        .map(|o| o.unwrap_or_else(|| (z0.clone(), DMatrix::identity(2 * n, 2 * n))))
        .collect())
}

/// Generating vertical directions at `λ(t)`: all of `(0, δp)` for the
/// nonreduced kind, `(0, g w)` for `w ∈ Π` otherwise.
fn vertical_at(sys: &HamiltonianSystem, zt: &DVector<f64>, kind: MapKind) -> Result<DMatrix<f64>> {
    let n = sys.dimension();
    Ok(match kind {
        MapKind::Nonreduced => stack(&DMatrix::zeros(n, n), &DMatrix::identity(n, n)),
        MapKind::Reduced => {
            let s = sys.state(zt)?;
            let g = crate::metric::fundamental_tensor(sys.model(), s.x.as_slice(), s.v.as_slice())?;
            let b = pi_basis(&g, &s.v, None);
            stack(&DMatrix::zeros(n, b.ncols()), &(&g * &b))
        }
    })
}

/// `Φ(t)⁻¹` applied to the generating vertical directions at `λ(t)`.
fn pulled_back_vertical(
    sys: &HamiltonianSystem,
    zt: &DVector<f64>,
    phi: &DMatrix<f64>,
    kind: MapKind,
) -> Result<DMatrix<f64>> {
    linalg::solve(phi, &vertical_at(sys, zt, kind)?, "monodromy")
}

pub const GRAPH_CONDITION: f64 = 1e-10;

/// Graph coordinates of the Jacobi curve at the given sample times.
pub fn jacobi_curve_samples(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    kind: MapKind,
    times: &[f64],
    dt: f64,
) -> Result<GraphCoordinates> {
    let sp = Splitting::new(sys, z0, kind, None)?;
    jacobi_curve_samples_in(sys, z0, &sp, times, dt)
}

pub fn jacobi_curve_samples_in(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    sp: &Splitting,
    times: &[f64],
    dt: f64,
) -> Result<GraphCoordinates> {
    if sp.kind == MapKind::Reduced && sys.dimension() < 2 {
        return Err(Error::InvalidInput("the reduced Jacobi curve needs n >= 2".into()));
    }
    let mono = monodromy_at(sys, z0, times, dt)?;
    let mut s = Vec::with_capacity(times.len());
    let mut lag = 0.0f64;
    let mut sym = 0.0f64;
    for ((zt, phi), &t) in mono.iter().zip(times) {
        let y = pulled_back_vertical(sys, zt, phi, sp.kind)?;
        lag = lag.max(SubspaceFrame { columns: y.clone() }.isotropy_defect() / y.norm_squared().max(1.0));
        let (p, q) = sp.decompose(&y)?;
        let sv = p.clone().svd(false, false).singular_values;
        let (smin, smax) = sv.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        if !(smin > GRAPH_CONDITION * smax.max(1.0)) {
            return Err(Error::GraphDegenerate { time: t, sigma: smin });
        }
        let st = linalg::solve(&p.transpose(), &q.transpose(), "graph coordinates")?.transpose();
        sym = sym.max(linalg::asymmetry(&st));
        s.push(st);
    }
    Ok(GraphCoordinates {
        kind: sp.kind,
        times: times.to_vec(),
        s,
        lagrangian_defect: lag,
        symmetry_defect: sym,
        basis: sp.basis.clone(),
        drop: sp.drop,
    })
}

/// Base step of the Schwarzian difference stencils.
pub const SCHWARZIAN_STEP: f64 = 1e-2;
/// Integration step used for the Schwarzian samples.
pub const SCHWARZIAN_DT: f64 = 5e-4;

/// Sample times needed by [`schwarzian_curvature`] for base step `h`.
pub fn schwarzian_times(h: f64) -> Vec<f64> {
    vec![-2.0 * h, -h, -h / 2.0, 0.0, h / 2.0, h, 2.0 * h]
}

#[derive(Debug, Clone)]
pub struct Schwarzian {
    pub curvature: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
    pub acceleration: DMatrix<f64>,
    pub jerk: DMatrix<f64>,
    pub velocity_eigenvalues: Vec<f64>,
}

/// Curvature of a curve in graph coordinates at `t = 0`:
/// `½ Ṡ⁻¹S⃛ − ¾ (Ṡ⁻¹S̈)²`, symmetrized.
pub fn schwarzian_curvature(samples: &GraphCoordinates, h: f64) -> Result<Schwarzian> {
    let at = |t: f64| -> Result<&DMatrix<f64>> {
        samples
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * h.max(1.0))
            .map(|i| &samples.s[i])
            .ok_or_else(|| Error::InvalidInput(format!("missing Schwarzian sample at t = {t}")))
    };
    let (m2, m1, mh, z, ph, p1, p2) = (
        at(-2.0 * h)?,
        at(-h)?,
        at(-h / 2.0)?,
        at(0.0)?,
        at(h / 2.0)?,
        at(h)?,
        at(2.0 * h)?,
    );
    let d1 = |a2: &DMatrix<f64>, a1: &DMatrix<f64>, b1: &DMatrix<f64>, b2: &DMatrix<f64>, k: f64| {
        (a2 - a1 * 8.0 + b1 * 8.0 - b2) / (12.0 * k)
    };
    let d2 = |a2: &DMatrix<f64>, a1: &DMatrix<f64>, c: &DMatrix<f64>, b1: &DMatrix<f64>, b2: &DMatrix<f64>, k: f64| {
        (-a2 + a1 * 16.0 - c * 30.0 + b1 * 16.0 - b2) / (12.0 * k * k)
    };
    let d3 = |a2: &DMatrix<f64>, a1: &DMatrix<f64>, b1: &DMatrix<f64>, b2: &DMatrix<f64>, k: f64| {
        (b2 - b1 * 2.0 + a1 * 2.0 - a2) / (2.0 * k * k * k)
    };
    let velocity = (d1(m1, mh, ph, p1, h / 2.0) * 16.0 - d1(m2, m1, p1, p2, h)) / 15.0;
    let acceleration = (d2(m1, mh, z, ph, p1, h / 2.0) * 16.0 - d2(m2, m1, z, p1, p2, h)) / 15.0;
    let jerk = (d3(m1, mh, ph, p1, h / 2.0) * 4.0 - d3(m2, m1, p1, p2, h)) / 3.0;

    let (eig, _) = linalg::symmetric_eigen(&velocity);
    let scale = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.iter().any(|v| v.abs() <= 1e-8 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
        return Err(Error::VelocityForm(format!("is degenerate (eigenvalues {eig:?})")));
    }
    if !(eig.iter().all(|v| *v < 0.0) || eig.iter().all(|v| *v > 0.0)) {
        return Err(Error::VelocityForm(format!("is not sign-definite (eigenvalues {eig:?})")));
    }
    let vinv = linalg::inverse(&velocity, "velocity form")?;
    let a = &vinv * &acceleration;
    let b = &vinv * &jerk;
    let r = b * 0.5 - (&a * &a) * 0.75;
    Ok(Schwarzian {
        curvature: linalg::symmetrize(&r),
        velocity,
        acceleration,
        jerk,
        velocity_eigenvalues: eig,
    })
}

/// Curvature map at `z` extracted numerically from the Jacobi curve.
pub fn schwarzian_oracle(
    sys: &HamiltonianSystem,
    z: &DVector<f64>,
    kind: MapKind,
    drop: Option<usize>,
) -> Result<(Schwarzian, GraphCoordinates)> {
    let sp = Splitting::new(sys, z, kind, drop)?;
    let run = |h: f64| -> Result<(Schwarzian, GraphCoordinates)> {
        let dt = SCHWARZIAN_DT * h / SCHWARZIAN_STEP;
        let samples = jacobi_curve_samples_in(sys, z, &sp, &schwarzian_times(h), dt)?;
        Ok((schwarzian_curvature(&samples, h)?, samples))
    };
    let first = run(SCHWARZIAN_STEP)?;
    // Stencil error grows with h²·|R|; resample on the curve's own time scale.
    let rho = linalg::symmetric_eigen(&first.0.curvature)
        .0
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if rho > 1.0 {
        return run(SCHWARZIAN_STEP / rho.sqrt());
    }
    Ok(first)
}

pub const ORACLE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kind: MapKind,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub closed_form: Vec<Vec<f64>>,
    pub oracle: Vec<Vec<f64>>,
    pub max_abs_difference: f64,
    /// Max entry difference divided by `max(1, max |entry|)`.
    pub relative_difference: f64,
    pub spectral_difference: f64,
    pub velocity_eigenvalues: Vec<f64>,
    /// `max |S̈(0)|` over the splitting complement. It vanishes when the
    /// complement is the canonical one.
    pub complement_defect: f64,
    pub lagrangian_defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Closed-form curvature map against the Schwarzian oracle in a common basis.
pub fn closed_form_vs_oracle(
    sys: &HamiltonianSystem,
    z: &DVector<f64>,
    kind: MapKind,
    tolerance: f64,
) -> Result<ComparisonReport> {
    let (sch, samples) = schwarzian_oracle(sys, z, kind, None)?;
    let state = sys.state(z)?;
    let forms = curvature_forms(sys.model(), &state)?;
    let closed = curvature_map_from_forms(&forms, kind, Some(samples.drop))?.matrix;
    let oracle = sch.curvature.transpose();
    let diff = (&closed - &oracle).amax();
    let scale = closed.amax().max(oracle.amax()).max(1.0);
    let (ec, _) = linalg::symmetric_eigen(&closed);
    let (eo, _) = linalg::symmetric_eigen(&oracle);
    let spectral = ec.iter().zip(&eo).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ComparisonReport {
        kind,
        x: state.x.iter().copied().collect(),
        p: state.p.iter().copied().collect(),
        closed_form: matrix_rows(&closed),
        oracle: matrix_rows(&oracle),
        max_abs_difference: diff,
        relative_difference: diff / scale,
        spectral_difference: spectral,
        velocity_eigenvalues: sch.velocity_eigenvalues,
        complement_defect: sch.acceleration.amax(),
        lagrangian_defect: samples.lagrangian_defect,
        tolerance,
        pass: diff / scale <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingKind {
    /// `det Q` changes sign.
    SignChange,
    /// `σ_min(Q)` touches zero without a sign change (even multiplicity).
    SingularMinimum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugatePoint {
    pub time: f64,
    pub kind: CrossingKind,
    pub sigma_min: f64,
}

/// `Q(t)` together with the vertical basis it was computed from.
fn q_block(
    sys: &HamiltonianSystem,
    sp: &Splitting,
    z: &DVector<f64>,
    phi: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let at = vertical_at(sys, z, sp.kind)?;
    let y = linalg::solve(phi, &at, "monodromy")?;
    Ok((sp.decompose(&y)?.1, at))
}

/// Orientation of `b` relative to the nearby basis `a` of a moving subspace.
fn relative_orientation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a.transpose() * b).determinant().signum()
}

fn sigma_min(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(*v))
}

/// Times in `(0, T]` where the Jacobi curve meets the vertical space at
/// `t = 0`, i.e. where `Q(t)` in `Y = Ξ P + T Q` is singular.
pub fn conjugate_points(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    kind: MapKind,
    t_end: f64,
    dt: f64,
) -> Result<Vec<ConjugatePoint>> {
    let sp = Splitting::new(sys, z0, kind, None)?;
    let tr = variational_flow(sys, z0, t_end, dt)?;
    let phis = tr.monodromy.as_ref().expect("monodromy");
    // The Π basis at λ(t) can flip orientation; det Q is tracked relative
    // to a continuously oriented basis.
    let mut dets = Vec::with_capacity(tr.times.len());
    let mut sig = Vec::with_capacity(tr.times.len());
    let mut bases: Vec<DMatrix<f64>> = Vec::with_capacity(tr.times.len());
    let mut orient = Vec::with_capacity(tr.times.len());
    for (z, phi) in tr.states.iter().zip(phis) {
        let (q, at) = q_block(sys, &sp, z, phi)?;
        let o = match bases.last() {
            Some(prev) => orient[orient.len() - 1] * relative_orientation(prev, &at),
            None => 1.0,
        };
        dets.push(o * q.determinant());
        sig.push(sigma_min(&q));
        bases.push(at);
        orient.push(o);
    }
    let mut out = Vec::new();
    let mut sign_cells = Vec::new();
    for i in 1..tr.times.len() - 1 {
        let (a, b) = (dets[i], dets[i + 1]);
        if a == 0.0 || a.signum() != b.signum() {
            // Bisect on one RK4 step from the grid point.
            let (z, phi) = (&tr.states[i], &phis[i]);
            let h = tr.times[i + 1] - tr.times[i];
            let (mut lo, mut hi) = (0.0f64, h);
            let fa = a;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (zm, pm) = rk4_advance(sys, z, phi, mid)?;
                let (qm, am) = q_block(sys, &sp, &zm, &pm)?;
                let dm = orient[i] * relative_orientation(&bases[i], &am) * qm.determinant();
                if dm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if dm.signum() == fa.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if (hi - lo).abs() < 1e-13 {
                    break;
                }
            }
            let tc = tr.times[i] + 0.5 * (lo + hi);
            let (zc, pc) = rk4_advance(sys, z, phi, 0.5 * (lo + hi))?;
            out.push(ConjugatePoint {
                time: tc,
                kind: CrossingKind::SignChange,
                sigma_min: sigma_min(&q_block(sys, &sp, &zc, &pc)?.0),
            });
            sign_cells.push(i);
        }
    }
    // Even-multiplicity crossings: V-shaped minima of σ_min reaching zero.
    for i in 2..tr.times.len().saturating_sub(2) {
        if !(sig[i] < sig[i - 1] && sig[i] <= sig[i + 1]) {
            continue;
        }
        if sign_cells.iter().any(|&c| c + 1 >= i && c <= i) {
            continue;
        }
        let h = tr.times[i + 1] - tr.times[i];
        let left = (sig[i - 1] - sig[i - 2]) / h;
        let right = (sig[i + 2] - sig[i + 1]) / h;
        let c = left.abs().max(right.abs());
        if !(left < 0.0 && right > 0.0 && sig[i] <= 0.75 * c * h.abs()) {
            continue;
        }
        // Vertex of the two secant lines.
        let (t1, s1) = (tr.times[i - 1], sig[i - 1]);
        let (t2, s2) = (tr.times[i + 1], sig[i + 1]);
        let tv = (s2 - s1 + left * t1 - right * t2) / (left - right);
        out.push(ConjugatePoint {
            time: tv,
            kind: CrossingKind::SingularMinimum,
            sigma_min: sig[i],
        });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RSource {
    ClosedForm,
    Schwarzian,
}

/// Normal moving frame along an extremal, expressed in coordinates
/// `(a; b) ↔ Ξ(0) a + T(0) b` of the tangent space at `t = 0`.
#[derive(Debug, Clone)]
pub struct NormalFrameState {
    pub kind: MapKind,
    pub times: Vec<f64>,
    pub e: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    /// Curvature map in the frame, `Oᵀ M O`.
    pub r: Vec<DMatrix<f64>>,
    pub rotation: Vec<DMatrix<f64>>,
    /// `Φ(t)⁻¹ Ξ(t) O(t)` in the same coordinates.
    pub flow_e: Vec<DMatrix<f64>>,
    pub darboux_defect: f64,
    pub flow_defect: f64,
    /// Largest symmetric part of the rotation generator, expected ≈ 0.
    pub generator_symmetric_part: f64,
    /// Deviation of the transversal block of `Ξ̇ − DH⃗·Ξ` from `−I`.
    pub transversal_defect: f64,
}

/// `σ` in splitting coordinates: `[[0, −I], [I, 0]]`.
pub fn frame_symplectic(k: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        j[(i, k + i)] = -1.0;
        j[(k + i, i)] = 1.0;
    }
    j
}

pub const FRAME_DERIVATIVE_STEP: f64 = 1e-5;

struct FrameLayout {
    n: usize,
    k: usize,
}

impl FrameLayout {
    fn len(&self) -> usize {
        let (n, k) = (self.n, self.k);
        2 * n + 4 * n * n + k * k + 4 * k * k
    }
    fn z(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, 2 * self.n).into_owned()
    }
    fn mat(&self, y: &DVector<f64>, off: usize, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(r, c, &y.as_slice()[off..off + r * c])
    }
    fn phi(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.mat(y, 2 * self.n, 2 * self.n, 2 * self.n)
    }
    fn o_off(&self) -> usize {
        2 * self.n + 4 * self.n * self.n
    }
    fn o(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.mat(y, self.o_off(), self.k, self.k)
    }
    fn e_off(&self) -> usize {
        self.o_off() + self.k * self.k
    }
    fn e(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.mat(y, self.e_off(), 2 * self.k, self.k)
    }
    fn f_off(&self) -> usize {
        self.e_off() + 2 * self.k * self.k
    }
    fn f(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.mat(y, self.f_off(), 2 * self.k, self.k)
    }
    fn pack(
        &self,
        z: &DVector<f64>,
        phi: &DMatrix<f64>,
        o: &DMatrix<f64>,
        e: &DMatrix<f64>,
        f: &DMatrix<f64>,
    ) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(z.as_slice());
        v.extend_from_slice(phi.as_slice());
        v.extend_from_slice(o.as_slice());
        v.extend_from_slice(e.as_slice());
        v.extend_from_slice(f.as_slice());
        DVector::from_vec(v)
    }
}

/// Integrate the extremal, the variational flow, the frame rotation and the
/// normal-frame equations `E′ = F`, `F′ = −E R(t)` on `[0, T]`.
pub fn normal_frame_propagate(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    kind: MapKind,
    source: RSource,
    t_end: f64,
    dt: f64,
    o0: &DMatrix<f64>,
) -> Result<NormalFrameState> {
    let n = sys.dimension();
    let sp0 = Splitting::new(sys, z0, kind, None)?;
    let drop = sp0.drop;
    let k = sp0.rank();
    if o0.nrows() != k || (o0.transpose() * o0 - DMatrix::identity(k, k)).amax() > 1e-10 {
        return Err(Error::InvalidInput(format!("initial rotation must be a {k}×{k} orthogonal matrix")));
    }
    let lay = FrameLayout { n, k };
    let e0 = stack(o0, &DMatrix::zeros(k, k));
    let f0 = stack(&DMatrix::zeros(k, k), &(-o0));
    let y0 = lay.pack(z0, &DMatrix::identity(2 * n, 2 * n), o0, &e0, &f0);

    let curvature = |z: &DVector<f64>| -> Result<DMatrix<f64>> {
        match source {
            RSource::ClosedForm => {
                let state = sys.state(z)?;
                let forms = curvature_forms(sys.model(), &state)?;
                Ok(curvature_map_from_forms(&forms, kind, Some(drop))?.matrix)
            }
            RSource::Schwarzian => Ok(schwarzian_oracle(sys, z, kind, Some(drop))?.0.curvature.transpose()),
        }
    };
    // Rotation generator α and the transversal block β of Ξ̇ − DH⃗·Ξ.
    let generator = |z: &DVector<f64>, h: &DVector<f64>, jac: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>, Splitting)> {
        let sp = Splitting::new(sys, z, kind, Some(drop))?;
        let d = FRAME_DERIVATIVE_STEP;
        let plus = Splitting::new(sys, &(z + h * d), kind, Some(drop))?;
        let minus = Splitting::new(sys, &(z - h * d), kind, Some(drop))?;
        let xi_dot = (&plus.vertical - &minus.vertical) / (2.0 * d);
        let c = sp.coefficients(&(xi_dot - jac * &sp.vertical))?;
        Ok((c.rows(0, k).into_owned(), c.rows(k, k).into_owned(), sp))
    };

    let rhs = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let z = lay.z(y);
        let phi = lay.phi(y);
        let o = lay.o(y);
        let e = lay.e(y);
        let f = lay.f(y);
        let (h, jac) = sys.field_and_jacobian(&z)?;
        let (alpha, _, _) = generator(&z, &h, &jac)?;
        let anti = (&alpha - alpha.transpose()) * 0.5;
        let m = curvature(&z)?;
        let r = o.transpose() * m * &o;
        let dphi = &jac * &phi;
        let dot = -(anti * &o);
        let de = f.clone();
        let df = -(e * r);
        Ok(lay.pack(&h, &dphi, &dot, &de, &df))
    };

    let jw = frame_symplectic(k);
    let mut st = NormalFrameState {
        kind,
        times: Vec::new(),
        e: Vec::new(),
        f: Vec::new(),
        r: Vec::new(),
        rotation: Vec::new(),
        flow_e: Vec::new(),
        darboux_defect: 0.0,
        flow_defect: 0.0,
        generator_symmetric_part: 0.0,
        transversal_defect: 0.0,
    };
    let record = |t: f64, y: &DVector<f64>, st: &mut NormalFrameState| -> Result<()> {
        let z = lay.z(y);
        let phi = lay.phi(y);
        let o = lay.o(y);
        let e = lay.e(y);
        let f = lay.f(y);
        let (h, jac) = sys.field_and_jacobian(&z)?;
        let (alpha, beta, sp) = generator(&z, &h, &jac)?;
        st.generator_symmetric_part = st
            .generator_symmetric_part
            .max(((&alpha + alpha.transpose()) * 0.5).amax());
        st.transversal_defect = st
            .transversal_defect
            .max((beta + DMatrix::<f64>::identity(k, k)).amax());
        let m = curvature(&z)?;
        let pulled = linalg::solve(&phi, &(&sp.vertical * &o), "monodromy")?;
        let coords = sp0.coefficients(&pulled)?.rows(0, 2 * k).into_owned();
        let ee = e.transpose() * &jw * &e;
        let ff = f.transpose() * &jw * &f;
        let ef = e.transpose() * &jw * &f - DMatrix::<f64>::identity(k, k);
        let darboux = ee.amax().max(ff.amax()).max(ef.amax());
        st.darboux_defect = st.darboux_defect.max(darboux);
        st.flow_defect = st.flow_defect.max((&coords - &e).amax());
        st.times.push(t);
        st.r.push(o.transpose() * m * &o);
        st.rotation.push(o);
        st.e.push(e);
        st.f.push(f);
        st.flow_e.push(coords);
        Ok(())
    };

    let mut y = y0;
    let mut t = 0.0f64;
    record(t, &y, &mut st)?;
    let steps = (t_end.abs() / dt.abs()).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    for i in 1..=steps {
        y = rk4_generic(&rhs, &y, h)?;
        let z = lay.z(&y);
        if *sys.model().topology() != crate::metric::Topology::Torus && !sys.model().in_box(&z.as_slice()[..n]) {
            return Err(Error::LeftValidityBox {
                time: t + h,
                x: z.as_slice()[..n].to_vec(),
            });
        }
        t = h * i as f64;
        record(t, &y, &mut st)?;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricModel;

    fn oscillator(k: f64) -> HamiltonianSystem {
        HamiltonianSystem::new(MetricModel::new(1, "y1^2", &format!("0.5*{k}*x1^2")).unwrap())
    }

    #[test]
    fn free_particle_graph_is_minus_t() {
        let sys = HamiltonianSystem::new(MetricModel::new(1, "y1^2", "0").unwrap());
        let z = DVector::from_vec(vec![0.0, 1.0]);
        let times = [-0.5, 0.25, 1.0];
        let g = jacobi_curve_samples(&sys, &z, MapKind::Nonreduced, &times, 1e-2).unwrap();
        for (t, s) in times.iter().zip(&g.s) {
            assert!((s[(0, 0)] + t).abs() < 1e-12);
        }
    }

    #[test]
    fn oscillator_graph_is_minus_tangent() {
        for k in [0.5, 1.0, 4.0] {
            let sys = oscillator(k);
            let z = DVector::from_vec(vec![0.2, 0.9]);
            let times = [-0.3, 0.4];
            let g = jacobi_curve_samples(&sys, &z, MapKind::Nonreduced, &times, 1e-3).unwrap();
            let w = f64::sqrt(k);
            for (t, s) in times.iter().zip(&g.s) {
                assert!((s[(0, 0)] + (w * t).tan() / w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn scalar_schwarzian_calibration() {
        // S(t) = −tan(ωt)/ω has curvature ω².
        for k in [0.5, 1.0, 4.0] {
            let w = f64::sqrt(k);
            let times = schwarzian_times(SCHWARZIAN_STEP);
            let s = times
                .iter()
                .map(|t| DMatrix::from_element(1, 1, -(w * t).tan() / w))
                .collect();
            let g = GraphCoordinates {
                kind: MapKind::Nonreduced,
                times,
                s,
                lagrangian_defect: 0.0,
                symmetry_defect: 0.0,
                basis: DMatrix::identity(1, 1),
                drop: 0,
            };
            let r = schwarzian_curvature(&g, SCHWARZIAN_STEP).unwrap();
            assert!((r.curvature[(0, 0)] - k).abs() < 1e-6 * k, "{}", r.curvature[(0, 0)]);
            assert!((r.velocity[(0, 0)] + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn schwarzian_is_mobius_invariant() {
        // S ↦ S (I + C S)⁻¹ changes the complement, not the curvature.
        let times = schwarzian_times(SCHWARZIAN_STEP);
        let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, -0.2]);
        let base = |t: f64| {
            DMatrix::from_row_slice(2, 2, &[-(t + 0.4 * t.powi(3)), -0.1 * t.powi(3), -0.1 * t.powi(3), -(t + 1.1 * t.powi(3))])
        };
        let mk = |f: &dyn Fn(f64) -> DMatrix<f64>| GraphCoordinates {
            kind: MapKind::Nonreduced,
            times: times.clone(),
            s: times.iter().map(|&t| f(t)).collect(),
            lagrangian_defect: 0.0,
            symmetry_defect: 0.0,
            basis: DMatrix::identity(2, 2),
            drop: 0,
        };
        let plain = schwarzian_curvature(&mk(&base), SCHWARZIAN_STEP).unwrap();
        let moved = schwarzian_curvature(
            &mk(&|t| {
                let s = base(t);
                &s * (DMatrix::identity(2, 2) + &c * &s).try_inverse().unwrap()
            }),
            SCHWARZIAN_STEP,
        )
        .unwrap();
        assert!((plain.curvature - moved.curvature).amax() < 1e-6);
    }

    #[test]
    fn oscillator_oracle_matches_closed_form() {
        for k in [0.5, 1.0, 4.0] {
            let sys = oscillator(k);
            let z = DVector::from_vec(vec![0.2, 0.9]);
            let rep = closed_form_vs_oracle(&sys, &z, MapKind::Nonreduced, 1e-5).unwrap();
            assert!((rep.oracle[0][0] - k).abs() < 1e-5, "{}", rep.oracle[0][0]);
            assert!(rep.pass);
        }
    }

    #[test]
    fn oscillator_vertical_crossing() {
        let sys = oscillator(4.0);
        let z = DVector::from_vec(vec![0.0, 1.0]);
        let cps = conjugate_points(&sys, &z, MapKind::Nonreduced, 2.0, 1e-3).unwrap();
        assert_eq!(cps.len(), 1);
        assert!((cps[0].time - std::f64::consts::PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn flat_normal_frame_is_affine() {
        let sys = HamiltonianSystem::new(MetricModel::new(2, "y1^2+y2^2", "0").unwrap());
        let z = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.5]);
        let nf = normal_frame_propagate(&sys, &z, MapKind::Nonreduced, RSource::ClosedForm, 1.0, 1e-2, &DMatrix::identity(2, 2)).unwrap();
        let last = nf.e.last().unwrap();
        let expect = &nf.e[0] + &nf.f[0] * 1.0;
        assert!((last - expect).amax() < 1e-12);
        assert!((nf.f.last().unwrap() - &nf.f[0]).amax() < 1e-12);
        assert!(nf.darboux_defect < 1e-12 && nf.flow_defect < 1e-9);
    }

    fn sphere() -> HamiltonianSystem {
        HamiltonianSystem::new(MetricModel::new(2, "4*(y1^2+y2^2)/(1+x1^2+x2^2)^2", "0").unwrap())
    }

    #[test]
    fn sphere_reduced_oracle_is_one() {
        let sys = sphere();
        // Unit speed: F*(p) = 1 with g = 4δ at the origin means |p| = 2.
        let z = DVector::from_vec(vec![0.1, -0.2, 2.0, 0.5]);
        let rep = closed_form_vs_oracle(&sys, &z, MapKind::Reduced, ORACLE_TOLERANCE).unwrap();
        let f2 = sys.state(&z).unwrap().f_star.powi(2);
        assert!((rep.oracle[0][0] - f2).abs() < 1e-4 * f2.max(1.0), "{:?}", rep.oracle);
        assert!(rep.pass, "{rep:?}");
        let rep = closed_form_vs_oracle(&sys, &z, MapKind::Nonreduced, ORACLE_TOLERANCE).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn sphere_first_conjugate_time_is_pi() {
        let sys = sphere();
        // The unit circle is a great circle; at x = (1, 0) the metric is δ.
        let z = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        for kind in [MapKind::Nonreduced, MapKind::Reduced] {
            let cps = conjugate_points(&sys, &z, kind, 3.5, 1e-3).unwrap();
            assert!(!cps.is_empty());
            assert!((cps[0].time - std::f64::consts::PI).abs() < 1e-3, "{cps:?}");
        }
    }

    #[test]
    fn riemannian_with_potential_matches_oracle() {
        let sys = HamiltonianSystem::new(
            MetricModel::new(2, "(1+0.2*x2^2)*y1^2+y2^2", "sin(x1)").unwrap(),
        );
        let z = DVector::from_vec(vec![0.3, -0.4, 0.7, 0.9]);
        for kind in [MapKind::Nonreduced, MapKind::Reduced] {
            let rep = closed_form_vs_oracle(&sys, &z, kind, ORACLE_TOLERANCE).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn velocity_is_negative_definite() {
        let sys = sphere();
        let z = DVector::from_vec(vec![0.3, 0.1, 1.0, -1.5]);
        let (sch, g) = schwarzian_oracle(&sys, &z, MapKind::Nonreduced, None).unwrap();
        assert!(sch.velocity_eigenvalues.iter().all(|e| (e + 1.0).abs() < 1e-6));
        assert!(g.lagrangian_defect < 1e-10);
    }

    #[test]
    fn sphere_normal_frame_has_unit_curvature() {
        let sys = sphere();
        let z = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let nf = normal_frame_propagate(&sys, &z, MapKind::Reduced, RSource::ClosedForm, 1.0, 1e-2, &DMatrix::identity(1, 1)).unwrap();
        for r in &nf.r {
            assert!((r[(0, 0)] - 1.0).abs() < 1e-8);
        }
        // E′′ = −E with E(0) = 1, E′(0) = F(0) = 0 in the transversal part.
        let t = *nf.times.last().unwrap();
        assert!((nf.e.last().unwrap()[(0, 0)] - t.cos()).abs() < 1e-8);
        assert!(nf.darboux_defect < 1e-10, "{}", nf.darboux_defect);
        assert!(nf.flow_defect < 1e-5, "{}", nf.flow_defect);
        assert!(nf.generator_symmetric_part < 1e-6);
    }

    #[test]
    fn normal_frame_rotation_invariance() {
        let sys = HamiltonianSystem::new(
            MetricModel::new(3, "(1+0.1*x2^2)*y1^2+y2^2+(1+0.2*x1^2)*y3^2", "0.3*x1*x3").unwrap(),
        );
        let z = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.6, 0.5, 0.4]);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let a = normal_frame_propagate(&sys, &z, MapKind::Reduced, RSource::ClosedForm, 0.5, 1e-2, &DMatrix::identity(2, 2)).unwrap();
        let b = normal_frame_propagate(&sys, &z, MapKind::Reduced, RSource::ClosedForm, 0.5, 1e-2, &rot).unwrap();
        for (ra, rb) in a.r.iter().zip(&b.r) {
            assert!((&rot * rb * rot.transpose() - ra).amax() < 1e-9);
        }
        assert!(a.flow_defect < 1e-5 && b.flow_defect < 1e-5, "{} {}", a.flow_defect, b.flow_defect);
        assert!(a.darboux_defect < 1e-7);
    }
}
