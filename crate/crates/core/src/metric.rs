//! Finsler metrics on a single chart: fundamental tensor, Cartan tensor,
//! spray, nonlinear connection, Chern connection and the Legendre transform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse, ExprAst, Scalar, VarKind};
use crate::jets::{all_vars, seed, Jet, Var};
use crate::linalg;
use crate::tensor::Tensor3;

/// Default zero-section guard ε₀ on F(v).
pub const ZERO_SECTION_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    Euclidean,
    /// Every coordinate is periodic with the period given by the box width.
    Torus,
}

/// Coordinate bounds `lo[i] ≤ x_i ≤ hi[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ValidityBox {
    pub fn unbounded(n: usize) -> Self {
        ValidityBox {
            lo: vec![-1e6; n],
            hi: vec![1e6; n],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// The box clipped to `[-limit, limit]`, used when sampling.
    pub fn clipped(&self, limit: f64) -> ValidityBox {
        ValidityBox {
            lo: self.lo.iter().map(|v| v.max(-limit)).collect(),
            hi: self.hi.iter().map(|v| v.min(limit)).collect(),
        }
    }
}

/// A Finsler structure `F²(x, y)` together with a potential `U(x)`.
#[derive(Debug, Clone)]
pub struct MetricModel {
    n: usize,
    f2: ExprAst,
    u: ExprAst,
    topology: Topology,
    bounds: ValidityBox,
    reversible: bool,
    guard: f64,
}

impl MetricModel {
    pub fn new(dimension: usize, f2: &str, u: &str) -> Result<Self> {
        Self::from_asts(parse(f2, dimension)?, parse(u, dimension)?)
    }

    pub fn from_asts(f2: ExprAst, u: ExprAst) -> Result<Self> {
        let n = f2.dimension();
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if u.dimension() != n {
            return Err(Error::InvalidInput(format!(
                "F² has dimension {n} but U has dimension {}",
                u.dimension()
            )));
        }
        if u.depends_on(VarKind::Y) {
            return Err(Error::InvalidInput(
                "the potential U may depend on x only".into(),
            ));
        }
        Ok(MetricModel {
            n,
            f2,
            u,
            topology: Topology::Euclidean,
            bounds: ValidityBox::unbounded(n),
            reversible: false,
            guard: ZERO_SECTION_GUARD,
        })
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self
    }

    pub fn with_box(mut self, bounds: ValidityBox) -> Self {
        assert_eq!(bounds.lo.len(), self.n);
        self.bounds = bounds;
        self
    }

    pub fn with_reversible(mut self, reversible: bool) -> Self {
        self.reversible = reversible;
        self
    }

    pub fn with_potential(mut self, u: &str) -> Result<Self> {
        let u = parse(u, self.n)?;
        if u.depends_on(VarKind::Y) {
            return Err(Error::InvalidInput(
                "the potential U may depend on x only".into(),
            ));
        }
        self.u = u;
        Ok(self)
    }

    pub fn with_zero_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn f2_ast(&self) -> &ExprAst {
        &self.f2
    }

    pub fn u_ast(&self) -> &ExprAst {
        &self.u
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn validity_box(&self) -> &ValidityBox {
        &self.bounds
    }

    pub fn declared_reversible(&self) -> bool {
        self.reversible
    }

    pub fn zero_guard(&self) -> f64 {
        self.guard
    }

    pub fn f2(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.f2.eval(x, y)?)
    }

    pub fn norm(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.f2(x, y)?.max(0.0).sqrt())
    }

    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        let y = vec![0.0; self.n];
        Ok(self.u.eval(x, &y)?)
    }

    /// `U`, its coordinate gradient `∂U/∂x` and coordinate Hessian.
    pub fn potential_jet(&self, x: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = self.n;
        let active: Vec<Var> = (0..n).map(|i| (VarKind::X, i)).collect();
        let (xj, yj) = seed(x, &vec![0.0; n], &active, 2)?;
        let u = self.u.eval(&xj, &yj)?;
        let grad = DVector::from_fn(n, |i, _| u.grad(i));
        let hess = DMatrix::from_fn(n, n, |i, j| {
            let d = u.derivative(i);
            d.grad(j)
        });
        Ok((u.value(), grad, hess))
    }

    /// Checks `F(y) > ε₀` and returns `F(y)`.
    pub fn check_section(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let norm = self.norm(x, y)?;
        if !(norm > self.guard) {
            return Err(Error::ZeroSection {
                norm,
                guard: self.guard,
            });
        }
        Ok(norm)
    }

    /// Jet of `L = ½F²` at `(x, y)` in the given active coordinates.
    pub fn lagrangian_jet(&self, x: &[f64], y: &[f64], active: &[Var], order: usize) -> Result<Jet> {
        self.check_section(x, y)?;
        let (xj, yj) = seed(x, y, active, order)?;
        Ok(self.f2.eval(&xj, &yj)?.scale(0.5))
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        self.bounds.contains(x)
    }

    /// Reduce periodic coordinates into the box; no-op for Euclidean charts.
    pub fn wrap(&self, x: &mut [f64]) {
        if self.topology == Topology::Torus {
            for (i, xi) in x.iter_mut().enumerate() {
                let lo = self.bounds.lo[i];
                let period = self.bounds.hi[i] - lo;
                *xi = lo + (*xi - lo).rem_euclid(period);
            }
        }
    }
}

/// Pointwise connection data at `(x, v)`.
#[derive(Debug, Clone)]
pub struct TensorBundle {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// `C_ijk`.
    pub cartan: Tensor3,
    /// Formal Christoffel symbols `γ^k_ij` stored at `(k, i, j)`.
    pub gamma: Tensor3,
    pub spray: DVector<f64>,
    /// `N^i_j` stored at `(i, j)`.
    pub nonlinear: DMatrix<f64>,
    /// Chern symbols `Γ^i_jk` stored at `(i, j, k)`.
    pub chern: Tensor3,
}

/// Connection quantities as jets in `x1..xn, y1..yn`. Built from an order
/// `3 + extra` jet of `L`, so the Chern symbols carry `extra` orders of
/// derivatives.
pub(crate) struct ConnectionJets {
    pub n: usize,
    pub g: Vec<Jet>,
    pub g_inv: Vec<Jet>,
    pub cartan: Vec<Jet>,
    pub gamma: Vec<Jet>,
    pub spray: Vec<Jet>,
    pub nonlinear: Vec<Jet>,
    pub chern: Vec<Jet>,
}

pub(crate) fn connection_jets(
    model: &MetricModel,
    x: &[f64],
    v: &[f64],
    extra: usize,
) -> Result<ConnectionJets> {
    let n = model.n;
    let vars = all_vars(n);
    let l = model.lagrangian_jet(x, v, &vars, 3 + extra)?;
    let i2 = |i: usize, j: usize| i * n + j;
    let i3 = |i: usize, j: usize, k: usize| (i * n + j) * n + k;

    let ly: Vec<Jet> = (0..n).map(|i| l.derivative(n + i)).collect();
    let g: Vec<Jet> = (0..n * n).map(|ij| ly[ij / n].derivative(n + ij % n)).collect();
    check_positive_definite(&DMatrix::from_fn(n, n, |i, j| g[i2(i, j)].value()))?;
    let g_inv = jet_inverse(&g, n)?;

    let cartan: Vec<Jet> = (0..n * n * n)
        .map(|ijk| g[ijk / n].derivative(n + ijk % n).scale(0.5))
        .collect();

    let lx: Vec<Jet> = (0..n).map(|i| l.derivative(i)).collect();
    let yv: Vec<Jet> = (0..n)
        .map(|j| Jet::variable(l.layout(), 3 + extra, n + j, v[j]))
        .collect();
    // b_l = L_{x^j y^l} y^j − L_{x^l}
    let b: Vec<Jet> = (0..n)
        .map(|li| {
            let mut acc = -&lx[li];
            for j in 0..n {
                acc = acc + lx[j].derivative(n + li) * &yv[j];
            }
            acc
        })
        .collect();
    let spray: Vec<Jet> = (0..n)
        .map(|k| sum((0..n).map(|li| &g_inv[i2(k, li)] * &b[li])))
        .collect();
    let nonlinear: Vec<Jet> = (0..n * n)
        .map(|ij| spray[ij / n].derivative(n + ij % n).scale(0.5))
        .collect();

    // dg[(a, b, c)] = ∂g_ab/∂x^c
    let dg: Vec<Jet> = (0..n * n * n).map(|abc| g[abc / n].derivative(abc % n)).collect();
    let mut gamma = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let s = sum((0..n).map(|li| {
                    let t = &dg[i3(i, li, j)] + &dg[i3(li, j, i)] - &dg[i3(i, j, li)];
                    &g_inv[i2(k, li)] * &t
                }));
                gamma.push(s.scale(0.5));
            }
        }
    }

    let mut chern = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let corr = sum((0..n).map(|li| {
                    let inner = sum((0..n).map(|m| {
                        &cartan[i3(j, li, m)] * &nonlinear[i2(m, k)]
                            + &cartan[i3(li, k, m)] * &nonlinear[i2(m, j)]
                            - &cartan[i3(j, k, m)] * &nonlinear[i2(m, li)]
                    }));
                    &g_inv[i2(i, li)] * &inner
                }));
                chern.push(&gamma[i3(i, j, k)] - &corr);
            }
        }
    }

    Ok(ConnectionJets {
        n,
        g,
        g_inv,
        cartan,
        gamma,
        spray,
        nonlinear,
        chern,
    })
}

fn sum<I: Iterator<Item = Jet>>(mut it: I) -> Jet {
    let first = it.next().expect("nonempty sum");
    it.fold(first, |a, b| a + b)
}

/// Gauss–Jordan inverse of an `n×n` jet matrix with partial pivoting on
/// the base values.
pub(crate) fn jet_inverse(a: &[Jet], n: usize) -> Result<Vec<Jet>> {
    let mut m: Vec<Jet> = a.to_vec();
    let mut inv: Vec<Jet> = (0..n * n)
        .map(|ij| a[0].lift(if ij / n == ij % n { 1.0 } else { 0.0 }))
        .collect();
    let scale = a.iter().fold(0.0f64, |s, j| s.max(j.value().abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| m[r * n + col].value().abs().total_cmp(&m[s * n + col].value().abs()))
            .expect("nonempty range");
        if m[piv * n + col].value().abs() <= 1e-14 * scale {
            return Err(Error::Singular("fundamental tensor"));
        }
        if piv != col {
            for c in 0..n {
                m.swap(piv * n + c, col * n + c);
                inv.swap(piv * n + c, col * n + c);
            }
        }
        let r = m[col * n + col].recip();
        for c in 0..n {
            m[col * n + c] = &m[col * n + c] * &r;
            inv[col * n + c] = &inv[col * n + c] * &r;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row * n + col].clone();
            for c in 0..n {
                m[row * n + c] = &m[row * n + c] - &(&f * &m[col * n + c]);
                inv[row * n + c] = &inv[row * n + c] - &(&f * &inv[col * n + c]);
            }
        }
    }
    Ok(inv)
}

fn check_positive_definite(g: &DMatrix<f64>) -> Result<()> {
    let min = linalg::min_eigenvalue(g);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

fn values_matrix(j: &[Jet], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| j[a * n + b].value())
}

fn values_tensor(j: &[Jet], n: usize) -> Tensor3 {
    Tensor3 {
        n,
        data: j.iter().map(|v| v.value()).collect(),
    }
}

/// `g_ij(v) = ½ ∂²F²/∂y^i∂y^j`.
pub fn fundamental_tensor(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.n;
    let active: Vec<Var> = (0..n).map(|i| (VarKind::Y, i)).collect();
    let l = model.lagrangian_jet(x, v, &active, 2)?;
    let g = DMatrix::from_fn(n, n, |i, j| l.derivative(i).grad(j));
    check_positive_definite(&g)?;
    Ok(g)
}

/// `C_ijk = ½ ∂g_ij/∂y^k`.
pub fn cartan_tensor(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<Tensor3> {
    let n = model.n;
    let active: Vec<Var> = (0..n).map(|i| (VarKind::Y, i)).collect();
    let l = model.lagrangian_jet(x, v, &active, 3)?;
    Ok(Tensor3::from_fn(n, |i, j, k| {
        0.5 * l.derivative(i).derivative(j).grad(k)
    }))
}

pub fn chern_connection(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<TensorBundle> {
    Ok(bundle_from_jets(&connection_jets(model, x, v, 0)?, x, v))
}

pub(crate) fn bundle_from_jets(cj: &ConnectionJets, x: &[f64], v: &[f64]) -> TensorBundle {
    let n = cj.n;
    TensorBundle {
        x: DVector::from_column_slice(x),
        v: DVector::from_column_slice(v),
        g: values_matrix(&cj.g, n),
        g_inv: values_matrix(&cj.g_inv, n),
        cartan: values_tensor(&cj.cartan, n),
        gamma: values_tensor(&cj.gamma, n),
        spray: DVector::from_fn(n, |i, _| cj.spray[i].value()),
        nonlinear: values_matrix(&cj.nonlinear, n),
        chern: values_tensor(&cj.chern, n),
    }
}

/// `p_i = g_ij(v) v^j`, which equals `∂L/∂y^i`.
pub fn legendre_to_cotangent(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    let g = fundamental_tensor(model, x, v)?;
    Ok(&g * DVector::from_column_slice(v))
}

const LEGENDRE_MAX_ITER: usize = 50;
const LEGENDRE_TARGET: f64 = 1e-13;
const LEGENDRE_ACCEPT: f64 = 1e-10;

/// Residual `L_y(x, v) − p` and Jacobian `g(v)`.
fn legendre_residual(
    model: &MetricModel,
    x: &[f64],
    v: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = model.n;
    let active: Vec<Var> = (0..n).map(|i| (VarKind::Y, i)).collect();
    let l = model.lagrangian_jet(x, v.as_slice(), &active, 2)?;
    let r = DVector::from_fn(n, |i, _| l.grad(i) - p[i]);
    let g = DMatrix::from_fn(n, n, |i, j| l.derivative(i).grad(j));
    Ok((r, g))
}

/// The vector `v` with `g_v(v, ·) = p`, by damped Newton iteration on
/// `∂L/∂y(x, v) = p`. The initial guess is `g(w)⁻¹ p` with the probe `w = p`
/// read as a vector.
pub fn legendre_to_tangent(model: &MetricModel, x: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    let p = DVector::from_column_slice(p);
    let pnorm = p.norm();
    if !(pnorm > 0.0) {
        return Err(Error::InvalidInput("covector p must be nonzero".into()));
    }
    let g0 = fundamental_tensor(model, x, p.as_slice())?;
    let mut v = linalg::solve(&g0, &DMatrix::from_column_slice(p.len(), 1, p.as_slice()), "Legendre seed")?
        .column(0)
        .into_owned();
    let (mut r, mut g) = legendre_residual(model, x, &v, &p)?;
    let mut rn = r.norm();
    for _ in 0..LEGENDRE_MAX_ITER {
        if rn <= LEGENDRE_TARGET * pnorm {
            return Ok(v);
        }
        let step = linalg::solve(&g, &DMatrix::from_column_slice(r.len(), 1, r.as_slice()), "Legendre step")?
            .column(0)
            .into_owned();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &v - &step * t;
            if let Ok((rc, gc)) = legendre_residual(model, x, &cand, &p) {
                let rcn = rc.norm();
                if rcn < rn {
                    v = cand;
                    r = rc;
                    g = gc;
                    rn = rcn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rn <= LEGENDRE_ACCEPT * pnorm {
        Ok(v)
    } else {
        Err(Error::LegendreNonConvergence {
            iterations: LEGENDRE_MAX_ITER,
            residual: rn,
        })
    }
}

/// A cotangent point `(x, p)` with its Legendre-dual velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    pub v: DVector<f64>,
    /// `F*(p) = F(v)`.
    pub f_star: f64,
}

impl PhaseState {
    pub fn from_cotangent(model: &MetricModel, x: &[f64], p: &[f64]) -> Result<Self> {
        let v = legendre_to_tangent(model, x, p)?;
        let f = model.norm(x, v.as_slice())?;
        Ok(PhaseState {
            x: DVector::from_column_slice(x),
            p: DVector::from_column_slice(p),
            v,
            f_star: f,
        })
    }

    pub fn from_tangent(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<Self> {
        let f = model.check_section(x, v)?;
        let p = legendre_to_cotangent(model, x, v)?;
        Ok(PhaseState {
            x: DVector::from_column_slice(x),
            p,
            v: DVector::from_column_slice(v),
            f_star: f,
        })
    }

    pub fn dimension(&self) -> usize {
        self.x.len()
    }

    /// `(x, p)` stacked.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.x.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.x[i] } else { self.p[i - n] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_homogeneity_residual: f64,
    pub max_euler_residual: f64,
    pub min_g_eigenvalue: f64,
    pub max_reversibility_gap: f64,
    pub reversible: bool,
    pub declared_reversible: bool,
    pub checks: Vec<ValidationCheck>,
    pub pass: bool,
}

/// Fixed-seed sample of a base point inside the (clipped) box and a unit
/// Euclidean direction.
pub fn sample_point(model: &MetricModel, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let b = model.bounds.clipped(5.0);
    let n = model.n;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = (b.lo[i], b.hi[i]);
            let margin = 0.05 * (hi - lo);
            rng.random_range(lo + margin..=hi - margin)
        })
        .collect();
    let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    y.iter_mut().for_each(|v| *v /= norm);
    (x, y)
}

pub const HOMOGENEITY_TOL: f64 = 1e-9;
pub const REVERSIBILITY_TOL: f64 = 1e-9;

/// Sampled checks of homogeneity, strong convexity and reversibility.
pub fn validate_metric(model: &MetricModel, samples: usize) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let n = model.n;
    let mut homog = 0.0f64;
    let mut euler = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut rev = 0.0f64;
    let mut failures = 0usize;
    for _ in 0..samples {
        let (x, y) = sample_point(model, &mut rng);
        let eval = || -> Result<(f64, f64, f64, f64)> {
            let f2 = model.f2(&x, &y)?;
            let mut h = 0.0f64;
            for c in [0.5, 2.0, 3.7] {
                let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
                let r = (model.f2(&x, &yc)? - c * c * f2).abs() / (c * c * f2.abs()).max(1e-300);
                h = h.max(r);
            }
            let active: Vec<Var> = (0..n).map(|i| (VarKind::Y, i)).collect();
            let l = model.lagrangian_jet(&x, &y, &active, 2)?;
            let e = ((0..n).map(|i| l.grad(i) * y[i]).sum::<f64>() - 2.0 * l.value()).abs()
                / (2.0 * l.value()).abs();
            let g = DMatrix::from_fn(n, n, |i, j| l.derivative(i).grad(j));
            let me = linalg::min_eigenvalue(&g);
            let ym: Vec<f64> = y.iter().map(|v| -v).collect();
            let gap = (model.norm(&x, &ym)? - model.norm(&x, &y)?).abs();
            Ok((h, e, me, gap))
        };
        match eval() {
            Ok((h, e, me, gap)) => {
                homog = homog.max(h);
                euler = euler.max(e);
                min_eig = min_eig.min(me);
                rev = rev.max(gap);
            }
            Err(_) => failures += 1,
        }
    }
    let reversible = rev <= REVERSIBILITY_TOL;
    let mut checks = vec![
        ValidationCheck {
            name: "homogeneity".into(),
            value: homog,
            tolerance: HOMOGENEITY_TOL,
            pass: homog <= HOMOGENEITY_TOL,
        },
        ValidationCheck {
            name: "euler".into(),
            value: euler,
            tolerance: HOMOGENEITY_TOL,
            pass: euler <= HOMOGENEITY_TOL,
        },
        ValidationCheck {
            name: "strong_convexity".into(),
            value: min_eig,
            tolerance: 0.0,
            pass: min_eig > 0.0,
        },
        ValidationCheck {
            name: "evaluation".into(),
            value: failures as f64,
            tolerance: 0.0,
            pass: failures == 0,
        },
    ];
    if model.reversible {
        checks.push(ValidationCheck {
            name: "declared_reversibility".into(),
            value: rev,
            tolerance: REVERSIBILITY_TOL,
            pass: reversible,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    ValidationReport {
        samples,
        max_homogeneity_residual: homog,
        max_euler_residual: euler,
        min_g_eigenvalue: min_eig,
        max_reversibility_gap: rev,
        reversible,
        declared_reversible: model.reversible,
        checks,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randers() -> MetricModel {
        MetricModel::new(2, "(sqrt(y1^2+y2^2) + 0.5*y1)^2", "0").unwrap()
    }

    #[test]
    fn euclidean_tensors() {
        let m = MetricModel::new(2, "y1^2+y2^2", "0").unwrap();
        let b = chern_connection(&m, &[0.3, -1.0], &[0.2, 0.7]).unwrap();
        assert!((b.g.clone() - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!(b.chern.max_abs() < 1e-15);
        assert!(b.gamma.max_abs() < 1e-15);
        assert!(b.nonlinear.amax() < 1e-15);
        assert!(b.cartan.max_abs() < 1e-15);
    }

    #[test]
    fn riemannian_g_is_coefficient_matrix() {
        let m = MetricModel::new(2, "(1+x1^2)*y1^2 + 2*x2*y1*y2 + 3*y2^2", "0").unwrap();
        let g = fundamental_tensor(&m, &[0.5, 0.2], &[1.0, -3.0]).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.25, 0.2, 0.2, 3.0]);
        assert!((g - expect).amax() < 1e-14);
    }

    #[test]
    fn zero_section_rejected() {
        let m = randers();
        assert!(matches!(
            fundamental_tensor(&m, &[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::ZeroSection { .. }) | Err(Error::Expr(_))
        ));
    }

    #[test]
    fn legendre_examples() {
        let e = MetricModel::new(2, "y1^2+y2^2", "0").unwrap();
        let v = legendre_to_tangent(&e, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!((v - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-14);
        let p = legendre_to_cotangent(&e, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((p - DVector::from_vec(vec![3.0, 4.0])).amax() < 1e-14);

        let m = randers();
        let p = [1.0, 0.0];
        let v = legendre_to_tangent(&m, &[0.0, 0.0], &p).unwrap();
        let back = legendre_to_cotangent(&m, &[0.0, 0.0], v.as_slice()).unwrap();
        assert!((back[0] - 1.0).abs() <= 1e-10 && back[1].abs() <= 1e-10);
        let f = m.norm(&[0.0, 0.0], v.as_slice()).unwrap();
        // p(v) = F*(p)²
        assert!((v[0] - f * f).abs() < 1e-10);
    }

    #[test]
    fn validation_examples() {
        let e = MetricModel::new(2, "y1^2+y2^2", "0").unwrap();
        let r = validate_metric(&e, 50);
        assert!(r.pass && r.reversible);
        assert!(r.max_homogeneity_residual <= 1e-12);

        let r = validate_metric(&randers(), 50);
        assert!(r.pass && !r.reversible);
        let gap = (randers().norm(&[0.0, 0.0], &[-1.0, 0.0]).unwrap()
            - randers().norm(&[0.0, 0.0], &[1.0, 0.0]).unwrap())
        .abs();
        assert!((gap - 1.0).abs() < 1e-15);

        let q = MetricModel::new(2, "y1^2+y2^2+0.1*sqrt(y1^4+y2^4)", "0").unwrap();
        let r = validate_metric(&q, 50);
        assert!(r.pass && r.reversible && r.min_g_eigenvalue > 0.0);
    }

    #[test]
    fn torus_wrap() {
        let m = MetricModel::new(1, "y1^2", "cos(x1)")
            .unwrap()
            .with_topology(Topology::Torus)
            .with_box(ValidityBox {
                lo: vec![0.0],
                hi: vec![std::f64::consts::TAU],
            });
        let mut x = [7.0];
        m.wrap(&mut x);
        assert!((x[0] - (7.0 - std::f64::consts::TAU)).abs() < 1e-15);
        let mut x = [-0.5];
        m.wrap(&mut x);
        assert!((x[0] - (std::f64::consts::TAU - 0.5)).abs() < 1e-15);
    }
}
