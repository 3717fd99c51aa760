//! Riemann and Chern curvature, flag curvature, the potential's gradient and
//! Hessian, and the closed-form curvature maps of natural mechanical
//! systems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::{
    bundle_from_jets, chern_connection, connection_jets, MetricModel, PhaseState, TensorBundle,
};
use crate::tensor::{Tensor3, Tensor4};

/// Curvature tensors at `(x, v)` together with the connection data.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub tensors: TensorBundle,
    /// `R^i_jkl` stored at `(i, j, k, l)`.
    pub riemann: Tensor4,
    /// `P^i_jkl = −∂Γ^i_jk/∂y^l` stored at `(i, j, k, l)`.
    pub chern_curvature: Tensor4,
}

impl CurvatureBundle {
    /// `R(a, b)c = R^i_jkl a^k b^l c^j`.
    pub fn r_apply(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let n = a.len();
        DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += self.riemann[(i, j, k, l)] * a[k] * b[l] * c[j];
                    }
                }
            }
            s
        })
    }

    /// `P(a, b, c) = P^i_jkl a^k b^l c^j`.
    pub fn p_apply(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let n = a.len();
        DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += self.chern_curvature[(i, j, k, l)] * a[k] * b[l] * c[j];
                    }
                }
            }
            s
        })
    }

    pub fn flag_curvature(&self, w: &DVector<f64>) -> Result<f64> {
        let g = &self.tensors.g;
        let v = &self.tensors.v;
        let (gvv, gww, gvw) = (linalg::inner(g, v, v), linalg::inner(g, w, w), linalg::inner(g, v, w));
        let den = gvv * gww - gvw * gvw;
        if !(den > 1e-12 * gvv * gww) {
            return Err(Error::DegenerateFlag { denominator: den });
        }
        let rw = self.r_apply(w, v, v);
        Ok(linalg::inner(g, &rw, w) / den)
    }
}

pub fn riemann_tensor(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<CurvatureBundle> {
    let n = model.dimension();
    let cj = connection_jets(model, x, v, 1)?;
    let tensors = bundle_from_jets(&cj, x, v);
    let i3 = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let gam = |i: usize, j: usize, k: usize| cj.chern[i3(i, j, k)].value();
    let dx = |i: usize, j: usize, k: usize, m: usize| cj.chern[i3(i, j, k)].grad(m);
    let dy = |i: usize, j: usize, k: usize, m: usize| cj.chern[i3(i, j, k)].grad(n + m);
    let nl = |m: usize, k: usize| cj.nonlinear[m * n + k].value();
    let riemann = Tensor4::from_fn(n, |i, j, k, l| {
        let mut r = dx(i, j, l, k) - dx(i, j, k, l);
        for m in 0..n {
            r += dy(i, j, k, m) * nl(m, l) - dy(i, j, l, m) * nl(m, k);
            r += gam(m, j, l) * gam(i, m, k) - gam(m, j, k) * gam(i, m, l);
        }
        r
    });
    let chern_curvature = Tensor4::from_fn(n, |i, j, k, l| -dy(i, j, k, l));
    Ok(CurvatureBundle {
        tensors,
        riemann,
        chern_curvature,
    })
}

/// `K = g(R(w,v)v, w) / (g(v,v) g(w,w) − g(v,w)²)`.
pub fn flag_curvature(model: &MetricModel, x: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    riemann_tensor(model, x, v)?.flag_curvature(&DVector::from_column_slice(w))
}

#[derive(Debug, Clone)]
pub struct PotentialDerivatives {
    pub value: f64,
    /// Coordinate differential `∂U/∂x^i`.
    pub differential: DVector<f64>,
    /// `∇U = g_v⁻¹ dU`.
    pub gradient: DVector<f64>,
    /// `∂²U/∂x^i∂x^j − ∂U/∂x^k Γ^k_ij`.
    pub hessian: DMatrix<f64>,
}

pub fn potential_derivatives_with(
    model: &MetricModel,
    tensors: &TensorBundle,
) -> Result<PotentialDerivatives> {
    let n = model.dimension();
    let (value, du, ddu) = model.potential_jet(tensors.x.as_slice())?;
    let gradient = &tensors.g_inv * &du;
    let hessian = DMatrix::from_fn(n, n, |i, j| {
        ddu[(i, j)] - (0..n).map(|k| du[k] * tensors.chern[(k, i, j)]).sum::<f64>()
    });
    Ok(PotentialDerivatives {
        value,
        differential: du,
        gradient,
        hessian,
    })
}

pub fn potential_derivatives(model: &MetricModel, x: &[f64], v: &[f64]) -> Result<PotentialDerivatives> {
    potential_derivatives_with(model, &chern_connection(model, x, v)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Nonreduced,
    Reduced,
}

impl std::str::FromStr for MapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonreduced" => Ok(MapKind::Nonreduced),
            "reduced" => Ok(MapKind::Reduced),
            other => Err(Error::InvalidInput(format!(
                "unknown kind `{other}` (expected reduced or nonreduced)"
            ))),
        }
    }
}

/// The four contributions to a curvature map, each in the map's basis.
#[derive(Debug, Clone)]
pub struct MapBreakdown {
    pub riemann: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub chern: DMatrix<f64>,
    /// `(3/F²) dU ⊗ dU`; zero for the nonreduced map.
    pub gradient: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct CurvatureMapMatrix {
    pub kind: MapKind,
    /// `g_v`-orthonormal basis vectors as columns, in chart coordinates.
    pub basis: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
    pub breakdown: MapBreakdown,
    /// Largest `|M − Mᵀ|` entry before symmetrization.
    pub asymmetry: f64,
}

/// Index of the coordinate candidate with the smallest projected `g_v`-norm.
pub fn pi_drop_index(g: &DMatrix<f64>, v: &DVector<f64>) -> usize {
    let f2 = linalg::inner(g, v, v);
    let gv = g * v;
    let norm = |i: usize| {
        let mut e = DVector::zeros(v.len());
        e[i] = 1.0;
        let c = e - v * (gv[i] / f2);
        linalg::inner(g, &c, &c)
    };
    (0..v.len())
        .min_by(|&a, &b| norm(a).total_cmp(&norm(b)))
        .unwrap_or(0)
}

/// `g_v`-orthonormal basis of `{w : g_v(v, w) = 0}`.
///
/// Gram–Schmidt is applied to `e_i − (g_v(v, e_i)/F²) v` after removing one
/// candidate: the one with the smallest `g_v`-norm, or `drop` if given.
pub fn pi_basis(g: &DMatrix<f64>, v: &DVector<f64>, drop: Option<usize>) -> DMatrix<f64> {
    let n = v.len();
    let f2 = linalg::inner(g, v, v);
    let gv = g * v;
    let candidates: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e - v * (gv[i] / f2)
        })
        .collect();
    let drop = drop.unwrap_or_else(|| pi_drop_index(g, v));
    let kept: Vec<DVector<f64>> = candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != drop)
        .map(|(_, c)| c)
        .collect();
    let e = linalg::gram_schmidt(g, &kept, 0.0);
    DMatrix::from_fn(n, e.len(), |r, c| e[c][r])
}

/// Basis used for the nonreduced map: `v/F` followed by the Π basis.
pub fn full_basis(g: &DMatrix<f64>, v: &DVector<f64>, drop: Option<usize>) -> DMatrix<f64> {
    let n = v.len();
    let f = linalg::inner(g, v, v).sqrt();
    let pi = pi_basis(g, v, drop);
    DMatrix::from_fn(n, n, |r, c| if c == 0 { v[r] / f } else { pi[(r, c - 1)] })
}

/// Coordinate bilinear forms of the four curvature-map terms.
pub struct CurvatureForms {
    pub riemann: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub chern: DMatrix<f64>,
    pub gradient: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub v: DVector<f64>,
}

pub fn curvature_forms(model: &MetricModel, state: &PhaseState) -> Result<CurvatureForms> {
    let n = model.dimension();
    let cb = riemann_tensor(model, state.x.as_slice(), state.v.as_slice())?;
    let pd = potential_derivatives_with(model, &cb.tensors)?;
    let g = cb.tensors.g.clone();
    let v = state.v.clone();
    let p = &g * &v;
    let riemann = DMatrix::from_fn(n, n, |a, b| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    s += g[(b, i)] * cb.riemann[(i, j, a, l)] * v[j] * v[l];
                }
            }
        }
        s
    });
    let grad = &pd.gradient;
    let chern = DMatrix::from_fn(n, n, |a, b| {
        let mut s = 0.0;
        for i in 0..n {
            for l in 0..n {
                s += p[i] * cb.chern_curvature[(i, b, a, l)] * grad[l];
            }
        }
        s
    });
    let f2 = linalg::inner(&g, &v, &v);
    let du = &pd.differential;
    let gradient = (du * du.transpose()) * (3.0 / f2);
    Ok(CurvatureForms {
        riemann,
        hessian: pd.hessian,
        chern,
        gradient,
        g,
        v,
    })
}

pub const SYMMETRY_BUDGET: f64 = 1e-8;

fn project(basis: &DMatrix<f64>, form: &DMatrix<f64>) -> DMatrix<f64> {
    basis.transpose() * form * basis
}

/// Closed-form curvature map of the given kind. `drop` selects which
/// coordinate candidate the Π basis omits.
pub fn curvature_map(
    model: &MetricModel,
    state: &PhaseState,
    kind: MapKind,
    drop: Option<usize>,
) -> Result<CurvatureMapMatrix> {
    let forms = curvature_forms(model, state)?;
    curvature_map_from_forms(&forms, kind, drop)
}

pub fn curvature_map_from_forms(
    forms: &CurvatureForms,
    kind: MapKind,
    drop: Option<usize>,
) -> Result<CurvatureMapMatrix> {
    let basis = match kind {
        MapKind::Nonreduced => full_basis(&forms.g, &forms.v, drop),
        MapKind::Reduced => pi_basis(&forms.g, &forms.v, drop),
    };
    let k = basis.ncols();
    let breakdown = MapBreakdown {
        riemann: project(&basis, &forms.riemann),
        hessian: project(&basis, &forms.hessian),
        chern: project(&basis, &forms.chern),
        gradient: match kind {
            MapKind::Nonreduced => DMatrix::zeros(k, k),
            MapKind::Reduced => project(&basis, &forms.gradient),
        },
    };
    let raw = &breakdown.riemann + &breakdown.hessian + &breakdown.chern + &breakdown.gradient;
    let asymmetry = if k == 0 { 0.0 } else { linalg::asymmetry(&raw) };
    let scale = if k == 0 { 1.0 } else { raw.amax().max(1.0) };
    if asymmetry > SYMMETRY_BUDGET * scale {
        return Err(Error::Validation(format!(
            "curvature map asymmetry {asymmetry:e} exceeds {SYMMETRY_BUDGET:e}"
        )));
    }
    Ok(CurvatureMapMatrix {
        kind,
        basis,
        matrix: linalg::symmetrize(&raw),
        breakdown,
        asymmetry,
    })
}

pub fn nonreduced_curvature_map(model: &MetricModel, state: &PhaseState) -> Result<CurvatureMapMatrix> {
    curvature_map(model, state, MapKind::Nonreduced, None)
}

/// For `n = 1` the result is a `0×0` matrix.
pub fn reduced_curvature_map(model: &MetricModel, state: &PhaseState) -> Result<CurvatureMapMatrix> {
    curvature_map(model, state, MapKind::Reduced, None)
}

/// Cartan tensor magnitude, a convenience for Riemannian checks.
pub fn cartan_magnitude(c: &Tensor3) -> f64 {
    c.max_abs()
}
