//! The mechanical Hamiltonian `H = ½F*(p)² + U(x)` on the cotangent bundle,
//! its vector field, RK4 flow integration and the variational flow.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jets::all_vars;
use crate::linalg;
use crate::metric::{chern_connection, legendre_to_tangent, MetricModel, PhaseState};

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    model: MetricModel,
}

/// Second-order data of `L` at `(x, v)` plus the potential's derivatives.
struct LocalData {
    v: DVector<f64>,
    lx: DVector<f64>,
    lxx: DMatrix<f64>,
    /// `(L_xy)_{jl} = ∂²L/∂x^j∂y^l`.
    lxy: DMatrix<f64>,
    g: DMatrix<f64>,
    du: DVector<f64>,
    ddu: DMatrix<f64>,
}

impl HamiltonianSystem {
    pub fn new(model: MetricModel) -> Self {
        HamiltonianSystem { model }
    }

    pub fn model(&self) -> &MetricModel {
        &self.model
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    pub fn state(&self, z: &DVector<f64>) -> Result<PhaseState> {
        let n = self.dimension();
        PhaseState::from_cotangent(&self.model, &z.as_slice()[..n], &z.as_slice()[n..])
    }

    /// `½F(v)² + U(x)` with `v = L*(p)`.
    pub fn energy(&self, z: &DVector<f64>) -> Result<f64> {
        let s = self.state(z)?;
        Ok(0.5 * s.f_star * s.f_star + self.model.potential(s.x.as_slice())?)
    }

    pub fn energy_of(&self, s: &PhaseState) -> Result<f64> {
        Ok(0.5 * s.f_star * s.f_star + self.model.potential(s.x.as_slice())?)
    }

    fn local(&self, z: &DVector<f64>, order: usize) -> Result<LocalData> {
        let n = self.dimension();
        let x = &z.as_slice()[..n];
        let p = &z.as_slice()[n..];
        let v = legendre_to_tangent(&self.model, x, p)?;
        let l = self
            .model
            .lagrangian_jet(x, v.as_slice(), &all_vars(n), order)?;
        let lx = DVector::from_fn(n, |i, _| l.grad(i));
        let (lxx, lxy, g) = if order >= 2 {
            let d: Vec<_> = (0..2 * n).map(|i| l.derivative(i)).collect();
            (
                DMatrix::from_fn(n, n, |i, j| d[i].grad(j)),
                DMatrix::from_fn(n, n, |j, li| d[j].grad(n + li)),
                DMatrix::from_fn(n, n, |i, j| d[n + i].grad(n + j)),
            )
        } else {
            (DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n))
        };
        let (_, du, ddu) = self.model.potential_jet(x)?;
        Ok(LocalData {
            v,
            lx,
            lxx,
            lxy,
            g,
            du,
            ddu,
        })
    }

    /// `ẋ = ∂H/∂p = v`, `ṗ = −∂H/∂x = ∂L/∂x(x, v) − ∂U/∂x`.
    pub fn vector_field(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dimension();
        let d = self.local(z, 1)?;
        Ok(DVector::from_fn(2 * n, |i, _| {
            if i < n {
                d.v[i]
            } else {
                d.lx[i - n] - d.du[i - n]
            }
        }))
    }

    /// The same field assembled as the Chern horizontal lift of `v` plus the
    /// vertical field `−dU`: `ṗ_j = Γ^k_ij p_k v^i − ∂U/∂x^j`.
    pub fn vector_field_horizontal(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dimension();
        let x = &z.as_slice()[..n];
        let p = &z.as_slice()[n..];
        let v = legendre_to_tangent(&self.model, x, p)?;
        let tb = chern_connection(&self.model, x, v.as_slice())?;
        let (_, du, _) = self.model.potential_jet(x)?;
        Ok(DVector::from_fn(2 * n, |r, _| {
            if r < n {
                v[r]
            } else {
                let j = r - n;
                let mut s = -du[j];
                for i in 0..n {
                    for k in 0..n {
                        s += tb.chern[(k, i, j)] * p[k] * v[i];
                    }
                }
                s
            }
        }))
    }

    /// `DH⃗` by implicit differentiation of the Legendre solve.
    pub fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.field_and_jacobian(z)?.1)
    }

    pub fn field_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dimension();
        let d = self.local(z, 2)?;
        let a = linalg::inverse(&d.g, "fundamental tensor")?;
        let lyx = d.lxy.transpose();
        let dxdx = -(&a * &lyx);
        let dpdx = &d.lxx - &d.lxy * &a * &lyx - &d.ddu;
        let dpdp = &d.lxy * &a;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        jac.view_mut((0, 0), (n, n)).copy_from(&dxdx);
        jac.view_mut((0, n), (n, n)).copy_from(&a);
        jac.view_mut((n, 0), (n, n)).copy_from(&dpdx);
        jac.view_mut((n, n), (n, n)).copy_from(&dpdp);
        let field = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                d.v[i]
            } else {
                d.lx[i - n] - d.du[i - n]
            }
        });
        Ok((field, jac))
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    /// Step magnitude; the sign follows the direction of integration.
    pub dt: f64,
    /// Step-doubling error tolerance; `None` keeps the step fixed.
    pub adaptive: Option<f64>,
    pub monodromy: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            dt: DEFAULT_DT,
            adaptive: None,
            monodromy: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Stacked `(x, p)` samples, unwrapped on tori.
    pub states: Vec<DVector<f64>>,
    /// `H⃗` at each sample.
    pub rates: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
    pub monodromy: Option<Vec<DMatrix<f64>>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has samples")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    /// `max |H(t) − H(0)|`.
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().fold(0.0, |m, e| m.max((e - e0).abs()))
    }

    /// `max_t ‖Φᵀ J Φ − J‖_F`.
    pub fn max_symplectic_defect(&self) -> f64 {
        let Some(phis) = &self.monodromy else {
            return 0.0;
        };
        let n = self.states[0].len() / 2;
        let j = linalg::symplectic_j(n);
        phis.iter()
            .map(|phi| (phi.transpose() * &j * phi - &j).norm())
            .fold(0.0, f64::max)
    }

    /// Cubic Hermite interpolation between stored samples.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let forward = self.final_time() >= self.times[0];
        let k = self
            .times
            .windows(2)
            .position(|w| {
                if forward {
                    t >= w[0] && t <= w[1]
                } else {
                    t <= w[0] && t >= w[1]
                }
            })
            .unwrap_or(self.times.len().saturating_sub(2));
        if self.times.len() < 2 {
            return self.states[0].clone();
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        &self.states[k] * h00
            + &self.rates[k] * (h10 * h)
            + &self.states[k + 1] * h01
            + &self.rates[k + 1] * (h11 * h)
    }
}

fn rk4_step(
    sys: &HamiltonianSystem,
    z: &DVector<f64>,
    phi: Option<&DMatrix<f64>>,
    h: f64,
    k1: (&DVector<f64>, Option<&DMatrix<f64>>),
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let eval = |zz: &DVector<f64>, pp: Option<&DMatrix<f64>>| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        match pp {
            Some(p) => {
                let (f, jac) = sys.field_and_jacobian(zz)?;
                Ok((f, Some(jac * p)))
            }
            None => Ok((sys.vector_field(zz)?, None)),
        }
    };
    let add = |a: Option<&DMatrix<f64>>, b: &Option<DMatrix<f64>>, c: f64| match (a, b) {
        (Some(a), Some(b)) => Some(a + b * c),
        _ => None,
    };
    let (f1, m1) = (k1.0.clone(), k1.1.cloned());
    let (f2, m2) = eval(&(z + &f1 * (h / 2.0)), add(phi, &m1, h / 2.0).as_ref())?;
    let (f3, m3) = eval(&(z + &f2 * (h / 2.0)), add(phi, &m2, h / 2.0).as_ref())?;
    let (f4, m4) = eval(&(z + &f3 * h), add(phi, &m3, h).as_ref())?;
    let zn = z + (&f1 + &f2 * 2.0 + &f3 * 2.0 + &f4) * (h / 6.0);
    let pn = match (phi, m1, m2, m3, m4) {
        (Some(p), Some(a), Some(b), Some(c), Some(d)) => Some(p + (a + b * 2.0 + c * 2.0 + d) * (h / 6.0)),
        _ => None,
    };
    Ok((zn, pn))
}

fn rates(
    sys: &HamiltonianSystem,
    z: &DVector<f64>,
    phi: Option<&DMatrix<f64>>,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    match phi {
        Some(p) => {
            let (f, jac) = sys.field_and_jacobian(z)?;
            Ok((f, Some(jac * p)))
        }
        None => Ok((sys.vector_field(z)?, None)),
    }
}

/// Integrate `H⃗` from `z0` for time `t_end` (which may be negative).
pub fn flow(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    let n = sys.dimension();
    let model = sys.model();
    let periodic = *model.topology() == crate::metric::Topology::Torus;
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let mut dt = opts.dt.abs();
    let mut t = 0.0f64;
    let mut z = z0.clone();
    let mut phi = opts.monodromy.then(|| DMatrix::identity(2 * n, 2 * n));
    let (mut f, mut m) = rates(sys, &z, phi.as_ref())?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![z.clone()],
        rates: vec![f.clone()],
        energies: vec![sys.energy(&z)?],
        monodromy: phi.as_ref().map(|p| vec![p.clone()]),
    };
    let span = t_end.abs();
    let min_dt = 1e-12 * span.max(1.0);
    while (span - t.abs()) > 1e-14 * span.max(1.0) {
        let remaining = span - t.abs();
        let h = dt.min(remaining);
        let (zn, pn, used) = match opts.adaptive {
            None => {
                let (zn, pn) = rk4_step(sys, &z, phi.as_ref(), dir * h, (&f, m.as_ref()))?;
                (zn, pn, h)
            }
            Some(tol) => {
                let (zbig, _) = rk4_step(sys, &z, phi.as_ref(), dir * h, (&f, m.as_ref()))?;
                let (zhalf, phalf) = rk4_step(sys, &z, phi.as_ref(), dir * h / 2.0, (&f, m.as_ref()))?;
                let (fh, mh) = rates(sys, &zhalf, phalf.as_ref())?;
                let (zfine, pfine) = rk4_step(sys, &zhalf, phalf.as_ref(), dir * h / 2.0, (&fh, mh.as_ref()))?;
                let err = (&zfine - &zbig).amax() / 15.0;
                let factor = if err > 0.0 {
                    (0.9 * (tol / err).powf(0.2)).clamp(0.2, 2.0)
                } else {
                    2.0
                };
                if err > tol {
                    dt = h * factor;
                    if dt < min_dt {
                        return Err(Error::StepUnderflow { time: dir * t, dt });
                    }
                    continue;
                }
                // A final partial step must not shrink the working step.
                dt = if h < dt { dt.max(h * factor) } else { h * factor };
                (zfine, pfine, h)
            }
        };
        t += used;
        z = zn;
        phi = pn;
        if !periodic && !model.in_box(&z.as_slice()[..n]) {
            return Err(Error::LeftValidityBox {
                time: dir * t,
                x: z.as_slice()[..n].to_vec(),
            });
        }
        let r = rates(sys, &z, phi.as_ref())?;
        f = r.0;
        m = r.1;
        traj.times.push(dir * t);
        traj.states.push(z.clone());
        traj.rates.push(f.clone());
        traj.energies.push(sys.energy(&z)?);
        if let (Some(list), Some(p)) = (traj.monodromy.as_mut(), phi.as_ref()) {
            list.push(p.clone());
        }
    }
    Ok(traj)
}

/// One classical RK4 step of size `h` for `(z, Φ)`.
pub fn rk4_advance(
    sys: &HamiltonianSystem,
    z: &DVector<f64>,
    phi: &DMatrix<f64>,
    h: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (f, m) = rates(sys, z, Some(phi))?;
    let (zn, pn) = rk4_step(sys, z, Some(phi), h, (&f, m.as_ref()))?;
    Ok((zn, pn.expect("monodromy requested")))
}

/// Classical RK4 on a flat state vector.
pub fn rk4_generic(
    f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    y: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = f(y)?;
    let k2 = f(&(y + &k1 * (h / 2.0)))?;
    let k3 = f(&(y + &k2 * (h / 2.0)))?;
    let k4 = f(&(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Flow together with `Φ(t)`, `Φ̇ = DH⃗(λ(t)) Φ`, `Φ(0) = I`.
pub fn variational_flow(
    sys: &HamiltonianSystem,
    z0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    flow(
        sys,
        z0,
        t_end,
        &FlowOptions {
            dt,
            adaptive: None,
            monodromy: true,
        },
    )
}

/// Wrap periodic coordinates of a stacked state.
pub fn wrapped(model: &MetricModel, z: &DVector<f64>) -> DVector<f64> {
    let n = model.dimension();
    let mut out = z.clone();
    model.wrap(&mut out.as_mut_slice()[..n]);
    out
}
