//! Closed-form tensors and curvatures against independent oracles.

use finsler::curvature::{curvature_map, riemann_tensor, MapKind};
use finsler::dynamics::HamiltonianSystem;
use finsler::jacobi::closed_form_vs_oracle;
use finsler::linalg::{self, sigma};
use finsler::{
    cartan_tensor, chern_connection, fd_partial, fundamental_tensor, legendre_to_tangent, parse, MetricModel,
    PhaseState,
};
use nalgebra::{DMatrix, DVector};

const SPHERE: &str = "4*(y1^2+y2^2)/(1+x1^2+x2^2)^2";
const HALFPLANE: &str = "(y1^2+y2^2)/x2^2";

/// Christoffel symbols of `e^{2φ} δ`: `δ_ki φ_j + δ_kj φ_i − δ_ij φ_k`.
fn conformal_christoffel(dphi: &[f64], k: usize, i: usize, j: usize) -> f64 {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    d(k, i) * dphi[j] + d(k, j) * dphi[i] - d(i, j) * dphi[k]
}

fn points() -> Vec<(Vec<f64>, Vec<f64>)> {
    vec![
        (vec![0.1, 0.7], vec![1.0, 0.0]),
        (vec![-0.4, 1.3], vec![0.3, -0.8]),
        (vec![1.2, 0.5], vec![-0.6, 0.6]),
        (vec![0.0, 2.0], vec![0.2, 1.0]),
    ]
}

#[test]
fn chern_matches_conformal_levi_civita() {
    let sphere = MetricModel::new(2, SPHERE, "0").unwrap();
    let half = MetricModel::new(2, HALFPLANE, "0").unwrap();
    for (x, v) in points() {
        let r2 = 1.0 + x[0] * x[0] + x[1] * x[1];
        let cases = [
            (&sphere, vec![-2.0 * x[0] / r2, -2.0 * x[1] / r2]),
            (&half, vec![0.0, -1.0 / x[1]]),
        ];
        for (model, dphi) in cases {
            let tb = chern_connection(model, &x, &v).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let want = conformal_christoffel(&dphi, k, i, j);
                        assert!((tb.chern[(k, i, j)] - want).abs() < 1e-8, "Γ^{k}_{i}{j} at {x:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn chern_matches_finite_difference_levi_civita() {
    let src = "(1+x2^2)*y1^2+0.6*x1*y1*y2+(2+sin(x1))*y2^2";
    let model = MetricModel::new(2, src, "0").unwrap();
    let ast = parse(src, 2).unwrap();
    let x = [0.3, -0.5];
    let v = [0.7, 0.4];
    let y = [1.0, 1.0];
    let alpha = |xk: Option<usize>, i: usize, j: usize| {
        let mut a = [0u8; 4];
        if let Some(k) = xk {
            a[k] += 1;
        }
        a[2 + i] += 1;
        a[2 + j] += 1;
        a
    };
    let a = DMatrix::from_fn(2, 2, |i, j| 0.5 * fd_partial(&ast, &x, &y, &alpha(None, i, j), None).unwrap());
    let da = |k: usize, i: usize, j: usize| 0.5 * fd_partial(&ast, &x, &y, &alpha(Some(k), i, j), None).unwrap();
    let ainv = a.try_inverse().unwrap();
    let tb = chern_connection(&model, &x, &v).unwrap();
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..2)
                    .map(|l| 0.5 * ainv[(k, l)] * (da(j, i, l) + da(i, l, j) - da(l, i, j)))
                    .sum();
                assert!((tb.chern[(k, i, j)] - want).abs() < 1e-6, "Γ^{k}_{i}{j}");
            }
        }
    }
}

#[test]
fn flag_curvature_matches_gauss_curvature_of_conformal_factor() {
    // K = −e^{−2φ} Δφ.
    let sphere = MetricModel::new(2, SPHERE, "0").unwrap();
    let half = MetricModel::new(2, HALFPLANE, "0").unwrap();
    let bump = MetricModel::new(2, "exp(0.2*x1^2)*(y1^2+y2^2)", "0").unwrap();
    for (x, v) in points() {
        let w = [-v[1], v[0] + 0.3];
        let k = finsler::curvature::flag_curvature(&sphere, &x, &v, &w).unwrap();
        assert!((k - 1.0).abs() < 1e-6);
        let k = finsler::curvature::flag_curvature(&half, &x, &v, &w).unwrap();
        assert!((k + 1.0).abs() < 1e-6);
        let k = finsler::curvature::flag_curvature(&bump, &x, &v, &w).unwrap();
        let want = -(-0.2 * x[0] * x[0]).exp() * 0.2;
        assert!((k - want).abs() < 1e-6, "{k} vs {want}");
    }
}

#[test]
fn riemannian_chern_curvature_vanishes() {
    for src in [SPHERE, HALFPLANE, "(1+x2^2)*y1^2+0.6*x1*y1*y2+(2+sin(x1))*y2^2"] {
        let model = MetricModel::new(2, src, "0").unwrap();
        for (x, v) in points() {
            let cb = riemann_tensor(&model, &x, &v).unwrap();
            assert!(cb.chern_curvature.max_abs() < 1e-10, "{src}");
        }
    }
}

#[test]
fn randers_fundamental_and_cartan_tensors_match_stencils() {
    let src = "(sqrt(y1^2+y2^2)+0.5*y1)^2";
    let model = MetricModel::new(2, src, "0").unwrap();
    let ast = parse(src, 2).unwrap();
    let x = [0.0, 0.0];
    let g = fundamental_tensor(&model, &x, &[1.0, 0.0]).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut a = [0u8; 4];
            a[2 + i] += 1;
            a[2 + j] += 1;
            let fd = 0.5 * fd_partial(&ast, &x, &[1.0, 0.0], &a, None).unwrap();
            assert!((g[(i, j)] - fd).abs() < 1e-6);
        }
    }
    let c = cartan_tensor(&model, &x, &[1.0, 1.0]).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                let mut a = [0u8; 4];
                a[2 + i] += 1;
                a[2 + j] += 1;
                a[2 + k] += 1;
                let fd = 0.25 * fd_partial(&ast, &x, &[1.0, 1.0], &a, None).unwrap();
                assert!((c[(i, j, k)] - fd).abs() < 1e-5);
            }
        }
    }
}

/// Central difference of a vector field along `dir`.
fn directional(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>, dir: &DVector<f64>) -> DVector<f64> {
    let d = 1e-5;
    (f(&(z + dir * d)) - f(&(z - dir * d))) / (2.0 * d)
}

/// Lie bracket `[A, B] = DB·A − DA·B`.
fn bracket(
    a: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    directional(b, z, &a(z)) - directional(a, z, &b(z))
}

/// Chern horizontal lift of the coordinate field `∂/∂x^i` on `T*M`.
fn horizontal(model: &MetricModel, i: usize) -> impl Fn(&DVector<f64>) -> DVector<f64> + '_ {
    move |z: &DVector<f64>| {
        let n = model.dimension();
        let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
        let p: Vec<f64> = z.rows(n, n).iter().copied().collect();
        let v = legendre_to_tangent(model, &x, &p).unwrap();
        let tb = chern_connection(model, &x, v.as_slice()).unwrap();
        DVector::from_fn(2 * n, |r, _| {
            if r < n {
                if r == i {
                    1.0
                } else {
                    0.0
                }
            } else {
                (0..n).map(|k| tb.chern[(k, i, r - n)] * p[k]).sum()
            }
        })
    }
}

#[test]
fn potential_bracket_gives_hessian_and_chern_terms() {
    let model = MetricModel::new(2, "(sqrt(y1^2+y2^2)+0.3*sin(x2)*y1)^2", "sin(x1)+0.2*x1*x2^2").unwrap();
    let x = vec![0.4, 0.9];
    let p = vec![0.8, -0.5];
    let z = DVector::from_vec(x.iter().chain(&p).copied().collect());
    let u_field = |z: &DVector<f64>| {
        let (_, du, _) = model.potential_jet(&[z[0], z[1]]).unwrap();
        DVector::from_vec(vec![0.0, 0.0, -du[0], -du[1]])
    };
    let state = PhaseState::from_cotangent(&model, &x, &p).unwrap();
    let forms = finsler::curvature::curvature_forms(&model, &state).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let hi = horizontal(&model, i);
            let hj = horizontal(&model, j);
            let br = bracket(&u_field, &hi, &z);
            let lhs = sigma(&br, &hj(&z));
            let want = -forms.hessian[(i, j)] - forms.chern[(i, j)];
            assert!((lhs - want).abs() < 1e-6, "({i},{j}): {lhs} vs {want}");
        }
    }
}

#[test]
fn geodesic_bracket_gives_riemann_term() {
    let model = MetricModel::new(2, "(sqrt(y1^2+y2^2)+0.3*sin(x2)*y1)^2", "0").unwrap();
    let sys = HamiltonianSystem::new(model.clone());
    let x = vec![0.4, 0.9];
    let p = vec![0.8, -0.5];
    let z = DVector::from_vec(x.iter().chain(&p).copied().collect());
    let h = |z: &DVector<f64>| sys.vector_field(z).unwrap();
    let state = PhaseState::from_cotangent(&model, &x, &p).unwrap();
    let forms = finsler::curvature::curvature_forms(&model, &state).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let hi = horizontal(&model, i);
            let hj = horizontal(&model, j);
            let lhs = sigma(&bracket(&h, &hi, &z), &hj(&z));
            // forms.riemann(a, b) = g(R(∂_a, v)v, ∂_b).
            let want = -forms.riemann[(j, i)];
            assert!((lhs - want).abs() < 1e-6, "({i},{j}): {lhs} vs {want}");
        }
    }
}

/// The closed form misses Cartan-tensor terms when `dU ≠ 0`: on a constant
/// Minkowski norm with a linear potential it vanishes identically, while the
/// Jacobi curve `S(t) = −∫₀ᵗ g*(p(s)) ds` has nonzero curvature.
#[test]
fn minkowski_linear_potential_oracle_matches_analytic_curve() {
    let model = MetricModel::new(2, "(sqrt(y1^2+y2^2)+0.5*y1)^2", "0.3*x1").unwrap();
    let sys = HamiltonianSystem::new(model.clone());
    let x = [0.3, 0.6];
    let p0 = DVector::from_vec(vec![0.7, 0.9]);
    let du = DVector::from_vec(vec![0.3, 0.0]);
    let a_of = |t: f64| {
        let p = &p0 - &du * t;
        let v = legendre_to_tangent(&model, &x, p.as_slice()).unwrap();
        linalg::inverse(&fundamental_tensor(&model, &x, v.as_slice()).unwrap(), "g").unwrap()
    };
    let h = 1e-3;
    let d1 = |h: f64| (a_of(h) - a_of(-h)) / (2.0 * h);
    let d2 = |h: f64| (a_of(h) - a_of(0.0) * 2.0 + a_of(-h)) / (h * h);
    let a0 = a_of(0.0);
    let a1 = (d1(h / 2.0) * 4.0 - d1(h)) / 3.0;
    let a2 = (d2(h / 2.0) * 4.0 - d2(h)) / 3.0;
    // Ṡ = −A, S̈ = −Ȧ, S⃛ = −Ä.
    let vinv = linalg::inverse(&(-&a0), "velocity").unwrap();
    let b = &vinv * (-&a2);
    let c = &vinv * (-&a1);
    let r = b * 0.5 - (&c * &c) * 0.75;
    let mut want: Vec<f64> = r.complex_eigenvalues().iter().map(|z| z.re).collect();
    want.sort_by(f64::total_cmp);

    let z = DVector::from_vec(vec![x[0], x[1], p0[0], p0[1]]);
    let rep = closed_form_vs_oracle(&sys, &z, MapKind::Nonreduced, 1e-4).unwrap();
    let oracle = DMatrix::from_fn(2, 2, |i, j| rep.oracle[i][j]);
    let (got, _) = linalg::symmetric_eigen(&oracle);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-5, "{got:?} vs {want:?}");
    }
    let state = PhaseState::from_cotangent(&model, &x, p0.as_slice()).unwrap();
    let closed = curvature_map(&model, &state, MapKind::Nonreduced, None).unwrap();
    assert!(closed.matrix.amax() < 1e-12);
    assert!(got.iter().any(|e| e.abs() > 1e-2));
    // The Chern lift is not the canonical complement here.
    assert!(rep.complement_defect > 1e-2);
}

#[test]
fn chern_lift_is_canonical_without_potential_or_cartan_tensor() {
    let cases = [
        ("(sqrt(y1^2+y2^2)+0.3*sin(x2)*y1)^2", "0"),
        ("(1+0.2*x2^2)*y1^2+y2^2", "sin(x1)"),
    ];
    for (f2, u) in cases {
        let sys = HamiltonianSystem::new(MetricModel::new(2, f2, u).unwrap());
        let z = DVector::from_vec(vec![0.3, 0.6, 0.7, 0.9]);
        for kind in [MapKind::Nonreduced, MapKind::Reduced] {
            let rep = closed_form_vs_oracle(&sys, &z, kind, 1e-4).unwrap();
            assert!(rep.complement_defect < 1e-9, "{f2} {u}");
            assert!(rep.pass, "{f2} {u} {kind:?}");
        }
    }
}
