//! Property tests for the invariants each module promises.

use std::sync::Arc;

use finsler::curvature::{curvature_forms, curvature_map_from_forms, flag_curvature, MapKind};
use finsler::expr::eval_scalar;
use finsler::hyperbolicity::{anosov_criterion, negativity_scan, sample_level_set, Convention, GridSpec};
use finsler::jacobi::{jacobi_curve_samples, schwarzian_oracle};
use finsler::jets::{all_vars, eval_jet, layout, Var};
use finsler::report::to_json_string;
use finsler::{
    fd_partial, legendre_to_cotangent, legendre_to_tangent, parse, HamiltonianSystem, Jet, MetricModel, ModelConfig,
    PhaseState, RunReport, Scalar, VarKind,
};
use nalgebra::DVector;
use proptest::prelude::*;

const FINSLER_2D: [&str; 6] = ["euclidean2", "sphere2", "halfplane2", "randers2", "randers2-wind", "quartic2"];

fn catalog(name: &str) -> MetricModel {
    ModelConfig::catalog(name).unwrap().model().unwrap()
}

/// A point inside the model's box and a direction of Euclidean norm one.
fn point_in(model: &MetricModel, s: [f64; 2], angle: f64) -> (Vec<f64>, Vec<f64>) {
    let b = model.validity_box().clipped(5.0);
    let x = (0..2)
        .map(|i| b.lo[i] + (0.05 + 0.9 * s[i]) * (b.hi[i] - b.lo[i]))
        .collect();
    (x, vec![angle.cos(), angle.sin()])
}

fn expression() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x1".to_string()),
        Just("x2".to_string()),
        Just("y1".to_string()),
        Just("y2".to_string()),
        (1u32..40).prop_map(|k| format!("{}", k as f64 * 0.25)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}+{b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}-{b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}*{b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}/(2+({b})^2)")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(sin({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1+({a})^2)")),
            inner.clone().prop_map(|a| format!("log(1+({a})^2)")),
            inner.clone().prop_map(|a| format!("-({a})^3")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pretty_printing_is_a_fixed_point(src in expression()) {
        let once = parse(&src, 2).unwrap().pretty();
        let twice = parse(&once, 2).unwrap().pretty();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn order_zero_jets_match_scalar_evaluation(src in expression(), p in prop::array::uniform4(-2.0f64..2.0)) {
        let ast = parse(&src, 2).unwrap();
        let (x, y) = ([p[0], p[1]], [p[2], p[3]]);
        let want = eval_scalar(&ast, &x, &y).unwrap();
        let got = eval_jet(&ast, &x, &y, &all_vars(2), 0).unwrap().value();
        let ulps = (want.to_bits() as i64 - got.to_bits() as i64).unsigned_abs();
        prop_assert!(ulps <= 4 || (want - got).abs() <= 4.0 * f64::EPSILON * want.abs(), "{} vs {}", want, got);
    }

    #[test]
    fn jet_products_follow_leibniz(f in prop::collection::vec(-8i32..8, 15), g in prop::collection::vec(-8i32..8, 15)) {
        let lay = layout(2);
        let fj = Jet::from_coeffs(&lay, 4, f.iter().map(|&v| v as f64).collect());
        let gj = Jet::from_coeffs(&lay, 4, g.iter().map(|&v| v as f64).collect());
        let h = fj.mul(&gj);
        for c in 0..lay.len(4) {
            let ec = lay.exponent(c);
            let mut want = 0.0;
            for a in 0..lay.len(4) {
                for b in 0..lay.len(4) {
                    let (ea, eb) = (lay.exponent(a), lay.exponent(b));
                    if (0..2).all(|i| ea[i] + eb[i] == ec[i]) {
                        want += f[a] as f64 * g[b] as f64;
                    }
                }
            }
            prop_assert_eq!(h.coeffs()[c], want);
        }
    }

    #[test]
    fn euler_identity_on_f2_jets(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.0f64..1.0), a in 0.0f64..6.28) {
        let model = catalog(name);
        let (x, y) = point_in(&model, s, a);
        let active: Vec<Var> = (0..2).map(|i| (VarKind::Y, i)).collect();
        let j = eval_jet(model.f2_ast(), &x, &y, &active, 1).unwrap();
        let lhs = j.grad(0) * y[0] + j.grad(1) * y[1];
        prop_assert!((lhs - 2.0 * j.value()).abs() <= 1e-10 * 2.0 * j.value());
    }

    #[test]
    fn f2_is_positively_two_homogeneous(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.0f64..1.0), a in 0.0f64..6.28, lambda in 0.01f64..50.0) {
        let model = catalog(name);
        let (x, y) = point_in(&model, s, a);
        let ly: Vec<f64> = y.iter().map(|v| v * lambda).collect();
        let (f, fl) = (model.f2(&x, &y).unwrap(), model.f2(&x, &ly).unwrap());
        prop_assert!((fl - lambda * lambda * f).abs() <= 1e-12 * fl);
    }

    #[test]
    fn legendre_round_trip(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.0f64..1.0), a in 0.0f64..6.28, speed in 0.1f64..10.0) {
        let model = catalog(name);
        let (x, y) = point_in(&model, s, a);
        let y: Vec<f64> = y.iter().map(|v| v * speed).collect();
        let p = legendre_to_cotangent(&model, &x, &y).unwrap();
        let back = legendre_to_tangent(&model, &x, p.as_slice()).unwrap();
        let yv = DVector::from_column_slice(&y);
        prop_assert!((&back - &yv).norm() <= 1e-9 * yv.norm());
    }

    #[test]
    fn co_metric_is_inverse_of_fundamental_tensor(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.0f64..1.0), a in 0.0f64..6.28) {
        // g*(p) = ∂v/∂p, by central differences of the Legendre solve.
        let model = catalog(name);
        let (x, y) = point_in(&model, s, a);
        let st = PhaseState::from_tangent(&model, &x, &y).unwrap();
        let g = finsler::fundamental_tensor(&model, &x, &y).unwrap();
        let ginv = g.try_inverse().unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut pp = st.p.clone();
            let mut pm = st.p.clone();
            pp[j] += h;
            pm[j] -= h;
            let vp = legendre_to_tangent(&model, &x, pp.as_slice()).unwrap();
            let vm = legendre_to_tangent(&model, &x, pm.as_slice()).unwrap();
            for i in 0..2 {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                prop_assert!((fd - ginv[(i, j)]).abs() <= 1e-7 * ginv.amax().max(1.0), "{} vs {}", fd, ginv[(i, j)]);
            }
        }
    }

    #[test]
    fn flag_curvature_depends_only_on_the_flag(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.0f64..1.0), a in 0.0f64..6.28, b in 0.5f64..2.6) {
        let model = catalog(name);
        let (x, v) = point_in(&model, s, a);
        let w = vec![(a + b).cos(), (a + b).sin()];
        let k = flag_curvature(&model, &x, &v, &w).unwrap();
        let w2: Vec<f64> = w.iter().map(|c| 2.0 * c).collect();
        let w3: Vec<f64> = w.iter().zip(&v).map(|(c, d)| c + 3.0 * d).collect();
        prop_assert!((flag_curvature(&model, &x, &v, &w2).unwrap() - k).abs() <= 1e-8 * k.abs().max(1.0));
        prop_assert!((flag_curvature(&model, &x, &v, &w3).unwrap() - k).abs() <= 1e-8 * k.abs().max(1.0));
    }

    #[test]
    fn reduced_map_restricts_the_nonreduced_map(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.0f64..1.0), a in 0.0f64..6.28) {
        let model = catalog(name);
        let (x, y) = point_in(&model, s, a);
        let st = PhaseState::from_tangent(&model, &x, &y).unwrap();
        let forms = curvature_forms(&model, &st).unwrap();
        let full = curvature_map_from_forms(&forms, MapKind::Nonreduced, None).unwrap();
        let red = curvature_map_from_forms(&forms, MapKind::Reduced, None).unwrap();
        let c = full.basis.clone().try_inverse().unwrap() * &red.basis;
        let restricted = c.transpose() * &full.matrix * &c;
        prop_assert!((restricted - &red.matrix).amax() <= 1e-9 * full.matrix.amax().max(1.0));
    }

    #[test]
    fn chern_term_vanishes_for_riemannian_or_without_potential(
        s in prop::array::uniform2(0.0f64..1.0),
        a in 0.0f64..6.28,
    ) {
        let cases = [
            catalog("sphere2").with_potential("sin(x1)+0.3*x2^2").unwrap(),
            catalog("randers2-wind"),
            catalog("quartic2"),
        ];
        for model in cases {
            let (x, y) = point_in(&model, s, a);
            let st = PhaseState::from_tangent(&model, &x, &y).unwrap();
            let forms = curvature_forms(&model, &st).unwrap();
            prop_assert!(forms.chern.amax() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn jets_match_finite_differences(p in prop::array::uniform4(-1.0f64..1.0)) {
        let src = "sqrt(1+x1^2)*sin(y1)+exp(0.3*x2)*log(2+y2^2)+cos(x1*y2)";
        let ast = parse(src, 2).unwrap();
        let (x, y) = ([p[0], p[1]], [p[2], p[3]]);
        let jet = eval_jet(&ast, &x, &y, &all_vars(2), 4).unwrap();
        let lay: Arc<_> = jet.layout().clone();
        for i in 0..lay.len(4) {
            let alpha = lay.exponent(i).to_vec();
            let exact = jet.partial(&alpha).unwrap();
            let fd = fd_partial(&ast, &x, &y, &alpha, None).unwrap();
            prop_assert!((exact - fd).abs() <= 1e-5f64.max(1e-5 * exact.abs()), "{:?}: {} vs {}", alpha, exact, fd);
        }
    }

    #[test]
    fn jacobi_frames_stay_lagrangian(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.2f64..0.8), a in 0.0f64..6.28) {
        let sys = HamiltonianSystem::new(catalog(name).with_potential("0.1*sin(x1)*x2").unwrap());
        let (x, y) = point_in(sys.model(), s, a);
        let st = PhaseState::from_tangent(sys.model(), &x, &y).unwrap();
        let p = &st.p / st.f_star;
        let z = DVector::from_vec(vec![x[0], x[1], p[0], p[1]]);
        let times = [-1.0, -0.5, 0.25, 0.5, 1.0];
        for kind in [MapKind::Nonreduced, MapKind::Reduced] {
            match jacobi_curve_samples(&sys, &z, kind, &times, 1e-3) {
                Ok(g) => prop_assert!(g.lagrangian_defect <= 1e-7, "{}", g.lagrangian_defect),
                Err(finsler::Error::GraphDegenerate { .. } | finsler::Error::LeftValidityBox { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn schwarzian_is_independent_of_the_pi_basis(name in prop::sample::select(FINSLER_2D.to_vec()), s in prop::array::uniform2(0.2f64..0.8), a in 0.0f64..6.28) {
        let sys = HamiltonianSystem::new(catalog(name).with_potential("sin(x1)").unwrap());
        let (x, y) = point_in(sys.model(), s, a);
        let st = PhaseState::from_tangent(sys.model(), &x, &y).unwrap();
        let p = &st.p / st.f_star;
        let z = DVector::from_vec(vec![x[0], x[1], p[0], p[1]]);
        for kind in [MapKind::Nonreduced, MapKind::Reduced] {
            let e0 = schwarzian_oracle(&sys, &z, kind, Some(0));
            let e1 = schwarzian_oracle(&sys, &z, kind, Some(1));
            if let (Ok((a0, _)), Ok((a1, _))) = (e0, e1) {
                let (mut l0, _) = finsler::linalg::symmetric_eigen(&a0.curvature);
                let (mut l1, _) = finsler::linalg::symmetric_eigen(&a1.curvature);
                l0.sort_by(f64::total_cmp);
                l1.sort_by(f64::total_cmp);
                let scale = l0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                for (u, v) in l0.iter().zip(&l1) {
                    prop_assert!((u - v).abs() <= 1e-6 * scale, "{:?} vs {:?}", l0, l1);
                }
                prop_assert!(a0.velocity_eigenvalues.iter().all(|v| *v < 0.0));
            }
        }
    }

    #[test]
    fn anosov_pass_implies_scan_pass(c in 0.2f64..2.0, slope in -0.05f64..0.05) {
        let region = finsler::ValidityBox { lo: vec![-1.0, 0.5], hi: vec![1.0, 2.0] };
        let sys = HamiltonianSystem::new(catalog("halfplane2").with_potential(&format!("{slope}*x1")).unwrap());
        let grid = GridSpec::cube(4).with_region(region);
        let an = anosov_criterion(&sys, c, &grid, Convention::A, None).unwrap();
        if an.pass {
            let sample = sample_level_set(&sys, c, &grid).unwrap();
            prop_assert!(negativity_scan(&sys, &sample).unwrap().pass);
        }
    }

    #[test]
    fn reports_round_trip_bit_exactly(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..20)) {
        let cfg = ModelConfig::catalog("randers2").unwrap();
        let rep = RunReport::new("tensors", Some(&cfg)).with_result(&vals).unwrap();
        let text = rep.to_json();
        let back = RunReport::from_json(&text).unwrap();
        let got: Vec<f64> = serde_json::from_value(back.result.clone()).unwrap();
        for (a, b) in vals.iter().zip(&got) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(to_json_string(&back), text);
    }
}

#[test]
fn grid_rejects_nothing_inside_the_level() {
    let sys = HamiltonianSystem::new(catalog("halfplane2"));
    let sample = sample_level_set(&sys, 0.5, &GridSpec::cube(4)).unwrap();
    assert_eq!(sample.skipped, 0);
    assert!(sample.max_level_residual <= 1e-10);
}
