use std::sync::OnceLock;

use proptest::prelude::*;

use algdelay::dynamics::{documented_r_seed, find_manifold_point};
use algdelay::model::builtin;
use algdelay::report::{CheckResult, Provenance, VerificationReport};
use algdelay::transform::TransformContext;
use algdelay::verify::{random_segment, rng, sample_domain_point};
use algdelay::{Interval, ScalarSegment, SegmentView, StatePoint, VectorSegment};

const H: f64 = 2.0;
const N: usize = 16;

fn segment() -> impl Strategy<Value = ScalarSegment> {
    (prop::collection::vec(-1.0f64..1.0, N + 1), prop::collection::vec(-5.0f64..5.0, N + 1))
        .prop_map(|(v, s)| ScalarSegment::from_nodes(H, v, s).unwrap())
}

fn j() -> Interval {
    Interval::new(-2.0 * H, H)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn contexts() -> &'static [TransformContext] {
    static CTX: OnceLock<Vec<TransformContext>> = OnceLock::new();
    CTX.get_or_init(|| {
        ["echo", "lin2", "pair"]
            .iter()
            .map(|n| TransformContext::new(builtin::by_name(n).unwrap(), builtin::default_mesh(n).unwrap()).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extension_reproduces_restriction(phi in segment(), u in 0.0f64..1.0) {
        let t = -H * u;
        prop_assert_eq!(phi.eval_extension(t, &j()).unwrap(), phi.eval(t).unwrap());
    }

    #[test]
    fn extension_is_linear(phi in segment(), psi in segment(), a in -3.0f64..3.0, b in -3.0f64..3.0, t in -2.0 * H..H) {
        let mut combo = phi.scaled(a);
        combo.axpy(b, &psi).unwrap();
        let (x, dx) = combo.eval_extension(t, &j()).unwrap();
        let (p, dp) = phi.eval_extension(t, &j()).unwrap();
        let (q, dq) = psi.eval_extension(t, &j()).unwrap();
        prop_assert!(close(x, a * p + b * q, 1e-12));
        prop_assert!(close(dx, a * dp + b * dq, 1e-12));
    }

    #[test]
    fn extension_keeps_affine_segments(a in -2.0f64..2.0, b in -2.0f64..2.0, t in -2.0 * H..H) {
        let phi = ScalarSegment::from_fn(H, N, |s| a + b * s, |_| b).unwrap();
        let (x, dx) = phi.eval_extension(t, &j()).unwrap();
        prop_assert!((x - (a + b * t)).abs() <= 1e-12);
        prop_assert!((dx - b).abs() <= 1e-12);
    }

    #[test]
    fn extension_norm_bounds(phi in segment()) {
        let norms = phi.norms();
        prop_assert!(phi.extension_c_norm(&j()) <= 3.0 * norms.c_norm + 1e-12);
        let slope_max = (0..=400)
            .map(|i| phi.eval_extension(-2.0 * H + 3.0 * H * i as f64 / 400.0, &j()).unwrap().1.abs())
            .fold(0.0, f64::max);
        let own = (0..=6000).map(|i| phi.eval(-H * i as f64 / 6000.0).unwrap().1.abs()).fold(0.0, f64::max);
        prop_assert!(slope_max <= own.max(norms.c1_norm - norms.c_norm) * (1.0 + 1e-4));
    }

    #[test]
    fn extension_continuous_at_junctions(phi in segment()) {
        for t0 in [0.0, -H] {
            let e = 1e-12;
            let (l, dl) = phi.eval_extension(t0 - e, &j()).unwrap();
            let (r, dr) = phi.eval_extension(t0 + e, &j()).unwrap();
            prop_assert!((l - r).abs() <= 1e-10);
            prop_assert!((dl - dr).abs() <= 1e-10);
        }
    }

    #[test]
    fn segment_json_round_trip_is_bit_exact(phi in segment(), psi in segment()) {
        let v = VectorSegment::new(vec![phi, psi]).unwrap();
        let back: VectorSegment = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn q_and_hat_are_linear(which in 0usize..4, seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let name = builtin::NAMES[which];
        let m = builtin::by_name(name).unwrap();
        let mut g = rng(seed);
        let phi = random_segment(&mut g, m.h, 64, m.n, 0.5).unwrap();
        let psi = random_segment(&mut g, m.h, 64, m.n, 0.5).unwrap();
        let combo = VectorSegment::linear_combine(&[&phi, &psi], &[a, b]).unwrap();
        let r = algdelay::verify::sample_r(&mut g, &m);
        let (q, qp, qs) = (m.q_eval(&r, &combo).unwrap(), m.q_eval(&r, &phi).unwrap(), m.q_eval(&r, &psi).unwrap());
        for i in 0..q.len() {
            prop_assert!((q[i] - (a * qp[i] + b * qs[i])).abs() <= 1e-10);
        }
        let (v, vp, vs) = (m.hat(&r, &combo).unwrap(), m.hat(&r, &phi).unwrap(), m.hat(&r, &psi).unwrap());
        for i in 0..v.len() {
            prop_assert!((v[i] - (a * vp[i] + b * vs[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn offset_constant_l_has_identity_d1(seed in any::<u64>()) {
        let m = builtin::lin2();
        let mut g = rng(seed);
        if let Some(p) = sample_domain_point(&mut g, &m, 64, 0.5) {
            let d1 = m.d1delta(&p.r, &p.phi).unwrap();
            prop_assert_eq!(d1, nalgebra::DMatrix::identity(m.k, m.k));
        }
    }

    #[test]
    fn chi_combination_has_slope_c(which in 0usize..3, seed in any::<u64>(), c in prop::collection::vec(-3.0f64..3.0, 2)) {
        let ctx = &contexts()[which];
        let m = ctx.model();
        let mut g = rng(seed);
        let r = algdelay::verify::sample_r(&mut g, m);
        let v = algdelay::verify::sample_v(&mut g, m);
        let comps: Vec<ScalarSegment> = (0..m.n).map(|jj| ctx.field().chi_eval(jj, &r, &v).unwrap()).collect();
        let chi = VectorSegment::new(comps).unwrap();
        prop_assert_eq!(chi.odot(&c[..m.n]).unwrap().slope_at_zero(), c[..m.n].to_vec());
    }

    #[test]
    fn transform_identities(which in 0usize..3, seed in any::<u64>()) {
        let ctx = &contexts()[which];
        let m = ctx.model();
        let mut g = rng(seed);
        let Some(p) = sample_domain_point(&mut g, m, ctx.mesh(), 0.5) else { return Ok(()) };
        let tp = ctx.t_map(&p).unwrap();
        let v = m.hat(&p.r, &p.phi).unwrap();
        let gv = m.g_value(&v);
        for (i, s) in tp.phi.slope_at_zero().iter().enumerate() {
            prop_assert_eq!(*s, p.phi.slope_at_zero()[i] - gv[i]);
        }
        let (q0, q1) = (m.q_eval(&p.r, &p.phi).unwrap(), m.q_eval(&tp.r, &tp.phi).unwrap());
        prop_assert!(q0.iter().zip(&q1).all(|(a, b)| (a - b).abs() <= 1e-10));
        let (d0, d1) = (m.Delta(&p.r, &p.phi).unwrap(), m.Delta(&tp.r, &tp.phi).unwrap());
        prop_assert!(d0.iter().zip(&d1).all(|(a, b)| (a - b).abs() <= 1e-9));
        let back = ctx.y_map(&tp).unwrap();
        prop_assert!(back.phi.c1_distance(&p.phi).unwrap() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn found_points_are_on_the_manifold(which in 0usize..3, seed in any::<u64>(), amp in 0.0f64..0.3) {
        let ctx = &contexts()[which];
        let m = ctx.model();
        let phi = random_segment(&mut rng(seed), m.h, ctx.mesh(), m.n, amp).unwrap();
        let p = find_manifold_point(m, &StatePoint::new(documented_r_seed(m), phi)).unwrap();
        prop_assert!(ctx.classify_point(&p, 1e-9).on_manifold);
    }

    #[test]
    fn report_pass_is_conjunction(passes in prop::collection::vec(any::<bool>(), 1..8)) {
        let checks: Vec<CheckResult> = passes
            .iter()
            .enumerate()
            .map(|(i, &ok)| CheckResult::at_most(&format!("c{i}"), if ok { 0.0 } else { 2.0 }, 1.0, 1))
            .collect();
        let prov = Provenance::new("x", "{}", 42, 8, serde_json::json!({}));
        let report = VerificationReport::new(checks, prov);
        prop_assert_eq!(report.pass, passes.iter().all(|&p| p));
    }
}

#[test]
fn unused_view_trait_is_object_safe() {
    let s = ScalarSegment::constant(H, N, 1.0);
    let view: &dyn SegmentView = &s;
    assert_eq!(view.component_at(0, -1.0), (1.0, 0.0));
}
