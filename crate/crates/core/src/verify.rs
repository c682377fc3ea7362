//! Sampled checks of the whole construction. Each function returns named
//! [`CheckResult`]s; [`run_suite`] strings them together for a scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complement::h_g_eval;
use crate::dynamics::{
    convergence_orders, cosine_seed, default_delta_min, find_manifold_point, find_smooth_manifold_point, fitted_order, integrate, slope_direction, solve_delay,
    trajectory_residuals, IntegrateOptions,
};
use crate::error::Result;
use crate::model::{constant_segment, norm, verify_hq, DeltaSpec, ModelSpec, QSpec, Region, StatePoint};
use crate::report::{CheckResult, Provenance, VerificationReport, Worst};
use crate::scenario::Scenario;
use crate::segment::{Interval, ScalarSegment, VectorSegment};
use crate::transform::TransformContext;

pub type SampleRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mode sum `Σ_m a_m cos(mπt/h + θ_m)` per component with `Σ|a_m| ≤ amplitude`.
pub fn random_segment(rng: &mut SampleRng, h: f64, n_intervals: usize, n: usize, amplitude: f64) -> Result<VectorSegment> {
    const MODES: usize = 4;
    let w = std::f64::consts::PI / h;
    let comps = (0..n)
        .map(|_| {
            let mut a: Vec<f64> = (0..MODES).map(|_| rng.random_range(-1.0..1.0)).collect();
            let total: f64 = a.iter().map(|x: &f64| x.abs()).sum::<f64>().max(1e-12);
            let scale = amplitude * rng.random::<f64>() / total;
            a.iter_mut().for_each(|x| *x *= scale);
            let th: Vec<f64> = (0..MODES).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            ScalarSegment::from_fn(
                h,
                n_intervals,
                |t| (0..MODES).map(|m| a[m] * (m as f64 * w * t + th[m]).cos()).sum(),
                |t| (0..MODES).map(|m| -a[m] * m as f64 * w * (m as f64 * w * t + th[m]).sin()).sum(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    VectorSegment::new(comps)
}

/// A random segment with `ψ'(0) = 0` exactly.
pub fn random_flat_segment(rng: &mut SampleRng, h: f64, n_intervals: usize, n: usize, amplitude: f64) -> Result<VectorSegment> {
    let eta = slope_direction(h, n_intervals)?;
    let mut comps = random_segment(rng, h, n_intervals, n, amplitude)?.into_components();
    for c in &mut comps {
        let s = c.slopes()[n_intervals];
        c.axpy(-s, &eta)?;
    }
    VectorSegment::new(comps)
}

/// Uniform in `I^k`, kept 1% away from its ends.
pub fn sample_r(rng: &mut SampleRng, model: &ModelSpec) -> Vec<f64> {
    let i = model.i;
    (0..model.k).map(|_| i.lo + i.len() * rng.random_range(0.01..0.99)).collect()
}

/// Uniform in `[-2, 2]^{kn}` for `V = R^{kn}`, otherwise in a random box of
/// `V` shrunk by `min(0.2, width/4)` per side (finite ends are capped at ±2 around the center).
pub fn sample_v(rng: &mut SampleRng, model: &ModelSpec) -> Vec<f64> {
    let kn = model.kn();
    match &model.g.v {
        Region::All => (0..kn).map(|_| rng.random_range(-2.0..2.0)).collect(),
        Region::Boxes(bs) => {
            let b = &bs[rng.random_range(0..bs.len())];
            let c = b.center();
            (0..kn)
                .map(|i| {
                    let lo = b.lo[i].max(c[i] - 2.2);
                    let hi = b.hi[i].min(c[i] + 2.2);
                    let m = (0.2f64).min((hi - lo) / 4.0);
                    rng.random_range(lo + m..hi - m)
                })
                .collect()
        }
    }
}

/// A random point of `U`, by rejection.
pub fn sample_domain_point(rng: &mut SampleRng, model: &ModelSpec, n_intervals: usize, amplitude: f64) -> Option<StatePoint> {
    for _ in 0..1000 {
        let r = sample_r(rng, model);
        let phi = random_segment(rng, model.h, n_intervals, model.n, amplitude).ok()?;
        if model.in_domain(&r, &phi) {
            return Some(StatePoint::new(r, phi));
        }
    }
    None
}

fn fmt_v(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// `|Eφ|_{C(J)} ≤ 3 |φ|_C` on random node data, attainment by a cosine, and
/// exact extension of affine segments.
pub fn check_extension(rng: &mut SampleRng, h: f64, j: Interval, count: usize) -> Vec<CheckResult> {
    const N: usize = 64;
    let mut ratio = Worst::new();
    for s in 0..count {
        let values: Vec<f64> = (0..=N).map(|_| rng.random_range(-1.0..1.0)).collect();
        let slopes: Vec<f64> = (0..=N).map(|_| rng.random_range(-8.0..8.0)).collect();
        let phi = ScalarSegment::from_nodes(h, values, slopes).expect("finite node data");
        ratio.push(phi.extension_c_norm(&j) / phi.norms().c_norm, || format!("sample {s}"));
    }
    let w = std::f64::consts::PI / h;
    let cosine = ScalarSegment::from_fn(h, N, |t| (w * t).cos(), |t| -w * (w * t).sin()).expect("mesh");
    let witness = cosine.extension_c_norm(&j) / cosine.norms().c_norm;

    let mut affine = Worst::new();
    for s in 0..20 {
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let phi = ScalarSegment::from_fn(h, N, |t| a + b * t, |_| b).expect("mesh");
        for m in 0..=400 {
            let t = j.lo + j.len() * m as f64 / 400.0;
            let (u, du) = phi.eval_extension(t, &j).expect("t in J");
            affine.push((u - (a + b * t)).abs().max((du - b).abs()), || format!("sample {s}, t = {t}"));
        }
    }
    vec![
        ratio.check("extension_bound", 3.0 + 1e-12),
        CheckResult::at_least("extension_witness", witness, 2.99, 1),
        affine.check("extension_affine", 1e-12),
    ]
}

/// Annihilation by `Q_j`, unit slope, `|χ|_C ≤ h_g(v)` and the same bound
/// for difference quotients in `v`.
pub fn check_chi_contract(ctx: &TransformContext, rng: &mut SampleRng, count: usize) -> Vec<CheckResult> {
    const STEP: f64 = 1e-5;
    let model = ctx.model();
    let field = ctx.field();
    let kn = model.kn();
    let mut q_abs = Worst::new();
    let mut slope = Worst::new();
    let mut bound = Worst::new();
    let mut fd_bound = Worst::new();
    let mut agree = Worst::new();
    for s in 0..count {
        let r = sample_r(rng, model);
        let v = sample_v(rng, model);
        let at = || format!("sample {s}: r = {}, v = {}", fmt_v(&r), fmt_v(&v));
        let hg = match h_g_eval(model, &v) {
            Ok(x) => x,
            Err(e) => {
                bound.push(f64::NAN, || format!("{}: {e}", at()));
                continue;
            }
        };
        for j in 0..model.n {
            let chi = match field.chi_eval(j, &r, &v) {
                Ok(c) => c,
                Err(e) => {
                    q_abs.push(f64::NAN, || format!("{}, j = {}: {e}", at(), j + 1));
                    continue;
                }
            };
            q_abs.push(norm(&model.q_component(j, &r, &chi)), || format!("{}, j = {}", at(), j + 1));
            slope.push((chi.slopes()[chi.intervals()] - 1.0).abs(), || format!("{}, j = {}", at(), j + 1));
            bound.push(chi.norms().c_norm - hg, || format!("{}, j = {}", at(), j + 1));
            for iota in 0..kn {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[iota] += STEP;
                vm[iota] -= STEP;
                let loc = || format!("{}, j = {}, ι = {}", at(), j + 1, iota + 1);
                let pair = field.chi_eval(j, &r, &vp).and_then(|p| Ok((p, field.chi_eval(j, &r, &vm)?)));
                let analytic = field.chi_partial(j, &r, &v, iota);
                match (pair, analytic) {
                    (Ok((p, m)), Ok(an)) => {
                        let mut fd = p;
                        fd.axpy(-1.0, &m).expect("same mesh");
                        let fd = fd.scaled(1.0 / (2.0 * STEP));
                        fd_bound.push(fd.norms().c_norm - hg, loc);
                        let mut d = fd.clone();
                        d.axpy(-1.0, &an).expect("same mesh");
                        agree.push(d.norms().c_norm, loc);
                    }
                    (Err(e), _) | (_, Err(e)) => fd_bound.push(f64::NAN, || format!("{}: {e}", loc())),
                }
            }
        }
    }
    vec![
        q_abs.check("chi_annihilated_by_q", 1e-8),
        slope.check("chi_unit_slope", 0.0),
        bound.check("chi_norm_bound", 0.0).with_detail("worst = |χ|_C - h_g(v)"),
        fd_bound.check("chi_partial_bound", 1e-6).with_detail("worst = |Δχ/Δv|_C - h_g(v), central differences"),
        agree.check("chi_partial_agreement", 1e-6).with_detail("|difference quotient - analytic partial|_C"),
    ]
}

/// `|D_2 R| ≤ 1/2` by central differences and, for box `V`, `|R| ≤ dist(v, ∂V)/2`.
pub fn check_contraction(ctx: &TransformContext, rng: &mut SampleRng, count: usize) -> Vec<CheckResult> {
    let model = ctx.model();
    let mut d2r = Worst::new();
    let mut face = Worst::new();
    for s in 0..count {
        let r = sample_r(rng, model);
        let v = sample_v(rng, model);
        let at = || format!("sample {s}: r = {}, v = {}", fmt_v(&r), fmt_v(&v));
        match ctx.d2r_norm_estimate(&r, &v) {
            Ok(x) => d2r.push(x, at),
            Err(e) => d2r.push(f64::NAN, || format!("{}: {e}", at())),
        }
        if let Region::Boxes(_) = model.g.v {
            match ctx.r_eval(&r, &v) {
                Ok(rv) => face.push(norm(&rv) - 0.5 * model.g.v.dist_to_complement(&v), at),
                Err(e) => face.push(f64::NAN, || format!("{}: {e}", at())),
            }
        }
    }
    let mut out = vec![d2r.check("contraction_d2r", 0.5 + 1e-6)];
    if let Region::Boxes(_) = model.g.v {
        out.push(face.check("contraction_face_bound", 1e-9).with_detail("worst = |R(r,v)| - dist(v, ∂V)/2"));
    }
    out
}

/// Inversion of `S_r` at reachable `y = S_r(v)`.
pub fn check_s_inverse(ctx: &TransformContext, rng: &mut SampleRng, count: usize) -> Vec<CheckResult> {
    let model = ctx.model();
    let mut residual = Worst::new();
    let mut ratio = Worst::new();
    let mut iterations = Worst::new();
    for s in 0..count {
        let r = sample_r(rng, model);
        let v = sample_v(rng, model);
        let at = || format!("sample {s}: r = {}, v = {}", fmt_v(&r), fmt_v(&v));
        let inv = ctx.s_eval(&r, &v).and_then(|y| Ok((ctx.s_inverse(&r, &y)?, y)));
        match inv {
            Ok((inv, y)) => {
                let back = ctx.s_eval(&r, &inv.v).map(|sv| diff(&sv, &y)).unwrap_or(f64::NAN);
                residual.push(back, at);
                for q in &inv.ratios {
                    ratio.push(*q, at);
                }
                iterations.push(inv.iterations as f64, at);
            }
            Err(e) => residual.push(f64::NAN, || format!("{}: {e}", at())),
        }
    }
    vec![
        residual.check("s_inverse_residual", 1e-10),
        ratio.check("s_inverse_step_ratio", 0.5 + 1e-3),
        iterations.check("s_inverse_iterations", 60.0),
    ]
}

/// Round trips `Y∘T`, `T∘Y` and the invariances of `A`, `B`.
pub fn check_transform(ctx: &TransformContext, rng: &mut SampleRng, count: usize, amplitude: f64) -> Vec<CheckResult> {
    let model = ctx.model();
    let mesh = ctx.mesh();
    let mut yt = Worst::new();
    let mut ty = Worst::new();
    let mut slope_id = Worst::new();
    let mut q_inv = Worst::new();
    let mut delta_inv = Worst::new();
    let mut transport = Worst::new();
    let mut missing = 0;
    for s in 0..count {
        let Some(p) = sample_domain_point(rng, model, mesh, amplitude) else {
            missing += 1;
            continue;
        };
        let at = || format!("sample {s}: r = {}", fmt_v(&p.r));
        match ctx.t_map(&p) {
            Ok(tp) => {
                let v = model.hat(&p.r, &p.phi).expect("domain point");
                let g = model.g_value(&v);
                let expect: Vec<f64> = p.phi.slope_at_zero().iter().zip(&g).map(|(a, b)| a - b).collect();
                slope_id.push(diff(&tp.phi.slope_at_zero(), &expect), at);
                let q0 = model.q_eval(&p.r, &p.phi).expect("domain point");
                q_inv.push(model.q_eval(&tp.r, &tp.phi).map(|q| diff(&q, &q0)).unwrap_or(f64::NAN), at);
                let d0 = model.Delta(&p.r, &p.phi).expect("domain point");
                let d1 = model.delta_value(&tp.r, &model.q_eval(&tp.r, &tp.phi).unwrap_or_default());
                delta_inv.push(diff(&d1, &d0), at);
                let y = model.hat(&tp.r, &tp.phi).expect("r in J");
                transport.push(ctx.s_eval(&p.r, &v).map(|sv| diff(&sv, &y)).unwrap_or(f64::NAN), at);
                match ctx.y_map(&tp) {
                    Ok(back) => yt.push(back.phi.c1_distance(&p.phi).unwrap_or(f64::NAN), at),
                    Err(e) => yt.push(f64::NAN, || format!("{}: {e}", at())),
                }
            }
            Err(e) => yt.push(f64::NAN, || format!("{}: {e}", at())),
        }

        // reverse direction on an independent point of O
        let Some(q) = sample_domain_point(rng, model, mesh, amplitude) else {
            missing += 1;
            continue;
        };
        let at = || format!("sample {s}: r = {} (reverse)", fmt_v(&q.r));
        match ctx.y_map(&q) {
            Ok(yq) => {
                let q0 = model.q_eval(&q.r, &q.phi).expect("r in J");
                q_inv.push(model.q_eval(&yq.r, &yq.phi).map(|x| diff(&x, &q0)).unwrap_or(f64::NAN), at);
                match ctx.t_map(&yq) {
                    Ok(back) => ty.push(back.phi.c1_distance(&q.phi).unwrap_or(f64::NAN), at),
                    Err(e) => ty.push(f64::NAN, || format!("{}: {e}", at())),
                }
            }
            Err(e) => ty.push(f64::NAN, || format!("{}: {e}", at())),
        }
    }
    let mut out = vec![
        yt.check("round_trip_y_of_t", 1e-8),
        ty.check("round_trip_t_of_y", 1e-8),
        slope_id.check("slope_identity", 0.0),
        q_inv.check("q_invariance", 1e-10),
        delta_inv.check("delta_invariance", 1e-9),
        transport.check("hat_transport", 1e-10),
    ];
    if missing > 0 {
        out.push(CheckResult::failed("domain_sampling", count, format!("{missing} samples found no point of U")));
    }
    out
}

/// Central differences against `DG`, `D_2 Δ` and `D_1 Δ`.
pub fn check_derivatives(model: &ModelSpec, rng: &mut SampleRng, n_intervals: usize, count: usize, amplitude: f64) -> Vec<CheckResult> {
    const STEP: f64 = 1e-6;
    const WIDE_STEP: f64 = 1e-3;
    let mut dg = Worst::new();
    let mut d2 = Worst::new();
    let mut d1 = Worst::new();
    let rel = |fd: &[f64], an: &[f64]| diff(fd, an) / norm(an).max(norm(fd)).max(f64::MIN_POSITIVE);
    for s in 0..count {
        let Some(p) = sample_domain_point(rng, model, n_intervals, amplitude) else {
            dg.push(f64::NAN, || format!("sample {s}: no point of U found"));
            continue;
        };
        let dir_r: Vec<f64> = (0..model.k).map(|_| rng.random_range(-0.2..0.2)).collect();
        let Ok(psi) = random_segment(rng, model.h, n_intervals, model.n, 0.5) else { continue };
        let at = || format!("sample {s}: r = {}", fmt_v(&p.r));
        let moved = |e: f64, with_r: bool| -> Result<(Vec<f64>, VectorSegment)> {
            let r: Vec<f64> = p.r.iter().zip(&dir_r).map(|(a, b)| if with_r { a + e * b } else { *a }).collect();
            Ok((r, VectorSegment::linear_combine(&[&p.phi, &psi], &[1.0, e])?))
        };
        let fd = |f: &dyn Fn(&[f64], &VectorSegment) -> Result<Vec<f64>>, with_r: bool| -> Result<Vec<f64>> {
            let (rp, pp) = moved(STEP, with_r)?;
            let (rm, pm) = moved(-STEP, with_r)?;
            let (a, b) = (f(&rp, &pp)?, f(&rm, &pm)?);
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * STEP)).collect())
        };
        let g_fd = fd(&|r, phi| model.G(r, phi), true);
        let g_an = model.dg_directional(&p.r, &p.phi, &dir_r, &psi);
        match (g_fd, g_an) {
            (Ok(a), Ok(b)) => dg.push(rel(&a, &b), at),
            (Err(e), _) | (_, Err(e)) => dg.push(f64::NAN, || format!("{}: {e}", at())),
        }
        // Δ is smooth along ψ and its derivative can be small, so a wide
        // fourth-order stencil beats a narrow central difference here.
        let d_fd = (|| -> Result<Vec<f64>> {
            let e = WIDE_STEP;
            let mut acc = vec![0.0; model.k];
            for (m, w) in [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)] {
                let (r, phi) = moved(m * e, false)?;
                for (a, v) in acc.iter_mut().zip(model.Delta(&r, &phi)?) {
                    *a += w * v / (12.0 * e);
                }
            }
            Ok(acc)
        })();
        let d_an = model.d2delta_directional(&p.r, &p.phi, &psi);
        match (d_fd, d_an) {
            (Ok(a), Ok(b)) => d2.push(rel(&a, &b), at),
            (Err(e), _) | (_, Err(e)) => d2.push(f64::NAN, || format!("{}: {e}", at())),
        }
        match model.d1delta(&p.r, &p.phi) {
            Ok(jac) => {
                let mut fd_jac = Vec::new();
                let mut an = Vec::new();
                for col in 0..model.k {
                    let mut rp = p.r.clone();
                    let mut rm = p.r.clone();
                    rp[col] += STEP;
                    rm[col] -= STEP;
                    match (model.Delta(&rp, &p.phi), model.Delta(&rm, &p.phi)) {
                        (Ok(a), Ok(b)) => fd_jac.extend(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * STEP))),
                        _ => fd_jac.extend(std::iter::repeat_n(f64::NAN, model.k)),
                    }
                    an.extend(jac.column(col).iter().copied());
                }
                d1.push(rel(&fd_jac, &an), at);
            }
            Err(e) => d1.push(f64::NAN, || format!("{}: {e}", at())),
        }
    }
    vec![
        dg.check("derivative_dg", 1e-5),
        d2.check("derivative_d2_delta", 1e-5),
        d1.check("derivative_d1_delta", 1e-5),
    ]
}

/// Manifold points from the documented seed with random perturbations; the
/// first one uses the unperturbed zero segment.
pub fn manifold_points(
    model: &ModelSpec,
    rng: &mut SampleRng,
    n_intervals: usize,
    r_seed: &[f64],
    count: usize,
    amplitude: f64,
) -> Vec<std::result::Result<StatePoint, String>> {
    (0..count)
        .map(|s| {
            let phi = if s == 0 {
                constant_segment(model.h, n_intervals, &vec![0.0; model.n])
            } else {
                random_segment(rng, model.h, n_intervals, model.n, amplitude).map_err(|e| e.to_string())?
            };
            find_manifold_point(model, &StatePoint::new(r_seed.to_vec(), phi)).map_err(|e| format!("sample {s}: {e}"))
        })
        .collect()
}

/// Convergence of the Newton search from the documented seed.
pub fn check_find_point(model: &ModelSpec, n_intervals: usize, r_seed: &[f64]) -> Vec<CheckResult> {
    let seed = StatePoint::new(r_seed.to_vec(), constant_segment(model.h, n_intervals, &vec![0.0; model.n]));
    match find_manifold_point(model, &seed).and_then(|p| model.manifold_residuals(&p.r, &p.phi)) {
        Ok(res) => vec![
            CheckResult::at_most("find_point_residual", res.ode.max(res.delta), 1e-10, 1),
            CheckResult::at_least("find_point_det", res.det.abs(), 0.5, 1),
        ],
        Err(e) => vec![CheckResult::failed("find_point_residual", 1, e.to_string())],
    }
}

/// The set identity `T(M) = {ψ'(0) = 0, Δ = 0, det ≠ 0} ∩ O`, sampled in
/// both directions, plus the graph residual for offset delays with constant `L`.
pub fn check_manifold_image(
    ctx: &TransformContext,
    rng: &mut SampleRng,
    r_seed: &[f64],
    count: usize,
    amplitude: f64,
    tol: f64,
) -> Vec<CheckResult> {
    let model = ctx.model();
    let mesh = ctx.mesh();
    let graph_applies = matches!((&model.delta, &model.q), (DeltaSpec::Offset { .. }, QSpec::ConstantL { .. }));
    let mut forward = Worst::new();
    let mut graph = Worst::new();
    let mut fixed = Worst::new();
    for (s, p) in manifold_points(model, rng, mesh, r_seed, count, amplitude).into_iter().enumerate() {
        let p = match p {
            Ok(p) => p,
            Err(e) => {
                forward.push(f64::NAN, || e);
                continue;
            }
        };
        let at = || format!("point {s}: r = {}", fmt_v(&p.r));
        match ctx.t_map(&p) {
            Ok(tp) => {
                if s == 0 {
                    fixed.push(tp.phi.c1_distance(&p.phi).unwrap_or(f64::NAN), at);
                }
                let c = ctx.classify_point(&tp, tol);
                let res = c.slope_at_zero.unwrap_or(f64::NAN).max(c.image_delta_residual.unwrap_or(f64::NAN));
                let ok = c.image_det.is_some_and(|d| d.abs() >= ctx.tol.det_floor);
                forward.push(if ok { res } else { f64::NAN }, || format!("{}{}", at(), if ok { "" } else { ": image not in O or singular" }));
                if graph_applies {
                    graph.push(c.graph_residual.unwrap_or(f64::NAN), at);
                }
            }
            Err(e) => forward.push(f64::NAN, || format!("{}: {e}", at())),
        }
    }

    let mut reverse = Worst::new();
    let delta_min = -model.i.hi;
    for s in 0..count {
        let at = |r: &[f64]| format!("point {s}: r = {}", fmt_v(r));
        let psi = match random_flat_segment(rng, model.h, mesh, model.n, amplitude) {
            Ok(x) => x,
            Err(e) => {
                reverse.push(f64::NAN, || e.to_string());
                continue;
            }
        };
        let r = match solve_delay(model, &psi, r_seed, delta_min) {
            Ok(sol) => sol.r,
            Err(e) => {
                reverse.push(f64::NAN, || format!("point {s}: Δ(r, ψ) = 0 not solved: {e}"));
                continue;
            }
        };
        let q = StatePoint::new(r, psi);
        match ctx.y_map(&q).and_then(|p| model.manifold_residuals(&p.r, &p.phi)) {
            Ok(res) if res.det.abs() >= ctx.tol.det_floor => reverse.push(res.ode.max(res.delta), || at(&q.r)),
            Ok(res) => reverse.push(f64::NAN, || format!("{}: det = {:.3e}", at(&q.r), res.det)),
            Err(e) => reverse.push(f64::NAN, || format!("{}: {e}", at(&q.r))),
        }
    }

    let mut out = vec![
        forward.check("manifold_image_forward", 1e-7),
        reverse.check("manifold_image_reverse", 1e-7),
        fixed.check("flat_manifold_points_fixed", 0.0),
    ];
    if graph_applies {
        out.push(graph.check("graph_residual", 1e-9));
    }
    out
}

/// Step sizes for the order test: `δ_min/5` halved twice, reference `δ_min/1000`.
pub fn order_steps(model: &ModelSpec) -> ([f64; 4], f64) {
    let d = default_delta_min(model.h) / 5.0;
    ([d, d / 2.0, d / 4.0, d / 8.0], d / 200.0)
}

/// Perturbed run from a manifold point, its residual checks and the observed order.
pub fn check_semiflow(model: &ModelSpec, scenario_mesh: usize, r_seed: &[f64], amplitude: f64, t_end: f64, dt: f64) -> Vec<CheckResult> {
    let opts = IntegrateOptions::for_model(model);
    let p0 = cosine_seed(model.h, scenario_mesh, model.n, amplitude)
        .and_then(|phi| find_manifold_point(model, &StatePoint::new(r_seed.to_vec(), phi)));
    let p0 = match p0 {
        Ok(p) => p,
        Err(e) => return vec![CheckResult::failed("semiflow_start", 1, e.to_string())],
    };
    // Order is measured from a start that is C^2 at 0; a plain manifold point
    // leaves a third-derivative jump inside one step, which limits RK4 to order 3.
    let smooth = find_smooth_manifold_point(model, &p0, opts.delta_min);
    let mut out = match integrate(model, &p0, t_end, dt, opts) {
        Ok(tr) => trajectory_residuals(model, &tr, scenario_mesh, 1),
        Err(e) => vec![CheckResult::failed("semiflow_run", 1, e.to_string())],
    };
    let (dts, dt_ref) = order_steps(model);
    match smooth.and_then(|p| convergence_orders(model, &p, 2.0 * model.h, &dts, dt_ref, opts)) {
        Ok((errors, orders)) => {
            let fitted = fitted_order(&dts, &errors);
            out.push(
                CheckResult::at_least("convergence_order", fitted, 3.5, errors.len())
                    .with_detail(format!("fitted over dt = {dts:?}, errors = {}, pairwise orders = {orders:.3?}", errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" "))),
            );
        }
        Err(e) => out.push(CheckResult::failed("convergence_order", 0, e.to_string())),
    }
    out
}

/// The full suite for a scenario.
pub fn run_suite(scenario: &Scenario) -> Result<VerificationReport> {
    let model = &scenario.model;
    let n = &scenario.samples;
    let mut rng = rng(scenario.seed);
    let mut checks = check_extension(&mut rng, model.h, model.j, n.extension);
    checks.push(verify_hq(model, 9, scenario.mesh));
    let ctx = TransformContext::new(model.clone(), scenario.mesh)?;
    checks.extend(check_chi_contract(&ctx, &mut rng, n.chi));
    checks.extend(check_contraction(&ctx, &mut rng, n.contraction));
    checks.extend(check_s_inverse(&ctx, &mut rng, n.inverse));
    checks.extend(check_transform(&ctx, &mut rng, n.domain, 0.5));
    checks.extend(check_derivatives(model, &mut rng, scenario.mesh, n.derivatives, 0.5));
    checks.extend(check_find_point(model, scenario.mesh, &scenario.r_seed));
    checks.extend(check_manifold_image(&ctx, &mut rng, &scenario.r_seed, n.manifold, scenario.amplitude, scenario.tol));
    checks.extend(check_semiflow(model, scenario.mesh, &scenario.r_seed, scenario.amplitude, scenario.t_end, scenario.dt));
    let tolerances = serde_json::json!({
        "settings": scenario.settings_json(),
        "transform": ctx.tol,
    });
    let provenance = Provenance::new(&model.name, &scenario.canonical_json(), scenario.seed, scenario.mesh, tolerances);
    Ok(VerificationReport::new(checks, provenance))
}
