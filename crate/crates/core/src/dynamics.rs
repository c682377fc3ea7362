//! Manifold points by Newton search, and the method of steps: RK4 on `x`
//! with a delay solve at every stage and cubic Hermite dense output.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{norm, ModelSpec, StatePoint};
use crate::report::{CheckResult, Least, Worst};
use crate::segment::{hermite, ScalarSegment, SegmentView, VectorSegment};

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 25;
pub const SEARCH_MAX_ITER: usize = 50;
pub const DET_FLOOR: f64 = 1e-6;
const SOLVE_DET_FLOOR: f64 = 1e-10;
const BLOWUP: f64 = 1e-3;

/// `δ_min = h / 20`.
pub fn default_delta_min(h: f64) -> f64 {
    h / 20.0
}

/// Slope-1 direction `η(t) = t e^{4t/h}` used to adjust `φ'(0)`.
fn eta(h: f64) -> impl Fn(f64) -> (f64, f64) {
    move |t| {
        let e = (4.0 * t / h).exp();
        (t * e, e * (1.0 + 4.0 * t / h))
    }
}

/// `φ_j(t) = a cos(π t / h + j)`, a smooth seed for manifold searches.
pub fn cosine_seed(h: f64, n_intervals: usize, n: usize, amplitude: f64) -> Result<VectorSegment> {
    let w = std::f64::consts::PI / h;
    VectorSegment::from_fn(
        h,
        n_intervals,
        n,
        |j, t| amplitude * (w * t + j as f64).cos(),
        |j, t| -amplitude * w * (w * t + j as f64).sin(),
    )
}

/// Initial delay guess for the built-in scenarios; `-h/2` per delay otherwise.
pub fn documented_r_seed(model: &ModelSpec) -> Vec<f64> {
    match model.name.as_str() {
        "echo" => vec![-0.9],
        "lin2" | "lin2box" => vec![-0.45],
        "pair" => vec![-0.5, -0.8],
        _ => vec![-model.h / 2.0; model.k],
    }
}

fn residual_vector(model: &ModelSpec, r: &[f64], phi: &VectorSegment) -> Result<Vec<f64>> {
    let g = model.G(r, phi)?;
    let mut out: Vec<f64> = phi.slope_at_zero().iter().zip(&g).map(|(a, b)| a - b).collect();
    out.extend(model.Delta(r, phi)?);
    Ok(out)
}

/// `η` on a mesh: value 0 and slope 1 at `t = 0`.
pub fn slope_direction(h: f64, n_intervals: usize) -> Result<ScalarSegment> {
    let e = eta(h);
    ScalarSegment::from_fn(h, n_intervals, |t| e(t).0, |t| e(t).1)
}

fn shifted(seed: &VectorSegment, c: &[f64]) -> Result<VectorSegment> {
    let eta_seg = slope_direction(seed.h(), seed.intervals())?;
    let mut comps = seed.components().to_vec();
    for (comp, &cj) in comps.iter_mut().zip(c) {
        comp.axpy(cj, &eta_seg)?;
    }
    VectorSegment::new(comps)
}

/// Newton search for a point of the solution manifold near `seed`.
///
/// Unknowns are `(c, r)` with `φ = φ_seed + c ⊙ η`; the Jacobian is taken
/// by central differences.
pub fn find_manifold_point(model: &ModelSpec, seed: &StatePoint) -> Result<StatePoint> {
    let (n, k) = (model.n, model.k);
    if seed.r.len() != k || seed.phi.n() != n {
        return Err(Error::Dimension(format!("seed must lie in R^{k} x C_{n}")));
    }
    let eval = |z: &[f64]| -> Result<(Vec<f64>, VectorSegment)> {
        let phi = shifted(&seed.phi, &z[..n])?;
        Ok((residual_vector(model, &z[n..], &phi)?, phi))
    };
    let mut z = vec![0.0; n];
    z.extend_from_slice(&seed.r);
    let (mut f, mut phi) = eval(&z)?;
    for _ in 0..SEARCH_MAX_ITER {
        if norm(&f) <= NEWTON_TOL {
            return finish_search(model, z[n..].to_vec(), phi);
        }
        let m = n + k;
        let mut jac = DMatrix::zeros(m, m);
        for col in 0..m {
            let step = 1e-7 * (1.0 + z[col].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[col] += step;
            zm[col] -= step;
            let col_vals: Vec<f64> = match (eval(&zp), eval(&zm)) {
                (Ok(a), Ok(b)) => a.0.iter().zip(&b.0).map(|(p, q)| (p - q) / (2.0 * step)).collect(),
                // one-sided next to the domain boundary
                (Ok(a), Err(_)) => a.0.iter().zip(&f).map(|(p, q)| (p - q) / step).collect(),
                (Err(_), Ok(b)) => f.iter().zip(&b.0).map(|(p, q)| (p - q) / step).collect(),
                (Err(e), Err(_)) => return Err(e),
            };
            for (row, d) in col_vals.into_iter().enumerate() {
                jac[(row, col)] = d;
            }
        }
        let dz = jac
            .lu()
            .solve(&(-DVector::from_column_slice(&f)))
            .ok_or_else(|| Error::Convergence("singular Newton matrix in the manifold search".into()))?;
        let current = norm(&f);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + lambda * b).collect();
            match eval(&trial) {
                Ok((ft, pt)) if norm(&ft) < current || lambda < 1e-3 => {
                    z = trial;
                    f = ft;
                    phi = pt;
                    break;
                }
                Err(e) if lambda < 1e-3 => return Err(e),
                _ => lambda *= 0.5,
            }
        }
    }
    if norm(&f) <= NEWTON_TOL {
        return finish_search(model, z[n..].to_vec(), phi);
    }
    Err(Error::Convergence(format!(
        "manifold search did not converge in {SEARCH_MAX_ITER} Newton steps (residual {:.3e})",
        norm(&f)
    )))
}

fn finish_search(model: &ModelSpec, r: Vec<f64>, phi: VectorSegment) -> Result<StatePoint> {
    let det = model.d1delta(&r, &phi)?.determinant();
    if det.abs() < DET_FLOOR {
        return Err(Error::Singular { det });
    }
    Ok(StatePoint { r, phi })
}

/// `ζ(t) = t^2/2 · e^{κt/h}` with `κ = 20`: zero value and slope, unit curvature at 0.
fn curvature_direction(h: f64, n_intervals: usize) -> Result<ScalarSegment> {
    let k = 20.0 / h;
    ScalarSegment::from_fn(
        h,
        n_intervals,
        |t| 0.5 * t * t * (k * t).exp(),
        |t| (t + 0.5 * k * t * t) * (k * t).exp(),
    )
}

/// Second derivative of the spline at `t = 0` from the left.
pub fn left_curvature(seg: &ScalarSegment) -> f64 {
    let n = seg.intervals();
    let dx = seg.h() / n as f64;
    let (u0, u1) = (seg.values()[n - 1], seg.values()[n]);
    let (m0, m1) = (seg.slopes()[n - 1], seg.slopes()[n]);
    (6.0 * (u0 - u1) + dx * (2.0 * m0 + 4.0 * m1)) / (dx * dx)
}

/// `φ` read at `t + s`, continued linearly past 0.
struct Shifted<'a> {
    phi: &'a VectorSegment,
    t: f64,
}

impl SegmentView for Shifted<'_> {
    fn h(&self) -> f64 {
        self.phi.h()
    }

    fn dim(&self) -> usize {
        self.phi.n()
    }

    fn component_at(&self, j: usize, s: f64) -> (f64, f64) {
        let u = self.t + s.clamp(-self.phi.h(), 0.0);
        if u <= 0.0 {
            self.phi.component_at(j, u)
        } else {
            let (x, m) = self.phi.component_at(j, 0.0);
            (x + u * m, m)
        }
    }
}

/// `x''(0+)` of the solution starting at `p`, by a central difference of
/// `t ↦ G(r(t), x_t)` over times at which only the initial segment is read.
pub fn initial_curvature(model: &ModelSpec, p: &StatePoint, delta_min: f64) -> Result<Vec<f64>> {
    let eps = 1e-4 * delta_min;
    let at = |t: f64| -> Result<Vec<f64>> {
        let view = Shifted { phi: &p.phi, t };
        let sol = solve_delay(model, &view, &p.r, delta_min)?;
        model.G(&sol.r, &view)
    };
    let (a, b) = (at(eps)?, at(-eps)?);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * eps)).collect())
}

/// A manifold point whose initial spline also matches `x''(0+)`, so that the
/// solution is `C^2` at 0. Removes the third-derivative jump that otherwise
/// caps fixed-step RK4 at order three.
pub fn find_smooth_manifold_point(model: &ModelSpec, seed: &StatePoint, delta_min: f64) -> Result<StatePoint> {
    let h = model.h;
    let n_int = seed.phi.intervals();
    let zeta = curvature_direction(h, n_int)?;
    let zeta_curv = left_curvature(&zeta);
    let mut d = vec![0.0; model.n];
    let mut last = f64::INFINITY;
    for _ in 0..20 {
        let mut comps = seed.phi.components().to_vec();
        for (c, dj) in comps.iter_mut().zip(&d) {
            c.axpy(*dj, &zeta)?;
        }
        let p = find_manifold_point(model, &StatePoint::new(seed.r.clone(), VectorSegment::new(comps)?))?;
        let target = initial_curvature(model, &p, delta_min)?;
        let mut worst = 0.0f64;
        for (j, dj) in d.iter_mut().enumerate() {
            let miss = target[j] - left_curvature(p.phi.component(j));
            worst = worst.max(miss.abs() / (1.0 + target[j].abs()));
            *dj += miss / zeta_curv;
        }
        if worst <= 1e-8 || (worst >= last && worst <= 1e-6) {
            return Ok(p);
        }
        last = worst;
    }
    Err(Error::Convergence("curvature matching at t = 0 did not converge".into()))
}

/// Result of a delay solve.
#[derive(Clone, Debug)]
pub struct DelaySolve {
    pub r: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `Δ(r, x_t) = 0` for `r` by Newton's method from `r_guess`.
pub fn solve_delay(model: &ModelSpec, xt: &dyn SegmentView, r_guess: &[f64], delta_min: f64) -> Result<DelaySolve> {
    let mut r = r_guess.to_vec();
    let mut f = model.Delta(&r, xt)?;
    let mut iterations = 0;
    while norm(&f) > NEWTON_TOL {
        if iterations == NEWTON_MAX_ITER {
            return Err(Error::Convergence(format!(
                "delay solve stalled after {NEWTON_MAX_ITER} iterations (|Δ| = {:.3e})",
                norm(&f)
            )));
        }
        iterations += 1;
        let d1 = model.d1delta(&r, xt)?;
        let det = d1.determinant();
        if det.abs() < SOLVE_DET_FLOOR {
            return Err(Error::Singular { det });
        }
        let dr = d1
            .lu()
            .solve(&(-DVector::from_column_slice(&f)))
            .ok_or(Error::Singular { det })?;
        let current = norm(&f);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = r.iter().zip(dr.iter()).map(|(a, b)| a + lambda * b).collect();
            match model.Delta(&trial, xt) {
                Ok(ft) if norm(&ft) < current || lambda < 1e-3 => {
                    r = trial;
                    f = ft;
                    break;
                }
                Err(e) if lambda < 1e-3 => return Err(e),
                _ => lambda *= 0.5,
            }
        }
    }
    // One more step once inside the tolerance: the 1e-12 stop would otherwise
    // put a floor under trajectory errors at small dt.
    if norm(&f) > 0.0 {
        if let Ok(d1) = model.d1delta(&r, xt) {
            if let Some(dr) = d1.lu().solve(&(-DVector::from_column_slice(&f))) {
                let trial: Vec<f64> = r.iter().zip(dr.iter()).map(|(a, b)| a + b).collect();
                if let Ok(ft) = model.Delta(&trial, xt) {
                    if norm(&ft) < norm(&f) {
                        r = trial;
                        f = ft;
                    }
                }
            }
        }
    }
    if let Some((index, &value)) = r.iter().enumerate().find(|(_, x)| **x > -delta_min) {
        return Err(Error::DelayTooSmall { index: index + 1, value, limit: delta_min });
    }
    Ok(DelaySolve { r, iterations, residual: norm(&f) })
}

/// Dense `C^1` history: the initial segment on `[-h, 0]` followed by step
/// nodes `t_i = i dt` with values and slopes.
#[derive(Clone, Debug)]
pub struct History {
    pub initial: VectorSegment,
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<f64>>,
}

impl History {
    pub fn h(&self) -> f64 {
        self.initial.h()
    }

    pub fn n(&self) -> usize {
        self.initial.n()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn last_time(&self) -> f64 {
        self.time(self.values.len() - 1)
    }

    /// Value and slope of component `j` at `u ∈ [-h, t_last]` (clamped).
    pub fn eval(&self, j: usize, u: f64) -> (f64, f64) {
        if u <= 0.0 {
            return self.initial.component_at(j, u);
        }
        let last = self.values.len() - 1;
        let x = u / self.dt;
        let i = (x.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return (self.values[0][j], self.slopes[0][j]);
        }
        let s = (x - i as f64).clamp(0.0, 1.0);
        if s == 0.0 {
            return (self.values[i][j], self.slopes[i][j]);
        }
        if s == 1.0 {
            return (self.values[i + 1][j], self.slopes[i + 1][j]);
        }
        hermite(self.values[i][j], self.slopes[i][j], self.values[i + 1][j], self.slopes[i + 1][j], self.dt, s)
    }

    /// `x_τ` read from the history, continued linearly with `tail_slope`
    /// beyond the last node.
    pub fn view<'a>(&'a self, tau: f64, tail_slope: &'a [f64]) -> HistoryView<'a> {
        HistoryView { hist: self, tau, tail_slope }
    }

    /// `x_t` resampled on a uniform mesh with `n_intervals`.
    pub fn segment_at(&self, t: f64, n_intervals: usize) -> Result<VectorSegment> {
        let zero = vec![0.0; self.n()];
        let v = self.view(t, &zero);
        VectorSegment::from_fn(self.h(), n_intervals, self.n(), |j, s| v.component_at(j, s).0, |j, s| {
            v.component_at(j, s).1
        })
    }
}

/// The segment `x_τ` seen through a [`History`].
pub struct HistoryView<'a> {
    hist: &'a History,
    tau: f64,
    tail_slope: &'a [f64],
}

impl SegmentView for HistoryView<'_> {
    fn h(&self) -> f64 {
        self.hist.h()
    }

    fn dim(&self) -> usize {
        self.hist.n()
    }

    fn component_at(&self, j: usize, s: f64) -> (f64, f64) {
        let h = self.hist.h();
        let u = self.tau + s.clamp(-h, 0.0);
        let t_last = self.hist.last_time();
        if u <= t_last {
            self.hist.eval(j, u)
        } else {
            let (x, _) = self.hist.eval(j, t_last);
            (x + (u - t_last) * self.tail_slope[j], self.tail_slope[j])
        }
    }
}

/// Residuals at the midpoint of a step.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepResidual {
    pub t: f64,
    pub delta: f64,
    pub ode: f64,
    pub det: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Stop {
    pub t: f64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t_e: f64,
    pub dt: f64,
    pub delta_min: f64,
    pub history: History,
    /// `r(t_i)` for every step node.
    pub r_samples: Vec<Vec<f64>>,
    /// One entry per completed step, evaluated at its midpoint.
    pub residuals: Vec<StepResidual>,
    /// Set when integration ended before `t_end`.
    pub stopped: Option<Stop>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.residuals.len()
    }

    pub fn max_delta_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.delta))
    }

    pub fn max_ode_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.ode))
    }

    pub fn min_abs_det(&self) -> f64 {
        self.residuals.iter().fold(f64::INFINITY, |m, r| m.min(r.det.abs()))
    }

    /// `x(t_i)` at step node `i`.
    pub fn x(&self, i: usize) -> &[f64] {
        &self.history.values[i]
    }

    /// CSV with header `t, x_1..x_n, dx_1..dx_n, r_1..r_k, res_delta, res_ode`;
    /// the residual columns of row `i > 0` belong to the step ending at `t_i`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let n = self.history.n();
        let k = self.r_samples.first().map_or(0, Vec::len);
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|j| format!("x_{j}")));
        head.extend((1..=n).map(|j| format!("dx_{j}")));
        head.extend((1..=k).map(|j| format!("r_{j}")));
        head.push("res_delta".into());
        head.push("res_ode".into());
        writeln!(w, "{}", head.join(","))?;
        for i in 0..self.r_samples.len() {
            let mut row = vec![self.history.time(i)];
            row.extend(&self.history.values[i]);
            row.extend(&self.history.slopes[i]);
            row.extend(&self.r_samples[i]);
            match i.checked_sub(1).and_then(|p| self.residuals.get(p)) {
                Some(res) => row.extend([res.delta, res.ode]),
                None => row.extend([0.0, 0.0]),
            }
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Options for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    pub delta_min: f64,
    /// Manifold tolerance for the initial point.
    pub start_tol: f64,
}

impl IntegrateOptions {
    pub fn for_model(model: &ModelSpec) -> Self {
        Self { delta_min: default_delta_min(model.h), start_tol: 1e-9 }
    }
}

/// Integrates from a manifold point with fixed-step RK4.
///
/// Errors before the first step (bad start point, `dt` too large) are
/// returned; errors during stepping end the run early and are recorded in
/// [`Trajectory::stopped`].
pub fn integrate(model: &ModelSpec, p0: &StatePoint, t_end: f64, dt: f64, opts: IntegrateOptions) -> Result<Trajectory> {
    let delta_min = opts.delta_min;
    if !(dt > 0.0 && dt <= delta_min / 4.0) {
        return Err(Error::Usage(format!(
            "dt = {dt} must be positive and at most δ_min/4 = {} for explicit stepping",
            delta_min / 4.0
        )));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Usage(format!("t_end = {t_end} must be a non-negative number")));
    }
    let res = model.manifold_residuals(&p0.r, &p0.phi)?;
    if res.ode > opts.start_tol || res.delta > opts.start_tol || res.det.abs() < DET_FLOOR {
        return Err(Error::Usage(format!(
            "initial point is not on the solution manifold (|φ'(0)-G| = {:.3e}, |Δ| = {:.3e}, det = {:.3e})",
            res.ode, res.delta, res.det
        )));
    }
    let n = model.n;
    let history = History {
        initial: p0.phi.clone(),
        dt,
        values: vec![p0.phi.value_at_zero()],
        slopes: vec![p0.phi.slope_at_zero()],
    };
    let mut traj = Trajectory {
        t_e: 0.0,
        dt,
        delta_min,
        history,
        r_samples: vec![p0.r.clone()],
        residuals: Vec::new(),
        stopped: None,
    };
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut r = p0.r.clone();
    for i in 0..steps {
        match step(model, &mut traj, i, &mut r, n) {
            Ok(()) => traj.t_e = traj.history.time(i + 1),
            Err(e) => {
                traj.stopped = Some(Stop { t: traj.t_e, reason: e.to_string() });
                break;
            }
        }
    }
    Ok(traj)
}

fn stage(model: &ModelSpec, hist: &History, tau: f64, tail: &[f64], r: &mut Vec<f64>, delta_min: f64) -> Result<Vec<f64>> {
    let view = hist.view(tau, tail);
    let sol = solve_delay(model, &view, r, delta_min)?;
    *r = sol.r;
    model.G(r, &view)
}

/// Advances from node `i` to `i + 1`; the slope at `i` is already final.
fn step(model: &ModelSpec, traj: &mut Trajectory, i: usize, r: &mut Vec<f64>, n: usize) -> Result<()> {
    let dt = traj.dt;
    let dm = traj.delta_min;
    let t = traj.history.time(i);
    let hist = &traj.history;
    let k1 = hist.slopes[i].clone();
    let mut r_stage = r.clone();
    let k2 = stage(model, hist, t + 0.5 * dt, &k1, &mut r_stage, dm)?;
    let r_mid = r_stage.clone();
    let k3 = stage(model, hist, t + 0.5 * dt, &k2, &mut r_stage, dm)?;
    let k4 = stage(model, hist, t + dt, &k3, &mut r_stage, dm)?;
    let x_next: Vec<f64> = (0..n)
        .map(|j| hist.values[i][j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect();
    // provisional slope; delayed reads never reach the last interval
    traj.history.values.push(x_next);
    traj.history.slopes.push(k4.clone());
    let t_next = traj.history.time(i + 1);
    let zero = vec![0.0; n];
    let mut r_next = r_stage;
    let f_next = {
        let view = traj.history.view(t_next, &zero);
        let sol = solve_delay(model, &view, &r_next, dm)?;
        r_next = sol.r;
        model.G(&r_next, &view)?
    };
    *traj.history.slopes.last_mut().expect("node just pushed") = f_next;

    let tm = t + 0.5 * dt;
    let view = traj.history.view(tm, &zero);
    let delta = norm(&model.Delta(&r_mid, &view)?);
    let g = model.G(&r_mid, &view)?;
    let ode = norm(&(0..n).map(|j| traj.history.eval(j, tm).1 - g[j]).collect::<Vec<_>>());
    let det = model.d1delta(&r_mid, &view)?.determinant();
    if delta > BLOWUP || ode > BLOWUP {
        return Err(Error::Convergence(format!(
            "residual blowup at t = {tm}: |Δ| = {delta:.3e}, |x'-G| = {ode:.3e}"
        )));
    }
    traj.residuals.push(StepResidual { t: tm, delta, ode, det });
    traj.r_samples.push(r_next.clone());
    *r = r_next;
    Ok(())
}

/// Recomputes manifold residuals along a trajectory and checks dense-output
/// consistency; `every` thins the node checks.
pub fn trajectory_residuals(model: &ModelSpec, traj: &Trajectory, n_intervals: usize, every: usize) -> Vec<CheckResult> {
    let every = every.max(1);
    let hist = &traj.history;
    let n = model.n;
    let zero = vec![0.0; n];
    let mut delta = Worst::new();
    let mut ode = Worst::new();
    let mut det = Least::new();
    let mut samples = 0;
    let mut errors = Vec::new();
    for (i, r) in traj.r_samples.iter().enumerate().step_by(every) {
        let t = hist.time(i);
        let view = hist.view(t, &zero);
        match model.manifold_residuals(r, &view) {
            Ok(m) => {
                samples += 1;
                delta.push(m.delta, || format!("t = {t}"));
                ode.push(m.ode, || format!("t = {t}"));
                det.push(m.det.abs(), || format!("t = {t}"));
            }
            Err(e) => errors.push(format!("t = {t}: {e}")),
        }
    }
    for res in &traj.residuals {
        delta.push(res.delta, || format!("t = {} (midpoint)", res.t));
        ode.push(res.ode, || format!("t = {} (midpoint)", res.t));
        det.push(res.det.abs(), || format!("t = {} (midpoint)", res.t));
    }
    samples += traj.residuals.len();

    // left and right slope limits at every interior node
    let mut slope_jump = Worst::new();
    for i in 1..hist.values.len().saturating_sub(1) {
        for j in 0..n {
            let left = hermite(hist.values[i - 1][j], hist.slopes[i - 1][j], hist.values[i][j], hist.slopes[i][j], traj.dt, 1.0).1;
            let right = hermite(hist.values[i][j], hist.slopes[i][j], hist.values[i + 1][j], hist.slopes[i + 1][j], traj.dt, 0.0).1;
            slope_jump.push((left - right).abs(), || format!("t = {}", hist.time(i)));
        }
    }
    let mut junction = Worst::new();
    for j in 0..n {
        let init = traj.history.initial.component(j).eval(0.0).map(|p| p.1).unwrap_or(f64::NAN);
        junction.push((init - hist.slopes[0][j]).abs(), || "t = 0".into());
    }
    let slope_check = {
        let a = slope_jump.check("trajectory_slope_continuity", 1e-12);
        let b = junction.check("trajectory_slope_continuity", 1e-12);
        if b.worst > a.worst || !b.pass { b } else { a }
    };

    // x_{t_e} rebuilt on the segment mesh against the stored step data
    let mut rebuild = Worst::new();
    let te = traj.t_e;
    let first = ((te - traj.history.h()) / traj.dt).ceil().max(0.0) as usize;
    let rebuilt = hist.segment_at(te, n_intervals);
    for i in first..hist.values.len() {
        let Ok(seg) = &rebuilt else { break };
        let s = hist.time(i) - te;
        if s < -traj.history.h() {
            continue;
        }
        if let Ok((x, dx)) = seg.eval(s.min(0.0)) {
            for j in 0..n {
                let e = (x[j] - hist.values[i][j]).abs().max((dx[j] - hist.slopes[i][j]).abs());
                rebuild.push(e, || format!("t = {}", hist.time(i)));
            }
        }
    }

    let mut lip = 0.0f64;
    for w in traj.r_samples.windows(2) {
        let d: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| a - b).collect();
        lip = lip.max(norm(&d) / traj.dt);
    }

    let mut checks = vec![
        delta.check("trajectory_delta", 1e-7),
        ode.check("trajectory_ode", 1e-6),
        det.check("trajectory_det", 0.5),
        slope_check,
        rebuild.check("trajectory_reconstruction", 1e-9),
        CheckResult::at_most("trajectory_r_lipschitz", lip, f64::MAX, traj.r_samples.len())
            .with_detail("estimated C in |r(t_{i+1}) - r(t_i)| <= C dt"),
    ];
    for c in checks.iter_mut().take(3) {
        c.samples = samples;
    }
    if !errors.is_empty() {
        checks.push(CheckResult::failed("trajectory_domain", samples, errors.join("; ")));
    }
    if let Some(stop) = &traj.stopped {
        checks.push(CheckResult::failed("trajectory_complete", traj.steps(), format!("stopped at t = {}: {}", stop.t, stop.reason)));
    }
    checks
}

/// Observed convergence orders `log2(e(dt) / e(dt/2))` against a fine
/// reference run; errors are maxima over the nodes common to all runs.
pub fn convergence_orders(
    model: &ModelSpec,
    p0: &StatePoint,
    t_end: f64,
    dts: &[f64],
    dt_ref: f64,
    opts: IntegrateOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let run = |dt: f64| -> Result<Trajectory> {
        let tr = integrate(model, p0, t_end, dt, opts)?;
        match &tr.stopped {
            Some(s) => Err(Error::Convergence(format!("run with dt = {dt} stopped at t = {}: {}", s.t, s.reason))),
            None => Ok(tr),
        }
    };
    let reference = run(dt_ref)?;
    let coarse = dts.iter().cloned().fold(0.0, f64::max);
    let common = (t_end / coarse).round() as usize;
    let mut errors = Vec::new();
    for &dt in dts {
        let tr = run(dt)?;
        let mut e = 0.0f64;
        for m in 0..=common {
            let t = m as f64 * coarse;
            let i = (t / dt).round() as usize;
            let iref = (t / dt_ref).round() as usize;
            for j in 0..model.n {
                e = e.max((tr.x(i)[j] - reference.x(iref)[j]).abs());
            }
        }
        errors.push(e);
    }
    let orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok((errors, orders))
}

/// Least-squares slope of `log e` against `log dt`.
pub fn fitted_order(dts: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, constant_segment};

    #[test]
    fn fitted_order_of_exact_power_law() {
        let dts = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = dts.iter().map(|d: &f64| 3.0 * d.powi(4)).collect();
        assert!((fitted_order(&dts, &errs) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn echo_seed_converges_to_equilibrium() {
        let m = builtin::echo();
        let seed = StatePoint::new(vec![-0.9], constant_segment(m.h, 64, &[0.0]));
        let p = find_manifold_point(&m, &seed).unwrap();
        assert!((p.r[0] + 1.0).abs() < 1e-12);
        assert!(p.phi.norms().c1_norm < 1e-12);
    }

    #[test]
    fn lin2_seed_converges() {
        let m = builtin::lin2();
        let seed = StatePoint::new(vec![-0.45], constant_segment(m.h, 64, &[0.0]));
        let p = find_manifold_point(&m, &seed).unwrap();
        assert!((p.r[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn offset_points_satisfy_closed_form() {
        let m = builtin::pair();
        let seed = StatePoint::new(vec![-0.5, -0.8], cosine_seed(m.h, 64, 2, 0.2).unwrap());
        let smooth = find_smooth_manifold_point(&m, &seed, 0.05).unwrap();
        let target = initial_curvature(&m, &smooth, 0.05).unwrap();
        for j in 0..2 {
            let k = left_curvature(smooth.phi.component(j));
            assert!((k - target[j]).abs() <= 1e-6 * (1.0 + k.abs()), "{k} vs {}", target[j]);
        }
        let p = find_manifold_point(&m, &seed).unwrap();
        let q = m.q_eval(&p.r, &p.phi).unwrap();
        let d = [0.6 + 0.1 * q[0].tanh(), 0.7 + 0.1 * q[1].tanh()];
        assert!((p.r[0] + d[0]).abs() <= 1e-10 && (p.r[1] + d[1]).abs() <= 1e-10);
        let res = m.manifold_residuals(&p.r, &p.phi).unwrap();
        assert!(res.ode <= 1e-10 && res.delta <= 1e-10);
    }

    #[test]
    fn spline_curvature_at_zero() {
        let s = ScalarSegment::from_fn(2.0, 32, |t| 1.0 + t + 1.5 * t * t + t * t * t, |t| 1.0 + 3.0 * t + 3.0 * t * t).unwrap();
        assert!((left_curvature(&s) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn delay_solves() {
        let m = builtin::echo();
        let zero = constant_segment(m.h, 64, &[0.0]);
        let s = solve_delay(&m, &zero, &[-0.7], 0.1).unwrap();
        assert!((s.r[0] + 1.0).abs() < 1e-13);

        let lin = builtin::lin2();
        let phi = cosine_seed(lin.h, 64, 1, 0.5).unwrap();
        let s = solve_delay(&lin, &phi, &[-0.2], 0.05).unwrap();
        assert_eq!(s.iterations, 1);
        let w = phi.component(0).eval(-0.5).unwrap().0;
        assert!((s.r[0] + (1.0 + w.tanh()) / 2.0).abs() < 1e-14);

        let phi = cosine_seed(m.h, 64, 1, 0.3).unwrap();
        let s = solve_delay(&m, &phi, &[-1.0], 0.1).unwrap();
        assert!(s.residual <= 1e-12 && s.iterations <= 6);
    }

    #[test]
    fn small_delays_are_refused() {
        let m = builtin::lin2();
        let zero = constant_segment(m.h, 64, &[0.0]);
        assert!(matches!(solve_delay(&m, &zero, &[-0.5], 0.6), Err(Error::DelayTooSmall { .. })));
    }

    #[test]
    fn equilibrium_stays_put() {
        let m = builtin::echo();
        let p = StatePoint::new(vec![-1.0], constant_segment(m.h, 64, &[0.0]));
        let tr = integrate(&m, &p, 1.0, 0.01, IntegrateOptions::for_model(&m)).unwrap();
        assert!(tr.stopped.is_none());
        assert!(tr.r_samples.iter().all(|r| r[0] == -1.0));
        assert!(tr.history.values.iter().all(|x| x[0] == 0.0));
        assert!(tr.max_delta_residual() <= 1e-14 && tr.max_ode_residual() <= 1e-14);
        for c in trajectory_residuals(&m, &tr, 64, 1) {
            assert!(c.pass, "{}", c.summary_line());
        }
    }

    #[test]
    fn large_steps_are_refused() {
        let m = builtin::echo();
        let p = StatePoint::new(vec![-1.0], constant_segment(m.h, 64, &[0.0]));
        assert!(matches!(integrate(&m, &p, 1.0, 0.05, IntegrateOptions::for_model(&m)), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_layout() {
        let m = builtin::pair();
        let p = StatePoint::new(vec![-0.6, -0.7], constant_segment(m.h, 16, &[0.0, 0.0]));
        let tr = integrate(&m, &p, 0.05, 0.01, IntegrateOptions::for_model(&m)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1,x_2,dx_1,dx_2,r_1,r_2,res_delta,res_ode");
        assert_eq!(lines.count(), 6);
    }
}
