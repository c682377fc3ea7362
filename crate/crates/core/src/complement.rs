//! Complement fields: for every component `j` a map `(r, v) ↦ χ_j(r, v)` into
//! the nullspace of `Q_j(r, ·)` with `χ'(0) = 1` and `|χ|_C ≤ h_g(v)`.
//!
//! A single field `χ(r)` comes from projecting a small unit-slope seed along
//! a fixed basis `γ_m` onto the nullspace. Fields for a decreasing sequence of
//! bounds `ε_j` are glued over an exhaustion of `V` with C^1 bumps.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::region::{in_box_union, Bump};
use crate::model::{grid_points, ModelSpec, QSpec};
use crate::segment::{Interval, ScalarSegment, SegmentView};

/// Floor for the smallest singular value of `M(r)` on the verification grid.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Halvings of the slope-correction scale before giving up on a basis.
pub const BASIS_RETRIES: usize = 20;
/// Safety factor on the sampled minimum of `h_g` over a level set.
pub const LEVEL_SAFETY: f64 = 0.5;
const SEED_FRACTION: f64 = 0.9;
const MAX_LEVEL: usize = 1_000_000;

/// `min{1, dist(v, R^{kn} \ V)} / (6 kn (1 + max|∂_ι g_j| + max|g_j|))`.
pub fn h_g_eval(model: &ModelSpec, v: &[f64]) -> Result<f64> {
    if v.len() != model.kn() {
        return Err(Error::Dimension(format!("v has length {}, expected {}", v.len(), model.kn())));
    }
    if !model.g.v.contains(v) {
        return Err(Error::NotInU(crate::error::DomainViolation::HatNotInV));
    }
    Ok(h_g_unchecked(model, v))
}

fn h_g_unchecked(model: &ModelSpec, v: &[f64]) -> f64 {
    let (g, jac) = model.g_jacobian(v);
    let dmax = jac.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dist = model.g.v.dist_to_complement(v).min(1.0);
    dist / (6.0 * model.kn() as f64 * (1.0 + dmax + gmax))
}

/// `η(t) = t e^{t/a}`: slope 1 at 0, sup norm `a/e` on `(-∞, 0]`.
fn unit_slope_seed(h: f64, n_intervals: usize, a: f64) -> Result<ScalarSegment> {
    ScalarSegment::from_fn(h, n_intervals, |t| t * (t / a).exp(), |t| (t / a).exp() * (1.0 + t / a))
}

/// Basis data for one component.
#[derive(Clone, Debug, Serialize)]
pub struct ChiBasis {
    pub component: usize,
    pub d_q: usize,
    #[serde(skip)]
    pub gammas: Vec<ScalarSegment>,
    /// Rows: an orthonormal basis of the range `F_q`, in `F`-coordinates.
    #[serde(skip)]
    pub tau: DMatrix<f64>,
    pub c_tau: f64,
    pub c_q: f64,
    /// Bound for `|Σ c_m γ_m|_C / |c|`.
    pub c_gamma: f64,
    /// Scale of the slope correction, if one was needed.
    pub a0: Option<f64>,
    pub grid_per_axis: usize,
    pub min_sigma: f64,
}

impl ChiBasis {
    /// `M(r) = [τ q(r, γ_1) ⋯ τ q(r, γ_d)]`.
    pub fn matrix(&self, model: &ModelSpec, r: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d_q, self.d_q);
        for (col, g) in self.gammas.iter().enumerate() {
            let img = self.tau_q(model, r, g);
            m.set_column(col, &img);
        }
        m
    }

    fn tau_q(&self, model: &ModelSpec, r: &[f64], psi: &ScalarSegment) -> DVector<f64> {
        &self.tau * DVector::from_vec(model.q_component(self.component, r, psi))
    }

    /// Coefficients `c(r) = M(r)^{-1} τ q(r, φ)` of the projection of `φ`.
    pub fn coefficients(&self, model: &ModelSpec, r: &[f64], phi: &ScalarSegment) -> Result<Vec<f64>> {
        if self.d_q == 0 {
            return Ok(vec![]);
        }
        let m = self.matrix(model, r);
        let rhs = self.tau_q(model, r, phi);
        let lu = m.lu();
        let c = lu.solve(&rhs).ok_or(Error::Singular { det: 0.0 })?;
        Ok(c.iter().copied().collect())
    }
}

/// Builds `γ_m`, `τ` and the bounds `c_τ`, `c_q` for component `j`.
pub fn build_chi_basis(model: &ModelSpec, j: usize, n_intervals: usize, grid_per_axis: usize) -> Result<ChiBasis> {
    let construction = |detail: String| Error::Construction { component: j + 1, detail };
    let betas = model.hq_candidates(j, n_intervals)?;
    let d = betas.len();
    if d == 0 {
        return Ok(ChiBasis {
            component: j,
            d_q: 0,
            gammas: vec![],
            tau: DMatrix::zeros(0, model.q_dim()),
            c_tau: 0.0,
            c_q: 0.0,
            c_gamma: 0.0,
            a0: None,
            grid_per_axis,
            min_sigma: f64::INFINITY,
        });
    }
    if d > model.q_dim() {
        return Err(construction(format!("{d} basis functions for a range in R^{}", model.q_dim())));
    }
    let grid = model.j_grid(grid_per_axis);
    let mut b0 = DMatrix::zeros(model.q_dim(), d);
    for (m, b) in betas.iter().enumerate() {
        b0.set_column(m, &DVector::from_vec(model.q_component(j, &grid[0], b)));
    }
    let sv0 = b0.clone().svd(false, false).singular_values;
    if sv0.iter().any(|s| *s < SIGMA_FLOOR) {
        return Err(construction("candidate basis images are linearly dependent".into()));
    }
    let tau = b0.qr().q().transpose();

    let needs_correction = betas.iter().any(|b| *b.slopes().last().unwrap() != 0.0);
    let mut a0 = model.h / 4.0;
    for attempt in 0..=BASIS_RETRIES {
        let gammas = if needs_correction {
            let eta = unit_slope_seed(model.h, n_intervals, a0)?;
            betas
                .iter()
                .map(|b| {
                    let mut g = b.clone();
                    let s = *b.slopes().last().unwrap();
                    g.axpy(-s, &eta)?;
                    Ok(g)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            betas.clone()
        };
        let mut basis = ChiBasis {
            component: j,
            d_q: d,
            gammas,
            tau: tau.clone(),
            c_tau: 0.0,
            c_q: 0.0,
            c_gamma: 0.0,
            a0: needs_correction.then_some(a0),
            grid_per_axis,
            min_sigma: f64::INFINITY,
        };
        for r in &grid {
            let s = basis.matrix(model, r).svd(false, false).singular_values;
            let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
            basis.min_sigma = basis.min_sigma.min(smin);
        }
        if basis.min_sigma >= SIGMA_FLOOR {
            basis.c_tau = 1.0 / basis.min_sigma;
            basis.c_q = c_q_bound(model, j, &basis)?;
            basis.c_gamma = basis.gammas.iter().map(|g| g.norms().c_norm.powi(2)).sum::<f64>().sqrt();
            return Ok(basis);
        }
        if !needs_correction || attempt == BASIS_RETRIES {
            return Err(construction(format!(
                "smallest singular value {:.3e} below {SIGMA_FLOOR:.0e} on the r-grid",
                basis.min_sigma
            )));
        }
        a0 *= 0.5;
    }
    unreachable!()
}

/// `sup_r |τ q(r, ·)|` as an operator on `C` with the sup norm.
fn c_q_bound(model: &ModelSpec, j: usize, basis: &ChiBasis) -> Result<f64> {
    let h = model.h;
    let ext_factor = |t: f64| if (-h..=0.0).contains(&t) { 1.0 } else { 3.0 };
    Ok(match &model.q {
        QSpec::CoordSelect { .. } => {
            if model.j.lo >= -h && model.j.hi <= 0.0 {
                1.0
            } else {
                3.0
            }
        }
        QSpec::ConstantL { terms, .. } => terms
            .iter()
            .filter(|t| t.component == j)
            .map(|t| t.weight.abs() * basis.tau.column(t.row).norm() * ext_factor(t.t))
            .sum(),
        QSpec::User(u) => u.c_q[j],
    })
}

/// `χ(r) = φ_seed - Σ c_m(r) γ_m`.
pub fn chi_single(model: &ModelSpec, basis: &ChiBasis, seed: &ScalarSegment, r: &[f64]) -> Result<ScalarSegment> {
    let c = basis.coefficients(model, r, seed)?;
    let mut out = seed.clone();
    for (cm, g) in c.iter().zip(&basis.gammas) {
        out.axpy(-cm, g)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct Seed {
    /// Scale `a` of `t e^{t/a}`.
    pub a: f64,
    /// Sampled `|φ_a|_C`.
    pub norm: f64,
    /// Required bound `ε / (1 + c_τ c_q c_γ)`.
    pub bound: f64,
    #[serde(skip)]
    pub segment: ScalarSegment,
}

/// One level of the exhaustion with its bump and constants.
#[derive(Clone, Debug, Serialize)]
pub struct Level {
    pub j: usize,
    /// `V_{j1}`, `V_{j2}`, `V_j` as per-box coordinate intervals.
    pub inner: Vec<Vec<Interval>>,
    pub middle: Vec<Vec<Interval>>,
    pub outer: Vec<Vec<Interval>>,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub h: f64,
    pub eps: f64,
    pub seeds: Vec<Seed>,
    #[serde(skip)]
    pub bump: Bump,
}

/// `χ = Σ w_i seed_i + Σ b_m γ_m` for one component.
#[derive(Clone, Debug)]
pub struct ChiComb {
    pub component: usize,
    seeds: Vec<(f64, Arc<Level>)>,
    gamma: Vec<f64>,
}

pub struct ChiField {
    model: Arc<ModelSpec>,
    n_intervals: usize,
    bases: Vec<ChiBasis>,
    levels: Mutex<Vec<Arc<Level>>>,
}

impl std::fmt::Debug for ChiField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChiField")
            .field("model", &self.model.name)
            .field("n_intervals", &self.n_intervals)
            .field("levels", &self.levels.lock().map(|l| l.len()).unwrap_or(0))
            .finish()
    }
}

#[derive(Serialize)]
struct FieldDump<'a> {
    model: &'a str,
    mesh: usize,
    bases: &'a [ChiBasis],
    levels: Vec<&'a Level>,
}

impl ChiField {
    /// Builds the bases and the first two levels.
    pub fn build(model: Arc<ModelSpec>, n_intervals: usize) -> Result<Self> {
        Self::build_with_grid(model, n_intervals, 9)
    }

    pub fn build_with_grid(model: Arc<ModelSpec>, n_intervals: usize, grid_per_axis: usize) -> Result<Self> {
        model.validate()?;
        let bases = (0..model.n)
            .map(|j| build_chi_basis(&model, j, n_intervals, grid_per_axis))
            .collect::<Result<Vec<_>>>()?;
        let field = Self { model, n_intervals, bases, levels: Mutex::new(Vec::new()) };
        field.level(2)?;
        Ok(field)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn model_arc(&self) -> Arc<ModelSpec> {
        self.model.clone()
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn basis(&self, j: usize) -> &ChiBasis {
        &self.bases[j]
    }

    pub fn levels_built(&self) -> usize {
        self.levels.lock().expect("level lock").len()
    }

    /// Level `j ≥ 1`, materializing it and all earlier ones on demand.
    pub fn level(&self, j: usize) -> Result<Arc<Level>> {
        let mut levels = self.levels.lock().expect("level lock");
        while levels.len() < j {
            let next = self.make_level(levels.len() + 1, levels.last().map(|l| l.as_ref()))?;
            levels.push(Arc::new(next));
        }
        Ok(levels[j - 1].clone())
    }

    fn make_level(&self, j: usize, prev: Option<&Level>) -> Result<Level> {
        let model = &self.model;
        let kn = model.kn();
        let region = &model.g.v;
        let inner = region.exhaustion(kn, 3 * j - 2);
        let middle = region.exhaustion(kn, 3 * j - 1);
        let outer = region.exhaustion(kn, 3 * j);
        let bump = Bump::new(inner.clone(), middle.clone());
        let mut big_a = (1.0 + bump.slope_bounds.iter().sum::<f64>()) * (1.0 + 1e-9);
        let mut h = LEVEL_SAFETY * self.sampled_min_h(&outer, j);
        if let Some(p) = prev {
            big_a = big_a.max(p.big_a);
            h = h.min(p.h);
        }
        if !(h > 0.0) {
            return Err(Error::Construction {
                component: 0,
                detail: format!("level {j}: sampled minimum of h_g is {h}"),
            });
        }
        let eps = h / (2.0 * big_a);
        let seeds = self
            .bases
            .iter()
            .map(|b| self.make_seed(b, eps, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Level { j, inner, middle, outer, big_a, h, eps, seeds, bump })
    }

    fn make_seed(&self, basis: &ChiBasis, eps: f64, level: usize) -> Result<Seed> {
        let h = self.model.h;
        let bound = eps / (1.0 + basis.c_tau * basis.c_q * basis.c_gamma);
        let a = SEED_FRACTION * bound;
        let segment = unit_slope_seed(h, self.n_intervals, a)?;
        let norm = segment.norms().c_norm;
        if norm >= bound {
            let mut suggested = self.n_intervals * 2;
            while suggested < (1 << 24) {
                let s = unit_slope_seed(h, suggested, a)?;
                if s.norms().c_norm < bound {
                    break;
                }
                suggested *= 2;
            }
            return Err(Error::MeshTooCoarse {
                mesh: self.n_intervals,
                level,
                component: basis.component + 1,
                achieved: norm,
                required: bound,
                suggested,
            });
        }
        Ok(Seed { a, norm, bound, segment })
    }

    /// Sampled minimum of `h_g` over the closure of a box union.
    fn sampled_min_h(&self, boxes: &[Vec<Interval>], j: usize) -> f64 {
        let model = &self.model;
        let kn = model.kn();
        let mut best = f64::INFINITY;
        for b in boxes.iter().filter(|b| b.iter().all(|iv| !iv.is_empty())) {
            if kn <= 4 {
                for v in grid_points(b, 10) {
                    best = best.min(h_g_unchecked(model, &v));
                }
            } else {
                // Stratified in every coordinate, corners included.
                let count = 10_000;
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ j as u64);
                let perms: Vec<Vec<usize>> = (0..kn)
                    .map(|_| {
                        let mut p: Vec<usize> = (0..count).collect();
                        for i in (1..count).rev() {
                            p.swap(i, rng.random_range(0..=i));
                        }
                        p
                    })
                    .collect();
                for s in 0..count {
                    let v: Vec<f64> = b
                        .iter()
                        .zip(&perms)
                        .map(|(iv, p)| iv.lo + iv.len() * (p[s] as f64 + rng.random::<f64>()) / count as f64)
                        .collect();
                    best = best.min(h_g_unchecked(model, &v));
                }
                for corner in grid_points(b, 2) {
                    best = best.min(h_g_unchecked(model, &corner));
                }
            }
        }
        best
    }

    /// Smallest `j` with `v ∈ V_j`.
    pub fn level_index(&self, v: &[f64]) -> Result<usize> {
        let model = &self.model;
        if !model.g.v.contains(v) {
            return Err(Error::NotInU(crate::error::DomainViolation::HatNotInV));
        }
        let built = self.levels.lock().expect("level lock").clone();
        for l in &built {
            if in_box_union(&l.outer, v) {
                return Ok(l.j);
            }
        }
        let mut j = built.len() + 1;
        while j < MAX_LEVEL {
            if in_box_union(&model.g.v.exhaustion(model.kn(), 3 * j), v) {
                return Ok(j);
            }
            j += 1;
        }
        Err(Error::Convergence(format!("no exhaustion level contains v = {v:?}")))
    }

    fn check_point(&self, j: usize, r: &[f64], v: &[f64]) -> Result<()> {
        let m = &self.model;
        if j >= m.n || r.len() != m.k || v.len() != m.kn() {
            return Err(Error::Dimension(format!("component {} / r in R^{} / v in R^{}", j + 1, r.len(), v.len())));
        }
        if let Some(&t) = r.iter().find(|x| !m.i.contains_open(**x)) {
            return Err(Error::OutOfDomain { t, lo: m.i.lo, hi: m.i.hi });
        }
        Ok(())
    }

    /// Representation of `χ_{g,j}(r, v)`.
    pub fn chi_comb(&self, j: usize, r: &[f64], v: &[f64]) -> Result<ChiComb> {
        self.check_point(j, r, v)?;
        let lj = self.level(self.level_index(v)?)?;
        let ln = self.level(lj.j + 1)?;
        let a = lj.bump.eval(v);
        let basis = &self.bases[j];
        let cj = basis.coefficients(&self.model, r, &lj.seeds[j].segment)?;
        let cn = basis.coefficients(&self.model, r, &ln.seeds[j].segment)?;
        let gamma = cj.iter().zip(&cn).map(|(x, y)| -(a * x + (1.0 - a) * y)).collect();
        Ok(ChiComb { component: j, seeds: vec![(a, lj), (1.0 - a, ln)], gamma })
    }

    /// Representation of `∂χ_{g,j}(r, v) / ∂v_ι` (0-based `ι`).
    pub fn chi_partial_comb(&self, j: usize, r: &[f64], v: &[f64], iota: usize) -> Result<ChiComb> {
        self.check_point(j, r, v)?;
        if iota >= self.model.kn() {
            return Err(Error::Dimension(format!("partial index {} out of range", iota + 1)));
        }
        let lj = self.level(self.level_index(v)?)?;
        let ln = self.level(lj.j + 1)?;
        let (_, grad) = lj.bump.eval_grad(v);
        let da = grad[iota];
        let basis = &self.bases[j];
        let cj = basis.coefficients(&self.model, r, &lj.seeds[j].segment)?;
        let cn = basis.coefficients(&self.model, r, &ln.seeds[j].segment)?;
        let gamma = cj.iter().zip(&cn).map(|(x, y)| -da * (x - y)).collect();
        Ok(ChiComb { component: j, seeds: vec![(da, lj), (-da, ln)], gamma })
    }

    /// `χ_{g,j}(r, v)` as a segment.
    pub fn chi_eval(&self, j: usize, r: &[f64], v: &[f64]) -> Result<ScalarSegment> {
        self.comb_segment(&self.chi_comb(j, r, v)?)
    }

    /// `∂χ_{g,j}(r, v) / ∂v_ι` as a segment.
    pub fn chi_partial(&self, j: usize, r: &[f64], v: &[f64], iota: usize) -> Result<ScalarSegment> {
        self.comb_segment(&self.chi_partial_comb(j, r, v, iota)?)
    }

    pub fn comb_segment(&self, c: &ChiComb) -> Result<ScalarSegment> {
        let mut out = ScalarSegment::zero(self.model.h, self.n_intervals);
        for (w, l) in &c.seeds {
            if *w != 0.0 {
                out.axpy(*w, &l.seeds[c.component].segment)?;
            }
        }
        for (b, g) in c.gamma.iter().zip(&self.bases[c.component].gammas) {
            out.axpy(*b, g)?;
        }
        Ok(out)
    }

    /// `(value, slope)` of `E χ` at `t ∈ [-2h, h]` without building the segment.
    pub fn comb_extension(&self, c: &ChiComb, t: f64) -> (f64, f64) {
        let mut u = 0.0;
        let mut m = 0.0;
        for (w, l) in &c.seeds {
            if *w != 0.0 {
                let (a, b) = l.seeds[c.component].segment.extension_at(0, t);
                u += w * a;
                m += w * b;
            }
        }
        for (b, g) in c.gamma.iter().zip(&self.bases[c.component].gammas) {
            let (x, y) = g.extension_at(0, t);
            u += b * x;
            m += b * y;
        }
        (u, m)
    }

    /// Diagnostic JSON of the bases and all materialized levels.
    pub fn dump_json(&self) -> String {
        let levels = self.levels.lock().expect("level lock").clone();
        serde_json::to_string_pretty(&FieldDump {
            model: &self.model.name,
            mesh: self.n_intervals,
            bases: &self.bases,
            levels: levels.iter().map(|l| l.as_ref()).collect(),
        })
        .expect("field dump serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use crate::model::region::Region;
    use crate::model::{GSpec, VecFn};
    use crate::model::expr::var_names;

    fn echo_field() -> ChiField {
        ChiField::build(Arc::new(builtin::echo()), 2048).unwrap()
    }

    #[test]
    fn h_g_examples() {
        let m = builtin::echo();
        assert!((h_g_eval(&m, &[2.0]).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        assert!((h_g_eval(&m, &[0.0]).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        let mut boxed = builtin::lin2box();
        boxed.g = GSpec {
            f: VecFn::from_exprs(&["0"], &var_names("v", 1)).unwrap(),
            v: Region::single_box(vec![-1.0], vec![1.0]),
        };
        assert!((h_g_eval(&boxed, &[0.9]).unwrap() - 1.0 / 60.0).abs() < 1e-12);
        assert!(h_g_eval(&boxed, &[1.5]).is_err());
    }

    #[test]
    fn echo_basis_is_the_constant() {
        let m = builtin::echo();
        let b = build_chi_basis(&m, 0, 256, 9).unwrap();
        assert_eq!(b.d_q, 1);
        assert_eq!(b.gammas[0], ScalarSegment::constant(m.h, 256, 1.0));
        assert!((b.c_tau - 1.0).abs() < 1e-15);
        assert_eq!(b.c_q, 3.0);
        assert!(b.a0.is_none());
    }

    #[test]
    fn lin2_basis_is_the_constant() {
        let m = builtin::lin2();
        let b = build_chi_basis(&m, 0, 256, 9).unwrap();
        assert_eq!(b.d_q, 1);
        assert!((b.gammas[0].values()[0].abs() - 1.0).abs() < 1e-14);
        assert_eq!(*b.gammas[0].slopes().last().unwrap(), 0.0);
        assert!((b.c_tau - 1.0).abs() < 1e-14);
        assert!((b.c_q - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unselected_component_has_empty_basis() {
        let mut m = builtin::pair();
        m.q = QSpec::CoordSelect { nu: vec![0], kappa: vec![1] };
        m.delta = crate::model::DeltaSpec::Offset {
            d: VecFn::from_exprs(&["0.6 + 0.1*tanh(w1)", "0.7"], &var_names("w", 1)).unwrap(),
        };
        m.validate().unwrap();
        let b = build_chi_basis(&m, 1, 64, 9).unwrap();
        assert_eq!(b.d_q, 0);
        let seed = unit_slope_seed(m.h, 64, 0.01).unwrap();
        assert_eq!(chi_single(&m, &b, &seed, &[-0.5, -0.5]).unwrap(), seed);
    }

    #[test]
    fn single_projection_for_echo() {
        let m = builtin::echo();
        let b = build_chi_basis(&m, 0, 2048, 9).unwrap();
        let seed = unit_slope_seed(m.h, 2048, 1e-3).unwrap();
        for r in [-2.2, -1.0, 0.1] {
            let chi = chi_single(&m, &b, &seed, &[r]).unwrap();
            let q = m.q_component(0, &[r], &chi)[0];
            assert!(q.abs() <= 1e-15, "residual {q}");
            assert_eq!(*chi.slopes().last().unwrap(), 1.0);
            assert!(chi.norms().c_norm <= seed.norms().c_norm * (1.0 + b.c_tau * b.c_q));
        }
    }

    #[test]
    fn coarse_mesh_is_reported() {
        let err = ChiField::build(Arc::new(builtin::echo()), 64).unwrap_err();
        match err {
            Error::MeshTooCoarse { mesh, suggested, .. } => {
                assert_eq!(mesh, 64);
                assert!(suggested > 64);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn field_contract_on_echo() {
        let f = echo_field();
        let m = f.model();
        for (r, v) in [(-1.0, 0.0), (-2.0, 0.7), (0.05, -0.95), (-0.3, 5.5), (-1.7, 6.2)] {
            let chi = f.chi_eval(0, &[r], &[v]).unwrap();
            assert!(m.q_component(0, &[r], &chi)[0].abs() <= 1e-12);
            assert_eq!(*chi.slopes().last().unwrap(), 1.0);
            let hg = h_g_eval(m, &[v]).unwrap();
            assert!(chi.norms().c_norm <= hg);
            let d = f.chi_partial(0, &[r], &[v], 0).unwrap();
            assert!(d.norms().c_norm <= hg);
        }
    }

    #[test]
    fn deep_interior_uses_one_level() {
        let f = echo_field();
        let l1 = f.level(1).unwrap();
        let single = chi_single(f.model(), f.basis(0), &l1.seeds[0].segment, &[-1.0]).unwrap();
        let chi = f.chi_eval(0, &[-1.0], &[0.0]).unwrap();
        assert_eq!(chi, single);
        let d = f.chi_partial(0, &[-1.0], &[0.0], 0).unwrap();
        assert_eq!(d.norms().c1_norm, 0.0);
    }

    #[test]
    fn adjacent_levels_agree_on_overlap() {
        let f = echo_field();
        // |v| in (5, 6): inside V_1 but outside closure(V_12).
        for v in [5.2, -5.5, 5.99] {
            let l2 = f.level(2).unwrap();
            let chi = f.chi_eval(0, &[-0.7], &[v]).unwrap();
            let next = chi_single(f.model(), f.basis(0), &l2.seeds[0].segment, &[-0.7]).unwrap();
            let diff = crate::segment::VectorSegment::new(vec![chi])
                .unwrap()
                .c1_distance(&crate::segment::VectorSegment::new(vec![next]).unwrap())
                .unwrap();
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn levels_are_monotone_and_lazy() {
        let f = echo_field();
        assert_eq!(f.levels_built(), 2);
        f.chi_eval(0, &[-1.0], &[20.0]).unwrap();
        let n = f.levels_built();
        assert!(n > 2 && n < 10);
        let mut prev: Option<Arc<Level>> = None;
        for j in 1..=n {
            let l = f.level(j).unwrap();
            assert!(l.big_a >= 1.0);
            if let Some(p) = prev {
                assert!(l.big_a >= p.big_a && l.eps <= p.eps);
            }
            prev = Some(l);
        }
        assert!(f.dump_json().contains("\"eps\""));
    }

    #[test]
    fn pointwise_extension_matches_segment() {
        let f = echo_field();
        let c = f.chi_comb(0, &[-0.4], &[3.9]).unwrap();
        let seg = f.comb_segment(&c).unwrap();
        for t in [-4.0, -3.1, -2.0, -0.5, 0.0, 0.7, 2.0] {
            let (a, b) = f.comb_extension(&c, t);
            let (x, y) = seg.extension_at(0, t);
            assert!((a - x).abs() <= 1e-15 && (b - y).abs() <= 1e-12);
        }
    }
}
