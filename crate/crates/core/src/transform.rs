//! The flattening map `T(r, φ) = (r, φ - g(v) ⊙ χ_g(r, v))`, the contraction
//! `S(r, v) = v - R(r, v)` on delayed arguments, and the inverse `Y` built by
//! inverting `S_r` with a fixed-point iteration.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::complement::ChiField;
use crate::error::{Error, Result};
use crate::model::{norm, DeltaSpec, ModelSpec, QSpec, StatePoint};
use crate::segment::{hat_vector, VectorSegment};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tolerances {
    /// Fixed-point iteration stops once a step is at most this long.
    pub step: f64,
    pub max_iterations: usize,
    /// Required `|S_r(v) - y|` at the returned `v`.
    pub inverse_residual: f64,
    /// `|det D_1 Δ|` below this counts as singular.
    pub det_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { step: 1e-12, max_iterations: 80, inverse_residual: 1e-10, det_floor: 1e-6 }
    }
}

/// Result of inverting `S_r`.
#[derive(Clone, Debug)]
pub struct SInverse {
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Ratios of consecutive step lengths while the steps are above the stop tolerance.
    pub ratios: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PointClass {
    pub in_u: bool,
    pub on_manifold: bool,
    pub in_o: bool,
    pub in_image: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
    pub ode_residual: Option<f64>,
    pub delta_residual: Option<f64>,
    pub det: Option<f64>,
    /// `|ψ'(0)|`, reading the point as `(r, ψ)`.
    pub slope_at_zero: Option<f64>,
    /// `|Δ(r, ψ)|`
    pub image_delta_residual: Option<f64>,
    /// `det D_1 Δ(Y(r, ψ))`
    pub image_det: Option<f64>,
    /// `|r + d(Lψ)|` for offset delays with an `r`-independent `L`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_residual: Option<f64>,
}

pub struct TransformContext {
    model: Arc<ModelSpec>,
    field: ChiField,
    pub tol: Tolerances,
}

impl TransformContext {
    pub fn new(model: ModelSpec, n_intervals: usize) -> Result<Self> {
        let model = Arc::new(model);
        let field = ChiField::build(model.clone(), n_intervals)?;
        Ok(Self { model, field, tol: Tolerances::default() })
    }

    pub fn from_field(field: ChiField) -> Self {
        Self { model: field.model_arc(), field, tol: Tolerances::default() }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn field(&self) -> &ChiField {
        &self.field
    }

    pub fn mesh(&self) -> usize {
        self.field.n_intervals()
    }

    fn check_mesh(&self, phi: &VectorSegment) -> Result<()> {
        if phi.intervals() != self.mesh() || phi.h() != self.model.h || phi.n() != self.model.n {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }

    fn check_r_in_i(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.model.k {
            return Err(Error::Dimension(format!("r has length {}, expected {}", r.len(), self.model.k)));
        }
        match r.iter().find(|x| !self.model.i.contains_open(**x)) {
            Some(&t) => Err(Error::OutOfDomain { t, lo: self.model.i.lo, hi: self.model.i.hi }),
            None => Ok(()),
        }
    }

    /// `φ - g(v) ⊙ χ_g(r, v)`, or `φ + g(v) ⊙ χ_g(r, v)` when `sign = 1`.
    fn shift(&self, r: &[f64], phi: &VectorSegment, v: &[f64], sign: f64) -> Result<VectorSegment> {
        let g = self.model.g_value(v);
        let mut out = phi.clone();
        for (j, gj) in g.iter().enumerate() {
            if *gj != 0.0 {
                let chi = self.field.chi_eval(j, r, v)?;
                out.component_mut(j).axpy(sign * gj, &chi)?;
            }
        }
        Ok(out)
    }

    /// `A(r, φ)`
    pub fn a_map(&self, r: &[f64], phi: &VectorSegment) -> Result<VectorSegment> {
        self.check_mesh(phi)?;
        if let Some(v) = self.model.domain_violation(r, phi)? {
            return Err(Error::NotInU(v));
        }
        let v = hat_vector(r, phi, &self.model.j)?;
        self.shift(r, phi, &v, -1.0)
    }

    /// `T(r, φ) = (r, A(r, φ))`
    pub fn t_map(&self, p: &StatePoint) -> Result<StatePoint> {
        Ok(StatePoint::new(p.r.clone(), self.a_map(&p.r, &p.phi)?))
    }

    /// `R_ι(r, v) = g_j(v) E χ_{g,j}(r, v)(r_κ)` with `ι = κ n + j`.
    pub fn r_eval(&self, r: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_r_in_i(r)?;
        let n = self.model.n;
        let g = self.model.g_value(v);
        let mut out = vec![0.0; self.model.kn()];
        for (j, gj) in g.iter().enumerate() {
            if *gj == 0.0 {
                continue;
            }
            let comb = self.field.chi_comb(j, r, v)?;
            for (kk, &rk) in r.iter().enumerate() {
                out[kk * n + j] = gj * self.field.comb_extension(&comb, rk).0;
            }
        }
        Ok(out)
    }

    /// `S(r, v) = v - R(r, v)`
    pub fn s_eval(&self, r: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let rr = self.r_eval(r, v)?;
        Ok(v.iter().zip(&rr).map(|(a, b)| a - b).collect())
    }

    /// Largest singular value of a central-difference Jacobian of `R(r, ·)`.
    pub fn d2r_norm_estimate(&self, r: &[f64], v: &[f64]) -> Result<f64> {
        let kn = self.model.kn();
        let mut jac = DMatrix::zeros(kn, kn);
        for col in 0..kn {
            let step = 1e-6 * (1.0 + v[col].abs());
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[col] += step;
            vm[col] -= step;
            let (rp, rm) = (self.r_eval(r, &vp)?, self.r_eval(r, &vm)?);
            for row in 0..kn {
                jac[(row, col)] = (rp[row] - rm[row]) / (2.0 * step);
            }
        }
        Ok(jac.svd(false, false).singular_values.iter().copied().fold(0.0, f64::max))
    }

    /// Solves `S(r, v) = y` by `v ← y + R(r, v)`.
    pub fn s_inverse(&self, r: &[f64], y: &[f64]) -> Result<SInverse> {
        self.check_r_in_i(r)?;
        let vset = &self.model.g.v;
        if y.len() != self.model.kn() || y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotInO(format!("y = {y:?} is not a finite vector in R^{}", self.model.kn())));
        }
        // |R(r, v)| <= dist(v, ∂V) / 2 puts every S_r(v) inside V.
        if !vset.contains(y) {
            return Err(Error::NotInO("y is outside V, so y is not in S_r(V)".into()));
        }
        let mut v = y.to_vec();
        let mut prev: Option<f64> = None;
        let mut ratios = Vec::new();
        for it in 1..=self.tol.max_iterations {
            if !vset.contains(&v) {
                return Err(Error::NotInO(format!("fixed-point iterate left V after {} steps: y not in S_r(V)", it - 1)));
            }
            let rv = self.r_eval(r, &v)?;
            let next: Vec<f64> = y.iter().zip(&rv).map(|(a, b)| a + b).collect();
            let step = norm(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
            if let Some(p) = prev {
                if p > self.tol.step {
                    ratios.push(step / p);
                }
            }
            prev = Some(step);
            v = next;
            if step <= self.tol.step {
                if !vset.contains(&v) {
                    return Err(Error::NotInO("limit of the iteration is not in V: y not in S_r(V)".into()));
                }
                let s = self.s_eval(r, &v)?;
                let residual = norm(&s.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
                if residual > self.tol.inverse_residual {
                    return Err(Error::NotInO(format!("|S_r(v) - y| = {residual:.3e} after convergence")));
                }
                return Ok(SInverse { v, iterations: it, ratios, residual });
            }
        }
        Err(Error::NotInO(format!(
            "no convergence in {} fixed-point steps: y not in S_r(V)",
            self.tol.max_iterations
        )))
    }

    /// `Y(r, ψ) = (r, ψ + g(v) ⊙ χ_g(r, v))` with `v = S_r^{-1}((r, ψ)^)`.
    pub fn y_map(&self, q: &StatePoint) -> Result<StatePoint> {
        Ok(self.y_map_with(q)?.0)
    }

    fn y_map_with(&self, q: &StatePoint) -> Result<(StatePoint, SInverse)> {
        self.check_mesh(&q.phi)?;
        self.check_r_in_i(&q.r).map_err(|e| Error::NotInO(format!("r not in I^k: {e}")))?;
        let w = self.model.q_eval(&q.r, &q.phi)?;
        if !self.model.w.contains(&w) {
            return Err(Error::NotInO("Q(r,psi) not in W".into()));
        }
        let y = hat_vector(&q.r, &q.phi, &self.model.j)?;
        let inv = self.s_inverse(&q.r, &y)?;
        let b = self.shift(&q.r, &q.phi, &inv.v, 1.0)?;
        Ok((StatePoint::new(q.r.clone(), b), inv))
    }

    /// Membership in `O`, decided by a successful inversion of `S_r`.
    pub fn in_o(&self, q: &StatePoint) -> bool {
        self.y_map_with(q).is_ok()
    }

    /// Evaluates every defining residual of the manifold and of its image.
    pub fn classify_point(&self, p: &StatePoint, tol: f64) -> PointClass {
        let m = &*self.model;
        let mut c = PointClass::default();
        match m.domain_violation(&p.r, &p.phi) {
            Ok(None) => {
                c.in_u = true;
                if let Ok(res) = m.manifold_residuals(&p.r, &p.phi) {
                    c.ode_residual = Some(res.ode);
                    c.delta_residual = Some(res.delta);
                    c.det = Some(res.det);
                    c.on_manifold = res.ode <= tol && res.delta <= tol && res.det.abs() >= self.tol.det_floor;
                }
            }
            Ok(Some(v)) => c.violation = Some(v.to_string()),
            Err(e) => c.violation = Some(e.to_string()),
        }
        let slope = norm(&p.phi.slope_at_zero());
        c.slope_at_zero = Some(slope);
        if p.r.iter().all(|x| m.j.contains_closed(*x)) && p.phi.n() == m.n {
            let w = m.q_unchecked(&p.r, &p.phi);
            let delta = norm(&m.delta_value(&p.r, &w));
            c.image_delta_residual = Some(delta);
            if matches!((&m.delta, &m.q), (DeltaSpec::Offset { .. }, QSpec::ConstantL { .. })) {
                c.graph_residual = Some(delta);
            }
        }
        if let Ok((y, _)) = self.y_map_with(p) {
            c.in_o = true;
            let det = m.d1delta_unchecked(&y.r, &y.phi).determinant();
            c.image_det = Some(det);
            c.in_image = slope <= tol
                && c.image_delta_residual.is_some_and(|d| d <= tol)
                && det.abs() >= self.tol.det_floor;
        }
        c
    }
}
