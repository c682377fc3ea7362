//! Concrete algebraic-delay systems `x' = g(v)`, `0 = δ(r, Q(r, x_t))`, where
//! `v = (r, x_t)^` collects the delayed component values.

pub mod builtin;
pub mod expr;
pub mod region;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DomainViolation, Error, Result};
use crate::report::{CheckResult, Least};
use crate::segment::{hat_vector, EmbeddedView, Interval, ScalarSegment, SegmentView, VectorSegment};

pub use expr::Expr;
pub use region::{OpenBox, Region};

type NativeFn = Arc<dyn Fn(&[f64]) -> (Vec<f64>, DMatrix<f64>) + Send + Sync>;

/// A map `R^m -> R^p` with its Jacobian, either parsed from expressions or native.
#[derive(Clone)]
pub struct VecFn {
    n_in: usize,
    n_out: usize,
    repr: FnRepr,
}

#[derive(Clone)]
enum FnRepr {
    Exprs(Vec<Expr>),
    Native(NativeFn),
}

impl fmt::Debug for VecFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            FnRepr::Exprs(e) => f.debug_list().entries(e.iter().map(|e| e.source())).finish(),
            FnRepr::Native(_) => write!(f, "<native R^{} -> R^{}>", self.n_in, self.n_out),
        }
    }
}

impl VecFn {
    pub fn from_exprs(sources: &[&str], vars: &[String]) -> Result<Self> {
        let exprs = sources
            .iter()
            .map(|s| Expr::parse(s, vars))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_in: vars.len(),
            n_out: exprs.len(),
            repr: FnRepr::Exprs(exprs),
        })
    }

    /// `f` returns the value and the `p x m` Jacobian.
    pub fn native(
        n_in: usize,
        n_out: usize,
        f: impl Fn(&[f64]) -> (Vec<f64>, DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        Self { n_in, n_out, repr: FnRepr::Native(Arc::new(f)) }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn sources(&self) -> Option<Vec<String>> {
        match &self.repr {
            FnRepr::Exprs(e) => Some(e.iter().map(|e| e.source().to_string()).collect()),
            FnRepr::Native(_) => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.repr {
            FnRepr::Exprs(e) => e.iter().map(|e| e.eval(x)).collect(),
            FnRepr::Native(f) => f(x).0,
        }
    }

    pub fn eval_jac(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        match &self.repr {
            FnRepr::Exprs(e) => {
                let mut jac = DMatrix::zeros(self.n_out, self.n_in);
                let mut val = Vec::with_capacity(self.n_out);
                for (row, e) in e.iter().enumerate() {
                    let (v, g) = e.eval_grad(x);
                    val.push(v);
                    for (col, d) in g.into_iter().enumerate() {
                        jac[(row, col)] = d;
                    }
                }
                (val, jac)
            }
            FnRepr::Native(f) => f(x),
        }
    }
}

/// `g` on its open domain `V ⊂ R^{kn}`.
#[derive(Clone, Debug)]
pub struct GSpec {
    pub f: VecFn,
    pub v: Region,
}

/// One point-evaluation term `weight * E phi_component(t)` of row `row` of `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LTerm {
    pub row: usize,
    pub component: usize,
    pub t: f64,
    pub weight: f64,
}

/// `(value, slope)` of a candidate basis function on `[-h, 0]`.
pub type BasisFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

type UserQFn = Arc<dyn Fn(&[f64], &dyn SegmentView) -> Vec<f64> + Send + Sync>;

/// An opaque `Q`, linear in the segment, with caller-supplied basis data.
#[derive(Clone)]
pub struct UserQ {
    pub dim: usize,
    pub eval: UserQFn,
    /// Candidate basis functions `β_m` per component.
    pub basis: Vec<Vec<BasisFn>>,
    /// Per component, a bound for `sup_r |τ q(r, ·)|` in the coordinates
    /// of an orthonormal basis of the range.
    pub c_q: Vec<f64>,
}

#[derive(Clone)]
pub enum QSpec {
    /// `r`-independent functional: row `p` of `Lφ` is the sum of its terms.
    ConstantL { dim: usize, terms: Vec<LTerm> },
    /// `Q(r, φ)_m = E φ_{ν(m)}(r_{κ(m)})` (0-based indices).
    CoordSelect { nu: Vec<usize>, kappa: Vec<usize> },
    User(UserQ),
}

impl fmt::Debug for QSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QSpec::ConstantL { dim, terms } => f.debug_struct("ConstantL").field("dim", dim).field("terms", terms).finish(),
            QSpec::CoordSelect { nu, kappa } => f.debug_struct("CoordSelect").field("nu", nu).field("kappa", kappa).finish(),
            QSpec::User(u) => write!(f, "User {{ dim: {} }}", u.dim),
        }
    }
}

impl QSpec {
    pub fn dim(&self) -> usize {
        match self {
            QSpec::ConstantL { dim, .. } => *dim,
            QSpec::CoordSelect { nu, .. } => nu.len(),
            QSpec::User(u) => u.dim,
        }
    }
}

#[derive(Clone, Debug)]
pub enum DeltaSpec {
    /// `δ(r, w) = d(w) + r`.
    Offset { d: VecFn },
    /// `δ(r, w)` with inputs `(r_1..r_k, w_1..w_dim)`.
    General { delta: VecFn },
}

/// A delayed argument vector `(r, φ)^ ∈ R^{kn}`.
pub type HatVector = Vec<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub r: Vec<f64>,
    pub phi: VectorSegment,
}

impl StatePoint {
    pub fn new(r: Vec<f64>, phi: VectorSegment) -> Self {
        Self { r, phi }
    }
}

/// Residuals of the three conditions defining the solution manifold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldResiduals {
    /// `|φ'(0) - G(r, φ)|`
    pub ode: f64,
    /// `|Δ(r, φ)|`
    pub delta: f64,
    /// `det D_1 Δ(r, φ)`
    pub det: f64,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub h: f64,
    pub n: usize,
    pub k: usize,
    /// Open interval containing `[-h, 0]`.
    pub i: Interval,
    /// Compact interval with `closure(I) ⊂ J ⊆ [-2h, h]`.
    pub j: Interval,
    pub g: GSpec,
    pub q: QSpec,
    pub delta: DeltaSpec,
    pub w: Region,
}

/// Default delay intervals `I = (-9h/8, h/8)`, `J = [-2h, h]`.
pub fn default_intervals(h: f64) -> (Interval, Interval) {
    (Interval::new(-9.0 * h / 8.0, h / 8.0), Interval::new(-2.0 * h, h))
}

impl ModelSpec {
    pub fn kn(&self) -> usize {
        self.k * self.n
    }

    pub fn q_dim(&self) -> usize {
        self.q.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidModel(s));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h = {} must be positive", self.h));
        }
        if self.n == 0 || self.k == 0 {
            return bad("n and k must be at least 1".into());
        }
        let (i, j, h) = (self.i, self.j, self.h);
        if !(i.lo < -h && i.hi > 0.0) {
            return bad(format!("I = ({}, {}) must contain [-h, 0] = [{}, 0]", i.lo, i.hi, -h));
        }
        if !(j.lo <= i.lo && i.hi <= j.hi) {
            return bad(format!("J = [{}, {}] must contain the closure of I", j.lo, j.hi));
        }
        if !(j.lo >= -2.0 * h && j.hi <= h) {
            return bad(format!("J = [{}, {}] must lie in [-2h, h]", j.lo, j.hi));
        }
        if self.g.f.n_in() != self.kn() || self.g.f.n_out() != self.n {
            return bad(format!(
                "g maps R^{} -> R^{} but R^{} -> R^{} is required",
                self.g.f.n_in(),
                self.g.f.n_out(),
                self.kn(),
                self.n
            ));
        }
        self.g.v.validate(self.kn(), "V")?;
        if let Region::Boxes(_) = &self.g.v {
            for (b, bx) in self.g.v.exhaustion(self.kn(), 1).iter().enumerate() {
                if bx.iter().any(|iv| iv.is_empty()) {
                    return bad(format!(
                        "V: box {} is too small or too far out; each side must reach more than 1/4 inside |v| < 4",
                        b + 1
                    ));
                }
            }
        }
        let dim = self.q_dim();
        match &self.q {
            QSpec::ConstantL { dim, terms } => {
                if *dim == 0 {
                    return bad("L needs at least one row".into());
                }
                for (p, t) in terms.iter().enumerate() {
                    if t.row >= *dim || t.component >= self.n {
                        return bad(format!("L term {} refers to row {} component {}", p + 1, t.row + 1, t.component + 1));
                    }
                    if !j.contains_closed(t.t) || !t.weight.is_finite() {
                        return bad(format!("L term {} evaluates at t = {} outside J", p + 1, t.t));
                    }
                }
            }
            QSpec::CoordSelect { nu, kappa } => {
                if nu.is_empty() || nu.len() != kappa.len() {
                    return bad("COORD_SELECT needs nu and kappa of equal positive length".into());
                }
                for (m, (&a, &b)) in nu.iter().zip(kappa).enumerate() {
                    if a >= self.n || b >= self.k {
                        return bad(format!("COORD_SELECT entry {} out of range", m + 1));
                    }
                    if nu[..m].contains(&a) {
                        return bad("COORD_SELECT nu must be injective".into());
                    }
                }
            }
            QSpec::User(u) => {
                if u.basis.len() != self.n || u.c_q.len() != self.n {
                    return bad("USER Q needs basis data and c_q for every component".into());
                }
            }
        }
        match &self.delta {
            DeltaSpec::Offset { d } => {
                if d.n_in() != dim || d.n_out() != self.k {
                    return bad(format!("d must map R^{dim} -> R^{}", self.k));
                }
            }
            DeltaSpec::General { delta } => {
                if delta.n_in() != self.k + dim || delta.n_out() != self.k {
                    return bad(format!("delta must map R^{} x R^{dim} -> R^{}", self.k, self.k));
                }
            }
        }
        self.w.validate(dim, "W")?;
        Ok(())
    }

    /// Evaluates `(r, φ)^`; every `r_κ` must lie in `J`.
    pub fn hat(&self, r: &[f64], phi: &dyn SegmentView) -> Result<HatVector> {
        self.check_dims(r, phi)?;
        hat_vector(r, phi, &self.j)
    }

    fn check_dims(&self, r: &[f64], phi: &dyn SegmentView) -> Result<()> {
        if r.len() != self.k || phi.dim() != self.n {
            return Err(Error::Dimension(format!(
                "expected r in R^{} and a segment in C_{}, got R^{} and C_{}",
                self.k,
                self.n,
                r.len(),
                phi.dim()
            )));
        }
        if phi.h() != self.h {
            return Err(Error::Dimension(format!("segment length {} differs from h = {}", phi.h(), self.h)));
        }
        Ok(())
    }

    fn check_r_in_j(&self, r: &[f64]) -> Result<()> {
        match r.iter().find(|x| !self.j.contains_closed(**x)) {
            Some(&t) => Err(Error::OutOfDomain { t, lo: self.j.lo, hi: self.j.hi }),
            None => Ok(()),
        }
    }

    /// `Q(r, φ)`.
    pub fn q_eval(&self, r: &[f64], phi: &dyn SegmentView) -> Result<Vec<f64>> {
        self.check_r_in_j(r)?;
        Ok(self.q_unchecked(r, phi))
    }

    pub(crate) fn q_unchecked(&self, r: &[f64], phi: &dyn SegmentView) -> Vec<f64> {
        match &self.q {
            QSpec::ConstantL { dim, terms } => {
                let mut out = vec![0.0; *dim];
                for t in terms {
                    out[t.row] += t.weight * phi.extension_at(t.component, t.t).0;
                }
                out
            }
            QSpec::CoordSelect { nu, kappa } => nu
                .iter()
                .zip(kappa)
                .map(|(&j, &kk)| phi.extension_at(j, r[kk]).0)
                .collect(),
            QSpec::User(u) => (u.eval)(r, phi),
        }
    }

    /// `Q_j(r, ψ) = Q(r, ψ·e_j)` for a scalar segment.
    pub fn q_component(&self, j: usize, r: &[f64], psi: &ScalarSegment) -> Vec<f64> {
        self.q_unchecked(r, &EmbeddedView { segment: psi, component: j, n: self.n })
    }

    /// `∂Q/∂r` (`dim x k`).
    pub fn dq_dr(&self, r: &[f64], phi: &dyn SegmentView) -> DMatrix<f64> {
        let dim = self.q_dim();
        let mut m = DMatrix::zeros(dim, self.k);
        match &self.q {
            QSpec::ConstantL { .. } => {}
            QSpec::CoordSelect { nu, kappa } => {
                for (row, (&j, &kk)) in nu.iter().zip(kappa).enumerate() {
                    m[(row, kk)] = phi.extension_at(j, r[kk]).1;
                }
            }
            QSpec::User(u) => {
                for col in 0..self.k {
                    let step = 1e-6 * (1.0 + r[col].abs());
                    let mut rp = r.to_vec();
                    let mut rm = r.to_vec();
                    rp[col] += step;
                    rm[col] -= step;
                    let (qp, qm) = ((u.eval)(&rp, phi), (u.eval)(&rm, phi));
                    for row in 0..dim {
                        m[(row, col)] = (qp[row] - qm[row]) / (2.0 * step);
                    }
                }
            }
        }
        m
    }

    pub fn g_value(&self, v: &[f64]) -> Vec<f64> {
        self.g.f.eval(v)
    }

    /// `∂_ι g_ν(v)` as an `n x kn` matrix.
    pub fn g_jacobian(&self, v: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        self.g.f.eval_jac(v)
    }

    pub fn delta_value(&self, r: &[f64], w: &[f64]) -> Vec<f64> {
        match &self.delta {
            DeltaSpec::Offset { d } => d.eval(w).iter().zip(r).map(|(a, b)| a + b).collect(),
            DeltaSpec::General { delta } => {
                let mut x = r.to_vec();
                x.extend_from_slice(w);
                delta.eval(&x)
            }
        }
    }

    /// `(δ, D_1 δ, D_2 δ)` at `(r, w)`.
    pub fn delta_jacobians(&self, r: &[f64], w: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        match &self.delta {
            DeltaSpec::Offset { d } => {
                let (val, jac) = d.eval_jac(w);
                let val = val.iter().zip(r).map(|(a, b)| a + b).collect();
                (val, DMatrix::identity(self.k, self.k), jac)
            }
            DeltaSpec::General { delta } => {
                let mut x = r.to_vec();
                x.extend_from_slice(w);
                let (val, jac) = delta.eval_jac(&x);
                let d1 = jac.columns(0, self.k).into_owned();
                let d2 = jac.columns(self.k, w.len()).into_owned();
                (val, d1, d2)
            }
        }
    }

    /// Which defining condition of the domain `U` fails first, if any.
    pub fn domain_violation(&self, r: &[f64], phi: &dyn SegmentView) -> Result<Option<DomainViolation>> {
        self.check_dims(r, phi)?;
        if r.iter().any(|x| !self.i.contains_open(*x)) {
            return Ok(Some(DomainViolation::DelayNotInI));
        }
        let v = hat_vector(r, phi, &self.j)?;
        if !self.g.v.contains(&v) {
            return Ok(Some(DomainViolation::HatNotInV));
        }
        if !self.w.contains(&self.q_unchecked(r, phi)) {
            return Ok(Some(DomainViolation::QNotInW));
        }
        Ok(None)
    }

    pub fn in_domain(&self, r: &[f64], phi: &dyn SegmentView) -> bool {
        matches!(self.domain_violation(r, phi), Ok(None))
    }

    fn require_domain(&self, r: &[f64], phi: &dyn SegmentView) -> Result<()> {
        match self.domain_violation(r, phi)? {
            None => Ok(()),
            Some(v) => Err(Error::NotInU(v)),
        }
    }

    /// `G(r, φ) = g((r, φ)^)`.
    #[allow(non_snake_case)]
    pub fn G(&self, r: &[f64], phi: &dyn SegmentView) -> Result<Vec<f64>> {
        self.require_domain(r, phi)?;
        Ok(self.g_value(&hat_vector(r, phi, &self.j)?))
    }

    /// `Δ(r, φ) = δ(r, Q(r, φ))`.
    #[allow(non_snake_case)]
    pub fn Delta(&self, r: &[f64], phi: &dyn SegmentView) -> Result<Vec<f64>> {
        self.require_domain(r, phi)?;
        Ok(self.delta_value(r, &self.q_unchecked(r, phi)))
    }

    /// `DG(r, φ)(s, ψ)`; only values of `Eψ` enter, so `ψ` may be merely continuous.
    pub fn dg_directional(&self, r: &[f64], phi: &dyn SegmentView, s: &[f64], psi: &dyn SegmentView) -> Result<Vec<f64>> {
        self.require_domain(r, phi)?;
        self.check_dims(r, psi)?;
        let v = hat_vector(r, phi, &self.j)?;
        let (_, jac) = self.g_jacobian(&v);
        let mut dv = Vec::with_capacity(self.kn());
        for (kk, &rk) in r.iter().enumerate() {
            for j in 0..self.n {
                dv.push(psi.extension_at(j, rk).0 + s[kk] * phi.extension_at(j, rk).1);
            }
        }
        Ok((jac * DVector::from_vec(dv)).iter().copied().collect())
    }

    /// `D_2 Δ(r, φ) ψ = D_2 δ(r, Q(r, φ)) Q(r, ψ)`.
    pub fn d2delta_directional(&self, r: &[f64], phi: &dyn SegmentView, psi: &dyn SegmentView) -> Result<Vec<f64>> {
        self.require_domain(r, phi)?;
        self.check_dims(r, psi)?;
        let w = self.q_unchecked(r, phi);
        let (_, _, d2) = self.delta_jacobians(r, &w);
        let qpsi = DVector::from_vec(self.q_unchecked(r, psi));
        Ok((d2 * qpsi).iter().copied().collect())
    }

    /// `D_1 Δ(r, φ) = D_1 δ + D_2 δ ∂_r Q` (`k x k`).
    pub fn d1delta(&self, r: &[f64], phi: &dyn SegmentView) -> Result<DMatrix<f64>> {
        self.require_domain(r, phi)?;
        Ok(self.d1delta_unchecked(r, phi))
    }

    pub(crate) fn d1delta_unchecked(&self, r: &[f64], phi: &dyn SegmentView) -> DMatrix<f64> {
        let w = self.q_unchecked(r, phi);
        let (_, d1, d2) = self.delta_jacobians(r, &w);
        d1 + d2 * self.dq_dr(r, phi)
    }

    /// Residuals of `φ'(0) = G(r, φ)`, `Δ(r, φ) = 0` and the determinant of `D_1 Δ`.
    pub fn manifold_residuals(&self, r: &[f64], phi: &dyn SegmentView) -> Result<ManifoldResiduals> {
        let g = self.G(r, phi)?;
        let slope: Vec<f64> = (0..self.n).map(|j| phi.component_at(j, 0.0).1).collect();
        let ode = norm(&slope.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>());
        let delta = norm(&self.Delta(r, phi)?);
        let det = self.d1delta_unchecked(r, phi).determinant();
        Ok(ManifoldResiduals { ode, delta, det })
    }

    /// Candidate basis functions for component `j` on a mesh with `n_intervals`.
    pub fn hq_candidates(&self, j: usize, n_intervals: usize) -> Result<Vec<ScalarSegment>> {
        let h = self.h;
        match &self.q {
            QSpec::CoordSelect { nu, .. } => Ok(if nu.contains(&j) {
                vec![ScalarSegment::constant(h, n_intervals, 1.0)]
            } else {
                vec![]
            }),
            QSpec::ConstantL { .. } => self.lagrange_candidates(j, n_intervals),
            QSpec::User(u) => u.basis[j]
                .iter()
                .map(|b| ScalarSegment::from_fn(h, n_intervals, |t| b(t).0, |t| b(t).1))
                .collect(),
        }
    }

    /// Combinations of Lagrange polynomials over the evaluation points of
    /// component `j` whose images are the scaled left singular vectors.
    fn lagrange_candidates(&self, j: usize, n_intervals: usize) -> Result<Vec<ScalarSegment>> {
        let QSpec::ConstantL { dim, terms } = &self.q else {
            unreachable!()
        };
        let mut pts: Vec<f64> = terms.iter().filter(|t| t.component == j).map(|t| t.t).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if pts.is_empty() {
            return Ok(vec![]);
        }
        let scale = self.h;
        let lagrange = |p: usize, t: f64| -> (f64, f64) {
            let mut val = 1.0;
            let mut der = 0.0;
            for (m, &tm) in pts.iter().enumerate() {
                if m == p {
                    continue;
                }
                let den = (pts[p] - tm) / scale;
                let f = (t - tm) / scale / den;
                der = der * f + val / (scale * den);
                val *= f;
            }
            (val, der)
        };
        let basis = (0..pts.len())
            .map(|p| ScalarSegment::from_fn(self.h, n_intervals, |t| lagrange(p, t).0, |t| lagrange(p, t).1))
            .collect::<Result<Vec<_>>>()?;
        let r0 = vec![self.i.mid(); self.k];
        let mut images = DMatrix::zeros(*dim, basis.len());
        for (p, b) in basis.iter().enumerate() {
            for (row, x) in self.q_component(j, &r0, b).into_iter().enumerate() {
                images[(row, p)] = x;
            }
        }
        let svd = images.svd(true, true);
        let v_t = svd.v_t.expect("svd computed with V");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let mut out = Vec::new();
        for (m, &s) in svd.singular_values.iter().enumerate() {
            if s > 1e-10 * smax.max(1e-300) {
                let mut seg = ScalarSegment::zero(self.h, n_intervals);
                for (p, b) in basis.iter().enumerate() {
                    seg.axpy(v_t[(m, p)], b)?;
                }
                out.push(seg);
            }
        }
        Ok(out)
    }

    /// Grid of `per_axis^k` points over `J^k` (endpoints included).
    pub fn j_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        grid_points(&vec![self.j; self.k], per_axis)
    }
}

/// Tensor grid with `per_axis` points per coordinate, endpoints included.
pub fn grid_points(axes: &[Interval], per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(1);
    let total = per_axis.pow(axes.len() as u32);
    (0..total)
        .map(|mut idx| {
            axes.iter()
                .map(|iv| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    if per_axis == 1 {
                        iv.mid()
                    } else {
                        iv.lo + iv.len() * i as f64 / (per_axis - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Singular-value check of the candidate basis images over an `r`-grid on `J^k`:
/// smallest singular value at least `1e-8` and the same range everywhere.
pub fn verify_hq(model: &ModelSpec, grid_per_axis: usize, n_intervals: usize) -> CheckResult {
    const FLOOR: f64 = 1e-8;
    let mut least = Least::new();
    let mut failure: Option<String> = None;
    let grid = model.j_grid(grid_per_axis);
    for j in 0..model.n {
        let cands = match model.hq_candidates(j, n_intervals) {
            Ok(c) => c,
            Err(e) => return CheckResult::failed("hq", 0, format!("component {}: {e}", j + 1)),
        };
        if cands.is_empty() {
            continue;
        }
        let mut reference: Option<DMatrix<f64>> = None;
        for r in &grid {
            let mut b = DMatrix::zeros(model.q_dim(), cands.len());
            for (m, c) in cands.iter().enumerate() {
                for (row, x) in model.q_component(j, r, c).into_iter().enumerate() {
                    b[(row, m)] = x;
                }
            }
            let smin = if cands.len() > model.q_dim() {
                0.0
            } else {
                b.clone().svd(false, false).singular_values.iter().copied().fold(f64::INFINITY, f64::min)
            };
            least.push(smin, || format!("j={} r={:?}", j + 1, r));
            if smin < FLOOR {
                failure.get_or_insert(format!("component {}: singular value {smin:.3e} at r = {r:?}", j + 1));
                continue;
            }
            let q = b.clone().qr().q();
            match &reference {
                None => reference = Some(q),
                Some(q0) => {
                    let off = &b - q0 * (q0.transpose() * &b);
                    if off.norm() > FLOOR * b.norm().max(1.0) {
                        failure.get_or_insert(format!("component {}: range changes at r = {r:?}", j + 1));
                    }
                }
            }
        }
    }
    let value = if least.count == 0 { f64::INFINITY } else { least.value };
    let mut c = CheckResult::at_least("hq", value, FLOOR, least.count);
    c.worst_at = least.at;
    if let Some(f) = failure {
        c.pass = false;
        c.detail = Some(f);
    }
    c
}

/// Scalar segment built from a closure returning `(value, slope)`.
pub fn segment_from_pair(h: f64, n_intervals: usize, f: impl Fn(f64) -> (f64, f64)) -> Result<ScalarSegment> {
    ScalarSegment::from_fn(h, n_intervals, |t| f(t).0, |t| f(t).1)
}

/// Constant vector segment.
pub fn constant_segment(h: f64, n_intervals: usize, c: &[f64]) -> VectorSegment {
    VectorSegment::new(c.iter().map(|&x| ScalarSegment::constant(h, n_intervals, x)).collect())
        .expect("non-empty constant")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    fn affine(h: f64, n: usize, a: f64, b: f64) -> VectorSegment {
        VectorSegment::new(vec![ScalarSegment::from_fn(h, n, |t| a + b * t, |_| b).unwrap()]).unwrap()
    }

    #[test]
    fn builtins_validate() {
        for m in [builtin::echo(), builtin::lin2(), builtin::pair(), builtin::lin2box()] {
            m.validate().unwrap();
        }
    }

    #[test]
    fn echo_values() {
        let m = builtin::echo();
        let zero = constant_segment(m.h, 64, &[0.0]);
        assert_eq!(m.G(&[-1.0], &zero).unwrap(), vec![0.0]);
        assert_eq!(m.Delta(&[-1.0], &zero).unwrap(), vec![0.0]);
        let id = affine(m.h, 64, 0.0, 1.0);
        assert_eq!(m.hat(&[-1.0], &id).unwrap(), vec![-1.0]);
        assert_eq!(m.g_value(&[-1.0]), vec![1.0]);
        assert_eq!(m.G(&[-0.5], &id).unwrap(), vec![0.5]);
        let twice = affine(m.h, 64, 0.0, 2.0);
        assert_eq!(m.G(&[-0.4], &twice).unwrap()[0], 2.0 * m.G(&[-0.4], &id).unwrap()[0]);
        assert_eq!(m.d1delta(&[-1.0], &zero).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn lin2_values() {
        let m = builtin::lin2();
        let zero = constant_segment(m.h, 64, &[0.0]);
        assert_eq!(m.Delta(&[-0.5], &zero).unwrap(), vec![0.0]);
        let phi = affine(m.h, 64, 0.2, 0.7);
        let a = m.Delta(&[-0.3], &phi).unwrap()[0];
        let b = m.Delta(&[-0.8], &phi).unwrap()[0];
        assert_eq!(a - b, -0.3 - -0.8);
        assert_eq!(m.d1delta(&[-0.3], &phi).unwrap(), DMatrix::identity(1, 1));
    }

    #[test]
    fn echo_directional_derivative_for_affine() {
        let m = builtin::echo();
        let (a, b) = (0.1, 0.3);
        let phi = affine(m.h, 64, a, b);
        let psi = VectorSegment::new(vec![ScalarSegment::from_fn(m.h, 64, |t| t.sin(), |t| t.cos()).unwrap()]).unwrap();
        let (r, s) = (-1.1, 0.4);
        let dg = m.dg_directional(&[r], &phi, &[s], &psi).unwrap()[0];
        let epsi = psi.extension_at(0, r).0;
        assert!((dg + (epsi + s * b)).abs() < 1e-14);
        let zero = constant_segment(m.h, 64, &[0.0]);
        assert_eq!(m.dg_directional(&[r], &phi, &[0.0], &zero).unwrap(), vec![0.0]);
        assert_eq!(m.d2delta_directional(&[r], &phi, &zero).unwrap(), vec![0.0]);
    }

    #[test]
    fn domain_diagnosis() {
        let m = builtin::echo();
        let zero = constant_segment(m.h, 64, &[0.0]);
        assert_eq!(m.domain_violation(&[-1.0], &zero).unwrap(), None);
        assert_eq!(m.domain_violation(&[m.i.lo], &zero).unwrap(), Some(DomainViolation::DelayNotInI));
        let two = constant_segment(m.h, 64, &[2.0]);
        assert_eq!(m.domain_violation(&[-1.0], &two).unwrap(), Some(DomainViolation::QNotInW));
        let err = m.G(&[-1.0], &two).unwrap_err();
        assert_eq!(err.to_string(), "point outside the domain U: Q(r,phi) not in W");
        let boxed = builtin::lin2box();
        let big = constant_segment(boxed.h, 64, &[3.5]);
        assert_eq!(boxed.domain_violation(&[-0.5], &big).unwrap(), Some(DomainViolation::HatNotInV));
    }

    #[test]
    fn hq_passes_on_builtins() {
        for m in [builtin::echo(), builtin::lin2(), builtin::pair()] {
            let c = verify_hq(&m, 9, 64);
            assert!(c.pass, "{}: {:?}", m.name, c);
        }
    }

    #[test]
    fn hq_detects_zero_basis() {
        let mut m = builtin::lin2();
        m.q = QSpec::User(UserQ {
            dim: 1,
            eval: Arc::new(|_r, phi| vec![phi.component_at(0, -0.5).0]),
            basis: vec![vec![Arc::new(|_t| (0.0, 0.0))]],
            c_q: vec![1.0],
        });
        let c = verify_hq(&m, 9, 64);
        assert!(!c.pass);
        assert_eq!(c.worst, 0.0);
    }

    #[test]
    fn lagrange_candidates_have_independent_images() {
        let mut m = builtin::lin2();
        m.q = QSpec::ConstantL {
            dim: 2,
            terms: vec![
                LTerm { row: 0, component: 0, t: -0.5, weight: 1.0 },
                LTerm { row: 1, component: 0, t: -0.25, weight: 2.0 },
                LTerm { row: 1, component: 0, t: -0.5, weight: 1.0 },
            ],
        };
        m.delta = DeltaSpec::Offset {
            d: VecFn::from_exprs(&["(1 + tanh(w1 + w2))/2"], &expr::var_names("w", 2)).unwrap(),
        };
        m.w = Region::All;
        m.validate().unwrap();
        assert_eq!(m.hq_candidates(0, 64).unwrap().len(), 2);
        assert!(verify_hq(&m, 9, 64).pass);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut m = builtin::echo();
        m.i = Interval::new(-1.0, 0.1);
        assert!(m.validate().is_err());
        let mut m = builtin::echo();
        m.j = Interval::new(-5.0, 1.0);
        assert!(m.validate().is_err());
        let mut m = builtin::pair();
        m.q = QSpec::CoordSelect { nu: vec![0, 0], kappa: vec![0, 1] };
        assert!(m.validate().unwrap_err().to_string().contains("injective"));
    }
}
