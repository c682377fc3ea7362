//! Segments `[-h, 0] -> R^n` stored as cubic Hermite data on a uniform mesh.
//!
//! Every node carries a value and a slope, so conditions such as `phi'(0) = 0`
//! are exact node conditions. The odd extension `E` continues a segment onto
//! `[-2h, h]` by point reflection through the endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of mesh intervals.
pub const DEFAULT_INTERVALS: usize = 64;

/// Interior samples per interval used by the sup norms (in addition to the nodes).
pub const NORM_SAMPLES_PER_INTERVAL: usize = 8;

/// A closed interval `[lo, hi]`; openness is decided by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains_closed(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    pub fn contains_open(&self, t: f64) -> bool {
        t > self.lo && t < self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        !(self.hi > self.lo)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Hermite basis weights `(h00, h10, h01, h11)` and their `s`-derivatives.
#[inline]
fn hermite_weights(s: f64) -> ([f64; 4], [f64; 4]) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        [
            2.0 * s3 - 3.0 * s2 + 1.0,
            s3 - 2.0 * s2 + s,
            -2.0 * s3 + 3.0 * s2,
            s3 - s2,
        ],
        [
            6.0 * s2 - 6.0 * s,
            3.0 * s2 - 4.0 * s + 1.0,
            -6.0 * s2 + 6.0 * s,
            3.0 * s2 - 2.0 * s,
        ],
    )
}

/// Cubic Hermite interpolation of `(u0, m0)` and `(u1, m1)` over an interval of
/// width `dx`, evaluated at local coordinate `s ∈ [0, 1]`.
#[inline]
pub(crate) fn hermite(u0: f64, m0: f64, u1: f64, m1: f64, dx: f64, s: f64) -> (f64, f64) {
    let (w, dw) = hermite_weights(s);
    combine(&w, &dw, u0, m0, u1, m1, dx)
}

/// Uses `h00 = 1 - h01` so that constant data is reproduced exactly.
#[inline]
fn combine(w: &[f64; 4], dw: &[f64; 4], u0: f64, m0: f64, u1: f64, m1: f64, dx: f64) -> (f64, f64) {
    let du = u1 - u0;
    let value = u0 + w[2] * du + dx * (w[1] * m0 + w[3] * m1);
    let slope = dw[2] * du / dx + dw[1] * m0 + dw[3] * m1;
    (value, slope)
}

/// Read access to a (possibly lazily defined) `R^n`-valued segment on `[-h, 0]`.
///
/// `component_at` clamps its argument into `[-h, 0]`; domain checks belong to
/// the callers that know the admissible interval.
pub trait SegmentView {
    fn h(&self) -> f64;

    fn dim(&self) -> usize;

    /// Value and slope of component `j` at `t ∈ [-h, 0]`.
    fn component_at(&self, j: usize, t: f64) -> (f64, f64);

    /// Value and slope of the odd extension `E phi_j` at `t ∈ [-2h, h]`.
    fn extension_at(&self, j: usize, t: f64) -> (f64, f64) {
        let h = self.h();
        if t > 0.0 {
            let (u0, _) = self.component_at(j, 0.0);
            let (u, m) = self.component_at(j, (-t).max(-h));
            (2.0 * u0 - u, m)
        } else if t < -h {
            let (uh, _) = self.component_at(j, -h);
            let (u, m) = self.component_at(j, (-t - 2.0 * h).clamp(-h, 0.0));
            (2.0 * uh - u, m)
        } else {
            self.component_at(j, t)
        }
    }
}

/// A scalar `C^1` segment on `[-h, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSegment {
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl ScalarSegment {
    /// Samples `f` and `fp` at the `n_intervals + 1` mesh nodes.
    pub fn from_fn(
        h: f64,
        n_intervals: usize,
        f: impl Fn(f64) -> f64,
        fp: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        check_mesh(h, n_intervals)?;
        let nodes: Vec<f64> = (0..=n_intervals).map(|i| node(h, n_intervals, i)).collect();
        let values: Vec<f64> = nodes.iter().map(|&t| f(t)).collect();
        let slopes: Vec<f64> = nodes.iter().map(|&t| fp(t)).collect();
        Self::from_nodes(h, values, slopes)
    }

    /// Builds a segment from node data; `values.len() - 1` is the interval count.
    pub fn from_nodes(h: f64, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if values.len() != slopes.len() {
            return Err(Error::Dimension(format!(
                "{} values but {} slopes",
                values.len(),
                slopes.len()
            )));
        }
        check_mesh(h, values.len().saturating_sub(1))?;
        if let Some(node) = values
            .iter()
            .zip(&slopes)
            .position(|(u, m)| !u.is_finite() || !m.is_finite())
        {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { h, values, slopes })
    }

    pub fn zero(h: f64, n_intervals: usize) -> Self {
        Self {
            h,
            values: vec![0.0; n_intervals + 1],
            slopes: vec![0.0; n_intervals + 1],
        }
    }

    pub fn constant(h: f64, n_intervals: usize, c: f64) -> Self {
        Self {
            h,
            values: vec![c; n_intervals + 1],
            slopes: vec![0.0; n_intervals + 1],
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn node(&self, i: usize) -> f64 {
        node(self.h, self.intervals(), i)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn same_mesh(&self, other: &Self) -> bool {
        self.h == other.h && self.values.len() == other.values.len()
    }

    /// Value and slope at `t ∈ [-h, 0]`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(t >= -self.h && t <= 0.0) {
            return Err(Error::OutOfDomain { t, lo: -self.h, hi: 0.0 });
        }
        Ok(self.eval_clamped(t))
    }

    /// Value and slope of `E phi` at `t ∈ j`, where `j ⊆ [-2h, h]`.
    pub fn eval_extension(&self, t: f64, j: &Interval) -> Result<(f64, f64)> {
        if !j.contains_closed(t) || t < -2.0 * self.h || t > self.h {
            return Err(Error::OutOfDomain { t, lo: j.lo.max(-2.0 * self.h), hi: j.hi.min(self.h) });
        }
        Ok(self.extension_at(0, t))
    }

    pub(crate) fn eval_clamped(&self, t: f64) -> (f64, f64) {
        let n = self.intervals();
        let t = t.clamp(-self.h, 0.0);
        if t == 0.0 {
            return (self.values[n], self.slopes[n]);
        }
        if t == -self.h {
            return (self.values[0], self.slopes[0]);
        }
        let x = (t + self.h) * n as f64 / self.h;
        let i = (x.floor() as usize).min(n - 1);
        if t == self.node(i) {
            return (self.values[i], self.slopes[i]);
        }
        if t == self.node(i + 1) {
            return (self.values[i + 1], self.slopes[i + 1]);
        }
        let s = (x - i as f64).clamp(0.0, 1.0);
        hermite(
            self.values[i],
            self.slopes[i],
            self.values[i + 1],
            self.slopes[i + 1],
            self.h / n as f64,
            s,
        )
    }

    /// `self * a`
    pub fn scaled(&self, a: f64) -> Self {
        Self {
            h: self.h,
            values: self.values.iter().map(|u| a * u).collect(),
            slopes: self.slopes.iter().map(|m| a * m).collect(),
        }
    }

    /// `self += a * other` on node data.
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        if !self.same_mesh(other) {
            return Err(Error::MeshMismatch);
        }
        for (u, v) in self.values.iter_mut().zip(&other.values) {
            *u += a * v;
        }
        for (m, w) in self.slopes.iter_mut().zip(&other.slopes) {
            *m += a * w;
        }
        Ok(())
    }

    /// Sup norms of the segment and its derivative over nodes plus interior samples.
    pub fn norms(&self) -> SegmentNorms {
        let (c, d) = sampled_maxima(std::slice::from_ref(self));
        SegmentNorms::new(c, d)
    }

    /// Sup norm of `E phi` over `j ⊆ [-2h, h]`, sampled at the mirror images of
    /// the points used by [`ScalarSegment::norms`].
    pub fn extension_c_norm(&self, j: &Interval) -> f64 {
        let (u0, uh) = (self.values[self.intervals()], self.values[0]);
        let mut best = 0.0f64;
        self.for_each_sample(|t, u, _| {
            if j.contains_closed(t) {
                best = best.max(u.abs());
            }
            let right = -t;
            if right > 0.0 && j.contains_closed(right) {
                best = best.max((2.0 * u0 - u).abs());
            }
            let left = -t - 2.0 * self.h;
            if left < -self.h && j.contains_closed(left) {
                best = best.max((2.0 * uh - u).abs());
            }
        });
        best
    }

    fn for_each_sample(&self, mut f: impl FnMut(f64, f64, f64)) {
        let n = self.intervals();
        let dx = self.h / n as f64;
        let weights = interior_weights();
        for i in 0..n {
            let t0 = self.node(i);
            f(t0, self.values[i], self.slopes[i]);
            let (u0, m0, u1, m1) = (self.values[i], self.slopes[i], self.values[i + 1], self.slopes[i + 1]);
            for (m, (w, dw)) in weights.iter().enumerate() {
                let s = (m + 1) as f64 / (NORM_SAMPLES_PER_INTERVAL + 1) as f64;
                let (u, du) = combine(w, dw, u0, m0, u1, m1, dx);
                f(t0 + s * dx, u, du);
            }
        }
        f(0.0, self.values[n], self.slopes[n]);
    }
}

impl SegmentView for ScalarSegment {
    fn h(&self) -> f64 {
        self.h
    }

    fn dim(&self) -> usize {
        1
    }

    fn component_at(&self, _j: usize, t: f64) -> (f64, f64) {
        self.eval_clamped(t)
    }
}

fn interior_weights() -> [([f64; 4], [f64; 4]); NORM_SAMPLES_PER_INTERVAL] {
    std::array::from_fn(|m| hermite_weights((m + 1) as f64 / (NORM_SAMPLES_PER_INTERVAL + 1) as f64))
}

/// Max over the sample set of the Euclidean norms of the values and of the slopes.
fn sampled_maxima(comps: &[ScalarSegment]) -> (f64, f64) {
    let Some(first) = comps.first() else {
        return (0.0, 0.0);
    };
    let n = first.intervals();
    let dx = first.h / n as f64;
    let weights = interior_weights();
    let mut cmax = 0.0f64;
    let mut dmax = 0.0f64;
    let node_max = |i: usize| {
        let (mut a, mut b) = (0.0, 0.0);
        for c in comps {
            a += c.values[i] * c.values[i];
            b += c.slopes[i] * c.slopes[i];
        }
        (a, b)
    };
    for i in 0..=n {
        let (a, b) = node_max(i);
        cmax = cmax.max(a);
        dmax = dmax.max(b);
    }
    if comps.len() == 1 {
        let c = first;
        for i in 0..n {
            let (u0, m0, u1, m1) = (c.values[i], c.slopes[i], c.values[i + 1], c.slopes[i + 1]);
            for (w, dw) in &weights {
                let (u, du) = combine(w, dw, u0, m0, u1, m1, dx);
                cmax = cmax.max(u * u);
                dmax = dmax.max(du * du);
            }
        }
    } else {
        for i in 0..n {
            for (w, dw) in &weights {
                let (mut a, mut b) = (0.0, 0.0);
                for c in comps {
                    let (u0, m0, u1, m1) = (c.values[i], c.slopes[i], c.values[i + 1], c.slopes[i + 1]);
                    let (u, du) = combine(w, dw, u0, m0, u1, m1, dx);
                    a += u * u;
                    b += du * du;
                }
                cmax = cmax.max(a);
                dmax = dmax.max(b);
            }
        }
    }
    (cmax.sqrt(), dmax.sqrt())
}

fn check_mesh(h: f64, n_intervals: usize) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidModel(format!("segment length h = {h} must be positive")));
    }
    if n_intervals < 1 {
        return Err(Error::InvalidModel("a mesh needs at least one interval".into()));
    }
    Ok(())
}

/// Node `i` of the uniform mesh; `node(0) = -h` and `node(N) = 0` exactly.
#[inline]
pub fn node(h: f64, n_intervals: usize, i: usize) -> f64 {
    -h * (n_intervals - i) as f64 / n_intervals as f64
}

/// `|phi|_C` and `|phi|_C + |phi'|_C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNorms {
    pub c_norm: f64,
    pub c1_norm: f64,
}

impl SegmentNorms {
    fn new(c: f64, d: f64) -> Self {
        Self { c_norm: c, c1_norm: c + d }
    }
}

/// An `R^n`-valued segment; all components share one mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSegment {
    comps: Vec<ScalarSegment>,
}

impl VectorSegment {
    pub fn new(comps: Vec<ScalarSegment>) -> Result<Self> {
        let Some(first) = comps.first() else {
            return Err(Error::Dimension("a vector segment needs n >= 1".into()));
        };
        if comps.iter().any(|c| !c.same_mesh(first)) {
            return Err(Error::MeshMismatch);
        }
        Ok(Self { comps })
    }

    pub fn zero(h: f64, n_intervals: usize, n: usize) -> Self {
        Self {
            comps: vec![ScalarSegment::zero(h, n_intervals); n],
        }
    }

    /// Componentwise `from_fn`: `f(j, t)` and `fp(j, t)`.
    pub fn from_fn(
        h: f64,
        n_intervals: usize,
        n: usize,
        f: impl Fn(usize, f64) -> f64,
        fp: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        let comps = (0..n)
            .map(|j| ScalarSegment::from_fn(h, n_intervals, |t| f(j, t), |t| fp(j, t)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn n(&self) -> usize {
        self.comps.len()
    }

    pub fn h(&self) -> f64 {
        self.comps[0].h
    }

    pub fn intervals(&self) -> usize {
        self.comps[0].intervals()
    }

    pub fn component(&self, j: usize) -> &ScalarSegment {
        &self.comps[j]
    }

    pub fn components(&self) -> &[ScalarSegment] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<ScalarSegment> {
        self.comps
    }

    pub fn same_mesh(&self, other: &Self) -> bool {
        self.n() == other.n() && self.comps[0].same_mesh(&other.comps[0])
    }

    /// Value and slope vectors at `t ∈ [-h, 0]`.
    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut u = Vec::with_capacity(self.n());
        let mut m = Vec::with_capacity(self.n());
        for c in &self.comps {
            let (a, b) = c.eval(t)?;
            u.push(a);
            m.push(b);
        }
        Ok((u, m))
    }

    /// `phi'(0)`, read directly from the last node.
    pub fn slope_at_zero(&self) -> Vec<f64> {
        self.comps.iter().map(|c| *c.slopes.last().unwrap()).collect()
    }

    pub fn value_at_zero(&self) -> Vec<f64> {
        self.comps.iter().map(|c| *c.values.last().unwrap()).collect()
    }

    pub fn norms(&self) -> SegmentNorms {
        let (c, d) = sampled_maxima(&self.comps);
        SegmentNorms::new(c, d)
    }

    /// `phi ⊙ c`: component `j` scaled by `c_j`.
    pub fn odot(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.n() {
            return Err(Error::Dimension(format!(
                "odot with {} coefficients on a segment with n = {}",
                c.len(),
                self.n()
            )));
        }
        Ok(Self {
            comps: self.comps.iter().zip(c).map(|(p, &a)| p.scaled(a)).collect(),
        })
    }

    /// `phi · e_j` (0-based `j`) in `C^1_n`.
    pub fn embed_component(phi: &ScalarSegment, j: usize, n: usize) -> Result<Self> {
        if j >= n {
            return Err(Error::Dimension(format!("component index {} out of range 1..={n}", j + 1)));
        }
        let mut comps = vec![ScalarSegment::zero(phi.h, phi.intervals()); n];
        comps[j] = phi.clone();
        Ok(Self { comps })
    }

    /// Nodewise `sum_i coeffs[i] * segments[i]`.
    pub fn linear_combine(segments: &[&VectorSegment], coeffs: &[f64]) -> Result<Self> {
        if segments.len() != coeffs.len() || segments.is_empty() {
            return Err(Error::Dimension(format!(
                "{} segments but {} coefficients",
                segments.len(),
                coeffs.len()
            )));
        }
        let first = segments[0];
        if segments.iter().any(|s| !s.same_mesh(first)) {
            return Err(Error::MeshMismatch);
        }
        let mut out = VectorSegment::zero(first.h(), first.intervals(), first.n());
        for (s, &a) in segments.iter().zip(coeffs) {
            for (o, c) in out.comps.iter_mut().zip(&s.comps) {
                o.axpy(a, c)?;
            }
        }
        Ok(out)
    }

    /// `self - other` in the C^1 norm.
    pub fn c1_distance(&self, other: &Self) -> Result<f64> {
        Ok(VectorSegment::linear_combine(&[self, other], &[1.0, -1.0])?.norms().c1_norm)
    }

    pub(crate) fn component_mut(&mut self, j: usize) -> &mut ScalarSegment {
        &mut self.comps[j]
    }
}

impl SegmentView for VectorSegment {
    fn h(&self) -> f64 {
        self.comps[0].h
    }

    fn dim(&self) -> usize {
        self.comps.len()
    }

    fn component_at(&self, j: usize, t: f64) -> (f64, f64) {
        self.comps[j].eval_clamped(t)
    }
}

/// A scalar segment viewed as `phi · e_j` in `C_n` without materializing zeros.
pub struct EmbeddedView<'a> {
    pub segment: &'a ScalarSegment,
    pub component: usize,
    pub n: usize,
}

impl SegmentView for EmbeddedView<'_> {
    fn h(&self) -> f64 {
        self.segment.h
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn component_at(&self, j: usize, t: f64) -> (f64, f64) {
        if j == self.component {
            self.segment.eval_clamped(t)
        } else {
            (0.0, 0.0)
        }
    }

    fn extension_at(&self, j: usize, t: f64) -> (f64, f64) {
        if j == self.component {
            self.segment.extension_at(0, t)
        } else {
            (0.0, 0.0)
        }
    }
}

/// `v_{κn + j} = E phi_j(r_κ)` (0-based), the delayed-argument vector.
///
/// Each `r_κ` must lie in `j_interval ⊆ [-2h, h]`.
pub fn hat_vector(r: &[f64], phi: &dyn SegmentView, j_interval: &Interval) -> Result<Vec<f64>> {
    let n = phi.dim();
    let h = phi.h();
    let mut v = Vec::with_capacity(r.len() * n);
    for &rk in r {
        if !j_interval.contains_closed(rk) || rk < -2.0 * h || rk > h {
            return Err(Error::OutOfDomain { t: rk, lo: j_interval.lo, hi: j_interval.hi });
        }
        for j in 0..n {
            v.push(phi.extension_at(j, rk).0);
        }
    }
    Ok(v)
}

/// Serialized form `{h, n, N, values, slopes}`; nodes are implicit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentFile {
    pub h: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub intervals: usize,
    pub values: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<f64>>,
}

impl From<&VectorSegment> for SegmentFile {
    fn from(seg: &VectorSegment) -> Self {
        Self {
            h: seg.h(),
            n: seg.n(),
            intervals: seg.intervals(),
            values: seg.comps.iter().map(|c| c.values.clone()).collect(),
            slopes: seg.comps.iter().map(|c| c.slopes.clone()).collect(),
        }
    }
}

impl TryFrom<SegmentFile> for VectorSegment {
    type Error = Error;

    fn try_from(file: SegmentFile) -> Result<Self> {
        if file.values.len() != file.n || file.slopes.len() != file.n {
            return Err(Error::Dimension(format!(
                "segment declares n = {} but has {} value rows and {} slope rows",
                file.n,
                file.values.len(),
                file.slopes.len()
            )));
        }
        let comps = file
            .values
            .into_iter()
            .zip(file.slopes)
            .map(|(u, m)| {
                if u.len() != file.intervals + 1 {
                    return Err(Error::Dimension(format!(
                        "expected {} nodes, found {}",
                        file.intervals + 1,
                        u.len()
                    )));
                }
                ScalarSegment::from_nodes(file.h, u, m)
            })
            .collect::<Result<Vec<_>>>()?;
        VectorSegment::new(comps)
    }
}

impl Serialize for VectorSegment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SegmentFile::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for VectorSegment {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = SegmentFile::deserialize(deserializer)?;
        VectorSegment::try_from(file).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cosine(h: f64, n: usize) -> ScalarSegment {
        ScalarSegment::from_fn(h, n, |t| (PI * t / h).cos(), |t| -(PI / h) * (PI * t / h).sin()).unwrap()
    }

    #[test]
    fn zero_segment_evaluates_to_zero() {
        let z = ScalarSegment::zero(1.5, 7);
        for t in [-1.5, -1.0, -0.3, 0.0] {
            assert_eq!(z.eval(t).unwrap(), (0.0, 0.0));
        }
    }

    #[test]
    fn affine_data_is_reproduced() {
        let (a, b, h) = (0.7, -1.3, 2.0);
        let seg = ScalarSegment::from_fn(h, 5, |t| a + b * t, |_| b).unwrap();
        let (u, m) = seg.eval(-h / 2.0).unwrap();
        assert!((u - (a - b * h / 2.0)).abs() < 1e-14);
        assert!((m - b).abs() < 1e-13);
        for i in 0..=200 {
            let t = -h + h * i as f64 / 200.0;
            let (u, _) = seg.eval(t).unwrap();
            assert!((u - (a + b * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn cosine_interpolation_error() {
        let h = 1.0;
        let seg = cosine(h, 64);
        let mut worst = 0.0f64;
        for i in 0..64 {
            for m in 0..8 {
                let t = seg.node(i) + (m as f64 + 0.5) / 8.0 * h / 64.0;
                worst = worst.max((seg.eval(t).unwrap().0 - (PI * t / h).cos()).abs());
            }
        }
        assert!(worst <= 1e-6, "interpolation error {worst}");
        let (u, m) = seg.eval(-h).unwrap();
        assert!((u + 1.0).abs() <= 1e-9 && m.abs() <= 1e-6);
    }

    #[test]
    fn nodes_are_exact() {
        let seg = cosine(0.7, 13);
        for i in 0..=13 {
            let (u, m) = seg.eval(seg.node(i)).unwrap();
            assert_eq!(u, seg.values()[i]);
            assert_eq!(m, seg.slopes()[i]);
        }
    }

    #[test]
    fn eval_outside_is_rejected() {
        let seg = ScalarSegment::zero(1.0, 4);
        assert!(matches!(seg.eval(0.1), Err(Error::OutOfDomain { .. })));
        assert!(matches!(seg.eval(-1.01), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn non_finite_sample_names_the_node() {
        let err = ScalarSegment::from_fn(1.0, 4, |t| if t == -0.5 { f64::NAN } else { t }, |_| 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { node: 2 }));
    }

    #[test]
    fn extension_of_constants_and_affine() {
        let h = 1.0;
        let j = Interval::new(-2.0 * h, h);
        let c = ScalarSegment::constant(h, 9, 4.25);
        let aff = ScalarSegment::from_fn(h, 9, |t| 0.3 + 2.0 * t, |_| 2.0).unwrap();
        for i in 0..=300 {
            let t = -2.0 + 3.0 * i as f64 / 300.0;
            assert_eq!(c.eval_extension(t, &j).unwrap().0, 4.25);
            let (u, m) = aff.eval_extension(t, &j).unwrap();
            assert!((u - (0.3 + 2.0 * t)).abs() < 1e-12);
            assert!((m - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_extension_attains_three() {
        let seg = cosine(1.0, 64);
        let j = Interval::new(-2.0, 1.0);
        assert_eq!(seg.eval_extension(1.0, &j).unwrap().0, 3.0);
        let ratio = seg.extension_c_norm(&j) / seg.norms().c_norm;
        assert!(ratio >= 2.99 && ratio <= 3.0 + 1e-12);
    }

    #[test]
    fn extension_outside_j_is_rejected() {
        let seg = cosine(1.0, 8);
        let j = Interval::new(-1.5, 0.5);
        assert!(seg.eval_extension(0.6, &j).is_err());
        assert!(seg.eval_extension(-1.6, &j).is_err());
    }

    #[test]
    fn hat_vector_indexing() {
        let h = 1.0;
        let phi = VectorSegment::new(vec![ScalarSegment::constant(h, 4, 3.0), ScalarSegment::constant(h, 4, 5.0)]).unwrap();
        let j = Interval::new(-2.0, 1.0);
        assert_eq!(hat_vector(&[-0.2, -0.7], &phi, &j).unwrap(), vec![3.0, 5.0, 3.0, 5.0]);

        let id = VectorSegment::new(vec![ScalarSegment::from_fn(h, 4, |t| t, |_| 1.0).unwrap()]).unwrap();
        let v = hat_vector(&[0.5], &id, &j).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!(hat_vector(&[1.2], &id, &j).is_err());
    }

    #[test]
    fn hat_of_embedded_component_is_sparse() {
        let h = 1.0;
        let phi = cosine(h, 16);
        let j = Interval::new(-2.0, 1.0);
        let e = VectorSegment::embed_component(&phi, 1, 3).unwrap();
        let v = hat_vector(&[-0.3, 0.4], &e, &j).unwrap();
        for (iota, x) in v.iter().enumerate() {
            if iota % 3 != 1 {
                assert_eq!(*x, 0.0);
            } else {
                assert!(x.abs() > 0.0);
            }
        }
    }

    #[test]
    fn odot_and_embedding() {
        let h = 1.0;
        let p1 = cosine(h, 8);
        let p2 = ScalarSegment::from_fn(h, 8, |t| t * t, |t| 2.0 * t).unwrap();
        let phi = VectorSegment::new(vec![p1.clone(), p2]).unwrap();
        let zero = phi.odot(&[0.0, 0.0]).unwrap();
        assert_eq!(zero.norms().c1_norm, 0.0);
        let q = phi.odot(&[2.0, 0.0]).unwrap();
        assert_eq!(q.component(0), &p1.scaled(2.0));
        assert_eq!(q.component(1), &ScalarSegment::zero(h, 8));
        let c = [1.5, -0.25];
        let s = phi.odot(&c).unwrap().slope_at_zero();
        let s0 = phi.slope_at_zero();
        assert_eq!(s, vec![c[0] * s0[0], c[1] * s0[1]]);
        assert!(phi.odot(&[1.0]).is_err());

        let e = VectorSegment::embed_component(&ScalarSegment::constant(h, 8, 1.0), 1, 3).unwrap();
        assert_eq!(e.value_at_zero(), vec![0.0, 1.0, 0.0]);
        assert!(VectorSegment::embed_component(&p1, 3, 3).is_err());
        let single = VectorSegment::embed_component(&p1, 0, 1).unwrap();
        assert_eq!(single.component(0), &p1);
    }

    #[test]
    fn norms_of_simple_segments() {
        let z = VectorSegment::zero(1.0, 8, 2);
        assert_eq!(z.norms(), SegmentNorms { c_norm: 0.0, c1_norm: 0.0 });
        let id = VectorSegment::new(vec![ScalarSegment::from_fn(1.0, 8, |t| t, |_| 1.0).unwrap()]).unwrap();
        let nm = id.norms();
        assert!((nm.c_norm - 1.0).abs() < 1e-15 && (nm.c1_norm - 2.0).abs() < 1e-14);
        let cs = VectorSegment::new(vec![cosine(1.0, 64)]).unwrap();
        assert!((cs.norms().c_norm - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn linear_combination() {
        let h = 1.0;
        let phi = VectorSegment::new(vec![cosine(h, 16)]).unwrap();
        let psi = VectorSegment::new(vec![ScalarSegment::from_fn(h, 16, |t| t.exp(), |t| t.exp()).unwrap()]).unwrap();
        assert_eq!(VectorSegment::linear_combine(&[&phi, &psi], &[1.0, 0.0]).unwrap(), phi);
        let diff = VectorSegment::linear_combine(&[&phi, &phi], &[1.0, -1.0]).unwrap();
        assert_eq!(diff.norms().c1_norm, 0.0);
        let two = VectorSegment::linear_combine(&[&phi], &[2.0]).unwrap();
        for i in 0..100 {
            let t = -h * (i as f64 + 0.37) / 100.0;
            let a = two.eval(t).unwrap().0[0];
            let b = phi.eval(t).unwrap().0[0];
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
        let other = VectorSegment::zero(h, 8, 1);
        assert!(matches!(
            VectorSegment::linear_combine(&[&phi, &other], &[1.0, 1.0]),
            Err(Error::MeshMismatch)
        ));
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let phi = VectorSegment::new(vec![cosine(1.3, 11), ScalarSegment::from_fn(1.3, 11, |t| (3.0 * t).sin() / 7.0, |t| 3.0 * (3.0 * t).cos() / 7.0).unwrap()]).unwrap();
        let text = serde_json::to_string(&phi).unwrap();
        assert!(text.contains("\"N\":11"));
        let back: VectorSegment = serde_json::from_str(&text).unwrap();
        assert_eq!(back, phi);
    }
}
