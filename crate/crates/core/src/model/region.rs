//! Open subsets of `R^m`: the whole space or a finite union of open boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::Interval;

/// An open box given by one open interval per coordinate; infinite ends allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OpenBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| x > l && x < h)
    }

    /// Smallest gap from `v` to a face; negative when `v` is outside.
    pub fn face_margin(&self, v: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for (x, (l, h)) in v.iter().zip(self.lo.iter().zip(&self.hi)) {
            m = m.min(x - l).min(h - x);
        }
        m
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| match (l.is_finite(), h.is_finite()) {
                (true, true) => 0.5 * (l + h),
                (true, false) => l + 1.0,
                (false, true) => h - 1.0,
                (false, false) => 0.0,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    All,
    Boxes(Vec<OpenBox>),
}

impl Region {
    pub fn single_box(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region::Boxes(vec![OpenBox::new(lo, hi)])
    }

    pub fn validate(&self, dim: usize, what: &str) -> Result<()> {
        let Region::Boxes(boxes) = self else {
            return Ok(());
        };
        if boxes.is_empty() {
            return Err(Error::InvalidModel(format!("{what}: a box union needs at least one box")));
        }
        for (b, bx) in boxes.iter().enumerate() {
            if bx.lo.len() != dim || bx.hi.len() != dim {
                return Err(Error::InvalidModel(format!(
                    "{what}: box {} has dimension {}/{} but {dim} is required",
                    b + 1,
                    bx.lo.len(),
                    bx.hi.len()
                )));
            }
            for (i, (l, h)) in bx.lo.iter().zip(&bx.hi).enumerate() {
                if l.is_nan() || h.is_nan() || !(h > l) {
                    return Err(Error::InvalidModel(format!(
                        "{what}: box {} is empty in coordinate {} ({l} >= {h})",
                        b + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Boxes(bs) => bs.iter().any(|b| b.contains(v)),
        }
    }

    /// A lower bound for `dist(v, R^m \ region)`; exact for a single box and
    /// infinite for the whole space. Zero outside.
    pub fn dist_to_complement(&self, v: &[f64]) -> f64 {
        match self {
            Region::All => f64::INFINITY,
            Region::Boxes(bs) => bs.iter().map(|b| b.face_margin(v)).fold(0.0, f64::max),
        }
    }

    /// Moves `v` into the region: towards the box whose closure is nearest,
    /// stopping `margin` inside it.
    pub fn project_inside(&self, v: &[f64], margin: f64) -> Vec<f64> {
        match self {
            Region::All => v.to_vec(),
            Region::Boxes(bs) => {
                if self.contains(v) {
                    return v.to_vec();
                }
                let mut best: Option<(f64, Vec<f64>)> = None;
                for b in bs {
                    let p: Vec<f64> = v
                        .iter()
                        .zip(b.lo.iter().zip(&b.hi))
                        .map(|(&x, (&l, &h))| {
                            let m = margin.min(0.25 * (h - l));
                            x.clamp(l + m, h - m)
                        })
                        .collect();
                    let d = p.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, p));
                    }
                }
                best.map(|(_, p)| p).unwrap_or_else(|| v.to_vec())
            }
        }
    }

    fn boxes_or_all(&self, dim: usize) -> Vec<OpenBox> {
        match self {
            Region::All => vec![OpenBox::new(vec![f64::NEG_INFINITY; dim], vec![f64::INFINITY; dim])],
            Region::Boxes(bs) => bs.clone(),
        }
    }

    /// Member `q` of the exhaustion chain:
    /// `{v : face margin > 1/(q+3) in some box, |v|_inf < q+3}` as a list of
    /// per-box coordinate intervals (possibly empty ones).
    pub fn exhaustion(&self, dim: usize, q: usize) -> Vec<Vec<Interval>> {
        let m = 1.0 / (q as f64 + 3.0);
        let cap = q as f64 + 3.0;
        self.boxes_or_all(dim)
            .iter()
            .map(|b| {
                b.lo.iter()
                    .zip(&b.hi)
                    .map(|(&l, &h)| Interval::new((l + m).max(-cap), (h - m).min(cap)))
                    .collect()
            })
            .collect()
    }
}

/// Membership in an exhaustion set given as per-box open intervals.
pub fn in_box_union(boxes: &[Vec<Interval>], v: &[f64]) -> bool {
    boxes
        .iter()
        .any(|b| b.iter().zip(v).all(|(iv, x)| iv.contains_open(*x)))
}

/// `s^2 (3 - 2s)` clamped to `[0, 1]`, with derivative.
fn smoothstep(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0)
    } else {
        (s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s))
    }
}

/// A C^1 bump equal to 1 on the closure of `inner` and 0 outside `outer`,
/// where both are box unions with matching box order and `inner ⊂⊂ outer`.
#[derive(Clone, Debug)]
pub struct Bump {
    inner: Vec<Vec<Interval>>,
    outer: Vec<Vec<Interval>>,
    /// Per coordinate, an upper bound for `max |∂_i a|`.
    pub slope_bounds: Vec<f64>,
}

impl Bump {
    pub fn new(inner: Vec<Vec<Interval>>, outer: Vec<Vec<Interval>>) -> Self {
        let dim = inner.first().map_or(0, |b| b.len());
        let mut slope_bounds = vec![0.0; dim];
        for (bi, bo) in inner.iter().zip(&outer) {
            if bo.iter().any(|iv| iv.is_empty()) {
                continue;
            }
            for (i, (a, b)) in bi.iter().zip(bo).enumerate() {
                let lo_gap = a.lo - b.lo;
                let hi_gap = b.hi - a.hi;
                let (lo_b, hi_b) = (1.5 / lo_gap, 1.5 / hi_gap);
                slope_bounds[i] += if a.lo < a.hi { lo_b.max(hi_b) } else { lo_b + hi_b };
            }
        }
        Self { inner, outer, slope_bounds }
    }

    fn box_factor(inner: &[Interval], outer: &[Interval], v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut fac = Vec::with_capacity(v.len());
        let mut dfac = Vec::with_capacity(v.len());
        for ((a, b), &x) in inner.iter().zip(outer).zip(v) {
            if !b.contains_open(x) {
                if let Some(g) = grad {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
                return 0.0;
            }
            let (l, dl) = smoothstep((x - b.lo) / (a.lo - b.lo));
            let (u, du) = smoothstep((b.hi - x) / (b.hi - a.hi));
            fac.push(l * u);
            dfac.push(dl / (a.lo - b.lo) * u - l * du / (b.hi - a.hi));
        }
        let prod: f64 = fac.iter().product();
        if let Some(g) = grad {
            for i in 0..v.len() {
                let others: f64 = fac.iter().enumerate().filter(|(m, _)| *m != i).map(|(_, f)| f).product();
                g[i] = dfac[i] * others;
            }
        }
        prod
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let mut miss = 1.0;
        for (bi, bo) in self.inner.iter().zip(&self.outer) {
            miss *= 1.0 - Self::box_factor(bi, bo, v, None);
        }
        1.0 - miss
    }

    /// Value and gradient.
    pub fn eval_grad(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let nb = self.inner.len();
        let dim = v.len();
        let mut vals = Vec::with_capacity(nb);
        let mut grads = Vec::with_capacity(nb);
        for (bi, bo) in self.inner.iter().zip(&self.outer) {
            let mut g = vec![0.0; dim];
            vals.push(Self::box_factor(bi, bo, v, Some(&mut g)));
            grads.push(g);
        }
        let miss: f64 = vals.iter().map(|a| 1.0 - a).product();
        let mut grad = vec![0.0; dim];
        for b in 0..nb {
            let others: f64 = (0..nb).filter(|&c| c != b).map(|c| 1.0 - vals[c]).product();
            for i in 0..dim {
                grad[i] += grads[b][i] * others;
            }
        }
        (1.0 - miss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_distance_and_membership() {
        let r = Region::single_box(vec![-1.0], vec![1.0]);
        assert!(r.contains(&[0.9]));
        assert!(!r.contains(&[1.0]));
        assert!((r.dist_to_complement(&[0.9]) - 0.1).abs() < 1e-15);
        assert_eq!(Region::All.dist_to_complement(&[5.0]), f64::INFINITY);
        assert_eq!(r.dist_to_complement(&[3.0]), 0.0);
    }

    #[test]
    fn projection_lands_inside() {
        let r = Region::single_box(vec![-1.0, 0.0], vec![1.0, 2.0]);
        let p = r.project_inside(&[3.0, -1.0], 1e-9);
        assert!(r.contains(&p));
        assert!((p[0] - (1.0 - 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_empty_boxes() {
        let r = Region::single_box(vec![1.0], vec![1.0]);
        assert!(r.validate(1, "W").is_err());
        assert!(Region::Boxes(vec![]).validate(1, "W").is_err());
        assert!(Region::single_box(vec![0.0, 0.0], vec![1.0, 1.0]).validate(1, "W").is_err());
    }

    #[test]
    fn exhaustion_is_nested() {
        let r = Region::single_box(vec![-3.0], vec![3.0]);
        let s1 = r.exhaustion(1, 1);
        let s2 = r.exhaustion(1, 2);
        assert!((s1[0][0].lo - (-2.75)).abs() < 1e-15);
        assert!(s2[0][0].lo < s1[0][0].lo && s2[0][0].hi > s1[0][0].hi);
        let all = Region::All.exhaustion(2, 3);
        assert_eq!(all[0][1], Interval::new(-6.0, 6.0));
    }

    #[test]
    fn bump_values_and_gradient() {
        let r = Region::Boxes(vec![
            OpenBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]),
            OpenBox::new(vec![2.0, -1.0], vec![6.0, 1.0]),
        ]);
        let bump = Bump::new(r.exhaustion(2, 1), r.exhaustion(2, 2));
        assert_eq!(bump.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(bump.eval(&[2.9, 2.9]), 0.0);
        let h = 1e-6;
        for v in [[2.76, 0.1], [2.7, 2.78], [-2.78, -2.77], [2.79, 0.5]] {
            let (a, g) = bump.eval_grad(&v);
            assert!((0.0..=1.0).contains(&a));
            for i in 0..2 {
                let mut p = v;
                let mut m = v;
                p[i] += h;
                m[i] -= h;
                let fd = (bump.eval(&p) - bump.eval(&m)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-4 * (1.0 + g[i].abs()), "{fd} vs {}", g[i]);
                assert!(g[i].abs() <= bump.slope_bounds[i] + 1e-12);
            }
        }
    }
}
