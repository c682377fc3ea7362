//! Built-in scenarios.

use super::expr::var_names;
use super::{default_intervals, DeltaSpec, GSpec, LTerm, ModelSpec, QSpec, Region, VecFn};

pub const NAMES: [&str; 4] = ["echo", "lin2", "pair", "lin2box"];

pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "echo" => Some(echo()),
        "lin2" => Some(lin2()),
        "pair" => Some(pair()),
        "lin2box" => Some(lin2box()),
        _ => None,
    }
}

/// Mesh (intervals per segment) each built-in needs for its complement
/// fields to resolve the level bounds that occur on typical samples.
pub fn default_mesh(name: &str) -> Option<usize> {
    match name {
        "echo" => Some(2048),
        "lin2" => Some(512),
        "pair" => Some(8192),
        "lin2box" => Some(32768),
        _ => None,
    }
}

fn vecfn(sources: &[&str], prefix: &str, count: usize) -> VecFn {
    VecFn::from_exprs(sources, &var_names(prefix, count)).expect("built-in expression parses")
}

/// `x'(t) = -x(t + r)`, `0 = 1 + x(t + r)^2 / 2 + r`, `h = 2`, `W = (-1, 1)`.
pub fn echo() -> ModelSpec {
    let h = 2.0;
    let (i, j) = default_intervals(h);
    ModelSpec {
        name: "echo".into(),
        h,
        n: 1,
        k: 1,
        i,
        j,
        g: GSpec { f: vecfn(&["-v1"], "v", 1), v: Region::All },
        q: QSpec::CoordSelect { nu: vec![0], kappa: vec![0] },
        delta: DeltaSpec::Offset { d: vecfn(&["1 + w1^2/2"], "w", 1) },
        w: Region::single_box(vec![-1.0], vec![1.0]),
    }
}

/// `x'(t) = -x(t + r)`, `r = -(1 + tanh x(t - 1/2)) / 2`, `h = 1`.
pub fn lin2() -> ModelSpec {
    let h = 1.0;
    let (i, j) = default_intervals(h);
    ModelSpec {
        name: "lin2".into(),
        h,
        n: 1,
        k: 1,
        i,
        j,
        g: GSpec { f: vecfn(&["-v1"], "v", 1), v: Region::All },
        q: QSpec::ConstantL {
            dim: 1,
            terms: vec![LTerm { row: 0, component: 0, t: -0.5, weight: 1.0 }],
        },
        delta: DeltaSpec::Offset { d: vecfn(&["(1 + tanh(w1))/2"], "w", 1) },
        w: Region::All,
    }
}

/// Two components, two delays: `r_1` is driven by `x_1(t + r_1)` and `r_2`
/// by `x_2(t + r_2)`.
pub fn pair() -> ModelSpec {
    let h = 1.0;
    let (i, j) = default_intervals(h);
    ModelSpec {
        name: "pair".into(),
        h,
        n: 2,
        k: 2,
        i,
        j,
        g: GSpec { f: vecfn(&["-v1 + 0.1*v4", "-v2"], "v", 4), v: Region::All },
        q: QSpec::CoordSelect { nu: vec![0, 1], kappa: vec![0, 1] },
        delta: DeltaSpec::Offset {
            d: vecfn(&["0.6 + 0.1*tanh(w1)", "0.7 + 0.1*tanh(w2)"], "w", 2),
        },
        w: Region::All,
    }
}

/// `lin2` restricted to `V = (-3, 3)`.
pub fn lin2box() -> ModelSpec {
    ModelSpec {
        name: "lin2box".into(),
        g: GSpec { f: vecfn(&["-v1"], "v", 1), v: Region::single_box(vec![-3.0], vec![3.0]) },
        ..lin2()
    }
}
