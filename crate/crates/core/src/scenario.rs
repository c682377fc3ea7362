//! Scenario files: a model given by built-in name or inline JSON, plus the
//! numeric settings used by the commands.
//!
//! Indices in files (`nu`, `kappa`, `row`, `component`) are 1-based.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::documented_r_seed;
use crate::error::{Error, Result};
use crate::model::expr::var_names;
use crate::model::{builtin, default_intervals, DeltaSpec, GSpec, LTerm, ModelSpec, OpenBox, QSpec, Region, VecFn};
use crate::segment::Interval;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MESH: usize = 256;

/// Sample counts of the verification sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Samples {
    pub extension: usize,
    pub chi: usize,
    pub contraction: usize,
    pub inverse: usize,
    pub domain: usize,
    pub derivatives: usize,
    pub manifold: usize,
}

impl Default for Samples {
    fn default() -> Self {
        Self { extension: 1000, chi: 500, contraction: 200, inverse: 100, domain: 100, derivatives: 100, manifold: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "I", default, skip_serializing_if = "Option::is_none")]
    pub i: Option<[f64; 2]>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<GFile>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<RegionFile>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<QFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_seed: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Samples>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum GFile {
    /// Right-hand side of a built-in scenario.
    Builtin(String),
    /// One expression per component in `v1..v_{kn}`.
    Expr(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionFile {
    /// The string `"all"`.
    Tag(AllTag),
    Boxes { boxes: Vec<BoxFile> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllTag {
    All,
}

/// `null` stands for an infinite end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxFile {
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum QFile {
    ConstantL { dim: usize, terms: Vec<LTermFile> },
    CoordSelect { nu: Vec<usize>, kappa: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LTermFile {
    pub row: usize,
    pub component: usize,
    pub t: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaFile {
    /// `δ(r, w) = d(w) + r`, `d` in `w1..w_dim`.
    Offset {
        d: Vec<String>,
        #[serde(rename = "W", default = "region_all")]
        w: RegionFile,
    },
    /// `δ(r, w)` in `r1..r_k, w1..w_dim`.
    General {
        delta: Vec<String>,
        #[serde(rename = "W", default = "region_all")]
        w: RegionFile,
    },
}

fn region_all() -> RegionFile {
    RegionFile::Tag(AllTag::All)
}

/// A resolved scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: ModelSpec,
    pub mesh: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    /// Manifold membership tolerance.
    pub tol: f64,
    pub amplitude: f64,
    pub r_seed: Vec<f64>,
    pub samples: Samples,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidModel(format!("{field}: {msg}"))
}

fn region_from_file(r: &RegionFile, field: &str) -> Result<Region> {
    match r {
        RegionFile::Tag(AllTag::All) => Ok(Region::All),
        RegionFile::Boxes { boxes } => {
            let mut out = Vec::with_capacity(boxes.len());
            for (b, bx) in boxes.iter().enumerate() {
                if bx.lo.len() != bx.hi.len() {
                    return Err(field_err(&format!("{field}.boxes[{b}]"), "lo and hi differ in length"));
                }
                let lo = bx.lo.iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect();
                let hi = bx.hi.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
                out.push(OpenBox::new(lo, hi));
            }
            Ok(Region::Boxes(out))
        }
    }
}

fn region_to_file(r: &Region) -> RegionFile {
    match r {
        Region::All => region_all(),
        Region::Boxes(bs) => RegionFile::Boxes {
            boxes: bs
                .iter()
                .map(|b| BoxFile {
                    lo: b.lo.iter().map(|x| x.is_finite().then_some(*x)).collect(),
                    hi: b.hi.iter().map(|x| x.is_finite().then_some(*x)).collect(),
                })
                .collect(),
        },
    }
}

fn interval(x: Option<[f64; 2]>, default: Interval) -> Interval {
    x.map_or(default, |[lo, hi]| Interval::new(lo, hi))
}

fn exprs(src: &[String], vars: &[String], field: &str) -> Result<VecFn> {
    let refs: Vec<&str> = src.iter().map(String::as_str).collect();
    VecFn::from_exprs(&refs, vars).map_err(|e| field_err(field, e))
}

fn required<T: Clone>(x: &Option<T>, field: &str) -> Result<T> {
    x.clone().ok_or_else(|| field_err(field, "missing"))
}

fn index(x: usize, bound: usize, field: &str) -> Result<usize> {
    if x == 0 || x > bound {
        return Err(field_err(field, format!("index {x} must lie in 1..={bound}")));
    }
    Ok(x - 1)
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::InvalidModel(format!("scenario JSON, line {} column {}: {e}", e.line(), e.column()))
        })
    }

    fn model(&self) -> Result<ModelSpec> {
        if let Some(b) = &self.builtin {
            let base = builtin::by_name(b).ok_or_else(|| field_err("builtin", format!("unknown built-in '{b}'")))?;
            let model_fields = [
                self.h.is_some(),
                self.n.is_some(),
                self.k.is_some(),
                self.i.is_some(),
                self.j.is_some(),
                self.g.is_some(),
                self.v.is_some(),
                self.q.is_some(),
                self.delta.is_some(),
            ];
            if model_fields.iter().any(|x| *x) {
                return Err(field_err("builtin", "model fields cannot be combined with a built-in"));
            }
            return Ok(base);
        }
        let h = required(&self.h, "h")?;
        let n = required(&self.n, "n")?;
        let k = required(&self.k, "k")?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(field_err("h", format!("{h} must be positive")));
        }
        if n == 0 || k == 0 {
            return Err(field_err(if n == 0 { "n" } else { "k" }, "must be at least 1"));
        }
        let (di, dj) = default_intervals(h);
        let kn = k * n;
        let g_file = required(&self.g, "g")?;
        let v = region_from_file(self.v.as_ref().unwrap_or(&region_all()), "V")?;
        let f = match &g_file {
            GFile::Expr(src) => {
                if src.len() != n {
                    return Err(field_err("g.expr", format!("needs {n} expressions, got {}", src.len())));
                }
                exprs(src, &var_names("v", kn), "g.expr")?
            }
            GFile::Builtin(b) => {
                let base = builtin::by_name(b).ok_or_else(|| field_err("g.builtin", format!("unknown built-in '{b}'")))?;
                if base.n != n || base.k != k {
                    return Err(field_err("g.builtin", format!("'{b}' has n = {}, k = {}", base.n, base.k)));
                }
                base.g.f
            }
        };
        let q = match required(&self.q, "Q")? {
            QFile::ConstantL { dim, terms } => {
                let mut out = Vec::with_capacity(terms.len());
                for (p, t) in terms.iter().enumerate() {
                    out.push(LTerm {
                        row: index(t.row, dim, &format!("Q.terms[{p}].row"))?,
                        component: index(t.component, n, &format!("Q.terms[{p}].component"))?,
                        t: t.t,
                        weight: t.weight,
                    });
                }
                QSpec::ConstantL { dim, terms: out }
            }
            QFile::CoordSelect { nu, kappa } => {
                if nu.len() != kappa.len() {
                    return Err(field_err("Q", "nu and kappa differ in length"));
                }
                let nu = nu.iter().enumerate().map(|(p, &x)| index(x, n, &format!("Q.nu[{p}]"))).collect::<Result<_>>()?;
                let kappa =
                    kappa.iter().enumerate().map(|(p, &x)| index(x, k, &format!("Q.kappa[{p}]"))).collect::<Result<_>>()?;
                QSpec::CoordSelect { nu, kappa }
            }
        };
        let dim = q.dim();
        let (delta, w) = match required(&self.delta, "delta")? {
            DeltaFile::Offset { d, w } => {
                if d.len() != k {
                    return Err(field_err("delta.d", format!("needs {k} expressions, got {}", d.len())));
                }
                (DeltaSpec::Offset { d: exprs(&d, &var_names("w", dim), "delta.d")? }, region_from_file(&w, "delta.W")?)
            }
            DeltaFile::General { delta, w } => {
                if delta.len() != k {
                    return Err(field_err("delta.delta", format!("needs {k} expressions, got {}", delta.len())));
                }
                let mut vars = var_names("r", k);
                vars.extend(var_names("w", dim));
                (DeltaSpec::General { delta: exprs(&delta, &vars, "delta.delta")? }, region_from_file(&w, "delta.W")?)
            }
        };
        Ok(ModelSpec {
            name: self.name.clone(),
            h,
            n,
            k,
            i: interval(self.i, di),
            j: interval(self.j, dj),
            g: GSpec { f, v },
            q,
            delta,
            w,
        })
    }

    /// Inline description of `model`; fails for native maps and opaque `Q`.
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        let opaque = |what: &str| Error::InvalidModel(format!("{what} of '{}' has no JSON form", model.name));
        let g = GFile::Expr(model.g.f.sources().ok_or_else(|| opaque("g"))?);
        let q = match &model.q {
            QSpec::ConstantL { dim, terms } => QFile::ConstantL {
                dim: *dim,
                terms: terms
                    .iter()
                    .map(|t| LTermFile { row: t.row + 1, component: t.component + 1, t: t.t, weight: t.weight })
                    .collect(),
            },
            QSpec::CoordSelect { nu, kappa } => QFile::CoordSelect {
                nu: nu.iter().map(|x| x + 1).collect(),
                kappa: kappa.iter().map(|x| x + 1).collect(),
            },
            QSpec::User(_) => return Err(opaque("Q")),
        };
        let w = region_to_file(&model.w);
        let delta = match &model.delta {
            DeltaSpec::Offset { d } => DeltaFile::Offset { d: d.sources().ok_or_else(|| opaque("d"))?, w },
            DeltaSpec::General { delta } => DeltaFile::General { delta: delta.sources().ok_or_else(|| opaque("delta"))?, w },
        };
        Ok(Self {
            name: model.name.clone(),
            builtin: None,
            h: Some(model.h),
            n: Some(model.n),
            k: Some(model.k),
            i: Some([model.i.lo, model.i.hi]),
            j: Some([model.j.lo, model.j.hi]),
            g: Some(g),
            v: Some(region_to_file(&model.g.v)),
            q: Some(q),
            delta: Some(delta),
            mesh: None,
            seed: None,
            dt: None,
            t_end: None,
            tol: None,
            amplitude: None,
            r_seed: None,
            samples: None,
        })
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let model = self.model()?;
        model.validate()?;
        let mesh = self
            .mesh
            .or_else(|| self.builtin.as_deref().and_then(builtin::default_mesh))
            .or_else(|| builtin::default_mesh(&model.name).filter(|_| builtin::by_name(&model.name).is_some()))
            .unwrap_or(DEFAULT_MESH);
        let r_seed = self.r_seed.clone().unwrap_or_else(|| documented_r_seed(&model));
        if r_seed.len() != model.k {
            return Err(field_err("r_seed", format!("needs {} entries", model.k)));
        }
        let s = Scenario {
            mesh,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            dt: self.dt.unwrap_or(1e-3),
            t_end: self.t_end.unwrap_or(10.0),
            tol: self.tol.unwrap_or(1e-9),
            amplitude: self.amplitude.unwrap_or(0.3),
            r_seed,
            samples: self.samples.unwrap_or_default(),
            model,
        };
        s.check_settings()?;
        Ok(s)
    }
}

impl Scenario {
    pub fn builtin(name: &str) -> Result<Self> {
        ScenarioFile {
            builtin: Some(name.to_string()),
            ..ScenarioFile::from_json(&format!("{{\"name\": {}}}", serde_json::to_string(name)?))?
        }
        .resolve()
    }

    /// A built-in name or a path to a scenario file.
    pub fn load(arg: &str) -> Result<Self> {
        if builtin::by_name(arg).is_some() {
            return Self::builtin(arg);
        }
        let path = Path::new(arg);
        if !path.exists() {
            return Err(Error::Usage(format!(
                "scenario '{arg}' is neither a built-in ({}) nor an existing file",
                builtin::NAMES.join(", ")
            )));
        }
        ScenarioFile::from_json(&std::fs::read_to_string(path)?)?.resolve()
    }

    pub fn check_settings(&self) -> Result<()> {
        if self.mesh < 2 {
            return Err(field_err("mesh", "needs at least 2 intervals"));
        }
        for (name, x) in [("dt", self.dt), ("t_end", self.t_end), ("tol", self.tol)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(field_err(name, format!("{x} must be positive")));
            }
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(field_err("amplitude", "must be non-negative"));
        }
        Ok(())
    }

    /// Sorted-key JSON of the model and settings (seed excluded), the input of the scenario hash.
    pub fn canonical_json(&self) -> String {
        let mut file = ScenarioFile::from_model(&self.model).unwrap_or_else(|_| ScenarioFile {
            name: self.model.name.clone(),
            builtin: Some("<native>".into()),
            h: Some(self.model.h),
            n: Some(self.model.n),
            k: Some(self.model.k),
            i: None,
            j: None,
            g: None,
            v: None,
            q: None,
            delta: None,
            mesh: None,
            seed: None,
            dt: None,
            t_end: None,
            tol: None,
            amplitude: None,
            r_seed: None,
            samples: None,
        });
        file.mesh = Some(self.mesh);
        file.dt = Some(self.dt);
        file.t_end = Some(self.t_end);
        file.tol = Some(self.tol);
        file.amplitude = Some(self.amplitude);
        file.r_seed = Some(self.r_seed.clone());
        file.samples = Some(self.samples);
        let value = serde_json::to_value(&file).expect("scenario serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn settings_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mesh": self.mesh,
            "seed": self.seed,
            "dt": self.dt,
            "t_end": self.t_end,
            "tol": self.tol,
            "amplitude": self.amplitude,
            "r_seed": self.r_seed,
            "samples": self.samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve_with_their_meshes() {
        for name in builtin::NAMES {
            let s = Scenario::load(name).unwrap();
            assert_eq!(s.mesh, builtin::default_mesh(name).unwrap());
            assert_eq!(s.seed, DEFAULT_SEED);
        }
    }

    #[test]
    fn inline_form_round_trips() {
        for name in builtin::NAMES {
            let s = Scenario::load(name).unwrap();
            let file = ScenarioFile::from_model(&s.model).unwrap();
            let text = serde_json::to_string_pretty(&file).unwrap();
            let back = ScenarioFile::from_json(&text).unwrap().resolve().unwrap();
            assert_eq!(back.canonical_json(), s.canonical_json());
        }
    }

    #[test]
    fn inline_scenario() {
        let text = r#"{
            "name": "custom",
            "h": 1.0, "n": 1, "k": 1,
            "g": {"expr": ["-0.5*v1"]},
            "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]},
            "delta": {"variant": "offset", "d": ["0.5 + 0.1*w1^2"], "W": {"boxes": [{"lo": [-2], "hi": [2]}]}}
        }"#;
        let s = ScenarioFile::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(s.mesh, DEFAULT_MESH);
        assert_eq!(s.r_seed, vec![-0.5]);
        assert_eq!(s.model.w, Region::single_box(vec![-2.0], vec![2.0]));
    }

    #[test]
    fn empty_w_box_is_rejected() {
        let text = r#"{
            "name": "broken",
            "h": 1.0, "n": 1, "k": 1,
            "g": {"expr": ["-v1"]},
            "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]},
            "delta": {"variant": "offset", "d": ["0.5"], "W": {"boxes": [{"lo": [1], "hi": [1]}]}}
        }"#;
        let err = ScenarioFile::from_json(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("W: box 1 is empty"), "{err}");
    }

    #[test]
    fn diagnostics_name_the_field() {
        let text = r#"{"name": "x", "h": 1.0, "n": 1, "k": 1, "g": {"expr": ["-v2"]},
            "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]},
            "delta": {"variant": "offset", "d": ["0.5"]}}"#;
        let err = ScenarioFile::from_json(text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.starts_with("invalid model: g.expr:"), "{err}");

        let err = ScenarioFile::from_json("{\"name\": \"x\",\n \"hh\": 1}").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        let text = r#"{"name": "x", "h": 1.0, "n": 1, "k": 1, "g": {"expr": ["-v1"]},
            "Q": {"variant": "coord_select", "nu": [2], "kappa": [1]},
            "delta": {"variant": "offset", "d": ["0.5"]}}"#;
        let err = ScenarioFile::from_json(text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("Q.nu[0]"), "{err}");
    }

    #[test]
    fn unknown_scenario_is_a_usage_error() {
        assert!(matches!(Scenario::load("no-such-scenario"), Err(Error::Usage(_))));
    }
}
