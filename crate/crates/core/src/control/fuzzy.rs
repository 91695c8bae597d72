//! Mamdani inference over triangular membership functions.
//!
//! Rule strength is the min over antecedent memberships; each consequent set
//! is clipped at that strength and the clipped sets are combined by max. The
//! crisp output is the centroid of the aggregate, integrated exactly: the
//! aggregate is piecewise linear, so it is split at every vertex, clip point
//! and crossing and each linear piece contributes closed-form area and moment.
//!
//! Rule base files are JSON:
//!
//! ```json
//! {
//!   "inputs":  [{"name": "humidity", "universe": [0, 100],
//!                "terms": [{"name": "low", "points": [0, 0, 50]}]}],
//!   "outputs": [{"name": "irrigation", "universe": [0, 1], "terms": []}],
//!   "rules":   [{"if": [["humidity", "low"]], "then": ["irrigation", "increase"]}]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ControlError;

/// Triangle with feet `points[0]`, `points[2]` and peak `points[1]`.
/// Equal foot and peak gives a shoulder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Triangle {
    pub points: [f64; 3],
}

impl Triangle {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { points: [a, b, c] }
    }

    pub fn membership(&self, x: f64) -> f64 {
        let [a, b, c] = self.points;
        if x == b {
            1.0
        } else if x <= a || x >= c {
            0.0
        } else if x < b {
            (x - a) / (b - a)
        } else {
            (c - x) / (c - b)
        }
    }

    /// Area-weighted mean of the full triangle.
    pub fn centroid(&self) -> f64 {
        self.points.iter().sum::<f64>() / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub name: String,
    pub points: Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variable {
    pub name: String,
    pub universe: (f64, f64),
    pub terms: Vec<Term>,
}

impl Variable {
    pub fn term(&self, name: &str) -> Option<&Triangle> {
        self.terms
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.points)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.universe.0 + self.universe.1)
    }

    fn sorted_vertices(&self) -> Vec<f64> {
        let (lo, hi) = self.universe;
        let mut v: Vec<f64> = self
            .terms
            .iter()
            .flat_map(|t| t.points.points)
            .chain([lo, hi])
            .filter(|x| (lo..=hi).contains(x))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn max_membership(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.points.membership(x))
            .fold(0.0, f64::max)
    }

    /// First universe point with zero membership in every term.
    ///
    /// Memberships are linear between consecutive vertices, so checking
    /// vertices and the midpoints between them is exhaustive.
    pub fn coverage_gap(&self) -> Option<f64> {
        let v = self.sorted_vertices();
        let mids = v.windows(2).map(|w| 0.5 * (w[0] + w[1]));
        v.iter()
            .copied()
            .chain(mids)
            .find(|&x| self.max_membership(x) <= 0.0)
    }

    /// Point between the peaks of `left` and `right` where their
    /// memberships are equal.
    pub fn crossover(&self, left: &str, right: &str) -> Result<f64, ControlError> {
        let missing = |t: &str| ControlError::UnknownTerm {
            variable: self.name.clone(),
            term: t.to_string(),
        };
        let l = self.term(left).ok_or_else(|| missing(left))?;
        let r = self.term(right).ok_or_else(|| missing(right))?;
        let (mut lo, mut hi) = (l.points[1], r.points[1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if l.membership(mid) > r.membership(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(rename = "if")]
    pub antecedents: Vec<(String, String)>,
    #[serde(rename = "then")]
    pub consequent: (String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzyRuleBase {
    pub inputs: Vec<Variable>,
    pub outputs: Vec<Variable>,
    pub rules: Vec<Rule>,
}

impl FuzzyRuleBase {
    pub fn input(&self, name: &str) -> Option<&Variable> {
        self.inputs.iter().find(|v| v.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&Variable> {
        self.outputs.iter().find(|v| v.name == name)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let mut seen = BTreeSet::new();
        for v in self.inputs.iter().chain(&self.outputs) {
            if !seen.insert(v.name.as_str()) {
                return Err(ControlError::invalid(
                    format!("fuzzy.{}", v.name),
                    "declared twice",
                ));
            }
            let (lo, hi) = v.universe;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ControlError::invalid(
                    format!("fuzzy.{}.universe", v.name),
                    "need finite lo < hi",
                ));
            }
            for t in &v.terms {
                let [a, b, c] = t.points.points;
                if !(a.is_finite() && c.is_finite() && a <= b && b <= c && a < c) {
                    return Err(ControlError::invalid(
                        format!("fuzzy.{}.{}", v.name, t.name),
                        "need finite a <= b <= c with a < c",
                    ));
                }
            }
            if let Some(x) = v.coverage_gap() {
                return Err(ControlError::invalid(
                    format!("fuzzy.{}", v.name),
                    format!("no term covers {x}"),
                ));
            }
        }
        for (i, r) in self.rules.iter().enumerate() {
            if r.antecedents.is_empty() {
                return Err(ControlError::invalid(
                    format!("fuzzy.rules[{i}]"),
                    "no antecedents",
                ));
            }
            for (var, term) in &r.antecedents {
                let v = self
                    .input(var)
                    .ok_or_else(|| ControlError::UnknownVariable(var.clone()))?;
                v.term(term).ok_or_else(|| ControlError::UnknownTerm {
                    variable: var.clone(),
                    term: term.clone(),
                })?;
            }
            let (var, term) = &r.consequent;
            let v = self
                .output(var)
                .ok_or_else(|| ControlError::UnknownVariable(var.clone()))?;
            v.term(term).ok_or_else(|| ControlError::UnknownTerm {
                variable: var.clone(),
                term: term.clone(),
            })?;
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, ControlError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ControlError::invalid(path.display().to_string(), e.to_string()))?;
        let rb: Self = serde_json::from_str(&text)
            .map_err(|e| ControlError::invalid(path.display().to_string(), e.to_string()))?;
        rb.validate()?;
        Ok(rb)
    }
}

fn var(name: &str, universe: (f64, f64), terms: [(&str, [f64; 3]); 3]) -> Variable {
    Variable {
        name: name.to_string(),
        universe,
        terms: terms
            .iter()
            .map(|(n, p)| Term {
                name: n.to_string(),
                points: Triangle { points: *p },
            })
            .collect(),
    }
}

/// Nine rules from temperature trend (°C/tick) and humidity (%RH) to an
/// irrigation command in [0, 1].
pub fn default_rule_base() -> FuzzyRuleBase {
    let table = [
        ("falling", "low", "hold"),
        ("falling", "medium", "decrease"),
        ("falling", "high", "decrease"),
        ("steady", "low", "increase"),
        ("steady", "medium", "hold"),
        ("steady", "high", "decrease"),
        ("rising", "low", "increase"),
        ("rising", "medium", "increase"),
        ("rising", "high", "hold"),
    ];
    FuzzyRuleBase {
        inputs: vec![
            var(
                "temp_trend",
                (-2.0, 2.0),
                [
                    ("falling", [-2.0, -2.0, 0.0]),
                    ("steady", [-1.0, 0.0, 1.0]),
                    ("rising", [0.0, 2.0, 2.0]),
                ],
            ),
            var(
                "humidity",
                (0.0, 100.0),
                [
                    ("low", [0.0, 0.0, 50.0]),
                    ("medium", [20.0, 50.0, 80.0]),
                    ("high", [50.0, 100.0, 100.0]),
                ],
            ),
        ],
        outputs: vec![var(
            "irrigation",
            (0.0, 1.0),
            [
                ("decrease", [0.0, 0.0, 0.5]),
                ("hold", [0.25, 0.5, 0.75]),
                ("increase", [0.5, 1.0, 1.0]),
            ],
        )],
        rules: table
            .iter()
            .map(|(t, h, o)| Rule {
                antecedents: vec![
                    ("temp_trend".into(), t.to_string()),
                    ("humidity".into(), h.to_string()),
                ],
                consequent: ("irrigation".into(), o.to_string()),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyOutput {
    pub values: BTreeMap<String, f64>,
    /// Outputs where no rule fired; these carry the universe midpoint.
    pub neutral: BTreeSet<String>,
}

/// Linear piece `f(x) = y0 + (y1 − y0)·(x − l)/(r − l)` over `[l, r]`.
fn piece_area_moment(l: f64, r: f64, y0: f64, y1: f64) -> (f64, f64) {
    let w = r - l;
    let area = 0.5 * (y0 + y1) * w;
    let moment = w / 6.0 * (y0 * (2.0 * l + r) + y1 * (l + 2.0 * r));
    (area, moment)
}

/// Exact centroid of `x ↦ max_k min(strength_k, set_k(x))` over `universe`.
fn clipped_centroid(universe: (f64, f64), clipped: &[(Triangle, f64)]) -> Option<f64> {
    let (lo, hi) = universe;
    let mut cuts: Vec<f64> = vec![lo, hi];
    for (t, s) in clipped {
        let [a, b, c] = t.points;
        cuts.extend([a, b, c]);
        if *s < 1.0 {
            // where each flank reaches the clip level
            cuts.push(a + s * (b - a));
            cuts.push(c - s * (c - b));
        }
    }
    cuts.retain(|x| (lo..=hi).contains(x));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let (mut area, mut moment) = (0.0, 0.0);
    for w in cuts.windows(2) {
        let (l, r) = (w[0], w[1]);
        // every clipped set is linear on the open interval; sample two
        // interior points and extend to the ends so shoulders that jump at a
        // vertex contribute their one-sided limits
        let (p, q) = (l + (r - l) / 3.0, l + 2.0 * (r - l) / 3.0);
        let mut left = Vec::with_capacity(clipped.len());
        let mut right = Vec::with_capacity(clipped.len());
        for (t, s) in clipped {
            let (fp, fq) = (t.membership(p).min(*s), t.membership(q).min(*s));
            left.push((2.0 * fp - fq).max(0.0));
            right.push((2.0 * fq - fp).max(0.0));
        }
        let mut knots = vec![l, r];
        for i in 0..left.len() {
            for j in i + 1..left.len() {
                let d0 = left[i] - left[j];
                let d1 = right[i] - right[j];
                if d0 * d1 < 0.0 {
                    knots.push(l + (r - l) * d0 / (d0 - d1));
                }
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let at = |x: f64| -> f64 {
            let f = (x - l) / (r - l);
            left.iter()
                .zip(&right)
                .map(|(a, b)| a + (b - a) * f)
                .fold(0.0, f64::max)
        };
        for k in knots.windows(2) {
            let (a, m) = piece_area_moment(k[0], k[1], at(k[0]), at(k[1]));
            area += a;
            moment += m;
        }
    }
    (area > 0.0).then(|| moment / area)
}

/// Crisp outputs for `inputs`. Inputs outside a universe are clamped;
/// missing inputs are an error.
pub fn fuzzy_eval(
    rb: &FuzzyRuleBase,
    inputs: &BTreeMap<String, f64>,
) -> Result<FuzzyOutput, ControlError> {
    let mut memberships: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for v in &rb.inputs {
        let x = *inputs
            .get(&v.name)
            .ok_or_else(|| ControlError::UnknownVariable(v.name.clone()))?;
        if x.is_nan() {
            return Err(ControlError::invalid(format!("input {}", v.name), "NaN"));
        }
        let x = x.clamp(v.universe.0, v.universe.1);
        for t in &v.terms {
            memberships.insert((&v.name, &t.name), t.points.membership(x));
        }
    }

    let mut out = FuzzyOutput {
        values: BTreeMap::new(),
        neutral: BTreeSet::new(),
    };
    for o in &rb.outputs {
        let mut clipped: Vec<(Triangle, f64)> = Vec::new();
        for r in rb.rules.iter().filter(|r| r.consequent.0 == o.name) {
            let mut strength = 1.0f64;
            for (v, t) in &r.antecedents {
                let mu = memberships.get(&(v.as_str(), t.as_str())).ok_or_else(|| {
                    ControlError::UnknownTerm {
                        variable: v.clone(),
                        term: t.clone(),
                    }
                })?;
                strength = strength.min(*mu);
            }
            if strength > 0.0 {
                let set = o
                    .term(&r.consequent.1)
                    .ok_or_else(|| ControlError::UnknownTerm {
                        variable: o.name.clone(),
                        term: r.consequent.1.clone(),
                    })?;
                clipped.push((*set, strength));
            }
        }
        match clipped_centroid(o.universe, &clipped) {
            Some(c) => {
                out.values
                    .insert(o.name.clone(), c.clamp(o.universe.0, o.universe.1));
            }
            None => {
                out.values.insert(o.name.clone(), o.midpoint());
                out.neutral.insert(o.name.clone());
            }
        }
    }
    Ok(out)
}
