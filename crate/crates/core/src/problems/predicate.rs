use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::Dataset;
use crate::problems::{OutputKind, Problem, ProblemOutput};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    #[inline]
    pub fn holds<T: Real>(self, value: T, level: T) -> bool {
        match self {
            Comparator::Ge => value >= level,
            Comparator::Gt => value > level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolOp {
    And,
    Or,
    Xor,
}

impl BoolOp {
    #[inline]
    pub fn apply(self, a: bool, b: bool) -> bool {
        match self {
            BoolOp::And => a && b,
            BoolOp::Or => a || b,
            BoolOp::Xor => a ^ b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "leaf", rename_all = "snake_case", bound = "T: Real")]
pub enum Leaf<T> {
    /// `x[attr] cmp level`
    Count { attr: String, level: T, cmp: Comparator },
    /// `x[num] / x[den] cmp level`; a non-positive denominator evaluates
    /// false and flags the entity as degenerate.
    Ratio {
        num: String,
        den: String,
        level: T,
        cmp: Comparator,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        proportion: bool,
    },
}

/// Boolean decision rule over threshold leaves.
///
/// Canonical JSON: `{"op":"and","l":…,"r":…}` for nodes and
/// `{"leaf":"ratio","num":"x_sp","den":"x_s","level":0.05,"cmp":">"}` for leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "T: Real")]
pub enum Predicate<T> {
    Node {
        op: BoolOp,
        l: Box<Predicate<T>>,
        r: Box<Predicate<T>>,
    },
    Leaf(Leaf<T>),
}

impl<T: Real> Predicate<T> {
    pub fn count(attr: impl Into<String>, cmp: Comparator, level: T) -> Self {
        Predicate::Leaf(Leaf::Count {
            attr: attr.into(),
            level,
            cmp,
        })
    }

    pub fn ratio(num: impl Into<String>, den: impl Into<String>, cmp: Comparator, level: T) -> Self {
        Predicate::Leaf(Leaf::Ratio {
            num: num.into(),
            den: den.into(),
            level,
            cmp,
            proportion: false,
        })
    }

    /// Ratio leaf whose level is a proportion in `[0, 1]`.
    pub fn proportion(num: impl Into<String>, den: impl Into<String>, cmp: Comparator, level: T) -> Self {
        Predicate::Leaf(Leaf::Ratio {
            num: num.into(),
            den: den.into(),
            level,
            cmp,
            proportion: true,
        })
    }

    pub fn node(op: BoolOp, l: Self, r: Self) -> Self {
        Predicate::Node {
            op,
            l: Box::new(l),
            r: Box::new(r),
        }
    }

    pub fn and(l: Self, r: Self) -> Self {
        Self::node(BoolOp::And, l, r)
    }

    pub fn or(l: Self, r: Self) -> Self {
        Self::node(BoolOp::Or, l, r)
    }

    pub fn xor(l: Self, r: Self) -> Self {
        Self::node(BoolOp::Xor, l, r)
    }

    /// Minority-language ballot assistance over attributes `x_s`, `x_sp`, `x_spe`:
    /// `(x_sp/x_s > 0.05 ∨ x_sp > 10⁴) ∧ x_spe/x_sp > 0.0131`.
    pub fn minority_language() -> Self {
        Self::and(
            Self::or(
                Self::proportion("x_sp", "x_s", Comparator::Gt, T::of(0.05)),
                Self::count("x_sp", Comparator::Gt, T::of(1e4)),
            ),
            Self::proportion("x_spe", "x_sp", Comparator::Gt, T::of(0.0131)),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("predicates always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| invalid(format!("predicate JSON: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Predicate::Node { l, r, .. } => {
                l.validate()?;
                r.validate()
            }
            Predicate::Leaf(Leaf::Count { level, .. }) => check_level(*level, false),
            Predicate::Leaf(Leaf::Ratio { level, proportion, .. }) => check_level(*level, *proportion),
        }
    }

    /// Resolves attribute names to column indices.
    pub fn compile(&self, attribute_names: &[String]) -> Result<CompiledPredicate<T>> {
        self.validate()?;
        let idx = |name: &str| {
            attribute_names
                .iter()
                .position(|a| a == name)
                .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
        };
        Ok(match self {
            Predicate::Node { op, l, r } => CompiledPredicate::Node {
                op: *op,
                l: Box::new(l.compile(attribute_names)?),
                r: Box::new(r.compile(attribute_names)?),
            },
            Predicate::Leaf(Leaf::Count { attr, level, cmp }) => CompiledPredicate::Count {
                attr: idx(attr)?,
                level: *level,
                cmp: *cmp,
            },
            Predicate::Leaf(Leaf::Ratio {
                num, den, level, cmp, ..
            }) => CompiledPredicate::Ratio {
                num: idx(num)?,
                den: idx(den)?,
                level: *level,
                cmp: *cmp,
            },
        })
    }

    /// Evaluates the rule for entity `i`; returns `(decision, degenerate)`.
    pub fn eval_predicate(&self, data: &Dataset<T>, i: usize) -> Result<(bool, bool)> {
        if i >= data.n() {
            return Err(invalid(format!("entity {i} out of range")));
        }
        Ok(self.compile(data.attribute_names())?.eval_row(data.row(i)))
    }
}

fn check_level<T: Real>(level: T, proportion: bool) -> Result<()> {
    if !level.is_finite() {
        return Err(invalid(format!("threshold level must be finite, got {level}")));
    }
    if proportion && (level < T::zero() || level > T::one()) {
        return Err(invalid(format!("proportion level must lie in [0, 1], got {level}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompiledPredicate<T> {
    Node {
        op: BoolOp,
        l: Box<CompiledPredicate<T>>,
        r: Box<CompiledPredicate<T>>,
    },
    Count {
        attr: usize,
        level: T,
        cmp: Comparator,
    },
    Ratio {
        num: usize,
        den: usize,
        level: T,
        cmp: Comparator,
    },
}

impl<T: Real> CompiledPredicate<T> {
    /// `(decision, degenerate)` for one dataset row.
    pub fn eval_row(&self, row: &[T]) -> (bool, bool) {
        match self {
            CompiledPredicate::Node { op, l, r } => {
                let (a, da) = l.eval_row(row);
                let (b, db) = r.eval_row(row);
                (op.apply(a, b), da || db)
            }
            CompiledPredicate::Count { attr, level, cmp } => (cmp.holds(row[*attr], *level), false),
            CompiledPredicate::Ratio { num, den, level, cmp } => {
                let d = row[*den];
                if d <= T::zero() {
                    (false, true)
                } else {
                    (cmp.holds(row[*num] / d, *level), false)
                }
            }
        }
    }
}

/// A predicate bound to a dataset schema, usable as a [`Problem`].
#[derive(Debug, Clone)]
pub struct DecisionRule<T> {
    predicate: Predicate<T>,
    attributes: Vec<String>,
    compiled: CompiledPredicate<T>,
}

impl<T: Real> DecisionRule<T> {
    pub fn new(predicate: Predicate<T>, attribute_names: &[String]) -> Result<Self> {
        let compiled = predicate.compile(attribute_names)?;
        Ok(Self {
            predicate,
            attributes: attribute_names.to_vec(),
            compiled,
        })
    }

    pub fn predicate(&self) -> &Predicate<T> {
        &self.predicate
    }

    pub fn compiled(&self) -> &CompiledPredicate<T> {
        &self.compiled
    }

    fn check_schema(&self, data: &Dataset<T>) -> Result<()> {
        if data.attribute_names() != self.attributes.as_slice() {
            return Err(Error::Shape(
                "dataset attributes differ from the schema the rule was compiled for".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Real> Problem<T> for DecisionRule<T> {
    fn kind(&self) -> OutputKind {
        OutputKind::Decision
    }

    fn evaluate_into(&self, data: &Dataset<T>, out: &mut [T]) -> Result<()> {
        self.check_schema(data)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = if self.compiled.eval_row(data.row(i)).0 {
                T::one()
            } else {
                T::zero()
            };
        }
        Ok(())
    }

    fn evaluate(&self, data: &Dataset<T>) -> Result<ProblemOutput<T>> {
        self.check_schema(data)?;
        let (values, degenerate) = (0..data.n())
            .map(|i| {
                let (v, d) = self.compiled.eval_row(data.row(i));
                (if v { T::one() } else { T::zero() }, d)
            })
            .unzip();
        Ok(ProblemOutput {
            kind: OutputKind::Decision,
            values,
            degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn county(x_s: f64, x_sp: f64, x_spe: f64) -> Dataset<f64> {
        Dataset::raw(
            vec!["c".into()],
            vec!["x_s".into(), "x_sp".into(), "x_spe".into()],
            vec![x_s, x_sp, x_spe],
        )
        .unwrap()
    }

    #[test]
    fn ratio_leaf_at_exact_threshold_is_false_under_strict_comparator() {
        let leaf = Predicate::proportion("x_sp", "x_s", Comparator::Gt, 0.05);
        // Loving county: 4/80 = 0.05
        assert_eq!(leaf.eval_predicate(&county(80.0, 4.0, 1.0), 0).unwrap(), (false, false));
        // Union county: 160/3305 = 0.0484
        assert_eq!(
            leaf.eval_predicate(&county(3305.0, 160.0, 1.0), 0).unwrap(),
            (false, false)
        );
        let ge = Predicate::proportion("x_sp", "x_s", Comparator::Ge, 0.05);
        assert_eq!(ge.eval_predicate(&county(80.0, 4.0, 1.0), 0).unwrap(), (true, false));
    }

    #[test]
    fn count_leaf() {
        let leaf = Predicate::count("x_sp", Comparator::Gt, 1e4);
        assert!(leaf.eval_predicate(&county(20000.0, 10001.0, 0.0), 0).unwrap().0);
        assert!(!leaf.eval_predicate(&county(20000.0, 10000.0, 0.0), 0).unwrap().0);
    }

    #[test]
    fn non_positive_denominator_is_false_and_flagged() {
        let leaf = Predicate::ratio("x_spe", "x_sp", Comparator::Gt, -1.0);
        let d = county(10.0, 0.0, 3.0);
        assert_eq!(leaf.eval_predicate(&d, 0).unwrap(), (false, true));
        let released = d.with_released_values(vec![10.0, -2.0, 3.0]).unwrap();
        let rule = DecisionRule::new(Predicate::minority_language(), released.attribute_names()).unwrap();
        let out = rule.evaluate(&released).unwrap();
        assert_eq!(out.values, vec![0.0]);
        assert_eq!(out.degenerate, vec![true]);
    }

    #[test]
    fn operators_follow_truth_tables() {
        // leaves reading two 0/1 attributes reproduce all four combinations
        let a = Predicate::count("a", Comparator::Ge, 0.5);
        let b = Predicate::count("b", Comparator::Ge, 0.5);
        for op in [BoolOp::And, BoolOp::Or, BoolOp::Xor] {
            let p = Predicate::node(op, a.clone(), b.clone());
            for (va, vb) in [(false, false), (false, true), (true, false), (true, true)] {
                let d = Dataset::raw(
                    vec!["e".into()],
                    vec!["a".into(), "b".into()],
                    vec![va as u8 as f64, vb as u8 as f64],
                )
                .unwrap();
                let expected = match op {
                    BoolOp::And => va && vb,
                    BoolOp::Or => va || vb,
                    BoolOp::Xor => va != vb,
                };
                assert_eq!(p.eval_predicate(&d, 0).unwrap().0, expected, "{op:?} {va} {vb}");
            }
        }
    }

    #[test]
    fn canonical_json_shape() {
        let p: Predicate<f64> = Predicate::and(
            Predicate::ratio("x_sp", "x_s", Comparator::Gt, 0.05),
            Predicate::count("x_sp", Comparator::Ge, 10000.0),
        );
        let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "op": "and",
                "l": {"leaf": "ratio", "num": "x_sp", "den": "x_s", "level": 0.05, "cmp": ">"},
                "r": {"leaf": "count", "attr": "x_sp", "level": 10000.0, "cmp": ">="}
            })
        );
        assert_eq!(Predicate::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn validation_rejects_bad_levels_and_attributes() {
        let bad = r#"{"leaf":"ratio","num":"a","den":"b","level":1.5,"cmp":">","proportion":true}"#;
        assert!(Predicate::<f64>::from_json(bad).is_err());
        let unknown = Predicate::count("zz", Comparator::Gt, 1.0);
        assert!(matches!(
            unknown.compile(&["x".to_string()]),
            Err(Error::UnknownAttribute(_))
        ));
        assert!(Predicate::<f64>::from_json(r#"{"op":"nand","l":1}"#).is_err());
    }
}
