//! Attribute domains, rule semantics and the rule-set admissibility checks.
//!
//! A rule relates the three values an attribute takes along one row of a
//! problem. Rules are attribute-local: a [`RuleVector`] assigns one rule to
//! each attribute and every row obeys it independently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Attribute values are 1-based.
pub type Value = u32;

/// Values an attribute takes along one row.
pub type Triple = [Value; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeDomain {
    cardinality: Value,
}

impl AttributeDomain {
    /// Cardinalities used by the shipped profiles.
    pub const SUPPORTED: [Value; 5] = [10, 20, 30, 40, 80];

    pub fn new(cardinality: Value) -> Result<Self, RuleError> {
        if cardinality < 2 {
            return Err(RuleError::Cardinality(cardinality));
        }
        Ok(Self { cardinality })
    }

    pub fn cardinality(&self) -> Value {
        self.cardinality
    }

    pub fn contains(&self, v: i64) -> bool {
        v >= 1 && v <= self.cardinality as i64
    }

    pub fn values(&self) -> impl Iterator<Item = Value> {
        1..=self.cardinality
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RuleError {
    #[error("attribute cardinality must be at least 2, got {0}")]
    Cardinality(Value),
    #[error("unknown rule name `{0}`")]
    UnknownRule(String),
    #[error("rule `{rule}` is not part of rule set `{set}`")]
    NotInSet { rule: Rule, set: String },
    #[error("rule set `{0}` contains a rule twice")]
    DuplicateRule(String),
}

/// A row rule over one attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Constant,
    Progression(i32),
    Add,
    Minus,
    Min,
    Max,
    /// c = 2a
    DoubleFirst,
    /// c = 2b
    DoubleSecond,
}

impl Rule {
    pub fn satisfies(self, [a, b, c]: Triple) -> bool {
        let (a, b, c) = (a as i64, b as i64, c as i64);
        match self {
            Rule::Constant => a == b && b == c,
            Rule::Progression(k) => b == a + k as i64 && c == b + k as i64,
            Rule::Add => c == a + b,
            Rule::Minus => c == a - b,
            Rule::Min => c == a.min(b),
            Rule::Max => c == a.max(b),
            Rule::DoubleFirst => c == 2 * a,
            Rule::DoubleSecond => c == 2 * b,
        }
    }

    /// The unique in-domain third value completing `prefix` under this rule.
    pub fn complete_third(self, [a, b]: [Value; 2], domain: AttributeDomain) -> Option<Value> {
        let (a, b) = (a as i64, b as i64);
        let c = match self {
            Rule::Constant => (a == b).then_some(a)?,
            Rule::Progression(k) => (b - a == k as i64).then_some(b + k as i64)?,
            Rule::Add => a + b,
            Rule::Minus => a - b,
            Rule::Min => a.min(b),
            Rule::Max => a.max(b),
            Rule::DoubleFirst => 2 * a,
            Rule::DoubleSecond => 2 * b,
        };
        domain.contains(c).then_some(c as Value)
    }

    pub fn prefix_consistent(self, prefix: [Value; 2], domain: AttributeDomain) -> bool {
        self.complete_third(prefix, domain).is_some()
    }

    /// Canonical display name, e.g. `progression_2` or `varprogression_-1`.
    pub fn name(self) -> String {
        self.to_string()
    }

    fn kind_str(self) -> &'static str {
        match self {
            Rule::Constant => "constant",
            Rule::Progression(_) => "progression",
            Rule::Add => "add",
            Rule::Minus => "minus",
            Rule::Min => "min",
            Rule::Max => "max",
            Rule::DoubleFirst => "double_first",
            Rule::DoubleSecond => "double_second",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Progression(k) if *k < 0 => write!(f, "varprogression_{k}"),
            Rule::Progression(k) => write!(f, "progression_{k}"),
            other => f.write_str(other.kind_str()),
        }
    }
}

impl FromStr for Rule {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let simple = match s {
            "constant" => Some(Rule::Constant),
            "add" => Some(Rule::Add),
            "minus" => Some(Rule::Minus),
            "min" => Some(Rule::Min),
            "max" => Some(Rule::Max),
            "double_first" => Some(Rule::DoubleFirst),
            "double_second" => Some(Rule::DoubleSecond),
            _ => None,
        };
        if let Some(rule) = simple {
            return Ok(rule);
        }
        let step = s
            .strip_prefix("varprogression_")
            .or_else(|| s.strip_prefix("progression_"))
            .and_then(|k| k.parse::<i32>().ok())
            .filter(|k| *k != 0);
        step.map(Rule::Progression)
            .ok_or_else(|| RuleError::UnknownRule(s.to_string()))
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One rule per attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleVector(pub Vec<Rule>);

impl RuleVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.0
    }
}

impl fmt::Display for RuleVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str(")")
    }
}

/// One symbolic panel: a value per attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Panel(pub Vec<Value>);

impl Panel {
    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn in_domain(&self, domain: AttributeDomain) -> bool {
        self.0.iter().all(|&v| domain.contains(v as i64))
    }
}

/// The single rule in `rules` satisfied by `triple`, if exactly one is.
pub fn unique_match(triple: Triple, rules: &[Rule]) -> Option<Rule> {
    let mut found = None;
    for &r in rules {
        if r.satisfies(triple) {
            if found.is_some() {
                return None;
            }
            found = Some(r);
        }
    }
    found
}

/// A rule registry: the ordered rules of a game configuration plus the
/// structural containments it tolerates.
///
/// A containment `(inner, outer)` means every triple of `inner` also satisfies
/// `outer` (constant rows satisfy min and max). When `inner` matches a triple,
/// matches of `outer` on the same triple are not counted against uniqueness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub name: String,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub containment_exceptions: Vec<(Rule, Rule)>,
}

impl RuleSet {
    pub fn new(
        name: impl Into<String>,
        rules: Vec<Rule>,
        containment_exceptions: Vec<(Rule, Rule)>,
    ) -> Result<Self, RuleError> {
        let name = name.into();
        for (i, r) in rules.iter().enumerate() {
            if rules[..i].contains(r) {
                return Err(RuleError::DuplicateRule(name));
            }
        }
        for &(inner, outer) in &containment_exceptions {
            for r in [inner, outer] {
                if !rules.contains(&r) {
                    return Err(RuleError::NotInSet { rule: r, set: name });
                }
            }
        }
        Ok(Self {
            name,
            rules,
            containment_exceptions,
        })
    }

    /// The eight joint-training rules, numbered 1..=8 in this order.
    pub fn joint() -> Self {
        Self {
            name: "joint".into(),
            rules: vec![
                Rule::Add,
                Rule::Minus,
                Rule::Min,
                Rule::Max,
                Rule::Constant,
                Rule::Progression(2),
                Rule::Progression(-1),
                Rule::Progression(1),
            ],
            containment_exceptions: vec![(Rule::Constant, Rule::Min), (Rule::Constant, Rule::Max)],
        }
    }

    /// The four speaker-pretraining rules; disjoint from [`RuleSet::joint`].
    pub fn pretrain() -> Self {
        Self {
            name: "pretrain".into(),
            rules: vec![
                Rule::Progression(3),
                Rule::Progression(-3),
                Rule::DoubleFirst,
                Rule::DoubleSecond,
            ],
            containment_exceptions: vec![],
        }
    }

    /// The first `count` rules, keeping exceptions between retained rules.
    pub fn truncated(&self, count: usize) -> Self {
        let rules: Vec<Rule> = self.rules.iter().copied().take(count).collect();
        let containment_exceptions = self
            .containment_exceptions
            .iter()
            .copied()
            .filter(|(a, b)| rules.contains(a) && rules.contains(b))
            .collect();
        Self {
            name: format!("{}-{count}", self.name),
            rules,
            containment_exceptions,
        }
    }

    /// Same rules with strict uniqueness (no tolerated containments).
    pub fn without_exceptions(&self) -> Self {
        Self {
            name: format!("{}-strict", self.name),
            rules: self.rules.clone(),
            containment_exceptions: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn contains(&self, rule: Rule) -> bool {
        self.rules.contains(&rule)
    }

    pub fn index_of(&self, rule: Rule) -> Option<usize> {
        self.rules.iter().position(|&r| r == rule)
    }

    pub fn by_name(&self, name: &str) -> Result<Rule, RuleError> {
        let rule: Rule = name.parse()?;
        if self.contains(rule) {
            Ok(rule)
        } else {
            Err(RuleError::NotInSet {
                rule,
                set: self.name.clone(),
            })
        }
    }

    /// Rules satisfied by `triple` after discounting tolerated containments.
    pub fn matches(&self, triple: Triple) -> Vec<Rule> {
        let raw: Vec<Rule> = self
            .rules
            .iter()
            .copied()
            .filter(|r| r.satisfies(triple))
            .collect();
        raw.iter()
            .copied()
            .filter(|&outer| {
                !self
                    .containment_exceptions
                    .iter()
                    .any(|&(i, o)| o == outer && raw.contains(&i))
            })
            .collect()
    }

    /// Uniqueness under this registry's containment policy.
    pub fn unique_match(&self, triple: Triple) -> Option<Rule> {
        match self.matches(triple).as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }

    /// Every rule vector over `num_attributes` attributes, in lexicographic
    /// order of rule indices (attribute 0 varies slowest).
    pub fn all_combinations(&self, num_attributes: usize) -> Vec<RuleVector> {
        let n = self.rules.len();
        let total = n.pow(num_attributes as u32);
        (0..total)
            .map(|mut idx| {
                let mut rules = vec![self.rules[0]; num_attributes];
                for slot in rules.iter_mut().rev() {
                    *slot = self.rules[idx % n];
                    idx /= n;
                }
                RuleVector(rules)
            })
            .collect()
    }

    /// Semantic overlaps of this registry over `domain`, ignoring declared
    /// containments.
    pub fn validate_disjointness(&self, domain: AttributeDomain) -> Vec<(String, String)> {
        let preds: Vec<&dyn TriplePredicate> =
            self.rules.iter().map(|r| r as &dyn TriplePredicate).collect();
        let exceptions: Vec<(String, String)> = self
            .containment_exceptions
            .iter()
            .map(|(a, b)| (a.name(), b.name()))
            .collect();
        find_semantic_overlaps(&preds, domain, &exceptions)
    }
}

/// Anything that can be checked against a row triple.
pub trait TriplePredicate {
    fn label(&self) -> String;
    fn holds(&self, triple: Triple) -> bool;
}

impl TriplePredicate for Rule {
    fn label(&self) -> String {
        self.name()
    }

    fn holds(&self, triple: Triple) -> bool {
        self.satisfies(triple)
    }
}

/// Enumerates every in-domain triple and reports ordered pairs `(A, B)` whose
/// non-empty satisfying set of `A` is contained in that of `B`. Pairs listed
/// in `exceptions` are not reported.
pub fn find_semantic_overlaps(
    preds: &[&dyn TriplePredicate],
    domain: AttributeDomain,
    exceptions: &[(String, String)],
) -> Vec<(String, String)> {
    let n = domain.cardinality() as usize;
    let sets: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| {
            let mut set = Vec::with_capacity(n * n * n);
            for a in domain.values() {
                for b in domain.values() {
                    for c in domain.values() {
                        set.push(p.holds([a, b, c]));
                    }
                }
            }
            set
        })
        .collect();
    let mut overlaps = Vec::new();
    for (i, inner) in sets.iter().enumerate() {
        if !inner.iter().any(|&x| x) {
            continue;
        }
        for (j, outer) in sets.iter().enumerate() {
            if i == j {
                continue;
            }
            let contained = inner.iter().zip(outer).all(|(&x, &y)| !x || y);
            if contained {
                let pair = (preds[i].label(), preds[j].label());
                if !exceptions.contains(&pair) {
                    overlaps.push(pair);
                }
            }
        }
    }
    overlaps
}
