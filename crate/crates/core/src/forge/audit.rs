//! Brute-force re-derivation of the problem guarantees from rule predicates
//! alone; shares no state with the generator.

use std::fmt;

use serde::Serialize;

use super::{column, Problem, CONTEXT_PANELS, QUESTION_PANELS};
use crate::rules::{AttributeDomain, Rule, RuleSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Wrong panel counts, attribute arity or out-of-domain values.
    Shape { detail: String },
    /// (a) a row does not match its intended rule uniquely.
    RowRule {
        row: usize,
        attribute: usize,
        expected: Rule,
        matched: Vec<Rule>,
    },
    /// (b) the number of candidates completing the rule vector is not one, or
    /// the completing candidate is not the recorded target.
    TargetCount { completing: Vec<usize>, target_index: usize },
    /// (c) a distractor lacks a valid distract-rule combo.
    DistractRule { candidate: usize, detail: String },
    /// (d) two candidates are identical.
    DuplicateCandidates { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { detail } => write!(f, "shape: {detail}"),
            Violation::RowRule {
                row,
                attribute,
                expected,
                matched,
            } => write!(
                f,
                "row {row} attribute {attribute}: expected unique `{expected}`, matched {matched:?}"
            ),
            Violation::TargetCount {
                completing,
                target_index,
            } => write!(
                f,
                "candidates completing the rules: {completing:?} (target {target_index})"
            ),
            Violation::DistractRule { candidate, detail } => {
                write!(f, "distractor {candidate}: {detail}")
            }
            Violation::DuplicateCandidates { first, second } => {
                write!(f, "candidates {first} and {second} are identical")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub problem_id: u64,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn audit_problem(problem: &Problem, rule_set: &RuleSet, domain: AttributeDomain) -> AuditReport {
    let mut report = AuditReport {
        problem_id: problem.id,
        violations: Vec::new(),
    };
    if let Err(detail) = check_shape(problem, domain) {
        report.violations.push(Violation::Shape { detail });
        return report;
    }
    let v = &mut report.violations;
    let k = problem.num_attributes();
    let rules = &problem.rules.0;

    for (attribute, &expected) in rules.iter().enumerate() {
        if !rule_set.contains(expected) {
            v.push(Violation::Shape {
                detail: format!("rule `{expected}` is not in registry `{}`", rule_set.name),
            });
            continue;
        }
        for row in 0..3 {
            let triple = column(problem.row(row), attribute);
            let matched = rule_set.matches(triple);
            if matched != [expected] {
                v.push(Violation::RowRule {
                    row,
                    attribute,
                    expected,
                    matched,
                });
            }
        }
    }

    let completing: Vec<usize> = problem
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, cand)| {
            (0..k).all(|i| {
                rules[i].complete_third(problem.question_prefix(i), domain) == Some(cand.0[i])
            })
        })
        .map(|(idx, _)| idx)
        .collect();
    if completing != [problem.target_index] {
        v.push(Violation::TargetCount {
            completing,
            target_index: problem.target_index,
        });
    }

    let positions: Vec<usize> = problem.distractor_positions().collect();
    if problem.distract_combos.len() != positions.len() {
        v.push(Violation::DistractRule {
            candidate: problem.target_index,
            detail: format!(
                "{} distract combos recorded for {} distractors",
                problem.distract_combos.len(),
                positions.len()
            ),
        });
    }
    for (pos, combo) in positions.iter().zip(&problem.distract_combos) {
        let cand = &problem.candidates[*pos];
        if combo.len() != k {
            v.push(Violation::DistractRule {
                candidate: *pos,
                detail: format!("combo {combo} has wrong arity"),
            });
            continue;
        }
        if combo.0 == *rules {
            v.push(Violation::DistractRule {
                candidate: *pos,
                detail: "recorded combo equals the rule vector".into(),
            });
        }
        for (i, &r) in combo.0.iter().enumerate() {
            if !rule_set.contains(r) {
                v.push(Violation::DistractRule {
                    candidate: *pos,
                    detail: format!("combo rule `{r}` is not in the registry"),
                });
            }
            match r.complete_third(problem.question_prefix(i), domain) {
                None => v.push(Violation::DistractRule {
                    candidate: *pos,
                    detail: format!("`{r}` is not prefix-consistent on attribute {i}"),
                }),
                Some(c) if c != cand.0[i] => v.push(Violation::DistractRule {
                    candidate: *pos,
                    detail: format!("`{r}` implies {c} on attribute {i}, panel has {}", cand.0[i]),
                }),
                Some(_) => {}
            }
        }
    }

    for a in 0..problem.candidates.len() {
        for b in a + 1..problem.candidates.len() {
            if problem.candidates[a] == problem.candidates[b] {
                v.push(Violation::DuplicateCandidates { first: a, second: b });
            }
        }
    }
    report
}

fn check_shape(problem: &Problem, domain: AttributeDomain) -> Result<(), String> {
    let k = problem.num_attributes();
    if k == 0 {
        return Err("empty rule vector".into());
    }
    if problem.contexts.len() != CONTEXT_PANELS || problem.questions.len() != QUESTION_PANELS {
        return Err(format!(
            "{} contexts and {} questions",
            problem.contexts.len(),
            problem.questions.len()
        ));
    }
    if problem.candidates.len() < 2 || problem.target_index >= problem.candidates.len() {
        return Err(format!(
            "target {} among {} candidates",
            problem.target_index,
            problem.candidates.len()
        ));
    }
    let all = problem
        .contexts
        .iter()
        .chain(&problem.questions)
        .chain(&problem.candidates);
    for p in all {
        if p.0.len() != k {
            return Err(format!("panel {:?} has {} attributes, expected {k}", p.0, p.0.len()));
        }
        if !p.in_domain(domain) {
            return Err(format!("panel {:?} leaves 1..={}", p.0, domain.cardinality()));
        }
    }
    Ok(())
}
