//! Problem generation: rows with unique rules, rule-based distractors, and
//! complete problems.

mod audit;
mod dataset;
pub mod fixtures;
mod io;

pub use audit::{audit_problem, AuditReport, Violation};
pub use dataset::{
    build_generalization_splits, build_main_dataset, build_pretrain_set, derive_seed, Dataset,
    GeneralizationConfig, SplitEntry, SplitManifest, MANIFEST_FORMAT_VERSION,
};
pub use io::{
    load_dataset, load_manifest, read_problems, serialize_dataset, write_problems, IoError, MANIFEST_FILE,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rules::{AttributeDomain, Panel, Rule, RuleError, RuleSet, RuleVector, Triple, Value};

/// Context panels per problem (two rows of three).
pub const CONTEXT_PANELS: usize = 6;
/// Question panels per problem.
pub const QUESTION_PANELS: usize = 2;
/// Candidate panels in the joint game.
pub const CANDIDATES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("no admissible row exists for rule `{rule}` with N={n}")]
    AdmissibleSetEmpty { rule: Rule, n: Value },
    #[error("no admissible row for rule `{rule}` after {attempts} attempts")]
    RejectionBudgetExceeded { rule: Rule, attempts: usize },
    #[error("distract rule space yields {available} distinct panels, {needed} needed")]
    DistractSpaceTooSmall { needed: usize, available: usize },
    #[error("question prefix is inconsistent with rule vector {0}")]
    QuestionInconsistent(RuleVector),
    #[error("problem generation failed for {rules}: {cause}")]
    ProblemGenerationFailed {
        rules: RuleVector,
        #[source]
        cause: Box<ForgeError>,
    },
    #[error("rule vector {rules} does not fit the generator ({reason})")]
    BadRuleVector { rules: RuleVector, reason: String },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("{0}")]
    Config(String),
}

/// A complete reasoning problem. `rules` is the hidden label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: u64,
    pub contexts: Vec<Panel>,
    pub questions: Vec<Panel>,
    pub candidates: Vec<Panel>,
    pub target_index: usize,
    pub rules: RuleVector,
    /// One combo per distractor, in candidate order with the target skipped.
    pub distract_combos: Vec<RuleVector>,
    pub seed: u64,
}

impl Problem {
    /// Row `r` as three panels; row 2 ends with the target candidate.
    pub fn row(&self, r: usize) -> [&Panel; 3] {
        match r {
            0 => [&self.contexts[0], &self.contexts[1], &self.contexts[2]],
            1 => [&self.contexts[3], &self.contexts[4], &self.contexts[5]],
            _ => [
                &self.questions[0],
                &self.questions[1],
                &self.candidates[self.target_index],
            ],
        }
    }

    pub fn num_attributes(&self) -> usize {
        self.rules.len()
    }

    /// Question prefix of attribute `i`.
    pub fn question_prefix(&self, i: usize) -> [Value; 2] {
        [self.questions[0].0[i], self.questions[1].0[i]]
    }

    /// Candidate indices of the distractors, aligned with `distract_combos`.
    pub fn distractor_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.candidates.len()).filter(move |&i| i != self.target_index)
    }
}

/// Triple of an attribute across one row.
pub(crate) fn column(panels: [&Panel; 3], attribute: usize) -> Triple {
    [
        panels[0].0[attribute],
        panels[1].0[attribute],
        panels[2].0[attribute],
    ]
}

/// Panel implied by applying `rules` attribute-wise to the question prefix.
pub fn implied_panel(
    questions: &[Panel],
    rules: &RuleVector,
    domain: AttributeDomain,
) -> Option<Panel> {
    rules
        .0
        .iter()
        .enumerate()
        .map(|(i, r)| r.complete_third([questions[0].0[i], questions[1].0[i]], domain))
        .collect::<Option<Vec<_>>>()
        .map(Panel)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub rule_set: RuleSet,
    pub domain: AttributeDomain,
    pub num_attributes: usize,
    /// Candidate panels per problem (target included).
    pub candidates: usize,
    pub row_attempts: usize,
    pub problem_attempts: usize,
}

impl ForgeConfig {
    pub fn new(rule_set: RuleSet, domain: AttributeDomain, num_attributes: usize) -> Self {
        Self {
            rule_set,
            domain,
            num_attributes,
            candidates: CANDIDATES,
            row_attempts: 1000,
            problem_attempts: 50,
        }
    }

    pub fn with_candidates(mut self, candidates: usize) -> Self {
        self.candidates = candidates;
        self
    }
}

/// Problem generator bound to one rule registry and attribute domain.
#[derive(Clone, Debug)]
pub struct Forge {
    config: ForgeConfig,
    admissible: Vec<usize>,
}

impl Forge {
    pub fn new(config: ForgeConfig) -> Result<Self, ForgeError> {
        if config.candidates < 2 {
            return Err(ForgeError::Config("at least two candidates are required".into()));
        }
        if config.num_attributes == 0 {
            return Err(ForgeError::Config("at least one attribute is required".into()));
        }
        let admissible = config
            .rule_set
            .rules
            .iter()
            .map(|&rule| admissible_rows(rule, &config.rule_set, config.domain).count())
            .collect();
        Ok(Self { config, admissible })
    }

    pub fn config(&self) -> &ForgeConfig {
        &self.config
    }

    pub fn rule_set(&self) -> &RuleSet {
        &self.config.rule_set
    }

    pub fn domain(&self) -> AttributeDomain {
        self.config.domain
    }

    /// A row obeying `rule` and no other rule of the registry, drawn
    /// uniformly from the admissible set by rejection over prefixes.
    pub fn sample_row(&self, rule: Rule, rng: &mut impl Rng) -> Result<Triple, ForgeError> {
        let set = &self.config.rule_set;
        let idx = set.index_of(rule).ok_or_else(|| RuleError::NotInSet {
            rule,
            set: set.name.clone(),
        })?;
        let n = self.config.domain.cardinality();
        if self.admissible[idx] == 0 {
            return Err(ForgeError::AdmissibleSetEmpty { rule, n });
        }
        for _ in 0..self.config.row_attempts {
            let a = rng.gen_range(1..=n);
            let b = rng.gen_range(1..=n);
            if let Some(c) = rule.complete_third([a, b], self.config.domain) {
                if set.unique_match([a, b, c]) == Some(rule) {
                    return Ok([a, b, c]);
                }
            }
        }
        Err(ForgeError::RejectionBudgetExceeded {
            rule,
            attempts: self.config.row_attempts,
        })
    }

    /// Rule-based distractors for `questions`: combos of prefix-consistent
    /// rules other than `rules`, each implying a distinct non-target panel.
    pub fn generate_distractors(
        &self,
        questions: &[Panel],
        rules: &RuleVector,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<Panel>, Vec<RuleVector>), ForgeError> {
        let domain = self.config.domain;
        let target = implied_panel(questions, rules, domain)
            .ok_or_else(|| ForgeError::QuestionInconsistent(rules.clone()))?;
        // (rule, implied value) options per attribute
        let possible: Vec<Vec<(Rule, Value)>> = (0..rules.len())
            .map(|i| {
                let prefix = [questions[0].0[i], questions[1].0[i]];
                self.config
                    .rule_set
                    .rules
                    .iter()
                    .filter_map(|&r| r.complete_third(prefix, domain).map(|v| (r, v)))
                    .collect()
            })
            .collect();
        let total: usize = possible.iter().map(Vec::len).product();
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(rng);

        let mut panels: Vec<Panel> = Vec::with_capacity(count);
        let mut combos = Vec::with_capacity(count);
        for mut code in order {
            let mut combo = vec![Rule::Constant; rules.len()];
            let mut values = vec![0; rules.len()];
            for i in (0..rules.len()).rev() {
                let opts = &possible[i];
                let (r, v) = opts[code % opts.len()];
                code /= opts.len();
                combo[i] = r;
                values[i] = v;
            }
            if combo == rules.0 {
                continue;
            }
            let panel = Panel(values);
            if panel == target || panels.contains(&panel) {
                continue;
            }
            panels.push(panel);
            combos.push(RuleVector(combo));
            if panels.len() == count {
                return Ok((panels, combos));
            }
        }
        Err(ForgeError::DistractSpaceTooSmall {
            needed: count,
            available: panels.len(),
        })
    }

    /// A full problem for `rules`; resamples the instance on distractor
    /// exhaustion, up to the configured budget.
    pub fn generate_problem(&self, rules: &RuleVector, seed: u64) -> Result<Problem, ForgeError> {
        self.check_rule_vector(rules)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last = None;
        for _ in 0..self.config.problem_attempts {
            match self.try_generate(rules, seed, &mut rng) {
                Ok(p) => return Ok(p),
                Err(e @ ForgeError::DistractSpaceTooSmall { .. })
                | Err(e @ ForgeError::RejectionBudgetExceeded { .. }) => last = Some(e),
                Err(e) => {
                    return Err(ForgeError::ProblemGenerationFailed {
                        rules: rules.clone(),
                        cause: Box::new(e),
                    })
                }
            }
        }
        Err(ForgeError::ProblemGenerationFailed {
            rules: rules.clone(),
            cause: Box::new(last.expect("at least one attempt")),
        })
    }

    fn check_rule_vector(&self, rules: &RuleVector) -> Result<(), ForgeError> {
        if rules.len() != self.config.num_attributes {
            return Err(ForgeError::BadRuleVector {
                rules: rules.clone(),
                reason: format!("expected {} attributes", self.config.num_attributes),
            });
        }
        if let Some(r) = rules.0.iter().find(|r| !self.config.rule_set.contains(**r)) {
            return Err(ForgeError::BadRuleVector {
                rules: rules.clone(),
                reason: format!("`{r}` is not in rule set `{}`", self.config.rule_set.name),
            });
        }
        Ok(())
    }

    fn try_generate(
        &self,
        rules: &RuleVector,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Problem, ForgeError> {
        let k = rules.len();
        let mut rows = vec![vec![0 as Value; k]; 9];
        for (i, &rule) in rules.0.iter().enumerate() {
            for r in 0..3 {
                let t = self.sample_row(rule, rng)?;
                for (j, v) in t.into_iter().enumerate() {
                    rows[3 * r + j][i] = v;
                }
            }
        }
        let mut panels: Vec<Panel> = rows.into_iter().map(Panel).collect();
        let target = panels.pop().expect("nine panels");
        let questions = panels.split_off(CONTEXT_PANELS);
        let contexts = panels;

        let (distractors, combos) =
            self.generate_distractors(&questions, rules, self.config.candidates - 1, rng)?;
        let mut slots: Vec<(Panel, Option<RuleVector>)> = std::iter::once((target, None))
            .chain(distractors.into_iter().zip(combos).map(|(p, c)| (p, Some(c))))
            .collect();
        slots.shuffle(rng);
        let target_index = slots.iter().position(|(_, c)| c.is_none()).expect("target");
        let (candidates, distract_combos): (Vec<Panel>, Vec<Option<RuleVector>>) =
            slots.into_iter().unzip();
        Ok(Problem {
            id: 0,
            contexts,
            questions,
            candidates,
            target_index,
            rules: rules.clone(),
            distract_combos: distract_combos.into_iter().flatten().collect(),
            seed,
        })
    }
}

/// Every row admissible for `rule` under the registry's uniqueness policy.
pub fn admissible_rows<'a>(
    rule: Rule,
    set: &'a RuleSet,
    domain: AttributeDomain,
) -> impl Iterator<Item = Triple> + 'a {
    domain.values().flat_map(move |a| {
        domain.values().filter_map(move |b| {
            let c = rule.complete_third([a, b], domain)?;
            (set.unique_match([a, b, c]) == Some(rule)).then_some([a, b, c])
        })
    })
}
