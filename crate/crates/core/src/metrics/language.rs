use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{context_vector, hamming_norm, levenshtein, panel_cosine, spearman, MetricError};
use crate::agents::OracleCodebook;
use crate::forge::Problem;
use crate::game::{ChannelConfig, Decode, GameError, Message, Speaker, SpeakerView, EOS};
use crate::rules::{AttributeDomain, Panel, RuleSet, RuleVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub problem_id: u64,
    pub rules: RuleVector,
    pub contexts: Vec<Panel>,
    pub message: Message,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComboMessage {
    pub rules: RuleVector,
    pub message: Message,
}

/// Greedy messages of one speaker: one per problem, plus the modal message
/// of each rule combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageDump {
    pub domain: AttributeDomain,
    pub combos: Vec<ComboMessage>,
    pub records: Vec<DumpRecord>,
}

impl LanguageDump {
    /// Builds the combo table from the records: most frequent message per
    /// combination, the smallest message on ties.
    pub fn from_records(domain: AttributeDomain, records: Vec<DumpRecord>) -> Self {
        let mut counts: BTreeMap<&RuleVector, BTreeMap<&Message, usize>> = BTreeMap::new();
        for r in &records {
            *counts.entry(&r.rules).or_default().entry(&r.message).or_default() += 1;
        }
        let combos = counts
            .into_iter()
            .map(|(rules, ms)| {
                let best = ms.iter().map(|(m, c)| (*c, std::cmp::Reverse(*m))).max().expect("non-empty");
                ComboMessage {
                    rules: rules.clone(),
                    message: best.1 .0.clone(),
                }
            })
            .collect();
        Self {
            domain,
            combos,
            records,
        }
    }

    /// Greedy messages of `speaker` on `problems`.
    pub fn from_speaker(
        speaker: &dyn Speaker,
        problems: &[Problem],
        domain: AttributeDomain,
        batch_size: usize,
    ) -> Result<Self, GameError> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut records = Vec::with_capacity(problems.len());
        for chunk in problems.chunks(batch_size.max(1)) {
            let views: Vec<SpeakerView> = chunk.iter().map(SpeakerView::of).collect();
            let ms = speaker.speak(&views, Decode::Greedy, &mut rng)?;
            records.extend(chunk.iter().zip(ms).map(|(p, message)| DumpRecord {
                problem_id: p.id,
                rules: p.rules.clone(),
                contexts: p.contexts.clone(),
                message,
            }));
        }
        Ok(Self::from_records(domain, records))
    }

    pub fn from_codebook(codebook: &OracleCodebook, problems: &[Problem], domain: AttributeDomain) -> Result<Self, GameError> {
        let records = problems
            .iter()
            .map(|p| {
                Ok(DumpRecord {
                    problem_id: p.id,
                    rules: p.rules.clone(),
                    contexts: p.contexts.clone(),
                    message: codebook.encode(&p.rules)?,
                })
            })
            .collect::<Result<Vec<_>, GameError>>()?;
        Ok(Self::from_records(domain, records))
    }

    /// Independent uniformly random full-length messages, one per problem.
    pub fn random(problems: &[Problem], channel: ChannelConfig, domain: AttributeDomain, rng: &mut impl Rng) -> Self {
        let records = problems
            .iter()
            .map(|p| DumpRecord {
                problem_id: p.id,
                rules: p.rules.clone(),
                contexts: p.contexts.clone(),
                message: Message(
                    (0..channel.max_len)
                        .map(|_| rng.gen_range(1..channel.vocab_size as u32))
                        .collect(),
                ),
            })
            .collect();
        Self::from_records(domain, records)
    }

    /// The same messages assigned to randomly permuted combinations.
    pub fn shuffled(&self, rng: &mut impl Rng) -> Self {
        let mut messages: Vec<Message> = self.combos.iter().map(|c| c.message.clone()).collect();
        messages.shuffle(rng);
        let combos: Vec<ComboMessage> = self
            .combos
            .iter()
            .zip(messages)
            .map(|(c, message)| ComboMessage {
                rules: c.rules.clone(),
                message,
            })
            .collect();
        let table: BTreeMap<&RuleVector, &Message> = combos.iter().map(|c| (&c.rules, &c.message)).collect();
        let records = self
            .records
            .iter()
            .map(|r| DumpRecord {
                message: table[&r.rules].clone(),
                ..r.clone()
            })
            .collect();
        Self {
            domain: self.domain,
            combos,
            records,
        }
    }

    pub fn combo_table(&self) -> BTreeMap<&RuleVector, &Message> {
        self.combos.iter().map(|c| (&c.rules, &c.message)).collect()
    }

    /// Messages for `problems` looked up by rule combination.
    pub fn map_onto(&self, problems: &[Problem]) -> Result<Vec<Message>, MetricError> {
        let table = self.combo_table();
        let missing: BTreeSet<&RuleVector> = problems
            .iter()
            .map(|p| &p.rules)
            .filter(|r| !table.contains_key(r))
            .collect();
        if !missing.is_empty() {
            return Err(MetricError::MappingIncomplete {
                missing: missing.into_iter().cloned().collect(),
            });
        }
        Ok(problems.iter().map(|p| table[&p.rules].clone()).collect())
    }

    /// Each problem gets the message of an independently drawn combination,
    /// so messages carry no information about the problem's rules.
    pub fn random_mapping(&self, problems: &[Problem], rng: &mut impl Rng) -> Result<Vec<Message>, MetricError> {
        if self.combos.is_empty() {
            return Err(MetricError::DegenerateLanguage);
        }
        Ok(problems
            .iter()
            .map(|_| self.combos.choose(rng).expect("non-empty").message.clone())
            .collect())
    }

    pub fn distinct_messages(&self) -> usize {
        self.records.iter().map(|r| &r.message).collect::<BTreeSet<_>>().len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Rule,
    Panel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopsimReport {
    pub space: Space,
    pub mean: f64,
    pub stderr: f64,
    pub sample_size: usize,
    pub runs: usize,
    /// `None` marks a run whose distances had zero variance.
    pub per_run: Vec<Option<f64>>,
    pub p_values: Vec<Option<f64>>,
}

fn input_distance(space: Space, a: &DumpRecord, b: &DumpRecord, domain: AttributeDomain) -> Result<f64, MetricError> {
    match space {
        Space::Rule => hamming_norm(&a.rules, &b.rules),
        Space::Panel => panel_cosine(&context_vector(&a.contexts, domain), &context_vector(&b.contexts, domain)),
    }
}

/// Spearman correlation between pairwise input distances and message edit
/// distances over `sample_n` sampled records, repeated `runs` times. When
/// `sample_n` covers the dump every run is exhaustive.
pub fn topsim(
    dump: &LanguageDump,
    space: Space,
    sample_n: usize,
    runs: usize,
    rng: &mut impl Rng,
) -> Result<TopsimReport, MetricError> {
    if dump.distinct_messages() < 2 {
        return Err(MetricError::DegenerateLanguage);
    }
    let runs = runs.max(1);
    let n = sample_n.min(dump.records.len());
    let mut per_run = Vec::with_capacity(runs);
    let mut p_values = Vec::with_capacity(runs);
    let mut last_err = None;
    for _ in 0..runs {
        let sample: Vec<&DumpRecord> = dump.records.choose_multiple(rng, n).collect();
        let mut xs = Vec::with_capacity(n * (n - 1) / 2);
        let mut ys = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                xs.push(input_distance(space, sample[i], sample[j], dump.domain)?);
                ys.push(levenshtein(sample[i].message.tokens(), sample[j].message.tokens()) as f64);
            }
        }
        match spearman(&xs, &ys) {
            Ok((rho, p)) => {
                per_run.push(Some(rho));
                p_values.push(Some(p));
            }
            Err(e @ MetricError::ZeroVariance(_)) => {
                per_run.push(None);
                p_values.push(None);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<f64> = per_run.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(last_err.unwrap_or(MetricError::ZeroVariance("distances")));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let stderr = if valid.len() > 1 {
        let var = valid.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (valid.len() - 1) as f64;
        (var / valid.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(TopsimReport {
        space,
        mean,
        stderr,
        sample_size: n,
        runs,
        per_run,
        p_values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub attribute: usize,
    pub rule: String,
    pub position: usize,
    /// `None` when no combination covers this attribute and rule.
    pub token: Option<u32>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenTable {
    pub entries: Vec<TokenEntry>,
}

impl TokenTable {
    pub fn get(&self, attribute: usize, rule: &str, position: usize) -> Option<&TokenEntry> {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute && e.rule == rule && e.position == position)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("attribute,rule,position,token,probability\n");
        for e in &self.entries {
            let tok = e.token.map_or("absent".to_string(), |t| t.to_string());
            s.push_str(&format!("{},{},{},{},{:.6}\n", e.attribute, e.rule, e.position, tok, e.probability));
        }
        s
    }
}

/// Most probable token at each message position among the combinations
/// whose attribute `a` carries rule `r`, every combination weighted equally.
/// Positions past a message's end count as EOS.
pub fn token_distribution(dump: &LanguageDump, rule_set: &RuleSet, max_len: usize) -> TokenTable {
    let k = dump.combos.first().map_or(0, |c| c.rules.len());
    let mut entries = Vec::new();
    for a in 0..k {
        for &rule in &rule_set.rules {
            let covering: Vec<&ComboMessage> = dump.combos.iter().filter(|c| c.rules.0[a] == rule).collect();
            for t in 0..max_len {
                let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
                for c in &covering {
                    *counts.entry(c.message.0.get(t).copied().unwrap_or(EOS)).or_default() += 1;
                }
                let best = counts
                    .iter()
                    .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
                    .map(|(tok, c)| (*tok, *c as f64 / covering.len() as f64));
                entries.push(TokenEntry {
                    attribute: a,
                    rule: rule.to_string(),
                    position: t,
                    token: best.map(|b| b.0),
                    probability: best.map_or(0.0, |b| b.1),
                });
            }
        }
    }
    TokenTable { entries }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::agents::TokenLayout;
    use crate::forge::{build_main_dataset, Forge, ForgeConfig};

    fn problems(k: usize, n: u32, set: RuleSet, per: usize) -> Vec<Problem> {
        let f = Forge::new(ForgeConfig::new(set, AttributeDomain::new(n).unwrap(), k)).unwrap();
        build_main_dataset(&f, per, 5).unwrap().problems["train"].clone()
    }

    #[test]
    fn codebook_language_is_perfectly_topographic() {
        // disjoint per-position tokens: edit distance is k·hamming
        let set = RuleSet::joint().truncated(4);
        let ps = problems(2, 10, set.clone(), 2);
        let cb = OracleCodebook::new(set, 2, ChannelConfig::new(2, 9)).unwrap();
        assert_eq!(cb.layout, TokenLayout::Disjoint);
        let dump = LanguageDump::from_codebook(&cb, &ps, AttributeDomain::new(10).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rule = topsim(&dump, Space::Rule, usize::MAX, 1, &mut rng).unwrap();
        assert!((rule.mean - 1.0).abs() < 1e-9, "{rule:?}");
        let panel = topsim(&dump, Space::Panel, usize::MAX, 1, &mut rng).unwrap();
        assert!(panel.mean < rule.mean);
    }

    #[test]
    fn constant_language_is_degenerate() {
        let set = RuleSet::joint().truncated(4);
        let ps = problems(2, 10, set, 2);
        let records = ps
            .iter()
            .map(|p| DumpRecord {
                problem_id: p.id,
                rules: p.rules.clone(),
                contexts: p.contexts.clone(),
                message: Message(vec![3, 3]),
            })
            .collect();
        let dump = LanguageDump::from_records(AttributeDomain::new(10).unwrap(), records);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(topsim(&dump, Space::Rule, 50, 2, &mut rng), Err(MetricError::DegenerateLanguage)));
        let table = token_distribution(&dump, &RuleSet::joint().truncated(4), 2);
        assert!(table.entries.iter().all(|e| e.token == Some(3)));
    }

    #[test]
    fn codebook_token_table_recovers_codebook() {
        let set = RuleSet::joint().truncated(4);
        let ps = problems(2, 10, set.clone(), 2);
        let cb = OracleCodebook::new(set.clone(), 2, ChannelConfig::new(2, 8)).unwrap();
        let dump = LanguageDump::from_codebook(&cb, &ps, AttributeDomain::new(10).unwrap()).unwrap();
        let table = token_distribution(&dump, &set, 2);
        for a in 0..2 {
            for (ri, r) in set.rules.iter().enumerate() {
                let e = table.get(a, &r.to_string(), a).unwrap();
                assert_eq!(e.token, Some(cb.token(a, ri)));
                assert_eq!(e.probability, 1.0);
            }
        }
    }

    #[test]
    fn modal_message_wins() {
        let rules = RuleVector(vec![crate::rules::Rule::Add]);
        let rec = |id, m: Vec<u32>| DumpRecord {
            problem_id: id,
            rules: rules.clone(),
            contexts: vec![],
            message: Message(m),
        };
        let dump = LanguageDump::from_records(
            AttributeDomain::new(10).unwrap(),
            vec![rec(0, vec![2]), rec(1, vec![1]), rec(2, vec![2]), rec(3, vec![1]), rec(4, vec![3])],
        );
        assert_eq!(dump.combos.len(), 1);
        assert_eq!(dump.combos[0].message, Message(vec![1]));
    }
}
