use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game::{
    ChannelConfig, Decode, GameError, Listener, ListenerOutput, ListenerView, Message, Speaker,
    SpeakerView, EOS,
};
use crate::rules::{AttributeDomain, Panel, Rule, RuleSet, RuleVector};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenLayout {
    /// Position `i` uses its own token range.
    Disjoint,
    /// All positions share tokens `1..=rules`.
    Shared,
}

/// Fixed message per rule vector: token `i` names the rule on attribute `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCodebook {
    pub rule_set: RuleSet,
    pub num_attributes: usize,
    pub channel: ChannelConfig,
    pub layout: TokenLayout,
}

impl OracleCodebook {
    /// Picks disjoint token ranges when the vocabulary allows it.
    pub fn new(rule_set: RuleSet, num_attributes: usize, channel: ChannelConfig) -> Result<Self, GameError> {
        let n = rule_set.len();
        if num_attributes > channel.max_len {
            return Err(GameError::Agent(format!(
                "{num_attributes} attributes do not fit messages of length {}",
                channel.max_len
            )));
        }
        let layout = if num_attributes * n < channel.vocab_size {
            TokenLayout::Disjoint
        } else if n < channel.vocab_size {
            TokenLayout::Shared
        } else {
            return Err(GameError::Agent(format!(
                "{n} rules do not fit a vocabulary of {}",
                channel.vocab_size
            )));
        };
        Ok(Self {
            rule_set,
            num_attributes,
            channel,
            layout,
        })
    }

    pub fn with_layout(mut self, layout: TokenLayout) -> Result<Self, GameError> {
        if layout == TokenLayout::Disjoint && self.num_attributes * self.rule_set.len() >= self.channel.vocab_size {
            return Err(GameError::Agent("vocabulary too small for disjoint tokens".into()));
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn token(&self, attribute: usize, rule_index: usize) -> u32 {
        let base = match self.layout {
            TokenLayout::Disjoint => attribute * self.rule_set.len(),
            TokenLayout::Shared => 0,
        };
        (1 + base + rule_index) as u32
    }

    /// Token for `rule` at `attribute`, if the rule is registered.
    pub fn token_for(&self, attribute: usize, rule: Rule) -> Option<u32> {
        self.rule_set.index_of(rule).map(|r| self.token(attribute, r))
    }

    pub fn encode(&self, rules: &RuleVector) -> Result<Message, GameError> {
        if rules.len() != self.num_attributes {
            return Err(GameError::Agent(format!("rule vector {rules} has the wrong arity")));
        }
        let mut tokens = Vec::with_capacity(self.channel.max_len);
        for (a, r) in rules.0.iter().enumerate() {
            let t = self
                .token_for(a, *r)
                .ok_or_else(|| GameError::Agent(format!("rule `{r}` is not in the codebook")))?;
            tokens.push(t);
        }
        if tokens.len() < self.channel.max_len {
            tokens.push(EOS);
        }
        Ok(Message(tokens))
    }

    pub fn decode(&self, m: &Message) -> Option<RuleVector> {
        let content = m.content();
        if content.len() != self.num_attributes {
            return None;
        }
        content
            .iter()
            .enumerate()
            .map(|(a, &t)| {
                (0..self.rule_set.len())
                    .find(|&r| self.token(a, r) == t)
                    .map(|r| self.rule_set.rules[r])
            })
            .collect::<Option<Vec<_>>>()
            .map(RuleVector)
    }
}

/// Rules consistent with both context rows, per attribute.
pub fn extract_rules(contexts: &[Panel], rule_set: &RuleSet) -> Result<RuleVector, GameError> {
    let k = contexts.first().map_or(0, |p| p.0.len());
    (0..k)
        .map(|a| {
            let col = |r: usize| {
                [
                    contexts[3 * r].0[a],
                    contexts[3 * r + 1].0[a],
                    contexts[3 * r + 2].0[a],
                ]
            };
            let first = rule_set.matches(col(0));
            let second = rule_set.matches(col(1));
            let both: Vec<Rule> = first.into_iter().filter(|r| second.contains(r)).collect();
            match both.as_slice() {
                [r] => Ok(*r),
                _ => Err(GameError::RuleExtractionAmbiguous {
                    attribute: a,
                    candidates: both.iter().map(|r| r.to_string()).collect(),
                }),
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(RuleVector)
}

/// Reads the rule vector off the contexts and sends its codeword.
#[derive(Clone, Debug)]
pub struct OracleSpeaker {
    pub codebook: OracleCodebook,
}

impl Speaker for OracleSpeaker {
    fn speak(&self, views: &[SpeakerView<'_>], _: Decode, _: &mut ChaCha8Rng) -> Result<Vec<Message>, GameError> {
        views
            .iter()
            .map(|v| self.codebook.encode(&extract_rules(v.contexts, &self.codebook.rule_set)?))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Undecodable messages are an error.
    Fail,
    /// Undecodable messages get a uniformly random answer.
    UniformRandom,
}

/// Decodes the rule vector, completes the questions, and picks the
/// candidate agreeing with the implied panel on most attributes (lowest
/// index on ties).
#[derive(Clone, Debug)]
pub struct OracleListener {
    pub codebook: OracleCodebook,
    pub domain: AttributeDomain,
    pub fallback: Fallback,
}

impl OracleListener {
    pub fn answer(&self, rules: &RuleVector, view: &ListenerView<'_>) -> usize {
        let implied: Vec<Option<u32>> = rules
            .0
            .iter()
            .enumerate()
            .map(|(a, r)| r.complete_third([view.questions[0].0[a], view.questions[1].0[a]], self.domain))
            .collect();
        let mut best = (0, 0);
        for (i, c) in view.candidates.iter().enumerate() {
            let agree = c
                .0
                .iter()
                .zip(&implied)
                .filter(|(v, w)| Some(**v) == **w)
                .count();
            if agree > best.1 || i == 0 {
                best = (i, agree);
            }
        }
        best.0
    }
}

impl Listener for OracleListener {
    fn listen(
        &self,
        messages: &[Message],
        views: &[ListenerView<'_>],
        _: Decode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ListenerOutput>, GameError> {
        messages
            .iter()
            .zip(views)
            .map(|(m, v)| {
                let n = v.candidates.len();
                match self.codebook.decode(m) {
                    Some(rules) => {
                        let prediction = self.answer(&rules, v);
                        let mut scores = vec![0.0; n];
                        scores[prediction] = 1.0;
                        Ok(ListenerOutput { scores, prediction })
                    }
                    None if self.fallback == Fallback::UniformRandom => Ok(ListenerOutput {
                        scores: vec![1.0 / n as f64; n],
                        prediction: rng.gen_range(0..n),
                    }),
                    None => Err(GameError::UndecodableMessage(m.clone())),
                }
            })
            .collect()
    }
}
