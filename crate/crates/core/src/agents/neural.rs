use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game::{
    ChannelConfig, Decode, GameError, Listener, ListenerOutput, ListenerView, Message, Speaker,
    SpeakerView, EOS,
};
use crate::grad::{argmax_rows, GradError, Graph, GruCell, Linear, Matrix, ParamId, ParamStore, Var, Embedding};
use crate::rules::{AttributeDomain, Panel};

/// Sizes shared by speaker and listener.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub num_attributes: usize,
    pub f_hidden: usize,
    /// Panel embedding width.
    pub panel_dim: usize,
    /// The panel embedding is split into this many equal groups.
    pub groups: usize,
    pub experts: usize,
    pub expert_hidden: usize,
    pub token_dim: usize,
}

impl ArchConfig {
    pub fn group_size(&self) -> usize {
        self.panel_dim / self.groups
    }

    /// Width of a row embedding and of the message state.
    pub fn hidden(&self) -> usize {
        self.groups * self.experts
    }

    /// Embedding sizes used at full scale for N ∈ {20, 30, 40, 80}: panel width
    /// 80/120/160/240 with one group per feature and five experts.
    pub fn full(num_attributes: usize, n: u32) -> Self {
        let d = match n {
            0..=20 => 80,
            21..=30 => 120,
            31..=40 => 160,
            _ => 240,
        };
        Self {
            num_attributes,
            f_hidden: d,
            panel_dim: d,
            groups: d,
            experts: 5,
            expert_hidden: 16,
            token_dim: 64,
        }
    }

    pub fn desk(num_attributes: usize) -> Self {
        Self {
            num_attributes,
            f_hidden: 32,
            panel_dim: 8,
            groups: 8,
            experts: 5,
            expert_hidden: 8,
            token_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.groups == 0 || !self.panel_dim.is_multiple_of(self.groups) || self.experts == 0 {
            return Err(GameError::Agent(format!(
                "panel width {} is not divisible into {} groups",
                self.panel_dim, self.groups
            )));
        }
        Ok(())
    }
}

/// Panel encoder `f` followed by the grouped reasoning module `g`.
#[derive(Clone, Copy, Debug)]
pub struct RowEncoder {
    f1: Linear,
    f2: Linear,
    e1: Linear,
    e2: ParamId,
    e2_bias: ParamId,
    mask: (usize, usize),
}

impl RowEncoder {
    fn new(store: &mut ParamStore, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let f1 = Linear::new(store, "f/l1", arch.num_attributes, arch.f_hidden, rng);
        let f2 = Linear::new(store, "f/l2", arch.f_hidden, arch.panel_dim, rng);
        let s = arch.group_size();
        let (e, eh) = (arch.experts, arch.expert_hidden);
        let e1 = Linear::new(store, "g/experts/l1", 3 * s, e * eh, rng);
        let e2 = store.add_uniform("g/experts/l2/w", e * eh, e, eh, rng);
        let e2_bias = store.add_uniform("g/experts/l2/b", 1, e, eh, rng);
        Self {
            f1,
            f2,
            e1,
            e2,
            e2_bias,
            mask: (e * eh, e),
        }
    }

    /// Encodes `(rows·batch) × k` normalized panels into panel embeddings.
    pub fn panels(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, GradError> {
        let h = self.f1.forward(g, store, x)?;
        let h = g.tanh(h);
        let h = self.f2.forward(g, store, h)?;
        Ok(g.tanh(h))
    }

    /// Row embeddings from three `B × D` panel embeddings, in row order.
    pub fn row(&self, g: &mut Graph, store: &ParamStore, arch: &ArchConfig, p: [Var; 3]) -> Result<Var, GradError> {
        let b = g.value(p[0]).rows();
        let (d, s, groups) = (arch.panel_dim, arch.group_size(), arch.groups);
        let cat = g.concat_cols(&p)?;
        // row (b, group) holds the group's slice of each of the three panels
        let mut index = Vec::with_capacity(b * groups * 3 * s);
        for bi in 0..b {
            for gi in 0..groups {
                for panel in 0..3 {
                    for j in 0..s {
                        index.push(bi * 3 * d + panel * d + gi * s + j);
                    }
                }
            }
        }
        let grouped = g.gather(cat, Arc::from(index), b * groups, 3 * s)?;
        let h = self.e1.forward(g, store, grouped)?;
        let h = g.tanh(h);
        let w = g.param(store, self.e2);
        let mask = g.constant(block_mask(self.mask.0, self.mask.1));
        let w = g.mul(w, mask)?;
        let out = g.matmul(h, w)?;
        let bias = g.param(store, self.e2_bias);
        let out = g.add_row(out, bias)?;
        let out = g.tanh(out);
        g.reshape(out, b, groups * arch.experts)
    }
}

/// Block-diagonal selector: hidden unit `i` feeds expert `i / (rows/cols)`.
fn block_mask(rows: usize, cols: usize) -> Matrix {
    let per = rows / cols;
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        m.data_mut()[i * cols + i / per] = 1.0;
    }
    m
}

fn normalized<'a>(panels: impl Iterator<Item = &'a Panel>, k: usize, domain: AttributeDomain) -> Vec<f64> {
    let n = domain.cardinality() as f64;
    let mut out = Vec::new();
    for p in panels {
        debug_assert_eq!(p.0.len(), k);
        out.extend(p.0.iter().map(|&v| v as f64 / n));
    }
    out
}

/// How the speaker picks tokens.
pub enum TokenPolicy<'a> {
    Sample(&'a mut ChaCha8Rng),
    Greedy,
    /// Replays given messages, for scoring and gradient checks.
    Forced(&'a [Message]),
}

/// Speaker outputs for one batch, with differentiable log-probabilities.
pub struct Rollout {
    pub messages: Vec<Message>,
    /// `B × 1`: Σ over emitted tokens of log S(m_t | C).
    pub log_prob: Var,
    /// `B × 1`: Σ over emitted tokens of the per-step entropy.
    pub entropy: Var,
    /// Per step `B × 1` log-probability of the chosen token.
    pub step_log_probs: Vec<Var>,
    /// `emitted[t][b]`: whether sequence `b` emitted a token at step `t`.
    pub emitted: Vec<Vec<bool>>,
    pub rule_embedding: Var,
}

#[derive(Clone, Debug)]
pub struct NeuralSpeaker {
    pub arch: ArchConfig,
    pub channel: ChannelConfig,
    pub domain: AttributeDomain,
    pub store: ParamStore,
    rows: RowEncoder,
    tokens: Embedding,
    cell: GruCell,
    out: Linear,
}

/// Prefix of the panel encoder and reasoning module parameters.
pub const REASONING_PREFIXES: [&str; 2] = ["f/", "g/"];
/// Prefixes of the message encoder and output projection parameters.
pub const MESSAGE_PREFIXES: [&str; 2] = ["h/", "q/"];

impl NeuralSpeaker {
    pub fn new(arch: ArchConfig, channel: ChannelConfig, domain: AttributeDomain, seed: u64) -> Result<Self, GameError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let rows = RowEncoder::new(&mut store, &arch, &mut rng);
        let hidden = arch.hidden();
        // one extra row for the start token
        let tokens = Embedding::new(&mut store, "h/tokens", channel.vocab_size + 1, arch.token_dim, &mut rng);
        let cell = GruCell::new(&mut store, "h/cell", arch.token_dim, hidden, &mut rng);
        let out = Linear::new(&mut store, "q/out", hidden, channel.vocab_size, &mut rng);
        Ok(Self {
            arch,
            channel,
            domain,
            store,
            rows,
            tokens,
            cell,
            out,
        })
    }

    /// A fresh message module (`h`, `q`) for `channel`, keeping `f` and `g`.
    pub fn with_fresh_message_module(&self, channel: ChannelConfig, seed: u64) -> Result<Self, GameError> {
        let mut next = Self::new(self.arch.clone(), channel, self.domain, seed)?;
        for prefix in REASONING_PREFIXES {
            next.store.copy_prefix_from(&self.store, prefix)?;
        }
        Ok(next)
    }

    /// `B × H` mean of the two context-row embeddings.
    pub fn rule_embedding(&self, g: &mut Graph, views: &[SpeakerView<'_>]) -> Result<Var, GameError> {
        let b = views.len();
        let k = self.arch.num_attributes;
        // panel-major so each context position is a contiguous block
        let panels = (0..6).flat_map(|p| views.iter().map(move |v| &v.contexts[p]));
        let x = g.constant(Matrix::from_vec(6 * b, k, normalized(panels, k, self.domain)));
        let e = self.rows.panels(g, &self.store, x)?;
        let block = |g: &mut Graph, p: usize| g.rows(e, Arc::from((p * b..(p + 1) * b).collect::<Vec<_>>()));
        let p: Vec<Var> = (0..6).map(|i| block(g, i)).collect::<Result<_, _>>()?;
        let r1 = self.rows.row(g, &self.store, &self.arch, [p[0], p[1], p[2]])?;
        let r2 = self.rows.row(g, &self.store, &self.arch, [p[3], p[4], p[5]])?;
        let sum = g.add(r1, r2)?;
        Ok(g.scale(sum, 0.5))
    }

    pub fn rollout(&self, g: &mut Graph, views: &[SpeakerView<'_>], mut policy: TokenPolicy<'_>) -> Result<Rollout, GameError> {
        let b = views.len();
        let rule_embedding = self.rule_embedding(g, views)?;
        let mut h = rule_embedding;
        let mut input = self.tokens.forward(g, &self.store, &vec![self.channel.sos() as usize; b])?;
        let mut alive = vec![true; b];
        let mut tokens: Vec<Vec<u32>> = vec![Vec::new(); b];
        let mut step_log_probs = Vec::new();
        let mut emitted = Vec::new();
        let mut log_prob: Option<Var> = None;
        let mut entropy: Option<Var> = None;
        for t in 0..self.channel.max_len {
            if !alive.iter().any(|&a| a) {
                break;
            }
            h = self.cell.forward(g, &self.store, input, h)?;
            let logits = self.out.forward(g, &self.store, h)?;
            let logp = g.log_softmax(logits)?;
            let chosen: Vec<usize> = match &mut policy {
                TokenPolicy::Sample(rng) => {
                    let (idx, _) = g.sample_categorical(logits, &mut **rng)?;
                    idx
                }
                TokenPolicy::Greedy => argmax_rows(g.value(logp)),
                TokenPolicy::Forced(ms) => ms
                    .iter()
                    .map(|m| m.0.get(t).map_or(EOS as usize, |&x| x as usize))
                    .collect(),
            };
            let picked = g.pick_cols(logp, Arc::from(chosen.clone()))?;
            let probs = g.softmax(logits)?;
            let ent = g.entropy(probs)?;
            let mask = g.constant(Matrix::from_vec(b, 1, alive.iter().map(|&a| f64::from(u8::from(a))).collect()));
            let picked = g.mul(picked, mask)?;
            let ent = g.mul(ent, mask)?;
            log_prob = Some(match log_prob {
                Some(acc) => g.add(acc, picked)?,
                None => picked,
            });
            entropy = Some(match entropy {
                Some(acc) => g.add(acc, ent)?,
                None => ent,
            });
            step_log_probs.push(picked);
            emitted.push(alive.clone());
            for i in 0..b {
                if alive[i] {
                    tokens[i].push(chosen[i] as u32);
                    if chosen[i] as u32 == EOS {
                        alive[i] = false;
                    }
                }
            }
            input = self.tokens.forward(g, &self.store, &chosen)?;
        }
        Ok(Rollout {
            messages: tokens.into_iter().map(Message).collect(),
            log_prob: log_prob.expect("at least one step"),
            entropy: entropy.expect("at least one step"),
            step_log_probs,
            emitted,
            rule_embedding,
        })
    }
}

impl Speaker for NeuralSpeaker {
    fn speak(&self, views: &[SpeakerView<'_>], decode: Decode, rng: &mut ChaCha8Rng) -> Result<Vec<Message>, GameError> {
        let mut g = Graph::new();
        let policy = match decode {
            Decode::Sample => TokenPolicy::Sample(rng),
            Decode::Greedy => TokenPolicy::Greedy,
        };
        Ok(self.rollout(&mut g, views, policy)?.messages)
    }
}

/// Listener outputs for one batch.
pub struct Judgement {
    /// `B × C` log-probabilities over candidates.
    pub log_scores: Var,
    pub predictions: Vec<usize>,
    /// `B × 1` log-probability of each prediction.
    pub log_prob: Var,
    pub state: Var,
}

#[derive(Clone, Debug)]
pub struct NeuralListener {
    pub arch: ArchConfig,
    pub channel: ChannelConfig,
    pub domain: AttributeDomain,
    pub store: ParamStore,
    rows: RowEncoder,
    tokens: Embedding,
    cell: GruCell,
    init: ParamId,
}

impl NeuralListener {
    pub fn new(arch: ArchConfig, channel: ChannelConfig, domain: AttributeDomain, seed: u64) -> Result<Self, GameError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let rows = RowEncoder::new(&mut store, &arch, &mut rng);
        let hidden = arch.hidden();
        let tokens = Embedding::new(&mut store, "h/tokens", channel.vocab_size + 1, arch.token_dim, &mut rng);
        let cell = GruCell::new(&mut store, "h/cell", arch.token_dim, hidden, &mut rng);
        let init = store.add("h/init", Matrix::zeros(1, hidden));
        Ok(Self {
            arch,
            channel,
            domain,
            store,
            rows,
            tokens,
            cell,
            init,
        })
    }

    /// `B × H` final decoder state; positions past a message's end leave the
    /// state unchanged.
    pub fn decode_messages(&self, g: &mut Graph, messages: &[Message]) -> Result<Var, GameError> {
        let b = messages.len();
        let init = g.param(&self.store, self.init);
        let mut h = g.rows(init, Arc::from(vec![0; b]))?;
        let steps = messages.iter().map(|m| m.0.len()).max().unwrap_or(0);
        for t in 0..steps {
            let toks: Vec<usize> = messages
                .iter()
                .map(|m| m.0.get(t).map_or(EOS as usize, |&x| x as usize))
                .collect();
            if toks.iter().any(|&x| x > self.channel.vocab_size) {
                return Err(GameError::Agent("message token outside the listener vocabulary".into()));
            }
            let x = self.tokens.forward(g, &self.store, &toks)?;
            let next = self.cell.forward(g, &self.store, x, h)?;
            if messages.iter().all(|m| t < m.0.len()) {
                h = next;
            } else {
                let mask = g.constant(Matrix::from_vec(
                    b,
                    1,
                    messages.iter().map(|m| f64::from(u8::from(t < m.0.len()))).collect(),
                ));
                let d = g.sub(next, h)?;
                let d = g.mul_col(d, mask)?;
                h = g.add(h, d)?;
            }
        }
        Ok(h)
    }

    /// `(C·B) × H` candidate-major rule embeddings `g(f(q1), f(q2), f(a_i))`.
    pub fn candidate_embeddings(&self, g: &mut Graph, views: &[ListenerView<'_>]) -> Result<Var, GameError> {
        let b = views.len();
        let c = views[0].candidates.len();
        if views.iter().any(|v| v.candidates.len() != c) {
            return Err(GameError::Agent("candidate counts differ within a batch".into()));
        }
        let k = self.arch.num_attributes;
        let panels = (0..2)
            .flat_map(|q| views.iter().map(move |v| &v.questions[q]))
            .chain((0..c).flat_map(|i| views.iter().map(move |v| &v.candidates[i])));
        let x = g.constant(Matrix::from_vec((2 + c) * b, k, normalized(panels, k, self.domain)));
        let e = self.rows.panels(g, &self.store, x)?;
        let q1: Vec<usize> = (0..c).flat_map(|_| 0..b).collect();
        let q2: Vec<usize> = (0..c).flat_map(|_| b..2 * b).collect();
        let a: Vec<usize> = (2 * b..(2 + c) * b).collect();
        let q1 = g.rows(e, Arc::from(q1))?;
        let q2 = g.rows(e, Arc::from(q2))?;
        let a = g.rows(e, Arc::from(a))?;
        Ok(self.rows.row(g, &self.store, &self.arch, [q1, q2, a])?)
    }

    pub fn judge(
        &self,
        g: &mut Graph,
        messages: &[Message],
        views: &[ListenerView<'_>],
        decode: Decode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Judgement, GameError> {
        let b = views.len();
        let c = views[0].candidates.len();
        let z = self.decode_messages(g, messages)?;
        let r = self.candidate_embeddings(g, views)?;
        let zr = g.rows(z, Arc::from((0..c).flat_map(|_| 0..b).collect::<Vec<_>>()))?;
        let prod = g.mul(r, zr)?;
        let dots = g.sum_cols(prod);
        let index: Vec<usize> = (0..b).flat_map(|bi| (0..c).map(move |i| i * b + bi)).collect();
        let logits = g.gather(dots, Arc::from(index), b, c)?;
        let (predictions, log_prob) = match decode {
            Decode::Sample => g.sample_categorical(logits, rng)?,
            Decode::Greedy => g.greedy_categorical(logits)?,
        };
        let log_scores = g.log_softmax(logits)?;
        Ok(Judgement {
            log_scores,
            predictions,
            log_prob,
            state: z,
        })
    }
}

impl Listener for NeuralListener {
    fn listen(
        &self,
        messages: &[Message],
        views: &[ListenerView<'_>],
        decode: Decode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ListenerOutput>, GameError> {
        if views.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let j = self.judge(&mut g, messages, views, decode, rng)?;
        let ls = g.value(j.log_scores);
        Ok(j.predictions
            .iter()
            .enumerate()
            .map(|(i, &prediction)| ListenerOutput {
                scores: ls.row(i).iter().map(|x| x.exp()).collect(),
                prediction,
            })
            .collect())
    }
}
