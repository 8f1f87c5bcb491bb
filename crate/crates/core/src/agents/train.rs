use std::borrow::Cow;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::neural::{NeuralListener, NeuralSpeaker, TokenPolicy};
use super::oracle::OracleCodebook;
use crate::forge::{derive_seed, Problem};
use crate::game::{Decode, GameError, ListenerView, Message, SpeakerView};
use crate::grad::{AdamW, AdamWConfig, Graph, Matrix, OptimizerState, ParamStore, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("{0}")]
    Config(String),
}

impl From<crate::grad::GradError> for TrainError {
    fn from(e: crate::grad::GradError) -> Self {
        TrainError::Game(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Weight λ of the speaker's entropy bonus.
    pub entropy_coef: f64,
    /// Subtract a running-mean reward baseline.
    pub baseline: bool,
    pub seed: u64,
    /// Problems scored for the per-epoch accuracy; `None` scores the whole
    /// training split.
    pub eval_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 512,
            optimizer: AdamWConfig::default(),
            entropy_coef: 0.01,
            baseline: false,
            seed: 0,
            eval_limit: None,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_acc: f64,
    pub reward_mean: f64,
    pub entropy_mean: f64,
}

/// Per-epoch training record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub const HEADER: &'static str = "epoch,train_acc,reward_mean,entropy_mean";

    pub fn final_acc(&self) -> Option<f64> {
        self.points.last().map(|p| p.train_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for p in &self.points {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                p.epoch, p.train_acc, p.reward_mean, p.entropy_mean
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != Self::HEADER {
            return None;
        }
        let points = lines
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                Some(CurvePoint {
                    epoch: f.first()?.parse().ok()?,
                    train_acc: f.get(1)?.parse().ok()?,
                    reward_mean: f.get(2)?.parse().ok()?,
                    entropy_mean: f.get(3)?.parse().ok()?,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self { points })
    }
}

/// Running mean of every reward seen so far; zero before the first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    sum: f64,
    count: u64,
}

impl RewardBaseline {
    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn update(&mut self, rewards: &[f64]) {
        self.sum += rewards.iter().sum::<f64>();
        self.count += rewards.len() as u64;
    }
}

/// Baseline value for a reward history.
pub fn reward_baseline(history: &[f64]) -> f64 {
    let mut b = RewardBaseline::default();
    b.update(history);
    b.value()
}

fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

fn column(values: &[f64]) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.to_vec())
}

fn diverged(epoch: usize, step: usize, detail: impl Into<String>) -> TrainError {
    TrainError::Diverged {
        epoch,
        step,
        detail: detail.into(),
    }
}

fn apply(
    g: &Graph,
    loss: Var,
    stores: &mut [(&mut ParamStore, &mut AdamW)],
    epoch: usize,
    step: usize,
) -> Result<(), TrainError> {
    let lv = g.value(loss).item();
    if !lv.is_finite() {
        return Err(diverged(epoch, step, format!("loss is {lv}")));
    }
    let grads = g.backward(loss)?;
    for (store, opt) in stores.iter_mut() {
        let gs = store.collect_grads(g, &grads);
        if gs.iter().flatten().any(|m| !m.all_finite()) {
            return Err(diverged(epoch, step, "non-finite gradient"));
        }
        opt.step(store, &gs);
        if !store.all_finite() {
            return Err(diverged(epoch, step, "non-finite parameters"));
        }
    }
    Ok(())
}

/// Evenly spaced indices of at most `limit` out of `n` items. Splits are
/// grouped by rule combination, so a prefix would cover only a few of them.
fn eval_indices(n: usize, limit: Option<usize>) -> Vec<usize> {
    let k = limit.unwrap_or(n).min(n);
    (0..k).map(|i| i * n / k).collect()
}

fn eval_subset(problems: &[Problem], limit: Option<usize>) -> Cow<'_, [Problem]> {
    if limit.is_none_or(|l| l >= problems.len()) {
        return Cow::Borrowed(problems);
    }
    Cow::Owned(eval_indices(problems.len(), limit).into_iter().map(|i| problems[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// `train_acc` is greedy per-token accuracy against the codebook.
    pub curve: Curve,
    pub token_accuracy: f64,
}

/// Greedy per-token agreement with `codebook` over the first `k` positions.
pub fn token_accuracy(
    speaker: &NeuralSpeaker,
    problems: &[Problem],
    codebook: &OracleCodebook,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let k = codebook.num_attributes;
    let mut hits = 0usize;
    for chunk in problems.chunks(batch_size.max(1)) {
        let views: Vec<SpeakerView> = chunk.iter().map(SpeakerView::of).collect();
        let mut g = Graph::new();
        let r = speaker.rollout(&mut g, &views, TokenPolicy::Greedy)?;
        for (p, m) in chunk.iter().zip(&r.messages) {
            for a in 0..k {
                if m.0.get(a).copied() == codebook.token_for(a, p.rules.0[a]) {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / (problems.len() * k).max(1) as f64)
}

/// Stage 1: per-token score-function updates with reward 1 when token `i`
/// is the codebook token of the rule on attribute `i`.
pub fn pretrain_speaker(
    speaker: &mut NeuralSpeaker,
    problems: &[Problem],
    codebook: &OracleCodebook,
    cfg: &TrainConfig,
) -> Result<PretrainReport, TrainError> {
    cfg.check()?;
    if problems.is_empty() {
        return Err(TrainError::Config("empty pretraining split".into()));
    }
    let k = codebook.num_attributes;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 1]));
    let mut opt = AdamW::new(cfg.optimizer, &speaker.store);
    let mut curve = Curve::default();
    for epoch in 1..=cfg.epochs {
        let (mut reward_sum, mut reward_n, mut ent_sum, mut ent_n) = (0.0, 0usize, 0.0, 0usize);
        for (step, idx) in batches(problems.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let batch: Vec<&Problem> = idx.iter().map(|&i| &problems[i]).collect();
            let views: Vec<SpeakerView> = batch.iter().map(|p| SpeakerView::of(p)).collect();
            let b = batch.len();
            let mut g = Graph::new();
            let r = speaker.rollout(&mut g, &views, TokenPolicy::Sample(&mut rng))?;
            let mut objective: Option<Var> = None;
            for (t, lp) in r.step_log_probs.iter().enumerate().take(k) {
                let rewards: Vec<f64> = batch
                    .iter()
                    .zip(&r.messages)
                    .enumerate()
                    .map(|(i, (p, m))| {
                        let hit = r.emitted[t][i] && m.0.get(t).copied() == codebook.token_for(t, p.rules.0[t]);
                        f64::from(u8::from(hit))
                    })
                    .collect();
                reward_sum += rewards.iter().sum::<f64>();
                reward_n += b;
                let w = g.constant(column(&rewards));
                let term = g.mul(*lp, w)?;
                objective = Some(match objective {
                    Some(o) => g.add(o, term)?,
                    None => term,
                });
            }
            reward_n += b * k.saturating_sub(r.step_log_probs.len());
            ent_sum += g.value(r.entropy).data().iter().sum::<f64>();
            ent_n += b;
            let Some(objective) = objective else { continue };
            let total = g.sum(objective);
            let loss = g.scale(total, -1.0 / b as f64);
            apply(&g, loss, &mut [(&mut speaker.store, &mut opt)], epoch, step)?;
        }
        let acc = token_accuracy(speaker, &eval_subset(problems, cfg.eval_limit), codebook, cfg.batch_size)?;
        curve.points.push(CurvePoint {
            epoch,
            train_acc: acc,
            reward_mean: reward_sum / reward_n.max(1) as f64,
            entropy_mean: ent_sum / ent_n.max(1) as f64,
        });
    }
    let token_accuracy = match curve.final_acc() {
        Some(a) => a,
        None => token_accuracy(speaker, &eval_subset(problems, cfg.eval_limit), codebook, cfg.batch_size)?,
    };
    Ok(PretrainReport { curve, token_accuracy })
}

/// Greedy accuracy of the neural pair.
pub fn pair_accuracy(
    speaker: &NeuralSpeaker,
    listener: &NeuralListener,
    problems: &[Problem],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = 0usize;
    for chunk in problems.chunks(batch_size.max(1)) {
        let sv: Vec<SpeakerView> = chunk.iter().map(SpeakerView::of).collect();
        let lv: Vec<ListenerView> = chunk.iter().map(ListenerView::of).collect();
        let mut g = Graph::new();
        let r = speaker.rollout(&mut g, &sv, TokenPolicy::Greedy)?;
        let j = listener.judge(&mut g, &r.messages, &lv, Decode::Greedy, &mut rng)?;
        hits += chunk
            .iter()
            .zip(&j.predictions)
            .filter(|(p, &y)| p.target_index == y)
            .count();
    }
    Ok(hits as f64 / problems.len().max(1) as f64)
}

/// Greedy accuracy of a listener on fixed messages.
pub fn listener_accuracy(
    listener: &NeuralListener,
    problems: &[Problem],
    messages: &[Message],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = 0usize;
    for (chunk, ms) in problems.chunks(batch_size.max(1)).zip(messages.chunks(batch_size.max(1))) {
        let lv: Vec<ListenerView> = chunk.iter().map(ListenerView::of).collect();
        let mut g = Graph::new();
        let j = listener.judge(&mut g, ms, &lv, Decode::Greedy, &mut rng)?;
        hits += chunk
            .iter()
            .zip(&j.predictions)
            .filter(|(p, &y)| p.target_index == y)
            .count();
    }
    Ok(hits as f64 / problems.len().max(1) as f64)
}

/// Everything besides the parameters that stage 2 carries between epochs.
/// Saving it alongside the agents makes a resumed run identical to an
/// uninterrupted one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub speaker_opt: OptimizerState,
    pub listener_opt: OptimizerState,
    pub baseline: RewardBaseline,
    pub curve: Curve,
}

impl JointState {
    pub fn new(cfg: &TrainConfig, speaker: &NeuralSpeaker, listener: &NeuralListener) -> Self {
        Self {
            speaker_opt: OptimizerState::new(cfg.optimizer, speaker.store.values()),
            listener_opt: OptimizerState::new(cfg.optimizer, listener.store.values()),
            baseline: RewardBaseline::default(),
            curve: Curve::default(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.curve.points.len()
    }
}

/// Stage 2: both agents learn from the shared binary reward.
///
/// Speaker objective `A·Σ_t log S(m_t|C) + λ·Σ_t H_t`, listener objective
/// `A·log L(ŷ|M,Q,A)`, where `A` is the reward, minus the running mean when
/// the baseline is on.
pub fn joint_train(
    speaker: &mut NeuralSpeaker,
    listener: &mut NeuralListener,
    problems: &[Problem],
    cfg: &TrainConfig,
) -> Result<Curve, TrainError> {
    let mut state = JointState::new(cfg, speaker, listener);
    joint_train_resume(speaker, listener, problems, cfg, &mut state)?;
    Ok(state.curve)
}

/// Continues stage 2 from `state` until `cfg.epochs` epochs are recorded.
pub fn joint_train_resume(
    speaker: &mut NeuralSpeaker,
    listener: &mut NeuralListener,
    problems: &[Problem],
    cfg: &TrainConfig,
    state: &mut JointState,
) -> Result<(), TrainError> {
    cfg.check()?;
    if problems.is_empty() {
        return Err(TrainError::Config("empty training split".into()));
    }
    if speaker.channel != listener.channel {
        return Err(TrainError::Config("speaker and listener channels differ".into()));
    }
    if state.speaker_opt.m.len() != speaker.store.len() || state.listener_opt.m.len() != listener.store.len() {
        return Err(TrainError::Config("optimizer state does not fit the agents".into()));
    }
    let mut s_opt = AdamW {
        state: state.speaker_opt.clone(),
    };
    let mut l_opt = AdamW {
        state: state.listener_opt.clone(),
    };
    let start_epoch = state.epochs_done();
    for epoch in start_epoch + 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 2, epoch as u64]));
        let (mut reward_sum, mut ent_sum) = (0.0, 0.0);
        for (step, idx) in batches(problems.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let batch: Vec<&Problem> = idx.iter().map(|&i| &problems[i]).collect();
            let sv: Vec<SpeakerView> = batch.iter().map(|p| SpeakerView::of(p)).collect();
            let lv: Vec<ListenerView> = batch.iter().map(|p| ListenerView::of(p)).collect();
            let b = batch.len() as f64;
            let mut g = Graph::new();
            let r = speaker.rollout(&mut g, &sv, TokenPolicy::Sample(&mut rng))?;
            let j = listener.judge(&mut g, &r.messages, &lv, Decode::Sample, &mut rng)?;
            let rewards: Vec<f64> = batch
                .iter()
                .zip(&j.predictions)
                .map(|(p, &y)| f64::from(u8::from(p.target_index == y)))
                .collect();
            let base = if cfg.baseline { state.baseline.value() } else { 0.0 };
            state.baseline.update(&rewards);
            reward_sum += rewards.iter().sum::<f64>();
            ent_sum += g.value(r.entropy).data().iter().sum::<f64>();
            let adv: Vec<f64> = rewards.iter().map(|x| x - base).collect();
            let a = g.constant(column(&adv));
            let s_term = g.mul(r.log_prob, a)?;
            let ent = g.scale(r.entropy, cfg.entropy_coef);
            let s_term = g.add(s_term, ent)?;
            let l_term = g.mul(j.log_prob, a)?;
            let both = g.add(s_term, l_term)?;
            let total = g.sum(both);
            let loss = g.scale(total, -1.0 / b);
            apply(
                &g,
                loss,
                &mut [(&mut speaker.store, &mut s_opt), (&mut listener.store, &mut l_opt)],
                epoch,
                step,
            )?;
        }
        let n = problems.len() as f64;
        state.speaker_opt = s_opt.state.clone();
        state.listener_opt = l_opt.state.clone();
        state.curve.points.push(CurvePoint {
            epoch,
            train_acc: pair_accuracy(speaker, listener, &eval_subset(problems, cfg.eval_limit), cfg.batch_size)?,
            reward_mean: reward_sum / n,
            entropy_mean: ent_sum / n,
        });
    }
    Ok(())
}

/// Trains a listener alone on fixed messages (one per problem); the
/// message-blocked audit and language transfer both reduce to this.
pub fn train_listener(
    listener: &mut NeuralListener,
    problems: &[Problem],
    messages: &[Message],
    cfg: &TrainConfig,
) -> Result<Curve, TrainError> {
    cfg.check()?;
    if problems.is_empty() || problems.len() != messages.len() {
        return Err(TrainError::Config("need one message per training problem".into()));
    }
    let mut opt = AdamW::new(cfg.optimizer, &listener.store);
    let mut baseline = RewardBaseline::default();
    let mut curve = Curve::default();
    let picked = eval_indices(problems.len(), cfg.eval_limit);
    let eval: Vec<Problem> = picked.iter().map(|&i| problems[i].clone()).collect();
    let eval_messages: Vec<Message> = picked.iter().map(|&i| messages[i].clone()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 3, epoch as u64]));
        let mut reward_sum = 0.0;
        for (step, idx) in batches(problems.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let lv: Vec<ListenerView> = idx.iter().map(|&i| ListenerView::of(&problems[i])).collect();
            let ms: Vec<Message> = idx.iter().map(|&i| messages[i].clone()).collect();
            let mut g = Graph::new();
            let j = listener.judge(&mut g, &ms, &lv, Decode::Sample, &mut rng)?;
            let rewards: Vec<f64> = idx
                .iter()
                .zip(&j.predictions)
                .map(|(&i, &y)| f64::from(u8::from(problems[i].target_index == y)))
                .collect();
            let base = if cfg.baseline { baseline.value() } else { 0.0 };
            baseline.update(&rewards);
            reward_sum += rewards.iter().sum::<f64>();
            let adv: Vec<f64> = rewards.iter().map(|x| x - base).collect();
            let a = g.constant(column(&adv));
            let term = g.mul(j.log_prob, a)?;
            let total = g.sum(term);
            let loss = g.scale(total, -1.0 / idx.len() as f64);
            apply(&g, loss, &mut [(&mut listener.store, &mut opt)], epoch, step)?;
        }
        curve.points.push(CurvePoint {
            epoch,
            train_acc: listener_accuracy(listener, &eval, &eval_messages, cfg.batch_size)?,
            reward_mean: reward_sum / problems.len() as f64,
            entropy_mean: 0.0,
        });
    }
    Ok(curve)
}
