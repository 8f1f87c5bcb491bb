use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LanguageDump, MetricError};
use crate::agents::{train_listener, Curve, NeuralListener, OracleCodebook, TrainConfig};
use crate::forge::{derive_seed, Dataset, Problem};
use crate::game::{run_batch, ChannelConfig, EpisodeMode, Listener, Message, Speaker};
use crate::par::par_map;

/// Splits scored by [`generalization_report`], in report order.
pub const GENERALIZATION_SPLITS: [&str; 4] = ["gen_id", "inpo_ood", "expo_ood_l1", "expo_ood_l2"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub split: String,
    pub problems: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub splits: Vec<SplitAccuracy>,
}

impl GeneralizationReport {
    pub fn accuracy(&self, split: &str) -> Option<f64> {
        self.splits.iter().find(|s| s.split == split).map(|s| s.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,problems,accuracy\n");
        for r in &self.splits {
            s.push_str(&format!("{},{},{:.6}\n", r.split, r.problems, r.accuracy));
        }
        s
    }
}

/// Greedy accuracy on each of `splits`.
pub fn generalization_report(
    speaker: &dyn Speaker,
    listener: &dyn Listener,
    channel: &ChannelConfig,
    dataset: &Dataset,
    splits: &[&str],
    batch_size: usize,
) -> Result<GeneralizationReport, MetricError> {
    let mut out = Vec::new();
    for &name in splits {
        let problems = dataset
            .split(name)
            .ok_or_else(|| MetricError::MissingSplit(name.to_string()))?;
        if problems.is_empty() {
            return Err(MetricError::EmptySplit(name.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hits = 0.0;
        for chunk in problems.chunks(batch_size.max(1)) {
            let r = run_batch(speaker, listener, channel, chunk, EpisodeMode::Greedy, &mut rng)?;
            hits += r.accuracy * chunk.len() as f64;
        }
        out.push(SplitAccuracy {
            split: name.to_string(),
            problems: problems.len(),
            accuracy: hits / problems.len() as f64,
        });
    }
    Ok(GeneralizationReport { splits: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockedAudit {
    pub curve: Curve,
    pub final_accuracy: f64,
}

/// Trains a fresh listener that only ever receives the blocked message.
pub fn message_blocked_audit(
    listener: impl FnOnce() -> NeuralListener,
    problems: &[Problem],
    cfg: &TrainConfig,
) -> Result<BlockedAudit, MetricError> {
    let mut l = listener();
    let messages = vec![l.channel.blocked_message(); problems.len()];
    let curve = train_listener(&mut l, problems, &messages, cfg)?;
    Ok(BlockedAudit {
        final_accuracy: curve.final_acc().unwrap_or(0.0),
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtlReport {
    pub agent: Curve,
    pub rule: Curve,
    pub random: Curve,
}

impl EtlReport {
    pub fn finals(&self) -> (f64, f64, f64) {
        let f = |c: &Curve| c.final_acc().unwrap_or(0.0);
        (f(&self.agent), f(&self.rule), f(&self.random))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("language,epoch,train_acc,reward_mean\n");
        for (name, c) in [("agent", &self.agent), ("rule", &self.rule), ("random", &self.random)] {
            for p in &c.points {
                s.push_str(&format!("{name},{},{:.6},{:.6}\n", p.epoch, p.train_acc, p.reward_mean));
            }
        }
        s
    }
}

/// Trains three fresh listeners on `target`: one reading the source
/// language mapped by rule combination, one reading the rule codeword, and
/// one reading source messages assigned to problems at random.
pub fn etl_transfer(
    source: &LanguageDump,
    target: &[Problem],
    codebook: &OracleCodebook,
    listener: impl Fn() -> NeuralListener + Sync,
    cfg: &TrainConfig,
) -> Result<EtlReport, MetricError> {
    let agent = source.map_onto(target)?;
    let rule = target
        .iter()
        .map(|p| codebook.encode(&p.rules))
        .collect::<Result<Vec<Message>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x5AFF1E]));
    let random = source.random_mapping(target, &mut rng)?;
    let jobs = [agent, rule, random];
    let mut curves = par_map(&jobs, |msgs| {
        let mut l = listener();
        train_listener(&mut l, target, msgs, cfg)
    })
    .into_iter();
    let mut next = || curves.next().expect("three curves");
    Ok(EtlReport {
        agent: next()?,
        rule: next()?,
        random: next()?,
    })
}
