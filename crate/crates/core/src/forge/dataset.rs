//! Dataset assembly: the main split, the generalization splits and the
//! speaker-pretraining set.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Forge, ForgeError, Problem};
use crate::par::par_map;
use crate::rules::{RuleSet, RuleVector, Value};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    /// Name of the registry in [`SplitManifest::registries`] the split uses.
    pub registry: String,
    pub candidates: usize,
    pub combos: Vec<RuleVector>,
    /// `None` when problems are spread round-robin over `combos`.
    pub problems_per_combo: Option<usize>,
    pub count: usize,
    pub path: String,
    #[serde(default)]
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub generator_seed: u64,
    pub n_values: Value,
    pub num_attributes: usize,
    pub registries: BTreeMap<String, RuleSet>,
    pub splits: BTreeMap<String, SplitEntry>,
}

impl SplitManifest {
    fn new(forge: &Forge, seed: u64) -> Self {
        let mut registries = BTreeMap::new();
        registries.insert(forge.rule_set().name.clone(), forge.rule_set().clone());
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            generator_seed: seed,
            n_values: forge.domain().cardinality(),
            num_attributes: forge.config().num_attributes,
            registries,
            splits: BTreeMap::new(),
        }
    }

    pub fn registry_for(&self, split: &str) -> Option<&RuleSet> {
        self.splits
            .get(split)
            .and_then(|e| self.registries.get(&e.registry))
    }
}

/// A manifest together with the problems of every split it declares.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: SplitManifest,
    pub problems: BTreeMap<String, Vec<Problem>>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Problem]> {
        self.problems.get(name).map(Vec::as_slice)
    }

    pub fn total_problems(&self) -> usize {
        self.problems.values().map(Vec::len).sum()
    }

    /// Combines datasets generated with the same seed, N and arity.
    pub fn merge(mut self, other: Dataset) -> Result<Dataset, ForgeError> {
        let (a, b) = (&self.manifest, &other.manifest);
        if a.generator_seed != b.generator_seed
            || a.n_values != b.n_values
            || a.num_attributes != b.num_attributes
        {
            return Err(ForgeError::Config(
                "cannot merge datasets with different seed, N or attribute count".into(),
            ));
        }
        for (name, reg) in other.manifest.registries {
            if let Some(existing) = self.manifest.registries.get(&name) {
                if *existing != reg {
                    return Err(ForgeError::Config(format!("conflicting registry `{name}`")));
                }
            }
            self.manifest.registries.insert(name, reg);
        }
        for (name, entry) in other.manifest.splits {
            if self.manifest.splits.contains_key(&name) {
                return Err(ForgeError::Config(format!("duplicate split `{name}`")));
            }
            self.manifest.splits.insert(name, entry);
        }
        self.problems.extend(other.problems);
        Ok(self)
    }

    fn add_split(&mut self, name: &str, forge: &Forge, combos: Vec<RuleVector>, per_combo: Option<usize>, problems: Vec<Problem>) {
        self.manifest.splits.insert(
            name.to_string(),
            SplitEntry {
                registry: forge.rule_set().name.clone(),
                candidates: forge.config().candidates,
                combos,
                problems_per_combo: per_combo,
                count: problems.len(),
                path: format!("{name}.jsonl"),
                sha256: String::new(),
            },
        );
        self.problems.insert(name.to_string(), problems);
    }
}

/// Mixes `parts` into a child seed (splitmix64 finalizer chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

fn salt(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generates `instances` for every `(combo_index, combo)` pair, in order.
fn generate_instances(
    forge: &Forge,
    seed: u64,
    family: &str,
    combos: &[(usize, RuleVector)],
    instances: std::ops::Range<usize>,
) -> Result<Vec<Problem>, ForgeError> {
    let family = salt(family);
    let jobs: Vec<(u64, &RuleVector)> = combos
        .iter()
        .flat_map(|(ci, combo)| {
            instances
                .clone()
                .map(move |inst| (derive_seed(&[seed, family, *ci as u64, inst as u64]), combo))
        })
        .collect();
    let results = par_map(&jobs, |(s, combo)| forge.generate_problem(combo, *s));
    let mut problems = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    for (i, p) in problems.iter_mut().enumerate() {
        p.id = i as u64;
    }
    Ok(problems)
}

fn indexed(combos: &[RuleVector], keep: impl Fn(&RuleVector) -> bool) -> Vec<(usize, RuleVector)> {
    combos
        .iter()
        .cloned()
        .enumerate()
        .filter(|(_, c)| keep(c))
        .collect()
}

fn strip(combos: &[(usize, RuleVector)]) -> Vec<RuleVector> {
    combos.iter().map(|(_, c)| c.clone()).collect()
}

/// Every rule combination with `problems_per_combo` problems each; the first
/// half of each combo's instances goes to `train`, the rest to `test`.
pub fn build_main_dataset(
    forge: &Forge,
    problems_per_combo: usize,
    seed: u64,
) -> Result<Dataset, ForgeError> {
    if !problems_per_combo.is_multiple_of(2) {
        return Err(ForgeError::Config(format!(
            "problems per combo must be even, got {problems_per_combo}"
        )));
    }
    let k = forge.config().num_attributes;
    let all = indexed(&forge.rule_set().all_combinations(k), |_| true);
    let half = problems_per_combo / 2;
    let mut ds = Dataset {
        manifest: SplitManifest::new(forge, seed),
        problems: BTreeMap::new(),
    };
    let train = generate_instances(forge, seed, "main", &all, 0..half)?;
    let test = generate_instances(forge, seed, "main", &all, half..problems_per_combo)?;
    ds.add_split("train", forge, strip(&all), Some(half), train);
    ds.add_split("test", forge, strip(&all), Some(half), test);
    Ok(ds)
}

/// Layout of the generalization splits; rule numbers are 1-based positions
/// in the registry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizationConfig {
    /// Seen combos moved to the interpolation split.
    pub inpo_combos: usize,
    pub problems_per_combo: usize,
    /// Rule held out on every attribute.
    pub held_out_rule: usize,
    /// Rule held out on each attribute for the level-1 split.
    pub l1_exclusions: Vec<usize>,
}

impl GeneralizationConfig {
    /// 300 interpolation combos, 10 problems per combo, rule 8 held out, and
    /// rules (6, 3, 4, 8) excluded per attribute for level 1.
    pub fn standard() -> Self {
        Self {
            inpo_combos: 300,
            problems_per_combo: 10,
            held_out_rule: 8,
            l1_exclusions: vec![6, 3, 4, 8],
        }
    }
}

/// Builds `gen_train`, `gen_id`, `inpo_ood`, `expo_ood_l2` (held-out rule
/// family) and `gen_train_l1`, `expo_ood_l1` (per-attribute exclusions).
pub fn build_generalization_splits(
    forge: &Forge,
    config: &GeneralizationConfig,
    seed: u64,
) -> Result<Dataset, ForgeError> {
    let set = forge.rule_set();
    let k = forge.config().num_attributes;
    let n = set.len();
    let bad_rule = |r: usize| r == 0 || r > n;
    if bad_rule(config.held_out_rule)
        || config.l1_exclusions.len() != k
        || config.l1_exclusions.iter().any(|&r| bad_rule(r))
    {
        return Err(ForgeError::Config(format!(
            "generalization config does not fit {k} attributes and {n} rules"
        )));
    }
    let all = set.all_combinations(k);
    let held = set.rules[config.held_out_rule - 1];
    let seen = indexed(&all, |c| !c.0.contains(&held));
    let unseen = indexed(&all, |c| c.0.contains(&held));
    if config.inpo_combos > seen.len() {
        return Err(ForgeError::Config(format!(
            "{} interpolation combos requested from {} seen combos",
            config.inpo_combos,
            seen.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, salt("inpo")]));
    let mut order: Vec<usize> = (0..seen.len()).collect();
    order.shuffle(&mut rng);
    let inpo_set: BTreeSet<usize> = order[..config.inpo_combos].iter().copied().collect();
    let (inpo, train): (Vec<_>, Vec<_>) = seen
        .iter()
        .cloned()
        .enumerate()
        .partition(|(i, _)| inpo_set.contains(i));
    let inpo: Vec<(usize, RuleVector)> = inpo.into_iter().map(|(_, c)| c).collect();
    let train: Vec<(usize, RuleVector)> = train.into_iter().map(|(_, c)| c).collect();

    let excluded = |c: &RuleVector| {
        c.0.iter()
            .zip(&config.l1_exclusions)
            .any(|(r, &x)| *r == set.rules[x - 1])
    };
    let l1_seen = indexed(&all, |c| !excluded(c));
    let l1_test = indexed(&all, excluded);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, salt("l1-drop")]));
    let mut order: Vec<usize> = (0..l1_seen.len()).collect();
    order.shuffle(&mut rng);
    let dropped: BTreeSet<usize> = order[..config.inpo_combos.min(l1_seen.len())]
        .iter()
        .copied()
        .collect();
    let l1_train: Vec<(usize, RuleVector)> = l1_seen
        .iter()
        .cloned()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, c)| c)
        .collect();

    let m = config.problems_per_combo;
    let mut ds = Dataset {
        manifest: SplitManifest::new(forge, seed),
        problems: BTreeMap::new(),
    };
    let p = generate_instances(forge, seed, "gen", &train, 0..m)?;
    ds.add_split("gen_train", forge, strip(&train), Some(m), p);
    let p = generate_instances(forge, seed, "gen", &train, m..2 * m)?;
    ds.add_split("gen_id", forge, strip(&train), Some(m), p);
    let p = generate_instances(forge, seed, "gen", &inpo, 0..m)?;
    ds.add_split("inpo_ood", forge, strip(&inpo), Some(m), p);
    let p = generate_instances(forge, seed, "gen", &unseen, 0..m)?;
    ds.add_split("expo_ood_l2", forge, strip(&unseen), Some(m), p);
    let p = generate_instances(forge, seed, "gen-l1", &l1_train, 0..m)?;
    ds.add_split("gen_train_l1", forge, strip(&l1_train), Some(m), p);
    let p = generate_instances(forge, seed, "gen-l1", &l1_test, 0..m)?;
    ds.add_split("expo_ood_l1", forge, strip(&l1_test), Some(m), p);
    Ok(ds)
}

/// `count` problems over the forge's registry, spread round-robin over all
/// combos so frequencies differ by at most one.
pub fn build_pretrain_set(forge: &Forge, count: usize, seed: u64) -> Result<Dataset, ForgeError> {
    let k = forge.config().num_attributes;
    let all = forge.rule_set().all_combinations(k);
    let family = salt("pretrain");
    let jobs: Vec<(u64, &RuleVector)> = (0..count)
        .map(|i| {
            let ci = i % all.len();
            (
                derive_seed(&[seed, family, ci as u64, (i / all.len()) as u64]),
                &all[ci],
            )
        })
        .collect();
    let mut problems = par_map(&jobs, |(s, c)| forge.generate_problem(c, *s))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    for (i, p) in problems.iter_mut().enumerate() {
        p.id = i as u64;
    }
    let mut ds = Dataset {
        manifest: SplitManifest::new(forge, seed),
        problems: BTreeMap::new(),
    };
    ds.add_split("pretrain", forge, all, None, problems);
    Ok(ds)
}
