use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, RunConfig, RunDir, CONFIG_FILE};
use crate::agents::{
    joint_train_resume, pretrain_speaker, Curve, Fallback, JointState, NeuralListener, NeuralSpeaker,
    OracleCodebook, OracleListener, OracleSpeaker, PretrainReport,
};
use crate::forge::fixtures::perturbation_variant;
use crate::forge::{
    audit_problem, build_generalization_splits, build_main_dataset, build_pretrain_set, derive_seed,
    load_dataset, serialize_dataset, Dataset, Forge, ForgeConfig, Problem, MANIFEST_FILE,
};
use crate::game::{run_batch, write_episode_log, EpisodeMode, Listener, Speaker};
use crate::grad::Checkpoint;
use crate::metrics::{
    etl_transfer, generalization_report, message_blocked_audit, token_distribution, topsim, BlockedAudit,
    EtlReport, GeneralizationReport, LanguageDump, Space, TokenTable, TopsimReport, GENERALIZATION_SPLITS,
};
use crate::par::par_map;
use crate::rules::{RuleSet, Value};

pub const SPEAKER_PRETRAIN_FILE: &str = "speaker_pretrain.ckpt.json";
pub const SPEAKER_FILE: &str = "speaker.ckpt.json";
pub const LISTENER_FILE: &str = "listener.ckpt.json";
pub const JOINT_STATE_FILE: &str = "joint_state.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// The joint-game dataset and the speaker-pretraining set of a config.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub main: Dataset,
    pub pretrain: Dataset,
}

impl Datasets {
    pub fn split(&self, name: &str) -> Result<&[Problem], HarnessError> {
        self.main
            .split(name)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| HarnessError::Usage(format!("config has no `{name}` split")))
    }

    /// Problems both training stages and the language metrics run on.
    pub fn train(&self, cfg: &RunConfig) -> Result<&[Problem], HarnessError> {
        self.split(&cfg.data.train_split)
    }

    pub fn pretrain_problems(&self) -> &[Problem] {
        self.pretrain.split("pretrain").unwrap_or(&[])
    }
}

pub fn build_datasets(cfg: &RunConfig) -> Result<Datasets, HarnessError> {
    cfg.validate()?;
    let d = &cfg.data;
    let domain = d.domain()?;
    let forge = Forge::new(ForgeConfig::new(d.rule_set(), domain, d.num_attributes))?;
    let mut main: Option<Dataset> = None;
    if d.problems_per_combo > 0 {
        main = Some(build_main_dataset(&forge, d.problems_per_combo, d.seed)?);
    }
    if let Some(g) = &d.generalization {
        let gen = build_generalization_splits(&forge, g, d.seed)?;
        main = Some(match main {
            Some(m) => m.merge(gen)?,
            None => gen,
        });
    }
    let main = main.ok_or_else(|| HarnessError::Usage("config generates no joint-game problems".into()))?;
    let pforge = Forge::new(
        ForgeConfig::new(RuleSet::pretrain(), domain, d.num_attributes).with_candidates(d.pretrain_candidates),
    )?;
    let pretrain = build_pretrain_set(&pforge, d.pretrain_problems, d.seed)?;
    Ok(Datasets { main, pretrain })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub dataset: String,
    pub split: String,
    pub combos: usize,
    pub problems: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub dir: PathBuf,
    pub splits: Vec<SplitSummary>,
}

impl GenerateOutcome {
    pub fn split(&self, name: &str) -> Option<&SplitSummary> {
        self.splits.iter().find(|s| s.split == name)
    }
}

/// Writes `data/` (joint game) and `pretrain/` into a new run directory.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<GenerateOutcome, HarnessError> {
    let ds = build_datasets(cfg)?;
    let dir = RunDir::create(out, "generate", cfg)?;
    let mut splits = Vec::new();
    for (name, dataset) in [("data", &ds.main), ("pretrain", &ds.pretrain)] {
        let manifest = serialize_dataset(dataset, &dir.file(name))?;
        for (split, e) in &manifest.splits {
            splits.push(SplitSummary {
                dataset: name.into(),
                split: split.clone(),
                combos: e.combos.len(),
                problems: e.count,
                sha256: e.sha256.clone(),
            });
        }
    }
    let outcome = GenerateOutcome {
        dir: dir.path.clone(),
        splits,
    };
    dir.write_json(SUMMARY_FILE, &outcome)?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuditOptions {
    /// Audit perturbation-generated variants of every problem instead.
    pub perturbation: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub problems: usize,
    pub violations: usize,
    /// Problems with at least one violation, per split.
    pub failing: BTreeMap<String, usize>,
    /// Up to 20 rendered violations.
    pub examples: Vec<String>,
}

impl AuditOutcome {
    pub fn is_clean(&self) -> bool {
        self.violations == 0
    }
}

fn dataset_dirs(path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs: Vec<PathBuf> = ["data", "pretrain"]
        .iter()
        .map(|d| path.join(d))
        .filter(|d| d.join(MANIFEST_FILE).is_file())
        .collect();
    if dirs.is_empty() {
        return Err(HarnessError::Usage(format!(
            "{}: neither a dataset directory nor a generate run",
            path.display()
        )));
    }
    Ok(dirs)
}

/// Re-derives every guarantee of every stored problem.
pub fn cmd_audit(path: &Path, opts: AuditOptions) -> Result<AuditOutcome, HarnessError> {
    let mut outcome = AuditOutcome::default();
    for dir in dataset_dirs(path)? {
        let ds = load_dataset(&dir).map_err(|e| HarnessError::Validation(e.to_string()))?;
        let domain = crate::rules::AttributeDomain::new(ds.manifest.n_values)
            .map_err(|e| HarnessError::Validation(e.to_string()))?;
        for (split, problems) in &ds.problems {
            let set = ds
                .manifest
                .registry_for(split)
                .ok_or_else(|| HarnessError::Validation(format!("split `{split}` has no registry")))?;
            let reports = par_map(problems, |p| {
                if opts.perturbation {
                    audit_problem(&perturbation_variant(p, domain), set, domain)
                } else {
                    audit_problem(p, set, domain)
                }
            });
            outcome.problems += problems.len();
            let mut failing = 0;
            for r in reports.iter().filter(|r| !r.is_clean()) {
                failing += 1;
                outcome.violations += r.violations.len();
                for v in &r.violations {
                    if outcome.examples.len() < 20 {
                        outcome.examples.push(format!("{split}#{}: {v}", r.problem_id));
                    }
                }
            }
            if failing > 0 {
                outcome.failing.insert(split.clone(), failing);
            }
        }
    }
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Joint,
    Both,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainOptions {
    pub stage: Stage,
    /// Skip stage 1 and start stage 2 from a fresh speaker.
    pub no_pretrain: bool,
    /// A previous train run: continue its stage 2, or start stage 2 from its
    /// pretrained speaker.
    pub resume: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            stage: Stage::Both,
            no_pretrain: false,
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub pretrain: Option<PretrainReport>,
    pub curve: Option<Curve>,
    /// Greedy accuracy of the final pair on the held-out split.
    pub test_accuracy: Option<f64>,
}

impl TrainOutcome {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.curve.as_ref().and_then(Curve::final_acc)
    }
}

fn fresh_speaker(cfg: &RunConfig, seed: u64) -> Result<NeuralSpeaker, HarnessError> {
    Ok(NeuralSpeaker::new(cfg.arch.clone(), cfg.channel, cfg.data.domain()?, seed)?)
}

fn fresh_listener(cfg: &RunConfig, seed: u64) -> Result<NeuralListener, HarnessError> {
    Ok(NeuralListener::new(cfg.arch.clone(), cfg.channel, cfg.data.domain()?, seed)?)
}

fn load_speaker(cfg: &RunConfig, path: &Path) -> Result<NeuralSpeaker, HarnessError> {
    let mut s = fresh_speaker(cfg, 0)?;
    Checkpoint::load(path)?.apply(&mut s.store)?;
    Ok(s)
}

/// The stage-2 pair stored in a train run.
pub fn load_agents(cfg: &RunConfig, run: &Path) -> Result<(NeuralSpeaker, NeuralListener), HarnessError> {
    let speaker = load_speaker(cfg, &run.join(SPEAKER_FILE))?;
    let mut listener = fresh_listener(cfg, 0)?;
    Checkpoint::load(&run.join(LISTENER_FILE))?.apply(&mut listener.store)?;
    Ok((speaker, listener))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
}

fn held_out<'a>(ds: &'a Datasets, cfg: &RunConfig) -> Result<&'a [Problem], HarnessError> {
    let name = if cfg.data.train_split == "gen_train" { "gen_id" } else { "test" };
    ds.split(name)
}

/// Stage 1, stage 2 or both, into a new run directory.
pub fn cmd_train(cfg: &RunConfig, out: &Path, opts: &TrainOptions) -> Result<TrainOutcome, HarnessError> {
    if opts.no_pretrain && opts.stage == Stage::Pretrain {
        return Err(HarnessError::Usage("--no-pretrain contradicts --stage pretrain".into()));
    }
    if opts.stage == Stage::Joint && !opts.no_pretrain && opts.resume.is_none() {
        return Err(HarnessError::Usage(
            "--stage joint needs --resume <train run> or --no-pretrain".into(),
        ));
    }
    let (speaker_seed, message_seed, listener_seed) = cfg.agent_seeds();
    // resolve what to resume from before creating the run directory
    #[allow(clippy::large_enum_variant)]
    enum Start {
        Fresh,
        Pretrained(NeuralSpeaker),
        Joint(NeuralSpeaker, NeuralListener, JointState),
    }
    let start = match &opts.resume {
        None => Start::Fresh,
        Some(prev) if prev.join(JOINT_STATE_FILE).is_file() => {
            let (s, l) = load_agents(cfg, prev)?;
            Start::Joint(s, l, read_json(&prev.join(JOINT_STATE_FILE))?)
        }
        Some(prev) if prev.join(SPEAKER_PRETRAIN_FILE).is_file() => {
            Start::Pretrained(load_speaker(cfg, &prev.join(SPEAKER_PRETRAIN_FILE))?)
        }
        Some(prev) => {
            return Err(HarnessError::Usage(format!(
                "{}: no checkpoint to resume from",
                prev.display()
            )))
        }
    };
    if opts.resume.is_some() && opts.stage == Stage::Pretrain {
        return Err(HarnessError::Usage("--resume only applies to stage 2".into()));
    }

    let ds = build_datasets(cfg)?;
    let dir = RunDir::create(out, "train", cfg)?;
    let mut outcome = TrainOutcome {
        dir: dir.path.clone(),
        pretrain: None,
        curve: None,
        test_accuracy: None,
    };

    let (mut speaker, mut listener, mut state) = match start {
        Start::Joint(s, l, st) => (s, l, Some(st)),
        Start::Pretrained(s) => (s, fresh_listener(cfg, listener_seed)?, None),
        Start::Fresh => {
            let mut s = fresh_speaker(cfg, speaker_seed)?;
            if !opts.no_pretrain {
                let codebook = OracleCodebook::new(RuleSet::pretrain(), cfg.data.num_attributes, cfg.channel)?;
                let report = pretrain_speaker(&mut s, ds.pretrain_problems(), &codebook, &cfg.pretrain)?;
                Checkpoint::from_store(&s.store).save(&dir.file(SPEAKER_PRETRAIN_FILE))?;
                report.curve.write_csv(&dir.file("pretrain_curve.csv")).map_err(io_err(&dir.path))?;
                outcome.pretrain = Some(report);
            }
            (s, fresh_listener(cfg, listener_seed)?, None)
        }
    };
    if opts.stage == Stage::Pretrain {
        dir.write_json(SUMMARY_FILE, &outcome)?;
        return Ok(outcome);
    }
    let mut state = match state.take() {
        Some(st) => st,
        None => {
            speaker = speaker.with_fresh_message_module(cfg.channel, message_seed)?;
            JointState::new(&cfg.joint, &speaker, &listener)
        }
    };
    let train = ds.train(cfg)?;
    joint_train_resume(&mut speaker, &mut listener, train, &cfg.joint, &mut state)?;
    Checkpoint::from_store(&speaker.store).save(&dir.file(SPEAKER_FILE))?;
    Checkpoint::from_store(&listener.store).save(&dir.file(LISTENER_FILE))?;
    dir.write_json(JOINT_STATE_FILE, &state)?;
    state.curve.write_csv(&dir.file("curve.csv")).map_err(io_err(&dir.path))?;

    let test = held_out(&ds, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut episodes = Vec::with_capacity(test.len());
    for chunk in test.chunks(cfg.joint.batch_size.max(1)) {
        let r = run_batch(&speaker, &listener, &cfg.channel, chunk, EpisodeMode::Greedy, &mut rng)?;
        episodes.extend(r.episodes);
    }
    let path = dir.file("episodes.jsonl");
    write_episode_log(&path, test, &episodes).map_err(io_err(&path))?;
    outcome.test_accuracy = Some(episodes.iter().map(|e| f64::from(e.reward)).sum::<f64>() / test.len() as f64);
    outcome.curve = Some(state.curve);
    dir.write_json(SUMMARY_FILE, &outcome)?;
    Ok(outcome)
}

/// Which language a metric reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageSource {
    /// Greedy messages of a trained speaker.
    Agent,
    /// The rule codebook.
    Oracle,
    /// Independent random full-length messages.
    Random,
}

fn oracle_pair(cfg: &RunConfig) -> Result<(OracleSpeaker, OracleListener), HarnessError> {
    let codebook = OracleCodebook::new(cfg.data.rule_set(), cfg.data.num_attributes, cfg.channel)?;
    Ok((
        OracleSpeaker {
            codebook: codebook.clone(),
        },
        OracleListener {
            codebook,
            domain: cfg.data.domain()?,
            fallback: Fallback::UniformRandom,
        },
    ))
}

fn require_run(run: Option<&Path>, command: &str) -> Result<PathBuf, HarnessError> {
    run.map(Path::to_path_buf).ok_or_else(|| {
        HarnessError::Usage(format!("{command} on agent language needs a train run directory"))
    })
}

fn language(
    cfg: &RunConfig,
    run: Option<&Path>,
    source: LanguageSource,
    problems: &[Problem],
    command: &str,
) -> Result<LanguageDump, HarnessError> {
    let domain = cfg.data.domain()?;
    Ok(match source {
        LanguageSource::Agent => {
            let (speaker, _) = load_agents(cfg, &require_run(run, command)?)?;
            LanguageDump::from_speaker(&speaker, problems, domain, cfg.joint.batch_size)?
        }
        LanguageSource::Oracle => {
            let (s, _) = oracle_pair(cfg)?;
            LanguageDump::from_codebook(&s.codebook, problems, domain)?
        }
        LanguageSource::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x7A4D]));
            LanguageDump::random(problems, cfg.channel, domain, &mut rng)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score the symbolic oracle pair instead of the run's agents.
    pub oracle: bool,
    pub blocked: bool,
    pub tokens: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            oracle: false,
            blocked: true,
            tokens: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub dir: PathBuf,
    pub generalization: GeneralizationReport,
    pub blocked: Option<BlockedAudit>,
    /// Final greedy train accuracy of the run being audited.
    pub with_message_accuracy: Option<f64>,
    pub tokens: Option<TokenTable>,
}

pub fn cmd_eval(cfg: &RunConfig, run: Option<&Path>, out: &Path, opts: EvalOptions) -> Result<EvalOutcome, HarnessError> {
    let ds = build_datasets(cfg)?;
    let agents = if opts.oracle {
        None
    } else {
        Some(load_agents(cfg, &require_run(run, "eval")?)?)
    };
    let dir = RunDir::create(out, "eval", cfg)?;
    let splits: Vec<&str> = std::iter::once("test")
        .chain(GENERALIZATION_SPLITS)
        .filter(|s| ds.main.split(s).is_some_and(|p| !p.is_empty()))
        .collect();
    let oracle = oracle_pair(cfg)?;
    let (speaker, listener): (&dyn Speaker, &dyn Listener) = match &agents {
        Some((s, l)) => (s, l),
        None => (&oracle.0, &oracle.1),
    };
    let generalization = generalization_report(speaker, listener, &cfg.channel, &ds.main, &splits, cfg.joint.batch_size)?;
    dir.write_text("generalization.csv", &generalization.to_csv())?;

    let train = ds.train(cfg)?;
    let mut outcome = EvalOutcome {
        dir: dir.path.clone(),
        generalization,
        blocked: None,
        with_message_accuracy: None,
        tokens: None,
    };
    if opts.blocked {
        let (_, _, listener_seed) = cfg.agent_seeds();
        let factory = || fresh_listener(cfg, listener_seed);
        factory()?;
        let audit = message_blocked_audit(|| factory().expect("checked above"), train, &cfg.joint)?;
        audit.curve.write_csv(&dir.file("blocked_curve.csv")).map_err(io_err(&dir.path))?;
        outcome.blocked = Some(audit);
        if let Some(run) = run.filter(|_| !opts.oracle) {
            let text = fs::read_to_string(run.join("curve.csv")).map_err(io_err(run))?;
            outcome.with_message_accuracy = Curve::from_csv(&text).and_then(|c| c.final_acc());
        }
    }
    if opts.tokens {
        let source = if opts.oracle { LanguageSource::Oracle } else { LanguageSource::Agent };
        let dump = language(cfg, run, source, train, "eval")?;
        let table = token_distribution(&dump, &cfg.data.rule_set(), cfg.channel.max_len);
        dir.write_text("tokens.csv", &table.to_csv())?;
        outcome.tokens = Some(table);
    }
    dir.write_json(SUMMARY_FILE, &outcome)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopsimOutcome {
    pub dir: PathBuf,
    pub source: LanguageSource,
    pub distinct_messages: usize,
    pub rule: TopsimReport,
    pub panel: TopsimReport,
}

/// Rule-space and panel-space topographic similarity of one language over
/// the training problems.
pub fn cmd_topsim(cfg: &RunConfig, run: Option<&Path>, out: &Path, source: LanguageSource) -> Result<TopsimOutcome, HarnessError> {
    let ds = build_datasets(cfg)?;
    let dump = language(cfg, run, source, ds.train(cfg)?, "topsim")?;
    let dir = RunDir::create(out, "topsim", cfg)?;
    let m = &cfg.metrics;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x7095]));
    let rule = topsim(&dump, Space::Rule, m.topsim_samples, m.topsim_runs, &mut rng)?;
    let panel = topsim(&dump, Space::Panel, m.topsim_samples, m.topsim_runs, &mut rng)?;
    let outcome = TopsimOutcome {
        dir: dir.path.clone(),
        source,
        distinct_messages: dump.distinct_messages(),
        rule,
        panel,
    };
    dir.write_json(SUMMARY_FILE, &outcome)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtlPair {
    pub source: Value,
    pub target: Value,
    pub report: EtlReport,
    /// Symbolic oracle pair accuracy on the target problems.
    pub oracle_accuracy: f64,
}

impl EtlPair {
    /// Final accuracy of the rule-codeword listener relative to the oracle.
    pub fn oracle_ratio(&self) -> f64 {
        self.report.finals().1 / self.oracle_accuracy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtlOutcome {
    pub dir: PathBuf,
    pub source: LanguageSource,
    pub pairs: Vec<EtlPair>,
}

/// Transfers the source language to fresh listeners on every configured
/// target attribute cardinality.
pub fn cmd_etl(cfg: &RunConfig, run: Option<&Path>, out: &Path, source: LanguageSource) -> Result<EtlOutcome, HarnessError> {
    let ds = build_datasets(cfg)?;
    let dump = language(cfg, run, source, ds.train(cfg)?, "etl")?;
    let (oracle_s, oracle_l) = oracle_pair(cfg)?;
    let dir = RunDir::create(out, "etl", cfg)?;
    let (_, _, listener_seed) = cfg.agent_seeds();
    let mut pairs = Vec::new();
    for &target in &cfg.metrics.etl_targets {
        let mut tcfg = cfg.clone();
        tcfg.data.values = target;
        tcfg.data.generalization = None;
        if tcfg.data.problems_per_combo == 0 {
            return Err(HarnessError::Usage("language transfer needs a main dataset".into()));
        }
        tcfg.data.train_split = "train".into();
        let domain = tcfg.data.domain()?;
        let forge = Forge::new(ForgeConfig::new(tcfg.data.rule_set(), domain, tcfg.data.num_attributes))?;
        let tds = build_main_dataset(&forge, tcfg.data.problems_per_combo, tcfg.data.seed)?;
        let problems = tds.split("train").unwrap_or(&[]);
        let listener = || {
            NeuralListener::new(cfg.arch.clone(), cfg.channel, domain, listener_seed).expect("validated config")
        };
        let report = etl_transfer(&dump, problems, &oracle_s.codebook, listener, &cfg.metrics.listener)?;
        let target_listener = OracleListener {
            domain,
            ..oracle_l.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let oracle_accuracy =
            run_batch(&oracle_s, &target_listener, &cfg.channel, problems, EpisodeMode::Greedy, &mut rng)?.accuracy;
        dir.write_text(&format!("etl_{}_to_{target}.csv", cfg.data.values), &report.to_csv())?;
        pairs.push(EtlPair {
            source: cfg.data.values,
            target,
            report,
            oracle_accuracy,
        });
    }
    let outcome = EtlOutcome {
        dir: dir.path.clone(),
        source,
        pairs,
    };
    dir.write_json(SUMMARY_FILE, &outcome)?;
    Ok(outcome)
}

/// Human-readable description of a run directory, dataset directory,
/// checkpoint, problem/episode file or curve.
pub fn cmd_inspect(path: &Path) -> Result<String, HarnessError> {
    let mut s = String::new();
    if path.is_dir() {
        if path.join(CONFIG_FILE).is_file() {
            let cfg = RunConfig::load(&path.join(CONFIG_FILE))?;
            writeln!(s, "run {}", path.display()).unwrap();
            writeln!(s, "profile {} seed {}", cfg.profile, cfg.seed).unwrap();
            let mut entries: Vec<_> = fs::read_dir(path)
                .map_err(io_err(path))?
                .filter_map(Result::ok)
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            entries.sort();
            for e in entries {
                let p = path.join(&e);
                let size = fs::metadata(&p).map(|m| m.len()).unwrap_or(0);
                let kind = if p.is_dir() { "/" } else { "" };
                writeln!(s, "  {e}{kind} {size}").unwrap();
            }
            if let Ok(text) = fs::read_to_string(path.join("curve.csv")) {
                if let Some(last) = Curve::from_csv(&text).and_then(|c| c.points.last().copied()) {
                    writeln!(s, "final epoch {} train_acc {:.4}", last.epoch, last.train_acc).unwrap();
                }
            }
            return Ok(s);
        }
        for dir in dataset_dirs(path)? {
            let m = crate::forge::load_manifest(&dir)?;
            writeln!(s, "dataset {} (N={}, {} attributes, seed {})", dir.display(), m.n_values, m.num_attributes, m.generator_seed).unwrap();
            for (name, e) in &m.splits {
                writeln!(s, "  {name}: {} problems over {} combos ({})", e.count, e.combos.len(), e.registry).unwrap();
            }
        }
        return Ok(s);
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if name.ends_with(".ckpt.json") {
        let ck = Checkpoint::load(path)?;
        let total: usize = ck.params.iter().map(|p| p.values.len()).sum();
        writeln!(s, "checkpoint v{} with {} tensors, {total} scalars", ck.format_version, ck.params.len()).unwrap();
        for p in &ck.params {
            writeln!(s, "  {} {}x{}", p.name, p.rows, p.cols).unwrap();
        }
    } else if name.ends_with(".jsonl") {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut lines = text.lines();
        let first = lines.next().unwrap_or("");
        writeln!(s, "{} records", 1 + lines.count()).unwrap();
        writeln!(s, "first: {first}").unwrap();
    } else if name.ends_with(".csv") {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let lines: Vec<&str> = text.lines().collect();
        writeln!(s, "{} rows", lines.len().saturating_sub(1)).unwrap();
        for l in lines.iter().take(1).chain(lines.iter().skip(1).last()) {
            writeln!(s, "{l}").unwrap();
        }
    } else if name.ends_with(".json") {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
    } else {
        return Err(HarnessError::Usage(format!("{}: nothing to inspect", path.display())));
    }
    Ok(s)
}
