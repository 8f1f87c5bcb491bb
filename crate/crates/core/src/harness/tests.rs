use std::fs;

use super::*;

/// desk-tiny shrunk to a few seconds end to end.
fn quick() -> RunConfig {
    let mut cfg = RunConfig::profile("desk-tiny").unwrap();
    cfg.data.problems_per_combo = 8;
    cfg.data.pretrain_problems = 64;
    cfg.pretrain.epochs = 2;
    cfg.joint.epochs = 2;
    cfg.metrics.listener.epochs = 2;
    cfg.metrics.etl_targets = vec![10];
    cfg.metrics.topsim_samples = 50;
    cfg.metrics.topsim_runs = 2;
    cfg
}

#[test]
fn every_profile_validates_and_unknown_ones_are_usage_errors() {
    for name in PROFILES {
        let cfg = RunConfig::profile(name).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.profile, name);
    }
    let e = RunConfig::profile("laptop").unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(HarnessError::Usage("x".into()).exit_code(), 2);
    assert_eq!(HarnessError::Validation("x".into()).exit_code(), 1);
    let io = HarnessError::Io {
        path: "x".into(),
        source: std::io::Error::other("boom"),
    };
    assert_eq!(io.exit_code(), 1);
}

#[test]
fn with_seed_reaches_every_stage() {
    let cfg = RunConfig::profile("desk-small").unwrap().with_seed(9);
    assert_eq!(
        (cfg.seed, cfg.pretrain.seed, cfg.joint.seed, cfg.metrics.listener.seed),
        (9, 9, 9, 9)
    );
    assert_eq!(cfg.agent_seeds(), (9, 59, 109));
    // the data seed is independent of the training seed
    assert_eq!(cfg.data.seed, RunConfig::profile("desk-small").unwrap().data.seed);
}

#[test]
fn config_round_trips_and_bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let cfg = quick();
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);

    let mut small = cfg.clone();
    small.channel = ChannelConfig::new(1, 8);
    assert!(matches!(small.validate(), Err(HarnessError::Usage(_))));
    let mut arity = cfg.clone();
    arity.data.num_attributes = 3;
    assert!(matches!(arity.validate(), Err(HarnessError::Usage(_))));
    let mut none = cfg;
    none.data.rules = 0;
    assert!(none.validate().is_err());

    fs::write(&path, "{not json").unwrap();
    assert_eq!(RunConfig::load(&path).unwrap_err().exit_code(), 2);
    assert_eq!(RunConfig::load(&dir.path().join("missing.json")).unwrap_err().exit_code(), 1);
}

#[test]
fn run_dirs_are_append_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let a = RunDir::create(dir.path(), "train", &cfg).unwrap();
    let b = RunDir::create(dir.path(), "train", &cfg).unwrap();
    assert!(a.path.ends_with("train-001"));
    assert!(b.path.ends_with("train-002"));
    assert_eq!(RunConfig::load(&b.file(CONFIG_FILE)).unwrap(), cfg);
    let stamp: VersionStamp = serde_json::from_str(&fs::read_to_string(b.file(VERSION_FILE)).unwrap()).unwrap();
    assert_eq!(stamp.command, "train");
}

#[test]
fn generation_is_deterministic_and_audits_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let a = cmd_generate(&cfg, dir.path()).unwrap();
    let b = cmd_generate(&cfg, dir.path()).unwrap();
    assert_ne!(a.dir, b.dir);
    assert_eq!(a.splits, b.splits);
    let train = a.split("train").unwrap();
    assert_eq!((train.combos, train.problems), (16, 64));
    assert_eq!(a.split("pretrain").unwrap().problems, 64);

    let audit = cmd_audit(&a.dir, AuditOptions::default()).unwrap();
    assert!(audit.is_clean());
    assert_eq!(audit.problems, 128 + 64);
    let perturbed = cmd_audit(&a.dir, AuditOptions { perturbation: true }).unwrap();
    assert!(!perturbed.is_clean());
    assert!(!perturbed.examples.is_empty());

    // a flipped byte is caught by the manifest checksum
    let file = a.dir.join("data").join("train.jsonl");
    let mut bytes = fs::read(&file).unwrap();
    let i = bytes.iter().position(|&c| c.is_ascii_digit()).unwrap();
    bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
    fs::write(&file, bytes).unwrap();
    let e = cmd_audit(&a.dir, AuditOptions::default()).unwrap_err();
    assert!(matches!(e, HarnessError::Validation(_)), "{e}");
    assert!(matches!(cmd_audit(dir.path(), AuditOptions::default()), Err(HarnessError::Usage(_))));
}

#[test]
fn train_eval_and_metrics_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let t = cmd_train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    for f in [
        SPEAKER_PRETRAIN_FILE,
        SPEAKER_FILE,
        LISTENER_FILE,
        JOINT_STATE_FILE,
        "curve.csv",
        "pretrain_curve.csv",
        "episodes.jsonl",
        SUMMARY_FILE,
    ] {
        assert!(t.dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(t.curve.as_ref().unwrap().points.len(), 2);
    let acc = t.test_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let (s, l) = load_agents(&cfg, &t.dir).unwrap();
    assert_eq!(s.channel, cfg.channel);
    assert_eq!(l.channel, cfg.channel);

    let oracle = cmd_eval(
        &cfg,
        None,
        dir.path(),
        EvalOptions {
            oracle: true,
            blocked: false,
            tokens: true,
        },
    )
    .unwrap();
    assert_eq!(oracle.generalization.accuracy("test"), Some(1.0));
    assert!(oracle.tokens.is_some());

    // an untrained pair may speak a single message, so only check that the
    // commands either succeed or report a degenerate language
    let eval = cmd_eval(
        &cfg,
        Some(&t.dir),
        dir.path(),
        EvalOptions {
            oracle: false,
            blocked: true,
            tokens: false,
        },
    )
    .unwrap();
    assert!(eval.blocked.is_some());
    assert_eq!(eval.with_message_accuracy, t.final_train_accuracy());

    let ts = cmd_topsim(&cfg, None, dir.path(), LanguageSource::Oracle).unwrap();
    assert!(ts.rule.mean > ts.panel.mean);
    let etl = cmd_etl(&cfg, None, dir.path(), LanguageSource::Oracle).unwrap();
    assert_eq!(etl.pairs.len(), 1);
    assert_eq!(etl.pairs[0].oracle_accuracy, 1.0);
    assert!(dir.path().join("etl-001").join("etl_10_to_10.csv").is_file());

    let text = cmd_inspect(&t.dir).unwrap();
    assert!(text.contains("final epoch 2"), "{text}");
    assert!(cmd_inspect(&t.dir.join(SPEAKER_FILE)).unwrap().starts_with("checkpoint"));
    assert!(cmd_inspect(&t.dir.join("episodes.jsonl")).unwrap().contains("records"));
    assert!(cmd_inspect(&t.dir.join("curve.csv")).unwrap().starts_with("2 rows"));
}

#[test]
fn agent_commands_need_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let e = cmd_topsim(&cfg, None, dir.path(), LanguageSource::Agent).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let e = cmd_eval(&cfg, None, dir.path(), EvalOptions::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    // failed commands leave no run directory behind
    assert_eq!(fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn stages_can_run_separately_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let pre = cmd_train(
        &cfg,
        dir.path(),
        &TrainOptions {
            stage: Stage::Pretrain,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert!(pre.curve.is_none());
    assert!(pre.pretrain.is_some());
    let joint = cmd_train(
        &cfg,
        dir.path(),
        &TrainOptions {
            stage: Stage::Joint,
            resume: Some(pre.dir.clone()),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let both = cmd_train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    assert_eq!(joint.curve, both.curve);
}
