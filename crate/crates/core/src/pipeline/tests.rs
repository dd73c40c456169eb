use std::sync::OnceLock;

use super::*;

struct Run {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    report: EvalReport,
}

/// One full smoke run shared by the tests in this module.
fn shared() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::smoke(dir.path().join("run"));
        let report = run_all(&cfg).unwrap();
        Run { _dir: dir, cfg, report }
    })
}

#[test]
fn run_writes_the_layout() {
    let run = shared();
    let l = Layout::new(&run.cfg.out);
    for split in [Split::AuxTrain, Split::SanTrain, Split::UnseenTrain, Split::Eval] {
        assert!(l.split(split).join("manifest.json").exists());
        assert!(l.split(split).join("images.bin").exists());
    }
    assert!(l.extra_eval(0).join("images.bin").exists());
    for i in 0..2 {
        assert!(l.aux_classifier(i).join("weights.bin").exists());
    }
    assert!(l.aux_matcher().join("weights.json").exists());
    assert!(l.unseen_classifier(1).join("weights.json").exists());
    assert!(l.unseen_matcher(0).join("weights.json").exists());
    for mode in [ChainMode::Ensemble, ChainMode::Flow] {
        let dir = l.regime(mode);
        assert!(dir.join(RUN_JSON).exists());
        let log = fs::read_to_string(dir.join(TRAINING_LOG)).unwrap();
        assert!(log.starts_with("step,J_D,J_M,J_G,J_tot\n"));
        for t in 1..=2 {
            assert!(l.member(mode, t).join("weights.bin").exists());
            assert!(l.member(mode, t).join(TRAINING_LOG).exists());
        }
    }
    assert!(l.stage(1).join("images.bin").exists());
    assert!(l.stage(2).join("images.bin").exists());
    let csv = fs::read_to_string(l.eval().join("report.csv")).unwrap();
    assert!(csv.starts_with("chain_id,mode,depth,dataset,model,metric,value\n"));
    assert!(l.eval().join("report.json").exists());
    assert!(l.eval().join("plots").join("auc.svg").exists());
    assert!(l.eval().join("plots").join("tmr_at_0.01.svg").exists());
    let summary = fs::read_to_string(l.eval().join("summary.txt")).unwrap();
    assert!(summary.contains("FlowSAN"));
}

#[test]
fn concatenated_log_has_cumulative_steps() {
    let run = shared();
    let dir = Layout::new(&run.cfg.out).regime(ChainMode::Flow);
    let text = fs::read_to_string(dir.join(TRAINING_LOG)).unwrap();
    let steps: Vec<u64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
    let member1 = fs::read_to_string(Layout::new(&run.cfg.out).member(ChainMode::Flow, 1).join(TRAINING_LOG)).unwrap();
    let member2 = fs::read_to_string(Layout::new(&run.cfg.out).member(ChainMode::Flow, 2).join(TRAINING_LOG)).unwrap();
    assert_eq!(steps.len(), member1.lines().count() - 1 + member2.lines().count() - 1);
}

#[test]
fn manifests_record_config_and_hashes() {
    let run = shared();
    let dir = Layout::new(&run.cfg.out).regime(ChainMode::Flow);
    let m: RunManifest = serde_json::from_slice(&fs::read(dir.join(RUN_JSON)).unwrap()).unwrap();
    assert_eq!(m.command, "train flowsan");
    assert_eq!(m.config, run.cfg);
    assert_eq!(m.members.len(), 2);
    let weights = "members/san_1/weights.bin";
    assert_eq!(m.artifacts[weights], sha256_hex(&fs::read(dir.join(weights)).unwrap()));
    let reloaded = RunConfig::load(&dir.join(RUN_JSON)).unwrap();
    assert_eq!(reloaded, run.cfg);
}

#[test]
fn reruns_are_up_to_date() {
    let run = shared();
    assert_eq!(gen_data(&run.cfg).unwrap(), Status::UpToDate);
    assert_eq!(train_aux(&run.cfg).unwrap(), Status::UpToDate);
    assert_eq!(train_ensemble_cmd(&run.cfg).unwrap(), Status::UpToDate);
    assert_eq!(train_flowsan_cmd(&run.cfg).unwrap(), Status::UpToDate);
    let (report, status) = evaluate(&run.cfg).unwrap();
    assert_eq!(status, Status::UpToDate);
    assert_eq!(report, run.report);
}

#[test]
fn changed_config_is_refused() {
    let run = shared();
    let mut cfg = run.cfg.clone();
    cfg.flowsan.train.epochs += 1;
    assert_eq!(train_ensemble_cmd(&cfg).unwrap(), Status::UpToDate);
    assert!(matches!(train_flowsan_cmd(&cfg), Err(Error::Usage(_))));
    let mut cfg = run.cfg.clone();
    cfg.data.spec.pixel_noise *= 2.0;
    assert!(matches!(gen_data(&cfg), Err(Error::Usage(_))));
}

#[test]
fn report_covers_every_cell() {
    let run = shared();
    let baseline: Vec<_> = run.report.rows.iter().filter(|r| r.chain_id == crate::metrics::BASELINE).collect();
    // 2 datasets x (2 classifiers x 3 metrics + 1 matcher x 2 FMRs)
    assert_eq!(baseline.len(), 2 * (2 * 3 + 2));
    assert!(run.report.rows.iter().all(|r| (0.0..=1.0).contains(&r.value)));
    for depth in [1, 2] {
        for mode in ["flow", "ens-avg", "ens-gibbs", "ens-best"] {
            assert!(run.report.mean(if mode == "flow" { FLOW_ID } else { ENSEMBLE_ID }, mode, depth, "eer").is_some());
        }
    }
}

#[test]
fn demo_traces_every_depth() {
    let run = shared();
    let out = demo(&run.cfg, None, None).unwrap();
    assert_eq!(out.panels, 3);
    assert!(out.dir.join("grid.png").exists());
    assert!(out.dir.join("grid.pgm").exists());
    let lines: Vec<&str> = out.annotations.lines().collect();
    assert_eq!(lines.len(), 3 + 3);
    assert!(lines[3].starts_with("0,"));
    assert!(lines[5].ends_with(",1 2"));
    let again = demo(&run.cfg, None, None).unwrap();
    assert_eq!(again.status, Status::UpToDate);

    let mut cfg = run.cfg.clone();
    cfg.demo.mode = EvalMode::EnsGibbs;
    cfg.demo.depth = 1;
    let out = demo(&cfg, Some(&out.dir.join("grid.pgm")), Some(1));
    assert!(matches!(out, Err(Error::Input(_))));
    cfg.demo.mode = EvalMode::EnsBest;
    assert!(matches!(demo(&cfg, None, None), Err(Error::Usage(_))));
}

#[test]
fn missing_prerequisites_name_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::smoke(dir.path());
    match train_aux(&cfg) {
        Err(Error::MissingArtifact { hint, .. }) => assert!(hint.contains("gen-data")),
        other => panic!("{other:?}"),
    }
    match train_flowsan_cmd(&cfg) {
        Err(Error::MissingArtifact { path, hint }) => {
            assert!(path.ends_with("ensemble/members"));
            assert!(hint.contains("train ensemble"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(evaluate(&cfg), Err(Error::MissingArtifact { .. })));
}

#[test]
fn artifacts_are_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a/b.txt");
    assert_eq!(write_artifact(&p, b"x").unwrap(), Status::Created);
    assert_eq!(write_artifact(&p, b"x").unwrap(), Status::UpToDate);
    assert!(matches!(write_artifact(&p, b"y"), Err(Error::Usage(_))));
    assert_eq!(fs::read(&p).unwrap(), b"x");
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = RunConfig::default();
    let text = cfg.to_toml().unwrap();
    let back = RunConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    let partial = RunConfig::from_toml("seed = 3\n[eval]\ndepths = [1, 2]\n").unwrap();
    assert_eq!(partial.seed, 3);
    assert_eq!(partial.eval.metrics.depths, vec![1, 2]);
    assert_eq!(partial.n, 5);
    assert!(RunConfig::from_toml("sed = 3\n").is_err());
    assert!(RunConfig::from_toml("[data]\nsplits = 3\n").is_err());
    RunConfig::smoke("x").validate().unwrap();
}

#[test]
fn partial_tables_keep_sibling_defaults() {
    let cfg = RunConfig::from_toml("[flowsan.train.weights]\ngender = 2.0\n").unwrap();
    let def = RunConfig::default();
    assert_eq!(cfg.flowsan.train.weights.gender, 2.0);
    assert_eq!(cfg.flowsan.train.weights.pixel, def.flowsan.train.weights.pixel);
    assert_eq!(cfg.flowsan.train.epochs, def.flowsan.train.epochs);
    assert_eq!(cfg.aux.fit, def.aux.fit);
}

#[test]
fn validation_catches_inconsistent_configs() {
    let mut cfg = RunConfig::default();
    cfg.n = 2;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = RunConfig::default();
    cfg.flowsan.train.san.enc_channels = vec![4, 4, 4];
    assert!(cfg.validate().is_err());
    cfg.flowsan.init_from_ensemble = false;
    cfg.validate().unwrap();
    let mut cfg = RunConfig::default();
    cfg.unseen.matchers.clear();
    assert!(cfg.validate().is_err());
}

#[test]
fn depth_and_fmr_flags() {
    assert_eq!(RunConfig::parse_depths("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
    assert_eq!(RunConfig::parse_depths("2..=3").unwrap(), vec![2, 3]);
    assert_eq!(RunConfig::parse_depths("4").unwrap(), vec![4]);
    for bad in ["0..2", "3..1", "a..b", ""] {
        assert!(RunConfig::parse_depths(bad).is_err(), "{bad}");
    }
    assert_eq!(RunConfig::parse_fmrs("0.01, 0.001").unwrap(), vec![0.01, 0.001]);
    assert!(RunConfig::parse_fmrs("0.01,x").is_err());
}

#[test]
fn plot_is_svg() {
    let svg = plot_svg("t", "v", &[("a".into(), vec![(0.0, 0.9), (1.0, 0.6)])]).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("</svg>"));
}
