use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowsan::pipeline::RunConfig;

fn flowsan(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsan"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verbs_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = RunConfig::smoke(&out);
    let config = dir.path().join("smoke.toml");
    fs::write(&config, cfg.to_toml().unwrap()).unwrap();

    assert!(stdout(&flowsan(&config, &["gen-data"])).contains("gen-data: done"));
    assert!(stdout(&flowsan(&config, &["gen-data"])).contains("up to date"));

    let early = flowsan(&config, &["train", "flowsan"]);
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("members"));

    stdout(&flowsan(&config, &["train", "aux"]));
    stdout(&flowsan(&config, &["train", "ensemble"]));
    stdout(&flowsan(&config, &["train", "flowsan"]));
    assert_eq!(fs::read_dir(out.join("ensemble/members")).unwrap().count(), 2);

    let eval = stdout(&flowsan(&config, &["evaluate"]));
    assert!(eval.contains("Ens-Gibbs") && eval.contains("FlowSAN"));
    let csv = fs::read(out.join("eval/report.csv")).unwrap();
    assert!(stdout(&flowsan(&config, &["evaluate"])).contains("up to date"));
    assert_eq!(fs::read(out.join("eval/report.csv")).unwrap(), csv);

    stdout(&flowsan(&config, &["evaluate", "--tag", "d1", "--depths", "1..1", "--fmr", "0.05"]));
    let tagged = fs::read_to_string(out.join("eval-d1/report.csv")).unwrap();
    assert!(tagged.contains("tmr@0.05"));
    assert!(!tagged.lines().any(|l| l.split(',').nth(2) == Some("2")));

    let demo = stdout(&flowsan(&config, &["demo", "--mode", "ens-gibbs"]));
    assert!(demo.contains("p_male_u1"));
    assert!(out.join("demo/eval-0-ens-gibbs-d2/grid.png").exists());

    let bad = dir.path().join("not-an-image.png");
    fs::write(&bad, b"nope").unwrap();
    let o = flowsan(&config, &["demo", "--image", bad.to_str().unwrap(), "--label", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("input error"));
}

#[test]
fn flags_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "n = 3\n[eval]\ndepths = [1, 2, 3]\n").unwrap();
    let o = flowsan(&config, &["config", "--depths", "2..1"]);
    assert!(!o.status.success());
    let o = flowsan(&config, &["config", "--depths", "1..4"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds n = 3"));
    let o = flowsan(&config, &["config", "--seed", "99"]);
    let text = stdout(&o);
    let back: RunConfig = toml_like(&text);
    assert_eq!(back.seed, 99);
    assert_eq!(back.n, 3);
    fs::write(&config, "bogus = 1\n").unwrap();
    assert!(!flowsan(&config, &["config"]).status.success());
}

fn toml_like(text: &str) -> RunConfig {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("back.toml");
    fs::write(&p, text).unwrap();
    RunConfig::load(&p).unwrap()
}
