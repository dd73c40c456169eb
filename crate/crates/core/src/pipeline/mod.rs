//! Experiment runner: dataset generation, auxiliary and unseen model
//! training, SAN regimes, evaluation and demo traces, all persisted under
//! one output directory.
//!
//! Layout of `out`:
//!
//! ```text
//! data/<split>/            manifest.json + images.bin
//! aux/g<i>/, aux/matcher/  auxiliary models (weights.bin + weights.json)
//! unseen/u<i>/, unseen/m<i>/
//! ensemble/, flowsan/      run.json, members/san_<t>/, training_log.csv
//! flowsan/transformed/stage_<t>/
//! eval/                    report.csv, report.json, summary.txt, plots/
//! demo/<name>/             grid.png, grid.pgm, annotations.txt
//! ```

mod config;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{AuxConfig, DataConfig, DemoConfig, EvalSettings, FlowConfig, RunConfig, UnseenConfig};
pub use plot::{plot_metric, plot_svg};

use crate::data::{
    compute_prototypes, generate_dataset, partition, resample_for_diversity, FaceDataset, GenderPrototypes, Split,
};
use crate::error::{Error, IoContext, Result};
use crate::imageio::read_gray;
use crate::inference::{self, EvalMode};
use crate::metrics::{evaluate_suite, EvalConfig, EvalInputs, EvalReport, Named};
use crate::models::{
    match_score, train_face_matcher, train_gender_classifier, FaceMatcher, GenderClassifier, SanModel,
};
use crate::seed;
use crate::training::{
    log_csv, train_ensemble, train_flowsan, Auxiliary, ChainMode, LogRow, MemberInfo, SanChain,
};

pub const RUN_JSON: &str = "run.json";
pub const TRAINING_LOG: &str = "training_log.csv";

/// Whether a command produced new artifacts or found them already present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Created,
    UpToDate,
}

impl Status {
    fn and(self, other: Status) -> Status {
        if self == Status::Created || other == Status::Created {
            Status::Created
        } else {
            Status::UpToDate
        }
    }
}

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn split(&self, split: Split) -> PathBuf {
        self.root.join("data").join(split.name())
    }

    pub fn extra_eval(&self, i: usize) -> PathBuf {
        self.root.join("data").join(format!("eval-extra-{}", i + 1))
    }

    pub fn aux(&self) -> PathBuf {
        self.root.join("aux")
    }

    pub fn aux_classifier(&self, i: usize) -> PathBuf {
        self.aux().join(format!("g{}", i + 1))
    }

    pub fn aux_matcher(&self) -> PathBuf {
        self.aux().join("matcher")
    }

    pub fn unseen_classifier(&self, i: usize) -> PathBuf {
        self.root.join("unseen").join(format!("u{}", i + 1))
    }

    pub fn unseen_matcher(&self, i: usize) -> PathBuf {
        self.root.join("unseen").join(format!("m{}", i + 1))
    }

    pub fn regime(&self, mode: ChainMode) -> PathBuf {
        self.root.join(match mode {
            ChainMode::Ensemble => "ensemble",
            ChainMode::Flow => "flowsan",
        })
    }

    pub fn member(&self, mode: ChainMode, t: usize) -> PathBuf {
        self.regime(mode).join("members").join(format!("san_{t}"))
    }

    pub fn stage(&self, t: usize) -> PathBuf {
        self.regime(ChainMode::Flow).join("transformed").join(format!("stage_{t}"))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn demo(&self) -> PathBuf {
        self.root.join("demo")
    }
}

/// `run.json`: the command, the full config that produced the directory and
/// hashes of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub fingerprint: serde_json::Value,
    pub members: Vec<MemberInfo>,
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` unless the file already holds exactly them. A file with
/// different content is never overwritten.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<Status> {
    if let Ok(old) = fs::read(path) {
        if old == bytes {
            return Ok(Status::UpToDate);
        }
        return Err(Error::Usage(format!(
            "{} already exists with different content; use a fresh --out directory",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, bytes).at(path)?;
    Ok(Status::Created)
}

fn hash_dir_files(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_dir_files(&p, root, out)?;
        } else if p.file_name().is_some_and(|n| n != RUN_JSON) {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_hex(&fs::read(&p).at(&p)?));
        }
    }
    Ok(())
}

/// The config fields a stage's outputs depend on.
fn fingerprint(cfg: &RunConfig, stage: &str) -> Result<serde_json::Value> {
    let mut v = serde_json::json!({
        "seed": cfg.seed,
        "data": serde_json::to_value(&cfg.data)?,
    });
    let add = |v: &mut serde_json::Value, k: &str, x: serde_json::Value| {
        v.as_object_mut().expect("object").insert(k.into(), x);
    };
    if matches!(stage, "aux" | "ensemble" | "flowsan" | "evaluate") {
        add(&mut v, "n", cfg.n.into());
        add(&mut v, "aux", serde_json::to_value(&cfg.aux)?);
        add(&mut v, "unseen", serde_json::to_value(&cfg.unseen)?);
    }
    if matches!(stage, "ensemble" | "flowsan" | "evaluate") {
        add(&mut v, "ensemble", serde_json::to_value(&cfg.ensemble)?);
    }
    if matches!(stage, "flowsan" | "evaluate") {
        add(&mut v, "flowsan", serde_json::to_value(&cfg.flowsan)?);
    }
    if stage == "evaluate" {
        add(&mut v, "eval", serde_json::to_value(&cfg.eval)?);
    }
    Ok(v)
}

/// `Some(Status::UpToDate)` when `dir` already holds a completed run of
/// `stage` from an equivalent config; an error when it holds a different one.
fn completed(dir: &Path, stage: &str, cfg: &RunConfig) -> Result<Option<Status>> {
    let path = dir.join(RUN_JSON);
    if !path.exists() {
        return Ok(None);
    }
    let m: RunManifest = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    if m.fingerprint == fingerprint(cfg, stage)? {
        Ok(Some(Status::UpToDate))
    } else {
        Err(Error::Usage(format!(
            "{} holds a completed `{}` run from a different config; use a fresh --out directory",
            dir.display(),
            m.command
        )))
    }
}

fn finish(dir: &Path, command: &str, stage: &str, cfg: &RunConfig, members: Vec<MemberInfo>) -> Result<()> {
    let mut artifacts = BTreeMap::new();
    hash_dir_files(dir, dir, &mut artifacts)?;
    let m = RunManifest {
        command: command.into(),
        config: cfg.clone(),
        fingerprint: fingerprint(cfg, stage)?,
        members,
        artifacts,
    };
    let path = dir.join(RUN_JSON);
    fs::write(&path, serde_json::to_vec_pretty(&m)?).at(&path)
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.into(),
        })
    }
}

pub fn dataset_seed(cfg: &RunConfig) -> u64 {
    seed::derive(cfg.seed, "dataset")
}

fn generated(cfg: &RunConfig) -> Result<(Vec<(PathBuf, FaceDataset)>, Layout)> {
    let layout = Layout::new(&cfg.out);
    let spec = crate::data::GenerationSpec {
        seed: dataset_seed(cfg),
        ..cfg.data.spec.clone()
    };
    let full = generate_dataset(&spec)?;
    let p = partition(&full, &cfg.data.partition)?;
    let mut sets = Vec::new();
    for split in [Split::AuxTrain, Split::SanTrain, Split::UnseenTrain, Split::Eval] {
        sets.push((layout.split(split), p.get(split).expect("working split").clone()));
    }
    for (i, &n_id) in cfg.data.extra_eval_identities.iter().enumerate() {
        let spec = crate::data::GenerationSpec {
            n_identities: n_id,
            seed: seed::derive_indexed(cfg.seed, "extra-eval", i),
            ..cfg.data.spec.clone()
        };
        let mut ds = generate_dataset(&spec)?;
        ds.split = Split::Eval;
        sets.push((layout.extra_eval(i), ds));
    }
    Ok((sets, layout))
}

/// Generates and saves every split plus the extra evaluation datasets.
/// Directories already holding the same content are left alone.
pub fn gen_data(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let (sets, _) = generated(cfg)?;
    let mut status = Status::UpToDate;
    for (dir, ds) in sets {
        match FaceDataset::stored_hash(&dir) {
            Some(h) if h == ds.content_hash() => {}
            Some(_) => {
                return Err(Error::Usage(format!(
                    "{} holds a different dataset; use a fresh --out directory",
                    dir.display()
                )))
            }
            None => {
                ds.save(&dir)?;
                log::info!("wrote {} ({} samples)", dir.display(), ds.len());
                status = Status::Created;
            }
        }
    }
    Ok(status)
}

fn load_split(layout: &Layout, split: Split) -> Result<FaceDataset> {
    let dir = layout.split(split);
    require(&dir, "run `gen-data` first")?;
    FaceDataset::load(&dir)
}

/// Evaluation datasets by report name.
pub fn load_eval_sets(cfg: &RunConfig) -> Result<Vec<(String, FaceDataset)>> {
    let layout = Layout::new(&cfg.out);
    let mut out = vec![("eval".to_string(), load_split(&layout, Split::Eval)?)];
    for i in 0..cfg.data.extra_eval_identities.len() {
        let dir = layout.extra_eval(i);
        require(&dir, "run `gen-data` first")?;
        out.push((format!("eval-extra-{}", i + 1), FaceDataset::load(&dir)?));
    }
    Ok(out)
}

pub fn load_prototypes(cfg: &RunConfig) -> Result<GenderPrototypes> {
    compute_prototypes(&load_split(&Layout::new(&cfg.out), Split::SanTrain)?)
}

/// Trains the `n` diversity-resampled auxiliary gender classifiers, the
/// auxiliary matcher and the unseen evaluation models.
pub fn train_aux(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    if let Some(s) = completed(&layout.aux(), "aux", cfg)? {
        return Ok(s);
    }
    let aux_train = load_split(&layout, Split::AuxTrain)?;
    let unseen_train = load_split(&layout, Split::UnseenTrain)?;
    for i in 0..cfg.n {
        let ds = resample_for_diversity(&aux_train, i, cfg.n, cfg.aux.replication)?;
        let s = seed::derive_indexed(cfg.seed, "aux-classifier", i);
        let g = train_gender_classifier(&ds, &cfg.aux.classifier, &cfg.aux.fit, s, cfg.exec)?;
        g.save(&layout.aux_classifier(i), s)?;
        log::info!("auxiliary classifier g{} trained", i + 1);
    }
    let s = seed::derive(cfg.seed, "aux-matcher");
    train_face_matcher(&aux_train, &cfg.aux.matcher, &cfg.aux.matcher_fit, s, cfg.exec)?.save(&layout.aux_matcher(), s)?;
    for (i, c) in cfg.unseen.classifiers.iter().enumerate() {
        let s = seed::derive_indexed(cfg.seed, "unseen-classifier", i);
        train_gender_classifier(&unseen_train, c, &cfg.unseen.fit, s, cfg.exec)?.save(&layout.unseen_classifier(i), s)?;
    }
    for (i, c) in cfg.unseen.matchers.iter().enumerate() {
        let s = seed::derive_indexed(cfg.seed, "unseen-matcher", i);
        train_face_matcher(&unseen_train, c, &cfg.unseen.matcher_fit, s, cfg.exec)?.save(&layout.unseen_matcher(i), s)?;
    }
    let mut all = BTreeMap::new();
    hash_dir_files(&layout.root.join("unseen"), &layout.root, &mut all)?;
    let unseen_manifest = layout.aux().join("unseen-hashes.json");
    fs::write(&unseen_manifest, serde_json::to_vec_pretty(&all)?).at(&unseen_manifest)?;
    finish(&layout.aux(), "train aux", "aux", cfg, Vec::new())?;
    Ok(Status::Created)
}

fn load_aux(cfg: &RunConfig) -> Result<(Vec<GenderClassifier>, FaceMatcher)> {
    let layout = Layout::new(&cfg.out);
    require(&layout.aux().join(RUN_JSON), "run `train aux` first")?;
    let gs = (0..cfg.n)
        .map(|i| GenderClassifier::load(&layout.aux_classifier(i)))
        .collect::<Result<_>>()?;
    Ok((gs, FaceMatcher::load(&layout.aux_matcher())?))
}

/// Unseen classifiers and matchers by report name.
pub fn load_unseen(cfg: &RunConfig) -> Result<(Vec<(String, GenderClassifier)>, Vec<(String, FaceMatcher)>)> {
    let layout = Layout::new(&cfg.out);
    require(&layout.aux().join(RUN_JSON), "run `train aux` first")?;
    let gs = (0..cfg.unseen.classifiers.len())
        .map(|i| Ok((format!("u{}", i + 1), GenderClassifier::load(&layout.unseen_classifier(i))?)))
        .collect::<Result<_>>()?;
    let ms = (0..cfg.unseen.matchers.len())
        .map(|i| Ok((format!("m{}", i + 1), FaceMatcher::load(&layout.unseen_matcher(i))?)))
        .collect::<Result<_>>()?;
    Ok((gs, ms))
}

fn aux_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("g{i}")).collect()
}

fn write_logs(dir: &Path, mode: ChainMode, logs: &[Vec<LogRow>]) -> Result<()> {
    let layout = Layout::new("");
    let mut all = Vec::new();
    let mut offset = 0;
    for (t, log) in logs.iter().enumerate() {
        let member = dir.join(layout.member(mode, t + 1).strip_prefix(layout.regime(mode)).expect("member path"));
        let p = member.join(TRAINING_LOG);
        fs::write(&p, log_csv(log)).at(&p)?;
        all.extend(log.iter().map(|r| LogRow { step: r.step + offset, ..*r }));
        offset += log.len() as u64;
    }
    let p = dir.join(TRAINING_LOG);
    fs::write(&p, log_csv(&all)).at(&p)
}

fn save_chain(cfg: &RunConfig, chain: &SanChain) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    for (m, info) in chain.members.iter().zip(&chain.provenance) {
        m.save(&layout.member(chain.mode, info.t), info.seed, serde_json::to_value(info)?)?;
    }
    Ok(())
}

/// Loads a trained chain from its run directory.
pub fn load_chain(cfg: &RunConfig, mode: ChainMode) -> Result<SanChain> {
    let layout = Layout::new(&cfg.out);
    let dir = layout.regime(mode);
    let members_dir = dir.join("members");
    let cmd = match mode {
        ChainMode::Ensemble => "train ensemble",
        ChainMode::Flow => "train flowsan",
    };
    require(&members_dir, &format!("`members/` is missing; run `{cmd}` first"))?;
    let run = dir.join(RUN_JSON);
    require(&run, &format!("the run did not complete; rerun `{cmd}`"))?;
    let m: RunManifest = serde_json::from_slice(&fs::read(&run).at(&run)?)?;
    let members = m
        .members
        .iter()
        .map(|info| SanModel::load(&layout.member(mode, info.t)))
        .collect::<Result<_>>()?;
    Ok(SanChain {
        mode,
        members,
        provenance: m.members,
    })
}

/// Trains `n` independent SANs, member `t` against auxiliary classifier `t`.
pub fn train_ensemble_cmd(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let dir = layout.regime(ChainMode::Ensemble);
    if let Some(s) = completed(&dir, "ensemble", cfg)? {
        return Ok(s);
    }
    let (gs, m) = load_aux(cfg)?;
    let san_train = load_split(&layout, Split::SanTrain)?;
    let protos = compute_prototypes(&san_train)?;
    let ids = aux_ids(cfg.n);
    let aux: Vec<Auxiliary> = gs
        .iter()
        .zip(&ids)
        .map(|(g, id)| Auxiliary { id: id.clone(), classifier: g })
        .collect();
    let seeds: Vec<u64> = (0..cfg.n).map(|t| seed::derive_indexed(cfg.seed, "ensemble", t)).collect();
    let (chain, logs) = train_ensemble(&san_train, &aux, &m, &protos, &cfg.ensemble, &seeds, cfg.exec)?;
    save_chain(cfg, &chain)?;
    write_logs(&dir, ChainMode::Ensemble, &logs)?;
    finish(&dir, "train ensemble", "ensemble", cfg, chain.provenance)?;
    Ok(Status::Created)
}

/// Trains the sequential FlowSAN and saves every stage's transformed
/// training set.
pub fn train_flowsan_cmd(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let dir = layout.regime(ChainMode::Flow);
    if let Some(s) = completed(&dir, "flowsan", cfg)? {
        return Ok(s);
    }
    let init = if cfg.flowsan.init_from_ensemble {
        Some(load_chain(cfg, ChainMode::Ensemble)?)
    } else {
        None
    };
    let (gs, m) = load_aux(cfg)?;
    let san_train = load_split(&layout, Split::SanTrain)?;
    let protos = compute_prototypes(&san_train)?;
    let ids = aux_ids(cfg.n);
    let aux: Vec<Auxiliary> = gs
        .iter()
        .zip(&ids)
        .map(|(g, id)| Auxiliary { id: id.clone(), classifier: g })
        .collect();
    let seeds: Vec<u64> = (0..cfg.n).map(|t| seed::derive_indexed(cfg.seed, "flowsan", t)).collect();
    let out = train_flowsan(&san_train, &aux, &m, &protos, &cfg.flowsan.train, init.as_ref(), &seeds, cfg.exec)?;
    save_chain(cfg, &out.chain)?;
    for t in 1..cfg.n {
        out.stage_inputs[t].save(&layout.stage(t))?;
    }
    out.final_output.save(&layout.stage(cfg.n))?;
    write_logs(&dir, ChainMode::Flow, &out.logs)?;
    let auc_path = dir.join("aux_auc.json");
    fs::write(&auc_path, serde_json::to_vec_pretty(&out.aux_auc)?).at(&auc_path)?;
    finish(&dir, "train flowsan", "flowsan", cfg, out.chain.provenance)?;
    Ok(Status::Created)
}

pub const ENSEMBLE_ID: &str = "ensemble";
pub const FLOW_ID: &str = "flowsan";

/// Full report over both chains, the unseen models and every evaluation
/// dataset.
pub fn compute_report(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let ens = load_chain(cfg, ChainMode::Ensemble)?;
    let flow = load_chain(cfg, ChainMode::Flow)?;
    let (gs, ms) = load_unseen(cfg)?;
    let sets = load_eval_sets(cfg)?;
    let protos = load_prototypes(cfg)?;
    let inputs = EvalInputs {
        chains: vec![Named::new(ENSEMBLE_ID, &ens), Named::new(FLOW_ID, &flow)],
        classifiers: gs.iter().map(|(id, g)| Named::new(id, g)).collect(),
        matchers: ms.iter().map(|(id, m)| Named::new(id, m)).collect(),
        datasets: sets.iter().map(|(id, d)| Named::new(id, d)).collect(),
        prototypes: &protos,
    };
    let ecfg = EvalConfig {
        seed: seed::derive(cfg.seed, "eval"),
        ..cfg.eval.metrics.clone()
    };
    evaluate_suite(&inputs, &ecfg, cfg.exec)
}

/// Summary tables at every configured summary depth that was evaluated.
pub fn summary(cfg: &RunConfig, report: &EvalReport) -> String {
    let fmr = cfg.eval.metrics.fmrs.first().copied().unwrap_or(0.01);
    cfg.eval
        .summary_depths
        .iter()
        .filter(|d| cfg.eval.metrics.depths.contains(d))
        .map(|&n| report.summary_table(ENSEMBLE_ID, FLOW_ID, n, fmr))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Evaluates, writes `report.csv`, `report.json`, `summary.txt` and the
/// plots under `eval/`, and returns the report. A rerun that reproduces the
/// existing files is reported as up to date.
pub fn evaluate(cfg: &RunConfig) -> Result<(EvalReport, Status)> {
    evaluate_into(cfg, &Layout::new(&cfg.out).eval())
}

/// [`evaluate`] with an explicit output directory.
pub fn evaluate_into(cfg: &RunConfig, dir: &Path) -> Result<(EvalReport, Status)> {
    let report = compute_report(cfg)?;
    let mut status = write_artifact(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    status = status.and(write_artifact(&dir.join("report.json"), report.to_json()?.as_bytes())?);
    status = status.and(write_artifact(&dir.join("summary.txt"), summary(cfg, &report).as_bytes())?);
    let mut metrics = vec!["auc".to_string(), "eer".to_string(), "gap".to_string()];
    metrics.extend(cfg.eval.metrics.fmrs.iter().map(|&f| crate::metrics::tmr_metric(f)));
    for metric in metrics {
        let svg = plot_metric(&report, &metric)?;
        let name = format!("{}.svg", metric.replace('@', "_at_"));
        status = status.and(write_artifact(&dir.join("plots").join(name), svg.as_bytes())?);
    }
    Ok((report, status))
}

/// Files written by [`demo`].
#[derive(Debug, Clone)]
pub struct DemoOutput {
    pub dir: PathBuf,
    pub panels: usize,
    pub annotations: String,
    pub status: Status,
}

/// Traces one image through a chain and writes the panel grid plus a
/// sidecar with `P(Male)` (first unseen classifier) and the match score
/// against the original (first unseen matcher) at every depth. Without an
/// image path the first evaluation sample is used; without a label the
/// first auxiliary classifier predicts one.
pub fn demo(cfg: &RunConfig, image: Option<&Path>, label: Option<u8>) -> Result<DemoOutput> {
    cfg.validate()?;
    let chain_mode = match cfg.demo.mode {
        EvalMode::Flow => ChainMode::Flow,
        EvalMode::EnsAvg | EvalMode::EnsGibbs => ChainMode::Ensemble,
        EvalMode::EnsBest => {
            return Err(Error::Usage(
                "ens-best needs a known classifier per image; trace flow, ens-avg or ens-gibbs".into(),
            ))
        }
    };
    let chain = load_chain(cfg, chain_mode)?;
    let protos = load_prototypes(cfg)?;
    let (gs, ms) = load_unseen(cfg)?;
    let (pixels, name, known) = match image {
        Some(p) => {
            let (h, w, px) = read_gray(p)?;
            if (h, w) != (protos.h, protos.w) {
                return Err(Error::Input(format!(
                    "{} is {h}x{w}; the models expect {}x{}",
                    p.display(),
                    protos.h,
                    protos.w
                )));
            }
            let stem = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
            (px, stem, None)
        }
        None => {
            let ds = load_split(&Layout::new(&cfg.out), Split::Eval)?;
            let s = &ds.samples[0];
            (s.image.clone(), "eval-0".to_string(), Some(s.gender))
        }
    };
    let y = match label.or(known) {
        Some(y) => y,
        None => {
            let (aux, _) = load_aux(cfg)?;
            let x = crate::learn::Tensor::new(vec![1, 1, protos.h, protos.w], pixels.clone())?;
            inference::predict_labels(&aux[0], &x)?[0]
        }
    };
    let n = if cfg.demo.depth == 0 { chain.len() } else { cfg.demo.depth };
    let tr = inference::trace(&chain, &pixels, y, &protos, n, cfg.demo.mode, cfg.demo.gibbs_seed)?;
    let grid = tr.grid(protos.h, protos.w);

    let (g_id, g) = &gs[0];
    let (m_id, m) = &ms[0];
    let mut text = format!("label,{y}\nmode,{}\ndepth,p_male_{g_id},match_{m_id},members\n", cfg.demo.mode.name());
    let all: Vec<&Vec<f32>> = std::iter::once(&tr.original).chain(&tr.outputs).collect();
    for (d, img) in all.iter().enumerate() {
        let x = crate::learn::Tensor::new(vec![1, 1, protos.h, protos.w], img.to_vec())?;
        let p = g.predict_all(&x)?[0];
        let s = match_score(m, &tr.original, img, protos.h, protos.w)?;
        let members = if d == 0 {
            String::new()
        } else {
            tr.members[d - 1].iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        };
        text.push_str(&format!("{d},{p:.6},{s:.6},{members}\n"));
    }
    let dir = Layout::new(&cfg.out).demo().join(format!("{name}-{}-d{n}", cfg.demo.mode.name()));
    let mut status = write_artifact(&dir.join("grid.png"), &grid.png_bytes()?)?;
    status = status.and(write_artifact(&dir.join("grid.pgm"), &grid.pgm_bytes())?);
    status = status.and(write_artifact(&dir.join("annotations.txt"), text.as_bytes())?);
    Ok(DemoOutput {
        dir,
        panels: grid.panels(),
        annotations: text,
        status,
    })
}

/// Every stage in order: data, auxiliaries, ensemble, flow, evaluation.
pub fn run_all(cfg: &RunConfig) -> Result<EvalReport> {
    gen_data(cfg)?;
    train_aux(cfg)?;
    train_ensemble_cmd(cfg)?;
    train_flowsan_cmd(cfg)?;
    Ok(evaluate(cfg)?.0)
}

#[cfg(test)]
mod tests;
