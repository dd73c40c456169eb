//! Depth-sweep privacy/utility report over chains, unseen models and
//! evaluation datasets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{build_match_protocol, eer, match_scores, roc_auc, tmr_at_fmr, MatchProtocol, ScoreSet};
use crate::data::{FaceDataset, GenderPrototypes};
use crate::error::{Error, Result};
use crate::inference::{ens_avg, ens_best, ens_gibbs, member_outputs, psi_sequence, EvalMode};
use crate::learn::kernels::map_indexed;
use crate::learn::{Exec, Tensor};
use crate::models::{FaceMatcher, GenderClassifier};
use crate::seed;
use crate::training::{ChainMode, SanChain};

/// Chain id and mode of the unperturbed baseline rows.
pub const BASELINE: &str = "original";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub depths: Vec<usize>,
    pub fmrs: Vec<f64>,
    pub impostor_pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depths: (1..=5).collect(),
            fmrs: vec![0.01, 0.001],
            impostor_pairs: 20_000,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(Error::Config("depths must be a non-empty list of positive depths".into()));
        }
        if self.fmrs.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config(format!("FMRs must lie in (0, 1), got {:?}", self.fmrs)));
        }
        if self.impostor_pairs == 0 {
            return Err(Error::Config("impostor pair count must be positive".into()));
        }
        Ok(())
    }
}

/// A model or dataset together with its report name.
#[derive(Debug, Clone, Copy)]
pub struct Named<'a, T> {
    pub id: &'a str,
    pub item: &'a T,
}

impl<'a, T> Named<'a, T> {
    pub fn new(id: &'a str, item: &'a T) -> Self {
        Self { id, item }
    }
}

/// Everything one report is computed over.
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub chains: Vec<Named<'a, SanChain>>,
    pub classifiers: Vec<Named<'a, GenderClassifier>>,
    pub matchers: Vec<Named<'a, FaceMatcher>>,
    pub datasets: Vec<Named<'a, FaceDataset>>,
    pub prototypes: &'a GenderPrototypes,
}

/// One `report.csv` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub chain_id: String,
    pub mode: String,
    pub depth: usize,
    pub dataset: String,
    pub model: String,
    pub metric: String,
    pub value: f64,
}

/// Unweighted mean of one metric over every (model, dataset) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub chain_id: String,
    pub mode: String,
    pub depth: usize,
    pub metric: String,
    pub value: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

pub fn tmr_metric(fmr: f64) -> String {
    format!("tmr@{fmr}")
}

fn gender_rows(g: &GenderClassifier, images: &Tensor<f32>, labels: &[u8]) -> Result<[(&'static str, f64); 3]> {
    let p = g.predict_all(images)?;
    let s = ScoreSet::new(
        p.iter().map(|&v| f64::from(v)).collect(),
        labels.iter().map(|&y| y == 1).collect(),
    )?;
    let auc = roc_auc(&s)?;
    Ok([("auc", auc), ("eer", eer(&s)?), ("gap", (auc - 0.5).abs())])
}

struct Cell<'a> {
    chain_id: &'a str,
    mode: &'a str,
    depth: usize,
    dataset: &'a str,
}

impl Cell<'_> {
    fn row(&self, model: String, metric: &str, value: f64) -> ReportRow {
        ReportRow {
            chain_id: self.chain_id.to_string(),
            mode: self.mode.to_string(),
            depth: self.depth,
            dataset: self.dataset.to_string(),
            model,
            metric: metric.to_string(),
            value,
        }
    }
}

struct DatasetCtx<'a> {
    name: &'a str,
    images: Tensor<f32>,
    labels: Vec<u8>,
    protocol: MatchProtocol,
    index: usize,
}

fn matcher_rows(
    cell: &Cell<'_>,
    inputs: &EvalInputs<'_>,
    cfg: &EvalConfig,
    ctx: &DatasetCtx<'_>,
    perturbed: &Tensor<f32>,
    suffix: Option<&str>,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for m in &inputs.matchers {
        let (gen, imp) = match_scores(m.item, &ctx.images, perturbed, &ctx.protocol)?;
        for &fmr in &cfg.fmrs {
            let model = match suffix {
                Some(s) => format!("{}|{s}", m.id),
                None => m.id.to_string(),
            };
            rows.push(cell.row(model, &tmr_metric(fmr), tmr_at_fmr(&gen, &imp, fmr)?.tmr));
        }
    }
    Ok(rows)
}

fn classifier_rows(
    cell: &Cell<'_>,
    inputs: &EvalInputs<'_>,
    ctx: &DatasetCtx<'_>,
    perturbed: &Tensor<f32>,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for g in &inputs.classifiers {
        for (metric, v) in gender_rows(g.item, perturbed, &ctx.labels)? {
            rows.push(cell.row(g.id.to_string(), metric, v));
        }
    }
    Ok(rows)
}

fn chain_rows(
    chain: &Named<'_, SanChain>,
    inputs: &EvalInputs<'_>,
    cfg: &EvalConfig,
    ctx: &DatasetCtx<'_>,
) -> Result<Vec<ReportRow>> {
    let max_depth = *cfg.depths.iter().max().expect("validated depths");
    if max_depth > chain.item.len() {
        return Err(Error::Usage(format!(
            "depth {max_depth} requested but chain `{}` has {} members",
            chain.id,
            chain.item.len()
        )));
    }
    let mut rows = Vec::new();
    match chain.item.mode {
        ChainMode::Flow => {
            let seq = psi_sequence(chain.item, &ctx.images, &ctx.labels, inputs.prototypes, max_depth)?;
            for &t in &cfg.depths {
                let cell = Cell { chain_id: chain.id, mode: EvalMode::Flow.name(), depth: t, dataset: ctx.name };
                rows.extend(classifier_rows(&cell, inputs, ctx, &seq[t - 1])?);
                rows.extend(matcher_rows(&cell, inputs, cfg, ctx, &seq[t - 1], None)?);
            }
        }
        ChainMode::Ensemble => {
            let outs = member_outputs(chain.item, &ctx.images, &ctx.labels, inputs.prototypes, max_depth)?;
            for &t in &cfg.depths {
                let avg = ens_avg(&outs, t)?;
                let cell = Cell { chain_id: chain.id, mode: EvalMode::EnsAvg.name(), depth: t, dataset: ctx.name };
                rows.extend(classifier_rows(&cell, inputs, ctx, &avg)?);
                rows.extend(matcher_rows(&cell, inputs, cfg, ctx, &avg, None)?);

                let gibbs_seed = seed::derive_indexed(seed::derive_indexed(cfg.seed, "gibbs-dataset", ctx.index), "depth", t);
                let (gibbs, _) = ens_gibbs(&outs, t, gibbs_seed)?;
                let cell = Cell { mode: EvalMode::EnsGibbs.name(), ..cell };
                rows.extend(classifier_rows(&cell, inputs, ctx, &gibbs)?);
                rows.extend(matcher_rows(&cell, inputs, cfg, ctx, &gibbs, None)?);

                let cell = Cell { mode: EvalMode::EnsBest.name(), ..cell };
                for g in &inputs.classifiers {
                    let (best, _) = ens_best(&outs, t, &ctx.labels, g.item)?;
                    for (metric, v) in gender_rows(g.item, &best, &ctx.labels)? {
                        rows.push(cell.row(g.id.to_string(), metric, v));
                    }
                    rows.extend(matcher_rows(&cell, inputs, cfg, ctx, &best, Some(g.id))?);
                }
            }
        }
    }
    Ok(rows)
}

/// Evaluates every chain at every configured depth on every dataset, plus
/// a depth-0 baseline on the original images. Ensemble chains report the
/// average, Gibbs and per-classifier oracle modes; flow chains report the
/// stacked outputs. Cells run concurrently under [`Exec::Parallel`].
pub fn evaluate_suite(inputs: &EvalInputs<'_>, cfg: &EvalConfig, exec: Exec) -> Result<EvalReport> {
    cfg.validate()?;
    if inputs.datasets.is_empty() || inputs.classifiers.is_empty() {
        return Err(Error::Usage("evaluation needs at least one dataset and one classifier".into()));
    }
    let ctxs: Vec<DatasetCtx> = inputs
        .datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            Ok(DatasetCtx {
                name: d.id,
                images: d.item.all_images(),
                labels: d.item.labels(),
                protocol: build_match_protocol(d.item, cfg.impostor_pairs, seed::derive_indexed(cfg.seed, "protocol", i))?,
                index: i,
            })
        })
        .collect::<Result<_>>()?;

    // Cell k < |datasets| is the baseline on dataset k; the rest are
    // (chain, dataset) pairs in chain-major order.
    let nd = ctxs.len();
    let n_cells = nd * (1 + inputs.chains.len());
    let cells = map_indexed(exec, n_cells, |k| -> Result<Vec<ReportRow>> {
        if k < nd {
            let ctx = &ctxs[k];
            let cell = Cell { chain_id: BASELINE, mode: BASELINE, depth: 0, dataset: ctx.name };
            let mut rows = classifier_rows(&cell, inputs, ctx, &ctx.images)?;
            rows.extend(matcher_rows(&cell, inputs, cfg, ctx, &ctx.images, None)?);
            Ok(rows)
        } else {
            let (c, d) = ((k - nd) / nd, (k - nd) % nd);
            chain_rows(&inputs.chains[c], inputs, cfg, &ctxs[d])
        }
    });
    let mut rows = Vec::new();
    for c in cells {
        rows.extend(c?);
    }
    let aggregates = aggregate(&rows);
    Ok(EvalReport { rows, aggregates })
}

/// Unweighted means over (model, dataset) for each chain, mode, depth and
/// metric, in first-appearance order.
pub fn aggregate(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String, usize, String)> = Vec::new();
    let mut sums: BTreeMap<(String, String, usize, String), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let key = (r.chain_id.clone(), r.mode.clone(), r.depth, r.metric.clone());
        let e = sums.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        e.0 += r.value;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let (s, n) = sums[&key];
            Aggregate {
                chain_id: key.0,
                mode: key.1,
                depth: key.2,
                metric: key.3,
                value: s / n as f64,
                cells: n,
            }
        })
        .collect()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("chain_id,mode,depth,dataset,model,metric,value\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.chain_id, r.mode, r.depth, r.dataset, r.model, r.metric, r.value
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aggregate value for one chain, mode, depth and metric.
    pub fn mean(&self, chain_id: &str, mode: &str, depth: usize, metric: &str) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.chain_id == chain_id && a.mode == mode && a.depth == depth && a.metric == metric)
            .map(|a| a.value)
    }

    /// Rows for one chain, mode, depth and metric.
    pub fn select<'a>(
        &'a self,
        chain_id: &'a str,
        mode: &'a str,
        depth: usize,
        metric: &'a str,
    ) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.chain_id == chain_id && r.mode == mode && r.depth == depth && r.metric == metric)
    }

    /// Summary in the layout of the ensemble comparison table: the original
    /// images and every mode at depth `n`, with mean gender EER and mean TMR
    /// at `fmr`. `ensemble` and `flow` name the chains to read.
    pub fn summary_table(&self, ensemble: &str, flow: &str, n: usize, fmr: f64) -> String {
        let tmr = tmr_metric(fmr);
        let cells: [(&str, &str, &str, usize); 5] = [
            ("Orig", BASELINE, BASELINE, 0),
            ("Ens-Avg", ensemble, EvalMode::EnsAvg.name(), n),
            ("Ens-Gibbs", ensemble, EvalMode::EnsGibbs.name(), n),
            ("Ens-Best", ensemble, EvalMode::EnsBest.name(), n),
            ("FlowSAN", flow, EvalMode::Flow.name(), n),
        ];
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let mut s = format!("n={n:<3} {:>10} {:>10}\n", "EER", format!("TMR@{}%", fmr * 100.0));
        for (label, chain, mode, depth) in cells {
            s.push_str(&format!(
                "{label:<9} {:>10} {:>10}\n",
                fmt(self.mean(chain, mode, depth, "eer")),
                fmt(self.mean(chain, mode, depth, &tmr))
            ));
        }
        s
    }
}
