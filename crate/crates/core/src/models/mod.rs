//! The three network roles: the SAN autoencoder, gender classifiers and
//! face matchers, plus their training loops and checkpoint I/O.

mod classifier;
mod matcher;
mod san;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::FaceDataset;
use crate::error::{Error, Result};
use crate::learn::{checkpoint, Adam, AdamConfig, Exec, Graph, ParamStore, Tensor, Var};
use crate::metrics::{roc_auc, ScoreSet};
use crate::seed;

pub use classifier::{ClassifierConfig, GenderClassifier, Head};
pub use matcher::{cosine, FaceMatcher, MatcherConfig};
pub use san::{SanConfig, SanModel};

pub const ROLE_SAN: &str = "san";
pub const ROLE_GENDER: &str = "gender";
pub const ROLE_MATCHER: &str = "matcher";

/// Images per forward pass during batched inference.
pub const INFER_CHUNK: usize = 256;

/// Minibatch schedule for the auxiliary and unseen models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Standard deviation of Gaussian noise added to training images.
    pub input_noise: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            input_noise: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.adam.lr)));
        }
        if !(self.input_noise >= 0.0 && self.input_noise.is_finite()) {
            return Err(Error::Config(format!("invalid input noise {}", self.input_noise)));
        }
        Ok(())
    }
}

/// Shuffled minibatches for one epoch, a pure function of `(seed, label, epoch)`.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, label: &str, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &format!("{label}/epoch/{epoch}")));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Plain supervised loop shared by the classifier and matcher.
fn fit<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore<f32>,
    n: usize,
    cfg: &FitConfig,
    seed: u64,
    label: &str,
    exec: Exec,
    loss: impl Fn(&M, &mut Graph<f32>, &[usize], u64) -> Result<Var>,
) -> Result<f64> {
    cfg.validate()?;
    let mut adam = Adam::new(cfg.adam, store(model));
    let mut last = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(n, cfg.batch_size, seed, label, epoch);
        for idx in &batches {
            let grads = {
                let mut g = Graph::new(exec);
                let l = loss(model, &mut g, idx, adam.steps())?;
                let v = g.value(l).data()[0];
                if !v.is_finite() {
                    return Err(Error::TrainingFailure(format!(
                        "{label}: non-finite loss in epoch {epoch}"
                    )));
                }
                total += f64::from(v);
                g.backward(l)?
            };
            let params = store(model);
            grads.accumulate_into(params);
            adam.step(params);
        }
        last = total / batches.len() as f64;
        log::debug!("{label} epoch {epoch}: loss {last:.5}");
    }
    Ok(last)
}

/// Training batch with optional Gaussian pixel noise, seeded per step.
fn noisy_batch(dataset: &FaceDataset, idx: &[usize], sd: f64, seed: u64, step: u64) -> Tensor<f32> {
    let mut batch = dataset.batch(idx);
    if sd > 0.0 {
        let noise = Normal::new(0.0, sd as f32).expect("validated sd");
        let mut rng = seed::rng(seed::derive_indexed(seed, "input-noise", step as usize), "step");
        for v in batch.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    batch
}

/// Runs `f` over the dataset in fixed-size chunks and concatenates results.
pub(crate) fn chunked<R>(
    images: &Tensor<f32>,
    mut f: impl FnMut(&Tensor<f32>) -> Result<Vec<R>>,
) -> Result<Vec<R>> {
    let n = images.batch();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + INFER_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        out.extend(f(&images.select(&idx))?);
        start = end;
    }
    Ok(out)
}

/// Applies a batch-to-batch map in fixed-size chunks and stacks the
/// results; `f` receives the chunk's first index.
pub(crate) fn chunked_tensor(
    images: &Tensor<f32>,
    mut f: impl FnMut(usize, &Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<Tensor<f32>> {
    let n = images.batch();
    let mut data = Vec::with_capacity(images.len());
    let mut shape = None;
    let mut start = 0;
    while start < n {
        let end = (start + INFER_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let out = f(start, &images.select(&idx))?;
        shape.get_or_insert_with(|| out.shape().to_vec());
        data.extend(out.into_data());
        start = end;
    }
    let mut shape = shape.expect("non-empty batch");
    shape[0] = n;
    Tensor::new(shape, data)
}

impl GenderClassifier<f32> {
    /// `P(Male)` for a batch of any size.
    pub fn predict_all(&self, images: &Tensor<f32>) -> Result<Vec<f32>> {
        chunked(images, |c| self.predict(c))
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        checkpoint::save(
            dir,
            &self.params,
            ROLE_GENDER,
            seed,
            serde_json::to_value(&self.config)?,
            json!({}),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, params) = checkpoint::load(dir, ROLE_GENDER)?;
        Ok(Self::from_params(serde_json::from_value(m.architecture)?, params))
    }
}

impl FaceMatcher<f32> {
    /// Representations for a batch of any size, one row per image.
    pub fn represent_all(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f32>>> {
        chunked(images, |c| {
            let r = self.represent(c)?;
            Ok((0..r.batch()).map(|i| r.item(i).to_vec()).collect())
        })
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        checkpoint::save(
            dir,
            &self.params,
            ROLE_MATCHER,
            seed,
            serde_json::to_value(&self.config)?,
            json!({ "n_classes": self.n_classes }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, params) = checkpoint::load(dir, ROLE_MATCHER)?;
        let n_classes = m.extra["n_classes"]
            .as_u64()
            .ok_or_else(|| Error::Input(format!("{}: missing n_classes", dir.display())))?;
        Ok(Self::from_params(
            serde_json::from_value(m.architecture)?,
            n_classes as usize,
            params,
        ))
    }
}

impl SanModel<f32> {
    /// Saves with free-form provenance in the manifest's `extra` field.
    pub fn save(&self, dir: &Path, seed: u64, provenance: serde_json::Value) -> Result<()> {
        checkpoint::save(
            dir,
            &self.params,
            ROLE_SAN,
            seed,
            serde_json::to_value(&self.config)?,
            provenance,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, params) = checkpoint::load(dir, ROLE_SAN)?;
        Self::from_params(serde_json::from_value(m.architecture)?, params)
    }
}

/// Trains `G` by binary cross-entropy on the dataset's gender labels.
///
/// Fails if the trained model cannot reach AUC 0.9 on its own training data.
pub fn train_gender_classifier(
    dataset: &FaceDataset,
    config: &ClassifierConfig,
    fit_cfg: &FitConfig,
    seed: u64,
    exec: Exec,
) -> Result<GenderClassifier> {
    dataset.check_both_genders()?;
    let mut model = GenderClassifier::new(config.clone(), dataset.h, dataset.w, seed)?;
    let labels = dataset.labels();
    let last = fit(
        &mut model,
        |m| &mut m.params,
        dataset.len(),
        fit_cfg,
        seed,
        "gender",
        exec,
        |m, g, idx, step| {
            let x = g.constant(noisy_batch(dataset, idx, fit_cfg.input_noise, seed, step));
            let p = m.graph_forward(g, x)?;
            let target = Tensor::from_fn(&[idx.len(), 1], |i| f32::from(labels[idx[i]]));
            let rows = g.bce_rows(p, target, crate::losses::EPS as f32)?;
            Ok(g.mean(rows))
        },
    )?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let scores = model.predict_all(&dataset.batch(&all))?;
    let auc = roc_auc(&ScoreSet::new(
        scores.iter().map(|&s| f64::from(s)).collect(),
        labels.iter().map(|&y| y == 1).collect(),
    )?)?;
    if auc < 0.9 {
        return Err(Error::TrainingFailure(format!(
            "gender classifier reached training AUC {auc:.3} < 0.9 (final loss {last:.4}, \
             {} samples, {} epochs)",
            dataset.len(),
            fit_cfg.epochs
        )));
    }
    Ok(model)
}

/// Trains `M` as an identity classifier; its embedding layer is the
/// representation.
///
/// Fails if training identification accuracy stays below 0.5.
pub fn train_face_matcher(
    dataset: &FaceDataset,
    config: &MatcherConfig,
    fit_cfg: &FitConfig,
    seed: u64,
    exec: Exec,
) -> Result<FaceMatcher> {
    let groups = dataset.by_identity();
    if groups.len() < 2 || groups.values().any(|v| v.len() < 2) {
        return Err(Error::DegenerateInput(
            "matcher training needs at least 2 identities with 2 samples each".into(),
        ));
    }
    let class_of: BTreeMap<u32, usize> = groups.keys().enumerate().map(|(k, &id)| (id, k)).collect();
    let classes: Vec<usize> = dataset.samples.iter().map(|s| class_of[&s.identity]).collect();
    let mut model = FaceMatcher::new(config.clone(), dataset.h, dataset.w, groups.len(), seed)?;
    let last = fit(
        &mut model,
        |m| &mut m.params,
        dataset.len(),
        fit_cfg,
        seed,
        "matcher",
        exec,
        |m, g, idx, step| {
            let x = g.constant(noisy_batch(dataset, idx, fit_cfg.input_noise, seed, step));
            let r = m.graph_represent(g, x)?;
            let logits = m.graph_logits(g, r)?;
            let lab: Vec<usize> = idx.iter().map(|&i| classes[i]).collect();
            let rows = g.softmax_xent(logits, &lab)?;
            Ok(g.mean(rows))
        },
    )?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let predicted = chunked(&dataset.batch(&all), |c| {
        let mut g = Graph::new(exec);
        let x = g.constant(c.clone());
        let r = model.graph_represent(&mut g, x)?;
        let l = model.graph_logits(&mut g, r)?;
        let v = g.value(l);
        Ok((0..v.batch())
            .map(|i| {
                let row = v.item(i);
                (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b })
            })
            .collect())
    })?;
    let correct = predicted.iter().zip(&classes).filter(|(a, b)| a == b).count();
    let acc = correct as f64 / classes.len() as f64;
    if acc < 0.5 {
        return Err(Error::TrainingFailure(format!(
            "face matcher reached training identification accuracy {acc:.3} < 0.5 \
             (final loss {last:.4}, {} identities, {} epochs)",
            groups.len(),
            fit_cfg.epochs
        )));
    }
    Ok(model)
}

/// Cosine similarity of `R_M(a)` and `R_M(b)` for two `h × w` images.
pub fn match_score(m: &FaceMatcher, a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    // One image per pass keeps each representation independent of its batch
    // position, so the score is exactly symmetric.
    let ra = m.represent(&Tensor::new(vec![1, 1, h, w], a.to_vec())?)?;
    let rb = m.represent(&Tensor::new(vec![1, 1, h, w], b.to_vec())?)?;
    cosine(ra.data(), rb.data())
}

#[cfg(test)]
mod tests;
