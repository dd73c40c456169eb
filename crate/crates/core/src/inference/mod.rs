//! Chain evaluation operators: the stacking recursion `Ψ`, ensemble
//! averaging and Gibbs selection, and the oracle best-perturbed selector.
//!
//! Every operator feeds each SAN the prototypes chosen by the sample's
//! label: `P_sm` for the encoder, `P_op` for the fusion layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::GenderPrototypes;
use crate::error::{Error, Result};
use crate::imageio::Grid;
use crate::learn::Tensor;
use crate::losses::binary_cross_entropy;
use crate::metrics::{roc_auc, ScoreSet};
use crate::models::{chunked_tensor, GenderClassifier, SanModel};
use crate::seed;
use crate::training::{ChainMode, SanChain};

/// `SAN(I; P_op)` for a batch of images with labels.
pub fn apply_op(
    san: &SanModel,
    images: &Tensor<f32>,
    labels: &[u8],
    prototypes: &GenderPrototypes,
) -> Result<Tensor<f32>> {
    if labels.len() != images.batch() {
        return Err(Error::Shape(format!(
            "{} labels for {} images",
            labels.len(),
            images.batch()
        )));
    }
    chunked_tensor(images, |start, chunk| {
        let (p_sm, p_op) = prototypes.batches(&labels[start..start + chunk.batch()]);
        san.forward(chunk, &p_sm, &p_op)
    })
}

fn check_depth(chain: &SanChain, t: usize) -> Result<()> {
    if t == 0 || t > chain.len() {
        return Err(Error::Usage(format!(
            "depth {t} outside 1..={} for a chain of {} members",
            chain.len(),
            chain.len()
        )));
    }
    Ok(())
}

/// `Ψ(I, t)`: `SAN_1(I)` for `t = 1`, else `SAN_t(Ψ(I, t-1))`.
pub fn psi(
    chain: &SanChain,
    images: &Tensor<f32>,
    labels: &[u8],
    prototypes: &GenderPrototypes,
    t: usize,
) -> Result<Tensor<f32>> {
    check_depth(chain, t)?;
    let input = if t == 1 {
        images.clone()
    } else {
        psi(chain, images, labels, prototypes, t - 1)?
    };
    apply_op(&chain.members[t - 1], &input, labels, prototypes)
}

/// Loop form of [`psi`], returning every intermediate `⟨I'_1..I'_t⟩`.
pub fn psi_sequence(
    chain: &SanChain,
    images: &Tensor<f32>,
    labels: &[u8],
    prototypes: &GenderPrototypes,
    t: usize,
) -> Result<Vec<Tensor<f32>>> {
    check_depth(chain, t)?;
    let mut out: Vec<Tensor<f32>> = Vec::with_capacity(t);
    for san in &chain.members[..t] {
        let input = out.last().unwrap_or(images);
        let next = apply_op(san, input, labels, prototypes)?;
        out.push(next);
    }
    Ok(out)
}

/// `SAN_i(I; P_op)` for the first `t` members, each applied to the originals.
pub fn member_outputs(
    chain: &SanChain,
    images: &Tensor<f32>,
    labels: &[u8],
    prototypes: &GenderPrototypes,
    t: usize,
) -> Result<Vec<Tensor<f32>>> {
    check_depth(chain, t)?;
    chain.members[..t]
        .iter()
        .map(|san| apply_op(san, images, labels, prototypes))
        .collect()
}

/// Pixelwise mean of the first `t` member outputs.
pub fn ens_avg(outputs: &[Tensor<f32>], t: usize) -> Result<Tensor<f32>> {
    let used = outputs
        .get(..t)
        .filter(|u| !u.is_empty())
        .ok_or_else(|| Error::Usage(format!("depth {t} outside 1..={}", outputs.len())))?;
    let n = used.len() as f64;
    let shape = used[0].shape().to_vec();
    let len = used[0].len();
    let mut data = vec![0.0f32; len];
    for (k, v) in data.iter_mut().enumerate() {
        let s: f64 = used.iter().map(|o| f64::from(o.data()[k])).sum();
        *v = (s / n) as f32;
    }
    Tensor::new(shape, data)
}

/// Uniformly chosen member index in `0..t` for sample `sample` under `seed`.
pub fn gibbs_index(seed: u64, sample: usize, t: usize) -> usize {
    seed::rng(seed::derive_indexed(seed, "gibbs", sample), "pick").gen_range(0..t)
}

/// Per-sample uniformly selected member output; returns the images and the
/// 0-based member index used for each sample.
pub fn ens_gibbs(outputs: &[Tensor<f32>], t: usize, seed: u64) -> Result<(Tensor<f32>, Vec<usize>)> {
    if t == 0 || t > outputs.len() {
        return Err(Error::Usage(format!("depth {t} outside 1..={}", outputs.len())));
    }
    let n = outputs[0].batch();
    let picks: Vec<usize> = (0..n).map(|k| gibbs_index(seed, k, t)).collect();
    Ok((gather(outputs, &picks), picks))
}

/// Oracle selector: per sample, the member output that `G` finds least
/// like the true gender (argmin `P(Male)` for males, argmax for females;
/// ties go to the lowest index).
pub fn ens_best(
    outputs: &[Tensor<f32>],
    t: usize,
    labels: &[u8],
    g: &GenderClassifier,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    if t == 0 || t > outputs.len() {
        return Err(Error::Usage(format!("depth {t} outside 1..={}", outputs.len())));
    }
    let probs: Vec<Vec<f32>> = outputs[..t].iter().map(|o| g.predict_all(o)).collect::<Result<_>>()?;
    let picks: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(k, &y)| best_index(&probs.iter().map(|p| p[k]).collect::<Vec<_>>(), y))
        .collect();
    Ok((gather(outputs, &picks), picks))
}

/// Index of the member probability selected for label `y` (first on ties).
pub fn best_index(p_male: &[f32], y: u8) -> usize {
    let mut best = 0;
    for (i, &p) in p_male.iter().enumerate().skip(1) {
        let better = if y == 1 { p < p_male[best] } else { p > p_male[best] };
        if better {
            best = i;
        }
    }
    best
}

fn gather(outputs: &[Tensor<f32>], picks: &[usize]) -> Tensor<f32> {
    let shape = outputs[0].shape().to_vec();
    let mut data = Vec::with_capacity(outputs[0].len());
    for (k, &i) in picks.iter().enumerate() {
        data.extend_from_slice(outputs[i].item(k));
    }
    Tensor::new(shape, data).expect("gathered batch keeps its shape")
}

/// Cross-entropy of `G`'s prediction against the true label.
pub fn gender_error(y: u8, p_male: f32) -> f64 {
    binary_cross_entropy(f64::from(y), f64::from(p_male))
}

/// AUC of `G` on a batch, males as the positive class.
pub fn gender_auc(g: &GenderClassifier, images: &Tensor<f32>, labels: &[u8]) -> Result<f64> {
    let p = g.predict_all(images)?;
    roc_auc(&ScoreSet::new(
        p.iter().map(|&v| f64::from(v)).collect(),
        labels.iter().map(|&y| y == 1).collect(),
    )?)
}

/// Labels predicted by a helper classifier, for label-free inference.
pub fn predict_labels(helper: &GenderClassifier, images: &Tensor<f32>) -> Result<Vec<u8>> {
    Ok(helper
        .predict_all(images)?
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect())
}

/// Evaluation mode of a chain at a given depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Flow,
    EnsAvg,
    EnsGibbs,
    EnsBest,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Flow => "flow",
            EvalMode::EnsAvg => "ens-avg",
            EvalMode::EnsGibbs => "ens-gibbs",
            EvalMode::EnsBest => "ens-best",
        }
    }
}

/// The original image and its outputs at depths `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTrace {
    pub original: Vec<f32>,
    pub outputs: Vec<Vec<f32>>,
    pub mode: EvalMode,
    /// 1-based ids of the members contributing at each depth.
    pub members: Vec<Vec<usize>>,
    /// Gibbs selections (0-based) and the seed that produced them.
    pub gibbs: Option<(Vec<usize>, u64)>,
}

/// Trace of one image through a chain up to depth `n`.
pub fn trace(
    chain: &SanChain,
    image: &[f32],
    y: u8,
    prototypes: &GenderPrototypes,
    n: usize,
    mode: EvalMode,
    gibbs_seed: u64,
) -> Result<PerturbationTrace> {
    let x = Tensor::new(vec![1, 1, prototypes.h, prototypes.w], image.to_vec())?;
    let labels = [y];
    let (outputs, members, gibbs) = match (chain.mode, mode) {
        (ChainMode::Flow, EvalMode::Flow) => {
            let seq = psi_sequence(chain, &x, &labels, prototypes, n)?;
            let members = (1..=n).map(|t| (1..=t).collect()).collect();
            (seq.into_iter().map(Tensor::into_data).collect(), members, None)
        }
        (ChainMode::Ensemble, EvalMode::EnsAvg) => {
            let outs = member_outputs(chain, &x, &labels, prototypes, n)?;
            let avg = (1..=n).map(|t| ens_avg(&outs, t).map(Tensor::into_data)).collect::<Result<_>>()?;
            (avg, (1..=n).map(|t| (1..=t).collect()).collect(), None)
        }
        (ChainMode::Ensemble, EvalMode::EnsGibbs) => {
            let outs = member_outputs(chain, &x, &labels, prototypes, n)?;
            let mut imgs = Vec::new();
            let mut picks = Vec::new();
            for t in 1..=n {
                let (img, p) = ens_gibbs(&outs, t, seed::derive_indexed(gibbs_seed, "depth", t))?;
                imgs.push(img.into_data());
                picks.push(p[0]);
            }
            let members = picks.iter().map(|&p| vec![p + 1]).collect();
            (imgs, members, Some((picks, gibbs_seed)))
        }
        (m, e) => {
            return Err(Error::Usage(format!(
                "cannot trace a {} chain in {} mode",
                m.name(),
                e.name()
            )))
        }
    };
    Ok(PerturbationTrace {
        original: image.to_vec(),
        outputs,
        mode,
        members,
        gibbs,
    })
}

impl PerturbationTrace {
    /// One grid row: the original followed by every depth.
    pub fn grid(&self, h: usize, w: usize) -> Grid {
        let mut g = Grid::new(h, w);
        let mut row = vec![self.original.clone()];
        row.extend(self.outputs.iter().cloned());
        g.push_row(row);
        g
    }
}
