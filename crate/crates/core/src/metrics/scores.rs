//! ROC AUC, equal error rate and TMR@FMR.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Scores with aligned binary labels (`true` = positive class: male for
/// gender, genuine for matching).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::DegenerateInput("non-finite score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn from_classes(positives: &[f64], negatives: &[f64]) -> Result<Self> {
        let scores = positives.iter().chain(negatives).copied().collect();
        let labels = std::iter::repeat(true)
            .take(positives.len())
            .chain(std::iter::repeat(false).take(negatives.len()))
            .collect();
        Self::new(scores, labels)
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateInput(
                "score set needs both positive and negative samples".into(),
            ));
        }
        Ok((pos, neg))
    }

    fn sorted(&self) -> Vec<(f64, bool)> {
        let mut v: Vec<(f64, bool)> = self.scores.iter().copied().zip(self.labels.iter().copied()).collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        v
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted half (Mann-Whitney rank form).
pub fn roc_auc(s: &ScoreSet) -> Result<f64> {
    let (pos, neg) = s.class_counts()?;
    let sorted = s.sorted();
    // Sum of 1-based mid-ranks of the positives; every term is a
    // half-integer, so the sum is exact.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0;
        let n_pos = sorted[i..=j].iter().filter(|e| e.1).count();
        rank_sum += mid * n_pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// `(FPR, FNR)` at each distinct score used as an inclusive threshold
/// (`score ≥ t` is predicted positive), followed by the point above the
/// maximum score.
pub fn roc_points(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = s.class_counts()?;
    let sorted = s.sorted();
    let mut points = Vec::new();
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        points.push((
            (neg - neg_below) as f64 / neg as f64,
            pos_below as f64 / pos as f64,
        ));
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    points.push((0.0, 1.0));
    Ok(points)
}

/// Equal error rate: where FPR meets FNR on the ROC polyline, linearly
/// interpolated between adjacent threshold points.
pub fn eer(s: &ScoreSet) -> Result<f64> {
    let pts = roc_points(s)?;
    Ok(eer_from_points(&pts))
}

pub(crate) fn eer_from_points(pts: &[(f64, f64)]) -> f64 {
    // FPR falls and FNR rises along the threshold sweep, so d = FPR - FNR
    // goes from +1 to -1 and crosses zero exactly once (possibly on a flat).
    for win in pts.windows(2) {
        let (f0, n0) = win[0];
        let (f1, n1) = win[1];
        let (d0, d1) = (f0 - n0, f1 - n1);
        if d0 == 0.0 {
            return f0;
        }
        if d0 > 0.0 && d1 <= 0.0 {
            let a = d0 / (d0 - d1);
            return f0 + a * (f1 - f0);
        }
    }
    let (f, n) = *pts.last().expect("non-empty ROC");
    (f + n) / 2.0
}

/// Outcome of [`tmr_at_fmr`]; `fmr_used` differs from the request when the
/// impostor set is too small to resolve it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmrAtFmr {
    pub tmr: f64,
    pub fmr_requested: f64,
    pub fmr_used: f64,
    pub threshold: f64,
}

/// Linear-interpolated quantile of sorted values (`(n-1)·q` positioning).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// True match rate at a false match rate: the threshold is the
/// interpolated `1 - fmr` quantile of the impostor scores, and the TMR is
/// the fraction of genuine scores at or above it.
pub fn tmr_at_fmr(genuine: &[f64], impostor: &[f64], fmr: f64) -> Result<TmrAtFmr> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::DegenerateInput(
            "TMR@FMR needs genuine and impostor scores".into(),
        ));
    }
    if !(fmr > 0.0 && fmr < 1.0) {
        return Err(Error::Usage(format!("FMR {fmr} outside (0, 1)")));
    }
    let coarsest = 1.0 / impostor.len() as f64;
    let fmr_used = if fmr < coarsest {
        log::warn!(
            "{} impostor scores cannot resolve FMR {fmr}; reporting at FMR {coarsest}",
            impostor.len()
        );
        coarsest
    } else {
        fmr
    };
    let mut sorted = impostor.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let threshold = quantile_sorted(&sorted, 1.0 - fmr_used);
    let hits = genuine.iter().filter(|&&g| g >= threshold).count();
    Ok(TmrAtFmr {
        tmr: hits as f64 / genuine.len() as f64,
        fmr_requested: fmr,
        fmr_used,
        threshold,
    })
}

#[cfg(test)]
mod tests;
