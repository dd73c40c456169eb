//! Genuine/impostor pair protocol between original and perturbed images.

use rand::Rng;

use crate::data::FaceDataset;
use crate::error::{Error, Result};
use crate::learn::Tensor;
use crate::models::{cosine, FaceMatcher};
use crate::seed;

/// Index pairs `(a, b)`: `a` indexes an original image, `b` a perturbed one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchProtocol {
    pub genuine: Vec<(usize, usize)>,
    pub impostor: Vec<(usize, usize)>,
}

/// All ordered same-identity pairs of distinct samples, plus
/// `impostor_pairs` different-identity pairs drawn with `seed`.
pub fn build_match_protocol(dataset: &FaceDataset, impostor_pairs: usize, seed: u64) -> Result<MatchProtocol> {
    let groups = dataset.by_identity();
    let mut genuine = Vec::new();
    for (id, members) in &groups {
        if members.len() < 2 {
            log::warn!("identity {id} has a single sample; no genuine pairs");
            continue;
        }
        for &a in members {
            for &b in members {
                if a != b {
                    genuine.push((a, b));
                }
            }
        }
    }
    if groups.len() < 2 || genuine.is_empty() {
        return Err(Error::DegenerateInput(
            "matching protocol needs two identities and a genuine pair".into(),
        ));
    }
    let ids: Vec<u32> = dataset.samples.iter().map(|s| s.identity).collect();
    let mut rng = seed::rng(seed, "impostor-pairs");
    let n = dataset.len();
    let mut impostor = Vec::with_capacity(impostor_pairs);
    while impostor.len() < impostor_pairs {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if ids[a] != ids[b] {
            impostor.push((a, b));
        }
    }
    Ok(MatchProtocol { genuine, impostor })
}

/// Cosine scores of `R_M(original_a)` vs `R_M(perturbed_b)` for every pair.
pub fn match_scores(
    matcher: &FaceMatcher,
    originals: &Tensor<f32>,
    perturbed: &Tensor<f32>,
    protocol: &MatchProtocol,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ra = matcher.represent_all(originals)?;
    let rb = matcher.represent_all(perturbed)?;
    let score = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        pairs.iter().map(|&(a, b)| cosine(&ra[a], &rb[b])).collect()
    };
    Ok((score(&protocol.genuine)?, score(&protocol.impostor)?))
}
