//! Synthetic labelled face-like dataset, gender prototypes and the
//! diversity-resampling scheme for auxiliary classifiers.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::learn::Tensor;
use crate::seed;

pub const MANIFEST_JSON: &str = "manifest.json";
pub const IMAGES_BIN: &str = "images.bin";

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub h: usize,
    pub w: usize,
    /// Fraction of identities tagged as the minority cohort.
    pub cohort_fraction: f64,
    pub seed: u64,
    /// Mean |masculinity| of each gender; larger separates the classes more.
    pub gender_strength: f64,
    /// Spread of the per-identity masculinity score.
    pub gender_spread: f64,
    /// Per-sample, per-cue jitter of the masculinity score (styling varies
    /// between captures of one identity).
    pub cue_jitter: f64,
    pub pixel_noise: f64,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self {
            n_identities: 400,
            samples_per_identity: 6,
            h: 32,
            w: 32,
            cohort_fraction: 0.2,
            seed: 7,
            gender_strength: 2.0,
            gender_spread: 0.2,
            cue_jitter: 0.8,
            pixel_noise: 0.025,
        }
    }
}

impl GenerationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::Config("n_identities must be at least 2".into()));
        }
        if self.samples_per_identity < 1 {
            return Err(Error::Config("samples_per_identity must be positive".into()));
        }
        if self.h < 8 || self.w < 8 {
            return Err(Error::Config(format!(
                "image size {}x{} below the 8x8 minimum",
                self.h, self.w
            )));
        }
        if !(0.0..=1.0).contains(&self.cohort_fraction) {
            return Err(Error::Config("cohort_fraction must lie in [0, 1]".into()));
        }
        if !(self.gender_strength.is_finite()
            && self.gender_spread >= 0.0
            && self.cue_jitter >= 0.0
            && self.pixel_noise >= 0.0)
        {
            return Err(Error::Config("generator noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Full,
    AuxTrain,
    SanTrain,
    UnseenTrain,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Full => "full",
            Split::AuxTrain => "aux-train",
            Split::SanTrain => "san-train",
            Split::UnseenTrain => "unseen-train",
            Split::Eval => "eval",
        }
    }
}

/// One labelled image; `gender` is 1 for male, 0 for female.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub image: Vec<f32>,
    pub gender: u8,
    pub identity: u32,
    pub cohort: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceDataset {
    pub spec: GenerationSpec,
    pub split: Split,
    pub seed: u64,
    pub h: usize,
    pub w: usize,
    pub samples: Vec<FaceSample>,
}

/// Generates the full (unpartitioned) dataset described by `spec`.
pub fn generate_dataset(spec: &GenerationSpec) -> Result<FaceDataset> {
    spec.validate()?;
    let n = spec.n_identities;
    let n_minority = (spec.cohort_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(spec.seed, "cohort"));
    let minority: BTreeSet<usize> = order[..n_minority].iter().copied().collect();

    let mut samples = Vec::with_capacity(n * spec.samples_per_identity);
    for identity in 0..n {
        let male = identity % 2 == 0;
        let cohort = u8::from(minority.contains(&identity));
        let mut id_rng = seed::rng(spec.seed, &format!("identity/{identity}"));
        let latent = synth::sample_identity(spec, male, cohort, &mut id_rng);
        for j in 0..spec.samples_per_identity {
            let mut rng = seed::rng(spec.seed, &format!("sample/{identity}/{j}"));
            samples.push(FaceSample {
                image: synth::render(spec, &latent, &mut rng),
                gender: u8::from(latent.male),
                identity: identity as u32,
                cohort: latent.cohort,
            });
        }
    }
    Ok(FaceDataset {
        spec: spec.clone(),
        split: Split::Full,
        seed: spec.seed,
        h: spec.h,
        w: spec.w,
        samples,
    })
}

/// Fractions of identities assigned to each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSpec {
    pub aux_train: f64,
    pub san_train: f64,
    pub unseen_train: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            aux_train: 0.3,
            san_train: 0.3,
            unseen_train: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub aux_train: FaceDataset,
    pub san_train: FaceDataset,
    pub unseen_train: FaceDataset,
    pub eval: FaceDataset,
}

impl Partition {
    pub fn get(&self, split: Split) -> Option<&FaceDataset> {
        match split {
            Split::AuxTrain => Some(&self.aux_train),
            Split::SanTrain => Some(&self.san_train),
            Split::UnseenTrain => Some(&self.unseen_train),
            Split::Eval => Some(&self.eval),
            Split::Full => None,
        }
    }
}

/// Splits a full dataset by identity into the four working splits.
pub fn partition(full: &FaceDataset, fractions: &PartitionSpec) -> Result<Partition> {
    // Stratified by gender so every split holds both classes.
    let mut gender_of: BTreeMap<u32, u8> = BTreeMap::new();
    for s in &full.samples {
        gender_of.insert(s.identity, s.gender);
    }
    let mut rng = seed::rng(full.seed, "partition");
    let mut groups: [Vec<u32>; 4] = Default::default();
    for g in [0u8, 1] {
        let mut ids: Vec<u32> = gender_of
            .iter()
            .filter(|(_, &v)| v == g)
            .map(|(&k, _)| k)
            .collect();
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        let a = (fractions.aux_train * n).round() as usize;
        let b = a + (fractions.san_train * n).round() as usize;
        let c = (b + (fractions.unseen_train * n).round() as usize).min(ids.len());
        if !(0 < a && a < b && b < c && c < ids.len()) {
            return Err(Error::Config(format!(
                "partition fractions {fractions:?} leave an empty split for {} identities of gender {g}",
                ids.len()
            )));
        }
        groups[0].extend_from_slice(&ids[..a]);
        groups[1].extend_from_slice(&ids[a..b]);
        groups[2].extend_from_slice(&ids[b..c]);
        groups[3].extend_from_slice(&ids[c..]);
    }
    let part = |range: &[u32], split: Split| -> Result<FaceDataset> {
        let keep: BTreeSet<u32> = range.iter().copied().collect();
        let ds = full.subset(split, |s| keep.contains(&s.identity));
        ds.check_both_genders()?;
        Ok(ds)
    };
    let p = Partition {
        aux_train: part(&groups[0], Split::AuxTrain)?,
        san_train: part(&groups[1], Split::SanTrain)?,
        unseen_train: part(&groups[2], Split::UnseenTrain)?,
        eval: part(&groups[3], Split::Eval)?,
    };
    let train: BTreeSet<u32> = p
        .aux_train
        .identities()
        .union(&p.san_train.identities())
        .copied()
        .collect();
    let held: BTreeSet<u32> = p
        .unseen_train
        .identities()
        .union(&p.eval.identities())
        .copied()
        .collect();
    assert!(train.is_disjoint(&held), "training and held-out identities overlap");
    Ok(p)
}

impl FaceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn identities(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.identity).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.gender).collect()
    }

    pub fn subset(&self, split: Split, keep: impl Fn(&FaceSample) -> bool) -> FaceDataset {
        FaceDataset {
            spec: self.spec.clone(),
            split,
            seed: self.seed,
            h: self.h,
            w: self.w,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn check_both_genders(&self) -> Result<()> {
        for g in [0u8, 1] {
            if !self.samples.iter().any(|s| s.gender == g) {
                return Err(Error::EmptyClass(format!(
                    "{} split has no {} samples",
                    self.split.name(),
                    if g == 1 { "male" } else { "female" }
                )));
            }
        }
        Ok(())
    }

    /// Samples grouped by identity, in first-appearance order of identities.
    pub fn by_identity(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            m.entry(s.identity).or_default().push(i);
        }
        m
    }

    /// `[n, 1, h, w]` batch of the selected samples.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.pixels());
        for &i in indices {
            data.extend_from_slice(&self.samples[i].image);
        }
        Tensor::new(vec![indices.len(), 1, self.h, self.w], data).expect("consistent image size")
    }

    /// Every image as one `[n, 1, h, w]` batch.
    pub fn all_images(&self) -> Tensor<f32> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    /// Copy with images replaced by `images` (one `h·w` image per sample).
    pub fn with_images(&self, images: &Tensor<f32>, split: Split) -> Result<FaceDataset> {
        if images.batch() != self.len() || images.per_item() != self.pixels() {
            return Err(Error::Shape(format!(
                "{:?} images for {} samples of {}x{}",
                images.shape(),
                self.len(),
                self.h,
                self.w
            )));
        }
        let mut out = self.clone();
        out.split = split;
        for (i, s) in out.samples.iter_mut().enumerate() {
            s.image.copy_from_slice(images.item(i));
        }
        Ok(out)
    }

    /// SHA-256 over labels and image bytes.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.h as u64).to_le_bytes());
        h.update((self.w as u64).to_le_bytes());
        for s in &self.samples {
            h.update([s.gender, s.cohort]);
            h.update(s.identity.to_le_bytes());
            for v in &s.image {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Per-gender mean images.
#[derive(Debug, Clone, PartialEq)]
pub struct GenderPrototypes {
    pub h: usize,
    pub w: usize,
    pub female: Vec<f64>,
    pub male: Vec<f64>,
}

pub fn compute_prototypes(dataset: &FaceDataset) -> Result<GenderPrototypes> {
    let n = dataset.pixels();
    let mut sums = [vec![0.0f64; n], vec![0.0f64; n]];
    let mut counts = [0usize; 2];
    for s in &dataset.samples {
        let g = usize::from(s.gender);
        counts[g] += 1;
        for (acc, &v) in sums[g].iter_mut().zip(&s.image) {
            *acc += f64::from(v);
        }
    }
    for (g, name) in [(0, "female"), (1, "male")] {
        if counts[g] == 0 {
            return Err(Error::EmptyClass(format!("no {name} samples for prototype")));
        }
    }
    let [female, male] = sums;
    let mean = |v: Vec<f64>, c: usize| v.into_iter().map(|x| x / c as f64).collect();
    Ok(GenderPrototypes {
        h: dataset.h,
        w: dataset.w,
        female: mean(female, counts[0]),
        male: mean(male, counts[1]),
    })
}

impl GenderPrototypes {
    pub fn as_f32(&self, male: bool) -> Vec<f32> {
        let src = if male { &self.male } else { &self.female };
        src.iter().map(|&v| v as f32).collect()
    }

    /// `[n, 1, h, w]` batch of same-gender and opposite-gender prototypes
    /// for the given labels.
    pub fn batches(&self, labels: &[u8]) -> (Tensor<f32>, Tensor<f32>) {
        let male = self.as_f32(true);
        let female = self.as_f32(false);
        let mut same = Vec::with_capacity(labels.len() * male.len());
        let mut opp = Vec::with_capacity(labels.len() * male.len());
        for &y in labels {
            let (s, o) = select_prototypes(&male, &female, y);
            same.extend_from_slice(s);
            opp.extend_from_slice(o);
        }
        let shape = vec![labels.len(), 1, self.h, self.w];
        (
            Tensor::new(shape.clone(), same).expect("prototype size"),
            Tensor::new(shape, opp).expect("prototype size"),
        )
    }
}

/// `(P_sm, P_op)` for label `y` (1 = male).
pub fn select_prototypes<'a, P: ?Sized>(male: &'a P, female: &'a P, y: u8) -> (&'a P, &'a P) {
    if y == 1 {
        (male, female)
    } else {
        (female, male)
    }
}

/// Partitions the minority cohort into `n_members` disjoint subsets and
/// appends `replication` copies of subset `member_index`.
pub fn resample_for_diversity(
    dataset: &FaceDataset,
    member_index: usize,
    n_members: usize,
    replication: usize,
) -> Result<FaceDataset> {
    if n_members == 0 || member_index >= n_members {
        return Err(Error::Usage(format!(
            "member index {member_index} out of range for {n_members} members"
        )));
    }
    if replication == 0 {
        return Err(Error::Usage("replication must be at least 1".into()));
    }
    let subsets = minority_subsets(dataset, n_members)?;
    let mut out = dataset.clone();
    for _ in 0..replication {
        for &i in &subsets[member_index] {
            out.samples.push(dataset.samples[i].clone());
        }
    }
    Ok(out)
}

/// The `n_members` disjoint minority-cohort index subsets used by
/// [`resample_for_diversity`].
pub fn minority_subsets(dataset: &FaceDataset, n_members: usize) -> Result<Vec<Vec<usize>>> {
    let mut minority: Vec<usize> = dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.cohort == 1)
        .map(|(i, _)| i)
        .collect();
    if minority.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "{} split has no minority-cohort samples to resample",
            dataset.split.name()
        )));
    }
    minority.shuffle(&mut seed::rng(dataset.seed, "resample"));
    let len = minority.len();
    Ok((0..n_members)
        .map(|k| minority[k * len / n_members..(k + 1) * len / n_members].to_vec())
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: usize,
    identity: u32,
    gender: u8,
    cohort: u8,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    spec: GenerationSpec,
    split: Split,
    seed: u64,
    h: usize,
    w: usize,
    content_hash: String,
    samples: Vec<SampleEntry>,
}

impl FaceDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let mut bytes = Vec::with_capacity(self.len() * self.pixels() * 4);
        let mut entries = Vec::with_capacity(self.len());
        for (id, s) in self.samples.iter().enumerate() {
            entries.push(SampleEntry {
                id,
                identity: s.identity,
                gender: s.gender,
                cohort: s.cohort,
                offset: bytes.len() as u64,
            });
            for v in &s.image {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = DatasetManifest {
            spec: self.spec.clone(),
            split: self.split,
            seed: self.seed,
            h: self.h,
            w: self.w,
            content_hash: self.content_hash(),
            samples: entries,
        };
        let bin = dir.join(IMAGES_BIN);
        fs::write(&bin, bytes).at(&bin)?;
        let json = dir.join(MANIFEST_JSON);
        fs::write(&json, serde_json::to_vec_pretty(&manifest)?).at(&json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<FaceDataset> {
        let json = dir.join(MANIFEST_JSON);
        if !json.exists() {
            return Err(Error::MissingArtifact {
                path: json,
                hint: "dataset directory has no manifest; run `gen-data` first".into(),
            });
        }
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&json).at(&json)?)?;
        let bin = dir.join(IMAGES_BIN);
        let bytes = fs::read(&bin).at(&bin)?;
        let n = manifest.h * manifest.w;
        let samples = manifest
            .samples
            .iter()
            .map(|e| {
                let start = e.offset as usize;
                let chunk = bytes.get(start..start + 4 * n).ok_or_else(|| {
                    Error::Input(format!("{} truncated at sample {}", bin.display(), e.id))
                })?;
                Ok(FaceSample {
                    image: chunk
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                    gender: e.gender,
                    identity: e.identity,
                    cohort: e.cohort,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FaceDataset {
            spec: manifest.spec,
            split: manifest.split,
            seed: manifest.seed,
            h: manifest.h,
            w: manifest.w,
            samples,
        })
    }

    /// Content hash recorded in a saved dataset's manifest, if present.
    pub fn stored_hash(dir: &Path) -> Option<String> {
        let bytes = fs::read(dir.join(MANIFEST_JSON)).ok()?;
        let v: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
        v.get("content_hash")?.as_str().map(str::to_owned)
    }
}
