//! SAN training regimes: a single SAN, an independent ensemble, and the
//! sequential FlowSAN.

use serde::{Deserialize, Serialize};

use crate::data::{FaceDataset, GenderPrototypes};
use crate::error::{Error, Result};
use crate::learn::kernels::map_indexed;
use crate::learn::{Adam, AdamConfig, Exec, Graph, Tensor};
use crate::losses::{self, LossWeights};
use crate::models::{epoch_batches, FaceMatcher, GenderClassifier, SanConfig, SanModel};

/// Target of the pixelwise term `J_D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelScheme {
    /// No pixelwise term.
    None,
    /// Against the image the SAN was fed (the previous stage's output in a flow).
    AgainstInput,
    /// Against the untouched original image.
    AgainstOriginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub scheme: PixelScheme,
    pub san: SanConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            scheme: PixelScheme::AgainstOriginal,
            san: SanConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.adam.lr)));
        }
        self.weights.validate()?;
        self.san.validate()
    }
}

/// One row of `training_log.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub j_d: f64,
    pub j_m: f64,
    pub j_g: f64,
    pub j_tot: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,J_D,J_M,J_G,J_tot\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.step, r.j_d, r.j_m, r.j_g, r.j_tot));
    }
    s
}

/// A frozen auxiliary model together with the id recorded as provenance.
#[derive(Debug, Clone)]
pub struct Auxiliary<'a> {
    pub id: String,
    pub classifier: &'a GenderClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMode {
    Ensemble,
    Flow,
}

impl ChainMode {
    pub fn name(self) -> &'static str {
        match self {
            ChainMode::Ensemble => "ensemble",
            ChainMode::Flow => "flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    /// 1-based training order.
    pub t: usize,
    pub classifier: String,
    pub seed: u64,
}

/// Ordered SAN members with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SanChain {
    pub mode: ChainMode,
    pub members: Vec<SanModel>,
    pub provenance: Vec<MemberInfo>,
}

impl SanChain {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSan {
    pub model: SanModel,
    pub log: Vec<LogRow>,
}

/// Trains one SAN against a frozen gender classifier and face matcher.
///
/// `origin` holds the untouched originals aligned with `dataset` (used by
/// `J_M` and the against-original `J_D`); without it the dataset images are
/// their own origins. `init` fine-tunes an existing SAN instead of a fresh
/// one seeded by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_san(
    dataset: &FaceDataset,
    g_aux: &GenderClassifier,
    m_aux: &FaceMatcher,
    prototypes: &GenderPrototypes,
    cfg: &TrainConfig,
    origin: Option<&FaceDataset>,
    init: Option<&SanModel>,
    seed: u64,
    exec: Exec,
) -> Result<TrainedSan> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("SAN training set is empty".into()));
    }
    if let Some(o) = origin {
        if o.len() != dataset.len() || o.h != dataset.h || o.w != dataset.w {
            return Err(Error::Shape(format!(
                "origin images ({} of {}x{}) not aligned with dataset ({} of {}x{})",
                o.len(),
                o.h,
                o.w,
                dataset.len(),
                dataset.h,
                dataset.w
            )));
        }
    }
    if (prototypes.h, prototypes.w) != (dataset.h, dataset.w) {
        return Err(Error::Shape("prototype size differs from dataset images".into()));
    }
    cfg.san.check_image(dataset.h, dataset.w)?;
    let origin = origin.unwrap_or(dataset);

    let mut g_frozen = g_aux.clone();
    g_frozen.params.freeze();
    let mut m_frozen = m_aux.clone();
    m_frozen.params.freeze();
    let mut san = match init {
        Some(s) => {
            if s.config != cfg.san {
                return Err(Error::Config("initial SAN architecture differs from config".into()));
            }
            s.clone()
        }
        None => SanModel::new(cfg.san.clone(), seed)?,
    };
    let mut adam = Adam::new(cfg.adam, &san.params);
    let labels = dataset.labels();
    let w = cfg.weights;
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        for idx in epoch_batches(dataset.len(), cfg.batch_size, seed, "san", epoch) {
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let (p_sm, p_op) = prototypes.batches(&y);
            let orig = origin.batch(&idx);
            let r_orig = m_frozen.represent(&orig)?;

            let mut g = Graph::new(exec);
            let x = g.constant(dataset.batch(&idx));
            let ps = g.constant(p_sm);
            let po = g.constant(p_op);
            let feat = san.graph_features(&mut g, x, ps)?;
            let out_sm = san.graph_fuse(&mut g, feat, ps)?;
            let out_op = san.graph_fuse(&mut g, feat, po)?;

            let target = match cfg.scheme {
                PixelScheme::None => None,
                PixelScheme::AgainstInput => Some(g.value(x).clone()),
                PixelScheme::AgainstOriginal => Some(orig),
            };
            let jd = match target {
                Some(t) => losses::graph_pixelwise(&mut g, out_sm, t)?,
                None => g.constant(Tensor::scalar(0.0)),
            };
            let r_op = m_frozen.graph_represent(&mut g, out_op)?;
            let jm = losses::graph_matching(&mut g, r_op, r_orig)?;
            let g_sm = g_frozen.graph_forward(&mut g, out_sm)?;
            let g_op = g_frozen.graph_forward(&mut g, out_op)?;
            let jg = losses::graph_gender(&mut g, g_sm, g_op, &y)?;
            let total = losses::graph_total(&mut g, &w, jd, jm, jg)?;

            let val = |v| f64::from(g.value(v).data()[0]);
            let row = LogRow {
                step: adam.steps() + 1,
                j_d: val(jd),
                j_m: val(jm),
                j_g: val(jg),
                j_tot: val(total),
            };
            if ![row.j_d, row.j_m, row.j_g, row.j_tot].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: row.step as usize,
                    jd: row.j_d,
                    jm: row.j_m,
                    jg: row.j_g,
                });
            }
            let grads = g.backward(total)?;
            drop(g);
            grads.accumulate_into(&mut san.params);
            adam.step(&mut san.params);
            log.push(row);
        }
        if let Some(r) = log.last() {
            log::debug!("SAN epoch {epoch}: J_tot {:.4}", r.j_tot);
        }
    }
    Ok(TrainedSan { model: san, log })
}

/// Trains `classifiers.len()` independent SANs on the unmodified dataset,
/// member `i` against classifier `i` with seed `seeds[i]`. Members run
/// concurrently under [`Exec::Parallel`].
pub fn train_ensemble(
    dataset: &FaceDataset,
    classifiers: &[Auxiliary<'_>],
    m_aux: &FaceMatcher,
    prototypes: &GenderPrototypes,
    cfg: &TrainConfig,
    seeds: &[u64],
    exec: Exec,
) -> Result<(SanChain, Vec<Vec<LogRow>>)> {
    if classifiers.is_empty() || classifiers.len() != seeds.len() {
        return Err(Error::Config(format!(
            "ensemble needs one seed per classifier ({} classifiers, {} seeds)",
            classifiers.len(),
            seeds.len()
        )));
    }
    let trained = map_indexed(exec, classifiers.len(), |i| {
        train_san(
            dataset,
            classifiers[i].classifier,
            m_aux,
            prototypes,
            cfg,
            None,
            None,
            seeds[i],
            exec,
        )
    });
    let mut members = Vec::new();
    let mut logs = Vec::new();
    let mut provenance = Vec::new();
    for (i, r) in trained.into_iter().enumerate() {
        let r = r?;
        members.push(r.model);
        logs.push(r.log);
        provenance.push(MemberInfo {
            t: i + 1,
            classifier: classifiers[i].id.clone(),
            seed: seeds[i],
        });
    }
    Ok((
        SanChain {
            mode: ChainMode::Ensemble,
            members,
            provenance,
        },
        logs,
    ))
}

/// Result of [`train_flowsan`]: `stage_inputs[t]` is the dataset SAN_{t+1}
/// was trained on (`stage_inputs[0]` is the original data).
#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub chain: SanChain,
    pub logs: Vec<Vec<LogRow>>,
    pub stage_inputs: Vec<FaceDataset>,
    /// Opposite-prototype outputs of the last stage.
    pub final_output: FaceDataset,
    /// Auxiliary AUC of each member on its own opposite-prototype outputs.
    pub aux_auc: Vec<f64>,
}

/// Above this auxiliary AUC on its own outputs a member is reported as not
/// confusing its classifier.
pub const CONFUSION_WARN_AUC: f64 = 0.6;

/// Sequential FlowSAN training. Stage `t` trains SAN_t on the current
/// images against classifier `t`, with the originals as origin images; the
/// whole set is then replaced by SAN_t's opposite-prototype outputs.
/// `init` supplies per-stage starting weights (fine-tuning from ensemble
/// members); without it stage `t` starts from `seeds[t]`.
#[allow(clippy::too_many_arguments)]
pub fn train_flowsan(
    dataset: &FaceDataset,
    classifiers: &[Auxiliary<'_>],
    m_aux: &FaceMatcher,
    prototypes: &GenderPrototypes,
    cfg: &TrainConfig,
    init: Option<&SanChain>,
    seeds: &[u64],
    exec: Exec,
) -> Result<FlowOutcome> {
    if classifiers.is_empty() || classifiers.len() != seeds.len() {
        return Err(Error::Config(format!(
            "flow needs one seed per classifier ({} classifiers, {} seeds)",
            classifiers.len(),
            seeds.len()
        )));
    }
    if let Some(c) = init {
        if c.len() < classifiers.len() {
            return Err(Error::Config(format!(
                "{} initial members for {} flow stages",
                c.len(),
                classifiers.len()
            )));
        }
    }
    let labels = dataset.labels();
    let mut current = dataset.clone();
    let mut stage_inputs = Vec::new();
    let mut members = Vec::new();
    let mut logs = Vec::new();
    let mut provenance = Vec::new();
    let mut aux_auc = Vec::new();
    for (t, aux) in classifiers.iter().enumerate() {
        let start = init.map(|c| &c.members[t]);
        let r = train_san(
            &current,
            aux.classifier,
            m_aux,
            prototypes,
            cfg,
            Some(dataset),
            start,
            seeds[t],
            exec,
        )?;
        let out = crate::inference::apply_op(&r.model, &current.all_images(), &labels, prototypes)?;
        let auc = crate::inference::gender_auc(aux.classifier, &out, &labels)?;
        if auc > CONFUSION_WARN_AUC {
            log::warn!(
                "flow stage {}: auxiliary `{}` still reaches AUC {auc:.3} on its outputs",
                t + 1,
                aux.id
            );
        }
        aux_auc.push(auc);
        stage_inputs.push(current.clone());
        current = dataset.with_images(&out, current.split)?;
        members.push(r.model);
        logs.push(r.log);
        provenance.push(MemberInfo {
            t: t + 1,
            classifier: aux.id.clone(),
            seed: seeds[t],
        });
    }
    Ok(FlowOutcome {
        chain: SanChain {
            mode: ChainMode::Flow,
            members,
            provenance,
        },
        logs,
        stage_inputs,
        final_output: current,
        aux_auc,
    })
}
