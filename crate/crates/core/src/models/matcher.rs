use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{Graph, Init, ParamStore, Real, Tensor, Var};
use crate::seed;

use super::classifier::{push_trunk, run_trunk, trunk_width, Head};

/// Face matcher trained as an identity classifier. The representation
/// `R_M(I)` is the output of the embedding layer that precedes the identity
/// logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub channels: Vec<usize>,
    pub head: Head,
    pub embed_dim: usize,
    pub leak: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 32],
            head: Head::Flatten,
            embed_dim: 64,
            leak: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceMatcher<T: Real = f32> {
    pub config: MatcherConfig,
    pub n_classes: usize,
    pub params: ParamStore<T>,
}

impl<T: Real> FaceMatcher<T> {
    pub fn new(config: MatcherConfig, h: usize, w: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.embed_dim == 0 || n_classes < 2 {
            return Err(Error::Config(
                "matcher needs conv stages, a positive embedding size and at least 2 identities".into(),
            ));
        }
        let mut rng = seed::rng(seed, "matcher-init");
        let mut params = ParamStore::new();
        push_trunk(&mut params, &config.channels, config.leak, &mut rng);
        let fin = trunk_width(&config.channels, config.head, h, w);
        let d = config.embed_dim;
        params.push("embed.w", Init::Xavier.sample(&[d, fin], fin, d, &mut rng));
        params.push("embed.b", Tensor::zeros(&[d]));
        params.push(
            "logits.w",
            Init::He { leak: config.leak }.sample(&[n_classes, d], d, n_classes, &mut rng),
        );
        params.push("logits.b", Tensor::zeros(&[n_classes]));
        Ok(Self {
            config,
            n_classes,
            params,
        })
    }

    pub fn from_params(config: MatcherConfig, n_classes: usize, params: ParamStore<T>) -> Self {
        Self {
            config,
            n_classes,
            params,
        }
    }

    /// `[N,1,H,W] -> [N,d]` representation vectors.
    pub fn graph_represent(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        let n = self.config.channels.len();
        let x = run_trunk(g, &self.params, n, self.config.head, self.config.leak, image)?;
        let (w, b) = (g.param(&self.params, 2 * n), g.param(&self.params, 2 * n + 1));
        g.dense(x, w, b)
    }

    /// Identity logits on top of a representation node.
    pub fn graph_logits(&self, g: &mut Graph<T>, repr: Var) -> Result<Var> {
        let k = 2 * self.config.channels.len() + 2;
        let a = g.leaky_relu(repr, T::lit(self.config.leak));
        let (w, b) = (g.param(&self.params, k), g.param(&self.params, k + 1));
        g.dense(a, w, b)
    }

    pub fn represent(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::default();
        let x = g.constant(images.clone());
        let r = self.graph_represent(&mut g, x)?;
        Ok(g.value(r).clone())
    }

    pub fn cast<U: Real>(&self) -> FaceMatcher<U> {
        FaceMatcher {
            config: self.config.clone(),
            n_classes: self.n_classes,
            params: self.params.cast(),
        }
    }
}

/// Cosine similarity of two representation vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "representation sizes {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateRepresentation);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
