use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{Graph, Init, ParamStore, Real, Tensor, Var};
use crate::seed;

/// How the last feature map is reduced before the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    MeanPool,
    Flatten,
}

/// Small CNN: stride-2 3×3 conv stages, a reduction head, optional hidden
/// dense layer, then one sigmoid unit giving `P(Male)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Non-overlapping average pooling applied to the input first.
    pub pool: usize,
    pub channels: Vec<usize>,
    pub head: Head,
    pub hidden: Option<usize>,
    pub leak: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            pool: 1,
            channels: vec![8, 16, 32],
            head: Head::MeanPool,
            hidden: None,
            leak: 0.1,
        }
    }
}

/// Gender classifier `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenderClassifier<T: Real = f32> {
    pub config: ClassifierConfig,
    pub params: ParamStore<T>,
}

/// Builds a conv trunk shared by the classifier and the matcher. Returns the
/// flattened feature width for an `h × w` input.
pub(crate) fn push_trunk<T: Real>(
    params: &mut ParamStore<T>,
    channels: &[usize],
    leak: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) {
    let mut cin = 1;
    for (i, &c) in channels.iter().enumerate() {
        params.push(
            format!("conv{i}.w"),
            Init::He { leak }.sample(&[c, cin, 3, 3], cin * 9, c * 9, rng),
        );
        params.push(format!("conv{i}.b"), Tensor::zeros(&[c]));
        cin = c;
    }
}

pub(crate) fn trunk_width(channels: &[usize], head: Head, h: usize, w: usize) -> usize {
    let c = *channels.last().expect("non-empty trunk");
    match head {
        Head::MeanPool => c,
        Head::Flatten => {
            let (mut hh, mut ww) = (h, w);
            for _ in channels {
                hh = (hh - 1) / 2 + 1;
                ww = (ww - 1) / 2 + 1;
            }
            c * hh * ww
        }
    }
}

pub(crate) fn run_trunk<T: Real>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    n_stages: usize,
    head: Head,
    leak: f64,
    image: Var,
) -> Result<Var> {
    let s = g.value(image).shape().to_vec();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::Shape(format!("expected [N,1,H,W] images, got {s:?}")));
    }
    let mut x = image;
    for i in 0..n_stages {
        let (w, b) = (g.param(params, 2 * i), g.param(params, 2 * i + 1));
        x = g.conv2d(x, w, b, 2, 1)?;
        x = g.leaky_relu(x, T::lit(leak));
    }
    match head {
        Head::MeanPool => g.mean_pool(x),
        Head::Flatten => Ok(g.flatten(x)),
    }
}

impl<T: Real> GenderClassifier<T> {
    pub fn new(config: ClassifierConfig, h: usize, w: usize, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.pool == 0 {
            return Err(Error::Config(
                "classifier needs at least one conv stage and a positive input pool".into(),
            ));
        }
        if h % config.pool != 0 || w % config.pool != 0 {
            return Err(Error::Config(format!(
                "input pool {} does not tile {h}x{w} images",
                config.pool
            )));
        }
        let mut rng = seed::rng(seed, "gender-init");
        let mut params = ParamStore::new();
        push_trunk(&mut params, &config.channels, config.leak, &mut rng);
        let mut fin = trunk_width(&config.channels, config.head, h / config.pool, w / config.pool);
        if let Some(hid) = config.hidden {
            params.push("hidden.w", Init::He { leak: config.leak }.sample(&[hid, fin], fin, hid, &mut rng));
            params.push("hidden.b", Tensor::zeros(&[hid]));
            fin = hid;
        }
        params.push("out.w", Init::Xavier.sample(&[1, fin], fin, 1, &mut rng));
        params.push("out.b", Tensor::zeros(&[1]));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ClassifierConfig, params: ParamStore<T>) -> Self {
        Self { config, params }
    }

    /// `[N,1,H,W] -> [N,1]` probabilities of the male class.
    pub fn graph_forward(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        let n = self.config.channels.len();
        let image = if self.config.pool > 1 {
            g.avg_pool(image, self.config.pool)?
        } else {
            image
        };
        let mut x = run_trunk(g, &self.params, n, self.config.head, self.config.leak, image)?;
        let mut k = 2 * n;
        if self.config.hidden.is_some() {
            let (w, b) = (g.param(&self.params, k), g.param(&self.params, k + 1));
            x = g.dense(x, w, b)?;
            x = g.leaky_relu(x, T::lit(self.config.leak));
            k += 2;
        }
        let (w, b) = (g.param(&self.params, k), g.param(&self.params, k + 1));
        let logits = g.dense(x, w, b)?;
        Ok(g.sigmoid(logits))
    }

    /// `P(Male)` for every image of the batch.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::default();
        let x = g.constant(images.clone());
        let p = self.graph_forward(&mut g, x)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn cast<U: Real>(&self) -> GenderClassifier<U> {
        GenderClassifier {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}
