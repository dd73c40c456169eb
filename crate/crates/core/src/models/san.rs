use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{Graph, Init, ParamStore, Real, Tensor, Var};
use crate::seed;

/// Widths of the prototype-conditioned autoencoder.
///
/// Every encoder stage is a 3×3 conv with stride 1 or 2; decoder stage `i`
/// mirrors encoder stage `depth-1-i`, upsampling 2× (nearest neighbour)
/// before its 3×3 conv where that encoder stage downsampled. The last
/// decoder width is the feature-channel count `C` that the selected
/// prototype is appended to before the 1×1 fusion conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SanConfig {
    pub enc_channels: Vec<usize>,
    pub enc_strides: Vec<usize>,
    pub dec_channels: Vec<usize>,
    pub leak: f64,
}

impl Default for SanConfig {
    fn default() -> Self {
        Self {
            enc_channels: vec![8, 16, 32],
            enc_strides: vec![2, 2, 1],
            dec_channels: vec![32, 16, 16],
            leak: 0.1,
        }
    }
}

impl SanConfig {
    pub fn depth(&self) -> usize {
        self.enc_channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.dec_channels.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.is_empty() || self.enc_channels.len() != self.dec_channels.len() {
            return Err(Error::Config(
                "SAN encoder and decoder need the same non-zero number of stages".into(),
            ));
        }
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0) {
            return Err(Error::Config("SAN channel widths must be positive".into()));
        }
        if self.enc_strides.len() != self.depth() || self.enc_strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::Config(
                "SAN needs one encoder stride (1 or 2) per stage".into(),
            ));
        }
        Ok(())
    }

    /// Total downsampling factor of the encoder.
    pub fn reduction(&self) -> usize {
        self.enc_strides.iter().product()
    }

    /// Image sides must be divisible by the encoder's downsampling factor.
    pub fn check_image(&self, h: usize, w: usize) -> Result<()> {
        let m = self.reduction();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "SAN encoder downsamples by {m}; image sides must be multiples of it, got {h}x{w}"
            )));
        }
        Ok(())
    }
}

/// Semi-adversarial autoencoder `SAN(I; P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SanModel<T: Real = f32> {
    pub config: SanConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> SanModel<T> {
    pub fn new(config: SanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "san-init");
        let mut params = ParamStore::new();
        let he = Init::He { leak: config.leak };
        let mut cin = 2;
        for (i, &c) in config.enc_channels.iter().enumerate() {
            params.push(format!("enc{i}.w"), he.sample(&[c, cin, 3, 3], cin * 9, c * 9, &mut rng));
            params.push(format!("enc{i}.b"), Tensor::zeros(&[c]));
            cin = c;
        }
        for (i, &c) in config.dec_channels.iter().enumerate() {
            params.push(format!("dec{i}.w"), he.sample(&[c, cin, 3, 3], cin * 9, c * 9, &mut rng));
            params.push(format!("dec{i}.b"), Tensor::zeros(&[c]));
            cin = c;
        }
        let fin = cin + 1;
        params.push("fuse.w", Init::Xavier.sample(&[1, fin, 1, 1], fin, 1, &mut rng));
        params.push("fuse.b", Tensor::zeros(&[1]));
        Ok(Self { config, params })
    }

    pub fn from_params(config: SanConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = 4 * config.depth() + 2;
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "SAN expects {expected} parameter tensors, got {}",
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    /// Encoder-decoder features of `image ⊕ p_same`: `[N,C,H,W]`.
    pub fn graph_features(&self, g: &mut Graph<T>, image: Var, p_same: Var) -> Result<Var> {
        let s = g.value(image).shape().to_vec();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::Shape(format!("SAN input must be [N,1,H,W], got {s:?}")));
        }
        if g.value(p_same).shape() != s.as_slice() {
            return Err(Error::Shape(format!(
                "prototype batch {:?} does not match images {s:?}",
                g.value(p_same).shape()
            )));
        }
        self.config.check_image(s[2], s[3])?;
        let leak = T::lit(self.config.leak);
        let mut x = g.concat_channels(image, p_same)?;
        let mut k = 0;
        for &stride in &self.config.enc_strides {
            let (w, b) = (g.param(&self.params, k), g.param(&self.params, k + 1));
            x = g.conv2d(x, w, b, stride, 1)?;
            x = g.leaky_relu(x, leak);
            k += 2;
        }
        for &stride in self.config.enc_strides.iter().rev() {
            if stride == 2 {
                x = g.upsample2x(x)?;
            }
            let (w, b) = (g.param(&self.params, k), g.param(&self.params, k + 1));
            x = g.conv2d(x, w, b, 1, 1)?;
            x = g.leaky_relu(x, leak);
            k += 2;
        }
        Ok(x)
    }

    /// Appends `p_sel` to the features and fuses them into a sigmoid image.
    pub fn graph_fuse(&self, g: &mut Graph<T>, features: Var, p_sel: Var) -> Result<Var> {
        let fs = g.value(features).shape();
        let ps = g.value(p_sel).shape();
        if ps.len() != 4 || ps[1] != 1 || ps[0] != fs[0] || ps[2..] != fs[2..] {
            return Err(Error::Shape(format!(
                "prototype batch {ps:?} does not match features {fs:?}"
            )));
        }
        let k = 4 * self.config.depth();
        let fused = g.concat_channels(features, p_sel)?;
        let (w, b) = (g.param(&self.params, k), g.param(&self.params, k + 1));
        let logits = g.conv2d(fused, w, b, 1, 0)?;
        Ok(g.sigmoid(logits))
    }

    /// Records the full forward pass: the encoder sees `image ⊕ p_same`,
    /// the decoder features are extended with `p_sel` before the 1×1 fusion.
    pub fn graph_forward(&self, g: &mut Graph<T>, image: Var, p_same: Var, p_sel: Var) -> Result<Var> {
        let f = self.graph_features(g, image, p_same)?;
        self.graph_fuse(g, f, p_sel)
    }

    /// Batched inference without gradient bookkeeping.
    pub fn forward(&self, images: &Tensor<T>, p_same: &Tensor<T>, p_sel: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::default();
        let i = g.constant(images.clone());
        let s = g.constant(p_same.clone());
        let o = g.constant(p_sel.clone());
        let out = self.graph_forward(&mut g, i, s, o)?;
        Ok(g.value(out).clone())
    }

    pub fn cast<U: Real>(&self) -> SanModel<U> {
        SanModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}
