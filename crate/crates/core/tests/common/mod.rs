#![allow(dead_code)]

use flowsan::learn::gradcheck::{check_inputs, check_params, GradReport};
use flowsan::learn::{Graph, Real, Tensor, Var};
use flowsan::losses::{self, LossWeights};
use flowsan::models::{
    ClassifierConfig, FaceMatcher, GenderClassifier, Head, MatcherConfig, SanConfig, SanModel,
};
use flowsan::seed;
use flowsan::Result;
use rand::Rng;

pub const STEP: f64 = 1e-5;

/// Random tensor with entries in `[lo, hi]`, kept at least `gap` away from 0
/// so probes never straddle an activation kink.
pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, gap: f64, seed_: u64) -> Tensor<f64> {
    let mut rng = seed::rng(seed_, "gradcheck-tensor");
    Tensor::from_fn(shape, |_| loop {
        let v = rng.gen_range(lo..hi);
        if v.abs() >= gap {
            break v;
        }
    })
}

/// Weighted sum with fixed random weights, so a non-scalar output reduces to
/// a loss whose gradient is not uniform.
pub fn reduce<T: Real>(g: &mut Graph<T>, x: Var, seed_: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let w = rand_tensor(&shape, -1.0, 1.0, 0.0, seed_).cast();
    let m = g.mul_const(x, w)?;
    Ok(g.sum(m))
}

macro_rules! check {
    ($t:ty, $inputs:expr, $probes:expr, $seed:expr, |$g:ident, $v:ident| $body:expr) => {{
        check_inputs::<$t, _, _>(
            &$inputs,
            $probes,
            STEP,
            $seed,
            |$g: &mut Graph<$t>, $v: &[Var]| $body,
            |$g: &mut Graph<f64>, $v: &[Var]| $body,
        )
    }};
}

/// Named reports for every layer primitive, in precision `T`.
pub fn primitive_suite<T: Real>(probes: usize) -> Result<Vec<(&'static str, GradReport)>> {
    let x4 = rand_tensor(&[2, 2, 6, 6], -1.0, 1.0, 0.0, 1);
    let w3 = rand_tensor(&[3, 2, 3, 3], -0.5, 0.5, 0.0, 2);
    let b3 = rand_tensor(&[3], -0.2, 0.2, 0.0, 3);
    let kink = rand_tensor(&[3, 5], -2.0, 2.0, 0.05, 4);
    let other = rand_tensor(&[2, 2, 6, 6], -1.0, 1.0, 0.0, 5);
    let dense_x = rand_tensor(&[3, 4], -1.0, 1.0, 0.0, 6);
    let dense_w = rand_tensor(&[5, 4], -1.0, 1.0, 0.0, 7);
    let dense_b = rand_tensor(&[5], -1.0, 1.0, 0.0, 8);
    let probs = rand_tensor(&[4, 3], 0.05, 0.95, 0.0, 9);
    let target01 = rand_tensor(&[4, 3], 0.0, 1.0, 0.0, 10);
    let rows = rand_tensor(&[3, 4], -1.0, 1.0, 0.0, 11);
    let rows_t = rand_tensor(&[3, 4], -1.0, 1.0, 0.0, 12);
    let logits = rand_tensor(&[4, 5], -2.0, 2.0, 0.0, 13);

    let mut out = Vec::new();
    out.push(("conv2d stride 1", check!(T, [x4.clone(), w3.clone(), b3.clone()], probes, 20, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        reduce(g, y, 30)
    })?));
    out.push(("conv2d stride 2", check!(T, [x4.clone(), w3.clone(), b3.clone()], probes, 21, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
        reduce(g, y, 31)
    })?));
    out.push(("upsample2x", check!(T, [x4.clone()], probes, 22, |g, v| {
        let y = g.upsample2x(v[0])?;
        reduce(g, y, 32)
    })?));
    out.push(("avg_pool", check!(T, [x4.clone()], probes, 23, |g, v| {
        let y = g.avg_pool(v[0], 3)?;
        reduce(g, y, 33)
    })?));
    out.push(("leaky_relu", check!(T, [kink.clone()], probes, 24, |g, v| {
        let y = g.leaky_relu(v[0], Real::lit(0.1));
        reduce(g, y, 34)
    })?));
    out.push(("sigmoid", check!(T, [kink.clone()], probes, 25, |g, v| {
        let y = g.sigmoid(v[0]);
        reduce(g, y, 35)
    })?));
    out.push(("add", check!(T, [x4.clone(), other.clone()], probes, 26, |g, v| {
        let y = g.add(v[0], v[1])?;
        reduce(g, y, 36)
    })?));
    out.push(("concat_channels", check!(T, [x4.clone(), other.clone()], probes, 27, |g, v| {
        let y = g.concat_channels(v[0], v[1])?;
        reduce(g, y, 37)
    })?));
    out.push(("mean_pool", check!(T, [x4.clone()], probes, 28, |g, v| {
        let y = g.mean_pool(v[0])?;
        reduce(g, y, 38)
    })?));
    out.push(("flatten", check!(T, [x4.clone()], probes, 29, |g, v| {
        let y = g.flatten(v[0]);
        reduce(g, y, 39)
    })?));
    out.push(("dense", check!(T, [dense_x.clone(), dense_w.clone(), dense_b.clone()], probes, 40, |g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        reduce(g, y, 41)
    })?));
    out.push(("mean", check!(T, [x4.clone()], probes, 42, |g, v| {
        let s = g.mul_const(v[0], x4.cast())?;
        Ok(g.mean(s))
    })?));
    out.push(("weighted_sum", check!(T, [dense_x.clone(), rows.clone()], probes, 43, |g, v| {
        let a = reduce(g, v[0], 44)?;
        let b = reduce(g, v[1], 45)?;
        g.weighted_sum(&[(a, Real::lit(0.7)), (b, Real::lit(-1.3))])
    })?));
    out.push(("bce_rows", check!(T, [probs.clone()], probes, 46, |g, v| {
        let y = g.bce_rows(v[0], target01.cast(), Real::lit(1e-7))?;
        reduce(g, y, 47)
    })?));
    out.push(("sq_dist_rows", check!(T, [rows.clone()], probes, 48, |g, v| {
        let y = g.sq_dist_rows(v[0], rows_t.cast())?;
        reduce(g, y, 49)
    })?));
    out.push(("softmax_xent", check!(T, [logits.clone()], probes, 50, |g, v| {
        let y = g.softmax_xent(v[0], &[0, 4, 2, 2])?;
        reduce(g, y, 51)
    })?));
    Ok(out)
}

/// Named reports for every loss term, in precision `T`.
pub fn loss_suite<T: Real>(probes: usize) -> Result<Vec<(&'static str, GradReport)>> {
    let out_img = rand_tensor(&[2, 1, 4, 4], 0.05, 0.95, 0.0, 60);
    let target = rand_tensor(&[2, 1, 4, 4], 0.0, 1.0, 0.0, 61);
    let repr = rand_tensor(&[2, 6], -1.0, 1.0, 0.0, 62);
    let repr_t = rand_tensor(&[2, 6], -1.0, 1.0, 0.0, 63);
    let p = rand_tensor(&[3, 1], 0.05, 0.95, 0.0, 64);
    let q = rand_tensor(&[3, 1], 0.05, 0.95, 0.0, 65);
    let labels = [1u8, 0, 1];
    let w = LossWeights { pixel: 1.5, matching: 0.2, gender: 0.8 };

    let mut out = Vec::new();
    out.push(("pixelwise loss", check!(T, [out_img.clone()], probes, 70, |g, v| {
        losses::graph_pixelwise(g, v[0], target.cast())
    })?));
    out.push(("matching loss", check!(T, [repr.clone()], probes, 71, |g, v| {
        losses::graph_matching(g, v[0], repr_t.cast())
    })?));
    out.push(("gender loss", check!(T, [p.clone(), q.clone()], probes, 72, |g, v| {
        losses::graph_gender(g, v[0], v[1], &labels)
    })?));
    out.push(("total loss", check!(T, [out_img.clone(), repr.clone(), p.clone(), q.clone()], probes, 73, |g, v| {
        let jd = losses::graph_pixelwise(g, v[0], target.cast())?;
        let jm = losses::graph_matching(g, v[1], repr_t.cast())?;
        let jg = losses::graph_gender(g, v[2], v[3], &labels)?;
        losses::graph_total(g, &w, jd, jm, jg)
    })?));
    Ok(out)
}

struct SanLossModels<T: Real> {
    san: SanModel<T>,
    g: GenderClassifier<T>,
    m: FaceMatcher<T>,
}

fn san_total<T: Real>(models: &SanLossModels<T>, g: &mut Graph<T>) -> Result<Var> {
    let x = rand_tensor(&[2, 1, 8, 8], 0.0, 1.0, 0.0, 80).cast();
    let ps = rand_tensor(&[2, 1, 8, 8], 0.2, 0.8, 0.0, 81).cast();
    let po = rand_tensor(&[2, 1, 8, 8], 0.2, 0.8, 0.0, 82).cast();
    let r_orig = models.m.represent(&x)?;
    let xv = g.constant(x.clone());
    let psv = g.constant(ps);
    let pov = g.constant(po);
    let feat = models.san.graph_features(g, xv, psv)?;
    let sm = models.san.graph_fuse(g, feat, psv)?;
    let op = models.san.graph_fuse(g, feat, pov)?;
    let jd = losses::graph_pixelwise(g, sm, x)?;
    let r = models.m.graph_represent(g, op)?;
    let jm = losses::graph_matching(g, r, r_orig)?;
    let gs = models.g.graph_forward(g, sm)?;
    let go = models.g.graph_forward(g, op)?;
    let jg = losses::graph_gender(g, gs, go, &[1, 0])?;
    losses::graph_total(g, &LossWeights { pixel: 1.0, matching: 0.5, gender: 1.0 }, jd, jm, jg)
}

/// Named reports for the composite models: the full SAN training loss on a
/// 2-sample batch (SAN parameters), the gender classifier and the matcher's
/// identity loss.
pub fn model_suite<T: Real>(probes: usize) -> Result<Vec<(&'static str, GradReport)>> {
    let san_cfg = SanConfig { enc_channels: vec![3, 4, 4], dec_channels: vec![4, 3, 3], ..Default::default() };
    let gcfg = ClassifierConfig { channels: vec![3, 4], hidden: Some(4), head: Head::Flatten, ..Default::default() };
    let mcfg = MatcherConfig { channels: vec![3, 4], embed_dim: 5, ..Default::default() };
    let mut models = SanLossModels {
        san: SanModel::<T>::new(san_cfg, 1)?,
        g: GenderClassifier::<T>::new(gcfg.clone(), 8, 8, 2)?,
        m: FaceMatcher::<T>::new(mcfg.clone(), 8, 8, 3, 3)?,
    };
    models.g.params.freeze();
    models.m.params.freeze();
    let mut models64 = SanLossModels { san: models.san.cast(), g: models.g.cast(), m: models.m.cast() };
    let mut out = Vec::new();
    out.push((
        "SAN total loss",
        check_params(
            &mut models,
            &mut models64,
            |m| &mut m.san.params,
            |m| &mut m.san.params,
            probes,
            STEP,
            90,
            san_total,
            san_total,
        )?,
    ));

    let x = rand_tensor(&[3, 1, 8, 8], 0.0, 1.0, 0.0, 91);
    let mut gc = GenderClassifier::<T>::new(ClassifierConfig { pool: 2, ..gcfg }, 8, 8, 4)?;
    let mut gc64 = gc.cast::<f64>();
    let xs = x.clone();
    let xs2 = x.clone();
    out.push((
        "gender classifier",
        check_params(
            &mut gc,
            &mut gc64,
            |m| &mut m.params,
            |m| &mut m.params,
            probes,
            STEP,
            92,
            move |m: &GenderClassifier<T>, g: &mut Graph<T>| {
                let xv = g.constant(xs.cast());
                let p = m.graph_forward(g, xv)?;
                g.bce_rows(p, Tensor::new(vec![3, 1], vec![T::lit(1.0), T::lit(0.0), T::lit(1.0)])?, T::lit(1e-7))
                    .map(|r| g.mean(r))
            },
            move |m: &GenderClassifier<f64>, g: &mut Graph<f64>| {
                let xv = g.constant(xs2.clone());
                let p = m.graph_forward(g, xv)?;
                g.bce_rows(p, Tensor::new(vec![3, 1], vec![1.0, 0.0, 1.0])?, 1e-7).map(|r| g.mean(r))
            },
        )?,
    ));

    let mut fm = FaceMatcher::<T>::new(mcfg, 8, 8, 3, 5)?;
    let mut fm64 = fm.cast::<f64>();
    let xm = x.clone();
    out.push((
        "matcher identity loss",
        check_params(
            &mut fm,
            &mut fm64,
            |m| &mut m.params,
            |m| &mut m.params,
            probes,
            STEP,
            93,
            move |m: &FaceMatcher<T>, g: &mut Graph<T>| {
                let xv = g.constant(xm.cast());
                let r = m.graph_represent(g, xv)?;
                let l = m.graph_logits(g, r)?;
                let rows = g.softmax_xent(l, &[0, 2, 1])?;
                Ok(g.mean(rows))
            },
            move |m: &FaceMatcher<f64>, g: &mut Graph<f64>| {
                let xv = g.constant(x.clone());
                let r = m.graph_represent(g, xv)?;
                let l = m.graph_logits(g, r)?;
                let rows = g.softmax_xent(l, &[0, 2, 1])?;
                Ok(g.mean(rows))
            },
        )?,
    ));
    Ok(out)
}

/// Every suite in precision `T`, flattened.
pub fn full_suite<T: Real>(probes: usize) -> Result<Vec<(&'static str, GradReport)>> {
    let mut all = primitive_suite::<T>(probes)?;
    all.extend(loss_suite::<T>(probes)?);
    all.extend(model_suite::<T>(probes)?);
    Ok(all)
}
