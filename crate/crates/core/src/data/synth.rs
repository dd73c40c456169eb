//! Parametric face-like image renderer.
//!
//! Each identity owns a latent description (face tone, landmark geometry,
//! freckle marks, a continuous masculinity score `m`). Gender drives the
//! sign of `m`; the rendered gender cues (face aspect, jaw shading, hair
//! length, brow weight) are smooth functions of `m`, so the two classes
//! overlap slightly. Each sample re-draws how strongly every cue is
//! expressed around the identity's score. Cohort-1 identities express gender through a different
//! cue mix. Per-sample variation adds pose jitter, an illumination ramp,
//! small landmark jitter and pixel noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::GenerationSpec;

#[derive(Debug, Clone)]
pub(crate) struct IdentityLatent {
    pub male: bool,
    pub cohort: u8,
    masculinity: f64,
    tone: f64,
    eye_sep: f64,
    eye_y: f64,
    eye_r: f64,
    eye_dark: f64,
    nose_len: f64,
    mouth_w: f64,
    mouth_y: f64,
    marks: Vec<(f64, f64, f64)>,
    /// Broad signed shading patches `(u, v, radius, amplitude)`.
    patches: Vec<(f64, f64, f64, f64)>,
    hair_tone: f64,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("valid sd").sample(rng)
}

pub(crate) fn sample_identity(
    spec: &GenerationSpec,
    male: bool,
    cohort: u8,
    rng: &mut ChaCha8Rng,
) -> IdentityLatent {
    let sign = if male { 1.0 } else { -1.0 };
    let masculinity = sign * spec.gender_strength + normal(rng, spec.gender_spread);
    let marks = (0..3)
        .map(|_| {
            (
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.35..0.45),
                rng.gen_range(0.15..0.3),
            )
        })
        .collect();
    let patches = (0..4)
        .map(|_| {
            let amp = rng.gen_range(0.12..0.32) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.7),
                rng.gen_range(0.12..0.25),
                amp,
            )
        })
        .collect();
    IdentityLatent {
        male,
        cohort,
        masculinity,
        tone: rng.gen_range(0.5..0.78),
        eye_sep: rng.gen_range(0.26..0.44),
        eye_y: rng.gen_range(-0.28..-0.06),
        eye_r: rng.gen_range(0.07..0.12),
        eye_dark: rng.gen_range(0.2..0.4),
        nose_len: rng.gen_range(0.12..0.32),
        mouth_w: rng.gen_range(0.18..0.42),
        mouth_y: rng.gen_range(0.3..0.5),
        marks,
        patches,
        hair_tone: rng.gen_range(0.03..0.22),
    }
}

fn smoothstep_inside(signed: f64, width: f64) -> f64 {
    // 1 inside (signed > 0), 0 outside, logistic edge of the given width.
    1.0 / (1.0 + (-signed / width).exp())
}

fn blob(du: f64, dv: f64, r: f64) -> f64 {
    (-(du * du + dv * dv) / (2.0 * r * r)).exp()
}

/// Renders one sample of `id` into a row-major `h × w` image in `[0, 1]`.
pub(crate) fn render(spec: &GenerationSpec, id: &IdentityLatent, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (h, w) = (spec.h, spec.w);
    let cue_s: Vec<f64> = (0..4)
        .map(|_| (id.masculinity + normal(rng, spec.cue_jitter)).tanh())
        .collect();
    // Cue weights per cohort: [aspect, jaw, hair, brow].
    let cues: [f64; 4] = if id.cohort == 0 {
        [0.3, 1.0, 0.5, 0.5]
    } else {
        [0.2, 0.3, 0.1, 1.6]
    };

    let cx = normal(rng, 0.03);
    let cy = normal(rng, 0.03);
    let ax = 0.60 + 0.07 * cue_s[0] * cues[0];
    let ay = 0.80 - 0.05 * cue_s[0] * cues[0];
    let jaw = 0.07 * (cue_s[1] + 1.0) * cues[1];
    let hair_len = (0.35 * (1.0 - cue_s[2]) * cues[2]).max(0.0);
    let brow_t = 0.035 + 0.02 * (cue_s[3] + 1.0) * cues[3];
    let ramp = normal(rng, 0.03);
    let bright = normal(rng, 0.02);
    let jit = |rng: &mut ChaCha8Rng| normal(rng, 0.012);
    let eye_sep = id.eye_sep + jit(rng);
    let eye_y = id.eye_y + jit(rng);
    let mouth_y = id.mouth_y + jit(rng);
    let noise = Normal::new(0.0, spec.pixel_noise).expect("valid sd");
    let edge = 1.5 / w.max(h) as f64;

    let mut img = Vec::with_capacity(h * w);
    for py in 0..h {
        let v = (2 * py + 1) as f64 / h as f64 - 1.0;
        for px in 0..w {
            let u = (2 * px + 1) as f64 / w as f64 - 1.0;
            let (du, dv) = (u - cx, v - cy);
            let r = ((du / ax).powi(2) + (dv / ay).powi(2)).sqrt();
            let face = smoothstep_inside(1.0 - r, edge);

            let mut val = 0.18 + ramp * u;

            // Hair: a cap above the face plus side bands whose length grows
            // as masculinity falls.
            let rh = ((du / (ax * 1.12)).powi(2) + (dv / (ay * 1.08)).powi(2)).sqrt();
            let cap = smoothstep_inside(1.0 - rh, edge) * smoothstep_inside(-(dv + 0.55 * ay), edge);
            let band_bottom = -0.55 * ay + hair_len * 2.0 * ay;
            let side = smoothstep_inside(1.18 - du.abs() / ax, edge)
                * smoothstep_inside(du.abs() / ax - 0.88, edge)
                * smoothstep_inside(band_bottom - dv, edge);
            let hair = cap.max(side);
            val = val * (1.0 - hair) + id.hair_tone * hair;

            let mut skin = id.tone;
            // Jaw shading.
            skin -= jaw * smoothstep_inside(dv - 0.35 * ay, 2.0 * edge);
            // Eyes.
            for sgn in [-1.0, 1.0] {
                skin -= id.eye_dark * blob(du - sgn * eye_sep, dv - eye_y, id.eye_r * 0.6);
                // Brows.
                let bv = dv - (eye_y - 0.16);
                let bar = smoothstep_inside(brow_t - bv.abs(), edge * 0.5)
                    * smoothstep_inside(0.13 - (du - sgn * eye_sep).abs(), edge);
                skin -= 0.3 * bar;
            }
            // Nose.
            let ny = dv - (eye_y + 0.06);
            skin -= 0.08
                * smoothstep_inside(0.035 - du.abs(), edge * 0.5)
                * smoothstep_inside(ny, edge)
                * smoothstep_inside(id.nose_len - ny, edge);
            // Mouth.
            let mouth = ((du / (id.mouth_w * 0.5)).powi(2) + ((dv - mouth_y) / 0.045).powi(2)).sqrt();
            skin -= 0.25 * smoothstep_inside(1.0 - mouth, 0.15);
            // Identity marks.
            for &(mu, mv, dark) in &id.marks {
                skin -= dark * blob(du - mu * ax, dv - mv * ay, 0.07);
            }
            for &(pu, pv, pr, amp) in &id.patches {
                skin += amp * blob(du - pu * ax, dv - pv * ay, pr);
            }

            let face_w = face * (1.0 - cap);
            val = val * (1.0 - face_w) + skin * face_w;
            val += bright + noise.sample(rng);
            img.push(val.clamp(0.0, 1.0) as f32);
        }
    }
    img
}
