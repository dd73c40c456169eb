use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn pair_auc(s: &ScoreSet) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &a) in s.scores.iter().enumerate() {
        if !s.labels[i] {
            continue;
        }
        for (j, &b) in s.scores.iter().enumerate() {
            if s.labels[j] {
                continue;
            }
            den += 1.0;
            if a > b {
                num += 1.0;
            } else if a == b {
                num += 0.5;
            }
        }
    }
    num / den
}

fn sweep_eer(s: &ScoreSet) -> f64 {
    let mut thresholds: Vec<f64> = s.scores.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let npos = s.labels.iter().filter(|&&l| l).count() as f64;
    let nneg = s.labels.len() as f64 - npos;
    let curve: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let mut fp = 0.0;
            let mut fneg = 0.0;
            for (x, &l) in s.scores.iter().zip(&s.labels) {
                if l && *x < t {
                    fneg += 1.0;
                }
                if !l && *x >= t {
                    fp += 1.0;
                }
            }
            (fp / nneg, fneg / npos)
        })
        .collect();
    for k in 0..curve.len() - 1 {
        let (a, b) = (curve[k], curve[k + 1]);
        let da = a.0 - a.1;
        let db = b.0 - b.1;
        if da == 0.0 {
            return a.0;
        }
        if da > 0.0 && db <= 0.0 {
            // Intersect the segment with the diagonal FPR = FNR.
            let t = da / (da - db);
            return a.1 + t * (b.1 - a.1);
        }
    }
    unreachable!("ROC always crosses the diagonal")
}

/// Bisection on the piecewise-linear impostor survival curve.
fn sweep_tmr(genuine: &[f64], impostor: &[f64], fmr: f64) -> (f64, f64) {
    let mut imp = impostor.to_vec();
    imp.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = imp.len();
    let survival = |t: f64| -> f64 {
        if t <= imp[0] {
            return 1.0;
        }
        if t >= imp[n - 1] {
            return 0.0;
        }
        let mut k = 0;
        while imp[k + 1] < t {
            k += 1;
        }
        let span = imp[k + 1] - imp[k];
        let frac = if span > 0.0 { (t - imp[k]) / span } else { 1.0 };
        1.0 - (k as f64 + frac) / (n - 1) as f64
    };
    let (mut lo, mut hi) = (imp[0], imp[n - 1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if survival(mid) <= fmr {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = hi;
    let tmr = genuine.iter().filter(|&&g| g >= t).count() as f64 / genuine.len() as f64;
    (t, tmr)
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> ScoreSet {
    loop {
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let x = rng.gen::<f64>() + if l { 0.3 } else { 0.0 };
                if ties {
                    (x * 8.0).round() / 8.0
                } else {
                    x
                }
            })
            .collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return ScoreSet::new(scores, labels).unwrap();
        }
    }
}

#[test]
fn auc_perfect_and_ties() {
    let s = ScoreSet::from_classes(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
    assert_eq!(roc_auc(&s).unwrap(), 1.0);
    let s = ScoreSet::from_classes(&[0.4; 3], &[0.4; 5]).unwrap();
    assert_eq!(roc_auc(&s).unwrap(), 0.5);
}

#[test]
fn single_class_is_degenerate() {
    let s = ScoreSet::from_classes(&[0.1, 0.2], &[]).unwrap();
    assert!(matches!(roc_auc(&s), Err(Error::DegenerateInput(_))));
    assert!(matches!(eer(&s), Err(Error::DegenerateInput(_))));
}

#[test]
fn auc_matches_pair_counting_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..200 {
        let s = random_set(&mut rng, 50, k % 2 == 0);
        assert_eq!(roc_auc(&s).unwrap(), pair_auc(&s));
    }
}

#[test]
fn eer_separated_is_zero() {
    let s = ScoreSet::from_classes(&[0.8, 0.9], &[0.1, 0.2]).unwrap();
    assert_eq!(eer(&s).unwrap(), 0.0);
}

#[test]
fn eer_uninformative_is_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
    let labels: Vec<bool> = (0..1000).map(|_| rng.gen_bool(0.5)).collect();
    let e = eer(&ScoreSet::new(scores, labels).unwrap()).unwrap();
    assert!((e - 0.5).abs() <= 0.05, "{e}");
}

#[test]
fn eer_matches_sweep_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..200 {
        let s = random_set(&mut rng, 50, k % 3 == 0);
        let (a, b) = (eer(&s).unwrap(), sweep_eer(&s));
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn eer_is_label_swap_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..50 {
        let s = random_set(&mut rng, 40, k % 2 == 0);
        let flipped = ScoreSet::new(
            s.scores.iter().map(|x| -x).collect(),
            s.labels.iter().map(|l| !l).collect(),
        )
        .unwrap();
        let (a, b) = (eer(&s).unwrap(), eer(&flipped).unwrap());
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn tmr_separated() {
    let r = tmr_at_fmr(&[0.9; 50], &[0.1; 200], 0.01).unwrap();
    assert_eq!(r.tmr, 1.0);
    assert_eq!(r.fmr_used, 0.01);
}

#[test]
fn tmr_indistinguishable_tracks_fmr() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g: Vec<f64> = (0..20000).map(|_| rng.gen()).collect();
    let i: Vec<f64> = (0..20000).map(|_| rng.gen()).collect();
    for fmr in [0.01, 0.05, 0.2] {
        let r = tmr_at_fmr(&g, &i, fmr).unwrap();
        assert!((r.tmr - fmr).abs() < 0.01, "{fmr}: {}", r.tmr);
    }
}

#[test]
fn tmr_coarse_impostors_fall_back() {
    let r = tmr_at_fmr(&[0.5], &[0.1, 0.2, 0.3], 0.01).unwrap();
    assert!((r.fmr_used - 1.0 / 3.0).abs() < 1e-15);
    assert!(tmr_at_fmr(&[0.5], &[0.1], 1.5).is_err());
    assert!(tmr_at_fmr(&[], &[0.1], 0.1).is_err());
}

#[test]
fn tmr_matches_sweep_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let g: Vec<f64> = (0..60).map(|_| rng.gen::<f64>() + 0.4).collect();
        let i: Vec<f64> = (0..150).map(|_| rng.gen()).collect();
        let fmr = rng.gen_range(0.01..0.5);
        let r = tmr_at_fmr(&g, &i, fmr).unwrap();
        let (t, tmr) = sweep_tmr(&g, &i, fmr);
        assert!((r.threshold - t).abs() <= 1e-9, "{} vs {t}", r.threshold);
        assert_eq!(r.tmr, tmr);
    }
}

proptest! {
    #[test]
    fn auc_monotone_invariant(seed in 0u64..1000, a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_set(&mut rng, 30, false);
        let affine = ScoreSet::new(s.scores.iter().map(|x| a * x + b).collect(), s.labels.clone()).unwrap();
        let exp = ScoreSet::new(s.scores.iter().map(|x| x.exp()).collect(), s.labels.clone()).unwrap();
        let base = roc_auc(&s).unwrap();
        prop_assert_eq!(base, roc_auc(&affine).unwrap());
        prop_assert_eq!(base, roc_auc(&exp).unwrap());
    }

    #[test]
    fn tmr_monotone_in_fmr(seed in 0u64..1000, f1 in 0.01f64..0.9, f2 in 0.01f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..40).map(|_| rng.gen::<f64>() + 0.2).collect();
        let i: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(tmr_at_fmr(&g, &i, lo).unwrap().tmr <= tmr_at_fmr(&g, &i, hi).unwrap().tmr);
    }

    #[test]
    fn rates_stay_in_unit_interval(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_set(&mut rng, 25, seed % 2 == 0);
        for v in [roc_auc(&s).unwrap(), eer(&s).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
