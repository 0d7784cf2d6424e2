use avkit_core::backend::{plda_llr, PldaModel};
use avkit_core::calibration::{objective, train, TrainOptions};
use avkit_core::face::{iou, template_score, BoundingBox, FaceTemplate, MatchMode, MatchPolicy};
use avkit_core::frontend::{cmn_window_bounds, sliding_cmn, FeatureMatrix};
use avkit_core::metrics::{eer, evaluate_scores, min_dcf, roc_from_scores, DcfParams};
use avkit_core::trials::{Label, ScoreSet, Trial, TrialKey};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    // Coarse grid so ties are common.
    prop::collection::vec((-40i32..40).prop_map(|v| f64::from(v) / 4.0), 1..max)
}

/// Error rates at every candidate threshold, counted directly.
fn sweep(tar: &[f64], non: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<f64> = tar.iter().chain(non).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all.push(f64::INFINITY);
    all.iter()
        .map(|&th| {
            let miss = tar.iter().filter(|&&s| s < th).count() as f64 / tar.len() as f64;
            let fa = non.iter().filter(|&&s| s >= th).count() as f64 / non.len() as f64;
            (miss, fa)
        })
        .collect()
}

fn template(rows: &[Vec<f64>]) -> FaceTemplate<f64> {
    let d = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    FaceTemplate::new(m, (0..rows.len()).map(|i| format!("f{i}")).collect()).unwrap()
}

fn face_rows(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-1.0f64..1.0, 4).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3),
        1..max,
    )
}

fn all_pairs_mean(e: &FaceTemplate<f64>, t: &FaceTemplate<f64>) -> f64 {
    let s = e.embeddings() * t.embeddings().transpose();
    s.iter().map(|v| v.clamp(-1.0, 1.0)).sum::<f64>() / s.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn roc_matches_bruteforce(tar in scores(50), non in scores(50)) {
        let curve = roc_from_scores(&tar, &non).unwrap();
        let points: Vec<(f64, f64)> = curve.points().collect();
        prop_assert_eq!(points, sweep(&tar, &non));
    }

    #[test]
    fn eer_is_invariant_under_monotone_maps(tar in scores(40), non in scores(40), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let f = |v: &Vec<f64>| v.iter().map(|s| (a * s + b).exp()).collect::<Vec<_>>();
        let e0 = eer(&roc_from_scores(&tar, &non).unwrap());
        let e1 = eer(&roc_from_scores(&f(&tar), &f(&non)).unwrap());
        prop_assert_eq!(e0, e1);
    }

    #[test]
    fn dcf_bounds(tar in scores(40), non in scores(40), p in 0.01f64..0.99) {
        let params = DcfParams { p_target: p, c_miss: 1.0, c_fa: 1.0 };
        let r = evaluate_scores(&tar, &non, &params).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.min_dcf));
        prop_assert!(r.act_dcf >= r.min_dcf - 1e-15);
        prop_assert!((0.0..=100.0).contains(&r.eer_percent));
    }

    #[test]
    fn metrics_ignore_trial_order(mut tar in scores(40), mut non in scores(40), seed in any::<u64>()) {
        let params = DcfParams::default();
        let r0 = evaluate_scores(&tar, &non, &params).unwrap();
        let rot = (seed as usize) % tar.len();
        tar.rotate_left(rot);
        non.reverse();
        let r1 = evaluate_scores(&tar, &non, &params).unwrap();
        prop_assert_eq!(r0, r1);
    }

    #[test]
    fn min_dcf_matches_bruteforce(tar in scores(40), non in scores(40)) {
        let params = DcfParams::default();
        let expect = sweep(&tar, &non)
            .into_iter()
            .map(|(m, f)| (0.05 * m + 0.95 * f) / 0.05)
            .fold(f64::INFINITY, f64::min);
        let got = min_dcf(&roc_from_scores(&tar, &non).unwrap(), &params);
        prop_assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn iou_is_symmetric(a in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..30.0, 1.0f64..30.0), b in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..30.0, 1.0f64..30.0)) {
        let a = BoundingBox::new(a.0, a.1, a.2, a.3).unwrap();
        let b = BoundingBox::new(b.0, b.1, b.2, b.3).unwrap();
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
        prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
    }

    #[test]
    fn template_score_properties(e in face_rows(6), t in face_rows(6), k in 1usize..40, p in 0.01f64..1.0, shift in 0usize..6) {
        let (te, tt) = (template(&e), template(&t));
        for mode in [MatchMode::TopK, MatchMode::TopPercent] {
            let policy = MatchPolicy { mode, k, p, ..MatchPolicy::default() };
            let s = template_score(&te, &tt, &policy).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            let mut e2 = e.clone();
            e2.rotate_left(shift % e.len());
            let mut t2 = t.clone();
            t2.reverse();
            prop_assert_eq!(s, template_score(&template(&e2), &template(&t2), &policy).unwrap());
        }
        let mean = all_pairs_mean(&te, &tt);
        let all_k = MatchPolicy { mode: MatchMode::TopK, k: e.len() * t.len(), ..MatchPolicy::default() };
        let all_p = MatchPolicy { mode: MatchMode::TopPercent, p: 1.0, ..MatchPolicy::default() };
        prop_assert!((template_score(&te, &tt, &all_k).unwrap() - mean).abs() < 1e-12);
        prop_assert!((template_score(&te, &tt, &all_p).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn adding_a_strong_pair_does_not_lower_top_k(e in face_rows(2), t in face_rows(6), k in 1usize..30) {
        let policy = MatchPolicy { mode: MatchMode::TopK, k, ..MatchPolicy::default() };
        let before = template_score(&template(&e), &template(&t), &policy).unwrap();
        // With a single enrollment row, a test row equal to it adds exactly one
        // pair, with similarity 1 ≥ any current score.
        let mut t2 = t.clone();
        t2.push(e[0].clone());
        let after = template_score(&template(&e), &template(&t2), &policy).unwrap();
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn cmn_interior_windows_are_zero_mean(n in 10usize..80, w in 1usize..12, seed in any::<u64>()) {
        let mut state = seed;
        let m = DMatrix::from_fn(n, 3, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
        });
        let f = FeatureMatrix::new(m.clone(), 0.01, 0.025).unwrap();
        let out = sliding_cmn(&f, w);
        for t in 0..n {
            let (lo, hi) = cmn_window_bounds(t, n, w);
            for j in 0..3 {
                let mean = (lo..hi).map(|i| m[(i, j)]).sum::<f64>() / (hi - lo) as f64;
                prop_assert!((out.frames()[(t, j)] - (m[(t, j)] - mean)).abs() < 1e-9);
            }
        }
        // A constant offset is removed exactly.
        let shifted = FeatureMatrix::new(m.add_scalar(3.5), 0.01, 0.025).unwrap();
        let out2 = sliding_cmn(&shifted, w);
        prop_assert!((out2.frames() - out.frames()).amax() < 1e-9);
    }

    #[test]
    fn llr_is_exactly_symmetric(vals in prop::collection::vec(-2.0f64..2.0, 12)) {
        let b = DMatrix::from_row_slice(2, 2, &[1.0 + vals[0].abs(), 0.3, 0.3, 1.0 + vals[1].abs()]);
        let w = DMatrix::from_row_slice(2, 2, &[0.5 + vals[2].abs(), -0.1, -0.1, 0.5 + vals[3].abs()]);
        let m = PldaModel::new(DVector::from_vec(vec![vals[4], vals[5]]), b, w).unwrap();
        let a = DVector::from_vec(vec![vals[6], vals[7]]);
        let c = DVector::from_vec(vec![vals[8], vals[9]]);
        prop_assert_eq!(plda_llr(&m, &a, &c).unwrap(), plda_llr(&m, &c, &a).unwrap());
    }
}

fn calib_data(n: usize, seed: u64) -> (Vec<ScoreSet<f64>>, TrialKey) {
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut key = Vec::new();
    for i in 0..n {
        let target = i % 4 == 0;
        let trial = Trial::new(format!("m{i}"), format!("s{i}"));
        let base = if target { 1.0 } else { -1.0 };
        a.push((trial.clone(), base + 6.0 * next()));
        b.push((trial.clone(), 0.5 * base + 6.0 * next()));
        key.push((trial, if target { Label::Target } else { Label::Nontarget }));
    }
    (
        vec![ScoreSet::new("a", a).unwrap(), ScoreSet::new("b", b).unwrap()],
        TrialKey::new(key).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn calibration_absorbs_affine_input_changes(scale in 0.2f64..5.0, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let (systems, key) = calib_data(400, seed);
        let options = TrainOptions::default();
        let m0 = train(&systems, &key, &options).unwrap();
        let o0 = objective(&m0, &systems, &key, 0.0).unwrap();
        let moved: Vec<(Trial, f64)> = systems[1].entries().iter().map(|(t, s)| (t.clone(), scale * s + shift)).collect();
        let systems2 = vec![systems[0].clone(), ScoreSet::new("b", moved).unwrap()];
        let m1 = train(&systems2, &key, &options).unwrap();
        let o1 = objective(&m1, &systems2, &key, 0.0).unwrap();
        prop_assert!((o0 - o1).abs() < 1e-8, "{} vs {}", o0, o1);
        let f0 = avkit_core::calibration::apply(&m0, &systems, "f").unwrap();
        let f1 = avkit_core::calibration::apply(&m1, &systems2, "f").unwrap();
        let order = |f: &ScoreSet<f64>| {
            let mut idx: Vec<usize> = (0..f.len()).collect();
            idx.sort_by(|&i, &j| f.entries()[i].1.total_cmp(&f.entries()[j].1));
            idx
        };
        // Fused scores agree to ~1e-7, so only compare rankings away from near-ties.
        let (o_a, o_b) = (order(&f0), order(&f1));
        let mismatches = o_a.iter().zip(&o_b).filter(|(a, b)| a != b).count();
        if mismatches > 0 {
            for (i, j) in o_a.iter().zip(&o_b) {
                let d = (f0.entries()[*i].1 - f0.entries()[*j].1).abs();
                prop_assert!(d < 1e-6, "ranking differs beyond near-ties");
            }
        }
    }
}
