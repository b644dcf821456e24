mod common;

use gta_core::decision::{decide, rethreshold, weighted_average, DecisionConfig};
use gta_core::model::{Class, ClassScores, Detection, DetectionImageRecord, Label, RuleId, Timestamp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{naive_average, records_from};

fn det(length: f64) -> Detection {
    Detection { id: 1, t_det: Timestamp(0), ps_xpos: 0.0, length }
}

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<DetectionImageRecord> {
    let style = rng.gen_range(0..3);
    let weights: Vec<[f64; 4]> = (0..n)
        .map(|_| match style {
            0 => [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>() + 1e-6],
            1 => {
                let mut w = [0.01; 4];
                w[rng.gen_range(0..4)] = 1.0;
                w
            }
            _ => {
                let mut w = [rng.gen::<f64>() * 0.1; 4];
                w[if rng.gen_bool(0.5) { 3 } else { 2 }] += rng.gen::<f64>() * 3.0;
                w
            }
        })
        .collect();
    let lengths: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(0.1..1.6) }).collect();
    records_from(&weights, &lengths)
}

#[test]
fn weighted_average_matches_naive_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = DecisionConfig::default();
    let lw = DecisionConfig { length_weighted_average: true, ..cfg };
    for case in 0..1500 {
        let n = rng.gen_range(3..=200);
        let recs = random_records(&mut rng, n);
        for (c, flag) in [(&cfg, false), (&lw, true)] {
            let want = naive_average(&recs, flag);
            if flag && want.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let got = weighted_average(&recs, c).unwrap().as_array();
            for k in 0..4 {
                assert!((got[k] - want[k]).abs() <= 1e-12, "case {case} class {k}: {} vs {}", got[k], want[k]);
            }
        }
    }
}

/// Rules restated without sharing code with the library.
fn reference_label(length: f64, records: &[DetectionImageRecord], cfg: &DecisionConfig) -> (f64, f64) {
    if (2.1..3.5).contains(&length) {
        return (5.0, 1.0);
    }
    let m = naive_average(records, cfg.length_weighted_average);
    let (car, cons, np, p) = (m[0], m[1], m[2], m[3]);
    let mut parking = p > car + np && p > cons;
    if !parking {
        // Runs of parking-argmax frames joined across gaps of <= 2 frames.
        let is_p: Vec<bool> = records
            .iter()
            .map(|r| {
                let s = r.scores.as_array();
                s[3] > s[0] && s[3] > s[1] && s[3] > s[2]
            })
            .collect();
        let idx: Vec<usize> = (0..is_p.len()).filter(|&i| is_p[i]).collect();
        let mut best: f64 = 0.0;
        let mut k = 0;
        while k < idx.len() {
            let mut j = k;
            while j + 1 < idx.len() && idx[j + 1] - idx[j] - 1 <= 2 {
                j += 1;
            }
            let len: f64 = records[idx[k]..=idx[j]].iter().map(|r| r.length_weight).sum();
            best = best.max(len);
            k = j + 1;
        }
        parking = best > 3.5;
    } else if p * length <= 3.0 {
        parking = false;
    }
    let conf = if parking { p } else { 1.0 - p };
    let lc = conf <= cfg.lc_threshold + 1e-9;
    let label = match (parking, lc) {
        (true, false) => 1.0,
        (true, true) => 0.6,
        (false, false) => 0.0,
        (false, true) => 0.4,
    };
    (label, conf)
}

#[test]
fn decide_matches_reference_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..2000 {
        let n = rng.gen_range(1..=80);
        let recs = random_records(&mut rng, n);
        let length = if rng.gen_bool(0.1) { rng.gen_range(2.0..3.6) } else { rng.gen_range(0.5..20.0) };
        let cfg = DecisionConfig {
            lc_threshold: rng.gen_range(0.5..1.0),
            length_weighted_average: rng.gen_bool(0.5),
            ..DecisionConfig::default()
        };
        let want = naive_average(&recs, cfg.length_weighted_average);
        if want.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let out = decide(&det(length), &recs, &cfg).unwrap();
        let (label, conf) = reference_label(length, &recs, &cfg);
        assert_eq!(out.label.value(), label, "case {case}: {:?}", out.rule_trace);
        assert!((out.confidence - conf).abs() < 1e-12, "case {case}");
    }
}

fn uniform(p: f64, n: usize) -> Vec<DetectionImageRecord> {
    records_from(&vec![[0.0, 0.0, 1.0 - p, p]; n], &vec![0.4; n])
}

#[test]
fn four_meter_space_needs_three_quarters_parking() {
    let cfg = DecisionConfig::default();
    let label = |p: f64| decide(&det(4.0), &uniform(p, 10), &cfg).unwrap().label.is_parking();
    assert_eq!(label(0.74), Some(false));
    assert_eq!(label(0.75), Some(false));
    assert_eq!(label(0.7501), Some(true));
    assert_eq!(label(0.76), Some(true));
}

#[test]
fn worked_score_example() {
    let recs = records_from(&[[0.05, 0.02, 0.15, 0.78]; 12], &[0.4; 12]);
    let at = |thr: f64| decide(&det(4.0), &recs, &DecisionConfig { lc_threshold: thr, ..Default::default() }).unwrap();
    let o = at(0.70);
    assert!((o.confidence - 0.78).abs() < 1e-12);
    assert_eq!(o.label, Label::Parking);
    assert_eq!(at(0.78).label, Label::ParkingLowConfidence);
    assert!(at(0.78).has_fired(RuleId::LcFlag));
}

#[test]
fn trailing_parking_rescues_long_space() {
    // 10 m in 0.5 m frames: 6 m non-parking, then a 4 m parking run.
    let mut classes = vec![Class::NonParking; 12];
    classes.extend(vec![Class::Parking; 8]);
    let weights: Vec<[f64; 4]> = classes.iter().map(|c| ClassScores::one_hot(*c).as_array().map(|v| v + 0.01)).collect();
    let recs = records_from(&weights, &[0.5; 20]);
    let o = decide(&det(10.0), &recs, &DecisionConfig::default()).unwrap();
    assert_eq!(o.label.is_parking(), Some(true));
    assert!(o.has_fired(RuleId::RescueEc1));
    assert!((o.rescue.unwrap().length_m - 4.0).abs() < 1e-12);
}

fn scored_records() -> impl Strategy<Value = Vec<DetectionImageRecord>> {
    prop::collection::vec((prop::array::uniform4(0.0f64..1.0), 0.05f64..1.5), 1..60).prop_map(|v| {
        let (w, l): (Vec<[f64; 4]>, Vec<f64>) = v.into_iter().map(|(mut w, l)| {
            w[3] += 1e-3;
            (w, l)
        }).unzip();
        records_from(&w, &l)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn labels_stay_in_the_label_set(recs in scored_records(), length in 0.5f64..25.0, thr in 0.0f64..=1.0) {
        let o = decide(&det(length), &recs, &DecisionConfig { lc_threshold: thr, ..Default::default() }).unwrap();
        prop_assert!([0.0, 0.4, 0.6, 1.0, 5.0].contains(&o.label.value()));
    }

    #[test]
    fn cross_lengths_always_yield_five(recs in scored_records(), length in 2.1f64..3.5) {
        let o = decide(&det(length), &recs, &DecisionConfig::default()).unwrap();
        prop_assert_eq!(o.label, Label::Cross);
    }

    #[test]
    fn scaling_raw_scores_changes_nothing(
        raw in prop::collection::vec(prop::array::uniform4(0.01f64..1.0), 1..40),
        scale in 0.01f64..100.0,
        length in 0.5f64..20.0,
    ) {
        let lengths = vec![0.5; raw.len()];
        let scaled: Vec<[f64; 4]> = raw.iter().map(|w| w.map(|v| v * scale)).collect();
        let a = decide(&det(length), &records_from(&raw, &lengths), &DecisionConfig::default()).unwrap();
        let b = decide(&det(length), &records_from(&scaled, &lengths), &DecisionConfig::default()).unwrap();
        prop_assert_eq!(a.label, b.label);
        prop_assert!((a.confidence - b.confidence).abs() < 1e-12);
    }

    #[test]
    fn flag_iff_confidence_does_not_exceed_threshold(recs in scored_records(), length in 3.5f64..20.0, thr in 0.3f64..=1.0) {
        let o = decide(&det(length), &recs, &DecisionConfig { lc_threshold: thr, ..Default::default() }).unwrap();
        prop_assert_eq!(o.label.is_low_confidence(), o.confidence <= thr + 1e-9);
        prop_assert_eq!(o.label.is_low_confidence(), o.has_fired(RuleId::LcFlag));
        let moved = rethreshold(&o, 1.0 - thr);
        let direct = decide(&det(length), &recs, &DecisionConfig { lc_threshold: 1.0 - thr, ..Default::default() }).unwrap();
        prop_assert_eq!(moved, direct);
    }

    #[test]
    fn longer_spaces_never_lose_parking_to_the_gate(recs in scored_records(), a in 3.5f64..20.0, extra in 0.0f64..10.0) {
        let cfg = DecisionConfig::default();
        let short = decide(&det(a), &recs, &cfg).unwrap();
        let long = decide(&det(a + extra), &recs, &cfg).unwrap();
        if short.label.is_parking() == Some(true) {
            prop_assert_eq!(long.label.is_parking(), Some(true));
        }
    }

    #[test]
    fn rescue_needs_parking_frames(
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..60),
        length in 3.5f64..30.0,
    ) {
        let weights: Vec<[f64; 4]> = raw.iter().map(|&(a, b, c)| [a + 0.5, b, c, a.min(0.49) * 0.9]).collect();
        let recs = records_from(&weights, &vec![1.5; weights.len()]);
        prop_assume!(recs.iter().all(|r| !r.scores.is_parking_argmax()));
        let o = decide(&det(length), &recs, &DecisionConfig::default()).unwrap();
        prop_assert!(!o.has_fired(RuleId::RescueEc1));
    }
}
