//! Metrics checked against naive reference implementations.

use gazekit::grid::Grid;
use gazekit::metrics::{
    auc, average_precision, distances, evaluate, on_any_head, phead_gt, phead_precision, EvalConfig, EvalInstance,
    Group, NormBox, PHeadInstance, PHeadRule, Prediction,
};
use proptest::prelude::*;

/// Probability that a random positive outscores a random negative, ties counting half.
fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Precision at each positive's position, counted from scratch.
fn ap_reference(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    // rank = number of items strictly ahead; ties keep input order
    let rank_of = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut sum = 0.0;
    for i in (0..n).filter(|&i| labels[i]) {
        let r = rank_of(i);
        let hits = (0..n).filter(|&j| labels[j] && rank_of(j) <= r).count();
        sum += hits as f64 / (r + 1) as f64;
    }
    sum / labels.iter().filter(|&&l| l).count() as f64
}

fn point() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..=1.0, 0.0f64..=1.0)
}

fn norm_box() -> impl Strategy<Value = NormBox> {
    (0.0f64..0.9, 0.0f64..0.9, 0.01f64..0.5, 0.01f64..0.5)
        .prop_map(|(x, y, w, h)| NormBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0)).unwrap())
}

/// Scores drawn from a small set so ties are common.
fn scored_labels(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..6, any::<bool>()), 2..=max).prop_map(|v| {
        (
            v.iter().map(|&(s, _)| s as f64 / 5.0).collect(),
            v.iter().map(|&(_, l)| l).collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn auc_matches_pairwise_count((scores, labels) in scored_labels(64), w in 1usize..=8) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assume!(scores.len() % w == 0);
        let h = scores.len() / w;
        let pred = Grid::from_vec(w, h, scores.clone()).unwrap();
        let gt = Grid::from_vec(w, h, labels.clone()).unwrap();
        prop_assert!((auc(&pred, &gt).unwrap() - auc_pairwise(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_to_monotone_transform((scores, labels) in scored_labels(64), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let n = scores.len();
        let raw = Grid::from_vec(n, 1, scores.clone()).unwrap();
        let warped = raw.map(|&s| (a * s + b).exp().atan());
        let gt = Grid::from_vec(n, 1, labels).unwrap();
        prop_assert!((auc(&raw, &gt).unwrap() - auc(&warped, &gt).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ap_matches_reference((scores, labels) in scored_labels(16)) {
        prop_assume!(labels.iter().any(|&l| l));
        let got = average_precision(&scores, &labels).unwrap();
        prop_assert!((got - ap_reference(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn ap_is_one_iff_positives_outrank_negatives((scores, labels) in scored_labels(16)) {
        prop_assume!(labels.iter().any(|&l| l));
        let separated = labels.iter().zip(&scores).filter(|(&l, _)| l).all(|(_, &sp)| {
            labels.iter().zip(&scores).filter(|(&l, _)| !l).all(|(_, &sn)| sp > sn)
        });
        let ap = average_precision(&scores, &labels).unwrap();
        // a tie between a positive and a negative can still land on 1 when the
        // positive comes first in input order, so only the forward direction is strict
        if separated {
            prop_assert_eq!(ap, 1.0);
        }
        if ap == 1.0 {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let first_neg = order.iter().position(|&i| !labels[i]).unwrap_or(order.len());
            prop_assert!(order[first_neg..].iter().all(|&i| !labels[i]));
        }
    }

    #[test]
    fn distances_match_reference(pred in point(), gts in prop::collection::vec(point(), 1..=16), rot in 0usize..16) {
        let (mn, av) = distances(pred, &gts).unwrap();
        let d: Vec<f64> = gts.iter().map(|g| ((pred.0 - g.0).powi(2) + (pred.1 - g.1).powi(2)).sqrt()).collect();
        let ref_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let ref_avg = d.iter().sum::<f64>() / d.len() as f64;
        prop_assert!(mn <= av + 1e-15);
        prop_assert!((mn - ref_min).abs() < 1e-12 && (av - ref_avg).abs() < 1e-12);
        let mut permuted = gts.clone();
        permuted.rotate_left(rot % gts.len());
        let (mn2, av2) = distances(pred, &permuted).unwrap();
        prop_assert!(mn2 == mn && (av2 - av).abs() < 1e-12);
    }

    #[test]
    fn phead_matches_reference(
        rows in prop::collection::vec(
            (point(), prop::collection::vec(point(), 1..=16), prop::collection::vec(norm_box(), 0..=16)),
            1..=16,
        ),
    ) {
        let inside = |p: (f64, f64), b: &NormBox| b.x0 <= p.0 && p.0 <= b.x1 && b.y0 <= p.1 && p.1 <= b.y1;
        let instances: Vec<PHeadInstance> = rows
            .iter()
            .map(|(pred, gts, boxes)| PHeadInstance {
                pred_point: *pred,
                head_boxes: boxes.clone(),
                gt_is_head: phead_gt(gts, boxes, PHeadRule::Single),
            })
            .collect();
        let mut tp = 0;
        let mut predicted = 0;
        for (pred, gts, boxes) in &rows {
            let gt_head = gts.iter().any(|&g| boxes.iter().any(|b| inside(g, b)));
            if boxes.iter().any(|b| inside(*pred, b)) {
                predicted += 1;
                tp += gt_head as usize;
            }
        }
        match phead_precision(&instances) {
            Ok(p) => prop_assert!((p - tp as f64 / predicted as f64).abs() < 1e-12),
            Err(_) => prop_assert_eq!(predicted, 0),
        }
    }

    #[test]
    fn multi_rule_implies_single(gts in prop::collection::vec(point(), 0..8), boxes in prop::collection::vec(norm_box(), 0..6)) {
        if phead_gt(&gts, &boxes, PHeadRule::Multi) {
            prop_assert!(phead_gt(&gts, &boxes, PHeadRule::Single));
        }
        prop_assert_eq!(gts.iter().any(|&g| on_any_head(g, &boxes)), phead_gt(&gts, &boxes, PHeadRule::Single));
    }

    #[test]
    fn group_counts_add_and_distance_means_combine(
        rows in prop::collection::vec((any::<bool>(), point(), prop::collection::vec(point(), 1..4)), 1..20),
    ) {
        let instances: Vec<EvalInstance> = rows
            .iter()
            .enumerate()
            .map(|(i, (child, pred, gts))| EvalInstance {
                id: i.to_string(),
                group: if *child { Group::Child } else { Group::Adult },
                in_frame: Some(true),
                gt_points: gts.clone(),
                head_boxes: None,
                prediction: Prediction::from_point(*pred),
            })
            .collect();
        let r = evaluate(&instances, &EvalConfig::default()).unwrap();
        prop_assert_eq!(r.child.counts.instances + r.adult.counts.instances, r.all.counts.instances);
        let weighted = [&r.child, &r.adult]
            .iter()
            .filter_map(|c| c.dist_avg.map(|d| d * c.counts.inside_frame as f64))
            .sum::<f64>()
            / r.all.counts.inside_frame as f64;
        prop_assert!((weighted - r.all.dist_avg.unwrap()).abs() < 1e-12);
    }
}
