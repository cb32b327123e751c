//! Invariants of the public scoring API over random triplet sets.

use proptest::prelude::*;
use relscore::metrics::{match_triplets, score_sgg_sample};
use relscore::relgram::{parse_scene_graph_list, serialize_list, VerbLexicon};
use relscore::reward::{total_reward, GroundTruth, RewardConfig};
use relscore::{BoundingBox, IouThreshold, Triplet};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0i64..40, 0i64..40, 1i64..24, 1i64..24).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_triplet() -> impl Strategy<Value = Triplet> {
    (
        prop::sample::select(vec!["man", "horse", "cup"]),
        arb_box(),
        prop::sample::select(vec!["on", "riding", "holding"]),
        prop::sample::select(vec!["man", "horse", "cup"]),
        arb_box(),
    )
        .prop_map(|(s, sb, p, o, ob)| Triplet {
            subject_label: s.into(),
            subject_box: sb,
            predicate: p.into(),
            object_label: o.into(),
            object_box: ob,
        })
}

proptest! {
    #[test]
    fn recall_bounded_and_self_perfect(
        pred in prop::collection::vec(arb_triplet(), 0..6),
        gt in prop::collection::vec(arb_triplet(), 1..6),
    ) {
        let s = score_sgg_sample(&pred, &gt, IouThreshold::HALF).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.recall));
        prop_assert!((0.0..=1.0).contains(&s.mean_recall));
        let own = score_sgg_sample(&gt, &gt, IouThreshold::HALF).unwrap();
        prop_assert_eq!(own.recall, 1.0);
        prop_assert_eq!(own.mean_recall, 1.0);
    }

    #[test]
    fn matching_size_ignores_prediction_order(
        pred in prop::collection::vec(arb_triplet(), 0..6),
        gt in prop::collection::vec(arb_triplet(), 1..6),
    ) {
        let n = match_triplets(&pred, &gt, IouThreshold::HALF).len();
        let mut rev = pred.clone();
        rev.reverse();
        prop_assert_eq!(match_triplets(&rev, &gt, IouThreshold::HALF).len(), n);
        prop_assert!(n <= pred.len().min(gt.len()));
    }

    #[test]
    fn list_round_trip(ts in prop::collection::vec(arb_triplet(), 0..6)) {
        let p = parse_scene_graph_list(&serialize_list(&ts));
        prop_assert!(p.diagnostics.is_empty());
        prop_assert_eq!(p.value, ts);
    }

    #[test]
    fn reward_in_range(text in ".{0,80}", gt in prop::collection::vec(arb_triplet(), 1..4)) {
        let r = total_reward(&text, &GroundTruth::Binary(gt), &RewardConfig::default(), &VerbLexicon::default());
        prop_assert!((0.0..=2.0).contains(&r.total));
        prop_assert!(r.format == 0.0 || r.format == 1.0);
    }
}
