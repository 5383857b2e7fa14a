use proptest::prelude::*;

use relrank::domain::{read_dataset, RelevanceGrade};
use relrank::featurizer::{bm25_score, hash_embed, FeatureVector, FieldStats};
use relrank::labelpipe::{labeler_accuracy, percentile_ranks, reconcile_q2t, LabelRecord, Provenance};
use relrank::metrics::{auc, ndcg_at_k};
use relrank::net::{forward, init_params, scalar_relevance, Arch, HeadKind};
use relrank::synth::{generate, GenConfig};
use relrank::value::{parse_grid, rank_items, value_score, ValueWeights};

fn grade() -> impl Strategy<Value = RelevanceGrade> {
    (0u8..=2).prop_map(|g| RelevanceGrade::new(g).unwrap())
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn ordinal_head_is_monotone(seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 6)) {
        let arch = Arch { shared: vec![8], tower: vec![4] };
        let mut p = init_params(6, &arch, HeadKind::Ordinal, "fp", seed).unwrap();
        // Move the cutpoints away from their initial values.
        p.cutpoint = (seed % 7) as f64 - 3.0;
        p.gap = ((seed >> 8) % 11) as f64 - 5.0;
        let (out, _) = forward(&p, &FeatureVector(x)).unwrap();
        prop_assert!(out.p_ge1 > out.p_ge2);
        let s = scalar_relevance(&out);
        prop_assert!((0.0..=2.0).contains(&s));
    }

    #[test]
    fn auc_matches_pairwise_count(data in prop::collection::vec((0u8..6, any::<bool>()), 2..60)) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let has_both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        prop_assume!(has_both);
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn ndcg_is_bounded_and_ideal_is_one(grades in prop::collection::vec(0u8..=2, 1..30), k in 1usize..15) {
        let g: Vec<f64> = grades.iter().map(|&x| x as f64).collect();
        if let Some(v) = ndcg_at_k(&g, k) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let mut ideal = g.clone();
            ideal.sort_by(|a, b| b.total_cmp(a));
            prop_assert!((ndcg_at_k(&ideal, k).unwrap() - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(g.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn within1_dominates_acc3(pairs in prop::collection::vec((grade(), grade()), 1..50)) {
        let (p, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (acc3, within1) = labeler_accuracy(&p, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc3));
        prop_assert!(within1 >= acc3 && within1 <= 1.0);
    }

    #[test]
    fn reconciled_records_are_consistent(h in grade(), a in grade(), in_set in any::<bool>()) {
        let set = if in_set { ["c01".to_string()].into() } else { Default::default() };
        let (final_grade, provenance) = reconcile_q2t(h, a, "c01", &set);
        prop_assert!(final_grade >= h.min(a) && final_grade <= h.max(a));
        let rec = LabelRecord {
            query_id: "q".into(),
            item_id: "i".into(),
            human_grade: Some(h),
            audit_grade: Some(a),
            final_grade,
            provenance,
        };
        prop_assert!(rec.is_consistent());
        prop_assert_eq!(provenance == Provenance::AuditedMax, in_set);
    }

    #[test]
    fn percentiles_are_average_ranks(values in prop::collection::vec(0u8..5, 1..40)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let p = percentile_ranks(&v);
        let n = v.len() as f64;
        prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
        // Average ranks always sum to n(n+1)/2.
        prop_assert!((p.iter().sum::<f64>() * n - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] > v[j] {
                    prop_assert!(p[i] < p[j]);
                }
            }
        }
    }

    #[test]
    fn value_score_stays_in_range(
        a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0,
        seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let s = a + b + c;
        let w = if s > 1.0 { ValueWeights::new(a / s, b / s, c / s) } else { ValueWeights::new(a, b, c) }.unwrap();
        let arch = Arch { shared: vec![8], tower: vec![4] };
        let p = init_params(6, &arch, HeadKind::Ordinal, "fp", seed).unwrap();
        let (out, _) = forward(&p, &FeatureVector(x)).unwrap();
        let v = value_score(&out, &w).unwrap();
        prop_assert!(v >= 0.0 && v <= 2.0 * w.relevance_weight() + 1.0 - w.relevance_weight() + 1e-12);
    }

    #[test]
    fn ranking_ignores_input_order(scores in prop::collection::vec(0u8..4, 1..20), rot in 0usize..20) {
        let scored: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("i{i:02}"), s as f64)).collect();
        let mut rotated = scored.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        let ranked = rank_items(&scored).unwrap();
        prop_assert_eq!(&ranked, &rank_items(&rotated).unwrap());
        let pos = |id: &str| scored.iter().find(|s| s.0 == id).unwrap().1;
        for w in ranked.windows(2) {
            let (s0, s1) = (pos(&w[0]), pos(&w[1]));
            prop_assert!(s0 > s1 || (s0 == s1 && w[0] < w[1]));
        }
    }

    #[test]
    fn grid_has_one_point_per_step(steps in 1usize..40) {
        let step = 1.0 / steps as f64;
        let grid = parse_grid(&format!("0:1:{step}")).unwrap();
        prop_assert_eq!(grid.len(), steps + 1);
        prop_assert_eq!(grid[0], 0.0);
        prop_assert!((grid[steps] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grades_outside_range_are_rejected(v in 3u8..) {
        prop_assert!(RelevanceGrade::new(v).is_err());
        prop_assert!(serde_json::from_str::<RelevanceGrade>(&v.to_string()).is_err());
    }

    #[test]
    fn bm25_is_nonnegative(q in prop::collection::vec("[a-d]", 1..5), doc in prop::collection::vec("[a-f]", 0..12)) {
        let docs = vec![doc.clone(), vec!["a".to_string(), "e".to_string()], vec!["f".to_string()]];
        let stats = FieldStats::from_docs(docs.iter().map(|d| d.as_slice()));
        prop_assert!(bm25_score(&q, &doc, &stats, 1.2, 0.75) >= 0.0);
    }

    #[test]
    fn hash_embedding_is_deterministic_and_bounded(tokens in prop::collection::vec("[a-z]{1,6}", 0..10), seed in any::<u64>()) {
        let a = hash_embed(&tokens, 16, seed);
        prop_assert_eq!(&a, &hash_embed(&tokens, 16, seed));
        prop_assert!(a.iter().all(|x| x.abs() <= 1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generated_datasets_round_trip_through_jsonl(seed in any::<u64>()) {
        let cfg = GenConfig {
            n_queries: 12,
            n_items: 60,
            candidates_per_query: 5,
            vocab_size: 120,
            n_categories: 3,
            n_brands: 6,
            seed,
            ..GenConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        prop_assert!(relrank::domain::validate_dataset(&ds).is_empty());
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        prop_assert!(back == ds);
        prop_assert!(ds.items().iter().all(|i| i.stats.is_monotone()));
    }
}
