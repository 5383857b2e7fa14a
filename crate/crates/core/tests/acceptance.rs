//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 6-8 train two models on the 100k-pair default dataset,
//! so this target takes a minute or so with the test profile.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use relrank::domain::{Dataset, RelevanceGrade};
use relrank::eval::{evaluate, EvalOptions, EvalReport};
use relrank::featurizer::{historical_rates, FeatureVector, Featurizer, FeaturizerConfig, RatePriors};
use relrank::labelpipe::{
    grade_batch, render_item, render_query, run_pipeline, simulate_human_labels, subsample_labels, CategoryPredictor,
    LabelRecord, OracleConfig, OracleRequest, PipelineOptions, Provenance, RelevanceOracle,
};
use relrank::metrics::{auc, mean_ndcg, ndcg_at_k};
use relrank::model::{Checkpoint, SplitConfig};
use relrank::net::{forward, init_params, scalar_relevance, Arch, HeadKind};
use relrank::synth::{generate, GenConfig};
use relrank::train::{fit, gradient_check, TaskWeights, TrainConfig};
use relrank::value::{
    ranking_ndcg, sweep_csv, sweep_score, tradeoff_sweep, value_score, QueryPredictions, RelScale, ValueWeights,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

// 1. Analytic vs finite-difference gradients on d=6, shared [8], towers [4].
fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for head in [HeadKind::Ordinal, HeadKind::Softmax3, HeadKind::Regression] {
        for seed in 0..20u64 {
            let r = gradient_check(&TaskWeights::default(), head, 1, seed).expect("gradient check runs");
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
        }
    }
    let el = t.elapsed();
    outcome(
        worst < 1e-6 && within(el, 10),
        format!("max relative error {worst:.2e} over {checked} coordinates, 3 heads x 20 seeds, {el:.1?}"),
    )
}

// 2. p(r>=1) > p(r>=2) and s_rel in [0, 2] over 10^5 random draws.
fn ordinal_invariant() -> Outcome {
    let t = Instant::now();
    let arch = Arch {
        shared: vec![8],
        tower: vec![4],
    };
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut max_latent = 0.0f64;
    for draw in 0..100_000u64 {
        let mut p = init_params(6, &arch, HeadKind::Ordinal, "fp", draw).unwrap();
        p.cutpoint = rng.gen_range(-3.0..3.0);
        p.gap = rng.gen_range(-6.0..3.0);
        // Standardized inputs, the scale the featurizer emits. Far larger
        // latents saturate both sigmoids to exactly 1.0 in f64.
        let x = FeatureVector((0..6).map(|_| normal.sample(&mut rng)).collect());
        let (o, _) = forward(&p, &x).unwrap();
        let s = scalar_relevance(&o);
        max_latent = max_latent.max(o.rel_latent.abs());
        if !(o.p_ge1 > o.p_ge2 && (0.0..=2.0).contains(&s)) {
            violations += 1;
        }
    }
    let el = t.elapsed();
    outcome(
        violations == 0 && within(el, 10),
        format!("{violations} violations in 100000 draws (max |latent| {max_latent:.1}), {el:.1?}"),
    )
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

// 3. AUC equals O(n^2) enumeration exactly; NDCG matches hand values.
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut trials = 0;
    while trials < 1000 {
        let n = rng.gen_range(2..=200);
        // Half the trials use a small score alphabet to force ties.
        let coarse = trials % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.gen_range(0..5) as f64 } else { rng.gen::<f64>() })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        trials += 1;
        if auc(&scores, &labels).unwrap() != brute_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    let l3 = 3f64.log2();
    let ideal = ndcg_at_k(&[2.0, 1.0, 0.0], 10).unwrap();
    let reversed = ndcg_at_k(&[0.0, 1.0, 2.0], 10).unwrap();
    let hand = (1.0 / l3 + 3.0 / 2.0) / (3.0 + 1.0 / l3);
    let zero = mean_ndcg([&[0.0, 0.0][..], &[2.0, 1.0, 0.0][..]], 10).unwrap();
    let ndcg_ok = ideal == 1.0
        && (reversed - hand).abs() < 1e-12
        && (reversed - 0.5868).abs() < 1e-4
        && zero.skipped == 1
        && zero.mean == 1.0;
    outcome(
        mismatches == 0 && ndcg_ok,
        format!("AUC mismatches {mismatches}/1000; NDCG reversed [0,1,2] = {reversed:.4}"),
    )
}

/// Straight-line reading of the refinement rules, pair by pair.
fn reference_pipeline(
    ds: &Dataset,
    human: &BTreeMap<(String, String), RelevanceGrade>,
    audit: &dyn RelevanceOracle,
    bulk: &dyn RelevanceOracle,
    q2t: &BTreeMap<String, BTreeSet<String>>,
    prior_strength: f64,
) -> Vec<LabelRecord> {
    let priors = RatePriors::from_items(ds.items());
    let mut out = Vec::new();
    for q in ds.queries() {
        let pairs: Vec<_> = ds.impressions().iter().filter(|i| i.query_id == q.id).collect();
        let rates: Vec<(f64, f64)> = pairs
            .iter()
            .map(|imp| {
                let r = historical_rates(&ds.item(&imp.item_id).unwrap().stats, prior_strength, &priors);
                (r.atcr, r.cvr)
            })
            .collect();
        // Percentile = average 1-based rank (best first) / n.
        let pct = |k: usize, get: fn(&(f64, f64)) -> f64| {
            let v = get(&rates[k]);
            let better = rates.iter().filter(|r| get(r) > v).count() as f64;
            let equal = rates.iter().filter(|r| get(r) == v).count() as f64;
            (better + (1.0 + equal) / 2.0) / rates.len() as f64
        };
        for (k, imp) in pairs.iter().enumerate() {
            let item = ds.item(&imp.item_id).unwrap();
            let (qt, it) = (render_query(q), render_item(item));
            let key = (q.id.clone(), item.id.clone());
            let rec = match human.get(&key) {
                None => LabelRecord {
                    query_id: key.0,
                    item_id: key.1,
                    human_grade: None,
                    audit_grade: None,
                    final_grade: bulk.grade(&qt, &it).unwrap(),
                    provenance: Provenance::LlmLabeled,
                },
                Some(&h) => {
                    let top_half = pct(k, |r| r.0) <= 0.5 && pct(k, |r| r.1) <= 0.5;
                    if h.value() == 0 && top_half {
                        let a = audit.grade(&qt, &it).unwrap();
                        let in_set = q2t.get(&q.id).is_some_and(|s| s.contains(&item.category));
                        let (final_grade, provenance) = if in_set {
                            (h.max(a), Provenance::AuditedMax)
                        } else {
                            (h.min(a), Provenance::AuditedMin)
                        };
                        LabelRecord {
                            query_id: key.0,
                            item_id: key.1,
                            human_grade: Some(h),
                            audit_grade: Some(a),
                            final_grade,
                            provenance,
                        }
                    } else {
                        LabelRecord {
                            query_id: key.0,
                            item_id: key.1,
                            human_grade: Some(h),
                            audit_grade: None,
                            final_grade: h,
                            provenance: Provenance::HumanOnly,
                        }
                    }
                }
            };
            out.push(rec);
        }
    }
    out.sort_by(|a, b| (&a.query_id, &a.item_id).cmp(&(&b.query_id, &b.item_id)));
    out
}

// 4. run_pipeline equals the straight-line reference record for record.
fn pipeline_equivalence() -> Outcome {
    let t = Instant::now();
    let ds = generate(&GenConfig {
        n_queries: 50,
        n_items: 400,
        candidates_per_query: 20,
        vocab_size: 400,
        n_categories: 5,
        n_brands: 20,
        seed: 4,
        ..GenConfig::default()
    })
    .unwrap();
    let human = subsample_labels(&simulate_human_labels(&ds, 0.3, 4).unwrap(), 0.7, 4);
    let audit = OracleConfig::rule_based(0.2, 5).build().unwrap();
    let bulk = OracleConfig::rule_based(0.1, 6).build().unwrap();
    // Q2T: the intent category for most queries, a wrong one for every fifth.
    let q2t: BTreeMap<String, BTreeSet<String>> = ds
        .queries()
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let cat = if k % 5 == 0 { "none".to_string() } else { q.intent_category.clone() };
            (q.id.clone(), BTreeSet::from([cat]))
        })
        .collect();
    let opts = PipelineOptions::default();
    let got = run_pipeline(
        &ds,
        &human,
        audit.as_ref(),
        bulk.as_ref(),
        &CategoryPredictor::new(q2t.clone()),
        &opts,
    )
    .unwrap();
    let want = reference_pipeline(&ds, &human, audit.as_ref(), bulk.as_ref(), &q2t, opts.prior_strength);
    let el = t.elapsed();
    let differing = got.records.iter().zip(&want).filter(|(a, b)| a != b).count();
    let counts = &got.report.provenance_counts;
    let covers_all = [Provenance::HumanOnly, Provenance::AuditedMax, Provenance::AuditedMin, Provenance::LlmLabeled]
        .iter()
        .all(|p| counts.get(p).copied().unwrap_or(0) > 0);
    outcome(
        got.records.len() == 1000 && want.len() == 1000 && differing == 0 && covers_all && within(el, 5),
        format!(
            "{} pairs, {differing} differing records, {} triggered, provenance {:?}, {el:.1?}",
            got.records.len(),
            got.report.triggered,
            counts
        ),
    )
}

// 5. Rule-based oracle at noise 0.1 vs ground truth on 10k pairs.
fn labeler_accuracy_metrics() -> Outcome {
    let ds = generate(&GenConfig {
        n_queries: 500,
        n_items: 2000,
        candidates_per_query: 20,
        seed: 5,
        ..GenConfig::default()
    })
    .unwrap();
    let requests: Vec<OracleRequest> = ds
        .impressions()
        .iter()
        .map(|imp| OracleRequest {
            query_id: imp.query_id.clone(),
            item_id: imp.item_id.clone(),
            query: render_query(ds.query(&imp.query_id).unwrap()),
            item: render_item(ds.item(&imp.item_id).unwrap()),
        })
        .collect();
    let truth: Vec<RelevanceGrade> = ds.impressions().iter().map(|i| i.grade.unwrap()).collect();
    let noisy = grade_batch(OracleConfig::rule_based(0.1, 9).build().unwrap().as_ref(), &requests, 4).unwrap();
    let clean = grade_batch(OracleConfig::rule_based(0.0, 9).build().unwrap().as_ref(), &requests, 4).unwrap();
    let (acc3, within1) = relrank::labelpipe::labeler_accuracy(&noisy, &truth).unwrap();
    let (clean_acc, _) = relrank::labelpipe::labeler_accuracy(&clean, &truth).unwrap();
    outcome(
        (acc3 - 0.9).abs() <= 0.02 && within1 == 1.0 && clean_acc == 1.0,
        format!("{} pairs: acc3 {acc3:.4}, within1 {within1:.4} (noise-free acc3 {clean_acc:.4})", truth.len()),
    )
}

struct Trained {
    ordinal: Checkpoint,
    baseline: Checkpoint,
    ordinal_preds: Vec<QueryPredictions>,
    ordinal_report: EvalReport,
    baseline_report: EvalReport,
    pairs: usize,
    elapsed: Duration,
}

fn train_default_variants() -> Trained {
    let t = Instant::now();
    let ds = generate(&GenConfig::default()).unwrap();
    let split = SplitConfig::default();
    let (train, test) = split.split(&ds).unwrap();
    let featurizer = Featurizer::fit(FeaturizerConfig::default(), ds.items(), train.items()).unwrap();
    let make = |engagement_only: bool| {
        let cfg = TrainConfig {
            weights: if engagement_only {
                TaskWeights::engagement_only()
            } else {
                TaskWeights::default()
            },
            ..TrainConfig::default()
        };
        let fitted = fit(&train, &featurizer, &cfg, HeadKind::Ordinal).unwrap();
        Checkpoint {
            params: fitted.params,
            featurizer: featurizer.clone(),
            train_config: cfg,
            split,
            engagement_only,
            config_hash: String::new(),
        }
    };
    let ordinal = make(false);
    let baseline = make(true);
    let ordinal_preds = ordinal.predict(&test).unwrap();
    let baseline_preds = baseline.predict(&test).unwrap();
    let opts = EvalOptions::default();
    Trained {
        ordinal_report: evaluate(&ordinal, &ordinal_preds, &opts).unwrap(),
        baseline_report: evaluate(&baseline, &baseline_preds, &opts).unwrap(),
        ordinal,
        baseline,
        ordinal_preds,
        pairs: ds.impressions().len(),
        elapsed: t.elapsed(),
    }
}

// 6. Ordinal model at relevance weight 0.1 vs the engagement-only baseline.
fn table1_contrast(tr: &Trained) -> Outcome {
    let (o, b) = (&tr.ordinal_report, &tr.baseline_report);
    assert!(tr.baseline.engagement_only && !tr.ordinal.engagement_only);
    let rel_weight = o.value_weights.relevance_weight();
    let gap = o.value_relevance_ndcg_at_10 - b.relevance_ndcg_at_10;
    let mut worst_drop = f64::NEG_INFINITY;
    let mut aucs = Vec::new();
    for task in ["ctr", "atc", "cvr"] {
        let drop = b.engagement[task].auc - o.engagement[task].auc;
        worst_drop = worst_drop.max(drop);
        aucs.push(format!("{task} {:.4}/{:.4}", o.engagement[task].auc, b.engagement[task].auc));
    }
    outcome(
        (rel_weight - 0.1).abs() < 1e-12
            && tr.pairs == 100_000
            && gap >= 0.05
            && worst_drop <= 0.01
            && within(tr.elapsed, 15 * 60),
        format!(
            "relevance NDCG@10 {:.4} vs baseline {:.4} (gap {gap:+.4}); AUC ordinal/baseline {}; worst drop {worst_drop:+.4}; {} pairs, {:.1?}",
            o.value_relevance_ndcg_at_10,
            b.relevance_ndcg_at_10,
            aucs.join(", "),
            tr.pairs,
            tr.elapsed
        ),
    )
}

// 7. Same ordinal checkpoint served with relevance weight 0.
fn auxiliary_only(tr: &Trained) -> Outcome {
    let w = ValueWeights::default().engagement_only().unwrap();
    let aux = ranking_ndcg(
        &tr.ordinal_preds,
        |p| value_score(&p.outputs, &w).unwrap(),
        |p| p.grade.map_or(0.0, |g| g.as_f64()),
    )
    .unwrap()
    .mean;
    let base = tr.baseline_report.relevance_ndcg_at_10;
    let diff = aux - base;
    outcome(
        w.relevance_weight().abs() < 1e-12 && diff.abs() <= 0.03,
        format!(
            "auxiliary-only relevance NDCG@10 {aux:.4} vs baseline {base:.4} (diff {diff:+.4}, tolerance 0.03); full model {:.4}",
            tr.ordinal_report.value_relevance_ndcg_at_10
        ),
    )
}

// 8. Sweep endpoints equal pure-CVR / pure-relevance rankings.
fn sweep_shape(tr: &Trained) -> Outcome {
    let preds = &tr.ordinal_preds;
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let points = tradeoff_sweep(preds, &grid, RelScale::Raw).unwrap();
    let mut same = true;
    for q in preds {
        same &= q.ranked(|p| sweep_score(&p.outputs, 0.0, RelScale::Raw)).unwrap()
            == q.ranked(|p| p.outputs.y_cvr).unwrap();
        same &= q.ranked(|p| sweep_score(&p.outputs, 1.0, RelScale::Raw)).unwrap()
            == q.ranked(|p| scalar_relevance(&p.outputs)).unwrap();
    }
    let grade = |p: &relrank::value::PairPrediction| p.grade.map_or(0.0, |g| g.as_f64());
    let pure_cvr = ranking_ndcg(preds, |p| p.outputs.y_cvr, grade).unwrap().mean;
    let pure_rel = ranking_ndcg(preds, |p| scalar_relevance(&p.outputs), grade).unwrap().mean;
    let (first, last) = (points[0], points[points.len() - 1]);
    let csv = sweep_csv(&points);
    let rows = csv.lines().count() - 1;
    outcome(
        same && first.ndcg_relevance == pure_cvr
            && last.ndcg_relevance == pure_rel
            && last.ndcg_relevance > first.ndcg_relevance
            && rows == grid.len(),
        format!(
            "endpoint rankings identical: {same}; relevance NDCG w=0 {:.4}, w=1 {:.4}; {rows} CSV rows for {} grid points",
            first.ndcg_relevance,
            last.ndcg_relevance,
            grid.len()
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_relrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "relrank {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

// 9. Each command twice with identical configs gives byte-identical outputs.
fn determinism() -> Outcome {
    let configs: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let cfg = |name: &str| configs.join(name).to_string_lossy().into_owned();
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let d = dir.path();
        run_cli(d, &["generate", "--config", &cfg("generate-small.toml"), "--out", "ds.jsonl"]);
        run_cli(d, &["label", "--dataset", "ds.jsonl", "--config", &cfg("label.toml"), "--out", "labels.jsonl"]);
        run_cli(
            d,
            &[
                "train", "--dataset", "ds.jsonl", "--labels", "labels.jsonl", "--config", &cfg("train.toml"), "--epochs",
                "3", "--out", "ck.json",
            ],
        );
        run_cli(d, &["eval", "--checkpoint", "ck.json", "--dataset", "ds.jsonl", "--out", "report.json"]);
        run_cli(d, &["sweep", "--checkpoint", "ck.json", "--dataset", "ds.jsonl", "--out", "sweep.csv"]);
    }
    let (a, b) = (snapshot(runs[0].path()), snapshot(runs[1].path()));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let expected = ["ds.jsonl", "labels.jsonl", "ck.json", "report.json", "sweep.csv"];
    let complete = expected.iter().all(|f| a.contains_key(*f));
    outcome(
        a.len() == b.len() && differing.is_empty() && complete,
        format!("{} output files compared across two runs, differing: {differing:?}", a.len()),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "gradient correctness", gradients()),
        (2, "ordinal structural invariant", ordinal_invariant()),
        (3, "metric oracles", metric_oracles()),
        (4, "pipeline oracle equivalence", pipeline_equivalence()),
        (5, "labeler accuracy metrics", labeler_accuracy_metrics()),
    ];
    let trained = train_default_variants();
    results.push((6, "relevance contrast vs engagement-only", table1_contrast(&trained)));
    results.push((7, "auxiliary-only contrast", auxiliary_only(&trained)));
    results.push((8, "sweep endpoints and shape", sweep_shape(&trained)));
    results.push((9, "CLI determinism", determinism()));

    let mut failed = 0;
    for (n, name, o) in &results {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {verdict}: {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
