//! Trains the ordinal model and the engagement-only baseline on the default
//! synthetic dataset, plus the softmax and regression heads for reference.
//!
//!     cargo run --release --example evaluate_variants [-- n_queries [seed [epochs]]]

use std::time::Instant;

use relrank::eval::{evaluate, EvalOptions};
use relrank::featurizer::{Featurizer, FeaturizerConfig};
use relrank::model::{Checkpoint, SplitConfig};
use relrank::net::HeadKind;
use relrank::synth::{generate, GenConfig};
use relrank::train::{fit, TaskWeights, TrainConfig};
use relrank::value::{ranking_ndcg, value_score, ValueWeights};

fn main() -> relrank::Result<()> {
    let mut gen = GenConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        gen.n_queries = n.parse().expect("n_queries must be an integer");
    }
    if let Some(s) = std::env::args().nth(2) {
        gen.seed = s.parse().expect("seed must be an integer");
    }
    let t = Instant::now();
    let ds = generate(&gen)?;
    let (train, test) = SplitConfig::default().split(&ds)?;
    println!(
        "{} pairs ({} train / {} eval) in {:.1?}",
        ds.impressions().len(),
        train.impressions().len(),
        test.impressions().len(),
        t.elapsed()
    );
    let featurizer = Featurizer::fit(FeaturizerConfig::default(), ds.items(), train.items())?;

    let variants = [
        ("ordinal", HeadKind::Ordinal, false),
        ("softmax3", HeadKind::Softmax3, false),
        ("regression", HeadKind::Regression, false),
        ("engagement-only", HeadKind::Ordinal, true),
    ];
    println!(
        "{:<16} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10}",
        "variant", "auc_ctr", "auc_atc", "auc_cvr", "rel_ndcg", "S(w=.1)", "S(w=0)"
    );
    for (name, head, engagement_only) in variants {
        let t = Instant::now();
        let cfg = TrainConfig {
            weights: if engagement_only {
                TaskWeights::engagement_only()
            } else {
                TaskWeights::default()
            },
            epochs: std::env::args().nth(3).map_or(10, |e| e.parse().unwrap()),
            ..TrainConfig::default()
        };
        let fitted = fit(&train, &featurizer, &cfg, head)?;
        let ck = Checkpoint {
            params: fitted.params,
            featurizer: featurizer.clone(),
            train_config: cfg,
            split: SplitConfig::default(),
            engagement_only,
            config_hash: String::new(),
        };
        let preds = ck.predict(&test)?;
        let report = evaluate(&ck, &preds, &EvalOptions::default())?;
        let aux = ValueWeights::default().engagement_only()?;
        let aux_ndcg = ranking_ndcg(&preds, |p| value_score(&p.outputs, &aux).unwrap(), |p| {
            p.grade.map_or(0.0, |g| g.as_f64())
        })?;
        let e = &report.engagement;
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>10.4}   ({:.1?}, loss {:.4} -> {:.4})",
            name,
            e["ctr"].auc,
            e["atc"].auc,
            e["cvr"].auc,
            report.relevance_ndcg_at_10,
            report.value_relevance_ndcg_at_10,
            aux_ndcg.mean,
            t.elapsed(),
            fitted.log[0].total,
            fitted.log.last().unwrap().total,
        );
    }
    Ok(())
}
