//! Trains a small model, then ranks one query's candidates under the default
//! value weights and with the relevance term switched off.
//!
//!     cargo run --release --example score_query

use relrank::featurizer::{Featurizer, FeaturizerConfig};
use relrank::model::{Checkpoint, SplitConfig};
use relrank::net::{scalar_relevance, HeadKind};
use relrank::synth::{generate, GenConfig};
use relrank::train::{fit, TrainConfig};
use relrank::value::{rank_items, value_score, ValueWeights};

fn main() -> relrank::Result<()> {
    let ds = generate(&GenConfig {
        n_queries: 600,
        ..GenConfig::default()
    })?;
    let split = SplitConfig::default();
    let (train, test) = split.split(&ds)?;
    let featurizer = Featurizer::fit(FeaturizerConfig::default(), ds.items(), train.items())?;
    let cfg = TrainConfig::default();
    let fitted = fit(&train, &featurizer, &cfg, HeadKind::Ordinal)?;
    let ck = Checkpoint {
        params: fitted.params,
        featurizer,
        train_config: cfg,
        split,
        engagement_only: false,
        config_hash: String::new(),
    };

    let (query, idx) = test.groups().into_iter().next().expect("held-out split has queries");
    println!("query {} [{}]: {}", query.id, query.intent_category, query.text.join(" "));
    let default = ValueWeights::default();
    for (label, w) in [("default weights", default), ("relevance weight 0", default.engagement_only()?)] {
        let mut scored = Vec::new();
        for &k in &idx {
            let item = test.item(&test.impressions()[k].item_id).unwrap();
            scored.push((item.id.clone(), value_score(&ck.outputs(query, item)?, &w)?));
        }
        println!("\n{label} (alpha {:.3}, beta {:.3}, gamma {:.3}):", w.alpha, w.beta, w.gamma);
        println!("{:>4} {:<8} {:>8} {:>6} {:>6} {:>5}  title", "rank", "item", "S", "s_rel", "y_cvr", "grade");
        for (rank, id) in rank_items(&scored)?.iter().take(8).enumerate() {
            let item = test.item(id).unwrap();
            let o = ck.outputs(query, item)?;
            let grade = idx
                .iter()
                .map(|&k| &test.impressions()[k])
                .find(|i| &i.item_id == id)
                .and_then(|i| i.grade)
                .map_or(0, |g| g.value());
            println!(
                "{:>4} {:<8} {:>8.4} {:>6.3} {:>6.3} {:>5}  {}",
                rank + 1,
                id,
                value_score(&o, &w)?,
                scalar_relevance(&o),
                o.y_cvr,
                grade,
                item.title.join(" ")
            );
        }
    }
    Ok(())
}
