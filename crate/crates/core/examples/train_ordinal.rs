//! Trains the multi-task model with the ordinal relevance head and reports
//! held-out metrics.
//!
//!     cargo run --release --example train_ordinal [-- n_queries]

use relrank::eval::{evaluate, EvalOptions};
use relrank::featurizer::{Featurizer, FeaturizerConfig};
use relrank::model::{Checkpoint, SplitConfig};
use relrank::net::HeadKind;
use relrank::synth::{generate, GenConfig};
use relrank::train::{epoch_log_csv, fit, TrainConfig};

fn main() -> relrank::Result<()> {
    let n_queries = std::env::args().nth(1).map_or(1000, |n| n.parse().expect("n_queries must be an integer"));
    let ds = generate(&GenConfig {
        n_queries,
        ..GenConfig::default()
    })?;
    let split = SplitConfig::default();
    let (train, test) = split.split(&ds)?;
    let featurizer = Featurizer::fit(FeaturizerConfig::default(), ds.items(), train.items())?;
    let cfg = TrainConfig::default();
    let fitted = fit(&train, &featurizer, &cfg, HeadKind::Ordinal)?;
    print!("{}", epoch_log_csv(&fitted.log));

    let ck = Checkpoint {
        params: fitted.params,
        featurizer,
        train_config: cfg,
        split,
        engagement_only: false,
        config_hash: String::new(),
    };
    let preds = ck.predict(&test)?;
    let report = evaluate(&ck, &preds, &EvalOptions::default())?;
    println!("\n{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
