//! Sweeps the relevance weight of `w·s_rel + (1 − w)·y_cvr` and prints the
//! relevance and conversion NDCG@10 at each point.
//!
//!     cargo run --release --example tradeoff_sweep [-- n_queries]

use relrank::featurizer::{Featurizer, FeaturizerConfig};
use relrank::model::{Checkpoint, SplitConfig};
use relrank::net::HeadKind;
use relrank::synth::{generate, GenConfig};
use relrank::train::{fit, TrainConfig};
use relrank::value::{parse_grid, sweep_csv, tradeoff_sweep, RelScale};

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
    let ck = Checkpoint {
        params: fitted.params,
        featurizer,
        train_config: cfg,
        split,
        engagement_only: false,
        config_hash: String::new(),
    };
    let preds = ck.predict(&test)?;
    for scale in [RelScale::Raw, RelScale::Halved] {
        println!("s_rel scale {scale:?}");
        print!("{}", sweep_csv(&tradeoff_sweep(&preds, &parse_grid("0:1:0.1")?, scale)?));
    }
    Ok(())
}
