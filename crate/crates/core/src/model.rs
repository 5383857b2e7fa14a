//! Checkpoints, batch prediction and the query-level train/eval split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Item, Query};
use crate::error::{Error, Result};
use crate::featurizer::Featurizer;
use crate::net::{forward, HeadKind, HeadOutputs, ModelParams};
use crate::train::TrainConfig;
use crate::value::{PairPrediction, QueryPredictions};

/// A trained model plus everything needed to featurize new pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub featurizer: Featurizer,
    pub train_config: TrainConfig,
    /// The query split the model was trained on; evaluation uses its
    /// held-out side.
    pub split: SplitConfig,
    /// Trained with w_rel = 0; the relevance tower is still at init and
    /// evaluation falls back to ŷ_CTR as the relevance score.
    pub engagement_only: bool,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn head_kind(&self) -> HeadKind {
        self.params.head_kind
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = crate::io::read_json(path)?;
        ck.check()?;
        Ok(ck)
    }

    /// Parameters and featurizer must agree on the feature layout.
    pub fn check(&self) -> Result<()> {
        self.params.check_shapes()?;
        let layout = self.featurizer.layout();
        if layout.fingerprint != self.params.layout_fingerprint {
            return Err(Error::Layout {
                expected: self.params.layout_fingerprint.clone(),
                actual: layout.fingerprint,
            });
        }
        Ok(())
    }

    pub fn outputs(&self, query: &Query, item: &Item) -> Result<HeadOutputs> {
        let x = self.featurizer.features(query, item)?;
        Ok(forward(&self.params, &x)?.0)
    }

    /// Predictions for every impression, grouped by query in dataset order.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<QueryPredictions>> {
        ds.groups()
            .into_iter()
            .map(|(q, idx)| {
                let pairs = idx
                    .into_iter()
                    .map(|i| {
                        let imp = &ds.impressions()[i];
                        let item = ds
                            .item(&imp.item_id)
                            .ok_or_else(|| Error::Referential(format!("unknown item {}", imp.item_id)))?;
                        Ok(PairPrediction {
                            item_id: imp.item_id.clone(),
                            outputs: self.outputs(q, item)?,
                            grade: imp.grade,
                            clicked: imp.clicked,
                            added_to_cart: imp.added_to_cart,
                            converted: imp.converted,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(QueryPredictions {
                    query_id: q.id.clone(),
                    pairs,
                })
            })
            .collect()
    }

    /// Relevance score used for ranking evaluation: ŝ_rel, or ŷ_CTR for an
    /// engagement-only checkpoint.
    pub fn relevance_score(&self, outputs: &HeadOutputs) -> f64 {
        if self.engagement_only {
            outputs.y_ctr
        } else {
            crate::net::scalar_relevance(outputs)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn is_train(&self, query_id: &str) -> bool {
        crate::io::unit_interval(crate::io::stable_hash(self.seed, &[query_id])) < self.train_fraction
    }

    /// (train, eval) with whole queries on each side.
    pub fn split(&self, ds: &Dataset) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        Ok((
            ds.filter_queries(|q| self.is_train(&q.id)),
            ds.filter_queries(|q| !self.is_train(&q.id)),
        ))
    }
}
