//! Query-item feature extraction.
//!
//! Feature layout (frozen; see [`FeatureLayout`]):
//!
//! | index          | feature                                   |
//! |----------------|-------------------------------------------|
//! | 0              | BM25(query, title)                        |
//! | 1              | BM25(query, description)                  |
//! | 2              | Jaccard(query, title)                     |
//! | 3, 4, 5        | smoothed historical CTR, ATCR, CVR        |
//! | 6              | ln(1 + price)                             |
//! | 7              | query intent category == item category    |
//! | 8 .. 8+e       | hashed query embedding                    |
//! | 8+e .. 8+2e    | hashed item title embedding               |

use std::collections::{BTreeMap, HashSet};
use std::hash::Hasher;

use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;

use crate::domain::{HistoricalStats, Item, Query};
use crate::error::{Error, Result};
use crate::io::sha_hex;

pub const DENSE_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizerConfig {
    #[serde(default = "default_embed_dims")]
    pub embed_dims: usize,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_prior_strength")]
    pub prior_strength: f64,
    #[serde(default)]
    pub embed_seed: u64,
}

fn default_embed_dims() -> usize {
    16
}
fn default_k1() -> f64 {
    1.2
}
fn default_b() -> f64 {
    0.75
}
fn default_prior_strength() -> f64 {
    10.0
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            embed_dims: default_embed_dims(),
            k1: default_k1(),
            b: default_b(),
            prior_strength: default_prior_strength(),
            embed_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dims == 0 {
            return Err(Error::Config("embed_dims must be >= 1".into()));
        }
        if !(self.k1 > 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config("bm25 requires k1 > 0 and 0 <= b <= 1".into()));
        }
        if !(self.prior_strength >= 0.0) {
            return Err(Error::Config("prior_strength must be >= 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        DENSE_FEATURES + 2 * self.embed_dims
    }
}

/// Document statistics for one text field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub doc_count: u64,
    pub avg_len: f64,
    pub doc_freq: BTreeMap<String, u64>,
}

impl FieldStats {
    /// Document frequencies and average length over one text field.
    pub fn from_docs<'a>(docs: impl Iterator<Item = &'a [String]>) -> Self {
        let mut stats = FieldStats::default();
        let mut total_len = 0usize;
        for doc in docs {
            stats.doc_count += 1;
            total_len += doc.len();
            let unique: HashSet<&String> = doc.iter().collect();
            for t in unique {
                *stats.doc_freq.entry(t.clone()).or_default() += 1;
            }
        }
        if stats.doc_count > 0 {
            stats.avg_len = total_len as f64 / stats.doc_count as f64;
        }
        stats
    }

    pub fn doc_freq(&self, token: &str) -> u64 {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    /// Okapi IDF with the +1 inside the log, so it is never negative.
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq(token) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub title: FieldStats,
    pub description: FieldStats,
}

/// Computes title and description statistics over the catalog.
pub fn build_corpus_stats(items: &[Item]) -> Result<CorpusStats> {
    if items.is_empty() {
        return Err(Error::Invalid("cannot build corpus stats over an empty catalog".into()));
    }
    Ok(CorpusStats {
        title: FieldStats::from_docs(items.iter().map(|i| i.title.as_slice())),
        description: FieldStats::from_docs(items.iter().map(|i| i.description.as_slice())),
    })
}

/// Okapi BM25 of `query` against one document field. Duplicate query tokens
/// each contribute.
pub fn bm25_score(query: &[String], field_tokens: &[String], stats: &FieldStats, k1: f64, b: f64) -> f64 {
    if stats.doc_count == 0 || field_tokens.is_empty() {
        return 0.0;
    }
    let len_norm = if stats.avg_len > 0.0 {
        1.0 - b + b * field_tokens.len() as f64 / stats.avg_len
    } else {
        1.0
    };
    query
        .iter()
        .map(|q| {
            let tf = field_tokens.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                0.0
            } else {
                stats.idf(q) * tf * (k1 + 1.0) / (tf + k1 * len_norm)
            }
        })
        .sum()
}

/// Jaccard similarity of the two token sets.
pub fn string_similarity(a: &[String], b: &[String]) -> f64 {
    let sa: HashSet<&String> = a.iter().collect();
    let sb: HashSet<&String> = b.iter().collect();
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let inter = sa.intersection(&sb).count() as f64;
            let union = sa.union(&sb).count() as f64;
            inter / union
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePriors {
    pub ctr: f64,
    pub atcr: f64,
    pub cvr: f64,
}

impl RatePriors {
    pub fn uniform(rate: f64) -> Self {
        RatePriors {
            ctr: rate,
            atcr: rate,
            cvr: rate,
        }
    }

    /// Pooled funnel rates over a set of items.
    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a Item>) -> Self {
        let mut total = HistoricalStats::default();
        for it in items {
            total.impressions += it.stats.impressions;
            total.clicks += it.stats.clicks;
            total.atcs += it.stats.atcs;
            total.conversions += it.stats.conversions;
        }
        let ratio = |x: u64, n: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
        RatePriors {
            ctr: ratio(total.clicks, total.impressions),
            atcr: ratio(total.atcs, total.clicks),
            cvr: ratio(total.conversions, total.atcs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub ctr: f64,
    pub atcr: f64,
    pub cvr: f64,
}

fn smooth(x: u64, n: u64, strength: f64, prior: f64) -> f64 {
    let denom = n as f64 + strength;
    if denom <= 0.0 {
        prior
    } else {
        (x as f64 + strength * prior) / denom
    }
}

/// Beta-smoothed funnel rates: CTR over impressions, ATCR over clicks, CVR
/// over add-to-carts.
pub fn historical_rates(stats: &HistoricalStats, prior_strength: f64, priors: &RatePriors) -> Rates {
    Rates {
        ctr: smooth(stats.clicks, stats.impressions, prior_strength, priors.ctr),
        atcr: smooth(stats.atcs, stats.clicks, prior_strength, priors.atcr),
        cvr: smooth(stats.conversions, stats.atcs, prior_strength, priors.cvr),
    }
}

/// Signed feature hashing, L2-normalized. Deterministic for a given seed.
pub fn hash_embed(tokens: &[String], dims: usize, seed: u64) -> Vec<f64> {
    assert!(dims >= 1, "hash_embed needs at least one dimension");
    let mut v = vec![0.0; dims];
    for t in tokens {
        let mut h = SipHasher13::new_with_keys(seed, 0x6861_7368);
        h.write(t.as_bytes());
        let x = h.finish();
        let bucket = (x % dims as u64) as usize;
        let sign = if (x >> 63) == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Names of each feature slot; emitted next to trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub names: Vec<String>,
    pub fingerprint: String,
}

impl FeatureLayout {
    pub fn for_config(cfg: &FeaturizerConfig) -> Self {
        let mut names: Vec<String> = [
            "bm25_title",
            "bm25_description",
            "jaccard_query_title",
            "hist_ctr",
            "hist_atcr",
            "hist_cvr",
            "log1p_price",
            "category_match",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend((0..cfg.embed_dims).map(|i| format!("query_embed_{i}")));
        names.extend((0..cfg.embed_dims).map(|i| format!("title_embed_{i}")));
        let desc = serde_json::json!({ "names": names, "config": cfg });
        let fingerprint = sha_hex(desc.to_string().as_bytes());
        FeatureLayout { names, fingerprint }
    }
}

/// Everything needed to featurize a pair: config, corpus statistics and
/// rate priors. Stored inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeaturizerConfig,
    pub corpus: CorpusStats,
    pub priors: RatePriors,
}

impl Featurizer {
    /// Builds corpus stats over `catalog` and rate priors over `prior_items`
    /// (normally the items seen in the training split).
    pub fn fit<'a>(
        config: FeaturizerConfig,
        catalog: &[Item],
        prior_items: impl IntoIterator<Item = &'a Item>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Featurizer {
            corpus: build_corpus_stats(catalog)?,
            priors: RatePriors::from_items(prior_items),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::for_config(&self.config)
    }

    pub fn features(&self, query: &Query, item: &Item) -> Result<FeatureVector> {
        build_features(query, item, self)
    }
}

pub fn build_features(query: &Query, item: &Item, f: &Featurizer) -> Result<FeatureVector> {
    let cfg = &f.config;
    let rates = historical_rates(&item.stats, cfg.prior_strength, &f.priors);
    let mut v = Vec::with_capacity(cfg.dim());
    v.push(bm25_score(&query.text, &item.title, &f.corpus.title, cfg.k1, cfg.b));
    v.push(bm25_score(&query.text, &item.description, &f.corpus.description, cfg.k1, cfg.b));
    v.push(string_similarity(&query.text, &item.title));
    v.extend([rates.ctr, rates.atcr, rates.cvr]);
    v.push(item.price.max(0.0).ln_1p());
    v.push(if query.intent_category == item.category { 1.0 } else { 0.0 });
    v.extend(hash_embed(&query.text, cfg.embed_dims, cfg.embed_seed));
    v.extend(hash_embed(&item.title, cfg.embed_dims, cfg.embed_seed.wrapping_add(1)));
    if v.len() != cfg.dim() {
        return Err(Error::Dimension {
            expected: cfg.dim(),
            actual: v.len(),
        });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!(
            "non-finite feature {i} for pair ({}, {})",
            query.id, item.id
        )));
    }
    Ok(FeatureVector(v))
}
