//! Synthetic catalog, ground-truth relevance and biased engagement logs.
//!
//! Clicks follow a logistic model with additive confounders and a
//! multiplicative position decay:
//!
//! ```text
//! P(click) = σ(a0 + relevance_effect·grade + popularity_boost·pop + price_anchor_boost·cheap)
//!            · position_bias_decay^(position − 1)
//! ```
//!
//! where `pop` is the standardized log-popularity and `cheap` the negated
//! standardized log-price. Add-to-cart and conversion are sampled down the
//! funnel with grade-dependent probabilities. Candidate sets are drawn with
//! popularity-weighted sampling, and item statistics come from a separate
//! history pass so they never include the logged outcome.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, HistoricalStats, Impression, Item, Query, RelevanceGrade};
use crate::error::{Error, Result};
use crate::net::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_queries: usize,
    pub n_items: usize,
    pub candidates_per_query: usize,
    pub vocab_size: usize,
    pub n_categories: usize,
    pub n_brands: usize,
    /// Fraction of each candidate set drawn from the query's own category.
    pub same_category_fraction: f64,
    pub popularity_boost: f64,
    pub price_anchor_boost: f64,
    pub position_bias_decay: f64,
    pub relevance_effect: f64,
    pub click_base: f64,
    pub atc_base: f64,
    pub atc_relevance_effect: f64,
    pub cvr_base: f64,
    pub cvr_relevance_effect: f64,
    /// Scale of the confounders inside the add-to-cart and conversion models.
    pub funnel_confounding: f64,
    /// Query-token fraction found in the title needed for grade 2 (with a
    /// category match).
    pub overlap_high: f64,
    /// Query-token fraction that alone earns grade 1.
    pub overlap_low: f64,
    /// History passes used to accumulate item statistics.
    pub history_rounds: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_queries: 2000,
            n_items: 5000,
            candidates_per_query: 50,
            vocab_size: 2000,
            n_categories: 20,
            n_brands: 200,
            same_category_fraction: 0.5,
            popularity_boost: 1.0,
            price_anchor_boost: 0.6,
            position_bias_decay: 0.97,
            relevance_effect: 0.6,
            click_base: -1.5,
            atc_base: -1.0,
            atc_relevance_effect: 0.3,
            cvr_base: -0.8,
            cvr_relevance_effect: 0.3,
            funnel_confounding: 0.5,
            overlap_high: 0.6,
            overlap_low: 0.3,
            history_rounds: 1,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_queries", self.n_queries),
            ("n_items", self.n_items),
            ("candidates_per_query", self.candidates_per_query),
            ("vocab_size", self.vocab_size),
            ("n_categories", self.n_categories),
            ("n_brands", self.n_brands),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.n_categories > self.vocab_size / 4 {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {} categories (need at least 4 tokens per category)",
                self.vocab_size, self.n_categories
            )));
        }
        if self.candidates_per_query > self.n_items {
            return Err(Error::Config("candidates_per_query exceeds n_items".into()));
        }
        if !(self.position_bias_decay > 0.0 && self.position_bias_decay <= 1.0) {
            return Err(Error::Config("position_bias_decay must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.same_category_fraction) {
            return Err(Error::Config("same_category_fraction must be in [0, 1]".into()));
        }
        let reals = [
            self.popularity_boost,
            self.price_anchor_boost,
            self.relevance_effect,
            self.click_base,
            self.atc_base,
            self.atc_relevance_effect,
            self.cvr_base,
            self.cvr_relevance_effect,
            self.funnel_confounding,
            self.overlap_high,
            self.overlap_low,
        ];
        if reals.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("generator strengths must be finite".into()));
        }
        Ok(())
    }

    fn block_size(&self) -> usize {
        self.vocab_size / self.n_categories
    }
}

pub fn category_name(c: usize) -> String {
    format!("c{c:02}")
}

fn token_name(t: usize) -> String {
    format!("w{t:04}")
}

fn category_index(name: &str) -> usize {
    name.trim_start_matches('c').parse().unwrap_or(0)
}

/// Samples one token from a category's distribution: a skewed draw from the
/// category's own vocabulary block with probability `topical`, otherwise
/// uniform over the whole vocabulary.
fn sample_token(cfg: &GenConfig, category: usize, topical: f64, rng: &mut ChaCha8Rng) -> usize {
    if rng.gen_bool(topical) {
        let block = cfg.block_size();
        let u: f64 = rng.gen();
        category * block + ((block as f64 * u * u) as usize).min(block - 1)
    } else {
        rng.gen_range(0..cfg.vocab_size)
    }
}

const TITLE_TOPICAL: f64 = 0.75;
const QUERY_TOPICAL: f64 = 0.9;

/// Hidden per-item signals the click model reads; not part of the dataset.
#[derive(Debug, Clone)]
pub struct ItemLatents {
    /// Standardized log-popularity.
    pub popularity: Vec<f64>,
    /// Negated standardized log-price (high = cheap-looking).
    pub cheapness: Vec<f64>,
}

/// Queries, items (with zeroed stats) and the items' hidden latents.
pub fn generate_catalog(cfg: &GenConfig) -> Result<(Vec<Query>, Vec<Item>, ItemLatents)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let price_means: Vec<f64> = (0..cfg.n_categories).map(|_| rng.gen_range(1.0..3.5)).collect();
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut popularity = Vec::with_capacity(cfg.n_items);
    let mut log_prices = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let category = rng.gen_range(0..cfg.n_categories);
        let title_len = rng.gen_range(3..=7);
        let desc_len = rng.gen_range(8..=16);
        let title = (0..title_len)
            .map(|_| token_name(sample_token(cfg, category, TITLE_TOPICAL, &mut rng)))
            .collect();
        let description = (0..desc_len)
            .map(|_| token_name(sample_token(cfg, category, TITLE_TOPICAL, &mut rng)))
            .collect();
        let log_price = price_means[category] + 0.6 * normal.sample(&mut rng);
        popularity.push(normal.sample(&mut rng));
        log_prices.push(log_price);
        items.push(Item {
            id: format!("i{i:05}"),
            title,
            description,
            price: (log_price.exp() * 100.0).round() / 100.0,
            category: category_name(category),
            brand: format!("b{:03}", rng.gen_range(0..cfg.n_brands)),
            stats: HistoricalStats::default(),
        });
    }

    let queries = (0..cfg.n_queries)
        .map(|q| {
            let category = rng.gen_range(0..cfg.n_categories);
            let len = rng.gen_range(1..=3);
            Query {
                id: format!("q{q:05}"),
                text: (0..len)
                    .map(|_| token_name(sample_token(cfg, category, QUERY_TOPICAL, &mut rng)))
                    .collect(),
                intent_category: category_name(category),
            }
        })
        .collect();

    let mean = log_prices.iter().sum::<f64>() / log_prices.len() as f64;
    let var = log_prices.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / log_prices.len() as f64;
    let sd = var.sqrt().max(1e-12);
    let cheapness = log_prices.iter().map(|x| -(x - mean) / sd).collect();
    Ok((queries, items, ItemLatents { popularity, cheapness }))
}

/// Fraction of the query's distinct tokens that appear in the title.
pub fn title_overlap(query: &[String], title: &[String]) -> f64 {
    let q: BTreeSet<&String> = query.iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let t: BTreeSet<&String> = title.iter().collect();
    q.intersection(&t).count() as f64 / q.len() as f64
}

/// The generator's relevance rule, shared with the rule-based oracle.
pub fn grade_rule(category_match: bool, overlap: f64, overlap_high: f64, overlap_low: f64) -> RelevanceGrade {
    if category_match && overlap >= overlap_high {
        RelevanceGrade::HIGH
    } else if category_match || overlap >= overlap_low {
        RelevanceGrade::MODERATE
    } else {
        RelevanceGrade::IRRELEVANT
    }
}

pub fn ground_truth_grade(query: &Query, item: &Item, cfg: &GenConfig) -> RelevanceGrade {
    grade_rule(
        query.intent_category == item.category,
        title_overlap(&query.text, &item.title),
        cfg.overlap_high,
        cfg.overlap_low,
    )
}

struct Simulator<'a> {
    cfg: &'a GenConfig,
    items: &'a [Item],
    latents: &'a ItemLatents,
    by_category: Vec<Vec<usize>>,
    exposure: Vec<f64>,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a GenConfig, items: &'a [Item], latents: &'a ItemLatents) -> Self {
        let mut by_category = vec![Vec::new(); cfg.n_categories];
        for (i, it) in items.iter().enumerate() {
            by_category[category_index(&it.category).min(cfg.n_categories - 1)].push(i);
        }
        // Heavy-tailed exposure: log-normal in the popularity latent.
        let exposure = latents.popularity.iter().map(|z| (1.2 * z).exp()).collect();
        Simulator {
            cfg,
            items,
            latents,
            by_category,
            exposure,
        }
    }

    fn weighted_sample(&self, pool: &[usize], n: usize, exclude: &BTreeSet<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let pool: Vec<usize> = pool.iter().copied().filter(|i| !exclude.contains(i)).collect();
        let n = n.min(pool.len());
        pool.choose_multiple_weighted(rng, n, |&i| self.exposure[i])
            .expect("positive finite weights")
            .copied()
            .collect()
    }

    fn candidates(&self, query: &Query, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = self.cfg.candidates_per_query;
        let own = &self.by_category[category_index(&query.intent_category).min(self.cfg.n_categories - 1)];
        let n_own = ((k as f64 * self.cfg.same_category_fraction).round() as usize).min(own.len());
        let mut chosen: BTreeSet<usize> = self.weighted_sample(own, n_own, &BTreeSet::new(), rng).into_iter().collect();
        let all: Vec<usize> = (0..self.items.len()).collect();
        let rest = self.weighted_sample(&all, k - chosen.len(), &chosen, rng);
        chosen.extend(rest);
        let mut out: Vec<usize> = chosen.into_iter().collect();
        out.shuffle(rng);
        out
    }

    /// Samples (clicked, added_to_cart, converted) for one shown pair.
    fn outcome(&self, grade: RelevanceGrade, item: usize, position: u32, rng: &mut ChaCha8Rng) -> (bool, bool, bool) {
        let c = self.cfg;
        let g = grade.as_f64();
        let confound = c.popularity_boost * self.latents.popularity[item] + c.price_anchor_boost * self.latents.cheapness[item];
        let p_click = sigmoid(c.click_base + c.relevance_effect * g + confound)
            * c.position_bias_decay.powi(position as i32 - 1);
        let clicked = rng.gen_bool(p_click.clamp(0.0, 1.0));
        let p_atc = sigmoid(c.atc_base + c.atc_relevance_effect * g + c.funnel_confounding * confound);
        let atc = clicked && rng.gen_bool(p_atc);
        let p_cvr = sigmoid(c.cvr_base + c.cvr_relevance_effect * g + c.funnel_confounding * confound);
        let converted = atc && rng.gen_bool(p_cvr);
        (clicked, atc, converted)
    }
}

/// Accumulates item statistics from history passes, then logs one
/// impression per (query, candidate) pair with its ground-truth grade.
pub fn generate_impressions(
    cfg: &GenConfig,
    queries: &[Query],
    items: &[Item],
    latents: &ItemLatents,
) -> Result<Dataset> {
    cfg.validate()?;
    let sim = Simulator::new(cfg, items, latents);

    let mut stats = vec![HistoricalStats::default(); items.len()];
    let mut history_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4849_5354);
    for _ in 0..cfg.history_rounds {
        for q in queries {
            for (pos, &i) in sim.candidates(q, &mut history_rng).iter().enumerate() {
                let grade = ground_truth_grade(q, &items[i], cfg);
                let (c, a, v) = sim.outcome(grade, i, pos as u32 + 1, &mut history_rng);
                stats[i].record(c, a, v);
            }
        }
    }

    let mut log_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4c4f_4753);
    let mut impressions = Vec::with_capacity(queries.len() * cfg.candidates_per_query);
    for q in queries {
        for (pos, &i) in sim.candidates(q, &mut log_rng).iter().enumerate() {
            let grade = ground_truth_grade(q, &items[i], cfg);
            let position = pos as u32 + 1;
            let (clicked, added_to_cart, converted) = sim.outcome(grade, i, position, &mut log_rng);
            impressions.push(Impression {
                query_id: q.id.clone(),
                item_id: items[i].id.clone(),
                position,
                clicked,
                added_to_cart,
                converted,
                grade: Some(grade),
            });
        }
    }

    let items = items
        .iter()
        .zip(stats)
        .map(|(it, s)| Item { stats: s, ..it.clone() })
        .collect();
    Ok(Dataset::new(queries.to_vec(), items, impressions))
}

/// Catalog plus impressions in one call.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    let (queries, items, latents) = generate_catalog(cfg)?;
    generate_impressions(cfg, &queries, &items, &latents)
}
