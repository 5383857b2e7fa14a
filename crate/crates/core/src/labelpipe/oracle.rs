//! Pluggable relevance oracles: a deterministic rule-based labeler, a replay
//! file, and an HTTP client for a remote model.
//!
//! Wire format for the remote oracle:
//!
//! ```text
//! POST <endpoint>   {"query": "...", "item": "..."}
//! 200 OK            {"grade": 0 | 1 | 2}
//! ```

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{tokenize, Item, Query, RelevanceGrade};
use crate::error::{Error, OracleError, Result};
use crate::io::{stable_hash, unit_interval};
use crate::synth::{grade_rule, title_overlap};

/// Environment variable that overrides the remote oracle endpoint.
pub const ENDPOINT_ENV: &str = "RELRANK_ORACLE_ENDPOINT";

/// Separator between free text and the category tag in rendered pair text.
pub const CATEGORY_MARKER: &str = " | category: ";

pub fn render_query(q: &Query) -> String {
    format!("{}{CATEGORY_MARKER}{}", q.text.join(" "), q.intent_category)
}

pub fn render_item(item: &Item) -> String {
    format!("{}{CATEGORY_MARKER}{}", item.title.join(" "), item.category)
}

fn split_category(text: &str) -> (&str, Option<&str>) {
    match text.rsplit_once(CATEGORY_MARKER) {
        Some((body, cat)) => (body, Some(cat.trim())),
        None => (text, None),
    }
}

pub trait RelevanceOracle: Send + Sync {
    fn grade(&self, query: &str, item: &str) -> Result<RelevanceGrade, OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    RuleBased,
    ReplayFile,
    RemoteHttp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability that the rule-based oracle moves a grade by one step.
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default = "default_overlap_high")]
    pub overlap_high: f64,
    #[serde(default = "default_overlap_low")]
    pub overlap_low: f64,
    #[serde(default = "default_attempts")]
    pub retry_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_concurrency() -> usize {
    4
}
fn default_overlap_high() -> f64 {
    0.6
}
fn default_overlap_low() -> f64 {
    0.3
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    200
}

impl OracleConfig {
    pub fn rule_based(noise_rate: f64, seed: u64) -> Self {
        OracleConfig {
            kind: OracleKind::RuleBased,
            endpoint: None,
            path: None,
            timeout_ms: default_timeout_ms(),
            max_concurrency: default_concurrency(),
            seed,
            noise_rate,
            overlap_high: default_overlap_high(),
            overlap_low: default_overlap_low(),
            retry_attempts: default_attempts(),
            retry_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        OracleConfig {
            kind: OracleKind::ReplayFile,
            path: Some(path.into()),
            ..Self::rule_based(0.0, 0)
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        OracleConfig {
            kind: OracleKind::RemoteHttp,
            endpoint: Some(endpoint.into()),
            ..Self::rule_based(0.0, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            OracleKind::RemoteHttp if self.resolved_endpoint().is_none() => Err(Error::Config(format!(
                "remote_http oracle needs an endpoint (config key `endpoint` or ${ENDPOINT_ENV})"
            ))),
            OracleKind::ReplayFile if self.path.is_none() => {
                Err(Error::Config("replay_file oracle needs a `path`".into()))
            }
            _ if !(0.0..=1.0).contains(&self.noise_rate) => {
                Err(Error::Config("noise_rate must be in [0, 1]".into()))
            }
            _ if self.max_concurrency == 0 => Err(Error::Config("max_concurrency must be >= 1".into())),
            _ => Ok(()),
        }
    }

    fn resolved_endpoint(&self) -> Option<String> {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.endpoint.clone())
    }

    pub fn build(&self) -> Result<Box<dyn RelevanceOracle>> {
        self.validate()?;
        Ok(match self.kind {
            OracleKind::RuleBased => Box::new(RuleBasedOracle {
                overlap_high: self.overlap_high,
                overlap_low: self.overlap_low,
                noise_rate: self.noise_rate,
                seed: self.seed,
            }),
            OracleKind::ReplayFile => Box::new(ReplayOracle::load(self.path.as_deref().expect("validated"))?),
            OracleKind::RemoteHttp => Box::new(RemoteOracle::new(
                self.resolved_endpoint().expect("validated"),
                Duration::from_millis(self.timeout_ms),
                self.retry_attempts,
                Duration::from_millis(self.retry_backoff_ms),
            )),
        })
    }
}

/// Grades by token overlap. When both texts carry a category tag the
/// generator's full rule applies; otherwise overlap thresholds alone decide.
/// Noise is keyed on the pair text, so it does not depend on call order.
#[derive(Debug, Clone)]
pub struct RuleBasedOracle {
    pub overlap_high: f64,
    pub overlap_low: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl RuleBasedOracle {
    pub fn clean_grade(&self, query: &str, item: &str) -> RelevanceGrade {
        let (q_body, q_cat) = split_category(query);
        let (i_body, i_cat) = split_category(item);
        let overlap = title_overlap(&tokenize(q_body), &tokenize(i_body));
        match (q_cat, i_cat) {
            (Some(a), Some(b)) => grade_rule(a == b, overlap, self.overlap_high, self.overlap_low),
            _ if overlap >= self.overlap_high => RelevanceGrade::HIGH,
            _ if overlap >= self.overlap_low => RelevanceGrade::MODERATE,
            _ => RelevanceGrade::IRRELEVANT,
        }
    }
}

impl RelevanceOracle for RuleBasedOracle {
    fn grade(&self, query: &str, item: &str) -> Result<RelevanceGrade, OracleError> {
        let clean = self.clean_grade(query, item);
        let h = stable_hash(self.seed, &[query, item]);
        if unit_interval(h) < self.noise_rate {
            Ok(clean.step(h & 1 == 1))
        } else {
            Ok(clean)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub query: String,
    pub item: String,
    pub grade: RelevanceGrade,
}

/// Exact lookup of previously recorded grades.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    entries: HashMap<(String, String), RelevanceGrade>,
}

impl ReplayOracle {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            entries.insert((e.query, e.item), e.grade);
        }
        Ok(ReplayOracle { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        ReplayOracle {
            entries: entries.into_iter().map(|e| ((e.query, e.item), e.grade)).collect(),
        }
    }
}

impl RelevanceOracle for ReplayOracle {
    fn grade(&self, query: &str, item: &str) -> Result<RelevanceGrade, OracleError> {
        self.entries
            .get(&(query.to_string(), item.to_string()))
            .copied()
            .ok_or_else(|| OracleError::ReplayMiss {
                query: query.to_string(),
                item: item.to_string(),
            })
    }
}

/// Blocking HTTP client with bounded retries and exponential backoff.
pub struct RemoteOracle {
    endpoint: String,
    agent: ureq::Agent,
    attempts: u32,
    backoff: Duration,
}

impl RemoteOracle {
    pub fn new(endpoint: String, timeout: Duration, attempts: u32, backoff: Duration) -> Self {
        RemoteOracle {
            endpoint,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            attempts: attempts.max(1),
            backoff,
        }
    }
}

/// Validates a response body of the form `{"grade": 0|1|2}`.
pub fn parse_grade_response(body: &serde_json::Value) -> Result<RelevanceGrade, OracleError> {
    let g = body
        .get("grade")
        .ok_or_else(|| OracleError::Malformed(format!("missing `grade` in {body}")))?;
    let v = g
        .as_u64()
        .ok_or_else(|| OracleError::Malformed(format!("grade is not an integer: {g}")))?;
    u8::try_from(v)
        .ok()
        .and_then(|v| RelevanceGrade::try_from(v).ok())
        .ok_or_else(|| OracleError::Malformed(format!("grade {v} is outside {{0, 1, 2}}")))
}

impl RelevanceOracle for RemoteOracle {
    fn grade(&self, query: &str, item: &str) -> Result<RelevanceGrade, OracleError> {
        let body = serde_json::json!({ "query": query, "item": item });
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.agent.post(&self.endpoint).send_json(&body) {
                Ok(resp) => {
                    let value: serde_json::Value = resp
                        .into_json()
                        .map_err(|e| OracleError::Malformed(format!("response is not JSON: {e}")))?;
                    return parse_grade_response(&value);
                }
                Err(ureq::Error::Status(code, _)) if code < 500 => {
                    return Err(OracleError::Http {
                        attempts: attempt + 1,
                        message: format!("status {code}"),
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(OracleError::Http {
            attempts: self.attempts,
            message: last,
        })
    }
}

/// Convenience for a single lookup.
pub fn query_oracle(cfg: &OracleConfig, query_text: &str, item_text: &str) -> Result<RelevanceGrade> {
    cfg.build()?
        .grade(query_text, item_text)
        .map_err(|source| Error::Oracle {
            query_id: query_text.to_string(),
            item_id: item_text.to_string(),
            source,
        })
}

/// One pending oracle call.
#[derive(Debug, Clone)]
pub struct OracleRequest {
    pub query_id: String,
    pub item_id: String,
    pub query: String,
    pub item: String,
}

/// Grades `requests` with at most `max_concurrency` calls in flight. Results
/// come back in request order regardless of completion order; the first
/// failure (by request order) is reported.
pub fn grade_batch(
    oracle: &dyn RelevanceOracle,
    requests: &[OracleRequest],
    max_concurrency: usize,
) -> Result<Vec<RelevanceGrade>> {
    let slots: Mutex<Vec<Option<Result<RelevanceGrade, OracleError>>>> = Mutex::new(vec![None; requests.len()]);
    let next = AtomicUsize::new(0);
    let workers = max_concurrency.max(1).min(requests.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let r = &requests[i];
                let out = oracle.grade(&r.query, &r.item);
                slots.lock().expect("no poisoned workers")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .zip(requests)
        .map(|(slot, r)| {
            slot.expect("every slot filled").map_err(|source| Error::Oracle {
                query_id: r.query_id.clone(),
                item_id: r.item_id.clone(),
                source,
            })
        })
        .collect()
}
