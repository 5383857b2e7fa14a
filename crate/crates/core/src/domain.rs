//! Core data types shared by every stage, plus the JSONL dataset format.
//!
//! A dataset file holds one JSON object per line. The `kind` field selects
//! the record type:
//!
//! ```text
//! {"kind":"query","id":"q1","text":"whole milk","intent_category":"dairy"}
//! {"kind":"item","id":"i1","title":"whole milk 1l","description":"...","price":2.5,
//!  "category":"dairy","brand":"acme","impressions":10,"clicks":3,"atcs":1,"conversions":1}
//! {"kind":"impression","query_id":"q1","item_id":"i1","position":1,"clicked":true,
//!  "added_to_cart":false,"converted":false,"grade":2}
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|word| {
            word.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Ordinal relevance label: 0 irrelevant, 1 moderately relevant, 2 highly relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RelevanceGrade(u8);

impl RelevanceGrade {
    pub const IRRELEVANT: RelevanceGrade = RelevanceGrade(0);
    pub const MODERATE: RelevanceGrade = RelevanceGrade(1);
    pub const HIGH: RelevanceGrade = RelevanceGrade(2);
    pub const ALL: [RelevanceGrade; 3] = [Self::IRRELEVANT, Self::MODERATE, Self::HIGH];

    pub fn new(value: u8) -> Result<Self> {
        Self::try_from(value).map_err(Error::Invalid)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// Moves one step up or down, staying inside {0, 1, 2}.
    pub fn step(self, up: bool) -> Self {
        match (self.0, up) {
            (0, _) => Self(1),
            (2, _) => Self(1),
            (_, true) => Self(2),
            (_, false) => Self(0),
        }
    }
}

impl TryFrom<u8> for RelevanceGrade {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        if value <= 2 {
            Ok(RelevanceGrade(value))
        } else {
            Err(format!("grade out of range: {value} (expected 0, 1 or 2)"))
        }
    }
}

impl From<RelevanceGrade> for u8 {
    fn from(g: RelevanceGrade) -> u8 {
        g.0
    }
}

impl fmt::Display for RelevanceGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub text: Vec<String>,
    pub intent_category: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoricalStats {
    pub impressions: u64,
    pub clicks: u64,
    pub atcs: u64,
    pub conversions: u64,
}

impl HistoricalStats {
    pub fn is_monotone(&self) -> bool {
        self.conversions <= self.atcs && self.atcs <= self.clicks && self.clicks <= self.impressions
    }

    /// Records one impression outcome, saturating at `u64::MAX`.
    pub fn record(&mut self, clicked: bool, added_to_cart: bool, converted: bool) {
        self.impressions = self.impressions.saturating_add(1);
        self.clicks = self.clicks.saturating_add(u64::from(clicked));
        self.atcs = self.atcs.saturating_add(u64::from(added_to_cart));
        self.conversions = self.conversions.saturating_add(u64::from(converted));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub title: Vec<String>,
    pub description: Vec<String>,
    pub price: f64,
    pub category: String,
    pub brand: String,
    pub stats: HistoricalStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub query_id: String,
    pub item_id: String,
    pub position: u32,
    pub clicked: bool,
    pub added_to_cart: bool,
    pub converted: bool,
    pub grade: Option<RelevanceGrade>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Query {
        id: String,
        text: String,
        intent_category: String,
    },
    Item {
        id: String,
        title: String,
        description: String,
        price: f64,
        category: String,
        brand: String,
        impressions: u64,
        clicks: u64,
        atcs: u64,
        conversions: u64,
    },
    Impression(Impression),
}

/// Queries, catalog and logged impressions. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    queries: Vec<Query>,
    items: Vec<Item>,
    impressions: Vec<Impression>,
    query_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.queries == other.queries
            && self.items == other.items
            && self.impressions == other.impressions
    }
}

/// One invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateQuery(String),
    DuplicateItem(String),
    EmptyQueryText(String),
    EmptyTitle(String),
    NegativePrice(String),
    StatsNotMonotone(String),
    UnknownQuery { query_id: String, item_id: String },
    UnknownItem { query_id: String, item_id: String },
    DuplicatePair { query_id: String, item_id: String },
    ZeroPosition { query_id: String, item_id: String },
    FunnelBroken { query_id: String, item_id: String },
}

impl Violation {
    fn is_referential(&self) -> bool {
        matches!(self, Violation::UnknownQuery { .. } | Violation::UnknownItem { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateQuery(id) => write!(f, "duplicate query id {id}"),
            Violation::DuplicateItem(id) => write!(f, "duplicate item id {id}"),
            Violation::EmptyQueryText(id) => write!(f, "query {id} has empty text"),
            Violation::EmptyTitle(id) => write!(f, "item {id} has empty title"),
            Violation::NegativePrice(id) => write!(f, "item {id} has a negative or non-finite price"),
            Violation::StatsNotMonotone(id) => {
                write!(f, "item {id}: stats must satisfy conversions <= atcs <= clicks <= impressions")
            }
            Violation::UnknownQuery { query_id, item_id } => {
                write!(f, "impression ({query_id}, {item_id}) references unknown query {query_id}")
            }
            Violation::UnknownItem { query_id, item_id } => {
                write!(f, "impression ({query_id}, {item_id}) references unknown item {item_id}")
            }
            Violation::DuplicatePair { query_id, item_id } => {
                write!(f, "pair ({query_id}, {item_id}) appears more than once")
            }
            Violation::ZeroPosition { query_id, item_id } => {
                write!(f, "impression ({query_id}, {item_id}) has position 0")
            }
            Violation::FunnelBroken { query_id, item_id } => {
                write!(f, "impression ({query_id}, {item_id}): converted => added_to_cart => clicked violated")
            }
        }
    }
}

impl Dataset {
    /// Builds a dataset without validating it; see [`validate_dataset`].
    pub fn new(queries: Vec<Query>, items: Vec<Item>, impressions: Vec<Impression>) -> Self {
        let query_index = queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.clone(), i))
            .collect();
        let item_index = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.clone(), i))
            .collect();
        Dataset {
            queries,
            items,
            impressions,
            query_index,
            item_index,
        }
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn impressions(&self) -> &[Impression] {
        &self.impressions
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.query_index.get(id).map(|&i| &self.queries[i])
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.item_index.get(id).map(|&i| &self.items[i])
    }

    /// Impression indices grouped by query, in query order; each group is
    /// sorted by shown position.
    pub fn groups(&self) -> Vec<(&Query, Vec<usize>)> {
        let mut by_query: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, imp) in self.impressions.iter().enumerate() {
            by_query.entry(imp.query_id.as_str()).or_default().push(i);
        }
        self.queries
            .iter()
            .filter_map(|q| {
                by_query.remove(q.id.as_str()).map(|mut idx| {
                    idx.sort_by_key(|&i| (self.impressions[i].position, i));
                    (q, idx)
                })
            })
            .collect()
    }

    /// Returns a copy with every impression's grade replaced by `grade_of`.
    pub fn with_grades(&self, mut grade_of: impl FnMut(&Impression) -> Option<RelevanceGrade>) -> Self {
        let impressions = self
            .impressions
            .iter()
            .map(|imp| Impression {
                grade: grade_of(imp),
                ..imp.clone()
            })
            .collect();
        Dataset::new(self.queries.clone(), self.items.clone(), impressions)
    }

    /// Keeps only impressions (and queries) whose query satisfies `keep`.
    pub fn filter_queries(&self, mut keep: impl FnMut(&Query) -> bool) -> Self {
        let queries: Vec<Query> = self.queries.iter().filter(|q| keep(q)).cloned().collect();
        let ids: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        let impressions = self
            .impressions
            .iter()
            .filter(|imp| ids.contains(imp.query_id.as_str()))
            .cloned()
            .collect();
        Dataset::new(queries, self.items.clone(), impressions)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let mut line = |rec: &Record| -> Result<()> {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))
        };
        for q in &self.queries {
            line(&Record::Query {
                id: q.id.clone(),
                text: q.text.join(" "),
                intent_category: q.intent_category.clone(),
            })?;
        }
        for it in &self.items {
            line(&Record::Item {
                id: it.id.clone(),
                title: it.title.join(" "),
                description: it.description.join(" "),
                price: it.price,
                category: it.category.clone(),
                brand: it.brand.clone(),
                impressions: it.stats.impressions,
                clicks: it.stats.clicks,
                atcs: it.stats.atcs,
                conversions: it.stats.conversions,
            })?;
        }
        for imp in &self.impressions {
            line(&Record::Impression(imp.clone()))?;
        }
        Ok(())
    }
}

/// Lists every invariant violation; an empty list means the dataset is valid.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut seen = HashSet::new();
    for q in &ds.queries {
        if !seen.insert(q.id.as_str()) {
            out.push(Violation::DuplicateQuery(q.id.clone()));
        }
        if q.text.is_empty() {
            out.push(Violation::EmptyQueryText(q.id.clone()));
        }
    }

    let mut seen = HashSet::new();
    for it in &ds.items {
        if !seen.insert(it.id.as_str()) {
            out.push(Violation::DuplicateItem(it.id.clone()));
        }
        if it.title.is_empty() {
            out.push(Violation::EmptyTitle(it.id.clone()));
        }
        if !(it.price.is_finite() && it.price >= 0.0) {
            out.push(Violation::NegativePrice(it.id.clone()));
        }
        if !it.stats.is_monotone() {
            out.push(Violation::StatsNotMonotone(it.id.clone()));
        }
    }

    let mut pairs = HashSet::new();
    for imp in &ds.impressions {
        let key = || (imp.query_id.clone(), imp.item_id.clone());
        if !ds.query_index.contains_key(&imp.query_id) {
            let (query_id, item_id) = key();
            out.push(Violation::UnknownQuery { query_id, item_id });
        }
        if !ds.item_index.contains_key(&imp.item_id) {
            let (query_id, item_id) = key();
            out.push(Violation::UnknownItem { query_id, item_id });
        }
        if !pairs.insert((imp.query_id.as_str(), imp.item_id.as_str())) {
            let (query_id, item_id) = key();
            out.push(Violation::DuplicatePair { query_id, item_id });
        }
        if imp.position == 0 {
            let (query_id, item_id) = key();
            out.push(Violation::ZeroPosition { query_id, item_id });
        }
        if (imp.converted && !imp.added_to_cart) || (imp.added_to_cart && !imp.clicked) {
            let (query_id, item_id) = key();
            out.push(Violation::FunnelBroken { query_id, item_id });
        }
    }
    out
}

/// Reads and validates a JSONL dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

pub fn read_dataset(reader: impl BufRead) -> Result<Dataset> {
    let mut queries = Vec::new();
    let mut items = Vec::new();
    let mut impressions = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match record {
            Record::Query {
                id,
                text,
                intent_category,
            } => queries.push(Query {
                id,
                text: tokenize(&text),
                intent_category,
            }),
            Record::Item {
                id,
                title,
                description,
                price,
                category,
                brand,
                impressions,
                clicks,
                atcs,
                conversions,
            } => items.push(Item {
                id,
                title: tokenize(&title),
                description: tokenize(&description),
                price,
                category,
                brand,
                stats: HistoricalStats {
                    impressions,
                    clicks,
                    atcs,
                    conversions,
                },
            }),
            Record::Impression(imp) => impressions.push(imp),
        }
    }

    let ds = Dataset::new(queries, items, impressions);
    let violations = validate_dataset(&ds);
    if let Some(first) = violations.first() {
        let msg = if violations.len() == 1 {
            first.to_string()
        } else {
            format!("{first} (and {} more)", violations.len() - 1)
        };
        return Err(if first.is_referential() {
            Error::Referential(msg)
        } else {
            Error::Invariant(msg)
        });
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"kind":"query","id":"q1","text":"Whole Milk","intent_category":"dairy"}
{"kind":"item","id":"i1","title":"whole milk 1l","description":"fresh","price":2.5,"category":"dairy","brand":"acme","impressions":10,"clicks":3,"atcs":1,"conversions":1}
{"kind":"item","id":"i2","title":"oat drink","description":"","price":3.0,"category":"dairy","brand":"oaty","impressions":5,"clicks":1,"atcs":0,"conversions":0}
{"kind":"impression","query_id":"q1","item_id":"i1","position":1,"clicked":true,"added_to_cart":true,"converted":false,"grade":2}
{"kind":"impression","query_id":"q1","item_id":"i2","position":2,"clicked":false,"added_to_cart":false,"converted":false,"grade":null}
"#;

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("  Whole-Milk, 1L!  "), vec!["wholemilk", "1l"]);
        assert!(tokenize(" ,, ").is_empty());
    }

    #[test]
    fn grade_bounds() {
        assert!(RelevanceGrade::new(2).is_ok());
        let err = RelevanceGrade::new(3).unwrap_err().to_string();
        assert!(err.contains("grade out of range"));
        assert!(RelevanceGrade::IRRELEVANT < RelevanceGrade::MODERATE);
        assert!(RelevanceGrade::MODERATE < RelevanceGrade::HIGH);
    }

    #[test]
    fn grade_step_stays_in_range_and_moves_by_one() {
        for g in RelevanceGrade::ALL {
            for up in [true, false] {
                let s = g.step(up);
                assert_eq!((s.value() as i32 - g.value() as i32).abs(), 1);
            }
        }
    }

    #[test]
    fn loads_small_file() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        assert_eq!(ds.queries().len(), 1);
        assert_eq!(ds.items().len(), 2);
        assert_eq!(ds.impressions().len(), 2);
        assert_eq!(ds.queries()[0].text, vec!["whole", "milk"]);
        assert_eq!(ds.impressions()[0].grade, Some(RelevanceGrade::HIGH));
        assert_eq!(ds.impressions()[1].grade, None);
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn rejects_grade_out_of_range_with_line_number() {
        let bad = SMALL.replace(r#""grade":2"#, r#""grade":3"#);
        match read_dataset(bad.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("grade out of range"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_item() {
        let bad = SMALL.replace(r#""item_id":"i2""#, r#""item_id":"i9""#);
        assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Referential(_))));
    }

    #[test]
    fn rejects_converted_without_click() {
        let bad = SMALL.replace(
            r#""clicked":false,"added_to_cart":false,"converted":false"#,
            r#""clicked":false,"added_to_cart":false,"converted":true"#,
        );
        assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Invariant(_))));
    }

    #[test]
    fn validate_reports_clicks_over_impressions() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        let mut items = ds.items().to_vec();
        items[1].stats.clicks = 9;
        let ds = Dataset::new(ds.queries().to_vec(), items, ds.impressions().to_vec());
        assert_eq!(validate_dataset(&ds), vec![Violation::StatsNotMonotone("i2".into())]);
    }

    #[test]
    fn validate_reports_duplicate_pair() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        let mut imps = ds.impressions().to_vec();
        let mut dup = imps[0].clone();
        dup.position = 3;
        imps.push(dup);
        let ds = Dataset::new(ds.queries().to_vec(), ds.items().to_vec(), imps);
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::DuplicatePair { .. }));
    }

    #[test]
    fn save_then_load_round_trips() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn groups_follow_position_order() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        let groups = ds.groups();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].1, vec![0, 1]);
    }
}
