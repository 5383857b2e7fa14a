//! The `relrank` command line: generate → label → train → eval → sweep → score.
//!
//! Each output file `X` is written atomically next to `X.provenance.json`,
//! which records the command, the config hash and the SHA-256 of every input.
//! Paths are deliberately left out so reruns into a different directory stay
//! byte-identical.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::domain::{load_dataset, tokenize, Dataset, Query, RelevanceGrade};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport};
use crate::featurizer::{Featurizer, FeaturizerConfig};
use crate::io::{config_hash, load_config, sha_hex, write_atomic, write_json_atomic};
use crate::labelpipe::{
    labeler_accuracy, read_labels_jsonl, run_pipeline, simulate_human_labels, subsample_labels, write_labels_jsonl,
    CategoryPredictor, OracleConfig, PipelineOptions, PipelineReport, Provenance,
};
use crate::model::{Checkpoint, SplitConfig};
use crate::net::{scalar_relevance, HeadKind};
use crate::synth::{generate, GenConfig};
use crate::train::{epoch_log_csv, fit, fit_from, TrainConfig};
use crate::value::{parse_grid, rank_items, sweep_csv, tradeoff_sweep, value_score_scaled, RelScale, ValueWeights};

#[derive(Debug, Parser)]
#[command(name = "relrank", version, about = "Multi-task ranking with an ordinal relevance head")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic catalog and impression log.
    Generate(GenerateArgs),
    /// Run the label refinement pipeline over a dataset.
    Label(LabelArgs),
    /// Train a model variant and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out query split.
    Eval(EvalArgs),
    /// Sweep the relevance weight and write the trade-off curve.
    Sweep(SweepArgs),
    /// Rank a list of items for one query.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator config (TOML, every key required).
    #[arg(long)]
    pub config: PathBuf,
    /// Output dataset (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output labels (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline report; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Labels from `relrank label`; without them the dataset's own grades
    /// are used.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Training config (TOML with optional [train], [featurizer] and [split]
    /// tables).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ordinal, softmax3 or regression.
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// Train only the CTR/ATC/CVR towers (w_rel = 0).
    #[arg(long)]
    pub engagement_only: bool,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint (JSON); the epoch log goes to `<out>.log.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    /// Divide ŝ_rel by two so it lives on [0, 1] like the engagement heads.
    #[arg(long)]
    pub normalize_rel: bool,
}

impl WeightArgs {
    pub fn weights(&self) -> Result<ValueWeights> {
        ValueWeights::new(self.alpha, self.beta, self.gamma)
    }

    pub fn scale(&self) -> RelScale {
        if self.normalize_rel {
            RelScale::Halved
        } else {
            RelScale::Raw
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Output report (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `start:end:step` or a comma-separated list of relevance weights.
    #[arg(long, default_value = "0:1:0.1")]
    pub grid: String,
    #[arg(long)]
    pub normalize_rel: bool,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Free-text query.
    #[arg(long)]
    pub query: String,
    /// Predicted category of the query, if known.
    #[arg(long, default_value = "")]
    pub category: String,
    /// JSONL file with `"kind": "item"` records.
    #[arg(long)]
    pub items: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Also write the ranking to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sidecar written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

pub fn provenance_path(out: &Path) -> PathBuf {
    sibling(out, "provenance.json")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

fn file_sha(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha_hex(&bytes))
}

fn write_output(out: &Path, bytes: &[u8], record: &RunRecord) -> Result<()> {
    write_atomic(out, bytes)?;
    write_json_atomic(&provenance_path(out), record)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Label(a) => cmd_label(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Score(a) => {
            print!("{}", cmd_score(a)?);
            Ok(())
        }
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg: GenConfig = load_config(&args.config)?;
    cfg.validate()?;
    let ds = generate(&cfg)?;
    let mut bytes = Vec::new();
    ds.write_jsonl(&mut bytes)?;
    let record = RunRecord {
        command: "generate".into(),
        config_hash: config_hash(&cfg),
        seeds: BTreeMap::from([("generator".into(), cfg.seed)]),
        inputs: BTreeMap::new(),
    };
    write_output(&args.out, &bytes, &record)
}

/// Settings of the `label` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    /// Fraction of pairs that receive a (simulated) human label.
    pub human_coverage: f64,
    /// Chance that a simulated human label is off by one grade.
    pub human_noise: f64,
    pub human_seed: u64,
    /// JSON object mapping query id to predicted categories; defaults to
    /// each query's intent category.
    #[serde(default)]
    pub q2t_path: Option<PathBuf>,
    /// Smoothing strength for the ATCR/CVR percentiles.
    #[serde(default = "default_prior_strength")]
    pub prior_strength: f64,
    pub audit_oracle: OracleConfig,
    pub bulk_oracle: OracleConfig,
}

fn default_prior_strength() -> f64 {
    10.0
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("human_coverage", self.human_coverage), ("human_noise", self.human_noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.prior_strength >= 0.0) {
            return Err(Error::Config(format!("prior_strength must be >= 0, got {}", self.prior_strength)));
        }
        self.audit_oracle.validate()?;
        self.bulk_oracle.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub pairs: usize,
    pub acc3: f64,
    pub within1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub config_hash: String,
    pub pipeline: PipelineReport,
    /// Bulk labeler against ground truth on the pairs it labeled.
    pub labeler_accuracy: Option<Accuracy>,
    /// Final labels against ground truth on all pairs.
    pub final_accuracy: Option<Accuracy>,
}

fn accuracy(pairs: &[(RelevanceGrade, RelevanceGrade)]) -> Result<Option<Accuracy>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (p, r): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
    let (acc3, within1) = labeler_accuracy(&p, &r)?;
    Ok(Some(Accuracy {
        pairs: pairs.len(),
        acc3,
        within1,
    }))
}

pub fn cmd_label(args: &LabelArgs) -> Result<LabelReport> {
    let cfg: LabelConfig = load_config(&args.config)?;
    cfg.validate()?;
    let ds = load_dataset(&args.dataset)?;
    let mut inputs = BTreeMap::from([("dataset".to_string(), file_sha(&args.dataset)?)]);
    let q2t = match &cfg.q2t_path {
        Some(p) => {
            inputs.insert("q2t".into(), file_sha(p)?);
            CategoryPredictor::load(p)?
        }
        None => CategoryPredictor::from_intents(&ds),
    };
    let hash = config_hash(&(&cfg, &inputs));

    let human = subsample_labels(
        &simulate_human_labels(&ds, cfg.human_noise, cfg.human_seed)?,
        cfg.human_coverage,
        cfg.human_seed,
    );
    let audit = cfg.audit_oracle.build()?;
    let bulk = cfg.bulk_oracle.build()?;
    let opts = PipelineOptions {
        prior_strength: cfg.prior_strength,
        audit_concurrency: cfg.audit_oracle.max_concurrency,
        bulk_concurrency: cfg.bulk_oracle.max_concurrency,
    };
    let out = run_pipeline(&ds, &human, audit.as_ref(), bulk.as_ref(), &q2t, &opts)?;

    let truth: HashMap<(&str, &str), RelevanceGrade> = ds
        .impressions()
        .iter()
        .filter_map(|i| i.grade.map(|g| ((i.query_id.as_str(), i.item_id.as_str()), g)))
        .collect();
    let mut bulk_pairs = Vec::new();
    let mut final_pairs = Vec::new();
    for r in &out.records {
        if let Some(&t) = truth.get(&(r.query_id.as_str(), r.item_id.as_str())) {
            final_pairs.push((r.final_grade, t));
            if r.provenance == Provenance::LlmLabeled {
                bulk_pairs.push((r.final_grade, t));
            }
        }
    }
    let report = LabelReport {
        config_hash: hash.clone(),
        pipeline: out.report,
        labeler_accuracy: accuracy(&bulk_pairs)?,
        final_accuracy: accuracy(&final_pairs)?,
    };

    let record = RunRecord {
        command: "label".into(),
        config_hash: hash,
        seeds: BTreeMap::from([
            ("human".into(), cfg.human_seed),
            ("audit_oracle".into(), cfg.audit_oracle.seed),
            ("bulk_oracle".into(), cfg.bulk_oracle.seed),
        ]),
        inputs,
    };
    let report_path = args.report.clone().unwrap_or_else(|| sibling(&args.out, "report.json"));
    write_labels_jsonl(&out.records, &args.out)?;
    write_json_atomic(&provenance_path(&args.out), &record)?;
    write_output(&report_path, &json_bytes(&report)?, &record)?;
    Ok(report)
}

/// Settings of the `train` command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub featurizer: FeaturizerConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

/// Replaces the dataset's grades with the refined labels. Every label must
/// name a logged pair; pairs without a label become unlabeled.
pub fn join_labels(ds: &Dataset, labels_path: &Path) -> Result<Dataset> {
    let labels = read_labels_jsonl(labels_path)?;
    let logged: std::collections::HashSet<(&str, &str)> = ds
        .impressions()
        .iter()
        .map(|i| (i.query_id.as_str(), i.item_id.as_str()))
        .collect();
    let mut by_pair = HashMap::with_capacity(labels.len());
    for l in &labels {
        if !logged.contains(&(l.query_id.as_str(), l.item_id.as_str())) {
            return Err(Error::Referential(format!(
                "label for ({}, {}) matches no impression",
                l.query_id, l.item_id
            )));
        }
        if by_pair.insert((l.query_id.as_str(), l.item_id.as_str()), l.final_grade).is_some() {
            return Err(Error::Referential(format!(
                "duplicate label for ({}, {})",
                l.query_id, l.item_id
            )));
        }
    }
    Ok(ds.with_grades(|i| by_pair.get(&(i.query_id.as_str(), i.item_id.as_str())).copied()))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Checkpoint> {
    let mut file: TrainFile = match &args.config {
        Some(p) => load_config(p)?,
        None => TrainFile::default(),
    };
    if let Some(e) = args.epochs {
        file.train.epochs = e;
    }
    if let Some(s) = args.seed {
        file.train.seed = s;
    }
    if args.engagement_only {
        file.train.weights = file.train.weights.without_relevance();
    }
    file.train.validate()?;
    file.featurizer.validate()?;
    file.split.validate()?;

    let mut inputs = BTreeMap::from([("dataset".to_string(), file_sha(&args.dataset)?)]);
    let mut ds = load_dataset(&args.dataset)?;
    if let Some(p) = &args.labels {
        inputs.insert("labels".into(), file_sha(p)?);
        ds = join_labels(&ds, p)?;
    }
    let init = match &args.init_from {
        Some(p) => {
            inputs.insert("init".into(), file_sha(p)?);
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let head = match (&init, args.head) {
        (Some(ck), Some(h)) if ck.head_kind() != h => {
            return Err(Error::Invalid(format!(
                "--head {} conflicts with the {} head of --init-from",
                h.name(),
                ck.head_kind().name()
            )))
        }
        (Some(ck), _) => ck.head_kind(),
        (None, h) => h.unwrap_or(HeadKind::Ordinal),
    };

    let (train, _) = file.split.split(&ds)?;
    let featurizer = Featurizer::fit(file.featurizer.clone(), ds.items(), train.items())?;
    let fitted = match init {
        Some(ck) => fit_from(&train, &featurizer, &file.train, ck.params)?,
        None => fit(&train, &featurizer, &file.train, head)?,
    };
    let hash = config_hash(&(&file, head.name(), args.engagement_only, &inputs));
    let ck = Checkpoint {
        params: fitted.params,
        featurizer,
        train_config: file.train.clone(),
        split: file.split,
        engagement_only: args.engagement_only,
        config_hash: hash.clone(),
    };
    let record = RunRecord {
        command: "train".into(),
        config_hash: hash,
        seeds: BTreeMap::from([("train".into(), file.train.seed), ("split".into(), file.split.seed)]),
        inputs,
    };
    write_output(&args.out, &json_bytes(&ck)?, &record)?;
    write_output(&sibling(&args.out, "log.csv"), epoch_log_csv(&fitted.log).as_bytes(), &record)?;
    Ok(ck)
}

/// Checkpoint plus the held-out side of its query split.
fn load_eval_split(checkpoint: &Path, dataset: &Path) -> Result<(Checkpoint, Dataset, BTreeMap<String, String>)> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let (_, held_out) = ck.split.split(&ds)?;
    let inputs = BTreeMap::from([
        ("checkpoint".to_string(), file_sha(checkpoint)?),
        ("dataset".to_string(), file_sha(dataset)?),
    ]);
    Ok((ck, held_out, inputs))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let opts = EvalOptions {
        value_weights: args.weights.weights()?,
        rel_scale: args.weights.scale(),
    };
    let (ck, held_out, inputs) = load_eval_split(&args.checkpoint, &args.dataset)?;
    let report = evaluate(&ck, &ck.predict(&held_out)?, &opts)?;
    let record = RunRecord {
        command: "eval".into(),
        config_hash: config_hash(&(&ck.config_hash, &opts, &inputs)),
        seeds: BTreeMap::from([("split".into(), ck.split.seed)]),
        inputs,
    };
    write_output(&args.out, &json_bytes(&report)?, &record)?;
    Ok(report)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let grid = parse_grid(&args.grid)?;
    let scale = if args.normalize_rel { RelScale::Halved } else { RelScale::Raw };
    let (ck, held_out, inputs) = load_eval_split(&args.checkpoint, &args.dataset)?;
    let points = tradeoff_sweep(&ck.predict(&held_out)?, &grid, scale)?;
    let record = RunRecord {
        command: "sweep".into(),
        config_hash: config_hash(&(&ck.config_hash, &grid, scale, &inputs)),
        seeds: BTreeMap::from([("split".into(), ck.split.seed)]),
        inputs,
    };
    write_output(&args.out, sweep_csv(&points).as_bytes(), &record)
}

/// Tab-separated ranking, best first:
/// `rank item_id S s_rel y_ctr y_atc y_cvr p_ge1 p_ge2`.
pub fn cmd_score(args: &ScoreArgs) -> Result<String> {
    let weights = args.weights.weights()?;
    let scale = args.weights.scale();
    let ck = Checkpoint::load(&args.checkpoint)?;
    let catalog = load_dataset(&args.items)?;
    if catalog.items().is_empty() {
        return Err(Error::Invalid(format!("{} contains no items", args.items.display())));
    }
    let query = Query {
        id: "query".into(),
        text: tokenize(&args.query),
        intent_category: args.category.clone(),
    };
    let mut scored = Vec::with_capacity(catalog.items().len());
    let mut outputs = HashMap::with_capacity(catalog.items().len());
    for item in catalog.items() {
        let o = ck.outputs(&query, item)?;
        scored.push((item.id.clone(), value_score_scaled(&o, &weights, scale)?));
        outputs.insert(item.id.as_str(), o);
    }
    let scores: HashMap<String, f64> = scored.iter().cloned().collect();
    let mut table = String::from("rank\titem_id\tS\ts_rel\ty_ctr\ty_atc\ty_cvr\tp_ge1\tp_ge2\n");
    for (rank, id) in rank_items(&scored)?.into_iter().enumerate() {
        let o = &outputs[id.as_str()];
        let _ = writeln!(
            table,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            rank + 1,
            id,
            scores[&id],
            scalar_relevance(o),
            o.y_ctr,
            o.y_atc,
            o.y_cvr,
            o.p_ge1,
            o.p_ge2
        );
    }
    if let Some(out) = &args.out {
        let inputs = BTreeMap::from([
            ("checkpoint".to_string(), file_sha(&args.checkpoint)?),
            ("items".to_string(), file_sha(&args.items)?),
        ]);
        let record = RunRecord {
            command: "score".into(),
            config_hash: config_hash(&(&ck.config_hash, &args.query, &args.category, &weights, scale, &inputs)),
            seeds: BTreeMap::new(),
            inputs,
        };
        write_output(out, table.as_bytes(), &record)?;
    }
    Ok(table)
}
