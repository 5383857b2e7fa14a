//! Runs the label refinement pipeline with simulated human labels and
//! rule-based oracles, then scores each label source against ground truth.
//!
//!     cargo run --example label_pipeline

use std::collections::HashMap;

use relrank::labelpipe::{
    labeler_accuracy, run_pipeline, simulate_human_labels, subsample_labels, CategoryPredictor, OracleConfig,
    PipelineOptions, Provenance,
};
use relrank::synth::{generate, GenConfig};

fn main() -> relrank::Result<()> {
    let ds = generate(&GenConfig {
        n_queries: 300,
        n_items: 1200,
        candidates_per_query: 20,
        vocab_size: 500,
        ..GenConfig::default()
    })?;
    let truth: HashMap<(&str, &str), _> = ds
        .impressions()
        .iter()
        .map(|i| ((i.query_id.as_str(), i.item_id.as_str()), i.grade.unwrap()))
        .collect();

    // Humans grade half of the pairs and get 15% of them wrong.
    let human = subsample_labels(&simulate_human_labels(&ds, 0.15, 1)?, 0.5, 2);
    let audit = OracleConfig::rule_based(0.0, 3).build()?;
    let bulk = OracleConfig::rule_based(0.1, 4).build()?;
    let out = run_pipeline(
        &ds,
        &human,
        audit.as_ref(),
        bulk.as_ref(),
        &CategoryPredictor::from_intents(&ds),
        &PipelineOptions::default(),
    )?;
    println!("{}", serde_json::to_string_pretty(&out.report).unwrap());

    let accuracy = |pick: &dyn Fn(&relrank::labelpipe::LabelRecord) -> Option<relrank::domain::RelevanceGrade>| {
        let (p, r): (Vec<_>, Vec<_>) = out
            .records
            .iter()
            .filter_map(|rec| pick(rec).map(|g| (g, truth[&(rec.query_id.as_str(), rec.item_id.as_str())])))
            .unzip();
        labeler_accuracy(&p, &r).map(|(a, w)| (a, w, p.len()))
    };
    let rows: [(&str, &dyn Fn(&relrank::labelpipe::LabelRecord) -> Option<_>); 4] = [
        ("human (raw)", &|r| r.human_grade),
        ("human after audit", &|r| r.human_grade.map(|_| r.final_grade)),
        ("bulk oracle", &|r| (r.provenance == Provenance::LlmLabeled).then_some(r.final_grade)),
        ("final labels", &|r| Some(r.final_grade)),
    ];
    println!("\n{:<20} {:>6} {:>8} {:>8}", "source", "pairs", "acc3", "within1");
    for (name, pick) in rows {
        let (acc3, within1, n) = accuracy(pick)?;
        println!("{name:<20} {n:>6} {acc3:>8.4} {within1:>8.4}");
    }
    Ok(())
}
