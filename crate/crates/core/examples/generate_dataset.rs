//! Generates a synthetic catalog with impressions and prints its shape.
//!
//!     cargo run --example generate_dataset [-- out.jsonl]

use relrank::domain::validate_dataset;
use relrank::synth::{generate, GenConfig};

fn main() -> relrank::Result<()> {
    let cfg = GenConfig {
        n_queries: 200,
        n_items: 800,
        candidates_per_query: 20,
        vocab_size: 400,
        ..GenConfig::default()
    };
    let ds = generate(&cfg)?;
    assert!(validate_dataset(&ds).is_empty());

    let imps = ds.impressions();
    let n = imps.len() as f64;
    let rate = |f: fn(&relrank::domain::Impression) -> bool| imps.iter().filter(|i| f(i)).count() as f64 / n;
    println!("{} queries, {} items, {} impressions", ds.queries().len(), ds.items().len(), imps.len());
    println!(
        "click {:.3}  add-to-cart {:.3}  conversion {:.3}",
        rate(|i| i.clicked),
        rate(|i| i.added_to_cart),
        rate(|i| i.converted)
    );
    let mut grades = [0usize; 3];
    for imp in imps {
        grades[imp.grade.expect("generated pairs are graded").value() as usize] += 1;
    }
    println!("grades 0/1/2: {grades:?}");

    let q = &ds.queries()[0];
    println!("\nquery {} [{}]: {}", q.id, q.intent_category, q.text.join(" "));
    for (_, idx) in ds.groups().into_iter().take(1) {
        for &k in idx.iter().take(5) {
            let imp = &imps[k];
            let item = ds.item(&imp.item_id).unwrap();
            println!(
                "  pos {:>2} grade {} click {:<5} {} [{}] {}",
                imp.position,
                imp.grade.unwrap().value(),
                imp.clicked,
                item.id,
                item.category,
                item.title.join(" ")
            );
        }
    }

    if let Some(out) = std::env::args().nth(1) {
        ds.save_jsonl(&out)?;
        println!("\nwrote {out}");
    }
    Ok(())
}
