//! Compares analytic gradients with finite differences for every head.
//!
//!     cargo run --example gradient_check [-- trials]

use relrank::net::HeadKind;
use relrank::train::{gradient_check, TaskWeights};

fn main() -> relrank::Result<()> {
    let trials = std::env::args().nth(1).map_or(20, |n| n.parse().expect("trials must be an integer"));
    for (name, weights) in [("all tasks", TaskWeights::default()), ("engagement only", TaskWeights::engagement_only())] {
        for head in HeadKind::ALL {
            let r = gradient_check(&weights, head, trials, 7)?;
            println!(
                "{name:<16} {head:<10?} max rel error {:.2e}  ({} coordinates, {} skipped at ReLU kinks)",
                r.max_rel_error, r.checked, r.skipped_kinks
            );
        }
    }
    Ok(())
}
