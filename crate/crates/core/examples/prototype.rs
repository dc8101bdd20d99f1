//! Manufacturer, logistics and distribution organisations track eight items;
//! then the logistics party substitutes three of them.
//!
//! ```text
//! cargo run --example prototype
//! ```

use puftrack::experiments::{run_prototype, PrototypeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = run_prototype(&PrototypeConfig::default())?;
    for (phase, run) in [("honest", &report.honest), ("adversary", &report.adversary)] {
        for v in &run.verifications {
            println!(
                "{phase:9} {} {}->{} {} ({:?})",
                v.item, v.supplier, v.buyer, v.result, v.match_count
            );
        }
    }
    for check in &report.checks {
        println!(
            "{} {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    Ok(())
}
