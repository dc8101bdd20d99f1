//! Attack 1: a logistics party swaps the PUF in transit, first by tampering,
//! then with a replay clone built from the pairs it observed.
//!
//! ```text
//! cargo run --example forge_in_transit
//! ```

use puftrack::adversary::attack1_forge_in_transit;
use puftrack::crypto::PartyId;
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = [PartyId(1), PartyId(3), PartyId(5)];
    for clone in [false, true] {
        let mut sim = Simulation::new(
            SupplyChainGraph::eight_party(),
            SimulationConfig {
                seed: 11,
                ..SimulationConfig::default()
            },
        )?;
        let report = attack1_forge_in_transit(&mut sim, PartyId(3), &path, clone)?;
        println!(
            "{}: {:?}, attributed to {:?}",
            report.attack, report.observed.detection, report.observed.attributed_to
        );
        for key in &report.observed.ledger_evidence {
            println!("  {key}");
        }
        for note in &report.notes {
            println!("  note: {note}");
        }
        assert!(report.met());
    }
    Ok(())
}
