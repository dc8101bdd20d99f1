//! Attack 3: a buyer damages a correctly delivered item and verifies it,
//! so the failed verification names its honest supplier.
//!
//! ```text
//! cargo run --example blame_supplier
//! ```

use puftrack::adversary::attack3_blame_supplier;
use puftrack::crypto::PartyId;
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(
        SupplyChainGraph::eight_party(),
        SimulationConfig {
            seed: 31,
            ..SimulationConfig::default()
        },
    )?;
    let report = attack3_blame_supplier(&mut sim, PartyId(3), &[PartyId(1), PartyId(3), PartyId(5)])?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    assert_eq!(report.observed.attributed_to, Some(PartyId(1)));
    Ok(())
}
