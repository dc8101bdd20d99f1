//! Attack 2: a producer tampers with its item before enrolment (goes
//! unnoticed) and after it (caught at the next hop).
//!
//! ```text
//! cargo run --example forge_pre_crd
//! ```

use puftrack::adversary::attack2_forge_pre_crd;
use puftrack::crypto::PartyId;
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = [PartyId(1), PartyId(3), PartyId(5)];
    for after_register in [false, true] {
        let mut sim = Simulation::new(
            SupplyChainGraph::eight_party(),
            SimulationConfig {
                seed: 21,
                ..SimulationConfig::default()
            },
        )?;
        let report = attack2_forge_pre_crd(&mut sim, PartyId(1), &path, after_register)?;
        println!(
            "{}: {:?}, attributed to {:?}",
            report.attack, report.observed.detection, report.observed.attributed_to
        );
        assert!(report.met());
    }
    Ok(())
}
