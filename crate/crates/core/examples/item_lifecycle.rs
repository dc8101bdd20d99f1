//! An item travels an honest path through the example supply chain: register,
//! ship, verify at every hop. Also shows the alert raised for an item that
//! was shipped but never registered.
//!
//! ```text
//! cargo run --example item_lifecycle
//! ```

use puftrack::crypto::PartyId;
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = SupplyChainGraph::eight_party();
    println!("stages: {:?}", graph.stages()?);
    let mut sim = Simulation::new(
        graph,
        SimulationConfig {
            seed: 3,
            ..SimulationConfig::default()
        },
    )?;

    let path = [PartyId(0), PartyId(3), PartyId(5)];
    let mut item = sim.new_item(path[0])?;
    for delivery in sim.run_path(&mut item, &path)? {
        println!("{}", delivery.key());
    }

    // Shipped without a CRD: the buyer raises no_crd against the producer.
    let mut unregistered = sim.manufacture(PartyId(2))?;
    sim.ship(PartyId(2), PartyId(4), &mut unregistered)?;
    let delivery = sim.deliver(PartyId(4), &mut unregistered)?;
    println!("{} (accused {:?})", delivery.key(), delivery.key().accused());

    println!("ledger evidence for {}:", item.item);
    for key in sim.system().evidence(PartyId(5), item.item) {
        println!("  {key}");
    }
    Ok(())
}
