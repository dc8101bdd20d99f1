//! Attack 4: a party's ledger node misbehaves. With four nodes every strategy
//! is tolerated. Three nodes tolerate no fault at all, so nothing is promised
//! there; the last run only reports what an equivocating node did.
//!
//! ```text
//! cargo run --example byzantine_node
//! ```

use puftrack::adversary::{attack4_byzantine, byzantine_ledger, SafetyTrial};
use puftrack::crypto::PartyId;
use puftrack::ledger::{ByzantineStrategy, DeliveryPolicy, LedgerConfig};
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = [PartyId(0), PartyId(3), PartyId(6)];
    for strategy in ByzantineStrategy::ALL {
        let config = SimulationConfig {
            seed: 41,
            ledger: byzantine_ledger(LedgerConfig::default(), PartyId(3), strategy),
            ..SimulationConfig::default()
        };
        let mut sim = Simulation::new(SupplyChainGraph::eight_party(), config)?;
        let report = attack4_byzantine(&mut sim, PartyId(3), &path, strategy)?;
        println!(
            "{strategy:?} in a tracking run: {:?}, safety violations {}",
            report.observed.detection,
            report.safety_violations.len()
        );
    }

    let policy = DeliveryPolicy::AdversarialReorder { max_delay: 10 };
    for nodes in [4, 3] {
        let mut stalled = 0;
        let mut unsafe_runs = 0;
        for seed in 0..50 {
            let mut trial = SafetyTrial::new(nodes, ByzantineStrategy::Equivocate, policy, seed);
            trial.byzantine = PartyId(0);
            let outcome = trial.run()?;
            stalled += usize::from(!outcome.completed);
            unsafe_runs += usize::from(!outcome.violations.is_empty());
        }
        println!("N={nodes}, equivocating node 0, 50 seeds: {stalled} stalled, {unsafe_runs} with safety violations");
    }
    Ok(())
}
