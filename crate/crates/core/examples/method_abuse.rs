//! Attack 5: a party skips or garbles one of its tracking calls, and tries to
//! act on behalf of someone else.
//!
//! ```text
//! cargo run --example method_abuse
//! ```

use puftrack::adversary::{attack5_method_abuse, AdversaryConfig, AdversaryContext, Attack, MethodAbuseVariant};
use puftrack::crypto::PartyId;
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn sim() -> Result<Simulation, Box<dyn std::error::Error>> {
    Ok(Simulation::new(
        SupplyChainGraph::eight_party(),
        SimulationConfig {
            seed: 51,
            ..SimulationConfig::default()
        },
    )?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = [PartyId(1), PartyId(3), PartyId(5)];
    for variant in MethodAbuseVariant::ALL {
        let attack = Attack::MethodAbuse { variant };
        let adversary = match variant {
            MethodAbuseVariant::SkipRegisterItem | MethodAbuseVariant::WrongRegisterParams => PartyId(1),
            _ => PartyId(3),
        };
        let report = attack5_method_abuse(&mut sim()?, adversary, &path, variant)?;
        let evidence: Vec<String> = report
            .observed
            .ledger_evidence
            .iter()
            .map(ToString::to_string)
            .collect();
        println!(
            "{attack}: attributed to {:?}; {}",
            report.observed.attributed_to,
            evidence.join(" ")
        );
    }

    let mut sim = sim()?;
    let attack = Attack::MethodAbuse {
        variant: MethodAbuseVariant::SkipShipItem,
    };
    let mut ctx = AdversaryContext::take_control(&mut sim, AdversaryConfig::new(PartyId(3), attack))?;
    let report = ctx.impersonate(&mut sim, PartyId(0))?;
    println!("writing as p0 refused: {}", report.refused());
    Ok(())
}
