//! The three-organisation prototype: manufacturer p0, logistic p1 and
//! distribution p2 in a line, plus an auditor p3 that only runs a ledger
//! node so that the ledger can tolerate one faulty node.

use serde::{Deserialize, Serialize};

use super::{Check, ExperimentError};
use crate::adversary::{AdversaryConfig, AdversaryContext, Attack};
use crate::contract::Tag;
use crate::crypto::PartyId;
use crate::ledger::LedgerConfig;
use crate::puf::{PufDevice, PufParams};
use crate::rng::{derive_seed, stream};
use crate::scenario::ScenarioReport;
use crate::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

pub const MANUFACTURER: PartyId = PartyId(0);
pub const LOGISTIC: PartyId = PartyId(1);
pub const DISTRIBUTION: PartyId = PartyId(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub seed: u64,
    pub honest_items: usize,
    pub substituted_items: usize,
    pub puf: PufParams,
    pub challenges: usize,
    pub required_matches: usize,
    pub ledger: LedgerConfig,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            honest_items: 8,
            substituted_items: 3,
            puf: PufParams {
                width: 4,
                noise_rate: 0.002,
            },
            challenges: 10,
            required_matches: 9,
            ledger: LedgerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrototypeReport {
    pub seed: u64,
    pub honest: ScenarioReport,
    pub adversary: ScenarioReport,
    pub checks: Vec<Check>,
}

impl PrototypeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }
}

fn graph() -> SupplyChainGraph {
    SupplyChainGraph::line(3, 1)
}

impl PrototypeConfig {
    fn simulation(&self, seed: u64) -> Result<Simulation, ExperimentError> {
        let config = SimulationConfig {
            seed,
            puf: self.puf,
            challenges: self.challenges,
            required_matches: self.required_matches,
            ledger: self.ledger.clone(),
            ..SimulationConfig::default()
        };
        Simulation::new(graph(), config).map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

fn run_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Run(e.to_string())
}

/// Honest case: every item goes manufacturer → logistic → distribution.
/// Adversary case: logistic checks each item, then swaps its PUF for a
/// different device before shipping it on.
pub fn run_prototype(config: &PrototypeConfig) -> Result<PrototypeReport, ExperimentError> {
    let path = [MANUFACTURER, LOGISTIC, DISTRIBUTION];

    let seed = derive_seed(config.seed, "prototype-honest", 0);
    let mut sim = config.simulation(seed)?;
    for _ in 0..config.honest_items {
        let mut item = sim.new_item(MANUFACTURER).map_err(run_err)?;
        sim.run_path(&mut item, &path).map_err(run_err)?;
    }
    let honest_ok = sim.outcomes().iter().filter(|o| o.delivery.succeeded()).count();
    let honest = ScenarioReport::new("prototype/honest", seed, &sim, None);

    let seed = derive_seed(config.seed, "prototype-adversary", 0);
    let mut sim = config.simulation(seed)?;
    let adversary = AdversaryConfig::new(LOGISTIC, Attack::ForgeInTransit { clone: false });
    let mut ctx = AdversaryContext::take_control(&mut sim, adversary).map_err(run_err)?;
    let mut intake_ok = 0;
    for k in 0..config.substituted_items {
        let mut item = sim.new_item(MANUFACTURER).map_err(run_err)?;
        sim.ship(MANUFACTURER, LOGISTIC, &mut item).map_err(run_err)?;
        if ctx.receive(&mut sim, &mut item).map_err(run_err)?.succeeded() {
            intake_ok += 1;
        }
        let other = PufDevice::new(
            derive_seed(seed, "prototype-substitute", k as u64),
            config.puf,
            stream(seed, "prototype-substitute-noise", k as u64),
        );
        ctx.ship_substitute(&mut sim, DISTRIBUTION, &mut item, other)
            .map_err(run_err)?;
        sim.deliver(DISTRIBUTION, &mut item).map_err(run_err)?;
    }
    let blamed = sim
        .system()
        .keys(DISTRIBUTION)
        .iter()
        .filter(|k| k.tag == Tag::VerificationFailed && k.accused() == Some(LOGISTIC))
        .count();
    let adversary = ScenarioReport::new("prototype/adversary", seed, &sim, None);

    let checks = vec![
        Check::count("honest: verifications succeeded", 2 * config.honest_items, honest_ok),
        Check::count(
            "adversary: logistic intake succeeded",
            config.substituted_items,
            intake_ok,
        ),
        Check::count(
            "adversary: failed at distribution, attributed to logistic",
            config.substituted_items,
            blamed,
        ),
    ];
    Ok(PrototypeReport {
        seed: config.seed,
        honest,
        adversary,
        checks,
    })
}
