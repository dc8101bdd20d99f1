//! Scenario files.
//!
//! ```toml
//! name = "forge-in-transit"
//! seed = 7
//! seeds = 100
//! parties = 8
//! edges = [[0, 3], [1, 3], [2, 4], [3, 5], [3, 6], [4, 6], [4, 7]]
//! challenges = 10
//! required_matches = 9
//!
//! [puf]
//! width = 8
//! noise_rate = 0.002
//!
//! [ledger]
//! policy = { kind = "uniform-delay", min = 1, max = 10 }
//!
//! [[items]]
//! path = [0, 3, 6]
//!
//! [attack]
//! controlled_party = 3
//! path = [1, 3, 5]
//! attack = { kind = "forge-in-transit" }
//! ```
//!
//! Honest items travel first; the adversary takes control afterwards and
//! runs its attack on a fresh item along `attack.path`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{byzantine_ledger, run_attack, AdversaryConfig, AdversaryError, Attack, AttackReport};
use crate::contract::{Tag, TrackingKey, Verdict};
use crate::crypto::PartyId;
use crate::ledger::LedgerConfig;
use crate::puf::{PufParams, DEFAULT_CLONE_THRESHOLD, DEFAULT_READS};
use crate::supply_chain::{Delivery, EdgeOutcome, SimError, Simulation, SimulationConfig, SupplyChainGraph};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{file}: line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemPath {
    pub path: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub controlled_party: u32,
    pub path: Vec<u32>,
    pub attack: Attack,
    #[serde(default = "default_clone_threshold")]
    pub clone_threshold: usize,
    #[serde(default = "default_clone_threshold")]
    pub probe_budget: usize,
}

fn default_clone_threshold() -> usize {
    DEFAULT_CLONE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Repetitions when run as part of an attack matrix; run `i` uses seed
    /// `seed + i`.
    pub seeds: u64,
    pub parties: usize,
    pub edges: Vec<(u32, u32)>,
    pub challenges: usize,
    pub required_matches: usize,
    pub reads: u32,
    pub puf: PufParams,
    pub ledger: LedgerConfig,
    pub items: Vec<ItemPath>,
    pub attack: Option<AttackSection>,
}

impl Default for Scenario {
    fn default() -> Self {
        let graph = SupplyChainGraph::eight_party();
        Self {
            name: "unnamed".into(),
            seed: 0,
            seeds: 100,
            parties: graph.party_count(),
            edges: graph.edges().map(|(s, b)| (s.0, b.0)).collect(),
            challenges: 10,
            required_matches: 9,
            reads: DEFAULT_READS,
            puf: PufParams::default(),
            ledger: LedgerConfig::default(),
            items: Vec::new(),
            attack: None,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parties(path: &[u32]) -> Vec<PartyId> {
    path.iter().copied().map(PartyId).collect()
}

impl Scenario {
    /// Parses TOML. `file` only labels errors.
    pub fn parse(text: &str, file: &str) -> Result<Self, ScenarioError> {
        toml::from_str::<Scenario>(text).map_err(|e| ScenarioError::Parse {
            file: file.to_string(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            file: file.clone(),
            source,
        })?;
        Self::parse(&text, &file)
    }

    /// Every `*.toml` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, ScenarioError> {
        let io = |source| ScenarioError::Io {
            file: dir.display().to_string(),
            source,
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        files.iter().map(|p| Self::load(p)).collect()
    }

    pub fn graph(&self) -> SupplyChainGraph {
        SupplyChainGraph::new(self.parties, self.edges.iter().copied())
    }

    pub fn adversary(&self) -> Option<AdversaryConfig> {
        self.attack.as_ref().map(|a| AdversaryConfig {
            controlled_party: PartyId(a.controlled_party),
            attack: a.attack,
            clone_threshold: a.clone_threshold,
            probe_budget: a.probe_budget,
        })
    }

    /// Simulation settings for one run with `seed`.
    pub fn simulation_config(&self, seed: u64) -> SimulationConfig {
        let mut ledger = self.ledger.clone();
        if let Some(AttackSection {
            controlled_party,
            attack: Attack::ByzantineNode { strategy },
            ..
        }) = &self.attack
        {
            ledger = byzantine_ledger(ledger, PartyId(*controlled_party), *strategy);
        }
        SimulationConfig {
            seed,
            puf: self.puf,
            challenges: self.challenges,
            required_matches: self.required_matches,
            reads: self.reads,
            ledger,
        }
    }

    fn invalid(&self, reason: impl fmt::Display) -> ScenarioError {
        ScenarioError::Invalid {
            name: self.name.clone(),
            reason: reason.to_string(),
        }
    }

    /// Builds the simulation and checks what can be checked before running.
    pub fn build(&self, seed: u64) -> Result<Simulation, ScenarioError> {
        let sim = Simulation::new(self.graph(), self.simulation_config(seed))?;
        for item in &self.items {
            if item.path.is_empty() {
                return Err(self.invalid("empty item path"));
            }
        }
        if let Some(adversary) = self.adversary() {
            let path = parties(&self.attack.as_ref().map(|a| a.path.clone()).unwrap_or_default());
            adversary.validate(&sim, &path)?;
            if self
                .items
                .iter()
                .any(|i| i.path.contains(&adversary.controlled_party.0))
            {
                return Err(self.invalid("honest items must avoid the controlled party"));
            }
        }
        Ok(sim)
    }

    /// Rejects anything [`Scenario::build`] would reject.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build(self.seed).map(drop)
    }

    /// One full run with `seed`.
    pub fn run(&self, seed: u64) -> Result<ScenarioReport, ScenarioError> {
        let (sim, attack) = self.execute(seed)?;
        Ok(ScenarioReport::new(&self.name, seed, &sim, attack))
    }

    /// Like [`Scenario::run`] but hands back the simulation.
    pub fn execute(&self, seed: u64) -> Result<(Simulation, Option<AttackReport>), ScenarioError> {
        let mut sim = self.build(seed)?;
        for item in &self.items {
            let path = parties(&item.path);
            let mut instance = sim.new_item(path[0])?;
            sim.run_path(&mut instance, &path)?;
        }
        let attack = match (self.adversary(), &self.attack) {
            (Some(config), Some(section)) => Some(run_attack(&mut sim, config, &parties(&section.path))?),
            _ => None,
        };
        Ok((sim, attack))
    }
}

/// One verification on one edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeRow {
    pub item: String,
    pub supplier: PartyId,
    pub buyer: PartyId,
    /// `succeeded`, `failed`, `no_ship` or `no_crd`.
    pub result: &'static str,
    pub match_count: Option<usize>,
}

impl From<&EdgeOutcome> for EdgeRow {
    fn from(o: &EdgeOutcome) -> Self {
        let (result, match_count) = match &o.delivery {
            Delivery::Verified(r) => (
                match r.outcome {
                    Verdict::Succeeded => Tag::VerificationSucceeded.name(),
                    Verdict::Failed => Tag::VerificationFailed.name(),
                },
                Some(r.match_count),
            ),
            Delivery::Alert(a) => (a.key().tag.name(), None),
        };
        Self {
            item: o.item.to_string(),
            supplier: o.supplier,
            buyer: o.buyer,
            result,
            match_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    /// Verifications run by honest parties and by the adversary through the
    /// simulation, in order.
    pub verifications: Vec<EdgeRow>,
    /// Every alarm key on the ledger.
    pub alerts: Vec<String>,
    pub attack: Option<AttackReport>,
    pub expectations_met: bool,
}

impl ScenarioReport {
    pub fn new(name: &str, seed: u64, sim: &Simulation, attack: Option<AttackReport>) -> Self {
        let viewer = sim
            .graph()
            .parties()
            .find(|p| !sim.system().ledger().is_byzantine(*p) && attack.as_ref().map(|a| a.adversary) != Some(*p))
            .unwrap_or(PartyId(0));
        let alerts = sim
            .system()
            .keys(viewer)
            .into_iter()
            .filter(|k: &TrackingKey| k.tag.is_alarm())
            .map(|k| k.to_string())
            .collect();
        Self {
            scenario: name.to_string(),
            seed,
            verifications: sim.outcomes().iter().map(EdgeRow::from).collect(),
            alerts,
            expectations_met: attack.as_ref().is_none_or(|a| a.met()),
            attack,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ATTACK1: &str = r#"
name = "a1"
seed = 3
[attack]
controlled_party = 3
path = [1, 3, 5]
attack = { kind = "forge-in-transit" }
"#;

    #[test]
    fn defaults_to_eight_party() {
        let s = Scenario::parse("name = \"x\"", "x.toml").unwrap();
        assert_eq!(s.graph(), SupplyChainGraph::eight_party());
        assert_eq!((s.challenges, s.required_matches, s.seeds), (10, 9, 100));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "name = \"x\"\nseed = 1\nchallenges = \"ten\"\n";
        match Scenario::parse(text, "bad.toml") {
            Err(ScenarioError::Parse { line, file, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(file, "bad.toml");
            }
            other => panic!("{other:?}"),
        }
        let text = "name = \"x\"\n\n[attack]\ncontrolled_party = 3\npath = [1]\nattack = { kind = \"teleport\" }\n";
        match Scenario::parse(text, "bad.toml") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Scenario::parse("nmae = 1", "t"),
            Err(ScenarioError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = Scenario::parse(ATTACK1, "a1").unwrap();
        s.attack.as_mut().unwrap().controlled_party = 5;
        assert!(matches!(s.validate(), Err(ScenarioError::Adversary(_))));
        let mut s = Scenario::parse(ATTACK1, "a1").unwrap();
        s.items.push(ItemPath { path: vec![1, 3, 6] });
        assert!(matches!(s.validate(), Err(ScenarioError::Invalid { .. })));
        let mut s = Scenario::parse(ATTACK1, "a1").unwrap();
        s.required_matches = 11;
        assert!(s.validate().is_err());
    }

    #[test]
    fn report_is_reproducible() {
        let mut s = Scenario::parse(ATTACK1, "a1").unwrap();
        s.items.push(ItemPath { path: vec![0, 3, 6] });
        s.attack.as_mut().unwrap().controlled_party = 4;
        s.attack.as_mut().unwrap().path = vec![2, 4, 7];
        let a = s.run(9).unwrap();
        let b = s.run(9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.expectations_met);
        assert_eq!(a.alerts.len(), 1);
        assert_eq!(a.verifications.len(), 4);
    }
}
