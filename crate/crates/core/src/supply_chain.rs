//! Supply-chain graph and item lifecycle.
//!
//! Parties form a DAG of supplier-buyer edges. A party's stage is 0 when it
//! has no suppliers and one more than its deepest supplier otherwise; every
//! accepted graph has edges spanning exactly one stage.
//!
//! `Simulation` plays the honest parties: it manufactures and enrols items,
//! ships them along edges and verifies them on delivery, with every contract
//! call going through the replicated ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{
    Alert, Challenges, ContractConfig, ContractError, ItemId, TrackingKey, TrackingSystem, Verdict, VerificationRecord,
};
use crate::crypto::{generate_parties, KeyPair, PartyId, Pki};
use crate::ledger::LedgerConfig;
use crate::puf::{enroll, PufDevice, PufError, PufParams, DEFAULT_READS};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    UnknownParty(PartyId),
    SelfEdge(PartyId),
    Cycle(Vec<PartyId>),
    StageSpan {
        supplier: PartyId,
        buyer: PartyId,
        supplier_stage: usize,
        buyer_stage: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownParty(p) => write!(f, "edge names unknown party {p}"),
            Violation::SelfEdge(p) => write!(f, "self edge at {p}"),
            Violation::Cycle(c) => {
                let names: Vec<String> = c.iter().map(|p| p.to_string()).collect();
                write!(f, "cycle {}", names.join(" -> "))
            }
            Violation::StageSpan {
                supplier,
                buyer,
                supplier_stage,
                buyer_stage,
            } => write!(
                f,
                "edge ({supplier}, {buyer}) goes from stage {supplier_stage} to stage {buyer_stage}"
            ),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown party {0}")]
    UnknownParty(PartyId),
    #[error("cycle through {0:?}")]
    CycleDetected(Vec<PartyId>),
    #[error("invalid supply chain: {0}")]
    Violation(Violation),
}

/// Parties `0..N` and their supplier-buyer relationships.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplyChainGraph {
    parties: usize,
    edges: BTreeSet<(PartyId, PartyId)>,
}

impl SupplyChainGraph {
    pub fn new(parties: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        Self {
            parties,
            edges: edges.into_iter().map(|(s, b)| (PartyId(s), PartyId(b))).collect(),
        }
    }

    /// Eight parties over three stages: producers p0..p2, intermediaries
    /// p3 and p4, retailers p5..p7.
    pub fn eight_party() -> Self {
        Self::new(8, [(0, 3), (1, 3), (2, 4), (3, 5), (3, 6), (4, 6), (4, 7)])
    }

    /// `p0 -> p1 -> ... -> p(len-1)`, plus `extra` parties without edges.
    pub fn line(len: usize, extra: usize) -> Self {
        Self::new(len + extra, (1..len as u32).map(|b| (b - 1, b)))
    }

    pub fn party_count(&self) -> usize {
        self.parties
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.parties as u32).map(PartyId)
    }

    pub fn edges(&self) -> impl Iterator<Item = (PartyId, PartyId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, supplier: PartyId, buyer: PartyId) -> bool {
        self.edges.contains(&(supplier, buyer))
    }

    pub fn suppliers(&self, p: PartyId) -> impl Iterator<Item = PartyId> + '_ {
        self.edges.iter().filter(move |(_, b)| *b == p).map(|(s, _)| *s)
    }

    pub fn buyers(&self, p: PartyId) -> impl Iterator<Item = PartyId> + '_ {
        self.edges.iter().filter(move |(s, _)| *s == p).map(|(_, b)| *b)
    }

    fn contains(&self, p: PartyId) -> bool {
        p.index() < self.parties
    }

    /// Stage of `p`: 0 without suppliers, else one more than the deepest
    /// supplier.
    pub fn stage(&self, p: PartyId) -> Result<usize, GraphError> {
        if !self.contains(p) {
            return Err(GraphError::UnknownParty(p));
        }
        let mut memo = BTreeMap::new();
        self.stage_from(p, &mut memo, &mut Vec::new())
    }

    fn stage_from(
        &self,
        p: PartyId,
        memo: &mut BTreeMap<PartyId, usize>,
        path: &mut Vec<PartyId>,
    ) -> Result<usize, GraphError> {
        if let Some(&s) = memo.get(&p) {
            return Ok(s);
        }
        if let Some(at) = path.iter().position(|q| *q == p) {
            let mut cycle = path[at..].to_vec();
            cycle.push(p);
            return Err(GraphError::CycleDetected(cycle));
        }
        path.push(p);
        let mut stage = 0;
        let suppliers: Vec<PartyId> = self.suppliers(p).collect();
        for q in suppliers {
            stage = stage.max(self.stage_from(q, memo, path)? + 1);
        }
        path.pop();
        memo.insert(p, stage);
        Ok(stage)
    }

    /// Stages of all parties, indexed by party.
    pub fn stages(&self) -> Result<Vec<usize>, GraphError> {
        let mut memo = BTreeMap::new();
        self.parties()
            .map(|p| self.stage_from(p, &mut memo, &mut Vec::new()))
            .collect()
    }

    pub fn stage_count(&self) -> Result<usize, GraphError> {
        Ok(self.stages()?.into_iter().max().map_or(0, |s| s + 1))
    }

    /// Accepts the graph iff it is acyclic, edges name known parties and
    /// every edge spans exactly one stage.
    pub fn validate(&self) -> Result<(), GraphError> {
        for &(s, b) in &self.edges {
            for p in [s, b] {
                if !self.contains(p) {
                    return Err(GraphError::Violation(Violation::UnknownParty(p)));
                }
            }
            if s == b {
                return Err(GraphError::Violation(Violation::SelfEdge(s)));
            }
        }
        let stages = self.stages().map_err(|e| match e {
            GraphError::CycleDetected(c) => GraphError::Violation(Violation::Cycle(c)),
            other => other,
        })?;
        for &(s, b) in &self.edges {
            let (ss, bs) = (stages[s.index()], stages[b.index()]);
            if bs != ss + 1 {
                return Err(GraphError::Violation(Violation::StageSpan {
                    supplier: s,
                    buyer: b,
                    supplier_stage: ss,
                    buyer_stage: bs,
                }));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holder {
    At(PartyId),
    InTransit { from: PartyId, to: PartyId },
}

/// A physical item with its PUF.
#[derive(Debug, Clone)]
pub struct ItemInstance {
    pub item: ItemId,
    pub device: PufDevice,
    pub holder: Holder,
    /// `(stage, party)` for every party that has held the item.
    pub stage_history: Vec<(usize, PartyId)>,
    pub registered: bool,
}

/// What a buyer learns on delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Verified(VerificationRecord),
    Alert(Alert),
}

impl Delivery {
    pub fn record(&self) -> Option<&VerificationRecord> {
        match self {
            Delivery::Verified(r) => Some(r),
            Delivery::Alert(_) => None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.record().is_some_and(|r| r.outcome == Verdict::Succeeded)
    }

    /// The ledger key this delivery produced.
    pub fn key(&self) -> TrackingKey {
        match self {
            Delivery::Verified(r) => r.key(),
            Delivery::Alert(a) => a.key(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{party} is at stage {stage}; only stage-0 parties produce items")]
    NotProducer { party: PartyId, stage: usize },
    #[error("({0}, {1}) is not a supplier-buyer relationship")]
    EdgeAbsent(PartyId, PartyId),
    #[error("{item} is not held by {party}")]
    NotHolder { item: ItemId, party: PartyId },
    #[error("{item} is not in transit to {party}")]
    NotInTransit { item: ItemId, party: PartyId },
    #[error("{0} is played by the adversary")]
    Controlled(PartyId),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Puf(#[from] PufError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub puf: PufParams,
    pub challenges: usize,
    pub required_matches: usize,
    /// Repeated reads per challenge when a buyer measures an item.
    pub reads: u32,
    pub ledger: LedgerConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            puf: PufParams::default(),
            challenges: 10,
            required_matches: 9,
            reads: DEFAULT_READS,
            ledger: LedgerConfig::default(),
        }
    }
}

/// Per-edge result of a delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeOutcome {
    pub item: ItemId,
    pub supplier: PartyId,
    pub buyer: PartyId,
    pub delivery: Delivery,
}

pub struct Simulation {
    graph: SupplyChainGraph,
    stages: Vec<usize>,
    config: SimulationConfig,
    keys: Vec<Option<KeyPair>>,
    system: TrackingSystem,
    counters: Vec<u64>,
    devices_made: u64,
    enrolments: u64,
    outcomes: Vec<EdgeOutcome>,
}

impl fmt::Debug for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulation")
            .field("graph", &self.graph)
            .field("system", &self.system)
            .finish()
    }
}

impl Simulation {
    pub fn new(graph: SupplyChainGraph, config: SimulationConfig) -> Result<Self, SimError> {
        graph.validate()?;
        config.puf.validate()?;
        let n = graph.party_count();
        let contract = ContractConfig::new(config.challenges, config.required_matches, n)?;
        let keys = generate_parties(n, derive_seed(config.seed, "keys", 0));
        let mut ledger = config.ledger.clone();
        ledger.nodes = n;
        ledger.seed = derive_seed(config.seed, "ledger", 0);
        let system = TrackingSystem::new(contract, ledger, &keys)?;
        Ok(Self {
            stages: graph.stages()?,
            graph,
            config,
            keys: keys.into_iter().map(Some).collect(),
            system,
            counters: vec![0; n],
            devices_made: 0,
            enrolments: 0,
            outcomes: Vec::new(),
        })
    }

    pub fn graph(&self) -> &SupplyChainGraph {
        &self.graph
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn system(&self) -> &TrackingSystem {
        &self.system
    }

    pub fn system_mut(&mut self) -> &mut TrackingSystem {
        &mut self.system
    }

    pub fn pki(&self) -> &Pki {
        self.system.ledger().pki()
    }

    pub fn stage_of(&self, p: PartyId) -> usize {
        self.stages[p.index()]
    }

    pub fn outcomes(&self) -> &[EdgeOutcome] {
        &self.outcomes
    }

    /// Hands `party`'s key pair over to whoever will play it; the simulation
    /// stops acting for that party.
    pub fn surrender(&mut self, party: PartyId) -> Option<KeyPair> {
        self.keys.get_mut(party.index())?.take()
    }

    fn honest_key(&self, party: PartyId) -> Result<KeyPair, SimError> {
        self.keys
            .get(party.index())
            .ok_or(SimError::Graph(GraphError::UnknownParty(party)))?
            .clone()
            .ok_or(SimError::Controlled(party))
    }

    /// A new item with a fresh PUF, not yet enrolled.
    pub fn manufacture(&mut self, producer: PartyId) -> Result<ItemInstance, SimError> {
        if producer.index() >= self.graph.party_count() {
            return Err(GraphError::UnknownParty(producer).into());
        }
        let stage = self.stage_of(producer);
        if stage != 0 {
            return Err(SimError::NotProducer { party: producer, stage });
        }
        let counter = &mut self.counters[producer.index()];
        let item = ItemId::new(producer, *counter);
        *counter += 1;
        let index = self.devices_made;
        self.devices_made += 1;
        let device = PufDevice::new(
            derive_seed(self.config.seed, "device", index),
            self.config.puf,
            stream(self.config.seed, "device-noise", index),
        );
        Ok(ItemInstance {
            item,
            device,
            holder: Holder::At(producer),
            stage_history: vec![(0, producer)],
            registered: false,
        })
    }

    /// Enrols the item's PUF and registers its CRD, signed by `actor`.
    pub fn register_as(&mut self, actor: &KeyPair, instance: &mut ItemInstance) -> Result<(), SimError> {
        let pki = self.pki().clone();
        let n = self.graph.party_count();
        let mut rng = stream(self.config.seed, "enroll", self.enrolments);
        self.enrolments += 1;
        let crd = enroll(
            &mut instance.device,
            instance.item,
            n,
            self.config.challenges,
            &pki,
            &mut rng,
        )?;
        self.system.register_item(actor, crd)?;
        instance.registered = true;
        Ok(())
    }

    pub fn register(&mut self, instance: &mut ItemInstance) -> Result<(), SimError> {
        let key = self.honest_key(instance.item.producer)?;
        self.register_as(&key, instance)
    }

    pub fn new_item(&mut self, producer: PartyId) -> Result<ItemInstance, SimError> {
        let mut instance = self.manufacture(producer)?;
        self.register(&mut instance)?;
        Ok(instance)
    }

    /// Physical transfer only; nothing is recorded.
    pub fn hand_over(
        &mut self,
        supplier: PartyId,
        buyer: PartyId,
        instance: &mut ItemInstance,
    ) -> Result<(), SimError> {
        if !self.graph.has_edge(supplier, buyer) {
            return Err(SimError::EdgeAbsent(supplier, buyer));
        }
        if instance.holder != Holder::At(supplier) {
            return Err(SimError::NotHolder {
                item: instance.item,
                party: supplier,
            });
        }
        instance.holder = Holder::InTransit {
            from: supplier,
            to: buyer,
        };
        Ok(())
    }

    /// Records the shipment of `recorded` to `buyer` as `actor`, then hands
    /// the physical item over.
    pub fn ship_as(
        &mut self,
        actor: &KeyPair,
        buyer: PartyId,
        recorded: ItemId,
        instance: &mut ItemInstance,
    ) -> Result<(), SimError> {
        let supplier = actor.owner();
        if !self.graph.has_edge(supplier, buyer) {
            return Err(SimError::EdgeAbsent(supplier, buyer));
        }
        if instance.holder != Holder::At(supplier) {
            return Err(SimError::NotHolder {
                item: instance.item,
                party: supplier,
            });
        }
        self.system.ship_item(actor, buyer, recorded)?;
        self.hand_over(supplier, buyer, instance)
    }

    pub fn ship(&mut self, supplier: PartyId, buyer: PartyId, instance: &mut ItemInstance) -> Result<(), SimError> {
        let key = self.honest_key(supplier)?;
        let item = instance.item;
        self.ship_as(&key, buyer, item, instance)
    }

    fn receive(&mut self, buyer: PartyId, instance: &mut ItemInstance) -> Result<PartyId, SimError> {
        match instance.holder {
            Holder::InTransit { from, to } if to == buyer => {
                instance.holder = Holder::At(buyer);
                instance.stage_history.push((self.stage_of(buyer), buyer));
                Ok(from)
            }
            _ => Err(SimError::NotInTransit {
                item: instance.item,
                party: buyer,
            }),
        }
    }

    /// Takes the item into custody without any verification.
    pub fn take_delivery(&mut self, buyer: PartyId, instance: &mut ItemInstance) -> Result<PartyId, SimError> {
        self.receive(buyer, instance)
    }

    /// Runs the verification of `item` received from `supplier` as `actor`,
    /// measuring `instance`'s PUF.
    pub fn verify_as(
        &mut self,
        actor: &KeyPair,
        supplier: PartyId,
        item: ItemId,
        instance: &mut ItemInstance,
    ) -> Result<Delivery, SimError> {
        let delivery = match self.system.get_challenges(actor, supplier, item)? {
            Challenges::Alert(alert) => Delivery::Alert(alert),
            Challenges::Ready(crv) => {
                let measured = instance.device.respond(&crv, self.config.reads)?;
                Delivery::Verified(self.system.verify_item(actor, supplier, item, &crv, &measured)?)
            }
        };
        self.outcomes.push(EdgeOutcome {
            item,
            supplier,
            buyer: actor.owner(),
            delivery: delivery.clone(),
        });
        Ok(delivery)
    }

    /// Buyer-side intake: takes custody and verifies the item against the
    /// supplier it came from.
    pub fn deliver(&mut self, buyer: PartyId, instance: &mut ItemInstance) -> Result<Delivery, SimError> {
        let key = self.honest_key(buyer)?;
        let supplier = self.receive(buyer, instance)?;
        let item = instance.item;
        self.verify_as(&key, supplier, item, instance)
    }

    /// Ships and delivers `instance` along `path`, starting at its current
    /// holder.
    pub fn run_path(&mut self, instance: &mut ItemInstance, path: &[PartyId]) -> Result<Vec<Delivery>, SimError> {
        let mut out = Vec::new();
        for pair in path.windows(2) {
            self.ship(pair[0], pair[1], instance)?;
            out.push(self.deliver(pair[1], instance)?);
        }
        Ok(out)
    }
}
