//! The single adversary and its five attacks.
//!
//! An attack is a scripted deviation inside an otherwise honest item journey.
//! The adversary plays exactly one party: it receives that party's key pair
//! from the simulation through [`Simulation::surrender`] and from then on the
//! simulation refuses to act for that party. Every signed action the
//! adversary takes goes through the `*_as` entry points with its own key.
//!
//! Each run yields two [`ExpectedOutcome`]s: one predicted from the tracking
//! rules alone ([`expected_outcome`]) and one read back from the ledger after
//! the run. A run meets its expectation when both agree exactly and the
//! honest replicas pass the safety audit.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::contract::{Challenges, ContractError, ItemId, Tag, TrackingKey};
use crate::crypto::{generate_parties, KeyPair, PartyId};
use crate::ledger::safety::{self, SafetyViolation};
use crate::ledger::{
    fault_tolerance, AcceptAll, ByzantineStrategy, DeliveryPolicy, Ledger, LedgerConfig, LedgerError, NodeId,
    Transaction,
};
use crate::puf::{build_clone, collect_pairs, ChallengeResponseVector, PufDevice, PufError, DEFAULT_CLONE_THRESHOLD};
use crate::rng::{stream, SimRng};
use crate::supply_chain::{Delivery, ItemInstance, SimError, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodAbuseVariant {
    SkipRegisterItem,
    SkipShipItem,
    /// Registers the CRD under a different item id.
    WrongRegisterParams,
    /// Records the shipment towards a different buyer than the one that
    /// physically receives the item, or under a wrong item id when there is
    /// no other buyer.
    WrongShipParams,
    /// Reports altered measurements to `verifyItem`.
    WrongVerifyParams,
}

impl MethodAbuseVariant {
    pub const ALL: [MethodAbuseVariant; 5] = [
        MethodAbuseVariant::SkipRegisterItem,
        MethodAbuseVariant::SkipShipItem,
        MethodAbuseVariant::WrongRegisterParams,
        MethodAbuseVariant::WrongShipParams,
        MethodAbuseVariant::WrongVerifyParams,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Attack {
    /// Attack 1. With `clone` set the adversary ships a replay clone built
    /// from the pairs it observed instead of a tampered device.
    ForgeInTransit {
        #[serde(default)]
        clone: bool,
    },
    /// Attack 2. `after_register` moves the tampering after enrolment.
    ForgePreCrd {
        #[serde(default)]
        after_register: bool,
    },
    /// Attack 3.
    BlameSupplier,
    /// Attack 4.
    ByzantineNode { strategy: ByzantineStrategy },
    /// Attack 5.
    MethodAbuse { variant: MethodAbuseVariant },
}

impl Attack {
    pub fn number(&self) -> u8 {
        match self {
            Attack::ForgeInTransit { .. } => 1,
            Attack::ForgePreCrd { .. } => 2,
            Attack::BlameSupplier => 3,
            Attack::ByzantineNode { .. } => 4,
            Attack::MethodAbuse { .. } => 5,
        }
    }

    /// Whether the expectation is a firm claim. The wrong-parameter register
    /// and ship variants are only observed.
    pub fn asserted(&self) -> bool {
        !matches!(
            self,
            Attack::MethodAbuse {
                variant: MethodAbuseVariant::WrongRegisterParams | MethodAbuseVariant::WrongShipParams
            }
        )
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attack::ForgeInTransit { clone: false } => write!(f, "forge-in-transit"),
            Attack::ForgeInTransit { clone: true } => write!(f, "forge-in-transit/clone"),
            Attack::ForgePreCrd { after_register: false } => write!(f, "forge-pre-crd"),
            Attack::ForgePreCrd { after_register: true } => write!(f, "forge-pre-crd/after-register"),
            Attack::BlameSupplier => write!(f, "blame-supplier"),
            Attack::ByzantineNode { strategy } => write!(f, "byzantine-node/{strategy:?}"),
            Attack::MethodAbuse { variant } => write!(f, "method-abuse/{variant:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub controlled_party: PartyId,
    pub attack: Attack,
    /// Observed pairs needed before a replay clone can be built.
    pub clone_threshold: usize,
    /// Pairs the adversary can harvest from a device while holding it.
    pub probe_budget: usize,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            controlled_party: PartyId(0),
            attack: Attack::BlameSupplier,
            clone_threshold: DEFAULT_CLONE_THRESHOLD,
            probe_budget: DEFAULT_CLONE_THRESHOLD,
        }
    }
}

impl AdversaryConfig {
    pub fn new(controlled_party: PartyId, attack: Attack) -> Self {
        Self {
            controlled_party,
            attack,
            ..Self::default()
        }
    }

    /// Checks that the attack can be staged by the controlled party on
    /// `path`.
    pub fn validate(&self, sim: &Simulation, path: &[PartyId]) -> Result<(), AdversaryError> {
        let a = self.controlled_party;
        let fail = |why: &str| Err(AdversaryError::Precondition(format!("{}: {why}", self.attack)));
        if a.index() >= sim.graph().party_count() {
            return fail("controlled party is not in the supply chain");
        }
        if path.len() < 2 {
            return fail("path needs at least one edge");
        }
        if sim.stage_of(path[0]) != 0 {
            return fail("path must start at a producer");
        }
        let position = path.iter().position(|p| *p == a);
        let stage = sim.stage_of(a);
        match self.attack {
            Attack::ForgeInTransit { .. }
            | Attack::MethodAbuse {
                variant: MethodAbuseVariant::SkipShipItem | MethodAbuseVariant::WrongShipParams,
            } => match position {
                Some(k) if k >= 1 && k + 1 < path.len() => Ok(()),
                _ => fail("adversary must receive and forward the item"),
            },
            Attack::BlameSupplier
            | Attack::MethodAbuse {
                variant: MethodAbuseVariant::WrongVerifyParams,
            } => match position {
                Some(k) if k >= 1 && stage >= 1 => Ok(()),
                _ => fail("adversary must receive the item"),
            },
            Attack::ForgePreCrd { .. }
            | Attack::MethodAbuse {
                variant: MethodAbuseVariant::SkipRegisterItem | MethodAbuseVariant::WrongRegisterParams,
            } => {
                if stage == 0 && position == Some(0) {
                    Ok(())
                } else {
                    fail("adversary must be the stage-0 producer of the item")
                }
            }
            Attack::ByzantineNode { .. } => {
                if sim.graph().party_count() >= 4 {
                    Ok(())
                } else {
                    fail("a tracking system needs at least 4 nodes")
                }
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("precondition failed for {0}")]
    Precondition(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    Detected,
    Undetected,
}

fn display_all<T: fmt::Display, S: Serializer>(items: &[T], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(items.iter().map(|k| k.to_string()))
}

/// What the ledger shows about an item after an attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpectedOutcome {
    pub detection: Detection,
    pub attributed_to: Option<PartyId>,
    /// Every committed key about the item, sorted.
    #[serde(serialize_with = "display_all")]
    pub ledger_evidence: Vec<TrackingKey>,
}

impl ExpectedOutcome {
    /// Reads detection and attribution off the evidence: the first alarm key
    /// names the accused supplier.
    pub fn from_evidence(mut evidence: Vec<TrackingKey>) -> Self {
        evidence.sort();
        evidence.dedup();
        let alarm = evidence.iter().find(|k| k.tag.is_alarm());
        Self {
            detection: if alarm.is_some() {
                Detection::Detected
            } else {
                Detection::Undetected
            },
            attributed_to: alarm.and_then(|k| k.accused()),
            ledger_evidence: evidence,
        }
    }
}

/// The outcome the tracking rules predict for `attack` by `adversary` on an
/// item travelling along `path`.
pub fn expected_outcome(attack: Attack, adversary: PartyId, path: &[PartyId], item: ItemId) -> ExpectedOutcome {
    use MethodAbuseVariant::*;
    let a = adversary;
    let abuse = |v: MethodAbuseVariant| attack == Attack::MethodAbuse { variant: v };
    let on = |tag, s, b| TrackingKey::on_edge(tag, s, b, item);
    let mut evidence = Vec::new();

    let producer_deviates = path[0] == a;
    let crd_missing = producer_deviates && (abuse(SkipRegisterItem) || abuse(WrongRegisterParams));
    if !crd_missing {
        evidence.push(TrackingKey::crd(item));
    }
    let mut forged = producer_deviates && attack == Attack::ForgePreCrd { after_register: true };

    for pair in path.windows(2) {
        let (s, b) = (pair[0], pair[1]);
        let unshipped = s == a && (abuse(SkipShipItem) || abuse(WrongShipParams));
        if unshipped {
            evidence.push(on(Tag::NoShip, s, b));
            break;
        }
        evidence.push(on(Tag::Shipped, s, b));
        if s == a && matches!(attack, Attack::ForgeInTransit { .. }) {
            forged = true;
        }
        if crd_missing {
            evidence.push(on(Tag::NoCrd, s, b));
            break;
        }
        evidence.push(on(Tag::DeclareVerification, s, b));
        let lies = b == a && (attack == Attack::BlameSupplier || abuse(WrongVerifyParams));
        if forged || lies {
            evidence.push(on(Tag::VerificationFailed, s, b));
            break;
        }
        evidence.push(on(Tag::VerificationSucceeded, s, b));
    }
    ExpectedOutcome::from_evidence(evidence)
}

/// The adversary's capabilities: its own key pair and its own randomness.
pub struct AdversaryContext {
    config: AdversaryConfig,
    keys: KeyPair,
    rng: SimRng,
    notes: Vec<String>,
}

impl fmt::Debug for AdversaryContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdversaryContext")
            .field("party", &self.keys.owner())
            .field("attack", &self.config.attack)
            .finish()
    }
}

impl AdversaryContext {
    /// Takes control of `config.controlled_party` in `sim`.
    pub fn take_control(sim: &mut Simulation, config: AdversaryConfig) -> Result<Self, AdversaryError> {
        let party = config.controlled_party;
        let keys = sim
            .surrender(party)
            .ok_or_else(|| AdversaryError::Precondition(format!("{party} is unknown or already controlled")))?;
        let rng = stream(sim.config().seed, "adversary", u64::from(party.0));
        Ok(Self {
            config,
            keys,
            rng,
            notes: Vec::new(),
        })
    }

    pub fn party(&self) -> PartyId {
        self.keys.owner()
    }

    pub fn config(&self) -> &AdversaryConfig {
        &self.config
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    fn attack(&self) -> Attack {
        self.config.attack
    }

    fn is(&self, variant: MethodAbuseVariant) -> bool {
        self.attack() == Attack::MethodAbuse { variant }
    }

    fn tamper(&mut self, instance: &mut ItemInstance) {
        instance.device = instance.device.tamper(&mut self.rng);
    }

    /// Production step at stage 0.
    fn produce(&mut self, sim: &mut Simulation, instance: &mut ItemInstance) -> Result<(), AdversaryError> {
        match self.attack() {
            Attack::ForgePreCrd { after_register: false } => {
                self.tamper(instance);
                sim.register_as(&self.keys, instance)?;
            }
            Attack::ForgePreCrd { after_register: true } => {
                sim.register_as(&self.keys, instance)?;
                self.tamper(instance);
            }
            _ if self.is(MethodAbuseVariant::SkipRegisterItem) => {}
            _ if self.is(MethodAbuseVariant::WrongRegisterParams) => {
                let real = instance.item;
                instance.item = ItemId::new(real.producer, u64::MAX - real.counter);
                let result = sim.register_as(&self.keys, instance);
                instance.item = real;
                instance.registered = false;
                result?;
            }
            _ => sim.register_as(&self.keys, instance)?,
        }
        Ok(())
    }

    /// Forwarding step towards `buyer`.
    fn dispatch(
        &mut self,
        sim: &mut Simulation,
        buyer: PartyId,
        instance: &mut ItemInstance,
        observed: Option<&ChallengeResponseVector>,
    ) -> Result<(), AdversaryError> {
        let me = self.party();
        let item = instance.item;
        match self.attack() {
            Attack::ForgeInTransit { clone } => {
                if clone {
                    self.substitute_clone(sim, instance, observed)?;
                } else {
                    self.tamper(instance);
                }
                sim.ship_as(&self.keys, buyer, item, instance)?;
            }
            _ if self.is(MethodAbuseVariant::SkipShipItem) => sim.hand_over(me, buyer, instance)?,
            _ if self.is(MethodAbuseVariant::WrongShipParams) => {
                let other = sim.graph().buyers(me).find(|b| *b != buyer);
                match other {
                    Some(other) => sim.system_mut().ship_item(&self.keys, other, item)?,
                    None => {
                        let wrong = ItemId::new(item.producer, u64::MAX - item.counter);
                        sim.system_mut().ship_item(&self.keys, buyer, wrong)?
                    }
                }
                sim.hand_over(me, buyer, instance)?;
            }
            _ => sim.ship_as(&self.keys, buyer, item, instance)?,
        }
        Ok(())
    }

    /// Harvests pairs from the device and swaps in a replay clone. Falls back
    /// to plain tampering when too few pairs were observed.
    fn substitute_clone(
        &mut self,
        sim: &Simulation,
        instance: &mut ItemInstance,
        observed: Option<&ChallengeResponseVector>,
    ) -> Result<(), AdversaryError> {
        let mut pairs = observed.map(|crv| crv.pairs.clone()).unwrap_or_default();
        pairs.extend(collect_pairs(
            &mut instance.device,
            self.config.probe_budget,
            sim.config().reads,
            &mut self.rng,
        )?);
        match build_clone(
            &pairs,
            self.config.clone_threshold,
            instance.device.params(),
            &mut self.rng,
        ) {
            Ok(clone) => instance.device = clone,
            Err(PufError::CloneDenied { observed, threshold }) => {
                self.notes.push(format!(
                    "clone denied ({observed} < {threshold} pairs); tampered instead"
                ));
                self.tamper(instance);
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    /// Intake step: takes custody and runs (or subverts) verification.
    fn intake(&mut self, sim: &mut Simulation, instance: &mut ItemInstance) -> Result<Delivery, AdversaryError> {
        let supplier = sim.take_delivery(self.party(), instance)?;
        let item = instance.item;
        if self.attack() == Attack::BlameSupplier {
            self.tamper(instance);
        }
        if self.is(MethodAbuseVariant::WrongVerifyParams) {
            return self.misreport(sim, supplier, instance);
        }
        Ok(sim.verify_as(&self.keys, supplier, item, instance)?)
    }

    /// Takes custody and verifies honestly, as the controlled party.
    pub fn receive(&mut self, sim: &mut Simulation, instance: &mut ItemInstance) -> Result<Delivery, AdversaryError> {
        let supplier = sim.take_delivery(self.party(), instance)?;
        let item = instance.item;
        Ok(sim.verify_as(&self.keys, supplier, item, instance)?)
    }

    /// Records the shipment of the item to `buyer` but hands over
    /// `replacement` in place of its PUF.
    pub fn ship_substitute(
        &mut self,
        sim: &mut Simulation,
        buyer: PartyId,
        instance: &mut ItemInstance,
        replacement: PufDevice,
    ) -> Result<(), AdversaryError> {
        instance.device = replacement;
        let item = instance.item;
        Ok(sim.ship_as(&self.keys, buyer, item, instance)?)
    }

    fn misreport(
        &mut self,
        sim: &mut Simulation,
        supplier: PartyId,
        instance: &mut ItemInstance,
    ) -> Result<Delivery, AdversaryError> {
        let item = instance.item;
        let crv = match sim.system_mut().get_challenges(&self.keys, supplier, item)? {
            Challenges::Alert(alert) => return Ok(Delivery::Alert(alert)),
            Challenges::Ready(crv) => crv,
        };
        let mut measured = instance.device.respond(&crv, sim.config().reads)?;
        let mask = instance.device.params().mask();
        for pair in &mut measured.pairs {
            pair.response = (pair.response ^ self.rng.gen_range(1..=mask)) & mask;
        }
        let record = sim
            .system_mut()
            .verify_item(&self.keys, supplier, item, &crv, &measured)?;
        Ok(Delivery::Verified(record))
    }

    /// Tries to write a shipment record on behalf of `victim`, first with a
    /// forged transaction signature, then through the contract with the
    /// adversary's own valid signature.
    pub fn impersonate(
        &mut self,
        sim: &mut Simulation,
        victim: PartyId,
    ) -> Result<ImpersonationReport, AdversaryError> {
        let buyer = sim.graph().buyers(victim).next().unwrap_or(self.party());
        let item = ItemId::new(victim, u64::MAX);
        let key = TrackingKey::shipped(victim, buyer, item);
        let nonce = self.rng.gen();
        let mut txn = Transaction::signed(&self.keys, nonce, crate::codec::Canonical::to_canonical(&key), vec![]);
        txn.submitter = victim;

        let ledger = sim.system_mut().ledger_mut();
        let client_rejected = matches!(ledger.submit(txn.clone()), Err(LedgerError::RejectedSignature(_)));
        let id = ledger.submit_unchecked(txn);
        ledger.run_until(IMPERSONATION_EVENTS, |l| l.applied_everywhere(&id));
        let forged_executed = ledger
            .honest_nodes()
            .any(|n| ledger.replica(n).executed_at(&id).is_some());

        let contract_rejected = matches!(
            sim.system_mut()
                .commit(&self.keys, key, crate::codec::Canonical::to_canonical(&item)),
            Err(ContractError::Rejected(..))
        );
        let viewer = first_honest(sim, self.party());
        let committed = sim.system().contains(viewer, &key);
        Ok(ImpersonationReport {
            victim,
            client_rejected,
            forged_executed,
            contract_rejected,
            committed,
        })
    }
}

const IMPERSONATION_EVENTS: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImpersonationReport {
    pub victim: PartyId,
    /// The client-side signature check refused the forged transaction.
    pub client_rejected: bool,
    /// Some honest replica executed the forged transaction anyway.
    pub forged_executed: bool,
    /// The contract refused the adversary's own signed write on the victim's
    /// key.
    pub contract_rejected: bool,
    /// The victim's key ended up in the store.
    pub committed: bool,
}

impl ImpersonationReport {
    pub fn refused(&self) -> bool {
        self.client_rejected && !self.forged_executed && self.contract_rejected && !self.committed
    }
}

fn first_honest(sim: &Simulation, adversary: PartyId) -> PartyId {
    sim.graph()
        .parties()
        .find(|p| *p != adversary)
        .expect("a supply chain has more than one party")
}

/// One attack run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub attack: Attack,
    pub adversary: PartyId,
    pub path: Vec<PartyId>,
    pub item: ItemId,
    pub seed: u64,
    pub asserted: bool,
    pub expected: ExpectedOutcome,
    pub observed: ExpectedOutcome,
    pub safety_violations: Vec<String>,
    pub notes: Vec<String>,
}

impl AttackReport {
    pub fn outcome_matches(&self) -> bool {
        self.expected == self.observed
    }

    /// Whether the run met its expectation. Observe-only runs still have to
    /// keep the ledger safe.
    pub fn met(&self) -> bool {
        self.safety_violations.is_empty() && (!self.asserted || self.outcome_matches())
    }
}

/// Takes control of the adversary's party, moves one new item along `path`
/// with the attack's deviations, and compares the ledger with the
/// prediction.
pub fn run_attack(
    sim: &mut Simulation,
    config: AdversaryConfig,
    path: &[PartyId],
) -> Result<AttackReport, AdversaryError> {
    config.validate(sim, path)?;
    let mut ctx = AdversaryContext::take_control(sim, config)?;
    let item = play(sim, &mut ctx, path)?;
    Ok(report(sim, &ctx, path, item))
}

fn play(sim: &mut Simulation, ctx: &mut AdversaryContext, path: &[PartyId]) -> Result<ItemId, AdversaryError> {
    let a = ctx.party();
    let mut instance = sim.manufacture(path[0])?;
    let item = instance.item;
    if path[0] == a {
        ctx.produce(sim, &mut instance)?;
    } else {
        sim.register(&mut instance)?;
    }
    let mut observed = None;
    for pair in path.windows(2) {
        let (s, b) = (pair[0], pair[1]);
        if s == a {
            ctx.dispatch(sim, b, &mut instance, observed.as_ref())?;
        } else {
            sim.ship(s, b, &mut instance)?;
        }
        let delivery = if b == a {
            let d = ctx.intake(sim, &mut instance)?;
            observed = d.record().map(|r| r.expected.clone());
            d
        } else {
            sim.deliver(b, &mut instance)?
        };
        if !delivery.succeeded() {
            break;
        }
    }
    Ok(item)
}

fn report(sim: &Simulation, ctx: &AdversaryContext, path: &[PartyId], item: ItemId) -> AttackReport {
    let a = ctx.party();
    let attack = ctx.attack();
    let viewer = first_honest(sim, a);
    AttackReport {
        attack,
        adversary: a,
        path: path.to_vec(),
        item,
        seed: sim.config().seed,
        asserted: attack.asserted(),
        expected: expected_outcome(attack, a, path, item),
        observed: ExpectedOutcome::from_evidence(sim.system().evidence(viewer, item)),
        safety_violations: safety::audit(sim.system().ledger())
            .iter()
            .map(|v| v.to_string())
            .collect(),
        notes: ctx.notes.clone(),
    }
}

/// Attack 1: the adversary checks the item it received, then tampers with it
/// (or swaps in a clone) before shipping it on.
pub fn attack1_forge_in_transit(
    sim: &mut Simulation,
    adversary: PartyId,
    path: &[PartyId],
    clone: bool,
) -> Result<AttackReport, AdversaryError> {
    run_attack(
        sim,
        AdversaryConfig::new(adversary, Attack::ForgeInTransit { clone }),
        path,
    )
}

/// Attack 2: a producer tampers with the item before enrolling it.
pub fn attack2_forge_pre_crd(
    sim: &mut Simulation,
    adversary: PartyId,
    path: &[PartyId],
    after_register: bool,
) -> Result<AttackReport, AdversaryError> {
    run_attack(
        sim,
        AdversaryConfig::new(adversary, Attack::ForgePreCrd { after_register }),
        path,
    )
}

/// Attack 3: the adversary tampers with a delivered item and verifies it,
/// blaming its honest supplier.
pub fn attack3_blame_supplier(
    sim: &mut Simulation,
    adversary: PartyId,
    path: &[PartyId],
) -> Result<AttackReport, AdversaryError> {
    run_attack(sim, AdversaryConfig::new(adversary, Attack::BlameSupplier), path)
}

/// Attack 4 inside a tracking run: the adversary's ledger node follows
/// `strategy` while the party otherwise behaves. `sim` must have been built
/// with that node marked byzantine; see [`byzantine_ledger`].
pub fn attack4_byzantine(
    sim: &mut Simulation,
    adversary: PartyId,
    path: &[PartyId],
    strategy: ByzantineStrategy,
) -> Result<AttackReport, AdversaryError> {
    match sim.system().ledger().config().byzantine.get(&adversary) {
        Some(s) if *s == strategy => {}
        _ => {
            return Err(AdversaryError::Precondition(format!(
                "node {adversary} is not running {strategy:?}"
            )))
        }
    }
    run_attack(
        sim,
        AdversaryConfig::new(adversary, Attack::ByzantineNode { strategy }),
        path,
    )
}

/// Marks `node` as byzantine in a ledger configuration.
pub fn byzantine_ledger(mut config: LedgerConfig, node: NodeId, strategy: ByzantineStrategy) -> LedgerConfig {
    config.byzantine.clear();
    config.byzantine.insert(node, strategy);
    config
}

/// Attack 5.
pub fn attack5_method_abuse(
    sim: &mut Simulation,
    adversary: PartyId,
    path: &[PartyId],
    variant: MethodAbuseVariant,
) -> Result<AttackReport, AdversaryError> {
    run_attack(
        sim,
        AdversaryConfig::new(adversary, Attack::MethodAbuse { variant }),
        path,
    )
}

/// A bare-ledger consensus trial: one byzantine node among `nodes`, a burst
/// of client writes, then the safety audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SafetyTrial {
    pub nodes: usize,
    pub byzantine: NodeId,
    pub strategy: ByzantineStrategy,
    pub policy: DeliveryPolicy,
    pub seed: u64,
    pub txns: u64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    /// Every write reached every honest replica.
    pub completed: bool,
    #[serde(serialize_with = "display_all")]
    pub violations: Vec<SafetyViolation>,
    pub events: u64,
    /// Whether the node count tolerates one byzantine node.
    pub tolerated: bool,
}

const TRIAL_EVENTS: u64 = 400_000;

impl SafetyTrial {
    pub fn new(nodes: usize, strategy: ByzantineStrategy, policy: DeliveryPolicy, seed: u64) -> Self {
        Self {
            nodes,
            byzantine: NodeId::from_index(seed % nodes as u64),
            strategy,
            policy,
            seed,
            txns: 16,
            batch_size: 2,
        }
    }

    pub fn run(&self) -> Result<TrialOutcome, LedgerError> {
        let mut config = LedgerConfig::new(self.nodes, self.seed)
            .with_policy(self.policy)
            .with_byzantine(self.byzantine, self.strategy);
        config.batch_size = self.batch_size;
        let keys = generate_parties(self.nodes, self.seed);
        let mut ledger = Ledger::new(config, &keys, Arc::new(AcceptAll))?;
        let mut ids = Vec::new();
        for i in 0..self.txns {
            let who = &keys[(i % self.nodes as u64) as usize];
            // Keys repeat so that the write-once rule is exercised.
            let key = format!("k{}", i % (self.txns / 2 + 1)).into_bytes();
            ids.push(ledger.submit(Transaction::signed(who, i, key, i.to_le_bytes().to_vec()))?);
        }
        let completed = ledger.run_until(TRIAL_EVENTS, |l| ids.iter().all(|id| l.applied_everywhere(id)));
        Ok(TrialOutcome {
            completed,
            violations: safety::audit(&ledger),
            events: ledger.stats().events,
            tolerated: fault_tolerance(self.nodes) >= 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supply_chain::{SimulationConfig, SupplyChainGraph};

    fn p(i: u32) -> PartyId {
        PartyId(i)
    }

    fn sim(seed: u64) -> Simulation {
        let config = SimulationConfig {
            seed,
            ..SimulationConfig::default()
        };
        Simulation::new(SupplyChainGraph::eight_party(), config).unwrap()
    }

    fn path() -> Vec<PartyId> {
        vec![p(1), p(3), p(5)]
    }

    #[test]
    fn expected_outcomes_follow_the_rules() {
        let item = ItemId::new(p(1), 0);
        let e = expected_outcome(Attack::ForgeInTransit { clone: false }, p(3), &path(), item);
        assert_eq!(e.detection, Detection::Detected);
        assert_eq!(e.attributed_to, Some(p(3)));
        assert!(e
            .ledger_evidence
            .contains(&TrackingKey::on_edge(Tag::VerificationFailed, p(3), p(5), item)));

        let e = expected_outcome(Attack::ForgePreCrd { after_register: false }, p(1), &path(), item);
        assert_eq!(e.detection, Detection::Undetected);
        assert_eq!(e.ledger_evidence.len(), 7);

        let e = expected_outcome(Attack::BlameSupplier, p(3), &path(), item);
        assert_eq!(e.attributed_to, Some(p(1)));

        let skip = Attack::MethodAbuse {
            variant: MethodAbuseVariant::SkipRegisterItem,
        };
        let e = expected_outcome(skip, p(1), &path(), item);
        assert_eq!(
            e.ledger_evidence,
            vec![
                TrackingKey::shipped(p(1), p(3), item),
                TrackingKey::on_edge(Tag::NoCrd, p(1), p(3), item)
            ]
        );
    }

    #[test]
    fn attack1_is_detected_and_attributed() {
        let r = attack1_forge_in_transit(&mut sim(1), p(3), &path(), false).unwrap();
        assert!(r.met(), "{r:#?}");
        assert_eq!(r.observed.attributed_to, Some(p(3)));
    }

    #[test]
    fn clone_fails_on_unobserved_challenges() {
        let r = attack1_forge_in_transit(&mut sim(2), p(3), &path(), true).unwrap();
        assert!(r.met(), "{r:#?}");
        assert!(r.notes.is_empty());
    }

    #[test]
    fn clone_denied_below_threshold() {
        let mut s = sim(3);
        let mut config = AdversaryConfig::new(p(3), Attack::ForgeInTransit { clone: true });
        config.probe_budget = 10;
        let r = run_attack(&mut s, config, &path()).unwrap();
        assert!(r.met());
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn attack2_goes_unnoticed_unless_tampering_follows_enrolment() {
        let r = attack2_forge_pre_crd(&mut sim(4), p(1), &path(), false).unwrap();
        assert!(r.met(), "{r:#?}");
        assert_eq!(r.observed.detection, Detection::Undetected);
        let r = attack2_forge_pre_crd(&mut sim(4), p(1), &path(), true).unwrap();
        assert!(r.met(), "{r:#?}");
        assert_eq!(r.observed.attributed_to, Some(p(1)));
    }

    #[test]
    fn attack3_blames_the_honest_supplier() {
        let r = attack3_blame_supplier(&mut sim(5), p(3), &path()).unwrap();
        assert!(r.met(), "{r:#?}");
        assert_eq!(r.observed.attributed_to, Some(p(1)));
    }

    #[test]
    fn method_abuse_variants() {
        for variant in MethodAbuseVariant::ALL {
            let adversary = match variant {
                MethodAbuseVariant::SkipRegisterItem | MethodAbuseVariant::WrongRegisterParams => p(1),
                _ => p(3),
            };
            let r = attack5_method_abuse(&mut sim(6), adversary, &path(), variant).unwrap();
            assert!(r.met(), "{variant:?}: {r:#?}");
            assert_eq!(r.observed.detection, Detection::Detected, "{variant:?}");
        }
    }

    #[test]
    fn wrong_buyer_leaves_an_extra_shipment_record() {
        let variant = MethodAbuseVariant::WrongShipParams;
        let r = attack5_method_abuse(&mut sim(7), p(3), &path(), variant).unwrap();
        assert!(!r.asserted);
        assert_eq!(r.observed.attributed_to, Some(p(3)));
        assert!(r
            .observed
            .ledger_evidence
            .contains(&TrackingKey::shipped(p(3), p(6), r.item)));
    }

    #[test]
    fn impersonation_is_refused() {
        let mut s = sim(8);
        let mut ctx =
            AdversaryContext::take_control(&mut s, AdversaryConfig::new(p(3), Attack::BlameSupplier)).unwrap();
        let r = ctx.impersonate(&mut s, p(1)).unwrap();
        assert!(r.refused(), "{r:?}");
    }

    #[test]
    fn byzantine_node_inside_a_tracking_run() {
        for strategy in ByzantineStrategy::ALL {
            let config = SimulationConfig {
                seed: 9,
                ledger: byzantine_ledger(LedgerConfig::default(), p(3), strategy),
                ..SimulationConfig::default()
            };
            let mut s = Simulation::new(SupplyChainGraph::eight_party(), config).unwrap();
            let r = attack4_byzantine(&mut s, p(3), &path(), strategy).unwrap();
            assert!(r.met(), "{strategy:?}: {r:#?}");
            assert_eq!(r.observed.detection, Detection::Undetected);
        }
    }

    #[test]
    fn preconditions_are_checked() {
        let err = attack2_forge_pre_crd(&mut sim(10), p(3), &path(), false).unwrap_err();
        assert!(matches!(err, AdversaryError::Precondition(_)));
        let err = attack1_forge_in_transit(&mut sim(10), p(5), &path(), false).unwrap_err();
        assert!(matches!(err, AdversaryError::Precondition(_)));
        let err = attack4_byzantine(&mut sim(10), p(3), &path(), ByzantineStrategy::Silent).unwrap_err();
        assert!(matches!(err, AdversaryError::Precondition(_)));
    }

    #[test]
    fn controlled_party_is_out_of_the_simulations_hands() {
        let mut s = sim(11);
        let ctx = AdversaryContext::take_control(&mut s, AdversaryConfig::new(p(1), Attack::BlameSupplier)).unwrap();
        assert_eq!(ctx.party(), p(1));
        assert!(s.surrender(p(1)).is_none());
        assert!(matches!(s.new_item(p(1)), Err(SimError::Controlled(_))));
        assert!(AdversaryContext::take_control(&mut s, AdversaryConfig::new(p(1), Attack::BlameSupplier)).is_err());
    }

    #[test]
    fn safety_trial_on_four_nodes() {
        for strategy in ByzantineStrategy::ALL {
            let t = SafetyTrial::new(4, strategy, DeliveryPolicy::AdversarialReorder { max_delay: 10 }, 3);
            let o = t.run().unwrap();
            assert!(
                o.completed && o.violations.is_empty() && o.tolerated,
                "{strategy:?}: {o:?}"
            );
        }
    }
}
