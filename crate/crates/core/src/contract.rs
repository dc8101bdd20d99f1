//! The tracking contract: item registration, shipment records, challenge
//! retrieval and verification outcomes, all kept in the ledger's write-once
//! store.
//!
//! A contract call runs at the caller's premises against its replica's
//! committed state and ends in at most one signed write. Replicas re-check
//! every write when it commits (`ContractValidator`), so a party can only
//! record facts it is entitled to record.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};
use crate::crypto::{KeyPair, PartyId};
use crate::ledger::{
    ApplyOutcome, CommitValidator, Ledger, LedgerConfig, LedgerError, Transaction, TxnId, WriteOnceStore,
};
use crate::puf::{match_count, ChallengeResponseData, ChallengeResponseVector, PufError};

/// `producer` concatenated with a producer-local counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId {
    pub producer: PartyId,
    pub counter: u64,
}

impl ItemId {
    pub fn new(producer: PartyId, counter: u64) -> Self {
        Self { producer, counter }
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.producer, self.counter)
    }
}

impl Canonical for ItemId {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.producer).u64(self.counter);
    }
}

impl Decode for ItemId {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            producer: PartyId::decode(input)?,
            counter: input.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Crd,
    Shipped,
    NoShip,
    NoCrd,
    DeclareVerification,
    VerificationSucceeded,
    VerificationFailed,
}

impl Tag {
    pub const ALL: [Tag; 7] = [
        Tag::Crd,
        Tag::Shipped,
        Tag::NoShip,
        Tag::NoCrd,
        Tag::DeclareVerification,
        Tag::VerificationSucceeded,
        Tag::VerificationFailed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Crd => "crd",
            Tag::Shipped => "shipped",
            Tag::NoShip => "no_ship",
            Tag::NoCrd => "no_crd",
            Tag::DeclareVerification => "declare_verification",
            Tag::VerificationSucceeded => "verification_succeeded",
            Tag::VerificationFailed => "verification_failed",
        }
    }

    fn code(self) -> u8 {
        Tag::ALL.iter().position(|t| *t == self).expect("listed") as u8
    }

    /// Whether the key is an alert or a failed verification.
    pub fn is_alarm(self) -> bool {
        matches!(self, Tag::NoShip | Tag::NoCrd | Tag::VerificationFailed)
    }
}

/// Canonical store key. Every tag except `crd` names an edge
/// `(supplier, buyer)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackingKey {
    pub tag: Tag,
    pub edge: Option<(PartyId, PartyId)>,
    pub item: ItemId,
}

impl TrackingKey {
    pub fn crd(item: ItemId) -> Self {
        Self {
            tag: Tag::Crd,
            edge: None,
            item,
        }
    }

    pub fn on_edge(tag: Tag, supplier: PartyId, buyer: PartyId, item: ItemId) -> Self {
        if tag == Tag::Crd {
            return Self::crd(item);
        }
        Self {
            tag,
            edge: Some((supplier, buyer)),
            item,
        }
    }

    pub fn shipped(supplier: PartyId, buyer: PartyId, item: ItemId) -> Self {
        Self::on_edge(Tag::Shipped, supplier, buyer, item)
    }

    pub fn supplier(&self) -> Option<PartyId> {
        self.edge.map(|(s, _)| s)
    }

    pub fn buyer(&self) -> Option<PartyId> {
        self.edge.map(|(_, b)| b)
    }

    /// The party whose conduct the record calls into question: the supplier
    /// for alerts and failed verifications.
    pub fn accused(&self) -> Option<PartyId> {
        if self.tag.is_alarm() {
            self.supplier()
        } else {
            None
        }
    }
}

impl fmt::Display for TrackingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.edge {
            None => write!(f, "<{}, {}>", self.tag.name(), self.item),
            Some((s, b)) => write!(f, "<{}, {}, {}, {}>", self.tag.name(), s, b, self.item),
        }
    }
}

impl Canonical for TrackingKey {
    fn encode(&self, out: &mut Encoder) {
        out.u8(self.tag.code());
        if let Some((s, b)) = self.edge {
            out.item(&s).item(&b);
        }
        out.item(&self.item);
    }
}

impl Decode for TrackingKey {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let code = input.u8()?;
        let tag = *Tag::ALL.get(code as usize).ok_or(DecodeError::UnknownTag {
            what: "tracking key",
            tag: code,
        })?;
        let edge = if tag == Tag::Crd {
            None
        } else {
            Some((PartyId::decode(input)?, PartyId::decode(input)?))
        };
        Ok(Self {
            tag,
            edge,
            item: ItemId::decode(input)?,
        })
    }
}

/// Value stored under `crd`: the producer and its enrolment data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrdRecord {
    pub producer: PartyId,
    pub crd: ChallengeResponseData,
}

impl Canonical for CrdRecord {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.producer).item(&self.crd);
    }
}

impl Decode for CrdRecord {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            producer: PartyId::decode(input)?,
            crd: ChallengeResponseData::decode(input)?,
        })
    }
}

/// Value stored under a verification outcome key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomePayload {
    pub expected: ChallengeResponseVector,
    /// Present on failures only.
    pub measured: Option<ChallengeResponseVector>,
    pub matches: u64,
}

impl Canonical for OutcomePayload {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.expected);
        match &self.measured {
            None => out.u8(0),
            Some(m) => out.u8(1).item(m),
        };
        out.u64(self.matches);
    }
}

impl Decode for OutcomePayload {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let expected = ChallengeResponseVector::decode(input)?;
        let measured = match input.u8()? {
            0 => None,
            1 => Some(ChallengeResponseVector::decode(input)?),
            tag => {
                return Err(DecodeError::UnknownTag {
                    what: "measured vector",
                    tag,
                })
            }
        };
        Ok(Self {
            expected,
            measured,
            matches: input.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub supplier: PartyId,
    pub verifier: PartyId,
    pub item: ItemId,
    pub expected: ChallengeResponseVector,
    pub measured: Option<ChallengeResponseVector>,
    pub match_count: usize,
    pub outcome: Verdict,
}

impl VerificationRecord {
    pub fn key(&self) -> TrackingKey {
        let tag = match self.outcome {
            Verdict::Succeeded => Tag::VerificationSucceeded,
            Verdict::Failed => Tag::VerificationFailed,
        };
        TrackingKey::on_edge(tag, self.supplier, self.verifier, self.item)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractConfig {
    /// Challenges per verification (`C`).
    pub challenges: usize,
    /// Matches required to pass (`R`).
    pub required_matches: usize,
    /// Number of parties (`N`).
    pub parties: usize,
}

impl ContractConfig {
    pub fn new(challenges: usize, required_matches: usize, parties: usize) -> Result<Self, ContractError> {
        let c = Self {
            challenges,
            required_matches,
            parties,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        if self.required_matches < 1 || self.required_matches > self.challenges {
            return Err(ContractError::Config(format!(
                "required matches {} outside 1..={}",
                self.required_matches, self.challenges
            )));
        }
        if self.parties < 4 {
            return Err(ContractError::Config(format!(
                "{} parties cannot tolerate a byzantine node; at least 4 are needed",
                self.parties
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "alert", content = "key", rename_all = "snake_case")]
pub enum Alert {
    NoShip(TrackingKey),
    NoCrd(TrackingKey),
}

impl Alert {
    pub fn key(&self) -> TrackingKey {
        match self {
            Alert::NoShip(k) | Alert::NoCrd(k) => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Challenges {
    Ready(ChallengeResponseVector),
    Alert(Alert),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractError {
    #[error("{0} already recorded")]
    KeyExists(TrackingKey),
    #[error("no verification declared for {0}")]
    NoDeclaration(TrackingKey),
    #[error("challenges differ from the declared ones for {0}")]
    DeclarationMismatch(TrackingKey),
    #[error("write {0} refused at commit: {1}")]
    Rejected(TrackingKey, String),
    #[error("stored record {0} is malformed")]
    Malformed(TrackingKey),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

fn read<T: Decode>(store: &WriteOnceStore, key: &TrackingKey) -> Option<Result<T, ContractError>> {
    store
        .get(&key.to_canonical())
        .map(|bytes| T::from_canonical(bytes).map_err(|_| ContractError::Malformed(*key)))
}

/// Commit-time rules enforced identically at every replica.
#[derive(Debug, Clone, Copy)]
pub struct ContractValidator {
    pub config: ContractConfig,
}

impl ContractValidator {
    fn check(&self, store: &WriteOnceStore, txn: &Transaction) -> Result<(), String> {
        let key = TrackingKey::from_canonical(&txn.key).map_err(|e| format!("malformed key: {e}"))?;
        let signer = txn.submitter;
        let present = |k: TrackingKey| store.contains(&k.to_canonical());
        let item = key.item;

        let Some((supplier, buyer)) = key.edge else {
            // crd
            if item.producer != signer {
                return Err(format!("{signer} cannot register an item of {}", item.producer));
            }
            let record = CrdRecord::from_canonical(&txn.value).map_err(|e| format!("malformed crd: {e}"))?;
            if record.producer != signer || record.crd.item != item {
                return Err("crd names a different producer or item".into());
            }
            if record.crd.subsets.len() != self.config.parties {
                return Err(format!(
                    "crd has {} subsets for {} parties",
                    record.crd.subsets.len(),
                    self.config.parties
                ));
            }
            return Ok(());
        };

        let expected_signer = if key.tag == Tag::Shipped { supplier } else { buyer };
        if signer != expected_signer {
            return Err(format!("{signer} cannot write {key}"));
        }
        let on = |tag| TrackingKey::on_edge(tag, supplier, buyer, item);
        match key.tag {
            Tag::Crd => unreachable!("crd has no edge"),
            Tag::Shipped | Tag::NoShip | Tag::NoCrd => {
                if txn.value != item.to_canonical() {
                    return Err("value must be the item id".into());
                }
                match key.tag {
                    Tag::NoShip if present(on(Tag::Shipped)) => Err("shipment is recorded".into()),
                    Tag::NoCrd if !present(on(Tag::Shipped)) => Err("shipment is not recorded".into()),
                    Tag::NoCrd if present(TrackingKey::crd(item)) => Err("crd is recorded".into()),
                    _ => Ok(()),
                }
            }
            Tag::DeclareVerification => {
                if !present(on(Tag::Shipped)) || !present(TrackingKey::crd(item)) {
                    return Err("declaration needs both shipment and crd".into());
                }
                let crv = ChallengeResponseVector::from_canonical(&txn.value)
                    .map_err(|e| format!("malformed challenges: {e}"))?;
                if crv.len() != self.config.challenges {
                    return Err(format!(
                        "{} challenges declared, {} required",
                        crv.len(),
                        self.config.challenges
                    ));
                }
                Ok(())
            }
            Tag::VerificationSucceeded | Tag::VerificationFailed => {
                let declared: ChallengeResponseVector = match read(store, &on(Tag::DeclareVerification)) {
                    None => return Err("no declaration".into()),
                    Some(Err(_)) => return Err("malformed declaration".into()),
                    Some(Ok(d)) => d,
                };
                if present(on(Tag::VerificationSucceeded)) || present(on(Tag::VerificationFailed)) {
                    return Err("outcome already recorded".into());
                }
                let payload =
                    OutcomePayload::from_canonical(&txn.value).map_err(|e| format!("malformed outcome: {e}"))?;
                if payload.expected != declared {
                    return Err("expected challenges differ from the declaration".into());
                }
                let required = self.config.required_matches as u64;
                let matches = match &payload.measured {
                    Some(measured) => match_count(&declared, measured).map_err(|e| e.to_string())? as u64,
                    None => payload.matches,
                };
                if matches != payload.matches {
                    return Err("match count does not follow from the vectors".into());
                }
                match key.tag {
                    Tag::VerificationFailed if payload.measured.is_none() => Err("failure without measurement".into()),
                    Tag::VerificationFailed if matches >= required => Err("failure with enough matches".into()),
                    Tag::VerificationSucceeded if matches < required || matches > declared.len() as u64 => {
                        Err("success with too few matches".into())
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

impl CommitValidator for ContractValidator {
    fn validate(&self, store: &WriteOnceStore, txn: &Transaction) -> Result<(), String> {
        self.check(store, txn)
    }
}

const MAX_EVENTS_PER_CALL: u64 = 20_000_000;

/// The contract deployed on a ledger. Callers present their own key pair
/// for every call.
pub struct TrackingSystem {
    config: ContractConfig,
    ledger: Ledger,
    nonces: Vec<u64>,
}

impl fmt::Debug for TrackingSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrackingSystem")
            .field("config", &self.config)
            .field("ledger", &self.ledger)
            .finish()
    }
}

impl TrackingSystem {
    /// Starts one ledger node per party, each running the contract's commit
    /// rules.
    pub fn new(config: ContractConfig, ledger: LedgerConfig, keys: &[KeyPair]) -> Result<Self, ContractError> {
        config.validate()?;
        if ledger.nodes != config.parties {
            return Err(ContractError::Config(format!(
                "{} ledger nodes for {} parties",
                ledger.nodes, config.parties
            )));
        }
        let validator = Arc::new(ContractValidator { config });
        Ok(Self {
            config,
            ledger: Ledger::new(ledger, keys, validator)?,
            nonces: vec![0; config.parties],
        })
    }

    pub fn config(&self) -> ContractConfig {
        self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    /// The replica a party reads from: its own, unless that node is
    /// byzantine, in which case the lowest honest one.
    fn view_of(&self, party: PartyId) -> PartyId {
        if self.ledger.is_byzantine(party) {
            self.ledger.honest_nodes().next().unwrap_or(party)
        } else {
            party
        }
    }

    pub fn store(&self, viewer: PartyId) -> &WriteOnceStore {
        self.ledger.store(self.view_of(viewer))
    }

    pub fn get(&self, viewer: PartyId, key: &TrackingKey) -> Option<&[u8]> {
        self.store(viewer).get(&key.to_canonical())
    }

    pub fn contains(&self, viewer: PartyId, key: &TrackingKey) -> bool {
        self.get(viewer, key).is_some()
    }

    /// Signs `set(key, value)` as `caller`, waits until every honest replica
    /// has applied it, and reports the outcome at the caller's replica.
    pub fn commit(&mut self, caller: &KeyPair, key: TrackingKey, value: Vec<u8>) -> Result<TxnId, ContractError> {
        let me = caller.owner();
        let nonce = self
            .nonces
            .get_mut(me.index())
            .ok_or_else(|| ContractError::Config(format!("{me} is not a party")))?;
        *nonce += 1;
        let txn = Transaction::signed(caller, *nonce, key.to_canonical(), value);
        let id = self.ledger.submit(txn)?;
        self.ledger.run_until_applied(id, MAX_EVENTS_PER_CALL)?;
        let entry = self
            .ledger
            .entry(self.view_of(me), &id)
            .expect("applied at every honest replica");
        match &entry.outcome {
            ApplyOutcome::Applied => Ok(id),
            ApplyOutcome::KeyExists => Err(ContractError::KeyExists(key)),
            ApplyOutcome::Rejected(reason) => Err(ContractError::Rejected(key, reason.clone())),
        }
    }

    pub fn register_item(&mut self, caller: &KeyPair, crd: ChallengeResponseData) -> Result<(), ContractError> {
        let key = TrackingKey::crd(crd.item);
        let record = CrdRecord {
            producer: caller.owner(),
            crd,
        };
        self.commit(caller, key, record.to_canonical()).map(drop)
    }

    pub fn ship_item(&mut self, caller: &KeyPair, buyer: PartyId, item: ItemId) -> Result<(), ContractError> {
        let key = TrackingKey::shipped(caller.owner(), buyer, item);
        self.commit(caller, key, item.to_canonical()).map(drop)
    }

    /// Returns the caller's challenges for `item` received from `supplier`
    /// and declares the verification, or raises an alert when the shipment
    /// or the enrolment data is missing.
    pub fn get_challenges(
        &mut self,
        caller: &KeyPair,
        supplier: PartyId,
        item: ItemId,
    ) -> Result<Challenges, ContractError> {
        let me = caller.owner();
        let on = |tag| TrackingKey::on_edge(tag, supplier, me, item);
        if !self.contains(me, &TrackingKey::shipped(supplier, me, item)) {
            return self.raise(caller, Alert::NoShip(on(Tag::NoShip)));
        }
        let record: CrdRecord = match read(self.store(me), &TrackingKey::crd(item)) {
            None => return self.raise(caller, Alert::NoCrd(on(Tag::NoCrd))),
            Some(r) => r?,
        };
        let mut crv = record.crd.open_own(caller)?;
        crv.pairs.truncate(self.config.challenges);
        self.commit(caller, on(Tag::DeclareVerification), crv.to_canonical())?;
        Ok(Challenges::Ready(crv))
    }

    fn raise(&mut self, caller: &KeyPair, alert: Alert) -> Result<Challenges, ContractError> {
        let key = alert.key();
        match self.commit(caller, key, key.item.to_canonical()) {
            // Raised earlier by the same buyer; the alert stands.
            Ok(_) | Err(ContractError::KeyExists(_)) => Ok(Challenges::Alert(alert)),
            Err(e) => Err(e),
        }
    }

    /// Counts matches between the declared and the measured responses and
    /// records success when at least `R` match, failure otherwise.
    pub fn verify_item(
        &mut self,
        caller: &KeyPair,
        supplier: PartyId,
        item: ItemId,
        expected: &ChallengeResponseVector,
        measured: &ChallengeResponseVector,
    ) -> Result<VerificationRecord, ContractError> {
        let me = caller.owner();
        let on = |tag| TrackingKey::on_edge(tag, supplier, me, item);
        let declared: ChallengeResponseVector = match read(self.store(me), &on(Tag::DeclareVerification)) {
            None => return Err(ContractError::NoDeclaration(on(Tag::DeclareVerification))),
            Some(d) => d?,
        };
        if &declared != expected {
            return Err(ContractError::DeclarationMismatch(on(Tag::DeclareVerification)));
        }
        for tag in [Tag::VerificationSucceeded, Tag::VerificationFailed] {
            if self.contains(me, &on(tag)) {
                return Err(ContractError::KeyExists(on(tag)));
            }
        }
        let r = match_count(expected, measured)?;
        let outcome = if r >= self.config.required_matches {
            Verdict::Succeeded
        } else {
            Verdict::Failed
        };
        let record = VerificationRecord {
            supplier,
            verifier: me,
            item,
            expected: expected.clone(),
            measured: (outcome == Verdict::Failed).then(|| measured.clone()),
            match_count: r,
            outcome,
        };
        let payload = OutcomePayload {
            expected: record.expected.clone(),
            measured: record.measured.clone(),
            matches: r as u64,
        };
        self.commit(caller, record.key(), payload.to_canonical())?;
        Ok(record)
    }

    /// Every tracking key committed so far, in commit order.
    pub fn keys(&self, viewer: PartyId) -> Vec<TrackingKey> {
        self.store(viewer)
            .iter()
            .filter_map(|e| TrackingKey::from_canonical(&e.key).ok())
            .collect()
    }

    /// Committed keys concerning `item`.
    pub fn evidence(&self, viewer: PartyId, item: ItemId) -> Vec<TrackingKey> {
        self.keys(viewer).into_iter().filter(|k| k.item == item).collect()
    }
}
