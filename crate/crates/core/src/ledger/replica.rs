//! Honest replica state machine.
//!
//! Three-phase agreement per sequence slot (pre-prepare, prepare, commit)
//! with quorums of `ceil((N + f + 1) / 2)` replicas, which is `2f + 1` when
//! `N = 3f + 1`. Slots are decided one at a time. The leader of slot `s` in
//! view `v` is replica `(s + v) mod N`; a slot that does not commit before
//! its timer fires moves to the next view and therefore the next leader.
//! The view change carries prepared certificates so a value that may have
//! committed in an earlier view is re-proposed.
//!
//! A replica is a pure transition function from inputs to outputs; the
//! surrounding simulation owns the clock and the network.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::crypto::{KeyPair, Pki, Signed};

use super::message::{commit_quorum_view, Body, NetworkMessage, NodeId, Phase, PreparedCert, ViewChange, Vote};
use super::network::SimTime;
use super::store::WriteOnceStore;
use super::txn::{batch_digest, Digest, Transaction, TxnId};

/// Largest number of byzantine replicas tolerated among `n`.
pub fn fault_tolerance(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// Quorum size: any two quorums share at least `f + 1` replicas.
pub fn quorum_size(n: usize) -> usize {
    (n + fault_tolerance(n) + 2) / 2
}

const MAX_BATCH: usize = 1_024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaConfig {
    pub nodes: usize,
    pub batch_size: usize,
    pub base_timeout: SimTime,
}

#[derive(Debug, Clone)]
pub enum Input {
    Message(NetworkMessage),
    Request(Transaction),
    Timer { slot: u64, view: u64 },
}

#[derive(Debug, Clone)]
pub enum Output {
    Send { msg: NetworkMessage, extra_delay: SimTime },
    Timer { slot: u64, view: u64, after: SimTime },
}

/// Application-level check run on every replica before a committed write
/// touches the store. Must be deterministic.
pub trait CommitValidator: Send + Sync {
    fn validate(&self, store: &WriteOnceStore, txn: &Transaction) -> Result<(), String>;
}

/// Accepts every correctly signed write.
#[derive(Debug, Default, Clone, Copy)]
pub struct AcceptAll;

impl CommitValidator for AcceptAll {
    fn validate(&self, _: &WriteOnceStore, _: &Transaction) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    KeyExists,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumCert {
    pub slot: u64,
    pub view: u64,
    pub digest: Digest,
    pub signers: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u64,
    pub txn_id: TxnId,
    pub txn: Transaction,
    pub outcome: ApplyOutcome,
    pub cert: QuorumCert,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplicaStats {
    pub bad_envelopes: u64,
    pub replays_dropped: u64,
    pub bad_votes: u64,
    pub invalid_batches: u64,
    pub view_changes: u64,
}

#[derive(Debug, Clone)]
struct Decision {
    view: u64,
    digest: Digest,
    batch: Vec<Transaction>,
    commits: Vec<Signed<Vote>>,
}

#[derive(Debug, Default)]
struct SlotState {
    view: u64,
    /// Digest of the accepted proposal per view.
    proposals: BTreeMap<u64, Digest>,
    batches: HashMap<Digest, Vec<Transaction>>,
    prepares: BTreeMap<(u64, Digest), BTreeMap<NodeId, Signed<Vote>>>,
    commits: BTreeMap<(u64, Digest), BTreeMap<NodeId, Signed<Vote>>>,
    commit_sent: BTreeSet<u64>,
    prepared: Option<PreparedCert>,
    view_changes: BTreeMap<u64, BTreeMap<NodeId, Signed<ViewChange>>>,
    proposed: BTreeSet<u64>,
    timer_for: Option<u64>,
    decided: Option<Decision>,
}

/// Picks the certificate a new leader must re-propose: highest view first,
/// then lowest digest.
pub fn select_certificate<'a>(view_changes: impl IntoIterator<Item = &'a ViewChange>) -> Option<&'a PreparedCert> {
    view_changes
        .into_iter()
        .filter_map(|vc| vc.prepared.as_ref())
        .max_by(|a, b| a.view.cmp(&b.view).then_with(|| b.digest().cmp(&a.digest())))
}

pub struct Replica {
    keys: KeyPair,
    pki: Arc<Pki>,
    config: ReplicaConfig,
    quorum: usize,
    f: usize,
    validator: Arc<dyn CommitValidator>,
    ts: u64,
    seen: HashSet<(NodeId, u64)>,
    arrival: u64,
    pending: BTreeMap<u64, Transaction>,
    pending_ids: HashMap<TxnId, u64>,
    executed: HashMap<TxnId, u64>,
    log: Vec<LogEntry>,
    store: WriteOnceStore,
    next_exec: u64,
    slots: BTreeMap<u64, SlotState>,
    stats: ReplicaStats,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica")
            .field("id", &self.id())
            .field("next_exec", &self.next_exec)
            .field("log_len", &self.log.len())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl Replica {
    pub fn new(keys: KeyPair, pki: Arc<Pki>, config: ReplicaConfig, validator: Arc<dyn CommitValidator>) -> Self {
        Self {
            keys,
            pki,
            quorum: quorum_size(config.nodes),
            f: fault_tolerance(config.nodes),
            config,
            validator,
            ts: 0,
            seen: HashSet::new(),
            arrival: 0,
            pending: BTreeMap::new(),
            pending_ids: HashMap::new(),
            executed: HashMap::new(),
            log: Vec::new(),
            store: WriteOnceStore::new(),
            next_exec: 0,
            slots: BTreeMap::new(),
            stats: ReplicaStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.keys.owner()
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn pki(&self) -> &Arc<Pki> {
        &self.pki
    }

    pub fn config(&self) -> ReplicaConfig {
        self.config
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn store(&self) -> &WriteOnceStore {
        &self.store
    }

    pub fn stats(&self) -> ReplicaStats {
        self.stats
    }

    pub fn next_slot(&self) -> u64 {
        self.next_exec
    }

    /// View of the slot currently being decided.
    pub fn current_view(&self) -> u64 {
        self.slots.get(&self.next_exec).map_or(0, |st| st.view)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Log position of `id` if it has been executed here.
    pub fn executed_at(&self, id: &TxnId) -> Option<u64> {
        self.executed.get(id).copied()
    }

    pub fn leader(&self, slot: u64, view: u64) -> NodeId {
        NodeId::from_index((slot + view) % self.config.nodes as u64)
    }

    pub fn next_ts(&mut self) -> u64 {
        self.ts += 1;
        self.ts
    }

    pub fn handle(&mut self, input: Input) -> Vec<Output> {
        let mut out = Vec::new();
        match input {
            Input::Message(msg) => self.on_message(msg, &mut out),
            Input::Request(txn) => self.on_request(txn, &mut out),
            Input::Timer { slot, view } => self.on_timer(slot, view, &mut out),
        }
        out
    }

    fn broadcast(&mut self, body: Body, out: &mut Vec<Output>) {
        for i in 0..self.config.nodes {
            let to = NodeId::from_index(i as u64);
            if to == self.id() {
                continue;
            }
            let ts = self.next_ts();
            out.push(Output::Send {
                msg: NetworkMessage::seal(&self.keys, to, ts, body.clone()),
                extra_delay: 0,
            });
        }
    }

    fn valid_batch(&self, batch: &[Transaction]) -> bool {
        if batch.len() > MAX_BATCH {
            return false;
        }
        let mut ids = HashSet::new();
        batch.iter().all(|t| t.verify(&self.pki) && ids.insert(t.id()))
    }

    fn slot_mut(&mut self, slot: u64) -> &mut SlotState {
        self.slots.entry(slot).or_default()
    }

    fn on_request(&mut self, txn: Transaction, out: &mut Vec<Output>) {
        if !txn.verify(&self.pki) {
            return;
        }
        let id = txn.id();
        if self.executed.contains_key(&id) || self.pending_ids.contains_key(&id) {
            return;
        }
        self.arrival += 1;
        self.pending.insert(self.arrival, txn);
        self.pending_ids.insert(id, self.arrival);
        self.try_propose(out);
        self.maybe_arm_timer(out);
    }

    fn on_message(&mut self, msg: NetworkMessage, out: &mut Vec<Output>) {
        if msg.receiver != self.id() || !msg.verify(&self.pki) {
            self.stats.bad_envelopes += 1;
            return;
        }
        if !self.seen.insert((msg.sender, msg.ts)) {
            self.stats.replays_dropped += 1;
            return;
        }
        let sender = msg.sender;
        match msg.body {
            Body::PrePrepare { slot, view, batch } => self.on_pre_prepare(sender, slot, view, batch, out),
            Body::Vote(vote) => {
                if vote.signer != sender || !vote.verify(&self.pki) {
                    self.stats.bad_votes += 1;
                    return;
                }
                self.on_vote(vote, out);
            }
            Body::ViewChange(vc) => {
                if vc.signer != sender || !vc.verify(&self.pki) {
                    self.stats.bad_votes += 1;
                    return;
                }
                self.on_view_change(vc, out);
            }
            Body::NewView {
                slot,
                view,
                proofs,
                batch,
            } => self.on_new_view(sender, slot, view, proofs, batch, out),
            Body::Decided { slot, batch, commits } => self.on_decided(slot, batch, commits, out),
        }
    }

    fn on_pre_prepare(&mut self, from: NodeId, slot: u64, view: u64, batch: Vec<Transaction>, out: &mut Vec<Output>) {
        // Proposals in later views arrive through NEW-VIEW.
        if slot < self.next_exec || view != 0 || from != self.leader(slot, 0) {
            return;
        }
        let st = self.slot_mut(slot);
        if st.view != 0 || st.proposals.contains_key(&0) {
            return;
        }
        if !self.valid_batch(&batch) {
            self.stats.invalid_batches += 1;
            return;
        }
        self.accept_proposal(slot, 0, batch, out);
    }

    fn accept_proposal(&mut self, slot: u64, view: u64, batch: Vec<Transaction>, out: &mut Vec<Output>) {
        let digest = batch_digest(&batch);
        let st = self.slot_mut(slot);
        st.proposals.insert(view, digest);
        st.batches.entry(digest).or_insert(batch);
        let vote = self.keys.sign(Vote {
            phase: Phase::Prepare,
            slot,
            view,
            digest,
        });
        self.record_vote(vote.clone());
        self.broadcast(Body::Vote(vote), out);
        self.check_prepared(slot, view, digest, out);
        self.maybe_arm_timer(out);
    }

    fn record_vote(&mut self, vote: Signed<Vote>) {
        let v = vote.payload;
        let st = self.slot_mut(v.slot);
        match v.phase {
            Phase::Prepare => {
                st.prepares
                    .entry((v.view, v.digest))
                    .or_default()
                    .entry(vote.signer)
                    .or_insert(vote);
            }
            Phase::Commit => {
                st.commits
                    .entry((v.view, v.digest))
                    .or_default()
                    .entry(vote.signer)
                    .or_insert(vote);
            }
        }
    }

    fn on_vote(&mut self, vote: Signed<Vote>, out: &mut Vec<Output>) {
        let v = vote.payload;
        if v.slot < self.next_exec {
            return;
        }
        self.record_vote(vote);
        match v.phase {
            Phase::Prepare => self.check_prepared(v.slot, v.view, v.digest, out),
            Phase::Commit => self.check_committed(v.slot, v.view, v.digest, out),
        }
    }

    fn check_prepared(&mut self, slot: u64, view: u64, digest: Digest, out: &mut Vec<Output>) {
        let quorum = self.quorum;
        let Some(st) = self.slots.get_mut(&slot) else { return };
        if st.view != view || st.proposals.get(&view) != Some(&digest) || st.commit_sent.contains(&view) {
            return;
        }
        let Some(votes) = st.prepares.get(&(view, digest)) else {
            return;
        };
        if votes.len() < quorum {
            return;
        }
        let cert = PreparedCert {
            slot,
            view,
            batch: st.batches[&digest].clone(),
            prepares: votes.values().cloned().collect(),
        };
        st.prepared = Some(cert);
        st.commit_sent.insert(view);
        let vote = self.keys.sign(Vote {
            phase: Phase::Commit,
            slot,
            view,
            digest,
        });
        self.record_vote(vote.clone());
        self.broadcast(Body::Vote(vote), out);
        self.check_committed(slot, view, digest, out);
    }

    fn check_committed(&mut self, slot: u64, view: u64, digest: Digest, out: &mut Vec<Output>) {
        let quorum = self.quorum;
        let Some(st) = self.slots.get(&slot) else { return };
        if st.decided.is_some() {
            return;
        }
        let Some(votes) = st.commits.get(&(view, digest)) else {
            return;
        };
        if votes.len() < quorum {
            return;
        }
        let Some(batch) = st.batches.get(&digest) else { return };
        let batch = batch.clone();
        let commits = votes.values().cloned().collect();
        self.decide(slot, view, digest, batch, commits, out);
    }

    fn decide(
        &mut self,
        slot: u64,
        view: u64,
        digest: Digest,
        batch: Vec<Transaction>,
        commits: Vec<Signed<Vote>>,
        out: &mut Vec<Output>,
    ) {
        let announce = Body::Decided {
            slot,
            batch: batch.clone(),
            commits: commits.clone(),
        };
        self.slot_mut(slot).decided = Some(Decision {
            view,
            digest,
            batch,
            commits,
        });
        self.broadcast(announce, out);
        self.execute_ready();
        self.try_propose(out);
        self.maybe_arm_timer(out);
    }

    fn on_decided(&mut self, slot: u64, batch: Vec<Transaction>, commits: Vec<Signed<Vote>>, out: &mut Vec<Output>) {
        if slot < self.next_exec || self.slots.get(&slot).is_some_and(|st| st.decided.is_some()) {
            return;
        }
        let digest = batch_digest(&batch);
        let Some(view) = commit_quorum_view(slot, digest, &commits, &self.pki, self.quorum) else {
            self.stats.bad_votes += 1;
            return;
        };
        if !self.valid_batch(&batch) {
            self.stats.invalid_batches += 1;
            return;
        }
        self.decide(slot, view, digest, batch, commits, out);
    }

    fn execute_ready(&mut self) {
        while let Some(decision) = self.slots.get_mut(&self.next_exec).and_then(|st| st.decided.take()) {
            let slot = self.next_exec;
            for txn in decision.batch {
                let id = txn.id();
                if self.executed.contains_key(&id) || !txn.verify(&self.pki) {
                    continue;
                }
                let seq = self.log.len() as u64;
                let outcome = match self.validator.validate(&self.store, &txn) {
                    Err(reason) => ApplyOutcome::Rejected(reason),
                    Ok(()) => match self.store.set(&txn, seq) {
                        Ok(()) => ApplyOutcome::Applied,
                        Err(_) => ApplyOutcome::KeyExists,
                    },
                };
                self.executed.insert(id, seq);
                if let Some(arrival) = self.pending_ids.remove(&id) {
                    self.pending.remove(&arrival);
                }
                self.log.push(LogEntry {
                    seq,
                    txn_id: id,
                    txn,
                    outcome,
                    cert: QuorumCert {
                        slot,
                        view: decision.view,
                        digest: decision.digest,
                        signers: decision.commits.iter().map(|v| v.signer).collect(),
                    },
                });
            }
            self.slots.remove(&slot);
            self.next_exec += 1;
        }
    }

    fn next_batch(&self) -> Vec<Transaction> {
        self.pending
            .values()
            .take(self.config.batch_size.max(1))
            .cloned()
            .collect()
    }

    fn try_propose(&mut self, out: &mut Vec<Output>) {
        let slot = self.next_exec;
        if self.leader(slot, 0) != self.id() || self.pending.is_empty() {
            return;
        }
        let st = self.slot_mut(slot);
        if st.view != 0 || st.proposed.contains(&0) || st.proposals.contains_key(&0) {
            return;
        }
        st.proposed.insert(0);
        let batch = self.next_batch();
        self.broadcast(
            Body::PrePrepare {
                slot,
                view: 0,
                batch: batch.clone(),
            },
            out,
        );
        self.accept_proposal(slot, 0, batch, out);
    }

    fn busy(&self, slot: u64) -> bool {
        let pending = !self.pending.is_empty();
        self.slots
            .get(&slot)
            .map(|st| st.decided.is_none() && (pending || !st.proposals.is_empty() || st.view > 0))
            .unwrap_or(pending)
    }

    fn maybe_arm_timer(&mut self, out: &mut Vec<Output>) {
        let slot = self.next_exec;
        if !self.busy(slot) {
            return;
        }
        let base = self.config.base_timeout.max(1);
        let st = self.slot_mut(slot);
        if st.timer_for == Some(st.view) {
            return;
        }
        st.timer_for = Some(st.view);
        out.push(Output::Timer {
            slot,
            view: st.view,
            after: base << st.view.min(16),
        });
    }

    fn on_timer(&mut self, slot: u64, view: u64, out: &mut Vec<Output>) {
        if slot != self.next_exec {
            return;
        }
        let busy = self.busy(slot);
        let st = self.slot_mut(slot);
        if st.timer_for == Some(view) {
            st.timer_for = None;
        }
        if st.decided.is_some() || st.view != view || !busy {
            self.maybe_arm_timer(out);
            return;
        }
        self.start_view_change(slot, view + 1, out);
    }

    fn start_view_change(&mut self, slot: u64, new_view: u64, out: &mut Vec<Output>) {
        self.stats.view_changes += 1;
        let id = self.id();
        let st = self.slot_mut(slot);
        st.view = new_view;
        let prepared = st.prepared.clone();
        let vc = self.keys.sign(ViewChange {
            slot,
            new_view,
            prepared,
        });
        self.slot_mut(slot)
            .view_changes
            .entry(new_view)
            .or_default()
            .insert(id, vc.clone());
        self.broadcast(Body::ViewChange(vc), out);
        self.maybe_arm_timer(out);
        self.check_new_view(slot, new_view, out);
    }

    fn on_view_change(&mut self, vc: Signed<ViewChange>, out: &mut Vec<Output>) {
        let slot = vc.payload.slot;
        let new_view = vc.payload.new_view;
        if slot < self.next_exec || new_view == 0 {
            return;
        }
        if let Some(cert) = &vc.payload.prepared {
            if cert.slot != slot || cert.view >= new_view || !cert.is_valid(&self.pki, self.quorum) {
                self.stats.bad_votes += 1;
                return;
            }
        }
        let join_threshold = self.f + 1;
        let st = self.slot_mut(slot);
        st.view_changes
            .entry(new_view)
            .or_default()
            .entry(vc.signer)
            .or_insert(vc);

        let current = st.view;
        let mut ahead: BTreeSet<NodeId> = BTreeSet::new();
        let mut smallest_ahead = None;
        for (view, senders) in st.view_changes.range(current + 1..) {
            if smallest_ahead.is_none() {
                smallest_ahead = Some(*view);
            }
            ahead.extend(senders.keys().copied());
        }
        if ahead.len() >= join_threshold {
            if let Some(target) = smallest_ahead {
                self.start_view_change(slot, target, out);
                return;
            }
        }
        let view = self.slot_mut(slot).view;
        self.check_new_view(slot, view, out);
    }

    fn check_new_view(&mut self, slot: u64, view: u64, out: &mut Vec<Output>) {
        if view == 0 || self.leader(slot, view) != self.id() {
            return;
        }
        let quorum = self.quorum;
        let fallback = self.next_batch();
        let st = self.slot_mut(slot);
        if st.view != view || st.proposed.contains(&view) || st.proposals.contains_key(&view) {
            return;
        }
        let Some(vcs) = st.view_changes.get(&view) else { return };
        if vcs.len() < quorum {
            return;
        }
        let proofs: Vec<Signed<ViewChange>> = vcs.values().cloned().collect();
        let batch = select_certificate(proofs.iter().map(|p| &p.payload))
            .map(|cert| cert.batch.clone())
            .unwrap_or(fallback);
        st.proposed.insert(view);
        self.broadcast(
            Body::NewView {
                slot,
                view,
                proofs,
                batch: batch.clone(),
            },
            out,
        );
        self.accept_proposal(slot, view, batch, out);
    }

    fn valid_new_view(&self, slot: u64, view: u64, proofs: &[Signed<ViewChange>], batch: &[Transaction]) -> bool {
        let mut signers = BTreeSet::new();
        for p in proofs {
            let vc = &p.payload;
            if vc.slot != slot || vc.new_view != view || !p.verify(&self.pki) {
                return false;
            }
            if let Some(cert) = &vc.prepared {
                if cert.slot != slot || cert.view >= view || !cert.is_valid(&self.pki, self.quorum) {
                    return false;
                }
            }
            signers.insert(p.signer);
        }
        if signers.len() < self.quorum || !self.valid_batch(batch) {
            return false;
        }
        match select_certificate(proofs.iter().map(|p| &p.payload)) {
            Some(cert) => cert.digest() == batch_digest(batch),
            None => true,
        }
    }

    fn on_new_view(
        &mut self,
        from: NodeId,
        slot: u64,
        view: u64,
        proofs: Vec<Signed<ViewChange>>,
        batch: Vec<Transaction>,
        out: &mut Vec<Output>,
    ) {
        if slot < self.next_exec || view == 0 || from != self.leader(slot, view) {
            return;
        }
        {
            let st = self.slot_mut(slot);
            if view < st.view || st.proposals.contains_key(&view) {
                return;
            }
        }
        if !self.valid_new_view(slot, view, &proofs, &batch) {
            self.stats.invalid_batches += 1;
            return;
        }
        let st = self.slot_mut(slot);
        if view > st.view {
            st.view = view;
        }
        self.accept_proposal(slot, view, batch, out);
    }
}
