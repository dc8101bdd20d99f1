//! Replicated write-once ledger over a simulated asynchronous network.

pub mod byzantine;
pub mod export;
pub mod message;
pub mod network;
pub mod replica;
pub mod safety;
pub mod store;
pub mod txn;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, Pki};
use crate::rng::{stream, SimRng};

pub use byzantine::{ByzantineNode, ByzantineStrategy};
pub use message::{NetworkMessage, NodeId};
pub use network::{DeliveryPolicy, EventQueue, SimTime};
pub use replica::{
    fault_tolerance, quorum_size, AcceptAll, ApplyOutcome, CommitValidator, Input, LogEntry, Output, QuorumCert,
    Replica, ReplicaConfig,
};
pub use store::{KeyExists, StoreEntry, WriteOnceStore};
pub use txn::{Digest, Transaction, TxnId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transaction signature does not verify against submitter {0}")]
    RejectedSignature(NodeId),
    #[error("transaction {0:?} not applied at every honest node within {1} events")]
    Stalled(TxnId, u64),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub nodes: usize,
    pub policy: DeliveryPolicy,
    pub seed: u64,
    pub batch_size: usize,
    /// First-view timeout; 0 derives one from the delivery policy.
    pub base_timeout: SimTime,
    /// Interval after which a client re-broadcasts an unapplied transaction;
    /// 0 derives one from the delivery policy.
    pub client_retry: SimTime,
    pub byzantine: BTreeMap<NodeId, ByzantineStrategy>,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            policy: DeliveryPolicy::default(),
            seed: 0,
            batch_size: 16,
            base_timeout: 0,
            client_retry: 0,
            byzantine: BTreeMap::new(),
        }
    }
}

impl LedgerConfig {
    pub fn new(nodes: usize, seed: u64) -> Self {
        Self {
            nodes,
            seed,
            ..Self::default()
        }
    }

    pub fn with_policy(mut self, policy: DeliveryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_byzantine(mut self, node: NodeId, strategy: ByzantineStrategy) -> Self {
        self.byzantine.insert(node, strategy);
        self
    }

    fn timeout(&self) -> SimTime {
        if self.base_timeout > 0 {
            self.base_timeout
        } else {
            8 * self.policy.typical_delay()
        }
    }

    fn retry(&self) -> SimTime {
        if self.client_retry > 0 {
            self.client_retry
        } else {
            40 * self.policy.max_delay()
        }
    }
}

#[allow(clippy::large_enum_variant)]
enum Node {
    Honest(Replica),
    Byzantine(ByzantineNode),
}

impl Node {
    fn replica(&self) -> &Replica {
        match self {
            Node::Honest(r) => r,
            Node::Byzantine(b) => b.replica(),
        }
    }

    fn handle(&mut self, input: Input) -> Vec<Output> {
        match self {
            Node::Honest(r) => r.handle(input),
            Node::Byzantine(b) => b.handle(input),
        }
    }
}

#[derive(Debug)]
enum Event {
    Deliver(NetworkMessage),
    Request { to: NodeId, txn: Transaction },
    Timer { node: NodeId, slot: u64, view: u64 },
    Retry(TxnId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerStats {
    pub events: u64,
    pub messages: u64,
    pub client_retries: u64,
}

/// `N` replicas, their clients, and the network between them, driven as a
/// deterministic discrete-event simulation.
pub struct Ledger {
    config: LedgerConfig,
    pki: Arc<Pki>,
    nodes: Vec<Node>,
    queue: EventQueue<Event>,
    now: SimTime,
    net_rng: SimRng,
    submitted: BTreeMap<TxnId, Transaction>,
    stats: LedgerStats,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("nodes", &self.config.nodes)
            .field("now", &self.now)
            .field("queued", &self.queue.len())
            .finish()
    }
}

impl Ledger {
    /// Builds the replicas. `keys[i]` is node `i`'s key pair; the ledger owns
    /// the copies its nodes sign with.
    pub fn new(
        config: LedgerConfig,
        keys: &[KeyPair],
        validator: Arc<dyn CommitValidator>,
    ) -> Result<Self, LedgerError> {
        if config.nodes == 0 || keys.len() != config.nodes {
            return Err(LedgerError::Config(format!(
                "{} key pairs for {} nodes",
                keys.len(),
                config.nodes
            )));
        }
        if let Some(bad) = config.byzantine.keys().find(|n| n.index() >= config.nodes) {
            return Err(LedgerError::Config(format!("byzantine node {bad} out of range")));
        }
        let pki = Arc::new(Pki::new(keys).map_err(|e| LedgerError::Config(e.to_string()))?);
        let replica_config = ReplicaConfig {
            nodes: config.nodes,
            batch_size: config.batch_size.max(1),
            base_timeout: config.timeout(),
        };
        let hold_back = 20 * config.policy.max_delay();
        let nodes = keys
            .iter()
            .map(|kp| {
                let replica = Replica::new(kp.clone(), pki.clone(), replica_config, validator.clone());
                match config.byzantine.get(&kp.owner()) {
                    None => Node::Honest(replica),
                    Some(&strategy) => Node::Byzantine(ByzantineNode::new(
                        replica,
                        strategy,
                        stream(config.seed, "byzantine", kp.owner().0 as u64),
                        hold_back,
                    )),
                }
            })
            .collect();
        Ok(Self {
            net_rng: stream(config.seed, "network", 0),
            config,
            pki,
            nodes,
            queue: EventQueue::default(),
            now: 0,
            submitted: BTreeMap::new(),
            stats: LedgerStats::default(),
        })
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn pki(&self) -> &Arc<Pki> {
        &self.pki
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> LedgerStats {
        self.stats
    }

    pub fn is_byzantine(&self, node: NodeId) -> bool {
        self.config.byzantine.contains_key(&node)
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.config.nodes as u64)
            .map(NodeId::from_index)
            .filter(|n| !self.is_byzantine(*n))
    }

    pub fn replica(&self, node: NodeId) -> &Replica {
        self.nodes[node.index()].replica()
    }

    pub fn log(&self, node: NodeId) -> &[LogEntry] {
        self.replica(node).log()
    }

    pub fn store(&self, node: NodeId) -> &WriteOnceStore {
        self.replica(node).store()
    }

    /// Committed logs of the honest replicas, indexed by node.
    pub fn honest_logs(&self) -> Vec<(NodeId, &[LogEntry])> {
        self.honest_nodes().map(|n| (n, self.log(n))).collect()
    }

    /// Broadcasts `txn` to every node, as a client does.
    pub fn submit(&mut self, txn: Transaction) -> Result<TxnId, LedgerError> {
        if !txn.verify(&self.pki) {
            return Err(LedgerError::RejectedSignature(txn.submitter));
        }
        Ok(self.submit_unchecked(txn))
    }

    /// Broadcasts without the client-side signature check. Replicas still
    /// discard the transaction; used to exercise that path.
    pub fn submit_unchecked(&mut self, txn: Transaction) -> TxnId {
        let id = txn.id();
        self.broadcast_request(&txn);
        if self.submitted.insert(id, txn).is_none() {
            self.queue.push(self.now + self.config.retry(), Event::Retry(id));
        }
        id
    }

    fn broadcast_request(&mut self, txn: &Transaction) {
        for i in 0..self.config.nodes {
            let at = self.now + self.config.policy.sample_delay(&mut self.net_rng);
            self.queue.push(
                at,
                Event::Request {
                    to: NodeId::from_index(i as u64),
                    txn: txn.clone(),
                },
            );
        }
    }

    /// Whether every honest node has executed `id`.
    pub fn applied_everywhere(&self, id: &TxnId) -> bool {
        self.honest_nodes().all(|n| self.replica(n).executed_at(id).is_some())
    }

    /// Log entry for `id` at `node`, if executed there.
    pub fn entry(&self, node: NodeId, id: &TxnId) -> Option<&LogEntry> {
        let replica = self.replica(node);
        replica.executed_at(id).map(|seq| &replica.log()[seq as usize])
    }

    /// Processes the next event. Returns false when nothing is scheduled.
    pub fn step(&mut self) -> bool {
        let Some((at, event)) = self.queue.pop() else {
            return false;
        };
        self.now = at;
        self.stats.events += 1;
        match event {
            Event::Deliver(msg) => {
                self.stats.messages += 1;
                let to = msg.receiver;
                self.dispatch(to, Input::Message(msg));
            }
            Event::Request { to, txn } => self.dispatch(to, Input::Request(txn)),
            Event::Timer { node, slot, view } => self.dispatch(node, Input::Timer { slot, view }),
            Event::Retry(id) => {
                let txn = self.submitted[&id].clone();
                // A client only keeps retrying what it could have signed.
                if !self.applied_everywhere(&id) && txn.verify(&self.pki) {
                    self.stats.client_retries += 1;
                    self.broadcast_request(&txn);
                    self.queue.push(self.now + self.config.retry(), Event::Retry(id));
                }
            }
        }
        true
    }

    fn dispatch(&mut self, node: NodeId, input: Input) {
        let Some(target) = self.nodes.get_mut(node.index()) else {
            return;
        };
        for out in target.handle(input) {
            match out {
                Output::Send { msg, extra_delay } => {
                    let at = self.now + self.config.policy.sample_delay(&mut self.net_rng) + extra_delay;
                    self.queue.push(at, Event::Deliver(msg));
                }
                Output::Timer { slot, view, after } => {
                    self.queue.push(self.now + after, Event::Timer { node, slot, view });
                }
            }
        }
    }

    /// Runs until `done` holds or `max_events` have been processed.
    pub fn run_until(&mut self, max_events: u64, mut done: impl FnMut(&Self) -> bool) -> bool {
        for _ in 0..max_events {
            if done(self) {
                return true;
            }
            if !self.step() {
                return done(self);
            }
        }
        done(self)
    }

    /// Runs until every honest node has executed `id`.
    pub fn run_until_applied(&mut self, id: TxnId, max_events: u64) -> Result<(), LedgerError> {
        if self.run_until(max_events, |l| l.applied_everywhere(&id)) {
            Ok(())
        } else {
            Err(LedgerError::Stalled(id, max_events))
        }
    }

    /// Runs until the event queue drains or `max_events` is reached. Returns
    /// whether it drained.
    pub fn run_until_quiescent(&mut self, max_events: u64) -> bool {
        self.run_until(max_events, |l| l.queue.is_empty())
    }
}
