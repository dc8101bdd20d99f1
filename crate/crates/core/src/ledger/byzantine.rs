//! Byzantine replica behaviours.
//!
//! A byzantine node runs the honest state machine for its own bookkeeping and
//! then rewrites what it sends. It holds only its own key pair and the public
//! registry, so anything it fabricates is either signed as itself or carries
//! a signature that fails verification.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, PartyId};
use crate::rng::SimRng;

use super::message::{Body, NetworkMessage, Vote};
use super::network::SimTime;
use super::replica::{Input, Output, Replica};
use super::txn::{Digest, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ByzantineStrategy {
    /// Sends nothing.
    Silent,
    /// Tells odd-numbered replicas something different from the rest.
    Equivocate,
    /// Holds back everything addressed to half of the replicas.
    DelaySelective,
    /// Forged transactions, broken signatures and replayed messages.
    CorruptPayload,
}

impl ByzantineStrategy {
    pub const ALL: [ByzantineStrategy; 4] = [
        ByzantineStrategy::Silent,
        ByzantineStrategy::Equivocate,
        ByzantineStrategy::DelaySelective,
        ByzantineStrategy::CorruptPayload,
    ];
}

pub struct ByzantineNode {
    inner: Replica,
    strategy: ByzantineStrategy,
    rng: SimRng,
    hold_back: SimTime,
    sent: Vec<NetworkMessage>,
    forged: u64,
}

impl std::fmt::Debug for ByzantineNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ByzantineNode")
            .field("id", &self.inner.id())
            .field("strategy", &self.strategy)
            .finish()
    }
}

impl ByzantineNode {
    /// `hold_back` is the extra latency used by `DelaySelective`.
    pub fn new(inner: Replica, strategy: ByzantineStrategy, rng: SimRng, hold_back: SimTime) -> Self {
        Self {
            inner,
            strategy,
            rng,
            hold_back,
            sent: Vec::new(),
            forged: 0,
        }
    }

    pub fn strategy(&self) -> ByzantineStrategy {
        self.strategy
    }

    pub fn replica(&self) -> &Replica {
        &self.inner
    }

    pub fn handle(&mut self, input: Input) -> Vec<Output> {
        let outputs = self.inner.handle(input);
        let mut result = Vec::with_capacity(outputs.len());
        for out in outputs {
            match out {
                Output::Timer { .. } => result.push(out),
                Output::Send { msg, extra_delay } => self.rewrite(msg, extra_delay, &mut result),
            }
        }
        result
    }

    fn keys(&self) -> &KeyPair {
        self.inner.keys()
    }

    fn reseal(&self, msg: &NetworkMessage, body: Body) -> NetworkMessage {
        NetworkMessage::seal(self.keys(), msg.receiver, msg.ts, body)
    }

    fn rewrite(&mut self, msg: NetworkMessage, extra_delay: SimTime, out: &mut Vec<Output>) {
        match self.strategy {
            ByzantineStrategy::Silent => {}
            ByzantineStrategy::Equivocate => {
                let msg = if msg.receiver.0 % 2 == 1 {
                    let body = self.equivocal_body(&msg.body);
                    self.reseal(&msg, body)
                } else {
                    msg
                };
                out.push(Output::Send { msg, extra_delay });
            }
            ByzantineStrategy::DelaySelective => {
                let extra = if msg.receiver.0.is_multiple_of(2) {
                    self.hold_back
                } else {
                    0
                };
                out.push(Output::Send {
                    msg,
                    extra_delay: extra_delay + extra,
                });
            }
            ByzantineStrategy::CorruptPayload => {
                let body = self.corrupted_body(&msg.body);
                let mut forged = self.reseal(&msg, body);
                if msg.ts.is_multiple_of(5) {
                    forged.signature = forged.signature.corrupted();
                }
                if !self.sent.is_empty() && self.rng.gen_bool(0.2) {
                    let old = self.sent[self.rng.gen_range(0..self.sent.len())].clone();
                    out.push(Output::Send { msg: old, extra_delay });
                }
                if self.sent.len() < 256 {
                    self.sent.push(forged.clone());
                }
                out.push(Output::Send {
                    msg: forged,
                    extra_delay,
                });
            }
        }
    }

    fn junk_txn(&mut self) -> Transaction {
        self.forged += 1;
        let value: u64 = self.rng.gen();
        Transaction::signed(
            self.keys(),
            u64::MAX - self.forged,
            format!("junk/{}", self.forged).into_bytes(),
            value.to_le_bytes().to_vec(),
        )
    }

    /// A transaction attributed to another party but signed with this node's
    /// own key, so its signatures fail against the claimed submitter.
    fn impersonating_txn(&mut self) -> Transaction {
        let mut t = self.junk_txn();
        let n = self.inner.config().nodes as u32;
        t.submitter = PartyId((self.inner.id().0 + 1) % n.max(1));
        t
    }

    fn alternate_batch(&mut self, batch: &[Transaction]) -> Vec<Transaction> {
        if batch.len() > 1 {
            batch.iter().rev().cloned().collect()
        } else {
            let mut alt = batch.to_vec();
            alt.push(self.junk_txn());
            alt
        }
    }

    fn equivocal_body(&mut self, body: &Body) -> Body {
        match body {
            Body::PrePrepare { slot, view, batch } => Body::PrePrepare {
                slot: *slot,
                view: *view,
                batch: self.alternate_batch(batch),
            },
            Body::NewView {
                slot,
                view,
                proofs,
                batch,
            } => Body::NewView {
                slot: *slot,
                view: *view,
                proofs: proofs.clone(),
                batch: self.alternate_batch(batch),
            },
            Body::Vote(v) => {
                let mut bytes = v.payload.digest.0.to_vec();
                bytes.extend_from_slice(b"equivocate");
                Body::Vote(self.keys().sign(Vote {
                    digest: Digest::of(&bytes),
                    ..v.payload
                }))
            }
            Body::Decided { slot, batch, commits } => Body::Decided {
                slot: *slot,
                batch: self.alternate_batch(batch),
                commits: commits.clone(),
            },
            Body::ViewChange(_) => body.clone(),
        }
    }

    fn corrupted_body(&mut self, body: &Body) -> Body {
        let with_forgery = |batch: &[Transaction], this: &mut Self| {
            let mut b = batch.to_vec();
            b.push(this.impersonating_txn());
            b
        };
        match body {
            Body::PrePrepare { slot, view, batch } => Body::PrePrepare {
                slot: *slot,
                view: *view,
                batch: with_forgery(batch, self),
            },
            Body::NewView {
                slot,
                view,
                proofs,
                batch,
            } => Body::NewView {
                slot: *slot,
                view: *view,
                proofs: proofs.clone(),
                batch: with_forgery(batch, self),
            },
            Body::Decided { slot, batch, commits } => Body::Decided {
                slot: *slot,
                batch: with_forgery(batch, self),
                commits: commits.clone(),
            },
            Body::Vote(v) => {
                let mut v = v.clone();
                v.signature = v.signature.corrupted();
                Body::Vote(v)
            }
            Body::ViewChange(vc) => {
                let mut vc = vc.clone();
                vc.signature = vc.signature.corrupted();
                Body::ViewChange(vc)
            }
        }
    }
}
