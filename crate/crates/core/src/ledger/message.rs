//! Protocol messages and their signed envelope.

use crate::codec::{Canonical, Encoder};
use crate::crypto::{KeyPair, PartyId, Pki, Signature, Signed};

use super::txn::{batch_digest, Digest, Transaction};

pub type NodeId = PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Prepare,
    Commit,
}

/// A replica's vote for `digest` in `(slot, view)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vote {
    pub phase: Phase,
    pub slot: u64,
    pub view: u64,
    pub digest: Digest,
}

impl Canonical for Vote {
    fn encode(&self, out: &mut Encoder) {
        out.u8(match self.phase {
            Phase::Prepare => 0,
            Phase::Commit => 1,
        })
        .u64(self.slot)
        .u64(self.view)
        .item(&self.digest);
    }
}

/// Proof that a quorum prepared `batch` in `(slot, view)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedCert {
    pub slot: u64,
    pub view: u64,
    pub batch: Vec<Transaction>,
    pub prepares: Vec<Signed<Vote>>,
}

impl PreparedCert {
    pub fn digest(&self) -> Digest {
        batch_digest(&self.batch)
    }

    /// Checks the batch digest and that at least `quorum` distinct replicas
    /// signed a matching prepare.
    pub fn is_valid(&self, pki: &Pki, quorum: usize) -> bool {
        let digest = self.digest();
        let mut voters: Vec<NodeId> = Vec::new();
        for vote in &self.prepares {
            let v = &vote.payload;
            if v.phase != Phase::Prepare
                || v.slot != self.slot
                || v.view != self.view
                || v.digest != digest
                || !vote.verify(pki)
            {
                return false;
            }
            if !voters.contains(&vote.signer) {
                voters.push(vote.signer);
            }
        }
        voters.len() >= quorum
    }
}

impl Canonical for PreparedCert {
    fn encode(&self, out: &mut Encoder) {
        out.u64(self.slot).u64(self.view).seq(&self.batch).seq(&self.prepares);
    }
}

/// Checks that `commits` holds matching commit votes for `(slot, digest)`
/// from at least `quorum` distinct replicas and returns their view.
pub fn commit_quorum_view(
    slot: u64,
    digest: Digest,
    commits: &[Signed<Vote>],
    pki: &Pki,
    quorum: usize,
) -> Option<u64> {
    let view = commits.first()?.payload.view;
    let mut voters: Vec<NodeId> = Vec::new();
    for vote in commits {
        let v = &vote.payload;
        if v.phase != Phase::Commit || v.slot != slot || v.view != view || v.digest != digest || !vote.verify(pki) {
            return None;
        }
        if !voters.contains(&vote.signer) {
            voters.push(vote.signer);
        }
    }
    (voters.len() >= quorum).then_some(view)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewChange {
    pub slot: u64,
    pub new_view: u64,
    pub prepared: Option<PreparedCert>,
}

impl Canonical for ViewChange {
    fn encode(&self, out: &mut Encoder) {
        out.u64(self.slot).u64(self.new_view);
        match &self.prepared {
            None => {
                out.u8(0);
            }
            Some(cert) => {
                out.u8(1).item(cert);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    PrePrepare {
        slot: u64,
        view: u64,
        batch: Vec<Transaction>,
    },
    Vote(Signed<Vote>),
    ViewChange(Signed<ViewChange>),
    NewView {
        slot: u64,
        view: u64,
        proofs: Vec<Signed<ViewChange>>,
        batch: Vec<Transaction>,
    },
    /// A decided slot with the commit quorum that decided it, for replicas
    /// that missed the batch or some of the votes.
    Decided {
        slot: u64,
        batch: Vec<Transaction>,
        commits: Vec<Signed<Vote>>,
    },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::PrePrepare { .. } => "pre-prepare",
            Body::Vote(v) if v.payload.phase == Phase::Prepare => "prepare",
            Body::Vote(_) => "commit",
            Body::ViewChange(_) => "view-change",
            Body::NewView { .. } => "new-view",
            Body::Decided { .. } => "decided",
        }
    }

    pub fn slot(&self) -> u64 {
        match self {
            Body::PrePrepare { slot, .. } | Body::NewView { slot, .. } | Body::Decided { slot, .. } => *slot,
            Body::Vote(v) => v.payload.slot,
            Body::ViewChange(v) => v.payload.slot,
        }
    }
}

impl Canonical for Body {
    fn encode(&self, out: &mut Encoder) {
        match self {
            Body::PrePrepare { slot, view, batch } => {
                out.u8(0).u64(*slot).u64(*view).seq(batch);
            }
            Body::Vote(v) => {
                out.u8(1).item(v);
            }
            Body::ViewChange(v) => {
                out.u8(2).item(v);
            }
            Body::NewView {
                slot,
                view,
                proofs,
                batch,
            } => {
                out.u8(3).u64(*slot).u64(*view).seq(proofs).seq(batch);
            }
            Body::Decided { slot, batch, commits } => {
                out.u8(4).u64(*slot).seq(batch).seq(commits);
            }
        }
    }
}

/// `<sender, receiver, ts, body>` signed by the sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkMessage {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub ts: u64,
    pub body: Body,
    pub signature: Signature,
}

fn envelope_bytes(sender: NodeId, receiver: NodeId, ts: u64, body: &Body) -> Vec<u8> {
    let body_digest = Digest::of(&body.to_canonical());
    let mut e = Encoder::default();
    e.str("envelope")
        .item(&sender)
        .item(&receiver)
        .u64(ts)
        .item(&body_digest);
    e.into_bytes()
}

impl NetworkMessage {
    pub fn seal(keys: &KeyPair, receiver: NodeId, ts: u64, body: Body) -> Self {
        let signature = keys.sign_bytes(&envelope_bytes(keys.owner(), receiver, ts, &body));
        Self {
            sender: keys.owner(),
            receiver,
            ts,
            body,
            signature,
        }
    }

    pub fn verify(&self, pki: &Pki) -> bool {
        pki.verify(
            self.sender,
            &envelope_bytes(self.sender, self.receiver, self.ts, &self.body),
            &self.signature,
        )
    }
}
