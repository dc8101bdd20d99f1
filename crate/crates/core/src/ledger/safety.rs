//! Post-run checks over honest replicas: prefix consistency, write-once and
//! signature validity.

use std::collections::HashMap;
use std::fmt;

use crate::crypto::Pki;

use super::message::NodeId;
use super::replica::{ApplyOutcome, LogEntry};
use super::store::WriteOnceStore;
use super::Ledger;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SafetyViolation {
    Divergence { a: NodeId, b: NodeId, seq: u64 },
    WriteOnce { node: NodeId, seq: u64 },
    StoreMismatch { node: NodeId },
    InvalidSignature { node: NodeId, seq: u64 },
}

impl fmt::Display for SafetyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyViolation::Divergence { a, b, seq } => write!(f, "{a} and {b} differ at seq {seq}"),
            SafetyViolation::WriteOnce { node, seq } => write!(f, "{node} overwrote a key at seq {seq}"),
            SafetyViolation::StoreMismatch { node } => write!(f, "{node} store disagrees with its log"),
            SafetyViolation::InvalidSignature { node, seq } => {
                write!(f, "{node} committed an invalid signature at seq {seq}")
            }
        }
    }
}

/// Every pair of logs agrees on their common prefix.
pub fn prefix_consistency(logs: &[(NodeId, &[LogEntry])]) -> Vec<SafetyViolation> {
    let mut out = Vec::new();
    for (i, (a, la)) in logs.iter().enumerate() {
        for (b, lb) in &logs[i + 1..] {
            if let Some(seq) = la
                .iter()
                .zip(lb.iter())
                .position(|(x, y)| x.txn_id != y.txn_id || x.outcome != y.outcome)
            {
                out.push(SafetyViolation::Divergence {
                    a: *a,
                    b: *b,
                    seq: seq as u64,
                });
            }
        }
    }
    out
}

/// Replays `log` independently of the store: each key is applied at most
/// once, every refusal names a key already applied, and the store holds
/// exactly the first value of every applied key.
pub fn write_once(node: NodeId, log: &[LogEntry], store: &WriteOnceStore) -> Vec<SafetyViolation> {
    let mut out = Vec::new();
    let mut first: HashMap<&[u8], &[u8]> = HashMap::new();
    for entry in log {
        let key = entry.txn.key.as_slice();
        match entry.outcome {
            ApplyOutcome::Applied => {
                if first.insert(key, entry.txn.value.as_slice()).is_some() {
                    out.push(SafetyViolation::WriteOnce { node, seq: entry.seq });
                }
            }
            ApplyOutcome::KeyExists => {
                if !first.contains_key(key) {
                    out.push(SafetyViolation::WriteOnce { node, seq: entry.seq });
                }
            }
            ApplyOutcome::Rejected(_) => {}
        }
    }
    let consistent = store.len() == first.len() && first.iter().all(|(k, v)| store.get(k) == Some(*v));
    if !consistent {
        out.push(SafetyViolation::StoreMismatch { node });
    }
    out
}

pub fn signatures(node: NodeId, log: &[LogEntry], pki: &Pki) -> Vec<SafetyViolation> {
    log.iter()
        .filter(|e| !e.txn.verify(pki))
        .map(|e| SafetyViolation::InvalidSignature { node, seq: e.seq })
        .collect()
}

/// All checks over the ledger's honest replicas.
pub fn audit(ledger: &Ledger) -> Vec<SafetyViolation> {
    let logs = ledger.honest_logs();
    let mut out = prefix_consistency(&logs);
    for (node, log) in &logs {
        out.extend(write_once(*node, log, ledger.store(*node)));
        out.extend(signatures(*node, log, ledger.pki()));
    }
    out
}
