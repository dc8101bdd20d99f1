//! Write-once key-value state.

use std::collections::HashMap;

use thiserror::Error;

use crate::crypto::{PartyId, Signature};

use super::txn::{Digest, Transaction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("key already set at commit sequence {existing_seq}")]
pub struct KeyExists {
    pub existing_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEntry {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub submitter: PartyId,
    /// Position of the setting transaction in the committed log.
    pub seq: u64,
    pub key_signature: Signature,
    pub value_signature: Signature,
}

/// A key, once set, is never modified or removed. Iteration follows commit
/// order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteOnceStore {
    index: HashMap<Vec<u8>, usize>,
    entries: Vec<StoreEntry>,
}

impl WriteOnceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `txn`'s write. A second write to the same key fails and leaves
    /// the store unchanged.
    pub fn set(&mut self, txn: &Transaction, seq: u64) -> Result<(), KeyExists> {
        if let Some(&at) = self.index.get(&txn.key) {
            return Err(KeyExists {
                existing_seq: self.entries[at].seq,
            });
        }
        self.index.insert(txn.key.clone(), self.entries.len());
        self.entries.push(StoreEntry {
            key: txn.key.clone(),
            value: txn.value.clone(),
            submitter: txn.submitter,
            seq,
            key_signature: txn.key_signature,
            value_signature: txn.value_signature,
        });
        Ok(())
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.entry(key).map(|e| e.value.as_slice())
    }

    pub fn entry(&self, key: &[u8]) -> Option<&StoreEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoreEntry> {
        self.entries.iter()
    }

    /// Digest over the full contents in commit order.
    pub fn state_digest(&self) -> Digest {
        let mut e = crate::codec::Encoder::default();
        for entry in &self.entries {
            e.bytes(&entry.key)
                .bytes(&entry.value)
                .item(&entry.submitter)
                .u64(entry.seq);
        }
        Digest::of(&e.into_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_parties;
    use proptest::prelude::*;

    fn txn(nonce: u64, key: &[u8], value: &[u8]) -> Transaction {
        let kps = generate_parties(1, 3);
        Transaction::signed(&kps[0], nonce, key.to_vec(), value.to_vec())
    }

    #[test]
    fn first_write_wins() {
        let mut s = WriteOnceStore::new();
        s.set(&txn(0, b"k", b"v1"), 0).unwrap();
        assert_eq!(s.set(&txn(1, b"k", b"v2"), 1), Err(KeyExists { existing_seq: 0 }));
        assert_eq!(s.get(b"k"), Some(&b"v1"[..]));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn absent_key_reads_none() {
        let s = WriteOnceStore::new();
        assert_eq!(s.get(b"missing"), None);
    }

    proptest! {
        // Any interleaving of writes: each key ends up holding the value of
        // its first write, and identical sequences give identical stores.
        #[test]
        fn first_write_wins_under_interleavings(ops in proptest::collection::vec((0u8..6, any::<u8>()), 0..60)) {
            let mut s = WriteOnceStore::new();
            let mut replica = WriteOnceStore::new();
            let mut first: HashMap<u8, u8> = HashMap::new();
            for (seq, (k, v)) in ops.iter().enumerate() {
                let t = txn(seq as u64, &[*k], &[*v]);
                let r = s.set(&t, seq as u64);
                let _ = replica.set(&t, seq as u64);
                prop_assert_eq!(r.is_ok(), !first.contains_key(k));
                first.entry(*k).or_insert(*v);
            }
            for (k, v) in &first {
                prop_assert_eq!(s.get(&[*k]), Some(&[*v][..]));
            }
            prop_assert_eq!(s.state_digest(), replica.state_digest());
        }
    }
}
