use std::fmt;

use sha2::{Digest as _, Sha256};

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};
use crate::crypto::{KeyPair, PartyId, Pki, Signature};

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Canonical for Digest {
    fn encode(&self, out: &mut Encoder) {
        out.bytes(&self.0);
    }
}

impl Decode for Digest {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let b = input.bytes()?;
        Ok(Self(b.try_into().map_err(|_| DecodeError::UnknownTag {
            what: "digest length",
            tag: 0,
        })?))
    }
}

pub type TxnId = Digest;

/// A signed `set(key, value)` request.
///
/// `key` is the canonical (unsigned) key tuple; its signature travels next to
/// it and is checked again when the transaction is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub submitter: PartyId,
    /// Client-side counter; distinguishes repeated attempts at the same write.
    pub nonce: u64,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub key_signature: Signature,
    pub value_signature: Signature,
}

fn key_message(key: &[u8]) -> Vec<u8> {
    let mut e = Encoder::default();
    e.str("key").bytes(key);
    e.into_bytes()
}

fn value_message(value: &[u8]) -> Vec<u8> {
    let mut e = Encoder::default();
    e.str("value").bytes(value);
    e.into_bytes()
}

impl Transaction {
    pub fn signed(signer: &KeyPair, nonce: u64, key: Vec<u8>, value: Vec<u8>) -> Self {
        Self {
            submitter: signer.owner(),
            nonce,
            key_signature: signer.sign_bytes(&key_message(&key)),
            value_signature: signer.sign_bytes(&value_message(&value)),
            key,
            value,
        }
    }

    pub fn id(&self) -> TxnId {
        Digest::of(&self.to_canonical())
    }

    pub fn key_signature_valid(&self, pki: &Pki) -> bool {
        pki.verify(self.submitter, &key_message(&self.key), &self.key_signature)
    }

    pub fn value_signature_valid(&self, pki: &Pki) -> bool {
        pki.verify(self.submitter, &value_message(&self.value), &self.value_signature)
    }

    pub fn verify(&self, pki: &Pki) -> bool {
        self.key_signature_valid(pki) && self.value_signature_valid(pki)
    }
}

impl Canonical for Transaction {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.submitter)
            .u64(self.nonce)
            .bytes(&self.key)
            .bytes(&self.value)
            .item(&self.key_signature)
            .item(&self.value_signature);
    }
}

impl Decode for Transaction {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            submitter: PartyId::decode(input)?,
            nonce: input.u64()?,
            key: input.bytes()?,
            value: input.bytes()?,
            key_signature: Signature::decode(input)?,
            value_signature: Signature::decode(input)?,
        })
    }
}

pub fn batch_digest(batch: &[Transaction]) -> Digest {
    let mut e = Encoder::default();
    e.u32(batch.len() as u32);
    for t in batch {
        e.item(&t.id());
    }
    Digest::of(&e.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_parties;

    #[test]
    fn signatures_bind_key_and_value() {
        let kps = generate_parties(2, 0);
        let pki = Pki::new(&kps).unwrap();
        let t = Transaction::signed(&kps[0], 1, b"k".to_vec(), b"v".to_vec());
        assert!(t.verify(&pki));

        let mut other_value = t.clone();
        other_value.value = b"w".to_vec();
        assert!(other_value.key_signature_valid(&pki));
        assert!(!other_value.verify(&pki));

        let mut impersonated = t.clone();
        impersonated.submitter = PartyId(1);
        assert!(!impersonated.verify(&pki));
    }

    #[test]
    fn id_covers_nonce() {
        let kps = generate_parties(1, 0);
        let a = Transaction::signed(&kps[0], 1, b"k".to_vec(), b"v".to_vec());
        let b = Transaction::signed(&kps[0], 2, b"k".to_vec(), b"v".to_vec());
        assert_ne!(a.id(), b.id());
        assert_eq!(Transaction::from_canonical(&a.to_canonical()).unwrap(), a);
    }
}
