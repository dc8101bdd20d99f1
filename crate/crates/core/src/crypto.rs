//! Simulated public-key infrastructure.
//!
//! Signatures are HMAC-SHA256 tags over canonical bytes and sealing is an
//! HMAC-derived keystream with an authentication tag. The verification table
//! lives inside [`Pki`] and is never handed out, so holding a `&Pki` grants
//! the ability to verify and to seal, but not to sign or open on behalf of
//! anyone else. A party can only act through its own [`KeyPair`].

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};

type HmacSha256 = Hmac<Sha256>;

/// Index of a supply-chain party. The ledger node of the same index runs at
/// that party's premises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub u32);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(index: u64) -> Self {
        Self(index as u32)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl Canonical for PartyId {
    fn encode(&self, out: &mut Encoder) {
        out.u32(self.0);
    }
}

impl Decode for PartyId {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PartyId(input.u32()?))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("party {0} is not registered in the PKI")]
    UnknownParty(PartyId),
    #[error("sealed message is not addressed to {0}")]
    OpenDenied(PartyId),
    #[error("key pair for {party} registered at slot {slot}")]
    RegistrationOrder { party: PartyId, slot: usize },
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..8]))
    }
}

#[derive(Clone)]
struct SecretKey([u8; 32]);

impl SecretKey {
    fn mac(&self, domain: &[u8], parts: &[&[u8]]) -> [u8; 32] {
        let mut mac = HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length");
        mac.update(domain);
        for part in parts {
            mac.update(part);
        }
        mac.finalize().into_bytes().into()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature([u8; 32]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    /// Returns a copy with one bit flipped. Used by tests and byzantine
    /// strategies to produce signatures that must fail verification.
    pub fn corrupted(&self) -> Self {
        let mut b = self.0;
        b[0] ^= 0x01;
        Self(b)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..8]))
    }
}

impl Canonical for Signature {
    fn encode(&self, out: &mut Encoder) {
        out.bytes(&self.0);
    }
}

impl Decode for Signature {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let bytes = input.bytes()?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| DecodeError::UnknownTag {
            what: "signature length",
            tag: 0,
        })?;
        Ok(Self(arr))
    }
}

const SIGN_DOMAIN: &[u8] = b"puftrack/sign/v1";
const SEAL_DOMAIN: &[u8] = b"puftrack/seal/v1";
const TAG_DOMAIN: &[u8] = b"puftrack/seal-tag/v1";

/// A party's signing and decryption material.
///
/// `Debug` deliberately omits the secret half.
#[derive(Clone)]
pub struct KeyPair {
    owner: PartyId,
    public: PublicKey,
    secret: SecretKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("owner", &self.owner)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Derives a key pair from `seed`. The same seed always yields the same
    /// keys; distinct seeds yield distinct keys.
    pub fn generate(owner: PartyId, seed: u64) -> Self {
        let secret: [u8; 32] = Sha256::new()
            .chain_update(b"puftrack/secret/v1")
            .chain_update(seed.to_le_bytes())
            .finalize()
            .into();
        let public: [u8; 32] = Sha256::new()
            .chain_update(b"puftrack/public/v1")
            .chain_update(secret)
            .finalize()
            .into();
        Self {
            owner,
            public: PublicKey(public),
            secret: SecretKey(secret),
        }
    }

    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn sign_bytes(&self, message: &[u8]) -> Signature {
        Signature(self.secret.mac(SIGN_DOMAIN, &[message]))
    }

    pub fn sign<M: Canonical>(&self, payload: M) -> Signed<M> {
        let signature = self.sign_bytes(&payload.to_canonical());
        Signed {
            payload,
            signer: self.owner,
            signature,
        }
    }

    /// Opens a sealed message. Fails unless this key pair belongs to the
    /// recipient and the ciphertext is intact.
    pub fn open(&self, sealed: &Sealed) -> Result<Vec<u8>, CryptoError> {
        if sealed.recipient != self.owner {
            return Err(CryptoError::OpenDenied(self.owner));
        }
        let tag = self.secret.mac(TAG_DOMAIN, &[&sealed.nonce, &sealed.ciphertext]);
        if tag != sealed.tag {
            return Err(CryptoError::OpenDenied(self.owner));
        }
        Ok(keystream_xor(&self.secret, &sealed.nonce, &sealed.ciphertext))
    }
}

fn keystream_xor(key: &SecretKey, nonce: &[u8; 16], input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len());
    for (block_index, chunk) in input.chunks(32).enumerate() {
        let block = key.mac(SEAL_DOMAIN, &[nonce, &(block_index as u64).to_le_bytes()]);
        out.extend(chunk.iter().zip(block.iter()).map(|(a, b)| a ^ b));
    }
    out
}

/// A payload together with its signer and signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signed<M> {
    pub payload: M,
    pub signer: PartyId,
    pub signature: Signature,
}

impl<M: Canonical> Signed<M> {
    pub fn verify(&self, pki: &Pki) -> bool {
        pki.verify(self.signer, &self.payload.to_canonical(), &self.signature)
    }
}

impl<M: Canonical> Canonical for Signed<M> {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.payload).item(&self.signer).item(&self.signature);
    }
}

impl<M: Decode> Decode for Signed<M> {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            payload: M::decode(input)?,
            signer: PartyId::decode(input)?,
            signature: Signature::decode(input)?,
        })
    }
}

/// Ciphertext readable only by `recipient`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub recipient: PartyId,
    nonce: [u8; 16],
    ciphertext: Vec<u8>,
    tag: [u8; 32],
}

impl Sealed {
    pub fn ciphertext(&self) -> &[u8] {
        &self.ciphertext
    }
}

impl Canonical for Sealed {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.recipient)
            .bytes(&self.nonce)
            .bytes(&self.ciphertext)
            .bytes(&self.tag);
    }
}

impl Decode for Sealed {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let recipient = PartyId::decode(input)?;
        let nonce = input.bytes()?;
        let ciphertext = input.bytes()?;
        let tag = input.bytes()?;
        let bad = |what| DecodeError::UnknownTag { what, tag: 0 };
        Ok(Self {
            recipient,
            nonce: nonce.try_into().map_err(|_| bad("nonce length"))?,
            ciphertext,
            tag: tag.try_into().map_err(|_| bad("tag length"))?,
        })
    }
}

/// Registry of every party's verification material, frozen at setup.
#[derive(Clone)]
pub struct Pki {
    entries: Vec<(PublicKey, SecretKey)>,
}

impl fmt::Debug for Pki {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pki").field("parties", &self.entries.len()).finish()
    }
}

impl Pki {
    /// Builds the registry. Key pair `i` must belong to party `i`.
    pub fn new<'a>(keypairs: impl IntoIterator<Item = &'a KeyPair>) -> Result<Self, CryptoError> {
        let mut entries = Vec::new();
        for (slot, kp) in keypairs.into_iter().enumerate() {
            if kp.owner.index() != slot {
                return Err(CryptoError::RegistrationOrder { party: kp.owner, slot });
            }
            entries.push((kp.public, kp.secret.clone()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.entries.len() as u32).map(PartyId)
    }

    pub fn public_key(&self, party: PartyId) -> Option<PublicKey> {
        self.entries.get(party.index()).map(|(pk, _)| *pk)
    }

    pub fn verify(&self, signer: PartyId, message: &[u8], signature: &Signature) -> bool {
        match self.entries.get(signer.index()) {
            Some((_, key)) => key.mac(SIGN_DOMAIN, &[message]) == signature.0,
            None => false,
        }
    }

    /// Encrypts `message` so that only `recipient` can open it.
    pub fn seal(&self, recipient: PartyId, message: &[u8]) -> Result<Sealed, CryptoError> {
        let (_, key) = self
            .entries
            .get(recipient.index())
            .ok_or(CryptoError::UnknownParty(recipient))?;
        let digest = Sha256::new()
            .chain_update(recipient.0.to_le_bytes())
            .chain_update(message)
            .finalize();
        let mut nonce = [0u8; 16];
        nonce.copy_from_slice(&digest[..16]);
        let ciphertext = keystream_xor(key, &nonce, message);
        let tag = key.mac(TAG_DOMAIN, &[&nonce, &ciphertext]);
        Ok(Sealed {
            recipient,
            nonce,
            ciphertext,
            tag,
        })
    }
}

/// Builds `count` key pairs for parties `0..count`, seeding party `i` with
/// `base_seed + i`.
pub fn generate_parties(count: usize, base_seed: u64) -> Vec<KeyPair> {
    (0..count)
        .map(|i| KeyPair::generate(PartyId(i as u32), base_seed.wrapping_add(i as u64)))
        .collect()
}
