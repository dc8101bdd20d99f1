//! Simulated physically unclonable functions.
//!
//! A device's ideal response to a challenge is a keyed hash of the challenge
//! under the device seed, truncated to `width` bits. Distinct seeds therefore
//! behave like independent uniform functions: two devices agree on a given
//! challenge with probability `2^-width`. Every query flips each response bit
//! independently with probability `noise_rate`.
//!
//! Tampering replaces the active seed with a fresh one, so a forged item's
//! function is unrelated to the enrolled one. A clone replays the pairs it
//! was built from and answers everything else from a fresh seed.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};
use crate::contract::ItemId;
use crate::crypto::{CryptoError, KeyPair, PartyId, Pki, Sealed};
use crate::rng::SimRng;

/// Repeated reads used to obtain a stable (majority) response.
pub const DEFAULT_READS: u32 = 9;

/// Observations an adversary needs before it can build a replay clone.
pub const DEFAULT_CLONE_THRESHOLD: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PufError {
    #[error("response width must be in 1..=64, got {0}")]
    InvalidWidth(u8),
    #[error("noise rate must be in [0, 1), got {0}")]
    InvalidNoise(f64),
    #[error("clone needs {threshold} observed pairs, only {observed} available")]
    CloneDenied { observed: usize, threshold: usize },
    #[error("challenge sequences differ at position {position}")]
    ChallengeMismatch { position: usize },
    #[error("reads per measurement must be at least 1")]
    ZeroReads,
    #[error("cannot draw {requested} distinct challenges")]
    ChallengeSpace { requested: usize },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("malformed challenge-response subset: {0}")]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PufParams {
    /// Response width in bits.
    pub width: u8,
    /// Per-bit flip probability at query time.
    pub noise_rate: f64,
}

impl Default for PufParams {
    fn default() -> Self {
        Self {
            width: 8,
            noise_rate: 0.002,
        }
    }
}

impl PufParams {
    pub fn new(width: u8, noise_rate: f64) -> Result<Self, PufError> {
        let p = Self { width, noise_rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PufError> {
        if !(1..=64).contains(&self.width) {
            return Err(PufError::InvalidWidth(self.width));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(PufError::InvalidNoise(self.noise_rate));
        }
        Ok(())
    }

    pub fn mask(&self) -> u64 {
        if self.width == 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }

    /// Probability that a single noisy query returns the ideal response.
    pub fn intra_match_probability(&self) -> f64 {
        (1.0 - self.noise_rate).powi(self.width as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChallengeResponsePair {
    pub challenge: u64,
    pub response: u64,
}

impl Canonical for ChallengeResponsePair {
    fn encode(&self, out: &mut Encoder) {
        out.u64(self.challenge).u64(self.response);
    }
}

impl Decode for ChallengeResponsePair {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            challenge: input.u64()?,
            response: input.u64()?,
        })
    }
}

/// The `C` pairs used in one verification.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChallengeResponseVector {
    pub pairs: Vec<ChallengeResponsePair>,
}

impl ChallengeResponseVector {
    pub fn new(pairs: Vec<ChallengeResponsePair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn challenges(&self) -> impl Iterator<Item = u64> + '_ {
        self.pairs.iter().map(|p| p.challenge)
    }
}

impl Canonical for ChallengeResponseVector {
    fn encode(&self, out: &mut Encoder) {
        out.seq(&self.pairs);
    }
}

impl Decode for ChallengeResponseVector {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { pairs: input.seq()? })
    }
}

/// An item's enrolled pairs, split into one sealed subset per party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeResponseData {
    pub item: ItemId,
    pub subsets: Vec<Sealed>,
}

impl ChallengeResponseData {
    /// Opens the subset addressed to `holder`.
    pub fn open_own(&self, holder: &KeyPair) -> Result<ChallengeResponseVector, PufError> {
        self.open_subset(holder.owner().index(), holder)
    }

    pub fn open_subset(&self, index: usize, holder: &KeyPair) -> Result<ChallengeResponseVector, PufError> {
        let sealed = self.subsets.get(index).ok_or(CryptoError::OpenDenied(holder.owner()))?;
        let plain = holder.open(sealed)?;
        Ok(ChallengeResponseVector::from_canonical(&plain)?)
    }
}

impl Canonical for ChallengeResponseData {
    fn encode(&self, out: &mut Encoder) {
        out.item(&self.item).seq(&self.subsets);
    }
}

impl Decode for ChallengeResponseData {
    fn decode(input: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            item: ItemId::decode(input)?,
            subsets: input.seq()?,
        })
    }
}

fn prf(seed: u64, challenge: u64) -> u64 {
    let digest = Sha256::new()
        .chain_update(b"puftrack/puf/v1")
        .chain_update(seed.to_le_bytes())
        .chain_update(challenge.to_le_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// A simulated PUF attached to one physical item.
#[derive(Debug, Clone)]
pub struct PufDevice {
    device_seed: u64,
    tamper_seed: Option<u64>,
    replay: Option<Arc<BTreeMap<u64, u64>>>,
    params: PufParams,
    noise: SimRng,
}

impl PufDevice {
    /// A new device. `noise` is the device's private query-noise stream.
    pub fn new(device_seed: u64, params: PufParams, noise: SimRng) -> Self {
        Self {
            device_seed,
            tamper_seed: None,
            replay: None,
            params,
            noise,
        }
    }

    pub fn device_seed(&self) -> u64 {
        self.device_seed
    }

    pub fn tamper_seed(&self) -> Option<u64> {
        self.tamper_seed
    }

    pub fn is_tampered(&self) -> bool {
        self.tamper_seed.is_some()
    }

    pub fn is_clone(&self) -> bool {
        self.replay.is_some()
    }

    pub fn params(&self) -> PufParams {
        self.params
    }

    fn active_seed(&self) -> u64 {
        self.tamper_seed.unwrap_or(self.device_seed)
    }

    /// Noise-free response.
    pub fn ideal_response(&self, challenge: u64) -> u64 {
        if self.tamper_seed.is_none() {
            if let Some(recorded) = self.replay.as_ref().and_then(|m| m.get(&challenge)) {
                return *recorded;
            }
        }
        prf(self.active_seed(), challenge) & self.params.mask()
    }

    /// One physical read: the ideal response with each bit flipped
    /// independently with probability `noise_rate`.
    pub fn query(&mut self, challenge: u64) -> u64 {
        let mut response = self.ideal_response(challenge);
        if self.params.noise_rate > 0.0 {
            for bit in 0..self.params.width {
                if self.noise.gen_bool(self.params.noise_rate) {
                    response ^= 1u64 << bit;
                }
            }
        }
        response
    }

    /// Bitwise majority over `reads` queries. Ties resolve to 0.
    pub fn measure(&mut self, challenge: u64, reads: u32) -> Result<u64, PufError> {
        if reads == 0 {
            return Err(PufError::ZeroReads);
        }
        if reads == 1 {
            return Ok(self.query(challenge));
        }
        let mut ones = [0u32; 64];
        for _ in 0..reads {
            let r = self.query(challenge);
            for (bit, count) in ones.iter_mut().enumerate().take(self.params.width as usize) {
                *count += ((r >> bit) & 1) as u32;
            }
        }
        let mut out = 0u64;
        for (bit, count) in ones.iter().enumerate().take(self.params.width as usize) {
            if *count * 2 > reads {
                out |= 1u64 << bit;
            }
        }
        Ok(out)
    }

    /// Measures every challenge of `expected`, producing the vector a buyer
    /// submits for verification.
    pub fn respond(
        &mut self,
        expected: &ChallengeResponseVector,
        reads: u32,
    ) -> Result<ChallengeResponseVector, PufError> {
        let pairs = expected
            .challenges()
            .map(|challenge| {
                Ok(ChallengeResponsePair {
                    challenge,
                    response: self.measure(challenge, reads)?,
                })
            })
            .collect::<Result<_, PufError>>()?;
        Ok(ChallengeResponseVector { pairs })
    }

    /// Physical tampering. The returned device computes a fresh function,
    /// unrelated to both the original and any previous tampering.
    pub fn tamper(&self, rng: &mut SimRng) -> PufDevice {
        let mut seed = rng.gen::<u64>();
        while seed == self.device_seed || Some(seed) == self.tamper_seed {
            seed = rng.gen::<u64>();
        }
        PufDevice {
            device_seed: self.device_seed,
            tamper_seed: Some(seed),
            replay: self.replay.clone(),
            params: self.params,
            noise: self.noise.clone(),
        }
    }
}

/// Builds a replay clone from observed pairs, or refuses when fewer than
/// `threshold` pairs were observed.
pub fn build_clone(
    observed: &[ChallengeResponsePair],
    threshold: usize,
    params: PufParams,
    rng: &mut SimRng,
) -> Result<PufDevice, PufError> {
    if observed.len() < threshold {
        return Err(PufError::CloneDenied {
            observed: observed.len(),
            threshold,
        });
    }
    let table: BTreeMap<u64, u64> = observed.iter().map(|p| (p.challenge, p.response)).collect();
    let seed = rng.gen::<u64>();
    let noise = SimRng::seed_from_u64(rng.gen());
    let mut device = PufDevice::new(seed, params, noise);
    device.replay = Some(Arc::new(table));
    Ok(device)
}

/// Draws `count` pairwise-distinct challenges.
pub fn draw_challenges(count: usize, rng: &mut SimRng) -> Vec<u64> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let c = rng.gen::<u64>();
        if seen.insert(c) {
            out.push(c);
        }
    }
    out
}

/// Collects `count` stable pairs on fresh distinct challenges.
pub fn collect_pairs(
    device: &mut PufDevice,
    count: usize,
    reads: u32,
    rng: &mut SimRng,
) -> Result<Vec<ChallengeResponsePair>, PufError> {
    draw_challenges(count, rng)
        .into_iter()
        .map(|challenge| {
            Ok(ChallengeResponsePair {
                challenge,
                response: device.measure(challenge, reads)?,
            })
        })
        .collect()
}

/// Enrolment: collects `parties * per_party` pairs with majority reads and
/// seals subset `w` for party `w`.
pub fn enroll(
    device: &mut PufDevice,
    item: ItemId,
    parties: usize,
    per_party: usize,
    pki: &Pki,
    rng: &mut SimRng,
) -> Result<ChallengeResponseData, PufError> {
    let pairs = collect_pairs(device, parties * per_party, DEFAULT_READS, rng)?;
    let subsets = pairs
        .chunks(per_party.max(1))
        .take(parties)
        .enumerate()
        .map(|(w, chunk)| {
            let plain = ChallengeResponseVector::new(chunk.to_vec()).to_canonical();
            pki.seal(PartyId(w as u32), &plain)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChallengeResponseData { item, subsets })
}

/// Number of positions where the measured response equals the expected one.
pub fn match_count(expected: &ChallengeResponseVector, measured: &ChallengeResponseVector) -> Result<usize, PufError> {
    if expected.len() != measured.len() {
        return Err(PufError::ChallengeMismatch {
            position: expected.len().min(measured.len()),
        });
    }
    let mut matches = 0;
    for (position, (e, m)) in expected.pairs.iter().zip(&measured.pairs).enumerate() {
        if e.challenge != m.challenge {
            return Err(PufError::ChallengeMismatch { position });
        }
        if e.response == m.response {
            matches += 1;
        }
    }
    Ok(matches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_parties;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn device(seed: u64, width: u8, noise: f64) -> PufDevice {
        PufDevice::new(
            seed,
            PufParams::new(width, noise).unwrap(),
            SimRng::seed_from_u64(seed ^ 0xabc),
        )
    }

    fn item() -> ItemId {
        ItemId::new(PartyId(0), 0)
    }

    #[test]
    fn noiseless_query_is_repeatable() {
        let mut d = device(1, 8, 0.0);
        for c in 0..50u64 {
            let ideal = d.ideal_response(c);
            assert_eq!(d.query(c), ideal);
            assert_eq!(d.query(c), ideal);
        }
    }

    #[test]
    fn noisy_exact_match_rate_follows_binomial() {
        let mut d = device(3, 32, 0.01);
        let ideal = d.ideal_response(77);
        let trials = 10_000;
        let hits = (0..trials).filter(|_| d.query(77) == ideal).count();
        let expected = 0.99f64.powi(32);
        let rate = hits as f64 / trials as f64;
        assert!((rate - expected).abs() <= 0.02, "rate {rate} vs {expected}");
    }

    #[test]
    fn independent_devices_collide_at_two_to_minus_width() {
        let a = device(10, 8, 0.0);
        let b = device(11, 8, 0.0);
        let n = 1_000;
        let collisions = (0..n).filter(|c| a.ideal_response(*c) == b.ideal_response(*c)).count();
        let p = 1.0 / 256.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((collisions as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{collisions}");
    }

    #[test]
    fn tampering_draws_fresh_seeds() {
        let mut rng = stream(5, "tamper", 0);
        let d = device(42, 8, 0.0);
        let t1 = d.tamper(&mut rng);
        let t2 = t1.tamper(&mut rng);
        assert!(t1.is_tampered());
        assert_ne!(t1.tamper_seed(), Some(d.device_seed()));
        assert_ne!(t2.tamper_seed(), t1.tamper_seed());
        assert_ne!(t2.tamper_seed(), Some(d.device_seed()));
    }

    #[test]
    fn tampered_device_collides_rarely() {
        let mut rng = stream(6, "tamper", 0);
        let d = device(43, 8, 0.0);
        let t = d.tamper(&mut rng);
        let challenges = draw_challenges(10_000, &mut rng);
        let n = challenges.len() as f64;
        let collisions = challenges
            .iter()
            .filter(|c| d.ideal_response(**c) == t.ideal_response(**c))
            .count() as f64;
        let p = 1.0 / 256.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((collisions - n * p).abs() <= 3.0 * sigma, "{collisions}");
    }

    #[test]
    fn untampered_device_is_stable_across_stages() {
        let d = device(44, 8, 0.0);
        let later = d.clone();
        for c in 0..1_000u64 {
            assert_eq!(d.ideal_response(c), later.ideal_response(c));
        }
    }

    #[test]
    fn clone_below_threshold_is_denied() {
        let mut rng = stream(7, "clone", 0);
        let mut d = device(45, 8, 0.0);
        let pairs = collect_pairs(&mut d, 9, 1, &mut rng).unwrap();
        assert_eq!(
            build_clone(&pairs, 10, d.params(), &mut rng).unwrap_err(),
            PufError::CloneDenied {
                observed: 9,
                threshold: 10
            }
        );
    }

    #[test]
    fn clone_replays_observed_and_guesses_the_rest() {
        let mut rng = stream(8, "clone", 0);
        let mut d = device(46, 8, 0.0);
        let pairs = collect_pairs(&mut d, 10, 1, &mut rng).unwrap();
        let mut clone = build_clone(&pairs, 10, d.params(), &mut rng).unwrap();
        for p in &pairs {
            assert_eq!(clone.query(p.challenge), p.response);
        }
        let fresh = draw_challenges(10_000, &mut rng);
        let n = fresh.len() as f64;
        let collisions = fresh
            .iter()
            .filter(|c| clone.ideal_response(**c) == d.ideal_response(**c))
            .count() as f64;
        let p = 1.0 / 256.0;
        assert!((collisions - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt());
    }

    #[test]
    fn enrollment_partitions_into_disjoint_sealed_subsets() {
        let kps = generate_parties(3, 1);
        let pki = Pki::new(&kps).unwrap();
        let mut rng = stream(9, "enroll", 0);
        let mut d = device(47, 8, 0.002);
        let crd = enroll(&mut d, item(), 3, 10, &pki, &mut rng).unwrap();
        assert_eq!(crd.subsets.len(), 3);
        let mut all = HashSet::new();
        for kp in &kps {
            let v = crd.open_own(kp).unwrap();
            assert_eq!(v.len(), 10);
            for p in &v.pairs {
                assert!(all.insert(p.challenge));
                assert_eq!(d.ideal_response(p.challenge), p.response);
            }
        }
        assert_eq!(all.len(), 30);
        assert!(matches!(
            crd.open_subset(1, &kps[0]),
            Err(PufError::Crypto(CryptoError::OpenDenied(_)))
        ));
    }

    #[test]
    fn match_count_identity_and_total_mismatch() {
        let mut d = device(48, 8, 0.0);
        let mut rng = stream(10, "m", 0);
        let v = ChallengeResponseVector::new(collect_pairs(&mut d, 10, 1, &mut rng).unwrap());
        assert_eq!(match_count(&v, &v).unwrap(), 10);
        let mut flipped = v.clone();
        for p in &mut flipped.pairs {
            p.response ^= 0xff;
        }
        assert_eq!(match_count(&v, &flipped).unwrap(), 0);
        let mut moved = v.clone();
        moved.pairs.swap(0, 1);
        assert_eq!(
            match_count(&v, &moved),
            Err(PufError::ChallengeMismatch { position: 0 })
        );
    }

    #[test]
    fn match_count_mean_follows_binomial() {
        let params = PufParams::new(8, 0.0025).unwrap();
        let q = params.intra_match_probability();
        let mut d = PufDevice::new(49, params, SimRng::seed_from_u64(1));
        let mut rng = stream(11, "m", 0);
        let trials = 1_000;
        let mut total = 0usize;
        for _ in 0..trials {
            let challenges = draw_challenges(10, &mut rng);
            let expected = ChallengeResponseVector::new(
                challenges
                    .iter()
                    .map(|&c| ChallengeResponsePair {
                        challenge: c,
                        response: d.ideal_response(c),
                    })
                    .collect(),
            );
            let measured = d.respond(&expected, 1).unwrap();
            total += match_count(&expected, &measured).unwrap();
        }
        let mean = total as f64 / trials as f64;
        let sigma_mean = (10.0 * q * (1.0 - q) / trials as f64).sqrt();
        assert!((mean - 10.0 * q).abs() <= 3.0 * sigma_mean, "mean {mean}, q {q}");
    }

    #[test]
    fn majority_reads_suppress_noise() {
        let mut d = device(50, 8, 0.05);
        let ideal = d.ideal_response(5);
        let hits = (0..1_000).filter(|_| d.measure(5, 9).unwrap() == ideal).count();
        assert!(hits > 990, "{hits}");
        assert_eq!(d.measure(5, 0), Err(PufError::ZeroReads));
    }

    #[test]
    fn params_are_validated() {
        assert!(PufParams::new(0, 0.0).is_err());
        assert!(PufParams::new(65, 0.0).is_err());
        assert!(PufParams::new(8, 1.0).is_err());
        assert_eq!(PufParams::new(64, 0.0).unwrap().mask(), u64::MAX);
    }

    fn brute_force_matches(a: &ChallengeResponseVector, b: &ChallengeResponseVector) -> usize {
        let mut count = 0;
        for (i, x) in a.pairs.iter().enumerate() {
            for (j, y) in b.pairs.iter().enumerate() {
                if i == j && x.challenge == y.challenge && x.response == y.response {
                    count += 1;
                }
            }
        }
        count
    }

    proptest! {
        #[test]
        fn match_count_symmetric_bounded_and_matches_brute_force(
            responses in proptest::collection::vec((any::<u64>(), 0u64..4, 0u64..4), 0..20)
        ) {
            let a = ChallengeResponseVector::new(responses.iter().map(|(c, r, _)| ChallengeResponsePair { challenge: *c, response: *r }).collect());
            let b = ChallengeResponseVector::new(responses.iter().map(|(c, _, r)| ChallengeResponsePair { challenge: *c, response: *r }).collect());
            let ab = match_count(&a, &b).unwrap();
            prop_assert_eq!(ab, match_count(&b, &a).unwrap());
            prop_assert!(ab <= a.len());
            prop_assert_eq!(ab, brute_force_matches(&a, &b));
        }

        #[test]
        fn crv_canonical_round_trip(pairs in proptest::collection::vec((any::<u64>(), any::<u64>()), 0..16)) {
            let v = ChallengeResponseVector::new(pairs.into_iter().map(|(challenge, response)| ChallengeResponsePair { challenge, response }).collect());
            prop_assert_eq!(ChallengeResponseVector::from_canonical(&v.to_canonical()).unwrap(), v);
        }
    }
}
