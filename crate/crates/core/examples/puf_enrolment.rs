//! Enrol a PUF-tagged item, open one party's sealed subset and verify the
//! genuine device against it, then a tampered one.
//!
//! ```text
//! cargo run --example puf_enrolment
//! ```

use puftrack::contract::ItemId;
use puftrack::crypto::{generate_parties, PartyId, Pki};
use puftrack::puf::{enroll, match_count, PufDevice, PufParams, DEFAULT_READS};
use puftrack::rng::stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys = generate_parties(4, 7);
    let pki = Pki::new(&keys)?;
    let params = PufParams::new(8, 0.002)?;
    let mut device = PufDevice::new(0xC0FFEE, params, stream(7, "noise", 0));

    let item = ItemId::new(PartyId(0), 0);
    let crd = enroll(&mut device, item, 4, 10, &pki, &mut stream(7, "enrol", 0))?;
    println!("{item}: {} sealed subsets of 10 pairs", crd.subsets.len());

    // Party 2 can open its own subset and nobody else's.
    let expected = crd.open_own(&keys[2])?;
    assert!(crd.open_subset(1, &keys[2]).is_err());

    let measured = device.respond(&expected, DEFAULT_READS)?;
    println!("genuine device: {}/10 matches", match_count(&expected, &measured)?);

    let mut forged = device.tamper(&mut stream(7, "tamper", 0));
    let measured = forged.respond(&expected, DEFAULT_READS)?;
    println!("tampered device: {}/10 matches", match_count(&expected, &measured)?);
    Ok(())
}
