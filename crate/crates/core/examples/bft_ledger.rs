//! Four replicas, one of them equivocating, agree on a log of signed writes.
//! Prints the export of an honest replica's log.
//!
//! ```text
//! cargo run --example bft_ledger
//! ```

use std::sync::Arc;

use puftrack::crypto::{generate_parties, PartyId};
use puftrack::ledger::export::to_jsonl;
use puftrack::ledger::safety::audit;
use puftrack::ledger::{AcceptAll, ByzantineStrategy, DeliveryPolicy, Ledger, LedgerConfig, Transaction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys = generate_parties(4, 1);
    let config = LedgerConfig::new(4, 1)
        .with_policy(DeliveryPolicy::UniformDelay { min: 1, max: 8 })
        .with_byzantine(PartyId(0), ByzantineStrategy::Equivocate);
    let mut ledger = Ledger::new(config, &keys, Arc::new(AcceptAll))?;

    for (nonce, (who, key)) in [(1, "apple"), (2, "pear"), (3, "apple"), (1, "plum")]
        .into_iter()
        .enumerate()
    {
        let value = format!("from p{who}").into_bytes();
        ledger.submit(Transaction::signed(&keys[who], nonce as u64, key.into(), value))?;
    }
    ledger.run_until_quiescent(200_000);

    // The second write to "apple" is logged but loses to the first.
    let logs = ledger.honest_logs();
    for (node, log) in &logs {
        println!("{node}: {} entries", log.len());
    }
    println!("safety violations: {}", audit(&ledger).len());
    print!("{}", to_jsonl(logs[0].1, ledger.pki()));
    Ok(())
}
