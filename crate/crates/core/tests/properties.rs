use std::collections::VecDeque;
use std::sync::Arc;

use proptest::prelude::*;

use puftrack::codec::Decode;
use puftrack::contract::{Tag, TrackingKey};
use puftrack::crypto::{generate_parties, PartyId, Pki};
use puftrack::experiments::{run_tuning, TuningConfig};
use puftrack::ledger::replica::{Input, Output, Replica, ReplicaConfig};
use puftrack::ledger::safety::audit;
use puftrack::ledger::{
    AcceptAll, ByzantineStrategy, DeliveryPolicy, Ledger, LedgerConfig, NetworkMessage, Transaction,
};
use puftrack::puf::PufParams;
use puftrack::supply_chain::{Simulation, SimulationConfig, SupplyChainGraph};

fn policy() -> impl Strategy<Value = DeliveryPolicy> {
    prop_oneof![
        (1u64..4).prop_map(|latency| DeliveryPolicy::Fifo { latency }),
        (1u64..4, 0u64..12).prop_map(|(min, spread)| DeliveryPolicy::UniformDelay { min, max: min + spread }),
        (1u64..12).prop_map(|max_delay| DeliveryPolicy::AdversarialReorder { max_delay }),
    ]
}

fn strategy() -> impl Strategy<Value = Option<ByzantineStrategy>> {
    prop_oneof![
        Just(None),
        prop::sample::select(ByzantineStrategy::ALL.to_vec()).prop_map(Some)
    ]
}

fn run_ledger(seed: u64, policy: DeliveryPolicy, byz: Option<ByzantineStrategy>, writes: &[(usize, u8)]) -> Ledger {
    let keys = generate_parties(4, seed);
    let mut config = LedgerConfig::new(4, seed).with_policy(policy);
    if let Some(s) = byz {
        config = config.with_byzantine(PartyId((seed % 4) as u32), s);
    }
    let mut ledger = Ledger::new(config, &keys, Arc::new(AcceptAll)).unwrap();
    for (nonce, (who, key)) in writes.iter().enumerate() {
        let t = Transaction::signed(&keys[*who], nonce as u64, vec![*key], vec![nonce as u8]);
        ledger.submit(t).unwrap();
    }
    ledger.run_until_quiescent(400_000);
    ledger
}

/// Drives four honest replicas over a FIFO queue. Each delivered message is
/// followed by `copies(i)` duplicates of itself.
fn replay_run(keys: &[puftrack::crypto::KeyPair], txns: &[Transaction], copies: &[u8]) -> (Vec<Replica>, u64) {
    let pki = Arc::new(Pki::new(keys).unwrap());
    let config = ReplicaConfig {
        nodes: 4,
        batch_size: 2,
        base_timeout: 1_000,
    };
    let mut replicas: Vec<Replica> = keys
        .iter()
        .map(|k| Replica::new(k.clone(), pki.clone(), config, Arc::new(AcceptAll)))
        .collect();
    let mut queue: VecDeque<(usize, Input)> = VecDeque::new();
    for t in txns {
        for i in 0..4 {
            queue.push_back((i, Input::Request(t.clone())));
        }
    }
    let mut delivered = 0usize;
    let mut duplicates = 0u64;
    while let Some((node, input)) = queue.pop_front() {
        for out in replicas[node].handle(input) {
            if let Output::Send { msg, .. } = out {
                let to = msg.receiver.index();
                let extra = copies.get(delivered % copies.len().max(1)).copied().unwrap_or(0);
                delivered += 1;
                let msgs: Vec<NetworkMessage> = std::iter::repeat_n(msg, 1 + usize::from(extra)).collect();
                duplicates += u64::from(extra);
                queue.extend(msgs.into_iter().map(|m| (to, Input::Message(m))));
            }
        }
    }
    (replicas, duplicates)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn honest_logs_stay_prefix_consistent_and_signed(
        seed in any::<u64>(),
        policy in policy(),
        byz in strategy(),
        writes in prop::collection::vec((0usize..4, 0u8..6), 1..12),
    ) {
        let ledger = run_ledger(seed, policy, byz, &writes);
        let violations = audit(&ledger);
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }

    #[test]
    fn identical_seed_and_policy_give_identical_logs(
        seed in any::<u64>(),
        policy in policy(),
        byz in strategy(),
        writes in prop::collection::vec((0usize..4, 0u8..6), 1..10),
    ) {
        let a = run_ledger(seed, policy, byz, &writes);
        let b = run_ledger(seed, policy, byz, &writes);
        let logs_a = a.honest_logs();
        let logs_b = b.honest_logs();
        prop_assert_eq!(logs_a, logs_b);
    }

    #[test]
    fn duplicated_messages_are_processed_once(
        seed in any::<u64>(),
        writes in prop::collection::vec((0usize..4, 0u8..6), 1..6),
        copies in prop::collection::vec(0u8..3, 1..16),
    ) {
        let keys = generate_parties(4, seed);
        let txns: Vec<Transaction> = writes
            .iter()
            .enumerate()
            .map(|(n, (who, key))| Transaction::signed(&keys[*who], n as u64, vec![*key], vec![n as u8]))
            .collect();
        let (clean, _) = replay_run(&keys, &txns, &[0]);
        let (noisy, duplicates) = replay_run(&keys, &txns, &copies);
        let dropped: u64 = noisy.iter().map(|r| r.stats().replays_dropped).sum();
        prop_assert_eq!(dropped, duplicates);
        for (c, n) in clean.iter().zip(&noisy) {
            prop_assert_eq!(c.log(), n.log());
            prop_assert_eq!(c.log().len(), txns.len());
        }
    }

    #[test]
    fn tuning_rates_are_complementary_and_monotone(seed in any::<u64>(), width in 1u8..5) {
        let config = TuningConfig {
            seed,
            r_min: 1,
            r_max: 10,
            repetitions: 4,
            pool_size: 1_000,
            puf: PufParams::new(width, 0.002).unwrap(),
            ..TuningConfig::default()
        };
        let report = run_tuning(&config).unwrap();
        for row in &report.rows {
            prop_assert_eq!(row.tar + row.frr, 1.0);
            prop_assert_eq!(row.far + row.trr, 1.0);
        }
        for &t in &report.tuning_devices {
            let rows: Vec<_> = report.rows_for(t).collect();
            for w in rows.windows(2) {
                prop_assert!(w[1].far <= w[0].far && w[1].trr >= w[0].trr);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn each_traversed_edge_gets_one_outcome_after_its_declaration(
        seed in any::<u64>(),
        paths in prop::collection::vec(
            prop_oneof![
                (0u32..2, 5u32..7).prop_map(|(a, c)| vec![a, 3, c]),
                (6u32..8).prop_map(|c| vec![2, 4, c]),
                Just(vec![1, 3]),
            ],
            1..4,
        ),
    ) {
        let config = SimulationConfig { seed, ledger: LedgerConfig::new(8, seed), ..SimulationConfig::default() };
        let mut sim = Simulation::new(SupplyChainGraph::eight_party(), config).unwrap();
        let mut items = Vec::new();
        for path in &paths {
            let path: Vec<PartyId> = path.iter().copied().map(PartyId).collect();
            let mut instance = sim.new_item(path[0]).unwrap();
            sim.run_path(&mut instance, &path).unwrap();
            items.push((instance.item, path));
        }
        let ledger = sim.system().ledger();
        let node = ledger.honest_nodes().next().unwrap();
        let committed: Vec<TrackingKey> = ledger
            .log(node)
            .iter()
            .filter_map(|e| TrackingKey::from_canonical(&e.txn.key).ok())
            .collect();
        for (item, path) in &items {
            for edge in path.windows(2) {
                let (s, b) = (edge[0], edge[1]);
                let position = |tag| committed.iter().position(|k| *k == TrackingKey::on_edge(tag, s, b, *item));
                let outcomes: Vec<_> = committed
                    .iter()
                    .filter(|k| k.item == *item && k.edge == Some((s, b)))
                    .filter(|k| matches!(k.tag, Tag::VerificationSucceeded | Tag::VerificationFailed))
                    .collect();
                prop_assert_eq!(outcomes.len(), 1);
                let declared = position(Tag::DeclareVerification);
                let decided = position(outcomes[0].tag);
                prop_assert!(declared.is_some() && declared < decided);
            }
        }
        for e in ledger.log(node) {
            prop_assert!(e.txn.verify(sim.pki()), "unattributable entry at {}", e.seq);
        }
    }
}
