//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails if
//! any criterion failed. The lines go to stderr even without `--nocapture`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rayon::prelude::*;

use puftrack::adversary::{Detection, SafetyTrial};
use puftrack::contract::{Tag, TrackingKey};
use puftrack::crypto::{generate_parties, PartyId};
use puftrack::experiments::{
    all_passed, builtin_scenarios, run_attack_matrix, run_prototype, run_tuning, PrototypeConfig, TuningConfig,
};
use puftrack::ledger::export::to_jsonl;
use puftrack::ledger::safety::SafetyViolation;
use puftrack::ledger::{
    AcceptAll, ByzantineStrategy, DeliveryPolicy, Ledger, LedgerConfig, Transaction, WriteOnceStore,
};
use puftrack::puf::{match_count, ChallengeResponsePair, ChallengeResponseVector, PufDevice, PufParams};
use puftrack::rng::stream;
use puftrack::scenario::Scenario;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// `P[Binomial(n, p) >= k]` by direct summation.
fn binomial_tail(n: usize, p: f64, k: usize) -> f64 {
    let mut total = 0.0;
    for i in k..=n {
        let mut coeff = 1.0;
        for j in 0..i {
            coeff *= (n - j) as f64 / (j + 1) as f64;
        }
        total += coeff * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
    }
    total
}

fn criterion1_tuning() -> Outcome {
    let config = TuningConfig::default();
    assert_eq!(
        (
            config.devices,
            config.tuning_devices,
            config.challenges,
            config.repetitions,
            config.puf.width
        ),
        (17, 3, 10, 15, 4)
    );
    assert!(config.pool_size >= 21_000);
    let report = run_tuning(&config).expect("defaults are valid");
    let mut problems = Vec::new();
    for row in &report.rows {
        if row.tar != 1.0 || row.frr != 0.0 {
            problems.push(format!(
                "device {} R={} TAR={} FRR={}",
                row.puf_index, row.r, row.tar, row.frr
            ));
        }
        if row.r == 9 && (row.far != 0.0 || row.trr != 1.0) {
            problems.push(format!("device {} R=9 FAR={} TRR={}", row.puf_index, row.far, row.trr));
        }
    }
    for &t in &report.tuning_devices {
        let rows: Vec<_> = report.rows_for(t).collect();
        if rows.windows(2).any(|w| w[1].far > w[0].far) {
            problems.push(format!("device {t} FAR increases with R"));
        }
    }
    let rs: Vec<usize> = report.rows.iter().map(|r| r.r).collect();
    let complete = report.rows.len() == 15 && rs.iter().all(|r| (5..=9).contains(r));
    let max_far = report.rows.iter().map(|r| r.far).fold(0.0, f64::max);
    outcome(
        problems.is_empty() && complete,
        format!(
            "devices {:?}, {} rows; TAR=1, FRR=0 everywhere, FAR=0 and TRR=1 at R=9, FAR monotone (max FAR {max_far}) {}",
            report.tuning_devices,
            report.rows.len(),
            problems.join("; ")
        ),
    )
}

fn criterion2_prototype() -> Outcome {
    let mut runs = 0;
    let mut problems = Vec::new();
    for width in [4u8, 8] {
        for seed in 0..10 {
            let config = PrototypeConfig {
                seed,
                puf: PufParams::new(width, 0.002).unwrap(),
                ..PrototypeConfig::default()
            };
            assert_eq!((config.challenges, config.required_matches), (10, 9));
            let report = run_prototype(&config).expect("prototype runs");
            runs += 1;
            if !all_passed(&report.checks) {
                problems.push(format!("W={width} seed={seed}: {:?}", report.checks));
            }
            let honest_ok = report
                .honest
                .verifications
                .iter()
                .filter(|v| v.result == "verification_succeeded")
                .count();
            let failed_at_distribution = report
                .adversary
                .verifications
                .iter()
                .filter(|v| v.buyer == PartyId(2) && v.supplier == PartyId(1) && v.result == "verification_failed")
                .count();
            if honest_ok != 16 || failed_at_distribution != 3 {
                problems.push(format!(
                    "W={width} seed={seed}: honest {honest_ok}/16, failed {failed_at_distribution}/3"
                ));
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!("{runs} runs (W in {{4, 8}}, 10 seeds): honest 16/16 succeeded, substituted 3/3 failed at distribution blaming logistic {}", problems.join("; ")),
    )
}

fn criterion3_attacks() -> Outcome {
    let wanted = [
        "forge-in-transit",
        "forge-pre-crd",
        "blame-supplier",
        "skip-register",
        "skip-ship",
    ];
    let scenarios: Vec<Scenario> = builtin_scenarios()
        .into_iter()
        .filter(|s| wanted.contains(&s.name.as_str()))
        .collect();
    assert_eq!(scenarios.len(), wanted.len());
    let report = run_attack_matrix(&scenarios, None, Some(100)).expect("scenarios run");
    let suite = |name: &str| report.suite(name).expect("suite present");
    let only = |name: &str, detection: Detection, who: Option<PartyId>| {
        let s = suite(name);
        s.runs == 100
            && s.all_met()
            && s.outcome_matched == 100
            && s.observed.len() == 1
            && s.observed[0].detection == detection
            && s.observed[0].attributed_to == who
    };
    let width = scenarios
        .iter()
        .find(|s| s.name == "forge-in-transit")
        .unwrap()
        .puf
        .width;
    let a1 = width == 8 && only("forge-in-transit", Detection::Detected, Some(PartyId(3)));
    let a2 = only("forge-pre-crd", Detection::Undetected, None)
        && suite("forge-pre-crd")
            .expected
            .as_ref()
            .is_some_and(|e| e.ledger_evidence.iter().all(|k| !k.tag.is_alarm()));
    let a3 = only("blame-supplier", Detection::Detected, Some(PartyId(1)));
    let has_key = |name: &str, tag: Tag, s: u32, b: u32| {
        suite(name).expected.as_ref().is_some_and(|e| {
            e.ledger_evidence
                .iter()
                .any(|k: &TrackingKey| k.tag == tag && k.edge == Some((PartyId(s), PartyId(b))))
        })
    };
    let a5 = only("skip-register", Detection::Detected, Some(PartyId(1)))
        && has_key("skip-register", Tag::NoCrd, 1, 3)
        && only("skip-ship", Detection::Detected, Some(PartyId(3)))
        && has_key("skip-ship", Tag::NoShip, 3, 5);
    let counts: Vec<String> = report
        .suites
        .iter()
        .map(|s| format!("{} {}/{}", s.scenario, s.outcome_matched, s.runs))
        .collect();
    outcome(
        a1 && a2 && a3 && a5,
        format!(
            "attack1 detected+attributed to p3: {a1}; attack2 undetected: {a2}; attack3 blames honest p1: {a3}; attack5 <no_crd, p1, p3, i> and <no_ship, p3, p5, i>: {a5}; exact evidence matches: {}",
            counts.join(", ")
        ),
    )
}

fn criterion4_consensus() -> Outcome {
    let policies = [
        DeliveryPolicy::Fifo { latency: 1 },
        DeliveryPolicy::UniformDelay { min: 1, max: 10 },
        DeliveryPolicy::AdversarialReorder { max_delay: 10 },
    ];
    let mut trials = Vec::new();
    for strategy in ByzantineStrategy::ALL {
        for policy in policies {
            for seed in 0..1_000 {
                trials.push(SafetyTrial::new(4, strategy, policy, seed));
            }
        }
    }
    let results: Vec<_> = trials
        .par_iter()
        .map(|t| (t.strategy, t.run().expect("trial config is valid")))
        .collect();
    let mut divergence = 0;
    let mut invalid_signature = 0;
    let mut write_once = 0;
    let mut store_mismatch = 0;
    let mut stalled = 0;
    let mut per_strategy: HashMap<ByzantineStrategy, usize> = HashMap::new();
    for (strategy, r) in &results {
        *per_strategy.entry(*strategy).or_default() += 1;
        stalled += usize::from(!r.completed);
        for v in &r.violations {
            match v {
                SafetyViolation::Divergence { .. } => divergence += 1,
                SafetyViolation::InvalidSignature { .. } => invalid_signature += 1,
                SafetyViolation::WriteOnce { .. } => write_once += 1,
                SafetyViolation::StoreMismatch { .. } => store_mismatch += 1,
            }
        }
    }
    let safe = divergence + invalid_signature + write_once + store_mismatch == 0;
    outcome(
        safe && per_strategy.values().all(|&n| n == 3_000),
        format!(
            "N=4, 4 strategies x 3 policies x 1000 seeds = {} schedules: prefix violations {divergence}, invalid signatures {invalid_signature}, write-once {write_once}, store mismatches {store_mismatch} (runs not finishing within the event budget: {stalled})",
            results.len()
        ),
    )
}

fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn criterion5_properties() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, r: Result<(), String>| {
        ok &= r.is_ok();
        lines.push(match r {
            Ok(()) => format!("{name} ok"),
            Err(e) => format!("{name} FAILED ({e})"),
        });
    };

    // Store: the first write in any order wins; later writes are refused.
    let keys = generate_parties(4, 77);
    record(
        "write-once store",
        run_property(
            256,
            prop::collection::vec((0usize..4, 0u8..8, any::<u8>()), 1..80).prop_shuffle(),
            |ops| {
                let mut store = WriteOnceStore::new();
                let mut first: HashMap<u8, u8> = HashMap::new();
                for (seq, (who, key, value)) in ops.iter().enumerate() {
                    let txn = Transaction::signed(&keys[*who], seq as u64, vec![*key], vec![*value]);
                    let accepted = store.set(&txn, seq as u64).is_ok();
                    prop_assert_eq!(accepted, !first.contains_key(key));
                    first.entry(*key).or_insert(*value);
                }
                for (k, v) in &first {
                    prop_assert_eq!(store.get(&[*k]), Some(&[*v][..]));
                }
                Ok(())
            },
        ),
    );

    // Same rule across replicas fed concurrently by competing writers.
    let replicated = (0..40u64).try_for_each(|seed| {
        let policy = DeliveryPolicy::AdversarialReorder { max_delay: 10 };
        let keys = generate_parties(4, seed);
        let mut l = Ledger::new(
            LedgerConfig::new(4, seed).with_policy(policy),
            &keys,
            Arc::new(AcceptAll),
        )
        .map_err(|e| e.to_string())?;
        for i in 0..24u64 {
            let t = Transaction::signed(&keys[(i % 4) as usize], i, vec![(i % 5) as u8], vec![i as u8]);
            l.submit(t).map_err(|e| e.to_string())?;
        }
        l.run_until_quiescent(2_000_000);
        let logs = l.honest_logs();
        for (node, log) in &logs {
            let mut winner: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
            for e in log.iter() {
                winner.entry(e.txn.key.clone()).or_insert(e.txn.value.clone());
            }
            for (k, v) in &winner {
                if l.store(*node).get(k) != Some(v.as_slice()) {
                    return Err(format!("seed {seed}: {node} kept a later write"));
                }
            }
            if l.store(*node).state_digest() != l.store(logs[0].0).state_digest() {
                return Err(format!("seed {seed}: stores differ"));
            }
        }
        Ok(())
    });
    record("write-once across replicas (40 reordered runs)", replicated);

    // Genuine device at zero noise answers exactly what it answered before.
    let exact = (|| {
        let params = PufParams::new(8, 0.0).unwrap();
        let mut device = PufDevice::new(42, params, stream(1, "exact", 0));
        let mut rng = stream(1, "exact-challenges", 0);
        for c in puftrack::puf::draw_challenges(10_000, &mut rng) {
            let enrolled = device.query(c);
            if device.query(c) != enrolled || device.measure(c, 9).unwrap() != enrolled {
                return Err(format!("challenge {c} changed its response"));
            }
        }
        Ok(())
    })();
    record("intra-device exact match at noise 0 (10000 challenges)", exact);

    // Tampered device agrees with the original on a 2^-W fraction.
    let collisions = (|| {
        let n = 10_000usize;
        for width in [4u8, 8] {
            let params = PufParams::new(width, 0.0).unwrap();
            let original = PufDevice::new(9, params, stream(2, "orig", 0));
            let tampered = original.tamper(&mut stream(2, "tamper", u64::from(width)));
            let mut rng = stream(2, "collide", u64::from(width));
            let hits = puftrack::puf::draw_challenges(n, &mut rng)
                .into_iter()
                .filter(|c| original.ideal_response(*c) == tampered.ideal_response(*c))
                .count();
            let p = 0.5f64.powi(i32::from(width));
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            if (hits as f64 - mean).abs() > 3.0 * sigma {
                return Err(format!(
                    "W={width}: {hits} collisions, expected {mean:.1} +- {:.1}",
                    3.0 * sigma
                ));
            }
        }
        Ok(())
    })();
    record(
        "tampered collision rate 2^-W within 3 sigma (W=4, 8; 10000 challenges)",
        collisions,
    );

    // match_count against a brute-force pairwise comparison.
    record(
        "match_count vs brute force",
        run_property(
            512,
            prop::collection::vec((any::<u64>(), 0u64..4, 0u64..4), 0..32),
            |triples| {
                let expected = ChallengeResponseVector::new(
                    triples
                        .iter()
                        .map(|(c, r, _)| ChallengeResponsePair {
                            challenge: *c,
                            response: *r,
                        })
                        .collect(),
                );
                let measured = ChallengeResponseVector::new(
                    triples
                        .iter()
                        .map(|(c, _, m)| ChallengeResponsePair {
                            challenge: *c,
                            response: *m,
                        })
                        .collect(),
                );
                let mut brute = 0;
                for i in 0..triples.len() {
                    for j in 0..triples.len() {
                        if i == j && expected.pairs[i] == measured.pairs[j] {
                            brute += 1;
                        }
                    }
                }
                prop_assert_eq!(match_count(&expected, &measured).unwrap(), brute);
                Ok(())
            },
        ),
    );

    // Empirical FAR against the binomial tail.
    let far = (|| {
        let config = TuningConfig {
            r_min: 1,
            r_max: 10,
            repetitions: 100,
            pool_size: 2_000,
            puf: PufParams::new(2, 0.002).unwrap(),
            ..TuningConfig::default()
        };
        let report = run_tuning(&config).map_err(|e| e.to_string())?;
        let p = 0.25;
        for r in 1..=10 {
            let rows: Vec<_> = report.rows.iter().filter(|row| row.r == r).collect();
            let trials: usize = rows.iter().map(|row| row.cross_trials).sum();
            let accepted: usize = rows.iter().map(|row| row.cross_accepted).sum();
            let expected = binomial_tail(10, p, r);
            let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
            let observed = accepted as f64 / trials as f64;
            if (observed - expected).abs() > 3.0 * sigma + 1e-12 {
                return Err(format!(
                    "R={r}: FAR {observed:.5}, binomial {expected:.5} +- {:.5}",
                    3.0 * sigma
                ));
            }
        }
        Ok(())
    })();
    record(
        "FAR vs binomial tail within 3 sigma (W=2, R=1..10, 4800 trials per R)",
        far,
    );

    // Identical seed, identical bytes.
    let determinism = (|| {
        let tuning = TuningConfig {
            pool_size: 2_000,
            ..TuningConfig::default()
        };
        let a = run_tuning(&tuning).map_err(|e| e.to_string())?.to_csv();
        let b = run_tuning(&tuning).map_err(|e| e.to_string())?.to_csv();
        let p1 = run_prototype(&PrototypeConfig::default())
            .map_err(|e| e.to_string())?
            .to_json();
        let p2 = run_prototype(&PrototypeConfig::default())
            .map_err(|e| e.to_string())?
            .to_json();
        if a != b || p1 != p2 {
            return Err("tuning or prototype report differs".into());
        }
        for scenario in builtin_scenarios() {
            let (s1, _) = scenario.execute(5).map_err(|e| e.to_string())?;
            let (s2, _) = scenario.execute(5).map_err(|e| e.to_string())?;
            let r1 = scenario.run(5).map_err(|e| e.to_string())?.to_json();
            let r2 = scenario.run(5).map_err(|e| e.to_string())?.to_json();
            let node = s1.system().ledger().honest_nodes().next().unwrap();
            let l1 = to_jsonl(s1.system().ledger().log(node), s1.pki());
            let l2 = to_jsonl(s2.system().ledger().log(node), s2.pki());
            if r1 != r2 || l1 != l2 {
                return Err(format!("{} differs between runs", scenario.name));
            }
        }
        let m1 = run_attack_matrix(&builtin_scenarios(), None, Some(3))
            .map_err(|e| e.to_string())?
            .to_json();
        let m2 = run_attack_matrix(&builtin_scenarios(), None, Some(3))
            .map_err(|e| e.to_string())?
            .to_json();
        if m1 != m2 {
            return Err("attack matrix differs".into());
        }
        Ok(())
    })();
    record("byte-identical reports for identical seeds", determinism);

    outcome(ok, lines.join("; "))
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 5] = [
        ("1 tuning reproduction", criterion1_tuning),
        ("2 prototype reproduction", criterion2_prototype),
        ("3 attack matrix (100 seeds each)", criterion3_attacks),
        ("4 consensus safety", criterion4_consensus),
        ("5 property suites", criterion5_properties),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        // Bypasses the harness's output capture.
        let line = format!(
            "{} criterion {name} [{:.1}s]: {}\n",
            if o.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        std::io::stderr()
            .write_all(line.as_bytes())
            .expect("stderr is writable");
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
