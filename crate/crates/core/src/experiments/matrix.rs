//! Runs attack scenarios over many seeds and tallies how often each met its
//! expectation.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{Check, ExperimentError};
use crate::adversary::{Detection, ExpectedOutcome};
use crate::crypto::PartyId;
use crate::scenario::{Scenario, ScenarioReport};

macro_rules! builtin {
    ($($file:literal),* $(,)?) => {
        [$((concat!("scenarios/", $file), include_str!(concat!("../../scenarios/", $file)))),*]
    };
}

const BUILTIN: [(&str, &str); 14] = builtin![
    "01-forge-in-transit.toml",
    "02-forge-in-transit-clone.toml",
    "03-forge-pre-crd.toml",
    "04-forge-after-register.toml",
    "05-blame-supplier.toml",
    "06-byzantine-silent.toml",
    "07-byzantine-equivocate.toml",
    "08-byzantine-delay-selective.toml",
    "09-byzantine-corrupt-payload.toml",
    "10-skip-register.toml",
    "11-skip-ship.toml",
    "12-wrong-register-params.toml",
    "13-wrong-ship-params.toml",
    "14-wrong-verify-params.toml",
];

/// The scenario files shipped in `scenarios/`.
pub fn builtin_scenarios() -> Vec<Scenario> {
    BUILTIN
        .iter()
        .map(|(file, text)| Scenario::parse(text, file).expect("built-in scenarios parse"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedCount {
    pub detection: Detection,
    pub attributed_to: Option<PartyId>,
    pub runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub scenario: String,
    pub attack: String,
    pub adversary: Option<PartyId>,
    pub asserted: bool,
    pub runs: u64,
    /// Runs meeting their expectation.
    pub met: u64,
    /// Runs whose ledger evidence equals the prediction exactly.
    pub outcome_matched: u64,
    pub safety_violations: u64,
    pub expected: Option<ExpectedOutcome>,
    /// Distinct observed (detection, attribution) pairs.
    pub observed: Vec<ObservedCount>,
    pub failed_seeds: Vec<u64>,
    /// The report of the first run.
    pub sample: ScenarioReport,
}

impl SuiteSummary {
    pub fn all_met(&self) -> bool {
        self.met == self.runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixReport {
    pub suites: Vec<SuiteSummary>,
    pub checks: Vec<Check>,
}

impl MatrixReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    /// One line per suite: `scenario,attack,runs,met,outcome_matched,safety_violations`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario",
            "attack",
            "asserted",
            "runs",
            "met",
            "outcome_matched",
            "safety_violations",
        ])
        .expect("writing to memory");
        for s in &self.suites {
            w.write_record([
                s.scenario.clone(),
                s.attack.clone(),
                s.asserted.to_string(),
                s.runs.to_string(),
                s.met.to_string(),
                s.outcome_matched.to_string(),
                s.safety_violations.to_string(),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn suite(&self, scenario: &str) -> Option<&SuiteSummary> {
        self.suites.iter().find(|s| s.scenario == scenario)
    }
}

/// Runs every scenario `seeds` times (or `scenario.seeds` when `None`),
/// with seeds `base, base + 1, ...` where `base` defaults to
/// `scenario.seed`.
pub fn run_attack_matrix(
    scenarios: &[Scenario],
    base_seed: Option<u64>,
    seeds: Option<u64>,
) -> Result<MatrixReport, ExperimentError> {
    let mut suites = Vec::new();
    for scenario in scenarios {
        scenario.validate()?;
        let base = base_seed.unwrap_or(scenario.seed);
        let runs = seeds.unwrap_or(scenario.seeds).max(1);
        let mut met = 0;
        let mut matched = 0;
        let mut unsafe_runs = 0;
        let mut failed_seeds = Vec::new();
        let mut observed: BTreeMap<(u8, Option<PartyId>), u64> = BTreeMap::new();
        let mut sample = None;
        let mut expected = None;
        for i in 0..runs {
            let seed = base.wrapping_add(i);
            let report = scenario.run(seed)?;
            if let Some(a) = &report.attack {
                met += u64::from(a.met());
                matched += u64::from(a.outcome_matches());
                unsafe_runs += u64::from(!a.safety_violations.is_empty());
                if !a.met() {
                    failed_seeds.push(seed);
                }
                let detected = u8::from(a.observed.detection == Detection::Detected);
                *observed.entry((detected, a.observed.attributed_to)).or_default() += 1;
                expected.get_or_insert_with(|| a.expected.clone());
            } else {
                met += u64::from(report.expectations_met);
            }
            sample.get_or_insert(report);
        }
        let sample = sample.expect("at least one run");
        suites.push(SuiteSummary {
            scenario: scenario.name.clone(),
            attack: scenario
                .attack
                .as_ref()
                .map(|a| a.attack.to_string())
                .unwrap_or_else(|| "none".into()),
            adversary: scenario.attack.as_ref().map(|a| PartyId(a.controlled_party)),
            asserted: scenario.attack.as_ref().is_none_or(|a| a.attack.asserted()),
            runs,
            met,
            outcome_matched: matched,
            safety_violations: unsafe_runs,
            expected,
            observed: observed
                .into_iter()
                .map(|((d, attributed_to), runs)| ObservedCount {
                    detection: if d == 1 {
                        Detection::Detected
                    } else {
                        Detection::Undetected
                    },
                    attributed_to,
                    runs,
                })
                .collect(),
            failed_seeds,
            sample,
        });
    }
    let checks = suites
        .iter()
        .map(|s| {
            Check::new(
                format!("{} ({})", s.scenario, s.attack),
                s.all_met(),
                format!(
                    "{}/{} met, {} matched the prediction exactly",
                    s.met, s.runs, s.outcome_matched
                ),
            )
        })
        .collect();
    Ok(MatrixReport { suites, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_are_valid() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), BUILTIN.len());
        for s in &all {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn short_matrix_passes() {
        let report = run_attack_matrix(&builtin_scenarios(), None, Some(2)).unwrap();
        for s in &report.suites {
            assert!(s.all_met(), "{}: {:?}", s.scenario, s.failed_seeds);
        }
        assert_eq!(report.to_csv().lines().count(), BUILTIN.len() + 1);
    }
}
