//! Threshold tuning: how often the verifier admits or rejects genuine and
//! foreign devices for each match threshold R.

use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{Check, ExperimentError};
use crate::puf::{collect_pairs, match_count, ChallengeResponsePair, ChallengeResponseVector, PufDevice, PufParams};
use crate::rng::{derive_seed, stream};

pub const REDRAW_NOTE: &str = "each repetition redraws C challenges from the device's pair pool";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub seed: u64,
    pub devices: usize,
    pub tuning_devices: usize,
    pub challenges: usize,
    pub r_min: usize,
    pub r_max: usize,
    pub repetitions: usize,
    /// Enrolled pairs per device.
    pub pool_size: usize,
    pub puf: PufParams,
    pub reads: u32,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            devices: 17,
            tuning_devices: 3,
            challenges: 10,
            r_min: 5,
            r_max: 9,
            repetitions: 15,
            pool_size: 21_000,
            puf: PufParams {
                width: 4,
                noise_rate: 0.002,
            },
            reads: crate::puf::DEFAULT_READS,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.challenges == 0 {
            return bad("challenges must be positive".into());
        }
        if self.r_min < 1 || self.r_max > self.challenges || self.r_min > self.r_max {
            return bad(format!(
                "R range [{}, {}] must lie within [1, {}]",
                self.r_min, self.r_max, self.challenges
            ));
        }
        if self.tuning_devices == 0 || self.tuning_devices > self.devices {
            return bad(format!(
                "{} tuning devices out of {} devices",
                self.tuning_devices, self.devices
            ));
        }
        if self.pool_size < self.challenges {
            return bad(format!("pool of {} pairs is smaller than C", self.pool_size));
        }
        if self.repetitions == 0 || self.reads == 0 {
            return bad("repetitions and reads must be positive".into());
        }
        self.puf.validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningRow {
    pub puf_index: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "TAR")]
    pub tar: f64,
    #[serde(rename = "FAR")]
    pub far: f64,
    #[serde(rename = "TRR")]
    pub trr: f64,
    #[serde(rename = "FRR")]
    pub frr: f64,
    pub own_trials: usize,
    pub own_accepted: usize,
    pub cross_trials: usize,
    pub cross_accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningReport {
    pub config: TuningConfig,
    pub note: &'static str,
    pub tuning_devices: Vec<usize>,
    /// Sorted by `(puf_index, R)`.
    pub rows: Vec<TuningRow>,
}

fn rate(count: usize, trials: usize) -> f64 {
    count as f64 / trials as f64
}

/// Runs the sweep. Tuning device `t` answers `repetitions` fresh C-subsets
/// drawn from every device's pool; its own pool gives TAR and FRR, the
/// others give FAR and TRR.
pub fn run_tuning(config: &TuningConfig) -> Result<TuningReport, ExperimentError> {
    config.validate()?;
    let run = |e: crate::puf::PufError| ExperimentError::Run(e.to_string());
    let seed = config.seed;
    let c = config.challenges;

    let mut devices: Vec<PufDevice> = (0..config.devices as u64)
        .map(|d| {
            PufDevice::new(
                derive_seed(seed, "tuning-device", d),
                config.puf,
                stream(seed, "tuning-noise", d),
            )
        })
        .collect();
    let pools: Vec<Vec<ChallengeResponsePair>> = devices
        .iter_mut()
        .enumerate()
        .map(|(d, dev)| {
            collect_pairs(
                dev,
                config.pool_size,
                config.reads,
                &mut stream(seed, "tuning-pool", d as u64),
            )
        })
        .collect::<Result<_, _>>()
        .map_err(run)?;

    let mut chosen = sample(
        &mut stream(seed, "tuning-pick", 0),
        config.devices,
        config.tuning_devices,
    )
    .into_vec();
    chosen.sort_unstable();

    let mut rows = Vec::new();
    for &t in &chosen {
        let mut draw = stream(seed, "tuning-draw", t as u64);
        // Histograms of match counts.
        let mut own = vec![0usize; c + 1];
        let mut cross = vec![0usize; c + 1];
        for (d, pool) in pools.iter().enumerate() {
            for _ in 0..config.repetitions {
                let picked = sample(&mut draw, pool.len(), c);
                let expected = ChallengeResponseVector::new(picked.iter().map(|i| pool[i]).collect());
                let measured = devices[t].respond(&expected, config.reads).map_err(run)?;
                let m = match_count(&expected, &measured).map_err(run)?;
                if d == t {
                    own[m] += 1;
                } else {
                    cross[m] += 1;
                }
            }
        }
        let own_trials: usize = own.iter().sum();
        let cross_trials: usize = cross.iter().sum();
        for r in config.r_min..=config.r_max {
            let own_accepted: usize = own[r..].iter().sum();
            let cross_accepted: usize = cross[r..].iter().sum();
            rows.push(TuningRow {
                puf_index: t,
                r,
                tar: rate(own_accepted, own_trials),
                frr: rate(own_trials - own_accepted, own_trials),
                far: rate(cross_accepted, cross_trials.max(1)),
                trr: rate(cross_trials - cross_accepted, cross_trials.max(1)),
                own_trials,
                own_accepted,
                cross_trials,
                cross_accepted,
            });
        }
    }
    Ok(TuningReport {
        config: config.clone(),
        note: REDRAW_NOTE,
        tuning_devices: chosen,
        rows,
    })
}

impl TuningReport {
    /// `puf_index,R,TAR,FAR,TRR,FRR`, preceded by one `#` comment line.
    pub fn write_csv(&self, mut out: impl Write) -> Result<(), ExperimentError> {
        writeln!(out, "# {}", self.note)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["puf_index", "R", "TAR", "FAR", "TRR", "FRR"])
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        for row in &self.rows {
            w.write_record([
                row.puf_index.to_string(),
                row.r.to_string(),
                row.tar.to_string(),
                row.far.to_string(),
                row.trr.to_string(),
                row.frr.to_string(),
            ])
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    pub fn rows_for(&self, puf_index: usize) -> impl Iterator<Item = &TuningRow> {
        self.rows.iter().filter(move |r| r.puf_index == puf_index)
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut checks = Vec::new();
        let genuine = self.rows.iter().filter(|r| r.tar != 1.0 || r.frr != 0.0).count();
        checks.push(Check::new(
            "TAR = 1 and FRR = 0 for every device and R",
            genuine == 0,
            format!("{genuine} of {} rows deviate", self.rows.len()),
        ));
        let at9: Vec<&TuningRow> = self.rows.iter().filter(|r| r.r == 9).collect();
        if !at9.is_empty() {
            let bad = at9.iter().filter(|r| r.far != 0.0 || r.trr != 1.0).count();
            checks.push(Check::new(
                "FAR = 0 and TRR = 1 at R = 9",
                bad == 0,
                format!("{bad} of {} devices deviate", at9.len()),
            ));
        }
        let non_monotone = self
            .tuning_devices
            .iter()
            .filter(|&&t| {
                let rows: Vec<&TuningRow> = self.rows_for(t).collect();
                rows.windows(2).any(|w| w[1].far > w[0].far)
            })
            .count();
        checks.push(Check::new(
            "FAR non-increasing in R",
            non_monotone == 0,
            format!("{non_monotone} devices violate"),
        ));
        checks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TuningConfig {
        TuningConfig {
            devices: 5,
            pool_size: 200,
            ..TuningConfig::default()
        }
    }

    #[test]
    fn rejects_r_outside_challenges() {
        for (r_min, r_max) in [(0, 9), (5, 11), (8, 6)] {
            let config = TuningConfig {
                r_min,
                r_max,
                ..small()
            };
            assert!(matches!(run_tuning(&config), Err(ExperimentError::Config(_))));
        }
    }

    #[test]
    fn rates_are_complementary() {
        let report = run_tuning(&small()).unwrap();
        assert_eq!(report.rows.len(), 3 * 5);
        for row in &report.rows {
            assert_eq!(row.tar + row.frr, 1.0);
            assert_eq!(row.far + row.trr, 1.0);
            assert_eq!(row.own_trials, 15);
            assert_eq!(row.cross_trials, 4 * 15);
        }
    }

    #[test]
    fn csv_layout() {
        let csv = run_tuning(&small()).unwrap().to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# "));
        assert_eq!(lines.next().unwrap(), "puf_index,R,TAR,FAR,TRR,FRR");
        assert_eq!(lines.count(), 15);
    }
}
