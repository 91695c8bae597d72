//! Post-run summaries: `summary.txt`, `summary.json`, `timeseries.csv`,
//! `decisions.csv` and `alerts.jsonl`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunLog;
use crate::control::supervisor::Strategy;
use crate::reliability::{write_alerts_jsonl, Alert};
use crate::types::{Actuator, Channel};

/// Compensated (Neumaier) sum.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub warmup_ticks: u64,
    /// Share of post-warm-up ticks with true air temperature in band.
    pub in_band_fraction: f64,
    pub air_temp_mae: f64,
    pub air_temp_max_abs_error: f64,
    pub energy_total: f64,
    pub water_total: f64,
    pub fertilizer_total: f64,
    pub alerts: usize,
    pub switches: usize,
    pub outliers: usize,
    pub strategy_ticks: BTreeMap<Actuator, BTreeMap<Strategy, u64>>,
    pub predictor_validation_mse: Option<f64>,
    pub frames_sent: u64,
    pub records_stored: u64,
}

pub fn summarize(log: &RunLog) -> Summary {
    let post: Vec<_> = log
        .ticks
        .iter()
        .filter(|t| t.tick >= log.meta.warmup_ticks)
        .collect();
    let errors: Vec<f64> = post
        .iter()
        .map(|t| (t.truth.air_temp - log.meta.air_setpoint).abs())
        .collect();
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let mut strategy_ticks: BTreeMap<Actuator, BTreeMap<Strategy, u64>> = BTreeMap::new();
    for t in &log.ticks {
        for (a, s) in &t.strategies {
            *strategy_ticks.entry(*a).or_default().entry(*s).or_default() += 1;
        }
    }
    Summary {
        scenario: log.meta.scenario.clone(),
        seed: log.meta.seed,
        ticks: log.ticks.len() as u64,
        warmup_ticks: log.meta.warmup_ticks,
        in_band_fraction: frac(post.iter().filter(|t| t.in_band).count(), post.len()),
        air_temp_mae: if errors.is_empty() {
            0.0
        } else {
            stable_sum(errors.iter().copied()) / errors.len() as f64
        },
        air_temp_max_abs_error: errors.iter().copied().fold(0.0, f64::max),
        energy_total: stable_sum(log.ticks.iter().map(|t| t.resources.energy)),
        water_total: stable_sum(log.ticks.iter().map(|t| t.resources.water)),
        fertilizer_total: stable_sum(log.ticks.iter().map(|t| t.resources.fertilizer)),
        alerts: log.alerts().count(),
        switches: log.switches().count(),
        outliers: log.ticks.iter().map(|t| t.outliers.len()).sum(),
        strategy_ticks,
        predictor_validation_mse: log.meta.predictor_validation_mse,
        frames_sent: log.meta.frames_sent,
        records_stored: log.meta.records_stored,
    }
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {} (seed {})", self.scenario, self.seed);
        let _ = writeln!(s, "ticks: {} (warm-up {})", self.ticks, self.warmup_ticks);
        let _ = writeln!(s, "air temp in band: {}", self.in_band_fraction);
        let _ = writeln!(s, "air temp mae: {}", self.air_temp_mae);
        let _ = writeln!(s, "air temp max abs error: {}", self.air_temp_max_abs_error);
        let _ = writeln!(s, "energy total: {}", self.energy_total);
        let _ = writeln!(s, "water total: {}", self.water_total);
        let _ = writeln!(s, "fertilizer total: {}", self.fertilizer_total);
        let _ = writeln!(s, "alerts: {}", self.alerts);
        let _ = writeln!(s, "switches: {}", self.switches);
        let _ = writeln!(s, "outliers repaired: {}", self.outliers);
        match self.predictor_validation_mse {
            Some(m) => {
                let _ = writeln!(s, "predictor validation mse: {m}");
            }
            None => {
                let _ = writeln!(s, "predictor validation mse: n/a");
            }
        }
        let _ = writeln!(
            s,
            "frames sent: {}, records stored: {}",
            self.frames_sent, self.records_stored
        );
        for (a, counts) in &self.strategy_ticks {
            let parts: Vec<String> = counts
                .iter()
                .map(|(k, v)| format!("{}={v}", k.as_str()))
                .collect();
            let _ = writeln!(s, "strategy {}: {}", a.as_str(), parts.join(" "));
        }
        s
    }
}

fn write_timeseries(log: &RunLog, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["tick".to_string(), "outdoor_temp".to_string()];
    for ch in Channel::ALL {
        header.push(format!("true_{}", ch.as_str()));
    }
    for ch in Channel::ALL {
        header.push(format!("clean_{}", ch.as_str()));
    }
    header.push("predicted_air_temp".into());
    for a in Actuator::ALL {
        header.push(format!("applied_{}", a.as_str()));
    }
    header.extend(["energy", "water", "fertilizer", "in_band"].map(String::from));
    w.write_record(&header)?;
    for t in &log.ticks {
        let mut row = vec![t.tick.to_string(), t.outdoor.outdoor_temp.to_string()];
        row.extend(Channel::ALL.iter().map(|c| t.truth.get(*c).to_string()));
        row.extend(Channel::ALL.iter().map(|c| t.cleaned.get(*c).to_string()));
        row.push(
            t.predicted_air_temp
                .map_or(String::new(), |v| v.to_string()),
        );
        row.extend(Actuator::ALL.iter().map(|a| t.applied.get(*a).to_string()));
        row.extend([
            t.resources.energy.to_string(),
            t.resources.water.to_string(),
            t.resources.fertilizer.to_string(),
            t.in_band.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()
}

fn write_decisions(log: &RunLog, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "tick", "actuator", "strategy", "command", "applied", "device",
    ])?;
    for t in &log.ticks {
        for a in Actuator::ALL {
            let strategy = t.strategies.get(&a).map_or("", |s| s.as_str());
            let device = t.active.get(a.as_str()).map_or("", String::as_str);
            w.write_record([
                t.tick.to_string(),
                a.as_str().to_string(),
                strategy.to_string(),
                t.commands.get(a).to_string(),
                t.applied.get(a).to_string(),
                device.to_string(),
            ])?;
        }
    }
    w.flush()
}

/// Writes every report file into `dir` and returns the summary.
pub fn write_report(log: &RunLog, dir: &Path) -> io::Result<Summary> {
    std::fs::create_dir_all(dir)?;
    let summary = summarize(log);
    std::fs::write(dir.join("summary.txt"), summary.to_text())?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write_timeseries(log, &dir.join("timeseries.csv"))?;
    write_decisions(log, &dir.join("decisions.csv"))?;
    let alerts: Vec<Alert> = log.alerts().cloned().collect();
    write_alerts_jsonl(&dir.join("alerts.jsonl"), &alerts)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::control::mpc::PredictionSource;
    use crate::sim::{run, RunOptions};

    #[test]
    fn stable_sum_recovers_cancelled_terms() {
        assert_eq!(stable_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
        assert_eq!(stable_sum(std::iter::repeat_n(0.1, 10)), 1.0);
        assert_eq!(stable_sum([]), 0.0);
    }

    #[test]
    fn report_files_cover_every_tick() {
        let mut cfg = ScenarioConfig::new(30, 2);
        cfg.predictor.enabled = false;
        cfg.mpc.prediction_source = PredictionSource::PlantModel;
        cfg.mpc.horizon = 2;
        let log = run(&cfg, &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let s = write_report(&log, dir.path()).unwrap();
        assert_eq!(s.ticks, 30);
        let ts = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
        assert_eq!(ts.lines().count(), 31);
        let dec = std::fs::read_to_string(dir.path().join("decisions.csv")).unwrap();
        assert_eq!(dec.lines().count(), 1 + 30 * 5);
        let total: u64 = s.strategy_ticks[&Actuator::Heater].values().sum();
        assert_eq!(total, 30);
        assert!(std::fs::read_to_string(dir.path().join("summary.txt"))
            .unwrap()
            .contains("air temp in band"));
    }
}
