//! Virtual sensors: ground truth plus bias, Gaussian noise, quantization and
//! scheduled faults.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::types::{Channel, EnvState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    /// Reading pinned to `parameter`.
    Stuck,
    /// Reading pushed away from truth by `parameter · noise_sd`.
    Spike,
    /// No reading; the sensor reports failed.
    Dropout,
    /// Offset growing by `parameter` per tick since the fault started.
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultKind {
    pub kind: FaultType,
    #[serde(default)]
    pub parameter: f64,
}

/// A fault active on ticks `start_tick..end_tick` (end exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledFault {
    pub start_tick: u64,
    pub end_tick: u64,
    pub fault: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub channel: Channel,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub bias: f64,
    pub resolution: f64,
    #[serde(default)]
    pub fault_schedule: Vec<ScheduledFault>,
}

impl SensorSpec {
    pub fn new(id: impl Into<String>, channel: Channel, resolution: f64) -> Self {
        Self {
            id: id.into(),
            channel,
            noise_sd: 0.0,
            bias: 0.0,
            resolution,
            fault_schedule: Vec::new(),
        }
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_fault(
        mut self,
        start_tick: u64,
        end_tick: u64,
        kind: FaultType,
        parameter: f64,
    ) -> Self {
        self.fault_schedule.push(ScheduledFault {
            start_tick,
            end_tick,
            fault: FaultKind { kind, parameter },
        });
        self
    }

    pub fn active_fault(&self, tick: u64) -> Option<&ScheduledFault> {
        self.fault_schedule
            .iter()
            .find(|f| (f.start_tick..f.end_tick).contains(&tick))
    }

    /// Name of the first field violating its invariant.
    pub fn first_invalid(&self) -> Option<&'static str> {
        if self.id.is_empty() || !self.id.bytes().all(is_token_byte) {
            return Some("id");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Some("noise_sd");
        }
        if !self.bias.is_finite() {
            return Some("bias");
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Some("resolution");
        }
        if self
            .fault_schedule
            .iter()
            .any(|f| !f.fault.parameter.is_finite() || f.end_tick < f.start_tick)
        {
            return Some("fault_schedule");
        }
        None
    }
}

/// Bytes allowed in ids and channel names on the wire.
pub(crate) fn is_token_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Ok,
    Suspect,
    Failed,
}

/// One post-ADC measurement. When `quality` is `Failed` the value carries the
/// sensor's last good reading (0.0 before any good reading exists).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    pub tick: u64,
    pub channel: Channel,
    pub value: f64,
    pub quality: Quality,
}

/// Rounds `x` to the nearest multiple of `resolution`.
///
/// Decimal resolutions (0.1, 0.01, ...) divide by the integer reciprocal so
/// that results are the closest doubles to the decimal values.
pub fn quantize(x: f64, resolution: f64) -> f64 {
    let inv = 1.0 / resolution;
    let inv_round = inv.round();
    if inv_round >= 1.0 && (inv - inv_round).abs() < 1e-9 * inv_round {
        (x * inv_round).round() / inv_round
    } else {
        (x / resolution).round() * resolution
    }
}

/// Decimal places a device prints for readings at `resolution`
/// (0.1 gives 1, 1.0 gives 0).
pub fn decimals_for(resolution: f64) -> usize {
    let mut d = 0;
    while d < 12 && (resolution * 10f64.powi(d as i32)).fract().abs() > 1e-9 {
        d += 1;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SensingError {
    #[error("duplicate sensor id `{0}`")]
    DuplicateId(String),
}

/// Samples one sensor at `tick`.
pub fn sample<R: Rng + ?Sized>(
    truth: &EnvState,
    spec: &SensorSpec,
    tick: u64,
    rng: &mut R,
    last_good: Option<f64>,
) -> SensorReading {
    let true_value = truth.get(spec.channel);
    let noise = if spec.noise_sd > 0.0 {
        Normal::new(0.0, spec.noise_sd)
            .expect("noise_sd validated non-negative and finite")
            .sample(rng)
    } else {
        0.0
    };
    let nominal = true_value + spec.bias;
    let clean = quantize(nominal + noise, spec.resolution);

    let (value, quality) = match spec.active_fault(tick) {
        None => (clean, Quality::Ok),
        Some(f) => match f.fault.kind {
            FaultType::Stuck => (f.fault.parameter, Quality::Suspect),
            FaultType::Spike => {
                let dir = if clean >= nominal { 1.0 } else { -1.0 };
                (
                    clean + dir * f.fault.parameter.abs() * spec.noise_sd,
                    Quality::Suspect,
                )
            }
            FaultType::Drift => {
                let offset = f.fault.parameter * (tick - f.start_tick) as f64;
                (
                    quantize(nominal + noise + offset, spec.resolution),
                    Quality::Suspect,
                )
            }
            FaultType::Dropout => (last_good.unwrap_or(0.0), Quality::Failed),
        },
    };
    SensorReading {
        sensor_id: spec.id.clone(),
        tick,
        channel: spec.channel,
        value,
        quality,
    }
}

/// Last good value per sensor, feeding the failed-reading sentinel.
#[derive(Debug, Clone, Default)]
pub struct SensorMemory {
    last_good: BTreeMap<String, f64>,
}

impl SensorMemory {
    pub fn last_good(&self, id: &str) -> Option<f64> {
        self.last_good.get(id).copied()
    }
}

/// Samples every sensor, each from its own `(seed, id, tick)` stream.
/// Readings are returned sorted by sensor id.
pub fn sensor_suite(
    specs: &[SensorSpec],
    truth: &EnvState,
    tick: u64,
    seed: u64,
    memory: &mut SensorMemory,
) -> Result<Vec<SensorReading>, SensingError> {
    let mut seen = BTreeSet::new();
    for s in specs {
        if !seen.insert(s.id.as_str()) {
            return Err(SensingError::DuplicateId(s.id.clone()));
        }
    }
    let mut ordered: Vec<&SensorSpec> = specs.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let readings = ordered
        .into_iter()
        .map(|spec| {
            let mut stream = rng::tick_stream(seed, &spec.id, tick);
            let r = sample(truth, spec, tick, &mut stream, memory.last_good(&spec.id));
            if r.quality != Quality::Failed {
                memory.last_good.insert(spec.id.clone(), r.value);
            }
            r
        })
        .collect();
    Ok(readings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decimals_follow_resolution() {
        assert_eq!(decimals_for(1.0), 0);
        assert_eq!(decimals_for(0.1), 1);
        assert_eq!(decimals_for(0.01), 2);
        assert_eq!(decimals_for(0.25), 2);
        assert_eq!(decimals_for(5.0), 0);
    }

    fn truth_temp(t: f64) -> EnvState {
        EnvState {
            air_temp: t,
            ..EnvState::default()
        }
    }

    #[test]
    fn quantization_only() {
        let spec = SensorSpec::new("t1", Channel::AirTemp, 0.1);
        let r = sample(&truth_temp(21.34), &spec, 0, &mut rng::stream(0, "x"), None);
        assert_eq!(r.value, 21.3);
        assert_eq!(r.quality, Quality::Ok);
    }

    #[test]
    fn stuck_fault_ignores_truth() {
        let spec =
            SensorSpec::new("t1", Channel::AirTemp, 0.1).with_fault(0, 10, FaultType::Stuck, 25.0);
        for t in [-5.0, 21.0, 40.0] {
            let r = sample(&truth_temp(t), &spec, 3, &mut rng::stream(0, "x"), None);
            assert_eq!(r.value, 25.0);
            assert_eq!(r.quality, Quality::Suspect);
        }
    }

    #[test]
    fn spike_deviates_by_at_least_parameter_sigmas() {
        let spec = SensorSpec::new("t1", Channel::AirTemp, 0.01)
            .with_noise(0.2)
            .with_fault(0, 1000, FaultType::Spike, 10.0);
        for tick in 0..1000 {
            let r = sample(
                &truth_temp(21.0),
                &spec,
                tick,
                &mut rng::tick_stream(5, "t1", tick),
                None,
            );
            assert!(
                (r.value - 21.0).abs() >= 10.0 * 0.2,
                "tick {tick}: {}",
                r.value
            );
        }
    }

    #[test]
    fn dropout_carries_last_good_value() {
        let spec =
            SensorSpec::new("t1", Channel::AirTemp, 0.1).with_fault(2, 4, FaultType::Dropout, 0.0);
        let mut mem = SensorMemory::default();
        let specs = [spec];
        let r0 = sensor_suite(&specs, &truth_temp(20.0), 1, 0, &mut mem).unwrap();
        assert_eq!(r0[0].quality, Quality::Ok);
        let r1 = sensor_suite(&specs, &truth_temp(30.0), 2, 0, &mut mem).unwrap();
        assert_eq!(r1[0].quality, Quality::Failed);
        assert_eq!(r1[0].value, 20.0);
        let r2 = sensor_suite(&specs, &truth_temp(30.0), 4, 0, &mut mem).unwrap();
        assert_eq!(r2[0].quality, Quality::Ok);
        assert_eq!(r2[0].value, 30.0);
    }

    #[test]
    fn drift_grows_linearly() {
        let spec = SensorSpec::new("t1", Channel::AirTemp, 0.01).with_fault(
            10,
            100,
            FaultType::Drift,
            0.05,
        );
        let r = sample(&truth_temp(20.0), &spec, 30, &mut rng::stream(0, "x"), None);
        assert!((r.value - 21.0).abs() < 1e-9);
    }

    #[test]
    fn empty_suite() {
        let r = sensor_suite(
            &[],
            &EnvState::default(),
            0,
            1,
            &mut SensorMemory::default(),
        )
        .unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let specs = [
            SensorSpec::new("a", Channel::AirTemp, 0.1),
            SensorSpec::new("a", Channel::Co2, 1.0),
        ];
        let err = sensor_suite(
            &specs,
            &EnvState::default(),
            0,
            1,
            &mut SensorMemory::default(),
        )
        .unwrap_err();
        assert_eq!(err, SensingError::DuplicateId("a".into()));
    }

    #[test]
    fn bias_deltas_survive_noise_free_sampling() {
        let specs = [
            SensorSpec::new("c", Channel::AirTemp, 0.01).with_bias(0.5),
            SensorSpec::new("a", Channel::AirTemp, 0.01).with_bias(-0.25),
            SensorSpec::new("b", Channel::AirTemp, 0.01),
        ];
        let r = sensor_suite(
            &specs,
            &truth_temp(21.0),
            0,
            9,
            &mut SensorMemory::default(),
        )
        .unwrap();
        let ids: Vec<_> = r.iter().map(|x| x.sensor_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!((r[1].value - r[0].value - 0.25).abs() < 1e-9);
        assert!((r[2].value - r[1].value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn noise_is_keyed_by_seed_tick_and_id() {
        let specs = [
            SensorSpec::new("a", Channel::AirTemp, 0.001).with_noise(1.0),
            SensorSpec::new("b", Channel::AirTemp, 0.001).with_noise(1.0),
        ];
        let run = |specs: &[SensorSpec]| {
            sensor_suite(specs, &truth_temp(20.0), 5, 3, &mut SensorMemory::default()).unwrap()
        };
        let both = run(&specs);
        let only_b = run(&specs[1..]);
        assert_eq!(both[1], only_b[0]);
        assert_ne!(both[0].value, both[1].value);
    }

    proptest! {
        #[test]
        fn noise_free_error_is_within_half_resolution(
            truth in -40.0f64..60.0,
            bias in -3.0f64..3.0,
            res_idx in 0usize..4,
        ) {
            let res = [0.01, 0.1, 0.5, 1.0][res_idx];
            let spec = SensorSpec::new("s", Channel::AirTemp, res).with_bias(bias);
            let r = sample(&truth_temp(truth), &spec, 0, &mut rng::stream(0, "s"), None);
            prop_assert!((r.value - truth - bias).abs() <= res / 2.0 + 1e-9);
        }
    }
}
