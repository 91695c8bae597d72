//! Scenario files.
//!
//! Scenarios are JSON (parsed leniently as JSON5, so `NaN` and `Infinity`
//! literals reach validation and are reported by field instead of failing
//! as syntax errors). Only `duration_ticks` and `rng_seed` are required;
//! every other key has a default and unknown keys are rejected. Relative
//! paths (`truth_fixture`, `fuzzy_rules`) resolve against the scenario's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{MpcConfig, SupervisorConfig};
use crate::pipeline::RepairPolicy;
use crate::plant::{PlantParams, WeatherParams, WeatherProfileId};
use crate::predictor::TrainConfig;
use crate::reliability::Thresholds;
use crate::resources::ResourceCoefficients;
use crate::sensing::SensorSpec;
use crate::types::{Actuator, Channel, CropProfile, EnvState};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bounds on the accumulated error·seconds.
    pub integral_limits: (f64, f64),
}

impl PidGains {
    const fn new(kp: f64, ki: f64, kd: f64, limit: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            integral_limits: (-limit, limit),
        }
    }

    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        for (key, symbol, v) in [
            ("kp", "Kp", self.kp),
            ("ki", "Ki", self.ki),
            ("kd", "Kd", self.kd),
        ] {
            if !v.is_finite() {
                return Err(invalid(
                    format!("{path}.{key}"),
                    format!("gain {symbol} must be finite, got {v}"),
                ));
            }
        }
        let (lo, hi) = self.integral_limits;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(
                format!("{path}.integral_limits"),
                "need finite lo < hi",
            ));
        }
        if !(lo..=hi).contains(&0.0) {
            return Err(invalid(format!("{path}.integral_limits"), "must contain 0"));
        }
        Ok(())
    }
}

/// One PID loop per actuator. Measured channels: heater and ventilator on
/// air temperature (ventilator acting on the excess over the setpoint plus
/// `ventilation_offset`), irrigator on soil moisture, lamp on light,
/// fertilizer doser on the excess of soil pH over target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    pub heater: PidGains,
    pub ventilator: PidGains,
    pub irrigator: PidGains,
    pub lamp: PidGains,
    pub fertilizer_doser: PidGains,
    /// °C above the air setpoint where ventilation starts to act.
    pub ventilation_offset: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            heater: PidGains::new(0.4, 0.0005, 0.0, 2000.0),
            ventilator: PidGains::new(0.5, 0.0002, 0.0, 2000.0),
            irrigator: PidGains::new(0.005, 1e-6, 0.0, 50_000.0),
            lamp: PidGains::new(5e-5, 0.0, 0.0, 1.0),
            fertilizer_doser: PidGains::new(2.0, 0.0, 0.0, 1.0),
            ventilation_offset: 1.0,
        }
    }
}

impl ControllerGains {
    pub fn get(&self, a: Actuator) -> &PidGains {
        match a {
            Actuator::Heater => &self.heater,
            Actuator::Ventilator => &self.ventilator,
            Actuator::Irrigator => &self.irrigator,
            Actuator::Lamp => &self.lamp,
            Actuator::FertilizerDoser => &self.fertilizer_doser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub enabled: bool,
    pub hidden_size: usize,
    /// Ticks of synthetic excitation history used for pre-training.
    pub pretrain_ticks: usize,
    /// Ticks between consecutive training windows.
    pub window_stride: usize,
    pub train: TrainConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hidden_size: 12,
            pretrain_ticks: 2000,
            window_stride: 2,
            train: TrainConfig {
                epochs: 40,
                learning_rate: 0.05,
                bptt_window: 12,
                batch_size: 8,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// History length of the rolling outlier check.
    pub window: usize,
    pub z_threshold: f64,
    pub repair: RepairPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 30,
            z_threshold: 3.0,
            repair: RepairPolicy::HoldLast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentFaultKind {
    /// Explicit fault report for the window.
    Report,
    /// No heartbeats during the window.
    Silence,
}

/// Health fault on a sensor or actuator device, active `start_tick..end_tick`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFault {
    pub component: String,
    pub start_tick: u64,
    pub end_tick: u64,
    pub kind: ComponentFaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorGroupSpec {
    pub actuator: Actuator,
    pub primary: String,
    pub backups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorGroupSpec {
    pub channel: Channel,
    /// Sensor ids, primary first.
    pub members: Vec<String>,
}

fn default_seconds_per_tick() -> f64 {
    60.0
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_device_id() -> String {
    "gh01".to_string()
}

fn default_weather_profile() -> WeatherProfileId {
    WeatherProfileId::Diurnal
}

/// One sensor per channel, plus a backup air-temperature probe.
pub fn default_sensors() -> Vec<SensorSpec> {
    vec![
        SensorSpec::new("t_air_a", Channel::AirTemp, 0.1).with_noise(0.1),
        SensorSpec::new("t_air_b", Channel::AirTemp, 0.1).with_noise(0.15),
        SensorSpec::new("h_air", Channel::AirHumidity, 0.1).with_noise(0.5),
        SensorSpec::new("t_soil", Channel::SoilTemp, 0.1).with_noise(0.1),
        SensorSpec::new("m_soil", Channel::SoilMoisture, 0.1).with_noise(2.0),
        SensorSpec::new("co2", Channel::Co2, 1.0).with_noise(2.0),
        SensorSpec::new("lux", Channel::Light, 1.0).with_noise(50.0),
        SensorSpec::new("anemo", Channel::Wind, 0.01).with_noise(0.05),
        SensorSpec::new("baro", Channel::AirPressure, 0.1).with_noise(0.1),
        SensorSpec::new("ph", Channel::SoilPh, 0.01).with_noise(0.02),
    ]
}

pub fn default_sensor_groups() -> Vec<SensorGroupSpec> {
    vec![SensorGroupSpec {
        channel: Channel::AirTemp,
        members: vec!["t_air_a".into(), "t_air_b".into()],
    }]
}

/// A primary and one backup device per actuator.
pub fn default_actuator_groups() -> Vec<ActuatorGroupSpec> {
    Actuator::ALL
        .iter()
        .map(|a| ActuatorGroupSpec {
            actuator: *a,
            primary: format!("{}_a", a.as_str()),
            backups: vec![format!("{}_b", a.as_str())],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub duration_ticks: u64,
    pub rng_seed: u64,
    #[serde(default = "default_seconds_per_tick")]
    pub seconds_per_tick: f64,
    #[serde(default = "default_device_id")]
    pub device_id: String,
    #[serde(default)]
    pub crop: CropProfile,
    #[serde(default)]
    pub initial_state: EnvState,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default = "default_weather_profile")]
    pub weather_profile: WeatherProfileId,
    #[serde(default)]
    pub weather: WeatherParams,
    #[serde(default = "default_sensors")]
    pub sensors: Vec<SensorSpec>,
    #[serde(default = "default_sensor_groups")]
    pub sensor_groups: Vec<SensorGroupSpec>,
    #[serde(default = "default_actuator_groups")]
    pub actuator_groups: Vec<ActuatorGroupSpec>,
    #[serde(default)]
    pub controllers: ControllerGains,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub supervisor: SupervisorConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub resources: ResourceCoefficients,
    #[serde(default)]
    pub fault_schedule: Vec<ComponentFault>,
    #[serde(default)]
    pub health_thresholds: Thresholds,
    /// Fuzzy rule base file; the built-in rule base when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzzy_rules: Option<PathBuf>,
    /// CSV of true readings replayed instead of simulating the plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_fixture: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Minimal config with every optional section at its default.
    pub fn new(duration_ticks: u64, rng_seed: u64) -> Self {
        let text = format!("{{\"duration_ticks\": {duration_ticks}, \"rng_seed\": {rng_seed}}}");
        parse_scenario(&text).expect("minimal scenario parses")
    }

    /// Checks every invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration_ticks < 1 {
            return Err(invalid("duration_ticks", "must be at least 1"));
        }
        if !(self.seconds_per_tick.is_finite() && self.seconds_per_tick > 0.0) {
            return Err(invalid("seconds_per_tick", "must be positive"));
        }
        if self.device_id.is_empty()
            || !self
                .device_id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b))
        {
            return Err(invalid(
                "device_id",
                "must be a non-empty [A-Za-z0-9_.-] token",
            ));
        }
        self.validate_crop()?;
        if let Some(ch) = self.initial_state.first_violation() {
            return Err(invalid(
                format!("initial_state.{ch}"),
                "outside channel limits",
            ));
        }
        if let Some(f) = self.plant.first_invalid() {
            return Err(invalid(format!("plant.{f}"), "must be finite and in range"));
        }
        self.validate_weather()?;
        self.validate_sensors()?;
        self.validate_groups()?;

        for a in Actuator::ALL {
            self.controllers
                .get(a)
                .validate(&format!("controllers.{}", a.as_str()))?;
        }
        if !self.controllers.ventilation_offset.is_finite() {
            return Err(invalid("controllers.ventilation_offset", "must be finite"));
        }
        self.mpc
            .validate("mpc")
            .map_err(|e| invalid("mpc", e.to_string()))?;
        let s = &self.supervisor;
        for (k, v) in [
            ("max_validation_mse", s.max_validation_mse),
            ("nominal_temp_error", s.nominal_temp_error),
            ("humidity_low_crossover", s.humidity_low_crossover),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    format!("supervisor.{k}"),
                    "must be finite and non-negative",
                ));
            }
        }
        let p = &self.predictor;
        if p.hidden_size < 1 {
            return Err(invalid("predictor.hidden_size", "must be positive"));
        }
        if p.window_stride < 1 {
            return Err(invalid("predictor.window_stride", "must be positive"));
        }
        if p.enabled && p.pretrain_ticks < 10 * p.train.bptt_window.max(1) {
            return Err(invalid(
                "predictor.pretrain_ticks",
                "need at least ten windows of history",
            ));
        }
        if let Some(f) = p.train.first_invalid() {
            return Err(invalid(format!("predictor.train.{f}"), "out of range"));
        }
        if !p.train.grad_clip.is_finite() {
            return Err(invalid(
                "predictor.train.grad_clip",
                "must be finite in a scenario",
            ));
        }
        if self.pipeline.window < 3 {
            return Err(invalid("pipeline.window", "must be at least 3"));
        }
        if !(self.pipeline.z_threshold.is_finite() && self.pipeline.z_threshold > 0.0) {
            return Err(invalid("pipeline.z_threshold", "must be positive"));
        }
        self.resources
            .models()
            .map_err(|e| invalid(format!("resources.{}", e.name), e.to_string()))?;
        self.health_thresholds
            .validate()
            .map_err(|r| invalid("health_thresholds", r))?;
        for (i, f) in self.fault_schedule.iter().enumerate() {
            if f.end_tick < f.start_tick {
                return Err(invalid(
                    format!("fault_schedule[{i}]"),
                    "end_tick before start_tick",
                ));
            }
        }
        Ok(())
    }

    fn validate_crop(&self) -> Result<(), ConfigError> {
        let c = &self.crop;
        for ch in Channel::ALL {
            let band = c.tolerance_band.get(ch);
            if !(band.is_finite() && band > 0.0) {
                return Err(invalid(
                    format!("crop.tolerance_band.{ch}"),
                    "must be positive",
                ));
            }
            if !c.target.get(ch).is_finite() {
                return Err(invalid(format!("crop.target.{ch}"), "must be finite"));
            }
        }
        if !(c.water_requirement.is_finite() && c.water_requirement >= 0.0) {
            return Err(invalid("crop.water_requirement", "must be non-negative"));
        }
        if !(c.nutrient_demand.is_finite() && c.nutrient_demand >= 0.0) {
            return Err(invalid("crop.nutrient_demand", "must be non-negative"));
        }
        let mut g = c.growth_stage.g();
        let mut last = 0;
        for (i, s) in c.stage_schedule.iter().enumerate() {
            if s.from_tick < last || s.stage.g() < g {
                return Err(invalid(
                    format!("crop.stage_schedule[{i}]"),
                    "growth stage must not go backwards",
                ));
            }
            g = s.stage.g();
            last = s.from_tick;
        }
        Ok(())
    }

    fn validate_weather(&self) -> Result<(), ConfigError> {
        let w = &self.weather;
        for (k, v) in [
            ("mean_temp", w.mean_temp),
            ("temp_amplitude", w.temp_amplitude),
            ("peak_light", w.peak_light),
            ("constant_light", w.constant_light),
            ("mean_wind", w.mean_wind),
            ("pressure", w.pressure),
            ("heatwave_offset", w.heatwave_offset),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("weather.{k}"), "must be finite"));
            }
        }
        Ok(())
    }

    fn validate_sensors(&self) -> Result<(), ConfigError> {
        let mut ids = std::collections::BTreeSet::new();
        for (i, s) in self.sensors.iter().enumerate() {
            if let Some(f) = s.first_invalid() {
                return Err(invalid(format!("sensors[{i}].{f}"), "out of range"));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(invalid(
                    format!("sensors[{i}].id"),
                    format!("duplicate id {}", s.id),
                ));
            }
        }
        for (i, g) in self.sensor_groups.iter().enumerate() {
            if g.members.is_empty() {
                return Err(invalid(
                    format!("sensor_groups[{i}].members"),
                    "must not be empty",
                ));
            }
            for m in &g.members {
                match self.sensors.iter().find(|s| &s.id == m) {
                    None => {
                        return Err(invalid(
                            format!("sensor_groups[{i}].members"),
                            format!("unknown sensor {m}"),
                        ))
                    }
                    Some(s) if s.channel != g.channel => {
                        return Err(invalid(
                            format!("sensor_groups[{i}].members"),
                            format!("{m} does not measure {}", g.channel),
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn validate_groups(&self) -> Result<(), ConfigError> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, g) in self.actuator_groups.iter().enumerate() {
            if !seen.insert(g.actuator) {
                return Err(invalid(
                    format!("actuator_groups[{i}].actuator"),
                    "declared twice",
                ));
            }
            let mut members = std::collections::BTreeSet::new();
            for m in std::iter::once(&g.primary).chain(&g.backups) {
                if m.is_empty() || !members.insert(m) {
                    return Err(invalid(
                        format!("actuator_groups[{i}]"),
                        format!("bad or repeated member {m:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.truth_fixture, &mut self.fuzzy_rules]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses scenario text without resolving paths.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig =
        json5::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses, validates and resolves a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_scenario(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
