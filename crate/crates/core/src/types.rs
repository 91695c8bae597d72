//! Shared domain types: channels, environmental state, actuators, crop profiles
//! and the logical simulation clock.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default modeled duration of one tick.
pub const DEFAULT_SECONDS_PER_TICK: f64 = 60.0;

/// One step of logical simulation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub index: u64,
    pub seconds_per_tick: f64,
}

impl Tick {
    pub fn new(index: u64, seconds_per_tick: f64) -> Self {
        Self {
            index,
            seconds_per_tick,
        }
    }

    pub fn next(self) -> Self {
        Self {
            index: self.index + 1,
            ..self
        }
    }

    /// Modeled time since tick zero.
    pub fn elapsed_seconds(&self) -> f64 {
        self.index as f64 * self.seconds_per_tick
    }

    /// Number of ticks in a modeled day, rounded to the nearest tick.
    pub fn ticks_per_day(&self) -> u64 {
        (86_400.0 / self.seconds_per_tick).round().max(1.0) as u64
    }
}

/// Environmental channels tracked on [`EnvState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    AirTemp,
    AirHumidity,
    SoilTemp,
    SoilMoisture,
    Co2,
    Light,
    Wind,
    AirPressure,
    SoilPh,
}

impl Channel {
    pub const ALL: [Channel; 9] = [
        Channel::AirTemp,
        Channel::AirHumidity,
        Channel::SoilTemp,
        Channel::SoilMoisture,
        Channel::Co2,
        Channel::Light,
        Channel::Wind,
        Channel::AirPressure,
        Channel::SoilPh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::AirTemp => "air_temp",
            Channel::AirHumidity => "air_humidity",
            Channel::SoilTemp => "soil_temp",
            Channel::SoilMoisture => "soil_moisture",
            Channel::Co2 => "co2",
            Channel::Light => "light",
            Channel::Wind => "wind",
            Channel::AirPressure => "air_pressure",
            Channel::SoilPh => "soil_ph",
        }
    }

    /// Physical range every state value is clamped to after a plant step.
    pub fn limits(self) -> (f64, f64) {
        match self {
            Channel::AirTemp | Channel::SoilTemp => (-50.0, 70.0),
            Channel::AirHumidity => (0.0, 100.0),
            Channel::SoilMoisture => (0.0, 4095.0),
            Channel::Co2 => (0.0, 10_000.0),
            Channel::Light => (0.0, 200_000.0),
            Channel::Wind => (0.0, 60.0),
            Channel::AirPressure => (800.0, 1100.0),
            Channel::SoilPh => (0.0, 14.0),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown channel `{0}`")]
pub struct UnknownChannel(pub String);

impl FromStr for Channel {
    type Err = UnknownChannel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownChannel(s.to_string()))
    }
}

/// Ground-truth greenhouse environmental vector at one tick.
///
/// Units: air/soil temperature in °C, humidity in %RH, soil moisture in raw
/// sensor counts, CO2 in ppm, light in lux, wind in m/s, pressure in hPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvState {
    pub air_temp: f64,
    pub air_humidity: f64,
    pub soil_temp: f64,
    pub soil_moisture: f64,
    pub co2: f64,
    pub light: f64,
    pub wind: f64,
    pub air_pressure: f64,
    pub soil_ph: f64,
}

impl Default for EnvState {
    fn default() -> Self {
        Self {
            air_temp: 20.0,
            air_humidity: 60.0,
            soil_temp: 20.0,
            soil_moisture: 3000.0,
            co2: 420.0,
            light: 0.0,
            wind: 0.5,
            air_pressure: 1013.0,
            soil_ph: 6.5,
        }
    }
}

impl EnvState {
    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::AirTemp => self.air_temp,
            Channel::AirHumidity => self.air_humidity,
            Channel::SoilTemp => self.soil_temp,
            Channel::SoilMoisture => self.soil_moisture,
            Channel::Co2 => self.co2,
            Channel::Light => self.light,
            Channel::Wind => self.wind,
            Channel::AirPressure => self.air_pressure,
            Channel::SoilPh => self.soil_ph,
        }
    }

    pub fn set(&mut self, channel: Channel, value: f64) {
        let slot = match channel {
            Channel::AirTemp => &mut self.air_temp,
            Channel::AirHumidity => &mut self.air_humidity,
            Channel::SoilTemp => &mut self.soil_temp,
            Channel::SoilMoisture => &mut self.soil_moisture,
            Channel::Co2 => &mut self.co2,
            Channel::Light => &mut self.light,
            Channel::Wind => &mut self.wind,
            Channel::AirPressure => &mut self.air_pressure,
            Channel::SoilPh => &mut self.soil_ph,
        };
        *slot = value;
    }

    /// Builds a state with every channel set to `value`.
    pub fn splat(value: f64) -> Self {
        let mut s = Self::default();
        for c in Channel::ALL {
            s.set(c, value);
        }
        s
    }

    /// Clamps every channel into its physical range. Non-finite values are
    /// replaced by the lower limit.
    pub fn clamped(mut self) -> Self {
        for c in Channel::ALL {
            let (lo, hi) = c.limits();
            let v = self.get(c);
            self.set(c, if v.is_finite() { v.clamp(lo, hi) } else { lo });
        }
        self
    }

    /// First channel violating its range or finiteness, if any.
    pub fn first_violation(&self) -> Option<Channel> {
        Channel::ALL.into_iter().find(|&c| {
            let (lo, hi) = c.limits();
            let v = self.get(c);
            !(v.is_finite() && v >= lo && v <= hi)
        })
    }
}

/// Controllable devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    Heater,
    Ventilator,
    Irrigator,
    FertilizerDoser,
    Lamp,
}

impl Actuator {
    pub const ALL: [Actuator; 5] = [
        Actuator::Heater,
        Actuator::Ventilator,
        Actuator::Irrigator,
        Actuator::FertilizerDoser,
        Actuator::Lamp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Actuator::Heater => "heater",
            Actuator::Ventilator => "ventilator",
            Actuator::Irrigator => "irrigator",
            Actuator::FertilizerDoser => "fertilizer_doser",
            Actuator::Lamp => "lamp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A command for one actuator, magnitude always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub actuator: Actuator,
    magnitude: f64,
    pub tick: u64,
}

impl ActuatorCommand {
    /// Non-finite magnitudes collapse to zero.
    pub fn new(actuator: Actuator, magnitude: f64, tick: u64) -> Self {
        let magnitude = if magnitude.is_finite() {
            magnitude.clamp(0.0, 1.0)
        } else {
            0.0
        };
        Self {
            actuator,
            magnitude,
            tick,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }
}

/// Dense per-actuator command levels, indexed by [`Actuator::index`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandSet(pub [f64; 5]);

impl CommandSet {
    pub fn get(&self, a: Actuator) -> f64 {
        self.0[a.index()]
    }

    pub fn set(&mut self, a: Actuator, magnitude: f64) {
        self.0[a.index()] = ActuatorCommand::new(a, magnitude, 0).magnitude();
    }

    pub fn from_commands<'a>(cmds: impl IntoIterator<Item = &'a ActuatorCommand>) -> Self {
        let mut set = Self::default();
        for c in cmds {
            set.0[c.actuator.index()] = c.magnitude();
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthStage {
    Seedling,
    Vegetative,
    Fruiting,
}

impl GrowthStage {
    /// Stage encoded on `[0, 1]` for the fertilization model.
    pub fn g(self) -> f64 {
        match self {
            GrowthStage::Seedling => 0.2,
            GrowthStage::Vegetative => 0.5,
            GrowthStage::Fruiting => 0.9,
        }
    }
}

/// Stage change taking effect at `from_tick`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageChange {
    pub from_tick: u64,
    pub stage: GrowthStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropProfile {
    pub name: String,
    pub target: EnvState,
    pub tolerance_band: EnvState,
    pub growth_stage: GrowthStage,
    /// Later stage transitions; G must never decrease.
    pub stage_schedule: Vec<StageChange>,
    /// Crop water requirement, liters per tick.
    pub water_requirement: f64,
    /// Soil nutrient level, dimensionless.
    pub nutrient_demand: f64,
}

impl Default for CropProfile {
    fn default() -> Self {
        Self {
            name: "tomato".to_string(),
            target: EnvState {
                air_temp: 24.0,
                air_humidity: 65.0,
                soil_temp: 22.0,
                soil_moisture: 3000.0,
                co2: 600.0,
                light: 15_000.0,
                wind: 0.5,
                air_pressure: 1013.0,
                soil_ph: 6.5,
            },
            tolerance_band: EnvState {
                air_temp: 2.0,
                air_humidity: 15.0,
                soil_temp: 4.0,
                soil_moisture: 150.0,
                co2: 300.0,
                light: 10_000.0,
                wind: 1.0,
                air_pressure: 30.0,
                soil_ph: 0.5,
            },
            growth_stage: GrowthStage::Vegetative,
            stage_schedule: Vec::new(),
            water_requirement: 2.0,
            nutrient_demand: 0.5,
        }
    }
}

impl CropProfile {
    /// Growth stage in effect at `tick`.
    pub fn stage_at(&self, tick: u64) -> GrowthStage {
        self.stage_schedule
            .iter()
            .rfind(|c| c.from_tick <= tick)
            .map_or(self.growth_stage, |c| c.stage)
    }

    pub fn in_band(&self, channel: Channel, value: f64) -> bool {
        (value - self.target.get(channel)).abs() <= self.tolerance_band.get(channel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
        }
        assert!("humidity".parse::<Channel>().is_err());
    }

    #[test]
    fn command_magnitude_is_clamped() {
        assert_eq!(
            ActuatorCommand::new(Actuator::Heater, 1.7, 0).magnitude(),
            1.0
        );
        assert_eq!(
            ActuatorCommand::new(Actuator::Heater, -0.1, 0).magnitude(),
            0.0
        );
        assert_eq!(
            ActuatorCommand::new(Actuator::Lamp, f64::NAN, 0).magnitude(),
            0.0
        );
    }

    #[test]
    fn stage_schedule_lookup() {
        let mut crop = CropProfile::default();
        crop.growth_stage = GrowthStage::Seedling;
        crop.stage_schedule = vec![StageChange {
            from_tick: 10,
            stage: GrowthStage::Fruiting,
        }];
        assert_eq!(crop.stage_at(9), GrowthStage::Seedling);
        assert_eq!(crop.stage_at(10), GrowthStage::Fruiting);
    }

    #[test]
    fn clamping_repairs_out_of_range_state() {
        let mut s = EnvState::default();
        s.air_humidity = 140.0;
        s.co2 = f64::NAN;
        assert_eq!(s.first_violation(), Some(Channel::AirHumidity));
        let c = s.clamped();
        assert_eq!(c.air_humidity, 100.0);
        assert_eq!(c.co2, 0.0);
        assert!(c.first_violation().is_none());
    }
}
