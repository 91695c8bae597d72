//! Discrete-time greenhouse surrogate.
//!
//! Every channel follows a first-order linear mixing law evaluated once per
//! tick, then the whole state is clamped to the physical limits in
//! [`Channel::limits`]:
//!
//! ```text
//! air_temp'      = T + (g_heat·u_heat − g_vent·u_vent·(T − T_out) − k_loss·(T − T_out)) / inertia
//! soil_temp'     = S + (T − S) / soil_inertia
//! air_humidity'  = H − (k_hum + g_vent_h·u_vent)·(H − H_amb) + g_irr_h·u_irr
//! soil_moisture' = M + g_irr·u_irr − k_dry·(M − M_dry)
//! co2'           = C − k_co2·(L / 10⁴) − (k_leak + g_vent_c·u_vent)·(C − C_out)
//! light'         = τ·L_out + g_lamp·u_lamp
//! wind'          = κ·W_out + g_vent_w·u_vent
//! air_pressure'  = P_out
//! soil_ph'       = pH − g_fert·u_fert + k_ph·(pH_rest − pH)
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{Actuator, CommandSet, EnvState, Tick};

/// Effect magnitude of each actuator at full command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorGains {
    /// °C of heating power per tick (divided by thermal inertia).
    pub heater: f64,
    /// Fraction of indoor-outdoor temperature gap exchanged per tick.
    pub ventilator: f64,
    /// Soil moisture counts added per tick.
    pub irrigator: f64,
    /// pH units removed per tick.
    pub fertilizer_doser: f64,
    /// Lux added by lamps.
    pub lamp: f64,
}

impl Default for ActuatorGains {
    fn default() -> Self {
        Self {
            heater: 6.0,
            ventilator: 1.5,
            irrigator: 12.0,
            fertilizer_doser: 0.002,
            lamp: 20_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Air thermal inertia in ticks, at least 1.
    pub thermal_inertia: f64,
    pub envelope_loss_coeff: f64,
    /// Fraction of the humidity gap to ambient closed per tick.
    pub humidity_decay: f64,
    pub actuator_gains: ActuatorGains,
    /// ppm consumed per tick per 10 000 lux of light.
    pub co2_consumption_rate: f64,
    pub soil_thermal_inertia: f64,
    pub ambient_humidity: f64,
    pub ventilation_humidity_gain: f64,
    pub irrigation_humidity_gain: f64,
    pub soil_drying_rate: f64,
    pub soil_dry_floor: f64,
    pub outdoor_co2: f64,
    pub co2_leak_rate: f64,
    pub ventilation_co2_gain: f64,
    pub light_transmittance: f64,
    pub wind_coupling: f64,
    pub ventilation_airflow: f64,
    pub ph_rest: f64,
    pub ph_recovery_rate: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            thermal_inertia: 10.0,
            envelope_loss_coeff: 0.3,
            humidity_decay: 0.02,
            actuator_gains: ActuatorGains::default(),
            co2_consumption_rate: 1.0,
            soil_thermal_inertia: 60.0,
            ambient_humidity: 60.0,
            ventilation_humidity_gain: 0.05,
            irrigation_humidity_gain: 0.3,
            soil_drying_rate: 0.002,
            soil_dry_floor: 1500.0,
            outdoor_co2: 420.0,
            co2_leak_rate: 0.01,
            ventilation_co2_gain: 0.1,
            light_transmittance: 0.7,
            wind_coupling: 0.1,
            ventilation_airflow: 1.0,
            ph_rest: 7.0,
            ph_recovery_rate: 0.001,
        }
    }
}

impl PlantParams {
    /// Name of the first parameter violating its invariant.
    pub fn first_invalid(&self) -> Option<&'static str> {
        let g = &self.actuator_gains;
        let checks: [(&'static str, f64); 23] = [
            ("thermal_inertia", self.thermal_inertia),
            ("envelope_loss_coeff", self.envelope_loss_coeff),
            ("humidity_decay", self.humidity_decay),
            ("actuator_gains.heater", g.heater),
            ("actuator_gains.ventilator", g.ventilator),
            ("actuator_gains.irrigator", g.irrigator),
            ("actuator_gains.fertilizer_doser", g.fertilizer_doser),
            ("actuator_gains.lamp", g.lamp),
            ("co2_consumption_rate", self.co2_consumption_rate),
            ("soil_thermal_inertia", self.soil_thermal_inertia),
            ("ambient_humidity", self.ambient_humidity),
            ("ventilation_humidity_gain", self.ventilation_humidity_gain),
            ("irrigation_humidity_gain", self.irrigation_humidity_gain),
            ("soil_drying_rate", self.soil_drying_rate),
            ("soil_dry_floor", self.soil_dry_floor),
            ("outdoor_co2", self.outdoor_co2),
            ("co2_leak_rate", self.co2_leak_rate),
            ("ventilation_co2_gain", self.ventilation_co2_gain),
            ("light_transmittance", self.light_transmittance),
            ("wind_coupling", self.wind_coupling),
            ("ventilation_airflow", self.ventilation_airflow),
            ("ph_rest", self.ph_rest),
            ("ph_recovery_rate", self.ph_recovery_rate),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Some(name);
        }
        if self.thermal_inertia < 1.0 {
            return Some("thermal_inertia");
        }
        if self.soil_thermal_inertia < 1.0 {
            return Some("soil_thermal_inertia");
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    pub outdoor_temp: f64,
    pub outdoor_light: f64,
    pub wind: f64,
    pub pressure: f64,
}

/// Advances the plant by one tick. Pure.
pub fn step(
    state: &EnvState,
    commands: &CommandSet,
    weather: &WeatherSample,
    params: &PlantParams,
) -> EnvState {
    let g = &params.actuator_gains;
    let u_heat = commands.get(Actuator::Heater);
    let u_vent = commands.get(Actuator::Ventilator);
    let u_irr = commands.get(Actuator::Irrigator);
    let u_fert = commands.get(Actuator::FertilizerDoser);
    let u_lamp = commands.get(Actuator::Lamp);

    let t = state.air_temp;
    let gap = t - weather.outdoor_temp;
    let heat = g.heater * u_heat;
    let vent = g.ventilator * u_vent * gap;
    let loss = params.envelope_loss_coeff * gap;
    let air_temp = t + (heat - vent - loss) / params.thermal_inertia;

    let soil_temp = state.soil_temp + (t - state.soil_temp) / params.soil_thermal_inertia;

    let h = state.air_humidity;
    let air_humidity = h
        - (params.humidity_decay + params.ventilation_humidity_gain * u_vent)
            * (h - params.ambient_humidity)
        + params.irrigation_humidity_gain * u_irr;

    let m = state.soil_moisture;
    let soil_moisture =
        m + g.irrigator * u_irr - params.soil_drying_rate * (m - params.soil_dry_floor);

    let c = state.co2;
    let co2 = c
        - params.co2_consumption_rate * (state.light / 10_000.0)
        - (params.co2_leak_rate + params.ventilation_co2_gain * u_vent) * (c - params.outdoor_co2);

    let light = params.light_transmittance * weather.outdoor_light + g.lamp * u_lamp;
    let wind = params.wind_coupling * weather.wind + params.ventilation_airflow * u_vent;

    let ph = state.soil_ph;
    let soil_ph =
        ph - g.fertilizer_doser * u_fert + params.ph_recovery_rate * (params.ph_rest - ph);

    EnvState {
        air_temp,
        air_humidity,
        soil_temp,
        soil_moisture,
        co2,
        light,
        wind,
        air_pressure: weather.pressure,
        soil_ph,
    }
    .clamped()
}

/// Lamp-supplied illuminance for a given command; used by energy accounting.
pub fn lamp_lux(commands: &CommandSet, params: &PlantParams) -> f64 {
    params.actuator_gains.lamp * commands.get(Actuator::Lamp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherProfileId {
    Constant,
    Diurnal,
    Heatwave,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown weather profile `{0}`")]
pub struct UnknownProfile(pub String);

impl FromStr for WeatherProfileId {
    type Err = UnknownProfile;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "diurnal" => Ok(Self::Diurnal),
            "heatwave" => Ok(Self::Heatwave),
            other => Err(UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for WeatherProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Diurnal => "diurnal",
            Self::Heatwave => "heatwave",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherParams {
    /// Daily mean outdoor temperature, and the constant-profile temperature.
    pub mean_temp: f64,
    /// Half peak-to-trough swing of the diurnal temperature.
    pub temp_amplitude: f64,
    /// Noon illuminance of the diurnal profile.
    pub peak_light: f64,
    pub constant_light: f64,
    pub mean_wind: f64,
    pub pressure: f64,
    pub heatwave_offset: f64,
    pub heatwave_start_tick: u64,
    pub heatwave_end_tick: u64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        Self {
            mean_temp: 15.0,
            temp_amplitude: 6.0,
            peak_light: 40_000.0,
            constant_light: 20_000.0,
            mean_wind: 2.0,
            pressure: 1013.0,
            heatwave_offset: 8.0,
            heatwave_start_tick: 1440,
            heatwave_end_tick: 2880,
        }
    }
}

fn seed_phase(seed: u64) -> f64 {
    // splitmix64 finalizer, mapped to [0, 2π)
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 * PI
}

fn diurnal(params: &WeatherParams, tick: Tick, seed: u64) -> WeatherSample {
    let day = tick.ticks_per_day();
    let phase = 2.0 * PI * (tick.index % day) as f64 / day as f64;
    // coldest at midnight, warmest at noon
    let outdoor_temp = params.mean_temp - params.temp_amplitude * phase.cos();
    let outdoor_light = (params.peak_light * -phase.cos()).max(0.0);
    let wind = (params.mean_wind * (1.0 + 0.25 * (phase + seed_phase(seed)).sin())).max(0.0);
    WeatherSample {
        outdoor_temp,
        outdoor_light,
        wind,
        pressure: params.pressure,
    }
}

/// Exogenous weather for `tick`; a pure function of its arguments.
pub fn weather_profile(
    id: WeatherProfileId,
    params: &WeatherParams,
    tick: Tick,
    seed: u64,
) -> WeatherSample {
    match id {
        WeatherProfileId::Constant => WeatherSample {
            outdoor_temp: params.mean_temp,
            outdoor_light: params.constant_light,
            wind: params.mean_wind,
            pressure: params.pressure,
        },
        WeatherProfileId::Diurnal => diurnal(params, tick, seed),
        WeatherProfileId::Heatwave => {
            let mut w = diurnal(params, tick, seed);
            if (params.heatwave_start_tick..params.heatwave_end_tick).contains(&tick.index) {
                w.outdoor_temp += params.heatwave_offset;
            }
            w
        }
    }
}
