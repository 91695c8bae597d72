//! Air-temperature prediction models for the planner.
//!
//! The RNN sees `[temp, next outdoor temp, heater, ventilator]` per tick,
//! min-max normalized, and predicts the next air temperature.

use rand::Rng;

use crate::config::ScenarioConfig;
use crate::control::mpc::PredictionModel;
use crate::control::ControlError;
use crate::pipeline::{apply_norm, fit_norm_values, invert_norm, NormKind, NormParams};
use crate::plant::{self, PlantParams, WeatherSample};
use crate::predictor::{self, LossCurve, PredictorError, RnnModel, WindowedDataset};
use crate::rng;
use crate::types::{Actuator, CommandSet, EnvState, Tick};

pub const FEATURES: usize = 4;

#[derive(Debug, Clone)]
pub struct ClimatePredictor {
    pub model: RnnModel,
    pub temp_norm: NormParams,
    pub outdoor_norm: NormParams,
    pub curve: LossCurve,
}

fn norm_or_pad(values: &[f64]) -> NormParams {
    fit_norm_values(values, NormKind::Minmax).unwrap_or_else(|_| {
        let v = values.first().copied().unwrap_or(0.0);
        NormParams::new(NormKind::Minmax, v - 1.0, v + 1.0).expect("finite padded range")
    })
}

pub fn weather_at(cfg: &ScenarioConfig, tick: u64) -> WeatherSample {
    plant::weather_profile(
        cfg.weather_profile,
        &cfg.weather,
        Tick::new(tick, cfg.seconds_per_tick),
        cfg.rng_seed,
    )
}

impl ClimatePredictor {
    pub fn features(&self, temp: f64, outdoor_next: f64, heat: f64, vent: f64) -> Vec<f64> {
        vec![
            apply_norm(temp, &self.temp_norm),
            apply_norm(outdoor_next, &self.outdoor_norm),
            heat,
            vent,
        ]
    }

    pub fn validation_mse(&self) -> f64 {
        self.curve.final_validation()
    }

    /// Trains on a synthetic history of the scenario's plant under random
    /// piecewise-constant heater and ventilator commands.
    pub fn pretrain(cfg: &ScenarioConfig) -> Result<Self, PredictorError> {
        let pc = &cfg.predictor;
        let n = pc.pretrain_ticks;
        let mut r = rng::stream(cfg.rng_seed, "pretrain-excitation");
        let mut state = cfg.initial_state;
        let mut cmds = CommandSet::default();
        let mut hold = 0u32;
        let mut temps = Vec::with_capacity(n + 1);
        let mut outdoor = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        for t in 0..n as u64 {
            if hold == 0 {
                hold = r.random_range(5..=30);
                cmds.set(Actuator::Heater, r.random::<f64>());
                let v = if r.random_bool(0.5) {
                    0.0
                } else {
                    r.random::<f64>()
                };
                cmds.set(Actuator::Ventilator, v);
            }
            hold -= 1;
            let w = weather_at(cfg, t + 1);
            temps.push(state.air_temp);
            outdoor.push(w.outdoor_temp);
            inputs.push((cmds.get(Actuator::Heater), cmds.get(Actuator::Ventilator)));
            state = plant::step(&state, &cmds, &w, &cfg.plant);
        }
        temps.push(state.air_temp);

        let temp_norm = norm_or_pad(&temps);
        let outdoor_norm = norm_or_pad(&outdoor);
        let nt: Vec<f64> = temps.iter().map(|t| apply_norm(*t, &temp_norm)).collect();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                vec![
                    nt[t],
                    apply_norm(outdoor[t], &outdoor_norm),
                    inputs[t].0,
                    inputs[t].1,
                ]
            })
            .collect();
        // target for the input at t is the temperature at t + 1
        let targets: Vec<Vec<f64>> = nt.iter().map(|v| vec![*v]).collect();
        let mut data = WindowedDataset::from_tracks(
            &features,
            &targets[..n],
            pc.train.bptt_window,
            pc.window_stride,
            1,
        )?;
        let sp = apply_norm(cfg.crop.target.air_temp, &temp_norm);
        let half = apply_norm(
            cfg.crop.target.air_temp + cfg.crop.tolerance_band.air_temp,
            &temp_norm,
        ) - sp;
        data.label_regimes(0, sp, half);

        let init = RnnModel::random(FEATURES, pc.hidden_size, 1, pc.train.seed ^ cfg.rng_seed);
        let (model, curve) = predictor::train(&init, &data, &pc.train)?;
        Ok(Self {
            model,
            temp_norm,
            outdoor_norm,
            curve,
        })
    }

    /// Hidden state after running the model over `recent` feature vectors.
    pub fn warm_state(&self, recent: &[Vec<f64>]) -> Result<Vec<f64>, PredictorError> {
        let h0 = vec![0.0; self.model.hidden_size];
        let (_, h) = predictor::forward(&self.model, recent, &h0)?;
        Ok(h)
    }

    /// One-step prediction of the next air temperature.
    pub fn predict_next(
        &self,
        h: &[f64],
        temp: f64,
        outdoor_next: f64,
        heat: f64,
        vent: f64,
    ) -> (Vec<f64>, f64) {
        let (h, y) = self
            .model
            .step(h, &self.features(temp, outdoor_next, heat, vent));
        (h, invert_norm(y[0], &self.temp_norm))
    }
}

/// Planner model over `[heater, ventilator]` backed by the RNN.
pub struct RnnClimate<'a> {
    pub predictor: &'a ClimatePredictor,
    /// Outdoor temperature at ticks k+1 ..= k+horizon.
    pub outdoor: Vec<f64>,
}

impl PredictionModel for RnnClimate<'_> {
    type State = (Vec<f64>, f64);

    fn step(
        &self,
        state: &Self::State,
        u: &[f64],
        stage: usize,
    ) -> Result<Self::State, ControlError> {
        let to = *self
            .outdoor
            .get(stage)
            .ok_or_else(|| ControlError::PlannerUnavailable("outdoor forecast too short".into()))?;
        let (h, t) = self
            .predictor
            .predict_next(&state.0, state.1, to, u[0], u[1]);
        if !t.is_finite() {
            return Err(ControlError::PlannerUnavailable(
                "non-finite prediction".into(),
            ));
        }
        Ok((h, t))
    }

    fn readout(&self, state: &Self::State) -> Vec<f64> {
        vec![state.1]
    }
}

/// Planner model over `[heater, ventilator]` that steps the plant itself,
/// holding every other actuator at its last command.
pub struct PlantClimate<'a> {
    pub params: &'a PlantParams,
    pub held: CommandSet,
    /// Weather at ticks k+1 ..= k+horizon.
    pub weather: Vec<WeatherSample>,
}

impl PredictionModel for PlantClimate<'_> {
    type State = EnvState;

    fn step(&self, state: &EnvState, u: &[f64], stage: usize) -> Result<EnvState, ControlError> {
        let w = self
            .weather
            .get(stage)
            .ok_or_else(|| ControlError::PlannerUnavailable("weather forecast too short".into()))?;
        let mut c = self.held;
        c.set(Actuator::Heater, u[0]);
        c.set(Actuator::Ventilator, u[1]);
        Ok(plant::step(state, &c, w, self.params))
    }

    fn readout(&self, state: &EnvState) -> Vec<f64> {
        vec![state.air_temp]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::WeatherProfileId;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(100, 5);
        cfg.weather_profile = WeatherProfileId::Constant;
        cfg.predictor.pretrain_ticks = 600;
        cfg.predictor.train.epochs = 15;
        cfg
    }

    #[test]
    fn pretraining_beats_untrained_and_is_deterministic() {
        let cfg = small_cfg();
        let a = ClimatePredictor::pretrain(&cfg).unwrap();
        let b = ClimatePredictor::pretrain(&cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.validation_mse() < a.curve.initial_validation);
    }

    #[test]
    fn constant_weather_does_not_break_normalization() {
        let cfg = small_cfg();
        let p = ClimatePredictor::pretrain(&cfg).unwrap();
        assert!(p.outdoor_norm.b > p.outdoor_norm.a);
    }

    #[test]
    fn plant_climate_matches_plant_step() {
        let params = PlantParams::default();
        let w = WeatherSample {
            outdoor_temp: 10.0,
            outdoor_light: 0.0,
            wind: 1.0,
            pressure: 1013.0,
        };
        let m = PlantClimate {
            params: &params,
            held: CommandSet::default(),
            weather: vec![w],
        };
        let s0 = EnvState::default();
        let s1 = m.step(&s0, &[1.0, 0.0], 0).unwrap();
        let mut c = CommandSet::default();
        c.set(Actuator::Heater, 1.0);
        assert_eq!(s1, plant::step(&s0, &c, &w, &params));
        assert!(m.step(&s0, &[0.0, 0.0], 1).is_err());
    }
}
