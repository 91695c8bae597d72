//! Linear resource-demand models for energy, irrigation water and fertilizer.
//! All three outputs are clamped at zero.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("coefficient {name} must be finite and non-negative, got {value}")]
pub struct NegativeCoefficient {
    pub name: &'static str,
    pub value: f64,
}

fn check(name: &'static str, value: f64) -> Result<f64, NegativeCoefficient> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(NegativeCoefficient { name, value })
    }
}

/// `max(0, k1·ΔT + k2·L + k3·W)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    k1: f64,
    k2: f64,
    k3: f64,
}

impl EnergyModel {
    pub fn new(k1: f64, k2: f64, k3: f64) -> Result<Self, NegativeCoefficient> {
        Ok(Self {
            k1: check("k1", k1)?,
            k2: check("k2", k2)?,
            k3: check("k3", k3)?,
        })
    }
}

/// `max(0, k4·ΔM + k5·C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrrigationModel {
    k4: f64,
    k5: f64,
}

impl IrrigationModel {
    pub fn new(k4: f64, k5: f64) -> Result<Self, NegativeCoefficient> {
        Ok(Self {
            k4: check("k4", k4)?,
            k5: check("k5", k5)?,
        })
    }
}

/// `max(0, k6·G + k7·N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FertilizationModel {
    k6: f64,
    k7: f64,
}

impl FertilizationModel {
    pub fn new(k6: f64, k7: f64) -> Result<Self, NegativeCoefficient> {
        Ok(Self {
            k6: check("k6", k6)?,
            k7: check("k7", k7)?,
        })
    }
}

/// Energy per tick; `delta_t` is indoor minus outdoor temperature.
pub fn energy_demand(m: &EnergyModel, delta_t: f64, light: f64, wind: f64) -> f64 {
    (m.k1 * delta_t + m.k2 * light + m.k3 * wind).max(0.0)
}

/// Liters per tick; `moisture_deficit` is target minus current moisture.
pub fn irrigation_demand(m: &IrrigationModel, moisture_deficit: f64, crop_water_req: f64) -> f64 {
    (m.k4 * moisture_deficit + m.k5 * crop_water_req).max(0.0)
}

pub fn fertilization_rate(
    m: &FertilizationModel,
    growth_stage_g: f64,
    soil_nutrient_n: f64,
) -> f64 {
    (m.k6 * growth_stage_g + m.k7 * soil_nutrient_n).max(0.0)
}

/// The seven resource coefficients as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceCoefficients {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
}

impl Default for ResourceCoefficients {
    /// Sized so the nominal scenario lands mid-range: a 9 °C heating gap
    /// costs about 1 energy unit per tick, full lamps about 1 more.
    fn default() -> Self {
        Self {
            k1: 0.1,
            k2: 5e-5,
            k3: 0.05,
            k4: 0.002,
            k5: 0.5,
            k6: 1.0,
            k7: 0.2,
        }
    }
}

impl ResourceCoefficients {
    pub fn models(
        &self,
    ) -> Result<(EnergyModel, IrrigationModel, FertilizationModel), NegativeCoefficient> {
        Ok((
            EnergyModel::new(self.k1, self.k2, self.k3)?,
            IrrigationModel::new(self.k4, self.k5)?,
            FertilizationModel::new(self.k6, self.k7)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn energy_examples() {
        let unit = EnergyModel::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(energy_demand(&unit, 2.0, 3.0, 4.0), 9.0);
        let zero = EnergyModel::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(energy_demand(&zero, 17.0, 3e4, 9.0), 0.0);
        let temp_only = EnergyModel::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(energy_demand(&temp_only, -5.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn irrigation_examples() {
        let zero = IrrigationModel::new(0.0, 0.0).unwrap();
        assert_eq!(irrigation_demand(&zero, 500.0, 2.0), 0.0);
        let m = IrrigationModel::new(0.001, 1.0).unwrap();
        assert!((irrigation_demand(&m, 500.0, 2.0) - 2.5).abs() < 1e-12);
        assert_eq!(irrigation_demand(&m, -5000.0, 0.5), 0.0);
    }

    #[test]
    fn fertilization_examples() {
        assert_eq!(
            fertilization_rate(&FertilizationModel::new(0.0, 0.0).unwrap(), 0.9, 3.0),
            0.0
        );
        assert_eq!(
            fertilization_rate(&FertilizationModel::new(2.0, 0.0).unwrap(), 0.5, 3.0),
            1.0
        );
        let err = FertilizationModel::new(1.0, -0.5).unwrap_err();
        assert_eq!(err.name, "k7");
        assert!(EnergyModel::new(f64::NAN, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn outputs_are_non_negative_and_monotone(
            k in prop::array::uniform3(0.0f64..10.0),
            x in prop::array::uniform3(-100.0f64..100.0),
            bump in 0.0f64..50.0,
            which in 0usize..3,
        ) {
            let m = EnergyModel::new(k[0], k[1], k[2]).unwrap();
            let base = energy_demand(&m, x[0], x[1], x[2]);
            let mut y = x;
            y[which] += bump;
            let bumped = energy_demand(&m, y[0], y[1], y[2]);
            prop_assert!(base >= 0.0);
            prop_assert!(bumped >= base);

            let irr = IrrigationModel::new(k[0], k[1]).unwrap();
            prop_assert!(irrigation_demand(&irr, x[0], x[1]) >= 0.0);
            prop_assert!(irrigation_demand(&irr, x[0] + bump, x[1]) >= irrigation_demand(&irr, x[0], x[1]));
            let fert = FertilizationModel::new(k[0], k[2]).unwrap();
            prop_assert!(fertilization_rate(&fert, 0.5, x[2].abs()) >= 0.0);
        }

        #[test]
        fn linear_before_clamping(
            k in prop::array::uniform3(0.0f64..10.0),
            x in prop::array::uniform3(0.0f64..100.0),
            alpha in 0.0f64..5.0,
        ) {
            let m = EnergyModel::new(k[0], k[1], k[2]).unwrap();
            let a = energy_demand(&m, alpha * x[0], alpha * x[1], alpha * x[2]);
            let b = alpha * energy_demand(&m, x[0], x[1], x[2]);
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
