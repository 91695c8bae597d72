//! Per-tick strategy routing.
//!
//! Rules, first match wins per actuator:
//!
//! | actuator          | rule                                                       | strategy |
//! |-------------------|------------------------------------------------------------|----------|
//! | heater/ventilator | planner up, validation MSE ≤ cutoff, temp error ≤ nominal  | mpc      |
//! | irrigator         | predicted temp trend > 0 and humidity < low crossover      | fuzzy    |
//! | any               | otherwise                                                  | pid      |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Actuator, CommandSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pid,
    Mpc,
    Fuzzy,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Pid => "pid",
            Strategy::Mpc => "mpc",
            Strategy::Fuzzy => "fuzzy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisorConfig {
    /// Normalized validation MSE at or below which predictions are trusted.
    pub max_validation_mse: f64,
    /// Air-temperature error (°C) beyond which the planner yields to PID.
    pub nominal_temp_error: f64,
    /// Humidity (%RH) below which "low" dominates the next term.
    pub humidity_low_crossover: f64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            max_validation_mse: 0.05,
            nominal_temp_error: 5.0,
            // where "low" meets "medium" in the default rule base
            humidity_low_crossover: 31.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisorContext {
    pub validation_mse: f64,
    pub planner_available: bool,
    /// Setpoint minus measured air temperature.
    pub temp_error: f64,
    /// Predicted air-temperature change per tick.
    pub temp_trend: f64,
    pub humidity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub commands: CommandSet,
    pub strategies: BTreeMap<Actuator, Strategy>,
    pub rationale: String,
}

/// Strategy for every actuator plus a one-line rationale.
pub fn supervisor_select(
    cfg: &SupervisorConfig,
    ctx: &SupervisorContext,
) -> (BTreeMap<Actuator, Strategy>, String) {
    let mut out: BTreeMap<Actuator, Strategy> =
        Actuator::ALL.iter().map(|a| (*a, Strategy::Pid)).collect();
    let finite = [
        ctx.validation_mse,
        ctx.temp_error,
        ctx.temp_trend,
        ctx.humidity,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return (out, "non-finite context; pid everywhere".to_string());
    }

    let mut why = Vec::new();
    if !ctx.planner_available {
        why.push("planner unavailable".to_string());
    } else if ctx.validation_mse > cfg.max_validation_mse {
        why.push(format!(
            "validation mse {:.4} above {}",
            ctx.validation_mse, cfg.max_validation_mse
        ));
    } else if ctx.temp_error.abs() > cfg.nominal_temp_error {
        why.push(format!("temp error {:.2} beyond nominal", ctx.temp_error));
    } else {
        out.insert(Actuator::Heater, Strategy::Mpc);
        out.insert(Actuator::Ventilator, Strategy::Mpc);
        why.push("mpc on climate".to_string());
    }

    if ctx.temp_trend > 0.0 && ctx.humidity < cfg.humidity_low_crossover {
        out.insert(Actuator::Irrigator, Strategy::Fuzzy);
        why.push("warming and dry: fuzzy irrigation".to_string());
    }
    (out, why.join("; "))
}
