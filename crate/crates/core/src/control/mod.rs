//! Closed-loop control: PID loops, a discrete receding-horizon planner,
//! Mamdani fuzzy inference and the supervisor that picks among them.

pub mod fuzzy;
pub mod mpc;
pub mod pid;
pub mod supervisor;

pub use fuzzy::{default_rule_base, fuzzy_eval, FuzzyOutput, FuzzyRuleBase};
pub use mpc::{mpc_plan, MpcConfig, MpcPlan, PredictionModel, PredictionSource};
pub use pid::{pid_step, PidState};
pub use supervisor::{
    supervisor_select, ControlDecision, Strategy, SupervisorConfig, SupervisorContext,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("planner unavailable: {0}")]
    PlannerUnavailable(String),
    #[error("unknown fuzzy variable {0}")]
    UnknownVariable(String),
    #[error("unknown term {term} for variable {variable}")]
    UnknownTerm { variable: String, term: String },
}

impl ControlError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ControlError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
