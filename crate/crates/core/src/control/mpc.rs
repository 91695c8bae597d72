//! Receding-horizon planning over a discrete command grid.
//!
//! The search is depth-first in lexicographic order of the command sequence
//! with branch-and-bound pruning. Stage costs are non-negative, so a partial
//! cost already above the incumbent can never recover, and a tie can only win
//! through a lexicographically smaller sequence.

use serde::{Deserialize, Serialize};

use super::ControlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Rnn,
    PlantModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub candidate_levels: Vec<f64>,
    pub weight_tracking: f64,
    pub weight_effort: f64,
    pub prediction_source: PredictionSource,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            candidate_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            weight_tracking: 1.0,
            weight_effort: 0.01,
            prediction_source: PredictionSource::Rnn,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self, path: &str) -> Result<(), ControlError> {
        if self.horizon < 1 {
            return Err(ControlError::invalid(
                format!("{path}.horizon"),
                "must be at least 1",
            ));
        }
        if self.candidate_levels.is_empty() {
            return Err(ControlError::invalid(
                format!("{path}.candidate_levels"),
                "must not be empty",
            ));
        }
        if !self
            .candidate_levels
            .iter()
            .all(|l| (0.0..=1.0).contains(l))
        {
            return Err(ControlError::invalid(
                format!("{path}.candidate_levels"),
                "levels must lie in [0, 1]",
            ));
        }
        for (name, w) in [
            ("weight_tracking", self.weight_tracking),
            ("weight_effort", self.weight_effort),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ControlError::invalid(
                    format!("{path}.{name}"),
                    "must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }

    /// Ascending, de-duplicated levels; the order defining lexicographic ties.
    pub fn sorted_levels(&self) -> Vec<f64> {
        let mut l = self.candidate_levels.clone();
        l.sort_by(f64::total_cmp);
        l.dedup();
        l
    }
}

/// Anything that can roll a tracked state forward under planned commands.
pub trait PredictionModel {
    type State: Clone;

    /// State after applying `u` (one entry per planned actuator) at `stage`.
    fn step(
        &self,
        state: &Self::State,
        u: &[f64],
        stage: usize,
    ) -> Result<Self::State, ControlError>;

    /// Tracked channel values, aligned with the setpoints.
    fn readout(&self, state: &Self::State) -> Vec<f64>;
}

/// `x' = a·x + Σ b_i·u_i + c` on a single tracked channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: f64,
}

impl PredictionModel for LinearModel {
    type State = f64;

    fn step(&self, x: &f64, u: &[f64], _stage: usize) -> Result<f64, ControlError> {
        Ok(self.a * x + self.b.iter().zip(u).map(|(b, u)| b * u).sum::<f64>() + self.c)
    }

    fn readout(&self, x: &f64) -> Vec<f64> {
        vec![*x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcPlan {
    /// First stage of the optimal sequence; the only part applied.
    pub first: Vec<f64>,
    pub sequence: Vec<Vec<f64>>,
    /// Tracked readouts after each stage.
    pub trajectory: Vec<Vec<f64>>,
    pub cost: f64,
    /// Search nodes expanded.
    pub nodes: usize,
}

/// `w_track·Σ (x − sp)² + w_effort·Σ u²` for one stage.
pub fn stage_cost(cfg: &MpcConfig, readout: &[f64], setpoints: &[f64], u: &[f64]) -> f64 {
    let track: f64 = readout
        .iter()
        .zip(setpoints)
        .map(|(x, s)| (x - s) * (x - s))
        .sum();
    let effort: f64 = u.iter().map(|v| v * v).sum();
    cfg.weight_tracking * track + cfg.weight_effort * effort
}

/// Cost of a full command sequence, summed stage by stage.
pub fn sequence_cost<M: PredictionModel>(
    cfg: &MpcConfig,
    model: &M,
    initial: &M::State,
    setpoints: &[f64],
    sequence: &[Vec<f64>],
) -> Result<f64, ControlError> {
    let mut state = initial.clone();
    let mut cost = 0.0;
    for (t, u) in sequence.iter().enumerate() {
        state = model.step(&state, u, t)?;
        cost += stage_cost(cfg, &model.readout(&state), setpoints, u);
    }
    Ok(cost)
}

struct Search<'a, M: PredictionModel> {
    cfg: &'a MpcConfig,
    model: &'a M,
    setpoints: &'a [f64],
    joints: Vec<Vec<f64>>,
    best_cost: f64,
    best: Vec<usize>,
    prefix: Vec<usize>,
    nodes: usize,
}

impl<M: PredictionModel> Search<'_, M> {
    fn dfs(&mut self, stage: usize, state: &M::State, partial: f64) -> Result<(), ControlError> {
        let last = stage + 1 == self.cfg.horizon;
        for j in 0..self.joints.len() {
            self.nodes += 1;
            let next = self.model.step(state, &self.joints[j], stage)?;
            let cost = partial
                + stage_cost(
                    self.cfg,
                    &self.model.readout(&next),
                    self.setpoints,
                    &self.joints[j],
                );
            self.prefix.push(j);
            let depth = self.prefix.len();
            if last {
                if cost < self.best_cost || (cost == self.best_cost && self.prefix < self.best) {
                    self.best_cost = cost;
                    self.best.clone_from(&self.prefix);
                }
            } else if cost < self.best_cost
                || (cost == self.best_cost && self.prefix[..] <= self.best[..depth])
            {
                self.dfs(stage + 1, &next, cost)?;
            }
            self.prefix.pop();
        }
        Ok(())
    }
}

/// Cartesian product of `levels` over `actuators`, actuator 0 most significant.
fn joint_levels(levels: &[f64], actuators: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..actuators {
        out = out
            .into_iter()
            .flat_map(|p| {
                levels.iter().map(move |l| {
                    let mut q = p.clone();
                    q.push(*l);
                    q
                })
            })
            .collect();
    }
    out
}

/// Minimizes summed stage cost over `horizon` stages, returning the argmin
/// sequence (ties broken by the lexicographically smallest sequence).
///
/// Model errors surface as [`ControlError::PlannerUnavailable`].
pub fn mpc_plan<M: PredictionModel>(
    cfg: &MpcConfig,
    model: &M,
    initial: &M::State,
    setpoints: &[f64],
    actuators: usize,
) -> Result<MpcPlan, ControlError> {
    cfg.validate("mpc")?;
    if actuators == 0 {
        return Err(ControlError::invalid(
            "actuators",
            "must plan at least one actuator",
        ));
    }
    let levels = cfg.sorted_levels();
    let joints = joint_levels(&levels, actuators);
    let unavailable = |e: ControlError| match e {
        ControlError::PlannerUnavailable(_) => e,
        other => ControlError::PlannerUnavailable(other.to_string()),
    };

    // incumbent: the best constant sequence, so pruning bites from the start
    let mut best_cost = f64::INFINITY;
    let mut best = Vec::new();
    for (j, u) in joints.iter().enumerate() {
        let seq = vec![u.clone(); cfg.horizon];
        let cost = sequence_cost(cfg, model, initial, setpoints, &seq).map_err(unavailable)?;
        if cost < best_cost {
            best_cost = cost;
            best = vec![j; cfg.horizon];
        }
    }
    if !best_cost.is_finite() {
        return Err(ControlError::PlannerUnavailable(
            "non-finite predicted cost".into(),
        ));
    }

    let mut search = Search {
        cfg,
        model,
        setpoints,
        joints,
        best_cost,
        best,
        prefix: Vec::with_capacity(cfg.horizon),
        nodes: 0,
    };
    search.dfs(0, initial, 0.0).map_err(unavailable)?;

    let sequence: Vec<Vec<f64>> = search
        .best
        .iter()
        .map(|&j| search.joints[j].clone())
        .collect();
    let mut trajectory = Vec::with_capacity(cfg.horizon);
    let mut state = initial.clone();
    for (t, u) in sequence.iter().enumerate() {
        state = model.step(&state, u, t).map_err(unavailable)?;
        trajectory.push(model.readout(&state));
    }
    Ok(MpcPlan {
        first: sequence[0].clone(),
        sequence,
        trajectory,
        cost: search.best_cost,
        nodes: search.nodes,
    })
}
