//! Component health tracking and redundancy failover.
//!
//! A component is failed once a fault is reported or it has been silent for
//! more than `failed_after` ticks, degraded once silent for more than
//! `degraded_after`, healthy otherwise. Every status change produces exactly
//! one alert, recoveries included.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Sensor,
    Actuator,
    Comms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthStatus {
    Healthy,
    Degraded,
    Failed,
}

impl HealthStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthStatus::Healthy => "healthy",
            HealthStatus::Degraded => "degraded",
            HealthStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentHealth {
    pub component_id: String,
    pub kind: ComponentKind,
    pub last_heartbeat_tick: u64,
    pub status: HealthStatus,
    pub fault_reported: bool,
}

impl ComponentHealth {
    pub fn new(id: &str, kind: ComponentKind, tick: u64) -> Self {
        Self {
            component_id: id.to_string(),
            kind,
            last_heartbeat_tick: tick,
            status: HealthStatus::Healthy,
            fault_reported: false,
        }
    }

    pub fn beat(&mut self, tick: u64) {
        self.last_heartbeat_tick = self.last_heartbeat_tick.max(tick);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub degraded_after: u64,
    pub failed_after: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            degraded_after: 3,
            failed_after: 5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.degraded_after < self.failed_after {
            Ok(())
        } else {
            Err(format!(
                "degraded_after ({}) must be below failed_after ({})",
                self.degraded_after, self.failed_after
            ))
        }
    }

    pub fn status(&self, c: &ComponentHealth, now: u64) -> HealthStatus {
        let silent = now.saturating_sub(c.last_heartbeat_tick);
        if c.fault_reported || silent > self.failed_after {
            HealthStatus::Failed
        } else if silent > self.degraded_after {
            HealthStatus::Degraded
        } else {
            HealthStatus::Healthy
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub tick: u64,
    pub component: String,
    pub old_status: HealthStatus,
    pub new_status: HealthStatus,
    pub message: String,
}

/// Re-evaluates every component at `now`; one alert per status change.
pub fn heartbeat_check(
    registry: &[ComponentHealth],
    now: u64,
    th: &Thresholds,
) -> (Vec<ComponentHealth>, Vec<Alert>) {
    let mut alerts = Vec::new();
    let updated = registry
        .iter()
        .map(|c| {
            let status = th.status(c, now);
            if status != c.status {
                let why = if c.fault_reported {
                    "fault reported".to_string()
                } else {
                    format!("last heartbeat at tick {}", c.last_heartbeat_tick)
                };
                alerts.push(Alert {
                    tick: now,
                    component: c.component_id.clone(),
                    old_status: c.status,
                    new_status: status,
                    message: format!(
                        "{} {} -> {}: {why}",
                        c.component_id,
                        c.status.as_str(),
                        status.as_str()
                    ),
                });
            }
            ComponentHealth {
                status,
                ..c.clone()
            }
        })
        .collect();
    (updated, alerts)
}

fn status_of(registry: &[ComponentHealth], id: &str) -> HealthStatus {
    registry
        .iter()
        .find(|c| c.component_id == id)
        .map_or(HealthStatus::Failed, |c| c.status)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundancyGroup {
    pub role: String,
    pub primary_id: String,
    pub backup_ids: Vec<String>,
    pub active_id: String,
    /// Primary seen healthy while a backup is active; switch back next check.
    pub failback_armed: bool,
    /// Every member failed at the last check.
    pub exhausted: bool,
}

impl RedundancyGroup {
    pub fn new(role: &str, primary: &str, backups: &[&str]) -> Self {
        Self {
            role: role.to_string(),
            primary_id: primary.to_string(),
            backup_ids: backups.iter().map(|b| b.to_string()).collect(),
            active_id: primary.to_string(),
            failback_armed: false,
            exhausted: false,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.primary_id).chain(&self.backup_ids)
    }

    /// True when the active member can act.
    pub fn available(&self, registry: &[ComponentHealth]) -> bool {
        status_of(registry, &self.active_id) != HealthStatus::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub tick: u64,
    pub role: String,
    pub from: String,
    pub to: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailoverOutcome {
    pub switch: Option<SwitchEvent>,
    /// Raised once when the group runs out of usable members.
    pub exhausted: Option<Alert>,
}

/// Applies the selection rule to `group` at `tick`.
///
/// A failed active member is replaced immediately by the first non-failed
/// member in `[primary, backups...]`. A healthy primary takes over again one
/// check after it is first seen healthy.
pub fn failover(
    group: &RedundancyGroup,
    registry: &[ComponentHealth],
    tick: u64,
) -> (RedundancyGroup, FailoverOutcome) {
    let mut g = group.clone();
    let mut out = FailoverOutcome::default();
    let switch = |g: &mut RedundancyGroup, to: &str, reason: &str| {
        let ev = SwitchEvent {
            tick,
            role: g.role.clone(),
            from: g.active_id.clone(),
            to: to.to_string(),
            reason: reason.to_string(),
        };
        g.active_id = to.to_string();
        ev
    };

    if status_of(registry, &g.active_id) == HealthStatus::Failed {
        g.failback_armed = false;
        let next = g
            .members()
            .find(|m| status_of(registry, m) != HealthStatus::Failed)
            .cloned();
        match next {
            Some(id) => {
                out.switch = Some(switch(&mut g, &id, "active member failed"));
                g.exhausted = false;
            }
            None => {
                if !g.exhausted {
                    out.exhausted = Some(Alert {
                        tick,
                        component: g.role.clone(),
                        old_status: HealthStatus::Degraded,
                        new_status: HealthStatus::Failed,
                        message: format!("group {} exhausted: every member failed", g.role),
                    });
                }
                g.exhausted = true;
            }
        }
        return (g, out);
    }
    g.exhausted = false;

    if g.active_id != g.primary_id {
        if status_of(registry, &g.primary_id) == HealthStatus::Healthy {
            if g.failback_armed {
                let primary = g.primary_id.clone();
                out.switch = Some(switch(&mut g, &primary, "primary recovered"));
                g.failback_armed = false;
            } else {
                g.failback_armed = true;
            }
        } else {
            g.failback_armed = false;
        }
    }
    (g, out)
}

/// Registry plus redundancy groups, advanced one tick at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthTracker {
    pub registry: Vec<ComponentHealth>,
    pub groups: Vec<RedundancyGroup>,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthUpdate {
    pub alerts: Vec<Alert>,
    pub switches: Vec<SwitchEvent>,
}

impl HealthTracker {
    /// Every component starts healthy with a heartbeat at `start`.
    pub fn new(
        components: &[(String, ComponentKind)],
        groups: Vec<RedundancyGroup>,
        thresholds: Thresholds,
        start: u64,
    ) -> Self {
        Self {
            registry: components
                .iter()
                .map(|(id, k)| ComponentHealth::new(id, *k, start))
                .collect(),
            groups,
            thresholds,
        }
    }

    /// Records this tick's heartbeats and fault reports, re-evaluates
    /// health, then runs failover for every group.
    pub fn update(
        &mut self,
        now: u64,
        beating: &BTreeSet<String>,
        reporting: &BTreeSet<String>,
    ) -> HealthUpdate {
        for c in &mut self.registry {
            c.fault_reported = reporting.contains(&c.component_id);
            if beating.contains(&c.component_id) {
                c.beat(now);
            }
        }
        let (registry, mut alerts) = heartbeat_check(&self.registry, now, &self.thresholds);
        self.registry = registry;
        let mut switches = Vec::new();
        for g in &mut self.groups {
            let (next, out) = failover(g, &self.registry, now);
            *g = next;
            switches.extend(out.switch);
            alerts.extend(out.exhausted);
        }
        HealthUpdate { alerts, switches }
    }

    pub fn group(&self, role: &str) -> Option<&RedundancyGroup> {
        self.groups.iter().find(|g| g.role == role)
    }

    /// Active member of `role` when it can act.
    pub fn active(&self, role: &str) -> Option<&str> {
        self.group(role)
            .filter(|g| g.available(&self.registry))
            .map(|g| g.active_id.as_str())
    }

    pub fn status(&self, id: &str) -> HealthStatus {
        status_of(&self.registry, id)
    }
}

/// Appends alerts to `path` as JSON lines.
pub fn write_alerts_jsonl(path: &Path, alerts: &[Alert]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for a in alerts {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(ids: &[&str]) -> Vec<ComponentHealth> {
        ids.iter()
            .map(|i| ComponentHealth::new(i, ComponentKind::Actuator, 0))
            .collect()
    }

    fn with_status(mut r: Vec<ComponentHealth>, id: &str, s: HealthStatus) -> Vec<ComponentHealth> {
        r.iter_mut().find(|c| c.component_id == id).unwrap().status = s;
        r
    }

    #[test]
    fn current_heartbeats_are_quiet() {
        let th = Thresholds::default();
        let mut r = reg(&["a", "b"]);
        r.iter_mut().for_each(|c| c.beat(10));
        let (r2, alerts) = heartbeat_check(&r, 10, &th);
        assert!(alerts.is_empty());
        assert!(r2.iter().all(|c| c.status == HealthStatus::Healthy));
    }

    #[test]
    fn silence_past_threshold_fails_once() {
        let th = Thresholds::default();
        let (r, alerts) = heartbeat_check(&reg(&["a"]), th.failed_after + 1, &th);
        assert_eq!(r[0].status, HealthStatus::Failed);
        assert_eq!(alerts.len(), 1);
        let (_, again) = heartbeat_check(&r, th.failed_after + 2, &th);
        assert!(again.is_empty());
    }

    #[test]
    fn degrade_then_recover() {
        let th = Thresholds::default();
        let (mut r, a1) = heartbeat_check(&reg(&["a"]), th.degraded_after + 1, &th);
        assert_eq!(a1.len(), 1);
        assert_eq!(a1[0].new_status, HealthStatus::Degraded);
        r[0].beat(th.degraded_after + 2);
        let (r, a2) = heartbeat_check(&r, th.degraded_after + 2, &th);
        assert_eq!(r[0].status, HealthStatus::Healthy);
        assert_eq!(a2.len(), 1);
        assert_eq!(
            (a2[0].old_status, a2[0].new_status),
            (HealthStatus::Degraded, HealthStatus::Healthy)
        );
    }

    #[test]
    fn reported_fault_fails_immediately() {
        let mut r = reg(&["a"]);
        r[0].fault_reported = true;
        let (r, a) = heartbeat_check(&r, 0, &Thresholds::default());
        assert_eq!(r[0].status, HealthStatus::Failed);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn healthy_primary_stays() {
        let g = RedundancyGroup::new("heater", "p", &["b1"]);
        let (g2, out) = failover(&g, &reg(&["p", "b1"]), 1);
        assert_eq!(g2, g);
        assert_eq!(out, FailoverOutcome::default());
    }

    #[test]
    fn failed_primary_moves_to_first_backup() {
        let g = RedundancyGroup::new("heater", "p", &["b1", "b2"]);
        let r = with_status(reg(&["p", "b1", "b2"]), "p", HealthStatus::Failed);
        let (g2, out) = failover(&g, &r, 4);
        assert_eq!(g2.active_id, "b1");
        assert_eq!(out.switch.unwrap().to, "b1");
    }

    #[test]
    fn skips_failed_backups_in_one_step() {
        let g = RedundancyGroup::new("heater", "p", &["b1", "b2"]);
        let r = with_status(
            with_status(reg(&["p", "b1", "b2"]), "p", HealthStatus::Failed),
            "b1",
            HealthStatus::Failed,
        );
        let (g2, out) = failover(&g, &r, 4);
        assert_eq!(g2.active_id, "b2");
        let ev = out.switch.unwrap();
        assert_eq!((ev.from.as_str(), ev.to.as_str()), ("p", "b2"));
    }

    #[test]
    fn fails_back_one_check_after_recovery() {
        let g = RedundancyGroup::new("heater", "p", &["b1"]);
        let down = with_status(reg(&["p", "b1"]), "p", HealthStatus::Failed);
        let (g, _) = failover(&g, &down, 1);
        let up = reg(&["p", "b1"]);
        let (g, out) = failover(&g, &up, 2);
        assert_eq!(g.active_id, "b1");
        assert!(out.switch.is_none() && g.failback_armed);
        let (g, out) = failover(&g, &up, 3);
        assert_eq!(g.active_id, "p");
        assert_eq!(out.switch.unwrap().reason, "primary recovered");
    }

    #[test]
    fn degraded_primary_does_not_fail_back() {
        let g = RedundancyGroup {
            active_id: "b1".into(),
            ..RedundancyGroup::new("heater", "p", &["b1"])
        };
        let r = with_status(reg(&["p", "b1"]), "p", HealthStatus::Degraded);
        let (g, _) = failover(&g, &r, 1);
        let (g, _) = failover(&g, &r, 2);
        assert_eq!(g.active_id, "b1");
    }

    #[test]
    fn exhausted_group_alerts_once() {
        let g = RedundancyGroup::new("heater", "p", &["b1"]);
        let r = with_status(
            with_status(reg(&["p", "b1"]), "p", HealthStatus::Failed),
            "b1",
            HealthStatus::Failed,
        );
        let (g, out) = failover(&g, &r, 1);
        assert!(out.exhausted.is_some());
        assert_eq!(g.active_id, "p");
        assert!(!g.available(&r));
        let (_, out) = failover(&g, &r, 2);
        assert!(out.exhausted.is_none());
    }

    #[test]
    fn alerts_file_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("alerts.jsonl");
        let (_, alerts) = heartbeat_check(&reg(&["a"]), 9, &Thresholds::default());
        write_alerts_jsonl(&p, &alerts).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            r#"{"tick":9,"component":"a","old_status":"healthy","new_status":"failed","message":"#
        ));
    }

    #[test]
    fn tracker_fails_over_within_the_failing_tick() {
        let comps = vec![
            ("p".to_string(), ComponentKind::Actuator),
            ("b".to_string(), ComponentKind::Actuator),
        ];
        let mut t = HealthTracker::new(
            &comps,
            vec![RedundancyGroup::new("heater", "p", &["b"])],
            Thresholds::default(),
            0,
        );
        let all: BTreeSet<String> = ["p", "b"].iter().map(|s| s.to_string()).collect();
        let only_b: BTreeSet<String> = ["b".to_string()].into();
        let none = BTreeSet::new();
        assert!(t.update(1, &all, &none).alerts.is_empty());
        let u = t.update(2, &all, &["p".to_string()].into());
        assert_eq!(u.alerts.len(), 1);
        assert_eq!(u.switches[0].to, "b");
        assert_eq!(t.active("heater"), Some("b"));
        // report clears: p recovers, fail-back arms then fires
        assert_eq!(t.update(3, &all, &none).alerts.len(), 1);
        assert_eq!(t.active("heater"), Some("b"));
        assert_eq!(t.update(4, &only_b, &none).switches[0].to, "p");
        assert_eq!(t.status("missing"), HealthStatus::Failed);
    }
}
