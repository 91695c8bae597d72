//! Closed-loop run: plant, sensing, telemetry, cleaning, prediction,
//! supervision and health monitoring, one tick at a time.
//!
//! Per tick `k`: weather and truth for `k`, sensor readings, heartbeats and
//! failover, uplink of the readings, per-channel cleaning, strategy
//! selection, control, routing through the active actuator devices and
//! resource accounting. The commands applied at `k` drive the plant from
//! `k` to `k + 1`.

pub mod climate;
pub mod report;
pub mod tables;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ComponentFaultKind, ConfigError, ScenarioConfig};
use crate::control::fuzzy::{default_rule_base, fuzzy_eval, FuzzyRuleBase};
use crate::control::mpc::{mpc_plan, PredictionSource};
use crate::control::pid::{pid_step, PidState};
use crate::control::supervisor::{supervisor_select, Strategy, SupervisorContext};
use crate::pipeline::{detect_outliers_zscore, repair, SeriesWindow};
use crate::plant::{self, WeatherSample};
use crate::reliability::{Alert, ComponentKind, HealthTracker, RedundancyGroup, SwitchEvent};
use crate::resources::{energy_demand, fertilization_rate, irrigation_demand};
use crate::sensing::{decimals_for, sensor_suite, Quality, SensorMemory};
use crate::telemetry::at::{at_handle, device_script, AtSession, AtState, ESCAPE};
use crate::telemetry::frame::{encode_frame, SensorFrame};
use crate::telemetry::gateway::{spawn_gateway, GatewayHandle, IngestCore, LineSplitter};
use crate::telemetry::store::Store;
use crate::types::{Actuator, Channel, CommandSet, EnvState};

use climate::{weather_at, ClimatePredictor, PlantClimate, RnnClimate};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{module}: {message}")]
    Setup {
        module: &'static str,
        message: String,
    },
    #[error("tick {tick}: {module}: {message}")]
    Tick {
        tick: u64,
        module: &'static str,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn setup(module: &'static str, e: impl ToString) -> SimError {
    SimError::Setup {
        module,
        message: e.to_string(),
    }
}

fn at_tick(tick: u64, module: &'static str, e: impl ToString) -> SimError {
    SimError::Tick {
        tick,
        module,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where store files, the run log, alerts and the predictor checkpoint go.
    pub out_dir: Option<PathBuf>,
    /// Send frames over TCP to a gateway on localhost instead of in-process.
    pub live_gateway: bool,
    /// Gateway port; 0 picks a free one.
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub seed: u64,
    pub duration_ticks: u64,
    pub seconds_per_tick: f64,
    /// Ticks of PID-only control while the predictor's input window fills.
    pub warmup_ticks: u64,
    pub air_setpoint: f64,
    pub air_band: f64,
    pub prediction_source: PredictionSource,
    pub predictor_validation_mse: Option<f64>,
    pub predictor_note: Option<String>,
    pub telemetry: String,
    pub frames_sent: u64,
    pub records_stored: u64,
    pub rejects: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceUse {
    pub energy: f64,
    pub water: f64,
    pub fertilizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub truth: EnvState,
    pub outdoor: WeatherSample,
    /// Delivered readings by sensor id.
    pub readings: BTreeMap<String, f64>,
    pub missing_sensors: Vec<String>,
    pub cleaned: EnvState,
    pub outliers: Vec<Channel>,
    /// Predicted air temperature for the next tick under the applied commands.
    pub predicted_air_temp: Option<f64>,
    pub commands: CommandSet,
    pub strategies: BTreeMap<Actuator, Strategy>,
    pub rationale: String,
    pub applied: CommandSet,
    /// Active device per redundancy role; absent when the role cannot act.
    pub active: BTreeMap<String, String>,
    pub resources: ResourceUse,
    pub alerts: Vec<Alert>,
    pub switches: Vec<SwitchEvent>,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub ticks: Vec<TickRecord>,
}

impl RunLog {
    /// `runlog.jsonl`: the meta object, then one object per tick.
    pub fn write_jsonl(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for t in &self.ticks {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl(path: &Path) -> io::Result<Self> {
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let first = lines
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty run log"))??;
        let meta = serde_json::from_str(&first).map_err(io::Error::other)?;
        let ticks = lines
            .map(|l| serde_json::from_str(&l?).map_err(io::Error::other))
            .collect::<io::Result<_>>()?;
        Ok(Self { meta, ticks })
    }

    pub fn alerts(&self) -> impl Iterator<Item = &Alert> {
        self.ticks.iter().flat_map(|t| &t.alerts)
    }

    pub fn switches(&self) -> impl Iterator<Item = &SwitchEvent> {
        self.ticks.iter().flat_map(|t| &t.switches)
    }
}

/// Truth rows from a CSV whose headers are channel names (other columns,
/// such as a row number, are ignored).
pub fn load_truth_fixture(path: &Path) -> Result<Vec<BTreeMap<Channel, f64>>, SimError> {
    let bad = |e: &dyn std::fmt::Display| setup("fixture", format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let headers = rdr.headers().map_err(|e| bad(&e))?.clone();
    let cols: Vec<(usize, Channel)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().parse().ok().map(|c| (i, c)))
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let mut row = BTreeMap::new();
        for (i, ch) in &cols {
            let v: f64 = rec[*i].trim().parse().map_err(|e| bad(&e))?;
            row.insert(*ch, v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Device-side uplink: straight into the ingest core, or through the AT
/// modem emulation and a TCP connection to a live gateway.
enum Uplink {
    Loopback {
        core: IngestCore,
        splitter: LineSplitter,
    },
    Tcp {
        gateway: GatewayHandle,
        modem: AtSession,
        stream: BufWriter<TcpStream>,
    },
}

const SESSION: u64 = 1;

impl Uplink {
    fn open(store: Store, live: bool, port: u16) -> Result<Self, SimError> {
        let core = IngestCore::new(store);
        if !live {
            return Ok(Self::Loopback {
                core,
                splitter: LineSplitter::default(),
            });
        }
        let gateway =
            spawn_gateway(&format!("127.0.0.1:{port}"), core).map_err(|e| setup("telemetry", e))?;
        let mut modem = AtSession::new();
        for line in device_script(
            "greenhouse",
            "greenhouse",
            "127.0.0.1",
            gateway.addr().port(),
        ) {
            modem = at_handle(&modem, line.as_bytes()).1;
        }
        if modem.state != AtState::Transparent {
            return Err(setup(
                "telemetry",
                format!("modem stuck in {:?}", modem.state),
            ));
        }
        let stream = TcpStream::connect(gateway.addr()).map_err(|e| setup("telemetry", e))?;
        stream.set_nodelay(true)?;
        Ok(Self::Tcp {
            gateway,
            modem,
            stream: BufWriter::new(stream),
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Loopback { .. } => "loopback",
            Self::Tcp { .. } => "tcp",
        }
    }

    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self {
            Self::Loopback { core, splitter } => {
                core.ingest_bytes(SESSION, splitter, bytes).map(|_| ())
            }
            Self::Tcp { modem, stream, .. } => {
                *modem = at_handle(modem, bytes).1;
                stream.write_all(bytes)
            }
        }
    }

    fn close(self) -> io::Result<IngestCore> {
        match self {
            Self::Loopback { mut core, .. } => {
                core.store.flush()?;
                Ok(core)
            }
            Self::Tcp {
                gateway,
                modem,
                stream,
                ..
            } => {
                let _ = at_handle(&modem, ESCAPE);
                let stream = stream.into_inner().map_err(|e| e.into_error())?;
                stream.shutdown(std::net::Shutdown::Write)?;
                drop(stream);
                gateway.shutdown()
            }
        }
    }
}

fn sensor_role(ch: Channel) -> String {
    format!("sensor:{}", ch.as_str())
}

fn fault_active(cfg: &ScenarioConfig, id: &str, tick: u64, kind: ComponentFaultKind) -> bool {
    cfg.fault_schedule
        .iter()
        .any(|f| f.component == id && f.kind == kind && (f.start_tick..f.end_tick).contains(&tick))
}

/// Rolling z-score check of the newest value against recent history; a
/// flagged value is repaired by the configured policy.
struct ChannelCleaner {
    history: VecDeque<f64>,
    last: Option<f64>,
}

impl ChannelCleaner {
    fn clean(&mut self, value: f64, cfg: &ScenarioConfig) -> (f64, bool) {
        let p = &cfg.pipeline;
        let mut out = (value, false);
        if self.history.len() >= 2 {
            let mut vals: Vec<f64> = self.history.iter().copied().collect();
            vals.push(value);
            let w = SeriesWindow::from_values("clean", vals);
            if let Ok(flags) = detect_outliers_zscore(&w, p.z_threshold) {
                if flags.flags.last() == Some(&true) {
                    let repaired = repair(&w, &flags, p.repair)
                        .ok()
                        .filter(|r| r.len() == w.len());
                    let hold = self.last.unwrap_or(value);
                    out = (
                        repaired
                            .and_then(|r| r.values().last().copied())
                            .unwrap_or(hold),
                        true,
                    );
                }
            }
        }
        // raw values enter the history so a sustained step is accepted
        self.history.push_back(value);
        while self.history.len() > p.window {
            self.history.pop_front();
        }
        self.last = Some(out.0);
        out
    }
}

struct Pids {
    states: [PidState; 5],
}

impl Pids {
    fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let mk = |a: Actuator| {
            let g = cfg.controllers.get(a);
            PidState::new(g.kp, g.ki, g.kd, (0.0, 1.0), g.integral_limits)
                .map_err(|e| setup("control", e))
        };
        Ok(Self {
            states: [
                mk(Actuator::ALL[0])?,
                mk(Actuator::ALL[1])?,
                mk(Actuator::ALL[2])?,
                mk(Actuator::ALL[3])?,
                mk(Actuator::ALL[4])?,
            ],
        })
    }

    /// Steps every loop; reverse-acting loops swap setpoint and measurement.
    fn step(
        &mut self,
        cfg: &ScenarioConfig,
        m: &EnvState,
    ) -> Result<CommandSet, crate::control::ControlError> {
        let sp = &cfg.crop.target;
        let dt = cfg.seconds_per_tick;
        let mut out = CommandSet::default();
        for a in Actuator::ALL {
            let (setpoint, measured) = match a {
                Actuator::Heater => (sp.air_temp, m.air_temp),
                Actuator::Ventilator => {
                    (m.air_temp, sp.air_temp + cfg.controllers.ventilation_offset)
                }
                Actuator::Irrigator => (sp.soil_moisture, m.soil_moisture),
                Actuator::FertilizerDoser => (m.soil_ph, sp.soil_ph),
                Actuator::Lamp => (sp.light, m.light),
            };
            let (u, next) = pid_step(&self.states[a.index()], setpoint, measured, dt)?;
            self.states[a.index()] = next;
            out.set(a, u);
        }
        Ok(out)
    }
}

fn load_rule_base(cfg: &ScenarioConfig) -> Result<FuzzyRuleBase, SimError> {
    let rb = match &cfg.fuzzy_rules {
        Some(p) => FuzzyRuleBase::load_json(p).map_err(|e| setup("fuzzy", e))?,
        None => default_rule_base(),
    };
    rb.validate().map_err(|e| setup("fuzzy", e))?;
    for name in ["temp_trend", "humidity"] {
        if rb.input(name).is_none() {
            return Err(setup("fuzzy", format!("rule base lacks input `{name}`")));
        }
    }
    if rb.output("irrigation").is_none() {
        return Err(setup("fuzzy", "rule base lacks output `irrigation`"));
    }
    Ok(rb)
}

/// Runs the scenario to completion.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunLog, SimError> {
    cfg.validate()?;
    let fixture = match &cfg.truth_fixture {
        Some(p) => Some(load_truth_fixture(p)?),
        None => None,
    };
    let rule_base = load_rule_base(cfg)?;
    let (energy_m, water_m, fert_m) = cfg.resources.models().map_err(|e| setup("resources", e))?;

    let mut note = None;
    let predictor = if cfg.predictor.enabled {
        match ClimatePredictor::pretrain(cfg) {
            Ok(p) => Some(p),
            Err(e) => {
                note = Some(format!("pretraining failed: {e}"));
                None
            }
        }
    } else {
        note = Some("predictor disabled".to_string());
        None
    };
    let source = cfg.mpc.prediction_source;
    let (planner_ready, validation_mse) = match (source, &predictor) {
        (PredictionSource::PlantModel, _) => (true, Some(0.0)),
        (PredictionSource::Rnn, Some(p)) => (true, Some(p.validation_mse())),
        (PredictionSource::Rnn, None) => (false, None),
    };
    let warmup = cfg.predictor.train.bptt_window as u64;

    let store = match &opts.out_dir {
        Some(d) => Store::with_dir(d)?,
        None => Store::in_memory(),
    };
    let mut uplink = Uplink::open(store, opts.live_gateway, opts.port)?;

    let mut components: Vec<(String, ComponentKind)> = Vec::new();
    let mut groups = Vec::new();
    for g in &cfg.actuator_groups {
        let backups: Vec<&str> = g.backups.iter().map(String::as_str).collect();
        groups.push(RedundancyGroup::new(
            g.actuator.as_str(),
            &g.primary,
            &backups,
        ));
        components.push((g.primary.clone(), ComponentKind::Actuator));
        components.extend(
            g.backups
                .iter()
                .map(|b| (b.clone(), ComponentKind::Actuator)),
        );
    }
    for g in &cfg.sensor_groups {
        let backups: Vec<&str> = g.members[1..].iter().map(String::as_str).collect();
        groups.push(RedundancyGroup::new(
            &sensor_role(g.channel),
            &g.members[0],
            &backups,
        ));
    }
    components.extend(
        cfg.sensors
            .iter()
            .map(|s| (s.id.clone(), ComponentKind::Sensor)),
    );
    let mut health = HealthTracker::new(&components, groups, cfg.health_thresholds, 0);
    let grouped_actuators: BTreeSet<Actuator> =
        cfg.actuator_groups.iter().map(|g| g.actuator).collect();

    let mut pids = Pids::new(cfg)?;
    let mut memory = SensorMemory::default();
    let mut cleaners: BTreeMap<Channel, ChannelCleaner> = Channel::ALL
        .iter()
        .map(|c| {
            (
                *c,
                ChannelCleaner {
                    history: VecDeque::new(),
                    last: None,
                },
            )
        })
        .collect();
    let mut recent: VecDeque<Vec<f64>> = VecDeque::new();
    let mut truth = cfg.initial_state;
    let mut prev_applied = CommandSet::default();
    let mut frames_sent = 0u64;
    let mut ticks = Vec::with_capacity(cfg.duration_ticks as usize);
    let sp = cfg.crop.target;

    for k in 0..cfg.duration_ticks {
        let weather = weather_at(cfg, k);
        if k > 0 {
            truth = plant::step(&truth, &prev_applied, &weather, &cfg.plant);
        }
        if let Some(row) = fixture.as_ref().and_then(|f| f.get(k as usize)) {
            for (ch, v) in row {
                truth.set(*ch, *v);
            }
        }

        // sensing and heartbeats
        let readings = sensor_suite(&cfg.sensors, &truth, k, cfg.rng_seed, &mut memory)
            .map_err(|e| at_tick(k, "sensing", e))?;
        let mut delivered = BTreeMap::new();
        let mut missing = Vec::new();
        let mut beating = BTreeSet::new();
        let mut reporting = BTreeSet::new();
        for (id, _) in &components {
            if fault_active(cfg, id, k, ComponentFaultKind::Report) {
                reporting.insert(id.clone());
            }
        }
        for g in &cfg.actuator_groups {
            for id in std::iter::once(&g.primary).chain(&g.backups) {
                if !fault_active(cfg, id, k, ComponentFaultKind::Silence) {
                    beating.insert(id.clone());
                }
            }
        }
        for r in &readings {
            let silent = fault_active(cfg, &r.sensor_id, k, ComponentFaultKind::Silence);
            if r.quality == Quality::Failed || silent || reporting.contains(&r.sensor_id) {
                missing.push(r.sensor_id.clone());
                continue;
            }
            beating.insert(r.sensor_id.clone());
            delivered.insert(r.sensor_id.clone(), r.value);
            let spec = cfg
                .sensors
                .iter()
                .find(|s| s.id == r.sensor_id)
                .expect("reading from a configured sensor");
            let frame = SensorFrame::with_decimals(
                &cfg.device_id,
                k,
                &r.sensor_id,
                r.value,
                decimals_for(spec.resolution),
            );
            let bytes = encode_frame(&frame).map_err(|e| at_tick(k, "telemetry", e))?;
            uplink
                .send(&bytes)
                .map_err(|e| at_tick(k, "telemetry", e))?;
            frames_sent += 1;
        }
        let update = health.update(k, &beating, &reporting);

        // measurement and cleaning per channel
        let mut cleaned = EnvState::default();
        let mut outliers = Vec::new();
        for ch in Channel::ALL {
            let source_id = if cfg.sensor_groups.iter().any(|g| g.channel == ch) {
                health.active(&sensor_role(ch)).map(str::to_string)
            } else {
                cfg.sensors
                    .iter()
                    .find(|s| s.channel == ch)
                    .map(|s| s.id.clone())
            };
            let cleaner = cleaners.get_mut(&ch).expect("cleaner per channel");
            let value = source_id.and_then(|id| delivered.get(&id).copied());
            let v = match value {
                Some(v) => {
                    let (c, flagged) = cleaner.clean(v, cfg);
                    if flagged {
                        outliers.push(ch);
                    }
                    c
                }
                None => cleaner.last.unwrap_or(sp.get(ch)),
            };
            cleaned.set(ch, v);
        }

        // prediction context
        let outdoor_next: Vec<WeatherSample> = (1..=cfg.mpc.horizon as u64)
            .map(|i| weather_at(cfg, k + i))
            .collect();
        let to_next = outdoor_next[0].outdoor_temp;
        let warm = k >= warmup;
        let hidden = match (&predictor, warm) {
            (Some(p), true) => {
                let window: Vec<Vec<f64>> = recent.iter().cloned().collect();
                Some(
                    p.warm_state(&window)
                        .map_err(|e| at_tick(k, "predictor", e))?,
                )
            }
            _ => None,
        };
        let predict = |heat: f64, vent: f64| -> f64 {
            match (&predictor, &hidden) {
                (Some(p), Some(h)) if source == PredictionSource::Rnn => {
                    p.predict_next(h, cleaned.air_temp, to_next, heat, vent).1
                }
                _ => {
                    let mut c = prev_applied;
                    c.set(Actuator::Heater, heat);
                    c.set(Actuator::Ventilator, vent);
                    plant::step(&cleaned, &c, &outdoor_next[0], &cfg.plant).air_temp
                }
            }
        };
        let trend = predict(
            prev_applied.get(Actuator::Heater),
            prev_applied.get(Actuator::Ventilator),
        ) - cleaned.air_temp;

        // supervision and control
        let (mut strategies, mut rationale) = if warm {
            supervisor_select(
                &cfg.supervisor,
                &SupervisorContext {
                    validation_mse: validation_mse.unwrap_or(0.0),
                    planner_available: planner_ready,
                    temp_error: sp.air_temp - cleaned.air_temp,
                    temp_trend: trend,
                    humidity: cleaned.air_humidity,
                },
            )
        } else {
            (
                Actuator::ALL.iter().map(|a| (*a, Strategy::Pid)).collect(),
                "warm-up; pid everywhere".to_string(),
            )
        };
        let mut commands = pids
            .step(cfg, &cleaned)
            .map_err(|e| at_tick(k, "control", e))?;

        if strategies.get(&Actuator::Heater) == Some(&Strategy::Mpc) {
            let plan = match (source, &predictor, &hidden) {
                (PredictionSource::Rnn, Some(p), Some(h)) => {
                    let model = RnnClimate {
                        predictor: p,
                        outdoor: outdoor_next.iter().map(|w| w.outdoor_temp).collect(),
                    };
                    mpc_plan(
                        &cfg.mpc,
                        &model,
                        &(h.clone(), cleaned.air_temp),
                        &[sp.air_temp],
                        2,
                    )
                }
                _ => {
                    let model = PlantClimate {
                        params: &cfg.plant,
                        held: prev_applied,
                        weather: outdoor_next.clone(),
                    };
                    mpc_plan(&cfg.mpc, &model, &cleaned, &[sp.air_temp], 2)
                }
            };
            match plan {
                Ok(plan) => {
                    commands.set(Actuator::Heater, plan.first[0]);
                    commands.set(Actuator::Ventilator, plan.first[1]);
                }
                Err(e) => {
                    strategies.insert(Actuator::Heater, Strategy::Pid);
                    strategies.insert(Actuator::Ventilator, Strategy::Pid);
                    rationale.push_str(&format!("; planner failed ({e}), pid on climate"));
                }
            }
        }
        if strategies.get(&Actuator::Irrigator) == Some(&Strategy::Fuzzy) {
            let inputs = BTreeMap::from([
                ("temp_trend".to_string(), trend),
                ("humidity".to_string(), cleaned.air_humidity),
            ]);
            let out = fuzzy_eval(&rule_base, &inputs).map_err(|e| at_tick(k, "fuzzy", e))?;
            commands.set(Actuator::Irrigator, out.values["irrigation"]);
        }

        // routing through active devices
        let mut applied = CommandSet::default();
        let mut active = BTreeMap::new();
        for a in Actuator::ALL {
            let role = a.as_str();
            let can_act = if grouped_actuators.contains(&a) {
                match health.active(role) {
                    Some(id) => {
                        active.insert(role.to_string(), id.to_string());
                        true
                    }
                    None => false,
                }
            } else {
                true
            };
            if can_act {
                applied.set(a, commands.get(a));
            }
        }
        for g in &cfg.sensor_groups {
            let role = sensor_role(g.channel);
            if let Some(id) = health.active(&role) {
                active.insert(role, id.to_string());
            }
        }

        let predicted_air_temp = warm.then(|| {
            predict(
                applied.get(Actuator::Heater),
                applied.get(Actuator::Ventilator),
            )
        });

        let resources = ResourceUse {
            energy: energy_demand(
                &energy_m,
                cleaned.air_temp - weather.outdoor_temp,
                plant::lamp_lux(&applied, &cfg.plant),
                weather.wind,
            ),
            water: irrigation_demand(
                &water_m,
                sp.soil_moisture - cleaned.soil_moisture,
                cfg.crop.water_requirement,
            ),
            fertilizer: fertilization_rate(
                &fert_m,
                cfg.crop.stage_at(k).g(),
                cfg.crop.nutrient_demand,
            ),
        };

        if let Some(p) = &predictor {
            recent.push_back(p.features(
                cleaned.air_temp,
                to_next,
                applied.get(Actuator::Heater),
                applied.get(Actuator::Ventilator),
            ));
            while recent.len() > warmup as usize {
                recent.pop_front();
            }
        }

        ticks.push(TickRecord {
            tick: k,
            truth,
            outdoor: weather,
            readings: delivered,
            missing_sensors: missing,
            cleaned,
            outliers,
            predicted_air_temp,
            commands,
            strategies,
            rationale,
            applied,
            active,
            resources,
            alerts: update.alerts,
            switches: update.switches,
            in_band: cfg.crop.in_band(Channel::AirTemp, truth.air_temp),
        });
        prev_applied = applied;
    }

    let telemetry = uplink.name().to_string();
    let core = uplink.close()?;
    let meta = RunMeta {
        scenario: cfg.name.clone(),
        seed: cfg.rng_seed,
        duration_ticks: cfg.duration_ticks,
        seconds_per_tick: cfg.seconds_per_tick,
        warmup_ticks: warmup,
        air_setpoint: sp.air_temp,
        air_band: cfg.crop.tolerance_band.air_temp,
        prediction_source: source,
        predictor_validation_mse: predictor.as_ref().map(|p| p.validation_mse()),
        predictor_note: note,
        telemetry,
        frames_sent,
        records_stored: core.store.records().len() as u64,
        rejects: core.store.rejects().len() as u64,
    };
    let log = RunLog { meta, ticks };
    if let Some(dir) = &opts.out_dir {
        core.store.export_csv(&dir.join("records.csv"))?;
        log.write_jsonl(&dir.join("runlog.jsonl"))?;
        let alerts: Vec<Alert> = log.alerts().cloned().collect();
        crate::reliability::write_alerts_jsonl(&dir.join("alerts.jsonl"), &alerts)?;
        if let Some(p) = &predictor {
            p.model
                .save_json(&dir.join("predictor.json"))
                .map_err(|e| setup("predictor", e))?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ComponentFault;
    use crate::plant::WeatherProfileId;

    fn quick(duration: u64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(duration, 11);
        cfg.predictor.enabled = false;
        cfg.mpc.prediction_source = PredictionSource::PlantModel;
        cfg.mpc.horizon = 3;
        cfg.weather_profile = WeatherProfileId::Constant;
        cfg
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = quick(60);
        let a = run(&cfg, &RunOptions::default()).unwrap();
        let b = run(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ticks.len(), 60);
        assert_eq!(a.meta.frames_sent, a.meta.records_stored);
    }

    #[test]
    fn warmup_is_pid_then_mpc_takes_climate() {
        let log = run(&quick(40), &RunOptions::default()).unwrap();
        let w = log.meta.warmup_ticks as usize;
        assert!(log.ticks[..w]
            .iter()
            .all(|t| t.strategies.values().all(|s| *s == Strategy::Pid)));
        assert!(log.ticks[w..]
            .iter()
            .any(|t| t.strategies[&Actuator::Heater] == Strategy::Mpc));
    }

    #[test]
    fn reported_heater_fault_fails_over_in_the_same_tick() {
        let mut cfg = quick(40);
        cfg.fault_schedule.push(ComponentFault {
            component: "heater_a".into(),
            start_tick: 10,
            end_tick: 20,
            kind: ComponentFaultKind::Report,
        });
        let log = run(&cfg, &RunOptions::default()).unwrap();
        let t10 = &log.ticks[10];
        assert_eq!(t10.switches.len(), 1);
        assert_eq!(t10.active["heater"], "heater_b");
        assert!(log.ticks.iter().all(|t| t.active.contains_key("heater")));
        // primary back once the report clears, after one healthy check
        assert_eq!(log.ticks[21].active["heater"], "heater_a");
    }

    #[test]
    fn exhausted_group_applies_nothing() {
        let mut cfg = quick(30);
        for id in ["lamp_a", "lamp_b"] {
            cfg.fault_schedule.push(ComponentFault {
                component: id.into(),
                start_tick: 5,
                end_tick: 30,
                kind: ComponentFaultKind::Report,
            });
        }
        let log = run(&cfg, &RunOptions::default()).unwrap();
        assert!(log.ticks[5..]
            .iter()
            .all(|t| t.applied.get(Actuator::Lamp) == 0.0));
        assert_eq!(log.alerts().filter(|a| a.component == "lamp").count(), 1);
    }

    #[test]
    fn runlog_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let log = run(&quick(20), &opts).unwrap();
        let back = RunLog::read_jsonl(&dir.path().join("runlog.jsonl")).unwrap();
        assert_eq!(back, log);
        assert!(dir.path().join("records.jsonl").exists());
    }
}
