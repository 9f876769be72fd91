//! Seeded discrete-tick simulation of device failures.
//!
//! Devices evolve independently through Active, Transient and Permanent
//! states; each device draws from its own ChaCha8 stream (the scenario seed
//! with the device index as stream id), so adding an injection to one device
//! never perturbs another device's trajectory. Unreachability is not a
//! device state: it is derived at poll time from the failed set.

mod topology_gen;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Weibull};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::{AlarmEvent, AlarmLog, Status};
use crate::root_cause::{PollSnapshot, Response};
use crate::topology::{DependencyGraph, DeviceId, TopologyError};

pub use topology_gen::{generate_topology, LayerSpec, TopologySpec};

/// Failure runs longer than this many ticks are labelled permanent.
pub const DEFAULT_PERSISTENT_AFTER: u64 = 25;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid topology spec: {0}")]
    InvalidSpec(String),
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("tick {tick} is outside the horizon of {horizon} ticks")]
    TickOutOfRange { tick: u64, horizon: u64 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceState {
    #[serde(rename = "A")]
    Active,
    #[serde(rename = "T")]
    Transient,
    #[serde(rename = "P")]
    Permanent,
}

impl DeviceState {
    pub fn is_failed(self) -> bool {
        self != DeviceState::Active
    }

    pub fn status(self) -> Status {
        if self.is_failed() {
            Status::Alarm
        } else {
            Status::Ok
        }
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceState::Active => "A",
            DeviceState::Transient => "T",
            DeviceState::Permanent => "P",
        })
    }
}

/// Recovery-time distribution of a transient failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    Weibull { k: f64, lambda: f64 },
    /// Shorthand for Weibull with `k = 1`, `λ = 1/β`.
    Exponential { beta: f64 },
}

impl Recovery {
    fn weibull(&self) -> Result<Weibull<f64>, SimError> {
        let (k, lambda) = match *self {
            Recovery::Weibull { k, lambda } => (k, lambda),
            Recovery::Exponential { beta } => (1.0, 1.0 / beta),
        };
        if !(k.is_finite() && k > 0.0 && lambda.is_finite() && lambda > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "recovery needs positive finite parameters, got {self:?}"
            )));
        }
        Weibull::new(lambda, k).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }
}

/// True per-tick rates of one device. Zero rates disable a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceRates {
    pub alpha: f64,
    pub gamma: f64,
    pub recovery: Recovery,
}

impl DeviceRates {
    fn compile(&self) -> Result<Dynamics, SimError> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let leave = self.alpha + self.gamma;
        Ok(Dynamics {
            leave: if leave > 0.0 { Some(Exp::new(leave).expect("positive rate")) } else { None },
            p_leave: -(-leave).exp_m1(),
            p_perm: -(-self.gamma).exp_m1(),
            recovery: self.recovery.weibull()?,
        })
    }
}

struct Dynamics {
    leave: Option<Exp<f64>>,
    p_leave: f64,
    p_perm: f64,
    recovery: Weibull<f64>,
}

impl Dynamics {
    /// Ticks until the device leaves A, and the state it enters. Each tick
    /// fails to P with probability `1−e^{−γ}` and to T with `1−e^{−α}`
    /// independently; P wins when both fire.
    fn leave_active(&self, rng: &mut ChaCha8Rng) -> Option<(u64, DeviceState)> {
        let exp = self.leave.as_ref()?;
        let wait = 1.0 + exp.sample(rng).floor();
        let wait = if wait < 1e18 { wait as u64 } else { u64::MAX / 2 };
        let to = if rng.random::<f64>() * self.p_leave < self.p_perm {
            DeviceState::Permanent
        } else {
            DeviceState::Transient
        };
        Some((wait, to))
    }

    fn recovery_ticks(&self, rng: &mut ChaCha8Rng) -> u64 {
        let d = self.recovery.sample(rng).round();
        if d < 1.0 {
            1
        } else if d < 1e18 {
            d as u64
        } else {
            u64::MAX / 2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    Permanent,
    Transient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedFault {
    pub device: DeviceId,
    pub tick: u64,
    pub mode: FaultMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    /// Name of a bundled preset, e.g. `power_chain_47`.
    Preset(String),
    Spec(TopologySpec),
    /// Path to a topology JSON document.
    File(PathBuf),
}

impl TopologySource {
    pub fn resolve(&self) -> Result<DependencyGraph, SimError> {
        match self {
            TopologySource::Preset(name) => {
                let spec = TopologySpec::preset(name)
                    .ok_or_else(|| SimError::InvalidConfig(format!("unknown preset {name:?}")))?;
                generate_topology(&spec)
            }
            TopologySource::Spec(spec) => generate_topology(spec),
            TopologySource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(DependencyGraph::parse(&text)?)
            }
        }
    }
}

fn default_persistent_after() -> u64 {
    DEFAULT_PERSISTENT_AFTER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologySource,
    /// Rates for every device without an entry in `device_rates`.
    pub rates: DeviceRates,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub device_rates: BTreeMap<DeviceId, DeviceRates>,
    pub horizon: u64,
    #[serde(default)]
    pub faults: Vec<InjectedFault>,
    #[serde(default)]
    pub seed: u64,
    /// Ticks at which a poll sweep is recorded; empty means the final tick.
    #[serde(default)]
    pub snapshot_ticks: Vec<u64>,
    #[serde(default = "default_persistent_after")]
    pub persistent_after: u64,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }
}

/// State changes of one device, starting with its state at tick 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory(Vec<(u64, DeviceState)>);

impl Trajectory {
    pub fn transitions(&self) -> &[(u64, DeviceState)] {
        &self.0
    }

    pub fn state_at(&self, tick: u64) -> DeviceState {
        let i = self.0.partition_point(|&(t, _)| t <= tick);
        self.0[i.saturating_sub(1)].1
    }

    fn set(&mut self, tick: u64, state: DeviceState) {
        match self.0.last_mut() {
            Some(last) if last.0 == tick => {
                last.1 = state;
                let n = self.0.len();
                if n >= 2 && self.0[n - 2].1 == state {
                    self.0.pop();
                }
            }
            Some(last) if last.1 == state => {}
            _ => self.0.push((tick, state)),
        }
    }
}

fn simulate_device(
    dynamics: &Dynamics,
    horizon: u64,
    faults: &[(u64, FaultMode)],
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut tr = Trajectory(vec![(0, DeviceState::Active)]);
    let mut state = DeviceState::Active;
    let mut now = 0u64;
    let mut pending = faults.iter().peekable();
    loop {
        let natural = match state {
            DeviceState::Active => dynamics
                .leave_active(rng)
                .map(|(wait, to)| (now.saturating_add(wait), to)),
            DeviceState::Transient => {
                Some((now.saturating_add(dynamics.recovery_ticks(rng)), DeviceState::Active))
            }
            DeviceState::Permanent => None,
        };
        let next_natural = natural.map(|n| n.0).unwrap_or(u64::MAX);
        if let Some(&&(tick, mode)) = pending.peek() {
            if tick <= next_natural {
                pending.next();
                state = match mode {
                    FaultMode::Permanent => DeviceState::Permanent,
                    FaultMode::Transient => DeviceState::Transient,
                };
                tr.set(tick, state);
                now = tick;
                continue;
            }
        }
        match natural {
            Some((tick, to)) if tick < horizon => {
                tr.set(tick, to);
                state = to;
                now = tick;
            }
            _ => break,
        }
    }
    tr
}

/// Scenario state: the graph plus one trajectory per device.
#[derive(Debug, Clone)]
pub struct Simulation {
    graph: DependencyGraph,
    order: Vec<usize>,
    horizon: u64,
    seed: u64,
    rates: Vec<DeviceRates>,
    faults: Vec<Vec<(u64, FaultMode)>>,
    trajectories: Vec<Trajectory>,
}

impl Simulation {
    pub fn new(graph: DependencyGraph, config: &ScenarioConfig) -> Result<Self, SimError> {
        if config.horizon == 0 {
            return Err(SimError::InvalidConfig("horizon must be positive".into()));
        }
        let n = graph.node_count();
        let mut rates = vec![config.rates; n];
        for (id, r) in &config.device_rates {
            let ix = graph
                .index_of(id)
                .ok_or_else(|| SimError::UnknownDevice(id.to_string()))?;
            rates[ix] = *r;
        }
        let order = graph.topological_order()?;
        let mut sim = Simulation {
            order,
            horizon: config.horizon,
            seed: config.seed,
            rates,
            faults: vec![Vec::new(); n],
            trajectories: Vec::with_capacity(n),
            graph,
        };
        for f in &config.faults {
            let ix = sim.check_fault(&f.device, f.tick)?;
            sim.faults[ix].push((f.tick, f.mode));
        }
        for list in &mut sim.faults {
            list.sort_by_key(|f| f.0);
        }
        for ix in 0..n {
            let tr = sim.simulate(ix)?;
            sim.trajectories.push(tr);
        }
        Ok(sim)
    }

    fn check_fault(&self, device: &DeviceId, tick: u64) -> Result<usize, SimError> {
        let ix = self
            .graph
            .index_of(device)
            .ok_or_else(|| SimError::UnknownDevice(device.to_string()))?;
        if tick >= self.horizon {
            return Err(SimError::TickOutOfRange {
                tick,
                horizon: self.horizon,
            });
        }
        Ok(ix)
    }

    fn simulate(&self, ix: usize) -> Result<Trajectory, SimError> {
        let dynamics = self.rates[ix].compile()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ix as u64);
        Ok(simulate_device(&dynamics, self.horizon, &self.faults[ix], &mut rng))
    }

    /// Force `device` into T or P at `tick`; its later dynamics are redrawn.
    pub fn inject_failure(&mut self, device: &DeviceId, tick: u64, mode: FaultMode) -> Result<(), SimError> {
        let ix = self.check_fault(device, tick)?;
        let list = &mut self.faults[ix];
        let pos = list.partition_point(|f| f.0 <= tick);
        list.insert(pos, (tick, mode));
        self.trajectories[ix] = self.simulate(ix)?;
        Ok(())
    }

    pub fn graph(&self) -> &DependencyGraph {
        &self.graph
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn trajectory(&self, ix: usize) -> &Trajectory {
        &self.trajectories[ix]
    }

    pub fn state_at(&self, ix: usize, tick: u64) -> DeviceState {
        self.trajectories[ix].state_at(tick)
    }

    /// Poll/trap sweep at `tick`. A device is unreachable when it is not a
    /// source and every parent is failed or unreachable; unreachable devices
    /// give no response even if failed themselves.
    pub fn poll_cycle(&self, tick: u64) -> Result<PollSnapshot, SimError> {
        if tick >= self.horizon {
            return Err(SimError::TickOutOfRange {
                tick,
                horizon: self.horizon,
            });
        }
        let n = self.graph.node_count();
        let failed: Vec<bool> = (0..n).map(|v| self.state_at(v, tick).is_failed()).collect();
        let mut blocked = vec![false; n];
        for &v in &self.order {
            let parents = self.graph.parents(v);
            blocked[v] = !parents.is_empty() && parents.iter().all(|&p| failed[p] || blocked[p]);
        }
        Ok(PollSnapshot::from_responses(
            (0..n)
                .map(|v| {
                    if blocked[v] {
                        Response::NoResponse
                    } else if failed[v] {
                        Response::Faulty
                    } else {
                        Response::Ok
                    }
                })
                .collect(),
        ))
    }

    /// Transition log: every device's state at tick 0, each OK/ALARM change,
    /// and a closing row at the last tick.
    pub fn alarm_log(&self) -> AlarmLog {
        let last = self.horizon - 1;
        let mut events = Vec::new();
        for (ix, tr) in self.trajectories.iter().enumerate() {
            let id = self.graph.id(ix);
            let mut prev: Option<Status> = None;
            for &(tick, state) in tr.transitions() {
                let status = state.status();
                if prev != Some(status) {
                    events.push(AlarmEvent {
                        tick,
                        device: id.clone(),
                        status,
                    });
                    prev = Some(status);
                }
            }
            if events.last().map(|e| e.tick) != Some(last) {
                events.push(AlarmEvent {
                    tick: last,
                    device: id.clone(),
                    status: tr.state_at(last).status(),
                });
            }
        }
        AlarmLog::from_events(events).expect("one row per device and tick")
    }

    /// Maximal failed intervals, labelled permanent when longer than
    /// `persistent_after` ticks (open intervals are measured to the horizon).
    pub fn episodes(&self, persistent_after: u64) -> Vec<Episode> {
        let mut out = Vec::new();
        for (ix, tr) in self.trajectories.iter().enumerate() {
            let t = tr.transitions();
            let mut i = 0;
            while i < t.len() {
                if !t[i].1.is_failed() {
                    i += 1;
                    continue;
                }
                let start = t[i].0;
                let mut j = i;
                while j + 1 < t.len() && t[j + 1].1.is_failed() {
                    j += 1;
                }
                let end = t.get(j + 1).map(|x| x.0);
                let length = end.unwrap_or(self.horizon) - start;
                out.push(Episode {
                    device: self.graph.id(ix).clone(),
                    start,
                    end,
                    actual: t[j].1,
                    labeled: if length > persistent_after {
                        DeviceState::Permanent
                    } else {
                        DeviceState::Transient
                    },
                });
                i = j + 1;
            }
        }
        out.sort_by(|a, b| (a.start, &a.device).cmp(&(b.start, &b.device)));
        out
    }
}

/// One failure episode with its true and threshold-labelled kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub device: DeviceId,
    pub start: u64,
    pub end: Option<u64>,
    pub actual: DeviceState,
    pub labeled: DeviceState,
}

pub fn generate_history(graph: &DependencyGraph, config: &ScenarioConfig) -> Result<AlarmLog, SimError> {
    Ok(Simulation::new(graph.clone(), config)?.alarm_log())
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub simulation: Simulation,
    pub log: AlarmLog,
    pub snapshots: Vec<(u64, PollSnapshot)>,
    /// Injected devices, the true root causes.
    pub root_causes: Vec<DeviceId>,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub seed: u64,
    pub horizon: u64,
    pub graph_hash: String,
    pub root_causes: Vec<DeviceId>,
    pub snapshot_ticks: Vec<u64>,
    pub episodes: Vec<Episode>,
}

impl ScenarioResult {
    pub fn graph(&self) -> &DependencyGraph {
        self.simulation.graph()
    }

    pub fn final_snapshot(&self) -> &PollSnapshot {
        &self.snapshots.last().expect("at least one snapshot").1
    }

    pub fn snapshot_series_csv(&self) -> String {
        let g = self.graph();
        let mut out = String::from("tick,device_id,response\n");
        for (tick, snap) in &self.snapshots {
            for (ix, r) in snap.responses().iter().enumerate() {
                out.push_str(&format!("{tick},{},{r}\n", g.id(ix)));
            }
        }
        out
    }

    /// `tick,device_id,state` rows for every state change, ordered by tick.
    pub fn ground_truth_csv(&self) -> String {
        let g = self.graph();
        let mut rows: Vec<(u64, &DeviceId, DeviceState)> = Vec::new();
        for ix in 0..g.node_count() {
            for &(tick, s) in self.simulation.trajectory(ix).transitions() {
                rows.push((tick, g.id(ix), s));
            }
        }
        rows.sort();
        let mut out = String::from("tick,device_id,state\n");
        for (tick, id, s) in rows {
            out.push_str(&format!("{tick},{id},{s}\n"));
        }
        out
    }

    pub fn summary(&self) -> ScenarioSummary {
        ScenarioSummary {
            seed: self.simulation.seed,
            horizon: self.simulation.horizon,
            graph_hash: self.graph().content_hash(),
            root_causes: self.root_causes.clone(),
            snapshot_ticks: self.snapshots.iter().map(|s| s.0).collect(),
            episodes: self.episodes.clone(),
        }
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    let graph = config.topology.resolve()?;
    run_scenario_on(graph, config)
}

/// Like [`run_scenario`] with an already resolved topology.
pub fn run_scenario_on(graph: DependencyGraph, config: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    let simulation = Simulation::new(graph, config)?;
    let mut ticks = if config.snapshot_ticks.is_empty() {
        vec![config.horizon - 1]
    } else {
        config.snapshot_ticks.clone()
    };
    ticks.sort_unstable();
    ticks.dedup();
    let snapshots = ticks
        .into_iter()
        .map(|t| Ok((t, simulation.poll_cycle(t)?)))
        .collect::<Result<Vec<_>, SimError>>()?;
    let mut root_causes: Vec<DeviceId> = config.faults.iter().map(|f| f.device.clone()).collect();
    root_causes.sort();
    root_causes.dedup();
    Ok(ScenarioResult {
        log: simulation.alarm_log(),
        episodes: simulation.episodes(config.persistent_after),
        simulation,
        snapshots,
        root_causes,
    })
}
