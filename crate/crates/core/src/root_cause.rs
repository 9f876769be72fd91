//! Bayesian root-cause ranking over a poll/trap sweep.
//!
//! For every alarming device `d` and suspect `f`:
//!
//! ```text
//! P(f | d) = M[f]·I(f,d) / Σ_{f' ∈ Q} M[f']·I(f',d)
//! ```
//!
//! where `M` is the marginal failure table, `Q` the suspect set and
//! `I(f,d) = 1` iff `f = d` or `f` is an ancestor of `d`. A suspect's score
//! is the mean of `P(f | d)` over the alarming devices it explains. The
//! report is ordered by level first (upstream devices are more critical),
//! then by score.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::AlarmLog;
use crate::topology::{DependencyGraph, DeviceId, LevelMap, ReachabilityIndex, TopologyError};

#[derive(Debug, Error)]
pub enum RootCauseError {
    #[error("device {0:?} is not part of the dependency graph")]
    UnknownDevice(String),
    #[error("poll snapshot is missing device {0}")]
    MissingResponse(DeviceId),
    #[error("poll snapshot lists device {0} more than once")]
    DuplicateResponse(DeviceId),
    #[error("poll snapshot line {line}: {message}")]
    MalformedSnapshot { line: u64, message: String },
    #[error("poll snapshot contains no records")]
    EmptySnapshot,
    #[error("no suspect can explain the alarm raised by device #{0}")]
    ZeroDenominator(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-device share of historical failures.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    probs: Vec<f64>,
}

impl MarginalTable {
    /// Normalise raw failure counts; all-zero counts give the uniform table.
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let probs = if total == 0 {
            let n = counts.len().max(1) as f64;
            vec![1.0 / n; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        MarginalTable { probs }
    }

    /// Wrap arbitrary non-negative weights (normalised to sum 1).
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            MarginalTable {
                probs: weights.into_iter().map(|w| w / total).collect(),
            }
        } else {
            let n = weights.len().max(1) as f64;
            MarginalTable {
                probs: vec![1.0 / n; weights.len()],
            }
        }
    }

    pub fn get(&self, ix: usize) -> f64 {
        self.probs[ix]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Failure counts per device, one failure per maximal ALARM run.
pub fn failure_counts(log: &AlarmLog, graph: &DependencyGraph) -> Result<Vec<u64>, RootCauseError> {
    let mut counts = vec![0u64; graph.node_count()];
    for (device, history) in log.histories() {
        let ix = graph
            .index_of(&device)
            .ok_or_else(|| RootCauseError::UnknownDevice(device.to_string()))?;
        counts[ix] = history.runs.len() as u64;
    }
    Ok(counts)
}

pub fn marginal_failure_probs(
    log: &AlarmLog,
    graph: &DependencyGraph,
) -> Result<MarginalTable, RootCauseError> {
    Ok(MarginalTable::from_counts(&failure_counts(log, graph)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "FAULTY")]
    Faulty,
    #[serde(rename = "NO_RESPONSE")]
    NoResponse,
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Response::Ok => "OK",
            Response::Faulty => "FAULTY",
            Response::NoResponse => "NO_RESPONSE",
        })
    }
}

/// One synchronized poll/trap sweep: a response for every graph device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollSnapshot {
    responses: Vec<Response>,
}

#[derive(Debug, Deserialize)]
struct SnapshotRow {
    #[serde(default)]
    tick: Option<u64>,
    device_id: String,
    response: Response,
}

impl PollSnapshot {
    pub fn all_ok(n: usize) -> Self {
        PollSnapshot {
            responses: vec![Response::Ok; n],
        }
    }

    pub fn from_responses(responses: Vec<Response>) -> Self {
        PollSnapshot { responses }
    }

    pub fn from_records<I>(graph: &DependencyGraph, records: I) -> Result<Self, RootCauseError>
    where
        I: IntoIterator<Item = (DeviceId, Response)>,
    {
        let mut slots: Vec<Option<Response>> = vec![None; graph.node_count()];
        for (id, resp) in records {
            let ix = graph
                .index_of(&id)
                .ok_or_else(|| RootCauseError::UnknownDevice(id.to_string()))?;
            if slots[ix].replace(resp).is_some() {
                return Err(RootCauseError::DuplicateResponse(id));
            }
        }
        let responses = slots
            .into_iter()
            .enumerate()
            .map(|(ix, r)| r.ok_or_else(|| RootCauseError::MissingResponse(graph.id(ix).clone())))
            .collect::<Result<_, _>>()?;
        Ok(PollSnapshot { responses })
    }

    /// Read a snapshot file (`device_id,response`) or a snapshot series
    /// (`tick,device_id,response`). For a series, the sweep at `tick` is used,
    /// or the latest one when `tick` is `None`.
    pub fn from_reader<R: Read>(
        graph: &DependencyGraph,
        reader: R,
        tick: Option<u64>,
    ) -> Result<Self, RootCauseError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for result in rdr.deserialize::<SnapshotRow>() {
            let row = result.map_err(|e| RootCauseError::MalformedSnapshot {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rows.len() as u64 + 2;
            let id = DeviceId::new(row.device_id).map_err(|e| RootCauseError::MalformedSnapshot {
                line,
                message: e.to_string(),
            })?;
            rows.push((row.tick, id, row.response));
        }
        if rows.is_empty() {
            return Err(RootCauseError::EmptySnapshot);
        }
        let wanted = match tick {
            Some(t) => Some(t),
            None => rows.iter().filter_map(|r| r.0).max(),
        };
        let selected = rows
            .into_iter()
            .filter(|(t, _, _)| wanted.is_none() || *t == wanted)
            .map(|(_, id, resp)| (id, resp));
        PollSnapshot::from_records(graph, selected)
    }

    pub fn parse(graph: &DependencyGraph, text: &str) -> Result<Self, RootCauseError> {
        Self::from_reader(graph, text.as_bytes(), None)
    }

    pub fn to_csv_string(&self, graph: &DependencyGraph) -> String {
        let mut out = String::from("device_id,response\n");
        for (ix, r) in self.responses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", graph.id(ix), r));
        }
        out
    }

    pub fn response(&self, ix: usize) -> Response {
        self.responses[ix]
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    /// Devices that trapped FAULTY, i.e. the alarm evidence.
    pub fn alarming(&self) -> Vec<usize> {
        self.indices_where(|r| r == Response::Faulty)
    }

    fn indices_where(&self, pred: impl Fn(Response) -> bool) -> Vec<usize> {
        self.responses
            .iter()
            .enumerate()
            .filter(|(_, &r)| pred(r))
            .map(|(ix, _)| ix)
            .collect()
    }
}

/// Suspects in lexicographic id order (FAULTY or NO_RESPONSE).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SuspectSet(Vec<usize>);

impl SuspectSet {
    pub fn new(mut devices: Vec<usize>) -> Self {
        devices.sort_unstable();
        devices.dedup();
        SuspectSet(devices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, ix: usize) -> bool {
        self.0.binary_search(&ix).is_ok()
    }
}

pub fn collect_suspects(snapshot: &PollSnapshot) -> SuspectSet {
    SuspectSet(snapshot.indices_where(|r| r != Response::Ok))
}

/// Posterior that suspect `f` caused the alarm at `d`.
pub fn conditional_prob(
    f: usize,
    d: usize,
    table: &MarginalTable,
    reach: &ReachabilityIndex,
    suspects: &SuspectSet,
) -> Result<f64, RootCauseError> {
    let den = explanation_mass(d, table, reach, suspects);
    if den <= 0.0 {
        return Err(RootCauseError::ZeroDenominator(d));
    }
    if !reach.explains(f, d) {
        return Ok(0.0);
    }
    Ok(table.get(f) / den)
}

fn explanation_mass(
    d: usize,
    table: &MarginalTable,
    reach: &ReachabilityIndex,
    suspects: &SuspectSet,
) -> f64 {
    suspects
        .as_slice()
        .iter()
        .filter(|&&f| reach.explains(f, d))
        .map(|&f| table.get(f))
        .sum()
}

/// Mean of [`conditional_prob`] over the alarming devices `f` explains;
/// 0 when it explains none. Alarms no suspect can explain are skipped.
pub fn aggregate_prob(
    f: usize,
    alarming: &[usize],
    table: &MarginalTable,
    reach: &ReachabilityIndex,
    suspects: &SuspectSet,
) -> f64 {
    let mut total = 0.0;
    let mut explained = 0usize;
    for &d in alarming {
        if !reach.explains(f, d) {
            continue;
        }
        if let Ok(p) = conditional_prob(f, d, table, reach, suspects) {
            total += p;
            explained += 1;
        }
    }
    if explained == 0 {
        0.0
    } else {
        total / explained as f64
    }
}

/// How `P(f | d)` is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BayesForm {
    /// Normalise over candidate causes: `M[f]·I(f,d) / Σ_{f'} M[f']·I(f',d)`.
    #[default]
    Posterior,
    /// Normalise over alarming devices: `M[d]·I(f,d) / Σ_{d'} M[d']·I(f,d')`.
    AlarmNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseEntry {
    pub device: DeviceId,
    pub level: u32,
    pub probability: f64,
    /// Alarming devices this suspect explains that enter its score (`n'`).
    pub explained_alarms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseReport {
    pub entries: Vec<RootCauseEntry>,
    pub alarming: Vec<DeviceId>,
    /// Alarming devices no suspect with positive marginal can explain.
    pub unexplained: Vec<DeviceId>,
    pub form: BayesForm,
}

impl RootCauseReport {
    pub fn top(&self) -> Option<&RootCauseEntry> {
        self.entries.first()
    }

    pub fn position(&self, device: &DeviceId) -> Option<usize> {
        self.entries.iter().position(|e| &e.device == device)
    }
}

/// Score every suspect and order by (level asc, probability desc, id asc).
pub fn rank_root_causes(
    suspects: &SuspectSet,
    alarming: &[usize],
    graph: &DependencyGraph,
    levels: &LevelMap,
    table: &MarginalTable,
    reach: &ReachabilityIndex,
    form: BayesForm,
) -> RootCauseReport {
    let alarming: Vec<usize> = alarming
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let q = suspects.as_slice();

    // which alarming devices each suspect explains
    let explains: Vec<Vec<usize>> = q
        .iter()
        .map(|&f| {
            alarming
                .iter()
                .enumerate()
                .filter(|(_, &d)| reach.explains(f, d))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();

    let mut unexplained = Vec::new();
    let scores: Vec<(f64, usize)> = match form {
        BayesForm::Posterior => {
            let mut mass = vec![0.0; alarming.len()];
            for (i, &f) in q.iter().enumerate() {
                for &j in &explains[i] {
                    mass[j] += table.get(f);
                }
            }
            for (j, &d) in alarming.iter().enumerate() {
                if mass[j] <= 0.0 {
                    unexplained.push(graph.id(d).clone());
                }
            }
            q.iter()
                .enumerate()
                .map(|(i, &f)| {
                    let usable: Vec<usize> =
                        explains[i].iter().copied().filter(|&j| mass[j] > 0.0).collect();
                    if usable.is_empty() {
                        return (0.0, 0);
                    }
                    let sum: f64 = usable.iter().map(|&j| table.get(f) / mass[j]).sum();
                    (sum / usable.len() as f64, usable.len())
                })
                .collect()
        }
        BayesForm::AlarmNormalized => q
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let n_prime = explains[i].len();
                let den: f64 = explains[i].iter().map(|&j| table.get(alarming[j])).sum();
                if n_prime == 0 || den <= 0.0 {
                    return (0.0, n_prime);
                }
                let sum: f64 = explains[i]
                    .iter()
                    .map(|&j| table.get(alarming[j]) / den)
                    .sum();
                (sum / n_prime as f64, n_prime)
            })
            .collect(),
    };

    let mut entries: Vec<RootCauseEntry> = q
        .iter()
        .zip(scores)
        .map(|(&f, (probability, explained_alarms))| RootCauseEntry {
            device: graph.id(f).clone(),
            level: levels.level(f),
            probability,
            explained_alarms,
            cluster: None,
        })
        .collect();
    entries.sort_by(|a, b| {
        a.level
            .cmp(&b.level)
            .then(b.probability.total_cmp(&a.probability))
            .then_with(|| a.device.cmp(&b.device))
    });

    RootCauseReport {
        entries,
        alarming: alarming.iter().map(|&d| graph.id(d).clone()).collect(),
        unexplained,
        form,
    }
}
