//! End-to-end stages: fit → classify → root-cause → cluster.
//!
//! Each stage returns a serializable report; write them with
//! [`crate::canonical::to_canonical_json`] for byte-stable output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::{AlarmLog, AlarmLogError};
use crate::correlation::{
    build_similarity_graph, cluster_scoped_rank, girvan_newman, node_severity, severity_records,
    CommunityPartition, CorrelationError, PartitionFile, SeverityRecord,
};
use crate::failure_model::{
    classify_failure, fit_weibull, FailureClassification, FailureStats, MarkovRates, ModelError,
    WeibullParams,
};
use crate::root_cause::{
    collect_suspects, marginal_failure_probs, rank_root_causes, BayesForm, PollSnapshot,
    RootCauseError, RootCauseReport,
};
use crate::simulator::SimError;
use crate::topology::{DependencyGraph, DeviceId, TopologyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    AlarmLog(#[from] AlarmLogError),
    #[error("device {device}: {source}")]
    Model { device: DeviceId, source: ModelError },
    #[error(transparent)]
    RootCause(#[from] RootCauseError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("tick {at} lies outside the log span {start}..={end}")]
    TickOutsideLog { at: u64, start: u64, end: u64 },
}

/// Where a device's effective parameter came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Device,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mttf: Option<f64>,
    pub mttr: Option<f64>,
    pub mlt: Option<f64>,
    pub up_count: u64,
    pub recovery_count: u64,
    pub lifetime_count: u64,
    pub weibull: Option<WeibullParams>,
}

impl Estimate {
    fn new(stats: &FailureStats, recoveries: &[f64]) -> Self {
        Estimate {
            mttf: stats.mttf(),
            mttr: stats.mttr(),
            mlt: stats.mlt(),
            up_count: stats.up.count,
            recovery_count: stats.recovery.count,
            lifetime_count: stats.lifetime.count,
            weibull: fit_weibull(recoveries).ok().map(|f| f.params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceFit {
    pub device: DeviceId,
    pub observed: Estimate,
    /// Rates after falling back to pooled means for missing observations.
    pub rates: Option<MarkovRates>,
    pub rate_sources: [Source; 3],
    pub weibull: Option<WeibullParams>,
    pub weibull_source: Option<Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub log_span: Option<(u64, u64)>,
    pub persistent_after: u64,
    pub pooled: Estimate,
    pub devices: Vec<DeviceFit>,
}

impl FitReport {
    pub fn device(&self, id: &DeviceId) -> Option<&DeviceFit> {
        self.devices
            .binary_search_by(|d| d.device.cmp(id))
            .ok()
            .map(|i| &self.devices[i])
    }
}

/// Per-device MTTF/MTTR/MLT, rates and Weibull recovery fit. Devices short
/// on data borrow the fleet-pooled value per parameter.
pub fn fit_report(log: &AlarmLog, persistent_after: u64) -> FitReport {
    let log_end = log.span().map(|s| s.1).unwrap_or(0);
    let mut per_device = Vec::new();
    let mut pooled = FailureStats::default();
    let mut all_recoveries = Vec::new();
    for (id, h) in log.histories() {
        let stats = FailureStats::from_history(&h, log_end, persistent_after);
        let rec: Vec<f64> = h.recovery_times().into_iter().map(|d| d as f64).collect();
        pooled = pooled.merge(&stats);
        all_recoveries.extend_from_slice(&rec);
        per_device.push((id, stats, rec));
    }
    let pooled = Estimate::new(&pooled, &all_recoveries);

    let pick = |own: Option<f64>, fleet: Option<f64>| match (own, fleet) {
        (Some(v), _) => Some((v, Source::Device)),
        (None, Some(v)) => Some((v, Source::Pooled)),
        _ => None,
    };
    let devices = per_device
        .into_iter()
        .map(|(device, stats, rec)| {
            let observed = Estimate::new(&stats, &rec);
            let f = pick(observed.mttf, pooled.mttf);
            let r = pick(observed.mttr, pooled.mttr);
            let l = pick(observed.mlt, pooled.mlt);
            let (rates, rate_sources) = match (f, r, l) {
                (Some(f), Some(r), Some(l)) => (
                    MarkovRates::new(1.0 / f.0, 1.0 / r.0, 1.0 / l.0).ok(),
                    [f.1, r.1, l.1],
                ),
                _ => (None, [Source::Pooled; 3]),
            };
            let (weibull, weibull_source) = match (observed.weibull, pooled.weibull) {
                (Some(w), _) => (Some(w), Some(Source::Device)),
                (None, Some(w)) => (Some(w), Some(Source::Pooled)),
                _ => (None, None),
            };
            DeviceFit {
                device,
                observed,
                rates,
                rate_sources,
                weibull,
                weibull_source,
            }
        })
        .collect();
    FitReport {
        log_span: log.span(),
        persistent_after,
        pooled,
        devices,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub at: u64,
    pub threshold: f64,
    pub entries: Vec<FailureClassification>,
}

/// Classify every device in ALARM at tick `at` (default: end of log), with
/// `t` the ticks elapsed since its current run started.
pub fn classify_report(
    log: &AlarmLog,
    fit: &FitReport,
    threshold: f64,
    at: Option<u64>,
) -> Result<ClassifyReport, PipelineError> {
    let span = log.span();
    let at = match (at, span) {
        (Some(a), Some((s, e))) if a < s || a > e => {
            return Err(PipelineError::TickOutsideLog { at: a, start: s, end: e })
        }
        (Some(a), _) => a,
        (None, Some((_, e))) => e,
        (None, None) => 0,
    };
    let mut entries = Vec::new();
    for (id, h) in log.histories() {
        let Some(run) = h
            .runs
            .iter()
            .find(|r| r.start <= at && r.end.is_none_or(|e| e > at))
        else {
            continue;
        };
        let model_err = |source| PipelineError::Model {
            device: id.clone(),
            source,
        };
        let dev = fit.device(&id);
        let rates = dev
            .and_then(|d| d.rates)
            .ok_or_else(|| model_err(ModelError::InsufficientData("rate")))?;
        let w = dev.and_then(|d| d.weibull);
        let c = classify_failure(id.clone(), (at - run.start) as f64, &rates, w.as_ref(), threshold)
            .map_err(model_err)?;
        entries.push(c);
    }
    Ok(ClassifyReport {
        at,
        threshold,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseDocument {
    pub graph_hash: String,
    pub log_span: Option<(u64, u64)>,
    pub suspect_count: usize,
    #[serde(flatten)]
    pub report: RootCauseReport,
}

/// Marginals from the log, suspects and evidence from the snapshot.
/// With a partition, each entry carries its cluster id.
pub fn root_cause_pipeline(
    graph: &DependencyGraph,
    log: &AlarmLog,
    snapshot: &PollSnapshot,
    form: BayesForm,
    partition: Option<&CommunityPartition>,
) -> Result<RootCauseDocument, PipelineError> {
    let table = marginal_failure_probs(log, graph)?;
    let reach = graph.build_reachability()?;
    let levels = graph.depth_levels()?;
    let suspects = collect_suspects(snapshot);
    let mut report = rank_root_causes(
        &suspects,
        &snapshot.alarming(),
        graph,
        &levels,
        &table,
        &reach,
        form,
    );
    if let Some(p) = partition {
        for e in &mut report.entries {
            let ix = graph.index_of(&e.device).expect("entry comes from graph");
            e.cluster = Some(p.cluster_of(ix));
        }
    }
    Ok(RootCauseDocument {
        graph_hash: graph.content_hash(),
        log_span: log.span(),
        suspect_count: suspects.len(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopedEntry {
    pub device: DeviceId,
    pub level: u32,
    pub severity: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutput {
    pub partition: CommunityPartition,
    pub partition_file: PartitionFile,
    pub severity: Vec<SeverityRecord>,
    /// Cluster-scoped ordering of probable faulty devices, when alarms are given.
    pub scoped: Option<Vec<ScopedEntry>>,
}

pub fn cluster_pipeline(
    graph: &DependencyGraph,
    log: &AlarmLog,
    min_weight: f64,
    snapshot: Option<&PollSnapshot>,
) -> Result<ClusterOutput, PipelineError> {
    let table = marginal_failure_probs(log, graph)?;
    let reach = graph.build_reachability()?;
    let levels = graph.depth_levels()?;
    let sim = build_similarity_graph(graph, &table, &reach, min_weight);
    let partition = girvan_newman(&sim);
    let sev = node_severity(&sim);
    let scoped = snapshot.map(|s| {
        cluster_scoped_rank(&s.alarming(), &partition, &levels, &sev)
            .into_iter()
            .map(|v| ScopedEntry {
                device: graph.id(v).clone(),
                level: levels.level(v),
                severity: sev.get(v),
                cluster: partition.cluster_of(v),
            })
            .collect()
    });
    let built_at = log.span().map(|s| s.1).unwrap_or(0);
    Ok(ClusterOutput {
        partition_file: PartitionFile::new(graph, &partition, built_at),
        severity: severity_records(graph, &sev),
        partition,
        scoped,
    })
}

/// Devices whose last row is ALARM at the end of the log.
pub fn alarming_at_end(log: &AlarmLog) -> Vec<DeviceId> {
    log.histories()
        .into_iter()
        .filter(|(_, h)| h.open_run().is_some())
        .map(|(id, _)| id)
        .collect()
}
