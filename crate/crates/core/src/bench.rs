//! Runtime sweep of the three pipeline stages over generated power chains.
//!
//! Times are thread CPU times from `getrusage(RUSAGE_THREAD)`, averaged over
//! as many repetitions as fit into a small time budget. Input generation
//! (topology, simulated log, snapshot) is not timed.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::alarm::AlarmLog;
use crate::correlation::{build_similarity_graph, girvan_newman, node_severity};
use crate::pipeline::{classify_report, fit_report, root_cause_pipeline, PipelineError};
use crate::root_cause::{marginal_failure_probs, BayesForm, PollSnapshot};
use crate::simulator::{
    generate_topology, run_scenario_on, DeviceRates, FaultMode, InjectedFault, Recovery,
    ScenarioConfig, TopologySource, TopologySpec, DEFAULT_PERSISTENT_AFTER,
};
use crate::topology::DependencyGraph;

pub const DEFAULT_SIZES: [usize; 6] = [50, 500, 5_000, 12_000, 50_000, 100_000];
pub const DEFAULT_MAX_CLUSTER_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchModule {
    Markov,
    RootCause,
    Clustering,
}

impl BenchModule {
    pub const ALL: [BenchModule; 3] = [BenchModule::Markov, BenchModule::RootCause, BenchModule::Clustering];
}

impl fmt::Display for BenchModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchModule::Markov => "markov",
            BenchModule::RootCause => "root-cause",
            BenchModule::Clustering => "clustering",
        })
    }
}

impl FromStr for BenchModule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markov" => Ok(BenchModule::Markov),
            "root-cause" | "root_cause" => Ok(BenchModule::RootCause),
            "clustering" | "cluster" => Ok(BenchModule::Clustering),
            _ => Err(format!("unknown module {s:?} (markov, root-cause, clustering)")),
        }
    }
}

/// One measured point; times are seconds per repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub module: BenchModule,
    pub n: usize,
    pub system_time: f64,
    pub user_time: f64,
    pub repetitions: u32,
}

/// User and system CPU time consumed so far by the calling thread.
pub fn thread_cpu_time() -> (Duration, Duration) {
    // SAFETY: getrusage only writes into the zeroed struct we own.
    let usage = unsafe {
        let mut u: libc::rusage = std::mem::zeroed();
        libc::getrusage(libc::RUSAGE_THREAD, &mut u);
        u
    };
    let tv = |t: libc::timeval| Duration::new(t.tv_sec as u64, t.tv_usec as u32 * 1000);
    (tv(usage.ru_utime), tv(usage.ru_stime))
}

/// Run `f` repeatedly until `budget` of CPU time is used (at least once,
/// at most `max_reps` times); returns per-repetition user and system time.
pub fn measure<F: FnMut()>(mut f: F, budget: Duration, max_reps: u32) -> (f64, f64, u32) {
    let (u0, s0) = thread_cpu_time();
    let mut reps = 0;
    loop {
        f();
        reps += 1;
        let (u, s) = thread_cpu_time();
        if reps >= max_reps || (u - u0) + (s - s0) >= budget {
            let per = |d: Duration| d.as_secs_f64() / reps as f64;
            return (per(u - u0), per(s - s0), reps);
        }
    }
}

/// Generated input for one size: scaled chain, simulated log and final sweep.
pub struct Workload {
    pub graph: DependencyGraph,
    pub log: AlarmLog,
    pub snapshot: PollSnapshot,
}

pub fn workload(n: usize, seed: u64) -> Result<Workload, PipelineError> {
    let graph = generate_topology(&TopologySpec::scaled(n))?;
    let horizon = 400;
    // inject below the root when there is a second level
    let target = graph.children(graph.sources().next().unwrap_or(0)).first().copied().unwrap_or(0);
    let config = ScenarioConfig {
        topology: TopologySource::Preset("power_chain_47".into()),
        rates: DeviceRates {
            alpha: 0.02,
            gamma: 0.0005,
            recovery: Recovery::Weibull { k: 2.43, lambda: 4.69 },
        },
        device_rates: Default::default(),
        horizon,
        faults: vec![InjectedFault {
            device: graph.id(target).clone(),
            tick: horizon - 60,
            mode: FaultMode::Permanent,
        }],
        seed,
        snapshot_ticks: vec![],
        persistent_after: DEFAULT_PERSISTENT_AFTER,
    };
    let result = run_scenario_on(graph.clone(), &config)?;
    Ok(Workload {
        snapshot: result.final_snapshot().clone(),
        log: result.log,
        graph,
    })
}

/// Time one stage on a prepared workload.
pub fn bench_one(module: BenchModule, w: &Workload, budget: Duration) -> Result<BenchRecord, PipelineError> {
    // run once untimed so errors surface and caches are warm
    run_stage(module, w)?;
    let (user, system, reps) = measure(
        || {
            let _ = run_stage(module, w);
        },
        budget,
        1000,
    );
    Ok(BenchRecord {
        module,
        n: w.graph.node_count(),
        system_time: system,
        user_time: user,
        repetitions: reps,
    })
}

fn run_stage(module: BenchModule, w: &Workload) -> Result<(), PipelineError> {
    match module {
        BenchModule::Markov => {
            let fit = fit_report(&w.log, DEFAULT_PERSISTENT_AFTER);
            std::hint::black_box(classify_report(&w.log, &fit, 0.5, None)?);
        }
        BenchModule::RootCause => {
            std::hint::black_box(root_cause_pipeline(&w.graph, &w.log, &w.snapshot, BayesForm::Posterior, None)?);
        }
        BenchModule::Clustering => {
            let table = marginal_failure_probs(&w.log, &w.graph)?;
            let reach = w.graph.build_reachability()?;
            let sim = build_similarity_graph(&w.graph, &table, &reach, 0.0);
            std::hint::black_box((girvan_newman(&sim), node_severity(&sim)));
        }
    }
    Ok(())
}

/// Sweep `modules` over `sizes`; clustering skips sizes above `max_cluster_size`.
pub fn run_bench(
    modules: &[BenchModule],
    sizes: &[usize],
    max_cluster_size: usize,
    seed: u64,
    budget: Duration,
) -> Result<Vec<BenchRecord>, PipelineError> {
    let mut out = Vec::new();
    for &n in sizes {
        let wanted: Vec<BenchModule> = modules
            .iter()
            .copied()
            .filter(|&m| m != BenchModule::Clustering || n <= max_cluster_size)
            .collect();
        if wanted.is_empty() || n == 0 {
            continue;
        }
        let w = workload(n, seed)?;
        for m in wanted {
            out.push(bench_one(m, &w, budget)?);
        }
    }
    out.sort_by_key(|r| (r.module, r.n));
    Ok(out)
}
