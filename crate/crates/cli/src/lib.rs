//! `fault-engine` command line: simulate, fit, classify, root-cause, cluster, bench.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fault_engine::alarm::AlarmLog;
use fault_engine::bench::{run_bench, thread_cpu_time, BenchModule, DEFAULT_MAX_CLUSTER_SIZE, DEFAULT_SIZES};
use fault_engine::canonical::{sha256_hex, to_canonical_json};
use fault_engine::correlation::PartitionFile;
use fault_engine::failure_model::DEFAULT_THRESHOLD;
use fault_engine::pipeline::{classify_report, cluster_pipeline, fit_report, root_cause_pipeline};
use fault_engine::root_cause::{BayesForm, PollSnapshot};
use fault_engine::simulator::{run_scenario, ScenarioConfig, TopologySource, DEFAULT_PERSISTENT_AFTER};
use fault_engine::topology::DependencyGraph;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fault-engine", version, about = "Failure classification, root-cause ranking and clustering for device dependency networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a seeded failure scenario and write graph, log, snapshots and ground truth
    Simulate(SimulateArgs),
    /// Estimate per-device MTTF/MTTR/MLT, Markov rates and Weibull recovery
    Fit(FitArgs),
    /// Classify currently failed devices as transient or permanent
    Classify(ClassifyArgs),
    /// Rank probable root causes for a poll sweep
    RootCause(RootCauseArgs),
    /// Build the similarity graph and its Girvan-Newman partition
    Cluster(ClusterArgs),
    /// Time the pipeline stages over a size sweep
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Open failure runs longer than this count as permanent
    #[arg(long, default_value_t = DEFAULT_PERSISTENT_AFTER)]
    persistent_after: u64,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Tick to classify at (default: last tick of the log)
    #[arg(long)]
    at: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_PERSISTENT_AFTER)]
    persistent_after: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormArg {
    Posterior,
    AlarmNormalized,
}

#[derive(Debug, Args)]
struct RootCauseArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Snapshot file, or a snapshot series (latest sweep unless --at is given)
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormArg::Posterior)]
    form: FormArg,
    /// Partition file from `cluster`; adds cluster ids to the report
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Sweep tick to use from a snapshot series
    #[arg(long)]
    at: Option<u64>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Drop similarity edges lighter than this
    #[arg(long, default_value_t = 0.0)]
    min_weight: f64,
    /// Also write the cluster-scoped ranking for this sweep's alarms
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModuleArg {
    Markov,
    RootCause,
    Clustering,
    All,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = ModuleArg::All)]
    module: ModuleArg,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_CLUSTER_SIZE)]
    max_cluster_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CPU time budget per measurement in milliseconds
    #[arg(long, default_value_t = 200)]
    budget_ms: u64,
}

/// Error carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn data_err(context: impl Display, e: impl Display) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: format!("{context}: {e}"),
    }
}

#[derive(Debug, Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct CpuTime {
    user: f64,
    system: f64,
}

/// Written next to every output; lists inputs and outputs with hashes.
#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: String,
    version: String,
    seed: Option<u64>,
    config: BTreeMap<String, String>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    wall_time: f64,
    cpu_time: CpuTime,
}

struct Run {
    subcommand: &'static str,
    seed: Option<u64>,
    config: BTreeMap<String, String>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

impl Run {
    fn new(subcommand: &'static str) -> Self {
        Run {
            subcommand,
            seed: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl Display) {
        self.config.insert(key.to_string(), value.to_string());
    }

    fn read(&mut self, path: &Path) -> Result<String, Failure> {
        let bytes = fs::read(path).map_err(|e| data_err(path.display(), e))?;
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        String::from_utf8(bytes).map_err(|e| data_err(path.display(), e))
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<(), Failure> {
        fs::write(path, contents).map_err(|e| data_err(path.display(), e))?;
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), Failure> {
        let text = to_canonical_json(value).map_err(|e| data_err(path.display(), e))?;
        self.write(path, &text)
    }

    fn finish(self, manifest: &Path, wall: Instant, cpu0: (Duration, Duration)) -> Result<(), Failure> {
        let (u, s) = thread_cpu_time();
        let m = RunManifest {
            subcommand: self.subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time: wall.elapsed().as_secs_f64(),
            cpu_time: CpuTime {
                user: (u - cpu0.0).as_secs_f64(),
                system: (s - cpu0.1).as_secs_f64(),
            },
        };
        let text = to_canonical_json(&m).map_err(|e| data_err(manifest.display(), e))?;
        fs::write(manifest, text).map_err(|e| data_err(manifest.display(), e))
    }
}

/// `<out>.manifest.json` next to a single output file.
fn manifest_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| data_err(dir.display(), e))
}

fn load_graph(run: &mut Run, path: &Path) -> Result<DependencyGraph, Failure> {
    let text = run.read(path)?;
    DependencyGraph::parse(&text).map_err(|e| data_err(path.display(), e))
}

fn load_log(run: &mut Run, path: &Path) -> Result<AlarmLog, Failure> {
    let text = run.read(path)?;
    AlarmLog::parse(&text).map_err(|e| data_err(path.display(), e))
}

fn load_snapshot(run: &mut Run, graph: &DependencyGraph, path: &Path, at: Option<u64>) -> Result<PollSnapshot, Failure> {
    let text = run.read(path)?;
    PollSnapshot::from_reader(graph, text.as_bytes(), at).map_err(|e| data_err(path.display(), e))
}

fn simulate(a: SimulateArgs) -> Result<(Run, PathBuf), Failure> {
    let mut run = Run::new("simulate");
    let text = run.read(&a.config)?;
    let mut config = ScenarioConfig::parse(&text).map_err(|e| data_err(a.config.display(), e))?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let TopologySource::File(p) = &mut config.topology {
        if p.is_relative() {
            if let Some(dir) = a.config.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    run.seed = Some(config.seed);
    run.set("config", a.config.display());
    let result = run_scenario(&config).map_err(|e| data_err(a.config.display(), e))?;
    ensure_dir(&a.out)?;
    run.write(&a.out.join("graph.json"), &result.graph().to_canonical_string())?;
    run.write(&a.out.join("alarm_log.csv"), &result.log.to_csv_string())?;
    run.write(&a.out.join("snapshots.csv"), &result.snapshot_series_csv())?;
    run.write(&a.out.join("ground_truth.csv"), &result.ground_truth_csv())?;
    run.write_json(&a.out.join("scenario.json"), &result.summary())?;
    Ok((run, a.out.join("manifest.json")))
}

fn fit(a: FitArgs) -> Result<(Run, PathBuf), Failure> {
    let mut run = Run::new("fit");
    run.set("persistent_after", a.persistent_after);
    let log = load_log(&mut run, &a.log)?;
    let report = fit_report(&log, a.persistent_after);
    run.write_json(&a.out, &report)?;
    Ok((run, manifest_for(&a.out)))
}

fn classify(a: ClassifyArgs) -> Result<(Run, PathBuf), Failure> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: format!("--threshold must lie in [0, 1], got {}", a.threshold),
        });
    }
    let mut run = Run::new("classify");
    run.set("threshold", a.threshold);
    run.set("persistent_after", a.persistent_after);
    if let Some(at) = a.at {
        run.set("at", at);
    }
    let log = load_log(&mut run, &a.log)?;
    let fit = fit_report(&log, a.persistent_after);
    let report = classify_report(&log, &fit, a.threshold, a.at).map_err(|e| data_err(a.log.display(), e))?;
    run.write_json(&a.out, &report)?;
    Ok((run, manifest_for(&a.out)))
}

fn root_cause(a: RootCauseArgs) -> Result<(Run, PathBuf), Failure> {
    let mut run = Run::new("root-cause");
    let form = match a.form {
        FormArg::Posterior => BayesForm::Posterior,
        FormArg::AlarmNormalized => BayesForm::AlarmNormalized,
    };
    run.set("form", a.form.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default());
    let graph = load_graph(&mut run, &a.graph)?;
    let log = load_log(&mut run, &a.log)?;
    let snapshot = load_snapshot(&mut run, &graph, &a.snapshot, a.at)?;
    let partition = match &a.partition {
        Some(p) => {
            let text = run.read(p)?;
            let file: PartitionFile = serde_json::from_str(&text).map_err(|e| data_err(p.display(), e))?;
            Some(file.to_partition(&graph).map_err(|e| data_err(p.display(), e))?)
        }
        None => None,
    };
    let doc = root_cause_pipeline(&graph, &log, &snapshot, form, partition.as_ref())
        .map_err(|e| data_err("root-cause", e))?;
    run.write_json(&a.out, &doc)?;
    Ok((run, manifest_for(&a.out)))
}

fn cluster(a: ClusterArgs) -> Result<(Run, PathBuf), Failure> {
    if a.min_weight.is_nan() || a.min_weight < 0.0 {
        return Err(Failure {
            code: EXIT_USAGE,
            message: format!("--min-weight must be non-negative, got {}", a.min_weight),
        });
    }
    let mut run = Run::new("cluster");
    run.set("min_weight", a.min_weight);
    let graph = load_graph(&mut run, &a.graph)?;
    let log = load_log(&mut run, &a.log)?;
    let snapshot = match &a.snapshot {
        Some(p) => Some(load_snapshot(&mut run, &graph, p, None)?),
        None => None,
    };
    let out = cluster_pipeline(&graph, &log, a.min_weight, snapshot.as_ref()).map_err(|e| data_err("cluster", e))?;
    ensure_dir(&a.out)?;
    run.write_json(&a.out.join("partition.json"), &out.partition_file)?;
    run.write_json(&a.out.join("severity.json"), &out.severity)?;
    if let Some(scoped) = &out.scoped {
        run.write_json(&a.out.join("scoped_rank.json"), scoped)?;
    }
    Ok((run, a.out.join("manifest.json")))
}

fn bench(a: BenchArgs) -> Result<(Run, PathBuf), Failure> {
    let mut run = Run::new("bench");
    let modules: Vec<BenchModule> = match a.module {
        ModuleArg::Markov => vec![BenchModule::Markov],
        ModuleArg::RootCause => vec![BenchModule::RootCause],
        ModuleArg::Clustering => vec![BenchModule::Clustering],
        ModuleArg::All => BenchModule::ALL.to_vec(),
    };
    let sizes = a.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
    if sizes.contains(&0) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--sizes must be positive".into(),
        });
    }
    run.seed = Some(a.seed);
    run.set("module", a.module.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default());
    run.set(
        "sizes",
        sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
    );
    run.set("max_cluster_size", a.max_cluster_size);
    run.set("budget_ms", a.budget_ms);
    let records = run_bench(
        &modules,
        &sizes,
        a.max_cluster_size,
        a.seed,
        Duration::from_millis(a.budget_ms),
    )
    .map_err(|e| data_err("bench", e))?;
    println!("{:<12} {:>8} {:>14} {:>14} {:>6}", "module", "n", "user_s", "system_s", "reps");
    for r in &records {
        println!(
            "{:<12} {:>8} {:>14.6} {:>14.6} {:>6}",
            r.module.to_string(),
            r.n,
            r.user_time,
            r.system_time,
            r.repetitions
        );
    }
    run.write_json(&a.out, &records)?;
    Ok((run, manifest_for(&a.out)))
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run_command<I, T>(args: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return if code == EXIT_OK {
                Ok(())
            } else {
                Err(Failure {
                    code,
                    message: String::new(),
                })
            };
        }
    };
    let wall = Instant::now();
    let cpu0 = thread_cpu_time();
    let (run, manifest) = match cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Fit(a) => fit(a)?,
        Command::Classify(a) => classify(a)?,
        Command::RootCause(a) => root_cause(a)?,
        Command::Cluster(a) => cluster(a)?,
        Command::Bench(a) => bench(a)?,
    };
    run.finish(&manifest, wall, cpu0)
}

/// Run and map the outcome to an exit status, reporting errors on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run_command(args) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            f.code
        }
    }
}
