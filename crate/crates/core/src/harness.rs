//! Experiment runner: CSV emission, run and analyze entry points, and the
//! checksum manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{derive_seed, members_label, STREAM_SURROGATE, AnalysisError, Analyzer, RecordSink, ScanRecord};
use crate::cluster_scan::{scan_exhaustive_with, scan_greedy_with, ScanReport};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dynamics::{transduce_into, DynamicsError};
use crate::infometrics::{shuffled_surrogates, CiValue, Estimator};
use crate::population::{Alphabet, StateTrace, Symbol, TraceError, TraceReader, TraceWriter};

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CLOSURES_FILE: &str = "closures.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_MARKER: &str = ".failed";

pub const METRICS_HEADER: &str = "tick,I_P,OC_P,Int_P,top_cluster,top_CI";
pub const CLUSTERS_HEADER: &str = "tick,label,status,members,I,cross_mi,ci";
pub const CLOSURES_HEADER: &str = "tick,mode,members,phase";
pub const EVENTS_HEADER: &str = "tick,event,members,new_agent_id";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("trace {path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error(transparent)]
    Run(DynamicsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("bad INDLAB_THREADS value `{0}`")]
    Threads(String),
}

impl HarnessError {
    /// 1 for configuration problems, 2 for input/output.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Threads(_) => 1,
            HarnessError::Run(DynamicsError::Config(_) | DynamicsError::Scenario(_)) => 1,
            _ => 2,
        }
    }
}

impl From<DynamicsError> for HarnessError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Config(c) => HarnessError::Config(c),
            other => HarnessError::Run(other),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_owned(), source }
}

/// Caps the global worker pool from `INDLAB_THREADS`; unset or 0 means one
/// worker per core.
pub fn init_threads() -> Result<(), HarnessError> {
    let threads = match std::env::var("INDLAB_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| HarnessError::Threads(v))?,
        Err(_) => 0,
    };
    // a pool built earlier in the process wins; that is fine for tests
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fmt_ci(ci: CiValue) -> String {
    match ci {
        CiValue::Finite(v) => fmt_f(v),
        CiValue::Isolated => "isolated".into(),
    }
}

/// CSV lines of one scan record: metrics, clusters, closures, events.
pub fn record_lines(r: &ScanRecord) -> (String, Vec<String>, Vec<String>, Vec<String>) {
    let m = &r.metrics;
    let (top, top_ci) = match &m.top {
        Some(c) => (c.members.label(), fmt_ci(c.ci)),
        None => (String::new(), String::new()),
    };
    let metrics = format!(
        "{},{},{},{},{},{}",
        m.tick,
        fmt_f(m.integration),
        fmt_f(m.complexity),
        fmt_f(m.int_p),
        top,
        top_ci
    );
    let clusters = r
        .clusters
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{},{}",
                c.tick,
                c.label,
                c.status.as_str(),
                c.cluster.members.label(),
                fmt_f(c.cluster.integration.value()),
                fmt_f(c.cluster.cross_mi.value()),
                fmt_ci(c.cluster.ci)
            )
        })
        .collect();
    let closures = r
        .closures
        .iter()
        .map(|c| format!("{},{},{},{}", c.tick, c.closure.mode.as_str(), c.closure.members.label(), c.phase.as_str()))
        .collect();
    let events = r
        .events
        .iter()
        .map(|e| format!("{},promotion,{},{}", e.tick, members_label(&e.member_ids), e.new_agent.0))
        .collect();
    (metrics, clusters, closures, events)
}

struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    fn create(dir: &Path, name: &str, header: &str) -> Result<Self, HarnessError> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(io(&path))?;
        let mut csv = Csv { path, out: BufWriter::new(file) };
        csv.line(header).map_err(io(&csv.path.clone()))?;
        Ok(csv)
    }

    fn line(&mut self, line: &str) -> std::io::Result<()> {
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.out.flush().map_err(io(&self.path))
    }
}

/// Streams analysis records (and optionally the trace) into an output
/// directory.
struct FileSink {
    trace: Option<(PathBuf, TraceWriter<BufWriter<File>>)>,
    metrics: Csv,
    clusters: Csv,
    closures: Csv,
    events: Csv,
}

impl FileSink {
    fn create(dir: &Path, n_agents: Option<usize>) -> Result<Self, HarnessError> {
        let trace = match n_agents {
            Some(n) => {
                let path = dir.join(TRACE_FILE);
                let file = File::create(&path).map_err(io(&path))?;
                let writer = TraceWriter::new(BufWriter::new(file), n).map_err(io(&path))?;
                Some((path, writer))
            }
            None => None,
        };
        Ok(FileSink {
            trace,
            metrics: Csv::create(dir, METRICS_FILE, METRICS_HEADER)?,
            clusters: Csv::create(dir, CLUSTERS_FILE, CLUSTERS_HEADER)?,
            closures: Csv::create(dir, CLOSURES_FILE, CLOSURES_HEADER)?,
            events: Csv::create(dir, EVENTS_FILE, EVENTS_HEADER)?,
        })
    }

    fn finish(self) -> Result<Vec<String>, HarnessError> {
        let mut names = Vec::new();
        if let Some((path, w)) = self.trace {
            w.finish().map_err(io(&path))?;
            names.push(TRACE_FILE.to_string());
        }
        self.metrics.finish()?;
        self.clusters.finish()?;
        self.closures.finish()?;
        self.events.finish()?;
        names.extend([METRICS_FILE, CLUSTERS_FILE, CLOSURES_FILE, EVENTS_FILE].map(String::from));
        Ok(names)
    }
}

impl RecordSink for FileSink {
    fn tick(&mut self, tick: u64, joint: &[Symbol]) -> std::io::Result<()> {
        match self.trace.as_mut() {
            Some((_, w)) => w.write_tick(tick, joint),
            None => Ok(()),
        }
    }

    fn scan(&mut self, r: &ScanRecord) -> std::io::Result<()> {
        let (metrics, clusters, closures, events) = record_lines(r);
        self.metrics.line(&metrics)?;
        for l in clusters {
            self.clusters.line(&l)?;
        }
        for l in closures {
            self.closures.line(&l)?;
        }
        for l in events {
            self.events.line(&l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// Recomputes every checksum and reports the files that differ.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>, HarnessError> {
        let mut bad = Vec::new();
        for f in &self.files {
            if sha256_file(&dir.join(&f.path))? != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Io {
            path,
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let mut file = BufReader::new(File::open(path).map_err(io(path))?);
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(io(path))?;
    Ok(hex::encode(hasher.finalize()))
}

fn write_manifest(dir: &Path, cfg: &ExperimentConfig, names: &[String]) -> Result<RunManifest, HarnessError> {
    let files = names
        .iter()
        .map(|n| Ok(FileEntry { path: n.clone(), sha256: sha256_file(&dir.join(n))? }))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(manifest)
}

fn prepare(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(io(&marker))?;
    }
    Ok(())
}

/// Leaves a marker naming the error next to whatever partial output exists.
fn mark_failed(dir: &Path, err: &HarnessError) {
    let _ = std::fs::write(dir.join(FAILED_MARKER), format!("{err}\n"));
}

fn guarded<T>(dir: &Path, f: impl FnOnce() -> Result<T, HarnessError>) -> Result<T, HarnessError> {
    let result = f();
    if let Err(e) = &result {
        if dir.is_dir() {
            mark_failed(dir, e);
        }
    }
    result
}

/// Simulates `cfg` and writes the five output files followed by the manifest.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest, HarnessError> {
    cfg.validate()?;
    prepare(dir)?;
    guarded(dir, || {
        let n = match cfg.scenario.n() {
            Some(n) => n,
            None => crate::scenario::generate_scenario(
                &cfg.scenario,
                Alphabet::new(cfg.alphabet).map_err(|e| ConfigError::Invalid(e.to_string()))?,
                cfg.w_max,
            )
            .map_err(DynamicsError::from)?
            .0
            .n_agents(),
        };
        let mut sink = FileSink::create(dir, Some(n))?;
        transduce_into(cfg, &mut sink)?;
        let names = sink.finish()?;
        write_manifest(dir, cfg, &names)
    })
}

/// Re-runs the analysis pipeline over a recorded trace file.
pub fn analyze(trace_path: &Path, cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest, HarnessError> {
    cfg.validate()?;
    prepare(dir)?;
    guarded(dir, || {
        let trace_err = |source| HarnessError::Trace { path: trace_path.to_owned(), source };
        let file = File::open(trace_path).map_err(io(trace_path))?;
        let mut reader = TraceReader::new(BufReader::new(file)).map_err(trace_err)?;
        let mut analyzer = Analyzer::new(cfg, reader.n_agents())?;
        let mut sink = FileSink::create(dir, None)?;
        let mut line = 1;
        while let Some((tick, joint)) = reader.next_tick().map_err(trace_err)? {
            line += 1;
            let record = analyzer.push(tick, &joint).map_err(|e| match e {
                AnalysisError::Trace(t) => trace_err(TraceError::Malformed { line, reason: t.to_string() }),
                other => other.into(),
            })?;
            if let Some(r) = record {
                sink.scan(&r).map_err(io(dir))?;
            }
        }
        let names = sink.finish()?;
        write_manifest(dir, cfg, &names)
    })
}

pub const SCAN_HEADER: &str = "tick,members,I,cross_mi,ci";

/// One cluster scan over the most recent window of a recorded trace; a trace
/// shorter than the configured window is scanned whole.
pub fn scan_trace(trace_path: &Path, cfg: &ExperimentConfig) -> Result<(u64, ScanReport), HarnessError> {
    cfg.validate()?;
    let alphabet = Alphabet::new(cfg.alphabet).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let trace_err = |source| HarnessError::Trace { path: trace_path.to_owned(), source };
    let file = File::open(trace_path).map_err(io(trace_path))?;
    let trace = StateTrace::read_csv(BufReader::new(file), alphabet, Some(cfg.window)).map_err(trace_err)?;
    let tick = trace.last_tick().unwrap_or(0);
    let window = trace.take_window(trace.len().min(cfg.window)).map_err(trace_err)?;
    let e = &cfg.estimator;
    let mut est = Estimator::new(&window).with_correction(e.bias_correction).with_exact_limit(e.exact_limit);
    let shuffled = if e.surrogate_ci {
        shuffled_surrogates(&window, e.surrogate_shuffles, derive_seed(cfg.seed, tick, STREAM_SURROGATE, 0))
    } else {
        Vec::new()
    };
    let mut surrogates: Vec<Estimator> =
        shuffled.iter().map(|w| Estimator::new(w).with_correction(e.bias_correction).with_exact_limit(e.exact_limit)).collect();
    let report = if window.n_agents() <= e.exact_limit {
        scan_exhaustive_with(&mut est, &mut surrogates, cfg.theta)
    } else {
        scan_greedy_with(&mut est, &mut surrogates, cfg.theta, e.greedy_budget)
    }
    .map_err(AnalysisError::from)?;
    Ok((tick, report))
}

pub fn scan_lines(tick: u64, report: &ScanReport) -> Vec<String> {
    report
        .clusters
        .iter()
        .map(|c| {
            format!(
                "{tick},{},{},{},{}",
                c.members.label(),
                fmt_f(c.integration.value()),
                fmt_f(c.cross_mi.value()),
                fmt_ci(c.ci)
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig { ticks: 3000, window: 1024, ..ExperimentConfig::default() }
    }

    #[test]
    fn run_writes_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = run(&tiny(), dir.path()).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, vec![TRACE_FILE, METRICS_FILE, CLUSTERS_FILE, CLOSURES_FILE, EVENTS_FILE]);
        assert!(m.verify(dir.path()).unwrap().is_empty());
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
        let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
        assert_eq!(metrics.lines().count(), 1 + 8);
    }

    #[test]
    fn analyze_reproduces_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        run(&cfg, dir.path()).unwrap();
        let again = dir.path().join("again");
        analyze(&dir.path().join(TRACE_FILE), &cfg, &again).unwrap();
        for f in [METRICS_FILE, CLUSTERS_FILE, CLOSURES_FILE, EVENTS_FILE] {
            let a = std::fs::read(dir.path().join(f)).unwrap();
            let b = std::fs::read(again.join(f)).unwrap();
            assert!(a == b, "{f} differs");
        }
    }

    #[test]
    fn truncated_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("t.csv");
        std::fs::write(&trace, "tick,a0,a1\n1,0,1\n2,1\n").unwrap();
        let err = analyze(&trace, &tiny(), &dir.path().join("out")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert_eq!(err.exit_code(), 2);
        assert!(dir.path().join("out").join(FAILED_MARKER).exists());
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = run(&tiny(), &blocker.join("out")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_config_exit_code() {
        let cfg = ExperimentConfig { noise: 2.0, ..tiny() };
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&cfg, dir.path()).unwrap_err().exit_code(), 1);
    }
}
