//! The per-scan analysis pipeline shared by simulation runs and offline
//! re-analysis of recorded traces. It sees only the joint states, so feeding
//! it the same ticks always yields the same records.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::closure::{classify_phase, detect_closures, influence_graph, ClosureError, ClosureMode, ClosureSet};
use crate::cluster_scan::{
    scan_exhaustive_with, scan_greedy_with, track_identities, Cluster, IdentityTrack, ScanError,
    ScanReport, TrackStatus,
};
use crate::config::ExperimentConfig;
use crate::dynamics::{majority_state, promote_stratum, PromotionRule, StratumEvent, SuperTrace};
use crate::infometrics::{
    integration_and_complexity, shuffled_surrogates, Estimator, InfoError, IntConfig,
};
use crate::population::{Alphabet, AgentSet, Population, PopulationError, StateTrace, Symbol, TraceError, Window};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

/// Receives every tick and every scan as they happen.
pub trait RecordSink {
    fn tick(&mut self, tick: u64, joint: &[Symbol]) -> std::io::Result<()>;
    fn scan(&mut self, record: &ScanRecord) -> std::io::Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub tick: u64,
    pub integration: f64,
    pub complexity: f64,
    pub int_p: f64,
    /// Highest-CI subset evaluated in this scan.
    pub top: Option<Cluster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRow {
    pub tick: u64,
    pub label: String,
    pub status: TrackStatus,
    pub cluster: Cluster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureRow {
    pub tick: u64,
    pub closure: ClosureSet,
    pub phase: TrackStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub tick: u64,
    pub metrics: MetricsRow,
    pub clusters: Vec<ClusterRow>,
    pub closures: Vec<ClosureRow>,
    pub events: Vec<StratumEvent>,
}

const STREAM_OC: u64 = 1;
pub const STREAM_SURROGATE: u64 = 2;
const STREAM_CLOSURE: u64 = 3;

/// Seed for one analysis stream at one tick, by SplitMix64 finalization.
pub fn derive_seed(seed: u64, tick: u64, stream: u64, stratum: usize) -> u64 {
    let mut z = seed
        ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (stratum as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct Level {
    /// Global agent ids by local index.
    ids: Vec<usize>,
    pop: Option<Population>,
    trace: Option<StateTrace>,
    current: Vec<Symbol>,
    tracks: Vec<IdentityTrack>,
    int: IntConfig,
}

#[derive(Debug, Clone)]
pub struct Analyzer {
    cfg: ExperimentConfig,
    alphabet: Alphabet,
    levels: Vec<Level>,
    events: Vec<StratumEvent>,
    supers: Vec<SuperTrace>,
    closures: Vec<(u64, Vec<ClosureSet>)>,
    first_seen: BTreeMap<(ClosureMode, u128), u64>,
    next_id: usize,
    last_window: Option<Window>,
}

impl Analyzer {
    pub fn new(cfg: &ExperimentConfig, n_agents: usize) -> Result<Self, AnalysisError> {
        let alphabet = Alphabet::new(cfg.alphabet)?;
        let pop = Population::new(n_agents, alphabet)?;
        let base = Level {
            ids: (0..n_agents).collect(),
            trace: Some(StateTrace::new(n_agents, alphabet, cfg.window + cfg.closure.lag)?),
            pop: Some(pop),
            current: Vec::new(),
            tracks: Vec::new(),
            int: int_config(cfg),
        };
        Ok(Analyzer {
            cfg: cfg.clone(),
            alphabet,
            levels: vec![base],
            events: Vec::new(),
            supers: Vec::new(),
            closures: Vec::new(),
            first_seen: BTreeMap::new(),
            next_id: n_agents,
            last_window: None,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.levels[0].ids.len()
    }

    pub fn events(&self) -> &[StratumEvent] {
        &self.events
    }

    pub fn super_traces(&self) -> Vec<SuperTrace> {
        self.supers.clone()
    }

    pub fn tracks(&self) -> &[IdentityTrack] {
        &self.levels[0].tracks
    }

    /// Window of the base stratum analyzed by the latest scan.
    pub fn last_window(&self) -> Option<&Window> {
        self.last_window.as_ref()
    }

    /// Records one tick; runs a scan when the tick falls on the cadence and a
    /// full window is available.
    pub fn push(&mut self, tick: u64, joint: &[Symbol]) -> Result<Option<ScanRecord>, AnalysisError> {
        self.levels[0].trace.as_mut().expect("base trace").record_at(tick, joint)?;
        self.levels[0].current = joint.to_vec();
        for s in 1..self.levels.len() {
            let below = self.levels[s - 1].current.clone();
            let mut row = Vec::with_capacity(self.levels[s].ids.len());
            for sup in self.supers.iter_mut().filter(|t| t.stratum == s) {
                let state = majority_state(sup.members.members(), &below, self.alphabet);
                sup.states.push(state);
                row.push(state);
            }
            if let Some(trace) = self.levels[s].trace.as_mut() {
                trace.record_at(tick, &row)?;
            }
            self.levels[s].current = row;
        }

        let cadence = self.cfg.cadence() as u64;
        let base_len = self.levels[0].trace.as_ref().map_or(0, |t| t.len());
        if !tick.is_multiple_of(cadence) || base_len < self.cfg.window {
            return Ok(None);
        }
        let (metrics, report) = self.scan_level(0, tick)?;
        let clusters = self.cluster_rows(&report, tick);
        let closures = self.closure_rows(tick)?;
        let mut events = self.promote(0, tick)?;
        for s in 1..self.levels.len() {
            if s >= self.cfg.strata_cap {
                break;
            }
            let ready = self.levels[s].trace.as_ref().is_some_and(|t| t.len() >= self.cfg.window);
            if ready && self.levels[s].ids.len() >= 3 {
                self.scan_level(s, tick)?;
                events.extend(self.promote(s, tick)?);
            }
        }
        Ok(Some(ScanRecord { tick, metrics, clusters, closures, events }))
    }

    fn scan_level(&mut self, s: usize, tick: u64) -> Result<(MetricsRow, ScanReport), AnalysisError> {
        let cfg = &self.cfg;
        let seed = cfg.seed;
        let level = &mut self.levels[s];
        let window = level.trace.as_ref().expect("scanned levels have traces").take_window(cfg.window)?;
        let n = window.n_agents();
        let out = {
            let mut est = Estimator::new(&window)
                .with_correction(cfg.estimator.bias_correction)
                .with_exact_limit(cfg.estimator.exact_limit);
            let surrogate_windows = if cfg.estimator.surrogate_ci {
                shuffled_surrogates(&window, cfg.estimator.surrogate_shuffles, derive_seed(seed, tick, STREAM_SURROGATE, s))
            } else {
                Vec::new()
            };
            let mut surrogates: Vec<Estimator> = surrogate_windows
                .iter()
                .map(|w| Estimator::new(w).with_correction(cfg.estimator.bias_correction).with_exact_limit(cfg.estimator.exact_limit))
                .collect();
            let report = if n < 3 {
                ScanReport::default()
            } else if n <= cfg.estimator.exact_limit {
                scan_exhaustive_with(&mut est, &mut surrogates, cfg.theta)?
            } else {
                scan_greedy_with(&mut est, &mut surrogates, cfg.theta, cfg.estimator.greedy_budget)?
            };
            let (ip, oc) = integration_and_complexity(&mut est, cfg.estimator.oc_budget, derive_seed(seed, tick, STREAM_OC, s))?;
            level.int.observe(ip.value(), oc.value());
            let metrics = MetricsRow {
                tick,
                integration: ip.value(),
                complexity: oc.value(),
                int_p: level.int.score(ip.value(), oc.value()),
                top: report.best.clone(),
            };
            (metrics, report)
        };
        let tracks = std::mem::take(&mut level.tracks);
        level.tracks = track_identities(tracks, &out.1.clusters, tick, &cfg.identity);
        if s == 0 {
            self.last_window = Some(window);
        }
        Ok(out)
    }

    fn cluster_rows(&self, report: &ScanReport, tick: u64) -> Vec<ClusterRow> {
        let tracks = &self.levels[0].tracks;
        report
            .clusters
            .iter()
            .map(|c| {
                let t = tracks
                    .iter()
                    .find(|t| !t.retired && t.last().tick == tick && t.last().members == c.members)
                    .expect("every reported cluster is tracked");
                ClusterRow { tick, label: t.name(), status: t.status, cluster: c.clone() }
            })
            .collect()
    }

    fn closure_rows(&mut self, tick: u64) -> Result<Vec<ClosureRow>, AnalysisError> {
        let trace = self.levels[0].trace.as_ref().expect("base trace");
        if trace.len() < self.cfg.window + self.cfg.closure.lag {
            return Ok(Vec::new());
        }
        let seed = derive_seed(self.cfg.seed, tick, STREAM_CLOSURE, 0);
        let graph = influence_graph(trace, self.cfg.window, &self.cfg.closure, seed)?;
        let mut found = detect_closures(&graph, self.cfg.closure.mode);
        for c in &mut found {
            c.first_seen = *self.first_seen.entry((c.mode, c.members.mask())).or_insert(tick);
            c.last_seen = tick;
        }
        self.closures.push((tick, found.clone()));
        let tracks = &self.levels[0].tracks;
        let phases = classify_phase(tracks, &self.closures);
        Ok(found
            .into_iter()
            .map(|closure| {
                let mut phase = TrackStatus::Preindividual;
                let mut best = 0.0;
                for (t, (_, p)) in tracks.iter().zip(&phases) {
                    if !t.is_current() {
                        continue;
                    }
                    let j = t.last().members.jaccard(&closure.members);
                    if j >= 0.5 && j > best {
                        best = j;
                        phase = *p;
                    }
                }
                ClosureRow { tick, closure, phase }
            })
            .collect())
    }

    fn promote(&mut self, s: usize, tick: u64) -> Result<Vec<StratumEvent>, AnalysisError> {
        if s >= self.cfg.strata_cap {
            return Ok(Vec::new());
        }
        let level = &self.levels[s];
        let Some(pop) = level.pop.as_ref() else {
            return Ok(Vec::new());
        };
        let rule = PromotionRule { theta: self.cfg.theta_promote, tau: self.cfg.tau_promote };
        let (above, fresh) = promote_stratum(&self.events, &level.tracks, pop, &rule, &level.ids, self.next_id);
        if fresh.is_empty() {
            return Ok(fresh);
        }
        self.next_id += fresh.len();
        if self.levels.len() == s + 1 {
            self.levels.push(Level {
                ids: Vec::new(),
                pop: None,
                trace: None,
                current: Vec::new(),
                tracks: Vec::new(),
                int: int_config(&self.cfg),
            });
        }
        for e in &fresh {
            self.supers.push(SuperTrace {
                id: e.new_agent,
                stratum: s + 1,
                members: e.members.clone(),
                start_tick: tick + 1,
                states: Vec::new(),
            });
        }
        let up = &mut self.levels[s + 1];
        up.ids.extend(fresh.iter().map(|e| e.new_agent.0));
        if let Some(pop) = above {
            // a changed population restarts the stratum's trace
            up.trace = Some(StateTrace::new(pop.n_agents(), self.alphabet, self.cfg.window + self.cfg.closure.lag)?);
            up.pop = Some(pop);
        }
        self.events.extend(fresh.iter().cloned());
        Ok(fresh)
    }
}

fn int_config(cfg: &ExperimentConfig) -> IntConfig {
    IntConfig { oc_budget: cfg.estimator.oc_budget, ..IntConfig::with_combiner(cfg.estimator.combiner) }
}

/// Window over the last `len` ticks of a super-agent stratum, built from the
/// super-agents' own series; all of them must cover those ticks.
pub fn super_window(traces: &[&SuperTrace], alphabet: Alphabet, len: usize) -> Option<Window> {
    let columns: Option<Vec<Vec<Symbol>>> = traces
        .iter()
        .map(|t| (t.states.len() >= len).then(|| t.states[t.states.len() - len..].to_vec()))
        .collect();
    let columns = columns?;
    let last = traces.first()?;
    let start = last.start_tick + (last.states.len() - len) as u64;
    Some(Window::from_columns(start, alphabet, columns))
}

pub fn members_label(ids: &[usize]) -> String {
    AgentSet::new(ids.to_vec()).label()
}
