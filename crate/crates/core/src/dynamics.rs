//! State dynamics, habit-forming topology reinforcement, stratum promotion,
//! and the transductive main loop that alternates them.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use thiserror::Error;

use crate::analysis::{AnalysisError, Analyzer, RecordSink, ScanRecord};
use crate::cluster_scan::IdentityTrack;
use crate::config::{ConfigError, ExperimentConfig};
use crate::infometrics::Estimator;
use crate::population::{
    AgentId, AgentMeta, AgentSet, Alphabet, InteractionGraph, Population, PopulationError,
    StateTrace, Symbol, Window,
};
use crate::scenario::{generate_scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("graph has {graph} agents, population {population}")]
    Dimension { graph: usize, population: usize },
    #[error("state has {got} symbols, population {expected}")]
    StateArity { expected: usize, got: usize },
    #[error("weight matrix left [0, {w_max}] or gained a diagonal entry")]
    WeightInvariant { w_max: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Noisy weighted-majority coupling. Each in-neighbour `j` of `i` takes part
/// in a tick with probability `w_ji / w_max` and votes for its previous
/// symbol with weight `w_ji`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRule {
    pub noise: f64,
    pub w_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforcementRule {
    pub eta: f64,
    pub decay: f64,
    pub w_max: f64,
}

/// One synchronous update from `prev`.
///
/// Draw order per agent: the noise draw; then either a uniform symbol, or one
/// participation draw per in-neighbour with `0 < w < w_max` in index order
/// followed by a tie draw when more than one symbol is tied.
pub fn step_states<R: Rng>(
    pop: &Population,
    graph: &InteractionGraph,
    rule: &CouplingRule,
    prev: &[Symbol],
    rng: &mut R,
) -> Result<Vec<Symbol>, DynamicsError> {
    let n = pop.n_agents();
    if graph.n() != n {
        return Err(DynamicsError::Dimension { graph: graph.n(), population: n });
    }
    if prev.len() != n {
        return Err(DynamicsError::StateArity { expected: n, got: prev.len() });
    }
    let a = pop.alphabet().size();
    let mut next = Vec::with_capacity(n);
    let mut tally = vec![0.0f64; a];
    let mut tied = Vec::with_capacity(a);
    for i in 0..n {
        if rng.random::<f64>() < rule.noise {
            next.push(rng.random_range(0..a) as Symbol);
            continue;
        }
        tally.iter_mut().for_each(|t| *t = 0.0);
        for j in (0..n).filter(|&j| j != i) {
            let w = graph.weight(j, i);
            if w <= 0.0 {
                continue;
            }
            if w >= rule.w_max || rng.random::<f64>() < w / rule.w_max {
                tally[prev[j] as usize] += w;
            }
        }
        let top = tally.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        tied.clear();
        tied.extend((0..a).filter(|&s| tally[s] == top));
        let pick = if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] };
        next.push(pick as Symbol);
    }
    Ok(next)
}

/// `w <- clamp((1 - decay) w + eta MI(i, j), 0, w_max)` off the diagonal.
pub fn reinforce_topology(graph: &InteractionGraph, w: &Window, rule: &ReinforcementRule) -> InteractionGraph {
    let n = graph.n();
    let mi = Estimator::new(w).pairwise_matrix();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        ((1.0 - rule.decay) * graph.weight(i, j) + rule.eta * mi[i][j]).clamp(0.0, rule.w_max)
                    }
                })
                .collect()
        })
        .collect();
    InteractionGraph::from_rows(rows).expect("clamped weights are valid")
}

/// Every weight in [0, w_max] and the diagonal zero.
pub fn weights_ok(graph: &InteractionGraph, w_max: f64) -> bool {
    (0..graph.n()).all(|i| {
        (0..graph.n()).all(|j| {
            let w = graph.weight(i, j);
            if i == j {
                w == 0.0
            } else {
                (0.0..=w_max).contains(&w)
            }
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Most frequent member symbol; ties go to the lowest member's symbol.
    Majority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumEvent {
    pub tick: u64,
    /// Stratum the promoted cluster lived in.
    pub stratum: usize,
    /// Track that was promoted.
    pub track: u64,
    /// Member indices within that stratum.
    pub members: AgentSet,
    /// Global ids of the members.
    pub member_ids: Vec<usize>,
    pub new_agent: AgentId,
    pub rule: Aggregation,
}

pub fn majority_state(members: &[usize], joint: &[Symbol], alphabet: Alphabet) -> Symbol {
    let mut counts = vec![0usize; alphabet.size()];
    for &m in members {
        counts[joint[m] as usize] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .map(|&m| joint[m])
        .find(|&s| counts[s as usize] == best)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromotionRule {
    pub theta: f64,
    pub tau: usize,
}

/// Promotes every live track whose CI stayed at or above `theta` over its
/// last `tau` consecutive scans and that was not promoted before. Returns
/// the new events and, once at least two super-agents exist, the population
/// of the stratum above.
pub fn promote_stratum(
    events: &[StratumEvent],
    tracks: &[IdentityTrack],
    pop: &Population,
    rule: &PromotionRule,
    global_ids: &[usize],
    next_id: usize,
) -> (Option<Population>, Vec<StratumEvent>) {
    let stratum = pop.stratum();
    let mut fresh = Vec::new();
    for t in tracks {
        let eligible = t.is_current()
            && t.run >= rule.tau
            && t.history.iter().rev().take(rule.tau).all(|e| e.ci.at_least(rule.theta))
            && !events.iter().any(|e| e.stratum == stratum && e.track == t.label);
        if !eligible {
            continue;
        }
        let members = t.last().members.clone();
        fresh.push(StratumEvent {
            tick: t.last().tick,
            stratum,
            track: t.label,
            member_ids: members.members().iter().map(|&m| global_ids[m]).collect(),
            members,
            new_agent: AgentId(next_id + fresh.len()),
            rule: Aggregation::Majority,
        });
    }
    let metas: Vec<AgentMeta> = events
        .iter()
        .chain(&fresh)
        .filter(|e| e.stratum == stratum)
        .map(|e| AgentMeta {
            id: e.new_agent,
            members: Some(e.members.members().iter().map(|&m| AgentId(m)).collect()),
        })
        .collect();
    let above = if metas.len() >= 2 {
        Population::of_super_agents(stratum + 1, pop.alphabet(), metas, pop.n_agents()).ok()
    } else {
        None
    };
    (above, fresh)
}

/// A super-agent's own state series, starting the tick after promotion.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperTrace {
    pub id: AgentId,
    pub stratum: usize,
    pub members: AgentSet,
    pub start_tick: u64,
    pub states: Vec<Symbol>,
}

#[derive(Debug, Clone)]
pub struct TransduceOutput {
    pub trace: StateTrace,
    pub events: Vec<StratumEvent>,
    pub scans: Vec<ScanRecord>,
    pub super_traces: Vec<SuperTrace>,
    pub final_graph: InteractionGraph,
}

/// Collects everything in memory.
#[derive(Debug, Default)]
struct Collect {
    rows: Vec<(u64, Vec<Symbol>)>,
    scans: Vec<ScanRecord>,
}

impl RecordSink for Collect {
    fn tick(&mut self, tick: u64, joint: &[Symbol]) -> std::io::Result<()> {
        self.rows.push((tick, joint.to_vec()));
        Ok(())
    }

    fn scan(&mut self, record: &ScanRecord) -> std::io::Result<()> {
        self.scans.push(record.clone());
        Ok(())
    }
}

pub fn transduce(cfg: &ExperimentConfig) -> Result<TransduceOutput, DynamicsError> {
    let mut sink = Collect::default();
    let (analyzer, final_graph) = transduce_into(cfg, &mut sink)?;
    let n = analyzer.n_agents();
    let alphabet = Alphabet::new(cfg.alphabet)?;
    let mut trace = StateTrace::new(n, alphabet, sink.rows.len().max(1)).expect("positive capacity");
    for (tick, row) in &sink.rows {
        trace.record_at(*tick, row).expect("simulated rows are valid");
    }
    Ok(TransduceOutput {
        trace,
        events: analyzer.events().to_vec(),
        scans: sink.scans,
        super_traces: analyzer.super_traces(),
        final_graph,
    })
}

/// Runs the simulation, streaming every tick and every structure phase to
/// `sink`. Returns the analyzer state and the final interaction graph.
pub fn transduce_into(
    cfg: &ExperimentConfig,
    sink: &mut dyn RecordSink,
) -> Result<(Analyzer, InteractionGraph), DynamicsError> {
    cfg.validate()?;
    let alphabet = Alphabet::new(cfg.alphabet)?;
    let (pop, mut graph) = generate_scenario(&cfg.scenario, alphabet, cfg.w_max)?;
    let coupling = CouplingRule { noise: cfg.noise, w_max: cfg.w_max };
    let reinforcement = ReinforcementRule { eta: cfg.eta, decay: cfg.decay, w_max: cfg.w_max };
    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    let mut state: Vec<Symbol> =
        (0..pop.n_agents()).map(|_| rng.random_range(0..alphabet.size()) as Symbol).collect();
    let mut analyzer = Analyzer::new(cfg, pop.n_agents())?;
    for tick in 1..=cfg.ticks {
        state = step_states(&pop, &graph, &coupling, &state, &mut rng)?;
        sink.tick(tick, &state)?;
        if let Some(record) = analyzer.push(tick, &state)? {
            if cfg.reinforce {
                let window = analyzer.last_window().expect("a scan leaves its window");
                graph = reinforce_topology(&graph, window, &reinforcement);
            }
            if !weights_ok(&graph, cfg.w_max) {
                return Err(DynamicsError::WeightInvariant { w_max: cfg.w_max });
            }
            sink.scan(&record)?;
        }
    }
    Ok((analyzer, graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infometrics::mutual_info_pair;

    fn rng(seed: u64) -> Xoshiro256StarStar {
        Xoshiro256StarStar::seed_from_u64(seed)
    }

    #[test]
    fn pure_noise_ignores_graph() {
        let pop = Population::new(3, Alphabet::BINARY).unwrap();
        let rows = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let g = InteractionGraph::from_rows(rows).unwrap();
        let rule = CouplingRule { noise: 1.0, w_max: 1.0 };
        let mut r = rng(1);
        let mut state = vec![0, 0, 0];
        let mut ones = 0;
        for _ in 0..4000 {
            state = step_states(&pop, &g, &rule, &state, &mut r).unwrap();
            ones += state.iter().filter(|s| **s == 1).count();
        }
        assert!((ones as f64 / 12000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn noiseless_copy_of_single_neighbour() {
        let pop = Population::new(3, Alphabet::new(3).unwrap()).unwrap();
        let mut g = InteractionGraph::zeros(3);
        g.set(2, 0, 1.0).unwrap();
        let rule = CouplingRule { noise: 0.0, w_max: 1.0 };
        let mut r = rng(2);
        for prev in [[0u8, 1, 2], [1, 1, 0], [2, 0, 1]] {
            let next = step_states(&pop, &g, &rule, &prev, &mut r).unwrap();
            assert_eq!(next[0], prev[2]);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let pop = Population::new(3, Alphabet::BINARY).unwrap();
        let rule = CouplingRule { noise: 0.0, w_max: 1.0 };
        assert!(matches!(
            step_states(&pop, &InteractionGraph::zeros(4), &rule, &[0, 0, 0], &mut rng(0)),
            Err(DynamicsError::Dimension { graph: 4, population: 3 })
        ));
    }

    #[test]
    fn block_coupling_concentrates_information() {
        let cfg = crate::config::ExperimentConfig::default();
        let (pop, g) = generate_scenario(&cfg.scenario, Alphabet::BINARY, 1.0).unwrap();
        let rule = CouplingRule { noise: 0.05, w_max: 1.0 };
        let mut r = rng(3);
        let mut state = vec![0; 10];
        let mut trace = StateTrace::new(10, Alphabet::BINARY, 10_000).unwrap();
        for _ in 0..10_000 {
            state = step_states(&pop, &g, &rule, &state, &mut r).unwrap();
            trace.record_tick(&state).unwrap();
        }
        let w = trace.take_window(10_000).unwrap();
        let within = mutual_info_pair(&w, 0, 1).unwrap().value();
        let across = mutual_info_pair(&w, 0, 5).unwrap().value();
        assert!(within > 0.3 && across < 0.01, "{within} {across}");
    }

    fn copy_pair_window() -> Window {
        let mut r = rng(4);
        let a: Vec<u8> = (0..4096).map(|_| r.random_range(0..2)).collect();
        let c: Vec<u8> = (0..4096).map(|_| r.random_range(0..2)).collect();
        Window::from_columns(1, Alphabet::BINARY, vec![a.clone(), a, c])
    }

    #[test]
    fn reinforcement_fixed_point_and_decay() {
        let w = copy_pair_window();
        let rule = ReinforcementRule { eta: 0.1, decay: 0.2, w_max: 1.0 };
        let mi = mutual_info_pair(&w, 0, 1).unwrap().value();
        let mut g = InteractionGraph::zeros(3);
        g.set(0, 2, 0.8).unwrap();
        for _ in 0..200 {
            g = reinforce_topology(&g, &w, &rule);
        }
        assert!((g.weight(0, 1) - 0.5 * mi).abs() < 1e-9);
        assert!(g.weight(0, 2) < 0.01);
        let capped = ReinforcementRule { eta: 0.1, decay: 0.02, w_max: 1.0 };
        for _ in 0..2000 {
            g = reinforce_topology(&g, &w, &capped);
        }
        assert_eq!(g.weight(1, 0), 1.0);
        assert_eq!(g.weight(0, 0), 0.0);
    }

    #[test]
    fn majority_ties_go_to_lowest_member() {
        let a = Alphabet::new(3).unwrap();
        assert_eq!(majority_state(&[0, 1, 2], &[1, 1, 0], a), 1);
        assert_eq!(majority_state(&[0, 1, 2, 3], &[0, 2, 2, 0], a), 0);
        assert_eq!(majority_state(&[1, 2, 3, 4], &[9, 2, 1, 1, 2], a), 2);
        assert_eq!(majority_state(&[0, 1, 2], &[0, 2, 2], a), 2);
    }

    #[test]
    fn zero_ticks_is_empty() {
        let cfg = ExperimentConfig { ticks: 0, ..ExperimentConfig::default() };
        let out = transduce(&cfg).unwrap();
        assert!(out.trace.is_empty());
        assert!(out.events.is_empty());
        assert!(out.scans.is_empty());
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = ExperimentConfig { ticks: 6000, window: 1024, ..ExperimentConfig::default() };
        let a = transduce(&cfg).unwrap();
        let b = transduce(&cfg).unwrap();
        assert_eq!(a.scans, b.scans);
        assert!(a.trace.iter().eq(b.trace.iter()));
        assert_eq!(a.final_graph, b.final_graph);
    }
}
