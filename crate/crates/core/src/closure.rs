//! Directed influence graphs estimated from lagged mutual information, and
//! detection of operational closures on them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster_scan::{IdentityTrack, TrackStatus};
use crate::population::{AgentSet, StateTrace, Symbol, TraceError};

#[derive(Debug, Error, PartialEq)]
pub enum ClosureError {
    #[error("lag must be at least 1")]
    ZeroLag,
    #[error("trace holds {available} ticks, {needed} needed for window plus lag")]
    TraceTooShort { available: usize, needed: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node {0} outside graph of {1} nodes")]
    UnknownNode(usize, usize),
    #[error("edge weight {0} below threshold {1}")]
    WeakEdge(f64, f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureMode {
    #[default]
    Literal,
    Strict,
}

impl ClosureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClosureMode::Literal => "literal",
            ClosureMode::Strict => "strict",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceDigraph {
    n: usize,
    eps_edge: f64,
    /// Tick at the end of the window the graph was estimated on.
    pub tick: u64,
    edges: BTreeMap<(usize, usize), f64>,
}

impl InfluenceDigraph {
    pub fn new(n: usize, eps_edge: f64) -> Self {
        InfluenceDigraph { n, eps_edge, tick: 0, edges: BTreeMap::new() }
    }

    /// Unweighted graph for structural tests; every edge gets weight 1.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, ClosureError> {
        let mut g = InfluenceDigraph::new(n, 0.0);
        for &(a, b) in edges {
            g.add_edge(a, b, 1.0)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, from: usize, to: usize, weight: f64) -> Result<(), ClosureError> {
        for v in [from, to] {
            if v >= self.n {
                return Err(ClosureError::UnknownNode(v, self.n));
            }
        }
        if from == to {
            return Err(ClosureError::SelfLoop(from));
        }
        if !(weight >= self.eps_edge) {
            return Err(ClosureError::WeakEdge(weight, self.eps_edge));
        }
        self.edges.insert((from, to), weight);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains_key(&(from, to))
    }

    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        self.edges.get(&(from, to)).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut out = vec![Vec::new(); self.n];
        let mut inc = vec![Vec::new(); self.n];
        for &(a, b) in self.edges.keys() {
            out[a].push(b);
            inc[b].push(a);
        }
        (out, inc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosureParams {
    pub lag: usize,
    pub eps_edge: f64,
    pub surrogates: usize,
    pub mode: ClosureMode,
}

impl Default for ClosureParams {
    fn default() -> Self {
        ClosureParams { lag: 1, eps_edge: 0.1, surrogates: 20, mode: ClosureMode::Literal }
    }
}

/// Plug-in MI between `x[t]` and `y[t]` for aligned slices.
pub fn lagged_mi(x: &[Symbol], y: &[Symbol], alphabet: usize) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let mut joint = vec![0u32; alphabet * alphabet];
    let mut px = vec![0u32; alphabet];
    let mut py = vec![0u32; alphabet];
    for t in 0..n {
        let (a, b) = (x[t] as usize, y[t] as usize);
        joint[a * alphabet + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let plogp = |counts: &[u32]| -> f64 {
        counts.iter().filter(|c| **c > 0).map(|&c| c as f64 * (c as f64).log2()).sum()
    };
    let nf = n as f64;
    // H(X) + H(Y) - H(X,Y), each as log2(n) - sum(c log2 c)/n
    let mi = (plogp(&joint) - plogp(&px) - plogp(&py)) / nf + nf.log2();
    mi.max(0.0)
}

/// Edge `i -> j` when `MI(x_i(t), x_j(t + lag))` exceeds the mean of the same
/// quantity over shuffled copies of `x_i` by at least `eps_edge`.
pub fn influence_graph(
    trace: &StateTrace,
    window: usize,
    params: &ClosureParams,
    seed: u64,
) -> Result<InfluenceDigraph, ClosureError> {
    let lag = params.lag;
    if lag == 0 {
        return Err(ClosureError::ZeroLag);
    }
    let needed = window + lag;
    if trace.len() < needed {
        return Err(ClosureError::TraceTooShort { available: trace.len(), needed });
    }
    let span = trace.take_span(needed)?;
    let n = span.n_agents();
    let a = span.alphabet().size();
    let mut g = InfluenceDigraph::new(n, params.eps_edge);
    g.tick = span.end_tick();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    for i in 0..n {
        let source = &span.column(i)[..window];
        let shuffled: Vec<Vec<Symbol>> = (0..params.surrogates)
            .map(|_| {
                let mut s = source.to_vec();
                s.shuffle(&mut rng);
                s
            })
            .collect();
        for j in (0..n).filter(|&j| j != i) {
            let target = &span.column(j)[lag..];
            let mi = lagged_mi(source, target, a);
            let baseline = if shuffled.is_empty() {
                0.0
            } else {
                shuffled.iter().map(|s| lagged_mi(s, target, a)).sum::<f64>() / shuffled.len() as f64
            };
            let excess = mi - baseline;
            if excess >= params.eps_edge {
                g.add_edge(i, j, mi)?;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureSet {
    pub members: AgentSet,
    pub mode: ClosureMode,
    pub first_seen: u64,
    pub last_seen: u64,
}

fn weak_components(nodes: &[usize], out: &[Vec<usize>], inc: &[Vec<usize>], alive: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; alive.len()];
    let mut comps = Vec::new();
    for &start in nodes {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &u in out[v].iter().chain(&inc[v]) {
                if alive[u] && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Kosaraju's algorithm; components in order of their smallest node.
pub fn strongly_connected_components(g: &InfluenceDigraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let (out, inc) = g.adjacency();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        let mut stack = vec![(s, 0usize)];
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < out[v].len() {
                let u = out[v][*next];
                *next += 1;
                if !visited[u] {
                    visited[u] = true;
                    stack.push((u, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = Vec::new();
        let mut stack = vec![s];
        comp[s] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for &u in &inc[v] {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps.sort();
    comps
}

pub fn detect_closures(g: &InfluenceDigraph, mode: ClosureMode) -> Vec<ClosureSet> {
    let groups: Vec<Vec<usize>> = match mode {
        ClosureMode::Literal => {
            let (out, inc) = g.adjacency();
            let mut alive = vec![true; g.n()];
            loop {
                let doomed: Vec<usize> = (0..g.n())
                    .filter(|&v| {
                        alive[v]
                            && (!out[v].iter().any(|&u| alive[u]) || !inc[v].iter().any(|&u| alive[u]))
                    })
                    .collect();
                if doomed.is_empty() {
                    break;
                }
                for v in doomed {
                    alive[v] = false;
                }
            }
            let nodes: Vec<usize> = (0..g.n()).filter(|&v| alive[v]).collect();
            let mut comps = weak_components(&nodes, &out, &inc, &alive);
            comps.sort();
            comps
        }
        ClosureMode::Strict => strongly_connected_components(g)
            .into_iter()
            .filter(|c| c.len() >= 2)
            .collect(),
    };
    groups
        .into_iter()
        .map(|m| ClosureSet {
            members: AgentSet::new(m),
            mode,
            first_seen: g.tick,
            last_seen: g.tick,
        })
        .collect()
}

/// Phase of each track from how often its member set met a closure detected
/// at the same tick: closed when it coincided with one in at least 90% of its
/// scans, fluid when it overlapped one (Jaccard >= 0.5) in at least 50%.
pub fn classify_phase(
    tracks: &[IdentityTrack],
    closures: &[(u64, Vec<ClosureSet>)],
) -> Vec<(u64, TrackStatus)> {
    let at = |tick: u64| -> &[ClosureSet] {
        match closures.binary_search_by_key(&tick, |(t, _)| *t) {
            Ok(i) => &closures[i].1,
            Err(_) => &[],
        }
    };
    tracks
        .iter()
        .map(|t| {
            let scans = t.history.len().max(1) as f64;
            let mut same = 0usize;
            let mut overlap = 0usize;
            for e in &t.history {
                let found = at(e.tick);
                if found.iter().any(|c| c.members == e.members) {
                    same += 1;
                }
                if found.iter().any(|c| c.members.jaccard(&e.members) >= 0.5) {
                    overlap += 1;
                }
            }
            let phase = if same as f64 >= 0.9 * scans {
                TrackStatus::Closed
            } else if overlap as f64 >= 0.5 * scans {
                TrackStatus::Fluid
            } else {
                TrackStatus::Preindividual
            };
            (t.label, phase)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster_scan::{track_identities, Cluster, TrackerConfig};
    use crate::infometrics::{Bits, CiValue};
    use crate::population::Alphabet;
    use rand::Rng;

    fn labels(c: &[ClosureSet]) -> Vec<String> {
        c.iter().map(|c| c.members.label()).collect()
    }

    #[test]
    fn three_cycle_is_closed_in_both_modes() {
        let g = InfluenceDigraph::from_edges(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap();
        assert_eq!(labels(&detect_closures(&g, ClosureMode::Literal)), vec!["0-1-2"]);
        assert_eq!(labels(&detect_closures(&g, ClosureMode::Strict)), vec!["0-1-2"]);
    }

    #[test]
    fn bridged_two_cycles() {
        let g = InfluenceDigraph::from_edges(4, &[(0, 1), (1, 0), (2, 3), (3, 2), (1, 2)]).unwrap();
        assert_eq!(labels(&detect_closures(&g, ClosureMode::Literal)), vec!["0-1-2-3"]);
        assert_eq!(labels(&detect_closures(&g, ClosureMode::Strict)), vec!["0-1", "2-3"]);
    }

    #[test]
    fn dag_has_no_closure() {
        let g = InfluenceDigraph::from_edges(5, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)]).unwrap();
        assert!(detect_closures(&g, ClosureMode::Literal).is_empty());
        assert!(detect_closures(&g, ClosureMode::Strict).is_empty());
    }

    #[test]
    fn self_loops_rejected() {
        assert_eq!(InfluenceDigraph::from_edges(2, &[(1, 1)]), Err(ClosureError::SelfLoop(1)));
    }

    fn trace_of(columns: &[Vec<u8>]) -> StateTrace {
        let n = columns.len();
        let len = columns[0].len();
        let mut t = StateTrace::new(n, Alphabet::BINARY, len).unwrap();
        for k in 0..len {
            let row: Vec<u8> = columns.iter().map(|c| c[k]).collect();
            t.record_tick(&row).unwrap();
        }
        t
    }

    #[test]
    fn copy_chain_gives_forward_edge_only() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        let len = 4097;
        let j: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        // agent 0 copies agent 1's previous state
        let mut i = vec![0u8; len];
        i[1..].copy_from_slice(&j[..len - 1]);
        let g = influence_graph(&trace_of(&[i, j]), 4096, &ClosureParams::default(), 7).unwrap();
        assert!(g.has_edge(1, 0));
        assert!(!g.has_edge(0, 1));
        assert!((g.weight(1, 0).unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn independent_agents_have_no_edges() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2);
        let cols: Vec<Vec<u8>> = (0..5).map(|_| (0..4097).map(|_| rng.random_range(0..2)).collect()).collect();
        let g = influence_graph(&trace_of(&cols), 4096, &ClosureParams::default(), 3).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn graph_contract_errors() {
        let t = trace_of(&[vec![0; 100], vec![1; 100]]);
        let zero = ClosureParams { lag: 0, ..ClosureParams::default() };
        assert_eq!(influence_graph(&t, 64, &zero, 0), Err(ClosureError::ZeroLag));
        assert_eq!(
            influence_graph(&t, 100, &ClosureParams::default(), 0),
            Err(ClosureError::TraceTooShort { available: 100, needed: 101 })
        );
    }

    fn cluster(members: &[usize]) -> Cluster {
        Cluster {
            members: AgentSet::new(members.to_vec()),
            integration: Bits::clamped(1.0),
            cross_mi: Bits::clamped(0.1),
            ci: CiValue::Finite(10.0),
            detected_at: 0,
        }
    }

    fn closure(members: &[usize], tick: u64) -> ClosureSet {
        ClosureSet { members: AgentSet::new(members.to_vec()), mode: ClosureMode::Literal, first_seen: tick, last_seen: tick }
    }

    #[test]
    fn phases_from_closure_history() {
        let cfg = TrackerConfig::default();
        let mut tracks = Vec::new();
        let mut closures = Vec::new();
        let drift = [[0, 1, 2, 9], [0, 1, 3, 9], [0, 1, 3, 4], [0, 1, 4, 5]];
        for (k, d) in drift.iter().enumerate() {
            let tick = k as u64 + 1;
            tracks = track_identities(tracks, &[cluster(&[5, 6, 7]), cluster(d), cluster(&[10, 11])], tick, &cfg);
            // frozen cycle, a drifting block containing the 2-cycle 0-1, noise
            closures.push((tick, vec![closure(&[0, 1], tick), closure(&[5, 6, 7], tick)]));
        }
        let phases = classify_phase(&tracks, &closures);
        let phase = |first: usize| {
            let label = tracks.iter().find(|t| t.history[0].members.contains(first)).unwrap().label;
            phases.iter().find(|p| p.0 == label).unwrap().1
        };
        assert_eq!(phase(5), TrackStatus::Closed);
        assert_eq!(phase(0), TrackStatus::Fluid);
        assert_eq!(phase(10), TrackStatus::Preindividual);
    }
}
