//! Threshold scans of the subset lattice for integrated clusters, and
//! tracking of cluster identities across successive scans.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infometrics::{
    subsets_of_size, surrogate_normalized_ci, Bits, CiValue, Estimator, InfoError,
};
use crate::population::{AgentSet, Window};

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("exhaustive scan of {n} agents exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("CI threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("greedy budget {budget} is below N^2 = {min}")]
    BudgetTooSmall { budget: usize, min: usize },
    #[error("population of {0} agents has no proper subsets of size 2")]
    TooFewAgents(usize),
    #[error(transparent)]
    Info(#[from] InfoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: AgentSet,
    pub integration: Bits,
    pub cross_mi: Bits,
    /// The value compared against the threshold; surrogate-normalized when
    /// that option is on, otherwise `integration / cross_mi`.
    pub ci: CiValue,
    pub detected_at: u64,
}

impl Cluster {
    fn new(members: AgentSet, parts: (Bits, Bits, CiValue), detected_at: u64) -> Self {
        Cluster { members, integration: parts.0, cross_mi: parts.1, ci: parts.2, detected_at }
    }
}

/// Result of one scan: the thresholded maximal clusters and the highest-CI
/// subset evaluated, whether or not it passed the threshold. Greedy scans
/// also keep every distinct end point of seed growth, in seed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanReport {
    pub clusters: Vec<Cluster>,
    pub best: Option<Cluster>,
    pub grown: Vec<Cluster>,
}

/// Descending CI, then lexicographically smallest member list.
fn rank(a: &Cluster, b: &Cluster) -> Ordering {
    b.ci.cmp(&a.ci).then_with(|| a.members.members().cmp(b.members.members()))
}

/// Drops every candidate beaten by a nested candidate: a comparable set with
/// strictly higher CI, or a strict superset with equal CI.
pub fn maximal_clusters(mut candidates: Vec<Cluster>) -> Vec<Cluster> {
    let masks: Vec<u128> = candidates.iter().map(|c| c.members.mask()).collect();
    let keep: Vec<bool> = (0..candidates.len())
        .into_par_iter()
        .map(|i| {
            let (mx, cx) = (masks[i], candidates[i].ci);
            !masks.iter().zip(&candidates).any(|(&my, other)| {
                if my == mx {
                    return false;
                }
                let sub = my & mx == my;
                let sup = my & mx == mx;
                (sub || sup) && (other.ci > cx || (other.ci == cx && sup))
            })
        })
        .collect();
    let mut i = 0;
    candidates.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    candidates.sort_by(rank);
    candidates
}

fn check_theta(theta: f64) -> Result<(), ScanError> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(ScanError::BadThreshold(theta))
    }
}

fn evaluate(
    est: &mut Estimator<'_>,
    surrogates: &mut [Estimator<'_>],
    mask: u128,
) -> (Bits, Bits, CiValue) {
    let (i, c, ci) = est.cluster_parts(mask);
    (i, c, surrogate_normalized_ci(ci, surrogates, mask))
}

fn full_mask(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// Evaluates every subset with `2 <= |X| <= N-1`.
pub fn scan_exhaustive_with(
    est: &mut Estimator<'_>,
    surrogates: &mut [Estimator<'_>],
    theta: f64,
) -> Result<ScanReport, ScanError> {
    check_theta(theta)?;
    let n = est.n_agents();
    if n > est.exact_limit() {
        return Err(ScanError::TooLarge { n, limit: est.exact_limit() });
    }
    if n < 3 {
        return Err(ScanError::TooFewAgents(n));
    }
    let all: Vec<u128> = (1..=full_mask(n)).collect();
    est.prefill(&all);
    for s in surrogates.iter_mut() {
        s.prefill(&all);
    }
    let tick = est.window().end_tick();
    let mut best: Option<Cluster> = None;
    let mut candidates = Vec::new();
    for k in 2..n {
        for mask in subsets_of_size(n, k) {
            let c = Cluster::new(AgentSet::from_mask(mask), evaluate(est, surrogates, mask), tick);
            if best.as_ref().is_none_or(|b| rank(&c, b) == Ordering::Less) {
                best = Some(c.clone());
            }
            if c.ci.at_least(theta) {
                candidates.push(c);
            }
        }
    }
    Ok(ScanReport { clusters: maximal_clusters(candidates), best, grown: Vec::new() })
}

pub fn scan_exhaustive(w: &Window, theta: f64) -> Result<Vec<Cluster>, ScanError> {
    Ok(scan_exhaustive_with(&mut Estimator::new(w), &mut [], theta)?.clusters)
}

/// Grows seeds taken from the highest pairwise-MI pairs by adding, one at a
/// time, the agent that maximizes CI, stopping when no addition improves it.
/// `budget` bounds the number of subset evaluations.
pub fn scan_greedy_with(
    est: &mut Estimator<'_>,
    surrogates: &mut [Estimator<'_>],
    theta: f64,
    budget: usize,
) -> Result<ScanReport, ScanError> {
    check_theta(theta)?;
    let n = est.n_agents();
    if n < 3 {
        return Err(ScanError::TooFewAgents(n));
    }
    if budget < n * n {
        return Err(ScanError::BudgetTooSmall { budget, min: n * n });
    }
    let full = full_mask(n);
    let mi = est.pairwise_matrix();
    let mut pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    // stable sort keeps the lowest indices first among equal MI
    pairs.sort_by(|a, b| mi[b.0][b.1].total_cmp(&mi[a.0][a.1]));

    let tick = est.window().end_tick();
    let mut spent = 0usize;
    let mut grown: Vec<Cluster> = Vec::new();
    let mut best: Option<Cluster> = None;
    for (a, b) in pairs {
        if spent >= budget {
            break;
        }
        let seed = 1u128 << a | 1u128 << b;
        if grown.iter().any(|c| c.members.mask() & seed == seed) {
            continue;
        }
        let mut mask = seed;
        let mut parts = evaluate(est, surrogates, mask);
        spent += 1;
        while (mask.count_ones() as usize) < n - 1 && spent < budget {
            let options: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
            let room = (budget - spent).min(options.len());
            let trial: Vec<u128> = options[..room].iter().map(|&i| mask | 1u128 << i).collect();
            let mut prefill: Vec<u128> = trial.iter().flat_map(|&m| [m, full & !m]).collect();
            prefill.push(full);
            est.prefill(&prefill);
            for s in surrogates.iter_mut() {
                s.prefill(&prefill);
            }
            spent += room;
            let mut step: Option<(u128, (Bits, Bits, CiValue))> = None;
            for m in trial {
                let p = evaluate(est, surrogates, m);
                if step.as_ref().is_none_or(|(_, q)| p.2 > q.2) {
                    step = Some((m, p));
                }
            }
            match step {
                Some((m, p)) if p.2 > parts.2 => {
                    mask = m;
                    parts = p;
                }
                _ => break,
            }
        }
        let c = Cluster::new(AgentSet::from_mask(mask), parts, tick);
        if grown.iter().any(|g| g.members == c.members) {
            continue;
        }
        if best.as_ref().is_none_or(|b| rank(&c, b) == Ordering::Less) {
            best = Some(c.clone());
        }
        grown.push(c);
    }
    let candidates = grown.iter().filter(|c| c.ci.at_least(theta)).cloned().collect();
    Ok(ScanReport { clusters: maximal_clusters(candidates), best, grown })
}

pub fn scan_greedy(w: &Window, theta: f64, budget: usize) -> Result<Vec<Cluster>, ScanError> {
    Ok(scan_greedy_with(&mut Estimator::new(w), &mut [], theta, budget)?.clusters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Preindividual,
    Fluid,
    Closed,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Preindividual => "preindividual",
            TrackStatus::Fluid => "fluid",
            TrackStatus::Closed => "closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub tick: u64,
    pub members: AgentSet,
    pub ci: CiValue,
    pub integration: Bits,
    pub cross_mi: Bits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTrack {
    pub label: u64,
    pub history: Vec<TrackEntry>,
    pub status: TrackStatus,
    /// Retired tracks are kept so their labels are never handed out again.
    pub retired: bool,
    /// Consecutive scans without a match.
    pub misses: usize,
    /// Consecutive matched scans with an unchanged member set.
    pub streak: usize,
    /// Consecutive matched scans, drift allowed.
    pub run: usize,
    pub drifted: bool,
}

impl IdentityTrack {
    pub fn last(&self) -> &TrackEntry {
        self.history.last().expect("tracks are created with one entry")
    }

    pub fn name(&self) -> String {
        format!("C{}", self.label)
    }

    /// Whether the track was matched by the most recent scan.
    pub fn is_current(&self) -> bool {
        !self.retired && self.misses == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub jaccard: f64,
    pub patience: usize,
    pub stable: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { jaccard: 0.5, patience: 5, stable: 3 }
    }
}

fn entry(c: &Cluster, tick: u64) -> TrackEntry {
    TrackEntry {
        tick,
        members: c.members.clone(),
        ci: c.ci,
        integration: c.integration,
        cross_mi: c.cross_mi,
    }
}

/// Greedy maximum-Jaccard matching of live tracks to the clusters of a new
/// scan.
pub fn track_identities(
    prev: Vec<IdentityTrack>,
    now: &[Cluster],
    tick: u64,
    cfg: &TrackerConfig,
) -> Vec<IdentityTrack> {
    let mut tracks = prev;
    let mut next_label = tracks.iter().map(|t| t.label + 1).max().unwrap_or(0);
    let mut pairs: Vec<(f64, u64, usize, usize)> = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        if t.retired || t.last().tick >= tick {
            continue;
        }
        for (ci, c) in now.iter().enumerate() {
            let j = t.last().members.jaccard(&c.members);
            if j >= cfg.jaccard {
                pairs.push((j, t.label, ti, ci));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));
    let mut track_used = vec![false; tracks.len()];
    let mut cluster_used = vec![false; now.len()];
    for (_, _, ti, ci) in pairs {
        if track_used[ti] || cluster_used[ci] {
            continue;
        }
        track_used[ti] = true;
        cluster_used[ci] = true;
        let t = &mut tracks[ti];
        let same = t.last().members == now[ci].members;
        t.streak = if same && t.misses == 0 { t.streak + 1 } else { 1 };
        t.run = if t.misses == 0 { t.run + 1 } else { 1 };
        t.drifted |= !same;
        t.misses = 0;
        t.history.push(entry(&now[ci], tick));
    }
    for (ti, t) in tracks.iter_mut().enumerate() {
        if !track_used[ti] && !t.retired {
            t.misses += 1;
            if t.misses > cfg.patience {
                t.retired = true;
            }
        }
    }
    for (ci, c) in now.iter().enumerate() {
        if !cluster_used[ci] {
            tracks.push(IdentityTrack {
                label: next_label,
                history: vec![entry(c, tick)],
                status: TrackStatus::Preindividual,
                retired: false,
                misses: 0,
                streak: 1,
                run: 1,
                drifted: false,
            });
            next_label += 1;
        }
    }
    for t in tracks.iter_mut().filter(|t| !t.retired) {
        t.status = if t.streak >= cfg.stable {
            TrackStatus::Closed
        } else if t.drifted {
            TrackStatus::Fluid
        } else {
            TrackStatus::Preindividual
        };
    }
    tracks
}
