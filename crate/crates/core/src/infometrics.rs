//! Plug-in information measures over window snapshots: entropies, pairwise
//! and subset/complement mutual information, integration, the cluster index,
//! operational complexity and the combined open-ended intelligence score.
//!
//! All quantities are in bits. Differences of entropies are clamped at zero
//! so that rounding noise never yields a negative information value.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::{AgentSet, Symbol, Window, MAX_AGENTS};

/// Values whose magnitude is below this are treated as exact zeros after
/// an entropy subtraction.
pub const ROUNDING_FLOOR: f64 = 1e-12;

/// Largest population for which full subset enumeration is allowed.
pub const DEFAULT_EXACT_LIMIT: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("agent subset is empty")]
    EmptySubset,
    #[error("agent {0} is not in the window (n = {1})")]
    UnknownAgent(usize, usize),
    #[error("mutual information of agent {0} with itself")]
    SameAgent(usize),
    #[error("subset must be a proper subset of the population")]
    NotProper,
    #[error("cluster index needs at least 2 agents, got {0}")]
    SubsetTooSmall(usize),
    #[error("population of {0} agents is too small")]
    PopulationTooSmall(usize),
    #[error("exact enumeration requested for {n} agents, limit is {limit}")]
    ExactTooLarge { n: usize, limit: usize },
}

/// Information in bits; never negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Bits(f64);

impl Bits {
    pub const ZERO: Bits = Bits(0.0);

    /// Clamps rounding-level and negative values to zero.
    pub fn clamped(v: f64) -> Bits {
        if v < ROUNDING_FLOOR {
            Bits(0.0)
        } else {
            Bits(v)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

/// Cluster index. `Isolated` stands for a positive integration over a zero
/// cross-information and orders above every finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiValue {
    Finite(f64),
    Isolated,
}

impl CiValue {
    pub fn from_parts(integration: Bits, cross: Bits) -> CiValue {
        match (integration.value(), cross.value()) {
            (_, c) if c > 0.0 => CiValue::Finite(integration.value() / c),
            (i, _) if i > 0.0 => CiValue::Isolated,
            _ => CiValue::Finite(0.0),
        }
    }

    /// `f64::INFINITY` for isolated clusters.
    pub fn as_f64(self) -> f64 {
        match self {
            CiValue::Finite(v) => v,
            CiValue::Isolated => f64::INFINITY,
        }
    }

    pub fn at_least(self, threshold: f64) -> bool {
        self.as_f64() >= threshold
    }

    pub fn is_isolated(self) -> bool {
        matches!(self, CiValue::Isolated)
    }
}

impl Eq for CiValue {}

impl PartialOrd for CiValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CiValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (CiValue::Isolated, CiValue::Isolated) => Ordering::Equal,
            (CiValue::Isolated, _) => Ordering::Greater,
            (_, CiValue::Isolated) => Ordering::Less,
            (CiValue::Finite(a), CiValue::Finite(b)) => a.total_cmp(b),
        }
    }
}

impl fmt::Display for CiValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CiValue::Finite(v) => write!(f, "{v:.6}"),
            CiValue::Isolated => f.write_str("isolated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasCorrection {
    #[default]
    None,
    MillerMadow,
}

/// Maximum-likelihood distribution of the joint symbols of a subset.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    pub support: Vec<Vec<Symbol>>,
    pub probs: Vec<f64>,
}

pub fn empirical_dist(w: &Window, set: &AgentSet) -> Result<EmpiricalDist, InfoError> {
    check_set(w, set)?;
    let mut rows: Vec<Vec<Symbol>> = (0..w.len())
        .map(|t| set.members().iter().map(|&i| w.column(i)[t]).collect())
        .collect();
    rows.sort_unstable();
    let n = rows.len() as f64;
    let mut support: Vec<Vec<Symbol>> = Vec::new();
    let mut probs = Vec::new();
    for row in rows {
        match support.last() {
            Some(last) if *last == row => *probs.last_mut().unwrap() += 1.0,
            _ => {
                support.push(row);
                probs.push(1.0);
            }
        }
    }
    probs.iter_mut().for_each(|p| *p /= n);
    Ok(EmpiricalDist { support, probs })
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy(d: &EmpiricalDist) -> Bits {
    let h: f64 = d.probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.log2()).sum();
    Bits::clamped(h)
}

fn check_set(w: &Window, set: &AgentSet) -> Result<(), InfoError> {
    if set.is_empty() {
        return Err(InfoError::EmptySubset);
    }
    if let Some(&bad) = set.members().iter().find(|&&i| i >= w.n_agents()) {
        return Err(InfoError::UnknownAgent(bad, w.n_agents()));
    }
    Ok(())
}

/// Entropy from a multiset of keys, plus the number of occupied cells.
fn entropy_of_keys<K: Ord + Copy>(keys: &mut [K]) -> (f64, usize) {
    keys.sort_unstable();
    let n = keys.len();
    let mut acc = 0.0;
    let mut occupied = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && keys[j] == keys[i] {
            j += 1;
        }
        let c = (j - i) as f64;
        acc += c * c.log2();
        occupied += 1;
        i = j;
    }
    ((n as f64).log2() - acc / n as f64, occupied)
}

fn entropy_of_counts(counts: &[u32], n: usize) -> (f64, usize) {
    let mut acc = 0.0;
    let mut occupied = 0;
    for &c in counts.iter().filter(|c| **c > 0) {
        let c = c as f64;
        acc += c * c.log2();
        occupied += 1;
    }
    ((n as f64).log2() - acc / n as f64, occupied)
}

/// Plug-in (optionally Miller–Madow corrected) joint entropy of the agents in
/// `mask`.
pub(crate) fn subset_entropy(w: &Window, mask: u128, correction: BiasCorrection) -> f64 {
    let n = w.len();
    if n == 0 || mask == 0 {
        return 0.0;
    }
    let bits = w.alphabet().bits();
    let (h, occupied) = if let Some(packed) = w.packed() {
        let sym = (1u128 << bits) - 1;
        let mut bitmask = 0u128;
        for i in 0..w.n_agents() {
            if mask >> i & 1 == 1 {
                bitmask |= sym << (i as u32 * bits);
            }
        }
        let span = 128 - bitmask.leading_zeros();
        if span <= 20 && (1usize << span) <= 4 * n.max(1024) {
            let mut counts = vec![0u32; 1 << span];
            for p in packed {
                counts[(p & bitmask) as usize] += 1;
            }
            entropy_of_counts(&counts, n)
        } else {
            let mut keys: Vec<u128> = packed.iter().map(|p| p & bitmask).collect();
            entropy_of_keys(&mut keys)
        }
    } else {
        let members: Vec<usize> = (0..w.n_agents()).filter(|i| mask >> i & 1 == 1).collect();
        if members.len() as u32 * bits <= 128 {
            let mut keys: Vec<u128> = (0..n)
                .map(|t| {
                    members
                        .iter()
                        .fold(0u128, |k, &i| k << bits | w.column(i)[t] as u128)
                })
                .collect();
            entropy_of_keys(&mut keys)
        } else {
            let mut rows: Vec<Vec<Symbol>> = (0..n)
                .map(|t| members.iter().map(|&i| w.column(i)[t]).collect())
                .collect();
            rows.sort_unstable();
            let mut acc = 0.0;
            let mut occupied = 0;
            let mut i = 0;
            while i < n {
                let mut j = i + 1;
                while j < n && rows[j] == rows[i] {
                    j += 1;
                }
                let c = (j - i) as f64;
                acc += c * c.log2();
                occupied += 1;
                i = j;
            }
            ((n as f64).log2() - acc / n as f64, occupied)
        }
    };
    let h = match correction {
        BiasCorrection::None => h,
        BiasCorrection::MillerMadow => {
            h + (occupied as f64 - 1.0) / (2.0 * n as f64 * std::f64::consts::LN_2)
        }
    };
    h.max(0.0)
}

/// Operational complexity evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OcMode {
    Exact,
    /// Up to `budget` distinct uniform subsets per size; sizes with at most
    /// `budget` subsets are enumerated completely.
    Sampled { budget: usize, seed: u64 },
}

/// Entropy-caching estimator bound to one window.
#[derive(Debug)]
pub struct Estimator<'w> {
    window: &'w Window,
    correction: BiasCorrection,
    exact_limit: usize,
    cache: HashMap<u128, f64>,
}

impl<'w> Estimator<'w> {
    pub fn new(window: &'w Window) -> Self {
        Estimator {
            window,
            correction: BiasCorrection::None,
            exact_limit: DEFAULT_EXACT_LIMIT,
            cache: HashMap::new(),
        }
    }

    pub fn with_correction(mut self, correction: BiasCorrection) -> Self {
        self.correction = correction;
        self
    }

    pub fn with_exact_limit(mut self, limit: usize) -> Self {
        self.exact_limit = limit;
        self
    }

    pub fn window(&self) -> &'w Window {
        self.window
    }

    pub fn n_agents(&self) -> usize {
        self.window.n_agents()
    }

    pub fn exact_limit(&self) -> usize {
        self.exact_limit
    }

    fn full_mask(&self) -> u128 {
        let n = self.n_agents();
        if n >= MAX_AGENTS {
            u128::MAX
        } else {
            (1u128 << n) - 1
        }
    }

    /// Joint entropy of a mask, cached.
    pub fn entropy_mask(&mut self, mask: u128) -> f64 {
        if let Some(h) = self.cache.get(&mask) {
            return *h;
        }
        let h = subset_entropy(self.window, mask, self.correction);
        self.cache.insert(mask, h);
        h
    }

    /// Computes the entropies of all listed masks in parallel.
    pub fn prefill(&mut self, masks: &[u128]) {
        let missing: Vec<u128> = masks.iter().copied().filter(|m| !self.cache.contains_key(m)).collect();
        let window = self.window;
        let correction = self.correction;
        let computed: Vec<(u128, f64)> = missing
            .par_iter()
            .map(|&m| (m, subset_entropy(window, m, correction)))
            .collect();
        self.cache.extend(computed);
    }

    pub fn entropy(&mut self, set: &AgentSet) -> Result<Bits, InfoError> {
        check_set(self.window, set)?;
        Ok(Bits::clamped(self.entropy_mask(set.mask())))
    }

    pub fn mutual_info_pair(&mut self, i: usize, j: usize) -> Result<Bits, InfoError> {
        let n = self.n_agents();
        for a in [i, j] {
            if a >= n {
                return Err(InfoError::UnknownAgent(a, n));
            }
        }
        if i == j {
            return Err(InfoError::SameAgent(i));
        }
        let (a, b) = (i.min(j), i.max(j));
        let hi = self.entropy_mask(1 << a);
        let hj = self.entropy_mask(1 << b);
        let hij = self.entropy_mask(1 << a | 1 << b);
        let mi = Bits::clamped(hi + hj - hij);
        Ok(Bits(mi.value().min(hi.min(hj))))
    }

    /// Symmetric matrix of pairwise MI.
    pub fn pairwise_matrix(&mut self) -> Vec<Vec<f64>> {
        let n = self.n_agents();
        let mut masks: Vec<u128> = (0..n).map(|i| 1u128 << i).collect();
        for i in 0..n {
            for j in i + 1..n {
                masks.push(1 << i | 1 << j);
            }
        }
        self.prefill(&masks);
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = self.mutual_info_pair(i, j).map(Bits::value).unwrap_or(0.0);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }

    pub(crate) fn integration_mask(&mut self, mask: u128) -> Bits {
        let mut sum = 0.0;
        for i in 0..self.n_agents() {
            if mask >> i & 1 == 1 {
                sum += self.entropy_mask(1 << i);
            }
        }
        Bits::clamped(sum - self.entropy_mask(mask))
    }

    pub(crate) fn cross_mi_mask(&mut self, mask: u128) -> Bits {
        let full = self.full_mask();
        let hx = self.entropy_mask(mask);
        let hc = self.entropy_mask(full & !mask);
        let hp = self.entropy_mask(full);
        Bits::clamped(hx + hc - hp)
    }

    pub fn integration(&mut self, set: &AgentSet) -> Result<Bits, InfoError> {
        check_set(self.window, set)?;
        Ok(self.integration_mask(set.mask()))
    }

    fn check_proper(&self, set: &AgentSet) -> Result<(), InfoError> {
        check_set(self.window, set)?;
        if set.len() >= self.n_agents() {
            return Err(InfoError::NotProper);
        }
        Ok(())
    }

    pub fn cross_mi(&mut self, set: &AgentSet) -> Result<Bits, InfoError> {
        self.check_proper(set)?;
        Ok(self.cross_mi_mask(set.mask()))
    }

    pub fn cluster_index(&mut self, set: &AgentSet) -> Result<CiValue, InfoError> {
        self.check_proper(set)?;
        if set.len() < 2 {
            return Err(InfoError::SubsetTooSmall(set.len()));
        }
        let (_, _, ci) = self.cluster_parts(set.mask());
        Ok(ci)
    }

    /// `(I, cross-MI, CI)` for a mask already known to be valid.
    pub(crate) fn cluster_parts(&mut self, mask: u128) -> (Bits, Bits, CiValue) {
        let i = self.integration_mask(mask);
        let c = self.cross_mi_mask(mask);
        (i, c, CiValue::from_parts(i, c))
    }

    pub fn operational_complexity(&mut self, mode: OcMode) -> Result<Bits, InfoError> {
        let m = self.n_agents();
        if m < 2 {
            return Err(InfoError::PopulationTooSmall(m));
        }
        if mode == OcMode::Exact && m > self.exact_limit {
            return Err(InfoError::ExactTooLarge { n: m, limit: self.exact_limit });
        }
        let mut rng = match mode {
            OcMode::Exact => None,
            OcMode::Sampled { seed, .. } => Some(Xoshiro256StarStar::seed_from_u64(seed)),
        };
        let mut total = 0.0;
        for k in 1..=m / 2 {
            let masks = match (mode, rng.as_mut()) {
                (OcMode::Sampled { budget, .. }, Some(rng)) if binomial(m, k) > budget as f64 => {
                    sample_subsets(m, k, budget, rng)
                }
                _ => subsets_of_size(m, k),
            };
            let mut prefill: Vec<u128> = Vec::with_capacity(masks.len() * 2 + 1);
            prefill.push(self.full_mask());
            for &x in &masks {
                prefill.push(x);
                prefill.push(self.full_mask() & !x);
            }
            self.prefill(&prefill);
            let sum: f64 = masks.iter().map(|&x| self.cross_mi_mask(x).value()).sum();
            total += sum / masks.len() as f64;
        }
        Ok(Bits::clamped(total))
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `k`-subsets of `{0..n}` in increasing mask order.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<u128> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let limit = if n >= 128 { u128::MAX } else { 1u128 << n };
    let mut m: u128 = (1u128 << k) - 1;
    while m < limit {
        out.push(m);
        let c = m & m.wrapping_neg();
        let r = m + c;
        if r == 0 {
            break;
        }
        m = (((r ^ m) >> 2) / c) | r;
    }
    out
}

fn sample_subsets(n: usize, k: usize, budget: usize, rng: &mut Xoshiro256StarStar) -> Vec<u128> {
    let mut seen = HashSet::with_capacity(budget);
    let mut out = Vec::with_capacity(budget);
    let mut idx: Vec<usize> = (0..n).collect();
    while out.len() < budget {
        let (chosen, _) = idx.partial_shuffle(rng, k);
        let mask = chosen.iter().fold(0u128, |m, &i| m | 1u128 << i);
        if seen.insert(mask) {
            out.push(mask);
        }
    }
    out
}

pub fn mutual_info_pair(w: &Window, i: usize, j: usize) -> Result<Bits, InfoError> {
    Estimator::new(w).mutual_info_pair(i, j)
}

pub fn integration(w: &Window, set: &AgentSet) -> Result<Bits, InfoError> {
    Estimator::new(w).integration(set)
}

pub fn cross_mi(w: &Window, set: &AgentSet) -> Result<Bits, InfoError> {
    Estimator::new(w).cross_mi(set)
}

pub fn cluster_index(w: &Window, set: &AgentSet) -> Result<CiValue, InfoError> {
    Estimator::new(w).cluster_index(set)
}

pub fn operational_complexity(w: &Window, mode: OcMode) -> Result<Bits, InfoError> {
    Estimator::new(w).operational_complexity(mode)
}

/// Independently time-shuffled copies of a window: every agent's series is
/// permuted on its own, destroying all dependencies while keeping marginals.
pub fn shuffled_surrogates(w: &Window, count: usize, seed: u64) -> Vec<Window> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let columns = w
                .columns()
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.shuffle(&mut rng);
                    c
                })
                .collect();
            Window::from_columns(w.start_tick(), w.alphabet(), columns)
        })
        .collect()
}

/// Cluster index divided by the mean cluster index of the same subset on
/// shuffled surrogates. Falls back to the raw value when the surrogate mean
/// is zero.
pub fn surrogate_normalized_ci(
    raw: CiValue,
    surrogates: &mut [Estimator<'_>],
    mask: u128,
) -> CiValue {
    if surrogates.is_empty() {
        return raw;
    }
    let mean: f64 = surrogates
        .iter_mut()
        .map(|e| match e.cluster_parts(mask).2 {
            CiValue::Finite(v) => v,
            CiValue::Isolated => 0.0,
        })
        .sum::<f64>()
        / surrogates.len() as f64;
    match raw {
        CiValue::Finite(v) if mean > 0.0 => CiValue::Finite(v / mean),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    #[default]
    GeometricMean,
    Min,
    Product,
}

impl Combiner {
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            Combiner::GeometricMean => (a * b).max(0.0).sqrt(),
            Combiner::Min => a.min(b),
            Combiner::Product => a * b,
        }
    }
}

/// Running min/max of one component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningRange {
    min: f64,
    max: f64,
    seen: usize,
}

impl RunningRange {
    pub fn observe(&mut self, x: f64) {
        if self.seen == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.seen += 1;
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    /// Min-max normalization into `[0, 1]`; a degenerate range maps to 0.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.seen == 0 || self.max <= self.min {
            0.0
        } else {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

/// Configuration and running state of the combined score.
#[derive(Debug, Clone, PartialEq)]
pub struct IntConfig {
    pub combiner: Combiner,
    pub integration: RunningRange,
    pub complexity: RunningRange,
    /// Per-size subset budget used when the population exceeds the exact limit.
    pub oc_budget: usize,
    pub oc_seed: u64,
}

impl Default for IntConfig {
    fn default() -> Self {
        IntConfig {
            combiner: Combiner::GeometricMean,
            integration: RunningRange::default(),
            complexity: RunningRange::default(),
            oc_budget: 500,
            oc_seed: 0,
        }
    }
}

impl IntConfig {
    pub fn with_combiner(combiner: Combiner) -> Self {
        IntConfig { combiner, ..IntConfig::default() }
    }

    pub fn observe(&mut self, integration: f64, complexity: f64) {
        self.integration.observe(integration);
        self.complexity.observe(complexity);
    }

    /// Combined score of one `(I, OC)` pair under the current normalizers.
    pub fn score(&self, integration: f64, complexity: f64) -> f64 {
        self.combiner.combine(
            self.integration.normalize(integration),
            self.complexity.normalize(complexity),
        )
    }
}

/// `I(P)` and `OC(P)` of a whole window, exact when the population allows it.
pub fn integration_and_complexity(
    est: &mut Estimator<'_>,
    oc_budget: usize,
    oc_seed: u64,
) -> Result<(Bits, Bits), InfoError> {
    let n = est.n_agents();
    let ip = est.integration(&AgentSet::range(n))?;
    let mode = if n <= est.exact_limit() {
        OcMode::Exact
    } else {
        OcMode::Sampled { budget: oc_budget, seed: oc_seed }
    };
    let oc = est.operational_complexity(mode)?;
    Ok((ip, oc))
}

/// Observes this window's `I(P)` and `OC(P)` in the running normalizers and
/// returns their combined score in `[0, 1]`.
pub fn openended_intelligence(w: &Window, cfg: &mut IntConfig) -> Result<f64, InfoError> {
    let mut est = Estimator::new(w);
    let (ip, oc) = integration_and_complexity(&mut est, cfg.oc_budget, cfg.oc_seed)?;
    cfg.observe(ip.value(), oc.value());
    Ok(cfg.score(ip.value(), oc.value()))
}

/// Draws `len` i.i.d. joint states from an explicit distribution over
/// `support`; used to build windows with known closed-form measures.
pub fn sample_window<R: Rng>(
    support: &[Vec<Symbol>],
    probs: &[f64],
    alphabet: crate::population::Alphabet,
    len: usize,
    rng: &mut R,
) -> Window {
    let n = support.first().map_or(0, |s| s.len());
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut columns = vec![Vec::with_capacity(len); n];
    for _ in 0..len {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cumulative.partition_point(|c| *c <= u).min(support.len() - 1);
        for (col, s) in columns.iter_mut().zip(&support[k]) {
            col.push(*s);
        }
    }
    Window::from_columns(1, alphabet, columns)
}
