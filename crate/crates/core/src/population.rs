//! Domain types shared by every module: agents, alphabets, the interaction
//! graph, and the ring-buffered state trace with its window snapshots.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

/// Largest population a single stratum may hold. Subsets are carried as
/// `u128` bit masks internally.
pub const MAX_AGENTS: usize = 128;

/// Largest supported alphabet.
pub const MAX_ALPHABET: usize = 16;

/// Smallest window the estimators accept.
pub const MIN_WINDOW: usize = 64;

/// Default estimation horizon.
pub const DEFAULT_WINDOW: usize = 4096;

pub type Symbol = u8;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("joint state has {got} symbols, population has {expected} agents")]
    Arity { expected: usize, got: usize },
    #[error("symbol {symbol} of agent {agent} is outside alphabet of size {alphabet}")]
    Symbol { agent: usize, symbol: Symbol, alphabet: usize },
    #[error("trace holds {available} ticks, window of {requested} requested")]
    TooShort { available: usize, requested: usize },
    #[error("window length {0} is below the minimum of {MIN_WINDOW}")]
    WindowTooSmall(usize),
    #[error("tick {got} does not follow tick {last}")]
    NonIncreasingTick { last: u64, got: u64 },
    #[error("trace capacity must be positive")]
    ZeroCapacity,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trace file i/o: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum PopulationError {
    #[error("population needs at least 2 agents, got {0}")]
    TooFew(usize),
    #[error("population of {0} agents exceeds the supported maximum of {MAX_AGENTS}")]
    TooMany(usize),
    #[error("alphabet size {0} is outside 2..={MAX_ALPHABET}")]
    Alphabet(usize),
    #[error("graph is {graph}x{graph}, population has {agents} agents")]
    Dimension { graph: usize, agents: usize },
    #[error("weight w[{row}][{col}] = {value} is negative or not finite")]
    BadWeight { row: usize, col: usize, value: f64 },
    #[error("diagonal weight w[{0}][{0}] must be zero")]
    SelfLoop(usize),
    #[error("super-agent member list is empty")]
    EmptyMembers,
    #[error("super-agent member {member} is not in the stratum below (size {below})")]
    ForeignMember { member: usize, below: usize },
}

/// Index of an agent. Promotion appends ids; existing ids are never renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Finite symbol alphabet `{0, .., size-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet(u8);

impl Alphabet {
    pub const BINARY: Alphabet = Alphabet(2);

    pub fn new(size: usize) -> Result<Self, PopulationError> {
        if (2..=MAX_ALPHABET).contains(&size) {
            Ok(Alphabet(size as u8))
        } else {
            Err(PopulationError::Alphabet(size))
        }
    }

    pub fn size(self) -> usize {
        self.0 as usize
    }

    pub fn contains(self, s: Symbol) -> bool {
        (s as usize) < self.size()
    }

    /// Bits needed to pack one symbol.
    pub fn bits(self) -> u32 {
        usize::BITS - (self.size() - 1).leading_zeros()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::BINARY
    }
}

/// A set of agents within one population, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AgentSet(Vec<usize>);

impl AgentSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        AgentSet(members)
    }

    pub fn from_mask(mask: u128) -> Self {
        AgentSet((0..MAX_AGENTS).filter(|i| mask >> i & 1 == 1).collect())
    }

    pub fn range(n: usize) -> Self {
        AgentSet((0..n).collect())
    }

    pub fn mask(&self) -> u128 {
        self.0.iter().fold(0u128, |m, &i| m | 1u128 << i)
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.0.binary_search(&agent).is_ok()
    }

    pub fn is_subset(&self, other: &AgentSet) -> bool {
        self.0.iter().all(|a| other.contains(*a))
    }

    pub fn jaccard(&self, other: &AgentSet) -> f64 {
        let inter = self.0.iter().filter(|a| other.contains(**a)).count();
        let union = self.len() + other.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn with(&self, agent: usize) -> AgentSet {
        let mut v = self.0.clone();
        v.push(agent);
        AgentSet::new(v)
    }

    /// Hyphen-joined sorted ids, e.g. `0-3-4`.
    pub fn label(&self) -> String {
        self.0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromIterator<usize> for AgentSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        AgentSet::new(iter.into_iter().collect())
    }
}

/// Per-agent metadata. Super-agents remember the cluster they were promoted from.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMeta {
    pub id: AgentId,
    pub members: Option<Vec<AgentId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    alphabet: Alphabet,
    stratum: usize,
    agents: Vec<AgentMeta>,
}

impl Population {
    /// A base-stratum population with ids `0..n`.
    pub fn new(n_agents: usize, alphabet: Alphabet) -> Result<Self, PopulationError> {
        check_size(n_agents)?;
        Ok(Population {
            alphabet,
            stratum: 0,
            agents: (0..n_agents)
                .map(|i| AgentMeta { id: AgentId(i), members: None })
                .collect(),
        })
    }

    /// A stratum built from super-agents; each member list must index into
    /// the stratum below, which has `below` agents.
    pub fn of_super_agents(
        stratum: usize,
        alphabet: Alphabet,
        agents: Vec<AgentMeta>,
        below: usize,
    ) -> Result<Self, PopulationError> {
        check_size(agents.len())?;
        for a in &agents {
            let members = a.members.as_ref().ok_or(PopulationError::EmptyMembers)?;
            if members.is_empty() {
                return Err(PopulationError::EmptyMembers);
            }
            if let Some(m) = members.iter().find(|m| m.0 >= below) {
                return Err(PopulationError::ForeignMember { member: m.0, below });
            }
        }
        Ok(Population { alphabet, stratum, agents })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn stratum(&self) -> usize {
        self.stratum
    }

    pub fn agents(&self) -> &[AgentMeta] {
        &self.agents
    }
}

fn check_size(n: usize) -> Result<(), PopulationError> {
    if n < 2 {
        Err(PopulationError::TooFew(n))
    } else if n > MAX_AGENTS {
        Err(PopulationError::TooMany(n))
    } else {
        Ok(())
    }
}

/// Pairwise interaction propensities. `weight(i, j)` is the influence of
/// agent `i` on agent `j`; the column into `j` is what `j` listens to.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    n: usize,
    weights: Vec<f64>,
}

impl InteractionGraph {
    pub fn zeros(n: usize) -> Self {
        InteractionGraph { n, weights: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, PopulationError> {
        let n = rows.len();
        let mut g = InteractionGraph::zeros(n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(PopulationError::Dimension { graph: n, agents: row.len() });
            }
            for (j, w) in row.into_iter().enumerate() {
                if i == j && w != 0.0 {
                    return Err(PopulationError::SelfLoop(i));
                }
                g.set(i, j, w)?;
            }
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[from * self.n + to]
    }

    pub fn set(&mut self, from: usize, to: usize, w: f64) -> Result<(), PopulationError> {
        if !w.is_finite() || w < 0.0 {
            return Err(PopulationError::BadWeight { row: from, col: to, value: w });
        }
        if from == to {
            if w != 0.0 {
                return Err(PopulationError::SelfLoop(from));
            }
            return Ok(());
        }
        self.weights[from * self.n + to] = w;
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks(self.n.max(1))
    }

    /// Number of strictly positive off-diagonal weights.
    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    pub fn check_against(&self, pop: &Population) -> Result<(), PopulationError> {
        if self.n != pop.n_agents() {
            return Err(PopulationError::Dimension { graph: self.n, agents: pop.n_agents() });
        }
        Ok(())
    }

    /// Revalidates every entry: nonnegative, finite, zero diagonal.
    pub fn validate(&self) -> Result<(), PopulationError> {
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.weight(i, j);
                if !w.is_finite() || w < 0.0 {
                    return Err(PopulationError::BadWeight { row: i, col: j, value: w });
                }
                if i == j && w != 0.0 {
                    return Err(PopulationError::SelfLoop(i));
                }
            }
        }
        Ok(())
    }
}

/// Ring buffer of joint states. Ticks are numbered from 1 and strictly
/// increase; once `capacity` ticks are held the oldest is evicted.
#[derive(Debug, Clone)]
pub struct StateTrace {
    n_agents: usize,
    alphabet: Alphabet,
    capacity: usize,
    ticks: VecDeque<u64>,
    rows: VecDeque<Vec<Symbol>>,
}

impl StateTrace {
    pub fn new(n_agents: usize, alphabet: Alphabet, capacity: usize) -> Result<Self, TraceError> {
        if capacity == 0 {
            return Err(TraceError::ZeroCapacity);
        }
        Ok(StateTrace {
            n_agents,
            alphabet,
            capacity,
            ticks: VecDeque::with_capacity(capacity.min(1 << 16)),
            rows: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last_tick(&self) -> Option<u64> {
        self.ticks.back().copied()
    }

    /// Appends a joint state at the next tick number.
    pub fn record_tick(&mut self, joint: &[Symbol]) -> Result<u64, TraceError> {
        let tick = self.last_tick().map_or(1, |t| t + 1);
        self.record_at(tick, joint)?;
        Ok(tick)
    }

    pub fn record_at(&mut self, tick: u64, joint: &[Symbol]) -> Result<(), TraceError> {
        if joint.len() != self.n_agents {
            return Err(TraceError::Arity { expected: self.n_agents, got: joint.len() });
        }
        if let Some((agent, &symbol)) =
            joint.iter().enumerate().find(|(_, s)| !self.alphabet.contains(**s))
        {
            return Err(TraceError::Symbol { agent, symbol, alphabet: self.alphabet.size() });
        }
        if let Some(last) = self.last_tick() {
            if tick <= last {
                return Err(TraceError::NonIncreasingTick { last, got: tick });
            }
        }
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
            self.ticks.pop_front();
        }
        self.rows.push_back(joint.to_vec());
        self.ticks.push_back(tick);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[Symbol])> {
        self.ticks.iter().copied().zip(self.rows.iter().map(|r| r.as_slice()))
    }

    /// Snapshot of the most recent `length` ticks.
    pub fn take_window(&self, length: usize) -> Result<Window, TraceError> {
        if length < MIN_WINDOW {
            return Err(TraceError::WindowTooSmall(length));
        }
        self.take_span(length)
    }

    /// Like [`take_window`](Self::take_window) without the minimum length check.
    pub fn take_span(&self, length: usize) -> Result<Window, TraceError> {
        if self.len() < length {
            return Err(TraceError::TooShort { available: self.len(), requested: length });
        }
        let skip = self.len() - length;
        let rows: Vec<&[Symbol]> = self.rows.iter().skip(skip).map(|r| r.as_slice()).collect();
        Ok(Window::from_rows(self.ticks[skip], self.n_agents, self.alphabet, &rows))
    }

    /// Writes the CSV trace format: header `tick,a0,..`, LF line endings.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut writer = TraceWriter::new(out, self.n_agents).map_err(io_err)?;
        for (tick, row) in self.iter() {
            writer.write_tick(tick, row).map_err(io_err)?;
        }
        writer.finish().map_err(io_err)
    }

    /// Reads a full CSV trace into a trace whose capacity equals its length
    /// (or `capacity`, if given).
    pub fn read_csv<R: BufRead>(
        input: R,
        alphabet: Alphabet,
        capacity: Option<usize>,
    ) -> Result<StateTrace, TraceError> {
        let mut reader = TraceReader::new(input)?;
        let mut rows = Vec::new();
        while let Some(row) = reader.next_tick()? {
            rows.push(row);
        }
        let cap = capacity.unwrap_or(rows.len()).max(1);
        let mut trace = StateTrace::new(reader.n_agents(), alphabet, cap)?;
        for (line, (tick, joint)) in rows.into_iter().enumerate() {
            trace.record_at(tick, &joint).map_err(|e| TraceError::Malformed {
                line: line + 2,
                reason: e.to_string(),
            })?;
        }
        Ok(trace)
    }
}

fn io_err(e: std::io::Error) -> TraceError {
    TraceError::Io(e.to_string())
}

/// Streaming CSV trace writer.
pub struct TraceWriter<W: Write> {
    out: W,
    line: String,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, n_agents: usize) -> std::io::Result<Self> {
        let mut header = String::from("tick");
        for i in 0..n_agents {
            header.push_str(&format!(",a{i}"));
        }
        header.push('\n');
        out.write_all(header.as_bytes())?;
        Ok(TraceWriter { out, line: String::new() })
    }

    pub fn write_tick(&mut self, tick: u64, joint: &[Symbol]) -> std::io::Result<()> {
        use std::fmt::Write as _;
        self.line.clear();
        let _ = write!(self.line, "{tick}");
        for s in joint {
            let _ = write!(self.line, ",{s}");
        }
        self.line.push('\n');
        self.out.write_all(self.line.as_bytes())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Streaming CSV trace reader. Errors carry 1-based line numbers.
pub struct TraceReader<R: BufRead> {
    input: R,
    n_agents: usize,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut input: R) -> Result<Self, TraceError> {
        let mut header = String::new();
        input.read_line(&mut header).map_err(io_err)?;
        let header = header.trim_end_matches(['\n', '\r']);
        let mut cols = header.split(',');
        if cols.next() != Some("tick") {
            return Err(TraceError::Malformed { line: 1, reason: "header must start with `tick`".into() });
        }
        let mut n = 0;
        for (i, c) in cols.enumerate() {
            if c != format!("a{i}") {
                return Err(TraceError::Malformed {
                    line: 1,
                    reason: format!("expected column `a{i}`, found `{c}`"),
                });
            }
            n += 1;
        }
        if n == 0 {
            return Err(TraceError::Malformed { line: 1, reason: "no agent columns".into() });
        }
        Ok(TraceReader { input, n_agents: n, line_no: 1, buf: String::new() })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn next_tick(&mut self) -> Result<Option<(u64, Vec<Symbol>)>, TraceError> {
        loop {
            self.buf.clear();
            let read = self.input.read_line(&mut self.buf).map_err(io_err)?;
            if read == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: String| TraceError::Malformed { line: self.line_no, reason };
            let mut fields = line.split(',');
            let tick: u64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| malformed("unparseable tick".into()))?;
            let joint = fields
                .map(|f| f.parse::<Symbol>().map_err(|_| malformed(format!("bad symbol `{f}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if joint.len() != self.n_agents {
                return Err(malformed(format!(
                    "expected {} symbols, found {}",
                    self.n_agents,
                    joint.len()
                )));
            }
            return Ok(Some((tick, joint)));
        }
    }
}

/// Immutable snapshot of consecutive ticks, stored column-major. When the
/// packed joint state fits in 128 bits, rows are also kept packed so subset
/// keys reduce to a mask.
#[derive(Debug, Clone)]
pub struct Window {
    start_tick: u64,
    len: usize,
    alphabet: Alphabet,
    columns: Vec<Vec<Symbol>>,
    packed: Option<Vec<u128>>,
}

impl Window {
    pub fn from_rows(start_tick: u64, n_agents: usize, alphabet: Alphabet, rows: &[&[Symbol]]) -> Self {
        let mut columns = vec![Vec::with_capacity(rows.len()); n_agents];
        for row in rows {
            for (c, s) in columns.iter_mut().zip(row.iter()) {
                c.push(*s);
            }
        }
        Window::from_columns(start_tick, alphabet, columns)
    }

    /// Builds a window from per-agent series of equal length.
    pub fn from_columns(start_tick: u64, alphabet: Alphabet, columns: Vec<Vec<Symbol>>) -> Self {
        let len = columns.first().map_or(0, |c| c.len());
        debug_assert!(columns.iter().all(|c| c.len() == len));
        let bits = alphabet.bits() as usize;
        let packed = (columns.len() * bits <= 128).then(|| {
            let mut p = vec![0u128; len];
            for (i, col) in columns.iter().enumerate() {
                let shift = i * bits;
                for (slot, &s) in p.iter_mut().zip(col.iter()) {
                    *slot |= (s as u128) << shift;
                }
            }
            p
        });
        Window { start_tick, len, alphabet, columns, packed }
    }

    pub fn start_tick(&self) -> u64 {
        self.start_tick
    }

    pub fn end_tick(&self) -> u64 {
        self.start_tick + self.len as u64 - 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_agents(&self) -> usize {
        self.columns.len()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn column(&self, agent: usize) -> &[Symbol] {
        &self.columns[agent]
    }

    pub fn columns(&self) -> &[Vec<Symbol>] {
        &self.columns
    }

    pub fn packed(&self) -> Option<&[u128]> {
        self.packed.as_deref()
    }

    pub fn row(&self, t: usize) -> Vec<Symbol> {
        self.columns.iter().map(|c| c[t]).collect()
    }

    /// Sub-window of `len` ticks starting at offset `from`.
    pub fn slice(&self, from: usize, len: usize) -> Window {
        let columns = self.columns.iter().map(|c| c[from..from + len].to_vec()).collect();
        Window::from_columns(self.start_tick + from as u64, self.alphabet, columns)
    }

    /// Replaces the listed agents' series with new ones (used for surrogates).
    pub fn with_columns_replaced(&self, replaced: Vec<(usize, Vec<Symbol>)>) -> Window {
        let mut columns = self.columns.clone();
        for (i, c) in replaced {
            columns[i] = c;
        }
        Window::from_columns(self.start_tick, self.alphabet, columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_trace(cap: usize) -> StateTrace {
        StateTrace::new(3, Alphabet::BINARY, cap).unwrap()
    }

    #[test]
    fn record_into_empty_trace() {
        let mut t = binary_trace(8);
        assert_eq!(t.record_tick(&[0, 1, 0]).unwrap(), 1);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn full_ring_evicts_oldest() {
        let mut t = StateTrace::new(1, Alphabet::BINARY, 4096).unwrap();
        for i in 0..4096u64 {
            t.record_tick(&[(i % 2) as u8]).unwrap();
        }
        assert_eq!(t.len(), 4096);
        t.record_tick(&[1]).unwrap();
        assert_eq!(t.len(), 4096);
        assert_eq!(t.iter().next().unwrap().0, 2);
        assert_eq!(t.last_tick(), Some(4097));
    }

    #[test]
    fn symbol_outside_alphabet_rejected() {
        let mut t = binary_trace(8);
        assert_eq!(
            t.record_tick(&[0, 7, 0]),
            Err(TraceError::Symbol { agent: 1, symbol: 7, alphabet: 2 })
        );
        assert!(matches!(t.record_tick(&[0, 1]), Err(TraceError::Arity { .. })));
        assert!(t.is_empty());
    }

    #[test]
    fn windows_take_most_recent_ticks() {
        let mut t = StateTrace::new(2, Alphabet::BINARY, 10_000).unwrap();
        for i in 0..5000u64 {
            t.record_tick(&[(i % 2) as u8, ((i / 2) % 2) as u8]).unwrap();
        }
        let w = t.take_window(4096).unwrap();
        assert_eq!(w.len(), 4096);
        assert_eq!(w.start_tick(), 905);
        assert_eq!(w.end_tick(), 5000);
        assert_eq!(w.column(0)[0], (904 % 2) as u8);

        let short = StateTrace::new(2, Alphabet::BINARY, 100).unwrap();
        assert!(matches!(short.take_window(4096), Err(TraceError::TooShort { .. })));
    }

    #[test]
    fn window_equal_to_trace_length() {
        let mut t = StateTrace::new(1, Alphabet::BINARY, 4096).unwrap();
        for _ in 0..4096 {
            t.record_tick(&[1]).unwrap();
        }
        let w = t.take_window(4096).unwrap();
        assert_eq!(w.start_tick(), 1);
        assert_eq!(w.len(), 4096);
        assert!(matches!(t.take_window(32), Err(TraceError::WindowTooSmall(32))));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let csv = "tick,a0,a1\n1,0,1\n2,1\n";
        let err = StateTrace::read_csv(csv.as_bytes(), Alphabet::BINARY, None).unwrap_err();
        assert_eq!(err, TraceError::Malformed { line: 3, reason: "expected 2 symbols, found 1".into() });

        let csv = "tick,a0\n1,0\n1,1\n";
        let err = StateTrace::read_csv(csv.as_bytes(), Alphabet::BINARY, None).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 3, .. }));

        let csv = "tick,a0\n1,0\n2,x\n";
        let err = StateTrace::read_csv(csv.as_bytes(), Alphabet::BINARY, None).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 3, .. }));
    }

    #[test]
    fn alphabet_bits() {
        assert_eq!(Alphabet::new(2).unwrap().bits(), 1);
        assert_eq!(Alphabet::new(3).unwrap().bits(), 2);
        assert_eq!(Alphabet::new(16).unwrap().bits(), 4);
        assert!(Alphabet::new(17).is_err());
        assert!(Alphabet::new(1).is_err());
    }

    #[test]
    fn packed_rows_track_columns() {
        let a = Alphabet::new(3).unwrap();
        let rows: Vec<&[u8]> = vec![&[2, 0, 1], &[1, 1, 0]];
        let w = Window::from_rows(1, 3, a, &rows);
        let p = w.packed().unwrap();
        assert_eq!(p[0], 2 | 1 << 4);
        assert_eq!(p[1], 1 | 1 << 2);
    }

    #[test]
    fn graph_rejects_negative_and_diagonal() {
        let mut g = InteractionGraph::zeros(3);
        assert!(g.set(0, 1, -0.1).is_err());
        assert!(g.set(1, 1, 0.5).is_err());
        assert!(g.set(1, 1, 0.0).is_ok());
        assert!(InteractionGraph::from_rows(vec![vec![0.0, 1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn jaccard_of_drifting_cluster() {
        let a = AgentSet::new(vec![0, 1, 2, 3, 4]);
        let b = AgentSet::new(vec![0, 1, 2, 3, 5]);
        assert!((a.jaccard(&b) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(b.label(), "0-1-2-3-5");
        assert_eq!(AgentSet::from_mask(a.mask()), a);
    }
}
