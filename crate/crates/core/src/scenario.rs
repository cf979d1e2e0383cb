//! Initial populations and interaction graphs for the named scenarios.

use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::config::{block_partition, ScenarioSpec};
use crate::population::{Alphabet, InteractionGraph, Population, PopulationError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid block partition: {0}")]
    Partition(String),
    #[error("matrix file {path}: {reason}")]
    Matrix { path: String, reason: String },
    #[error(transparent)]
    Population(#[from] PopulationError),
}

fn edge(g: &mut InteractionGraph, from: usize, to: usize, w: f64) -> Result<(), ScenarioError> {
    g.set(from, to, w).map_err(ScenarioError::from)
}

/// Builds the population and initial weights. `w_max` is the default
/// strength of the redundant and ring couplings.
pub fn generate_scenario(
    spec: &ScenarioSpec,
    alphabet: Alphabet,
    w_max: f64,
) -> Result<(Population, InteractionGraph), ScenarioError> {
    let graph = match spec {
        ScenarioSpec::Disparate { n } => InteractionGraph::zeros(*n),
        ScenarioSpec::Redundant { n, strength } => {
            let mut g = InteractionGraph::zeros(*n);
            for j in 1..*n {
                edge(&mut g, 0, j, strength.unwrap_or(w_max))?;
            }
            g
        }
        ScenarioSpec::Modular { n, blocks, block_sizes, w_in, w_out } => {
            let sizes = block_partition(*n, *blocks, block_sizes.as_deref())
                .map_err(ScenarioError::Partition)?;
            let mut block_of = Vec::with_capacity(*n);
            for (b, &size) in sizes.iter().enumerate() {
                block_of.extend(std::iter::repeat_n(b, size));
            }
            let mut g = InteractionGraph::zeros(*n);
            for i in 0..*n {
                for j in (0..*n).filter(|&j| j != i) {
                    let w = if block_of[i] == block_of[j] { *w_in } else { *w_out };
                    if w != 0.0 {
                        edge(&mut g, i, j, w)?;
                    }
                }
            }
            g
        }
        ScenarioSpec::Ring { n, strength } => {
            let mut g = InteractionGraph::zeros(*n);
            for i in 0..*n {
                edge(&mut g, i, (i + 1) % n, strength.unwrap_or(w_max))?;
            }
            g
        }
        ScenarioSpec::Custom { path } => read_matrix(path)?,
    };
    let pop = Population::new(graph.n(), alphabet)?;
    graph.check_against(&pop)?;
    Ok((pop, graph))
}

/// Square weight matrix, one comma-separated row per line; row `i` holds the
/// influence of agent `i` on every agent. Blank lines and `#` comments are
/// skipped.
pub fn read_matrix(path: &Path) -> Result<InteractionGraph, ScenarioError> {
    let fail = |reason: String| ScenarioError::Matrix { path: path.display().to_string(), reason };
    let file = std::fs::File::open(path).map_err(|e| fail(e.to_string()))?;
    let mut rows = Vec::new();
    for (k, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| fail(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| fail(format!("line {}: {e}", k + 1)))?);
    }
    let n = rows.len();
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(fail(format!("row {} has {} entries, expected {n}", k + 1, r.len())));
    }
    InteractionGraph::from_rows(rows).map_err(|e| fail(e.to_string()))
}

/// One line per scenario kind with its parameters, for the CLI listing.
pub fn describe_scenarios() -> Vec<(&'static str, &'static str)> {
    vec![
        ("disparate", "n; no couplings"),
        ("redundant", "n, strength (default w_max); agent 0 drives every other agent"),
        ("modular", "n, blocks | block_sizes, w_in, w_out (default 0); block-diagonal couplings"),
        ("ring", "n, strength (default w_max); directed cycle i -> i+1"),
        ("custom", "path; square CSV weight matrix, row i = influence of agent i"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn disparate_has_no_weights() {
        let (pop, g) = generate_scenario(&ScenarioSpec::Disparate { n: 8 }, Alphabet::BINARY, 1.0).unwrap();
        assert_eq!(pop.n_agents(), 8);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn modular_is_block_diagonal() {
        let (_, g) = generate_scenario(&ScenarioSpec::default(), Alphabet::BINARY, 1.0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i != j && i / 5 == j / 5 { 0.9 } else { 0.0 };
                assert_eq!(g.weight(i, j), expected);
            }
        }
        let uneven = ScenarioSpec::Modular { n: 5, blocks: None, block_sizes: Some(vec![2, 3]), w_in: 0.5, w_out: 0.1 };
        let (_, g) = generate_scenario(&uneven, Alphabet::BINARY, 1.0).unwrap();
        assert_eq!((g.weight(0, 1), g.weight(1, 2), g.weight(3, 4)), (0.5, 0.1, 0.5));
        let bad = ScenarioSpec::Modular { n: 5, blocks: Some(2), block_sizes: None, w_in: 0.5, w_out: 0.0 };
        assert!(matches!(generate_scenario(&bad, Alphabet::BINARY, 1.0), Err(ScenarioError::Partition(_))));
    }

    #[test]
    fn ring_and_redundant_edges() {
        let (_, g) = generate_scenario(&ScenarioSpec::Ring { n: 5, strength: None }, Alphabet::BINARY, 1.0).unwrap();
        assert_eq!(g.edge_count(), 5);
        assert_eq!(g.weight(4, 0), 1.0);
        let (_, g) = generate_scenario(&ScenarioSpec::Redundant { n: 4, strength: Some(0.7) }, Alphabet::BINARY, 1.0).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.weight(0, 3), 0.7);
    }

    #[test]
    fn custom_matrix_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# weights\n0,0.5,0\n0,0,0.5\n0.5,0,0").unwrap();
        let spec = ScenarioSpec::Custom { path: f.path().to_owned() };
        let (pop, g) = generate_scenario(&spec, Alphabet::BINARY, 1.0).unwrap();
        assert_eq!(pop.n_agents(), 3);
        assert_eq!(g.weight(2, 0), 0.5);

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0,1\n1,x").unwrap();
        let err = read_matrix(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
