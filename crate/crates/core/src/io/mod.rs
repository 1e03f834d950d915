//! Dataset and network file formats, forward sampling, synthetic benchmark
//! suites, and run evaluation.
//!
//! Formats:
//! - datasets: CSV with a header row of variable names, one instance per
//!   row; missing cells are empty or equal to a configurable token.
//! - networks: JSON (see [`crate::model::NetworkGraph::to_json`]) and DOT
//!   for visualization.
//! - search traces: line-delimited JSON records.
//! - benchmark output: CSV, one row per run cell.

pub mod report;
pub mod synth;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cpd::predict_mean;
use crate::error::{Error, Result};
use crate::model::{Dataset, NetworkGraph};

pub use report::{evaluate_run, hidden_child_purity, linear_gaussian_marginal, RunReport};
pub use synth::{make_synthetic_suite, SuiteKind, SyntheticSuite};

/// Reads a rectangular CSV table with a header row. Cells equal to
/// `missing_token` (or empty, always) are masked out. `None` uses the
/// default token `NA`.
pub fn load_csv(path: &Path, missing_token: Option<&str>) -> Result<Dataset> {
    let token = missing_token.unwrap_or("NA");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if names.is_empty() {
        return Err(Error::Parse { row: 0, col: "-".into(), msg: "empty header".into() });
    }
    let n = names.len();
    let mut rows: Vec<Vec<(f64, bool)>> = Vec::new();
    for (ridx, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = ridx + 1; // 1-based data row for messages
        if record.len() != n {
            return Err(Error::Parse {
                row: row_no,
                col: "-".into(),
                msg: format!("ragged row: {} cells, expected {}", record.len(), n),
            });
        }
        let mut row = Vec::with_capacity(n);
        for (cidx, cell) in record.iter().enumerate() {
            if cell.is_empty() || cell == token {
                row.push((0.0, false));
            } else {
                match cell.parse::<f64>() {
                    Ok(v) => row.push((v, true)),
                    Err(_) => {
                        return Err(Error::Parse {
                            row: row_no,
                            col: names[cidx].clone(),
                            msg: format!("not a number: `{cell}`"),
                        })
                    }
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { row: 0, col: "-".into(), msg: "no data rows".into() });
    }
    let m = rows.len();
    let values = DMatrix::from_fn(m, n, |i, j| rows[i][j].0);
    let observed = DMatrix::from_fn(m, n, |i, j| rows[i][j].1);
    Dataset::new(values, observed, names)
}

/// Writes a dataset as CSV, emitting `NA` for masked cells.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(data.names())?;
    for i in 0..data.n_instances() {
        let row: Vec<String> = (0..data.n_vars())
            .map(|j| {
                if data.is_observed(i, j) {
                    // shortest round-trip representation
                    format!("{}", data.value(i, j))
                } else {
                    "NA".to_string()
                }
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_network(graph: &NetworkGraph, path: &Path) -> Result<()> {
    fs::write(path, graph.to_json()?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<NetworkGraph> {
    NetworkGraph::from_json(&fs::read_to_string(path)?)
}

pub fn save_dot(graph: &NetworkGraph, path: &Path) -> Result<()> {
    fs::write(path, graph.to_dot())?;
    Ok(())
}

/// Forward-sampling output: the learning dataset never contains the hidden
/// columns.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub observed: Dataset,
    /// Hidden node draws, one column per hidden node (possibly zero
    /// columns).
    pub hidden_values: DMatrix<f64>,
    pub hidden_names: Vec<String>,
}

/// Draws `m` instances by forward sampling in topological order:
/// each node is Gaussian around its link prediction.
pub fn sample_network(graph: &NetworkGraph, m: usize, seed: u64) -> Result<SampleOutput> {
    if m == 0 {
        return Err(Error::InvalidConfig("sample size must be positive".into()));
    }
    let order = graph.topological_order()?;
    let d = graph.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = DMatrix::zeros(m, d);
    for i in 0..m {
        for &node in &order {
            let params = graph.params(node);
            let row: Vec<f64> =
                graph.parents(node).iter().map(|&p| all[(i, p)]).collect();
            let mean = predict_mean(params, &row);
            let sd = params.sigma2.max(0.0).sqrt();
            let noise = Normal::new(0.0, sd.max(1e-300)).unwrap();
            all[(i, node)] = mean + noise.sample(&mut rng);
        }
    }
    let observed_nodes = graph.observed_nodes();
    let hidden_nodes = graph.hidden_nodes();
    let mut obs_values = DMatrix::zeros(m, observed_nodes.len());
    for (j, &node) in observed_nodes.iter().enumerate() {
        obs_values.set_column(j, &all.column(node));
    }
    let obs_names: Vec<String> =
        observed_nodes.iter().map(|&n| graph.node(n).name.clone()).collect();
    let mut hidden_values = DMatrix::zeros(m, hidden_nodes.len());
    for (j, &node) in hidden_nodes.iter().enumerate() {
        hidden_values.set_column(j, &all.column(node));
    }
    let hidden_names: Vec<String> =
        hidden_nodes.iter().map(|&n| graph.node(n).name.clone()).collect();
    Ok(SampleOutput {
        observed: Dataset::fully_observed(obs_values, obs_names)?,
        hidden_values,
        hidden_names,
    })
}
