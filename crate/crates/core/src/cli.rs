//! Command-line driver: `learn`, `sample`, `synth`, `evaluate`, `bench`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cpd::CpdKind;
use crate::error::{Error, Result};
use crate::io::{
    self, evaluate_run, load_csv, load_network, make_synthetic_suite, sample_network,
    save_network, SuiteKind, SyntheticSuite,
};
use crate::model::Dataset;
use crate::search::{greedy_search, SearchConfig, SearchMode, SearchTrace};
use crate::sem::{structural_em, SemConfig};

#[derive(Parser)]
#[command(
    name = "idealbn",
    version,
    about = "Structure learning for continuous-variable Bayesian networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CpdArg {
    Linear,
    Sigmoid,
}

impl From<CpdArg> for CpdKind {
    fn from(a: CpdArg) -> Self {
        match a {
            CpdArg::Linear => CpdKind::LinearGaussian,
            CpdArg::Sigmoid => CpdKind::Sigmoid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum ModeArg {
    Greedy,
    Ideal,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Linear,
    Sigmoid,
    TwoLayer,
}

impl From<KindArg> for SuiteKind {
    fn from(a: KindArg) -> Self {
        match a {
            KindArg::Linear => SuiteKind::Linear,
            KindArg::Sigmoid => SuiteKind::Sigmoid,
            KindArg::TwoLayer => SuiteKind::TwoLayer,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn a network from a CSV dataset and write it as JSON.
    Learn {
        /// Input CSV (header row of variable names, one instance per row).
        #[arg(long)]
        data: PathBuf,
        /// Output network JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "linear")]
        cpd: CpdArg,
        /// greedy = exhaustive exact scoring; ideal = profile-guided top-K.
        #[arg(long, value_enum, default_value = "ideal")]
        mode: ModeArg,
        /// Candidates per family that receive exact scoring (required in
        /// ideal mode).
        #[arg(short = 'K', long = "top-k")]
        k: Option<usize>,
        #[arg(long)]
        max_indegree: Option<usize>,
        /// Learn a two-layer latent model (hidden roots over observed
        /// leaves) with structural EM.
        #[arg(long)]
        two_layer: bool,
        /// Cap on introduced hidden variables in two-layer mode.
        #[arg(long, default_value_t = 8)]
        max_hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-move search trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Missing-value token (empty cells always count as missing).
        #[arg(long)]
        missing: Option<String>,
        /// Skip the default column standardization.
        #[arg(long)]
        no_standardize: bool,
        /// Also write a DOT rendering.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Forward-sample instances from a network.
    Sample {
        #[arg(long)]
        net: PathBuf,
        #[arg(short = 'M', long)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV of the observed columns.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of the hidden columns.
        #[arg(long)]
        hidden_out: Option<PathBuf>,
    },
    /// Generate a synthetic benchmark bundle (golden model + datasets).
    Synth {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(short = 'N', long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        hidden: usize,
        /// Comma-separated training-set sizes, e.g. 25,50,100.
        #[arg(long)]
        m_grid: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare a learned network against a golden one.
    Evaluate {
        #[arg(long)]
        learned: PathBuf,
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired guided-vs-exhaustive runs over a synthetic bundle; one CSV
    /// row per (mode, K, M, seed) cell.
    Bench {
        #[arg(long)]
        suite_dir: PathBuf,
        /// Comma-separated K values for the guided mode.
        #[arg(long, default_value = "2,5")]
        ks: String,
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad list entry `{s}`")))
        })
        .collect()
}

fn parse_u64_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("bad list entry `{s}`")))
        })
        .collect()
}

fn write_trace(path: &Path, traces: &[SearchTrace]) -> Result<()> {
    let mut buf = Vec::new();
    for t in traces {
        t.write_jsonl(&mut buf)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_learn(
    data_path: &Path,
    out: &Path,
    cpd: CpdKind,
    mode: ModeArg,
    k: Option<usize>,
    max_indegree: Option<usize>,
    two_layer: bool,
    max_hidden: usize,
    seed: u64,
    trace_path: Option<&Path>,
    missing: Option<&str>,
    no_standardize: bool,
    dot: Option<&Path>,
) -> Result<()> {
    if mode == ModeArg::Ideal && k.is_none() {
        return Err(Error::InvalidConfig(
            "ideal mode needs -K/--top-k (how many candidates per family get exact scoring)"
                .into(),
        ));
    }
    let raw = load_csv(data_path, missing)?;
    let data = if no_standardize { raw } else { raw.standardized() };
    let mut config = match mode {
        ModeArg::Greedy => SearchConfig::exhaustive(cpd),
        ModeArg::Ideal => SearchConfig::ideal(cpd, k.unwrap()),
    };
    config.max_in_degree = max_indegree;
    config.seed = seed;

    let (graph, traces, summary) = if two_layer {
        let sem_config = SemConfig::two_layer(config, max_hidden);
        let (graph, trace) = structural_em(&data, &sem_config)?;
        let summary = format!(
            "structural EM: {} outer iterations, {} hidden variables, {} edges",
            trace.outer_records.len(),
            graph.hidden_nodes().len(),
            graph.n_edges()
        );
        (graph, trace.search_traces, summary)
    } else if !data.is_fully_observed() {
        let sem_config = SemConfig::new(config);
        let (graph, trace) = structural_em(&data, &sem_config)?;
        let summary = format!(
            "structural EM over missing data: {} outer iterations, {} edges",
            trace.outer_records.len(),
            graph.n_edges()
        );
        (graph, trace.search_traces, summary)
    } else {
        let (graph, trace) = greedy_search(&data, &config, None)?;
        let summary = format!(
            "search: {} moves, BIC {:.3} -> {:.3}, {} exact evaluations, {:.2}s",
            trace.counters.moves,
            trace.initial_bic,
            trace.final_bic,
            trace.counters.exact_total(),
            trace.wall_seconds
        );
        (graph, vec![trace], summary)
    };

    save_network(&graph, out)?;
    if let Some(p) = trace_path {
        write_trace(p, &traces)?;
    }
    if let Some(p) = dot {
        io::save_dot(&graph, p)?;
    }
    println!("{summary}");
    println!("network written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    mode: String,
    k: usize,
    m: usize,
    seed: u64,
    train_ll: f64,
    test_ll: f64,
    edge_precision: f64,
    edge_recall: f64,
    edges_learned: usize,
    exact_evals: u64,
    screening_evals: u64,
    wall_seconds: f64,
}

fn bench_cell(
    suite: &SyntheticSuite,
    train: &Dataset,
    m: usize,
    mode_label: &str,
    config: &SearchConfig,
    max_hidden: usize,
    out: &mut Vec<BenchRow>,
) -> Result<()> {
    let (graph, counters, wall) = if suite.kind == SuiteKind::TwoLayer {
        let sem_config = SemConfig::two_layer(config.clone(), max_hidden);
        let (graph, trace) = structural_em(train, &sem_config)?;
        (graph, trace.counters, trace.wall_seconds)
    } else {
        let (graph, trace) = greedy_search(train, config, None)?;
        (graph, trace.counters.clone(), trace.wall_seconds)
    };
    let report = evaluate_run(&graph, &suite.golden, train, &suite.test)?
        .with_run_info(&counters, wall, config.seed);
    out.push(BenchRow {
        mode: mode_label.to_string(),
        k: if config.mode == SearchMode::Ideal { config.k } else { 0 },
        m,
        seed: config.seed,
        train_ll: report.train_ll_per_var_instance,
        test_ll: report.test_ll_per_var_instance,
        edge_precision: report.edge_precision,
        edge_recall: report.edge_recall,
        edges_learned: report.edges_learned,
        exact_evals: report.exact_evals,
        screening_evals: report.screening_evals,
        wall_seconds: report.wall_seconds,
    });
    Ok(())
}

fn run_bench(suite_dir: &Path, ks: &[usize], seeds: &[u64], out: &Path) -> Result<()> {
    let suite = SyntheticSuite::load_dir(suite_dir)?;
    let cpd = match suite.kind {
        SuiteKind::Sigmoid => CpdKind::Sigmoid,
        _ => CpdKind::LinearGaussian,
    };
    let max_hidden = (suite.golden.hidden_nodes().len() * 2).max(4);
    let mut rows = Vec::new();
    for &(m, ref train) in suite.train.iter().map(|(m, d)| (*m, d)).collect::<Vec<_>>().iter() {
        for &seed in seeds {
            let mut greedy = SearchConfig::exhaustive(cpd);
            greedy.seed = seed;
            bench_cell(&suite, train, m, "greedy", &greedy, max_hidden, &mut rows)?;
            for &k in ks {
                let mut ideal = SearchConfig::ideal(cpd, k);
                ideal.seed = seed;
                bench_cell(&suite, train, m, "ideal", &ideal, max_hidden, &mut rows)?;
            }
        }
    }
    let mut writer = csv::Writer::from_path(out)?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    println!("bench: {} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Learn {
            data,
            out,
            cpd,
            mode,
            k,
            max_indegree,
            two_layer,
            max_hidden,
            seed,
            trace,
            missing,
            no_standardize,
            dot,
        } => run_learn(
            &data,
            &out,
            cpd.into(),
            mode,
            k,
            max_indegree,
            two_layer,
            max_hidden,
            seed,
            trace.as_deref(),
            missing.as_deref(),
            no_standardize,
            dot.as_deref(),
        ),
        Command::Sample { net, instances, seed, out, hidden_out } => {
            let graph = load_network(&net)?;
            let sample = sample_network(&graph, instances, seed)?;
            io::write_csv(&sample.observed, &out)?;
            if let Some(hp) = hidden_out {
                if sample.hidden_names.is_empty() {
                    return Err(Error::InvalidConfig(
                        "network has no hidden nodes to write".into(),
                    ));
                }
                let hidden =
                    Dataset::fully_observed(sample.hidden_values, sample.hidden_names)?;
                io::write_csv(&hidden, &hp)?;
            }
            println!("{} instances written to {}", instances, out.display());
            Ok(())
        }
        Command::Synth { kind, n, hidden, m_grid, seed, out_dir } => {
            let grid = parse_usize_list(&m_grid)?;
            let suite = make_synthetic_suite(kind.into(), n, hidden, &grid, seed)?;
            suite.save_dir(&out_dir)?;
            println!(
                "suite written to {} (train sizes: {m_grid}, test size: {})",
                out_dir.display(),
                suite.test.n_instances()
            );
            Ok(())
        }
        Command::Evaluate { learned, golden, train, test, out } => {
            let learned = load_network(&learned)?;
            let golden = load_network(&golden)?;
            let train = load_csv(&train, None)?;
            let test = load_csv(&test, None)?;
            let report = evaluate_run(&learned, &golden, &train, &test)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Bench { suite_dir, ks, seeds, out } => {
            run_bench(&suite_dir, &parse_usize_list(&ks)?, &parse_u64_list(&seeds)?, &out)
        }
    }
}

/// Entry point shared by the binary and tests. Returns the process exit
/// code: 0 on success, 2 on any error (with a diagnostic on stderr).
pub fn cli_main(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not failures
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
