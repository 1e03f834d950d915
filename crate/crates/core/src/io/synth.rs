//! Synthetic ground-truth networks and benchmark bundles.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpd::CpdKind;
use crate::error::{Error, Result};
use crate::io::{load_csv, load_network, sample_network, save_network, write_csv};
use crate::model::{Dataset, FamilyParams, NetworkGraph, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    Linear,
    Sigmoid,
    /// Hidden roots over observed leaves.
    TwoLayer,
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SuiteKind::Linear),
            "sigmoid" => Ok(SuiteKind::Sigmoid),
            "two-layer" | "two_layer" => Ok(SuiteKind::TwoLayer),
            other => Err(Error::InvalidConfig(format!("unknown suite kind `{other}`"))),
        }
    }
}

/// A golden model with train sets across an instance-count grid and a
/// shared test set.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub kind: SuiteKind,
    pub golden: NetworkGraph,
    /// (train size, dataset) per grid point.
    pub train: Vec<(usize, Dataset)>,
    pub test: Dataset,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SuiteMeta {
    kind: SuiteKind,
    n: usize,
    hidden: usize,
    m_grid: Vec<usize>,
    seed: u64,
    test_m: usize,
}

const TEST_M: usize = 1000;

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Random degree-bounded DAG with fully observed nodes. Marginal variances
/// are pinned to one by scaling each family's prediction share, which keeps
/// signal-to-noise ratios comparable across nodes.
fn random_linear_dag(n: usize, rng: &mut ChaCha8Rng) -> NetworkGraph {
    let names: Vec<String> = (0..n).map(|i| format!("X{i}")).collect();
    let mut g = NetworkGraph::edgeless(&names, CpdKind::LinearGaussian);
    // running joint covariance, built in index order
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let max_parents = c.min(3);
        let n_parents = if max_parents == 0 {
            0
        } else {
            // favor one or two parents
            let r = rng.random::<f64>();
            if r < 0.25 {
                0
            } else if r < 0.65 {
                1
            } else if r < 0.9 {
                2.min(max_parents)
            } else {
                3.min(max_parents)
            }
        };
        let mut parents: Vec<usize> = Vec::new();
        while parents.len() < n_parents {
            let p = rng.random_range(0..c);
            if !parents.contains(&p) {
                parents.push(p);
            }
        }
        parents.sort_unstable();
        let mut alpha: Vec<f64> = parents
            .iter()
            .map(|_| {
                let mag = 0.5 + rng.random::<f64>();
                if rng.random::<f64>() < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        // scale the prediction share so the marginal variance is one
        let noise_frac = 0.15 + 0.25 * rng.random::<f64>();
        if !parents.is_empty() {
            let mut v_pred = 0.0;
            for (a, &pa) in alpha.iter().zip(&parents) {
                for (b, &pb) in alpha.iter().zip(&parents) {
                    v_pred += a * b * cov[(pa, pb)];
                }
            }
            if v_pred > 1e-12 {
                let target = 1.0 - noise_frac;
                let scale = (target / v_pred).sqrt();
                alpha.iter_mut().for_each(|a| *a *= scale);
            }
        }
        let sigma2 = if parents.is_empty() { 1.0 } else { noise_frac };
        let theta0 = 0.3 * (rng.random::<f64>() * 2.0 - 1.0);
        for (&p, &a) in parents.iter().zip(&alpha) {
            g.add_edge(p, c, a);
        }
        g.set_params(
            c,
            FamilyParams { alpha: alpha.clone(), theta: Theta::Linear { theta0 }, sigma2 },
        );
        // update the running covariance
        let mut cross = vec![0.0; c];
        for j in 0..c {
            let mut s = 0.0;
            for (a, &p) in alpha.iter().zip(&parents) {
                s += a * cov[(p, j)];
            }
            cross[j] = s;
        }
        let mut own = sigma2;
        for (a, &pa) in alpha.iter().zip(&parents) {
            for (b, &pb) in alpha.iter().zip(&parents) {
                own += a * b * cov[(pa, pb)];
            }
        }
        for j in 0..c {
            cov[(c, j)] = cross[j];
            cov[(j, c)] = cross[j];
        }
        cov[(c, c)] = own;
    }
    g
}

fn random_sigmoid_dag(n: usize, rng: &mut ChaCha8Rng) -> NetworkGraph {
    let names: Vec<String> = (0..n).map(|i| format!("X{i}")).collect();
    let mut g = NetworkGraph::edgeless(&names, CpdKind::Sigmoid);
    for c in 0..n {
        let max_parents = c.min(3);
        let n_parents = if max_parents == 0 {
            0
        } else {
            let r = rng.random::<f64>();
            if r < 0.25 {
                0
            } else if r < 0.7 {
                1
            } else {
                2.min(max_parents)
            }
        };
        let mut parents: Vec<usize> = Vec::new();
        while parents.len() < n_parents {
            let p = rng.random_range(0..c);
            if !parents.contains(&p) {
                parents.push(p);
            }
        }
        parents.sort_unstable();
        let alpha: Vec<f64> = parents
            .iter()
            .map(|_| {
                let mag = 0.8 + 0.8 * rng.random::<f64>();
                if rng.random::<f64>() < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        let theta1 = 1.5 + rng.random::<f64>();
        let (theta0, sigma2) = if parents.is_empty() {
            // orphan: center the constant mean at zero with unit noise
            (-theta1 / 2.0, 1.0)
        } else {
            let sd = (0.08 + 0.12 * rng.random::<f64>()) * theta1;
            (0.3 * (rng.random::<f64>() * 2.0 - 1.0), sd * sd)
        };
        for (&p, &a) in parents.iter().zip(&alpha) {
            g.add_edge(p, c, a);
        }
        g.set_params(c, FamilyParams { alpha, theta: Theta::Sigmoid { theta0, theta1 }, sigma2 });
    }
    g
}

/// Hidden standard-normal roots over observed leaves; every observed node
/// gets one primary hidden parent (block assignment) and, with some
/// probability, a second one.
fn random_two_layer(n: usize, hidden: usize, rng: &mut ChaCha8Rng) -> NetworkGraph {
    let names: Vec<String> = (0..n).map(|i| format!("X{i}")).collect();
    let mut g = NetworkGraph::edgeless(&names, CpdKind::LinearGaussian);
    let mut hs = Vec::with_capacity(hidden);
    for k in 0..hidden {
        hs.push(g.add_hidden_node(
            format!("H{k}"),
            CpdKind::LinearGaussian,
            FamilyParams::gaussian_root(0.0, 1.0),
        ));
    }
    for c in 0..n {
        let primary = hs[c * hidden / n];
        let mut parents = vec![primary];
        if hidden > 1 && rng.random::<f64>() < 0.3 {
            loop {
                let extra = hs[rng.random_range(0..hidden)];
                if extra != primary {
                    parents.push(extra);
                    break;
                }
            }
        }
        let mut alpha: Vec<f64> = parents
            .iter()
            .map(|_| {
                let mag = 0.7 + 0.7 * rng.random::<f64>();
                if rng.random::<f64>() < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        // hidden roots are independent with unit variance
        let noise_frac = 0.1 + 0.15 * rng.random::<f64>();
        let v_pred: f64 = alpha.iter().map(|a| a * a).sum();
        let scale = ((1.0 - noise_frac) / v_pred).sqrt();
        alpha.iter_mut().for_each(|a| *a *= scale);
        let theta0 = 0.3 * (rng.random::<f64>() * 2.0 - 1.0);
        for (&p, &a) in parents.iter().zip(&alpha) {
            g.add_edge(p, c, a);
        }
        g.set_params(
            c,
            FamilyParams { alpha, theta: Theta::Linear { theta0 }, sigma2: noise_frac },
        );
    }
    g
}

/// Generates a golden model, samples train sets across the grid plus one
/// shared test set, and bundles them. The same seed always yields the same
/// bundle.
pub fn make_synthetic_suite(
    kind: SuiteKind,
    n: usize,
    hidden: usize,
    m_grid: &[usize],
    seed: u64,
) -> Result<SyntheticSuite> {
    if n == 0 || m_grid.is_empty() || m_grid.iter().any(|&m| m == 0) {
        return Err(Error::InvalidConfig("suite needs n >= 1 and a non-empty M grid".into()));
    }
    if kind == SuiteKind::TwoLayer && (hidden == 0 || hidden > n) {
        return Err(Error::InvalidConfig("two-layer suite needs 1 <= hidden <= n".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 1));
    let golden = match kind {
        SuiteKind::Linear => random_linear_dag(n, &mut rng),
        SuiteKind::Sigmoid => random_sigmoid_dag(n, &mut rng),
        SuiteKind::TwoLayer => random_two_layer(n, hidden, &mut rng),
    };
    let mut train = Vec::new();
    for (idx, &m) in m_grid.iter().enumerate() {
        let s = sample_network(&golden, m, derived_seed(seed, 100 + idx as u64))?;
        train.push((m, s.observed));
    }
    let test = sample_network(&golden, TEST_M, derived_seed(seed, 99))?.observed;
    Ok(SyntheticSuite { kind, golden, train, test, seed })
}

impl SyntheticSuite {
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_network(&self.golden, &dir.join("golden.json"))?;
        let meta = SuiteMeta {
            kind: self.kind,
            n: self.golden.observed_nodes().len(),
            hidden: self.golden.hidden_nodes().len(),
            m_grid: self.train.iter().map(|(m, _)| *m).collect(),
            seed: self.seed,
            test_m: self.test.n_instances(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        for (m, data) in &self.train {
            write_csv(data, &dir.join(format!("train_{m}.csv")))?;
        }
        write_csv(&self.test, &dir.join("test.csv"))?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<SyntheticSuite> {
        let meta: SuiteMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let golden = load_network(&dir.join("golden.json"))?;
        let mut train = Vec::new();
        for &m in &meta.m_grid {
            train.push((m, load_csv(&dir.join(format!("train_{m}.csv")), None)?));
        }
        let test = load_csv(&dir.join("test.csv"), None)?;
        Ok(SyntheticSuite { kind: meta.kind, golden, train, test, seed: meta.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_layer_children_have_one_or_two_hidden_parents() {
        let suite =
            make_synthetic_suite(SuiteKind::TwoLayer, 30, 3, &[50], 5).unwrap();
        let g = &suite.golden;
        assert_eq!(g.hidden_nodes().len(), 3);
        for c in g.observed_nodes() {
            let k = g.parents(c).len();
            assert!((1..=2).contains(&k), "child {c} has {k} parents");
            for &p in g.parents(c) {
                assert!(g.is_hidden(p));
            }
        }
    }

    #[test]
    fn same_seed_gives_an_identical_bundle() {
        let a = make_synthetic_suite(SuiteKind::Linear, 8, 0, &[25, 50], 42).unwrap();
        let b = make_synthetic_suite(SuiteKind::Linear, 8, 0, &[25, 50], 42).unwrap();
        assert_eq!(a.golden.to_json().unwrap(), b.golden.to_json().unwrap());
        assert_eq!(a.train[0].1.values(), b.train[0].1.values());
        assert_eq!(a.test.values(), b.test.values());
    }

    #[test]
    fn bundle_survives_a_directory_round_trip() {
        let suite = make_synthetic_suite(SuiteKind::Linear, 5, 0, &[20], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        suite.save_dir(dir.path()).unwrap();
        let loaded = SyntheticSuite::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.golden.to_json().unwrap(), suite.golden.to_json().unwrap());
        assert_eq!(loaded.train.len(), 1);
        assert_eq!(loaded.train[0].0, 20);
        assert_eq!(loaded.test.n_instances(), suite.test.n_instances());
        for i in 0..20 {
            for j in 0..5 {
                assert_eq!(
                    loaded.train[0].1.value(i, j).to_bits(),
                    suite.train[0].1.value(i, j).to_bits(),
                    "cell ({i},{j}) must survive the text round trip"
                );
            }
        }
    }

    #[test]
    fn linear_golden_marginals_are_standardized() {
        let suite = make_synthetic_suite(SuiteKind::Linear, 10, 0, &[50], 9).unwrap();
        let (_, cov) = crate::io::linear_gaussian_marginal(&suite.golden).unwrap();
        for i in 0..10 {
            assert!((cov[(i, i)] - 1.0).abs() < 1e-9, "var[{i}] = {}", cov[(i, i)]);
        }
    }
}
