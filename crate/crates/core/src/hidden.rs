//! Hidden-variable discovery.
//!
//! If the ideal-parent profiles of several children are similar, one shared
//! input would improve all of them at once. The profile that maximizes the
//! summed frozen-scale gain over a cluster is the top eigenvector of an
//! L x L problem (L = cluster size), because the optimum lies in the span of
//! the member profiles. Agglomerative merging over a precomputed Gram matrix
//! searches the space of clusters, and the winner is spliced into the graph
//! as a new Gaussian root with an informed initial value profile.
//!
//! Non-linear families participate through their derivative-weighted
//! profiles, so the same machinery covers both CPD kinds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cpd::CpdKind;
use crate::error::{Error, Result};
use crate::ideal::{c2_raw, IdealProfile};
use crate::model::{FamilyParams, NetworkGraph, Profile, StructureConstraints};

/// A candidate cluster of children for one new hidden parent.
#[derive(Debug, Clone)]
pub struct ClusterCandidate {
    /// Child node ids, in ascending order.
    pub members: Vec<usize>,
    /// M x L matrix whose columns are the members' (weighted) profiles
    /// divided by their noise scales.
    pub scaled_profiles: DMatrix<f64>,
    /// Coefficients expressing the optimal profile in the member basis.
    pub lambda: DVector<f64>,
    /// The optimal shared-parent profile, unit norm.
    pub zstar: Profile,
    /// Summed frozen-scale gain at the optimum (top eigenvalue / 2).
    pub bound_c1: f64,
    /// Summed variance-adjusted gain of `zstar` per member.
    pub bound_c2: f64,
    /// Score estimate after penalty and root-likelihood terms; NaN until
    /// [`cluster_bic_estimate`] has been applied.
    pub bic_delta_estimate: f64,
}

fn scaled_profile_matrix(profiles: &[&IdealProfile]) -> DMatrix<f64> {
    let m = profiles[0].len();
    let mut y = DMatrix::zeros(m, profiles.len());
    for (j, p) in profiles.iter().enumerate() {
        debug_assert_eq!(p.len(), m);
        let sigma = p.sigma2.sqrt().max(1e-12);
        y.set_column(j, &(p.weighted_y() / sigma).column(0));
    }
    y
}

/// Top eigenpair of a symmetric PSD matrix.
fn top_eigenpair(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

/// Solves for the shared-parent profile that maximizes the summed
/// frozen-scale gain over the given members: the problem reduces to the top
/// eigenpair of the L x L Gram matrix of scaled profiles, and the optimal
/// profile is the corresponding combination of member profiles.
pub fn optimal_hidden_profile(
    members: &[usize],
    profiles: &[&IdealProfile],
) -> Result<ClusterCandidate> {
    if members.is_empty() || members.len() != profiles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} members vs {} profiles",
            members.len(),
            profiles.len()
        )));
    }
    let y = scaled_profile_matrix(profiles);
    let a = y.transpose() * &y;
    if a.trace() <= 1e-300 {
        return Err(Error::EmptyCluster);
    }
    let (gamma, lambda) = top_eigenpair(&a);
    if gamma <= 0.0 {
        return Err(Error::EmptyCluster);
    }
    let mut zstar = &y * &lambda;
    zstar /= zstar.norm();
    // pin the sign so member order cannot flip the profile
    let imax = zstar.iamax();
    if zstar[imax] < 0.0 {
        zstar = -zstar;
    }
    let bound_c2 = profiles.iter().map(|p| c2_raw(&p.weighted_y(), &zstar)).sum::<f64>();
    let mut cand = ClusterCandidate {
        members: members.to_vec(),
        scaled_profiles: y,
        lambda,
        zstar,
        bound_c1: gamma / 2.0,
        bound_c2,
        bic_delta_estimate: f64::NAN,
    };
    cand.members.sort_unstable();
    Ok(cand)
}

/// Penalty accounting for one new hidden root: its mean and variance plus
/// one scale per member edge, and the root's own likelihood share.
#[derive(Debug, Clone, Copy)]
pub struct ClusterPenalty {
    pub n_instances: usize,
    /// Rescore the optimized profile with the tighter per-member measure
    /// instead of the eigenvalue bound.
    pub rescore_with_c2: bool,
}

/// Estimated score change from introducing the cluster's hidden parent: the
/// similarity bound, minus the parameter penalty for the new root and member
/// scales, plus the log-likelihood of the standardized profile as a root
/// Gaussian.
pub fn cluster_bic_estimate(cluster: &ClusterCandidate, penalty: &ClusterPenalty) -> f64 {
    let m = penalty.n_instances as f64;
    let bound = if penalty.rescore_with_c2 { cluster.bound_c2 } else { cluster.bound_c1 };
    let n_new_params = cluster.members.len() + 2;
    let root_ll = -(m / 2.0) * ((std::f64::consts::TAU).ln() + 1.0);
    bound - m.ln() / 2.0 * n_new_params as f64 + root_ll
}

fn gram_submatrix(gram: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    let l = indices.len();
    let mut sub = DMatrix::zeros(l, l);
    for (a, &i) in indices.iter().enumerate() {
        for (b, &j) in indices.iter().enumerate() {
            sub[(a, b)] = gram[(i, j)];
        }
    }
    sub
}

fn penalty_terms(l: usize, m: usize) -> f64 {
    let mf = m as f64;
    let root_ll = -(mf / 2.0) * ((std::f64::consts::TAU).ln() + 1.0);
    -(mf.ln() / 2.0) * (l + 2) as f64 + root_ll
}

fn merged_estimate(gram: &DMatrix<f64>, indices: &[usize], m: usize) -> f64 {
    let (gamma, _) = top_eigenpair(&gram_submatrix(gram, indices));
    gamma / 2.0 + penalty_terms(indices.len(), m)
}

/// Leave-one-out acceptance score: each member's variance-adjusted gain is
/// measured against the profile solved from the *other* members only. A
/// cluster whose optimum merely reproduces one member's own profile scores
/// nothing, so the estimate cannot be inflated by self-alignment.
fn loo_estimate(
    gram: &DMatrix<f64>,
    y_scaled: &DMatrix<f64>,
    profiles: &[&IdealProfile],
    indices: &[usize],
    m: usize,
) -> f64 {
    let l = indices.len();
    let mut bound = 0.0;
    if l >= 2 {
        for (a, &i) in indices.iter().enumerate() {
            let rest: Vec<usize> = indices
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, &j)| j)
                .collect();
            let (_, lambda) = top_eigenpair(&gram_submatrix(gram, &rest));
            let mut z = Profile::zeros(y_scaled.nrows());
            for (b, &j) in rest.iter().enumerate() {
                z += y_scaled.column(j) * lambda[b];
            }
            bound += c2_raw(&profiles[i].weighted_y(), &z);
        }
    }
    bound + penalty_terms(l, m)
}

/// Agglomerative search over clusters: start from singletons, repeatedly
/// merge the pair whose merged closed-form estimate is best (all submatrices
/// drawn from a single precomputed Gram matrix), and return the best cluster
/// seen anywhere in the merge tree. Tree nodes are compared — and the
/// winner's `bic_delta_estimate` reported — by the leave-one-out rescored
/// estimate, which is what insertion decisions should consult.
pub fn agglomerate_clusters(
    members: &[usize],
    profiles: &[&IdealProfile],
    n_instances: usize,
) -> Result<ClusterCandidate> {
    if members.is_empty() || members.len() != profiles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} members vs {} profiles",
            members.len(),
            profiles.len()
        )));
    }
    let y = scaled_profile_matrix(profiles);
    let gram = y.transpose() * &y;
    if gram.trace() <= 1e-300 {
        return Err(Error::EmptyCluster);
    }

    let mut clusters: Vec<Vec<usize>> = (0..members.len()).map(|i| vec![i]).collect();
    let mut best_indices = clusters[0].clone();
    let mut best_estimate = f64::NEG_INFINITY;
    for c in &clusters {
        let e = loo_estimate(&gram, &y, profiles, c, n_instances);
        if e > best_estimate {
            best_estimate = e;
            best_indices = c.clone();
        }
    }
    while clusters.len() > 1 {
        let mut pick = (0usize, 1usize);
        let mut pick_rank = f64::NEG_INFINITY;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let mut merged = clusters[i].clone();
                merged.extend_from_slice(&clusters[j]);
                merged.sort_unstable();
                let e = merged_estimate(&gram, &merged, n_instances);
                if e > pick_rank {
                    pick_rank = e;
                    pick = (i, j);
                }
            }
        }
        let (i, j) = pick;
        let mut merged = clusters[i].clone();
        merged.extend_from_slice(&clusters[j]);
        merged.sort_unstable();
        clusters.remove(j);
        clusters.remove(i);
        let tracked = loo_estimate(&gram, &y, profiles, &merged, n_instances);
        if tracked > best_estimate {
            best_estimate = tracked;
            best_indices = merged.clone();
        }
        clusters.push(merged);
    }

    let picked_members: Vec<usize> = best_indices.iter().map(|&i| members[i]).collect();
    let picked_profiles: Vec<&IdealProfile> =
        best_indices.iter().map(|&i| profiles[i]).collect();
    let mut cand = optimal_hidden_profile(&picked_members, &picked_profiles)?;
    cand.bic_delta_estimate = best_estimate;
    Ok(cand)
}

/// Result of splicing a hidden variable into the graph.
#[derive(Debug, Clone)]
pub struct InsertOutcome {
    pub graph: NetworkGraph,
    /// Index of the new hidden node.
    pub node: usize,
    /// Members whose edge was skipped because they sit at the in-degree cap.
    pub skipped: Vec<usize>,
}

/// Adds a hidden Gaussian root (standard-normal initialization) with edges
/// to the cluster members. Each member's new scale starts at the
/// frozen-scale optimum z.y_i / z.z for its profile. Members already at the
/// in-degree cap are skipped and reported; if no edge can be placed the
/// insertion is rejected.
pub fn insert_hidden_variable(
    graph: &NetworkGraph,
    cluster: &ClusterCandidate,
    profiles: &[&IdealProfile],
    constraints: &StructureConstraints,
) -> Result<InsertOutcome> {
    if cluster.members.len() != profiles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} members vs {} profiles",
            cluster.members.len(),
            profiles.len()
        )));
    }
    for &c in &cluster.members {
        if c >= graph.n_nodes() {
            return Err(Error::UnknownNode(c));
        }
        if constraints.two_layer && graph.is_hidden(c) {
            return Err(Error::InvalidConfig(
                "two-layer mode: hidden nodes cannot receive parents".into(),
            ));
        }
    }
    let mut out = graph.clone();
    let mut name_idx = graph.hidden_nodes().len();
    let name = loop {
        let candidate = format!("H{name_idx}");
        if out.node_index(&candidate).is_none() {
            break candidate;
        }
        name_idx += 1;
    };
    let node = out.add_hidden_node(
        name,
        CpdKind::LinearGaussian,
        FamilyParams::gaussian_root(0.0, 1.0),
    );
    let zz = cluster.zstar.dot(&cluster.zstar);
    let mut skipped = Vec::new();
    for (i, &child) in cluster.members.iter().enumerate() {
        let cap_ok = match constraints.max_in_degree {
            Some(cap) => out.parents(child).len() < cap,
            None => true,
        };
        if !cap_ok {
            skipped.push(child);
            continue;
        }
        let alpha = cluster.zstar.dot(&profiles[i].y) / zz;
        out.add_edge(node, child, alpha);
    }
    if skipped.len() == cluster.members.len() {
        return Err(Error::InvalidConfig(
            "no cluster member can accept a new parent under the in-degree cap".into(),
        ));
    }
    Ok(InsertOutcome { graph: out, node, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ideal::c1_raw;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn profile_from(y: Profile, sigma2: f64) -> IdealProfile {
        let m = y.len();
        let yy = y.dot(&y);
        IdealProfile {
            y,
            weights: DVector::from_element(m, 1.0),
            c1_const: yy,
            c2_const: yy,
            sigma2,
        }
    }

    fn random_profile(m: usize, rng: &mut ChaCha8Rng, sigma2: f64) -> IdealProfile {
        profile_from(DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0), sigma2)
    }

    #[test]
    fn singleton_bound_is_half_m_at_mle_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 64;
        let y = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let sigma2 = y.dot(&y) / m as f64;
        let p = profile_from(y.clone(), sigma2);
        let cand = optimal_hidden_profile(&[0], &[&p]).unwrap();
        assert_relative_eq!(cand.bound_c1, m as f64 / 2.0, epsilon = 1e-9);
        // z* is proportional to the profile itself
        let cos = cand.zstar.dot(&y).abs() / y.norm();
        assert_relative_eq!(cos, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn duplicated_profiles_double_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 32;
        let y = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let sigma2 = y.dot(&y) / m as f64;
        let p1 = profile_from(y.clone(), sigma2);
        let p2 = profile_from(y.clone(), sigma2);
        let cand = optimal_hidden_profile(&[0, 1], &[&p1, &p2]).unwrap();
        assert_relative_eq!(cand.bound_c1, m as f64, epsilon = 1e-8);
    }

    /// Power iteration on the big M x M outer-product matrix, the
    /// independent route to the same optimum.
    fn power_iteration_bound(profiles: &[&IdealProfile]) -> f64 {
        let y = scaled_profile_matrix(profiles);
        let big = &y * y.transpose();
        let m = big.nrows();
        let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = &big * &v;
            let n = w.norm();
            if n == 0.0 {
                return 0.0;
            }
            let next = w / n;
            let l = next.dot(&(&big * &next));
            if (l - lambda).abs() < 1e-13 * l.abs().max(1.0) {
                return l / 2.0;
            }
            lambda = l;
            v = next;
        }
        lambda / 2.0
    }

    #[test]
    fn eigen_bound_matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 100;
        for l in [1usize, 2, 4, 8] {
            let profiles: Vec<IdealProfile> = (0..l)
                .map(|_| {
                    let s2 = 0.5 + rng.random::<f64>();
                    random_profile(m, &mut rng, s2)
                })
                .collect();
            let refs: Vec<&IdealProfile> = profiles.iter().collect();
            let members: Vec<usize> = (0..l).collect();
            let cand = optimal_hidden_profile(&members, &refs).unwrap();
            let oracle = power_iteration_bound(&refs);
            let rel = (cand.bound_c1 - oracle).abs() / oracle.abs().max(1e-12);
            assert!(rel < 1e-6, "L={l}: {} vs {}", cand.bound_c1, oracle);
        }
    }

    #[test]
    fn bound_equals_summed_member_gains_at_zstar() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 50;
        let profiles: Vec<IdealProfile> = (0..5)
            .map(|_| {
                let s2 = 0.3 + rng.random::<f64>();
                random_profile(m, &mut rng, s2)
            })
            .collect();
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let cand = optimal_hidden_profile(&[0, 1, 2, 3, 4], &refs).unwrap();
        let recomputed: f64 =
            profiles.iter().map(|p| c1_raw(&p.weighted_y(), &cand.zstar, p.sigma2)).sum();
        assert_relative_eq!(cand.bound_c1, recomputed, epsilon = 1e-9);
    }

    #[test]
    fn zstar_is_invariant_to_member_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 40;
        let profiles: Vec<IdealProfile> =
            (0..4).map(|_| random_profile(m, &mut rng, 1.0)).collect();
        let fwd: Vec<&IdealProfile> = profiles.iter().collect();
        let rev: Vec<&IdealProfile> = profiles.iter().rev().collect();
        let a = optimal_hidden_profile(&[0, 1, 2, 3], &fwd).unwrap();
        let b = optimal_hidden_profile(&[3, 2, 1, 0], &rev).unwrap();
        assert_relative_eq!(a.zstar.dot(&b.zstar).abs(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(a.bound_c1, b.bound_c1, epsilon = 1e-9);
    }

    #[test]
    fn small_gram_and_big_outer_product_share_the_top_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 60;
        let profiles: Vec<IdealProfile> =
            (0..3).map(|_| random_profile(m, &mut rng, 0.8)).collect();
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let y = scaled_profile_matrix(&refs);
        let (small, _) = top_eigenpair(&(y.transpose() * &y));
        let oracle = power_iteration_bound(&refs) * 2.0;
        assert_relative_eq!(small, oracle, max_relative = 1e-6);
    }

    #[test]
    fn all_zero_profiles_are_an_empty_cluster_error() {
        let p = profile_from(DVector::zeros(10), 1.0);
        let q = profile_from(DVector::zeros(10), 1.0);
        assert!(matches!(
            optimal_hidden_profile(&[0, 1], &[&p, &q]),
            Err(Error::EmptyCluster)
        ));
    }

    #[test]
    fn well_explained_singleton_is_rejected() {
        // residual profile near zero: nothing left to explain
        let y = DVector::from_element(200, 1e-6);
        let p = profile_from(y, 0.5);
        let cand = optimal_hidden_profile(&[0], &[&p]).unwrap();
        let est = cluster_bic_estimate(
            &cand,
            &ClusterPenalty { n_instances: 200, rescore_with_c2: false },
        );
        assert!(est < 0.0, "estimate {est} should reject");
    }

    #[test]
    fn shared_latent_factor_scores_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 200;
        let h = DVector::from_fn(m, |_, _| {
            Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
        });
        let noise = Normal::new(0.0, 0.3).unwrap();
        // two children driven by the same factor; profiles are their
        // residuals around the mean, which retain the factor signal
        let mk = |rng: &mut ChaCha8Rng, a: f64| {
            let y = DVector::from_fn(m, |i, _| a * h[i] + noise.sample(rng));
            let sigma2 = y.dot(&y) / m as f64;
            profile_from(y, sigma2)
        };
        let p1 = mk(&mut rng, 1.0);
        let p2 = mk(&mut rng, 0.9);
        let cand = optimal_hidden_profile(&[0, 1], &[&p1, &p2]).unwrap();
        let est = cluster_bic_estimate(
            &cand,
            &ClusterPenalty { n_instances: m, rescore_with_c2: true },
        );
        assert!(est > 0.0, "estimate {est} should accept");
    }

    #[test]
    fn c2_rescoring_never_lowers_the_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 80;
        let profiles: Vec<IdealProfile> = (0..4)
            .map(|_| {
                let y = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let sigma2 = y.dot(&y) / m as f64; // MLE variance
                profile_from(y, sigma2)
            })
            .collect();
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let cand = optimal_hidden_profile(&[0, 1, 2, 3], &refs).unwrap();
        let with_c1 = cluster_bic_estimate(
            &cand,
            &ClusterPenalty { n_instances: m, rescore_with_c2: false },
        );
        let with_c2 = cluster_bic_estimate(
            &cand,
            &ClusterPenalty { n_instances: m, rescore_with_c2: true },
        );
        assert!(with_c2 >= with_c1 - 1e-9);
    }

    #[test]
    fn planted_two_factor_model_yields_a_pure_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = 300;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let h1 = DVector::from_fn(m, |_, _| normal.sample(&mut rng));
        let h2 = DVector::from_fn(m, |_, _| normal.sample(&mut rng));
        let noise = Normal::new(0.0, 0.4).unwrap();
        let mut profiles = Vec::new();
        for c in 0..10 {
            let src = if c < 5 { &h1 } else { &h2 };
            let a = 0.8 + 0.4 * rng.random::<f64>();
            let y = DVector::from_fn(m, |i, _| a * src[i] + noise.sample(&mut rng));
            let sigma2 = y.dot(&y) / m as f64;
            profiles.push(profile_from(y, sigma2));
        }
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let members: Vec<usize> = (0..10).collect();
        let best = agglomerate_clusters(&members, &refs, m).unwrap();
        let in_first = best.members.iter().filter(|&&c| c < 5).count();
        let in_second = best.members.len() - in_first;
        let purity = in_first.max(in_second) as f64 / best.members.len() as f64;
        assert!(purity >= 0.8, "members {:?}", best.members);
        assert!(best.members.len() >= 2);
    }

    #[test]
    fn orthogonal_profiles_stay_singletons() {
        let m = 40;
        let mut profiles = Vec::new();
        for c in 0..4 {
            let mut y = DVector::zeros(m);
            y[c] = 4.0;
            profiles.push(profile_from(y, 0.4));
        }
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let best = agglomerate_clusters(&[0, 1, 2, 3], &refs, m).unwrap();
        assert_eq!(best.members.len(), 1);
    }

    #[test]
    fn duplicate_pair_is_merged_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = 120;
        let shared = DVector::from_fn(m, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let mut profiles =
            vec![profile_from(shared.clone(), 0.5), profile_from(shared.clone(), 0.5)];
        for _ in 0..3 {
            profiles.push(random_profile(m, &mut rng, 0.5));
        }
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let best = agglomerate_clusters(&[0, 1, 2, 3, 4], &refs, m).unwrap();
        assert!(best.members.contains(&0) && best.members.contains(&1), "{:?}", best.members);
    }

    #[test]
    fn insertion_adds_a_root_with_edges_to_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = NetworkGraph::edgeless(
            &["A".into(), "B".into(), "C".into()],
            CpdKind::LinearGaussian,
        );
        let m = 30;
        let profiles: Vec<IdealProfile> =
            (0..3).map(|_| random_profile(m, &mut rng, 1.0)).collect();
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let cand = optimal_hidden_profile(&[0, 1, 2], &refs).unwrap();
        let out = insert_hidden_variable(
            &g,
            &cand,
            &refs,
            &StructureConstraints::unbounded(),
        )
        .unwrap();
        assert_eq!(out.graph.hidden_nodes(), vec![3]);
        assert_eq!(out.graph.n_edges(), 3);
        assert!(out.skipped.is_empty());
        for c in 0..3 {
            assert!(out.graph.has_edge(out.node, c));
        }
    }

    #[test]
    fn member_at_cap_is_skipped_and_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = NetworkGraph::edgeless(
            &["A".into(), "B".into(), "C".into()],
            CpdKind::LinearGaussian,
        );
        g.add_edge(2, 0, 1.0); // A already has one parent
        let m = 30;
        let profiles: Vec<IdealProfile> =
            (0..2).map(|_| random_profile(m, &mut rng, 1.0)).collect();
        let refs: Vec<&IdealProfile> = profiles.iter().collect();
        let cand = optimal_hidden_profile(&[0, 1], &refs).unwrap();
        let constraints = StructureConstraints { max_in_degree: Some(1), two_layer: false };
        let out = insert_hidden_variable(&g, &cand, &refs, &constraints).unwrap();
        assert_eq!(out.skipped, vec![0]);
        assert!(!out.graph.has_edge(out.node, 0));
        assert!(out.graph.has_edge(out.node, 1));
    }
}
