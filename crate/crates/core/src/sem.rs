//! Structural EM for missing values and hidden variables.
//!
//! The posterior over unobserved cells is kept in factored form: one
//! Gaussian per (instance, variable), summarized by first and second
//! moments. The E-step runs coordinate ascent over those factors (closed
//! form where every touching family is linear Gaussian, a mode-plus-
//! curvature approximation where a saturating link is involved). The M-step
//! reuses the structure search, scoring families by expected statistics.
//! Hidden variables enter gradually: search until no edge move helps, then
//! ask the cluster machinery whether a new hidden parent pays for itself.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cpd::{
    family_dim, family_loglik_ev, fit_all_families, logistic, CpdKind, Evidence, VARIANCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::hidden::{agglomerate_clusters, insert_hidden_variable};
use crate::ideal::{ideal_profile, IdealProfile};
use crate::model::{Dataset, FamilyParams, NetworkGraph, Profile, Theta};
use crate::search::{greedy_search, search_evidence, Counters, SearchConfig, SearchTrace};

/// E-step stopping rule: largest per-cell mean change below this, or the
/// sweep cap.
const E_STEP_TOL: f64 = 1e-6;
const E_STEP_MAX_SWEEPS: usize = 50;

/// Factored posterior over every graph node column: first and second
/// moments per cell. Observed cells carry point masses (second = mean^2).
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    pub mean: DMatrix<f64>,
    pub second: DMatrix<f64>,
}

impl PosteriorMoments {
    /// Point masses at observed cells; hidden columns start at N(0, 1) and
    /// missing observed cells at their column mean with the column variance.
    pub fn init(graph: &NetworkGraph, data: &Dataset) -> Result<Self> {
        let m = data.n_instances();
        let d = graph.n_nodes();
        let n_obs = graph.observed_nodes().len();
        if n_obs != data.n_vars() {
            return Err(Error::DimensionMismatch(format!(
                "{} observed nodes vs {} dataset columns",
                n_obs,
                data.n_vars()
            )));
        }
        let mut mean = DMatrix::zeros(m, d);
        let mut second = DMatrix::zeros(m, d);
        for node in 0..d {
            if graph.is_hidden(node) {
                for i in 0..m {
                    mean[(i, node)] = 0.0;
                    second[(i, node)] = 1.0;
                }
            } else {
                let (col_mean, col_var) = data.column_stats(node);
                for i in 0..m {
                    if data.is_observed(i, node) {
                        let v = data.value(i, node);
                        mean[(i, node)] = v;
                        second[(i, node)] = v * v;
                    } else {
                        mean[(i, node)] = col_mean;
                        second[(i, node)] = col_mean * col_mean + col_var.max(VARIANCE_FLOOR);
                    }
                }
            }
        }
        Ok(PosteriorMoments { mean, second })
    }

    pub fn n_instances(&self) -> usize {
        self.mean.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.mean.ncols()
    }

    pub fn variance(&self, instance: usize, node: usize) -> f64 {
        (self.second[(instance, node)] - self.mean[(instance, node)].powi(2)).max(0.0)
    }

    /// Installs a value profile for one column with the given per-instance
    /// variance.
    pub fn set_profile(&mut self, node: usize, values: &Profile, variance: f64) {
        for i in 0..self.n_instances() {
            self.mean[(i, node)] = values[i];
            self.second[(i, node)] = values[i] * values[i] + variance;
        }
    }

    /// The scoring view: means plus per-cell variances.
    pub fn evidence(&self) -> Evidence {
        let mut var = DMatrix::zeros(self.mean.nrows(), self.mean.ncols());
        for i in 0..self.mean.nrows() {
            for j in 0..self.mean.ncols() {
                var[(i, j)] = (self.second[(i, j)] - self.mean[(i, j)].powi(2)).max(0.0);
            }
        }
        Evidence::new(self.mean.clone(), Some(var))
    }

    fn keep_columns(&self, keep: &[usize]) -> PosteriorMoments {
        let m = self.n_instances();
        let mut mean = DMatrix::zeros(m, keep.len());
        let mut second = DMatrix::zeros(m, keep.len());
        for (new, &old) in keep.iter().enumerate() {
            mean.set_column(new, &self.mean.column(old));
            second.set_column(new, &self.second.column(old));
        }
        PosteriorMoments { mean, second }
    }
}

/// Which cells the E-step must update, grouped by instance.
fn unobserved_cells(graph: &NetworkGraph, data: &Dataset) -> Vec<Vec<usize>> {
    let m = data.n_instances();
    let mut out = vec![Vec::new(); m];
    for node in 0..graph.n_nodes() {
        if graph.is_hidden(node) {
            for row in out.iter_mut() {
                row.push(node);
            }
        } else {
            for (i, row) in out.iter_mut().enumerate() {
                if !data.is_observed(i, node) {
                    row.push(node);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EStepReport {
    pub sweeps: usize,
    pub converged: bool,
    pub max_delta: f64,
    /// Variational objective after each sweep (exact for linear-Gaussian
    /// networks).
    pub elbo_per_sweep: Vec<f64>,
}

/// Expected complete log-likelihood plus the entropy of the factored
/// posterior. Exact for linear-Gaussian families; sigmoid families
/// contribute through the plug-in expected error.
pub fn variational_objective(graph: &NetworkGraph, data: &Dataset, q: &PosteriorMoments) -> f64 {
    let ev = q.evidence();
    let mut total = 0.0;
    for node in 0..graph.n_nodes() {
        total += family_loglik_ev(&ev, graph.params(node), node, graph.parents(node));
    }
    for (i, nodes) in unobserved_cells(graph, data).iter().enumerate() {
        for &node in nodes {
            let v = q.variance(i, node).max(1e-300);
            total += 0.5 * (std::f64::consts::TAU * std::f64::consts::E * v).ln();
        }
    }
    total
}

struct CellUpdate {
    mean: f64,
    variance: f64,
}

fn update_cell(
    graph: &NetworkGraph,
    q: &PosteriorMoments,
    children_of: &[Vec<usize>],
    instance: usize,
    node: usize,
) -> CellUpdate {
    // Own family: the cell value appears linearly as the output, so its
    // contribution is Gaussian for either link.
    let own = graph.params(node);
    let own_sigma2 = own.sigma2.max(VARIANCE_FLOOR);
    let own_pred = {
        let mut t = 0.0;
        for (pos, &p) in graph.parents(node).iter().enumerate() {
            t += own.alpha[pos] * q.mean[(instance, p)];
        }
        match own.theta {
            Theta::Linear { theta0 } => t + theta0,
            Theta::Sigmoid { theta0, theta1 } => theta0 + theta1 * logistic(t),
        }
    };
    let mut prec = 1.0 / own_sigma2;
    let mut lin = own_pred / own_sigma2;

    // children with saturating links need a 1-D mode search
    let mut sigmoid_terms: Vec<(f64, f64, f64, f64, f64, f64)> = Vec::new();
    for &c in &children_of[node] {
        let fam = graph.params(c);
        let sigma2 = fam.sigma2.max(VARIANCE_FLOOR);
        let pos = graph.parents(c).iter().position(|&p| p == node).unwrap();
        let a = fam.alpha[pos];
        let mut rest = 0.0;
        for (l, &p) in graph.parents(c).iter().enumerate() {
            if l != pos {
                rest += fam.alpha[l] * q.mean[(instance, p)];
            }
        }
        let xc = q.mean[(instance, c)];
        match fam.theta {
            Theta::Linear { theta0 } => {
                prec += a * a / sigma2;
                lin += a * (xc - rest - theta0) / sigma2;
            }
            Theta::Sigmoid { theta0, theta1 } => {
                sigmoid_terms.push((a, rest, xc, theta0, theta1, sigma2));
            }
        }
    }

    if sigmoid_terms.is_empty() {
        let variance = 1.0 / prec;
        return CellUpdate { mean: lin / prec, variance };
    }

    // Mode of the full 1-D conditional with curvature-matched variance.
    let grad = |v: f64| -> f64 {
        let mut g = -prec * v + lin;
        for &(a, rest, xc, theta0, theta1, sigma2) in &sigmoid_terms {
            let s = logistic(rest + a * v);
            let r = xc - (theta0 + theta1 * s);
            g += r * theta1 * s * (1.0 - s) * a / sigma2;
        }
        g
    };
    let mut v = q.mean[(instance, node)];
    for _ in 0..30 {
        let g = grad(v);
        if g.abs() < 1e-10 {
            break;
        }
        let h = 1e-5 * (1.0 + v.abs());
        let curvature = (grad(v + h) - grad(v - h)) / (2.0 * h);
        let step = if curvature < -1e-12 { -g / curvature } else { g / prec };
        let step = step.clamp(-5.0, 5.0);
        v += step;
        if step.abs() < 1e-10 {
            break;
        }
    }
    let h = 1e-5 * (1.0 + v.abs());
    let curvature = (grad(v + h) - grad(v - h)) / (2.0 * h);
    let variance = if curvature < -1e-12 { -1.0 / curvature } else { 1.0 / prec };
    CellUpdate { mean: v, variance }
}

/// Coordinate-ascent mean-field update of every unobserved cell, swept
/// until the largest mean change drops below tolerance. Returns the new
/// moments and a per-sweep objective trace.
pub fn mean_field_e_step(
    graph: &NetworkGraph,
    data: &Dataset,
    prev: &PosteriorMoments,
) -> Result<(PosteriorMoments, EStepReport)> {
    if prev.n_columns() != graph.n_nodes() || prev.n_instances() != data.n_instances() {
        return Err(Error::DimensionMismatch(format!(
            "moments {}x{} vs graph {} nodes, data {} rows",
            prev.n_instances(),
            prev.n_columns(),
            graph.n_nodes(),
            data.n_instances()
        )));
    }
    let mut q = prev.clone();
    let cells = unobserved_cells(graph, data);
    if cells.iter().all(|c| c.is_empty()) {
        return Ok((
            q,
            EStepReport { sweeps: 0, converged: true, max_delta: 0.0, elbo_per_sweep: vec![] },
        ));
    }
    let children_of: Vec<Vec<usize>> =
        (0..graph.n_nodes()).map(|node| graph.children(node)).collect();
    let mut elbos = Vec::new();
    let mut max_delta = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < E_STEP_MAX_SWEEPS {
        sweeps += 1;
        max_delta = 0.0;
        for instance in 0..data.n_instances() {
            for &node in &cells[instance] {
                let upd = update_cell(graph, &q, &children_of, instance, node);
                let delta = (upd.mean - q.mean[(instance, node)]).abs();
                if delta > max_delta {
                    max_delta = delta;
                }
                q.mean[(instance, node)] = upd.mean;
                q.second[(instance, node)] = upd.mean * upd.mean + upd.variance.max(0.0);
            }
        }
        elbos.push(variational_objective(graph, data, &q));
        if max_delta < E_STEP_TOL {
            break;
        }
    }
    let converged = max_delta < E_STEP_TOL;
    Ok((q, EStepReport { sweeps, converged, max_delta, elbo_per_sweep: elbos }))
}

/// Expected local log-likelihood of `child`'s current family under the
/// factored posterior. With a degenerate (fully observed) posterior this is
/// exactly the plain family log-likelihood.
pub fn expected_family_loglik(graph: &NetworkGraph, q: &PosteriorMoments, child: usize) -> f64 {
    family_loglik_ev(&q.evidence(), graph.params(child), child, graph.parents(child))
}

/// Expected local score of a hypothetical family `child | parents`: the
/// family is refit on expected statistics and its log-likelihood is
/// returned net of the BIC penalty share.
pub fn expected_family_score(
    graph: &NetworkGraph,
    q: &PosteriorMoments,
    child: usize,
    parents: &[usize],
) -> f64 {
    let ev = q.evidence();
    let kind = graph.node(child).kind;
    let fit = crate::cpd::fit_family_ev(&ev, kind, child, parents, Some(graph.params(child)));
    let m = q.n_instances() as f64;
    fit.loglik - m.ln() / 2.0 * family_dim(kind, parents.len()) as f64
}

/// Ideal profile matched to expectations: the profile is built from the
/// posterior-mean columns, so with fully observed data it coincides with
/// the plain construction.
pub fn expected_ideal_profile(
    graph: &NetworkGraph,
    q: &PosteriorMoments,
    child: usize,
) -> Result<IdealProfile> {
    let ev = q.evidence();
    let x = ev.mean_column(child);
    let u = ev.mean_columns(graph.parents(child));
    ideal_profile(&x, &u, graph.params(child))
}

/// Standardizes each hidden column to zero mean and unit total variance,
/// folding the scale into child edge scales exactly. The mean shift is
/// folded into linear children's intercepts; families with saturating links
/// keep their shift and are corrected by the next parameter fit. Sign is
/// pinned so the summed child scales are non-negative.
fn standardize_hidden(graph: &mut NetworkGraph, q: &mut PosteriorMoments) {
    let m = q.n_instances();
    for h in graph.hidden_nodes() {
        let mut mu = 0.0;
        let mut second = 0.0;
        for i in 0..m {
            mu += q.mean[(i, h)];
            second += q.second[(i, h)];
        }
        mu /= m as f64;
        second /= m as f64;
        let var = (second - mu * mu).max(0.0);
        if var < 1e-12 {
            continue;
        }
        let children = graph.children(h);
        let all_linear =
            children.iter().all(|&c| matches!(graph.params(c).theta, Theta::Linear { .. }));
        let shift = if all_linear { mu } else { 0.0 };
        let scale = var.sqrt();
        let alpha_sum: f64 = children
            .iter()
            .map(|&c| {
                let pos = graph.parents(c).iter().position(|&p| p == h).unwrap();
                graph.params(c).alpha[pos] * scale
            })
            .sum();
        let sign = if alpha_sum < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            let old_mean = q.mean[(i, h)];
            let old_second = q.second[(i, h)];
            let new_mean = sign * (old_mean - shift) / scale;
            let old_var = (old_second - old_mean * old_mean).max(0.0);
            q.mean[(i, h)] = new_mean;
            q.second[(i, h)] = new_mean * new_mean + old_var / var;
        }
        for &c in &children {
            let pos = graph.parents(c).iter().position(|&p| p == h).unwrap();
            let mut params = graph.params(c).clone();
            let a_old = params.alpha[pos];
            params.alpha[pos] = a_old * scale * sign;
            if let Theta::Linear { ref mut theta0 } = params.theta {
                *theta0 += a_old * shift;
            }
            graph.set_params(c, params);
        }
        let mut root = graph.params(h).clone();
        root.theta = Theta::Linear { theta0: 0.0 };
        root.sigma2 = 1.0;
        graph.set_params(h, root);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemOuterRecord {
    pub outer: usize,
    pub e_step_sweeps: usize,
    /// Expected BIC of the graph after this M-step.
    pub expected_bic: f64,
    pub moves: u64,
    pub hidden_count: usize,
    pub inserted_hidden: bool,
}

#[derive(Debug, Clone)]
pub struct SemTrace {
    pub outer_records: Vec<SemOuterRecord>,
    /// Nested per-M-step search traces.
    pub search_traces: Vec<SearchTrace>,
    pub counters: Counters,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Fully observed input with no latent request: one plain search call.
    pub delegated: bool,
}

#[derive(Debug, Clone)]
pub struct SemConfig {
    pub search: SearchConfig,
    pub max_outer: usize,
    /// Outer-loop convergence threshold in expected-BIC units.
    pub tol: f64,
    /// Cap on the number of hidden variables introduced (two-layer mode).
    pub max_hidden: usize,
}

impl SemConfig {
    pub fn new(search: SearchConfig) -> Self {
        SemConfig { search, max_outer: 50, tol: 1e-4, max_hidden: 16 }
    }

    /// Two-layer latent learning defaults: hidden roots over observed
    /// leaves, with the conventional cap of two hidden parents per observed
    /// variable.
    pub fn two_layer(mut search: SearchConfig, max_hidden: usize) -> Self {
        search.two_layer = true;
        if search.max_in_degree.is_none() {
            search.max_in_degree = Some(2);
        }
        SemConfig { search, max_outer: 50, tol: 1e-4, max_hidden }
    }
}

/// Deterministic informative seed for the first hidden column: the average
/// of the standardized observed columns, standardized again.
fn first_factor_seed(data: &Dataset) -> Profile {
    let std = data.standardized();
    let m = data.n_instances();
    let mut seed = Profile::zeros(m);
    for j in 0..std.n_vars() {
        for i in 0..m {
            if std.is_observed(i, j) {
                seed[i] += std.value(i, j);
            }
        }
    }
    let mu = seed.iter().sum::<f64>() / m as f64;
    seed.iter_mut().for_each(|v| *v -= mu);
    let sd = (seed.dot(&seed) / m as f64).sqrt();
    if sd > 1e-12 {
        seed /= sd;
    }
    seed
}

fn expected_bic(graph: &NetworkGraph, ev: &Evidence) -> f64 {
    crate::cpd::bic_score_ev(graph, ev).bic
}

/// The free-energy analogue of the BIC: expected complete log-likelihood
/// plus posterior entropy, minus the parameter penalty. Unlike the expected
/// BIC at a fixed posterior, this is comparable across (structure,
/// posterior) pairs and is the right currency for decisions that re-run the
/// E-step.
fn em_objective(graph: &NetworkGraph, data: &Dataset, q: &PosteriorMoments) -> f64 {
    let m = data.n_instances() as f64;
    let dim: usize = (0..graph.n_nodes())
        .map(|i| family_dim(graph.node(i).kind, graph.parents(i).len()))
        .sum();
    variational_objective(graph, data, q) - m.ln() / 2.0 * dim as f64
}

/// Backward pruning with posterior refresh. Structure search under a fixed
/// posterior cannot remove an edge whose gain is self-reinforcing (the
/// posterior mean of a hidden parent absorbs the child's own residual while
/// the edge exists), so each candidate removal is evaluated after letting
/// the posterior re-converge. Removals that improve the free-energy score
/// are kept, weakest scales first.
fn prune_with_posterior_refresh(
    graph: &mut NetworkGraph,
    data: &Dataset,
    q: &mut PosteriorMoments,
    search: &SearchConfig,
) -> Result<usize> {
    let mut removed = 0;
    loop {
        let base = em_objective(graph, data, q);
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for c in 0..graph.n_nodes() {
            for (pos, &p) in graph.parents(c).iter().enumerate() {
                edges.push((p, c, graph.params(c).alpha[pos].abs()));
            }
        }
        edges.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut improved = false;
        for (p, c, _) in edges {
            let mut trial = graph.clone();
            trial.remove_edge(p, c);
            let mut tq = q.clone();
            // a few EM alternations so a locked-in posterior can dissolve
            for _ in 0..3 {
                fit_all_families(&mut trial, &tq.evidence());
                let (new_q, _) = mean_field_e_step(&trial, data, &tq)?;
                tq = new_q;
            }
            fit_all_families(&mut trial, &tq.evidence());
            let f = em_objective(&trial, data, &tq);
            if f > base + 1e-9 {
                *graph = trial;
                *q = tq;
                removed += 1;
                improved = true;
                break;
            }
        }
        if !improved {
            break;
        }
    }
    let _ = search;
    Ok(removed)
}

/// EM-wrapped structure learning. Fully observed data without a latent
/// request reduces to one plain search call (bit-identical results). With
/// missing values the loop alternates mean-field E-steps with expected-
/// score search; in two-layer mode hidden variables are introduced
/// gradually, starting from a single hidden root wired to every observed
/// variable.
pub fn structural_em(data: &Dataset, config: &SemConfig) -> Result<(NetworkGraph, SemTrace)> {
    let started = std::time::Instant::now();
    let two_layer = config.search.two_layer;
    if data.is_fully_observed() && !two_layer {
        let (graph, trace) = greedy_search(data, &config.search, None)?;
        let counters = trace.counters.clone();
        return Ok((
            graph,
            SemTrace {
                outer_records: vec![],
                search_traces: vec![trace],
                counters,
                wall_seconds: started.elapsed().as_secs_f64(),
                seed: config.search.seed,
                delegated: true,
            },
        ));
    }

    let mut graph = NetworkGraph::edgeless(data.names(), config.search.cpd);
    if two_layer {
        let h0 = graph.add_hidden_node(
            "H0".into(),
            CpdKind::LinearGaussian,
            FamilyParams::gaussian_root(0.0, 1.0),
        );
        for child in 0..data.n_vars() {
            graph.add_edge(h0, child, 0.1);
        }
    }
    let mut q = PosteriorMoments::init(&graph, data)?;
    if two_layer {
        let seed_profile = first_factor_seed(data);
        let h0 = graph.hidden_nodes()[0];
        q.set_profile(h0, &seed_profile, 1.0);
        // initial parameter pass so the first E-step sees a sensible model
        fit_all_families(&mut graph, &q.evidence());
    }

    let mut outer_records = Vec::new();
    let mut search_traces = Vec::new();
    let mut counters = Counters::default();
    let mut prev_score = f64::NEG_INFINITY;
    let mut epoch_best: Option<(f64, NetworkGraph, PosteriorMoments)> = None;

    for outer in 1..=config.max_outer {
        let (new_q, e_report) = mean_field_e_step(&graph, data, &q)?;
        q = new_q;
        standardize_hidden(&mut graph, &mut q);

        let ev = q.evidence();
        let (new_graph, strace) = search_evidence(graph.clone(), &ev, &config.search)?;
        graph = new_graph;
        let score = expected_bic(&graph, &ev);
        counters.exact_add_replace += strace.counters.exact_add_replace;
        counters.exact_delete_reverse += strace.counters.exact_delete_reverse;
        counters.screening += strace.counters.screening;
        counters.moves += strace.counters.moves;
        counters.perturbation_rounds += strace.counters.perturbation_rounds;
        let moves = strace.counters.moves;
        search_traces.push(strace);

        if epoch_best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            epoch_best = Some((score, graph.clone(), q.clone()));
        }

        let mut inserted = false;
        if two_layer && graph.hidden_nodes().len() < config.max_hidden {
            let observed = graph.observed_nodes();
            let mut ids = Vec::new();
            let mut profiles = Vec::new();
            for &child in &observed {
                if let Ok(p) = expected_ideal_profile(&graph, &q, child) {
                    ids.push(child);
                    profiles.push(p);
                }
            }
            let refs: Vec<&IdealProfile> = profiles.iter().collect();
            if ids.len() >= 2 {
                if let Ok(cluster) = agglomerate_clusters(&ids, &refs, data.n_instances()) {
                    if cluster.bic_delta_estimate > 0.0 && cluster.members.len() >= 2 {
                        let member_profiles: Vec<&IdealProfile> = cluster
                            .members
                            .iter()
                            .map(|m| {
                                let pos = ids.iter().position(|i| i == m).unwrap();
                                refs[pos]
                            })
                            .collect();
                        if let Ok(out) = insert_hidden_variable(
                            &graph,
                            &cluster,
                            &member_profiles,
                            &config.search.constraints(),
                        ) {
                            graph = out.graph;
                            // grow the moments and seed the new column
                            let m = q.n_instances();
                            let mut mean = DMatrix::zeros(m, graph.n_nodes());
                            let mut second = DMatrix::zeros(m, graph.n_nodes());
                            mean.view_mut((0, 0), (m, q.n_columns())).copy_from(&q.mean);
                            second.view_mut((0, 0), (m, q.n_columns())).copy_from(&q.second);
                            q = PosteriorMoments { mean, second };
                            let mut zs = cluster.zstar.clone();
                            let mu = zs.iter().sum::<f64>() / m as f64;
                            zs.iter_mut().for_each(|v| *v -= mu);
                            let sd = (zs.dot(&zs) / m as f64).sqrt().max(1e-12);
                            zs /= sd;
                            q.set_profile(out.node, &zs, 1.0);
                            inserted = true;
                            epoch_best = None; // scores not comparable across node counts
                        }
                    }
                }
            }
        }

        outer_records.push(SemOuterRecord {
            outer,
            e_step_sweeps: e_report.sweeps,
            expected_bic: score,
            moves,
            hidden_count: graph.hidden_nodes().len(),
            inserted_hidden: inserted,
        });

        if !inserted {
            if (score - prev_score).abs() < config.tol {
                break;
            }
            prev_score = score;
        } else {
            prev_score = f64::NEG_INFINITY;
        }
    }

    if let Some((_, g, bq)) = epoch_best {
        graph = g;
        q = bq;
    }

    // backward pass with posterior refresh to undo locked-in edges
    prune_with_posterior_refresh(&mut graph, data, &mut q, &config.search)?;

    // prune hidden nodes that ended up with no children
    let childless: Vec<usize> =
        graph.hidden_nodes().into_iter().filter(|&h| graph.children(h).is_empty()).collect();
    if !childless.is_empty() {
        let keep: Vec<usize> = (0..graph.n_nodes()).filter(|i| !childless.contains(i)).collect();
        graph.remove_nodes(&childless);
        q = q.keep_columns(&keep);
        fit_all_families(&mut graph, &q.evidence());
    }

    Ok((
        graph,
        SemTrace {
            outer_records,
            search_traces,
            counters,
            wall_seconds: started.elapsed().as_secs_f64(),
            seed: config.search.seed,
            delegated: false,
        },
    ))
}
