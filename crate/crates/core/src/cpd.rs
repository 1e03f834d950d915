//! Conditional density evaluation, maximum-likelihood fitting, local
//! log-likelihood, BIC, and the exact delta-score used both for final
//! candidate scoring and as the quantity the similarity bounds approximate.
//!
//! All log-likelihoods are in nats.
//!
//! Every scorer here runs on an [`Evidence`] view: per-cell means plus
//! optional per-cell variances. Fully observed data is the zero-variance
//! special case, so the expected-statistics path of the EM module shares
//! this code instead of reimplementing it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, FamilyParams, NetworkGraph, Profile, Theta};

/// Noise variances are floored here to keep log-densities finite on
/// noiseless synthetic data.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Ridge term added to the normal equations; collinear candidates occur
/// constantly during screening.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Sigmoid optimizer contract: stop when the gradient infinity-norm drops
/// below [`GRADIENT_TOL`] or after this many iterations.
pub const SIGMOID_MAX_ITER: usize = 200;
pub const GRADIENT_TOL: f64 = 1e-6;

/// Conditional-density family of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpdKind {
    LinearGaussian,
    Sigmoid,
}

/// Number of free parameters of one family: `k` parent scales, the link
/// parameters, and the noise variance.
pub fn family_dim(kind: CpdKind, n_parents: usize) -> usize {
    match kind {
        CpdKind::LinearGaussian => n_parents + 2,
        CpdKind::Sigmoid => n_parents + 3,
    }
}

/// Numerically stable logistic function.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean prediction for one instance given per-parent values.
pub fn predict_mean(params: &FamilyParams, parent_values: &[f64]) -> f64 {
    debug_assert_eq!(params.alpha.len(), parent_values.len());
    let t: f64 = params.alpha.iter().zip(parent_values).map(|(a, u)| a * u).sum();
    match params.theta {
        Theta::Linear { theta0 } => t + theta0,
        Theta::Sigmoid { theta0, theta1 } => theta0 + theta1 * logistic(t),
    }
}

/// Per-instance mean predictions for a whole column.
pub fn predict_profile(params: &FamilyParams, parents: &DMatrix<f64>) -> Profile {
    let m = parents.nrows();
    let k = parents.ncols();
    debug_assert_eq!(params.alpha.len(), k);
    let mut out = DVector::zeros(m);
    for i in 0..m {
        let mut t = 0.0;
        for j in 0..k {
            t += params.alpha[j] * parents[(i, j)];
        }
        out[i] = match params.theta {
            Theta::Linear { theta0 } => t + theta0,
            Theta::Sigmoid { theta0, theta1 } => theta0 + theta1 * logistic(t),
        };
    }
    out
}

/// Optional per-cell variances accompanying mean columns. `None` means all
/// zero (fully observed).
type VarView<'a> = Option<(&'a Profile, &'a DMatrix<f64>)>;

/// Shared Gaussian log-likelihood core. With variances present the expected
/// squared error adds the child variance and, for linear links, the
/// alpha-weighted parent variances (cross terms vanish under a factorized
/// posterior). Sigmoid links use the plug-in mean for the non-linear part.
fn loglik_core(
    params: &FamilyParams,
    child: &Profile,
    parents: &DMatrix<f64>,
    vars: VarView<'_>,
) -> f64 {
    let m = child.len();
    let k = parents.ncols();
    debug_assert_eq!(params.alpha.len(), k);
    let sigma2 = params.sigma2.max(VARIANCE_FLOOR);
    let norm = -0.5 * (std::f64::consts::TAU * sigma2).ln();
    let inv2s = 1.0 / (2.0 * sigma2);
    let mut ll = 0.0;
    for i in 0..m {
        let mut t = 0.0;
        for j in 0..k {
            t += params.alpha[j] * parents[(i, j)];
        }
        let pred = match params.theta {
            Theta::Linear { theta0 } => t + theta0,
            Theta::Sigmoid { theta0, theta1 } => theta0 + theta1 * logistic(t),
        };
        let r = child[i] - pred;
        let mut e2 = r * r;
        if let Some((vc, vp)) = vars {
            e2 += vc[i];
            if matches!(params.theta, Theta::Linear { .. }) {
                for j in 0..k {
                    e2 += params.alpha[j] * params.alpha[j] * vp[(i, j)];
                }
            }
        }
        ll += norm - e2 * inv2s;
    }
    ll
}

/// Local log-likelihood of a fully observed family under the given
/// parameters. Sub-floor variances are clamped to [`VARIANCE_FLOOR`].
pub fn family_loglik(params: &FamilyParams, child: &Profile, parents: &DMatrix<f64>) -> f64 {
    loglik_core(params, child, parents, None)
}

/// Result of a family fit.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: FamilyParams,
    pub loglik: f64,
    /// The residual variance hit [`VARIANCE_FLOOR`].
    pub variance_floored: bool,
    /// The normal equations needed an escalated ridge to factor.
    pub ridge_fallback: bool,
    /// Gradient tolerance reached (always true for the closed-form linear
    /// fit).
    pub converged: bool,
}

fn fit_linear_core(child: &Profile, parents: &DMatrix<f64>, vars: VarView<'_>) -> FitOutcome {
    let m = child.len();
    let k = parents.ncols();
    let n = k + 1; // scales + intercept
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for i in 0..m {
        for p in 0..k {
            let up = parents[(i, p)];
            for q in p..k {
                a[(p, q)] += up * parents[(i, q)];
            }
            a[(p, k)] += up;
            b[p] += up * child[i];
        }
        b[k] += child[i];
    }
    a[(k, k)] = m as f64;
    if let Some((_, vp)) = vars {
        for p in 0..k {
            let mut s = 0.0;
            for i in 0..m {
                s += vp[(i, p)];
            }
            a[(p, p)] += s;
        }
    }
    for p in 0..n {
        for q in 0..p {
            a[(p, q)] = a[(q, p)];
        }
    }

    // The intercept row is not penalized so an orphan fit recovers the
    // sample mean exactly.
    let mut ridge = RIDGE_LAMBDA;
    let mut ridge_fallback = false;
    let beta = loop {
        let mut areg = a.clone();
        for p in 0..k {
            areg[(p, p)] += ridge;
        }
        if let Some(chol) = areg.cholesky() {
            break chol.solve(&b);
        }
        ridge *= 100.0;
        ridge_fallback = true;
        if ridge > 1.0 {
            // last resort: regularize everything, including the intercept
            let mut areg = a.clone();
            for p in 0..n {
                areg[(p, p)] += ridge;
            }
            break areg
                .cholesky()
                .map(|c| c.solve(&b))
                .unwrap_or_else(|| DVector::zeros(n));
        }
    };

    let alpha: Vec<f64> = (0..k).map(|j| beta[j]).collect();
    let theta0 = beta[k];
    let mut sse = 0.0;
    for i in 0..m {
        let mut pred = theta0;
        for j in 0..k {
            pred += alpha[j] * parents[(i, j)];
        }
        let r = child[i] - pred;
        sse += r * r;
        if let Some((vc, vp)) = vars {
            sse += vc[i];
            for j in 0..k {
                sse += alpha[j] * alpha[j] * vp[(i, j)];
            }
        }
    }
    let raw_sigma2 = sse / m as f64;
    let variance_floored = raw_sigma2 < VARIANCE_FLOOR;
    let params = FamilyParams {
        alpha,
        theta: Theta::Linear { theta0 },
        sigma2: raw_sigma2.max(VARIANCE_FLOOR),
    };
    let loglik = loglik_core(&params, child, parents, vars);
    FitOutcome { params, loglik, variance_floored, ridge_fallback, converged: true }
}

/// Closed-form (ridge-regularized) maximum-likelihood fit of a linear
/// Gaussian family.
pub fn fit_linear_gaussian(child: &Profile, parents: &DMatrix<f64>) -> FitOutcome {
    fit_linear_core(child, parents, None)
}

/// Sum of squared prediction errors of a sigmoid family and its gradient in
/// the packed parameter vector `[alpha_0..alpha_{k-1}, theta0, theta1]`.
pub fn sigmoid_sse_and_grad(
    v: &DVector<f64>,
    child: &Profile,
    parents: &DMatrix<f64>,
) -> (f64, DVector<f64>) {
    let m = child.len();
    let k = parents.ncols();
    debug_assert_eq!(v.len(), k + 2);
    let theta0 = v[k];
    let theta1 = v[k + 1];
    let mut sse = 0.0;
    let mut grad = DVector::zeros(k + 2);
    for i in 0..m {
        let mut t = 0.0;
        for j in 0..k {
            t += v[j] * parents[(i, j)];
        }
        let s = logistic(t);
        let r = child[i] - (theta0 + theta1 * s);
        sse += r * r;
        let ds = theta1 * s * (1.0 - s);
        for j in 0..k {
            grad[j] += -2.0 * r * ds * parents[(i, j)];
        }
        grad[k] += -2.0 * r;
        grad[k + 1] += -2.0 * r * s;
    }
    (sse, grad)
}

/// BFGS with Armijo backtracking. Returns the best iterate, its value, and
/// whether the gradient tolerance was met.
fn bfgs<F>(f: F, x0: DVector<f64>, max_iter: usize, gtol: f64) -> (DVector<f64>, f64, bool)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return (x, fx, false);
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    for _ in 0..max_iter {
        if g.amax() < gtol {
            return (x, fx, true);
        }
        let mut dir = -(&h * &g);
        let mut dd = dir.dot(&g);
        if !(dd < 0.0) || !dd.is_finite() {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            dd = -g.dot(&g);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let xn = &x + &dir * step;
            let (fxn, gn) = f(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * step * dd {
                let s = &xn - &x;
                let y = &gn - &g;
                let sy = s.dot(&y);
                if sy > 1e-12 {
                    if first {
                        let yy = y.dot(&y);
                        if yy > 0.0 {
                            h *= sy / yy;
                        }
                        first = false;
                    }
                    let rho = 1.0 / sy;
                    let hy = &h * &y;
                    let yhy = y.dot(&hy);
                    // H <- (I - rho s y')H(I - rho y s') + rho s s'
                    let ss = &s * s.transpose();
                    let hys = &hy * s.transpose();
                    h = &h - (&hys + hys.transpose()) * rho + &ss * (rho * rho * yhy + rho);
                }
                x = xn;
                fx = fxn;
                g = gn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (x, fx, false);
        }
    }
    (x, fx, g.amax() < gtol)
}

fn jitter_start(base: &DVector<f64>, k: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut v = base.clone();
    let scale = base[k + 1].abs().max(1.0);
    for j in 0..k {
        v[j] += 0.3 * (rng.random::<f64>() * 2.0 - 1.0);
    }
    v[k] += 0.1 * scale * (rng.random::<f64>() * 2.0 - 1.0);
    v[k + 1] *= 1.0 + 0.2 * (rng.random::<f64>() * 2.0 - 1.0);
    if v[k + 1].abs() < 1e-3 {
        v[k + 1] = 1e-3 * scale;
    }
    v
}

fn fit_sigmoid_core(
    child: &Profile,
    parents: &DMatrix<f64>,
    vars: VarView<'_>,
    init: Option<&FamilyParams>,
) -> FitOutcome {
    let m = child.len();
    let k = parents.ncols();
    let extra_var: f64 = match vars {
        Some((vc, _)) => vc.iter().sum(),
        None => 0.0,
    };

    if k == 0 {
        // No parents: the prediction is the constant theta0 + theta1/2, so
        // match the sample mean and let theta1 span the data range to keep
        // the link image over the data.
        let mean = child.iter().sum::<f64>() / m as f64;
        let (lo, hi) = child.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
            (l.min(x), h.max(x))
        });
        let theta1 = if hi > lo { hi - lo } else { 1.0 };
        let theta0 = mean - theta1 / 2.0;
        let sse: f64 = child.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() + extra_var;
        let raw = sse / m as f64;
        let params = FamilyParams {
            alpha: Vec::new(),
            theta: Theta::Sigmoid { theta0, theta1 },
            sigma2: raw.max(VARIANCE_FLOOR),
        };
        let loglik = loglik_core(&params, child, parents, vars);
        return FitOutcome {
            params,
            loglik,
            variance_floored: raw < VARIANCE_FLOOR,
            ridge_fallback: false,
            converged: true,
        };
    }

    let base = match init {
        Some(p) if p.alpha.len() == k => {
            let (theta0, theta1) = match p.theta {
                Theta::Sigmoid { theta0, theta1 } => (theta0, theta1),
                Theta::Linear { theta0 } => (theta0, 1.0),
            };
            let mut v = DVector::zeros(k + 2);
            for j in 0..k {
                v[j] = p.alpha[j];
            }
            v[k] = theta0;
            v[k + 1] = if theta1.abs() < 1e-6 { 1e-3 } else { theta1 };
            v
        }
        _ => {
            let (lo, hi) = child.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
                (l.min(x), h.max(x))
            });
            let mut v = DVector::zeros(k + 2);
            v[k] = lo;
            v[k + 1] = if hi > lo { hi - lo } else { 1.0 };
            v
        }
    };

    let objective = |v: &DVector<f64>| sigmoid_sse_and_grad(v, child, parents);

    // Three starts: the base plus two jittered copies, best final kept.
    let mut rng = ChaCha8Rng::seed_from_u64(0x1DEA_1BF0);
    let starts = [base.clone(), jitter_start(&base, k, &mut rng), jitter_start(&base, k, &mut rng)];
    let mut best: Option<(DVector<f64>, f64, bool)> = None;
    for s in starts {
        let (x, fx, conv) = bfgs(objective, s, SIGMOID_MAX_ITER, GRADIENT_TOL);
        if best.as_ref().map_or(true, |(_, bf, _)| fx < *bf) {
            best = Some((x, fx, conv));
        }
    }
    let (v, sse, converged) = best.unwrap();
    let raw = (sse + extra_var) / m as f64;
    let alpha: Vec<f64> = (0..k).map(|j| v[j]).collect();
    let mut theta1 = v[k + 1];
    if theta1 == 0.0 {
        theta1 = 1e-8; // keep the link invertible
    }
    let params = FamilyParams {
        alpha,
        theta: Theta::Sigmoid { theta0: v[k], theta1 },
        sigma2: raw.max(VARIANCE_FLOOR),
    };
    let loglik = loglik_core(&params, child, parents, vars);
    FitOutcome {
        params,
        loglik,
        variance_floored: raw < VARIANCE_FLOOR,
        ridge_fallback: false,
        converged,
    }
}

/// Gradient-based fit of a sigmoid family (BFGS, Armijo line search, three
/// restarts from jittered initializations). On non-convergence the best
/// iterate is returned with `converged = false`.
pub fn fit_sigmoid(
    child: &Profile,
    parents: &DMatrix<f64>,
    init: Option<&FamilyParams>,
) -> FitOutcome {
    fit_sigmoid_core(child, parents, None, init)
}

/// Fit dispatch on family kind.
pub fn fit_family(
    kind: CpdKind,
    child: &Profile,
    parents: &DMatrix<f64>,
    init: Option<&FamilyParams>,
) -> FitOutcome {
    match kind {
        CpdKind::LinearGaussian => fit_linear_gaussian(child, parents),
        CpdKind::Sigmoid => fit_sigmoid(child, parents, init),
    }
}

// ---------------------------------------------------------------------------
// Evidence: the scoring view shared by observed-data and expected-statistics
// paths.

/// Per-cell means and optional variances for every node column. Fully
/// observed data has `var = None`; the EM module supplies posterior
/// variances.
#[derive(Debug, Clone)]
pub struct Evidence {
    mean: DMatrix<f64>,
    var: Option<DMatrix<f64>>,
}

impl Evidence {
    pub fn new(mean: DMatrix<f64>, var: Option<DMatrix<f64>>) -> Self {
        if let Some(v) = &var {
            debug_assert_eq!(v.shape(), mean.shape());
        }
        Evidence { mean, var }
    }

    /// Requires a fully observed dataset.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if !data.is_fully_observed() {
            return Err(Error::NotFullyObserved);
        }
        Ok(Evidence { mean: data.values().clone(), var: None })
    }

    pub fn n_instances(&self) -> usize {
        self.mean.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.mean.ncols()
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn mean_column(&self, j: usize) -> Profile {
        self.mean.column(j).into_owned()
    }

    pub fn mean_columns(&self, js: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_instances(), js.len());
        for (c, &j) in js.iter().enumerate() {
            out.set_column(c, &self.mean.column(j));
        }
        out
    }

    fn var_parts(&self, child: usize, js: &[usize]) -> Option<(Profile, DMatrix<f64>)> {
        self.var.as_ref().map(|v| {
            let vc = v.column(child).into_owned();
            let mut vp = DMatrix::zeros(self.n_instances(), js.len());
            for (c, &j) in js.iter().enumerate() {
                vp.set_column(c, &v.column(j));
            }
            (vc, vp)
        })
    }
}

/// Family log-likelihood (expected under the evidence variances when
/// present).
pub fn family_loglik_ev(
    ev: &Evidence,
    params: &FamilyParams,
    child: usize,
    parents: &[usize],
) -> f64 {
    let x = ev.mean_column(child);
    let u = ev.mean_columns(parents);
    let vars = ev.var_parts(child, parents);
    loglik_core(params, &x, &u, vars.as_ref().map(|(a, b)| (a, b)))
}

/// Family fit on the evidence view.
pub fn fit_family_ev(
    ev: &Evidence,
    kind: CpdKind,
    child: usize,
    parents: &[usize],
    init: Option<&FamilyParams>,
) -> FitOutcome {
    let x = ev.mean_column(child);
    let u = ev.mean_columns(parents);
    let vars = ev.var_parts(child, parents);
    let vars_ref = vars.as_ref().map(|(a, b)| (a, b));
    match kind {
        CpdKind::LinearGaussian => fit_linear_core(&x, &u, vars_ref),
        CpdKind::Sigmoid => fit_sigmoid_core(&x, &u, vars_ref, init),
    }
}

/// Refits every family's parameters in place.
pub fn fit_all_families(graph: &mut NetworkGraph, ev: &Evidence) {
    for i in 0..graph.n_nodes() {
        let parents = graph.parents(i).to_vec();
        let init = graph.params(i).clone();
        let fit = fit_family_ev(ev, graph.node(i).kind, i, &parents, Some(&init));
        graph.set_params(i, fit.params);
    }
}

// ---------------------------------------------------------------------------
// Scores.

/// One family's contribution to the network score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyScore {
    pub loglik: f64,
    pub dim: usize,
    pub bic: f64,
}

/// Per-family scores plus totals.
#[derive(Debug, Clone)]
pub struct NetworkScore {
    pub families: Vec<FamilyScore>,
    pub loglik: f64,
    pub dim: usize,
    pub bic: f64,
}

/// Scores the network with its current (fitted) parameters, on the evidence
/// view.
pub fn bic_score_ev(graph: &NetworkGraph, ev: &Evidence) -> NetworkScore {
    let m = ev.n_instances() as f64;
    let penalty_unit = m.ln() / 2.0;
    let mut families = Vec::with_capacity(graph.n_nodes());
    let mut total_ll = 0.0;
    let mut total_dim = 0;
    for i in 0..graph.n_nodes() {
        let ll = family_loglik_ev(ev, graph.params(i), i, graph.parents(i));
        let dim = family_dim(graph.node(i).kind, graph.parents(i).len());
        families.push(FamilyScore { loglik: ll, dim, bic: ll - penalty_unit * dim as f64 });
        total_ll += ll;
        total_dim += dim;
    }
    NetworkScore {
        families,
        loglik: total_ll,
        dim: total_dim,
        bic: total_ll - penalty_unit * total_dim as f64,
    }
}

/// BIC of a fully observed dataset under the graph's current parameters.
/// The graph must have one node per dataset column and no hidden nodes.
pub fn bic_score(graph: &NetworkGraph, data: &Dataset) -> Result<NetworkScore> {
    if graph.n_nodes() != data.n_vars() || !graph.hidden_nodes().is_empty() {
        return Err(Error::DimensionMismatch(
            "graph nodes must match dataset columns (no hidden nodes)".into(),
        ));
    }
    let ev = Evidence::from_dataset(data)?;
    Ok(bic_score_ev(graph, &ev))
}

/// Exact change in family score when `child`'s parent set becomes
/// `new_parents`: all parameters of the family are refit and the
/// log-likelihood difference against the current parameters is returned,
/// along with the BIC delta (penalty included).
#[derive(Debug, Clone)]
pub struct DeltaScore {
    pub delta_loglik: f64,
    pub delta_bic: f64,
    pub fit: FitOutcome,
}

/// Sigmoid refits warm-start from the current parameters (shared parents
/// keep their scales, new parents start at zero).
fn warm_init(graph: &NetworkGraph, child: usize, new_parents: &[usize]) -> FamilyParams {
    let cur = graph.params(child);
    let cur_parents = graph.parents(child);
    let alpha = new_parents
        .iter()
        .map(|p| {
            cur_parents
                .iter()
                .position(|cp| cp == p)
                .map_or(0.0, |pos| cur.alpha[pos])
        })
        .collect();
    FamilyParams { alpha, theta: cur.theta, sigma2: cur.sigma2 }
}

/// Evidence-view delta score (the quantity the similarity measures bound).
pub fn delta_family_score_ev(
    graph: &NetworkGraph,
    ev: &Evidence,
    child: usize,
    new_parents: &[usize],
) -> DeltaScore {
    let kind = graph.node(child).kind;
    let current_ll = family_loglik_ev(ev, graph.params(child), child, graph.parents(child));
    let init = warm_init(graph, child, new_parents);
    let fit = fit_family_ev(ev, kind, child, new_parents, Some(&init));
    let delta_loglik = fit.loglik - current_ll;
    let m = ev.n_instances() as f64;
    let dim_old = family_dim(kind, graph.parents(child).len()) as f64;
    let dim_new = family_dim(kind, new_parents.len()) as f64;
    let delta_bic = delta_loglik - m.ln() / 2.0 * (dim_new - dim_old);
    DeltaScore { delta_loglik, delta_bic, fit }
}

/// Fully-observed wrapper around [`delta_family_score_ev`].
pub fn delta_family_score_exact(
    graph: &NetworkGraph,
    data: &Dataset,
    child: usize,
    new_parents: &[usize],
) -> Result<DeltaScore> {
    let ev = Evidence::from_dataset(data)?;
    Ok(delta_family_score_ev(graph, &ev, child, new_parents))
}
