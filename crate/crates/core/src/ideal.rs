//! Ideal-parent profiles and the closed-form similarity measures that score
//! candidate parents against them.
//!
//! For a child X with parents U and link g, the ideal parent profile y is
//! the per-instance value a hypothetical extra (unit-scale) parent would
//! need for the link to reproduce X exactly. A candidate profile z is then
//! ranked by how much log-likelihood it could recover:
//!
//! - `c1`: gain when only the new parent's scale is optimized,
//!   (y.z)^2 / (2 sigma^2 z.z) — a lower bound on the exact refit gain.
//! - `c2`: gain when the noise variance is optimized too,
//!   -(M/2) log sin^2(angle(y, z)) — a tighter lower bound.
//!
//! Non-linear links distort the geometry: each instance is weighted by the
//! link derivative at the inversion point, and a z-independent correction
//! makes values comparable across families. The distorted measures are used
//! for ranking only; accepted moves are always rescored exactly.

use nalgebra::DMatrix;

use crate::cpd::{logistic, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::model::{FamilyParams, Profile, Theta};

/// Collinearity cap: sin^2 of the angle between y and z is floored here so a
/// perfect candidate wins screening instead of producing an infinity.
pub const SIN2_FLOOR: f64 = 1e-12;

/// Relative margin used to project out-of-image child values into the open
/// image interval of a saturating link before inversion.
pub const IMAGE_MARGIN: f64 = 1e-6;

/// An ideal-parent profile together with the per-instance link derivatives
/// and the family constants needed by the distorted similarity measures.
#[derive(Debug, Clone)]
pub struct IdealProfile {
    /// Values the hypothetical parent must take, one per instance.
    pub y: Profile,
    /// Link derivative at the inversion point per instance; all ones for
    /// linear links.
    pub weights: Profile,
    /// (y * w) . (y * w), the z-independent numerator constant.
    pub c1_const: f64,
    /// Squared prediction residual of the current family.
    pub c2_const: f64,
    /// The family's current noise variance.
    pub sigma2: f64,
}

impl IdealProfile {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.len() == 0
    }

    /// Component-wise weighted profile y * w (equal to y for linear links).
    pub fn weighted_y(&self) -> Profile {
        self.y.component_mul(&self.weights)
    }
}

/// Ideal profile of a linear Gaussian family: invert the sum link,
/// y[m] = x[m] - sum_j alpha_j u_j[m] - theta0. Weights are all ones and the
/// two correction constants coincide.
pub fn ideal_profile_linear(
    child: &Profile,
    parents: &DMatrix<f64>,
    params: &FamilyParams,
) -> IdealProfile {
    let theta0 = params.theta.theta0();
    let m = child.len();
    let k = parents.ncols();
    debug_assert_eq!(params.alpha.len(), k);
    let mut y = Profile::zeros(m);
    for i in 0..m {
        let mut t = theta0;
        for j in 0..k {
            t += params.alpha[j] * parents[(i, j)];
        }
        y[i] = child[i] - t;
    }
    let yy = y.dot(&y);
    IdealProfile {
        y,
        weights: Profile::from_element(m, 1.0),
        c1_const: yy,
        c2_const: yy,
        sigma2: params.sigma2,
    }
}

/// Ideal profile of a sigmoid family. The child value is projected into the
/// open link image with a small margin, the link is inverted for the free
/// slot, and each instance is weighted by the link derivative there.
pub fn ideal_profile_sigmoid(
    child: &Profile,
    parents: &DMatrix<f64>,
    params: &FamilyParams,
) -> Result<IdealProfile> {
    let (theta0, theta1) = match params.theta {
        Theta::Sigmoid { theta0, theta1 } => (theta0, theta1),
        Theta::Linear { .. } => {
            return Err(Error::InvalidConfig("sigmoid profile on a linear family".into()))
        }
    };
    if theta1 == 0.0 {
        return Err(Error::DegenerateLink);
    }
    let m = child.len();
    let k = parents.ncols();
    debug_assert_eq!(params.alpha.len(), k);
    let mut y = Profile::zeros(m);
    let mut weights = Profile::zeros(m);
    let mut c2 = 0.0;
    for i in 0..m {
        let mut t = 0.0;
        for j in 0..k {
            t += params.alpha[j] * parents[(i, j)];
        }
        // fraction of the way through the image, clamped into the open
        // interval
        let s = ((child[i] - theta0) / theta1).clamp(IMAGE_MARGIN, 1.0 - IMAGE_MARGIN);
        y[i] = (s / (1.0 - s)).ln() - t;
        weights[i] = theta1 * s * (1.0 - s);
        let x_proj = theta0 + theta1 * s;
        let pred = theta0 + theta1 * logistic(t);
        let r = x_proj - pred;
        c2 += r * r;
    }
    let yw = y.component_mul(&weights);
    Ok(IdealProfile { y, weights, c1_const: yw.dot(&yw), c2_const: c2, sigma2: params.sigma2 })
}

/// Profile dispatch on family kind.
pub fn ideal_profile(
    child: &Profile,
    parents: &DMatrix<f64>,
    params: &FamilyParams,
) -> Result<IdealProfile> {
    match params.theta {
        Theta::Linear { .. } => Ok(ideal_profile_linear(child, parents, params)),
        Theta::Sigmoid { .. } => ideal_profile_sigmoid(child, parents, params),
    }
}

/// Ideal profile for replacing one existing parent: the replaced parent is
/// dropped from the frozen sum (its scale excluded) and the new parent takes
/// the free unit-scale slot. All other parameters stay frozen.
pub fn replacement_profile(
    child: &Profile,
    parents: &DMatrix<f64>,
    params: &FamilyParams,
    replaced: usize,
) -> Result<IdealProfile> {
    let k = parents.ncols();
    if replaced >= k {
        return Err(Error::DimensionMismatch(format!(
            "replaced parent index {replaced} out of {k}"
        )));
    }
    let m = child.len();
    let keep: Vec<usize> = (0..k).filter(|&j| j != replaced).collect();
    let mut reduced = DMatrix::zeros(m, k - 1);
    for (jj, &j) in keep.iter().enumerate() {
        reduced.set_column(jj, &parents.column(j));
    }
    let reduced_params = FamilyParams {
        alpha: keep.iter().map(|&j| params.alpha[j]).collect(),
        theta: params.theta,
        sigma2: params.sigma2,
    };
    ideal_profile(child, &reduced, &reduced_params)
}

/// Squared projection length (y.z)^2 / z.z; 0 for a zero-norm candidate.
fn alignment(y: &Profile, z: &Profile) -> f64 {
    let zz = z.dot(z);
    if zz <= 0.0 {
        return 0.0;
    }
    let yz = y.dot(z);
    yz * yz / zz
}

pub(crate) fn c1_raw(y: &Profile, z: &Profile, sigma2: f64) -> f64 {
    alignment(y, z) / (2.0 * sigma2.max(VARIANCE_FLOOR))
}

pub(crate) fn c2_raw(y: &Profile, z: &Profile) -> f64 {
    let yy = y.dot(y);
    if yy <= 0.0 {
        return 0.0;
    }
    let q = alignment(y, z);
    if q == 0.0 {
        return 0.0;
    }
    let m = y.len() as f64;
    let sin2 = (1.0 - (q / yy).min(1.0)).max(SIN2_FLOOR);
    -(m / 2.0) * sin2.ln()
}

/// Log-likelihood gain from adding candidate `z`, freezing everything but
/// the new parent's scale. Exact for linear families whose parameters are at
/// their maximum-likelihood values.
pub fn c1(profile: &IdealProfile, z: &Profile) -> f64 {
    c1_raw(&profile.y, z, profile.sigma2)
}

/// Log-likelihood gain when the noise variance is re-optimized as well:
/// -(M/2) log sin^2 of the angle between the profile and the candidate,
/// capped at [`SIN2_FLOOR`] for collinear candidates.
pub fn c2(profile: &IdealProfile, z: &Profile) -> f64 {
    c2_raw(&profile.y, z)
}

/// Which similarity measure a distorted evaluation parallels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    C1,
    C2,
}

/// Similarity under the first-order linearization of a non-linear link: the
/// geometry is distorted by the per-instance link derivatives and a
/// z-independent correction aligns values across families. For linear links
/// this reduces bit-exactly to the plain measures.
pub fn distorted_similarity(profile: &IdealProfile, z: &Profile, kind: SimilarityKind) -> f64 {
    let yw = profile.y.component_mul(&profile.weights);
    let zw = z.component_mul(&profile.weights);
    match kind {
        SimilarityKind::C1 => {
            c1_raw(&yw, &zw, profile.sigma2)
                - (profile.c1_const - profile.c2_const)
                    / (2.0 * profile.sigma2.max(VARIANCE_FLOOR))
        }
        SimilarityKind::C2 => {
            let m = profile.len() as f64;
            let c2c = profile.c2_const.max(VARIANCE_FLOOR);
            c2_raw(&yw, &zw) - (m / 2.0) * (profile.c1_const / c2c).ln()
        }
    }
}
