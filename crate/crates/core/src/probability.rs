//! Collision-probability upper bounds for a robot ellipsoid whose center is
//! Gaussian, against single ellipsoids and against a surface model.
//!
//! The collision operator `Ā` and the threshold `1/λ²` are frozen at the mean
//! center; only `v = yᵀĀy` is treated as random. Its first two moments are
//! exact for Gaussian `y`, and the bound
//!
//! ```text
//! P(v ≤ 1/λ²) ≤ η√V / (E + η√V − 1/λ²)
//! ```
//!
//! is evaluated with `η = 0.25, 0.75, 1.25, …` until the denominator is
//! positive.

use nalgebra::{SMatrix, SVector};

use crate::distance::{self, pair_distance, surface_distance};
use crate::error::{GsmError, Result};
use crate::geometry::Ellipsoid;
use crate::linalg::{self, SymmetricEigen};
use crate::surface_model::SurfaceModel;

pub const ETA_START: f64 = 0.25;
pub const ETA_STEP: f64 = 0.5;
pub const MAX_ESCALATIONS: usize = 50;
pub const DEFAULT_NEIGHBOURS: usize = 9;

const SYMMETRY_TOL: f64 = 1e-10;

/// Gaussian position of the robot center.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainCenter<const D: usize> {
    mean: SVector<f64, D>,
    covariance: SMatrix<f64, D, D>,
}

impl<const D: usize> UncertainCenter<D> {
    /// `covariance` must be symmetric and positive semidefinite; a zero
    /// matrix is the deterministic limit.
    pub fn new(mean: SVector<f64, D>, covariance: SMatrix<f64, D, D>) -> Result<Self> {
        if linalg::asymmetry(&covariance) > SYMMETRY_TOL {
            return Err(GsmError::InvalidParameter("covariance is not symmetric".into()));
        }
        let covariance = (covariance + covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(&covariance)?;
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if eig.eigenvalues[0] < -1e-12 * scale {
            return Err(GsmError::NotPositiveDefinite {
                min_eigenvalue: eig.eigenvalues[0],
            });
        }
        Ok(Self { mean, covariance })
    }

    /// `N(mean, σ² I)`
    pub fn isotropic(mean: SVector<f64, D>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(GsmError::InvalidParameter(format!("variance {variance}")));
        }
        Self::new(mean, SMatrix::identity() * variance)
    }

    pub fn deterministic(mean: SVector<f64, D>) -> Self {
        Self {
            mean,
            covariance: SMatrix::zeros(),
        }
    }

    pub fn mean(&self) -> &SVector<f64, D> {
        &self.mean
    }

    pub fn covariance(&self) -> &SMatrix<f64, D, D> {
        &self.covariance
    }

    pub fn with_mean(&self, mean: SVector<f64, D>) -> Self {
        Self {
            mean,
            covariance: self.covariance,
        }
    }
}

/// How a [`ProbabilityResult`] was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// The moment bound with a positive denominator.
    Moment,
    /// The robot collides at its mean center; the bound is 1.
    MeanColliding,
    /// No `η` within the escalation cap made the denominator positive; the
    /// bound is 1.
    EscalationCapped,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbabilityResult {
    /// Upper bound on the collision probability, in `[0, 1]`.
    pub bound: f64,
    /// `E[v]` (`NaN` when the mean configuration collides).
    pub expectation: f64,
    /// `V[v]` (`NaN` when the mean configuration collides).
    pub variance: f64,
    pub eta: f64,
    /// Collision threshold `1/λ²`.
    pub inv_lambda_sq: f64,
    pub escalations: usize,
    pub kind: BoundKind,
}

impl ProbabilityResult {
    pub fn is_degraded(&self) -> bool {
        self.kind == BoundKind::EscalationCapped
    }

    fn mean_colliding() -> Self {
        Self {
            bound: 1.0,
            expectation: f64::NAN,
            variance: f64::NAN,
            eta: ETA_START,
            inv_lambda_sq: f64::NAN,
            escalations: 0,
            kind: BoundKind::MeanColliding,
        }
    }
}

/// Exact mean and variance of `v = (c − b)ᵀ Ā (c − b)` for `b ~ N(μ, Σ)`.
pub fn quadratic_form_moments<const D: usize>(
    a_bar: &SMatrix<f64, D, D>,
    c: &SVector<f64, D>,
    center: &UncertainCenter<D>,
) -> (f64, f64) {
    let y = c - center.mean;
    let a_sigma = a_bar * center.covariance;
    let a_y = a_bar * y;
    let expectation = a_sigma.trace() + y.dot(&a_y);
    let variance = 2.0 * (a_sigma * a_sigma).trace() + 4.0 * a_y.dot(&(center.covariance * a_y));
    (expectation, variance.max(0.0))
}

/// The moment bound at a fixed `η`, or `None` when its denominator is not
/// positive. Not clamped.
pub fn bound_at_eta(expectation: f64, variance: f64, inv_lambda_sq: f64, eta: f64) -> Option<f64> {
    let spread = eta * variance.sqrt();
    let denominator = expectation + spread - inv_lambda_sq;
    (denominator > 0.0).then(|| spread / denominator)
}

/// Smallest `η` on the escalation ladder with a positive denominator.
pub fn escalate(expectation: f64, variance: f64, inv_lambda_sq: f64) -> ProbabilityResult {
    for k in 0..=MAX_ESCALATIONS {
        let eta = ETA_START + ETA_STEP * k as f64;
        if let Some(b) = bound_at_eta(expectation, variance, inv_lambda_sq, eta) {
            return ProbabilityResult {
                bound: b.clamp(0.0, 1.0),
                expectation,
                variance,
                eta,
                inv_lambda_sq,
                escalations: k,
                kind: BoundKind::Moment,
            };
        }
    }
    ProbabilityResult {
        bound: 1.0,
        expectation,
        variance,
        eta: ETA_START + ETA_STEP * MAX_ESCALATIONS as f64,
        inv_lambda_sq,
        escalations: MAX_ESCALATIONS,
        kind: BoundKind::EscalationCapped,
    }
}

/// Collision-probability bound for `robot` (shape only; its center is
/// replaced by `center.mean`) against `obstacle`.
pub fn pair_collision_probability<const D: usize>(
    robot: &Ellipsoid<D>,
    center: &UncertainCenter<D>,
    obstacle: &Ellipsoid<D>,
) -> Result<ProbabilityResult> {
    let robot = robot.translated_to(center.mean);
    if distance::centers_overlap(&robot, obstacle) {
        return Ok(ProbabilityResult::mean_colliding());
    }
    let stage = distance::first_stage(&robot, obstacle)?;
    if distance::collides_given_stage(&robot, &stage)? {
        return Ok(ProbabilityResult::mean_colliding());
    }
    let a_bar = distance::collision_operator(&robot, &stage)?;
    let (expectation, variance) = quadratic_form_moments(&a_bar, obstacle.center(), center);
    Ok(escalate(expectation, variance, 1.0 / (stage.lambda * stage.lambda)))
}

/// Robot-facing flattest direction of a component ellipsoid.
pub fn facing_normal<const D: usize>(component: &Ellipsoid<D>, robot_center: &SVector<f64, D>) -> SVector<f64, D> {
    let n = component.shortest_axis();
    if n.dot(&(robot_center - component.center())) < 0.0 {
        -n
    } else {
        n
    }
}

/// `max(0, ∇d · n̂)` for one component.
pub fn blend_weight<const D: usize>(
    robot_center: &SVector<f64, D>,
    component: &Ellipsoid<D>,
    gradient: &SVector<f64, D>,
) -> f64 {
    gradient.dot(&facing_normal(component, robot_center)).max(0.0)
}

pub fn blend_weights<const D: usize>(
    robot_center: &SVector<f64, D>,
    components: &[(&Ellipsoid<D>, SVector<f64, D>)],
) -> Vec<f64> {
    components
        .iter()
        .map(|(e, g)| blend_weight(robot_center, e, g))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlendValidity {
    Blended,
    /// Every weight vanished (or a bound hit the escalation cap); the value
    /// is the closest component's bound.
    Degraded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlendContribution<const D: usize> {
    pub component: usize,
    pub weight: f64,
    pub probability: ProbabilityResult,
    /// Distance gradient at the mean center; `None` when colliding.
    pub gradient: Option<SVector<f64, D>>,
    pub normal: SVector<f64, D>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlendedProbability<const D: usize> {
    pub value: f64,
    pub contributions: Vec<BlendContribution<D>>,
    pub validity: BlendValidity,
}

/// Blends the bounds of the `k` components whose means are nearest to the
/// mean robot center. If the mean robot already touches a retained
/// component the value is 1.
pub fn surface_collision_probability<const D: usize>(
    robot: &Ellipsoid<D>,
    center: &UncertainCenter<D>,
    model: &SurfaceModel<D>,
    k: usize,
) -> Result<BlendedProbability<D>> {
    let neighbours = model.knn(center.mean(), k)?;
    let at_mean = robot.translated_to(center.mean);
    let mut contributions = Vec::with_capacity(neighbours.len());
    for m in neighbours {
        let e = &model.ellipsoids()[m];
        let sol = pair_distance(&at_mean, e)?;
        let gradient = sol.gradient().ok();
        let normal = facing_normal(e, center.mean());
        let weight = match &gradient {
            Some(g) => g.dot(&normal).max(0.0),
            None => 1.0,
        };
        contributions.push(BlendContribution {
            component: m,
            weight,
            probability: pair_collision_probability(robot, center, e)?,
            gradient,
            normal,
            distance: sol.distance,
        });
    }

    if contributions.iter().any(|c| c.probability.kind == BoundKind::MeanColliding) {
        return Ok(BlendedProbability {
            value: 1.0,
            contributions,
            validity: BlendValidity::Blended,
        });
    }
    let total: f64 = contributions.iter().map(|c| c.weight).sum();
    let capped = contributions.iter().any(|c| c.probability.is_degraded());
    if total > 0.0 {
        let value = contributions
            .iter()
            .map(|c| c.weight * c.probability.bound)
            .sum::<f64>()
            / total;
        return Ok(BlendedProbability {
            value: value.clamp(0.0, 1.0),
            contributions,
            validity: if capped { BlendValidity::Degraded } else { BlendValidity::Blended },
        });
    }
    let closest = contributions
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("knn returns at least one component");
    Ok(BlendedProbability {
        value: contributions[closest].probability.bound,
        contributions,
        validity: BlendValidity::Degraded,
    })
}

/// Bound against the single component closest to the mean robot.
pub fn closest_component_probability<const D: usize>(
    robot: &Ellipsoid<D>,
    center: &UncertainCenter<D>,
    model: &SurfaceModel<D>,
) -> Result<(usize, ProbabilityResult)> {
    let query = surface_distance(&robot.translated_to(center.mean), model)?;
    let m = query.closest_component;
    Ok((m, pair_collision_probability(robot, center, &model.ellipsoids()[m])?))
}
