//! Ellipsoid-ellipsoid clearance and collision checks.
//!
//! The solver follows the two-stage eigenvalue construction: the first stage
//! finds the boundary point of the second ellipsoid that is closest to the
//! first one's center in the first ellipsoid's own metric (minimal eigenvalue
//! `λ` of a `2q × 2q` matrix), the second stage measures the Euclidean
//! distance from that point back to the first ellipsoid (minimal eigenvalue
//! `μ`). That closed-form value is exact when the first ellipsoid is a ball and
//! an upper bound otherwise, so by default it is polished to the true minimum
//! distance by a Newton ascent on the separating-direction dual
//!
//! ```text
//! d = max_{|n| = 1}  nᵀ(c − b) − |B^{-1/2} n| − |C^{-1/2} n|
//! ```
//!
//! started from the closed-form separation vector.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{GsmError, Result};
use crate::geometry::Ellipsoid;
use crate::linalg::{self, SymmetricEigen};
use crate::surface_model::SurfaceModel;

/// Touching configurations (quadratic form equal to `1/λ²` up to this
/// relative slack) count as colliding.
pub const TOUCH_RTOL: f64 = 1e-10;

/// Below this distance the gradient direction is not defined.
pub const GRADIENT_MIN_DISTANCE: f64 = 1e-9;

const PRUNE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceOptions {
    /// Polish the closed-form estimate to the exact minimum distance.
    pub refine: bool,
    pub max_iterations: usize,
    /// Stop once the tangential gradient of the dual falls below this.
    pub tolerance: f64,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            refine: true,
            max_iterations: 60,
            tolerance: 1e-13,
        }
    }
}

impl DistanceOptions {
    /// Closed-form estimate only.
    pub fn estimate_only() -> Self {
        Self {
            refine: false,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSolution<const D: usize> {
    /// Minimal eigenvalue of the first-stage matrix. `NaN` when a center lies
    /// inside the other ellipsoid.
    pub lambda: f64,
    /// Minimal eigenvalue of the second-stage matrix (`NaN` when colliding).
    pub mu: f64,
    /// Solution of the λ-shifted system (zero when colliding).
    pub alpha: SVector<f64, D>,
    /// Separation vector from the closest point of the second ellipsoid to the
    /// closest point of the first. All-`NaN` when colliding.
    pub d_star: SVector<f64, D>,
    /// Clearance in meters; `0` when colliding.
    pub distance: f64,
    /// Closed-form (unrefined) distance estimate; an upper bound on `distance`.
    pub estimate: f64,
    pub colliding: bool,
    /// Newton iterations spent polishing.
    pub iterations: usize,
}

impl<const D: usize> DistanceSolution<D> {
    fn collision(lambda: f64) -> Self {
        Self {
            lambda,
            mu: f64::NAN,
            alpha: SVector::zeros(),
            d_star: SVector::repeat(f64::NAN),
            distance: 0.0,
            estimate: 0.0,
            colliding: true,
            iterations: 0,
        }
    }

    /// Unit vector along `d_star`, pointing from the second ellipsoid toward
    /// the first (the direction of increasing clearance for the first one).
    pub fn gradient(&self) -> Result<SVector<f64, D>> {
        if self.colliding || !(self.distance >= GRADIENT_MIN_DISTANCE) {
            return Err(GsmError::UndefinedGradient);
        }
        Ok(self.d_star / self.d_star.norm())
    }

    /// Closest point on the second ellipsoid, if the first one is `e1`.
    pub fn point_on_second(&self, e1: &Ellipsoid<D>) -> Option<SVector<f64, D>> {
        if self.colliding {
            return None;
        }
        let n = -self.d_star;
        Some(e1.support_point(&(n / n.norm())) - self.d_star)
    }
}

/// Quantities shared by the collision check and the distance solver.
pub(crate) struct FirstStage<const D: usize> {
    pub y: SVector<f64, D>,
    pub lambda: f64,
    /// `C̃ = B^{1/2} C^{-1} B^{1/2}`
    pub c_tilde: SMatrix<f64, D, D>,
}

fn block_matrix<const D: usize>(
    diag: &SMatrix<f64, D, D>,
    v: &SVector<f64, D>,
) -> DMatrix<f64> {
    let n = 2 * D;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..D {
        for j in 0..D {
            m[(i, j)] = diag[(i, j)];
            m[(D + i, D + j)] = diag[(i, j)];
            m[(D + i, j)] = -v[i] * v[j];
        }
        m[(i, D + i)] = -1.0;
    }
    m
}

/// Center-inside shortcut: either center in the other ellipsoid means the
/// solids intersect.
fn centers_inside<const D: usize>(e1: &Ellipsoid<D>, e2: &Ellipsoid<D>) -> bool {
    e2.contains(e1.center()) || e1.contains(e2.center())
}

pub(crate) fn first_stage<const D: usize>(
    e1: &Ellipsoid<D>,
    e2: &Ellipsoid<D>,
) -> Result<FirstStage<D>> {
    let b_cache = e1.cache();
    let b_half = b_cache.pow_half();
    let b_minus_half = b_cache.pow_minus_half();
    let y = e2.center() - e1.center();

    // B^{-1/2} C B^{-1/2} = Q Λ_Q Qᵀ;  (B^{-1/2} Q Λ_Q^{1/2} Qᵀ) c̃ = c − b
    let q = SymmetricEigen::new(&(b_minus_half * e2.shape() * b_minus_half))?;
    if !(q.eigenvalues[0] > 0.0) {
        return Err(GsmError::NotPositiveDefinite {
            min_eigenvalue: q.eigenvalues[0],
        });
    }
    let q_half = q.map_eigenvalues(f64::sqrt);
    let c_vec = linalg::solve_pivoted_qr(&(b_minus_half * q_half), &y)?;

    let c_tilde = b_half * e2.cache().inverse() * b_half;
    let lambda = linalg::min_real_eigenvalue(block_matrix(&c_tilde, &c_vec))?;
    Ok(FirstStage {
        y,
        lambda,
        c_tilde,
    })
}

/// `y ᵀ B^{1/2} A^{-1} B^{1/2} y` with `A = (λI − C̃)²`, through the Cholesky
/// factor of `A`.
fn collision_quadratic<const D: usize>(e1: &Ellipsoid<D>, stage: &FirstStage<D>) -> Result<f64> {
    let shifted = SMatrix::<f64, D, D>::identity() * stage.lambda - stage.c_tilde;
    let a = shifted * shifted;
    let l = linalg::cholesky(&a)?;
    let z = linalg::solve_lower(&l, &(e1.cache().pow_half() * stage.y));
    Ok(z.norm_squared())
}

/// `Ā = B^{1/2} A^{-1} B^{1/2}` formed as `XᵀX` with `X = L⁻¹ B^{1/2}`.
pub(crate) fn collision_operator<const D: usize>(
    e1: &Ellipsoid<D>,
    stage: &FirstStage<D>,
) -> Result<SMatrix<f64, D, D>> {
    let shifted = SMatrix::<f64, D, D>::identity() * stage.lambda - stage.c_tilde;
    let l = linalg::cholesky(&(shifted * shifted))?;
    let b_half = e1.cache().pow_half();
    let mut x = SMatrix::<f64, D, D>::zeros();
    for j in 0..D {
        x.set_column(j, &linalg::solve_lower(&l, &b_half.column(j).into_owned()));
    }
    let a_bar = x.transpose() * x;
    Ok((a_bar + a_bar.transpose()) * 0.5)
}

pub(crate) fn centers_overlap<const D: usize>(e1: &Ellipsoid<D>, e2: &Ellipsoid<D>) -> bool {
    centers_inside(e1, e2)
}

pub(crate) fn collides_given_stage<const D: usize>(e1: &Ellipsoid<D>, stage: &FirstStage<D>) -> Result<bool> {
    if !(stage.lambda < 0.0) {
        // λ < 0 whenever the first center is outside the second ellipsoid
        return Err(GsmError::CholeskyFailure);
    }
    let v = collision_quadratic(e1, stage)?;
    let threshold = 1.0 / (stage.lambda * stage.lambda);
    Ok(v <= threshold * (1.0 + TOUCH_RTOL))
}

/// Deterministic collision check. Touching counts as colliding.
pub fn pair_collides<const D: usize>(e1: &Ellipsoid<D>, e2: &Ellipsoid<D>) -> Result<bool> {
    if centers_inside(e1, e2) {
        return Ok(true);
    }
    let stage = first_stage(e1, e2)?;
    collides_given_stage(e1, &stage)
}

/// The quadratic form and its threshold `1/λ²` from the collision check,
/// for inspection and tests.
pub fn collision_margin<const D: usize>(e1: &Ellipsoid<D>, e2: &Ellipsoid<D>) -> Result<(f64, f64)> {
    let stage = first_stage(e1, e2)?;
    let v = collision_quadratic(e1, &stage)?;
    Ok((v, 1.0 / (stage.lambda * stage.lambda)))
}

pub fn pair_distance<const D: usize>(
    e1: &Ellipsoid<D>,
    e2: &Ellipsoid<D>,
) -> Result<DistanceSolution<D>> {
    pair_distance_with(e1, e2, &DistanceOptions::default())
}

pub fn pair_distance_with<const D: usize>(
    e1: &Ellipsoid<D>,
    e2: &Ellipsoid<D>,
    options: &DistanceOptions,
) -> Result<DistanceSolution<D>> {
    if centers_inside(e1, e2) {
        return Ok(DistanceSolution::collision(f64::NAN));
    }
    let stage = first_stage(e1, e2)?;
    if collides_given_stage(e1, &stage)? {
        return Ok(DistanceSolution::collision(stage.lambda));
    }
    let lambda = stage.lambda;
    let b_cache = e1.cache();
    let b_half = b_cache.pow_half();
    let b_minus_half = b_cache.pow_minus_half();
    let b_inv = b_cache.inverse();
    let eye = SMatrix::<f64, D, D>::identity();

    // {B^{-1/2}(λI − C̃)B^{1/2}} α = c − b
    let alpha = linalg::solve_pivoted_qr(
        &(b_minus_half * (eye * lambda - stage.c_tilde) * b_half),
        &stage.y,
    )?;
    let b_vec = b_minus_half * alpha * (-lambda);
    let mu = linalg::min_real_eigenvalue(block_matrix(b_inv, &b_vec))?;
    // (μI − B^{-1}) d* = −μλα
    let d_est = linalg::solve_pivoted_qr(&(eye * mu - b_inv), &(alpha * (-mu * lambda)))?;
    let estimate = d_est.norm();

    let mut sol = DistanceSolution {
        lambda,
        mu,
        alpha,
        d_star: d_est,
        distance: estimate,
        estimate,
        colliding: false,
        iterations: 0,
    };
    if options.refine {
        let start = if estimate > 0.0 {
            -d_est / estimate
        } else {
            stage.y / stage.y.norm()
        };
        let (d_star, iterations) = polish(e1, e2, start, options);
        // never worse than the closed form
        let d = d_star.norm();
        if d.is_finite() && d <= estimate {
            sol.d_star = d_star;
            sol.distance = d;
        }
        sol.iterations = iterations;
    }
    Ok(sol)
}

/// Newton ascent of the support-function dual on the unit sphere.
///
/// Returns the separation vector between the two support points.
fn polish<const D: usize>(
    e1: &Ellipsoid<D>,
    e2: &Ellipsoid<D>,
    start: SVector<f64, D>,
    options: &DistanceOptions,
) -> (SVector<f64, D>, usize) {
    let y = e2.center() - e1.center();
    let b_inv = e1.cache().inverse();
    let c_inv = e2.cache().inverse();
    let eye = SMatrix::<f64, D, D>::identity();
    let value = |n: &SVector<f64, D>| {
        n.dot(&y) - n.dot(&(b_inv * n)).sqrt() - n.dot(&(c_inv * n)).sqrt()
    };

    let mut n = start;
    let mut g = value(&n);
    let mut iterations = 0;
    for it in 0..options.max_iterations {
        iterations = it + 1;
        let wb = b_inv * n;
        let wc = c_inv * n;
        let hb = n.dot(&wb).sqrt();
        let hc = n.dot(&wc).sqrt();
        let grad = y - wb / hb - wc / hc;
        let proj = eye - n * n.transpose();
        let tangent = proj * grad;
        if tangent.norm() <= options.tolerance * (1.0 + y.norm()) {
            break;
        }
        // Hessian of the concave dual, restricted to the tangent plane.
        let hess = -(b_inv / hb - wb * wb.transpose() / (hb * hb * hb))
            - (c_inv / hc - wc * wc.transpose() / (hc * hc * hc));
        let riem = proj * hess * proj - proj * n.dot(&grad);
        // (riem − nnᵀ) is negative definite when g > 0, and maps tangent
        // vectors to tangent vectors, so its solve is the tangent Newton step.
        let system = -(riem - n * n.transpose());
        let step = match linalg::cholesky(&system) {
            Ok(l) => linalg::solve_lower_transpose(&l, &linalg::solve_lower(&l, &tangent)),
            Err(_) => tangent,
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = (n + step * t).normalize();
            let gc = value(&cand);
            if gc >= g {
                n = cand;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (step * t).norm() < 1e-16 {
            break;
        }
    }
    let p1 = e1.support_point(&n);
    let p2 = e2.support_point(&(-n));
    (p1 - p2, iterations)
}

/// Result of a query against a whole surface model.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceQueryResult<const D: usize> {
    pub distance: f64,
    /// Unit direction of increasing clearance; `None` when colliding.
    pub gradient: Option<SVector<f64, D>>,
    pub closest_component: usize,
    pub colliding: bool,
    pub per_component: Option<Vec<(usize, f64)>>,
}

/// Which components a surface query evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Pruning {
    /// Every component.
    Off,
    /// Skips components whose bounding-sphere clearance already exceeds the
    /// best distance found. Gives the same result as [`Pruning::Off`].
    #[default]
    Exact,
    /// Only the `K` components whose means are nearest to the robot center.
    Nearest(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SurfaceQueryOptions {
    pub prune: Pruning,
    pub keep_per_component: bool,
    pub distance: DistanceOptions,
}

pub fn surface_distance<const D: usize>(
    robot: &Ellipsoid<D>,
    model: &SurfaceModel<D>,
) -> Result<SurfaceQueryResult<D>> {
    surface_distance_with(robot, model, &SurfaceQueryOptions::default())
}

fn bounding_radius<const D: usize>(e: &Ellipsoid<D>) -> f64 {
    1.0 / e.cache().eigenvalues()[0].sqrt()
}

/// Minimum clearance over the component ellipsoids; ties go to the lowest
/// component index.
pub fn surface_distance_with<const D: usize>(
    robot: &Ellipsoid<D>,
    model: &SurfaceModel<D>,
    options: &SurfaceQueryOptions,
) -> Result<SurfaceQueryResult<D>> {
    if model.is_empty() {
        return Err(GsmError::EmptyModel);
    }
    // (component, lower bound on its distance)
    let candidates: Vec<(usize, f64)> = match options.prune {
        Pruning::Nearest(0) => return Err(GsmError::InvalidK(0)),
        Pruning::Nearest(k) if k < model.len() => {
            let mut idx = model.knn(robot.center(), k)?;
            idx.sort_unstable();
            idx.into_iter().map(|m| (m, f64::NEG_INFINITY)).collect()
        }
        Pruning::Exact => {
            let reach = bounding_radius(robot);
            let mut c: Vec<(usize, f64)> = model
                .ellipsoids()
                .iter()
                .enumerate()
                .map(|(m, e)| {
                    let gap = (e.center() - robot.center()).norm() - reach - bounding_radius(e);
                    (m, gap - PRUNE_SLACK * (1.0 + gap.abs()))
                })
                .collect();
            c.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            c
        }
        _ => (0..model.len()).map(|m| (m, f64::NEG_INFINITY)).collect(),
    };
    let ordered = !matches!(options.prune, Pruning::Exact);

    let mut best: Option<(usize, DistanceSolution<D>)> = None;
    let mut per = options
        .keep_per_component
        .then(|| Vec::with_capacity(candidates.len()));
    for &(m, lower) in &candidates {
        if let Some((_, b)) = &best {
            if lower > b.distance {
                break;
            }
        }
        let sol = pair_distance_with(robot, &model.ellipsoids()[m], &options.distance)?;
        if let Some(per) = per.as_mut() {
            per.push((m, sol.distance));
        }
        let better = match &best {
            None => true,
            Some((bm, b)) => sol.distance < b.distance || (sol.distance == b.distance && m < *bm),
        };
        if better {
            let stop = ordered && sol.colliding && per.is_none();
            best = Some((m, sol));
            if stop {
                break;
            }
        }
    }
    let (m, sol) = best.expect("nonempty candidate list");
    let gradient = sol.gradient().ok();
    Ok(SurfaceQueryResult {
        distance: sol.distance,
        gradient,
        closest_component: m,
        colliding: sol.colliding,
        per_component: per,
    })
}

/// `d*/|d*|` for the closest component.
pub fn surface_gradient<const D: usize>(
    robot: &Ellipsoid<D>,
    model: &SurfaceModel<D>,
) -> Result<SVector<f64, D>> {
    let res = surface_distance(robot, model)?;
    res.gradient.ok_or(GsmError::UndefinedGradient)
}
