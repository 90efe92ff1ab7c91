//! Brute-force references built from sampled surfaces and point clouds.
//!
//! Nothing here calls the eigenvalue solver; the Monte-Carlo collision
//! frequency is the one exception, since it counts outcomes of the
//! deterministic collision check.

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::distance::pair_collides;
use crate::error::{GsmError, Result};
use crate::geometry::Ellipsoid;
use crate::linalg::{self, SymmetricEigen};
use crate::probability::UncertainCenter;
use crate::spatial::{closest_pair, KdTree};

/// Neighbourhood size for point-cloud normals.
pub const NORMAL_NEIGHBOURS: usize = 30;

const MC_CHUNK: usize = 4096;

/// Points on the boundary of an ellipsoid.
#[derive(Clone, Debug)]
pub struct SampledSurface<const D: usize> {
    pub points: Vec<SVector<f64, D>>,
    pub source: Ellipsoid<D>,
}

impl<const D: usize> SampledSurface<D> {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `x = c + P^{-1/2} u` with `u` uniform on the unit sphere. Not area-uniform
/// on the ellipsoid.
pub fn sample_surface<const D: usize>(e: &Ellipsoid<D>, n: usize, seed: u64) -> SampledSurface<D> {
    sample_with(e, n, &mut stream(seed, 0))
}

fn sample_with<const D: usize>(e: &Ellipsoid<D>, n: usize, rng: &mut ChaCha8Rng) -> SampledSurface<D> {
    let root = e.cache().pow_minus_half();
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let u = SVector::<f64, D>::from_fn(|_, _| StandardNormal.sample(&mut *rng));
        let norm = u.norm();
        if norm > 1e-12 {
            points.push(e.center() + root * (u / norm));
        }
    }
    SampledSurface {
        points,
        source: e.clone(),
    }
}

fn max_semi_axis<const D: usize>(e: &Ellipsoid<D>) -> f64 {
    1.0 / e.cache().eigenvalues()[0].sqrt()
}

/// Minimum distance between `n` boundary samples of each ellipsoid; `0` when
/// a sample of either one lies inside the other.
pub fn oracle_pair_distance<const D: usize>(e1: &Ellipsoid<D>, e2: &Ellipsoid<D>, n: usize, seed: u64) -> f64 {
    let s1 = sample_with(e1, n, &mut stream(seed, 1));
    let s2 = sample_with(e2, n, &mut stream(seed, 2));
    if s1.points.iter().any(|p| e2.contains(p)) || s2.points.iter().any(|p| e1.contains(p)) {
        return 0.0;
    }
    closest_pair(&s1.points, &s2.points, f64::INFINITY).map_or(f64::INFINITY, |p| p.2)
}

/// Robot boundary samples indexed relative to the robot center, reusable
/// at any translation.
#[derive(Clone, Debug)]
pub struct RobotProbe<const D: usize> {
    shape: Ellipsoid<D>,
    offsets: Vec<SVector<f64, D>>,
    reach: f64,
}

impl<const D: usize> RobotProbe<D> {
    pub fn new(samples: &SampledSurface<D>) -> Self {
        let c = samples.source.center();
        Self {
            shape: samples.source.clone(),
            offsets: samples.points.iter().map(|p| p - c).collect(),
            reach: max_semi_axis(&samples.source),
        }
    }

    pub fn robot_at(&self, center: SVector<f64, D>) -> Ellipsoid<D> {
        self.shape.translated_to(center)
    }
}

/// Nearest cloud point to a robot, with the cloud normal there.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudQuery<const D: usize> {
    pub distance: f64,
    /// Unit normal oriented toward the robot center.
    pub normal: SVector<f64, D>,
    pub surface_point: SVector<f64, D>,
    pub penetrating: bool,
}

/// KD-indexed point cloud used as ground truth for surface queries.
#[derive(Clone, Debug)]
pub struct CloudOracle<const D: usize> {
    tree: KdTree<D>,
}

impl<const D: usize> CloudOracle<D> {
    pub fn new(cloud: Vec<SVector<f64, D>>) -> Result<Self> {
        if cloud.len() < NORMAL_NEIGHBOURS {
            return Err(GsmError::TooFewPoints {
                needed: NORMAL_NEIGHBOURS,
                found: cloud.len(),
            });
        }
        Ok(Self {
            tree: KdTree::new(cloud),
        })
    }

    pub fn points(&self) -> &[SVector<f64, D>] {
        self.tree.points()
    }

    /// Smallest-variance direction of the neighbourhood of `point`, pointing
    /// toward `toward`.
    pub fn normal_at(&self, point: &SVector<f64, D>, toward: &SVector<f64, D>) -> Result<SVector<f64, D>> {
        let hood = self.tree.knn(point, NORMAL_NEIGHBOURS);
        let pts = self.tree.points();
        let mean = hood.iter().map(|&(i, _)| pts[i]).sum::<SVector<f64, D>>() / hood.len() as f64;
        let cov = hood
            .iter()
            .map(|&(i, _)| (pts[i] - mean) * (pts[i] - mean).transpose())
            .sum::<SMatrix<f64, D, D>>();
        let n = SymmetricEigen::new(&cov)?.eigenvectors.column(0).into_owned();
        Ok(if n.dot(&(toward - point)) < 0.0 { -n } else { n })
    }

    /// Robot placed at `center` against the cloud.
    pub fn query(&self, probe: &RobotProbe<D>, center: &SVector<f64, D>) -> Result<CloudQuery<D>> {
        let pts = self.tree.points();
        let robot = probe.robot_at(*center);
        let inside = self
            .tree
            .within_radius(center, probe.reach)
            .into_iter()
            .filter(|&i| robot.contains(&pts[i]))
            .min_by(|&a, &b| {
                (pts[a] - center)
                    .norm_squared()
                    .total_cmp(&(pts[b] - center).norm_squared())
                    .then(a.cmp(&b))
            });
        if let Some(i) = inside {
            return Ok(CloudQuery {
                distance: 0.0,
                normal: self.normal_at(&pts[i], center)?,
                surface_point: pts[i],
                penetrating: true,
            });
        }

        let (first, _) = self.tree.nearest(center).expect("cloud is nonempty");
        let placed: Vec<SVector<f64, D>> = probe.offsets.iter().map(|o| center + o).collect();
        let achievable = placed
            .iter()
            .map(|s| (s - pts[first]).norm())
            .fold(f64::INFINITY, f64::min);
        let mut near = self.tree.within_radius(center, achievable + probe.reach);
        near.sort_unstable();
        let candidates: Vec<SVector<f64, D>> = near.iter().map(|&i| pts[i]).collect();
        let best = match closest_pair(&candidates, &placed, achievable) {
            Some((i, _, d)) => (d, near[i]),
            None => (achievable, first),
        };
        let p = pts[best.1];
        Ok(CloudQuery {
            distance: best.0,
            normal: self.normal_at(&p, center)?,
            surface_point: p,
            penetrating: false,
        })
    }
}

/// One-shot cloud distance and normal for sampled robot points.
pub fn oracle_cloud_distance_and_normal<const D: usize>(
    robot_samples: &SampledSurface<D>,
    cloud: &[SVector<f64, D>],
) -> Result<CloudQuery<D>> {
    let oracle = CloudOracle::new(cloud.to_vec())?;
    oracle.query(&RobotProbe::new(robot_samples), robot_samples.source.center())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionFrequency {
    pub frequency: f64,
    pub standard_error: f64,
    pub draws: usize,
}

/// Matrix `S` with `S Sᵀ = Σ`: Cholesky, or the eigen square root when `Σ`
/// is singular.
fn covariance_root<const D: usize>(cov: &SMatrix<f64, D, D>) -> Result<SMatrix<f64, D, D>> {
    match linalg::cholesky(cov) {
        Ok(l) => Ok(l),
        Err(_) => {
            let eig = SymmetricEigen::new(cov)?;
            Ok(eig.eigenvectors * SMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt())))
        }
    }
}

/// Fraction of centers drawn from `center` at which `robot` collides with
/// `obstacle`, with its binomial standard error.
pub fn monte_carlo_collision<const D: usize>(
    robot: &Ellipsoid<D>,
    center: &UncertainCenter<D>,
    obstacle: &Ellipsoid<D>,
    draws: usize,
    seed: u64,
) -> Result<CollisionFrequency> {
    let root = covariance_root(center.covariance())?;
    let chunks = draws.div_ceil(MC_CHUNK);
    let hits = (0..chunks)
        .into_par_iter()
        .map(|chunk| -> Result<usize> {
            let mut rng = stream(seed, chunk as u64);
            let n = MC_CHUNK.min(draws - chunk * MC_CHUNK);
            let mut hits = 0;
            for _ in 0..n {
                let z = SVector::<f64, D>::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let b = center.mean() + root * z;
                if pair_collides(&robot.translated_to(b), obstacle)? {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    let f = hits as f64 / draws.max(1) as f64;
    Ok(CollisionFrequency {
        frequency: f,
        standard_error: (f * (1.0 - f) / draws.max(1) as f64).sqrt(),
        draws,
    })
}
