//! Gaussian-mixture surface models and their ellipsoid realization.

mod em;
mod io;

pub use em::{fit_gmm, FitOptions, FitReport};
pub use io::{
    load_model, load_point_cloud, read_model, read_point_cloud, save_model, write_model,
    write_point_cloud,
};

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};

use crate::error::{GsmError, Result};
use crate::geometry::{isocontour_ellipsoid, Ellipsoid, IsocontourParams};
use crate::linalg;
use crate::spatial::KdTree;

/// One weighted Gaussian `π · N(μ, Σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent<const D: usize> {
    pub weight: f64,
    pub mean: SVector<f64, D>,
    pub covariance: SMatrix<f64, D, D>,
}

impl<const D: usize> GaussianComponent<D> {
    pub fn new(weight: f64, mean: SVector<f64, D>, covariance: SMatrix<f64, D, D>) -> Self {
        Self {
            weight,
            mean,
            covariance,
        }
    }

    /// Unweighted density `N(x; μ, Σ)`.
    pub fn density(&self, x: &SVector<f64, D>) -> Result<f64> {
        let l = linalg::cholesky(&self.covariance)?;
        let z = linalg::solve_lower(&l, &(x - self.mean));
        let log_det: f64 = (0..D).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok((-0.5 * (z.norm_squared() + log_det + D as f64 * (2.0 * PI).ln())).exp())
    }
}

/// A mixture of surface Gaussians, each realized as an isocontour ellipsoid,
/// plus a KD-tree over the component means.
#[derive(Clone, Debug)]
pub struct SurfaceModel<const D: usize> {
    components: Vec<GaussianComponent<D>>,
    params: IsocontourParams,
    ellipsoids: Vec<Ellipsoid<D>>,
    index: KdTree<D>,
}

pub type SurfaceModel3 = SurfaceModel<3>;

impl<const D: usize> SurfaceModel<D> {
    /// Builds the model. Weights are normalized to sum to one; every
    /// covariance must be positive definite above the eigenvalue floor.
    pub fn new(mut components: Vec<GaussianComponent<D>>, params: IsocontourParams) -> Result<Self> {
        if components.is_empty() {
            return Err(GsmError::EmptyModel);
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components
            .iter()
            .any(|c| !(c.weight.is_finite() && c.weight > 0.0))
            || !(total > 0.0)
        {
            return Err(GsmError::InvalidParameter(
                "component weights must be positive".into(),
            ));
        }
        for c in &mut components {
            c.weight /= total;
        }
        let ellipsoids = components
            .iter()
            .map(|c| isocontour_ellipsoid(&c.mean, &c.covariance, params))
            .collect::<Result<Vec<_>>>()?;
        let index = KdTree::new(components.iter().map(|c| c.mean).collect());
        Ok(Self {
            components,
            params,
            ellipsoids,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent<D>] {
        &self.components
    }

    pub fn ellipsoids(&self) -> &[Ellipsoid<D>] {
        &self.ellipsoids
    }

    pub fn level(&self) -> f64 {
        self.params.level()
    }

    pub fn params(&self) -> IsocontourParams {
        self.params
    }

    /// Same components realized at a different isocontour level.
    pub fn with_level(&self, params: IsocontourParams) -> Result<Self> {
        Self::new(self.components.clone(), params)
    }

    /// Exact `K` nearest component means, ascending by distance, ties by
    /// index. `K` larger than the model is clamped.
    pub fn knn(&self, point: &SVector<f64, D>, k: usize) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(GsmError::EmptyModel);
        }
        if k == 0 {
            return Err(GsmError::InvalidK(k));
        }
        Ok(self.index.knn(point, k).into_iter().map(|(i, _)| i).collect())
    }

    /// Mixture density `Σ π_m N(x; μ_m, Σ_m)`.
    pub fn density(&self, x: &SVector<f64, D>) -> Result<f64> {
        self.components
            .iter()
            .map(|c| c.density(x).map(|p| c.weight * p))
            .sum()
    }
}
