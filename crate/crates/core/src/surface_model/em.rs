//! Plain EM fitting of a full-covariance Gaussian mixture to a point cloud.
//!
//! No splitting, merging or incremental updates: this exists so the library
//! can ingest raw clouds, not as a mapping pipeline.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GaussianComponent, SurfaceModel};
use crate::error::{GsmError, Result};
use crate::geometry::{regularize, IsocontourParams};
use crate::linalg;

const KMEANS_ITERS: usize = 20;
const MIN_WEIGHT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    pub max_iterations: usize,
    /// Relative log-likelihood change that ends the iteration.
    pub tolerance: f64,
    /// Lower bound on covariance eigenvalues (m²).
    pub covariance_floor: f64,
    pub isocontour: IsocontourParams,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iterations: 200,
            tolerance: 1e-5,
            covariance_floor: 1e-6,
            isocontour: IsocontourParams::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport<const D: usize> {
    pub model: SurfaceModel<D>,
    /// Mean per-point log-likelihood after the last iteration.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Mean per-point log-likelihood evaluated at each E-step.
    pub history: Vec<f64>,
    /// Components removed for vanishing weight.
    pub dropped: usize,
}

struct Params<const D: usize> {
    weights: Vec<f64>,
    means: Vec<SVector<f64, D>>,
    covs: Vec<SMatrix<f64, D, D>>,
}

pub fn fit_gmm<const D: usize>(
    points: &[SVector<f64, D>],
    components: usize,
    options: &FitOptions,
) -> Result<FitReport<D>> {
    if components == 0 {
        return Err(GsmError::InvalidParameter("need at least one component".into()));
    }
    if points.len() < components {
        return Err(GsmError::TooFewPoints {
            needed: components,
            found: points.len(),
        });
    }
    if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(GsmError::InvalidParameter("point cloud contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let centers = kmeans(points, components, &mut rng);
    let mut params = init_from_centers(points, &centers, options.covariance_floor)?;

    let n = points.len();
    let mut resp = vec![0.0; n * params.weights.len()];
    let mut history = Vec::new();
    let mut dropped = 0;
    let mut iterations = 0;
    let mut prev = f64::NEG_INFINITY;

    for it in 0..options.max_iterations {
        iterations = it + 1;
        let ll = e_step(points, &params, &mut resp)?;
        history.push(ll);
        if it > 0 && (ll - prev).abs() <= options.tolerance * ll.abs().max(1e-300) {
            break;
        }
        prev = ll;
        dropped += m_step(points, &mut params, &mut resp, options.covariance_floor)?;
    }
    let log_likelihood = *history.last().unwrap_or(&f64::NAN);

    let comps = (0..params.weights.len())
        .map(|k| GaussianComponent::new(params.weights[k], params.means[k], params.covs[k]))
        .collect();
    let model = SurfaceModel::new(comps, options.isocontour)?;
    Ok(FitReport {
        model,
        log_likelihood,
        iterations,
        history,
        dropped,
    })
}

/// k-means++ seeding followed by a few Lloyd iterations.
fn kmeans<const D: usize>(
    points: &[SVector<f64, D>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SVector<f64, D>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (p - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(&centers, p);
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![SVector::<f64, D>::zeros(); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assign[i]] += p;
            counts[assign[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

fn nearest<const D: usize>(centers: &[SVector<f64, D>], p: &SVector<f64, D>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn init_from_centers<const D: usize>(
    points: &[SVector<f64, D>],
    centers: &[SVector<f64, D>],
    floor: f64,
) -> Result<Params<D>> {
    let k = centers.len();
    let n = points.len() as f64;
    let mut counts = vec![0usize; k];
    let mut sums = vec![SVector::<f64, D>::zeros(); k];
    let mut assign = Vec::with_capacity(points.len());
    for p in points {
        let j = nearest(centers, p);
        assign.push(j);
        counts[j] += 1;
        sums[j] += p;
    }
    let global_mean = points.iter().sum::<SVector<f64, D>>() / n;
    let global_cov = points
        .iter()
        .map(|p| (p - global_mean) * (p - global_mean).transpose())
        .sum::<SMatrix<f64, D, D>>()
        / n;

    let means: Vec<SVector<f64, D>> = (0..k)
        .map(|j| if counts[j] > 0 { sums[j] / counts[j] as f64 } else { centers[j] })
        .collect();
    let mut covs = vec![SMatrix::<f64, D, D>::zeros(); k];
    for (p, &j) in points.iter().zip(&assign) {
        let d = p - means[j];
        covs[j] += d * d.transpose();
    }
    let mut weights = Vec::with_capacity(k);
    for j in 0..k {
        if counts[j] > 0 {
            covs[j] /= counts[j] as f64;
        } else {
            covs[j] = global_cov;
        }
        covs[j] = regularize(&covs[j], floor)?;
        weights.push((counts[j].max(1)) as f64 / n);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Params {
        weights,
        means,
        covs,
    })
}

/// Fills responsibilities and returns the mean log-likelihood per point.
fn e_step<const D: usize>(
    points: &[SVector<f64, D>],
    params: &Params<D>,
    resp: &mut Vec<f64>,
) -> Result<f64> {
    let k = params.weights.len();
    resp.resize(points.len() * k, 0.0);
    let norm = D as f64 * (2.0 * PI).ln();
    let factors = params
        .covs
        .iter()
        .map(linalg::cholesky)
        .collect::<Result<Vec<_>>>()?;
    let log_consts: Vec<f64> = factors
        .iter()
        .zip(&params.weights)
        .map(|(l, w)| {
            let log_det: f64 = (0..D).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            w.ln() - 0.5 * (log_det + norm)
        })
        .collect();

    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let z = linalg::solve_lower(&factors[j], &(p - params.means[j]));
            row[j] = log_consts[j] - 0.5 * z.norm_squared();
            max = max.max(row[j]);
        }
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        total += max + s.ln();
    }
    Ok(total / points.len() as f64)
}

/// Returns the number of components dropped for vanishing weight.
fn m_step<const D: usize>(
    points: &[SVector<f64, D>],
    params: &mut Params<D>,
    resp: &mut Vec<f64>,
    floor: f64,
) -> Result<usize> {
    let k = params.weights.len();
    let n = points.len() as f64;
    let mut nk = vec![0.0; k];
    let mut sums = vec![SVector::<f64, D>::zeros(); k];
    for (i, p) in points.iter().enumerate() {
        for j in 0..k {
            let r = resp[i * k + j];
            nk[j] += r;
            sums[j] += p * r;
        }
    }
    let keep: Vec<usize> = (0..k).filter(|&j| nk[j] / n >= MIN_WEIGHT).collect();
    if keep.is_empty() {
        return Err(GsmError::DegenerateComponent);
    }
    let means: Vec<SVector<f64, D>> = keep.iter().map(|&j| sums[j] / nk[j]).collect();
    let mut covs = vec![SMatrix::<f64, D, D>::zeros(); keep.len()];
    for (i, p) in points.iter().enumerate() {
        for (slot, &j) in keep.iter().enumerate() {
            let r = resp[i * k + j];
            if r > 0.0 {
                let d = p - means[slot];
                covs[slot] += d * d.transpose() * r;
            }
        }
    }
    let total: f64 = keep.iter().map(|&j| nk[j]).sum();
    let mut weights = Vec::with_capacity(keep.len());
    for (slot, &j) in keep.iter().enumerate() {
        // Eigenvalue clamping is the constrained maximizer, so EM stays monotone.
        covs[slot] = regularize(&(covs[slot] / nk[j]), floor)?;
        weights.push(nk[j] / total);
    }
    let dropped = k - keep.len();
    params.weights = weights;
    params.means = means;
    params.covs = covs;
    if dropped > 0 {
        resp.clear();
    }
    Ok(dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rejects_too_few_points() {
        let pts = vec![Vector3::zeros(); 3];
        assert!(matches!(
            fit_gmm(&pts, 4, &FitOptions::default()),
            Err(GsmError::TooFewPoints { needed: 4, found: 3 })
        ));
        assert!(fit_gmm::<3>(&[], 1, &FitOptions::default()).is_err());
    }

    #[test]
    fn single_gaussian_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mean = Vector3::new(1.0, -2.0, 0.5);
        let l = Matrix3::new(0.5, 0.0, 0.0, 0.1, 0.3, 0.0, -0.05, 0.02, 0.1);
        let cov = l * l.transpose();
        let n = 10_000;
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| mean + l * Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let fit = fit_gmm(&pts, 1, &FitOptions::default()).unwrap();
        let c = &fit.model.components()[0];
        // standard error of the mean per axis: sqrt(Σ_ii / n)
        for i in 0..3 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((c.mean[i] - mean[i]).abs() < 3.0 * se, "axis {i}");
        }
        assert!((c.covariance - cov).norm() / cov.norm() < 0.1);
    }

    #[test]
    fn log_likelihood_nondecreasing_one_component_per_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..40)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let opts = FitOptions {
            tolerance: 0.0,
            max_iterations: 30,
            ..FitOptions::default()
        };
        let fit = fit_gmm(&pts, pts.len(), &opts).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", w);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let opts = FitOptions {
            seed: 4,
            ..FitOptions::default()
        };
        let a = fit_gmm(&pts, 5, &opts).unwrap();
        let b = fit_gmm(&pts, 5, &opts).unwrap();
        assert_eq!(a.model.components(), b.model.components());
        assert_eq!(a.history, b.history);
    }
}
