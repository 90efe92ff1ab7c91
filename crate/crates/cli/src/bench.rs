//! Per-phase timing of pair queries on random ellipsoids.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use gsm_core::{
    pair_collision_probability, pair_distance, random_ellipsoid, Ellipsoid3, SamplingRanges, UncertainCenter,
};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WARMUP_PAIRS: usize = 100;
/// Isotropic variance of the robot center in the probability phase.
pub const BENCH_VARIANCE: f64 = 0.01;

/// Raw `(center, shape)` data; building the ellipsoid is the timed
/// initialization phase.
pub type RawEllipsoid = (Vector3<f64>, Matrix3<f64>);

pub fn generate_pairs(n: usize, seed: u64) -> Vec<(RawEllipsoid, RawEllipsoid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = SamplingRanges::default();
    let mut raw = || {
        let e: Ellipsoid3 = random_ellipsoid(&mut rng, &ranges).expect("default ranges are valid");
        (*e.center(), *e.shape())
    };
    (0..n).map(|_| (raw(), raw())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseStats {
    pub mean_us: f64,
    pub std_us: f64,
}

impl PhaseStats {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_us: mean,
            std_us: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub device: String,
    pub pairs: usize,
    /// Pairs whose queries returned an error; excluded from the statistics.
    pub failures: usize,
    pub init: PhaseStats,
    pub dist_grad: PhaseStats,
    pub prob: PhaseStats,
    pub total: PhaseStats,
}

pub const CSV_HEADER: &str = "Device,Pairs,Init,Dist+Grad,Coll. Prob.,Total";

impl BenchReport {
    /// One row in the `mean ± std` microsecond layout.
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{}", self.device, self.pairs);
        for p in [self.init, self.dist_grad, self.prob, self.total] {
            write!(row, ",{:.2} ± {:.2}", p.mean_us, p.std_us).expect("writing to a String");
        }
        row
    }
}

fn micros(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

/// Times one pair; `None` if any phase fails.
fn time_pair(pair: &(RawEllipsoid, RawEllipsoid), center_variance: f64) -> Option<[f64; 3]> {
    let ((c1, s1), (c2, s2)) = pair;
    let uncertain = UncertainCenter::isotropic(*c1, center_variance).ok()?;

    let t = Instant::now();
    let e1 = Ellipsoid3::new(*c1, *s1).ok()?;
    let e2 = Ellipsoid3::new(*c2, *s2).ok()?;
    let init = micros(t);
    black_box((&e1, &e2));

    let t = Instant::now();
    let sol = pair_distance(&e1, &e2).ok()?;
    black_box((sol.distance, sol.gradient().ok()));
    let dist = micros(t);

    let t = Instant::now();
    black_box(pair_collision_probability(&e1, &uncertain, &e2).ok()?);
    let prob = micros(t);
    Some([init, dist, prob])
}

/// Generates `pairs` pairs from `seed` and times them on the calling thread
/// after [`WARMUP_PAIRS`] discarded warm-up pairs.
pub fn run_bench(pairs: usize, seed: u64, device: &str) -> BenchReport {
    let warm = generate_pairs(WARMUP_PAIRS, seed ^ 0x9e37_79b9_7f4a_7c15);
    for p in &warm {
        black_box(time_pair(p, BENCH_VARIANCE));
    }
    let data = generate_pairs(pairs, seed);
    let mut phases: [Vec<f64>; 4] = Default::default();
    let mut failures = 0;
    for p in &data {
        match time_pair(p, BENCH_VARIANCE) {
            Some(t) => {
                for (k, v) in t.iter().enumerate() {
                    phases[k].push(*v);
                }
                phases[3].push(t.iter().sum());
            }
            None => failures += 1,
        }
    }
    let [init, dist, prob, total] = phases.map(|xs| PhaseStats::from_samples(&xs));
    BenchReport {
        device: device.to_string(),
        pairs,
        failures,
        init,
        dist_grad: dist,
        prob,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_pairs(5, 3), generate_pairs(5, 3));
        assert_ne!(generate_pairs(5, 3), generate_pairs(5, 4));
    }

    #[test]
    fn single_pair_report() {
        let r = run_bench(1, 0, "test");
        assert_eq!(r.pairs, 1);
        assert_eq!(r.failures, 0);
        assert!(r.total.mean_us > 0.0);
        assert!((r.total.mean_us - (r.init.mean_us + r.dist_grad.mean_us + r.prob.mean_us)).abs() < 1e-9);
        let row = r.csv_row();
        assert!(row.starts_with("test,1,"));
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }
}
