//! Synthetic point-cloud scenes with known surface normals.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::field::SliceSpec;

pub const SCENE_NOISE: f64 = 0.01;
pub const WALL_POINTS: usize = 10_000;
/// Sparse enough that 30-neighbour normals resolve the faces through the noise.
pub const CORNER_POINTS: usize = 5_000;

/// Normals within this distance of a face boundary are not reported.
const EDGE_MARGIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// The plane `x = 0`, `y, z ∈ [-1, 1]`.
    Wall,
    /// Faces `x = 0` (`y ∈ [0, 2]`) and `y = 0` (`x ∈ [0, 2]`), both with
    /// `z ∈ [-1, 1]`, meeting along the `z` axis.
    Corner,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub cloud: Vec<Vector3<f64>>,
    /// Mixture size used when fitting this scene.
    pub components: usize,
    /// Horizontal slice through the free space in front of the surface.
    pub slice: SliceSpec,
}

impl SyntheticScene {
    pub fn standard(kind: SceneKind, seed: u64) -> Self {
        match kind {
            SceneKind::Wall => Self::wall(WALL_POINTS, SCENE_NOISE, seed),
            SceneKind::Corner => Self::corner(CORNER_POINTS, SCENE_NOISE, seed),
        }
    }

    pub fn wall(points: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise).expect("finite noise");
        let cloud = (0..points)
            .map(|_| {
                Vector3::new(
                    jitter.sample(&mut rng),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        Self {
            kind: SceneKind::Wall,
            cloud,
            components: 8,
            slice: SliceSpec::new(
                Vector3::new(0.0, -1.0, 0.0),
                Vector3::x(),
                Vector3::y(),
                (1.0, 2.0),
                (200, 200),
            )
            .expect("valid slice"),
        }
    }

    pub fn corner(points: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise).expect("finite noise");
        let cloud = (0..points)
            .map(|i| {
                let along = rng.random_range(0.0..2.0);
                let z = rng.random_range(-1.0..1.0);
                let off = jitter.sample(&mut rng);
                if i % 2 == 0 {
                    Vector3::new(off, along, z)
                } else {
                    Vector3::new(along, off, z)
                }
            })
            .collect();
        Self {
            kind: SceneKind::Corner,
            cloud,
            components: 16,
            slice: SliceSpec::new(
                Vector3::zeros(),
                Vector3::x(),
                Vector3::y(),
                (1.5, 1.5),
                (200, 200),
            )
            .expect("valid slice"),
        }
    }

    /// Analytic unit normal of the face nearest `p`, oriented toward `toward`.
    /// `None` near face boundaries, where it is ambiguous.
    pub fn face_normal(&self, p: &Vector3<f64>, toward: &Vector3<f64>) -> Option<Vector3<f64>> {
        let n = match self.kind {
            SceneKind::Wall => {
                if p.y.abs() > 1.0 - EDGE_MARGIN || p.z.abs() > 1.0 - EDGE_MARGIN {
                    return None;
                }
                Vector3::x()
            }
            SceneKind::Corner => {
                if p.z.abs() > 1.0 - EDGE_MARGIN {
                    return None;
                }
                let on_x_face = p.x.abs() < p.y.abs();
                let (n, along) = if on_x_face { (Vector3::x(), p.y) } else { (Vector3::y(), p.x) };
                if !(EDGE_MARGIN..=2.0 - EDGE_MARGIN).contains(&along) {
                    return None;
                }
                n
            }
        };
        Some(if n.dot(&(toward - p)) < 0.0 { -n } else { n })
    }
}
