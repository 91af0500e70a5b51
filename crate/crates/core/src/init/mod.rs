//! Initial Gaussian scaffold from a coloured point cloud, plus depth
//! back-projection and ASCII PLY I/O.

mod knn;
mod ply;

pub use knn::{knn_distances, knn_mean_distance};
pub use ply::{read_ply, write_ply};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::render::sh::rgb_to_dc;
use crate::types::{
    logit, sh_coeff_count, Camera, Gaussian, GaussianCloud, Image, Pose, Vec3, MAX_SH_DEGREE,
};

/// Neighbours used for the initial scale.
pub const KNN_K: usize = 3;
pub const INIT_OPACITY: f64 = 0.1;
/// Clamp range of the initial per-axis scale, metres.
pub const MIN_INIT_SCALE: f64 = 1e-4;
pub const MAX_INIT_SCALE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: [f64; 3],
    /// RGB in `[0, 1]`.
    pub color: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<ColoredPoint>,
}

impl ColoredPointCloud {
    pub fn new(points: Vec<ColoredPoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "point {i} has a non-finite coordinate"
                )));
            }
            if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Invalid(format!("point {i} colour outside [0, 1]")));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// Unprojects every `stride`-th pixel (in both directions) with positive
/// depth into world space. `depth` is row-major, one value per pixel.
pub fn backproject_depth(
    image: &Image,
    depth: &[f64],
    pose: &Pose,
    cam: &Camera,
    stride: usize,
) -> Result<ColoredPointCloud> {
    if image.width != cam.width || image.height != cam.height {
        return Err(Error::DimensionMismatch {
            left_w: cam.width,
            left_h: cam.height,
            right_w: image.width,
            right_h: image.height,
        });
    }
    if depth.len() != cam.pixel_count() {
        return Err(Error::ShapeMismatch {
            expected: cam.pixel_count(),
            found: depth.len(),
        });
    }
    if stride == 0 {
        return Err(Error::Invalid("stride must be positive".into()));
    }
    let mut points = Vec::new();
    for v in (0..cam.height).step_by(stride) {
        for u in (0..cam.width).step_by(stride) {
            let d = depth[v * cam.width + u];
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            let local = Vec3::new(
                (u as f64 - cam.cx) / cam.fx * d,
                (v as f64 - cam.cy) / cam.fy * d,
                d,
            );
            let w = pose.transform_point(&local);
            points.push(ColoredPoint {
                position: [w.x, w.y, w.z],
                color: image.get(u, v),
            });
        }
    }
    Ok(ColoredPointCloud { points })
}

/// Indices kept when reducing `n` points to `target`, ascending.
pub fn subsample_indices(n: usize, target: usize, seed: u64) -> Vec<usize> {
    if n <= target {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, target).into_vec();
    idx.sort_unstable();
    idx
}

/// One Gaussian per (subsampled) point: isotropic scale from the mean
/// 3-NN distance, identity rotation, opacity 0.1, DC colour from the point.
pub fn initialize_gaussians(
    cloud: &ColoredPointCloud,
    target_count: usize,
    sh_degree: u32,
    seed: u64,
) -> Result<GaussianCloud> {
    if sh_degree > MAX_SH_DEGREE {
        return Err(Error::Invalid(format!(
            "sh degree {sh_degree} exceeds {MAX_SH_DEGREE}"
        )));
    }
    let keep = subsample_indices(cloud.len(), target_count, seed);
    if keep.len() <= KNN_K {
        return Err(Error::DegenerateInput(format!(
            "need at least {} points for initialisation, got {}",
            KNN_K + 1,
            keep.len()
        )));
    }
    let points: Vec<&ColoredPoint> = keep.iter().map(|&i| &cloud.points[i]).collect();
    let positions: Vec<[f64; 3]> = points.iter().map(|p| p.position).collect();
    let mean_dist = knn_mean_distance(&positions, KNN_K);
    let n_sh = sh_coeff_count(sh_degree);
    let opacity = logit(INIT_OPACITY);
    let gaussians = points
        .iter()
        .zip(mean_dist)
        .map(|(p, d)| {
            let s = d
                .max(f64::MIN_POSITIVE)
                .ln()
                .clamp(MIN_INIT_SCALE.ln(), MAX_INIT_SCALE.ln());
            let mut sh = vec![[0.0; 3]; n_sh];
            sh[0] = rgb_to_dc(p.color);
            Gaussian {
                mu: p.position,
                log_scale: [s; 3],
                quat: [1.0, 0.0, 0.0, 0.0],
                logit_opacity: opacity,
                sh,
            }
        })
        .collect();
    GaussianCloud::new(gaussians, sh_degree)
}
