//! Synthetic L-shaped corridor scenes with a known ground-truth cloud.
//!
//! World axes match the camera convention at zero yaw: `x` right, `y` down,
//! `z` forward. The corridor is 2 m wide and 2 m high. The first leg runs
//! along `+z`, a quarter turn of radius 0.5 m leads into a second leg along
//! `+x`. Targets are rendered from the ground-truth cloud, so a perfect
//! reconstruction reaches the PSNR cap.

mod io;

pub use io::{
    client_trajectory_path, frame_path, load_scene, read_png, save_scene, write_png16, LoadedScene,
    SceneManifest,
};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{ColoredPoint, ColoredPointCloud};
use crate::render::sh::{rgb_to_dc, SH_C0};
use crate::render::{render, RenderSettings};
use crate::stitch::{Sim3Transform, Trajectory};
use crate::types::{logit, sh_coeff_count, Camera, Frame, Gaussian, GaussianCloud, Pose, Vec3};

pub const HALF_WIDTH: f64 = 1.0;
pub const HALF_HEIGHT: f64 = 1.0;
/// Length of the first leg's centreline before the turn starts.
pub const LEG_A: f64 = 5.5;
pub const TURN_RADIUS: f64 = 0.5;
pub const LEG_B: f64 = 5.5;
/// `z` of the second leg's centreline.
const CORNER_Z: f64 = LEG_A + TURN_RADIUS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub seed: u64,
    pub n_frames: usize,
    pub n_gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub fov_x_deg: f64,
    pub near: f64,
    pub sh_degree: u32,
    /// Std-dev of the position noise on the initialisation point cloud, metres.
    pub sigma_init: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 120,
            n_gaussians: 2000,
            width: 64,
            height: 64,
            fov_x_deg: 65.0,
            near: 0.05,
            sh_degree: 1,
            sigma_init: 0.005,
        }
    }
}

impl SceneParams {
    pub fn camera(&self) -> Result<Camera> {
        Camera::from_fov(self.width, self.height, self.fov_x_deg, self.near)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub params: SceneParams,
    pub camera: Camera,
    pub ground_truth: GaussianCloud,
    pub anchor: Trajectory,
    pub frames: Vec<Frame>,
    pub point_cloud: ColoredPointCloud,
}

/// Rectangle `origin + a·u + b·v`, `a, b ∈ [0, 1]`, with normal `u × v`.
struct Patch {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    base: [f64; 3],
}

impl Patch {
    fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }
}

fn patch(origin: [f64; 3], u: [f64; 3], v: [f64; 3], base: [f64; 3]) -> Patch {
    Patch {
        origin: Vec3::from(origin),
        u: Vec3::from(u),
        v: Vec3::from(v),
        base,
    }
}

fn corridor_patches() -> Vec<Patch> {
    let (w, h) = (HALF_WIDTH, HALF_HEIGHT);
    let z_far = CORNER_Z + w;
    let x_end = TURN_RADIUS + LEG_B + w;
    let floor = [0.55, 0.45, 0.35];
    let ceiling = [0.85, 0.82, 0.75];
    vec![
        // Left wall of leg A, continuing into the outer corner.
        patch(
            [-w, -h, -w],
            [0.0, 0.0, z_far + w],
            [0.0, 2.0 * h, 0.0],
            [0.3, 0.5, 0.75],
        ),
        // Right wall of leg A up to the inner corner.
        patch(
            [w, -h, -w],
            [0.0, 0.0, CORNER_Z],
            [0.0, 2.0 * h, 0.0],
            [0.75, 0.35, 0.3],
        ),
        // Outer wall of the turn and left wall of leg B.
        patch(
            [-w, -h, z_far],
            [x_end + w, 0.0, 0.0],
            [0.0, 2.0 * h, 0.0],
            [0.4, 0.65, 0.35],
        ),
        // Inner (right) wall of leg B.
        patch(
            [w, -h, CORNER_Z - w],
            [x_end - w, 0.0, 0.0],
            [0.0, 2.0 * h, 0.0],
            [0.7, 0.55, 0.2],
        ),
        // End wall of leg B and the wall behind the start.
        patch(
            [x_end, -h, CORNER_Z - w],
            [0.0, 0.0, 2.0 * w],
            [0.0, 2.0 * h, 0.0],
            [0.6, 0.3, 0.6],
        ),
        patch(
            [-w, -h, -w],
            [2.0 * w, 0.0, 0.0],
            [0.0, 2.0 * h, 0.0],
            [0.5, 0.5, 0.5],
        ),
        // Floor (y = +h) and ceiling (y = -h) of both legs.
        patch(
            [-w, h, -w],
            [2.0 * w, 0.0, 0.0],
            [0.0, 0.0, CORNER_Z],
            floor,
        ),
        patch(
            [-w, h, CORNER_Z - w],
            [x_end + w, 0.0, 0.0],
            [0.0, 0.0, 2.0 * w],
            floor,
        ),
        patch(
            [-w, -h, -w],
            [2.0 * w, 0.0, 0.0],
            [0.0, 0.0, CORNER_Z],
            ceiling,
        ),
        patch(
            [-w, -h, CORNER_Z - w],
            [x_end + w, 0.0, 0.0],
            [0.0, 0.0, 2.0 * w],
            ceiling,
        ),
    ]
}

/// True when `p` lies strictly inside the corridor, at least `margin` from
/// every wall.
pub fn inside_corridor(p: &Vec3, margin: f64) -> bool {
    let (w, h) = (HALF_WIDTH - margin, HALF_HEIGHT - margin);
    if p.y.abs() >= h {
        return false;
    }
    let leg_a = p.x.abs() < w && p.z > -w && p.z < CORNER_Z + w;
    let leg_b = (p.z - CORNER_Z).abs() < w && p.x > -w && p.x < TURN_RADIUS + LEG_B + w;
    leg_a || leg_b
}

/// Camera-to-world pose looking along yaw `theta` (0 = `+z`, π/2 = `+x`).
fn yaw_pose(position: Vec3, theta: f64) -> Pose {
    let forward = Vec3::new(theta.sin(), 0.0, theta.cos());
    let down = Vec3::new(0.0, 1.0, 0.0);
    let right = down.cross(&forward);
    let m = Matrix3::from_columns(&[right, down, forward]);
    Pose::new(
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)),
        position,
    )
}

/// Lateral sway and vertical bob of a hand-carried camera, metres. Keeps
/// straight stretches of the path from being collinear.
const SWAY: f64 = 0.15;
const BOB: f64 = 0.06;

/// Camera pose at arc length `s` along the centreline.
fn centreline(s: f64) -> Pose {
    let turn_len = std::f64::consts::FRAC_PI_2 * TURN_RADIUS;
    let (centre, yaw) = if s <= LEG_A {
        (Vec3::new(0.0, 0.0, s), 0.0)
    } else if s <= LEG_A + turn_len {
        let phi = (s - LEG_A) / TURN_RADIUS;
        let c = Vec3::new(TURN_RADIUS, 0.0, LEG_A);
        (
            c + Vec3::new(-TURN_RADIUS * phi.cos(), 0.0, TURN_RADIUS * phi.sin()),
            phi,
        )
    } else {
        let x = TURN_RADIUS + (s - LEG_A - turn_len);
        (Vec3::new(x, 0.0, CORNER_Z), std::f64::consts::FRAC_PI_2)
    };
    let right = Vec3::new(yaw.cos(), 0.0, -yaw.sin());
    let offset = right * (SWAY * (1.1 * s).sin()) + Vec3::new(0.0, BOB * (2.3 * s).sin(), 0.0);
    yaw_pose(centre + offset, yaw + 0.05 * (0.7 * s).sin())
}

pub fn corridor_trajectory(n_frames: usize) -> Result<Trajectory> {
    let total = LEG_A + std::f64::consts::FRAC_PI_2 * TURN_RADIUS + LEG_B;
    let step = total / (n_frames.max(2) - 1) as f64;
    let poses = (0..n_frames).map(|i| centreline(i as f64 * step)).collect();
    Trajectory::new(poses, (0..n_frames as u64).collect())
}

/// Smooth stripe-and-checker texture in `[0, 1]`.
fn texture(p: &Vec3) -> f64 {
    let s = (p.x * 5.3 + p.z * 4.1).sin() * (p.y * 6.7 + 0.4 * p.z).cos();
    let t = ((p.x + p.y + p.z) * 1.7).sin();
    0.5 + 0.3 * s + 0.2 * t
}

fn ground_truth_cloud(params: &SceneParams, rng: &mut ChaCha8Rng) -> Result<GaussianCloud> {
    let patches = corridor_patches();
    let areas: Vec<f64> = patches.iter().map(Patch::area).collect();
    let total: f64 = areas.iter().sum();
    let n_sh = sh_coeff_count(params.sh_degree);
    let gaussians = (0..params.n_gaussians)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut idx = 0;
            while idx + 1 < patches.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let p = &patches[idx];
            let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let pos = p.origin + p.u * a + p.v * b;
            let (du, dv) = (p.u.normalize(), p.v.normalize());
            let n = du.cross(&dv);
            let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                Matrix3::from_columns(&[du, dv, n]),
            ));
            let q = rot.quaternion();
            let tangential = [rng.random_range(0.1..0.2f64), rng.random_range(0.1..0.2f64)];
            let shade = texture(&pos);
            let color: [f64; 3] = std::array::from_fn(|c| {
                (p.base[c] * (0.45 + 0.9 * shade) + rng.random_range(-0.05..0.05)).clamp(0.02, 0.98)
            });
            let mut sh = vec![[0.0; 3]; n_sh];
            sh[0] = rgb_to_dc(color);
            for coeff in sh.iter_mut().skip(1) {
                *coeff = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
            }
            Gaussian {
                mu: [pos.x, pos.y, pos.z],
                log_scale: [tangential[0].ln(), tangential[1].ln(), 0.02f64.ln()],
                quat: [q.w, q.i, q.j, q.k],
                logit_opacity: logit(rng.random_range(0.8..0.95)),
                sh,
            }
        })
        .collect();
    GaussianCloud::new(gaussians, params.sh_degree)
}

/// Colour of the degree-0 term, clamped to `[0, 1]`.
pub fn dc_color(g: &Gaussian) -> [f64; 3] {
    g.sh[0].map(|c| (SH_C0 * c + 0.5).clamp(0.0, 1.0))
}

/// Ground-truth positions plus isotropic noise of std-dev `sigma`.
pub fn init_point_cloud(
    gt: &GaussianCloud,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ColoredPointCloud> {
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let points = gt
        .gaussians
        .iter()
        .map(|g| ColoredPoint {
            position: if sigma > 0.0 {
                std::array::from_fn(|a| g.mu[a] + noise.sample(rng))
            } else {
                g.mu
            },
            color: dc_color(g),
        })
        .collect();
    ColoredPointCloud::new(points)
}

pub fn generate_corridor_scene(params: &SceneParams) -> Result<SyntheticScene> {
    if params.n_frames < 8 {
        return Err(Error::Invalid(format!(
            "need at least 8 frames, got {}",
            params.n_frames
        )));
    }
    if params.n_gaussians < 16 {
        return Err(Error::Invalid(format!(
            "need at least 16 Gaussians, got {}",
            params.n_gaussians
        )));
    }
    if !(params.sigma_init >= 0.0 && params.sigma_init.is_finite()) {
        return Err(Error::Invalid("sigma_init must be non-negative".into()));
    }
    let camera = params.camera()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ground_truth = ground_truth_cloud(params, &mut rng)?;
    let point_cloud = init_point_cloud(&ground_truth, params.sigma_init, &mut rng)?;
    let anchor = corridor_trajectory(params.n_frames)?;
    let settings = RenderSettings::default();
    let frames = anchor
        .poses()
        .par_iter()
        .zip(anchor.timestamps())
        .map(|(pose, &t)| Frame {
            image: render(&ground_truth, pose, &camera, &settings).image,
            pose: *pose,
            timestamp: t,
        })
        .collect();
    Ok(SyntheticScene {
        params: *params,
        camera,
        ground_truth,
        anchor,
        frames,
        point_cloud,
    })
}

/// Bounds of the random similarity applied to each client chunk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim3Noise {
    /// Scale drawn from `[1 - scale, 1 + scale]`.
    pub scale: f64,
    /// Rotation angle bound, radians.
    pub rotation: f64,
    /// Translation norm bound, metres.
    pub translation: f64,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_sim3(noise: &Sim3Noise, rng: &mut ChaCha8Rng) -> Result<Sim3Transform> {
    let scale = 1.0
        + if noise.scale > 0.0 {
            rng.random_range(-noise.scale..=noise.scale)
        } else {
            0.0
        };
    let angle = if noise.rotation > 0.0 {
        rng.random_range(0.0..=noise.rotation)
    } else {
        0.0
    };
    let dist = if noise.translation > 0.0 {
        rng.random_range(0.0..=noise.translation)
    } else {
        0.0
    };
    let axis = random_unit(rng);
    let dir = random_unit(rng);
    Sim3Transform::new(
        scale,
        UnitQuaternion::from_scaled_axis(axis * angle),
        dir * dist,
    )
}

/// Splits the anchor into `ceil(N/C)` client chunks, each expressed in its
/// own randomly perturbed frame. Every chunk after the first also carries
/// the previous chunk's last pose as a handover frame.
pub fn perturb_client_trajectories(
    anchor: &Trajectory,
    chunk: usize,
    noise: &Sim3Noise,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if chunk == 0 {
        return Err(Error::Invalid("chunk size must be positive".into()));
    }
    let n = anchor.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n.div_ceil(chunk))
        .map(|k| {
            let start = (k * chunk).saturating_sub(usize::from(k > 0));
            let end = ((k + 1) * chunk).min(n);
            let s = random_sim3(noise, &mut rng)?;
            Ok(anchor.slice(start..end)?.map_poses(|p| s.apply_pose(p)))
        })
        .collect()
}
