//! Differentiable per-pixel Gaussian splatting.
//!
//! Every Gaussian is projected with the EWA approximation, depth sorted, and
//! composited front to back at every pixel centre it covers. The backward pass
//! only produces gradients for appearance parameters (log-scale, quaternion,
//! logit-opacity, SH); centres have no gradient slot.
//!
//! Two extents are tracked per Gaussian. The *radius* (3σ of the largest 2D
//! eigenvalue) decides culling and visibility. The *support* is the ellipse
//! `dᵀ Σ⁻¹ d ≤ 49` inside which the Gaussian is actually composited; outside
//! it the kernel is below `exp(-24.5)`, so truncation leaves the rendered
//! image continuous in every appearance parameter up to ~1e-11.

pub mod sh;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::types::{quat_norm, quat_to_matrix, sigmoid, Camera, GaussianCloud, Image, Pose};

/// Added to the diagonal of every 2D covariance (pixels²).
pub const COV2D_DILATION: f64 = 0.3;
pub const RADIUS_SIGMAS: f64 = 3.0;
pub const ALPHA_MAX: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Ray directions beyond this multiple of the half field of view are clamped
/// when linearising the projection.
pub const FRUSTUM_GUARD: f64 = 1.3;
/// Squared Mahalanobis distance bounding the composited support.
pub const SUPPORT_MAHALANOBIS_SQ: f64 = 49.0;

const TILE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    /// Zero iff culled.
    pub radius: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl ProjectedGaussian {
    fn culled(depth: f64) -> Self {
        Self {
            mean2d: [0.0; 2],
            cov2d: [[0.0; 2]; 2],
            depth,
            radius: 0.0,
            color: [0.0; 3],
            opacity: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// 1 for every Gaussian with positive projected radius, else 0.
    pub visibility_increment: Vec<u32>,
    /// Residual transmittance per pixel, row-major.
    pub per_pixel_transmittance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceGradients {
    pub d_log_scale: Vec<[f64; 3]>,
    pub d_quat: Vec<[f64; 4]>,
    pub d_logit_opacity: Vec<f64>,
    pub d_sh: Vec<Vec<[f64; 3]>>,
}

impl AppearanceGradients {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let m = cloud.len();
        Self {
            d_log_scale: vec![[0.0; 3]; m],
            d_quat: vec![[0.0; 4]; m],
            d_logit_opacity: vec![0.0; m],
            d_sh: vec![vec![[0.0; 3]; cloud.coeffs_per_channel()]; m],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_log_scale.iter().flatten().all(|v| v.is_finite())
            && self.d_quat.iter().flatten().all(|v| v.is_finite())
            && self.d_logit_opacity.iter().all(|v| v.is_finite())
            && self.d_sh.iter().flatten().flatten().all(|v| v.is_finite())
    }

    /// True when every entry belonging to Gaussian `i` is exactly zero.
    pub fn is_zero_at(&self, i: usize) -> bool {
        self.d_log_scale[i].iter().all(|&v| v == 0.0)
            && self.d_quat[i].iter().all(|&v| v == 0.0)
            && self.d_logit_opacity[i] == 0.0
            && self.d_sh[i].iter().flatten().all(|&v| v == 0.0)
    }
}

/// Per visible Gaussian state shared by the forward and backward passes.
#[derive(Clone, Debug)]
struct Splat {
    index: usize,
    mean: [f64; 2],
    /// Inverse covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    color_clamped: [bool; 3],
    basis: Vec<f64>,
    /// Projection Jacobian times the world-to-camera rotation.
    jw: Matrix2x3<f64>,
    rot: Matrix3<f64>,
    scale: [f64; 3],
    quat_unit: [f64; 4],
    quat_norm: f64,
    /// Pixel range of the support, inclusive.
    px_range: [usize; 4],
}

/// Projection and tile binning for one `(cloud, pose, camera)` triple.
///
/// `forward` and `backward` can both be called on the same value, which is
/// how local training avoids projecting twice per step.
pub struct Prepared<'a> {
    cloud: &'a GaussianCloud,
    cam: Camera,
    settings: RenderSettings,
    projected: Vec<ProjectedGaussian>,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn project_all(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &Camera,
) -> (Vec<ProjectedGaussian>, Vec<Option<Splat>>) {
    let w2c = pose.rotation_matrix().transpose();
    let center = pose.translation;
    cloud
        .gaussians
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let mu = Vector3::from(g.mu);
            let t = w2c * (mu - center);
            let (x, y, z) = (t.x, t.y, t.z);
            if z < cam.near {
                return (ProjectedGaussian::culled(z), None);
            }
            let mean = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
            // The affine approximation degrades far outside the frustum; the
            // Jacobian is evaluated at the clamped ray direction.
            let lim_x = FRUSTUM_GUARD * 0.5 * cam.width as f64 / cam.fx;
            let lim_y = FRUSTUM_GUARD * 0.5 * cam.height as f64 / cam.fy;
            let (jx, jy) = ((x / z).clamp(-lim_x, lim_x), (y / z).clamp(-lim_y, lim_y));
            let j = Matrix2x3::new(
                cam.fx / z,
                0.0,
                -cam.fx * jx / z,
                0.0,
                cam.fy / z,
                -cam.fy * jy / z,
            );
            let jw = j * w2c;
            let rot = quat_to_matrix(g.quat);
            let scale = g.scale();
            let m = rot * Matrix3::from_diagonal(&Vector3::from(scale));
            let cov3 = m * m.transpose();
            let cov = jw * cov3 * jw.transpose() + Matrix2::identity() * COV2D_DILATION;
            let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
            let half = 0.5 * (a - c);
            let lambda_max = 0.5 * (a + c) + (half * half + b * b).sqrt();
            let radius = RADIUS_SIGMAS * lambda_max.sqrt();
            let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
            let outside = mean[0] + radius < 0.0
                || mean[0] - radius > w
                || mean[1] + radius < 0.0
                || mean[1] - radius > h;
            if outside || !radius.is_finite() {
                return (ProjectedGaussian::culled(z), None);
            }

            let dir = (mu - center).normalize();
            let basis = sh::sh_basis([dir.x, dir.y, dir.z], cloud.sh_degree);
            let raw = sh::raw_color(&g.sh, &basis);
            let color = raw.map(|v| v.clamp(0.0, 1.0));
            let color_clamped = raw.map(|v| !(0.0..=1.0).contains(&v));
            let opacity = sigmoid(g.logit_opacity);
            let det = a * c - b * b;
            let conic = [c / det, -b / det, a / det];

            let ex = (SUPPORT_MAHALANOBIS_SQ * a).sqrt();
            let ey = (SUPPORT_MAHALANOBIS_SQ * c).sqrt();
            let lo = |m: f64, e: f64| (m - e).ceil().max(0.0) as usize;
            let hi = |m: f64, e: f64, lim: f64| (m + e).floor().min(lim);
            let (x1, y1) = (hi(mean[0], ex, w), hi(mean[1], ey, h));
            let px_range = if x1 < 0.0 || y1 < 0.0 {
                [1, 0, 1, 0]
            } else {
                [lo(mean[0], ex), x1 as usize, lo(mean[1], ey), y1 as usize]
            };

            let qn = quat_norm(&g.quat);
            let projected = ProjectedGaussian {
                mean2d: mean,
                cov2d: [[a, b], [b, c]],
                depth: z,
                radius,
                color,
                opacity,
            };
            let splat = Splat {
                index,
                mean,
                conic,
                opacity,
                color,
                color_clamped,
                basis,
                jw,
                rot,
                scale,
                quat_unit: g.quat.map(|v| v / qn),
                quat_norm: qn,
                px_range,
            };
            (projected, Some(splat))
        })
        .unzip()
}

/// EWA projection of every Gaussian; culled ones have radius 0.
pub fn project(cloud: &GaussianCloud, pose: &Pose, cam: &Camera) -> Vec<ProjectedGaussian> {
    project_all(cloud, pose, cam).0
}

/// One composited sample along a pixel's sorted list.
#[derive(Clone, Copy)]
struct Sample {
    splat: u32,
    slot: u32,
    alpha: f64,
    kernel: f64,
    clamped: bool,
    trans_before: f64,
    dx: f64,
    dy: f64,
}

impl<'a> Prepared<'a> {
    pub fn new(
        cloud: &'a GaussianCloud,
        pose: &Pose,
        cam: &Camera,
        settings: &RenderSettings,
    ) -> Self {
        let (projected, splats) = project_all(cloud, pose, cam);
        let mut splats: Vec<Splat> = splats.into_iter().flatten().collect();
        // Stable sort: equal depths keep index order.
        splats.sort_by(|a, b| {
            projected[a.index]
                .depth
                .total_cmp(&projected[b.index].depth)
                .then(a.index.cmp(&b.index))
        });

        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (si, s) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = s.px_range;
            if x0 > x1 || y0 > y1 {
                continue;
            }
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(si as u32);
                }
            }
        }
        Self {
            cloud,
            cam: *cam,
            settings: *settings,
            projected,
            splats,
            tiles,
            tiles_x,
        }
    }

    pub fn projected(&self) -> &[ProjectedGaussian] {
        &self.projected
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let x1 = (x0 + TILE).min(self.cam.width);
        let y1 = (y0 + TILE).min(self.cam.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    /// Front-to-back compositing of one pixel. Calls `visit` for every sample
    /// that contributed and returns `(colour without background, final T)`.
    fn composite(
        &self,
        list: &[u32],
        px: usize,
        py: usize,
        mut visit: impl FnMut(Sample),
    ) -> ([f64; 3], f64) {
        let (fx, fy) = (px as f64, py as f64);
        let mut color = [0.0; 3];
        let mut trans = 1.0;
        for (slot, &si) in list.iter().enumerate() {
            let s = &self.splats[si as usize];
            let [x0, x1, y0, y1] = s.px_range;
            if px < x0 || px > x1 || py < y0 || py > y1 {
                continue;
            }
            let dx = fx - s.mean[0];
            let dy = fy - s.mean[1];
            let power = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
            if power > SUPPORT_MAHALANOBIS_SQ {
                continue;
            }
            let kernel = (-0.5 * power).exp();
            let raw = s.opacity * kernel;
            let clamped = raw > ALPHA_MAX;
            let alpha = if clamped { ALPHA_MAX } else { raw };
            for ch in 0..3 {
                color[ch] += s.color[ch] * alpha * trans;
            }
            visit(Sample {
                splat: si,
                slot: slot as u32,
                alpha,
                kernel,
                clamped,
                trans_before: trans,
                dx,
                dy,
            });
            trans *= 1.0 - alpha;
            if trans < MIN_TRANSMITTANCE {
                break;
            }
        }
        (color, trans)
    }

    pub fn visibility(&self) -> Vec<u32> {
        self.projected
            .iter()
            .map(|p| u32::from(p.radius > 0.0))
            .collect()
    }

    pub fn forward(&self) -> RenderOutput {
        let bg = self.settings.background;
        let per_tile: Vec<Vec<([f64; 3], f64)>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| {
                let list = &self.tiles[t];
                self.tile_pixels(t)
                    .map(|(x, y)| {
                        let (c, trans) = self.composite(list, x, y, |_| {});
                        (
                            [
                                c[0] + trans * bg[0],
                                c[1] + trans * bg[1],
                                c[2] + trans * bg[2],
                            ],
                            trans,
                        )
                    })
                    .collect()
            })
            .collect();

        let n = self.cam.pixel_count();
        let mut pixels = vec![[0.0; 3]; n];
        let mut transmittance = vec![0.0; n];
        for (t, values) in per_tile.into_iter().enumerate() {
            for ((x, y), (c, trans)) in self.tile_pixels(t).zip(values) {
                // Rounding can push a saturated sum a hair past 1.
                pixels[y * self.cam.width + x] = c.map(|v| v.clamp(0.0, 1.0));
                transmittance[y * self.cam.width + x] = trans;
            }
        }
        RenderOutput {
            image: Image {
                width: self.cam.width,
                height: self.cam.height,
                pixels,
            },
            visibility_increment: self.visibility(),
            per_pixel_transmittance: transmittance,
        }
    }

    /// Reverse-mode pass for `dL/dimage` given per pixel (row-major RGB).
    pub fn backward(&self, d_image: &[[f64; 3]]) -> AppearanceGradients {
        assert_eq!(
            d_image.len(),
            self.cam.pixel_count(),
            "d_image must match the camera resolution"
        );
        let bg = self.settings.background;
        // Per tile: [dcolor(3), dconic(3), dopacity] for each entry of the tile list.
        let per_tile: Vec<Vec<[f64; 7]>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| {
                let list = &self.tiles[t];
                let mut acc = vec![[0.0; 7]; list.len()];
                let mut samples = Vec::new();
                for (x, y) in self.tile_pixels(t) {
                    let dc = d_image[y * self.cam.width + x];
                    if dc == [0.0; 3] {
                        continue;
                    }
                    samples.clear();
                    let (_, trans_final) = self.composite(list, x, y, |s| samples.push(s));
                    let mut suffix = [
                        trans_final * bg[0],
                        trans_final * bg[1],
                        trans_final * bg[2],
                    ];
                    for s in samples.iter().rev() {
                        let sp = &self.splats[s.splat as usize];
                        let a = &mut acc[s.slot as usize];
                        let weight = s.alpha * s.trans_before;
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            a[ch] += dc[ch] * weight;
                            d_alpha += dc[ch]
                                * (sp.color[ch] * s.trans_before - suffix[ch] / (1.0 - s.alpha));
                            suffix[ch] += sp.color[ch] * weight;
                        }
                        if !s.clamped {
                            a[6] += d_alpha * s.kernel;
                            let d_power = -0.5 * d_alpha * sp.opacity * s.kernel;
                            a[3] += d_power * s.dx * s.dx;
                            a[4] += d_power * 2.0 * s.dx * s.dy;
                            a[5] += d_power * s.dy * s.dy;
                        }
                    }
                }
                acc
            })
            .collect();

        let mut per_splat = vec![[0.0; 7]; self.splats.len()];
        for (t, acc) in per_tile.iter().enumerate() {
            for (&si, a) in self.tiles[t].iter().zip(acc) {
                let dst = &mut per_splat[si as usize];
                for k in 0..7 {
                    dst[k] += a[k];
                }
            }
        }

        let mut grads = AppearanceGradients::zeros(self.cloud);
        for (s, acc) in self.splats.iter().zip(&per_splat) {
            splat_backward(s, acc, &mut grads);
        }
        grads
    }
}

/// Chain rule from screen-space accumulators back to the stored parameters.
fn splat_backward(s: &Splat, acc: &[f64; 7], grads: &mut AppearanceGradients) {
    let i = s.index;
    for ch in 0..3 {
        if !s.color_clamped[ch] {
            for (k, y) in s.basis.iter().enumerate() {
                grads.d_sh[i][k][ch] = acc[ch] * y;
            }
        }
    }
    grads.d_logit_opacity[i] = acc[6] * s.opacity * (1.0 - s.opacity);

    // conic = cov⁻¹  ⇒  dL/dcov = -Q Gq Q
    let q = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(acc[3], 0.5 * acc[4], 0.5 * acc[4], acc[5]);
    let g_cov2 = -(q * g_conic * q);
    let g_cov3 = s.jw.transpose() * g_cov2 * s.jw;

    // cov3 = R D Rᵀ with D = diag(scale²)
    let d2 = Vector3::from(s.scale.map(|v| v * v));
    let rt_g_r = s.rot.transpose() * g_cov3 * s.rot;
    for k in 0..3 {
        grads.d_log_scale[i][k] = rt_g_r[(k, k)] * 2.0 * d2[k];
    }
    let g_rot = 2.0 * g_cov3 * s.rot * Matrix3::from_diagonal(&d2);
    let [w, x, y, z] = s.quat_unit;
    let g = |r: usize, c: usize| g_rot[(r, c)];
    let d_unit = [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ];
    let dot: f64 = (0..4).map(|k| d_unit[k] * s.quat_unit[k]).sum();
    for k in 0..4 {
        grads.d_quat[i][k] = (d_unit[k] - s.quat_unit[k] * dot) / s.quat_norm;
    }
}

pub fn render(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &Camera,
    settings: &RenderSettings,
) -> RenderOutput {
    Prepared::new(cloud, pose, cam, settings).forward()
}

pub fn render_backward(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &Camera,
    settings: &RenderSettings,
    d_image: &[[f64; 3]],
) -> AppearanceGradients {
    Prepared::new(cloud, pose, cam, settings).backward(d_image)
}
