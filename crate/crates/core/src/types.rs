//! Scene representation, camera model, poses and images.
//!
//! Quaternions are scalar-first `(w, x, y, z)` everywhere. Scales are kept as
//! natural logarithms and opacity as a logit; activations are applied only
//! by the renderer.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Largest supported spherical-harmonic degree.
pub const MAX_SH_DEGREE: u32 = 3;

/// Number of SH coefficients per colour channel for `degree`.
pub const fn sh_coeff_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One Gaussian primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    /// Centre in world coordinates (meters).
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    /// Unit quaternion, `(w, x, y, z)`.
    pub quat: [f64; 4],
    pub logit_opacity: f64,
    /// `(L+1)^2` RGB coefficients, DC first.
    pub sh: Vec<[f64; 3]>,
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }
}

pub fn sigmoid_opacity(g: &Gaussian) -> f64 {
    g.opacity()
}

/// Rotation matrix of a (not necessarily normalised) `(w, x, y, z)` quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: u32,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: u32) -> Result<Self> {
        let cloud = Self {
            gaussians,
            sh_degree,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn coeffs_per_channel(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::Invalid("gaussian cloud must not be empty".into()));
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::Invalid(format!(
                "sh degree {} exceeds {MAX_SH_DEGREE}",
                self.sh_degree
            )));
        }
        let n_sh = self.coeffs_per_channel();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != n_sh {
                return Err(Error::Invalid(format!(
                    "gaussian {i}: {} sh coefficients, expected {n_sh}",
                    g.sh.len()
                )));
            }
            if (quat_norm(&g.quat) - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("gaussian {i}: quaternion not unit")));
            }
            let finite = g.mu.iter().all(|v| v.is_finite())
                && g.log_scale.iter().all(|v| v.is_finite())
                && g.logit_opacity.is_finite()
                && g.sh.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Invalid(format!(
                    "gaussian {i}: non-finite parameter"
                )));
            }
        }
        Ok(())
    }

    /// Flat copy of every centre, used for frozen-geometry checks.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.mu).collect()
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from a scalar-first quaternion, normalising it.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Self {
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(rotation, Vec3::from(t))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -(r_inv * self.translation))
    }

    /// SE(3) product `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose::new(
            UnitQuaternion::new_normalize(q),
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Rotation angle plus translation norm of `self⁻¹ · other`.
    pub fn distance(&self, other: &Pose) -> f64 {
        let rel = self.inverse().compose(other);
        rel.rotation_angle() + rel.translation.norm()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Pinhole intrinsics. Pixel centres sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        near: f64,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at `(w/2, h/2)`.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64, near: f64) -> Result<Self> {
        let fx = (width as f64 / 2.0) / (fov_x_deg.to_radians() / 2.0).tan();
        Self::new(
            fx,
            fx,
            (width / 2) as f64,
            (height / 2) as f64,
            width,
            height,
            near,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.near > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid camera {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Row-major linear RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        if pixels
            .iter()
            .flatten()
            .any(|c| !c.is_finite() || !(0.0..=1.0).contains(c))
        {
            return Err(Error::Invalid("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// One channel as a dense row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().map(|p| p[c]).collect()
    }

    /// Standard deviation over every channel value.
    pub fn std_dev(&self) -> f64 {
        let n = (self.pixels.len() * 3) as f64;
        let mean = self.pixels.iter().flatten().sum::<f64>() / n;
        let var = self
            .pixels
            .iter()
            .flatten()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub pose: Pose,
    pub timestamp: u64,
}
