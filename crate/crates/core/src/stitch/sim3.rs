use nalgebra::{Matrix3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::types::{Pose, Vec3};

/// `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "Sim(3) scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Translation goes through the full similarity; the rotation is only
    /// rotated, so the result stays rigid.
    pub fn apply_pose(&self, p: &Pose) -> Pose {
        Pose::new(self.rotation * p.rotation, self.apply_point(&p.translation))
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        let s = 1.0 / self.scale;
        Self {
            scale: s,
            rotation: r,
            translation: -(s * (r * self.translation)),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply_point(&other.translation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3Fit {
    pub transform: Sim3Transform,
    /// Root-mean-square distance between transformed source and target points.
    pub rms: f64,
}

pub fn rms_residual(t: &Sim3Transform, src: &[Vec3], dst: &[Vec3]) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (t.apply_point(s) - d).norm_squared())
        .sum();
    (sum / src.len().max(1) as f64).sqrt()
}

/// Closed-form least-squares similarity mapping `src` onto `dst`.
pub fn umeyama_sim3(src: &[Vec3], dst: &[Vec3]) -> Result<Sim3Fit> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch {
            expected: src.len(),
            found: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv_n;
    let mu_d = dst.iter().sum::<Vec3>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let scale_ref = sv[order[0]].max(var_s);
    if var_s.is_nan() || var_s <= 0.0 || sv[order[1]] <= 1e-12 * scale_ref {
        return Err(Error::DegenerateInput(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let mut diag = [1.0; 3];
    if (u.determinant() * v_t.determinant()) < 0.0 {
        diag[order[2]] = -1.0;
    }
    let d = Matrix3::from_diagonal(&Vec3::from(diag));
    let r = u * d * v_t;
    let trace: f64 = (0..3).map(|i| sv[i] * diag[i]).sum();
    let scale = trace / var_s;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_d - scale * (rotation * mu_s);
    let transform = Sim3Transform::new(scale, rotation, translation)?;
    Ok(Sim3Fit {
        rms: rms_residual(&transform, src, dst),
        transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.2),
            Vec3::new(0.0, 2.0, -0.3),
            Vec3::new(0.5, 0.5, 1.0),
            Vec3::new(-1.0, 0.3, 0.4),
        ]
    }

    #[test]
    fn identity_case() {
        let p = points();
        let fit = umeyama_sim3(&p, &p).unwrap();
        assert!((fit.transform.scale - 1.0).abs() < 1e-12);
        assert!(fit.transform.rotation.angle() < 1e-12);
        assert!(fit.transform.translation.norm() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let truth = Sim3Transform::new(
            1.7,
            UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0),
            Vec3::new(3.0, -1.0, 0.5),
        )
        .unwrap();
        let dst = points();
        let src: Vec<Vec3> = dst.iter().map(|p| truth.inverse().apply_point(p)).collect();
        let fit = umeyama_sim3(&src, &dst).unwrap().transform;
        assert!((fit.scale / truth.scale - 1.0).abs() < 1e-9);
        assert!(fit.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!((fit.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn planar_points_are_fine_but_collinear_are_not() {
        let planar: Vec<Vec3> = (0..6)
            .map(|i| Vec3::new(i as f64, (i * i) as f64 * 0.1, 0.0))
            .collect();
        assert!(umeyama_sim3(&planar, &planar).is_ok());
        let line: Vec<Vec3> = (0..6)
            .map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert!(matches!(
            umeyama_sim3(&line, &line),
            Err(Error::DegenerateInput(_))
        ));
        let same = vec![Vec3::new(1.0, 1.0, 1.0); 5];
        assert!(matches!(
            umeyama_sim3(&same, &same),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            umeyama_sim3(&same[..2], &same[..2]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn reflection_is_excluded() {
        let src = points();
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let fit = umeyama_sim3(&src, &dst).unwrap();
        let r = fit.transform.rotation.to_rotation_matrix().into_inner();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!(fit.rms > 0.0);
    }

    #[test]
    fn sim3_group_ops() {
        let a = Sim3Transform::new(
            2.0,
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vec3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let p = Vec3::new(-0.3, 0.7, 1.1);
        assert!((a.inverse().apply_point(&a.apply_point(&p)) - p).norm() < 1e-12);
        let id = a.compose(&a.inverse());
        assert!((id.scale - 1.0).abs() < 1e-12 && id.translation.norm() < 1e-12);
        assert!(Sim3Transform::new(0.0, UnitQuaternion::identity(), Vec3::zeros()).is_err());
    }
}
