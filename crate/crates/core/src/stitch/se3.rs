use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::types::{Pose, Vec3};

/// Below this rotation angle the exp/log maps switch to series expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// se(3) coordinates: `omega` is axis·angle, `v` the translational part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub omega: Vec3,
    pub v: Vec3,
}

impl Twist {
    pub fn zero() -> Self {
        Self {
            omega: Vec3::zeros(),
            v: Vec3::zeros(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            omega: self.omega * s,
            v: self.v * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega
            .iter()
            .chain(self.v.iter())
            .all(|x| x.is_finite())
    }
}

fn hat(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn se3_exp(tw: &Twist) -> Pose {
    let theta = tw.omega.norm();
    let w = hat(&tw.omega);
    let w2 = w * w;
    let (b, c) = if theta < SMALL_ANGLE {
        (
            0.5 - theta * theta / 24.0,
            1.0 / 6.0 - theta * theta / 120.0,
        )
    } else {
        let t2 = theta * theta;
        let half_sin = (0.5 * theta).sin();
        (
            2.0 * half_sin * half_sin / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let v = Matrix3::identity() + w * b + w2 * c;
    Pose::new(UnitQuaternion::from_scaled_axis(tw.omega), v * tw.v)
}

pub fn se3_log(p: &Pose) -> Twist {
    let omega = p.rotation.scaled_axis();
    let theta = omega.norm();
    let w = hat(&omega);
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * d;
    Twist {
        omega,
        v: v_inv * p.translation,
    }
}

/// How the boundary correction fades over the smoothing window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// `β(t) = 1 - t/τ`.
    #[default]
    Linear,
    /// `β(t) = exp(-t/τ)` inside the window.
    Exponential,
}

impl DecayMode {
    /// Weight for frame offset `t`, clamped to `[0, 1]` and zero from `τ` on.
    pub fn beta(self, t: usize, tau: usize) -> f64 {
        if tau == 0 || t >= tau {
            return 0.0;
        }
        let x = t as f64 / tau as f64;
        match self {
            DecayMode::Linear => (1.0 - x).clamp(0.0, 1.0),
            DecayMode::Exponential => (-x).exp().clamp(0.0, 1.0),
        }
    }
}

impl std::str::FromStr for DecayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(DecayMode::Linear),
            "exponential" | "exp" => Ok(DecayMode::Exponential),
            other => Err(format!("unknown decay mode '{other}'")),
        }
    }
}

/// `ΔT = prev_tail · next_head⁻¹`, so that `ΔT · next_head = prev_tail`.
pub fn compute_boundary_delta(prev_tail: &Pose, next_head: &Pose) -> Pose {
    prev_tail.compose(&next_head.inverse())
}

/// `pose_t ← Exp(β(t)·Log(ΔT)) · pose_t` for window offsets `t < τ`.
///
/// At `t = 0` the full `ΔT` is applied directly rather than through the
/// exp/log round trip.
pub fn smooth_poses(poses: &mut [Pose], delta: &Pose, tau: usize, mode: DecayMode) {
    let log = se3_log(delta);
    for (t, p) in poses.iter_mut().enumerate().take(tau) {
        let correction = if t == 0 {
            *delta
        } else {
            se3_exp(&log.scaled(mode.beta(t, tau)))
        };
        *p = correction.compose(p);
    }
}
