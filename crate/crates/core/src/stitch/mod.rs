//! Trajectory alignment to a global anchor and client-boundary smoothing.
//!
//! Trajectory files hold one pose per line, `timestamp tx ty tz qw qx qy qz`,
//! whitespace separated, with `#` starting a comment.

mod se3;
mod sim3;

use std::fmt::Write as _;
use std::path::Path;

pub use se3::{compute_boundary_delta, se3_exp, se3_log, smooth_poses, DecayMode, Twist};
pub use sim3::{rms_residual, umeyama_sim3, Sim3Fit, Sim3Transform};

use crate::error::{Error, Result};
use crate::types::{Pose, Vec3};

/// Default smoothing window in frames.
pub const DEFAULT_TAU: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    timestamps: Vec<u64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<u64>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Invalid(
                "trajectory must hold at least one pose".into(),
            ));
        }
        if poses.len() != timestamps.len() {
            return Err(Error::ShapeMismatch {
                expected: poses.len(),
                found: timestamps.len(),
            });
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(format!(
                "timestamps must increase strictly ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { poses, timestamps })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn first(&self) -> (u64, &Pose) {
        (self.timestamps[0], &self.poses[0])
    }

    pub fn last(&self) -> (u64, &Pose) {
        let i = self.len() - 1;
        (self.timestamps[i], &self.poses[i])
    }

    pub fn pose_at(&self, timestamp: u64) -> Option<&Pose> {
        self.timestamps
            .binary_search(&timestamp)
            .ok()
            .map(|i| &self.poses[i])
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.translation).collect()
    }

    /// Sub-trajectory of the poses with index in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() {
            return Err(Error::Invalid(format!(
                "slice {range:?} exceeds trajectory of {} poses",
                self.len()
            )));
        }
        Self::new(
            self.poses[range.clone()].to_vec(),
            self.timestamps[range].to_vec(),
        )
    }

    pub fn map_poses(&self, f: impl Fn(&Pose) -> Pose) -> Self {
        Self {
            poses: self.poses.iter().map(f).collect(),
            timestamps: self.timestamps.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# timestamp tx ty tz qw qx qy qz\n");
        for (t, p) in self.timestamps.iter().zip(&self.poses) {
            let q = p.wxyz();
            let tr = p.translation;
            writeln!(
                out,
                "{t} {} {} {} {} {} {} {}",
                tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut poses = Vec::new();
        let mut stamps = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(format!(
                    "line {}: expected 8 fields, found {}",
                    n + 1,
                    fields.len()
                ));
            }
            let t: u64 = fields[0]
                .parse()
                .map_err(|e| format!("line {}: bad timestamp '{}': {e}", n + 1, fields[0]))?;
            let mut v = [0.0f64; 7];
            for (k, f) in fields[1..].iter().enumerate() {
                v[k] = f
                    .parse()
                    .map_err(|e| format!("line {}: bad number '{f}': {e}", n + 1))?;
                if !v[k].is_finite() {
                    return Err(format!("line {}: non-finite value", n + 1));
                }
            }
            let q = [v[3], v[4], v[5], v[6]];
            if q.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
                return Err(format!("line {}: zero quaternion", n + 1));
            }
            stamps.push(t);
            poses.push(Pose::from_wxyz(q, [v[0], v[1], v[2]]));
        }
        Self::new(poses, stamps).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::parse(path, m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Estimates the similarity from `client` to `anchor` positions matched by
/// timestamp and applies it to every client pose.
pub fn align_trajectory(client: &Trajectory, anchor: &Trajectory) -> Result<(Trajectory, Sim3Fit)> {
    let mut src = Vec::with_capacity(client.len());
    let mut dst = Vec::with_capacity(client.len());
    for (t, p) in client.timestamps.iter().zip(&client.poses) {
        let a = anchor.pose_at(*t).ok_or(Error::MissingCorrespondence(*t))?;
        src.push(p.translation);
        dst.push(a.translation);
    }
    let fit = umeyama_sim3(&src, &dst)?;
    Ok((client.map_poses(|p| fit.transform.apply_pose(p)), fit))
}

/// Blends `delta` into the first `tau` poses of `aligned` (see [`smooth_poses`]).
pub fn smooth_boundary(
    aligned: &Trajectory,
    delta: &Pose,
    tau: usize,
    mode: DecayMode,
) -> Trajectory {
    let mut out = aligned.clone();
    smooth_poses(&mut out.poses, delta, tau, mode);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StitchSettings {
    pub tau: usize,
    pub decay: DecayMode,
}

impl Default for StitchSettings {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            decay: DecayMode::Linear,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StitchReport {
    pub fits: Vec<Sim3Fit>,
    /// `ΔT` applied at each boundary, in client order.
    pub deltas: Vec<Pose>,
}

/// Aligns every client to the anchor and smooths each boundary in client order.
///
/// When a client's first timestamp repeats the previous client's last one
/// (a handover frame), `ΔT` is measured on that shared frame and the
/// duplicate is dropped after smoothing. Otherwise `ΔT` maps the incoming
/// head directly onto the outgoing tail.
pub fn stitch_trajectories(
    clients: &[Trajectory],
    anchor: &Trajectory,
    settings: &StitchSettings,
) -> Result<(Trajectory, StitchReport)> {
    let Some(first) = clients.first() else {
        return Err(Error::Invalid("nothing to stitch".into()));
    };
    let (mut out, fit) = align_trajectory(first, anchor)?;
    let mut report = StitchReport {
        fits: vec![fit],
        deltas: Vec::new(),
    };
    for client in &clients[1..] {
        let (aligned, fit) = align_trajectory(client, anchor)?;
        report.fits.push(fit);
        let (tail_t, tail) = out.last();
        let (head_t, head) = aligned.first();
        if head_t < tail_t {
            return Err(Error::Invalid(format!(
                "client trajectories overlap beyond one frame ({head_t} < {tail_t})"
            )));
        }
        let delta = compute_boundary_delta(tail, head);
        let smoothed = smooth_boundary(&aligned, &delta, settings.tau, settings.decay);
        report.deltas.push(delta);
        let skip = usize::from(head_t == tail_t);
        out.poses.extend_from_slice(&smoothed.poses[skip..]);
        out.timestamps
            .extend_from_slice(&smoothed.timestamps[skip..]);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn spiral(n: usize) -> Trajectory {
        let poses = (0..n)
            .map(|i| {
                let a = i as f64 * 0.1;
                Pose::new(
                    UnitQuaternion::from_euler_angles(0.0, a, 0.05 * a),
                    Vec3::new(a.cos() * 3.0, 0.2 * a, a.sin() * 3.0),
                )
            })
            .collect();
        Trajectory::new(poses, (0..n as u64).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_timestamps() {
        let p = vec![Pose::identity(); 2];
        assert!(Trajectory::new(p.clone(), vec![3, 3]).is_err());
        assert!(Trajectory::new(p, vec![0]).is_err());
        assert!(Trajectory::new(Vec::new(), Vec::new()).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = spiral(20);
        let back = Trajectory::parse(&t.to_text()).unwrap();
        assert_eq!(back.timestamps, t.timestamps);
        for (a, b) in back.poses.iter().zip(&t.poses) {
            assert_eq!(a.translation, b.translation);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-15);
        }
    }

    #[test]
    fn parse_comments_and_errors() {
        let t =
            Trajectory::parse("# header\n5 1 2 3 1 0 0 0 # trailing\n\n7 0 0 0 0 0 0 2\n").unwrap();
        assert_eq!(t.timestamps(), &[5, 7]);
        assert!((t.poses()[1].rotation_angle() - std::f64::consts::PI).abs() < 1e-12);
        assert!(Trajectory::parse("1 2 3").unwrap_err().contains("line 1"));
        assert!(Trajectory::parse("1 0 0 0 0 0 0 0").is_err());
        assert!(Trajectory::parse("").is_err());
    }

    #[test]
    fn align_already_aligned() {
        let a = spiral(30);
        let (out, fit) = align_trajectory(&a.slice(5..20).unwrap(), &a).unwrap();
        assert!(fit.rms < 1e-12);
        for (p, q) in out.poses().iter().zip(&a.poses()[5..20]) {
            assert!(p.distance(q) < 1e-9);
        }
    }

    #[test]
    fn align_translated_and_scaled() {
        let a = spiral(30);
        let d = Vec3::new(4.0, -2.0, 1.0);
        let shifted = a.map_poses(|p| Pose::new(p.rotation, p.translation + d));
        let (out, _) = align_trajectory(&shifted, &a).unwrap();
        for (p, q) in out.positions().iter().zip(a.positions()) {
            assert!((p - q).norm() < 1e-9);
        }
        let scaled = a.map_poses(|p| Pose::new(p.rotation, p.translation * 2.0));
        let (out, fit) = align_trajectory(&scaled, &a).unwrap();
        assert!((fit.transform.scale - 0.5).abs() < 1e-9);
        for (p, q) in out.positions().iter().zip(a.positions()) {
            assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn align_needs_correspondences() {
        let a = spiral(10);
        let late = Trajectory::new(vec![Pose::identity(); 3], vec![20, 21, 22]).unwrap();
        assert!(matches!(
            align_trajectory(&late, &a),
            Err(Error::MissingCorrespondence(20))
        ));
    }

    #[test]
    fn smoothing_window() {
        let a = spiral(12);
        assert_eq!(
            smooth_boundary(&a, &Pose::identity(), 5, DecayMode::Linear),
            a
        );
        let delta = Pose::from_wxyz([0.99, 0.05, 0.0, 0.1], [0.3, 0.0, -0.2]);
        let s = smooth_boundary(&a, &delta, 5, DecayMode::Linear);
        assert!(s.poses()[0].distance(&delta.compose(&a.poses()[0])) < 1e-12);
        for i in 5..12 {
            assert_eq!(s.poses()[i], a.poses()[i]);
        }
        assert!(s.poses()[3].distance(&a.poses()[3]) > 0.0);
    }

    #[test]
    fn stitch_recovers_anchor_with_handover_frames() {
        let anchor = spiral(40);
        let warp = [
            Sim3Transform::new(
                1.3,
                UnitQuaternion::from_euler_angles(0.2, 0.1, -0.3),
                Vec3::new(1.0, 2.0, 0.0),
            )
            .unwrap(),
            Sim3Transform::new(
                0.8,
                UnitQuaternion::from_euler_angles(-0.1, 0.4, 0.0),
                Vec3::new(-3.0, 0.0, 1.0),
            )
            .unwrap(),
        ];
        let clients = vec![
            anchor
                .slice(0..20)
                .unwrap()
                .map_poses(|p| warp[0].apply_pose(p)),
            anchor
                .slice(19..40)
                .unwrap()
                .map_poses(|p| warp[1].apply_pose(p)),
        ];
        let (out, report) =
            stitch_trajectories(&clients, &anchor, &StitchSettings::default()).unwrap();
        assert_eq!(out.timestamps(), anchor.timestamps());
        for (p, q) in out.poses().iter().zip(anchor.poses()) {
            assert!(p.distance(q) < 1e-9);
        }
        assert!(report.deltas[0].distance(&Pose::identity()) < 1e-9);
    }

    #[test]
    fn stitch_closes_gap_between_disjoint_chunks() {
        let anchor = spiral(30);
        let clients = vec![anchor.slice(0..15).unwrap(), anchor.slice(15..30).unwrap()];
        let (out, _) = stitch_trajectories(
            &clients,
            &anchor,
            &StitchSettings {
                tau: 4,
                decay: DecayMode::Linear,
            },
        )
        .unwrap();
        assert_eq!(out.len(), 30);
        assert!(out.poses()[14].distance(&out.poses()[15]) < 1e-9);
        assert!(out.poses()[20].distance(&anchor.poses()[20]) < 1e-9);
    }
}
