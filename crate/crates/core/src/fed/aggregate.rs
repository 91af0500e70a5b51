use crate::error::{Error, Result};
use crate::fed::wire::ClientUpdate;
use crate::types::{Gaussian, GaussianCloud};

/// Added to the visibility total in the weight denominator.
pub const AGGREGATION_EPS: f64 = 1e-8;

/// Weights `v_k / (Σ_j v_j + ε)` for one Gaussian; `None` when no client saw it.
pub fn aggregation_weights(visibility: &[u32]) -> Option<Vec<f64>> {
    let total: f64 = visibility.iter().map(|&v| f64::from(v)).sum();
    (total > 0.0).then(|| {
        visibility
            .iter()
            .map(|&v| f64::from(v) / (total + AGGREGATION_EPS))
            .collect()
    })
}

/// Visibility-weighted merge of client appearance into the incumbent.
///
/// Updates are processed in `client_id` order, so the result does not
/// depend on the order they arrive in. Quaternions are sign-aligned to the
/// incumbent before averaging and renormalised after. Gaussians no client
/// saw, and all positions, are copied from the incumbent.
pub fn aggregate(incumbent: &GaussianCloud, updates: &[ClientUpdate]) -> Result<GaussianCloud> {
    if updates.is_empty() {
        return Err(Error::Invalid(
            "aggregation needs at least one update".into(),
        ));
    }
    let m = incumbent.len();
    for u in updates {
        if u.len() != m {
            return Err(Error::ShapeMismatch {
                expected: m,
                found: u.len(),
            });
        }
        u.check_shapes(true)?;
        if u.sh_degree != incumbent.sh_degree {
            return Err(Error::Invalid(format!(
                "client {} sends SH degree {}, incumbent has {}",
                u.client_id, u.sh_degree, incumbent.sh_degree
            )));
        }
        if u.round != updates[0].round {
            return Err(Error::Invalid(format!(
                "updates from rounds {} and {} mixed",
                updates[0].round, u.round
            )));
        }
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);

    let n_sh = incumbent.coeffs_per_channel();
    let mut vis = vec![0u32; sorted.len()];
    let gaussians = incumbent
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            for (v, u) in vis.iter_mut().zip(&sorted) {
                *v = u.visibility[i];
            }
            let Some(w) = aggregation_weights(&vis) else {
                return inc.clone();
            };
            let mut log_scale = [0.0; 3];
            let mut quat = [0.0; 4];
            let mut logit_opacity = 0.0;
            let mut sh = vec![[0.0; 3]; n_sh];
            for (u, &wk) in sorted.iter().zip(&w) {
                if wk == 0.0 {
                    continue;
                }
                for j in 0..3 {
                    log_scale[j] += wk * f64::from(u.log_scale[i][j]);
                }
                let q = u.quat[i].map(f64::from);
                let dot: f64 = (0..4).map(|j| q[j] * inc.quat[j]).sum();
                let sign = if dot < 0.0 { -1.0 } else { 1.0 };
                for j in 0..4 {
                    quat[j] += wk * sign * q[j];
                }
                logit_opacity += wk * f64::from(u.logit_opacity[i]);
                for (k, coeff) in sh.iter_mut().enumerate() {
                    for ch in 0..3 {
                        coeff[ch] += wk * f64::from(u.sh_at(i, k, ch));
                    }
                }
            }
            let norm = quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            let quat = if norm > 0.0 {
                quat.map(|v| v / norm)
            } else {
                inc.quat
            };
            Gaussian {
                mu: inc.mu,
                log_scale,
                quat,
                logit_opacity,
                sh,
            }
        })
        .collect();
    GaussianCloud::new(gaussians, incumbent.sh_degree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn incumbent(m: usize) -> GaussianCloud {
        let g = Gaussian {
            mu: [1.0, 2.0, 3.0],
            log_scale: [-1.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            logit_opacity: 0.25,
            sh: vec![[0.5; 3]],
        };
        GaussianCloud::new(vec![g; m], 0).unwrap()
    }

    fn update(id: u32, m: usize, a: f32, q: [f32; 4], vis: Vec<u32>) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            round: 1,
            sh_degree: 0,
            log_scale: vec![[a; 3]; m],
            quat: vec![q; m],
            logit_opacity: vec![a; m],
            sh: vec![a; m * 3],
            visibility: vis,
        }
    }

    #[test]
    fn single_observer_dominates() {
        let inc = incumbent(1);
        let out = aggregate(
            &inc,
            &[
                update(0, 1, 2.0, [1.0, 0.0, 0.0, 0.0], vec![3]),
                update(1, 1, -7.0, [0.0, 1.0, 0.0, 0.0], vec![0]),
            ],
        )
        .unwrap();
        let g = &out.gaussians[0];
        let expect = 2.0 * 3.0 / (3.0 + 1e-8);
        assert!((g.logit_opacity - expect).abs() < 1e-15);
        assert!((g.logit_opacity - 2.0).abs() < 1e-8);
        assert_eq!(g.quat, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn equal_visibility_is_midpoint() {
        let inc = incumbent(1);
        let out = aggregate(
            &inc,
            &[
                update(0, 1, 0.25, [1.0, 0.0, 0.0, 0.0], vec![1]),
                update(1, 1, 1.75, [1.0, 0.0, 0.0, 0.0], vec![1]),
            ],
        )
        .unwrap();
        assert!((out.gaussians[0].sh[0][1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unseen_gaussians_are_copied() {
        let inc = incumbent(2);
        let out = aggregate(
            &inc,
            &[
                update(0, 2, 9.0, [0.0, 0.0, 1.0, 0.0], vec![0, 4]),
                update(1, 2, 9.0, [0.0, 0.0, 1.0, 0.0], vec![0, 0]),
            ],
        )
        .unwrap();
        assert_eq!(out.gaussians[0], inc.gaussians[0]);
        assert_ne!(out.gaussians[1], inc.gaussians[1]);
        assert_eq!(out.gaussians[1].mu, inc.gaussians[1].mu);
    }

    #[test]
    fn antipodal_quaternions_are_aligned() {
        let inc = incumbent(1);
        let s = 0.5f32.sqrt();
        let out = aggregate(
            &inc,
            &[
                update(0, 1, 0.0, [s, s, 0.0, 0.0], vec![1]),
                update(1, 1, 0.0, [-s, -s, 0.0, 0.0], vec![1]),
            ],
        )
        .unwrap();
        let q = out.gaussians[0].quat;
        assert!(
            (q[0] - f64::from(s)).abs() < 1e-6 && (q[1] - f64::from(s)).abs() < 1e-6,
            "{q:?}"
        );
    }

    #[test]
    fn rejects_wrong_length() {
        let inc = incumbent(2);
        let err =
            aggregate(&inc, &[update(0, 3, 0.0, [1.0, 0.0, 0.0, 0.0], vec![1; 3])]).unwrap_err();
        assert!(matches!(
            err,
            Error::ShapeMismatch {
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn weights_sum_below_one() {
        let w = aggregation_weights(&[5, 0, 2]).unwrap();
        let s: f64 = w.iter().sum();
        assert!((1.0 - 1e-6..=1.0).contains(&s));
        assert!(aggregation_weights(&[0, 0]).is_none());
    }
}
