use serde::{Deserialize, Serialize};

use crate::render::AppearanceGradients;
use crate::types::GaussianCloud;

/// Per-attribute step sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub log_scale: f64,
    pub quat: f64,
    pub logit_opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            log_scale: 5e-3,
            quat: 1e-3,
            logit_opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 1.25e-4,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            log_scale: 0.0,
            quat: 0.0,
            logit_opacity: 0.0,
            sh_dc: 0.0,
            sh_rest: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.log_scale,
            self.quat,
            self.logit_opacity,
            self.sh_dc,
            self.sh_rest,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Adam over the appearance parameters of a cloud. Positions are never
/// touched; quaternions are renormalised after every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: AppearanceGradients,
    v: AppearanceGradients,
}

/// Constants of one Adam step; `c1`, `c2` are the bias corrections.
struct StepConsts {
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    eps: f64,
}

impl StepConsts {
    #[inline]
    fn apply(&self, p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64) {
        *m = self.b1 * *m + (1.0 - self.b1) * g;
        *v = self.b2 * *v + (1.0 - self.b2) * g * g;
        let m_hat = *m / self.c1;
        let v_hat = *v / self.c2;
        *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

impl Adam {
    /// Fresh state (zero moments, step 0) shaped like `cloud`.
    pub fn new(cloud: &GaussianCloud, lr: LearningRates) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            m: AppearanceGradients::zeros(cloud),
            v: AppearanceGradients::zeros(cloud),
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn first_moment(&self) -> &AppearanceGradients {
        &self.m
    }

    pub fn second_moment(&self) -> &AppearanceGradients {
        &self.v
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &AppearanceGradients) {
        self.step += 1;
        let t = self.step as i32;
        let k = StepConsts {
            b1: self.beta1,
            b2: self.beta2,
            c1: 1.0 - self.beta1.powi(t),
            c2: 1.0 - self.beta2.powi(t),
            eps: self.eps,
        };
        let lr = self.lr;
        for (i, g) in cloud.gaussians.iter_mut().enumerate() {
            for j in 0..3 {
                k.apply(
                    &mut g.log_scale[j],
                    &mut self.m.d_log_scale[i][j],
                    &mut self.v.d_log_scale[i][j],
                    grads.d_log_scale[i][j],
                    lr.log_scale,
                );
            }
            for j in 0..4 {
                k.apply(
                    &mut g.quat[j],
                    &mut self.m.d_quat[i][j],
                    &mut self.v.d_quat[i][j],
                    grads.d_quat[i][j],
                    lr.quat,
                );
            }
            let n = g.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                g.quat.iter_mut().for_each(|v| *v /= n);
            }
            k.apply(
                &mut g.logit_opacity,
                &mut self.m.d_logit_opacity[i],
                &mut self.v.d_logit_opacity[i],
                grads.d_logit_opacity[i],
                lr.logit_opacity,
            );
            for (c, coeff) in g.sh.iter_mut().enumerate() {
                let rate = if c == 0 { lr.sh_dc } else { lr.sh_rest };
                for ch in 0..3 {
                    k.apply(
                        &mut coeff[ch],
                        &mut self.m.d_sh[i][c][ch],
                        &mut self.v.d_sh[i][c][ch],
                        grads.d_sh[i][c][ch],
                        rate,
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Gaussian;

    fn cloud() -> GaussianCloud {
        let g = Gaussian {
            mu: [0.0, 0.0, 2.0],
            log_scale: [-2.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            logit_opacity: 0.0,
            sh: vec![[0.0; 3]; 4],
        };
        GaussianCloud::new(vec![g; 2], 1).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut c = cloud();
        let mut opt = Adam::new(&c, LearningRates::default());
        let mut g = AppearanceGradients::zeros(&c);
        g.d_logit_opacity[0] = 3.0;
        g.d_sh[1][0][2] = -0.5;
        g.d_sh[1][3][1] = 1e-3;
        opt.step(&mut c, &g);
        // With bias correction the first Adam step is lr * sign(g).
        assert!((c.gaussians[0].logit_opacity + 5e-2).abs() < 1e-12);
        assert!((c.gaussians[1].sh[0][2] - 2.5e-3).abs() < 1e-12);
        assert!((c.gaussians[1].sh[3][1] + 1.25e-4).abs() < 1e-12);
        assert_eq!(c.gaussians[1].logit_opacity, 0.0);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_rates_change_nothing() {
        let mut c = cloud();
        let before = c.clone();
        let mut opt = Adam::new(&c, LearningRates::zero());
        let mut g = AppearanceGradients::zeros(&c);
        g.d_quat[0] = [0.3, -0.2, 0.1, 0.4];
        g.d_log_scale[1] = [1.0; 3];
        opt.step(&mut c, &g);
        assert_eq!(c, before);
    }

    #[test]
    fn quaternions_stay_unit() {
        let mut c = cloud();
        let mut opt = Adam::new(
            &c,
            LearningRates {
                quat: 0.3,
                ..LearningRates::default()
            },
        );
        let mut g = AppearanceGradients::zeros(&c);
        g.d_quat[0] = [0.3, -0.2, 0.1, 0.4];
        for _ in 0..10 {
            opt.step(&mut c, &g);
        }
        let n: f64 = c.gaussians[0].quat.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn positions_untouched() {
        let mut c = cloud();
        let mut opt = Adam::new(&c, LearningRates::default());
        let mut g = AppearanceGradients::zeros(&c);
        g.d_log_scale[0] = [1.0, -1.0, 0.5];
        opt.step(&mut c, &g);
        assert_eq!(c.gaussians[0].mu, [0.0, 0.0, 2.0]);
    }
}
