use crate::error::{Error, Result};
use crate::fed::optimizer::{Adam, LearningRates};
use crate::fed::partition::ClientPartition;
use crate::fed::wire::ClientUpdate;
use crate::metrics::ssim_with_grad;
use crate::render::{Prepared, RenderSettings};
use crate::types::{Camera, Frame, GaussianCloud, Image};

/// `(1-λ)·mean|r-t| + λ·(1-SSIM(t, r))` and its gradient w.r.t. `rendered`.
///
/// The L1 subgradient at `r == t` is zero. SSIM is skipped entirely when
/// `λ == 0`, so images smaller than the SSIM window are accepted then.
pub fn compute_loss(target: &Image, rendered: &Image, lambda: f64) -> Result<(f64, Vec<[f64; 3]>)> {
    if !target.same_dims(rendered) {
        return Err(Error::DimensionMismatch {
            left_w: target.width,
            left_h: target.height,
            right_w: rendered.width,
            right_h: rendered.height,
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let n = (3 * target.pixels.len()) as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<[f64; 3]> = target
        .pixels
        .iter()
        .zip(&rendered.pixels)
        .map(|(t, r)| {
            std::array::from_fn(|c| {
                let d = r[c] - t[c];
                l1 += d.abs();
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (1.0 - lambda) * s / n
            })
        })
        .collect();
    l1 /= n;
    if lambda == 0.0 {
        return Ok((l1, grad));
    }
    let (s, ds) = ssim_with_grad(target, rendered)?;
    for (g, d) in grad.iter_mut().zip(&ds) {
        for c in 0..3 {
            g[c] -= lambda * d[c];
        }
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s), grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalConfig {
    pub steps: usize,
    pub lambda: f64,
    pub lr: LearningRates,
    pub settings: RenderSettings,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lambda: 0.2,
            lr: LearningRates::default(),
            settings: RenderSettings::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalResult {
    pub update: ClientUpdate,
    /// The trained cloud at full precision, before wire rounding.
    pub cloud: GaussianCloud,
    /// Loss before each optimisation step.
    pub losses: Vec<f64>,
}

/// Appearance-only optimisation of a private copy of `global` on one client's
/// training frames, visited round-robin. Positions are never written.
pub fn local_train(
    global: &GaussianCloud,
    partition: &ClientPartition,
    frames: &[Frame],
    cam: &Camera,
    cfg: &LocalConfig,
    round: u32,
) -> Result<LocalResult> {
    if cfg.steps == 0 {
        return Err(Error::Invalid(
            "local training needs at least one step".into(),
        ));
    }
    if partition.train_indices.is_empty() {
        return Err(Error::Invalid(format!(
            "client {} has no training frames",
            partition.client_id
        )));
    }
    for &i in &partition.train_indices {
        let frame = frames.get(i).ok_or_else(|| {
            Error::Invalid(format!(
                "frame index {i} out of range ({} frames)",
                frames.len()
            ))
        })?;
        if frame.image.width != cam.width || frame.image.height != cam.height {
            return Err(Error::DimensionMismatch {
                left_w: cam.width,
                left_h: cam.height,
                right_w: frame.image.width,
                right_h: frame.image.height,
            });
        }
    }

    let mut cloud = global.clone();
    let mut opt = Adam::new(&cloud, cfg.lr);
    let mut visibility = vec![0u32; cloud.len()];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let frame = &frames[partition.train_indices[step % partition.train_indices.len()]];
        let grads = {
            let prepared = Prepared::new(&cloud, &frame.pose, cam, &cfg.settings);
            let out = prepared.forward();
            for (v, inc) in visibility.iter_mut().zip(&out.visibility_increment) {
                *v += inc;
            }
            let (loss, d_image) = compute_loss(&frame.image, &out.image, cfg.lambda)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            losses.push(loss);
            prepared.backward(&d_image)
        };
        opt.step(&mut cloud, &grads);
        let diverged = cloud.gaussians.iter().any(|g| {
            !g.logit_opacity.is_finite()
                || g.log_scale.iter().chain(&g.quat).any(|v| !v.is_finite())
                || g.sh.iter().flatten().any(|v| !v.is_finite())
        });
        if diverged {
            return Err(Error::NonFiniteLoss { step });
        }
    }
    let update = ClientUpdate::from_cloud(partition.client_id, round, &cloud, visibility);
    Ok(LocalResult {
        update,
        cloud,
        losses,
    })
}
