//! PSNR, windowed SSIM (with its gradient) and the local/global evaluation
//! protocols.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) over every fully contained
//! window position ("valid" windows, no padding), `C1 = 0.01²`,
//! `C2 = 0.03²`, computed per channel and averaged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::ClientPartition;
use crate::render::{render, RenderSettings};
use crate::types::{Camera, Frame, GaussianCloud, Image};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            left_w: a.width,
            left_h: a.height,
            right_w: b.width,
            right_h: b.height,
        })
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// Peak 1.0, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalised 1D Gaussian window; the 2D window is its outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of a `w×h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let src = &plane[y * w + x..y * w + x + SSIM_WINDOW];
            rows[y * ow + x] = src.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| rows[(y + i) * ow + x] * k[i])
                .sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a window map back onto the plane.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for i in 0..SSIM_WINDOW {
                rows[(y + i) * ow + x] += v * k[i];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += v * k[i];
            }
        }
    }
    out
}

struct ChannelSsim {
    mean: f64,
    /// `d mean / d y` per pixel, when requested.
    grad: Option<Vec<f64>>,
}

fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> ChannelSsim {
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, w, h, &k);
    let mu_y = filter_valid(y, w, h, &k);
    let m_xx = filter_valid(&xx, w, h, &k);
    let m_yy = filter_valid(&yy, w, h, &k);
    let m_xy = filter_valid(&xy, w, h, &k);
    let n = mu_x.len();

    let mut total = 0.0;
    let (mut d_mu, mut d_myy, mut d_mxy) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * (m_xy[i] - mx * my) + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = (m_xx[i] - mx * mx) + (m_yy[i] - my * my) + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            d_mxy[i] = s * 2.0 / a2;
            d_myy[i] = -s / b2;
            d_mu[i] = s * (2.0 * mx / a1 - 2.0 * my / b1 - 2.0 * mx / a2 + 2.0 * my / b2);
        }
    }
    let mean = total / n as f64;
    let grad = want_grad.then(|| {
        let scale = 1.0 / n as f64;
        let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
        let g_yy = filter_valid_adjoint(&d_myy, w, h, &k);
        let g_xy = filter_valid_adjoint(&d_mxy, w, h, &k);
        (0..w * h)
            .map(|p| scale * (g_mu[p] + 2.0 * y[p] * g_yy[p] + x[p] * g_xy[p]))
            .collect()
    });
    ChannelSsim { mean, grad }
}

fn check_window(a: &Image) -> Result<()> {
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    check_window(a)?;
    let sum: f64 = (0..3)
        .map(|c| ssim_channel(&a.channel(c), &b.channel(c), a.width, a.height, false).mean)
        .sum();
    Ok(sum / 3.0)
}

/// SSIM between `target` and `rendered` and its gradient w.r.t. `rendered`.
pub fn ssim_with_grad(target: &Image, rendered: &Image) -> Result<(f64, Vec<[f64; 3]>)> {
    check_dims(target, rendered)?;
    check_window(target)?;
    let mut grad = vec![[0.0; 3]; rendered.pixels.len()];
    let mut sum = 0.0;
    for c in 0..3 {
        let ch = ssim_channel(
            &target.channel(c),
            &rendered.channel(c),
            target.width,
            target.height,
            true,
        );
        sum += ch.mean;
        for (g, v) in grad.iter_mut().zip(ch.grad.unwrap()) {
            g[c] = v / 3.0;
        }
    }
    Ok((sum / 3.0, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Local,
    Global,
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scope::Local => "local",
            Scope::Global => "global",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    /// `None` for sequence-level reports.
    pub client: Option<u32>,
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
    /// Always `None`: no perceptual network is bundled.
    pub lpips: Option<f64>,
}

/// Validation-count weighted mean of several reports.
pub fn weighted_mean(scope: Scope, reports: &[EvalReport]) -> Result<EvalReport> {
    let n: usize = reports.iter().map(|r| r.n_images).sum();
    if n == 0 {
        return Err(Error::Invalid("no validation images to average".into()));
    }
    let psnr = reports
        .iter()
        .map(|r| r.psnr * r.n_images as f64)
        .sum::<f64>()
        / n as f64;
    let ssim = reports
        .iter()
        .map(|r| r.ssim * r.n_images as f64)
        .sum::<f64>()
        / n as f64;
    Ok(EvalReport {
        scope,
        client: None,
        psnr,
        ssim,
        n_images: n,
        lpips: None,
    })
}

fn frame_at(frames: &[Frame], index: usize) -> Result<&Frame> {
    frames.get(index).ok_or_else(|| {
        Error::Invalid(format!(
            "frame index {index} out of range ({} frames)",
            frames.len()
        ))
    })
}

/// Mean PSNR/SSIM of `cloud` over `partition`'s validation frames.
pub fn evaluate_frames(
    cloud: &GaussianCloud,
    partition: &ClientPartition,
    frames: &[Frame],
    cam: &Camera,
    settings: &RenderSettings,
    scope: Scope,
) -> Result<EvalReport> {
    if partition.val_indices.is_empty() {
        return Err(Error::Invalid(format!(
            "client {} has no validation frames",
            partition.client_id
        )));
    }
    let per_frame: Vec<(f64, f64)> = partition
        .val_indices
        .par_iter()
        .map(|&i| {
            let frame = frame_at(frames, i)?;
            let img = render(cloud, &frame.pose, cam, settings).image;
            Ok((psnr(&frame.image, &img)?, ssim(&frame.image, &img)?))
        })
        .collect::<Result<_>>()?;
    let n = per_frame.len();
    Ok(EvalReport {
        scope,
        client: Some(partition.client_id),
        psnr: per_frame.iter().map(|v| v.0).sum::<f64>() / n as f64,
        ssim: per_frame.iter().map(|v| v.1).sum::<f64>() / n as f64,
        n_images: n,
        lpips: None,
    })
}

/// A client's own model on its own validation frames.
pub fn evaluate_local(
    cloud: &GaussianCloud,
    partition: &ClientPartition,
    frames: &[Frame],
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<EvalReport> {
    evaluate_frames(cloud, partition, frames, cam, settings, Scope::Local)
}

/// The aggregated model on each client's validation frames.
pub fn evaluate_global_per_client(
    cloud: &GaussianCloud,
    partitions: &[ClientPartition],
    frames: &[Frame],
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<Vec<EvalReport>> {
    partitions
        .iter()
        .map(|p| evaluate_frames(cloud, p, frames, cam, settings, Scope::Global))
        .collect()
}

/// The aggregated model on the union of all validation frames.
pub fn evaluate_global(
    cloud: &GaussianCloud,
    partitions: &[ClientPartition],
    frames: &[Frame],
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<EvalReport> {
    if partitions.is_empty() {
        return Err(Error::Invalid("at least one partition is required".into()));
    }
    let per_client = evaluate_global_per_client(cloud, partitions, frames, cam, settings)?;
    weighted_mean(Scope::Global, &per_client)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image {
            width: w,
            height: h,
            pixels: (0..w * h)
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
                .collect(),
        }
    }

    fn checkerboard(w: usize, h: usize, invert: bool) -> Image {
        let pixels = (0..w * h)
            .map(|i| {
                let on = ((i % w) + (i / w)).is_multiple_of(2);
                [if on != invert { 1.0 } else { 0.0 }; 3]
            })
            .collect();
        Image {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Direct per-window evaluation with an explicitly built 2D kernel.
    fn ssim_brute_force(a: &Image, b: &Image) -> f64 {
        let k1 = gaussian_window();
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..3 {
            for y0 in 0..=a.height - SSIM_WINDOW {
                for x0 in 0..=a.width - SSIM_WINDOW {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..SSIM_WINDOW {
                        for i in 0..SSIM_WINDOW {
                            let wgt = k1[i] * k1[j];
                            let x = a.get(x0 + i, y0 + j)[c];
                            let y = b.get(x0 + i, y0 + j)[c];
                            mx += wgt * x;
                            my += wgt * y;
                        }
                    }
                    for j in 0..SSIM_WINDOW {
                        for i in 0..SSIM_WINDOW {
                            let wgt = k1[i] * k1[j];
                            let x = a.get(x0 + i, y0 + j)[c] - mx;
                            let y = b.get(x0 + i, y0 + j)[c] - my;
                            sxx += wgt * x * x;
                            syy += wgt * y * y;
                            sxy += wgt * x * y;
                        }
                    }
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = random_image(&mut rng, 16, 16);
        a.pixels.iter_mut().flatten().for_each(|v| *v *= 0.8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let mut b = a.clone();
        b.pixels.iter_mut().flatten().for_each(|v| *v += 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = checkerboard(16, 16, false);
        let d = checkerboard(16, 16, true);
        assert!(psnr(&c, &d).unwrap().abs() < 1e-9);
    }

    #[test]
    fn dimension_and_window_errors() {
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 12, [0.5; 3]);
        assert!(matches!(psnr(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(ssim(&a, &b), Err(Error::DimensionMismatch { .. })));
        let tiny = Image::filled(10, 30, [0.5; 3]);
        assert!(matches!(
            ssim(&tiny, &tiny),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn ssim_identity_and_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 20, 17);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);

        let c = checkerboard(16, 16, false);
        let d = checkerboard(16, 16, true);
        assert!((ssim(&c, &d).unwrap() - ssim_brute_force(&c, &d)).abs() < 1e-9);

        let b = random_image(&mut rng, 20, 17);
        assert!((ssim(&a, &b).unwrap() - ssim_brute_force(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn ssim_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_image(&mut rng, 14, 13);
        let mut y = random_image(&mut rng, 14, 13);
        let (_, grad) = ssim_with_grad(&x, &y).unwrap();
        let h = 1e-5;
        for p in [0, 7, 50, 100, 14 * 13 - 1] {
            for c in 0..3 {
                let orig = y.pixels[p][c];
                y.pixels[p][c] = orig + h;
                let plus = ssim(&x, &y).unwrap();
                y.pixels[p][c] = orig - h;
                let minus = ssim(&x, &y).unwrap();
                y.pixels[p][c] = orig;
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    (fd - grad[p][c]).abs() < 1e-7 + 1e-5 * fd.abs(),
                    "{p} {c}: {fd} vs {}",
                    grad[p][c]
                );
            }
        }
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = Image::filled(24, 24, [0.5; 3]);
        let noise: Vec<[f64; 3]> = (0..576)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let values: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|amp| {
                let mut img = base.clone();
                for (p, n) in img.pixels.iter_mut().zip(&noise) {
                    for c in 0..3 {
                        p[c] += amp * n[c];
                    }
                }
                psnr(&base, &img).unwrap()
            })
            .collect();
        assert!(values[0] > values[1] && values[1] > values[2]);
    }

    #[test]
    fn weighted_mean_by_counts() {
        let r = |psnr, n| EvalReport {
            scope: Scope::Global,
            client: Some(0),
            psnr,
            ssim: 0.5,
            n_images: n,
            lpips: None,
        };
        let (p1, p2) = (23.5, 19.25);
        let m = weighted_mean(Scope::Global, &[r(p1, 2), r(p2, 1)]).unwrap();
        assert!((m.psnr - (2.0 * p1 + p2) / 3.0).abs() < 1e-12);
        assert_eq!(m.n_images, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ssim_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 13, 12);
            let b = random_image(&mut rng, 13, 12);
            let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }
    }
}
