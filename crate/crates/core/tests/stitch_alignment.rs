//! Monte-Carlo checks of Sim(3) alignment and full trajectory stitching.

use f3dgs::stitch::{stitch_trajectories, umeyama_sim3, StitchSettings};
use f3dgs::synth::{corridor_trajectory, perturb_client_trajectories, Sim3Noise};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn umeyama_is_invariant_to_correspondence_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(3..40);
        let src: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| {
                2.0 * Vector3::new(-p.y, p.x, p.z)
                    + Vector3::new(0.3, rng.random_range(-0.01..0.01), 1.0)
            })
            .collect();
        let a = umeyama_sim3(&src, &dst).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let s2: Vec<_> = order.iter().map(|&i| src[i]).collect();
        let d2: Vec<_> = order.iter().map(|&i| dst[i]).collect();
        let b = umeyama_sim3(&s2, &d2).unwrap();
        assert!((a.transform.scale - b.transform.scale).abs() < 1e-12);
        assert!(a.transform.rotation.angle_to(&b.transform.rotation) < 1e-10);
        assert!((a.transform.translation - b.transform.translation).norm() < 1e-10);
        assert!((a.rms - b.rms).abs() < 1e-10);
    }
}

#[test]
fn collinear_points_are_degenerate() {
    let src: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    assert!(umeyama_sim3(&src, &src).is_err());
    assert!(umeyama_sim3(&src[..2], &src[..2]).is_err());
}

#[test]
fn stitching_recovers_the_anchor_for_many_seeds() {
    let anchor = corridor_trajectory(120).unwrap();
    let noise = Sim3Noise {
        scale: 0.3,
        rotation: 0.8,
        translation: 3.0,
    };
    for seed in 0..20 {
        for chunk in [20, 33, 60] {
            let clients = perturb_client_trajectories(&anchor, chunk, &noise, seed).unwrap();
            let (out, report) =
                stitch_trajectories(&clients, &anchor, &StitchSettings::default()).unwrap();
            assert_eq!(out.timestamps(), anchor.timestamps());
            for (a, b) in out.poses().iter().zip(anchor.poses()) {
                assert!(
                    a.distance(b) < 1e-8,
                    "seed {seed} chunk {chunk}: {}",
                    a.distance(b)
                );
            }
            assert!(report.fits.iter().all(|f| f.rms < 1e-9));
        }
    }
}
