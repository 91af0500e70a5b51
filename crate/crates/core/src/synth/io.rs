//! Scene directory layout:
//!
//! ```text
//! scene.json            manifest (parameters, intrinsics, client chunking)
//! frames/%05d.png       16-bit RGB targets
//! traj_anchor.txt       global anchor trajectory
//! traj_client_%d.txt    per-client trajectories in their own frames
//! init_cloud.ply        initialisation point cloud
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{read_ply, write_ply, ColoredPointCloud};
use crate::stitch::Trajectory;
use crate::synth::{SceneParams, Sim3Noise, SyntheticScene};
use crate::types::{Camera, Image};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub params: SceneParams,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub n_frames: usize,
    pub n_gaussians: usize,
    pub chunk: usize,
    pub n_clients: usize,
    pub sim3_noise: Sim3Noise,
}

impl SceneManifest {
    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.params.width,
            self.params.height,
            self.params.near,
        )
    }
}

#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub manifest: SceneManifest,
    pub camera: Camera,
    /// Targets indexed by frame (equal to timestamp).
    pub images: Vec<Image>,
    pub anchor: Trajectory,
    pub clients: Vec<Trajectory>,
    pub point_cloud: ColoredPointCloud,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:05}.png"))
}

pub fn client_trajectory_path(dir: &Path, client: usize) -> PathBuf {
    dir.join(format!("traj_client_{client}.txt"))
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn write_png16(path: &Path, img: &Image) -> Result<()> {
    let data: Vec<u16> = img.pixels.iter().flat_map(|p| p.map(to_u16)).collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
            .ok_or_else(|| Error::Invalid("image buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path, e.to_string()))?
        .to_rgb16();
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| p.0.map(|c| f64::from(c) / 65535.0))
        .collect();
    Image::from_pixels(w as usize, h as usize, pixels)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes `scene` and its client trajectories into `dir` (created if needed).
pub fn save_scene(
    dir: &Path,
    scene: &SyntheticScene,
    clients: &[Trajectory],
    chunk: usize,
    noise: &Sim3Noise,
) -> Result<SceneManifest> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    scene
        .frames
        .par_iter()
        .enumerate()
        .try_for_each(|(i, f)| write_png16(&frame_path(dir, i), &f.image))?;
    scene.anchor.write(&dir.join("traj_anchor.txt"))?;
    for (k, c) in clients.iter().enumerate() {
        c.write(&client_trajectory_path(dir, k))?;
    }
    write_ply(&dir.join("init_cloud.ply"), &scene.point_cloud)?;
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        params: scene.params,
        fx: scene.camera.fx,
        fy: scene.camera.fy,
        cx: scene.camera.cx,
        cy: scene.camera.cy,
        n_frames: scene.frames.len(),
        n_gaussians: scene.ground_truth.len(),
        chunk,
        n_clients: clients.len(),
        sim3_noise: *noise,
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    let path = dir.join("scene.json");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::parse(
            &path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let camera = manifest.camera()?;
    let images = (0..manifest.n_frames)
        .into_par_iter()
        .map(|i| {
            let p = frame_path(dir, i);
            let img = read_png(&p)?;
            if img.width != camera.width || img.height != camera.height {
                return Err(Error::parse(
                    &p,
                    format!("expected {}x{} image", camera.width, camera.height),
                ));
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let anchor = Trajectory::read(&dir.join("traj_anchor.txt"))?;
    let clients = (0..manifest.n_clients)
        .map(|k| Trajectory::read(&client_trajectory_path(dir, k)))
        .collect::<Result<Vec<_>>>()?;
    let point_cloud = read_ply(&dir.join("init_cloud.ply"))?;
    Ok(LoadedScene {
        manifest,
        camera,
        images,
        anchor,
        clients,
        point_cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corridor_scene, perturb_client_trajectories};

    #[test]
    fn save_load_round_trip() {
        let params = SceneParams {
            n_frames: 10,
            n_gaussians: 200,
            width: 24,
            height: 20,
            ..SceneParams::default()
        };
        let scene = generate_corridor_scene(&params).unwrap();
        let noise = Sim3Noise {
            scale: 0.1,
            rotation: 0.2,
            translation: 0.5,
        };
        let clients = perturb_client_trajectories(&scene.anchor, 4, &noise, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = save_scene(dir.path(), &scene, &clients, 4, &noise).unwrap();
        assert_eq!(m.n_clients, 3);
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!(loaded.manifest, m);
        assert_eq!(loaded.camera, scene.camera);
        assert_eq!(loaded.images.len(), 10);
        for (a, f) in loaded.images.iter().zip(&scene.frames) {
            for (p, q) in a
                .pixels
                .iter()
                .flatten()
                .zip(f.image.pixels.iter().flatten())
            {
                assert!((p - q).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
        assert_eq!(loaded.anchor.timestamps(), scene.anchor.timestamps());
        assert_eq!(loaded.clients.len(), 3);
        assert_eq!(loaded.point_cloud.len(), 200);
        for (p, q) in loaded
            .point_cloud
            .points
            .iter()
            .zip(&scene.point_cloud.points)
        {
            assert_eq!(p.position, q.position);
        }
    }

    #[test]
    fn missing_directory_names_the_path() {
        let err = load_scene(Path::new("/nonexistent/scene")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/scene"), "{err}");
    }
}
