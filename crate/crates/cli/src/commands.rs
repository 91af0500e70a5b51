//! The four subcommands as library functions over a resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use f3dgs::fed::{
    partition_dataset, run_federated, ClientPartition, ClientUpdate, FedConfig, FedOutcome,
    RoundSchedule, SERVER_ID,
};
use f3dgs::init::initialize_gaussians;
use f3dgs::metrics::{psnr, ssim};
use f3dgs::render::{render, RenderSettings};
use f3dgs::stitch::stitch_trajectories;
use f3dgs::synth::{
    generate_corridor_scene, load_scene, perturb_client_trajectories, save_scene, write_png16,
    LoadedScene,
};
use f3dgs::{Camera, Frame, GaussianCloud};

use crate::config::ExperimentConfig;
use crate::report::{ablation_csv, metrics_csv, AblationRow, RunLog};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Generates the corridor scene into `cfg.out`.
///
/// Everything is written to a temporary sibling directory first and renamed
/// into place, so a failure never leaves a half-written scene behind. An
/// existing destination is replaced only if it already holds a scene.
pub fn generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out);
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if out.exists() && !out.join("scene.json").is_file() {
        bail!("{} exists and is not a scene directory", out.display());
    }
    let tmp = tempfile::Builder::new()
        .prefix(".f3dgs-generate-")
        .tempdir_in(&parent)
        .with_context(|| format!("creating a temporary directory in {}", parent.display()))?;

    let scene = generate_corridor_scene(&cfg.scene_params())?;
    let noise = cfg.sim3_noise();
    let clients = perturb_client_trajectories(&scene.anchor, cfg.chunk, &noise, cfg.seed)?;
    save_scene(tmp.path(), &scene, &clients, cfg.chunk, &noise)?;
    write(&tmp.path().join("config.echo"), cfg.to_toml())?;

    if out.exists() {
        fs::remove_dir_all(&out).with_context(|| format!("removing old {}", out.display()))?;
    }
    let kept = tmp.keep();
    fs::rename(&kept, &out).with_context(|| {
        let _ = fs::remove_dir_all(&kept);
        format!("moving the scene into {}", out.display())
    })?;
    Ok(out)
}

/// A loaded scene with stitched poses and its initial Gaussians.
pub struct Prepared {
    pub scene: LoadedScene,
    pub frames: Vec<Frame>,
    pub partitions: Vec<ClientPartition>,
    pub initial: GaussianCloud,
}

impl Prepared {
    pub fn camera(&self) -> &Camera {
        &self.scene.camera
    }
}

/// Loads `scene_dir`, stitches the client trajectories onto the anchor and
/// initialises Gaussians from the scene's point cloud.
pub fn prepare(cfg: &ExperimentConfig, scene_dir: &Path) -> Result<Prepared> {
    let scene = load_scene(scene_dir)?;
    let (traj, _) = stitch_trajectories(&scene.clients, &scene.anchor, &cfg.stitch())?;
    let n = scene.images.len();
    let frames = scene
        .images
        .iter()
        .enumerate()
        .map(|(i, image)| {
            let pose = traj
                .pose_at(i as u64)
                .with_context(|| format!("stitched trajectory has no pose for frame {i}"))?;
            Ok(Frame {
                image: image.clone(),
                pose: *pose,
                timestamp: i as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if traj.len() != n {
        bail!(
            "stitched trajectory has {} poses for {n} frames",
            traj.len()
        );
    }
    let partitions = partition_dataset(n, scene.manifest.chunk)?;
    let initial =
        initialize_gaussians(&scene.point_cloud, cfg.init_count, cfg.sh_degree, cfg.seed)?;
    Ok(Prepared {
        scene,
        frames,
        partitions,
        initial,
    })
}

pub struct TrainOutput {
    pub dir: PathBuf,
    pub outcome: FedOutcome,
}

fn fed_config(cfg: &ExperimentConfig, schedule: RoundSchedule) -> FedConfig {
    FedConfig {
        lambda: cfg.lambda,
        lr: cfg.learning_rates(),
        ..FedConfig::new(schedule)
    }
}

/// Stitch, initialise, train and report into `cfg.out`.
pub fn train(cfg: &ExperimentConfig, scene_dir: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out);
    create_dir(&out)?;
    let log = RunLog::create(&out)?;
    write(&out.join("config.echo"), cfg.to_toml())?;
    log.line(format!("loading scene {}", scene_dir.display()))?;
    let prepared = prepare(cfg, scene_dir)?;
    train_prepared(cfg, &prepared, &out, &log)
}

fn train_prepared(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    out: &Path,
    log: &RunLog,
) -> Result<TrainOutput> {
    let schedule = cfg.schedule()?;
    let partitions = if cfg.centralized {
        vec![ClientPartition::merged(&prepared.partitions)?]
    } else {
        prepared.partitions.clone()
    };
    log.line(format!(
        "training {} client(s), {} Gaussians, {} rounds x {} steps",
        partitions.len(),
        prepared.initial.len(),
        schedule.rounds,
        schedule.local_steps
    ))?;
    let outcome = run_federated(
        &fed_config(cfg, schedule),
        &prepared.frames,
        &partitions,
        prepared.camera(),
        &prepared.initial,
    )?;
    for rec in &outcome.history {
        log.line(format!(
            "round {}: local {:.3} dB, global {:.3} dB",
            rec.round, rec.local_mean.psnr, rec.global.psnr
        ))?;
    }
    write(&out.join("metrics.csv"), metrics_csv(&outcome.history))?;
    let model = ClientUpdate::from_cloud(
        SERVER_ID,
        schedule.rounds as u32,
        &outcome.global,
        Vec::new(),
    );
    write(&out.join("model.bin"), model.encode_model())?;

    let renders = out.join("renders");
    create_dir(&renders)?;
    let all = ClientPartition::merged(&partitions)?;
    for &i in &all.val_indices {
        let f = &prepared.frames[i];
        let img = render(
            &outcome.global,
            &f.pose,
            prepared.camera(),
            &RenderSettings::default(),
        )
        .image;
        write_png16(&renders.join(format!("frame_{i:04}.png")), &img)?;
    }
    log.line("done")?;
    Ok(TrainOutput {
        dir: out.to_path_buf(),
        outcome,
    })
}

/// Trains every schedule under `cfg.out/r{R}_t{T}` and writes `ablation.csv`.
pub fn ablate_rounds(cfg: &ExperimentConfig, scene_dir: &Path) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let schedules = cfg.schedule_list()?;
    if schedules.is_empty() {
        bail!("no schedules given");
    }
    let out = PathBuf::from(&cfg.out);
    create_dir(&out)?;
    write(&out.join("config.echo"), cfg.to_toml())?;
    let prepared = prepare(cfg, scene_dir)?;
    let mut rows = Vec::with_capacity(schedules.len());
    for s in schedules {
        let sub = ExperimentConfig {
            rounds: s.rounds,
            local_steps: s.local_steps,
            out: out
                .join(format!("r{}_t{}", s.rounds, s.local_steps))
                .display()
                .to_string(),
            ..cfg.clone()
        };
        let dir = PathBuf::from(&sub.out);
        create_dir(&dir)?;
        let log = RunLog::create(&dir)?;
        write(&dir.join("config.echo"), sub.to_toml())?;
        let res = train_prepared(&sub, &prepared, &dir, &log)?;
        let last = res.outcome.history.last().expect("at least one round");
        rows.push(AblationRow {
            rounds: s.rounds,
            local_steps: s.local_steps,
            local: last.local_mean.clone(),
            global: last.global.clone(),
        });
    }
    write(&out.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Renders `model_file` at the given frames into `cfg.out/renders`, with
/// PSNR/SSIM against the stored targets in `renders.csv`.
pub fn render_model(
    cfg: &ExperimentConfig,
    model_file: &Path,
    scene_dir: &Path,
    indices: &[usize],
) -> Result<Vec<RenderedFrame>> {
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    let bytes =
        fs::read(model_file).with_context(|| format!("reading {}", model_file.display()))?;
    let model = ClientUpdate::decode_model(&bytes)
        .map_err(f3dgs::Error::from)
        .with_context(|| format!("decoding {}", model_file.display()))?;
    let prepared = prepare(cfg, scene_dir)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= prepared.frames.len()) {
        return Err(f3dgs::Error::Invalid(format!(
            "frame index {bad} out of range (scene has {} frames)",
            prepared.frames.len()
        ))
        .into());
    }
    let cloud = model.to_cloud(&prepared.initial)?;

    let out = PathBuf::from(&cfg.out).join("renders");
    create_dir(&out)?;
    let mut rows = Vec::with_capacity(indices.len());
    let mut csv = String::from("frame,psnr,ssim\n");
    for &i in indices {
        let f = &prepared.frames[i];
        let img = render(
            &cloud,
            &f.pose,
            prepared.camera(),
            &RenderSettings::default(),
        )
        .image;
        write_png16(&out.join(format!("frame_{i:04}.png")), &img)?;
        let r = RenderedFrame {
            index: i,
            psnr: psnr(&f.image, &img)?,
            ssim: ssim(&f.image, &img)?,
        };
        csv.push_str(&format!("{},{:.6},{:.6}\n", i, r.psnr, r.ssim));
        rows.push(r);
    }
    write(&PathBuf::from(&cfg.out).join("renders.csv"), csv)?;
    Ok(rows)
}
