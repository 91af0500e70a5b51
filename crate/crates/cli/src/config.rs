//! Flat experiment configuration: defaults, then a TOML file, then
//! `F3DGS_<KEY>` environment variables, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use f3dgs::fed::{LearningRates, RoundSchedule};
use f3dgs::stitch::{DecayMode, StitchSettings};
use f3dgs::synth::{SceneParams, Sim3Noise};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "F3DGS_";

/// An invalid or inconsistent configuration value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_bail {
    ($($arg:tt)*) => {
        return Err(ConfigError(format!($($arg)*)).into())
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: String,
    /// Worker threads; 0 uses every core.
    pub threads: usize,

    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub gaussians: usize,
    pub fov_x_deg: f64,
    pub near: f64,
    pub sh_degree: u32,
    pub sigma_init: f64,
    pub sim3_scale: f64,
    pub sim3_rotation: f64,
    pub sim3_translation: f64,

    pub init_count: usize,

    pub chunk: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub budget: usize,
    pub lambda: f64,
    pub lr_log_scale: f64,
    pub lr_quat: f64,
    pub lr_opacity: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub centralized: bool,
    /// Comma-separated `RxT` list for `ablate-rounds`.
    pub schedules: String,

    pub tau: usize,
    pub decay: DecayMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneParams::default();
        let lr = LearningRates::default();
        Self {
            seed: 0,
            out: "out".into(),
            threads: 0,
            frames: scene.n_frames,
            width: scene.width,
            height: scene.height,
            gaussians: scene.n_gaussians,
            fov_x_deg: scene.fov_x_deg,
            near: scene.near,
            sh_degree: scene.sh_degree,
            sigma_init: scene.sigma_init,
            sim3_scale: 0.05,
            sim3_rotation: 0.1,
            sim3_translation: 0.5,
            init_count: 5000,
            chunk: 60,
            rounds: 8,
            local_steps: 250,
            budget: 2000,
            lambda: 0.2,
            lr_log_scale: lr.log_scale,
            lr_quat: lr.quat,
            lr_opacity: lr.logit_opacity,
            lr_sh_dc: lr.sh_dc,
            lr_sh_rest: lr.sh_rest,
            centralized: false,
            schedules: "1x2000,4x500,8x250".into(),
            tau: f3dgs::stitch::DEFAULT_TAU,
            decay: DecayMode::Linear,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Defaults overlaid with `file` (if any) and then the environment.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default()).context("serialising defaults")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let file_table: toml::Table = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            for (k, v) in file_table {
                if !table.contains_key(&k) {
                    config_bail!("unknown config key '{k}' in {}", path.display());
                }
                table.insert(k, v);
            }
        }
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if table.contains_key(&key) {
                table.insert(key, parse_value(&raw));
            }
        }
        table.try_into().map_err(|e: toml::de::Error| {
            ConfigError(format!("invalid configuration: {}", e.message())).into()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("width", self.width),
            ("height", self.height),
            ("gaussians", self.gaussians),
            ("init_count", self.init_count),
            ("chunk", self.chunk),
            ("rounds", self.rounds),
            ("local_steps", self.local_steps),
            ("budget", self.budget),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if v == 0 {
                config_bail!("{name} must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            config_bail!("lambda must lie in [0, 1], got {}", self.lambda);
        }
        if !self.learning_rates().is_valid() {
            config_bail!("learning rates must be finite and non-negative");
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<RoundSchedule> {
        let s = RoundSchedule::new(self.rounds, self.local_steps)
            .map_err(|e| ConfigError(e.to_string()))?;
        s.check_budget(self.budget)
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(s)
    }

    pub fn learning_rates(&self) -> LearningRates {
        LearningRates {
            log_scale: self.lr_log_scale,
            quat: self.lr_quat,
            logit_opacity: self.lr_opacity,
            sh_dc: self.lr_sh_dc,
            sh_rest: self.lr_sh_rest,
        }
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            seed: self.seed,
            n_frames: self.frames,
            n_gaussians: self.gaussians,
            width: self.width,
            height: self.height,
            fov_x_deg: self.fov_x_deg,
            near: self.near,
            sh_degree: self.sh_degree,
            sigma_init: self.sigma_init,
        }
    }

    pub fn sim3_noise(&self) -> Sim3Noise {
        Sim3Noise {
            scale: self.sim3_scale,
            rotation: self.sim3_rotation,
            translation: self.sim3_translation,
        }
    }

    pub fn stitch(&self) -> StitchSettings {
        StitchSettings {
            tau: self.tau,
            decay: self.decay,
        }
    }

    /// Parsed `schedules`, each checked against the budget.
    pub fn schedule_list(&self) -> Result<Vec<RoundSchedule>> {
        let list = parse_schedules(&self.schedules)?;
        for s in &list {
            s.check_budget(self.budget)
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(list)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }
}

/// `"1x2000, 4x500"` → `[(1, 2000), (4, 500)]`.
pub fn parse_schedules(text: &str) -> Result<Vec<RoundSchedule>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || ConfigError(format!("schedule '{item}' is not of the form RxT"));
            let (r, t) = item.split_once(['x', 'X']).ok_or_else(bad)?;
            let r: usize = r.trim().parse().map_err(|_| bad())?;
            let t: usize = t.trim().parse().map_err(|_| bad())?;
            Ok(RoundSchedule::new(r, t).map_err(|e| ConfigError(e.to_string()))?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.schedule_list().unwrap().len(), 3);
    }

    #[test]
    fn layering_file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 7\nchunk = 60\ndecay = \"exponential\"\n").unwrap();
        let env = vec![
            ("F3DGS_CHUNK".to_string(), "30".to_string()),
            ("F3DGS_LAMBDA".to_string(), "0.5".to_string()),
            ("F3DGS_OUT".to_string(), "/tmp/x y".to_string()),
            ("OTHER".to_string(), "1".to_string()),
        ];
        let c = ExperimentConfig::load(Some(&path), env).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.chunk, 30);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.out, "/tmp/x y");
        assert_eq!(c.decay, DecayMode::Exponential);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "sede = 7\n").unwrap();
        assert!(ExperimentConfig::load(Some(&path), Vec::new()).is_err());
        let env = vec![("F3DGS_CHUNK".to_string(), "many".to_string())];
        assert!(ExperimentConfig::load(None, env).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig {
            lambda: 0.3,
            ..ExperimentConfig::default()
        };
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn schedule_parsing_and_budget() {
        let s = parse_schedules("1x2000, 4X500,8x250").unwrap();
        assert_eq!(s[1], RoundSchedule::new(4, 500).unwrap());
        assert!(parse_schedules("4-500").is_err());
        let c = ExperimentConfig {
            schedules: "1x2000,3x600".into(),
            ..ExperimentConfig::default()
        };
        assert!(c.schedule_list().is_err());
        let bad = ExperimentConfig {
            rounds: 3,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
