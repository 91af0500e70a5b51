use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fed::aggregate::aggregate;
use crate::fed::optimizer::LearningRates;
use crate::fed::partition::{ClientPartition, RoundSchedule};
use crate::fed::train::{local_train, LocalConfig};
use crate::fed::wire::{ClientUpdate, SERVER_ID};
use crate::metrics::{evaluate_frames, weighted_mean, EvalReport, Scope};
use crate::render::RenderSettings;
use crate::types::{Camera, Frame, GaussianCloud};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FedConfig {
    pub schedule: RoundSchedule,
    pub lambda: f64,
    pub lr: LearningRates,
    pub settings: RenderSettings,
    /// Train clients concurrently. Results are identical either way.
    pub parallel: bool,
}

impl FedConfig {
    pub fn new(schedule: RoundSchedule) -> Self {
        Self {
            schedule,
            lambda: 0.2,
            lr: LearningRates::default(),
            settings: RenderSettings::default(),
            parallel: true,
        }
    }

    fn local(&self) -> LocalConfig {
        LocalConfig {
            steps: self.schedule.local_steps,
            lambda: self.lambda,
            lr: self.lr,
            settings: self.settings,
        }
    }
}

/// Metrics after one round, evaluated on validation frames only.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: u32,
    /// Each client's trained model on its own validation frames.
    pub local: Vec<EvalReport>,
    /// The aggregated model on each client's validation frames.
    pub global_per_client: Vec<EvalReport>,
    pub local_mean: EvalReport,
    pub global: EvalReport,
    /// Loss at the last local step, per client.
    pub final_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FedOutcome {
    pub global: GaussianCloud,
    /// Client models of the last round, as received by the server.
    pub locals: Vec<GaussianCloud>,
    pub history: Vec<RoundRecord>,
}

struct ClientResult {
    update: ClientUpdate,
    final_loss: f64,
}

fn run_client(
    broadcast: &[u8],
    incumbent: &GaussianCloud,
    partition: &ClientPartition,
    frames: &[Frame],
    cam: &Camera,
    local: &LocalConfig,
    round: u32,
) -> Result<ClientResult> {
    let start = ClientUpdate::decode_model(broadcast)?.to_cloud(incumbent)?;
    let res = local_train(&start, partition, frames, cam, local, round)?;
    let update = ClientUpdate::decode(&res.update.encode())?;
    Ok(ClientResult {
        update,
        final_loss: res.losses.last().copied().unwrap_or(f64::NAN),
    })
}

/// Broadcast → independent local training → aggregation, for every round.
pub fn run_federated(
    cfg: &FedConfig,
    frames: &[Frame],
    partitions: &[ClientPartition],
    cam: &Camera,
    initial: &GaussianCloud,
) -> Result<FedOutcome> {
    if partitions.is_empty() {
        return Err(Error::Invalid(
            "federation needs at least one client".into(),
        ));
    }
    if !cfg.lr.is_valid() {
        return Err(Error::Invalid(
            "learning rates must be finite and non-negative".into(),
        ));
    }
    let local_cfg = cfg.local();
    let mut incumbent = initial.clone();
    let mut history = Vec::with_capacity(cfg.schedule.rounds);
    let mut locals = Vec::new();
    for r in 0..cfg.schedule.rounds {
        let round = r as u32 + 1;
        let broadcast =
            ClientUpdate::from_cloud(SERVER_ID, round, &incumbent, Vec::new()).encode_model();
        let work = |p: &ClientPartition| {
            run_client(&broadcast, &incumbent, p, frames, cam, &local_cfg, round).map_err(|e| {
                Error::Client {
                    client: p.client_id,
                    round,
                    source: Box::new(e),
                }
            })
        };
        let results: Vec<ClientResult> = if cfg.parallel {
            partitions.par_iter().map(work).collect::<Result<_>>()?
        } else {
            partitions.iter().map(work).collect::<Result<_>>()?
        };
        let updates: Vec<ClientUpdate> = results.iter().map(|c| c.update.clone()).collect();
        // The server keeps its model in wire precision so that a saved model
        // file reproduces the evaluated global model exactly.
        let merged = aggregate(&incumbent, &updates)?;
        let next =
            ClientUpdate::from_cloud(SERVER_ID, round, &merged, Vec::new()).to_cloud(&merged)?;

        locals = updates
            .iter()
            .map(|u| u.to_cloud(&incumbent))
            .collect::<Result<Vec<_>>>()?;
        let local: Vec<EvalReport> = partitions
            .iter()
            .zip(&locals)
            .map(|(p, c)| evaluate_frames(c, p, frames, cam, &cfg.settings, Scope::Local))
            .collect::<Result<_>>()?;
        let global_per_client: Vec<EvalReport> = partitions
            .iter()
            .map(|p| evaluate_frames(&next, p, frames, cam, &cfg.settings, Scope::Global))
            .collect::<Result<_>>()?;
        history.push(RoundRecord {
            round,
            local_mean: weighted_mean(Scope::Local, &local)?,
            global: weighted_mean(Scope::Global, &global_per_client)?,
            local,
            global_per_client,
            final_loss: results.iter().map(|c| c.final_loss).collect(),
        });
        incumbent = next;
    }
    Ok(FedOutcome {
        global: incumbent,
        locals,
        history,
    })
}
