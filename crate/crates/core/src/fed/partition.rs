use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every `VAL_STRIDE`-th frame of a chunk (offsets 0, 8, 16, ...) is held out.
pub const VAL_STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub client_id: u32,
    pub frame_indices: Range<usize>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl ClientPartition {
    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    /// Single partition holding the union of `parts`, used for the
    /// centralised baseline so it is evaluated on the same validation set.
    pub fn merged(parts: &[ClientPartition]) -> Result<Self> {
        let start = parts
            .iter()
            .map(|p| p.frame_indices.start)
            .min()
            .ok_or_else(|| Error::Invalid("cannot merge zero partitions".into()))?;
        let end = parts
            .iter()
            .map(|p| p.frame_indices.end)
            .max()
            .unwrap_or(start);
        let mut train: Vec<usize> = parts.iter().flat_map(|p| p.train_indices.clone()).collect();
        let mut val: Vec<usize> = parts.iter().flat_map(|p| p.val_indices.clone()).collect();
        train.sort_unstable();
        val.sort_unstable();
        Ok(Self {
            client_id: 0,
            frame_indices: start..end,
            train_indices: train,
            val_indices: val,
        })
    }
}

/// Contiguous chunks `[kC, min((k+1)C, N))` for `k = 0..ceil(N/C)`.
pub fn partition_dataset(n_frames: usize, chunk: usize) -> Result<Vec<ClientPartition>> {
    if n_frames == 0 || chunk == 0 {
        return Err(Error::Invalid(format!(
            "need N >= 1 and C >= 1, got N={n_frames}, C={chunk}"
        )));
    }
    let k = n_frames.div_ceil(chunk);
    Ok((0..k)
        .map(|client| {
            let range = client * chunk..((client + 1) * chunk).min(n_frames);
            let (val, train): (Vec<usize>, Vec<usize>) = range
                .clone()
                .partition(|i| (i - range.start) % VAL_STRIDE == 0);
            ClientPartition {
                client_id: client as u32,
                frame_indices: range,
                train_indices: train,
                val_indices: val,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub rounds: usize,
    pub local_steps: usize,
}

impl RoundSchedule {
    pub fn new(rounds: usize, local_steps: usize) -> Result<Self> {
        if rounds == 0 || local_steps == 0 {
            return Err(Error::Invalid(
                "rounds and local steps must be positive".into(),
            ));
        }
        Ok(Self {
            rounds,
            local_steps,
        })
    }

    /// Splits a fixed step budget into `rounds` equal rounds.
    pub fn from_budget(rounds: usize, budget: usize) -> Result<Self> {
        if rounds == 0 || !budget.is_multiple_of(rounds) {
            return Err(Error::Invalid(format!(
                "budget {budget} is not divisible into {rounds} rounds"
            )));
        }
        Self::new(rounds, budget / rounds)
    }

    pub fn budget(&self) -> usize {
        self.rounds * self.local_steps
    }

    /// Checks `R·T` against a configured budget.
    pub fn check_budget(&self, budget: usize) -> Result<()> {
        if self.budget() == budget {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "schedule {}x{} = {} does not match budget {budget}",
                self.rounds,
                self.local_steps,
                self.budget()
            )))
        }
    }
}
