//! Federated training: partitioning, local appearance-only optimisation,
//! the client-update wire format and visibility-weighted aggregation.

mod aggregate;
mod optimizer;
mod partition;
mod run;
mod train;
pub mod wire;

pub use aggregate::{aggregate, aggregation_weights, AGGREGATION_EPS};
pub use optimizer::{Adam, LearningRates};
pub use partition::{partition_dataset, ClientPartition, RoundSchedule, VAL_STRIDE};
pub use run::{run_federated, FedConfig, FedOutcome, RoundRecord};
pub use train::{compute_loss, local_train, LocalConfig, LocalResult};
pub use wire::{ClientUpdate, SERVER_ID};
