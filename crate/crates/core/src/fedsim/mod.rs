//! Desk-scale federated training: synthetic scenarios, the client model, and
//! the select/train/aggregate/score/update round loop.

pub mod data;
pub mod experiment;
pub mod model;

pub use data::{
    generate_scenario1, generate_scenario2, inject_label_noise, inject_label_noise_within, ClientDataProfile,
    Dataset, Federation, ScenarioSpec,
};
pub use experiment::{build_federation, run_experiment, run_on_federation, EarlyStopping, ExperimentTrace, RoundRecord};
pub use model::{aggregate, evaluate, local_train, loss_and_gradient, ModelState, TrainParams};
