//! The round loop.
//!
//! Each round: select with the current reputations and queues, train the
//! selected clients from the global model, average their models, score them
//! with Shapley values over the round's coalition, update reputations, step
//! the queues with the reputations used for selection, evaluate.

use serde::{Deserialize, Serialize};

use super::data::{Federation, ScenarioSpec};
use super::model::{aggregate, aggregate_weighted, class_accuracy, evaluate, local_train, ModelState, TrainParams};
use crate::contribution::{exact_shapley, round_coalition_oracle, sampled_shapley, ShapleyMode, EXACT_SHAPLEY_CAP};
use crate::error::{Error, Result};
use crate::fairness::{
    lyapunov_value, select_fairfedcs, select_greedy, select_random, select_rbff_proxy, step_queues,
    step_queues_rbcsf, unfairness_arrivals, FairnessParams, SelectionDecision, VirtualQueueState,
};
use crate::harness::config::{ExperimentConfig, Policy};
use crate::reputation::{init_reputation, record_contribution, reputation_values, ReputationRecord};
use crate::rng::{derive_seed, Stream};

/// Stops once the monitored loss has gone `patience` observations without a
/// strict improvement on its best value.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records one loss; `true` means stop now.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Everything recorded for one round. Client state columns (`reputation`,
/// `positive`, `negative`, `queues`) hold the state the round started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub reputation: Vec<f64>,
    pub positive: Vec<u64>,
    pub negative: Vec<u64>,
    pub queues: Option<Vec<f64>>,
    pub csi: Option<Vec<f64>>,
    /// Shapley value per selected client, aligned with `selected`.
    pub phi: Vec<f64>,
    pub shapley_mode: ShapleyMode,
    /// Queue arrivals `c_i(t)`.
    pub arrivals: Option<Vec<f64>>,
    pub utility: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Lyapunov value after this round's queue update.
    pub lyapunov: Option<f64>,
}

impl RoundRecord {
    pub fn phi_for(&self, client: usize) -> Option<f64> {
        self.selected.iter().position(|&c| c == client).map(|p| self.phi[p])
    }

    pub fn is_selected(&self, client: usize) -> bool {
        self.selected.contains(&client)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTrace {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    pub final_reputation: Vec<ReputationRecord>,
    pub final_queues: Option<Vec<f64>>,
    pub participation: Vec<u64>,
    pub stopped_early: bool,
    pub final_model: ModelState,
    pub minority_class_accuracy: Option<f64>,
}

impl ExperimentTrace {
    pub fn rounds_executed(&self) -> usize {
        self.rounds.len()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.test_accuracy)
    }

    /// Queue states `Q(0), ..., Q(T)`.
    pub fn queue_history(&self) -> Option<Vec<Vec<f64>>> {
        let mut states: Vec<Vec<f64>> = self
            .rounds
            .iter()
            .map(|r| r.queues.clone())
            .collect::<Option<_>>()?;
        states.push(self.final_queues.clone()?);
        Some(states)
    }

    pub fn arrival_history(&self) -> Option<Vec<Vec<f64>>> {
        self.rounds.iter().map(|r| r.arrivals.clone()).collect()
    }

    pub fn served_history(&self) -> Vec<Vec<f64>> {
        let n = self.config.n_clients;
        self.rounds
            .iter()
            .map(|r| {
                let mut x = vec![0.0; n];
                for &i in &r.selected {
                    x[i] = 1.0;
                }
                x
            })
            .collect()
    }
}

pub fn build_federation(cfg: &ExperimentConfig) -> Result<Federation> {
    let spec = ScenarioSpec {
        separation: cfg.class_separation,
        test_per_class: cfg.test_samples_per_class,
        ..ScenarioSpec::new(cfg.n_clients, cfg.samples_per_client, cfg.n_classes, cfg.feature_dim, cfg.seed)
    };
    match cfg.scenario {
        1 => spec.scenario1(),
        2 => spec.scenario2(cfg.p_minority),
        s => Err(Error::Config(format!("scenario must be 1 or 2, got {s}"))),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentTrace> {
    cfg.validate()?;
    let federation = build_federation(cfg)?;
    run_on_federation(cfg, &federation)
}

/// Runs the round loop on an explicit federation (its size must match
/// `cfg.n_clients`).
pub fn run_on_federation(cfg: &ExperimentConfig, federation: &Federation) -> Result<ExperimentTrace> {
    cfg.validate()?;
    let n = federation.n_clients();
    if n != cfg.n_clients {
        return Err(Error::invalid(format!(
            "federation has {n} clients, config expects {}",
            cfg.n_clients
        )));
    }
    let test_set = &federation.test_set;
    let params = FairnessParams::new(cfg.sigma, cfg.epsilon())?;
    let eta = cfg.eta();
    let train = TrainParams {
        lr: cfg.lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
    };

    let mut global = ModelState::zeros(cfg.n_classes, cfg.feature_dim);
    let mut table = init_reputation(n)?;
    let mut queues = cfg.policy.uses_queues().then(|| VirtualQueueState::new(n));
    let mut participation = vec![0u64; n];
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut rounds = Vec::new();
    let mut stopped_early = false;

    for t in 0..cfg.max_rounds {
        let reps = reputation_values(&table);
        let tie_seed = derive_seed(cfg.seed, Stream::TieBreak, t as u64);
        let mut decision: SelectionDecision = match cfg.policy {
            Policy::Fairfedcs | Policy::Rbcsf | Policy::Ablation => {
                select_fairfedcs(&reps, queues.as_ref().expect("queue policy"), &params, cfg.m, tie_seed)?
            }
            Policy::Greedy => select_greedy(&reps, cfg.m, tie_seed)?,
            Policy::Random => select_random(n, cfg.m, derive_seed(cfg.seed, Stream::RandomPolicy, t as u64))?
                .with_utility(&reps),
            Policy::RbffProxy => {
                let total = participation.iter().sum();
                select_rbff_proxy(&reps, &participation, total, cfg.m, tie_seed)?
            }
        };
        decision.round = t as u64;

        let mut updates = Vec::with_capacity(decision.selected.len());
        for &c in &decision.selected {
            let seed = derive_seed(cfg.seed, Stream::LocalTrain, (t * n + c) as u64);
            let local = local_train(&global, &federation.datasets[c], &train, seed)
                .map_err(|e| Error::invalid(format!("round {t}, client {c}: {e}")))?;
            if !local.is_finite() {
                return Err(Error::NonFinite(format!(
                    "round {t}: local model of client {c} has non-finite parameters"
                )));
            }
            updates.push((c, local));
        }
        let next_global = if cfg.weighted_aggregation {
            let models: Vec<&ModelState> = updates.iter().map(|(_, m)| m).collect();
            let weights: Vec<f64> = updates
                .iter()
                .map(|(c, _)| federation.datasets[*c].len() as f64)
                .collect();
            aggregate_weighted(&models, &weights)?
        } else {
            aggregate(updates.iter().map(|(_, m)| m))?
        };
        if !next_global.is_finite() {
            return Err(Error::NonFinite(format!("round {t}: global model has non-finite parameters")));
        }

        let shapley = {
            let oracle = round_coalition_oracle(&global, &updates, test_set)?;
            match cfg.shapley_mode {
                ShapleyMode::Exact if updates.len() <= EXACT_SHAPLEY_CAP => exact_shapley(&oracle)?,
                _ => sampled_shapley(
                    &oracle,
                    cfg.shapley_permutations,
                    cfg.truncation_tol,
                    derive_seed(cfg.seed, Stream::Shapley, t as u64),
                )?,
            }
        };

        let record_start = (
            table.iter().map(|r| r.positive_count).collect::<Vec<_>>(),
            table.iter().map(|r| r.negative_count).collect::<Vec<_>>(),
        );
        for (&c, &phi) in shapley.members.iter().zip(&shapley.values) {
            table[c] = record_contribution(table[c], phi)?;
            participation[c] += 1;
        }

        let start_queues = queues.as_ref().map(|q| q.queues.clone());
        let arrivals = match cfg.policy {
            Policy::Fairfedcs => {
                let q = queues.as_ref().expect("queue policy");
                let c = unfairness_arrivals(&reps, &decision.selected, params.epsilon)?;
                queues = Some(step_queues(q, &reps, &decision.selected, &params)?);
                Some(c)
            }
            Policy::Rbcsf | Policy::Ablation => {
                let q = queues.as_ref().expect("queue policy");
                queues = Some(step_queues_rbcsf(q, &decision.selected, eta)?);
                Some(vec![eta; n])
            }
            _ => None,
        };

        let eval = evaluate(&next_global, test_set)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite(format!("round {t}: test loss is {}", eval.loss)));
        }
        global = next_global;

        rounds.push(RoundRecord {
            round: t,
            selected: decision.selected.clone(),
            reputation: reps,
            positive: record_start.0,
            negative: record_start.1,
            queues: start_queues,
            csi: decision.csi.clone(),
            phi: shapley.values.clone(),
            shapley_mode: shapley.mode,
            arrivals,
            utility: decision.utility,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            lyapunov: queues.as_ref().map(|q| lyapunov_value(&q.queues)),
        });

        if stopper.observe(eval.loss) {
            stopped_early = true;
            break;
        }
    }

    let minority_class_accuracy = federation
        .minority_class()
        .and_then(|k| class_accuracy(&global, test_set, k));
    Ok(ExperimentTrace {
        config: cfg.clone(),
        rounds,
        final_reputation: table,
        final_queues: queues.map(|q| q.queues),
        participation,
        stopped_early,
        final_model: global,
        minority_class_accuracy,
    })
}
