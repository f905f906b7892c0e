//! Virtual-queue fairness and client selection.
//!
//! Each client owns a queue that grows by `epsilon * r_i` in rounds where it
//! is left out and drains by one when it is picked. Ranking clients by
//! `sigma * r_i + Q_i` and taking the top `m` maximises the per-round
//! utility-minus-drift bound, trading reputation against accumulated
//! unfairness.

pub mod queue;
pub mod select;

pub use queue::{
    csi, drift_bound_residual, lyapunov_value, queue_step, step_queues, step_queues_rbcsf,
    unfairness_arrivals, unfairness_rate, FairnessParams, VirtualQueueState, DRIFT_THETA,
};
pub use select::{
    rbff_proxy_scores, select_fairfedcs, select_greedy, select_random, select_rbff_proxy, top_m,
    utility, SelectionDecision,
};
