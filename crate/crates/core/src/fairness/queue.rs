//! Virtual unfairness queues and their Lyapunov bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift-bound slack `0.5 * c_max^2 + 0.5 * x_max^2` with both maxima at 1.
pub const DRIFT_THETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessParams {
    /// Weight of reputation against accumulated unfairness.
    pub sigma: f64,
    /// Discount on how fast unfairness accumulates for unselected clients.
    pub epsilon: f64,
    pub theta: f64,
}

impl FairnessParams {
    pub fn new(sigma: f64, epsilon: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self {
            sigma,
            epsilon,
            theta: DRIFT_THETA,
        })
    }

    /// `epsilon = m / N`.
    pub fn for_population(sigma: f64, m: usize, n: usize) -> Result<Self> {
        if n == 0 || m > n {
            return Err(Error::invalid(format!("cannot select {m} of {n} clients")));
        }
        Self::new(sigma, m as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueueState {
    pub queues: Vec<f64>,
    pub round: u64,
}

impl VirtualQueueState {
    /// All queues start empty.
    pub fn new(num_clients: usize) -> Self {
        Self {
            queues: vec![0.0; num_clients],
            round: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    pub fn lyapunov(&self) -> f64 {
        lyapunov_value(&self.queues)
    }
}

/// `epsilon * r` for an unselected client, zero otherwise.
pub fn unfairness_rate(reputation: f64, selected: bool, epsilon: f64) -> f64 {
    if selected {
        0.0
    } else {
        epsilon * reputation
    }
}

/// `max(0, q + c - x)`.
pub fn queue_step(q: f64, arrival: f64, served: f64) -> f64 {
    (q + arrival - served).max(0.0)
}

/// Client suitability index `sigma * r + q`.
pub fn csi(params: &FairnessParams, reputation: f64, queue: f64) -> f64 {
    params.sigma * reputation + queue
}

fn selection_mask(n: usize, selected: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &i in selected {
        let slot = mask
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("selected client {i} out of range for {n} clients")))?;
        *slot = true;
    }
    Ok(mask)
}

/// Per-client arrivals `c_i(t)` under the reputation-weighted rule.
pub fn unfairness_arrivals(reputations: &[f64], selected: &[usize], epsilon: f64) -> Result<Vec<f64>> {
    let mask = selection_mask(reputations.len(), selected)?;
    Ok(reputations
        .iter()
        .zip(&mask)
        .map(|(&r, &s)| unfairness_rate(r, s, epsilon))
        .collect())
}

/// One round of the reputation-weighted queue update for every client, using
/// the reputations the selection was made with.
pub fn step_queues(
    queues: &VirtualQueueState,
    reputations: &[f64],
    selected: &[usize],
    params: &FairnessParams,
) -> Result<VirtualQueueState> {
    if reputations.len() != queues.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reputations for {} queues",
            reputations.len(),
            queues.len()
        )));
    }
    let mask = selection_mask(queues.len(), selected)?;
    let next = queues
        .queues
        .iter()
        .zip(reputations)
        .zip(&mask)
        .map(|((&q, &r), &s)| {
            let served = if s { 1.0 } else { 0.0 };
            queue_step(q, unfairness_rate(r, s, params.epsilon), served)
        })
        .collect();
    Ok(VirtualQueueState {
        queues: next,
        round: queues.round + 1,
    })
}

/// Constant-rate update `max(0, q + eta - x)` used by RBCS-F and the ablation.
pub fn step_queues_rbcsf(queues: &VirtualQueueState, selected: &[usize], eta: f64) -> Result<VirtualQueueState> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta must lie in [0, 1], got {eta}")));
    }
    let mask = selection_mask(queues.len(), selected)?;
    let next = queues
        .queues
        .iter()
        .zip(&mask)
        .map(|(&q, &s)| queue_step(q, eta, if s { 1.0 } else { 0.0 }))
        .collect();
    Ok(VirtualQueueState {
        queues: next,
        round: queues.round + 1,
    })
}

/// `0.5 * sum(q^2)`.
pub fn lyapunov_value(queues: &[f64]) -> f64 {
    0.5 * queues.iter().map(|q| q * q).sum::<f64>()
}

/// Slack in the one-step drift bound:
/// `sum_i (Q_i (c_i - x_i) + theta) - (L(next) - L(prev))`.
///
/// Non-negative for every transition with `c, x` in `[0, 1]`.
pub fn drift_bound_residual(
    prev: &[f64],
    next: &[f64],
    arrivals: &[f64],
    served: &[f64],
    params: &FairnessParams,
) -> Result<f64> {
    let n = prev.len();
    if next.len() != n || arrivals.len() != n || served.len() != n {
        return Err(Error::invalid(format!(
            "transition vectors disagree in length: prev {n}, next {}, c {}, x {}",
            next.len(),
            arrivals.len(),
            served.len()
        )));
    }
    let mut bound = 0.0;
    for i in 0..n {
        let (q, c, x) = (prev[i], arrivals[i], served[i]);
        if !(q >= 0.0) || !(0.0..=1.0).contains(&c) || !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!(
                "client {i}: q = {q}, c = {c}, x = {x} out of range"
            )));
        }
        let expected = queue_step(q, c, x);
        if (expected - next[i]).abs() > 1e-12 * (1.0 + expected.abs()) {
            return Err(Error::invalid(format!(
                "client {i}: next queue {} is not max(0, {q} + {c} - {x})",
                next[i]
            )));
        }
        bound += q * (c - x) + params.theta;
    }
    Ok(bound - (lyapunov_value(next) - lyapunov_value(prev)))
}
