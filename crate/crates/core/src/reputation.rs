//! Contribution-based Beta reputation.
//!
//! Each client carries a count of positive and negative contributions. Its
//! reputation is the mean of `Beta(a + 1, b + 1)`, so an unscored client sits
//! at the uniform prior's mean of one half. Counters only change for clients
//! that were selected and scored in a round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub client_id: usize,
    pub positive_count: u64,
    pub negative_count: u64,
}

impl ReputationRecord {
    pub fn new(client_id: usize) -> Self {
        Self {
            client_id,
            positive_count: 0,
            negative_count: 0,
        }
    }

    pub fn value(&self) -> f64 {
        reputation_value(self)
    }

    /// Number of rounds in which this client was selected and scored.
    pub fn scored_rounds(&self) -> u64 {
        self.positive_count + self.negative_count
    }
}

pub fn init_reputation(num_clients: usize) -> Result<Vec<ReputationRecord>> {
    if num_clients == 0 {
        return Err(Error::invalid("reputation table needs at least one client"));
    }
    Ok((0..num_clients).map(ReputationRecord::new).collect())
}

/// `(a + 1) / (a + b + 2)`, strictly inside (0, 1).
pub fn reputation_value(rec: &ReputationRecord) -> f64 {
    (rec.positive_count as f64 + 1.0) / ((rec.positive_count + rec.negative_count) as f64 + 2.0)
}

/// Applies the sign rule: a non-negative Shapley value counts as a positive
/// contribution, anything below zero as a negative one.
pub fn record_contribution(rec: ReputationRecord, shapley_value: f64) -> Result<ReputationRecord> {
    if !shapley_value.is_finite() {
        return Err(Error::invalid(format!(
            "client {} has non-finite Shapley value {shapley_value}",
            rec.client_id
        )));
    }
    let mut next = rec;
    if shapley_value >= 0.0 {
        next.positive_count += 1;
    } else {
        next.negative_count += 1;
    }
    Ok(next)
}

/// Reputation values for a whole table, indexed by client id.
pub fn reputation_values(table: &[ReputationRecord]) -> Vec<f64> {
    table.iter().map(reputation_value).collect()
}
