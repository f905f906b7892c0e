//! Per-round contribution scoring with Shapley values.
//!
//! The game is played by the round's selected coalition only. A coalition
//! value is the accuracy of the previous global model aggregated with the
//! updates of a subset of members; the empty subset is the previous global
//! model itself. Subsets are addressed by bitmask over member positions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::data::Dataset;
use crate::fedsim::model::{aggregate, evaluate, ModelState};
use crate::rng;

/// Largest coalition handled by [`exact_shapley`] (2^12 subset evaluations).
pub const EXACT_SHAPLEY_CAP: usize = 12;

/// Hard limit from the `u64` subset mask.
pub const MAX_COALITION: usize = 64;

type ValueFn<'a> = Box<dyn Fn(u64) -> f64 + Send + Sync + 'a>;

/// Memoised coalition value function.
///
/// Evaluation through [`value`](Self::value) is safe from several threads at
/// once. Two threads racing on the same subset both compute it and store the
/// same number, so the memo never holds conflicting entries.
pub struct CoalitionValueOracle<'a> {
    members: Vec<usize>,
    value_fn: ValueFn<'a>,
    memo: Mutex<HashMap<u64, f64>>,
    evaluations: AtomicUsize,
}

impl std::fmt::Debug for CoalitionValueOracle<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoalitionValueOracle")
            .field("members", &self.members)
            .field("evaluations", &self.evaluations_used())
            .finish()
    }
}

impl<'a> CoalitionValueOracle<'a> {
    /// `value_fn` receives a bitmask over positions in `members`.
    pub fn new<F>(members: Vec<usize>, value_fn: F) -> Result<Self>
    where
        F: Fn(u64) -> f64 + Send + Sync + 'a,
    {
        if members.len() > MAX_COALITION {
            return Err(Error::invalid(format!(
                "coalition of {} members exceeds the {MAX_COALITION}-member mask",
                members.len()
            )));
        }
        let mut seen = members.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != members.len() {
            return Err(Error::invalid("coalition members must be distinct"));
        }
        Ok(Self {
            members,
            value_fn: Box::new(value_fn),
            memo: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
        })
    }

    /// Oracle backed by a full table of `2^n` subset values, indexed by mask.
    pub fn from_table(members: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        let n = members.len();
        if n >= 31 || table.len() != 1usize << n {
            return Err(Error::invalid(format!(
                "value table for {n} members must hold 2^{n} entries, got {}",
                table.len()
            )));
        }
        Self::new(members, move |mask| table[mask as usize])
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn full_mask(&self) -> u64 {
        full_mask(self.members.len())
    }

    pub fn value(&self, mask: u64) -> f64 {
        if let Some(v) = self.memo.lock().expect("memo poisoned").get(&mask) {
            return *v;
        }
        let v = (self.value_fn)(mask);
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.memo.lock().expect("memo poisoned").insert(mask, v);
        v
    }

    pub fn base_accuracy(&self) -> f64 {
        self.value(0)
    }

    /// Value of the subset given as client ids (must be members).
    pub fn value_of(&self, clients: &[usize]) -> Result<f64> {
        let mut mask = 0u64;
        for c in clients {
            let pos = self
                .members
                .iter()
                .position(|m| m == c)
                .ok_or_else(|| Error::invalid(format!("client {c} is not a coalition member")))?;
            mask |= 1 << pos;
        }
        Ok(self.value(mask))
    }

    /// Distinct subsets evaluated so far.
    pub fn evaluations_used(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapleyMode {
    Exact,
    Sampled,
}

impl std::fmt::Display for ShapleyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapleyMode::Exact => "exact",
            ShapleyMode::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub members: Vec<usize>,
    /// Aligned with `members`.
    pub values: Vec<f64>,
    pub mode: ShapleyMode,
    pub evaluations_used: usize,
}

impl ShapleyResult {
    pub fn value_for(&self, client: usize) -> Option<f64> {
        self.members
            .iter()
            .position(|&m| m == client)
            .map(|p| self.values[p])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Exact Shapley values by subset enumeration:
/// `phi_i = (1/n) * sum_{S not containing i} [f(S + i) - f(S)] / C(n-1, |S|)`.
pub fn exact_shapley(oracle: &CoalitionValueOracle<'_>) -> Result<ShapleyResult> {
    let n = oracle.len();
    if n == 0 {
        return Err(Error::invalid("Shapley values need a non-empty coalition"));
    }
    if n > EXACT_SHAPLEY_CAP {
        return Err(Error::CoalitionTooLarge {
            size: n,
            cap: EXACT_SHAPLEY_CAP,
        });
    }
    let before = oracle.evaluations_used();
    let subsets = 1usize << n;
    let values: Vec<f64> = (0..subsets as u64).map(|mask| oracle.value(mask)).collect();
    let weights: Vec<f64> = (0..n)
        .map(|s| 1.0 / (n as f64 * binomial(n - 1, s)))
        .collect();

    let mut phi = vec![0.0; n];
    for (i, slot) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..subsets).filter(|m| m & bit == 0) {
            let size = mask.count_ones() as usize;
            acc += weights[size] * (values[mask | bit] - values[mask]);
        }
        *slot = acc;
    }
    Ok(ShapleyResult {
        members: oracle.members().to_vec(),
        values: phi,
        mode: ShapleyMode::Exact,
        evaluations_used: oracle.evaluations_used() - before,
    })
}

fn factorial_at_most(n: usize, limit: usize) -> Option<usize> {
    let mut acc = 1usize;
    for k in 2..=n {
        acc = acc.checked_mul(k)?;
        if acc > limit {
            return None;
        }
    }
    Some(acc)
}

/// Lexicographic successor; returns false once the last permutation is reached.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Monte-Carlo permutation estimate with within-permutation truncation.
///
/// Permutations are drawn in blocks: a uniformly random base ordering and
/// its `n` cyclic rotations, so each member holds every position once per
/// block. Every draw is still marginally uniform. Walking a permutation, once the prefix value is within `truncation_tol` of
/// the full-coalition value the remaining members get a zero marginal. A
/// tolerance of zero disables truncation. When the budget covers every
/// permutation (`num_permutations >= n!`) each ordering is visited once
/// instead of being sampled.
pub fn sampled_shapley(
    oracle: &CoalitionValueOracle<'_>,
    num_permutations: usize,
    truncation_tol: f64,
    seed: u64,
) -> Result<ShapleyResult> {
    let n = oracle.len();
    if n == 0 {
        return Err(Error::invalid("Shapley values need a non-empty coalition"));
    }
    if num_permutations == 0 {
        return Err(Error::invalid("num_permutations must be at least 1"));
    }
    if !(truncation_tol >= 0.0) {
        return Err(Error::invalid(format!(
            "truncation_tol must be non-negative, got {truncation_tol}"
        )));
    }
    let before = oracle.evaluations_used();
    let full = oracle.value(oracle.full_mask());
    let empty = oracle.value(0);
    let mut sums = vec![0.0; n];

    let mut walk = |perm: &[usize]| {
        let mut prefix = 0u64;
        let mut prev = empty;
        for &pos in perm {
            if truncation_tol > 0.0 && (full - prev).abs() <= truncation_tol {
                break;
            }
            prefix |= 1 << pos;
            let cur = oracle.value(prefix);
            sums[pos] += cur - prev;
            prev = cur;
        }
    };

    let count = match factorial_at_most(n, num_permutations) {
        Some(total) => {
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                walk(&perm);
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            total
        }
        None => {
            let mut rng = rng::seeded(seed);
            let mut base: Vec<usize> = (0..n).collect();
            let mut perm = Vec::with_capacity(n);
            for k in 0..num_permutations {
                let shift = k % n;
                if shift == 0 {
                    base.shuffle(&mut rng);
                }
                perm.clear();
                perm.extend_from_slice(&base[shift..]);
                perm.extend_from_slice(&base[..shift]);
                walk(&perm);
            }
            num_permutations
        }
    };

    Ok(ShapleyResult {
        members: oracle.members().to_vec(),
        values: sums.into_iter().map(|s| s / count as f64).collect(),
        mode: ShapleyMode::Sampled,
        evaluations_used: oracle.evaluations_used() - before,
    })
}

/// Coalition values for one aggregation round: subset `S` is scored by the
/// accuracy of the mean of `S`'s local models on `eval_set`, the empty subset
/// by the accuracy of `prev_global`.
pub fn round_coalition_oracle<'a>(
    prev_global: &'a ModelState,
    updates: &'a [(usize, ModelState)],
    eval_set: &'a Dataset,
) -> Result<CoalitionValueOracle<'a>> {
    for (client, m) in updates {
        if !m.same_shape(prev_global) {
            return Err(Error::DimensionMismatch(format!(
                "update from client {client} is {}x{}, global model is {}x{}",
                m.n_classes(),
                m.dim(),
                prev_global.n_classes(),
                prev_global.dim()
            )));
        }
    }
    let members = updates.iter().map(|(c, _)| *c).collect();
    CoalitionValueOracle::new(members, move |mask| {
        if mask == 0 {
            return evaluate(prev_global, eval_set)
                .map(|e| e.accuracy)
                .unwrap_or(f64::NAN);
        }
        let chosen = updates
            .iter()
            .enumerate()
            .filter(|(p, _)| mask & (1 << p) != 0)
            .map(|(_, (_, m))| m);
        aggregate(chosen)
            .and_then(|m| evaluate(&m, eval_set))
            .map(|e| e.accuracy)
            .unwrap_or(f64::NAN)
    })
}
