//! Client selection policies.
//!
//! Every ranking policy shares one tie-break contract: client order is
//! shuffled with the tie seed, then stably sorted by score, so clients with
//! equal scores are ordered uniformly at random but reproducibly.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::queue::{csi, FairnessParams, VirtualQueueState};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub round: u64,
    /// Selected client ids, ascending.
    pub selected: Vec<usize>,
    /// Per-client suitability index, for policies that rank by it.
    pub csi: Option<Vec<f64>>,
    /// Sum of the selected clients' reputations.
    pub utility: f64,
}

impl SelectionDecision {
    pub fn is_selected(&self, client: usize) -> bool {
        self.selected.binary_search(&client).is_ok()
    }

    pub fn served(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for &i in &self.selected {
            x[i] = 1.0;
        }
        x
    }

    /// Recomputes `utility` against `reputations`.
    pub fn with_utility(mut self, reputations: &[f64]) -> Self {
        self.utility = utility(reputations, &self.selected);
        self
    }
}

pub fn utility(reputations: &[f64], selected: &[usize]) -> f64 {
    selected.iter().map(|&i| reputations[i]).sum()
}

fn check_m(n: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("must select at least one client"));
    }
    if m > n {
        return Err(Error::invalid(format!("cannot select m = {m} of N = {n} clients")));
    }
    Ok(())
}

/// The `m` highest scores with the seeded tie-break; returned ascending by id.
pub fn top_m(scores: &[f64], m: usize, tie_seed: u64) -> Result<Vec<usize>> {
    check_m(scores.len(), m)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of client {i} is {}", scores[i])));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut rng::seeded(tie_seed));
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut picked = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Top-`m` clients by `sigma * r + Q`, which maximises the selected clients'
/// summed index over all size-`m` subsets.
pub fn select_fairfedcs(
    reputations: &[f64],
    queues: &VirtualQueueState,
    params: &FairnessParams,
    m: usize,
    tie_seed: u64,
) -> Result<SelectionDecision> {
    if reputations.len() != queues.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reputations for {} queues",
            reputations.len(),
            queues.len()
        )));
    }
    let index: Vec<f64> = reputations
        .iter()
        .zip(&queues.queues)
        .map(|(&r, &q)| csi(params, r, q))
        .collect();
    let selected = top_m(&index, m, tie_seed)?;
    Ok(SelectionDecision {
        round: queues.round,
        utility: utility(reputations, &selected),
        selected,
        csi: Some(index),
    })
}

/// Uniform `m`-subset without replacement. Utility is left at zero because
/// no reputations are involved; see [`SelectionDecision::with_utility`].
pub fn select_random(n: usize, m: usize, seed: u64) -> Result<SelectionDecision> {
    check_m(n, m)?;
    let mut selected = index::sample(&mut rng::seeded(seed), n, m).into_vec();
    selected.sort_unstable();
    Ok(SelectionDecision {
        round: 0,
        selected,
        csi: None,
        utility: 0.0,
    })
}

pub fn select_greedy(reputations: &[f64], m: usize, tie_seed: u64) -> Result<SelectionDecision> {
    let selected = top_m(reputations, m, tie_seed)?;
    Ok(SelectionDecision {
        round: 0,
        utility: utility(reputations, &selected),
        selected,
        csi: None,
    })
}

/// Stand-in for RBFF's reputation/participation trade-off:
/// `score_i = r_i * (1 - y_i / max(1, sum y))`, then top-`m`.
pub fn rbff_proxy_scores(
    reputations: &[f64],
    participation_counts: &[u64],
    total_participations: u64,
) -> Result<Vec<f64>> {
    if reputations.len() != participation_counts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reputations for {} participation counts",
            reputations.len(),
            participation_counts.len()
        )));
    }
    let sum: u64 = participation_counts.iter().sum();
    if sum != total_participations {
        return Err(Error::invalid(format!(
            "total_participations {total_participations} disagrees with the counts' sum {sum}"
        )));
    }
    let denom = total_participations.max(1) as f64;
    Ok(reputations
        .iter()
        .zip(participation_counts)
        .map(|(&r, &y)| r * (1.0 - y as f64 / denom))
        .collect())
}

pub fn select_rbff_proxy(
    reputations: &[f64],
    participation_counts: &[u64],
    total_participations: u64,
    m: usize,
    tie_seed: u64,
) -> Result<SelectionDecision> {
    let scores = rbff_proxy_scores(reputations, participation_counts, total_participations)?;
    let selected = top_m(&scores, m, tie_seed)?;
    Ok(SelectionDecision {
        round: 0,
        utility: utility(reputations, &selected),
        selected,
        csi: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn queues(q: &[f64]) -> VirtualQueueState {
        VirtualQueueState {
            queues: q.to_vec(),
            round: 0,
        }
    }

    /// Brute-force maximum of the summed index over all m-subsets.
    fn best_subset_value(values: &[f64], m: usize) -> f64 {
        let n = values.len();
        (0u32..1 << n)
            .filter(|mask| mask.count_ones() as usize == m)
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| values[i]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn top_two_distinct() {
        // sigma = 1 and zero reputation: the index is the queue itself
        let p = FairnessParams::new(1.0, 0.5).unwrap();
        let d = select_fairfedcs(&[0.0; 4], &queues(&[0.9, 0.5, 0.7, 0.1]), &p, 2, 1).unwrap();
        assert_eq!(d.selected, vec![0, 2]);
        assert_eq!(d.utility, 0.0);
        assert_eq!(d.csi.as_ref().unwrap().len(), 4);
        assert!(select_fairfedcs(&[0.5; 4], &queues(&[0.0; 4]), &p, 5, 1).is_err());
    }

    #[test]
    fn attains_subset_maximum() {
        let mut r = rng::seeded(17);
        let p = FairnessParams::new(0.6, 0.1).unwrap();
        for _ in 0..50 {
            let reps: Vec<f64> = (0..8).map(|_| r.random_range(0.01..0.99)).collect();
            let q: Vec<f64> = (0..8).map(|_| r.random_range(0.0..2.0)).collect();
            let d = select_fairfedcs(&reps, &queues(&q), &p, 3, r.random()).unwrap();
            let idx = d.csi.unwrap();
            let got: f64 = d.selected.iter().map(|&i| idx[i]).sum();
            assert!((got - best_subset_value(&idx, 3)).abs() < 1e-12);
            assert!((d.utility - d.selected.iter().map(|&i| reps[i]).sum::<f64>()).abs() < 1e-15);
        }
    }

    #[test]
    fn all_tied_uses_seed() {
        let p = FairnessParams::new(0.6, 0.1).unwrap();
        let a = select_fairfedcs(&[0.5; 6], &queues(&[0.0; 6]), &p, 2, 42).unwrap();
        let b = select_fairfedcs(&[0.5; 6], &queues(&[0.0; 6]), &p, 2, 42).unwrap();
        assert_eq!(a.selected, b.selected);
        let mut counts = [0u32; 6];
        for seed in 0..6000 {
            for i in top_m(&[1.0; 6], 2, seed).unwrap() {
                counts[i] += 1;
            }
        }
        // each client expected 2000 times
        for c in counts {
            assert!((c as f64 - 2000.0).abs() < 150.0, "{counts:?}");
        }
    }

    #[test]
    fn random_selection() {
        assert_eq!(select_random(4, 4, 9).unwrap().selected, vec![0, 1, 2, 3]);
        assert_eq!(select_random(40, 4, 5).unwrap(), select_random(40, 4, 5).unwrap());
        assert!(select_random(3, 4, 0).is_err());
        let d = select_random(10, 3, 1).unwrap().with_utility(&[0.5; 10]);
        assert_eq!(d.utility, 1.5);
    }

    #[test]
    fn random_frequencies() {
        let mut counts = [0u32; 10];
        let trials = 100_000;
        for seed in 0..trials {
            for i in select_random(10, 2, seed).unwrap().selected {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.2).abs() <= 0.01, "{f}");
        }
    }

    #[test]
    fn greedy_selection() {
        assert_eq!(select_greedy(&[0.9, 0.2, 0.7], 2, 0).unwrap().selected, vec![0, 2]);
        let tied: Vec<Vec<usize>> = (0..20).map(|s| select_greedy(&[0.5; 5], 2, s).unwrap().selected).collect();
        assert!(tied.iter().any(|s| s != &tied[0]));
        let mut r = rng::seeded(3);
        for _ in 0..200 {
            let reps: Vec<f64> = (0..7).map(|_| r.random_range(0.01..0.99)).collect();
            let seed = r.random();
            let sigma = r.random_range(0.05..5.0);
            let p = FairnessParams::new(sigma, 0.1).unwrap();
            let f = select_fairfedcs(&reps, &queues(&[0.0; 7]), &p, 3, seed).unwrap();
            assert_eq!(f.selected, select_greedy(&reps, 3, seed).unwrap().selected);
        }
    }

    #[test]
    fn rbff_proxy() {
        let reps = [0.6, 0.7, 0.55];
        let first = select_rbff_proxy(&reps, &[0, 0, 0], 0, 2, 8).unwrap();
        assert_eq!(first.selected, select_greedy(&reps, 2, 8).unwrap().selected);

        let d = select_rbff_proxy(&[0.5; 4], &[5, 1, 0, 4], 10, 2, 3).unwrap();
        assert_eq!(d.selected, vec![1, 2]);

        let scores = rbff_proxy_scores(&[0.8, 0.6], &[10, 0], 10).unwrap();
        assert_eq!(scores, vec![0.0, 0.6]);
        assert_eq!(select_rbff_proxy(&[0.8, 0.6], &[10, 0], 10, 1, 0).unwrap().selected, vec![1]);
        assert!(select_rbff_proxy(&[0.8, 0.6], &[10, 0], 9, 1, 0).is_err());
        assert!(select_rbff_proxy(&[0.8, 0.6], &[10, 0], 10, 3, 0).is_err());
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(matches!(top_m(&[0.1, f64::NAN], 1, 0), Err(Error::NonFinite(_))));
    }
}
