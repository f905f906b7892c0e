//! Fairness and performance metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::lyapunov_value;
use crate::fedsim::data::ClientDataProfile;
use crate::fedsim::experiment::ExperimentTrace;

/// Lower clamp on scaled quality so participation ratios stay defined.
pub const QUALITY_FLOOR: f64 = 0.05;

/// Jain's index over quality-normalised participation `y_i / z_i`.
pub fn jain_fairness_index(participation: &[u64], quality: &[f64]) -> Result<f64> {
    if participation.len() != quality.len() || participation.is_empty() {
        return Err(Error::invalid(format!(
            "{} participation counts for {} qualities",
            participation.len(),
            quality.len()
        )));
    }
    if let Some(q) = quality.iter().find(|q| !(**q > 0.0)) {
        return Err(Error::invalid(format!("quality {q} must be positive")));
    }
    if participation.iter().all(|&y| y == 0) {
        return Err(Error::UndefinedMetric("no client ever participated".into()));
    }
    let ratios: Vec<f64> = participation
        .iter()
        .zip(quality)
        .map(|(&y, &z)| y as f64 / z)
        .collect();
    Ok(jain_index(&ratios))
}

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_index(values: &[f64]) -> f64 {
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    sum * sum / (values.len() as f64 * sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityProfile {
    pub raw_quality: Vec<f64>,
    pub scaled_quality: Vec<f64>,
}

/// `z_i = n_classes_i * (1 - noise_i)`, min-max scaled onto [0, 1] and
/// clamped below at [`QUALITY_FLOOR`]. A constant population scales to 1.
pub fn quality_profile(profiles: &[ClientDataProfile]) -> QualityProfile {
    let raw: Vec<f64> = profiles
        .iter()
        .map(|p| p.n_classes as f64 * (1.0 - p.noise_fraction))
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let scaled = raw
        .iter()
        .map(|&z| {
            if range <= f64::EPSILON * hi.abs().max(1.0) {
                1.0
            } else {
                ((z - lo) / range).max(QUALITY_FLOOR)
            }
        })
        .collect();
    QualityProfile {
        raw_quality: raw,
        scaled_quality: scaled,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueStability {
    /// `(1/T) sum_t (c_i(t) - x_i(t))`.
    pub mean_rate: f64,
    /// `Q_i(T) / T`.
    pub terminal_ratio: f64,
}

/// Per-client stability statistics. `queue_trace` holds `Q(0), ..., Q(T)`;
/// `arrivals` and `served` hold rounds `0..T`.
pub fn stability_statistics(
    queue_trace: &[Vec<f64>],
    arrivals: &[Vec<f64>],
    served: &[Vec<f64>],
) -> Result<Vec<QueueStability>> {
    let t = arrivals.len();
    if t == 0 {
        return Err(Error::invalid("stability statistics need at least one round"));
    }
    if served.len() != t || queue_trace.len() != t + 1 {
        return Err(Error::invalid(format!(
            "trace lengths disagree: {} queue states, {} arrival rounds, {} service rounds",
            queue_trace.len(),
            t,
            served.len()
        )));
    }
    let n = queue_trace[0].len();
    if queue_trace.iter().any(|q| q.len() != n)
        || arrivals.iter().chain(served).any(|v| v.len() != n)
    {
        return Err(Error::invalid("per-client vectors disagree in length"));
    }
    let terminal = &queue_trace[t];
    Ok((0..n)
        .map(|i| {
            let net: f64 = arrivals.iter().zip(served).map(|(c, x)| c[i] - x[i]).sum();
            QueueStability {
                mean_rate: net / t as f64,
                terminal_ratio: terminal[i] / t as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jfi: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub rounds_executed: usize,
    pub stopped_early: bool,
    pub participation: Vec<u64>,
    pub scaled_quality: Vec<f64>,
    pub stability: Option<Vec<QueueStability>>,
    pub lyapunov_trace: Option<Vec<f64>>,
    pub minority_class_accuracy: Option<f64>,
}

pub fn summarize(trace: &ExperimentTrace, qualities: &QualityProfile) -> Result<MetricsReport> {
    let last = trace
        .rounds
        .last()
        .ok_or_else(|| Error::invalid("cannot summarise an empty trace"))?;
    let jfi = jain_fairness_index(&trace.participation, &qualities.scaled_quality)?;
    let stability = match (trace.queue_history(), trace.arrival_history()) {
        (Some(q), Some(c)) => Some(stability_statistics(&q, &c, &trace.served_history())?),
        _ => None,
    };
    let lyapunov_trace = trace
        .rounds
        .iter()
        .map(|r| r.lyapunov)
        .collect::<Option<Vec<f64>>>();
    Ok(MetricsReport {
        jfi,
        final_accuracy: last.test_accuracy,
        final_loss: last.test_loss,
        rounds_executed: trace.rounds_executed(),
        stopped_early: trace.stopped_early,
        participation: trace.participation.clone(),
        scaled_quality: qualities.scaled_quality.clone(),
        stability,
        lyapunov_trace,
        minority_class_accuracy: trace.minority_class_accuracy,
    })
}

/// Lyapunov values recomputed from queue states `Q(1), ..., Q(T)`.
pub fn lyapunov_from_queues(queue_trace: &[Vec<f64>]) -> Vec<f64> {
    queue_trace.iter().skip(1).map(|q| lyapunov_value(q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(n_classes: usize, noise: f64) -> ClientDataProfile {
        ClientDataProfile {
            client_id: 0,
            n_classes,
            noise_fraction: noise,
            sample_count: 1,
            is_minority: false,
        }
    }

    #[test]
    fn jfi_extremes() {
        assert_eq!(jain_fairness_index(&[3, 3, 3], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(jain_fairness_index(&[2, 4], &[0.5, 1.0]).unwrap(), 1.0);
        assert_eq!(jain_fairness_index(&[0, 5, 0, 0], &[1.0; 4]).unwrap(), 0.25);
        let v = jain_fairness_index(&[1, 1, 2], &[1.0; 3]).unwrap();
        assert!((v - 16.0 / 18.0).abs() < 1e-12);
        assert!(matches!(
            jain_fairness_index(&[0, 0], &[1.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(jain_fairness_index(&[1, 0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn scenario_quality_endpoints() {
        let profiles: Vec<_> = (0..10).map(|i| profile(10, 0.05 * i as f64)).collect();
        let q = quality_profile(&profiles);
        assert!((q.raw_quality[0] - 10.0).abs() < 1e-12);
        assert!((q.raw_quality[9] - 5.5).abs() < 1e-12);
        assert_eq!(q.scaled_quality[0], 1.0);
        assert_eq!(q.scaled_quality[9], QUALITY_FLOOR);
        for w in q.scaled_quality.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let same = quality_profile(&[profile(9, 0.1), profile(9, 0.1)]);
        assert_eq!(same.scaled_quality, vec![1.0, 1.0]);
    }

    #[test]
    fn stability_examples() {
        let t = 200;
        // client 0 always selected, client 1 never selected with r = 0.5, eps = 0.1
        let mut queues = vec![vec![0.0, 0.0]];
        let mut arrivals = Vec::new();
        let mut served = Vec::new();
        for step in 0..t {
            arrivals.push(vec![0.0, 0.05]);
            served.push(vec![1.0, 0.0]);
            queues.push(vec![0.0, 0.05 * (step + 1) as f64]);
        }
        let s = stability_statistics(&queues, &arrivals, &served).unwrap();
        assert_eq!(s[0].mean_rate, -1.0);
        assert_eq!(s[0].terminal_ratio, 0.0);
        assert!((s[1].mean_rate - 0.05).abs() < 1e-12);
        assert!((s[1].terminal_ratio - 0.05).abs() < 1e-12);
        assert!(stability_statistics(&queues[..1], &[], &[]).is_err());
        assert!(stability_statistics(&queues[..5], &arrivals, &served).is_err());
    }

    proptest! {
        #[test]
        fn jfi_scale_invariant_and_bounded(
            ys in proptest::collection::vec(0u64..50, 1..20),
            k in 1u64..9,
        ) {
            prop_assume!(ys.iter().any(|&y| y > 0));
            let q = vec![1.0; ys.len()];
            let a = jain_fairness_index(&ys, &q).unwrap();
            let scaled: Vec<u64> = ys.iter().map(|y| y * k).collect();
            let b = jain_fairness_index(&scaled, &q).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let n = ys.len() as f64;
            prop_assert!(a >= 1.0 / n - 1e-12 && a <= 1.0 + 1e-12);
        }

        #[test]
        fn scaling_preserves_quality_order(noise in proptest::collection::vec(0.0f64..0.9, 2..15)) {
            let profiles: Vec<_> = noise.iter().map(|&p| profile(10, p)).collect();
            let q = quality_profile(&profiles);
            for i in 0..noise.len() {
                for j in 0..noise.len() {
                    if q.raw_quality[i] < q.raw_quality[j] {
                        prop_assert!(q.scaled_quality[i] <= q.scaled_quality[j]);
                    }
                }
            }
        }
    }
}
