//! Synthetic federations.
//!
//! Every client draws from one shared Gaussian mixture with a unit-variance
//! component per class, centred at `separation * e_k`. Data quality is varied
//! through label noise following a block schedule of `0%, 5%, ..., 45%` over
//! each run of ten consecutive clients.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    dim: usize,
}

impl Dataset {
    /// `features` is row-major, `labels.len()` rows of `dim` values.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_classes: usize, dim: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!("label {y} outside [0, {n_classes})")));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn with_labels(&self, labels: Vec<usize>) -> Self {
        Self {
            features: self.features.clone(),
            labels,
            n_classes: self.n_classes,
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataProfile {
    pub client_id: usize,
    /// Number of classes present in the client's local data.
    pub n_classes: usize,
    pub noise_fraction: f64,
    pub sample_count: usize,
    pub is_minority: bool,
}

/// Label-noise fraction of client `i` under the block schedule.
pub fn noise_schedule(client_id: usize) -> f64 {
    (client_id % 10) as f64 * 0.05
}

/// Clients holding the minority class in scenario 2.
pub const MINORITY_CLIENTS: usize = 3;

/// Gives a Bayes-optimal accuracy of about 0.95 for ten classes.
pub const DEFAULT_SEPARATION: f64 = 3.4;
pub const DEFAULT_TEST_PER_CLASS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub profiles: Vec<ClientDataProfile>,
    pub datasets: Vec<Dataset>,
    pub test_set: Dataset,
}

impl Federation {
    pub fn n_clients(&self) -> usize {
        self.profiles.len()
    }

    pub fn minority_class(&self) -> Option<usize> {
        self.profiles
            .iter()
            .any(|p| p.is_minority)
            .then(|| self.test_set.n_classes() - 1)
    }
}

/// Shared generator settings for both scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub n_clients: usize,
    pub samples_per_client: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Distance of each class mean from the origin along its own axis.
    pub separation: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(n_clients: usize, samples_per_client: usize, n_classes: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            n_clients,
            samples_per_client,
            n_classes,
            feature_dim,
            separation: DEFAULT_SEPARATION,
            test_per_class: DEFAULT_TEST_PER_CLASS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.samples_per_client == 0 {
            return Err(Error::invalid("need at least one client and one sample per client"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.feature_dim < self.n_classes {
            return Err(Error::invalid(format!(
                "feature_dim {} must be at least n_classes {} for simplex class means",
                self.feature_dim, self.n_classes
            )));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) || self.test_per_class == 0 {
            return Err(Error::invalid("separation and test_per_class must be positive"));
        }
        Ok(())
    }

    fn sample_into(&self, class: usize, rng: &mut SimRng, out: &mut Vec<f64>) {
        for j in 0..self.feature_dim {
            let z: f64 = StandardNormal.sample(rng);
            out.push(z + if j == class { self.separation } else { 0.0 });
        }
    }

    /// Dataset with labels drawn uniformly from `classes`.
    fn draw(&self, classes: &[usize], count: usize, rng: &mut SimRng) -> Dataset {
        let mut features = Vec::with_capacity(count * self.feature_dim);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = classes[rng.random_range(0..classes.len())];
            self.sample_into(y, rng, &mut features);
            labels.push(y);
        }
        Dataset {
            features,
            labels,
            n_classes: self.n_classes,
            dim: self.feature_dim,
        }
    }

    /// Clean, class-balanced server test set.
    fn test_set(&self) -> Dataset {
        let mut rng = rng::rng_for(self.seed, Stream::TestSet, 0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for y in 0..self.n_classes {
            for _ in 0..self.test_per_class {
                self.sample_into(y, &mut rng, &mut features);
                labels.push(y);
            }
        }
        Dataset {
            features,
            labels,
            n_classes: self.n_classes,
            dim: self.feature_dim,
        }
    }

    /// IID clients over all classes with block-scheduled label noise.
    pub fn scenario1(&self) -> Result<Federation> {
        self.validate()?;
        if !self.n_clients.is_multiple_of(10) {
            return Err(Error::invalid(format!(
                "scenario 1 needs a multiple of 10 clients, got {}",
                self.n_clients
            )));
        }
        let all: Vec<usize> = (0..self.n_classes).collect();
        let mut profiles = Vec::with_capacity(self.n_clients);
        let mut datasets = Vec::with_capacity(self.n_clients);
        for id in 0..self.n_clients {
            let p = noise_schedule(id);
            let mut rng = rng::rng_for(self.seed, Stream::Data, id as u64);
            let clean = self.draw(&all, self.samples_per_client, &mut rng);
            let noise_seed = rng::derive_seed(self.seed, Stream::Noise, id as u64);
            datasets.push(inject_label_noise_within(&clean, p, &all, noise_seed)?);
            profiles.push(ClientDataProfile {
                client_id: id,
                n_classes: self.n_classes,
                noise_fraction: p,
                sample_count: self.samples_per_client,
                is_minority: false,
            });
        }
        Ok(Federation {
            profiles,
            datasets,
            test_set: self.test_set(),
        })
    }

    /// Class `K - 1` is held only by clients `0..3`, which see every class and
    /// carry `p_minority` label noise. Everyone else sees the other `K - 1`
    /// classes with the block noise schedule.
    pub fn scenario2(&self, p_minority: f64) -> Result<Federation> {
        self.validate()?;
        if self.n_clients < MINORITY_CLIENTS + 1 {
            return Err(Error::invalid(format!(
                "scenario 2 needs at least {} clients, got {}",
                MINORITY_CLIENTS + 1,
                self.n_clients
            )));
        }
        if !(0.0..1.0).contains(&p_minority) {
            return Err(Error::invalid(format!("p_minority must lie in [0, 1), got {p_minority}")));
        }
        let all: Vec<usize> = (0..self.n_classes).collect();
        let majority: Vec<usize> = (0..self.n_classes - 1).collect();
        let mut profiles = Vec::with_capacity(self.n_clients);
        let mut datasets = Vec::with_capacity(self.n_clients);
        for id in 0..self.n_clients {
            let minority = id < MINORITY_CLIENTS;
            let (classes, p) = if minority {
                (&all, p_minority)
            } else {
                (&majority, noise_schedule(id))
            };
            let mut rng = rng::rng_for(self.seed, Stream::Data, id as u64);
            let clean = self.draw(classes, self.samples_per_client, &mut rng);
            let noise_seed = rng::derive_seed(self.seed, Stream::Noise, id as u64);
            datasets.push(inject_label_noise_within(&clean, p, classes, noise_seed)?);
            profiles.push(ClientDataProfile {
                client_id: id,
                n_classes: classes.len(),
                noise_fraction: p,
                sample_count: self.samples_per_client,
                is_minority: minority,
            });
        }
        Ok(Federation {
            profiles,
            datasets,
            test_set: self.test_set(),
        })
    }
}

pub fn generate_scenario1(
    n_clients: usize,
    samples_per_client: usize,
    n_classes: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Federation> {
    ScenarioSpec::new(n_clients, samples_per_client, n_classes, feature_dim, seed).scenario1()
}

pub fn generate_scenario2(
    n_clients: usize,
    samples_per_client: usize,
    n_classes: usize,
    feature_dim: usize,
    p_minority: f64,
    seed: u64,
) -> Result<Federation> {
    ScenarioSpec::new(n_clients, samples_per_client, n_classes, feature_dim, seed).scenario2(p_minority)
}

/// Flips `floor(p * len)` uniformly chosen labels to a uniformly drawn
/// different class among all of the dataset's classes.
pub fn inject_label_noise(dataset: &Dataset, p: f64, seed: u64) -> Result<Dataset> {
    let all: Vec<usize> = (0..dataset.n_classes).collect();
    inject_label_noise_within(dataset, p, &all, seed)
}

/// As [`inject_label_noise`], but replacement labels come from `alphabet`
/// (used when a client only holds some of the classes).
pub fn inject_label_noise_within(dataset: &Dataset, p: f64, alphabet: &[usize], seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("noise fraction must lie in [0, 1), got {p}")));
    }
    let flips = ((p * dataset.len() as f64) + 1e-9).floor() as usize;
    if flips == 0 {
        return Ok(dataset.clone());
    }
    if alphabet.len() < 2 {
        return Err(Error::invalid("label noise needs at least two candidate labels"));
    }
    let mut rng = rng::seeded(seed);
    let mut labels = dataset.labels.clone();
    for i in index::sample(&mut rng, dataset.len(), flips) {
        let old = labels[i];
        let others: Vec<usize> = alphabet.iter().copied().filter(|&c| c != old).collect();
        labels[i] = others[rng.random_range(0..others.len())];
    }
    Ok(dataset.with_labels(labels))
}
