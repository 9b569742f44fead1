//! Logical sensor: pairwise geometry in, subjective opinions out.
//!
//! Two features are derived per pair, the distance `d` and a facing feature
//! `φ = (cos α_ij + cos α_ji + 2) / 4`, where `α_ij` is the angle between the
//! shoulder normal of `i` and the direction from `i` to `j`. `φ` is 1 when
//! two people face each other and 0 when they turn their backs on each other.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Point};
use crate::metrics::Partition;
use crate::protocol::{PairOpinion, PerceptUpdate};
use crate::sl::Opinion;
use crate::trace::{Pose, TraceFrame};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptError {
    #[error("invalid percept configuration: {0}")]
    Config(String),
    #[error("no samples labelled {0}")]
    MissingClass(&'static str),
    #[error("class {class} has {count} samples, need at least {MIN_SAMPLES_PER_CLASS}")]
    InsufficientSamples { class: &'static str, count: usize },
    #[error("covariance is singular after regularisation")]
    DegenerateData,
    #[error("invalid mixture model: {0}")]
    InvalidModel(String),
}

pub const MIN_SAMPLES_PER_CLASS: usize = 10;
const COVARIANCE_REGULARISATION: f64 = 1e-6;
const EM_MAX_ITERATIONS: usize = 200;
const EM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Parametric,
    GaussianMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptConfig {
    pub model: ModelKind,
    /// Metres at which the distance term is one half.
    pub distance_midpoint: f64,
    pub distance_steepness: f64,
    pub facing_weight: f64,
    pub base_uncertainty: f64,
    pub base_rate: f64,
    pub noise_sigma_pos: f64,
    pub noise_sigma_angle: f64,
    pub observation_radius: f64,
}

impl Default for PerceptConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Parametric,
            distance_midpoint: 1.5,
            distance_steepness: 4.0,
            facing_weight: 0.5,
            base_uncertainty: 0.1,
            base_rate: 0.2,
            noise_sigma_pos: 0.0,
            noise_sigma_angle: 0.0,
            observation_radius: 10.0,
        }
    }
}

impl PerceptConfig {
    pub fn validate(&self) -> Result<(), PerceptError> {
        let bad = |what: &str| Err(PerceptError::Config(what.to_owned()));
        if !(self.base_uncertainty > 0.0 && self.base_uncertainty <= 1.0) {
            return bad("base_uncertainty must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.base_rate) {
            return bad("base_rate must lie in [0, 1]");
        }
        if !(self.distance_steepness > 0.0) || !self.distance_midpoint.is_finite() {
            return bad("distance_steepness must be positive and distance_midpoint finite");
        }
        if !(self.facing_weight >= 0.0) {
            return bad("facing_weight must be non-negative");
        }
        if !(self.noise_sigma_pos >= 0.0 && self.noise_sigma_angle >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.observation_radius > 0.0) {
            return bad("observation_radius must be positive");
        }
        Ok(())
    }
}

/// Mutual facing feature in `[0, 1]`.
pub fn facing_feature(a: &Pose, b: &Pose) -> f64 {
    let ab = a.position.bearing_to(b.position);
    let ba = b.position.bearing_to(a.position);
    let phi = ((a.angle - ab).cos() + (b.angle - ba).cos() + 2.0) / 4.0;
    phi.clamp(0.0, 1.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Likelihood that two people at distance `d` with facing feature `phi`
/// interact, under the parametric model.
pub fn parametric_likelihood(config: &PerceptConfig, d: f64, phi: f64) -> f64 {
    let near = sigmoid(config.distance_steepness * (config.distance_midpoint - d));
    near * phi.powf(config.facing_weight)
}

pub fn likelihood_to_opinion(likelihood: f64, u0: f64, base_rate: f64) -> Opinion {
    let l = likelihood.clamp(0.0, 1.0);
    let b = l * (1.0 - u0);
    let d = (1.0 - u0) - b;
    Opinion::new(b, d, u0, base_rate).expect("components sum to one by construction")
}

pub struct Sensor {
    config: PerceptConfig,
    gmm: Option<GmmModel>,
    pos_noise: Option<Normal<f64>>,
    angle_noise: Option<Normal<f64>>,
}

impl Sensor {
    pub fn new(config: PerceptConfig, gmm: Option<GmmModel>) -> Result<Self, PerceptError> {
        config.validate()?;
        if config.model == ModelKind::GaussianMixture && gmm.is_none() {
            return Err(PerceptError::Config("gaussian_mixture model selected without a fitted model".into()));
        }
        let noise = |sigma: f64| (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated"));
        Ok(Self {
            pos_noise: noise(config.noise_sigma_pos),
            angle_noise: noise(config.noise_sigma_angle),
            config,
            gmm,
        })
    }

    pub fn config(&self) -> &PerceptConfig {
        &self.config
    }

    pub fn likelihood(&self, d: f64, phi: f64) -> f64 {
        match (&self.config.model, &self.gmm) {
            (ModelKind::GaussianMixture, Some(g)) => g.posterior(d, phi),
            _ => parametric_likelihood(&self.config, d, phi),
        }
    }

    pub fn opinion(&self, d: f64, phi: f64) -> Opinion {
        likelihood_to_opinion(self.likelihood(d, phi), self.config.base_uncertainty, self.config.base_rate)
    }

    /// Opinions about every pair of people within the observation radius of
    /// `from`, seen through the configured sensor noise. Each person's pose is
    /// perturbed once per call, so both orders of a pair agree.
    pub fn observe(&self, frame: &TraceFrame, from: Point, rng: &mut impl Rng) -> PerceptUpdate {
        let visible: Vec<_> = frame
            .poses
            .iter()
            .filter(|(_, p)| p.position.distance(from) <= self.config.observation_radius)
            .map(|(&id, p)| (id, self.perturb(p, rng)))
            .collect();
        let mut opinions = Vec::new();
        for (k, (i, pi)) in visible.iter().enumerate() {
            for (j, pj) in &visible[k + 1..] {
                let d = pi.position.distance(pj.position);
                let phi = facing_feature(pi, pj);
                opinions.push(PairOpinion {
                    i: *i,
                    j: *j,
                    opinion: self.opinion(d, phi),
                });
            }
        }
        let nearby: BTreeMap<_, _> = visible.iter().map(|(id, p)| (*id, p.position.distance(from))).collect();
        PerceptUpdate { opinions, nearby }
    }

    fn perturb(&self, pose: &Pose, rng: &mut impl Rng) -> Pose {
        let mut out = *pose;
        if let Some(n) = &self.pos_noise {
            out.position = out.position + Point::new(n.sample(rng), n.sample(rng));
        }
        if let Some(n) = &self.angle_noise {
            out.angle = wrap_angle(out.angle + n.sample(rng));
        }
        out
    }
}

/// One labelled training example: distance, facing feature, interacting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub distance: f64,
    pub facing: f64,
    pub social: bool,
}

/// Labelled pair features from a frame and its ground truth. Pairs farther
/// apart than `radius` are skipped.
pub fn labelled_samples(frame: &TraceFrame, truth: &Partition, radius: f64) -> Vec<Sample> {
    let poses: Vec<_> = frame.poses.iter().collect();
    let mut out = Vec::new();
    for (k, (i, pi)) in poses.iter().enumerate() {
        for (j, pj) in &poses[k + 1..] {
            let distance = pi.position.distance(pj.position);
            if distance > radius {
                continue;
            }
            let social = matches!((truth.block_of(**i), truth.block_of(**j)), (Some(a), Some(b)) if a == b);
            out.push(Sample {
                distance,
                facing: facing_feature(pi, pj),
                social,
            });
        }
    }
    out
}

/// Gaussian mixture over the 2-D feature vector `(distance, facing)`.
///
/// JSON layout:
/// ```json
/// {"weights": [0.5, 0.5],
///  "means": [[1.0, 0.9], [2.0, 0.7]],
///  "covariances": [[[0.1, 0.0], [0.0, 0.01]], [[0.2, 0.0], [0.0, 0.02]]]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<[[f64; 2]; 2]>,
}

/// Two-class classifier: `{"prior_social": p, "social": Mixture, "non_social": Mixture}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmModel {
    pub prior_social: f64,
    pub social: Mixture,
    pub non_social: Mixture,
}

fn log_gauss(x: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    let det = a * c - b * b;
    let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
    let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    -0.5 * q - (2.0 * PI).ln() - 0.5 * det.ln()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn positive_definite(cov: &[[f64; 2]; 2]) -> bool {
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    cov.iter().flatten().all(|v| v.is_finite()) && (b - cov[1][0]).abs() <= 1e-12 * (1.0 + b.abs()) && a > 0.0 && a * c - b * b > 0.0
}

impl Mixture {
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((w, m), c)| w.ln() + log_gauss(x, *m, *c))
            .collect();
        log_sum_exp(&terms)
    }

    fn validate(&self) -> Result<(), PerceptError> {
        let bad = |what: &str| Err(PerceptError::InvalidModel(what.to_owned()));
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return bad("weights, means and covariances need the same non-zero length");
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("weights must be positive and sum to one");
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("means must be finite");
        }
        if !self.covariances.iter().all(positive_definite) {
            return bad("covariances must be symmetric positive definite");
        }
        Ok(())
    }

    /// Expectation maximisation with `k` components, seeded initial means.
    pub fn fit(data: &[[f64; 2]], k: usize, seed: u64) -> Result<Self, PerceptError> {
        let n = data.len();
        let k = k.clamp(1, n.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pooled = covariance(data, &vec![1.0; n], mean(data, &vec![1.0; n]));
        let mut mix = Mixture {
            weights: vec![1.0 / k as f64; k],
            means: data.choose_multiple(&mut rng, k).copied().collect(),
            covariances: vec![regularise(pooled); k],
        };
        let mut resp = vec![vec![0.0; k]; n];
        let mut last = f64::NEG_INFINITY;
        for _ in 0..EM_MAX_ITERATIONS {
            let mut ll = 0.0;
            for (x, r) in data.iter().zip(resp.iter_mut()) {
                for c in 0..k {
                    r[c] = mix.weights[c].ln() + log_gauss(*x, mix.means[c], mix.covariances[c]);
                }
                let total = log_sum_exp(r);
                ll += total;
                for v in r.iter_mut() {
                    *v = (*v - total).exp();
                }
            }
            for c in 0..k {
                let w: Vec<f64> = resp.iter().map(|r| r[c]).collect();
                let mass: f64 = w.iter().sum();
                if mass <= f64::MIN_POSITIVE {
                    // collapsed component: reset on the pooled estimate
                    mix.weights[c] = 1e-3;
                    mix.covariances[c] = regularise(pooled);
                    continue;
                }
                mix.weights[c] = mass / n as f64;
                mix.means[c] = mean(data, &w);
                mix.covariances[c] = regularise(covariance(data, &w, mix.means[c]));
            }
            let total: f64 = mix.weights.iter().sum();
            mix.weights.iter_mut().for_each(|w| *w /= total);
            if !mix.covariances.iter().all(positive_definite) || !ll.is_finite() {
                return Err(PerceptError::DegenerateData);
            }
            if (ll - last).abs() <= EM_TOLERANCE * ll.abs().max(1.0) {
                break;
            }
            last = ll;
        }
        Ok(mix)
    }
}

fn mean(data: &[[f64; 2]], w: &[f64]) -> [f64; 2] {
    let total: f64 = w.iter().sum();
    let mut m = [0.0; 2];
    for (x, wi) in data.iter().zip(w) {
        m[0] += wi * x[0];
        m[1] += wi * x[1];
    }
    [m[0] / total, m[1] / total]
}

fn covariance(data: &[[f64; 2]], w: &[f64], m: [f64; 2]) -> [[f64; 2]; 2] {
    let total: f64 = w.iter().sum();
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (x, wi) in data.iter().zip(w) {
        let (dx, dy) = (x[0] - m[0], x[1] - m[1]);
        a += wi * dx * dx;
        b += wi * dx * dy;
        c += wi * dy * dy;
    }
    [[a / total, b / total], [b / total, c / total]]
}

fn regularise(mut cov: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    cov[0][0] += COVARIANCE_REGULARISATION;
    cov[1][1] += COVARIANCE_REGULARISATION;
    cov
}

impl GmmModel {
    /// Fits one mixture per class with `components` components each. Both
    /// classes share the seed.
    pub fn fit(samples: &[Sample], components: usize, seed: u64) -> Result<Self, PerceptError> {
        let split = |social: bool| -> Vec<[f64; 2]> {
            samples
                .iter()
                .filter(|s| s.social == social)
                .map(|s| [s.distance, s.facing])
                .collect()
        };
        let (pos, neg) = (split(true), split(false));
        for (class, data) in [("social", &pos), ("non_social", &neg)] {
            if data.is_empty() {
                return Err(PerceptError::MissingClass(class));
            }
            if data.len() < MIN_SAMPLES_PER_CLASS {
                return Err(PerceptError::InsufficientSamples {
                    class,
                    count: data.len(),
                });
            }
            if data.iter().flatten().any(|v| !v.is_finite()) {
                return Err(PerceptError::DegenerateData);
            }
        }
        Ok(Self {
            prior_social: pos.len() as f64 / (pos.len() + neg.len()) as f64,
            social: Mixture::fit(&pos, components, seed)?,
            non_social: Mixture::fit(&neg, components, seed)?,
        })
    }

    /// Posterior probability of the social class.
    pub fn posterior(&self, distance: f64, facing: f64) -> f64 {
        let x = [distance, facing];
        let s = self.prior_social.ln() + self.social.log_density(x);
        let n = (1.0 - self.prior_social).ln() + self.non_social.log_density(x);
        let p = 1.0 / (1.0 + (n - s).exp());
        if p.is_nan() {
            self.prior_social
        } else {
            p
        }
    }

    pub fn validate(&self) -> Result<(), PerceptError> {
        if !(self.prior_social > 0.0 && self.prior_social < 1.0) {
            return Err(PerceptError::InvalidModel("prior_social must lie in (0, 1)".into()));
        }
        self.social.validate()?;
        self.non_social.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, PerceptError> {
        let model: Self = serde_json::from_str(text).map_err(|e| PerceptError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numeric structure")
    }
}
