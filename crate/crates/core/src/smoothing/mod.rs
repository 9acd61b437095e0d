//! The smoothed majority-vote classifier.
//!
//! Every vote evaluates the base network with fresh Gaussian noise on both
//! the weights (`u`) and the input (`v`): `argmax_c f_{w+u}(x+v)[c]`.
//!
//! Weight noise can be drawn three ways ([`WeightSampler`]):
//!
//! * `Projected` (default) never materializes `u`. For a layer input `a`
//!   that is independent of `U_l`, `U_l a ~ N(0, σ_w² ‖a‖² I)`, so each
//!   layer draws one Gaussian per output unit. The joint law of the logits
//!   is identical to drawing every `U_l` entrywise, at a fraction of the cost.
//! * `Materialized` draws every entry of every `U_l` for every vote.
//! * `Cached { size }` pre-draws `size` full weight perturbations and picks
//!   one uniformly (with replacement) per vote. This is an approximation and
//!   is off by default.

mod certify;
mod confidence;
mod curve;
mod margin;

pub use certify::{
    certify, certify_dataset, radius_formula, CertifyParams, CertifyResult, SampleCertification,
};
pub(crate) use certify::hellinger_gap;
pub use confidence::lower_conf_bound;
pub use curve::{certified_accuracy_curve, radius_grid, CurvePoint};
pub use margin::empirical_margin_loss;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, norm2, Matrix};
use crate::nn::MlpModel;
use crate::rng::{self, Phase, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSampler {
    #[default]
    Projected,
    Materialized,
    Cached {
        size: usize,
    },
}

/// Noise scales of the smoothed classifier and the root of its seed tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of the input noise `v`.
    pub sigma_input: f64,
    /// Standard deviation of the weight noise `u`.
    pub sigma_weight: f64,
    pub base_seed: u64,
    #[serde(default)]
    pub weight_sampler: WeightSampler,
}

impl NoiseConfig {
    /// Same `σ` for inputs and weights.
    pub fn isotropic(sigma: f64, base_seed: u64) -> Self {
        Self {
            sigma_input: sigma,
            sigma_weight: sigma,
            base_seed,
            weight_sampler: WeightSampler::Projected,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_input", self.sigma_input), ("sigma_weight", self.sigma_weight)] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and ≥ 0, got {s}")));
            }
        }
        if let WeightSampler::Cached { size: 0 } = self.weight_sampler {
            return Err(Error::InvalidArgument("weight-noise cache size must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Stream root for dataset sample `index`.
    pub fn sample_stream(&self, index: usize) -> u64 {
        rng::derive_seed(self.base_seed, &[index as u64])
    }
}

/// Per-class vote tallies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl VoteCounts {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn add(&mut self, class: usize) {
        self.counts[class] += 1;
        self.total += 1;
    }

    /// Most-voted class, lowest index on ties.
    pub fn top(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate().skip(1) {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// A base network together with its smoothing noise.
#[derive(Clone, Debug)]
pub struct SmoothedClassifier<'a> {
    model: &'a MlpModel,
    noise: NoiseConfig,
    cache: Vec<MlpModel>,
}

impl<'a> SmoothedClassifier<'a> {
    pub fn new(model: &'a MlpModel, noise: NoiseConfig) -> Result<Self> {
        noise.validate()?;
        let cache = match noise.weight_sampler {
            WeightSampler::Cached { size } => (0..size)
                .map(|i| {
                    let mut rng = rng::phase_stream(noise.base_seed, i as u64, Phase::WeightCache);
                    let u = gaussian_like(model, &mut rng);
                    model.perturbed(&u, noise.sigma_weight)
                })
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Self { model, noise, cache })
    }

    pub fn model(&self) -> &MlpModel {
        self.model
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.model.input_dim() {
            return Err(Error::Dimension(format!(
                "model takes {} inputs, got {}",
                self.model.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Logits of one noisy draw `f_{w+u}(x+v)`. Input noise is applied to
    /// the real input coordinates only; the bias coordinate stays 1.
    pub fn noisy_logits(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        self.noisy_logits_into(x, rng, &mut Scratch::default()).to_vec()
    }

    /// [`Self::noisy_logits`] without per-draw allocation; draws are
    /// consumed in the same order.
    pub(crate) fn noisy_logits_into<'s>(&self, x: &[f64], rng: &mut Stream, s: &'s mut Scratch) -> &'s [f64] {
        s.a.clear();
        let si = self.noise.sigma_input;
        if si > 0.0 {
            s.a.extend(x.iter().map(|&xi| {
                let z: f64 = StandardNormal.sample(rng);
                xi + si * z
            }));
        } else {
            s.a.extend_from_slice(x);
        }
        if self.model.input_bias() {
            s.a.push(1.0);
        }
        let sw = self.noise.sigma_weight;
        if sw == 0.0 {
            s.z = self.model.forward_unchecked(&s.a);
            return &s.z;
        }
        match self.noise.weight_sampler {
            WeightSampler::Projected => {
                projected_forward(self.model, sw, rng, s);
                &s.a
            }
            WeightSampler::Materialized => {
                s.z = materialized_forward(self.model, std::mem::take(&mut s.a), sw, rng);
                &s.z
            }
            WeightSampler::Cached { .. } => {
                let pick = rng.random_range(0..self.cache.len());
                s.z = self.cache[pick].forward_unchecked(&s.a);
                &s.z
            }
        }
    }

    /// Tally `num` noisy votes using the stream seeded by `stream`.
    pub fn sample_under_noise(&self, x: &[f64], num: u64, stream: u64) -> Result<VoteCounts> {
        self.check_input(x)?;
        if num == 0 {
            return Err(Error::InvalidArgument("num must be ≥ 1".into()));
        }
        let mut rng = rng::stream(stream);
        let mut votes = VoteCounts::new(self.model.num_classes());
        let mut scratch = Scratch::default();
        for _ in 0..num {
            votes.add(argmax(self.noisy_logits_into(x, &mut rng, &mut scratch)));
        }
        Ok(votes)
    }

    /// Majority vote over `num` draws (lowest index on ties).
    pub fn predict(&self, x: &[f64], num: u64, stream: u64) -> Result<usize> {
        Ok(self.sample_under_noise(x, num, stream)?.top())
    }
}

/// Buffers reused across noisy forward passes.
#[derive(Default)]
pub(crate) struct Scratch {
    a: Vec<f64>,
    z: Vec<f64>,
}

/// Forward pass with projected weight noise, from the input in `s.a`;
/// leaves the logits in `s.a`.
fn projected_forward(model: &MlpModel, sw: f64, rng: &mut Stream, s: &mut Scratch) {
    let n = model.num_layers();
    for (l, w) in model.layers().iter().enumerate() {
        let (a, z) = (&mut s.a, &mut s.z);
        let scale = sw * norm2(a);
        z.clear();
        z.extend((0..w.rows()).map(|i| dot(w.row(i), a)));
        if scale > 0.0 {
            for zi in z.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *zi += scale * e;
            }
        }
        if l + 1 < n {
            crate::nn::relu_in_place(z);
        }
        std::mem::swap(a, z);
    }
}

fn materialized_forward(model: &MlpModel, mut a: Vec<f64>, sw: f64, rng: &mut Stream) -> Vec<f64> {
    let n = model.num_layers();
    for (l, w) in model.layers().iter().enumerate() {
        let mut z = Vec::with_capacity(w.rows());
        for i in 0..w.rows() {
            let noise: f64 = a
                .iter()
                .map(|&aj| {
                    let e: f64 = StandardNormal.sample(rng);
                    e * aj
                })
                .sum();
            z.push(dot(w.row(i), &a) + sw * noise);
        }
        if l + 1 < n {
            crate::nn::relu_in_place(&mut z);
        }
        a = z;
    }
    a
}

/// Standard-normal matrices shaped like the model's layers.
pub fn gaussian_like(model: &MlpModel, rng: &mut Stream) -> Vec<Matrix> {
    model
        .layers()
        .iter()
        .map(|w| Matrix::from_fn(w.rows(), w.cols(), |_, _| StandardNormal.sample(rng)))
        .collect()
}

/// Free-function form of [`SmoothedClassifier::sample_under_noise`].
pub fn sample_under_noise(
    model: &MlpModel,
    x: &[f64],
    num: u64,
    noise: &NoiseConfig,
    stream: u64,
) -> Result<VoteCounts> {
    SmoothedClassifier::new(model, *noise)?.sample_under_noise(x, num, stream)
}

/// Free-function form of [`SmoothedClassifier::predict`].
pub fn majority_vote_predict(
    model: &MlpModel,
    x: &[f64],
    num: u64,
    noise: &NoiseConfig,
    stream: u64,
) -> Result<usize> {
    SmoothedClassifier::new(model, *noise)?.predict(x, num, stream)
}
