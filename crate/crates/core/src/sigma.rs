//! Sharpness-style selection of the smoothing variance.
//!
//! For each `σ²` on an ascending grid, draw `samples` weight perturbations
//! `u ~ N(0, σ² I)`, measure the training accuracy of every `f_{w+u}` and
//! compare the mean with the accuracy of `f_w`. The selected variance is the
//! largest grid value reached before the mean drop first exceeds the
//! tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::rng::{self, Phase};
use crate::smoothing::gaussian_like;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearchConfig {
    /// Candidate variances, ascending.
    pub grid: Vec<f64>,
    /// Perturbed copies per grid point.
    pub samples: usize,
    /// Largest acceptable mean accuracy drop (a fraction, e.g. 0.02).
    pub tolerance: f64,
    /// Training points used to measure accuracy (all if the set is smaller).
    pub eval_subset: usize,
    /// Keep scanning after the first rejection (selection is unchanged;
    /// only the trace grows).
    pub full_scan: bool,
}

impl Default for SigmaSearchConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            samples: 50,
            tolerance: 0.02,
            eval_subset: 2048,
            full_scan: false,
        }
    }
}

/// `0.01, 0.02, …, 1.00`.
pub fn default_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

impl SigmaSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("sigma grid is empty".into()));
        }
        if self.grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("sigma grid values must be > 0".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sigma grid must be strictly ascending".into()));
        }
        if self.samples == 0 || self.eval_subset == 0 {
            return Err(Error::InvalidArgument("samples and eval_subset must be ≥ 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidArgument("tolerance must be in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTracePoint {
    pub sigma2: f64,
    pub mean_drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSelection {
    pub sigma2: f64,
    /// No grid value met the tolerance; `sigma2` is the grid minimum.
    pub flagged: bool,
    pub base_accuracy: f64,
    pub trace: Vec<SigmaTracePoint>,
}

/// Run the search. Deterministic in `stream`; copies are evaluated in
/// parallel on the ambient rayon pool.
pub fn select_sigma(
    model: &MlpModel,
    data: &Dataset,
    cfg: &SigmaSearchConfig,
    stream: u64,
) -> Result<SigmaSelection> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let subset = if data.len() > cfg.eval_subset {
        data.subsample(cfg.eval_subset, rng::sample_seed(stream, 0, Phase::Subsample))?
    } else {
        data.clone()
    };
    let base_accuracy = accuracy(model, &subset);

    let mut trace = Vec::new();
    let mut selected: Option<f64> = None;
    let mut rejected = false;
    for (g, &sigma2) in cfg.grid.iter().enumerate() {
        let sigma = sigma2.sqrt();
        let accs: Vec<f64> = (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(rng::derive_seed(
                    stream,
                    &[g as u64, i as u64, Phase::SigmaSearch as u64],
                ));
                let u = gaussian_like(model, &mut rng);
                model.perturbed(&u, sigma).map(|m| accuracy(&m, &subset))
            })
            .collect::<Result<_>>()?;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let mean_drop = (base_accuracy - mean).max(0.0);
        trace.push(SigmaTracePoint { sigma2, mean_drop });
        if mean_drop <= cfg.tolerance {
            if !rejected {
                selected = Some(sigma2);
            }
        } else {
            rejected = true;
            if !cfg.full_scan {
                break;
            }
        }
    }
    Ok(SigmaSelection {
        sigma2: selected.unwrap_or(cfg.grid[0]),
        flagged: selected.is_none(),
        base_accuracy,
        trace,
    })
}

fn accuracy(model: &MlpModel, data: &Dataset) -> f64 {
    let hits = (0..data.len())
        .filter(|&i| model.predict(data.input(i)).ok() == Some(data.label(i)))
        .count();
    hits as f64 / data.len() as f64
}
