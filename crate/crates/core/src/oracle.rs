//! Brute-force reference computations used to validate the fast paths.
//!
//! None of these share numeric kernels with the code they check: the
//! eigensolver, the binomial tail and the correlation sampler are written
//! from scratch on plain slices, and the attack only calls the public
//! voting API.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::MlpModel;
use crate::rng::{self, Phase};
use crate::smoothing::{NoiseConfig, SmoothedClassifier};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted in
/// descending order. Iterates until the off-diagonal Frobenius norm is below
/// `1e-12` (relative to the matrix norm when that exceeds 1).
#[allow(clippy::needless_range_loop)] // rotations read clearest with explicit indices
pub fn jacobi_eigs(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Dimension(format!("Jacobi needs a square matrix, got {:?}", m.shape())));
    }
    let scale = m.entries().iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument("Jacobi needs a symmetric matrix".into()));
            }
        }
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let off = |a: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for (i, row) in a.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    s += v * v;
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) >= 1e-12 * scale {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::NonFinite("Jacobi did not converge in 100 sweeps".into()));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `P[Bin(n, p) ≥ k]` by direct summation of the probability mass function
/// (`n ≤ 1000`).
pub fn binomial_tail(k: u64, n: u64, p: f64) -> Result<f64> {
    if n > 1000 {
        return Err(Error::InvalidArgument(format!("binomial_tail supports n ≤ 1000, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must be in [0,1], got {p}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k > n {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    // Unnormalized pmf by the ratio recurrence outward from the mode, then
    // normalized by the compensated total. Avoids log-factorials, whose ulp
    // near n = 1000 is already ~1e-12.
    let n_ = n as usize;
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n_);
    let odds = p / (1.0 - p);
    let mut w = vec![0.0; n_ + 1];
    w[mode] = 1.0;
    for j in mode..n_ {
        w[j + 1] = w[j] * (n_ - j) as f64 / (j + 1) as f64 * odds;
    }
    for j in (1..=mode).rev() {
        w[j - 1] = w[j] * j as f64 / (n_ - j + 1) as f64 / odds;
    }
    let mut total = CompensatedSum::default();
    let mut tail = CompensatedSum::default();
    for (j, &v) in w.iter().enumerate() {
        total.add(v);
        if j as u64 >= k {
            tail.add(v);
        }
    }
    Ok((tail.value() / total.value()).min(1.0))
}

/// Sample Pearson correlations of the linearized outputs `W(x + v)`,
/// `v ~ N(0, σ² I)` on the full model input (bias coordinate included),
/// over `n_samples` draws.
pub fn mc_correlation(model: &MlpModel, x: &[f64], n_samples: usize, sigma: f64, stream: u64) -> Result<Matrix> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be > 0".into()));
    }
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!("model takes {} inputs, got {}", model.input_dim(), x.len())));
    }
    // Collapse the layers with plain loops: w = W_n ⋯ W_1.
    let first = model.layer(0);
    let mut w: Vec<Vec<f64>> = (0..first.rows()).map(|i| first.row(i).to_vec()).collect();
    for layer in &model.layers()[1..] {
        let d = w[0].len();
        w = (0..layer.rows())
            .map(|i| {
                let mut row = vec![0.0; d];
                for (t, wt) in w.iter().enumerate() {
                    let c = layer.get(i, t);
                    for (r, v) in row.iter_mut().zip(wt) {
                        *r += c * v;
                    }
                }
                row
            })
            .collect();
    }
    let k = w.len();
    let mut base = x.to_vec();
    if model.input_bias() {
        base.push(1.0);
    }
    let mut rng = rng::phase_stream(stream, 0, Phase::Correlation);
    let mut input = vec![0.0; base.len()];
    let mut y = vec![0.0; k];
    let mut mean = vec![0.0; k];
    let mut comoment = vec![vec![0.0; k]; k];
    for s in 0..n_samples {
        for (inp, &b) in input.iter_mut().zip(&base) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *inp = b + sigma * z;
        }
        for (yi, row) in y.iter_mut().zip(&w) {
            *yi = row.iter().zip(&input).map(|(a, b)| a * b).sum();
        }
        // Welford update of means and co-moments.
        let cnt = (s + 1) as f64;
        let delta: Vec<f64> = y.iter().zip(&mean).map(|(a, m)| a - m).collect();
        for (m, d) in mean.iter_mut().zip(&delta) {
            *m += d / cnt;
        }
        for i in 0..k {
            for j in 0..k {
                comoment[i][j] += delta[i] * (y[j] - mean[j]);
            }
        }
    }
    Ok(Matrix::from_fn(k, k, |i, j| {
        let denom = (comoment[i][i] * comoment[j][j]).sqrt();
        if i == j {
            1.0
        } else if denom == 0.0 {
            0.0
        } else {
            comoment[i][j] / denom
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Probes stay within `budget_scale · R`.
    pub budget_scale: f64,
    /// Lattice points per axis (the ball's boundary gets `4 · density`
    /// extra probes).
    pub grid_density: usize,
    pub votes_per_probe: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget_scale: 0.95,
            grid_density: 50,
            votes_per_probe: 100_000,
        }
    }
}

/// Outcome of a grid attack on one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub sample_id: usize,
    pub radius: f64,
    /// Largest perturbation norm probed.
    pub budget: f64,
    pub probes: usize,
    pub votes_per_probe: u64,
    /// Majority vote at the unperturbed input.
    pub reference_class: usize,
    /// Probes whose majority vote differs from `reference_class`.
    pub flips: usize,
    /// The probe with the smallest share of reference votes.
    pub worst_perturbation: Vec<f64>,
    pub worst_norm: f64,
    pub worst_reference_share: f64,
    pub worst_flipped: bool,
}

/// Probe every lattice point (and a ring of boundary points) in the ball of
/// radius `budget_scale · radius` around `x`, estimating the majority vote
/// at each with `votes_per_probe` draws. Only inputs of dimension ≤ 3 are
/// supported.
pub fn grid_attack(
    model: &MlpModel,
    sample_id: usize,
    x: &[f64],
    radius: f64,
    noise: &NoiseConfig,
    cfg: &AttackConfig,
    stream: u64,
) -> Result<AttackReport> {
    let d = x.len();
    if d > 3 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive grids need input dim ≤ 3, got {d}; use random directions instead"
        )));
    }
    if !(radius >= 0.0 && radius.is_finite()) || !(cfg.budget_scale > 0.0) {
        return Err(Error::InvalidArgument("radius and budget scale must be finite and ≥ 0".into()));
    }
    if cfg.votes_per_probe == 0 || cfg.grid_density < 2 {
        return Err(Error::InvalidArgument("need ≥ 1 vote per probe and grid density ≥ 2".into()));
    }
    let clf = SmoothedClassifier::new(model, *noise)?;
    let budget = cfg.budget_scale * radius;
    let votes = cfg.votes_per_probe;
    let reference = clf.sample_under_noise(x, votes, rng::sample_seed(stream, u64::MAX, Phase::Attack))?;
    let reference_class = reference.top();

    let mut probes: Vec<Vec<f64>> = Vec::new();
    if budget > 0.0 {
        let g = cfg.grid_density;
        let axis: Vec<f64> = (0..g).map(|i| -budget + 2.0 * budget * i as f64 / (g - 1) as f64).collect();
        let total = g.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let eps: Vec<f64> = (0..d)
                .map(|_| {
                    let v = axis[rem % g];
                    rem /= g;
                    v
                })
                .collect();
            if eps.iter().map(|v| v * v).sum::<f64>().sqrt() <= budget {
                probes.push(eps);
            }
        }
        if d == 2 {
            for i in 0..4 * g {
                let t = std::f64::consts::TAU * i as f64 / (4 * g) as f64;
                probes.push(vec![budget * t.cos(), budget * t.sin()]);
            }
        } else if d == 1 {
            probes.push(vec![budget]);
            probes.push(vec![-budget]);
        }
    }

    let results: Vec<(usize, f64)> = probes
        .par_iter()
        .enumerate()
        .map(|(i, eps)| {
            let shifted: Vec<f64> = x.iter().zip(eps).map(|(a, b)| a + b).collect();
            let counts = clf.sample_under_noise(&shifted, votes, rng::sample_seed(stream, i as u64, Phase::Attack))?;
            Ok((counts.top(), counts.counts[reference_class] as f64 / votes as f64))
        })
        .collect::<Result<_>>()?;

    let flips = results.iter().filter(|(c, _)| *c != reference_class).count();
    let worst = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i);
    let (worst_perturbation, worst_reference_share, worst_flipped) = match worst {
        Some(i) => (probes[i].clone(), results[i].1, results[i].0 != reference_class),
        None => (vec![0.0; d], reference.counts[reference_class] as f64 / votes as f64, false),
    };
    Ok(AttackReport {
        sample_id,
        radius,
        budget,
        probes: probes.len(),
        votes_per_probe: votes,
        reference_class,
        flips,
        worst_norm: worst_perturbation.iter().map(|v| v * v).sum::<f64>().sqrt(),
        worst_perturbation,
        worst_reference_share,
        worst_flipped,
    })
}
