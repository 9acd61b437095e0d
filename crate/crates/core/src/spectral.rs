//! Spectral-norm machinery and the correlation regularizer.
//!
//! The regularizer works on the collapsed matrix `W = W_n ⋯ W_1` of the
//! network with every ReLU removed. For spherical Gaussian input noise the
//! Pearson correlation between two outputs of that linear network equals the
//! cosine between the corresponding rows of `W`, so the correlation matrix is
//! computed in closed form from the row Gram matrix rather than by sampling.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::nn::{Gradients, MlpModel};
use crate::rng::{self, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 10_000,
            seed: 0,
        }
    }
}

/// Outcome of a power iteration, with convergence diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `mᵀm`.
///
/// Stops when the estimate changes by less than `tol` relative. If
/// `max_iters` is reached first the best estimate is returned with
/// `converged = false`.
pub fn power_iteration(m: &Matrix, cfg: &PowerIterationConfig) -> Result<SpectralEstimate> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("power iteration tol must be > 0".into()));
    }
    if m.entries().iter().all(|&v| v == 0.0) {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut rng = rng::phase_stream(cfg.seed, 0, Phase::PowerIteration);
    let mut v: Vec<f64> = (0..m.cols()).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for it in 1..=cfg.max_iters {
        let mv = m.matvec(&v);
        let mut next = m.transposed_matvec(&mv);
        // ‖m v‖² = vᵀ mᵀm v; the Rayleigh quotient converges quadratically.
        let value = norm2(&mv);
        let n = norm2(&next);
        if n == 0.0 {
            // Start vector in the null space; reseed deterministically.
            v = (0..m.cols()).map(|i| if i == it % m.cols() { 1.0 } else { 0.0 }).collect();
            continue;
        }
        next.iter_mut().for_each(|x| *x /= n);
        v = next;
        if it > 1 && (value - estimate).abs() <= cfg.tol * value {
            return Ok(SpectralEstimate {
                value: value.max(estimate),
                iterations: it,
                converged: true,
            });
        }
        estimate = value;
    }
    Ok(SpectralEstimate {
        value: estimate,
        iterations: cfg.max_iters,
        converged: false,
    })
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `‖m‖₂` with the default power-iteration settings.
pub fn spectral_norm(m: &Matrix) -> f64 {
    power_iteration(m, &PowerIterationConfig::default())
        .map(|e| e.value)
        .unwrap_or(f64::NAN)
}

/// `W = W_n ⋯ W_1`, shape `k × d`.
pub fn collapsed_weight(model: &MlpModel) -> Matrix {
    let layers = model.layers();
    let mut acc = layers[layers.len() - 1].clone();
    for w in layers[..layers.len() - 1].iter().rev() {
        acc = acc.matmul(w).expect("model layers chain");
    }
    acc
}

/// `‖m mᵀ‖_∞ = max_i Σ_j |⟨m_i, m_j⟩|`, an upper bound on `‖m‖₂²`.
pub fn gershgorin_bound(m: &Matrix) -> f64 {
    m.gram().inf_norm()
}

/// Sum of absolute entries.
pub fn l11_norm(m: &Matrix) -> f64 {
    m.entries().iter().map(|v| v.abs()).sum()
}

/// Cosine-similarity matrix of the rows of `m`, plus the indices of zero
/// rows. A zero row gets 1 on the diagonal and 0 elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineMatrix {
    pub matrix: Matrix,
    pub zero_rows: Vec<usize>,
}

pub fn row_cosines(m: &Matrix) -> CosineMatrix {
    cosines_from_gram(&m.gram())
}

fn cosines_from_gram(g: &Matrix) -> CosineMatrix {
    let k = g.rows();
    let norms: Vec<f64> = (0..k).map(|i| g.get(i, i).sqrt()).collect();
    let zero_rows: Vec<usize> = (0..k).filter(|&i| norms[i] == 0.0).collect();
    let matrix = Matrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            (g.get(i, j) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    });
    CosineMatrix { matrix, zero_rows }
}

/// Correlation matrix of the linearized network's outputs under spherical
/// Gaussian input noise, i.e. the row cosines of [`collapsed_weight`].
pub fn correlation_matrix(model: &MlpModel) -> CosineMatrix {
    row_cosines(&collapsed_weight(model))
}

/// Value and exact gradient of `‖R‖_{1,1}`.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub value: f64,
    pub grads: Gradients,
    /// Collapsed rows that are identically zero; they contribute no gradient.
    pub zero_rows: Vec<usize>,
}

/// `‖correlation_matrix(model)‖_{1,1}` and its gradient with respect to
/// every layer.
///
/// With `G = W Wᵀ` and `c_ij = G_ij / √(G_ii G_jj)`, the value is
/// `k + Σ_{i≠j} |c_ij|`, and `dV = Σ A_ij dG_ij` where
/// `A_ij = s_ij / √(G_ii G_jj)` off the diagonal (`s` = sign, 0 at 0) and
/// `A_ii = -Σ_{j≠i} |c_ij| / G_ii`. Then `∂V/∂W = 2 A W`, pulled back to
/// layer `l` as `Lᵀ (2 A W) Rᵀ` with `L = W_n ⋯ W_{l+1}`, `R = W_{l-1} ⋯ W_1`.
pub fn regularizer_and_gradient(model: &MlpModel) -> Regularizer {
    let layers = model.layers();
    let n = layers.len();
    let collapsed = collapsed_weight(model);
    let g = collapsed.gram();
    let k = g.rows();
    let cos = cosines_from_gram(&g);
    let value = l11_norm(&cos.matrix);

    let mut a = Matrix::zeros(k, k);
    for i in 0..k {
        let gii = g.get(i, i);
        if gii == 0.0 {
            continue;
        }
        let mut diag = 0.0;
        for j in 0..k {
            if j == i || g.get(j, j) == 0.0 {
                continue;
            }
            let c = cos.matrix.get(i, j);
            let s = if c > 0.0 {
                1.0
            } else if c < 0.0 {
                -1.0
            } else {
                0.0
            };
            a.set(i, j, s / (gii * g.get(j, j)).sqrt());
            diag -= c.abs() / gii;
        }
        a.set(i, i, diag);
    }
    let d_collapsed = a.matmul(&collapsed).expect("k×k by k×d").scaled(2.0);

    // right[l] = W_{l-1} ⋯ W_1 (None for the first layer).
    let mut right: Vec<Option<Matrix>> = Vec::with_capacity(n);
    right.push(None);
    for l in 1..n {
        let next = match &right[l - 1] {
            None => layers[0].clone(),
            Some(r) => layers[l - 1].matmul(r).expect("chain"),
        };
        right.push(Some(next));
    }
    // left[l] = W_n ⋯ W_{l+1} (None for the last layer).
    let mut left: Vec<Option<Matrix>> = vec![None; n];
    for l in (0..n - 1).rev() {
        left[l] = Some(match &left[l + 1] {
            None => layers[n - 1].clone(),
            Some(lm) => lm.matmul(&layers[l + 1]).expect("chain"),
        });
    }

    let grads = (0..n)
        .map(|l| {
            // D Rᵀ first: k × dims[l].
            let dr = match &right[l] {
                None => d_collapsed.clone(),
                Some(r) => d_collapsed.matmul_transposed(r).expect("k×d by d×h"),
            };
            match &left[l] {
                None => dr,
                Some(lm) => lm.transposed_matmul(&dr).expect("h×k by k×h"),
            }
        })
        .collect();

    Regularizer {
        value,
        grads: Gradients { layers: grads },
        zero_rows: cos.zero_rows,
    }
}

/// Norm summary of a model; serializes with these exact field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub per_layer_spectral: Vec<f64>,
    pub per_layer_frobenius: Vec<f64>,
    pub product_spectral: f64,
    pub collapsed_spectral: f64,
    pub gershgorin: f64,
    pub cosine_matrix: Matrix,
}

impl SpectralReport {
    /// Mean of `|cos|` over off-diagonal entries.
    pub fn mean_offdiag_abs_cosine(&self) -> f64 {
        mean_offdiag_abs(&self.cosine_matrix)
    }
}

pub fn mean_offdiag_abs(m: &Matrix) -> f64 {
    let k = m.rows();
    if k < 2 {
        return 0.0;
    }
    let total: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m.get(i, j).abs())
        .sum();
    total / (k * (k - 1)) as f64
}

pub fn spectral_report(model: &MlpModel) -> SpectralReport {
    let per_layer_spectral: Vec<f64> = model.layers().iter().map(spectral_norm).collect();
    let per_layer_frobenius = model.layers().iter().map(Matrix::frobenius_norm).collect();
    let collapsed = collapsed_weight(model);
    SpectralReport {
        product_spectral: per_layer_spectral.iter().product(),
        per_layer_spectral,
        per_layer_frobenius,
        collapsed_spectral: spectral_norm(&collapsed),
        gershgorin: gershgorin_bound(&collapsed),
        cosine_matrix: row_cosines(&collapsed).matrix,
    }
}

/// Cosine between two vectors (0 if either is zero).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm2(a) * norm2(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}
