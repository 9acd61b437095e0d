//! Numerical evaluation of the PAC-Bayes margin bound and the model-dependent
//! certified radius.
//!
//! Quantities, for an `n`-layer network of width `h` on inputs of dimension
//! `d` with `‖x‖₂ ≤ B`:
//!
//! * `τ` solves `F_{χ²_d}(τ) = √2/2`.
//! * `Ψ = (√(a + B²/4τ) − B/(2√τ))²` with
//!   `a = γ / (2⁸ n √(h ln 8nh) √τ ∏‖W_i‖₂^{(n−1)/n})`. It plays the role of
//!   the posterior variance `σ²`.
//! * `Φ = Σ ‖W_i‖_F²/‖W_i‖₂² · (∏‖W_i‖₂²)^{1/n} / Ψ`.
//! * `KL ≤ Σ ‖W_i‖_F² / (2Ψ)`.
//! * bound `= L̂_γ + 4 √((KL + ln(6m/δ)) / (m − 1))`.
//! * `ε_x = −ln(1 − (√p_A − √p_B)²) · 2Ψ`; `√ε_x` is the radius.
//!
//! `Ψ` is a difference of nearly equal square roots when `a ≪ B²/4τ`, which
//! is the usual regime. It is evaluated in the rationalized form
//! `(a / (√(a+b) + √b))²`, which is algebraically identical and free of
//! cancellation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::nn::MlpModel;
use crate::smoothing::hellinger_gap;
use crate::special::gamma_p;
use crate::spectral::{spectral_report, SpectralReport};

/// `F_{χ²_d}(x) = P(d/2, x/2)`.
pub fn chi2_cdf(x: f64, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("chi-square needs d ≥ 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("chi-square argument must be ≥ 0, got {x}")));
    }
    Ok(gamma_p(0.5 * d as f64, 0.5 * x))
}

/// The `τ` with `F_{χ²_d}(τ) = √2/2`, by bisection.
pub fn tau_solve(d: usize) -> Result<f64> {
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let mut lo = 0.0f64;
    let mut hi = d.max(1) as f64 + 4.0;
    while chi2_cdf(hi, d)? < target {
        lo = hi;
        hi *= 2.0;
    }
    // Run to the resolution of f64; the residual is then bounded by the
    // accuracy of the CDF itself.
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(mid, d)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (chi2_cdf(lo, d)?, chi2_cdf(hi, d)?);
    let tau = if (target - flo).abs() <= (fhi - target).abs() { lo } else { hi };
    let residual = (chi2_cdf(tau, d)? - target).abs();
    if residual >= 1e-10 {
        return Err(Error::NonFinite(format!("tau_solve residual {residual:e} at d={d}")));
    }
    Ok(tau)
}

/// Everything the bound formulas need to know about a model and its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma: f64,
    pub delta: f64,
    /// Training-set size.
    pub m: usize,
    /// Largest input norm (after bias augmentation).
    pub b: f64,
    /// Layer count.
    pub n: usize,
    /// Width.
    pub h: usize,
    /// Input dimension (after bias augmentation).
    pub d: usize,
    pub per_layer_spectral: Vec<f64>,
    pub per_layer_frobenius: Vec<f64>,
}

impl BoundInputs {
    /// Read `n`, `h`, `d` and the layer norms off `model`, and `m`, `B` off
    /// `data` (bias coordinate included in both `d` and `B`).
    pub fn from_model(model: &MlpModel, data: &Dataset, gamma: f64, delta: f64) -> Result<Self> {
        Self::from_report(model, &spectral_report(model), data, gamma, delta)
    }

    pub fn from_report(
        model: &MlpModel,
        report: &SpectralReport,
        data: &Dataset,
        gamma: f64,
        delta: f64,
    ) -> Result<Self> {
        if data.dim() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "data has {} features, model takes {}",
                data.dim(),
                model.input_dim()
            )));
        }
        let b = (0..data.len())
            .map(|i| norm2(&model.augment(data.input(i))))
            .fold(0.0, f64::max);
        let inputs = Self {
            gamma,
            delta,
            m: data.len(),
            b,
            n: model.num_layers(),
            h: model.max_width(),
            d: model.dims()[0],
            per_layer_spectral: report.per_layer_spectral.clone(),
            per_layer_frobenius: report.per_layer_frobenius.clone(),
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be > 0");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must be in (0,1)");
        }
        if self.m < 2 {
            return bad("m must be ≥ 2");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad("B must be > 0");
        }
        if self.n == 0 || self.h == 0 || self.d == 0 {
            return bad("n, h, d must be ≥ 1");
        }
        if self.per_layer_spectral.len() != self.n || self.per_layer_frobenius.len() != self.n {
            return bad("need one spectral and one Frobenius norm per layer");
        }
        if self.per_layer_spectral.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("spectral norms must be > 0");
        }
        if self.per_layer_frobenius.iter().any(|&f| !(f >= 0.0 && f.is_finite())) {
            return bad("Frobenius norms must be ≥ 0");
        }
        Ok(())
    }

    fn log_spectral_sum(&self) -> f64 {
        self.per_layer_spectral.iter().map(|s| s.ln()).sum()
    }
}

/// `Ψ` for the given `τ`; see the module docs.
pub fn psi(inputs: &BoundInputs, tau: f64) -> Result<f64> {
    inputs.validate()?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    let n = inputs.n as f64;
    let h = inputs.h as f64;
    let prod = ((n - 1.0) / n * inputs.log_spectral_sum()).exp();
    let a = inputs.gamma / (256.0 * n * (h * (8.0 * n * h).ln()).sqrt() * tau.sqrt() * prod);
    let b = inputs.b * inputs.b / (4.0 * tau);
    let root_gap = a / ((a + b).sqrt() + b.sqrt());
    Ok((root_gap * root_gap).max(0.0))
}

/// `Φ`; `+∞` when `Ψ = 0`.
pub fn phi(inputs: &BoundInputs, psi_value: f64) -> Result<f64> {
    inputs.validate()?;
    if !(psi_value >= 0.0) {
        return Err(Error::InvalidArgument(format!("psi must be ≥ 0, got {psi_value}")));
    }
    if psi_value == 0.0 {
        return Ok(f64::INFINITY);
    }
    let ratio: f64 = inputs
        .per_layer_frobenius
        .iter()
        .zip(&inputs.per_layer_spectral)
        .map(|(f, s)| (f / s) * (f / s))
        .sum();
    let geo = (2.0 / inputs.n as f64 * inputs.log_spectral_sum()).exp();
    Ok(ratio * geo / psi_value)
}

/// `Σ ‖W_i‖_F² / (2Ψ)`; `+∞` when `Ψ = 0` and the weights are nonzero.
pub fn kl_term(per_layer_frobenius: &[f64], psi_value: f64) -> Result<f64> {
    if !(psi_value >= 0.0) {
        return Err(Error::InvalidArgument(format!("psi must be ≥ 0, got {psi_value}")));
    }
    let sq: f64 = per_layer_frobenius.iter().map(|f| f * f).sum();
    if sq == 0.0 {
        return Ok(0.0);
    }
    Ok(sq / (2.0 * psi_value))
}

/// `L̂ + 4 √((KL + ln(6m/δ)) / (m − 1))`.
pub fn generalization_bound(empirical_margin_loss: f64, kl: f64, m: usize, delta: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidArgument("m must be ≥ 2".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("delta must be in (0,1)".into()));
    }
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument(format!("KL must be ≥ 0, got {kl}")));
    }
    let m = m as f64;
    Ok(empirical_margin_loss + 4.0 * ((kl + (6.0 * m / delta).ln()) / (m - 1.0)).sqrt())
}

/// `−ln(1 − (√p_A − √p_B)²) · 2Ψ`, with `p_A` clamped below 1 as in
/// [`radius_formula`](crate::smoothing::radius_formula).
pub fn eps_x(pa: f64, pb: f64, psi_value: f64) -> Result<f64> {
    let t = hellinger_gap(pa, pb)?;
    if !(psi_value >= 0.0) {
        return Err(Error::InvalidArgument(format!("psi must be ≥ 0, got {psi_value}")));
    }
    Ok(-(-t).ln_1p() * 2.0 * psi_value)
}

/// All evaluated quantities together with the inputs that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tau: f64,
    pub psi: f64,
    /// `None` when `Ψ = 0` (the bound is then vacuous).
    pub phi: Option<f64>,
    pub kl_term: Option<f64>,
    pub empirical_margin_loss: f64,
    pub bound_value: Option<f64>,
    pub eps_x: Option<f64>,
    pub radius: Option<f64>,
    /// Bound value ≥ 1 (or undefined).
    pub vacuous: bool,
    pub inputs: BoundInputs,
}

/// Evaluate every quantity. `probabilities` are `(p_A, p_B)` for `ε_x`.
pub fn evaluate(
    inputs: &BoundInputs,
    empirical_margin_loss: f64,
    probabilities: Option<(f64, f64)>,
) -> Result<BoundReport> {
    inputs.validate()?;
    if !(0.0..=1.0).contains(&empirical_margin_loss) {
        return Err(Error::InvalidArgument(format!(
            "empirical margin loss must be in [0,1], got {empirical_margin_loss}"
        )));
    }
    let tau = tau_solve(inputs.d)?;
    let psi_value = psi(inputs, tau)?;
    let finite = |v: f64| v.is_finite().then_some(v);
    let phi_value = finite(phi(inputs, psi_value)?);
    let kl = finite(kl_term(&inputs.per_layer_frobenius, psi_value)?);
    let bound_value = match kl {
        Some(kl) => Some(generalization_bound(empirical_margin_loss, kl, inputs.m, inputs.delta)?),
        None => None,
    };
    let eps = match probabilities {
        Some((pa, pb)) => Some(eps_x(pa, pb, psi_value)?),
        None => None,
    };
    Ok(BoundReport {
        tau,
        psi: psi_value,
        phi: phi_value,
        kl_term: kl,
        empirical_margin_loss,
        vacuous: bound_value.is_none_or(|b| b >= 1.0),
        bound_value,
        radius: eps.map(f64::sqrt),
        eps_x: eps,
        inputs: inputs.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::radius_formula;

    fn inputs(spectral: Vec<f64>, frobenius: Vec<f64>) -> BoundInputs {
        BoundInputs {
            gamma: 1.0,
            delta: 0.05,
            m: 10_000,
            b: 1.0,
            n: spectral.len(),
            h: 32,
            d: 785,
            per_layer_spectral: spectral,
            per_layer_frobenius: frobenius,
        }
    }

    #[test]
    fn chi2_cdf_closed_forms() {
        assert_eq!(chi2_cdf(0.0, 3).unwrap(), 0.0);
        for i in 0..200 {
            let x = i as f64 * 0.25;
            let expect = -(-x / 2.0).exp_m1();
            assert!((chi2_cdf(x, 2).unwrap() - expect).abs() < 1e-12, "x={x}");
        }
        assert!((chi2_cdf(2.0 * 2f64.ln(), 2).unwrap() - 0.5).abs() < 1e-14);
        // 2Φ(1) − 1 = erf(1/√2)
        assert!((chi2_cdf(1.0, 1).unwrap() - 0.682_689_492_137_085_9).abs() < 1e-12);
    }

    #[test]
    fn chi2_cdf_is_monotone_and_below_one() {
        for d in [1usize, 5, 100] {
            let mut prev = 0.0;
            for i in 0..400 {
                let v = chi2_cdf(i as f64 * d as f64 / 100.0, d).unwrap();
                assert!(v >= prev && v <= 1.0);
                prev = v;
            }
        }
    }

    #[test]
    fn tau_closed_forms_and_residuals() {
        let target = std::f64::consts::FRAC_1_SQRT_2;
        let t2 = tau_solve(2).unwrap();
        assert!((t2 - (-2.0 * (1.0 - target).ln())).abs() < 1e-10);
        assert!((t2 - 2.45589).abs() < 1e-5);
        // d = 1: Φ(√τ) = (1 + √2/2)/2, via an independent normal quantile.
        let z = statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::Normal::standard(),
            (1.0 + target) / 2.0,
        );
        assert!((tau_solve(1).unwrap() - z * z).abs() < 1e-9);
        assert!((tau_solve(1).unwrap() - 1.106_274_531).abs() < 1e-9);
        for d in (1..=16).chain([100, 784, 3072]) {
            let t = tau_solve(d).unwrap();
            assert!((chi2_cdf(t, d).unwrap() - target).abs() < 1e-10, "d={d}");
        }
    }

    #[test]
    fn psi_vanishes_as_gamma_shrinks() {
        let mut inp = inputs(vec![1.0; 3], vec![2.0; 3]);
        let tau = tau_solve(inp.d).unwrap();
        let mut prev = f64::INFINITY;
        for g in [1.0, 1e-2, 1e-4, 1e-8] {
            inp.gamma = g;
            let p = psi(&inp, tau).unwrap();
            assert!(p < prev && p >= 0.0);
            prev = p;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn psi_decreases_and_phi_increases_in_spectral_norms() {
        let tau = tau_solve(785).unwrap();
        for layer in 0..3 {
            let mut prev_psi = f64::INFINITY;
            let mut prev_phi = 0.0;
            for i in 0..30 {
                let mut s = vec![1.5, 2.0, 0.8];
                s[layer] *= 1.0 + 0.2 * i as f64;
                // Keep ‖W‖_F / ‖W‖₂ fixed so only the product moves Φ.
                let f: Vec<f64> = s.iter().map(|v| 3.0 * v).collect();
                let inp = inputs(s, f);
                let p = psi(&inp, tau).unwrap();
                let ph = phi(&inp, p).unwrap();
                assert!(p < prev_psi, "layer {layer} step {i}");
                assert!(ph > prev_phi, "layer {layer} step {i}");
                prev_psi = p;
                prev_phi = ph;
            }
        }
    }

    #[test]
    fn phi_numerator_identity_and_frobenius_monotonicity() {
        let inp = inputs(vec![2.0; 3], vec![2.0 * 5f64.sqrt(); 3]);
        // (∏‖W‖²)^{1/n} = 4, numerator = n·r = 15.
        let p = phi(&inp, 1.0).unwrap();
        assert!((p - 15.0 * 4.0).abs() < 1e-12);
        let bigger = inputs(vec![2.0; 3], vec![2.0 * 5f64.sqrt(), 5.0, 2.0 * 5f64.sqrt()]);
        assert!(phi(&bigger, 1.0).unwrap() > p);
        assert_eq!(phi(&inp, 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn kl_term_examples() {
        assert_eq!(kl_term(&[0.0, 0.0], 0.3).unwrap(), 0.0);
        assert!((kl_term(&[1.0, 1.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        let a = kl_term(&[1.0, 2.0], 0.7).unwrap();
        let b = kl_term(&[2.0, 4.0], 0.7).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn generalization_bound_examples() {
        let v = 0.1 + 4.0 * ((0.5 + (12.0f64 / 0.5).ln()) / 1.0).sqrt();
        assert!((generalization_bound(0.1, 0.5, 2, 0.5).unwrap() - v).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for m in [10usize, 100, 1000, 10_000] {
            let b = generalization_bound(0.2, 5.0, m, 0.05).unwrap();
            assert!(b < prev && b >= 0.2);
            prev = b;
        }
    }

    #[test]
    fn eps_x_matches_radius_when_psi_is_sigma_squared() {
        for i in 0..=20 {
            for j in 0..=i {
                let pa = 0.5 + 0.5 * i as f64 / 20.0;
                let pb = (1.0 - pa) * j as f64 / 20.0;
                for sigma in [0.1, 0.5, 1.3] {
                    let e = eps_x(pa, pb, sigma * sigma).unwrap().sqrt();
                    let r = radius_formula(pa, pb, sigma).unwrap();
                    assert!((e - r).abs() <= 1e-12 * r.max(1.0));
                }
            }
        }
    }

    #[test]
    fn eps_x_examples_and_factorization() {
        assert_eq!(eps_x(0.4, 0.4, 0.5).unwrap(), 0.0);
        let e = eps_x(0.75, 0.25, 0.5).unwrap();
        assert!((e - (4.0f64 / 3.0).ln() / 2.0).abs() < 1e-15);
        assert!((e - 0.143_841).abs() < 1e-6);
        let base = eps_x(0.9, 0.05, 1.0).unwrap() / 2.0;
        for psi_value in [0.01, 0.3, 7.0] {
            let r = eps_x(0.9, 0.05, psi_value).unwrap() / (2.0 * psi_value);
            assert!((r - base).abs() < 1e-14);
        }
        assert!(eps_x(0.2, 0.3, 1.0).is_err());
    }

    #[test]
    fn evaluate_flags_vacuous_bounds() {
        let inp = inputs(vec![3.0, 2.0, 4.0], vec![10.0, 8.0, 6.0]);
        let r = evaluate(&inp, 0.05, Some((0.9, 0.1))).unwrap();
        assert!(r.tau > 0.0 && r.psi > 0.0);
        assert!(r.vacuous);
        assert!(r.bound_value.unwrap() >= r.empirical_margin_loss);
        assert!((r.radius.unwrap() - r.eps_x.unwrap().sqrt()).abs() < 1e-15);
        assert_eq!(r.inputs, inp);
        let mut bad = inp.clone();
        bad.gamma = 0.0;
        assert!(evaluate(&bad, 0.0, None).is_err());
    }
}
