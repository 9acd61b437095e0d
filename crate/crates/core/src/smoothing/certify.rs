use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lower_conf_bound, NoiseConfig, SmoothedClassifier};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::rng::{self, Phase};

/// Largest `p_A` fed to the logarithm; keeps `ln(1 - ·)` finite.
const PA_CLAMP: f64 = 1.0 - 1e-12;

/// Certified ℓ2 radius `√(-2σ² ln(1 - (√p_A - √p_B)²))`.
///
/// `p_A` is clamped to `1 - 1e-12` (and `p_B` to at most the clamped `p_A`),
/// so the result is always finite.
pub fn radius_formula(pa: f64, pb: f64, sigma: f64) -> Result<f64> {
    let t = hellinger_gap(pa, pb)?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be ≥ 0, got {sigma}")));
    }
    Ok((-2.0 * sigma * sigma * (-t).ln_1p()).sqrt())
}

/// `(√p_A - √p_B)²` after validation and clamping.
pub(crate) fn hellinger_gap(pa: f64, pb: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pa) || !(0.0..=1.0).contains(&pb) {
        return Err(Error::InvalidArgument(format!(
            "probabilities must lie in [0,1] (pa={pa}, pb={pb})"
        )));
    }
    if pa < pb {
        return Err(Error::InvalidArgument(format!("need pa ≥ pb (pa={pa}, pb={pb})")));
    }
    let pa = pa.min(PA_CLAMP);
    let pb = pb.min(pa);
    // √pa − √pb without cancellation.
    let diff = (pa - pb) / (pa.sqrt() + pb.sqrt()).max(f64::MIN_POSITIVE);
    Ok(diff * diff)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyParams {
    /// Selection draws.
    pub n0: u64,
    /// Estimation draws.
    pub n: u64,
    pub alpha_b: f64,
}

impl Default for CertifyParams {
    fn default() -> Self {
        Self {
            n0: 100,
            n: 100_000,
            alpha_b: 0.001,
        }
    }
}

/// Outcome of certifying one input. `predicted = None` means abstain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyResult {
    pub predicted: Option<usize>,
    pub pa_lower: f64,
    pub radius: f64,
    pub n_selection: u64,
    pub n_estimation: u64,
    pub alpha_b: f64,
}

impl CertifyResult {
    pub fn abstained(&self) -> bool {
        self.predicted.is_none()
    }
}

impl SmoothedClassifier<'_> {
    /// Guess the top class from `n0` draws, lower-bound its probability
    /// from `n` fresh draws, and certify if that bound exceeds ½. The
    /// runner-up probability is bounded by `1 - p_A`.
    pub fn certify(&self, x: &[f64], params: &CertifyParams, stream: u64) -> Result<CertifyResult> {
        if params.n0 == 0 || params.n == 0 {
            return Err(Error::InvalidArgument("n0 and n must be ≥ 1".into()));
        }
        if !(params.alpha_b > 0.0 && params.alpha_b < 1.0) {
            return Err(Error::InvalidArgument("alpha_b must be in (0,1)".into()));
        }
        let selection = self.sample_under_noise(
            x,
            params.n0,
            rng::sample_seed(stream, 0, Phase::Selection),
        )?;
        let guess = selection.top();
        let estimation = self.sample_under_noise(
            x,
            params.n,
            rng::sample_seed(stream, 0, Phase::Estimation),
        )?;
        let pa_lower = lower_conf_bound(estimation.counts[guess], params.n, 1.0 - params.alpha_b)?;
        let (predicted, radius) = if pa_lower > 0.5 {
            (
                Some(guess),
                radius_formula(pa_lower, 1.0 - pa_lower, self.noise().sigma_input)?,
            )
        } else {
            (None, 0.0)
        };
        Ok(CertifyResult {
            predicted,
            pa_lower,
            radius,
            n_selection: params.n0,
            n_estimation: params.n,
            alpha_b: params.alpha_b,
        })
    }
}

/// Free-function form of [`SmoothedClassifier::certify`].
pub fn certify(
    model: &MlpModel,
    x: &[f64],
    noise: &NoiseConfig,
    params: &CertifyParams,
    stream: u64,
) -> Result<CertifyResult> {
    SmoothedClassifier::new(model, *noise)?.certify(x, params, stream)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCertification {
    pub sample_index: usize,
    pub label: usize,
    pub result: CertifyResult,
}

impl SampleCertification {
    pub fn correct(&self) -> bool {
        self.result.predicted == Some(self.label)
    }
}

/// Certify `indices` of `data` on `workers` threads. Each sample draws from
/// its own stream (`noise.sample_stream(index)`), and results come back
/// sorted by sample index, so the output does not depend on `workers`.
pub fn certify_dataset(
    model: &MlpModel,
    data: &Dataset,
    indices: &[usize],
    noise: &NoiseConfig,
    params: &CertifyParams,
    workers: usize,
) -> Result<Vec<SampleCertification>> {
    let clf = SmoothedClassifier::new(model, *noise)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!(
            "sample index {bad} out of range for {} samples",
            data.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut out: Vec<SampleCertification> = pool.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let result = clf.certify(data.input(i), params, noise.sample_stream(i))?;
                Ok(SampleCertification {
                    sample_index: i,
                    label: data.label(i),
                    result,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    out.sort_by_key(|s| s.sample_index);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn radius_zero_when_probabilities_tie() {
        assert_eq!(radius_formula(0.5, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(radius_formula(0.3, 0.3, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn radius_golden() {
        // √(−2 ln(1 − (√0.75 − √0.25)²)) = √(−2 ln(√3/2)) = √(ln(4/3))
        let expect = (4.0f64 / 3.0).ln().sqrt();
        let r = radius_formula(0.75, 0.25, 1.0).unwrap();
        assert!((r - expect).abs() < 1e-15);
        assert!((r - 0.53636).abs() < 1e-5);
    }

    #[test]
    fn radius_increases_with_pa() {
        let mut prev = 0.0;
        for i in 1..1000 {
            let pa = 0.5 + 0.5 * i as f64 / 1000.0;
            let r = radius_formula(pa, 1.0 - pa, 0.7).unwrap();
            assert!(r > prev, "pa={pa}");
            prev = r;
        }
        assert!(radius_formula(1.0, 0.0, 1.0).unwrap().is_finite());
    }

    #[test]
    fn radius_rejects_misordered_probabilities() {
        assert!(radius_formula(0.2, 0.6, 1.0).is_err());
        assert!(radius_formula(1.2, 0.0, 1.0).is_err());
    }

    #[test]
    fn unanimous_votes_give_closed_form_radius() {
        // Identity model far from the boundary: every vote goes to class 0.
        let model = MlpModel::new(vec![Matrix::identity(2)]).unwrap();
        let sigma = 0.12f64.sqrt();
        let noise = NoiseConfig { sigma_weight: 0.0, ..NoiseConfig::isotropic(sigma, 0) };
        let res = certify(&model, &[100.0, 0.0], &noise, &CertifyParams::default(), 5).unwrap();
        let pa = 0.001f64.powf(1e-5);
        assert_eq!(res.predicted, Some(0));
        assert!((res.pa_lower - pa).abs() < 1e-10);
        assert!((res.pa_lower - 0.999931).abs() < 1e-6);
        let t = (pa.sqrt() - (1.0 - pa).sqrt()).powi(2);
        let r = (-2.0 * 0.12 * (1.0 - t).ln()).sqrt();
        assert!((res.radius - r).abs() < 1e-6);
        // Recomputed at 40 digits: 0.9916102048…
        assert!((res.radius - 0.991_610_2).abs() < 1e-6);
    }

    #[test]
    fn abstains_on_a_coin_flip() {
        let model = MlpModel::new(vec![Matrix::identity(2)]).unwrap();
        let noise = NoiseConfig { sigma_weight: 0.0, ..NoiseConfig::isotropic(1.0, 0) };
        let params = CertifyParams { n0: 100, n: 2000, alpha_b: 0.001 };
        let res = certify(&model, &[0.0, 0.0], &noise, &params, 1).unwrap();
        assert!(res.abstained());
        assert_eq!(res.radius, 0.0);
        assert!(res.pa_lower <= 0.5);
    }

    #[test]
    fn certification_is_bitwise_deterministic() {
        let model = MlpModel::init(&[3, 5, 3], true, 7).unwrap();
        let noise = NoiseConfig::isotropic(0.25, 3);
        let params = CertifyParams { n0: 50, n: 2000, alpha_b: 0.001 };
        let a = certify(&model, &[0.2, 0.3, 0.9], &noise, &params, 8).unwrap();
        let b = certify(&model, &[0.2, 0.3, 0.9], &noise, &params, 8).unwrap();
        assert_eq!(a.pa_lower.to_bits(), b.pa_lower.to_bits());
        assert_eq!(a.radius.to_bits(), b.radius.to_bits());
        assert_eq!(a, b);
    }
}
