use super::{NoiseConfig, Scratch, SmoothedClassifier};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::rng::{self, Phase};

/// Fraction of `data` on which the margin-`γ` smoothed vote disagrees with
/// the label.
///
/// For every noisy draw, the label class scores a vote only if it beats all
/// other logits by more than `γ`; any other class scores a vote if it comes
/// within `γ` of beating the rest. The sample is misvoted when the class
/// with the most votes (lowest index on ties) is not the label. All classes
/// are scored on the same draws, so at fixed seeds the loss is
/// non-decreasing in `γ`.
pub fn empirical_margin_loss(
    model: &MlpModel,
    data: &Dataset,
    gamma: f64,
    num: u64,
    noise: &NoiseConfig,
    stream: u64,
) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be ≥ 0, got {gamma}")));
    }
    if num == 0 {
        return Err(Error::InvalidArgument("num must be ≥ 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let clf = SmoothedClassifier::new(model, *noise)?;
    let k = model.num_classes();
    let mut misvoted = 0usize;
    let mut scratch = Scratch::default();
    for i in 0..data.len() {
        let x = data.input(i);
        let y = data.label(i);
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} ≥ class count {k}")));
        }
        let mut rng = rng::phase_stream(stream, i as u64, Phase::Margin);
        let mut counts = vec![0u64; k];
        for _ in 0..num {
            let f = clf.noisy_logits_into(x, &mut rng, &mut scratch);
            for (c, count) in counts.iter_mut().enumerate() {
                let rival = f
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != c)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let wins = if c == y {
                    f[c] > rival + gamma
                } else {
                    f[c] + gamma > rival
                };
                if wins {
                    *count += 1;
                }
            }
        }
        let mut top = 0;
        for c in 1..k {
            if counts[c] > counts[top] {
                top = c;
            }
        }
        if top != y {
            misvoted += 1;
        }
    }
    Ok(misvoted as f64 / data.len() as f64)
}
