//! Property checks over randomly generated models, matrices and inputs.

use proptest::prelude::*;
use smoothcert::bounds::{self, BoundInputs};
use smoothcert::data::{load_checkpoint, save_checkpoint, synth_blobs};
use smoothcert::linalg::Matrix;
use smoothcert::nn::MlpModel;
use smoothcert::smoothing::{
    certified_accuracy_curve, empirical_margin_loss, radius_grid, sample_under_noise, CertifyResult, NoiseConfig,
    SampleCertification,
};
use smoothcert::spectral::{correlation_matrix, gershgorin_bound, regularizer_and_gradient, spectral_norm};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn bound_inputs() -> impl Strategy<Value = BoundInputs> {
    (1usize..6).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.1f64..5.0, n),
            proptest::collection::vec(1.0f64..3.0, n),
            0.01f64..2.0,
            2usize..2000,
            1usize..512,
        )
            .prop_map(move |(spectral, ratio, gamma, d, h)| BoundInputs {
                gamma,
                delta: 0.05,
                m: 10_000,
                b: 10.0,
                n,
                h,
                d,
                per_layer_frobenius: spectral.iter().zip(&ratio).map(|(s, r)| s * r).collect(),
                per_layer_spectral: spectral,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gershgorin_dominates_squared_spectral_norm(w in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = spectral_norm(&w);
        prop_assert!(gershgorin_bound(&w) >= s * s * (1.0 - 1e-9) - 1e-12);
    }

    #[test]
    fn psi_falls_and_phi_rises_when_a_layer_grows(inputs in bound_inputs(), layer in 0usize..6, factor in 1.01f64..3.0) {
        // Scaling a layer scales both of its norms.
        let l = layer % inputs.n;
        let tau = bounds::tau_solve(inputs.d).unwrap();
        let mut bigger = inputs.clone();
        bigger.per_layer_spectral[l] *= factor;
        bigger.per_layer_frobenius[l] *= factor;
        let (p0, p1) = (bounds::psi(&inputs, tau).unwrap(), bounds::psi(&bigger, tau).unwrap());
        let (f0, f1) = (bounds::phi(&inputs, p0).unwrap(), bounds::phi(&bigger, p1).unwrap());
        if inputs.n == 1 {
            // A single layer's norm does not enter Ψ.
            prop_assert_eq!(p1, p0);
        } else {
            prop_assert!(p1 < p0);
            prop_assert!(f1 > f0);
        }
    }

    #[test]
    fn correlation_is_invariant_to_layer_scaling(seed in 0u64..1000, layer in 0usize..3, c in 0.05f64..20.0) {
        let model = MlpModel::init(&[4, 7, 6, 5], true, seed).unwrap();
        let scaled = model.with_scaled_layer(layer, c);
        let diff = correlation_matrix(&model).matrix.max_abs_diff(&correlation_matrix(&scaled).matrix);
        prop_assert!(diff < 1e-12);
        let r0 = regularizer_and_gradient(&model).value;
        let r1 = regularizer_and_gradient(&scaled).value;
        prop_assert!((r0 - r1).abs() < 1e-10 * r0.max(1.0));
    }

    #[test]
    fn votes_are_conserved(seed in 0u64..1000, num in 1u64..500, sigma in 0.0f64..2.0) {
        let model = MlpModel::init(&[3, 5, 4], true, seed).unwrap();
        let counts = sample_under_noise(&model, &[0.1, -0.5, 2.0], num, &NoiseConfig::isotropic(sigma, seed), 3).unwrap();
        prop_assert_eq!(counts.total, num);
        prop_assert_eq!(counts.counts.iter().sum::<u64>(), num);
    }

    #[test]
    fn margin_loss_is_monotone_in_gamma(seed in 0u64..200, g0 in 0.0f64..3.0, dg in 0.0f64..3.0) {
        let data = synth_blobs(3, 2, 24, 0.4, seed).unwrap();
        let model = MlpModel::init(&[2, 6, 3], true, seed).unwrap();
        let noise = NoiseConfig::isotropic(0.2, seed);
        let a = empirical_margin_loss(&model, &data, g0, 20, &noise, 1).unwrap();
        let b = empirical_margin_loss(&model, &data, g0 + dg, 20, &noise, 1).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn certified_curves_never_increase(
        rows in proptest::collection::vec((0usize..3, 0usize..4, 0.0f64..2.0), 1..40),
        max in 0.1f64..3.0,
    ) {
        let results: Vec<SampleCertification> = rows
            .iter()
            .enumerate()
            .map(|(i, &(label, pred, radius))| SampleCertification {
                sample_index: i,
                label,
                result: CertifyResult {
                    predicted: (pred < 3).then_some(pred),
                    pa_lower: 0.9,
                    radius: if pred < 3 { radius } else { 0.0 },
                    n_selection: 1,
                    n_estimation: 1,
                    alpha_b: 0.001,
                },
            })
            .collect();
        let curve = certified_accuracy_curve(&results, &radius_grid(max, 30));
        prop_assert!(curve.windows(2).all(|w| w[1].accuracy <= w[0].accuracy));
        prop_assert!(curve.iter().all(|p| (0.0..=1.0).contains(&p.accuracy)));
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in 0u64..1000, bias in any::<bool>(), hidden in 1usize..9) {
        let model = MlpModel::init(&[3, hidden, 2], bias, seed).unwrap();
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, serde_json::json!({ "seed": seed })).unwrap();
        let (back, meta) = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.input_bias(), bias);
        for (a, b) in back.layers().iter().zip(model.layers()) {
            prop_assert!(a.entries().iter().zip(b.entries()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(&meta.metadata["seed"], &serde_json::json!(seed));
    }
}
