mod common;

use common::{gradient_check, random_matrix, random_model, random_probs, Problem, ALL_LOSSES};
use fedsiam_core::nn::{
    cross_entropy_loss, kl_consistency, mse_consistency, sgd_step, softmax, Activation, Matrix,
    OptimizerState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), tanh in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let model = random_model(&mut rng, act);
        let problem = Problem::random(&mut rng, &model);
        for kind in ALL_LOSSES {
            let err = gradient_check(&problem, kind, &model);
            prop_assert!(err < 1e-4, "{kind:?}: relative error {err}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..=50.0, 1..60), cols in 1usize..6) {
        let rows = data.len() / cols;
        prop_assume!(rows > 0);
        let m = Matrix::from_vec(rows, cols, data[..rows * cols].to_vec()).unwrap();
        let p = softmax(&m);
        for r in 0..rows {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn losses_nonnegative_and_zero_on_agreement(seed in any::<u64>(), n in 1usize..6, c in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_probs(&mut rng, n, c);
        let q = random_probs(&mut rng, n, c);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        prop_assert!(cross_entropy_loss(&p, Some(&labels)).unwrap().0 >= 0.0);
        prop_assert!(mse_consistency(&p, &q).unwrap().0 > 0.0);
        prop_assert!(kl_consistency(&p, &q).unwrap().0 > 0.0);
        prop_assert_eq!(mse_consistency(&p, &p).unwrap().0, 0.0);
        prop_assert!(kl_consistency(&p, &p).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_sgd_is_identity(seed in any::<u64>(), m in 0.0f64..0.99, wd in 0.0f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, Activation::Relu);
        let problem = Problem::random(&mut rng, &model);
        let grads = fedsiam_core::nn::backward(
            &model,
            &problem.inputs,
            &random_matrix(&mut rng, problem.inputs.rows(), model.num_classes()),
        ).unwrap();
        let mut params = model.clone();
        let mut opt = OptimizerState::new(&params, 0.0, m, wd);
        for _ in 0..3 {
            sgd_step(&mut params, &grads, &mut opt).unwrap();
        }
        prop_assert_eq!(params, model);
    }
}

#[test]
fn cross_entropy_zero_only_for_certain_prediction() {
    let certain = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
    assert_eq!(cross_entropy_loss(&certain, Some(&[1])).unwrap().0, 0.0);
    let unsure = Matrix::from_rows(&[vec![0.01, 0.98, 0.01]]).unwrap();
    assert!(cross_entropy_loss(&unsure, Some(&[1])).unwrap().0 > 0.0);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut model = random_model(&mut rng, Activation::Relu);
        let problem = Problem::random(&mut rng, &model);
        let mut opt = OptimizerState::new(&model, 0.05, 0.9, 1e-4);
        for _ in 0..20 {
            let g = problem.analytic(common::LossKind::CrossEntropy, &model);
            let mut grads = model.zeros_like();
            let mut it = g.into_iter();
            for layer in &mut grads.layers {
                for v in layer.values_mut() {
                    *v = it.next().unwrap();
                }
            }
            sgd_step(&mut model, &grads, &mut opt).unwrap();
        }
        model
    };
    assert_eq!(run(), run());
}
