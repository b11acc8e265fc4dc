mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scom::nn::{Matrix, Network};

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..25 {
        let (net, batch, labels) = common::random_problem(seed);
        let err = common::max_gradient_rel_error(&net, &batch, &labels, 1e-5);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn small_sgd_step_decreases_batch_loss() {
    let mut failures = 0;
    for seed in 0..20 {
        let mut ok = false;
        for retry in 0..3 {
            let (mut net, batch, labels) = common::random_problem(1000 + seed * 3 + retry);
            let (before, grads) = net.loss_and_grad(&batch, &labels).unwrap();
            net.sgd_step(&grads, 1e-4).unwrap();
            let (after, _) = net.loss_and_grad(&batch, &labels).unwrap();
            if after < before {
                ok = true;
                break;
            }
        }
        failures += (!ok) as usize;
    }
    assert_eq!(failures, 0);
}

#[test]
fn softmax_rows_sum_to_one_on_wide_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::random(6, &[100, 100], 4, &mut rng);
    let values: Vec<f64> = (0..50 * 6).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
    let probs = net.forward(&Matrix::from_vec(50, 6, values).unwrap()).unwrap();
    for row in probs.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn zero_step_and_zero_gradient_leave_parameters_unchanged() {
    let (net, batch, labels) = common::random_problem(77);
    let (_, grads) = net.loss_and_grad(&batch, &labels).unwrap();
    let mut a = net.clone();
    a.sgd_step(&grads, 0.0).unwrap();
    assert_eq!(a, net);
    let mut b = net.clone();
    b.sgd_step(&net.zeros_like(), 0.5).unwrap();
    assert_eq!(b, net);
}
