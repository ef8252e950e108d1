//! Analytic gradients against central finite differences.

use keystroke_core::nn::{model_backward, model_forward, model_forward_with_cache, Mode, ModelConfig, ModelParams, Tensor};
use keystroke_core::train::{loss, loss_and_grad, LossKind};
use keystroke_core::NUM_CLASSES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
// Below this both gradients count as zero; conv biases feeding a training
// batch norm have an exact zero gradient and the difference quotient is noise.
const FLOOR: f64 = 1e-7;

fn tiny() -> ModelConfig {
    ModelConfig {
        conv1_channels: 2,
        conv2_channels: 3,
        gru_hidden: 4,
        fc_hidden: 5,
        dropout: 0.2,
        window: 6,
        num_classes: NUM_CLASSES,
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_targets(b: usize, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = vec![0.0; b * n * NUM_CLASSES];
    for row in data.chunks_mut(NUM_CLASSES) {
        let k = rng.random_range(0..NUM_CLASSES);
        let mix = rng.random_range(0.5..1.0);
        row[0] += 1.0 - mix;
        row[k] += mix;
    }
    Tensor::from_vec(&[b, n, NUM_CLASSES], data).unwrap()
}

fn random_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    // Larger than the default init so every layer carries signal, and batch
    // norm affine terms away from identity.
    let mut p = ModelParams::init(cfg, rng.random());
    for (name, t) in p.named_mut() {
        for v in t.data_mut() {
            *v = match name {
                n if n.ends_with("running_var") => rng.random_range(0.5..2.0),
                n if n.ends_with("gamma") => rng.random_range(0.5..1.5),
                _ => rng.random_range(-0.6..0.6),
            };
        }
    }
    p
}

fn check(mode: Mode, kind: LossKind, seed: u64) {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n) = (2, cfg.window);
    let input = random_tensor(&[b, 2, n, 21, 3], &mut rng, -1.0, 1.0);
    let target = random_targets(b, n, &mut rng);
    let params = random_params(&cfg, &mut rng);

    let (pred, cache) = model_forward_with_cache(&input, &params, &cfg, mode).unwrap();
    let (_, dprobs) = loss_and_grad(&kind, &pred, &target).unwrap();
    let grads = model_backward(&params, &cache, &dprobs).unwrap();

    let objective = |p: &ModelParams| {
        let out = model_forward(&input, p, &cfg, mode).unwrap();
        loss(&kind, &out, &target).unwrap()
    };

    let mut checked = 0;
    let mut worst = (0.0, String::new());
    let names: Vec<&'static str> = params.trainable().iter().map(|(n, _)| *n).collect();
    let analytic: Vec<Vec<f64>> = grads.trainable().iter().map(|(_, t)| t.data().to_vec()).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        for i in 0..len {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.trainable_mut()[ti].1.data_mut()[i] += EPS;
            minus.trainable_mut()[ti].1.data_mut()[i] -= EPS;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
            let a = analytic[ti][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    assert!(checked >= 100);
    assert!(worst.0 < TOLERANCE, "{mode:?} {}: worst {} at {}", kind.name(), worst.0, worst.1);
}

fn class_weights() -> [f64; NUM_CLASSES] {
    let mut w = [0.0; NUM_CLASSES];
    for (i, v) in w.iter_mut().enumerate() {
        *v = 0.3 + 0.1 * i as f64;
    }
    w
}

#[test]
fn mse_train_mode() {
    check(Mode::Train { dropout_seed: 17 }, LossKind::Mse, 1);
}

#[test]
fn mse_eval_mode() {
    check(Mode::Eval, LossKind::Mse, 2);
}

#[test]
fn weighted_ce_train_mode() {
    check(Mode::Train { dropout_seed: 99 }, LossKind::WeightedCrossEntropy(class_weights()), 3);
}

#[test]
fn weighted_ce_eval_mode() {
    check(Mode::Eval, LossKind::WeightedCrossEntropy(class_weights()), 4);
}

#[test]
fn gradients_vanish_at_the_minimum() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random_tensor(&[2, 2, 6, 21, 3], &mut rng, -1.0, 1.0);
    let params = random_params(&cfg, &mut rng);
    let (pred, cache) = model_forward_with_cache(&input, &params, &cfg, Mode::Train { dropout_seed: 1 }).unwrap();
    let (value, dprobs) = loss_and_grad(&LossKind::Mse, &pred, &pred).unwrap();
    assert_eq!(value, 0.0);
    let grads = model_backward(&params, &cache, &dprobs).unwrap();
    for (name, t) in grads.trainable() {
        assert!(t.data().iter().all(|g| g.abs() < 1e-10), "{name}");
    }
}

#[test]
fn gradients_are_linear_in_the_loss_scale() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = random_tensor(&[3, 2, 6, 21, 3], &mut rng, -1.0, 1.0);
    let target = random_targets(3, 6, &mut rng);
    let params = random_params(&cfg, &mut rng);
    let (pred, cache) = model_forward_with_cache(&input, &params, &cfg, Mode::Train { dropout_seed: 3 }).unwrap();
    let (_, dprobs) = loss_and_grad(&LossKind::Mse, &pred, &target).unwrap();
    let doubled = Tensor::from_vec(dprobs.shape(), dprobs.data().iter().map(|v| 2.0 * v).collect()).unwrap();
    let g1 = model_backward(&params, &cache, &dprobs).unwrap();
    let g2 = model_backward(&params, &cache, &doubled).unwrap();
    for ((name, a), (_, b)) in g1.trainable().into_iter().zip(g2.trainable()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300), "{name}");
        }
    }
}
