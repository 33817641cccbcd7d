use galbnn_nn::gradcheck::{check_sequential, projection_loss};
use galbnn_nn::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2d, Maxout, Mode, PRelu, Sequential,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn check(mut net: Sequential<f64>, input_shape: &[usize], h: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, input_shape);
    let out_len = net.forward(x.clone(), &Mode::Eval).unwrap().len();
    let w: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let report =
        check_sequential(&mut net, &x, 99, h, None, |out| projection_loss(out, &w)).unwrap();
    assert!(report.checked > 0);
    assert!(
        report.max_rel_error < TOL,
        "max rel error {:.3e} at {}",
        report.max_rel_error,
        report.worst
    );
    report.max_rel_error
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(
        Sequential::new(vec![Layer::Conv2d(Conv2d::new(&mut rng, 2, 3, (3, 3)))]),
        &[2, 5, 4, 2],
        1e-5,
        1,
    );
    check(
        Sequential::new(vec![Layer::Conv2d(Conv2d::new(&mut rng, 1, 2, (5, 5)))]),
        &[1, 6, 6, 1],
        1e-5,
        2,
    );
}

#[test]
fn batchnorm_gradients() {
    let mut bn = BatchNorm::<f64>::new(3);
    bn.gamma.value = Tensor::new(vec![3], vec![0.7, -1.3, 2.0]).unwrap();
    bn.beta.value = Tensor::new(vec![3], vec![0.1, 0.2, -0.3]).unwrap();
    check(
        Sequential::new(vec![Layer::BatchNorm(bn)]),
        &[4, 3, 3, 3],
        1e-5,
        3,
    );
}

#[test]
fn prelu_gradients() {
    check(
        Sequential::new(vec![Layer::PRelu(PRelu::new(3, 0.25))]),
        &[2, 4, 3],
        1e-6,
        4,
    );
}

#[test]
fn maxpool_gradients() {
    check(
        Sequential::new(vec![Layer::MaxPool2d(MaxPool2d::new(2))]),
        &[2, 5, 4, 2],
        1e-6,
        5,
    );
}

#[test]
fn dense_maxout_dropout_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = Sequential::new(vec![
        Layer::Flatten(Flatten::new(2)),
        Layer::Maxout(Maxout::new(&mut rng, 12, 5, 2)),
        Layer::Dropout(Dropout::new(0.5, 1)),
        Layer::Maxout(Maxout::new(&mut rng, 5, 4, 3)),
        Layer::Dropout(Dropout::new(0.5, 3)),
        Layer::Dense(Dense::new(&mut rng, 4, 5)),
    ]);
    check(net, &[6, 2, 3], 1e-6, 6);
}

/// Two conv blocks and a dense read-out, ~500 parameters, checked with the
/// coarse step h = 1e-3.
#[test]
fn small_conv_net_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Sequential::new(vec![
        Layer::BatchNorm(BatchNorm::new(1)),
        Layer::Conv2d(Conv2d::new(&mut rng, 1, 4, (3, 3))),
        Layer::PRelu(PRelu::new(4, 0.25)),
        Layer::MaxPool2d(MaxPool2d::new(2)),
        Layer::BatchNorm(BatchNorm::new(4)),
        Layer::Conv2d(Conv2d::new(&mut rng, 4, 8, (3, 3))),
        Layer::PRelu(PRelu::new(8, 0.25)),
        Layer::MaxPool2d(MaxPool2d::new(2)),
        Layer::Flatten(Flatten::new(1)),
        Layer::Dense(Dense::new(&mut rng, 32, 3)),
    ]);
    let params = net.param_count();
    assert!((400..=600).contains(&params), "{params} params");
    check(net, &[3, 8, 8, 1], 1e-3, 8);
}

#[test]
fn zero_image_gives_zero_conv_weight_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Sequential::new(vec![
        Layer::Conv2d(Conv2d::new(&mut rng, 1, 3, (3, 3))),
        Layer::PRelu(PRelu::new(3, 0.25)),
    ]);
    let out = net
        .forward(Tensor::zeros(&[2, 5, 5, 1]), &Mode::Train { seed: 0 })
        .unwrap();
    net.backward(Tensor::full(out.shape(), 1.0)).unwrap();
    if let Layer::Conv2d(c) = &net.layers()[0] {
        assert!(c.weight.grad.data().iter().all(|&g| g == 0.0));
    } else {
        unreachable!();
    }
}

/// Averaging MC-dropout passes over many seeds recovers the deterministic
/// (inverted-dropout) output within three standard errors.
#[test]
fn mc_dropout_expectation_matches_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut net = Sequential::<f64>::new(vec![
        Layer::Maxout(Maxout::new(&mut rng, 6, 8, 2)),
        Layer::Dropout(Dropout::new(0.5, 1)),
        Layer::Dense(Dense::new(&mut rng, 8, 2)),
    ]);
    let x = random_tensor(&mut rng, &[1, 6]);
    let det = net.forward(x.clone(), &Mode::Eval).unwrap();
    let n = 4000;
    let seeds: Vec<u64> = (0..n as u64).map(|s| s * 7 + 3).collect();
    let batch = Tensor::new(vec![n, 6], x.data().repeat(n)).unwrap();
    let out = net
        .forward(batch, &Mode::McDropout { row_seeds: &seeds })
        .unwrap();
    for j in 0..2 {
        let vals: Vec<f64> = out.data().iter().skip(j).step_by(2).copied().collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - det.data()[j]).abs() < 3.0 * se,
            "output {j}: {mean} vs {}",
            det.data()[j]
        );
    }
}
