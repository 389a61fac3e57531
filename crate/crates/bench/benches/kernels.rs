use std::hint::black_box;

use cce_core::characterization::{gram_matrix, spectrum};
use cce_core::nn::{batch_gradient, forward, Example, LossKind, NetworkBuilder, Params, Target, Tensor};
use cce_core::recognition::RecognizerSpec;
use cce_core::rng::Rng;
use cce_core::segmentation::{build_aid_u_net, AidUNetSpec};
use cce_core::sizing::{fit_ellipse, SizeRegressor, SizeRegressorConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
}

fn conv(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let mut b = NetworkBuilder::new(&[16, 32, 32]);
    let conv = b.conv3x3("c", NetworkBuilder::INPUT, 16, 32);
    let net = b.build(conv, LossKind::SquaredError).unwrap();
    let params = Params::init(&net, &mut rng);
    let input = random_tensor(net.input_shape(), &mut rng);
    let ex = Example {
        target: Target::Value(random_tensor(net.output_shape(), &mut rng)),
        input: input.clone(),
    };
    c.bench_function("conv3x3 16->32 @32 forward", |b| {
        b.iter(|| forward(&net, &params, black_box(&input)).unwrap())
    });
    c.bench_function("conv3x3 16->32 @32 forward+backward", |b| {
        b.iter(|| batch_gradient(&net, &params, &[black_box(&ex)]).unwrap())
    });
}

fn networks(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let net = RecognizerSpec::default().network().unwrap();
    let params = Params::init(&net, &mut rng);
    let ex = Example {
        input: random_tensor(net.input_shape(), &mut rng),
        target: Target::Class(1),
    };
    c.bench_function("recognizer step", |b| b.iter(|| batch_gradient(&net, &params, &[black_box(&ex)]).unwrap()));

    let net = build_aid_u_net(&AidUNetSpec::default()).unwrap();
    let params = Params::init(&net, &mut rng);
    let mask = Tensor::new(net.output_shape().to_vec(), vec![0.0; 64 * 64]);
    let ex = Example {
        input: random_tensor(net.input_shape(), &mut rng),
        target: Target::Mask(mask),
    };
    c.bench_function("aid-u-net step", |b| b.iter(|| batch_gradient(&net, &params, &[black_box(&ex)]).unwrap()));
}

fn gram(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let maps = random_tensor(&[32, 16, 16], &mut rng);
    c.bench_function("gram 32x256", |b| b.iter(|| gram_matrix(black_box(&maps))));
    let g = gram_matrix(&maps);
    c.bench_function("jacobi spectrum 32", |b| b.iter(|| spectrum(black_box(&g)).unwrap()));
}

fn sizing(c: &mut Criterion) {
    let mut rng = Rng::new(4);
    let pairs: Vec<(f64, f64)> = (0..196)
        .map(|_| {
            let x = rng.uniform(2.0, 25.0);
            (x, 0.75 * x + 1.5 * rng.normal())
        })
        .collect();
    let cfg = SizeRegressorConfig::default();
    c.bench_function("kernel ridge fit 196", |b| b.iter(|| SizeRegressor::fit(black_box(&pairs), &cfg).unwrap()));

    let px: Vec<(usize, usize)> = (0..64usize)
        .flat_map(|y| (0..64usize).map(move |x| (x, y)))
        .filter(|&(x, y)| ((x as f64 - 32.0) / 20.0).powi(2) + ((y as f64 - 30.0) / 11.0).powi(2) <= 1.0)
        .collect();
    c.bench_function("ellipse fit", |b| b.iter(|| fit_ellipse(black_box(&px)).unwrap()));
}

criterion_group!(benches, conv, networks, gram, sizing);
criterion_main!(benches);
