//! AID-U-Net with empty sub-paths against a separately written U-Net.

use cce_core::nn::{forward, LayerKind, LossKind, NetworkBuilder, NetworkSpec, Params, Tensor};
use cce_core::segmentation::{build_aid_u_net, AidUNetSpec};
use cce_core::Rng;

fn conv_relu(b: &mut NetworkBuilder, tag: &str, from: usize, cin: usize, cout: usize) -> usize {
    let conv = LayerKind::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let c = b.add(format!("{tag}.conv"), conv, &[from]);
    b.add(format!("{tag}.relu"), LayerKind::Relu, &[c])
}

fn level(b: &mut NetworkBuilder, from: usize, cin: usize, c: usize, depth: usize, encoders: &mut Vec<usize>) -> usize {
    let e = conv_relu(b, &format!("down{depth}"), from, cin, c);
    encoders.push(e);
    e
}

/// Encoder blocks with pooling in between, then transposed-conv upsampling
/// concatenated with the matching encoder output.
fn plain_u_net(depth: usize, base: usize, n: usize) -> NetworkSpec {
    let mut b = NetworkBuilder::new(&[3, n, n]);
    let mut encoders = Vec::new();
    let mut x = level(&mut b, NetworkBuilder::INPUT, 3, base, 0, &mut encoders);
    for d in 1..=depth {
        let p = b.add(format!("down{d}.pool"), LayerKind::MaxPool2x2, &[x]);
        x = level(&mut b, p, base << (d - 1), base << d, d, &mut encoders);
    }
    for d in (0..depth).rev() {
        let up = LayerKind::TransposedConv2x2 {
            in_channels: base << (d + 1),
            out_channels: base << d,
        };
        let u = b.add(format!("up{d}.tconv"), up, &[x]);
        let cat = b.add(format!("up{d}.cat"), LayerKind::Concat, &[u, encoders[d]]);
        x = conv_relu(&mut b, &format!("up{d}"), cat, 2 * (base << d), base << d);
    }
    let head = LayerKind::Conv2d {
        in_channels: base,
        out_channels: 1,
        kernel: 1,
        stride: 1,
        padding: 0,
    };
    let h = b.add("out.conv", head, &[x]);
    let s = b.add("out.sigmoid", LayerKind::Sigmoid, &[h]);
    b.build(s, LossKind::PixelwiseBinaryCrossEntropy).unwrap()
}

#[test]
fn zero_sub_depth_matches_plain_u_net() {
    for (depth, base) in [(1, 2), (2, 4), (3, 2)] {
        let n = 16;
        let aid = build_aid_u_net(&AidUNetSpec {
            direct_depth: depth,
            sub_depth: 0,
            base_channels: base,
            image_size: n,
        })
        .unwrap();
        let plain = plain_u_net(depth, base, n);
        let pa = Params::init(&aid, &mut Rng::new(99));
        let pp = Params::init(&plain, &mut Rng::new(99));
        let mut rng = Rng::new(5);
        let image = Tensor::new(vec![3, n, n], (0..3 * n * n).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let (ya, _) = forward(&aid, &pa, &image).unwrap();
        let (yp, _) = forward(&plain, &pp, &image).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ya), bits(&yp), "D={depth}, base={base}");
    }
}

#[test]
fn positive_sub_depth_differs() {
    let spec = |s| AidUNetSpec {
        direct_depth: 1,
        sub_depth: s,
        base_channels: 2,
        image_size: 16,
    };
    let a = build_aid_u_net(&spec(1)).unwrap();
    assert!(a.learnable().len() > plain_u_net(1, 2, 16).learnable().len());
    assert_eq!(build_aid_u_net(&spec(0)).unwrap().learnable().len(), plain_u_net(1, 2, 16).learnable().len());
}
