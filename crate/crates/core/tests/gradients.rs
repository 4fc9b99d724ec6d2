use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use undec::autodiff::{Graph, NodeId, Padding};
use undec::generator::{self, Arch, Generator, GeneratorConfig, GeneratorParams, InputVolume};
use undec::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values bounded away from zero, so ReLU kinks are never crossed by
/// a finite-difference step.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Checks the gradient of `Σ (op(inputs) − target)²` with respect to every
/// input against central differences.
fn check(name: &str, inputs: &[Tensor], op: impl Fn(&mut Graph, &[NodeId]) -> NodeId, seed: u64) {
    let eval = |values: &[Tensor]| -> (Graph, NodeId, Vec<NodeId>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.parameter(v.clone())).collect();
        let out = op(&mut g, &ids);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = random(g.value(out).shape(), &mut rng);
        let t = g.constant(target);
        let loss = g.squared_error(out, t).unwrap();
        (g, loss, ids)
    };
    let (g, loss, ids) = eval(inputs);
    let grads = g.backward(loss).unwrap();
    let h = 1e-6;
    for (which, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zero(*id);
        let mut numeric = vec![0.0; inputs[which].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[j] -= h;
            let (gp, lp, _) = eval(&plus);
            let (gm, lm, _) = eval(&minus);
            *slot = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * h);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = undec::tensor::norm(&numeric).max(undec::tensor::norm(analytic.data())).max(1e-12);
        assert!(diff / scale < 1e-5, "{name}, input {which}: relative error {:e}", diff / scale);
    }
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for padding in [Padding::Circular, Padding::ZeroSame] {
        check(
            "conv 1d",
            &[random(&[2, 7], &mut rng), random(&[3, 2, 3], &mut rng)],
            |g, x| g.conv(x[0], x[1], padding).unwrap(),
            2,
        );
        check(
            "conv 2d",
            &[random(&[2, 5, 6], &mut rng), random(&[2, 2, 3, 2], &mut rng)],
            |g, x| g.conv(x[0], x[1], padding).unwrap(),
            3,
        );
        check(
            "depthwise 2d",
            &[random(&[3, 6, 6], &mut rng), random(&[4, 4], &mut rng)],
            |g, x| g.conv_depthwise(x[0], x[1], padding).unwrap(),
            4,
        );
        check(
            "depthwise 1d",
            &[random(&[2, 9], &mut rng), random(&[4], &mut rng)],
            |g, x| g.conv_depthwise(x[0], x[1], padding).unwrap(),
            5,
        );
    }
}

#[test]
fn resampling_and_mixing_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check("upsample 1d", &[random(&[2, 5], &mut rng)], |g, x| g.upsample2x(x[0]).unwrap(), 7);
    check("upsample 2d", &[random(&[2, 3, 4], &mut rng)], |g, x| g.upsample2x(x[0]).unwrap(), 8);
    check("interp", &[random(&[3, 5], &mut rng)], |g, x| g.interp_truncated(x[0]).unwrap(), 9);
    check(
        "channel mix",
        &[random(&[3, 4, 4], &mut rng), random(&[3, 2], &mut rng)],
        |g, x| g.channel_mix(x[0], x[1]).unwrap(),
        10,
    );
    check(
        "bias",
        &[random(&[3, 6], &mut rng), random(&[3], &mut rng)],
        |g, x| g.bias_add(x[0], x[1]).unwrap(),
        11,
    );
}

#[test]
fn nonlinearity_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    check(
        "channel norm",
        &[random(&[3, 4, 5], &mut rng), random(&[3], &mut rng)],
        |g, x| g.channel_norm(x[0], x[1], 1e-6).unwrap(),
        13,
    );
    check("relu", &[away_from_zero(&[4, 6], &mut rng)], |g, x| g.relu(x[0]), 14);
    check("sigmoid", &[random(&[4, 6], &mut rng).map(|v| 4.0 * v)], |g, x| g.sigmoid(x[0]), 15);
}

/// Dense matrix of zero insertion `R^n → R^{2n}`.
fn upsample_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..2 * n).map(|i| (0..n).map(|j| if i == 2 * j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Dense matrix of the zero-padded "same" convolution with taps `c`.
fn conv_matrix(c: &[f64], n: usize) -> Vec<Vec<f64>> {
    let before = c.len() / 2;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let t = j as isize - i as isize + before as isize;
                    if t >= 0 && (t as usize) < c.len() {
                        c[t as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, r)| x * r[j]).sum()).collect())
        .collect()
}

fn kron(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for ra in a {
        for rb in b {
            out.push(ra.iter().flat_map(|x| rb.iter().map(move |y| x * y)).collect());
        }
    }
    out
}

#[test]
fn single_channel_arch_i_is_upsample_then_fixed_conv() {
    let taps: Vec<f64> = generator::FIXED_KERNEL_TAPS.iter().map(|t| t / 4.0).collect();
    for rank in [1, 2] {
        for n in [4, 8] {
            let mut cfg = GeneratorConfig::new(Arch::I, 2, 1);
            cfg.spatial_rank = rank;
            cfg.input_extent = n;
            cfg.use_channel_norm = false;
            cfg.use_sigmoid = false;
            assert_eq!(generator::param_count(&cfg), 2);
            let params = GeneratorParams::from_values(&cfg, vec![1.0, 1.0]).unwrap();
            let out = Generator::new(&cfg).unwrap().forward(&params).unwrap();

            let one_d = matmul(&conv_matrix(&taps, 2 * n), &upsample_matrix(n));
            let m = if rank == 1 { one_d } else { kron(&one_d, &one_d) };
            let x = InputVolume::for_config(&cfg).tensor;
            for (i, row) in m.iter().enumerate() {
                let expected = row.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>().max(0.0);
                assert!((out.data()[i] - expected).abs() < 1e-12, "rank {rank} n {n} entry {i}");
            }
        }
    }
}
