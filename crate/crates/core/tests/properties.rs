use proptest::prelude::*;

use undec::autodiff::{self, Padding};
use undec::baselines::{self, IstaSettings, WaveletBasis};
use undec::construction::{self, PiecewiseLinearSpec};
use undec::generator::{self, Arch, GeneratorConfig, GeneratorParams};
use undec::io;
use undec::operators::{self, LinearOperator};
use undec::recovery::{self, Method, OptimizerSettings, RecoveryProblem};
use undec::Tensor;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn vec_f64(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

fn arch() -> impl Strategy<Value = Arch> {
    prop::sample::select(vec![Arch::I, Arch::II, Arch::III, Arch::IV, Arch::Plain])
}

fn small_config() -> impl Strategy<Value = GeneratorConfig> {
    (arch(), 1usize..=4, 1usize..=4, 1usize..=2, prop::sample::select(vec![1usize, 3])).prop_map(|(a, d, k, rank, out)| {
        let mut cfg = GeneratorConfig::new(a, d, k);
        cfg.spatial_rank = rank;
        cfg.out_channels = out;
        cfg.input_extent = 4;
        cfg
    })
}

/// Signal and kernel with the kernel no longer than the signal.
fn signal_and_kernel() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=16)
        .prop_flat_map(|n| (Just(n), 1usize..=n))
        .prop_flat_map(|(n, ell)| (vec_f64(n), vec_f64(ell)))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn circular_conv_is_circulant_product((x, c) in signal_and_kernel()) {
        let n = x.len();
        let out = autodiff::conv(&Tensor::from_vec(x.clone()).unwrap(), &Tensor::from_vec(c.clone()).unwrap(), Padding::Circular).unwrap();
        for i in 0..n {
            let direct: f64 = (0..c.len()).map(|t| c[t] * x[(i + t) % n]).sum();
            prop_assert!((out.data()[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_interleaves_zeros(x in vec_f64(1..32)) {
        let up = autodiff::upsample2x(&Tensor::from_vec(x.clone()).unwrap()).unwrap();
        prop_assert_eq!(up.len(), 2 * x.len());
        for (i, v) in up.data().iter().enumerate() {
            if i % 2 == 1 {
                prop_assert_eq!(*v, 0.0);
            } else {
                prop_assert_eq!(*v, x[i / 2]);
            }
        }
    }

    #[test]
    fn channel_norm_mean_is_beta(x in vec_f64(8..64), scale in 2.0..50.0f64, beta in -3.0..3.0f64) {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        prop_assume!(var > 1e-3);
        // rescale so the variance is at least one
        let s = scale / var.sqrt();
        let z = Tensor::from_vec(x.iter().map(|v| v * s).collect()).unwrap();
        let out = autodiff::channel_norm(&z, beta, 1e-6).unwrap();
        let m = out.data().iter().sum::<f64>() / out.len() as f64;
        prop_assert!((m - beta).abs() < 1e-9, "mean {m} beta {beta}");
    }

    #[test]
    fn relu_and_sigmoid_ranges(x in prop::collection::vec(-30.0..30.0f64, 1..64)) {
        let t = Tensor::from_vec(x).unwrap();
        prop_assert!(autodiff::relu(&t).data().iter().all(|&v| v >= 0.0));
        prop_assert!(autodiff::sigmoid(&t).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn param_count_matches_flat_vector(cfg in small_config(), seed in any::<u64>()) {
        let p = generator::init_params(&cfg, seed, 0.1).unwrap();
        prop_assert_eq!(p.len(), generator::param_count(&cfg));
        let bytes = p.to_bytes();
        prop_assert_eq!(GeneratorParams::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn output_shape_follows_depth(cfg in small_config()) {
        let p = generator::init_params(&cfg, 1, 0.1).unwrap();
        let out = generator::forward(&cfg, &p).unwrap();
        let extent = if cfg.arch.upsamples() {
            cfg.input_extent << (cfg.depth - 1)
        } else {
            cfg.input_extent
        };
        let mut shape = vec![cfg.out_channels];
        shape.extend(std::iter::repeat_n(extent, cfg.spatial_rank));
        prop_assert_eq!(out.shape(), &shape[..]);
        if cfg.use_sigmoid {
            prop_assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn forward_is_deterministic(cfg in small_config(), seed in any::<u64>()) {
        let p = generator::init_params(&cfg, seed, 0.3).unwrap();
        let a = generator::forward(&cfg, &p).unwrap();
        let b = generator::forward(&cfg, &generator::init_params(&cfg, seed, 0.3).unwrap()).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn dense_operators_are_adjoint(m in 1usize..24, n in 1usize..24, seed in any::<u64>(), rad in any::<bool>()) {
        let a = if rad { operators::make_rademacher(m, n, seed) } else { operators::make_gaussian(m, n, seed) }.unwrap();
        let x: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.37).sin()).collect();
        let y: Vec<f64> = (0..m).map(|i| ((i as f64 + 2.0) * 0.91).cos()).collect();
        let lhs = undec::tensor::dot(&a.apply(&x).unwrap(), &y);
        let rhs = undec::tensor::dot(&x, &a.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * undec::tensor::norm(&x) * undec::tensor::norm(&y));
    }

    #[test]
    fn dft_roundtrip_and_parseval(side in 1usize..=16, x in vec_f64(256)) {
        let img = &x[..side * side];
        let k = operators::dft2_real(img, side, side);
        let e_img: f64 = img.iter().map(|v| v * v).sum();
        let e_k: f64 = k.iter().map(|c| c.norm_sqr()).sum();
        prop_assert!((e_img - e_k).abs() < 1e-10 * (1.0 + e_img));
        let back = operators::idft2(&k, side, side);
        for (b, v) in back.iter().zip(img) {
            prop_assert!((b.re - v).abs() < 1e-10 && b.im.abs() < 1e-10);
        }
    }

    #[test]
    fn masked_fourier_is_adjoint(side in 2usize..=16, acc in 1usize..=4, seed in any::<u64>()) {
        prop_assume!(side >= 2 * acc);
        let mask = operators::make_mask(side, acc, 0.1, seed).unwrap();
        let a = operators::make_masked_fourier(side, side, mask).unwrap();
        let x: Vec<f64> = (0..a.n()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let y: Vec<f64> = (0..a.m()).map(|i| ((i * 5 % 11) as f64 - 5.0) / 5.0).collect();
        let lhs = undec::tensor::dot(&a.apply(&x).unwrap(), &y);
        let rhs = undec::tensor::dot(&x, &a.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * undec::tensor::norm(&x) * undec::tensor::norm(&y));
    }

    #[test]
    fn haar_roundtrip_and_parseval(log_h in 1u32..=5, log_w in 1u32..=5, x in vec_f64(1024)) {
        let (h, w) = (1usize << log_h, 1usize << log_w);
        let img = Tensor::new(&[h, w], x[..h * w].to_vec()).unwrap();
        let basis = WaveletBasis::haar();
        let c = baselines::wavelet_forward(&img, &basis).unwrap();
        prop_assert!((c.norm() - img.norm()).abs() < 1e-10 * (1.0 + img.norm()));
        let back = baselines::wavelet_inverse(&c, &basis).unwrap();
        prop_assert!(back.max_abs_diff(&img) < 1e-10);
    }

    #[test]
    fn threshold_keeps_at_most_budget(x in vec_f64(256), n_keep in 1usize..=256) {
        let img = Tensor::new(&[16, 16], x).unwrap();
        let basis = WaveletBasis::haar();
        let approx = baselines::threshold_compress(&img, &basis, n_keep).unwrap();
        let c = baselines::wavelet_forward(&approx, &basis).unwrap();
        prop_assert!(c.data().iter().filter(|v| v.abs() > 1e-9).count() <= n_keep);
        if n_keep == 256 {
            prop_assert!(approx.max_abs_diff(&img) < 1e-10);
        }
    }

    #[test]
    fn construction_is_exact_and_sparse(
        depth in 1usize..=6,
        raw in prop::collection::vec((0usize..64, -4.0..4.0f64), 1..=8),
        initial in -2.0..2.0f64,
    ) {
        let n = construction::output_len(depth);
        let mut breakpoints: Vec<usize> = raw.iter().map(|(p, _)| p % (n - 1)).collect();
        breakpoints.sort_unstable();
        breakpoints.dedup();
        let segments: Vec<(usize, f64)> = breakpoints.iter().zip(&raw).map(|(&p, &(_, s))| (p, s)).collect();
        let s = segments.len();
        let spec = PiecewiseLinearSpec::new(n, segments, initial).unwrap();
        let built = construction::build_piecewise(&spec, depth).unwrap();
        let target = spec.evaluate();
        let sup = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let out = built.forward().unwrap();
        for (o, t) in out.iter().zip(&target) {
            prop_assert!((o - t).abs() < 1e-9 * (1.0 + sup));
        }
        prop_assert!(built.nonzero_count <= s * (depth + 1) + s + 1);
        let pre = construction::pre_activations(&built).unwrap();
        // the last entry feeds the linear output layer
        for layer in pre.split_last().map_or(&[][..], |(_, hidden)| hidden) {
            prop_assert!(layer.data().iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn rectangular_pieces_are_monotone(depth in 2usize..=6, p in 0usize..64, slope in 0.0..5.0f64) {
        let n = construction::output_len(depth);
        let built = construction::build_rectangular(depth, p % (n - 1), slope).unwrap();
        let out = built.forward().unwrap();
        for w in out.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn pgm_roundtrip_and_trailing_bytes(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let img = undec::phantom::smooth_image(h, w, seed);
        let bytes = io::encode_pnm(&img, 65535).unwrap();
        let back = io::decode_pnm(&bytes).unwrap();
        prop_assert!(back.max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-12);
        let mut extra = bytes.clone();
        extra.push(0);
        prop_assert!(io::decode_pnm(&extra).is_err());
    }

    #[test]
    fn kspace_roundtrip_and_trailing_bytes(h in 1usize..8, w in 1usize..8, x in vec_f64(64)) {
        let k = operators::dft2_real(&x[..h * w], h, w);
        let bytes = io::encode_kspace(h, w, &k).unwrap();
        let (h2, w2, k2) = io::decode_kspace(&bytes).unwrap();
        prop_assert_eq!((h2, w2), (h, w));
        prop_assert_eq!(k2, k);
        let mut extra = bytes;
        extra.push(7);
        prop_assert!(io::decode_kspace(&extra).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ista_objective_is_monotone(m in 8usize..40, seed in any::<u64>(), lam in 0.001..0.5f64) {
        let a = operators::make_gaussian(m, 64, seed).unwrap();
        let x = undec::phantom::smooth_image(8, 8, seed);
        let y = a.apply(x.data()).unwrap();
        let settings = IstaSettings { lambda: lam, iterations: 60, step: None, accelerated: false };
        let r = baselines::ista_l1(&y, &a, &[8, 8], &WaveletBasis::haar(), &settings).unwrap();
        for w in r.objective.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn small_step_gradient_descent_is_monotone() {
    // default width; with 4 or 16 channels a nearly dead channel makes the
    // normalization steep enough that a 1e-4 step can overshoot
    for seed in 0..10u64 {
        let cfg = GeneratorConfig::new(Arch::I, 3, 32);
        let target = undec::phantom::smooth_image(16, 16, seed).reshape(&[1, 16, 16]).unwrap();
        let a = operators::make_gaussian(128, 256, seed).unwrap();
        let y = a.apply(target.data()).unwrap();
        let problem = RecoveryProblem::new(a, y, cfg, None).unwrap();
        let settings = OptimizerSettings {
            method: Method::Gd,
            step_size: 1e-4,
            iterations: 100,
            init_seed: seed,
            ..OptimizerSettings::default()
        };
        let r = recovery::fit(&problem, &settings).unwrap();
        for (i, w) in r.loss_trace.windows(2).enumerate() {
            assert!(w[1] <= w[0], "seed {seed} iteration {i}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn recovery_is_bitwise_deterministic() {
    let cfg = GeneratorConfig::new(Arch::II, 3, 4);
    let target = undec::phantom::smooth_image(16, 16, 3).reshape(&[1, 16, 16]).unwrap();
    let a = operators::make_rademacher(100, 256, 9).unwrap();
    let y = a.apply(target.data()).unwrap();
    let problem = RecoveryProblem::new(a, y, cfg, Some(target)).unwrap();
    let settings = OptimizerSettings {
        iterations: 80,
        init_seed: 4,
        ..OptimizerSettings::default()
    };
    let a = recovery::fit(&problem, &settings).unwrap();
    let b = recovery::fit(&problem, &settings).unwrap();
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.estimate.data(), b.estimate.data());
}

#[test]
fn identity_operator_adjoint_is_exact() {
    let a = LinearOperator::identity(17);
    let x: Vec<f64> = (0..17).map(|i| i as f64).collect();
    assert_eq!(a.apply(&x).unwrap(), x);
    assert_eq!(a.adjoint(&x).unwrap(), x);
}
