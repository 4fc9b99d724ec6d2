use undec::generator::{self, Arch, GeneratorConfig};
use undec::operators;
use undec::recovery::{self, OptimizerSettings, RecoveryProblem};
use undec::theory::{self, SweepGrid, SweepSettings, TargetKind};

#[test]
fn overparameterized_fit_beats_adjoint() {
    let mut template = GeneratorConfig::new(Arch::I, 4, 1);
    template.input_extent = 4;
    let cfg = theory::channels_for_params(&template, 1200).unwrap();
    let n_params = generator::param_count(&cfg);
    let m = n_params / 2;
    let target = undec::phantom::smooth_image(32, 32, 2).reshape(&[1, 32, 32]).unwrap();
    assert!(m < target.len());
    let a = operators::make_gaussian(m, target.len(), 17).unwrap();
    let y = a.apply(target.data()).unwrap();
    let adjoint = a.adjoint(&y).unwrap();
    let adjoint_psnr = recovery::psnr(&adjoint, target.data(), 1.0);
    let problem = RecoveryProblem::new(a, y, cfg, Some(target.clone())).unwrap();
    let settings = OptimizerSettings {
        iterations: 1500,
        ..OptimizerSettings::default()
    };
    let r = recovery::fit(&problem, &settings).unwrap();
    let psnr = r.metrics.unwrap().psnr;
    assert!(psnr > adjoint_psnr, "N = {n_params}, m = {m}: decoder {psnr:.2} dB, adjoint {adjoint_psnr:.2} dB");
}

#[test]
fn sweep_error_decreases_with_measurements() {
    let mut template = GeneratorConfig::new(Arch::I, 3, 1);
    template.input_extent = 4;
    let grid = SweepGrid {
        n_values: vec![150],
        m_values: vec![40, 100, 250, 600],
        seeds: vec![0, 1, 2],
        target: TargetKind::InRangeRandom,
    };
    let settings = SweepSettings {
        recovery: OptimizerSettings {
            iterations: 1500,
            ..OptimizerSettings::default()
        },
        ..SweepSettings::default()
    };
    let records = theory::measurement_sweep(&grid, &template, &settings).unwrap();
    assert_eq!(records.len(), 12);
    let summary = theory::sweep_summary(&records);
    let means: Vec<f64> = summary.iter().map(|s| s.2).collect();
    let inversions = means.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "mean MSE per m: {means:?}");
    assert!(means[means.len() - 1] < means[0], "mean MSE per m: {means:?}");
}

#[test]
fn restarts_keep_the_lowest_final_loss() {
    let cfg = GeneratorConfig::new(Arch::II, 3, 4);
    let target = undec::phantom::smooth_image(16, 16, 1).reshape(&[1, 16, 16]).unwrap();
    let problem = RecoveryProblem::compression(cfg, &target).unwrap();
    let single = |seed| {
        let s = OptimizerSettings {
            iterations: 60,
            init_seed: seed,
            ..OptimizerSettings::default()
        };
        recovery::fit(&problem, &s).unwrap().final_loss()
    };
    let best = single(5).min(single(6)).min(single(7));
    let s = OptimizerSettings {
        iterations: 60,
        init_seed: 5,
        restarts: 3,
        ..OptimizerSettings::default()
    };
    let r = recovery::fit_with_jobs(&problem, &s, 2).unwrap();
    assert_eq!(r.final_loss(), best);
}
