use super::*;
use crate::kernel::{KernelSpec, KernelVariant, LocalDomain};
use crate::model::{build_gaussian_mrf, gaussian_model, grid_graph, GaussianMrfParams};
use proptest::prelude::*;

fn std_normal(d: usize) -> GraphicalModel {
    gaussian_model(&GaussianMrfParams::identity(d)).unwrap()
}

/// Independent evaluation of the vanilla direction, written directly from
/// the definition with per-pair kernel calls.
fn oracle_direction(p: &ParticleSet, m: &GraphicalModel, h: f64) -> Vec<Vec<f64>> {
    let n = p.len();
    (0..n)
        .map(|t| {
            let mut phi = vec![0.0; p.dim()];
            for l in 0..n {
                let s = m.score(p.row(l)).unwrap();
                let k = crate::kernel::rbf_eval(p.row(l), p.row(t), h);
                for j in 0..p.dim() {
                    phi[j] += (s[j] * k - 2.0 / h * (p.get(l, j) - p.get(t, j)) * k) / n as f64;
                }
            }
            phi
        })
        .collect()
}

#[test]
fn two_particle_direction() {
    let m = std_normal(1);
    let p = ParticleSet::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
    let k = CoordinateKernel::global(1, 1.0);
    let dir = svgd_direction_vanilla(&p, &m, &k).unwrap();
    let e4 = (-4.0f64).exp();
    let expected = 0.5 * (-1.0 + e4 + 4.0 * e4);
    assert!((dir.get(1, 0) - expected).abs() < 1e-15);
    assert!((dir.get(1, 0) - (-0.454210)).abs() < 1e-6);
    assert!((dir.get(0, 0) + expected).abs() < 1e-15);
    let oracle = oracle_direction(&p, &m, 1.0);
    assert!((oracle[1][0] - expected).abs() < 1e-15);
}

#[test]
fn factorized_local_matches_one_dimensional_value() {
    let m = std_normal(3);
    let p = ParticleSet::from_rows(&[vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]]).unwrap();
    let kernels: Vec<_> = (0..3).map(|i| CoordinateKernel::rbf(vec![i], 1.0)).collect();
    let dir = graphical_direction(&p, &m, &kernels).unwrap();
    for i in 0..3 {
        assert!((dir.get(1, i) + 0.454210).abs() < 1e-6);
        assert!((dir.get(0, i) - 0.454210).abs() < 1e-6);
    }
}

#[test]
fn single_particle_is_gradient_ascent() {
    let mut rng = stream(3, Stream::Model);
    let (m, _) = build_gaussian_mrf(&grid_graph(3, 3), 9, &mut rng).unwrap();
    let x = ParticleSet::standard_normal(1, 9, &mut rng);
    let grad = m.score(x.row(0)).unwrap();
    let eps = 0.05;
    for config in [EngineConfig::vanilla(), EngineConfig::graphical()] {
        let mut c = config;
        c.step_rule = StepRule::Plain;
        c.master_step = eps;
        c.iterations = 1;
        let out = run(&m, &c, Init::Particles(x.clone())).unwrap();
        for j in 0..9 {
            assert!((out.particles.get(0, j) - (x.get(0, j) + eps * grad[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn vanilla_matches_oracle() {
    let mut rng = stream(5, Stream::Model);
    let (m, _) = build_gaussian_mrf(&grid_graph(2, 3), 6, &mut rng).unwrap();
    let p = ParticleSet::standard_normal(7, 6, &mut rng);
    let dir = svgd_direction_vanilla(&p, &m, &CoordinateKernel::global(6, 1.7)).unwrap();
    let oracle = oracle_direction(&p, &m, 1.7);
    for (t, row) in oracle.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((dir.get(t, j) - v).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn graphical_with_global_kernels_is_vanilla(seed in 0u64..1000, d in 1usize..=10, n in 1usize..=20) {
        let mut rng = stream(seed, Stream::Model);
        let edges: Vec<_> = (0..d.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        let (m, _) = build_gaussian_mrf(&edges, d, &mut rng).unwrap();
        let p = ParticleSet::standard_normal(n, d, &mut rng);
        let h = crate::kernel::median_bandwidth_columns(&p, &(0..d).collect::<Vec<_>>(), 1e-8);
        let g = CoordinateKernel::global(d, h);
        let a = svgd_direction_vanilla(&p, &m, &g).unwrap();
        let b = graphical_direction(&p, &m, &vec![g; d]).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn fast_and_audited_paths_agree(seed in 0u64..1000, variant in 0usize..4) {
        let mut rng = stream(seed, Stream::Model);
        let (m, _) = build_gaussian_mrf(&grid_graph(3, 3), 9, &mut rng).unwrap();
        let p = ParticleSet::standard_normal(8, 9, &mut rng);
        let spec = KernelSpec::new(match variant {
            0 => KernelVariant::Global,
            1 => KernelVariant::Local,
            2 => KernelVariant::RandomSubset { size: 3 },
            _ => KernelVariant::Combined { alpha: 0.5, local: LocalDomain::Local },
        });
        let ks = coordinate_kernels(&spec, &m, &p, &mut rng).unwrap();
        let a = graphical_direction(&p, &m, &ks).unwrap();
        let b = graphical_direction_via(&p, &m, &ks).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn reflection_antisymmetry() {
    let m = std_normal(2);
    let p = ParticleSet::from_rows(&[vec![0.3, -1.2], vec![1.5, 0.4], vec![-0.7, 0.9]]).unwrap();
    let mut q = p.clone();
    q.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
    let k = CoordinateKernel::global(2, 0.8);
    let a = svgd_direction_vanilla(&p, &m, &k).unwrap();
    let b = svgd_direction_vanilla(&q, &m, &k).unwrap();
    for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((u + v).abs() < 1e-14);
    }
}

#[test]
fn adagrad_first_step_is_sign() {
    let mut p = ParticleSet::zeros(2, 2);
    let g = ParticleSet::from_rows(&[vec![3.0, -0.5], vec![0.0, 100.0]]).unwrap();
    let mut st = OptimizerState::new(2, 2, 0.1, 1e-6);
    adagrad_step(&mut p, &g, &mut st, None);
    assert!((p.get(0, 0) - 0.1).abs() < 1e-6);
    assert!((p.get(0, 1) + 0.1).abs() < 1e-6);
    assert_eq!(p.get(1, 0), 0.0);
    assert!((p.get(1, 1) - 0.1).abs() < 1e-9);

    let before = st.accumulator.clone();
    adagrad_step(&mut p, &g, &mut st, None);
    assert!(st.accumulator.iter().zip(&before).all(|(a, b)| a >= b));
}

#[test]
fn adagrad_zero_direction_and_clip() {
    let mut p = ParticleSet::from_rows(&[vec![2.9, 0.5]]).unwrap();
    let mut st = OptimizerState::new(1, 2, 1.0, 1e-6);
    adagrad_step(&mut p, &ParticleSet::zeros(1, 2), &mut st, None);
    assert_eq!(p.as_slice(), &[2.9, 0.5]);

    let clip = ClipBox {
        coords: vec![0],
        lo: -3.0,
        hi: 3.0,
    };
    let g = ParticleSet::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let mut p = ParticleSet::from_rows(&[vec![2.5, 2.5]]).unwrap();
    let mut st = OptimizerState::new(1, 2, 1.0, 1e-6);
    adagrad_step(&mut p, &g, &mut st, Some(&clip));
    assert_eq!(p.get(0, 0), 3.0);
    assert!(p.get(0, 1) > 3.4);
}

#[test]
fn langevin_zero_step_is_identity() {
    let m = std_normal(3);
    let mut rng = stream(1, Stream::Engine);
    let mut p = ParticleSet::standard_normal(4, 3, &mut rng);
    let before = p.clone();
    langevin_step(&mut p, &m, 0.0, &mut rng).unwrap();
    assert_eq!(p, before);
}

#[test]
fn langevin_stationary_variance() {
    let m = std_normal(1);
    let mut c = EngineConfig::langevin();
    c.master_step = 1e-2;
    c.iterations = 2000;
    c.seed = 17;
    let out = run(&m, &c, Init::StandardNormal(500)).unwrap();
    let v = out.particles.variance()[0];
    assert!((0.9..=1.1).contains(&v), "variance {v}");
}

#[test]
fn zero_iterations_returns_initial() {
    let m = std_normal(2);
    let mut c = EngineConfig::graphical();
    c.iterations = 0;
    c.seed = 4;
    let out = run(&m, &c, Init::StandardNormal(5)).unwrap();
    let mut rng = stream(4, Stream::Init);
    assert_eq!(out.particles, ParticleSet::standard_normal(5, 2, &mut rng));
}

#[test]
fn runs_are_deterministic() {
    let mut rng = stream(2, Stream::Model);
    let (m, _) = build_gaussian_mrf(&grid_graph(3, 3), 9, &mut rng).unwrap();
    for spec in [
        KernelSpec::local(),
        KernelSpec::new(KernelVariant::RandomSubset { size: 3 }),
    ] {
        let mut c = EngineConfig::new(Algorithm::GraphicalSvgd, spec);
        c.iterations = 30;
        c.seed = 99;
        let a = run(&m, &c, Init::StandardNormal(10)).unwrap();
        let b = run(&m, &c, Init::StandardNormal(10)).unwrap();
        assert_eq!(a.particles, b.particles);
    }
    let mut c = EngineConfig::langevin();
    c.iterations = 30;
    c.master_step = 0.01;
    let a = run(&m, &c, Init::StandardNormal(10)).unwrap();
    let b = run(&m, &c, Init::StandardNormal(10)).unwrap();
    assert_eq!(a.particles, b.particles);
}

#[test]
fn factorized_graphical_equals_independent_runs() {
    let d = 4;
    let m = std_normal(d);
    let mut c = EngineConfig::graphical();
    c.iterations = 50;
    c.master_step = 0.2;
    c.seed = 8;
    let joint = run(&m, &c, Init::StandardNormal(12)).unwrap();
    let init = run(&m, &EngineConfig { iterations: 0, ..c.clone() }, Init::StandardNormal(12))
        .unwrap()
        .particles;

    let m1 = std_normal(1);
    let mut c1 = EngineConfig::vanilla();
    c1.iterations = 50;
    c1.master_step = 0.2;
    for i in 0..d {
        let col: Vec<Vec<f64>> = init.column(i).map(|v| vec![v]).collect();
        let single = run(&m1, &c1, Init::Particles(ParticleSet::from_rows(&col).unwrap())).unwrap();
        for l in 0..12 {
            assert!((single.particles.get(l, 0) - joint.particles.get(l, i)).abs() < 1e-10);
        }
    }
}

#[test]
fn translation_equivariance() {
    let mut rng = stream(6, Stream::Model);
    let (_, params) = build_gaussian_mrf(&grid_graph(2, 3), 6, &mut rng).unwrap();
    let delta: Vec<f64> = (0..6).map(|j| 0.5 * j as f64 - 1.0).collect();
    let m = gaussian_model(&params).unwrap();
    let shifted = gaussian_model(&params.shifted(&delta)).unwrap();
    let init = ParticleSet::standard_normal(10, 6, &mut rng);
    let mut init2 = init.clone();
    init2.translate(&delta);
    for mut c in [EngineConfig::vanilla(), EngineConfig::graphical()] {
        c.iterations = 40;
        c.master_step = 0.3;
        let a = run(&m, &c, Init::Particles(init.clone())).unwrap();
        let b = run(&shifted, &c, Init::Particles(init2.clone())).unwrap();
        for l in 0..10 {
            for j in 0..6 {
                assert!((a.particles.get(l, j) + delta[j] - b.particles.get(l, j)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fixed_point_at_mode_for_single_particle() {
    let params = GaussianMrfParams::new(vec![vec![2.0]], vec![3.0]).unwrap();
    let m = gaussian_model(&params).unwrap();
    let p = ParticleSet::from_rows(&[vec![1.5]]).unwrap();
    let dir = graphical_direction(&p, &m, &[CoordinateKernel::rbf(vec![0], 1e-8)]).unwrap();
    assert_eq!(dir.get(0, 0), 0.0);
}

#[test]
fn checkpoints_are_recorded() {
    let m = std_normal(2);
    let mut c = EngineConfig::graphical();
    c.iterations = 10;
    c.checkpoint_every = 4;
    let out = run(&m, &c, Init::StandardNormal(5)).unwrap();
    let its: Vec<usize> = out.checkpoints.iter().map(|c| c.0).collect();
    assert_eq!(its, vec![0, 4, 8, 10]);
    assert_eq!(out.log.checkpoints.len(), 4);
    assert_eq!(out.checkpoints.last().unwrap().1, out.particles);
}

#[test]
fn initial_bandwidth_schedule_freezes_kernels() {
    let m = std_normal(2);
    let mut c = EngineConfig::graphical();
    c.bandwidth_schedule = BandwidthSchedule::Initial;
    let mut e = Engine::new(&m, c).unwrap();
    let mut rng = stream(0, Stream::Init);
    let p0 = ParticleSet::standard_normal(6, 2, &mut rng);
    let k0 = e.kernels(&p0).unwrap();
    let p1 = ParticleSet::standard_normal(6, 2, &mut rng);
    assert_eq!(e.kernels(&p1).unwrap(), k0);
}

#[test]
fn non_finite_initial_particle_aborts() {
    let m = std_normal(2);
    let mut p = ParticleSet::zeros(2, 2);
    p.set(1, 1, f64::NAN);
    let err = run(&m, &EngineConfig::graphical(), Init::Particles(p)).unwrap_err();
    assert!(matches!(
        err,
        Error::NonFiniteParticle {
            iteration: 0,
            particle: 1,
            coordinate: 1
        }
    ));
}

#[test]
fn invalid_config_rejected() {
    let m = std_normal(2);
    let mut c = EngineConfig::graphical();
    c.master_step = 0.0;
    assert!(run(&m, &c, Init::StandardNormal(2)).is_err());
}

#[test]
fn audit_factorized_local_reads_own_column() {
    let m = std_normal(5);
    let rep = blanket_access_audit(&m, &EngineConfig::graphical(), Init::StandardNormal(6)).unwrap();
    assert!(rep.passed && rep.blanket_local);
    for c in &rep.coordinates {
        assert_eq!(c.reads, vec![c.coordinate]);
    }
}

#[test]
fn audit_grid_local_and_global() {
    let mut rng = stream(1, Stream::Model);
    let (m, _) = build_gaussian_mrf(&grid_graph(10, 10), 100, &mut rng).unwrap();
    let rep = blanket_access_audit(&m, &EngineConfig::graphical(), Init::StandardNormal(5)).unwrap();
    assert!(rep.passed && rep.blanket_local);
    assert_eq!(rep.max_reads, 5);
    assert_eq!(rep.coordinates[55].reads, vec![45, 54, 55, 56, 65]);

    let rep = blanket_access_audit(&m, &EngineConfig::vanilla(), Init::StandardNormal(5)).unwrap();
    assert!(!rep.blanket_local);
    assert_eq!(rep.max_reads, 100);

    let rep = blanket_access_audit(&m, &EngineConfig::langevin(), Init::StandardNormal(5)).unwrap();
    assert!(rep.passed && rep.blanket_local);
}
