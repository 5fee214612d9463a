use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gendyne_bench::{initial, initial_density, step_config};
use gendyne_core::sme::{self, Engine, Increments, Stepper, TrajectoryOptions};

fn fock_steps(c: &mut Criterion) {
    let dw = Increments { dw1: 0.02, dw2: -0.01 };
    let mut group = c.benchmark_group("fock_step");
    for dim in [20, 40, 80] {
        let rho = initial_density(dim);
        for (name, stepper) in [("euler", Stepper::Euler), ("milstein", Stepper::Milstein), ("kraus", Stepper::Kraus)] {
            let cfg = step_config(dim, stepper);
            group.bench_with_input(BenchmarkId::new(name, dim), &rho, |b, rho| {
                b.iter(|| match stepper {
                    Stepper::Euler => sme::fock_sme_step_with(black_box(rho), &cfg, dw).unwrap(),
                    Stepper::Milstein => sme::fock_milstein_step_with(black_box(rho), &cfg, dw).unwrap(),
                    Stepper::Kraus => sme::fock_kraus_step_with(black_box(rho), &cfg, dw).unwrap(),
                })
            });
        }
    }
    group.finish();
}

fn gaussian_step(c: &mut Criterion) {
    let cfg = step_config(20, Stepper::Euler);
    let (m, s) = initial().gaussian_moments().unwrap();
    let dw = Increments { dw1: 0.02, dw2: -0.01 };
    c.bench_function("gaussian_step", |b| b.iter(|| sme::gaussian_sme_step_with(black_box(&m), black_box(&s), &cfg, dw).unwrap()));
}

fn trajectories(c: &mut Criterion) {
    let mut group = c.benchmark_group("trajectory_1000_steps");
    group.sample_size(10);
    for engine in [Engine::Gaussian, Engine::Fock] {
        let mut cfg = step_config(30, Stepper::Euler);
        cfg.n_steps = 1000;
        cfg.engine = engine;
        cfg.positivity_check_every = 100;
        group.bench_function(format!("{engine:?}"), |b| {
            b.iter(|| sme::run_trajectory(&cfg, &initial(), TrajectoryOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fock_steps, gaussian_step, trajectories);
criterion_main!(benches);
