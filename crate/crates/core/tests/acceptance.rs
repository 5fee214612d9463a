//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so the
//! lines always reach stdout; exits nonzero if any criterion fails.

use std::time::Instant;

use gendyne_core::fock::{self, FockDensity};
use gendyne_core::gaussian;
use gendyne_core::povm::{self, GendyneOutcome, Unravelling};
use gendyne_core::scheme;
use gendyne_core::sme::{self, Engine, EnsembleOptions, InitialState, SmeConfig, Stepper, TrajectoryOptions};
use num_complex::Complex64;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn povm_ode() -> Verdict {
    let mut worst = 0.0f64;
    for u in [-0.5, 0.0, 0.5] {
        for th in [Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0), Complex64::new(-1.5, 0.5)] {
            let r = povm::eigen_ode_residual(GendyneOutcome::from_complex(th), u, 10.0, 2000).unwrap();
            worst = worst.max(r);
        }
    }
    verdict(worst < 1e-6, format!("max residual {worst:.2e} (tol 1e-6)"))
}

fn povm_completeness() -> Verdict {
    let mut worst = 0.0f64;
    for u in [-0.5, 0.0, 0.5] {
        let total = povm::povm_completeness(u, 15, &povm::completeness_grid(u, 15)).unwrap();
        let dev = (total - fock::CMatrix::identity(15, 15)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    verdict(worst < 1e-3, format!("max |∫dΠ - I| {worst:.2e} (tol 1e-3)"))
}

fn outcome_statistics() -> Verdict {
    let (mut analytic, mut worst_z) = (0.0f64, 0.0f64);
    let samples = 100_000;
    let mut rng = sme::trajectory_rng(3, 0);
    for n in [0.0, 1.0] {
        let rho = fock::thermal_density(n, 60).unwrap();
        let input = gaussian::make_thermal(n).unwrap();
        for u in [0.0, 0.5, 0.9] {
            let law = Unravelling::new(u, n).unwrap();
            let dist = povm::outcome_distribution(&rho, u).unwrap();
            let m = dist.moments(&dist.default_grid()).unwrap();
            analytic = analytic
                .max((m.cov[0][0] - law.l1()).abs())
                .max((m.cov[1][1] - law.l2()).abs())
                .max(m.cov[0][1].abs());
            let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for _ in 0..samples {
                let o = scheme::scheme_outcome_sample(&input, u, &mut rng).unwrap();
                s1 += o.theta1;
                s2 += o.theta2;
                s11 += o.theta1 * o.theta1;
                s22 += o.theta2 * o.theta2;
                s12 += o.theta1 * o.theta2;
            }
            let k = samples as f64;
            let (m1, m2) = (s1 / k, s2 / k);
            let (v1, v2, c12) = (s11 / k - m1 * m1, s22 / k - m2 * m2, s12 / k - m1 * m2);
            let z = [
                (v1 - law.l1()) / (law.l1() * (2.0 / k).sqrt()),
                (v2 - law.l2()) / (law.l2() * (2.0 / k).sqrt()),
                c12 / (law.l1() * law.l2() / k).sqrt(),
            ];
            worst_z = z.iter().fold(worst_z, |a, x| a.max(x.abs()));
        }
    }
    verdict(
        analytic < 1e-8 && worst_z < 3.0,
        format!("analytic cov error {analytic:.2e} (tol 1e-8); Monte Carlo max |z| {worst_z:.2} (tol 3) at 1e5 samples"),
    )
}

fn limit_laws() -> Verdict {
    let mut husimi = 0.0f64;
    for n in [0.0, 1.0] {
        let law = povm::outcome_distribution(&fock::thermal_density(n, 60).unwrap(), 0.0).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let (t1, t2) = (-2.0 + 0.5 * i as f64, -2.0 + 0.5 * j as f64);
                let want = (-(t1 * t1 + t2 * t2) / (1.0 + n)).exp() / (std::f64::consts::PI * (1.0 + n));
                husimi = husimi.max((law.pdf(t1, t2).unwrap() - want).abs());
            }
        }
    }
    let mut rel = 0.0f64;
    for n in [0.0, 1.0] {
        let law = povm::outcome_distribution(&fock::thermal_density(n, 60).unwrap(), 0.999).unwrap();
        let m = law.moments(&law.default_grid()).unwrap();
        let limit = povm::homodyne_limit_distribution(n).unwrap().variance;
        rel = rel.max((m.cov[0][0] / limit - 1.0).abs());
    }
    verdict(
        husimi < 1e-8 && rel < 0.01,
        format!("Husimi max error {husimi:.2e} (tol 1e-8); Υ=0.999 variance vs 1+2N rel. error {rel:.2e} (tol 1e-2)"),
    )
}

fn scheme_realisation() -> Verdict {
    let t_ok = [(-1.0, 0.0), (0.0, 0.5), (0.5, 0.75), (1.0, 1.0)]
        .iter()
        .all(|&(u, t)| scheme::transmissivity_for(u).unwrap() == t);
    let mut residual = 0.0f64;
    for u in [-0.5, 0.0, 0.5] {
        for z in [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 1.0)] {
            let e = scheme::eigenstate_params(z, scheme::transmissivity_for(u).unwrap()).unwrap();
            let ket = e.ket(41).unwrap();
            residual = residual.max(povm::eigen_residual(&ket, u, e.theta(), 40).unwrap());
        }
    }
    let mut overlap = 1.0f64;
    for u in [-0.5, 0.0, 0.5] {
        for th in [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 1.0)] {
            let c = scheme::scheme_povm_crosscheck(u, GendyneOutcome::from_complex(th), 40).unwrap();
            overlap = overlap.min(c.min_overlap());
        }
    }
    verdict(
        t_ok && residual < 1e-6 && overlap > 1.0 - 1e-5,
        format!("T_Υ exact: {t_ok}; eigen-residual {residual:.2e} (tol 1e-6); min overlap 1-{:.2e} (tol 1e-5)", 1.0 - overlap),
    )
}

fn unconditional_recovery() -> Verdict {
    let (n_bath, n_traj, dim) = (1.0, 2000, 40);
    let cfg = SmeConfig::with_t_final(Unravelling::new(0.5, n_bath).unwrap(), 1e-3, 2.0, dim, 6, Engine::Fock).unwrap();
    let init = InitialState::Gaussian {
        mean: [3.0, 0.0],
        cov: [[1.5, 0.0], [0.0, 1.5]],
    };
    let opts = EnsembleOptions {
        sample_every: 500,
        keep_densities: true,
        burn_in: f64::INFINITY,
    };
    let stats = sme::run_ensemble(&cfg, &init, n_traj, &opts).unwrap().fock.unwrap();
    let rho0 = init.density(dim).unwrap();
    let n0 = fock::quadrature_moments(&rho0);
    let n0 = (n0[2] + n0[3] + n0[0] * n0[0] + n0[1] * n0[1] - 2.0) / 4.0;
    let (mut worst_z, mut worst_td) = (0.0f64, 0.0f64);
    let mut parts = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        let k = stats.sample_index(t);
        let acc = &stats.moments[k][5];
        let want = sme::photon_number_decay(n0, n_bath, t);
        let z = (acc.mean() - want) / acc.std_error();
        worst_z = worst_z.max(z.abs());
        let exact = sme::integrate_lindblad(&rho0, n_bath, 1e-3, (t / 1e-3).round() as usize);
        let avg = FockDensity::from_matrix_unchecked(stats.average_density[k].clone());
        worst_td = worst_td.max(fock::trace_distance(&avg, &exact).unwrap());
        parts.push(format!("t={t}: {:.4}±{:.4} vs {want:.4}", acc.mean(), acc.std_error()));
    }
    verdict(
        worst_z < 3.0,
        format!("{} traj; {}; max |z| {worst_z:.2} (tol 3); averaged-state trace distance {worst_td:.2e}", n_traj, parts.join(", ")),
    )
}

fn thermal_steady_state() -> Verdict {
    let n_bath = 1.0;
    let bound = 1.0 / (2.0 * n_bath + 1.0);
    let mut worst = 0.0f64;
    let mut min_var = f64::INFINITY;
    let mut rows = Vec::new();
    for u in [-0.9, -0.5, 0.0, 0.5, 0.9] {
        let cfg = SmeConfig::with_t_final(Unravelling::new(u, n_bath).unwrap(), 1e-3, 8.0, 40, 7, Engine::Both).unwrap();
        let opts = EnsembleOptions {
            sample_every: 1000,
            keep_densities: false,
            burn_in: 4.0,
        };
        let out = sme::run_ensemble(&cfg, &InitialState::Coherent { re: 1.0, im: 0.0 }, 8, &opts).unwrap();
        for stats in [out.fock.unwrap(), out.gaussian.unwrap()] {
            let s = stats.steady_state().unwrap();
            for v in [s.var_q, s.var_p] {
                worst = worst.max((v / (2.0 * n_bath + 1.0) - 1.0).abs());
                min_var = min_var.min(v);
            }
            if stats.engine == Engine::Fock {
                rows.push(format!("Υ={u}: {:.4}±{:.4}", s.var_q, s.var_q_se));
            }
        }
    }
    verdict(
        worst < 0.05 && min_var > bound,
        format!(
            "Fock Δq² {}; max rel. deviation from 2N+1 over both engines {worst:.2e} (tol 5e-2); min {min_var:.4} > bound {bound:.4}: NOT saturated",
            rows.join(", ")
        ),
    )
}

fn max_mean_gap(cfg: &SmeConfig, init: &InitialState) -> f64 {
    let out = sme::run_trajectory(cfg, init, TrajectoryOptions::default()).unwrap();
    let (f, g) = (out.fock.unwrap(), out.gaussian.unwrap());
    f.rows
        .iter()
        .zip(&g.rows)
        .map(|(a, b)| (a.moments.mean_q - b.moments.mean_q).abs().max((a.moments.mean_p - b.moments.mean_p).abs()))
        .fold(0.0, f64::max)
}

fn engine_equivalence() -> Verdict {
    let base = SmeConfig::with_t_final(Unravelling::new(0.5, 1.0).unwrap(), 1e-4, 5.0, 40, 5, Engine::Both).unwrap();
    let inits = [
        InitialState::Coherent { re: 1.0, im: 0.5 },
        InitialState::Gaussian {
            mean: [1.0, 0.0],
            cov: [[2.0, 0.0], [0.0, 3.0]],
        },
        InitialState::Gaussian {
            mean: [0.0, 2.0],
            cov: [[4.0, 1.0], [1.0, 0.5]],
        },
    ];
    let mut cfg = base;
    cfg.stepper = Stepper::Milstein;
    let gaps: Vec<f64> = inits.iter().map(|i| max_mean_gap(&cfg, i)).collect();
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let euler = max_mean_gap(&base, &inits[1]);
    verdict(
        worst < 1e-3,
        format!(
            "Milstein Fock stepper: max mean gap {} (tol 1e-3); Euler-Maruyama Fock stepper on the second state: {euler:.2e}",
            gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

/// `⟨n⟩(t)` of the ensemble-averaged Euler–Maruyama state, which evolves by
/// `ρ ↦ ρ + dt 𝓛ρ` exactly.
fn averaged_euler_photon_number(rho0: &FockDensity, n_bath: f64, dt: f64, t: f64) -> f64 {
    let mut rho = rho0.clone();
    for _ in 0..(t / dt).round() as usize {
        let drift = sme::lindblad_rhs(&rho, n_bath);
        rho = FockDensity::from_matrix_unchecked(rho.matrix() + drift * Complex64::from(dt));
    }
    sme::fock_moments(rho.matrix()).n
}

fn convergence_discipline() -> Verdict {
    let n_bath = 1.0;
    let init = InitialState::Gaussian {
        mean: [3.0, 0.0],
        cov: [[1.5, 0.0], [0.0, 1.5]],
    };
    let rho0 = init.density(40).unwrap();
    let n0 = sme::fock_moments(rho0.matrix()).n;
    let exact = sme::photon_number_decay(n0, n_bath, 1.0);
    let dts = [0.01, 0.005, 0.0025, 0.00125];
    let bias: Vec<f64> = dts.iter().map(|&dt| averaged_euler_photon_number(&rho0, n_bath, dt, 1.0) - exact).collect();
    // Least-squares slope of log|bias| against log dt.
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = bias.iter().map(|b| b.abs().ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let resid: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let slope_se = (resid / (k - 2.0) / sxx).sqrt();
    let ratios: Vec<f64> = bias.windows(2).map(|w| w[0] / w[1]).collect();
    let weak_ok = (slope - 1.0).abs() < (3.0 * slope_se).max(0.02) && ratios.iter().all(|r| (r - 2.0).abs() < 0.1);

    // Monte Carlo check that the engine's ensemble mean follows that recursion.
    let mut mc_z = 0.0f64;
    for &dt in &dts[1..3] {
        let cfg = SmeConfig::with_t_final(Unravelling::new(0.5, n_bath).unwrap(), dt, 1.0, 40, 8, Engine::Fock).unwrap();
        let opts = EnsembleOptions {
            sample_every: (1.0 / dt).round() as usize,
            keep_densities: false,
            burn_in: f64::INFINITY,
        };
        let stats = sme::run_ensemble(&cfg, &init, 256, &opts).unwrap().fock.unwrap();
        let acc = &stats.moments[stats.sample_index(1.0)][5];
        let want = averaged_euler_photon_number(&rho0, n_bath, dt, 1.0);
        mc_z = mc_z.max(((acc.mean() - want) / acc.std_error()).abs());
    }

    // Dimension doubling on one trajectory, every reported number.
    let mut dim_gap = 0.0f64;
    let runs: Vec<_> = [40, 80]
        .iter()
        .map(|&d| {
            let cfg = SmeConfig::with_t_final(Unravelling::new(0.5, n_bath).unwrap(), 1e-3, 1.0, d, 4, Engine::Fock).unwrap();
            sme::run_trajectory(&cfg, &InitialState::Coherent { re: 1.0, im: 0.5 }, TrajectoryOptions::default())
                .unwrap()
                .fock
                .unwrap()
        })
        .collect();
    for (a, b) in runs[0].rows.iter().zip(&runs[1].rows) {
        for (x, y) in a.moments.as_array().iter().zip(b.moments.as_array()) {
            dim_gap = dim_gap.max((x - y).abs());
        }
        for (x, y) in [(a.theta1, b.theta1), (a.theta2, b.theta2)] {
            dim_gap = dim_gap.max((x.unwrap_or(0.0) - y.unwrap_or(0.0)).abs());
        }
        dim_gap = dim_gap.max((a.trace_err - b.trace_err).abs());
    }
    verdict(
        weak_ok && mc_z < 4.0 && dim_gap < 1e-6,
        format!(
            "weak bias of ⟨n⟩(1) {} for dt {:?}; halving ratios {}; slope {slope:.4}±{slope_se:.1e}; ensemble vs recursion max |z| {mc_z:.2} (tol 4); dim 40→80 max change {dim_gap:.2e} (tol 1e-6)",
            bias.iter().map(|b| format!("{b:.3e}")).collect::<Vec<_>>().join(", "),
            dts,
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", "),
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("POVM eigen-equation residual", povm_ode),
        ("POVM completeness", povm_completeness),
        ("outcome statistics", outcome_statistics),
        ("limit laws", limit_laws),
        ("scheme realisation", scheme_realisation),
        ("unconditional recovery", unconditional_recovery),
        ("thermal conditional steady state", thermal_steady_state),
        ("engine equivalence", engine_equivalence),
        ("convergence discipline", convergence_discipline),
    ];
    // `ACCEPTANCE_ONLY=3,9` restricts the run to the listed criteria.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {} [{:.1}s]",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
