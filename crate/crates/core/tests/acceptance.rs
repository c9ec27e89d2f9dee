//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use sketchnewton::calibration::{
    effective_dimension, lambda_hat_from_eigenvalues, mp_stieltjes_oracle, oracle_lambda_tilde,
    psi, stieltjes_from_eigenvalues, Spectrum, TEST_POINT_RATIO,
};
use sketchnewton::data::{synth_logistic, synth_ridge, LOGISTIC_NOISE_SD};
use sketchnewton::diagnostics::{
    bias_curve, deterministic_equivalent_check, ensemble_l, ensemble_r, median, wishart_error_norm,
};
use sketchnewton::experiments::{reference_config, run_size_search, SizeSearchConfig};
use sketchnewton::linalg::{dot, norm, solve_spd_shifted, HessianView, SymmetricMatrix};
use sketchnewton::newton::{
    exact_newton_solve, exact_newton_step, line_search, sketched_newton_solve, SolverConfig,
};
use sketchnewton::objectives::{
    logistic_objective, quadratic_objective, ridge_objective, Dataset, Objective,
};
use sketchnewton::seed;
use sketchnewton::sketching::SketchDistribution::Gaussian;
use sketchnewton::worker_pool::{calibrate_worker, run_round, RoundSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scale_from_env() -> bool {
    std::env::var("SKETCHNEWTON_SCALE").is_ok_and(|v| v == "1")
}

fn size_search() -> Outcome {
    let d = if scale_from_env() { 2000 } else { 10_000 };
    let cfg = SizeSearchConfig {
        d,
        seed: 2024,
        ..SizeSearchConfig::default()
    };
    let rows = run_size_search(&cfg).expect("table1");
    let expected = [20usize, 160, 640];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &alpha) in cfg.alphas.iter().enumerate() {
        let sub: Vec<_> = rows.iter().filter(|r| r.alpha == alpha).collect();
        let n = sub.len() as f64;
        let success = sub.iter().filter(|r| r.success).count() as f64 / n;
        let hits = sub.iter().filter(|r| r.m_hat == expected[i]).count() as f64 / n;
        let ok = success >= 0.95 && (d != 10_000 || hits >= 0.9);
        pass &= ok;
        parts.push(format!(
            "alpha={alpha:.3} d_eff={:.1} success={success:.2} m_hat={}:{hits:.2}",
            sub[0].effective_dim, expected[i]
        ));
    }
    outcome(pass, format!("d={d} {}", parts.join("; ")))
}

fn calibration_accuracy() -> Outcome {
    let spec = Spectrum::power_law(10_000, 1.0);
    let lambda = 1.0;
    let h = spec.to_hessian();
    let deff = effective_dimension(&spec, lambda).unwrap();
    let m = (4.0 * deff).ceil() as usize;
    let errors = |m: usize, salt: u64| -> Vec<f64> {
        let tilde = oracle_lambda_tilde(&spec, lambda, m).unwrap();
        (0..50u64)
            .into_par_iter()
            .map(|t| {
                let (_, c) =
                    calibrate_worker(&h, lambda, m, Gaussian, seed::mix(77, salt, t + 1), true)
                        .unwrap();
                (c.lambda_hat - tilde).abs() / tilde
            })
            .collect()
    };
    let e1 = errors(m, 1);
    let e4 = errors(4 * m, 4);
    let within = e1.iter().filter(|&&e| e <= 0.15).count() as f64 / e1.len() as f64;
    let ratio = median(&e1) / median(&e4);
    let pass = within >= 0.9 && (1.3..=3.5).contains(&ratio);
    outcome(
        pass,
        format!(
            "m={m} within_15%={within:.2} median_err(m)={:.4} median_err(4m)={:.4} ratio={ratio:.2}",
            median(&e1),
            median(&e4)
        ),
    )
}

fn bias_dominance() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for ens in [ensemble_l(500, 11).unwrap(), ensemble_r(500, 12).unwrap()] {
        let curve = bias_curve(&ens.hessian, ens.lambda, 50, Gaussian, 10, 31).unwrap();
        for p in &curve.points {
            let (c, u) = (p.corrected_stats().median, p.uncorrected_stats().median);
            pass &= c < u;
            parts.push(format!("{}:m={} {c:.3e}<{u:.3e}", ens.name, p.m));
        }
        parts.push(format!("{}:d_eff={:.1}", ens.name, curve.effective_dim));
    }
    outcome(pass, parts.join(" "))
}

fn convergence() -> Outcome {
    let lambda = 1e-3;
    let per_seed: Vec<(Option<usize>, Option<usize>)> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let obj = ridge_objective(synth_ridge(2000, 200, 100 + s).unwrap(), lambda).unwrap();
            let theta0 = vec![0.0; 200];
            let optimum = obj.value(
                &exact_newton_solve(&obj, &theta0, &reference_config())
                    .unwrap()
                    .theta,
            );
            let cfg = SolverConfig {
                q: 10,
                master_seed: 500 + s,
                ..SolverConfig::default()
            };
            let deb = sketched_newton_solve(&obj, &theta0, &cfg).unwrap();
            let unc = sketched_newton_solve(
                &obj,
                &theta0,
                &SolverConfig {
                    debias: false,
                    ..cfg
                },
            )
            .unwrap();
            (
                deb.trace.iterations_to_gap(optimum, 1e-8),
                unc.trace.iterations_to_gap(optimum, 1e-8),
            )
        })
        .collect();
    let as_f = |v: Option<usize>| v.map_or(f64::INFINITY, |x| x as f64);
    let deb: Vec<f64> = per_seed.iter().map(|p| as_f(p.0)).collect();
    let unc: Vec<f64> = per_seed.iter().map(|p| as_f(p.1)).collect();
    let (md, mu) = (median(&deb), median(&unc));
    let ridge_ok = md <= 25.0 && md <= mu;

    let obj = logistic_objective(
        synth_logistic(2000, 200, 900, LOGISTIC_NOISE_SD).unwrap(),
        lambda,
    )
    .unwrap();
    let cfg = SolverConfig {
        q: 10,
        master_seed: 901,
        grad_tol: 1e-6,
        max_iters: 50,
        ..SolverConfig::default()
    };
    let out = sketched_newton_solve(&obj, &vec![0.0; 200], &cfg).unwrap();
    let final_grad = norm(&obj.gradient(&out.theta));
    let monotone = out.trace.values().windows(2).all(|w| w[1] < w[0]);
    let logistic_ok = final_grad <= 1e-6 && out.iterations() <= 50 && monotone;
    outcome(
        ridge_ok && logistic_ok,
        format!(
            "ridge median iters to 1e-8: debiased={md} uncorrected={mu}; logistic iters={} |g|={final_grad:.2e} monotone={monotone}",
            out.iterations()
        ),
    )
}

fn wishart() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for q in [8, 16, 32] {
        let r = wishart_error_norm(200, 50, q, Gaussian, 20, 40 + q as u64).unwrap();
        let ratio = r.stats.median / r.reference;
        let ok = (1.0 / 3.0..=3.0).contains(&ratio)
            && (q * 50 >= 200 || r.samples.iter().all(|&s| s >= 1.0));
        pass &= ok;
        parts.push(format!(
            "q={q} median={:.3} ref={:.3} ratio={ratio:.2}",
            r.stats.median, r.reference
        ));
    }
    // qm < d forces a unit eigen-gap
    let r = wishart_error_norm(200, 50, 2, Gaussian, 10, 3).unwrap();
    let rank_ok = r.samples.iter().all(|&s| s >= 1.0 - 1e-12);
    pass &= rank_ok;
    parts.push(format!(
        "q=2 (qm<d) min={:.3}",
        r.samples.iter().cloned().fold(f64::INFINITY, f64::min)
    ));
    outcome(pass, parts.join("; "))
}

fn deterministic_equivalent() -> Outcome {
    let spec = Spectrum::new(vec![1.0; 800]).unwrap();
    let r = deterministic_equivalent_check(&spec, 400, -1.0, (0, 0), Gaussian, 100, 6).unwrap();
    outcome(
        r.within_budget(),
        format!(
            "s_emp={:.5} s={:.5} dev={:.2e}; bilinear={:.5} oracle={:.5} dev={:.2e}; budget={:.3}",
            r.stieltjes_mean,
            r.stieltjes_oracle,
            r.stieltjes_deviation(),
            r.bilinear_mean,
            r.bilinear_oracle,
            r.bilinear_deviation(),
            r.budget
        ),
    )
}

fn random_data(n: usize, d: usize, seed_: u64, binary: bool) -> Dataset {
    let mut rng = seed::rng(seed_);
    let x = Mat::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if binary {
                f64::from(v > 0.0)
            } else {
                v
            }
        })
        .collect();
    Dataset::new(x, y).unwrap()
}

fn random_vec(d: usize, seed_: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_);
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_psd(d: usize, seed_: u64) -> SymmetricMatrix {
    let mut rng = seed::rng(seed_);
    let a = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymmetricMatrix::symmetrize((a.transpose() * &a * faer::Scale(1.0 / d as f64)).as_ref())
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-12)
}

fn fd_checks(cases: u64) -> bool {
    (0..cases).all(|s| {
        let d = 7;
        let objs: Vec<Box<dyn Objective>> = vec![
            Box::new(ridge_objective(random_data(30, d, s, false), 0.1).unwrap()),
            Box::new(logistic_objective(random_data(30, d, s + 1, true), 0.1).unwrap()),
            Box::new(quadratic_objective(random_psd(d, s + 2), random_vec(d, s + 3), 0.1).unwrap()),
        ];
        let theta = random_vec(d, s + 4);
        let v = random_vec(d, s + 5);
        objs.iter().all(|obj| {
            let h = 1e-5 * (1.0 + norm(&theta));
            let shift = |i: usize, sgn: f64| {
                let mut t = theta.clone();
                t[i] += sgn * h;
                t
            };
            let fd_g: Vec<f64> = (0..d)
                .map(|i| (obj.value(&shift(i, 1.0)) - obj.value(&shift(i, -1.0))) / (2.0 * h))
                .collect();
            let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + h * vi).collect();
            let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t - h * vi).collect();
            let fd_hv: Vec<f64> = obj
                .gradient(&plus)
                .iter()
                .zip(obj.gradient(&minus))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            let mut hv = obj.hessian(&theta).matvec(&v).unwrap();
            let lam = obj.ridge_lambda();
            hv.iter_mut().zip(&v).for_each(|(a, b)| *a += lam * b);
            rel(&fd_g, &obj.gradient(&theta)) <= 1e-4 && rel(&fd_hv, &hv) <= 1e-4
        })
    })
}

fn properties() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    check("finite-difference derivatives", fd_checks(20));

    let mut rng = seed::rng(1234);
    let mut stieltjes_ok = true;
    let mut bracket_ok = true;
    let mut psi_ok = true;
    let mut contraction_ok = true;
    for _ in 0..200 {
        let len = rng.random_range(1..40);
        let eigs: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..5.0)).collect();
        let z1 = -rng.random_range(0.01..20.0);
        let z2 = z1 * rng.random_range(0.05..0.95);
        let (s1, s2) = (
            stieltjes_from_eigenvalues(&eigs, z1).unwrap(),
            stieltjes_from_eigenvalues(&eigs, z2).unwrap(),
        );
        stieltjes_ok &= s1 < s2 && s1 <= -1.0 / z1 * (1.0 + 1e-15);

        let lambda = rng.random_range(0.01..5.0);
        let c = lambda_hat_from_eigenvalues(&eigs, lambda).unwrap();
        bracket_ok &= c.lambda_hat >= TEST_POINT_RATIO * lambda && c.lambda_hat <= lambda;

        let spec = Spectrum::new(eigs.clone()).unwrap();
        let m = rng.random_range(1..60);
        for z in [-0.1, -1.0, -10.0] {
            let s = mp_stieltjes_oracle(&spec, m, z).unwrap();
            psi_ok &= (psi(&spec, m, s) - z).abs() <= 1e-10 * z.abs();
        }

        let mu = rng.random_range(0.001..10.0);
        for gamma in [1.5, 2.0, 4.0] {
            let a = effective_dimension(&spec, mu).unwrap();
            let b = effective_dimension(&spec, gamma * mu).unwrap();
            contraction_ok &= b <= a + 1e-12 && a <= gamma * b + 1e-12;
        }
    }
    check("stieltjes monotone and bounded", stieltjes_ok);
    check("lambda_hat bracket", bracket_ok);
    check("psi round trip", psi_ok);
    check("effective-dimension contraction", contraction_ok);

    let mut newton_ok = true;
    let mut armijo_ok = true;
    let cfg = SolverConfig::default();
    for s in 0..20u64 {
        let d = 10;
        let q = quadratic_objective(random_psd(d, s), random_vec(d, s + 1), 0.1).unwrap();
        let star = solve_spd_shifted(q.matrix(), 0.1, q.linear_term()).unwrap();
        let step = exact_newton_step(&q, &random_vec(d, s + 2), &cfg).unwrap();
        newton_ok &= step.alpha == 1.0 && rel(&step.theta, &star) <= 1e-10;

        let obj = logistic_objective(random_data(50, d, s + 3, true), 0.01).unwrap();
        let theta = random_vec(d, s + 4);
        let g = obj.gradient(&theta);
        let scale = rng.random_range(0.1..50.0);
        let p: Vec<f64> = random_psd(d, s + 5)
            .shifted(1e-3)
            .matvec(&g)
            .unwrap()
            .iter()
            .map(|v| v * scale)
            .collect();
        let ls = line_search(&obj, &theta, &g, &p, &cfg).unwrap();
        let next: Vec<f64> = theta
            .iter()
            .zip(&p)
            .map(|(t, pi)| t - ls.alpha * pi)
            .collect();
        armijo_ok &=
            !ls.capped && obj.value(&next) <= obj.value(&theta) - cfg.a * ls.alpha * dot(&g, &p);
    }
    check("exact Newton one-step on quadratics", newton_ok);
    check("Armijo re-verification", armijo_ok);

    let h: HessianView = Spectrum::power_law(300, 0.8).to_hessian();
    let g = random_vec(300, 9);
    let spec = RoundSpec {
        round: 2,
        gradient: &g,
        hessian: &h,
        lambda: 0.5,
        m: 60,
        dist: Gaussian,
        q: 24,
        master_seed: 17,
        debias: true,
        drop_degenerate: false,
    };
    let runs: Vec<Vec<f64>> = [1, 2, 4, 8]
        .iter()
        .map(|&t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| run_round(&spec).unwrap().direction)
        })
        .collect();
    check(
        "run_round determinism across thread counts",
        runs.windows(2).all(|w| {
            w[0].iter()
                .zip(&w[1])
                .all(|(a, b)| a.to_bits() == b.to_bits())
        }),
    );

    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            "all property checks hold".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 sketch-size search on power-law spectra", size_search),
        ("2 lambda_hat accuracy and rate", calibration_accuracy),
        ("3 bias-correction dominance", bias_dominance),
        ("4 end-to-end convergence", convergence),
        ("5 Wishart error scaling", wishart),
        (
            "6 deterministic-equivalent agreement",
            deterministic_equivalent,
        ),
        ("7 property suites", properties),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {name}: {} ({secs:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of 7 criteria passed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
