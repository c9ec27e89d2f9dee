use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sketchnewton::calibration::Spectrum;
use sketchnewton::data::{
    parse_libsvm, synth_logistic, synth_ridge_with_noise, LabelMode, LOGISTIC_NOISE_SD,
    RIDGE_NOISE_SD,
};
use sketchnewton::diagnostics::{
    bias_curve as run_bias_curve, bias_point_rows, deterministic_equivalent_check, ensemble_l,
    ensemble_r, wishart_error_norm, CsvRow, Ensemble,
};
use sketchnewton::experiments::{run_size_search, SizeSearchConfig};
use sketchnewton::linalg::{HessianView, SymmetricMatrix};
use sketchnewton::newton::{
    exact_newton_solve, sketched_newton_solve, NewtonOutcome, SolverConfig, StopReason,
};
use sketchnewton::objectives::{
    logistic_objective, quadratic_objective, ridge_objective, Dataset, Objective,
};
use sketchnewton::sketching::SketchDistribution;

use crate::config::{parse_sketch, DataSource, FileConfig, RunConfig, Task};
use crate::EnsembleArg;

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(open_output(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn dist_or_default(cfg: &FileConfig) -> Result<SketchDistribution> {
    cfg.sketch
        .as_deref()
        .map_or(Ok(SketchDistribution::Gaussian), parse_sketch)
}

fn positive_lambda(cfg: &FileConfig, default: f64) -> Result<f64> {
    let l = cfg.lambda.unwrap_or(default);
    if !(l > 0.0 && l.is_finite()) {
        bail!("invalid value for `lambda`: must be positive, got {l}");
    }
    Ok(l)
}

#[derive(Serialize)]
struct SizeSearchCsv {
    alpha: f64,
    sketch: String,
    d_eff: f64,
    trial: usize,
    m_hat: usize,
    success: bool,
}

pub fn table1(
    cfg: &FileConfig,
    d: Option<usize>,
    trials: Option<usize>,
    all_sketches: bool,
) -> Result<()> {
    let scale = cfg.scale.unwrap_or(false);
    let dists = if all_sketches {
        vec![
            SketchDistribution::Gaussian,
            SketchDistribution::Rademacher,
            SketchDistribution::SparseRademacher {
                p: sketchnewton::sketching::DEFAULT_SPARSE_DENSITY,
            },
        ]
    } else {
        vec![dist_or_default(cfg)?]
    };
    let t1 = SizeSearchConfig {
        d: d.or(cfg.d).unwrap_or(if scale { 2000 } else { 10_000 }),
        lambda: positive_lambda(cfg, 1.0)?,
        m0: cfg.m0.unwrap_or(10),
        dists,
        trials: trials.or(cfg.trials).unwrap_or(20),
        seed: cfg.seed.unwrap_or(0),
        ..SizeSearchConfig::default()
    };
    let rows = run_size_search(&t1)?;
    for alpha in &t1.alphas {
        let sub: Vec<_> = rows.iter().filter(|r| r.alpha == *alpha).collect();
        let rate = sub.iter().filter(|r| r.success).count() as f64 / sub.len() as f64;
        eprintln!(
            "alpha={alpha:.3} d_eff={:.1} success_rate={rate:.2}",
            sub[0].effective_dim
        );
    }
    let out: Vec<SizeSearchCsv> = rows
        .into_iter()
        .map(|r| SizeSearchCsv {
            alpha: r.alpha,
            sketch: r.sketch,
            d_eff: r.effective_dim,
            trial: r.trial,
            m_hat: r.m_hat,
            success: r.success,
        })
        .collect();
    write_csv(cfg.output.as_deref(), &out)
}

#[derive(Serialize)]
struct SolveCsv {
    method: &'static str,
    iteration: usize,
    value: f64,
    gap: f64,
    grad_norm: Option<f64>,
    alpha: Option<f64>,
    m_hat: Option<usize>,
    mean_lambda_hat: Option<f64>,
}

#[derive(Serialize)]
struct MethodSummary {
    method: &'static str,
    iterations: usize,
    final_gap: f64,
    stop: StopReason,
    iterations_to_gap_1e_8: Option<usize>,
    seconds: f64,
}

#[derive(Serialize)]
struct RunSummary {
    task: String,
    n: usize,
    d: usize,
    lambda: f64,
    q: usize,
    sketch: String,
    seed: u64,
    optimum: f64,
    methods: Vec<MethodSummary>,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let mode = if cfg.task == Task::Logistic {
        LabelMode::Binary
    } else {
        LabelMode::Raw
    };
    Ok(match &cfg.data {
        DataSource::File(path) => {
            parse_libsvm(path, mode).with_context(|| format!("loading {}", path.display()))?
        }
        DataSource::Synthetic { n, d, noise_sd } => match cfg.task {
            Task::Logistic => {
                synth_logistic(*n, *d, cfg.seed, noise_sd.unwrap_or(LOGISTIC_NOISE_SD))?
            }
            Task::Ridge | Task::Quadratic => {
                synth_ridge_with_noise(*n, *d, cfg.seed, noise_sd.unwrap_or(RIDGE_NOISE_SD))?
            }
        },
    })
}

/// `½θᵀ(XᵀX/n)θ − (Xᵀy/n)ᵀθ + (λ/2)‖θ‖²`
fn quadratic_from_data(data: &Dataset, lambda: f64) -> Result<Box<dyn Objective>> {
    let x = data.x();
    let n = data.n() as f64;
    let h = SymmetricMatrix::from_fn(data.d(), |i, j| {
        (0..data.n()).map(|k| x[(k, i)] * x[(k, j)]).sum::<f64>() / n
    });
    let b: Vec<f64> = (0..data.d())
        .map(|j| (0..data.n()).map(|i| x[(i, j)] * data.y()[i]).sum::<f64>() / n)
        .collect();
    Ok(Box::new(quadratic_objective(h, b, lambda)?))
}

fn build_objective(cfg: &RunConfig, data: Dataset) -> Result<Box<dyn Objective>> {
    Ok(match cfg.task {
        Task::Ridge => Box::new(ridge_objective(data, cfg.lambda)?),
        Task::Logistic => Box::new(logistic_objective(data, cfg.lambda)?),
        Task::Quadratic => quadratic_from_data(&data, cfg.lambda)?,
    })
}

fn solve_rows(method: &'static str, run: &NewtonOutcome, optimum: f64, out: &mut Vec<SolveCsv>) {
    let sketched = method != "exact";
    out.push(SolveCsv {
        method,
        iteration: 0,
        value: run.trace.initial_value,
        gap: run.trace.initial_value - optimum,
        grad_norm: None,
        alpha: None,
        m_hat: None,
        mean_lambda_hat: None,
    });
    for r in &run.trace.records {
        out.push(SolveCsv {
            method,
            iteration: r.t,
            value: r.value,
            gap: r.value - optimum,
            grad_norm: Some(r.grad_norm),
            alpha: Some(r.alpha),
            m_hat: sketched.then_some(r.m_hat),
            mean_lambda_hat: sketched.then_some(r.mean_lambda_hat),
        });
    }
}

pub fn solve(file_cfg: FileConfig, baselines: bool, summary: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::from_file_config(file_cfg)?;
    let data = load_dataset(&cfg)?;
    let (n, d) = (data.n(), data.d());
    let obj = build_objective(&cfg, data)?;
    let theta0 = vec![0.0; d];

    let reference = exact_newton_solve(
        obj.as_ref(),
        &theta0,
        &sketchnewton::experiments::reference_config(),
    )?;
    let optimum = obj.value(&reference.theta);

    let mut runs: Vec<(&'static str, NewtonOutcome, f64)> = Vec::new();
    let timed = |f: &dyn Fn(&SolverConfig) -> sketchnewton::Result<NewtonOutcome>,
                 c: &SolverConfig| {
        let start = Instant::now();
        f(c).map(|o| (o, start.elapsed().as_secs_f64()))
    };
    let sketched = |c: &SolverConfig| sketched_newton_solve(obj.as_ref(), &theta0, c);
    let exact = |c: &SolverConfig| exact_newton_solve(obj.as_ref(), &theta0, c);
    let (o, s) = timed(&sketched, &cfg.solver)?;
    runs.push(("debiased", o, s));
    if baselines {
        let (o, s) = timed(
            &sketched,
            &SolverConfig {
                debias: false,
                ..cfg.solver.clone()
            },
        )?;
        runs.push(("uncorrected", o, s));
        let (o, s) = timed(&exact, &cfg.solver)?;
        runs.push(("exact", o, s));
    }

    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for (name, run, secs) in &runs {
        solve_rows(name, run, optimum, &mut rows);
        methods.push(MethodSummary {
            method: name,
            iterations: run.iterations(),
            final_gap: run.trace.values().last().copied().unwrap_or(f64::NAN) - optimum,
            stop: run.stop,
            iterations_to_gap_1e_8: run.trace.iterations_to_gap(optimum, 1e-8),
            seconds: *secs,
        });
    }
    write_csv(cfg.output.as_deref(), &rows)?;

    let report = RunSummary {
        task: format!("{:?}", cfg.task).to_lowercase(),
        n,
        d,
        lambda: cfg.lambda,
        q: cfg.solver.q,
        sketch: cfg.solver.dist.to_string(),
        seed: cfg.seed,
        optimum,
        methods,
    };
    let json = serde_json::to_string_pretty(&report)?;
    let summary_path = summary.or_else(|| {
        cfg.output.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".summary.json");
            PathBuf::from(s)
        })
    });
    match summary_path {
        Some(p) => {
            std::fs::write(&p, json + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => eprintln!("{json}"),
    }
    Ok(())
}

pub fn bias_curve(
    cfg: &FileConfig,
    which: EnsembleArg,
    d: usize,
    trials: Option<usize>,
) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    let ens = match which {
        EnsembleArg::L => ensemble_l(d, seed)?,
        EnsembleArg::R => ensemble_r(d, seed)?,
        EnsembleArg::Zero => Ensemble {
            name: "zero",
            hessian: HessianView::Diagonal(vec![0.0; d]),
            lambda: 1.0,
        },
    };
    let lambda = cfg.lambda.unwrap_or(ens.lambda);
    let q = cfg.q.unwrap_or(50);
    let curve = run_bias_curve(
        &ens.hessian,
        lambda,
        q,
        dist_or_default(cfg)?,
        trials.or(cfg.trials).unwrap_or(10),
        seed,
    )?;
    eprintln!(
        "ensemble={} d={d} d_eff={:.1}",
        ens.name, curve.effective_dim
    );
    let experiment = format!("bias-{}", ens.name);
    let mut rows = Vec::new();
    for p in &curve.points {
        eprintln!(
            "m={} corrected_median={:.4e} uncorrected_median={:.4e}",
            p.m,
            p.corrected_stats().median,
            p.uncorrected_stats().median
        );
        rows.extend(bias_point_rows(&experiment, p));
    }
    write_csv(cfg.output.as_deref(), &rows)
}

pub fn det_equiv(
    cfg: &FileConfig,
    d: usize,
    m: usize,
    z: f64,
    trials: Option<usize>,
    alpha: Option<f64>,
) -> Result<()> {
    let spec = match alpha {
        Some(a) => Spectrum::power_law(d, a),
        None => Spectrum::new(vec![1.0; d])?,
    };
    let r = deterministic_equivalent_check(
        &spec,
        m,
        z,
        (0, 0),
        dist_or_default(cfg)?,
        trials.or(cfg.trials).unwrap_or(100),
        cfg.seed.unwrap_or(0),
    )?;
    eprintln!(
        "stieltjes deviation {:.3e}, bilinear deviation {:.3e}, budget {:.3e}",
        r.stieltjes_deviation(),
        r.bilinear_deviation(),
        r.budget
    );
    let row = |metric: &str, value: f64| CsvRow {
        experiment: "det-equiv".into(),
        m,
        q: 1,
        trial: 0,
        metric: metric.into(),
        value,
    };
    let rows = vec![
        row("stieltjes_mean", r.stieltjes_mean),
        row("stieltjes_oracle", r.stieltjes_oracle),
        row("bilinear_mean", r.bilinear_mean),
        row("bilinear_oracle", r.bilinear_oracle),
        row("budget", r.budget),
    ];
    write_csv(cfg.output.as_deref(), &rows)
}

pub fn wishart(
    cfg: &FileConfig,
    d: usize,
    m: usize,
    qs: Option<Vec<usize>>,
    trials: Option<usize>,
) -> Result<()> {
    let qs = qs.unwrap_or_else(|| cfg.q.map_or(vec![8, 16, 32], |q| vec![q]));
    let trials = trials.or(cfg.trials).unwrap_or(20);
    let mut rows = Vec::new();
    for q in qs {
        let r = wishart_error_norm(
            d,
            m,
            q,
            dist_or_default(cfg)?,
            trials,
            cfg.seed.unwrap_or(0),
        )?;
        eprintln!(
            "q={q} median={:.4} reference={:.4}",
            r.stats.median, r.reference
        );
        for (trial, &value) in r.samples.iter().enumerate() {
            rows.push(CsvRow {
                experiment: "wishart".into(),
                m,
                q,
                trial,
                metric: "error_norm".into(),
                value,
            });
        }
        rows.push(CsvRow {
            experiment: "wishart".into(),
            m,
            q,
            trial: 0,
            metric: "reference".into(),
            value: r.reference,
        });
    }
    write_csv(cfg.output.as_deref(), &rows)
}
