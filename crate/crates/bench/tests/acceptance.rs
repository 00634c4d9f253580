//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits with
//! status 1 if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use holofit_bench::experiments::bestterm::{self, BesttermConfig};
use holofit_bench::experiments::learn::{self, LearnConfig, LearnRow, Mode};
use holofit_bench::stats::{loglog_slope, median};
use holofit_core::dnn::emulate_legendre;
use holofit_core::fem1d::{assemble_and_solve, l2_error_vs, DiffusionCoefficient, DiscretizedSpace, FemSpec, ParametricDiffusion};
use holofit_core::legendre::{gauss_rule, psi_eval, tensor_eval};
use holofit_core::measurement::rng;
use holofit_core::multiindex::{hyperbolic_cross, HyperbolicCross};
use holofit_core::solver::{solve, solve_plain, time_per_iteration, SRLassoProblem};
use holofit_core::{IndexSet, MultiIndex, WeightVector};
use nalgebra::DMatrix;
use rand::Rng;
use serde::de::DeserializeOwned;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn config<T: DeserializeOwned>(name: &str) -> Result<T> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "configs", name].iter().collect();
    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
    Ok(serde_json::from_str(&text)?)
}

fn orthonormality() -> Result<Outcome> {
    let t = Instant::now();
    let set = hyperbolic_cross(8)?;
    let kmax = set.max_degree();
    // ⟨Ψ_ν, Ψ_μ⟩ factorizes into 1D integrals, each integrated by the Gauss
    // rule exact for degree ν_j + μ_j.
    let n1 = kmax as usize + 1;
    let mut gram1 = vec![0.0; n1 * n1];
    for a in 0..=kmax {
        for b in 0..=kmax {
            let rule = gauss_rule(a + b);
            gram1[a as usize * n1 + b as usize] =
                rule.integrate(|y| psi_eval(a, y).unwrap() * psi_eval(b, y).unwrap());
        }
    }
    let dims = set.ambient_dim();
    let dense: Vec<Vec<u32>> = set.iter().map(|nu| nu.to_dense(dims)).collect();
    let mut worst = 0.0f64;
    for (i, nu) in dense.iter().enumerate() {
        for (j, mu) in dense.iter().enumerate() {
            let ip: f64 = nu
                .iter()
                .zip(mu)
                .map(|(&a, &b)| gram1[a as usize * n1 + b as usize])
                .product();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 10.0,
        format!("|Λ| = {}, max deviation {worst:.2e}, {secs:.2}s", set.len()),
    )
}

/// Dense enumeration of `{ν ∈ {0..n-1}^{n-1} : ∏(ν_k+1) ≤ n}`, pruned on the
/// running product.
fn brute_force_count(n: u64) -> u64 {
    fn rec(pos: usize, dims: usize, budget: u64) -> u64 {
        if pos == dims {
            return 1;
        }
        (0..budget).map(|k| rec(pos + 1, dims, budget / (k + 1))).sum()
    }
    rec(0, n.saturating_sub(1) as usize, n)
}

fn index_sets() -> Result<Outcome> {
    let mut problems = Vec::new();
    for n in 1..=20u64 {
        let r = HyperbolicCross::infinite_dim(n)?.check_structure();
        if !(r.lower && r.anchored) {
            problems.push(format!("n = {n} not lower/anchored"));
        }
        if r.max_order > n {
            problems.push(format!("n = {n}: streamed order {} > n", r.max_order));
        }
    }
    for n in 1..=10u64 {
        let set = hyperbolic_cross(n)?;
        let brute = brute_force_count(n);
        if set.len() as u64 != brute || !set.is_lower() || !set.is_anchored() {
            problems.push(format!("n = {n}: {} members, brute force {brute}", set.len()));
        }
    }
    for n in 1..=64u64 {
        let hc = HyperbolicCross::infinite_dim(n)?;
        let size = hc.count() as f64;
        let bound = std::f64::consts::E * (n as f64).powf(2.0 + (n as f64).log2());
        if size > bound {
            problems.push(format!("n = {n}: |Λ| = {size} > {bound:.3e}"));
        }
        if hc.max_order() > n {
            problems.push(format!("n = {n}: m(Λ) = {} > n", hc.max_order()));
        }
    }
    for s in 1..=20u32 {
        let set = IndexSet::new((0..s).map(|j| MultiIndex::unit(1, j)));
        let kappa = set.weighted_cardinality(&set.intrinsic_weights())?;
        let at_one: f64 = set.iter().map(|nu| tensor_eval(nu, &[1.0]).unwrap().powi(2)).sum();
        let s2 = (s * s) as f64;
        if kappa != s2 || (at_one - s2).abs() > 1e-9 * s2 {
            problems.push(format!("s = {s}: κ = {kappa}, sup = {at_one}"));
        }
    }
    let detail = if problems.is_empty() {
        format!("|Λ^HCI_64| = {}", HyperbolicCross::infinite_dim(64)?.count())
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn fig_rates() -> Result<Outcome> {
    let t = Instant::now();
    let cfg: BesttermConfig = config("bestterm.json")?;
    let (out, _) = bestterm::run(&cfg, None)?;
    let secs = t.elapsed().as_secs_f64();
    let by_d = |d: usize| out.summary.iter().find(|s| s.d == d).context("dimension missing from config");
    let (d4, d16, d32) = (by_d(4)?, by_d(16)?, by_d(32)?);
    let in_band = |s: f64| (-1.4..=-0.7).contains(&s);
    outcome(
        in_band(d16.slope) && in_band(d32.slope) && d4.exp_rms_log_residual < d4.alg_rms_log_residual && secs < 300.0,
        format!(
            "slopes d=16 {:.3}, d=32 {:.3}; d=4 rms exp {:.3} vs alg {:.3}; {secs:.1}s",
            d16.slope, d32.slope, d4.exp_rms_log_residual, d4.alg_rms_log_residual
        ),
    )
}

fn random_scalar_problem(m: usize, n: usize, seed: u64, lambda: f64) -> Result<SRLassoProblem> {
    let mut r = rng(seed, 7);
    let s = 3f64.sqrt() / (m as f64).sqrt();
    let a = DMatrix::from_fn(m, n, |_, _| r.random_range(-s..=s));
    let f = (0..m).map(|_| r.random_range(-1.0..=1.0)).collect();
    Ok(SRLassoProblem::scalar(a, f, lambda)?)
}

fn solver_correctness() -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let lambda = rng(seed, 8).random_range(0.05..=0.4);
        let p = random_scalar_problem(20, 50, seed, lambda)?;
        let fast = solve(&p, 1e-6, 1_000_000)?;
        let base = solve_plain(&p, 1_000_000, seed)?;
        worst = worst.max(fast.objective - base.objective);
    }
    let mut analytic_misses = 0;
    let mut r = rng(99, 9);
    for _ in 0..20 {
        let f: f64 = r.random_range(-2.0..=2.0);
        let lambda: f64 = loop {
            let l = r.random_range(0.05..=3.0);
            if (l - 1.0f64).abs() > 0.05 {
                break l;
            }
        };
        let p = SRLassoProblem::scalar(DMatrix::from_element(1, 1, 1.0), vec![f], lambda)?;
        let s = solve(&p, 1e-10, 1_000_000)?;
        let (z, obj) = if lambda < 1.0 { (f, lambda * f.abs()) } else { (0.0, f.abs()) };
        if (s.z[(0, 0)] - z).abs() > 1e-8 || (s.objective - obj).abs() > 1e-8 {
            analytic_misses += 1;
        }
    }
    outcome(
        worst <= 1e-6 && analytic_misses == 0,
        format!("max objective excess over baseline {worst:.2e}; analytic family {}/20", 20 - analytic_misses),
    )
}

fn noiseless_medians(rows: &[LearnRow]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ms: Vec<usize> = rows.iter().map(|r| r.m).collect();
    ms.sort_unstable();
    ms.dedup();
    let mut meds = Vec::new();
    for &m in &ms {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.m == m && r.noise_scale == 0.0)
            .map(|r| r.l2_error.with_context(|| format!("failed cell at m = {m}: {}", r.status)))
            .collect::<Result<_>>()?;
        meds.push(median(&errs));
    }
    Ok((ms.iter().map(|&m| m as f64).collect(), meds))
}

fn learning_rate() -> Result<Outcome> {
    let t = Instant::now();
    let cfg: LearnConfig = config("learn.json")?;
    let (out, _) = learn::run(&cfg, Mode::Learn, None, None)?;
    let secs = t.elapsed().as_secs_f64();
    let (ms, meds) = noiseless_medians(&out.rows)?;
    let monotone = meds.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let slope = loglog_slope(&ms, &meds);
    let shown: Vec<String> = meds.iter().map(|e| format!("{e:.2e}")).collect();
    outcome(
        monotone && slope <= -0.5 && secs < 900.0,
        format!("medians [{}], slope {slope:.3}, {secs:.1}s", shown.join(", ")),
    )
}

fn noise_robustness() -> Result<Outcome> {
    let cfg: LearnConfig = config("learn_noise.json")?;
    let (out, _) = learn::run(&cfg, Mode::Learn, None, None)?;
    let err = |m: usize, rep: usize, noise: f64| -> Result<f64> {
        out.rows
            .iter()
            .find(|r| r.m == m && r.replicate == rep && r.noise_scale == noise)
            .and_then(|r| r.l2_error)
            .with_context(|| format!("missing cell m = {m}, replicate {rep}, noise {noise}"))
    };
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for r in &out.rows {
        let doubled = 2.0 * r.noise_scale;
        if r.noise_scale > 0.0 && cfg.noise_grid.as_ref().is_some_and(|g| g.contains(&doubled)) {
            let lhs = err(r.m, r.replicate, doubled)?;
            let rhs = 2.5 * err(r.m, r.replicate, r.noise_scale)? + err(r.m, r.replicate, 0.0)?;
            worst = worst.max(lhs / rhs);
            pairs += 1;
        }
    }
    ensure!(pairs > 0, "no doubled noise pairs in the noise grid");
    outcome(worst <= 1.0, format!("{pairs} pairs, worst ratio to allowance {worst:.3}"))
}

fn emulation_certification(dnn_rows: &[LearnRow]) -> Result<Outcome> {
    let em = emulate_legendre(&hyperbolic_cross(6)?, 1e-2)?;
    let r = &em.report;
    let trained: Vec<&LearnRow> = dnn_rows.iter().filter(|r| r.perturbation_passed.is_some()).collect();
    let perturbed_ok = !trained.is_empty() && trained.iter().all(|r| r.perturbation_passed == Some(true));
    outcome(
        r.passed && r.points >= 10_000 && r.max_error <= 1e-2 && perturbed_ok,
        format!(
            "max error {:.2e} on {} points, width {} (c1 {:.3}), depth {} (c2 {:.3}); perturbation check {}/{} instances",
            r.max_error,
            r.points,
            r.width,
            r.c1,
            r.depth,
            r.c2,
            trained.iter().filter(|r| r.perturbation_passed == Some(true)).count(),
            trained.len()
        ),
    )
}

fn practical_existence(rows: &[LearnRow], secs: f64) -> Result<Outcome> {
    let ratios: Vec<f64> = rows
        .iter()
        .map(|r| r.error_ratio.with_context(|| format!("cell m = {} failed: {}", r.m, r.status)))
        .collect::<Result<_>>()?;
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 2.0,
        format!("{} cells, max network/polynomial error ratio {worst:.4}, {secs:.1}s", ratios.len()),
    )
}

fn fem_backend() -> Result<Outcome> {
    let a = DiffusionCoefficient::constant(1.0)?;
    let pi = std::f64::consts::PI;
    let forcing = move |x: f64| pi * pi * (pi * x).sin();
    let mut errors = Vec::new();
    for k in [15usize, 31, 63, 127] {
        let space = Arc::new(DiscretizedSpace::new(k)?);
        let u = assemble_and_solve(&a, &[], &forcing, &space)?;
        errors.push(l2_error_vs(&u, &|x| (pi * x).sin()));
    }
    let factors: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let rates_ok = factors.iter().all(|f| (3.6..=4.4).contains(f));
    let p = ParametricDiffusion::from_spec(&FemSpec { k: 31, d: 4, r: 0.1, mode_scale: 0.9 })?;
    let mut r = rng(2024, 11);
    let mut solved = 0;
    for _ in 0..100 {
        let y: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..=1.0)).collect();
        if p.solve(&y).is_ok_and(|u| u.coeffs.iter().all(|c| c.is_finite())) {
            solved += 1;
        }
    }
    let shown: Vec<String> = factors.iter().map(|f| format!("{f:.3}")).collect();
    outcome(
        rates_ok && solved == 100,
        format!("halving factors [{}]; parametric solves {solved}/100", shown.join(", ")),
    )
}

fn timed(m: usize, n: usize, k: usize) -> Result<f64> {
    let mut r = rng((m * 1_000_003 + n * 1009 + k) as u64, 12);
    let a = DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..=1.0) / (m as f64).sqrt());
    let f = DMatrix::from_fn(m, k, |_, _| r.random_range(-1.0..=1.0));
    let p = SRLassoProblem::new(a, f, DMatrix::identity(k, k), WeightVector::uniform(n), 0.1)?;
    let iters = (2e8 / (m * n * k) as f64).ceil() as usize;
    let runs: Vec<f64> = (0..5).map(|_| time_per_iteration(&p, iters)).collect::<holofit_core::Result<_>>()?;
    Ok(median(&runs))
}

fn cost_scaling() -> Result<Outcome> {
    let (m, n, k) = (128, 256, 4);
    let base = timed(m, n, k)?;
    let factors = [
        ("m", timed(2 * m, n, k)? / base),
        ("N", timed(m, 2 * n, k)? / base),
        ("K", timed(m, n, 2 * k)? / base),
    ];
    let shown: Vec<String> = factors.iter().map(|(s, f)| format!("{s} {f:.2}x")).collect();
    outcome(
        factors.iter().all(|(_, f)| *f <= 2.5),
        format!("base {:.1}us/iter; doubling {}", base * 1e6, shown.join(", ")),
    )
}

fn report(name: &str, result: Result<Outcome>) -> bool {
    match result {
        Ok(o) => {
            println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            o.pass
        }
        Err(e) => {
            println!("FAIL {name}: error: {e:#}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report("orthonormality", orthonormality());
    ok &= report("index-sets", index_sets());
    ok &= report("fig-rates", fig_rates());
    ok &= report("solver-correctness", solver_correctness());
    ok &= report("learning-rate", learning_rate());
    ok &= report("noise-robustness", noise_robustness());

    let t = Instant::now();
    let dnn = config::<LearnConfig>("learn_dnn.json")
        .and_then(|cfg| Ok(learn::run(&cfg, Mode::LearnDnn, None, None)?.0.rows));
    let secs = t.elapsed().as_secs_f64();
    match &dnn {
        Ok(rows) => {
            ok &= report("emulation-certification", emulation_certification(rows));
            ok &= report("practical-existence", practical_existence(rows, secs));
        }
        Err(e) => {
            ok &= report("emulation-certification", Err(anyhow::anyhow!("{e:#}")));
            ok &= report("practical-existence", Err(anyhow::anyhow!("{e:#}")));
        }
    }

    ok &= report("fem-backend", fem_backend());
    ok &= report("cost-scaling", cost_scaling());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
