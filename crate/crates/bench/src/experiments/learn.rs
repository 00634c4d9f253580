//! Learning from samples: polynomial SR-LASSO (`learn`), trained
//! emulation networks (`learn-dnn`) and the Hilbert-valued diffusion
//! target with its error budget (`fem`).
//!
//! Cells are `(m, replicate, noise scale)`. The cell seed depends on `m`
//! and the replicate only, so noise levels share sample points and noise
//! directions. `*_seconds` columns are wall times and are the only
//! columns that differ between reruns at a fixed thread count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use holofit_core::dnn::{train_last_layer, TrainableClass};
use holofit_core::fem1d::ParametricDiffusion;
use holofit_core::legendre::PolynomialExpansion;
use holofit_core::measurement::{build_system, draw_samples, l2_error, MeasurementSystem};
use holofit_core::model::{error_budget, log_factor, TargetConfig, TargetKind};
use holofit_core::multiindex::HyperbolicCross;
use holofit_core::oracles::coefficients;
use holofit_core::solver::{prune_coefficients, solve_with, SRLassoProblem, SolverConfig};
use holofit_core::{IndexSet, TargetFunction};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{in_pool, seconds_since};
use crate::output::{write_outputs, RunContext};
use crate::provenance::{cell_seed, config_digest, BUILD_ID};
use crate::stats::{loglog_slope, median, quantile};
use crate::{check_version, BenchError, Result};

/// How the polynomial space grows with `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IndexPolicy {
    /// Hyperbolic cross of order `⌈m / L(m, ε)⌉`.
    Theory,
    /// Largest hyperbolic cross in the target's dimensions with at most
    /// `factor · m` members.
    Budget { factor: f64 },
    /// Hyperbolic cross of a fixed order.
    Order(u64),
}

impl Default for IndexPolicy {
    fn default() -> Self {
        IndexPolicy::Budget { factor: 2.0 }
    }
}

/// Number of coefficients kept after the solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PrunePolicy {
    None,
    /// `⌈m/4⌉`.
    #[default]
    Quarter,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnnConfig {
    /// Emulation tolerance.
    pub delta: f64,
    /// Write each trained network to `networks/` in the output directory.
    #[serde(default)]
    pub save_networks: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemReferenceConfig {
    /// Tensor Gauss degree of the reference projection; defaults to the
    /// largest degree of `Λ` plus 10.
    #[serde(default)]
    pub quad_degree: Option<u32>,
    /// Sample parameters for the mesh-refinement estimate.
    #[serde(default = "default_disc_points")]
    pub disc_points: usize,
}

fn default_disc_points() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub version: u32,
    pub target: TargetConfig,
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    /// Replicates per `m`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Noise scales; defaults to the target's single scale.
    #[serde(default)]
    pub noise_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub index_set: IndexPolicy,
    #[serde(default)]
    pub prune: PrunePolicy,
    /// Monte Carlo points per L² error estimate.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dnn: Option<DnnConfig>,
    #[serde(default)]
    pub fem_reference: Option<FemReferenceConfig>,
}

fn default_m_grid() -> Vec<usize> {
    vec![50, 100, 200, 400, 800]
}

fn default_seeds() -> usize {
    5
}

fn default_n_mc() -> usize {
    20_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Learn,
    LearnDnn,
    Fem,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Learn => "learn",
            Mode::LearnDnn => "learn-dnn",
            Mode::Fem => "fem",
        }
    }
}

impl LearnConfig {
    pub fn noise_scales(&self) -> Vec<f64> {
        self.noise_grid
            .clone()
            .unwrap_or_else(|| vec![self.target.noise_scale()])
    }

    fn validate(&self, mode: Mode) -> Result<()> {
        check_version(self.version)?;
        if self.m_grid.is_empty() || self.m_grid.iter().any(|&m| m < 3) {
            return Err(BenchError::config("m_grid must be nonempty with every m >= 3"));
        }
        if self.seeds == 0 || self.n_mc == 0 {
            return Err(BenchError::config("seeds and n_mc must be positive"));
        }
        if self.noise_scales().iter().any(|s| !(*s >= 0.0)) {
            return Err(BenchError::config("noise scales must be nonnegative"));
        }
        if let IndexPolicy::Budget { factor } = self.index_set {
            if !(factor > 0.0) {
                return Err(BenchError::config("budget factor must be positive"));
            }
        }
        if mode == Mode::LearnDnn && self.dnn.is_none() {
            return Err(BenchError::config("learn-dnn needs a `dnn` block"));
        }
        if mode == Mode::LearnDnn && self.target.kind == TargetKind::Fem {
            return Err(BenchError::config("learn-dnn supports product targets only"));
        }
        if mode == Mode::Fem && self.target.kind != TargetKind::Fem {
            return Err(BenchError::config("fem needs a target of kind \"fem\""));
        }
        Ok(())
    }
}

/// Hyperbolic cross chosen by `policy` for `m` samples in `d` dimensions,
/// with its order.
pub fn index_set_for(policy: IndexPolicy, m: usize, d: usize, eps: f64) -> Result<(IndexSet, u64)> {
    let dims = d as u32;
    let build = |n: u64| -> Result<IndexSet> {
        Ok(HyperbolicCross::new(n, dims)?.materialize().with_ambient_dim(d)?)
    };
    let order = match policy {
        IndexPolicy::Theory => log_factor(m, eps)?.1 as u64,
        IndexPolicy::Order(n) => n,
        IndexPolicy::Budget { factor } => {
            let cap = factor * m as f64;
            let mut n = 1u64;
            while (build(n + 1)?.len() as f64) <= cap {
                n += 1;
            }
            n
        }
    };
    Ok((build(order)?, order))
}

fn prune_size(policy: PrunePolicy, m: usize, n: usize) -> Option<usize> {
    match policy {
        PrunePolicy::None => None,
        PrunePolicy::Quarter => Some(m.div_ceil(4).min(n)),
        PrunePolicy::Fixed(k) => Some(k.clamp(1, n)),
    }
}

/// One row per cell. Columns that do not apply to the experiment are empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnRow {
    pub build_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub experiment: String,
    pub m: usize,
    pub replicate: usize,
    pub noise_scale: f64,
    pub order: u64,
    pub n_terms: usize,
    /// `ok` or the error that stopped the cell.
    pub status: String,
    pub lambda: Option<f64>,
    pub objective: Option<f64>,
    pub gamma_certificate: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub support_size: Option<usize>,
    pub l2_error: Option<f64>,
    pub l2_stderr: Option<f64>,
    pub pruned_size: Option<usize>,
    pub pruned_l2_error: Option<f64>,
    pub noise_norm: Option<f64>,
    pub solve_seconds: Option<f64>,
    pub delta: Option<f64>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub cert_error: Option<f64>,
    pub perturbation_norm: Option<f64>,
    pub perturbation_bound: Option<f64>,
    pub perturbation_passed: Option<bool>,
    pub dnn_objective: Option<f64>,
    pub dnn_l2_error: Option<f64>,
    pub error_ratio: Option<f64>,
    pub dnn_seconds: Option<f64>,
    pub disc_v: Option<f64>,
    pub disc_l2: Option<f64>,
    pub approx_error: Option<f64>,
    pub measurement_error: Option<f64>,
    pub budget_total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub m: usize,
    pub noise_scale: f64,
    pub cells: usize,
    pub failures: usize,
    pub median_l2: f64,
    pub q1_l2: f64,
    pub q3_l2: f64,
    pub median_pruned_l2: f64,
    pub median_dnn_l2: f64,
    pub max_error_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSlope {
    pub noise_scale: f64,
    /// Log-log slope of the median L² error against `m`.
    pub slope: f64,
    pub dnn_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnSummary {
    pub groups: Vec<GroupSummary>,
    pub slopes: Vec<NoiseSlope>,
}

#[derive(Clone, Debug)]
pub struct LearnOutput {
    pub rows: Vec<LearnRow>,
    pub summary: LearnSummary,
}

/// Per-`m` data shared by all cells with that `m`.
struct Level {
    set: IndexSet,
    order: u64,
    class: Option<std::result::Result<Arc<TrainableClass>, String>>,
    approx_error: Option<std::result::Result<f64, String>>,
}

fn fem_reference_error(
    target: &dyn TargetFunction,
    set: &IndexSet,
    cfg: &FemReferenceConfig,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let degree = cfg.quad_degree.unwrap_or(set.max_degree() + 10);
    let table = coefficients(target, set, degree)?;
    let proj = PolynomialExpansion::new(set.clone(), table.values.clone(), target.gram())?;
    Ok(l2_error(target, &proj, n_mc, seed)?.value)
}

fn levels(cfg: &LearnConfig, mode: Mode, target: &dyn TargetFunction) -> Result<BTreeMap<usize, Level>> {
    let mut out = BTreeMap::new();
    for &m in &cfg.m_grid {
        if out.contains_key(&m) {
            continue;
        }
        let (set, order) = index_set_for(cfg.index_set, m, cfg.target.d, cfg.solver.eps)?;
        log::info!("m = {m}: hyperbolic cross of order {order}, {} terms", set.len());
        let class = match (mode, &cfg.dnn) {
            (Mode::LearnDnn, Some(dnn)) => Some(
                TrainableClass::new(set.clone(), dnn.delta, cfg.target.d)
                    .map(Arc::new)
                    .map_err(|e| e.to_string()),
            ),
            _ => None,
        };
        let approx_error = (mode == Mode::Fem).then(|| {
            let rc = cfg.fem_reference.clone().unwrap_or(FemReferenceConfig {
                quad_degree: None,
                disc_points: default_disc_points(),
            });
            fem_reference_error(target, &set, &rc, cfg.n_mc, cell_seed(cfg.seed, &[m as u64, u64::MAX]))
                .map_err(|e| e.to_string())
        });
        out.insert(
            m,
            Level {
                set,
                order,
                class,
                approx_error,
            },
        );
    }
    Ok(out)
}

struct Cell {
    m: usize,
    replicate: usize,
    noise_index: usize,
    noise: f64,
}

struct CellEnv<'a> {
    cfg: &'a LearnConfig,
    mode: Mode,
    target: &'a dyn TargetFunction,
    fem: Option<&'a ParametricDiffusion>,
    digest: &'a str,
    out_dir: Option<&'a Path>,
}

fn run_cell(env: &CellEnv<'_>, level: &Level, cell: &Cell) -> LearnRow {
    let seed = cell_seed(env.cfg.seed, &[cell.m as u64, cell.replicate as u64]);
    let mut row = LearnRow {
        build_id: BUILD_ID.into(),
        config_digest: env.digest.into(),
        seed,
        experiment: env.mode.name().into(),
        m: cell.m,
        replicate: cell.replicate,
        noise_scale: cell.noise,
        order: level.order,
        n_terms: level.set.len(),
        ..LearnRow::default()
    };
    row.status = match fill_cell(env, level, cell, seed, &mut row) {
        Ok(()) => "ok".into(),
        Err(e) => {
            log::warn!("cell m = {} replicate {}: {e}", cell.m, cell.replicate);
            e.to_string()
        }
    };
    row
}

fn fill_cell(env: &CellEnv<'_>, level: &Level, cell: &Cell, seed: u64, row: &mut LearnRow) -> Result<()> {
    let cfg = env.cfg;
    let d = cfg.target.d;
    let points = draw_samples(cell.m, d, seed)?;
    let sys: MeasurementSystem = build_system(env.target, &level.set, points, cell.noise, seed)?;
    row.noise_norm = Some(sys.noise_norm);
    let lambda = cfg.solver.lambda.resolve(cell.m, cfg.solver.eps)?;
    row.lambda = Some(lambda);
    let opts = cfg.solver.options();

    let t = Instant::now();
    let prob = SRLassoProblem::from_system(&sys, lambda)?;
    let sol = solve_with(&prob, &opts)?;
    row.solve_seconds = Some(seconds_since(t));
    row.objective = Some(sol.objective);
    row.gamma_certificate = Some(sol.gamma_certificate);
    row.iterations = Some(sol.iterations);
    row.converged = Some(sol.converged);
    row.support_size = Some(sol.support().len());

    let gram = env.target.gram();
    let poly = PolynomialExpansion::new(level.set.clone(), sol.z.clone(), gram.clone())?;
    let err = l2_error(env.target, &poly, cfg.n_mc, seed)?;
    row.l2_error = Some(err.value);
    row.l2_stderr = Some(err.std_error);

    if let Some(n) = prune_size(cfg.prune, cell.m, level.set.len()) {
        let (_, pruned) = prune_coefficients(&prob, &level.set, &sol, n)?;
        let p = PolynomialExpansion::new(level.set.clone(), pruned.z, gram)?;
        row.pruned_size = Some(n);
        row.pruned_l2_error = Some(l2_error(env.target, &p, cfg.n_mc, seed)?.value);
    }

    if let Some(class) = &level.class {
        let class = class.as_ref().map_err(|e| BenchError::config(format!("emulation failed: {e}")))?;
        let r = &class.report;
        row.delta = Some(class.delta);
        row.width = Some(r.width);
        row.depth = Some(r.depth);
        row.c1 = Some(r.c1);
        row.c2 = Some(r.c2);
        row.cert_error = Some(r.max_error);
        let t = Instant::now();
        let trained = train_last_layer(class, &sys, lambda, &opts)?;
        row.dnn_seconds = Some(seconds_since(t));
        row.perturbation_norm = Some(trained.perturbation.spectral);
        row.perturbation_bound = Some(trained.perturbation.bound);
        row.perturbation_passed = Some(trained.perturbation.passed);
        row.dnn_objective = Some(trained.solution.objective);
        let e = l2_error(env.target, &trained.network, cfg.n_mc, seed)?.value;
        row.dnn_l2_error = Some(e);
        row.error_ratio = Some(e / err.value);
        if let (Some(dir), Some(true)) = (env.out_dir, cfg.dnn.as_ref().map(|c| c.save_networks)) {
            let dir = dir.join("networks");
            std::fs::create_dir_all(&dir)?;
            let name = format!("m{}_r{}_n{}.hfnet", cell.m, cell.replicate, cell.noise_index);
            trained.network.write_binary(BufWriter::new(File::create(dir.join(name))?))?;
        }
    }

    if let (Some(fem), Some(approx)) = (env.fem, &level.approx_error) {
        let approx = *approx.as_ref().map_err(|e| BenchError::config(format!("reference projection failed: {e}")))?;
        let npts = cfg.fem_reference.as_ref().map_or(default_disc_points(), |c| c.disc_points);
        let probe = draw_samples(npts.max(1), d, seed ^ 0x5eed)?;
        let (mut dv, mut dl) = (0.0f64, 0.0f64);
        for y in probe.iter() {
            let (v, l) = fem.discretization_error(y)?;
            dv = dv.max(v);
            dl = dl.max(l);
        }
        let budget = error_budget(approx, sys.noise_norm, cell.m, dv, sol.gamma_certificate)?;
        row.disc_v = Some(dv);
        row.disc_l2 = Some(dl);
        row.approx_error = Some(approx);
        row.measurement_error = Some(budget.measurement);
        row.budget_total = Some(budget.total);
    }
    Ok(())
}

fn summarize(cfg: &LearnConfig, rows: &[LearnRow]) -> LearnSummary {
    let mut groups = Vec::new();
    let mut slopes = Vec::new();
    for noise in cfg.noise_scales() {
        let mut ms = Vec::new();
        let (mut med, mut med_dnn) = (Vec::new(), Vec::new());
        for &m in &cfg.m_grid {
            if ms.contains(&m) {
                continue;
            }
            let cells: Vec<&LearnRow> = rows.iter().filter(|r| r.m == m && r.noise_scale == noise).collect();
            let pick = |f: fn(&LearnRow) -> Option<f64>| -> Vec<f64> { cells.iter().filter_map(|r| f(r)).collect() };
            let l2 = pick(|r| r.l2_error);
            let g = GroupSummary {
                m,
                noise_scale: noise,
                cells: cells.len(),
                failures: cells.iter().filter(|r| r.status != "ok").count(),
                median_l2: median(&l2),
                q1_l2: quantile(&l2, 0.25),
                q3_l2: quantile(&l2, 0.75),
                median_pruned_l2: median(&pick(|r| r.pruned_l2_error)),
                median_dnn_l2: median(&pick(|r| r.dnn_l2_error)),
                max_error_ratio: pick(|r| r.error_ratio).into_iter().fold(f64::NAN, f64::max),
            };
            ms.push(m);
            med.push(g.median_l2);
            med_dnn.push(g.median_dnn_l2);
            groups.push(g);
        }
        let x: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        slopes.push(NoiseSlope {
            noise_scale: noise,
            slope: loglog_slope(&x, &med),
            dnn_slope: loglog_slope(&x, &med_dnn),
        });
    }
    LearnSummary { groups, slopes }
}

pub fn run(
    cfg: &LearnConfig,
    mode: Mode,
    threads: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<(LearnOutput, RunContext)> {
    cfg.validate(mode)?;
    let digest = config_digest(cfg)?;
    let target = cfg.target.build()?;
    let fem = match (mode, &cfg.target.fem) {
        (Mode::Fem, Some(spec)) => Some(ParametricDiffusion::from_spec(spec)?),
        _ => None,
    };
    let noise = cfg.noise_scales();
    let (res, threads) = in_pool(threads, || -> Result<Vec<LearnRow>> {
        let levels = levels(cfg, mode, target.as_ref())?;
        let cells: Vec<Cell> = cfg
            .m_grid
            .iter()
            .flat_map(|&m| {
                let noise = &noise;
                (0..cfg.seeds).flat_map(move |replicate| {
                    noise.iter().enumerate().map(move |(noise_index, &noise)| Cell {
                        m,
                        replicate,
                        noise_index,
                        noise,
                    })
                })
            })
            .collect();
        let env = CellEnv {
            cfg,
            mode,
            target: target.as_ref(),
            fem: fem.as_ref(),
            digest: &digest,
            out_dir,
        };
        Ok(cells.par_iter().map(|c| run_cell(&env, &levels[&c.m], c)).collect())
    })?;
    let rows = res?;
    let summary = summarize(cfg, &rows);
    for s in &summary.slopes {
        log::info!("noise {}: median-error slope {:.3}", s.noise_scale, s.slope);
    }
    let ctx = RunContext {
        experiment: mode.name().into(),
        config_digest: digest,
        master_seed: cfg.seed,
        threads,
    };
    Ok((LearnOutput { rows, summary }, ctx))
}

pub fn run_to_dir(cfg: &LearnConfig, mode: Mode, threads: Option<usize>, dir: &Path) -> Result<LearnOutput> {
    let t = Instant::now();
    let (out, ctx) = run(cfg, mode, threads, Some(dir))?;
    write_outputs(dir, &ctx, cfg, &out.rows, &out.summary, seconds_since(t))?;
    Ok(out)
}
