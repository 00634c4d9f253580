//! Hilbert-valued weighted square-root LASSO
//!
//! ```text
//! min_Z  λ Σ_j u_j ‖z_j‖_V + ‖(A Z − F) G^{1/2}‖_F
//! ```
//!
//! solved by restarted Chambolle–Pock iteration. The solver runs in
//! `W = Z L` coordinates (`G = L Lᵀ`), where every proximal map is Euclidean,
//! and certifies its output with a duality gap.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{self, gram_norm_sq, MeasurementSystem};
use crate::model::log_factor;
use crate::multiindex::{IndexSet, WeightVector};

#[derive(Clone, Debug)]
pub struct SRLassoProblem {
    a: DMatrix<f64>,
    f: DMatrix<f64>,
    gram: DMatrix<f64>,
    u: WeightVector,
    lambda: f64,
}

impl SRLassoProblem {
    pub fn new(a: DMatrix<f64>, f: DMatrix<f64>, gram: DMatrix<f64>, u: WeightVector, lambda: f64) -> Result<Self> {
        let (m, n, k) = (a.nrows(), a.ncols(), f.ncols());
        if f.nrows() != m || gram.nrows() != k || gram.ncols() != k || u.len() != n {
            return Err(Error::dim(format!(
                "A {m}x{n}, F {}x{k}, G {}x{}, {} weights",
                f.nrows(),
                gram.nrows(),
                gram.ncols(),
                u.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { a, f, gram, u, lambda })
    }

    /// Scalar problem with `G = 1` and unit weights.
    pub fn scalar(a: DMatrix<f64>, f: Vec<f64>, lambda: f64) -> Result<Self> {
        let n = a.ncols();
        let m = f.len();
        Self::new(a, DMatrix::from_vec(m, 1, f), DMatrix::identity(1, 1), WeightVector::uniform(n), lambda)
    }

    /// Problem on a measurement system with intrinsic weights.
    pub fn from_system(sys: &MeasurementSystem, lambda: f64) -> Result<Self> {
        Self::new(
            sys.a.clone(),
            sys.f.clone(),
            sys.gram.clone(),
            sys.index_set.intrinsic_weights(),
            lambda,
        )
    }

    /// Same data with `A` replaced, e.g. by network features.
    pub fn with_matrix(&self, a: DMatrix<f64>) -> Result<Self> {
        Self::new(a, self.f.clone(), self.gram.clone(), self.u.clone(), self.lambda)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn weights(&self) -> &WeightVector {
        &self.u
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn k(&self) -> usize {
        self.f.ncols()
    }

    pub fn objective(&self, z: &DMatrix<f64>) -> Result<f64> {
        if z.nrows() != self.n() || z.ncols() != self.k() {
            return Err(Error::dim(format!(
                "Z is {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                self.n(),
                self.k()
            )));
        }
        let mut row = vec![0.0; self.k()];
        let mut penalty = 0.0;
        for j in 0..self.n() {
            z.row(j).iter().zip(row.iter_mut()).for_each(|(v, r)| *r = *v);
            penalty += self.u.values()[j] * gram_norm_sq(&self.gram, &row).max(0.0).sqrt();
        }
        let resid = &self.a * z - &self.f;
        let mut fit = 0.0;
        for i in 0..self.m() {
            resid.row(i).iter().zip(row.iter_mut()).for_each(|(v, r)| *r = *v);
            fit += gram_norm_sq(&self.gram, &row);
        }
        Ok(self.lambda * penalty + fit.max(0.0).sqrt())
    }
}

/// Rows of `Z` hold `z_ν` in the `V_h` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SRLassoSolution {
    pub z: DMatrix<f64>,
    pub objective: f64,
    /// Upper bound on `objective − min objective`.
    pub gamma_certificate: f64,
    pub iterations: usize,
    /// Whether the certificate reached the requested tolerance.
    pub converged: bool,
    /// Best objective after each restart; nonincreasing.
    pub restart_objectives: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub objective: f64,
    pub gamma_certificate: f64,
    pub iterations: usize,
    pub support_size: usize,
    pub converged: bool,
}

impl SRLassoSolution {
    pub fn support(&self) -> Vec<usize> {
        (0..self.z.nrows())
            .filter(|&j| self.z.row(j).iter().any(|v| *v != 0.0))
            .collect()
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            objective: self.objective,
            gamma_certificate: self.gamma_certificate,
            iterations: self.iterations,
            support_size: self.support().len(),
            converged: self.converged,
        }
    }

    /// Magic, `u64` header length, JSON summary with shape, then `Z`
    /// row-major little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&SolutionHeader {
            n: self.z.nrows(),
            k: self.z.ncols(),
            summary: self.summary(),
        })?;
        w.write_all(SOLUTION_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        measurement::write_row_major(&self.z, &mut w)
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SOLUTION_MAGIC {
            return Err(Error::Format("not a solution container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: SolutionHeader = serde_json::from_slice(&header)?;
        let z = measurement::read_row_major(&mut r, header.n, header.k)?;
        Ok(Self {
            z,
            objective: header.summary.objective,
            gamma_certificate: header.summary.gamma_certificate,
            iterations: header.summary.iterations,
            converged: header.summary.converged,
            restart_objectives: Vec::new(),
        })
    }
}

const SOLUTION_MAGIC: &[u8; 8] = b"HFSOL\x00\x01\n";

#[derive(Serialize, Deserialize)]
struct SolutionHeader {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    summary: SolutionSummary,
}

/// Block soft-thresholding of each row in the `V`-norm.
pub fn prox_group(z: &DMatrix<f64>, thresholds: &[f64], gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if thresholds.len() != z.nrows() || gram.nrows() != z.ncols() {
        return Err(Error::dim("thresholds or Gram do not match Z"));
    }
    if thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::domain("thresholds must be nonnegative"));
    }
    let mut out = z.clone();
    let mut row = vec![0.0; z.ncols()];
    for (j, &t) in thresholds.iter().enumerate() {
        z.row(j).iter().zip(row.iter_mut()).for_each(|(v, r)| *r = *v);
        let norm = gram_norm_sq(gram, &row).max(0.0).sqrt();
        let scale = if norm <= t { 0.0 } else { 1.0 - t / norm };
        out.row_mut(j).scale_mut(scale);
    }
    Ok(out)
}

/// `λ = 1 / (4 √(m / L(m, ε)))`.
pub fn default_lambda(m: usize, eps: f64) -> Result<f64> {
    let (l, _) = log_factor(m, eps)?;
    Ok(1.0 / (4.0 * (m as f64 / l).sqrt()))
}

/// How to choose `λ` from the number of samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaPolicy {
    Fixed(f64),
    /// [`default_lambda`] with the configured `ε`.
    Default,
    /// `c / √m`.
    Scaled(f64),
}

impl LambdaPolicy {
    pub fn resolve(&self, m: usize, eps: f64) -> Result<f64> {
        match *self {
            LambdaPolicy::Fixed(v) => Ok(v),
            LambdaPolicy::Default => default_lambda(m, eps),
            LambdaPolicy::Scaled(c) => Ok(c / (m as f64).sqrt()),
        }
    }
}

impl Serialize for LambdaPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = match *self {
            LambdaPolicy::Fixed(v) => serde_json::json!(v),
            LambdaPolicy::Default => serde_json::json!("default"),
            LambdaPolicy::Scaled(c) => serde_json::json!({ "scaled": c }),
        };
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LambdaPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Number(n) => {
                let x = n.as_f64().ok_or_else(|| D::Error::custom("bad lambda"))?;
                if x > 0.0 {
                    Ok(LambdaPolicy::Fixed(x))
                } else {
                    Err(D::Error::custom("lambda must be positive"))
                }
            }
            serde_json::Value::String(s) if s == "default" => Ok(LambdaPolicy::Default),
            serde_json::Value::Object(o) if o.len() == 1 => match o.get("scaled").and_then(|c| c.as_f64()) {
                Some(c) if c > 0.0 => Ok(LambdaPolicy::Scaled(c)),
                _ => Err(D::Error::custom("expected {\"scaled\": c} with c > 0")),
            },
            _ => Err(D::Error::custom(format!(
                "lambda must be a number, \"default\" or {{\"scaled\": c}}, got {v}"
            ))),
        }
    }
}

/// Solver settings as they appear in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: LambdaPolicy,
    pub gamma: f64,
    pub max_iters: usize,
    #[serde(default = "default_restart_factor")]
    pub restart_factor: f64,
    #[serde(default)]
    pub seed: u64,
    /// `ε` passed to [`default_lambda`].
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_restart_factor() -> f64 {
    0.5
}

fn default_eps() -> f64 {
    0.1
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaPolicy::Default,
            gamma: 1e-6,
            max_iters: 100_000,
            restart_factor: default_restart_factor(),
            seed: 0,
            eps: default_eps(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            gamma: self.gamma,
            max_iters: self.max_iters,
            restart_factor: self.restart_factor,
            seed: self.seed,
            ..SolveOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub gamma: f64,
    pub max_iters: usize,
    /// Ratio between consecutive restart tolerances, in `(0, 1)`.
    pub restart_factor: f64,
    /// Iterations between gap evaluations.
    pub check_every: usize,
    /// Seeds the power-iteration start vector.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-6,
            max_iters: 100_000,
            restart_factor: 0.5,
            check_every: 16,
            seed: 0,
        }
    }
}

/// `‖A‖₂` by power iteration on `AᵀA`, inflated by 1% to stay an upper bound.
pub fn operator_norm(a: &DMatrix<f64>, seed: u64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut r = measurement::rng(seed, u64::MAX);
    let mut v = DMatrix::<f64>::from_fn(n, 1, |_, _| r.sample(StandardNormal));
    v /= v.norm();
    let mut av = DMatrix::<f64>::zeros(a.nrows(), 1);
    let mut est = 0.0;
    for it in 0..5000 {
        av.gemm(1.0, a, &v, 0.0);
        v.gemm_tr(1.0, a, &av, 0.0);
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let prev = est;
        est = norm.sqrt();
        if it >= 50 && (est - prev).abs() <= 1e-10 * est {
            break;
        }
    }
    est * 1.01
}

/// Problem data in `W` coordinates.
struct Transformed<'a> {
    a: &'a DMatrix<f64>,
    ft: DMatrix<f64>,
    /// `λ u_j`.
    thr: Vec<f64>,
    /// Lower-triangular Cholesky factor of `G`; `None` when `G = I`.
    l: Option<DMatrix<f64>>,
}

impl<'a> Transformed<'a> {
    fn new(prob: &'a SRLassoProblem) -> Result<Self> {
        let k = prob.k();
        let identity = prob.gram == DMatrix::identity(k, k);
        let l = if identity {
            None
        } else {
            Some(
                prob.gram
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Numeric("Gram matrix is not positive definite".into()))?
                    .l(),
            )
        };
        let ft = match &l {
            None => prob.f.clone(),
            Some(l) => &prob.f * l,
        };
        let thr = prob.u.values().iter().map(|u| prob.lambda * u).collect();
        Ok(Self { a: &prob.a, ft, thr, l })
    }

    fn to_z(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.l {
            None => Ok(w.clone()),
            // Z = W L^{-1}  ⇔  Lᵀ Zᵀ = Wᵀ.
            Some(l) => l
                .transpose()
                .solve_upper_triangular(&w.transpose())
                .map(|zt| zt.transpose())
                .ok_or_else(|| Error::Numeric("singular Cholesky factor".into())),
        }
    }

    /// `λ Σ u_j ‖w_j‖ + ‖AW − F̃‖_F` given `AW`.
    fn primal(&self, w: &DMatrix<f64>, aw: &DMatrix<f64>) -> f64 {
        let penalty: f64 = row_norms(w).iter().zip(&self.thr).map(|(n, t)| n * t).sum();
        penalty + frob_dist(aw, &self.ft)
    }

    /// `−⟨F̃, Ξ⟩` after scaling `Ξ` into the dual feasible set.
    fn dual(&self, xi: &DMatrix<f64>, at_xi: &DMatrix<f64>) -> f64 {
        let mut scale = xi.norm().max(1.0);
        for (n, t) in row_norms(at_xi).iter().zip(&self.thr) {
            scale = scale.max(n / t);
        }
        -self.ft.dot(xi) / scale
    }

    /// Best dual bound among `Ξ` and the residual direction at `W`.
    fn dual_bound(&self, xi: &DMatrix<f64>, aw: &DMatrix<f64>, buf: &mut DMatrix<f64>) -> f64 {
        buf.gemm_tr(1.0, self.a, xi, 0.0);
        let mut best = self.dual(xi, buf);
        let resid = aw - &self.ft;
        let rn = resid.norm();
        if rn > 0.0 {
            let dir = resid / rn;
            buf.gemm_tr(1.0, self.a, &dir, 0.0);
            best = best.max(self.dual(&dir, buf));
        }
        best
    }
}

fn row_norms(w: &DMatrix<f64>) -> Vec<f64> {
    let n = w.nrows();
    let mut acc = vec![0.0; n];
    for col in w.column_iter() {
        for (a, v) in acc.iter_mut().zip(col.iter()) {
            *a += v * v;
        }
    }
    acc.iter_mut().for_each(|a| *a = a.sqrt());
    acc
}

fn frob_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn prox_rows_inplace(w: &mut DMatrix<f64>, thr: &[f64], tau: f64) {
    let norms = row_norms(w);
    let n = w.nrows();
    let scales: Vec<f64> = norms
        .iter()
        .zip(thr)
        .map(|(nr, t)| if *nr <= tau * t { 0.0 } else { 1.0 - tau * t / nr })
        .collect();
    for (idx, v) in w.as_mut_slice().iter_mut().enumerate() {
        *v *= scales[idx % n];
    }
}

/// Chambolle–Pock iteration state with `τ = σ = 0.99/‖A‖`.
///
/// Public so the per-iteration cost can be timed in isolation.
pub struct PrimalDual<'a> {
    t: Transformed<'a>,
    tau: f64,
    sigma: f64,
    w: DMatrix<f64>,
    aw: DMatrix<f64>,
    xi: DMatrix<f64>,
    at_xi: DMatrix<f64>,
    w_new: DMatrix<f64>,
    aw_new: DMatrix<f64>,
    iterations: usize,
}

impl<'a> PrimalDual<'a> {
    pub fn new(prob: &'a SRLassoProblem, seed: u64) -> Result<Self> {
        let t = Transformed::new(prob)?;
        let norm = operator_norm(&prob.a, seed);
        let step = if norm > 0.0 { 0.99 / norm } else { 0.0 };
        let (m, n, k) = (prob.m(), prob.n(), prob.k());
        Ok(Self {
            t,
            tau: step,
            sigma: step,
            w: DMatrix::zeros(n, k),
            aw: DMatrix::zeros(m, k),
            xi: DMatrix::zeros(m, k),
            at_xi: DMatrix::zeros(n, k),
            w_new: DMatrix::zeros(n, k),
            aw_new: DMatrix::zeros(m, k),
            iterations: 0,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn reset_to(&mut self, w: DMatrix<f64>, xi: DMatrix<f64>) {
        self.aw.gemm(1.0, self.t.a, &w, 0.0);
        self.w = w;
        self.xi = xi;
    }

    /// One primal-dual step: two products with `A`, two proximal maps.
    pub fn step(&mut self) -> Result<()> {
        let (tau, sigma) = (self.tau, self.sigma);
        self.at_xi.gemm_tr(1.0, self.t.a, &self.xi, 0.0);
        for ((wn, w), g) in self.w_new.iter_mut().zip(self.w.iter()).zip(self.at_xi.iter()) {
            *wn = w - tau * g;
        }
        prox_rows_inplace(&mut self.w_new, &self.t.thr, tau);
        self.aw_new.gemm(1.0, self.t.a, &self.w_new, 0.0);
        // Ξ += σ (A(2W⁺ − W) − F̃), then project onto the unit ball.
        for ((x, (an, ao)), f) in self
            .xi
            .iter_mut()
            .zip(self.aw_new.iter().zip(self.aw.iter()))
            .zip(self.t.ft.iter())
        {
            *x += sigma * (2.0 * an - ao - f);
        }
        let norm = self.xi.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iterations,
            });
        }
        if norm > 1.0 {
            self.xi /= norm;
        }
        std::mem::swap(&mut self.w, &mut self.w_new);
        std::mem::swap(&mut self.aw, &mut self.aw_new);
        self.iterations += 1;
        Ok(())
    }
}

/// Restarted primal-dual solve with tolerance `gamma` and iteration `budget`.
pub fn solve(prob: &SRLassoProblem, gamma: f64, budget: usize) -> Result<SRLassoSolution> {
    solve_with(
        prob,
        &SolveOptions {
            gamma,
            max_iters: budget,
            ..SolveOptions::default()
        },
    )
}

/// Restarted primal-dual solve.
///
/// Restart tolerances follow `ε_k = ε_0 · restart_factor^k` with
/// `ε_0 = objective(0)`. Every `check_every` iterations the duality gaps
/// of the last iterate and the running average are evaluated; once the
/// smaller one drops below the current `ε_k` the iteration restarts from
/// that point. The returned iterate is the best primal point seen, and its
/// certificate is its objective minus the best dual bound seen.
pub fn solve_with(prob: &SRLassoProblem, opts: &SolveOptions) -> Result<SRLassoSolution> {
    if !(opts.gamma > 0.0) && opts.max_iters == 0 {
        return Err(Error::domain("need gamma > 0 or an iteration budget"));
    }
    if !(opts.restart_factor > 0.0 && opts.restart_factor < 1.0) {
        return Err(Error::domain("restart factor must lie in (0, 1)"));
    }
    let mut pd = PrimalDual::new(prob, opts.seed)?;
    let (m, n, k) = (prob.m(), prob.n(), prob.k());
    let zero_w = DMatrix::zeros(n, k);
    let obj0 = pd.t.ft.norm();
    let mut best_w = zero_w.clone();
    let mut best_primal = obj0;
    let mut best_dual = 0.0f64;
    let mut restart_objectives = vec![best_primal];
    if pd.tau == 0.0 || obj0 == 0.0 {
        return finish(prob, &pd.t, best_w, best_primal, 0.0, 0, true, restart_objectives);
    }

    let mut eps = obj0 * opts.restart_factor;
    let check = opts.check_every.max(1);
    let mut sum_w = DMatrix::<f64>::zeros(n, k);
    let mut sum_xi = DMatrix::<f64>::zeros(m, k);
    let mut count = 0usize;
    let mut buf_n = DMatrix::<f64>::zeros(n, k);
    let mut buf_m = DMatrix::<f64>::zeros(m, k);

    while pd.iterations < opts.max_iters {
        pd.step()?;
        sum_w += &pd.w;
        sum_xi += &pd.xi;
        count += 1;
        if pd.iterations % check != 0 && pd.iterations < opts.max_iters {
            continue;
        }

        let p_last = pd.t.primal(&pd.w, &pd.aw);
        let d_last = pd.t.dual_bound(&pd.xi, &pd.aw, &mut buf_n);
        let avg_w = &sum_w / count as f64;
        let avg_xi = &sum_xi / count as f64;
        buf_m.gemm(1.0, pd.t.a, &avg_w, 0.0);
        let p_avg = pd.t.primal(&avg_w, &buf_m);
        let d_avg = pd.t.dual_bound(&avg_xi, &buf_m, &mut buf_n);
        if ![p_last, d_last, p_avg, d_avg].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: pd.iterations,
            });
        }
        best_dual = best_dual.max(d_last).max(d_avg);
        if p_last < best_primal {
            best_primal = p_last;
            best_w.copy_from(&pd.w);
        }
        if p_avg < best_primal {
            best_primal = p_avg;
            best_w.copy_from(&avg_w);
        }
        if best_primal - best_dual <= opts.gamma {
            restart_objectives.push(best_primal);
            break;
        }

        let gap_last = p_last - d_last;
        let gap_avg = p_avg - d_avg;
        let gap = gap_last.min(gap_avg);
        if gap <= eps {
            if gap_avg < gap_last {
                pd.reset_to(avg_w, avg_xi);
            }
            while eps >= gap && eps > opts.gamma * 1e-3 {
                eps *= opts.restart_factor;
            }
            sum_w.fill(0.0);
            sum_xi.fill(0.0);
            count = 0;
            restart_objectives.push(best_primal);
            log::trace!("restart at {} gap {gap:.3e} best {best_primal:.12e}", pd.iterations);
        }
    }
    let iterations = pd.iterations;
    let cert = (best_primal - best_dual).max(0.0);
    let converged = cert <= opts.gamma;
    if !converged {
        log::debug!("solver budget exhausted after {iterations} iterations, gap {cert:.3e}");
    }
    finish(prob, &pd.t, best_w, best_primal, best_dual, iterations, converged, restart_objectives)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prob: &SRLassoProblem,
    t: &Transformed<'_>,
    w: DMatrix<f64>,
    primal: f64,
    dual: f64,
    iterations: usize,
    converged: bool,
    restart_objectives: Vec<f64>,
) -> Result<SRLassoSolution> {
    let z = t.to_z(&w)?;
    let objective = prob.objective(&z)?;
    // The certificate refers to the recomputed objective, which can differ
    // from the W-coordinate value by rounding.
    let gamma_certificate = (objective - dual).max(0.0);
    log::trace!("W-objective {primal:.15e}, Z-objective {objective:.15e}");
    Ok(SRLassoSolution {
        z,
        objective,
        gamma_certificate,
        iterations,
        converged,
        restart_objectives,
    })
}

/// Unrestarted primal-dual iteration from zero for exactly `iters` steps.
/// Returns whichever of the last and the averaged iterate has the smaller
/// objective.
pub fn solve_plain(prob: &SRLassoProblem, iters: usize, seed: u64) -> Result<SRLassoSolution> {
    let mut pd = PrimalDual::new(prob, seed)?;
    let (m, n, k) = (prob.m(), prob.n(), prob.k());
    let mut sum_w = DMatrix::<f64>::zeros(n, k);
    let mut sum_xi = DMatrix::<f64>::zeros(m, k);
    if pd.tau > 0.0 {
        for _ in 0..iters {
            pd.step()?;
            sum_w += &pd.w;
            sum_xi += &pd.xi;
        }
    }
    let count = pd.iterations.max(1) as f64;
    let avg_w = sum_w / count;
    let avg_xi = sum_xi / count;
    let mut buf_m = DMatrix::zeros(m, k);
    let mut buf_n = DMatrix::zeros(n, k);
    let p_last = pd.t.primal(&pd.w, &pd.aw);
    buf_m.gemm(1.0, pd.t.a, &avg_w, 0.0);
    let p_avg = pd.t.primal(&avg_w, &buf_m);
    let d_avg = pd.t.dual_bound(&avg_xi, &buf_m, &mut buf_n);
    let aw = pd.aw.clone();
    let d_last = pd.t.dual_bound(&pd.xi, &aw, &mut buf_n);
    let dual = d_last.max(d_avg).max(0.0);
    let (w, p) = if p_last <= p_avg { (pd.w.clone(), p_last) } else { (avg_w, p_avg) };
    let iterations = pd.iterations;
    finish(prob, &pd.t, w, p, dual, iterations, false, vec![p])
}

/// Empirical least-squares fit on the columns `support` of a system.
#[derive(Clone, Debug)]
pub struct OracleFit {
    /// `N × K`, zero outside the support.
    pub z: DMatrix<f64>,
    /// `σ_min²` of the selected columns; zero signals rank deficiency.
    pub alpha: f64,
    pub rank_deficient: bool,
}

/// Least-squares fit over `P_{S;V}`, where `S` is given as positions in
/// the system's index set. Rank-deficient column sets get the
/// minimum-norm solution.
pub fn least_squares_oracle(support: &[usize], sys: &MeasurementSystem) -> Result<OracleFit> {
    let (m, n) = (sys.m(), sys.n());
    if support.len() > m {
        return Err(Error::domain(format!("|S| = {} exceeds m = {m}", support.len())));
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= n) {
        return Err(Error::dim(format!("support position {bad} out of range")));
    }
    let mut z = DMatrix::zeros(n, sys.k());
    if support.is_empty() {
        return Ok(OracleFit { z, alpha: 0.0, rank_deficient: false });
    }
    let sub = sys.a.select_columns(support);
    let svd = sub.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank_deficient = !(smin > smax * 1e-12);
    let coef = if rank_deficient {
        svd.solve(&sys.f, smax * 1e-12)
            .map_err(|e| Error::Numeric(e.to_string()))?
    } else {
        let qr = sub.qr();
        let qtf = qr.q().transpose() * &sys.f;
        qr.r()
            .solve_upper_triangular(&qtf)
            .ok_or_else(|| Error::Numeric("singular R factor".into()))?
    };
    for (row, &j) in support.iter().enumerate() {
        z.row_mut(j).copy_from(&coef.row(row));
    }
    Ok(OracleFit {
        z,
        alpha: if rank_deficient { 0.0 } else { smin * smin },
        rank_deficient,
    })
}

/// Keep the `n` rows of largest `V`-norm (ties broken by position) and
/// zero the rest.
///
/// The returned certificate bounds the pruned objective's suboptimality
/// using the dual bound implied by the input certificate.
pub fn prune_coefficients(
    prob: &SRLassoProblem,
    set: &IndexSet,
    sol: &SRLassoSolution,
    n: usize,
) -> Result<(IndexSet, SRLassoSolution)> {
    let total = sol.z.nrows();
    if n == 0 || n > total || set.len() != total {
        return Err(Error::domain(format!("prune size {n} for {total} rows")));
    }
    let keep = top_rows(&sol.z, prob.gram(), n);
    let mut z = DMatrix::zeros(total, sol.z.ncols());
    for &j in &keep {
        z.row_mut(j).copy_from(&sol.z.row(j));
    }
    let objective = prob.objective(&z)?;
    let lower = sol.objective - sol.gamma_certificate;
    Ok((
        set.select(&keep),
        SRLassoSolution {
            z,
            objective,
            gamma_certificate: (objective - lower).max(0.0),
            iterations: sol.iterations,
            converged: sol.converged,
            restart_objectives: sol.restart_objectives.clone(),
        },
    ))
}

/// Positions of the `n` largest `V`-norm rows, in ascending position order.
pub fn top_rows(z: &DMatrix<f64>, gram: &DMatrix<f64>, n: usize) -> Vec<usize> {
    let mut row = vec![0.0; z.ncols()];
    let norms: Vec<f64> = (0..z.nrows())
        .map(|j| {
            z.row(j).iter().zip(row.iter_mut()).for_each(|(v, r)| *r = *v);
            gram_norm_sq(gram, &row)
        })
        .collect();
    let mut order: Vec<usize> = (0..z.nrows()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order.truncate(n);
    order.sort_unstable();
    order
}

/// Wall time of `iters` bare primal-dual steps, in seconds per step.
pub fn time_per_iteration(prob: &SRLassoProblem, iters: usize) -> Result<f64> {
    let mut pd = PrimalDual::new(prob, 0)?;
    pd.step()?;
    let start = Instant::now();
    for _ in 0..iters {
        pd.step()?;
    }
    Ok(start.elapsed().as_secs_f64() / iters.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{build_system, draw_samples};
    use crate::model::{ProductTarget, TargetFunction};
    use crate::multiindex::hyperbolic_cross;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_problem(m: usize, n: usize, seed: u64, lambda: f64) -> SRLassoProblem {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| r.sample::<f64, _>(StandardNormal) / (m as f64).sqrt());
        let f = (0..m).map(|_| r.sample(StandardNormal)).collect();
        SRLassoProblem::scalar(a, f, lambda).unwrap()
    }

    fn one_by_one(f: f64, lambda: f64) -> SRLassoProblem {
        SRLassoProblem::scalar(DMatrix::from_element(1, 1, 1.0), vec![f], lambda).unwrap()
    }

    #[test]
    fn objective_trivial_cases() {
        let p = random_problem(5, 7, 1, 0.3);
        assert!((p.objective(&DMatrix::zeros(7, 1)).unwrap() - p.f().norm()).abs() < 1e-15);
        let q = one_by_one(1.5, 0.4);
        let z = DMatrix::from_element(1, 1, -0.5);
        assert!((q.objective(&z).unwrap() - (0.4 * 0.5 + 2.0)).abs() < 1e-15);
        assert!(p.objective(&DMatrix::zeros(6, 1)).is_err());
    }

    #[test]
    fn objective_matches_termwise_sum() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let (m, n, k) = (6, 4, 3);
        let a = DMatrix::from_fn(m, n, |_, _| r.random::<f64>() - 0.5);
        let f = DMatrix::from_fn(m, k, |_, _| r.random::<f64>());
        let b = DMatrix::from_fn(k, k, |_, _| r.random::<f64>());
        let g = &b * b.transpose() + DMatrix::identity(k, k);
        let u = WeightVector::from_values(vec![1.0, 2.0, 1.5, 3.0]).unwrap();
        let p = SRLassoProblem::new(a.clone(), f.clone(), g.clone(), u.clone(), 0.7).unwrap();
        let z = DMatrix::from_fn(n, k, |_, _| r.random::<f64>() - 0.5);
        let mut pen = 0.0;
        for j in 0..n {
            let mut s = 0.0;
            for x in 0..k {
                for y in 0..k {
                    s += z[(j, x)] * g[(x, y)] * z[(j, y)];
                }
            }
            pen += u.values()[j] * s.sqrt();
        }
        let mut fit = 0.0;
        for i in 0..m {
            let mut ri = vec![0.0; k];
            for (x, rx) in ri.iter_mut().enumerate() {
                *rx = (0..n).map(|j| a[(i, j)] * z[(j, x)]).sum::<f64>() - f[(i, x)];
            }
            for x in 0..k {
                for y in 0..k {
                    fit += ri[x] * g[(x, y)] * ri[y];
                }
            }
        }
        let expect = 0.7 * pen + fit.sqrt();
        assert!((p.objective(&z).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn prox_examples() {
        let g = DMatrix::identity(2, 2);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.3, 0.4]);
        assert_eq!(prox_group(&z, &[0.0, 0.0], &g).unwrap(), z);
        let out = prox_group(&z, &[0.5, 0.6], &g).unwrap();
        assert_eq!(out.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.5]);
        assert_eq!(out.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!(prox_group(&z, &[-1.0, 0.0], &g).is_err());
    }

    #[test]
    fn one_dimensional_examples() {
        let s = solve(&one_by_one(1.0, 0.5), 1e-10, 100_000).unwrap();
        assert!((s.z[(0, 0)] - 1.0).abs() < 1e-8, "{}", s.z[(0, 0)]);
        assert!((s.objective - 0.5).abs() < 1e-9);
        let s = solve(&one_by_one(1.0, 2.0), 1e-10, 100_000).unwrap();
        assert!(s.z[(0, 0)].abs() < 1e-8);
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!(s.converged);
    }

    #[test]
    fn certificate_bounds_baseline_gap() {
        for seed in 0..4 {
            let p = random_problem(20, 50, seed, 0.5);
            let s = solve(&p, 1e-6, 200_000).unwrap();
            assert!(s.converged, "seed {seed}: gap {}", s.gamma_certificate);
            assert!((p.objective(&s.z).unwrap() - s.objective).abs() <= 1e-12);
            let base = solve_plain(&p, 20_000, 0).unwrap();
            assert!(s.objective <= base.objective + 1e-6, "seed {seed}: {} vs {}", s.objective, base.objective);
            for w in s.restart_objectives.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn hilbert_valued_solve() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let (m, n, k) = (15, 10, 4);
        let a = DMatrix::from_fn(m, n, |_, _| r.sample::<f64, _>(StandardNormal) / (m as f64).sqrt());
        let f = DMatrix::from_fn(m, k, |_, _| r.sample::<f64, _>(StandardNormal));
        let g = crate::fem1d::DiscretizedSpace::new(k).unwrap().gram();
        let u = WeightVector::from_values((0..n).map(|j| 1.0 + j as f64 * 0.2).collect()).unwrap();
        let p = SRLassoProblem::new(a, f, g, u, 0.2).unwrap();
        let s = solve(&p, 1e-7, 500_000).unwrap();
        assert!(s.converged, "gap {}", s.gamma_certificate);
        // Random perturbations never improve on a certified minimizer.
        for _ in 0..50 {
            let dz = DMatrix::from_fn(n, k, |_, _| 1e-3 * r.sample::<f64, _>(StandardNormal));
            assert!(p.objective(&(&s.z + dz)).unwrap() >= s.objective - 1e-7);
        }
    }

    #[test]
    fn budget_exhaustion_flags() {
        let p = random_problem(20, 50, 5, 0.3);
        let s = solve(&p, 1e-14, 50).unwrap();
        assert!(!s.converged);
        assert!(s.gamma_certificate > 0.0);
        assert!(s.objective <= p.objective(&DMatrix::zeros(50, 1)).unwrap());
    }

    #[test]
    fn default_lambda_values() {
        let (l, _) = log_factor(100, 0.1).unwrap();
        let lm = 100f64.ln();
        assert!((l - lm * (lm.powi(3) + 10f64.ln())).abs() < 1e-12);
        let expect = 1.0 / (4.0 * (100.0 / l).sqrt());
        assert_eq!(default_lambda(100, 0.1).unwrap(), expect);
        let mut prev = f64::INFINITY;
        for m in [3, 10, 100, 1000, 10_000, 100_000] {
            let v = default_lambda(m, 0.1).unwrap();
            assert!(v > 0.0);
            // λ(m) is not monotone for small m since L(m) grows like log⁴ m.
            if m >= 100_000 {
                assert!(v < prev);
            }
            prev = v;
        }
    }

    #[test]
    fn lambda_policy_json() {
        let c: SolverConfig = serde_json::from_str(r#"{"lambda": "default", "gamma": 1e-6, "max_iters": 10}"#).unwrap();
        assert_eq!(c.lambda, LambdaPolicy::Default);
        let c: SolverConfig =
            serde_json::from_str(r#"{"lambda": {"scaled": 0.25}, "gamma": 1e-6, "max_iters": 10, "seed": 3}"#).unwrap();
        assert_eq!(c.lambda.resolve(100, 0.1).unwrap(), 0.025);
        let c: SolverConfig = serde_json::from_str(r#"{"lambda": 0.1, "gamma": 1e-6, "max_iters": 10}"#).unwrap();
        assert_eq!(c.lambda, LambdaPolicy::Fixed(0.1));
        assert!(serde_json::from_str::<SolverConfig>(r#"{"lambda": "auto", "gamma": 1e-6, "max_iters": 10}"#).is_err());
        assert!(serde_json::from_str::<SolverConfig>(r#"{"lambda": 0.1, "gamma": 1e-6, "max_iters": 10, "x": 1}"#).is_err());
        let back: SolverConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn oracle_recovers_polynomial() {
        let set = hyperbolic_cross(5).unwrap();
        let coef: Vec<f64> = (0..set.len()).map(|j| if j % 2 == 0 { 1.0 / (j + 1) as f64 } else { 0.0 }).collect();
        let poly = crate::legendre::PolynomialExpansion::scalar(set.clone(), coef.clone()).unwrap();
        let sys = build_system(&poly, &set, draw_samples(40, set.ambient_dim(), 1).unwrap(), 0.0, 1).unwrap();
        let support: Vec<usize> = (0..set.len()).collect();
        let fit = least_squares_oracle(&support, &sys).unwrap();
        assert!(!fit.rank_deficient && fit.alpha > 0.0);
        for (j, c) in coef.iter().enumerate() {
            assert!((fit.z[(j, 0)] - c).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_constant_fit_is_mean() {
        let f = ProductTarget::power_law(2, 1.5).unwrap();
        let set = hyperbolic_cross(3).unwrap();
        let sys = build_system(&f, &set, draw_samples(25, 2, 2).unwrap(), 0.0, 2).unwrap();
        let fit = least_squares_oracle(&[0], &sys).unwrap();
        let mean = sys.points.iter().map(|p| f.evaluate_scalar(p).unwrap()).sum::<f64>() / 25.0;
        assert!((fit.z[(0, 0)] - mean).abs() < 1e-12);
        assert!(fit.z.rows(1, set.len() - 1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_rank_deficient() {
        let set = hyperbolic_cross(3).unwrap();
        let f = ProductTarget::power_law(2, 1.5).unwrap();
        let sys = build_system(&f, &set, draw_samples(3, 2, 2).unwrap(), 0.0, 2).unwrap();
        let mut dup = sys.clone();
        let col = dup.a.column(0).clone_owned();
        dup.a.set_column(1, &col);
        let fit = least_squares_oracle(&[0, 1], &dup).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.alpha, 0.0);
        assert!((fit.z[(0, 0)] - fit.z[(1, 0)]).abs() < 1e-12);
        assert!(least_squares_oracle(&[0, 1, 2, 0], &sys).is_err());
    }

    #[test]
    fn prune_examples() {
        let p = SRLassoProblem::scalar(DMatrix::identity(3, 3), vec![3.0, 1.0, 2.0], 0.1).unwrap();
        let set = IndexSet::new((0..3).map(|k| crate::multiindex::MultiIndex::unit(1, k)));
        let sol = SRLassoSolution {
            z: DMatrix::from_vec(3, 1, vec![3.0, 1.0, 2.0]),
            objective: p.objective(&DMatrix::from_vec(3, 1, vec![3.0, 1.0, 2.0])).unwrap(),
            gamma_certificate: 0.0,
            iterations: 0,
            converged: true,
            restart_objectives: vec![],
        };
        let (s, pruned) = prune_coefficients(&p, &set, &sol, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(0), set.get(0));
        assert_eq!(pruned.z.as_slice(), &[3.0, 0.0, 0.0]);
        let (s, same) = prune_coefficients(&p, &set, &sol, 3).unwrap();
        assert_eq!(s, set);
        assert_eq!(same.z, sol.z);
        assert!(prune_coefficients(&p, &set, &sol, 0).is_err());
        assert_eq!(top_rows(&DMatrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]), &DMatrix::identity(1, 1), 2), vec![0, 1]);
    }

    #[test]
    fn solution_container_round_trip() {
        let p = random_problem(8, 5, 4, 0.2);
        let s = solve(&p, 1e-8, 100_000).unwrap();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        let back = SRLassoSolution::read_binary(&buf[..]).unwrap();
        assert_eq!(back.z, s.z);
        assert_eq!(back.summary(), s.summary());
    }

    #[test]
    fn operator_norm_upper_bound() {
        let p = random_problem(30, 20, 8, 1.0);
        let exact = p.a().singular_values().max();
        let est = operator_norm(p.a(), 0);
        assert!(est >= exact && est <= exact * 1.02);
    }
}
