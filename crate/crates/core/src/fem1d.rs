//! Piecewise-linear Galerkin solver for the parametric diffusion problem
//! `−(a(x, y) u′)′ = F` on `(0, 1)`, `u(0) = u(1) = 0`, with the affine
//! coefficient `a(x, y) = a0(x) + Σ_j y_j ψ_j(x)`.
//!
//! Solutions live in the span of the `K` interior hat functions, equipped
//! with the `H¹₀` inner product whose Gram matrix is the Laplacian stiffness
//! matrix `(1/h)·tridiag(−1, 2, −1)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TargetFunction;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Two-point Gauss nodes on `[0, 1]` (weights 1/2 each).
const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Five-point Gauss rule on `[0, 1]`, used for error norms.
const GAUSS5: [(f64, f64); 5] = [
    (0.046_910_077_030_668, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332, 0.118_463_442_528_094_5),
];

/// Uniform mesh with `K` interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedSpace {
    k: usize,
    h: f64,
}

impl DiscretizedSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("need at least one interior node"));
        }
        Ok(Self { k, h: 1.0 / (k as f64 + 1.0) })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn mesh_width(&self) -> f64 {
        self.h
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.k).map(|i| i as f64 * self.h).collect()
    }

    /// Dense `H¹₀` Gram matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.k, self.k);
        let (d, o) = (2.0 / self.h, -1.0 / self.h);
        for i in 0..self.k {
            g[(i, i)] = d;
            if i + 1 < self.k {
                g[(i, i + 1)] = o;
                g[(i + 1, i)] = o;
            }
        }
        g
    }

    /// `√(vᵀ G v)` using the tridiagonal structure.
    pub fn norm_v(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..v.len() {
            s += 2.0 * v[i] * v[i];
            if i + 1 < v.len() {
                s -= 2.0 * v[i] * v[i + 1];
            }
        }
        (s / self.h).max(0.0).sqrt()
    }

    /// `L²(0,1)` norm of the piecewise-linear interpolant of nodal values.
    pub fn norm_l2(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for e in 0..=self.k {
            let left = if e == 0 { 0.0 } else { v[e - 1] };
            let right = if e == self.k { 0.0 } else { v[e] };
            // exact for quadratics
            s += self.h * (left * left + left * right + right * right) / 3.0;
        }
        s.sqrt()
    }

    /// Nodal values of a coarse solution interpolated onto `fine`, which must
    /// be a uniform refinement of this mesh.
    pub fn prolongate(&self, v: &[f64], fine: &DiscretizedSpace) -> Result<Vec<f64>> {
        let ratio = (fine.k + 1) / (self.k + 1);
        if ratio * (self.k + 1) != fine.k + 1 {
            return Err(Error::dim(format!("mesh with K = {} does not refine K = {}", fine.k, self.k)));
        }
        let value_at = |i: usize| if i == 0 || i == self.k + 1 { 0.0 } else { v[i - 1] };
        Ok((1..=fine.k)
            .map(|fi| {
                let e = fi / ratio;
                let t = (fi % ratio) as f64 / ratio as f64;
                if t == 0.0 {
                    value_at(e)
                } else {
                    (1.0 - t) * value_at(e) + t * value_at(e + 1)
                }
            })
            .collect())
    }

    /// Uniform refinement with mesh width `h / factor`.
    pub fn refine(&self, factor: usize) -> Result<DiscretizedSpace> {
        DiscretizedSpace::new(factor * (self.k + 1) - 1)
    }
}

/// Element of `V_h` in hat-function coordinates (nodal values).
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertPoint {
    pub coeffs: Vec<f64>,
    pub space: Arc<DiscretizedSpace>,
}

/// `‖v‖_V = √(vᵀ G v)`.
pub fn norm_v(v: &HilbertPoint) -> f64 {
    v.space.norm_v(&v.coeffs)
}

/// Affine diffusion coefficient `a0 + Σ y_j ψ_j` with ellipticity floor `r`.
#[derive(Clone)]
pub struct DiffusionCoefficient {
    a0: ScalarFn,
    modes: Vec<ScalarFn>,
    floor: f64,
    grid_points: usize,
}

impl fmt::Debug for DiffusionCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionCoefficient")
            .field("modes", &self.modes.len())
            .field("floor", &self.floor)
            .field("grid_points", &self.grid_points)
            .finish()
    }
}

impl DiffusionCoefficient {
    /// Validates `Σ_j |ψ_j(x)| ≤ a0(x) − r` on a uniform grid.
    pub fn new(a0: ScalarFn, modes: Vec<ScalarFn>, floor: f64, grid_points: usize) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::domain("ellipticity floor must be positive"));
        }
        let coeff = Self {
            a0,
            modes,
            floor,
            grid_points: grid_points.max(2),
        };
        for x in coeff.grid() {
            let spread: f64 = coeff.modes.iter().map(|m| m(x).abs()).sum();
            if spread > (coeff.a0)(x) - floor + 1e-14 {
                return Err(Error::Model(format!(
                    "uniform ellipticity fails at x = {x}: sum |psi_j| = {spread}, a0 - r = {}",
                    (coeff.a0)(x) - floor
                )));
            }
        }
        Ok(coeff)
    }

    /// `a0 ≡ 1`, `ψ_j(x) = (scale/ζ(2)) j^{−2} sin(jπx)`, `j = 1..d`.
    pub fn default_family(d: usize, mode_scale: f64, floor: f64, grid_points: usize) -> Result<Self> {
        let zeta2 = PI * PI / 6.0;
        let modes = (1..=d)
            .map(|j| {
                let amp = mode_scale / zeta2 / (j * j) as f64;
                Arc::new(move |x: f64| amp * (j as f64 * PI * x).sin()) as ScalarFn
            })
            .collect();
        Self::new(Arc::new(|_| 1.0), modes, floor, grid_points)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(Arc::new(move |_| value), Vec::new(), value.min(1.0) * 0.5, 16)
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.grid_points;
        (0..=n).map(move |i| i as f64 / n as f64)
    }

    pub fn eval(&self, x: f64, y: &[f64]) -> f64 {
        (self.a0)(x)
            + self
                .modes
                .iter()
                .zip(y)
                .map(|(m, &yj)| yj * m(x))
                .sum::<f64>()
    }
}

/// `b_i = max_grid |ψ_i(x)|`.
pub fn b_estimate(coeff: &DiffusionCoefficient) -> Vec<f64> {
    coeff
        .modes
        .iter()
        .map(|m| coeff.grid().map(|x| m(x).abs()).fold(0.0, f64::max))
        .collect()
}

/// Galerkin solve with two-point Gauss integration per element.
pub fn assemble_and_solve(
    coeff: &DiffusionCoefficient,
    y: &[f64],
    forcing: &dyn Fn(f64) -> f64,
    space: &Arc<DiscretizedSpace>,
) -> Result<HilbertPoint> {
    if y.iter().any(|v| v.abs() > 1.0 + 1e-12) {
        return Err(Error::domain("parameter outside [-1, 1]^d"));
    }
    let k = space.k;
    let h = space.h;
    let mut diag = vec![0.0; k];
    let mut off = vec![0.0; k.saturating_sub(1)];
    let mut rhs = vec![0.0; k];
    for e in 0..=k {
        let x0 = e as f64 * h;
        let mut a_int = 0.0;
        let mut load = [0.0; 2];
        for &t in &GAUSS2 {
            let x = x0 + t * h;
            let a = coeff.eval(x, y);
            if !(a >= coeff.floor - 1e-12) {
                return Err(Error::Model(format!("diffusion coefficient {a} below floor at x = {x}")));
            }
            a_int += 0.5 * h * a;
            let fx = forcing(x);
            load[0] += 0.5 * h * fx * (1.0 - t);
            load[1] += 0.5 * h * fx * t;
        }
        let s = a_int / (h * h);
        // element e couples nodes e and e+1 (interior indices e-1 and e)
        if e >= 1 {
            diag[e - 1] += s;
            rhs[e - 1] += load[0];
        }
        if e < k {
            diag[e] += s;
            rhs[e] += load[1];
        }
        if e >= 1 && e < k {
            off[e - 1] -= s;
        }
    }
    let coeffs = solve_tridiagonal(&diag, &off, &rhs)?;
    Ok(HilbertPoint {
        coeffs,
        space: Arc::clone(space),
    })
}

/// Thomas algorithm for a symmetric tridiagonal system.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(Error::Numeric("singular stiffness matrix".into()));
    }
    if n > 1 {
        c[0] = off[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::Numeric("singular stiffness matrix".into()));
        }
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// `‖u_h − u‖_{L²(0,1)}` by five-point Gauss per element.
pub fn l2_error_vs(v: &HilbertPoint, exact: &dyn Fn(f64) -> f64) -> f64 {
    let space = &v.space;
    let h = space.h;
    let k = space.k;
    let mut s = 0.0;
    for e in 0..=k {
        let left = if e == 0 { 0.0 } else { v.coeffs[e - 1] };
        let right = if e == k { 0.0 } else { v.coeffs[e] };
        for &(t, w) in &GAUSS5 {
            let x = (e as f64 + t) * h;
            let uh = (1.0 - t) * left + t * right;
            s += w * h * (uh - exact(x)).powi(2);
        }
    }
    s.sqrt()
}

/// Node-value CSV: `x,u`.
pub fn write_snapshot_csv<W: Write>(v: &HilbertPoint, mut w: W) -> Result<()> {
    writeln!(w, "x,u")?;
    for (x, u) in v.space.nodes().iter().zip(&v.coeffs) {
        writeln!(w, "{x},{u}")?;
    }
    Ok(())
}

/// `{K, d, r, mode_scale}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    #[serde(default = "FemSpec::default_floor")]
    pub r: f64,
    #[serde(default = "FemSpec::default_mode_scale")]
    pub mode_scale: f64,
}

impl FemSpec {
    fn default_floor() -> f64 {
        0.1
    }

    fn default_mode_scale() -> f64 {
        0.9
    }
}

/// `y ↦ u_h(·, y)` for the default mode family and unit forcing.
#[derive(Clone, Debug)]
pub struct ParametricDiffusion {
    coeff: DiffusionCoefficient,
    space: Arc<DiscretizedSpace>,
    spec: FemSpec,
}

impl ParametricDiffusion {
    pub fn from_spec(spec: &FemSpec) -> Result<Self> {
        let space = Arc::new(DiscretizedSpace::new(spec.k)?);
        let coeff = DiffusionCoefficient::default_family(spec.d, spec.mode_scale, spec.r, 10 * spec.k)?;
        Ok(Self {
            coeff,
            space,
            spec: spec.clone(),
        })
    }

    pub fn space(&self) -> &Arc<DiscretizedSpace> {
        &self.space
    }

    pub fn coefficient(&self) -> &DiffusionCoefficient {
        &self.coeff
    }

    pub fn spec(&self) -> &FemSpec {
        &self.spec
    }

    pub fn solve(&self, y: &[f64]) -> Result<HilbertPoint> {
        assemble_and_solve(&self.coeff, y, &|_| 1.0, &self.space)
    }

    /// Same problem on a mesh refined by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.k = factor * (spec.k + 1) - 1;
        Self::from_spec(&spec)
    }

    /// `(V-norm, L² norm)` of `u_h(y) − u_{h/4}(y)` on the fine mesh, the
    /// surrogate for the projection error onto `V_h`.
    pub fn discretization_error(&self, y: &[f64]) -> Result<(f64, f64)> {
        let fine = self.refined(4)?;
        let coarse = self.solve(y)?;
        let reference = fine.solve(y)?;
        let up = self.space.prolongate(&coarse.coeffs, &fine.space)?;
        let diff: Vec<f64> = up.iter().zip(&reference.coeffs).map(|(a, b)| a - b).collect();
        Ok((fine.space.norm_v(&diff), fine.space.norm_l2(&diff)))
    }
}

impl TargetFunction for ParametricDiffusion {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn output_dim(&self) -> usize {
        self.space.k
    }

    fn evaluate(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() < self.spec.d {
            return Err(Error::dim("point shorter than the parameter dimension"));
        }
        let u = self.solve(&y[..self.spec.d])?;
        out.copy_from_slice(&u.coeffs);
        Ok(())
    }

    fn gram(&self) -> DMatrix<f64> {
        self.space.gram()
    }
}
