//! Orthonormal Legendre polynomials on `[-1, 1]` under the uniform
//! probability measure `dy/2`, their tensor products, root factorizations
//! and Gauss–Legendre quadrature.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::multiindex::{IndexSet, MultiIndex};

const DOMAIN_SLACK: f64 = 1e-12;

fn check_domain(y: f64) -> Result<()> {
    if y.abs() <= 1.0 + DOMAIN_SLACK {
        Ok(())
    } else {
        Err(Error::domain(format!("Legendre argument {y} outside [-1, 1]")))
    }
}

/// Unnormalized `P_n(y)` by the three-term recurrence, `P_n(1) = 1`.
pub fn legendre_p(n: u32, y: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = y;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * y * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `P_n(y)` and `P_n'(y)` together.
fn legendre_p_and_derivative(n: u32, y: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut prev = 1.0;
    let mut cur = y;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * y * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    let n = n as f64;
    // Only used at interior Gauss nodes, where 1 - y² > 0.
    let d = n * (prev - y * cur) / (1.0 - y * y);
    (cur, d)
}

/// `ψ_ν(y) = √(2ν+1) P_ν(y)`.
pub fn psi_eval(nu: u32, y: f64) -> Result<f64> {
    check_domain(y)?;
    Ok(((2 * nu + 1) as f64).sqrt() * legendre_p(nu, y))
}

/// Fills `out[k] = ψ_k(y)` for `k = 0..out.len()`. No domain check.
pub fn psi_all(y: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let mut prev = 1.0;
    out[0] = 1.0;
    if n == 1 {
        return;
    }
    let mut cur = y;
    out[1] = 3f64.sqrt() * y;
    for k in 1..n - 1 {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * y * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        out[k + 1] = ((2 * k + 3) as f64).sqrt() * cur;
    }
}

/// `Ψ_ν(y) = ∏_{i ∈ supp ν} ψ_{ν_i}(y_i)`; `y[0]` is coordinate 1.
pub fn tensor_eval(nu: &MultiIndex, y: &[f64]) -> Result<f64> {
    let mut value = 1.0;
    for (j, k) in nu.iter() {
        let yj = *y.get(j as usize - 1).ok_or_else(|| {
            Error::dim(format!("point of dimension {} lacks coordinate {j}", y.len()))
        })?;
        value *= psi_eval(k, yj)?;
    }
    Ok(value)
}

/// `ψ_ν(y) = ∏_j a_j (y − r_j)` for one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub degree: u32,
    /// Common factor scale `(c_lead √(2ν+1))^{1/ν}`.
    pub scale: f64,
    /// Simple roots of `P_ν` in increasing order.
    pub roots: Vec<f64>,
}

impl Factorization {
    pub fn eval(&self, y: f64) -> f64 {
        self.roots.iter().map(|&r| self.scale * (y - r)).product()
    }

    /// Largest `|a (y − r)|` over `y ∈ [-1, 1]`.
    pub fn max_factor_magnitude(&self) -> f64 {
        self.roots
            .iter()
            .map(|&r| self.scale * (1.0 + r.abs()))
            .fold(0.0, f64::max)
    }
}

/// Leading coefficient of `P_n`: `(2n)! / (2^n (n!)^2)`.
fn leading_coefficient(n: u32) -> f64 {
    (0..n).fold(1.0, |c, k| c * (2 * k + 1) as f64 / (k + 1) as f64)
}

/// Roots of `P_ν` from the Jacobi matrix, polished by Newton steps; the
/// scale is split evenly so each factor is O(1).
pub fn factorize(nu: u32) -> Result<Factorization> {
    if nu == 0 {
        return Err(Error::domain("factorize needs degree >= 1"));
    }
    let n = nu as usize;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k - 1, k)] = beta;
        jac[(k, k - 1)] = beta;
    }
    let eig = SymmetricEigen::try_new(jac, 1e-15, 10_000)
        .ok_or_else(|| Error::Numeric(format!("Jacobi eigenproblem for degree {nu} did not converge")))?;
    let mut roots: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = legendre_p_and_derivative(nu, *r);
            if dp == 0.0 {
                break;
            }
            *r -= p / dp;
        }
    }
    roots.sort_by(f64::total_cmp);
    if roots.iter().any(|r| !(r.abs() < 1.0)) || roots.windows(2).any(|w| w[1] - w[0] <= 0.0) {
        return Err(Error::Numeric(format!("roots of P_{nu} not simple and interior")));
    }
    let total = leading_coefficient(nu) * ((2 * nu + 1) as f64).sqrt();
    Ok(Factorization {
        degree: nu,
        scale: total.powf(1.0 / nu as f64),
        roots,
    })
}

/// Gauss–Legendre rule normalized to the probability measure `dy/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Polynomials up to this degree are integrated exactly.
    pub exact_degree: u32,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `⌈(degree+1)/2⌉`-point Gauss–Legendre rule, weights summing to 1.
pub fn gauss_rule(degree: u32) -> QuadratureRule {
    let n = degree / 2 + 1;
    let mut nodes = vec![0.0; n as usize];
    let mut weights = vec![0.0; n as usize];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_p_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_p_and_derivative(n, x);
        dp = if d.is_finite() { d } else { dp };
        let w = 1.0 / ((1.0 - x * x) * dp * dp);
        let (lo, hi) = (i as usize, (n - 1 - i) as usize);
        nodes[lo] = -x;
        nodes[hi] = x;
        weights[lo] = w;
        weights[hi] = w;
    }
    if n % 2 == 1 {
        nodes[(n / 2) as usize] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    QuadratureRule {
        nodes,
        weights,
        exact_degree: 2 * n - 1,
    }
}

/// Tensor-product quadrature of `f` over `[-1,1]^dims` with the same 1D rule
/// in every coordinate. `f` receives the point and its weight.
pub fn tensor_points<F: FnMut(&[f64], f64)>(rule: &QuadratureRule, dims: usize, mut f: F) {
    let q = rule.len();
    let mut idx = vec![0usize; dims];
    let mut point = vec![0.0; dims];
    loop {
        let mut w = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            point[k] = rule.nodes[i];
            w *= rule.weights[i];
        }
        f(&point, w);
        let mut k = 0;
        loop {
            if k == dims {
                return;
            }
            idx[k] += 1;
            if idx[k] < q {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `Σ_ν c_ν Ψ_ν` with rows of `coeffs` matching the members of `set`.
#[derive(Clone, Debug)]
pub struct PolynomialExpansion {
    set: IndexSet,
    coeffs: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl PolynomialExpansion {
    pub fn new(set: IndexSet, coeffs: DMatrix<f64>, gram: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != set.len() || gram.nrows() != coeffs.ncols() || !gram.is_square() {
            return Err(Error::dim(format!(
                "{} indices, {}x{} coefficients, {}x{} Gram",
                set.len(),
                coeffs.nrows(),
                coeffs.ncols(),
                gram.nrows(),
                gram.ncols()
            )));
        }
        Ok(Self { set, coeffs, gram })
    }

    pub fn scalar(set: IndexSet, coeffs: Vec<f64>) -> Result<Self> {
        let n = coeffs.len();
        Self::new(set, DMatrix::from_vec(n, 1, coeffs), DMatrix::identity(1, 1))
    }

    pub fn index_set(&self) -> &IndexSet {
        &self.set
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }
}

impl crate::model::TargetFunction for PolynomialExpansion {
    fn dim(&self) -> usize {
        self.set.ambient_dim()
    }

    fn output_dim(&self) -> usize {
        self.coeffs.ncols()
    }

    fn gram(&self) -> DMatrix<f64> {
        self.gram.clone()
    }

    fn evaluate(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let active = self.set.ambient_dim();
        if y.len() < active {
            return Err(Error::dim(format!("need {active} coordinates, got {}", y.len())));
        }
        if let Some(v) = y[..active].iter().find(|v| v.abs() > 1.0 + DOMAIN_SLACK) {
            return Err(Error::domain(format!("y = {v} outside [-1, 1]")));
        }
        let stride = self.set.max_degree() as usize + 1;
        let mut table = vec![0.0; active * stride];
        for (j, chunk) in table.chunks_mut(stride).enumerate() {
            psi_all(y[j], chunk);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, nu) in self.set.iter().enumerate() {
            let psi: f64 = nu
                .iter()
                .map(|(j, k)| table[(j as usize - 1) * stride + k as usize])
                .product();
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.coeffs[(row, c)] * psi;
            }
        }
        Ok(())
    }
}
