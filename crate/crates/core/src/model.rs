//! Target functions, holomorphy metadata, reference convergence rates and
//! error budgets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{FemSpec, ParametricDiffusion};
use crate::legendre::{psi_all, QuadratureRule};
use crate::multiindex::monotone_majorant;

/// A function `y ↦ f(y)` on `[-1, 1]^d` with values in `R^K`, where `R^K`
/// carries the inner product given by [`TargetFunction::gram`].
///
/// Coordinates beyond `dim()` are treated as exactly zero.
pub trait TargetFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, y: &[f64], out: &mut [f64]) -> Result<()>;

    fn gram(&self) -> DMatrix<f64> {
        DMatrix::identity(self.output_dim(), self.output_dim())
    }

    /// Separable structure for exact coefficient computation, if any.
    fn as_product(&self) -> Option<&ProductTarget> {
        None
    }

    fn evaluate_scalar(&self, y: &[f64]) -> Result<f64> {
        let mut out = [0.0];
        self.evaluate(y, &mut out)?;
        Ok(out[0])
    }
}

/// `f(y) = ∏_i (2δ_i + δ_i²)^{1/2} / (y_i + 1 + δ_i)`, holomorphic in the
/// Bernstein polyellipse with `(ρ_i + 1/ρ_i)/2 < 1 + δ_i`. Each factor has
/// unit `L²_ρ` norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTarget {
    deltas: Vec<f64>,
    scales: Vec<f64>,
}

impl ProductTarget {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::domain("product target needs d >= 1"));
        }
        if let Some(bad) = deltas.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::domain(format!("delta must be positive, got {bad}")));
        }
        let scales = deltas.iter().map(|&d| (2.0 * d + d * d).sqrt()).collect();
        Ok(Self { deltas, scales })
    }

    /// `δ_i = i^power`, `i = 1..d`.
    pub fn power_law(d: usize, power: f64) -> Result<Self> {
        Self::new((1..=d).map(|i| (i as f64).powf(power)).collect())
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// The `i`-th univariate factor (0-based).
    pub fn factor(&self, i: usize, t: f64) -> f64 {
        self.scales[i] / (t + 1.0 + self.deltas[i])
    }

    /// `c_k = ∫ g_i ψ_k dρ` for `k = 0..=kmax`.
    pub fn coefficients_1d(&self, i: usize, kmax: u32, rule: &QuadratureRule) -> Vec<f64> {
        let mut acc = vec![0.0; kmax as usize + 1];
        let mut buf = vec![0.0; kmax as usize + 1];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            psi_all(x, &mut buf);
            let g = w * self.factor(i, x);
            for (a, &b) in acc.iter_mut().zip(&buf) {
                *a += g * b;
            }
        }
        acc
    }

    /// `‖g_i‖²_{L²_ρ}` by quadrature (analytically 1).
    pub fn norm_sq_1d(&self, i: usize, rule: &QuadratureRule) -> f64 {
        rule.integrate(|x| self.factor(i, x).powi(2))
    }

    /// Largest Bernstein parameters `ρ_i` of the holomorphy region.
    pub fn bernstein_params(&self) -> Vec<f64> {
        self.deltas
            .iter()
            .map(|&d| bernstein_param(d).expect("deltas validated positive"))
            .collect()
    }

    /// `(b, ε)`-holomorphy data with `ε = 1`, `b_i = 1/δ_i` (the infimum of
    /// admissible `b_i > ε/δ_i`).
    pub fn holomorphy(&self, p: f64) -> Result<HolomorphyParams> {
        HolomorphyParams::new(self.deltas.iter().map(|&d| 1.0 / d).collect(), p)
    }
}

impl TargetFunction for ProductTarget {
    fn dim(&self) -> usize {
        self.deltas.len()
    }

    fn evaluate(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() < self.deltas.len() {
            return Err(Error::dim(format!(
                "point of dimension {} for a {}-dimensional target",
                y.len(),
                self.deltas.len()
            )));
        }
        let mut v = 1.0;
        for (i, &yi) in y.iter().take(self.deltas.len()).enumerate() {
            if yi.abs() > 1.0 + 1e-12 {
                return Err(Error::domain(format!("coordinate {} = {yi} outside [-1, 1]", i + 1)));
            }
            v *= self.factor(i, yi);
        }
        out[0] = v;
        Ok(())
    }

    fn as_product(&self) -> Option<&ProductTarget> {
        Some(self)
    }
}

/// Largest `ρ` with `(ρ + 1/ρ)/2 = 1 + δ`.
pub fn bernstein_param(delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    Ok(1.0 + delta + (delta * delta + 2.0 * delta).sqrt())
}

/// `C · exp(−(s · d! · ∏ log ρ_i)^{1/d})` with `d = rho.len()`.
pub fn exp_rate_curve(s: f64, rho: &[f64], c: f64) -> Result<f64> {
    if rho.is_empty() {
        return Err(Error::domain("exponential rate needs d >= 1"));
    }
    if let Some(bad) = rho.iter().find(|&&r| !(r > 1.0)) {
        return Err(Error::domain(format!("Bernstein parameter must exceed 1, got {bad}")));
    }
    let d = rho.len();
    // d! · ∏ log ρ_i in log space, so d = 32 does not overflow.
    let log_arg = (1..=d).map(|k| (k as f64).ln()).sum::<f64>()
        + rho.iter().map(|r| r.ln().ln()).sum::<f64>();
    if s <= 0.0 {
        return Ok(c);
    }
    let exponent = ((s.ln() + log_arg) / d as f64).exp();
    Ok(c * (-exponent).exp())
}

/// Holomorphy data: `b` (finitely represented), `p ∈ (0, 1)`, `ε = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolomorphyParams {
    pub b: Vec<f64>,
    pub p: f64,
    pub epsilon: f64,
}

impl HolomorphyParams {
    pub fn new(b: Vec<f64>, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
        }
        if b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("b must be a finite nonnegative sequence"));
        }
        Ok(Self { b, p, epsilon: 1.0 })
    }

    pub fn lp_norm(&self) -> f64 {
        self.b.iter().map(|v| v.powf(self.p)).sum::<f64>().powf(1.0 / self.p)
    }

    /// `‖b‖_{p,M}`: the `ℓ^p` norm of the minimal monotone majorant.
    pub fn monotone_lp_norm(&self) -> f64 {
        monotone_majorant(&self.b, self.p.min(1.0)).expect("p validated").1
    }

    /// Algebraic best s-term exponent `1/2 − 1/p`.
    pub fn algebraic_exponent(&self) -> f64 {
        0.5 - 1.0 / self.p
    }
}

/// Reference convergence model with a free multiplicative constant.
#[derive(Clone, Debug, PartialEq)]
pub enum RateModel {
    /// `C · s^exponent`.
    Algebraic { exponent: f64 },
    /// `C · exp(−(s d! ∏ log ρ_i)^{1/d})`.
    Exponential { rho: Vec<f64> },
}

impl RateModel {
    pub fn exponential(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() || rho.iter().any(|&r| !(r > 1.0)) {
            return Err(Error::domain("exponential model requires all rho_i > 1"));
        }
        Ok(RateModel::Exponential { rho })
    }

    /// Curve value with constant 1.
    pub fn shape(&self, s: f64) -> f64 {
        match self {
            RateModel::Algebraic { exponent } => s.powf(*exponent),
            RateModel::Exponential { rho } => exp_rate_curve(s, rho, 1.0).expect("validated"),
        }
    }

    /// Least-squares fit of `log C` to `log err − log shape(s)`. Used for
    /// plotting and model comparison only.
    pub fn fit_constant(&self, s: &[f64], err: &[f64]) -> f64 {
        let n = s.len().min(err.len());
        if n == 0 {
            return 1.0;
        }
        let mean = s
            .iter()
            .zip(err)
            .map(|(&s, &e)| e.ln() - self.shape(s).ln())
            .sum::<f64>()
            / n as f64;
        mean.exp()
    }

    /// RMS of the log residual after fitting the constant.
    pub fn rms_log_residual(&self, s: &[f64], err: &[f64]) -> f64 {
        let c = self.fit_constant(s, err).ln();
        let n = s.len().min(err.len());
        let ss: f64 = s
            .iter()
            .zip(err)
            .map(|(&s, &e)| (e.ln() - self.shape(s).ln() - c).powi(2))
            .sum();
        (ss / n as f64).sqrt()
    }
}

/// Raw parts of the error bound; the universal constant is left out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub approximation: f64,
    pub measurement: f64,
    pub discretization: f64,
    pub optimization: f64,
    pub total: f64,
}

pub fn error_budget(approx: f64, noise_norm: f64, m: usize, disc: f64, gamma: f64) -> Result<ErrorBudget> {
    if [approx, noise_norm, disc, gamma].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("error budget parts must be nonnegative"));
    }
    if m == 0 {
        return Err(Error::domain("error budget needs m >= 1"));
    }
    let measurement = noise_norm / (m as f64).sqrt();
    Ok(ErrorBudget {
        approximation: approx,
        measurement,
        discretization: disc,
        optimization: gamma,
        total: approx + measurement + disc + gamma,
    })
}

/// `L = log m · (log³ m + log ε⁻¹)` and `n = ⌈m / L⌉`.
pub fn log_factor(m: usize, eps: f64) -> Result<(f64, usize)> {
    if m < 3 {
        return Err(Error::domain(format!("log factor needs m >= 3, got {m}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let lm = (m as f64).ln();
    let l = lm * (lm.powi(3) + (1.0 / eps).ln());
    Ok((l, ((m as f64) / l).ceil().max(1.0) as usize))
}

/// Per-coordinate `δ_i`: an explicit list or `δ_i = i^power`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    List(Vec<f64>),
    Power { power: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Product,
    Fem,
}

/// `{kind, d, deltas | fem, noise: {scale, seed}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub d: usize,
    #[serde(default)]
    pub deltas: Option<DeltaSpec>,
    #[serde(default)]
    pub fem: Option<FemSpec>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

impl TargetConfig {
    pub fn build(&self) -> Result<Box<dyn TargetFunction>> {
        match self.kind {
            TargetKind::Product => Ok(Box::new(self.build_product()?)),
            TargetKind::Fem => {
                let spec = self
                    .fem
                    .clone()
                    .ok_or_else(|| Error::Model("fem target needs a `fem` block".into()))?;
                if spec.d != self.d {
                    return Err(Error::Model(format!("fem.d = {} but d = {}", spec.d, self.d)));
                }
                Ok(Box::new(ParametricDiffusion::from_spec(&spec)?))
            }
        }
    }

    pub fn build_product(&self) -> Result<ProductTarget> {
        if self.kind != TargetKind::Product {
            return Err(Error::Model("not a product target".into()));
        }
        match &self.deltas {
            None => ProductTarget::power_law(self.d, 1.5),
            Some(DeltaSpec::Power { power }) => ProductTarget::power_law(self.d, *power),
            Some(DeltaSpec::List(v)) => {
                if v.len() != self.d {
                    return Err(Error::Model(format!("{} deltas for d = {}", v.len(), self.d)));
                }
                ProductTarget::new(v.clone())
            }
        }
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise.as_ref().map_or(0.0, |n| n.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::gauss_rule;

    #[test]
    fn bernstein_examples() {
        assert!((bernstein_param(1.0).unwrap() - (2.0 + 3f64.sqrt())).abs() < 1e-14);
        assert!((bernstein_param(1e-12).unwrap() - 1.0).abs() < 1e-5);
        for delta in [1.5, 0.3, 7.0, 181.0] {
            let rho = bernstein_param(delta).unwrap();
            assert!(((rho + 1.0 / rho) / 2.0 - (1.0 + delta)).abs() <= 1e-12 * (1.0 + delta));
        }
        assert!(bernstein_param(0.0).is_err());
    }

    #[test]
    fn exp_curve_examples() {
        let e = std::f64::consts::E;
        assert_eq!(exp_rate_curve(0.0, &[3.0, 2.0], 2.5).unwrap(), 2.5);
        assert!((exp_rate_curve(4.0, &[e], 1.0).unwrap() - (-4f64).exp()).abs() < 1e-15);
        let rho = [2.0, 3.0, 5.0];
        let mut last = f64::INFINITY;
        for s in 1..200 {
            let v = exp_rate_curve(s as f64, &rho, 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(exp_rate_curve(1.0, &[1.0], 1.0).is_err());
    }

    #[test]
    fn exp_curve_one_dim_is_geometric() {
        let rho = [3.7];
        let logs: Vec<f64> = (0..20)
            .map(|s| exp_rate_curve(s as f64, &rho, 1.3).unwrap().ln())
            .collect();
        for w in logs.windows(2) {
            assert!((w[1] - w[0] + 3.7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn product_target_values() {
        let f = ProductTarget::new(vec![1.0]).unwrap();
        assert!((f.evaluate_scalar(&[0.0]).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        let f = ProductTarget::power_law(8, 1.5).unwrap();
        let v = f.evaluate_scalar(&[1.0; 8]).unwrap();
        let oracle: f64 = (1..=8)
            .map(|i| {
                let d = (i as f64).powf(1.5);
                (2.0 * d + d * d).sqrt() / (2.0 + d)
            })
            .product();
        assert!((v - oracle).abs() < 1e-15 && v < 1.0);
        assert!(f.evaluate_scalar(&[-(1.0 + 1.0)]).is_err());
        let mut y = [0.0; 8];
        y[0] = -2.0;
        assert!(matches!(f.evaluate_scalar(&y), Err(Error::Domain(_))));
        assert!(ProductTarget::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn product_target_symmetric_for_equal_deltas() {
        let f = ProductTarget::new(vec![0.7, 0.7, 0.7]).unwrap();
        let a = f.evaluate_scalar(&[0.1, -0.4, 0.9]).unwrap();
        let b = f.evaluate_scalar(&[0.9, 0.1, -0.4]).unwrap();
        assert!((a - b).abs() <= 1e-14);
    }

    #[test]
    fn product_factor_unit_norm() {
        let f = ProductTarget::power_law(4, 1.5).unwrap();
        let rule = gauss_rule(400);
        for i in 0..4 {
            assert!((f.norm_sq_1d(i, &rule) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn budget_examples() {
        assert_eq!(error_budget(0.0, 0.0, 1, 0.0, 0.0).unwrap().total, 0.0);
        assert_eq!(error_budget(0.0, 2.0, 4, 0.0, 0.0).unwrap().measurement, 1.0);
        let b = error_budget(0.1, 0.0, 10, 0.0, 0.0).unwrap();
        assert_eq!(b.total, 0.1);
        let b = error_budget(0.1, 2.0, 4, 0.03, 0.004).unwrap();
        assert_eq!((b.approximation, b.measurement, b.discretization, b.optimization), (0.1, 1.0, 0.03, 0.004));
        assert!(error_budget(-1.0, 0.0, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn log_factor_examples() {
        let (l, n) = log_factor(20, (-1f64).exp()).unwrap();
        let lm = 20f64.ln();
        assert!((l - lm * (lm.powi(3) + 1.0)).abs() < 1e-12);
        assert!((l - 83.53).abs() < 0.01);
        assert_eq!(n, 1);
        assert!(log_factor(2, 0.1).is_err());
        let (a, _) = log_factor(100, 0.1).unwrap();
        let (b, _) = log_factor(100, 0.01).unwrap();
        assert!(b > a);
    }

    #[test]
    fn rate_fit_recovers_constant() {
        let model = RateModel::Algebraic { exponent: -1.0 };
        let s: Vec<f64> = (1..50).map(|v| v as f64).collect();
        let e: Vec<f64> = s.iter().map(|s| 0.37 / s).collect();
        assert!((model.fit_constant(&s, &e) - 0.37).abs() < 1e-12);
        assert!(model.rms_log_residual(&s, &e) < 1e-12);
        assert!(RateModel::exponential(vec![1.0]).is_err());
    }

    #[test]
    fn holomorphy_params() {
        let f = ProductTarget::power_law(16, 1.5).unwrap();
        let h = f.holomorphy(0.7).unwrap();
        assert!((h.algebraic_exponent() - (0.5 - 1.0 / 0.7)).abs() < 1e-15);
        // b_i = i^{-3/2} is already nonincreasing.
        assert!((h.lp_norm() - h.monotone_lp_norm()).abs() < 1e-12);
        assert!(HolomorphyParams::new(vec![1.0], 1.0).is_err());
    }

    #[test]
    fn target_config_json() {
        let cfg: TargetConfig =
            serde_json::from_str(r#"{"kind":"product","d":3,"deltas":{"power":1.5}}"#).unwrap();
        let t = cfg.build_product().unwrap();
        assert!((t.deltas()[2] - 3f64.powf(1.5)).abs() < 1e-15);
        assert!(serde_json::from_str::<TargetConfig>(r#"{"kind":"product","d":3,"bogus":1}"#).is_err());
        let cfg: TargetConfig = serde_json::from_str(r#"{"kind":"product","d":2,"deltas":[1,2]}"#).unwrap();
        assert_eq!(cfg.build_product().unwrap().deltas(), &[1.0, 2.0]);
    }
}
