//! Ground-truth Legendre coefficients and best-approximation benchmarks.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::legendre::{gauss_rule, psi_all, tensor_points, QuadratureRule};
use crate::measurement::gram_norm_sq;
use crate::model::{ProductTarget, TargetFunction};
use crate::multiindex::{IndexSet, MultiIndex, WeightVector};

/// Coefficients `c_ν` of a target over an index set, rows in enumeration order.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    pub set: IndexSet,
    pub values: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl CoefficientTable {
    pub fn new(set: IndexSet, values: DMatrix<f64>, gram: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != set.len() || gram.nrows() != values.ncols() {
            return Err(Error::dim("coefficient table shape"));
        }
        Ok(Self { set, values, gram })
    }

    /// `‖c_ν‖_V` per row.
    pub fn norms(&self) -> Vec<f64> {
        row_norms(&self.values, &self.gram)
    }

    /// `index,norm,c1,…,cK` with the index in its display form.
    pub fn write_csv<W: Write>(&self, mut w: W, per_coordinate: bool) -> Result<()> {
        let mut header = vec!["index".to_string(), "norm".to_string()];
        if per_coordinate {
            header.extend((1..=self.values.ncols()).map(|k| format!("c{k}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (j, (nu, norm)) in self.set.iter().zip(self.norms()).enumerate() {
            let mut row = vec![format!("\"{nu}\""), format!("{norm:e}")];
            if per_coordinate {
                row.extend(self.values.row(j).iter().map(|v| format!("{v:e}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn row_norms(c: &DMatrix<f64>, gram: &DMatrix<f64>) -> Vec<f64> {
    let mut row = vec![0.0; c.ncols()];
    (0..c.nrows())
        .map(|j| {
            c.row(j).iter().zip(row.iter_mut()).for_each(|(v, r)| *r = *v);
            gram_norm_sq(gram, &row).max(0.0).sqrt()
        })
        .collect()
}

/// Quadrature degree used when none is given: largest 1D degree plus 30.
pub fn default_quad_degree(set: &IndexSet) -> u32 {
    set.max_degree() + 30
}

/// `c_ν = ∫ f Ψ_ν dρ` for `ν ∈ Λ`.
///
/// Product targets use exact separation into 1D integrals. Other targets
/// use a tensor Gauss rule over all of the target's coordinates, which is
/// only practical for a handful of them.
pub fn coefficients(target: &dyn TargetFunction, set: &IndexSet, quad_degree: u32) -> Result<CoefficientTable> {
    let kmax = set.max_degree();
    if quad_degree < kmax + 10 {
        log::warn!(
            "quadrature degree {quad_degree} is below max degree {kmax} + 10; coefficients may be inaccurate"
        );
    }
    if set.ambient_dim() > target.dim() {
        return Err(Error::dim(format!(
            "index set uses {} dimensions, target has {}",
            set.ambient_dim(),
            target.dim()
        )));
    }
    let rule = gauss_rule(quad_degree);
    if let Some(p) = target.as_product() {
        return Ok(product_coefficients(p, set, &rule));
    }
    let d = target.dim();
    if d > 6 {
        log::warn!("tensor quadrature over {d} dimensions needs {}^{d} target evaluations", rule.len());
    }
    let k = target.output_dim();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    tensor_points(&rule, d, |y, w| {
        points.extend_from_slice(y);
        weights.push(w);
    });
    let stride = kmax as usize + 1;
    let evaluated: Vec<(Vec<f64>, Vec<f64>)> = (0..weights.len())
        .into_par_iter()
        .map(|p| {
            let y = &points[p * d..(p + 1) * d];
            let mut out = vec![0.0; k];
            target.evaluate(y, &mut out)?;
            let mut table = vec![0.0; d * stride];
            for (j, chunk) in table.chunks_mut(stride).enumerate() {
                psi_all(y[j], chunk);
            }
            Ok((out, table))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = set
        .members()
        .par_iter()
        .map(|nu| {
            let mut acc = vec![0.0; k];
            for ((vals, table), w) in evaluated.iter().zip(&weights) {
                let psi: f64 = nu
                    .iter()
                    .map(|(j, e)| table[(j as usize - 1) * stride + e as usize])
                    .product();
                let g = w * psi;
                for (a, v) in acc.iter_mut().zip(vals) {
                    *a += g * v;
                }
            }
            acc
        })
        .collect();
    let values = DMatrix::from_fn(set.len(), k, |i, j| rows[i][j]);
    CoefficientTable::new(set.clone(), values, target.gram())
}

fn product_coefficients(p: &ProductTarget, set: &IndexSet, rule: &QuadratureRule) -> CoefficientTable {
    let kmax = set.max_degree();
    let d = p.deltas().len();
    let one_d: Vec<Vec<f64>> = (0..d).map(|i| p.coefficients_1d(i, kmax, rule)).collect();
    let base: f64 = one_d.iter().map(|c| c[0]).product();
    let values: Vec<f64> = set
        .iter()
        .map(|nu| {
            let mut v = base;
            for (j, k) in nu.iter() {
                let c = &one_d[j as usize - 1];
                v *= c[k as usize] / c[0];
            }
            v
        })
        .collect();
    CoefficientTable::new(set.clone(), DMatrix::from_vec(set.len(), 1, values), DMatrix::identity(1, 1))
        .expect("shapes agree by construction")
}

/// `|c_0(q) − c_0(2q)|`, the change of the mean under quadrature doubling.
pub fn quadrature_drift(target: &dyn TargetFunction, quad_degree: u32) -> Result<f64> {
    let zero = IndexSet::singleton_zero();
    let a = coefficients(target, &zero, quad_degree)?;
    let b = coefficients(target, &zero, 2 * quad_degree)?;
    Ok((&a.values - &b.values).norm())
}

/// `(Σ_{i>s} ‖c_{(i)}‖_V^q)^{1/q}` over the norms sorted descending.
pub fn sigma_s(c: &DMatrix<f64>, s: usize, q: f64, gram: &DMatrix<f64>) -> Result<f64> {
    if !(q > 0.0 && q <= 2.0) {
        return Err(Error::domain(format!("q must lie in (0, 2], got {q}")));
    }
    if s > c.nrows() {
        return Err(Error::domain(format!("s = {s} exceeds N = {}", c.nrows())));
    }
    let mut norms = row_norms(c, gram);
    norms.sort_by(|a, b| b.total_cmp(a));
    Ok(tail(&norms[s..], q))
}

fn tail(norms: &[f64], q: f64) -> f64 {
    // Ascending summation keeps small tails accurate.
    norms.iter().rev().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
}

/// `σ_s` for every `s = 0..=N`.
pub fn sigma_curve(c: &DMatrix<f64>, q: f64, gram: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !(q > 0.0 && q <= 2.0) {
        return Err(Error::domain(format!("q must lie in (0, 2], got {q}")));
    }
    let mut norms = row_norms(c, gram);
    norms.sort_by(|a, b| b.total_cmp(a));
    Ok(suffix_sums(&norms, q))
}

fn suffix_sums(sorted_desc: &[f64], q: f64) -> Vec<f64> {
    let mut out = vec![0.0; sorted_desc.len() + 1];
    let mut acc = 0.0;
    for i in (0..sorted_desc.len()).rev() {
        acc += sorted_desc[i].powf(q);
        out[i] = acc;
    }
    out.iter().map(|v| v.powf(1.0 / q)).collect()
}

/// Structural constraint for [`best_structured_set`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Lower,
    Anchored,
}

/// Greedy quasi-best structured set: start from `{0}` and repeatedly add
/// the admissible index of largest `‖c_ν‖_V`. Heuristic, not optimal.
pub fn best_structured_set(table: &CoefficientTable, s: usize, structure: Structure) -> Result<IndexSet> {
    if s == 0 {
        return Err(Error::domain("s must be >= 1"));
    }
    let set = &table.set;
    let zero = MultiIndex::zero();
    let zero_pos = set.position(&zero).ok_or_else(|| Error::Model("index set does not contain 0".into()))?;
    let norms = table.norms();
    let mut chosen = vec![false; set.len()];
    chosen[zero_pos] = true;
    let mut picked = vec![zero_pos];
    let admissible = |nu: &MultiIndex, chosen: &[bool]| -> bool {
        let in_s = |mu: &MultiIndex| set.position(mu).is_some_and(|p| chosen[p]);
        let lower = nu.support().all(|j| nu.decrement(j).is_some_and(|mu| in_s(&mu)));
        if !lower {
            return false;
        }
        match structure {
            Structure::Lower => true,
            Structure::Anchored => {
                if nu.support_len() == 1 && nu.order() == 1 && nu.max_dim() > 1 {
                    in_s(&MultiIndex::unit(nu.max_dim() - 1, 1))
                } else {
                    true
                }
            }
        }
    };
    while picked.len() < s {
        let next = (0..set.len())
            .filter(|&p| !chosen[p] && admissible(set.get(p), &chosen))
            .max_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(b.cmp(&a)));
        match next {
            Some(p) => {
                chosen[p] = true;
                picked.push(p);
            }
            None => {
                log::warn!("only {} admissible indices available, requested {s}", picked.len());
                break;
            }
        }
    }
    Ok(set.select(&picked))
}

/// `‖f_Λ − f_S‖`: the norm of the coefficients outside `S`.
pub fn tail_error(table: &CoefficientTable, s: &IndexSet) -> f64 {
    let norms = table.norms();
    let mut outside: Vec<f64> = table
        .set
        .iter()
        .zip(&norms)
        .filter(|(nu, _)| !s.contains(nu))
        .map(|(_, n)| *n)
        .collect();
    outside.sort_by(|a, b| b.total_cmp(a));
    tail(&outside, 2.0)
}

/// Weighted best `k`-term set: maximize `Σ_{ν∈S} ‖c_ν‖²_V` subject to
/// `Σ_{ν∈S} u_ν² ≤ k`.
///
/// With exact integer `u_ν²` and `N·⌊k⌋ ≤ 2·10⁷` this is solved exactly by
/// 0/1 knapsack dynamic programming; otherwise by
/// [`weighted_best_k_greedy`].
pub fn weighted_best_k(table: &CoefficientTable, u: &WeightVector, k: f64) -> Result<IndexSet> {
    check_knapsack(table, u, k)?;
    let n = table.set.len();
    match u.exact_squares() {
        Some(sq) if (n as f64) * k.floor() <= 2e7 => {
            let norms = table.norms();
            let value: Vec<f64> = norms.iter().map(|v| v * v).collect();
            Ok(table.set.select(&knapsack_exact(&value, sq, k.floor() as usize)))
        }
        _ => weighted_best_k_greedy(table, u, k),
    }
}

fn check_knapsack(table: &CoefficientTable, u: &WeightVector, k: f64) -> Result<()> {
    if u.len() != table.set.len() {
        return Err(Error::dim("weights do not match the index set"));
    }
    if !(k >= 1.0) {
        return Err(Error::domain(format!("k must be >= 1, got {k}")));
    }
    Ok(())
}

fn knapsack_exact(value: &[f64], cost: &[u64], budget: usize) -> Vec<usize> {
    let n = value.len();
    let width = budget + 1;
    let mut best = vec![0.0f64; width];
    let mut take = vec![false; n * width];
    for j in 0..n {
        let c = cost[j] as usize;
        if c > budget {
            continue;
        }
        for cap in (c..width).rev() {
            let with = best[cap - c] + value[j];
            if with > best[cap] {
                best[cap] = with;
                take[j * width + cap] = true;
            }
        }
    }
    let mut picked = Vec::new();
    let mut cap = budget;
    for j in (0..n).rev() {
        if take[j * width + cap] {
            picked.push(j);
            cap -= cost[j] as usize;
        }
    }
    picked.reverse();
    picked
}

/// Greedy knapsack by benefit-to-cost ratio `‖c_ν‖²_V / u_ν²`. Items that
/// no longer fit are skipped and smaller ones still considered.
pub fn weighted_best_k_greedy(table: &CoefficientTable, u: &WeightVector, k: f64) -> Result<IndexSet> {
    check_knapsack(table, u, k)?;
    let n = table.set.len();
    let norms = table.norms();
    let mut order: Vec<usize> = (0..n).collect();
    let ratio = |j: usize| norms[j] * norms[j] / u.squared(j);
    order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
    let mut picked = Vec::new();
    match u.exact_squares() {
        Some(sq) => {
            let budget = k.floor() as u128;
            let mut used = 0u128;
            for j in order {
                if used + sq[j] as u128 <= budget {
                    used += sq[j] as u128;
                    picked.push(j);
                }
            }
        }
        None => {
            let mut used = 0.0;
            for j in order {
                if used + u.squared(j) <= k {
                    used += u.squared(j);
                    picked.push(j);
                }
            }
        }
    }
    Ok(table.set.select(&picked))
}

/// Best `s`-term errors of a product target computed without truncating
/// to a fixed index set.
#[derive(Clone, Debug, PartialEq)]
pub struct BestTermCurve {
    /// `σ_s` for `s = 0..=s_max` with `q = 2`.
    pub sigma: Vec<f64>,
    /// `‖f‖²_{L²_ρ}`.
    pub norm_sq: f64,
    /// Number of enumerated coefficients.
    pub enumerated: usize,
    /// Mass of `‖f‖²` not covered by the enumeration.
    pub remainder: f64,
}

const ENUMERATION_CAP: usize = 20_000_000;

/// σ_s of `f = ∏ g_i` for `s ≤ s_max`.
///
/// Coefficients factor as `c_ν = ∏_i c^{(i)}_{ν_i}`, so every `ν` with
/// `|c_ν| ≥ τ` can be enumerated by depth-first search over the
/// coordinates. `τ` is lowered until more than `s_max` coefficients are
/// found; all coefficients below `τ` are then accounted for in the
/// remainder `‖f‖² − Σ_enumerated c_ν²`.
pub fn product_best_s_term(target: &ProductTarget, s_max: usize) -> Result<BestTermCurve> {
    let d = target.deltas().len();
    let kmax = 80u32;
    let rule = gauss_rule(2 * kmax + 120);
    let one_d: Vec<Vec<f64>> = (0..d).map(|i| target.coefficients_1d(i, kmax, &rule)).collect();
    let norm_sq: f64 = (0..d).map(|i| target.norm_sq_1d(i, &rule)).product();
    let base: f64 = one_d.iter().map(|c| c[0].abs()).product();
    if base == 0.0 {
        return Err(Error::Model("product target has a vanishing mean factor".into()));
    }
    let ratios: Vec<Vec<f64>> = one_d
        .iter()
        .map(|c| c[1..].iter().map(|v| (v / c[0]).abs()).collect())
        .collect();
    // Largest nonconstant ratio from coordinate i onwards, for pruning.
    let mut suffix_max = vec![0.0f64; d + 1];
    for i in (0..d).rev() {
        let m = ratios[i].iter().cloned().fold(0.0, f64::max);
        suffix_max[i] = suffix_max[i + 1].max(m);
    }

    let mut tau = 1e-2;
    loop {
        let mut values = vec![base];
        let cut = tau / base;
        let mut overflow = false;
        enumerate(&ratios, &suffix_max, 0, 1.0, cut, base, &mut values, &mut overflow);
        if overflow {
            return Err(Error::Numeric(format!(
                "more than {ENUMERATION_CAP} coefficients above {tau:e}"
            )));
        }
        if values.len() > s_max {
            values.sort_by(|a, b| b.total_cmp(a));
            let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
            // Ascending order for accurate partial sums.
            let covered: f64 = squares.iter().rev().sum();
            let remainder = (norm_sq - covered).max(0.0);
            let mut acc = remainder;
            let mut suffix = vec![0.0; squares.len() + 1];
            for i in (0..squares.len()).rev() {
                acc += squares[i];
                suffix[i] = acc;
            }
            let sigma = suffix[..=s_max].iter().map(|v| v.sqrt()).collect();
            return Ok(BestTermCurve {
                sigma,
                norm_sq,
                enumerated: values.len(),
                remainder,
            });
        }
        tau /= 10.0;
        if tau < 1e-300 {
            return Err(Error::Numeric("enumeration threshold underflow".into()));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    ratios: &[Vec<f64>],
    suffix_max: &[f64],
    from: usize,
    prod: f64,
    cut: f64,
    base: f64,
    out: &mut Vec<f64>,
    overflow: &mut bool,
) {
    for i in from..ratios.len() {
        if prod * suffix_max[i] < cut || *overflow {
            return;
        }
        for &r in &ratios[i] {
            let p = prod * r;
            if p < cut {
                continue;
            }
            out.push(base * p);
            if out.len() > ENUMERATION_CAP {
                *overflow = true;
                return;
            }
            enumerate(ratios, suffix_max, i + 1, p, cut, base, out, overflow);
        }
    }
}
