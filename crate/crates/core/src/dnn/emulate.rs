//! Compilation of products of affine factors into layered tanh networks.
//!
//! Each output is a balanced binary tree over a padded list of factors.
//! Internal nodes are multiplication gadgets, identity gadgets (when one
//! child is the constant padding) or constants. All trees share the same
//! depth so their gadgets line up layer by layer.
//!
//! Error control: a node over factors `x` and `y` with true bounds
//! `M_x, M_y` and accumulated errors `e_x, e_y` has error at most
//! `τ + M_x e_y + M_y e_x + e_x e_y`, where `τ` is its gadget tolerance.
//!
//! A multiplication gadget on `[-R, R]²` is limited by float cancellation
//! only through its relative tolerance `τ / 2R²`, so every gadget gets
//! `τ = κ·2R²` (a tenth of that for identity gadgets, which have no
//! floor) and `κ` is the largest value whose root bound stays within the
//! requested tolerance.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gadgets::{identity_step, mult_stencil, SHIFT};
use super::network::{Activation, FeedforwardNetwork, SparseAffine};
use crate::error::{Error, Result};
use crate::legendre::{factorize, psi_all, Factorization};
use crate::measurement::Samples;
use crate::multiindex::IndexSet;

/// Affine combination of the units of the previous stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Expr {
    bias: f64,
    terms: Vec<(usize, f64)>,
}

impl Expr {
    fn constant(v: f64) -> Self {
        Self { bias: v, terms: Vec::new() }
    }

    fn combine(a: &Expr, sa: f64, b: &Expr, sb: f64) -> Expr {
        let mut terms: Vec<(usize, f64)> = a
            .terms
            .iter()
            .map(|&(i, v)| (i, sa * v))
            .chain(b.terms.iter().map(|&(i, v)| (i, sb * v)))
            .collect();
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, v) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        Expr {
            bias: sa * a.bias + sb * b.bias,
            terms: merged,
        }
    }

    fn scaled(&self, s: f64) -> Expr {
        Expr::combine(self, s, &Expr::default(), 0.0)
    }
}

/// A leaf factor: an affine function of the inputs with a known sup bound.
#[derive(Clone, Debug)]
pub(crate) enum Leaf {
    One,
    Factor { expr: Expr, bound: f64 },
}

/// Factor list of one output plus a bound for contiguous factor ranges.
pub(crate) struct TreeSpec<'a> {
    pub leaves: Vec<Leaf>,
    /// `sup |∏_{i ∈ [lo, hi)} factor_i|` over the input domain.
    pub range_bound: Box<dyn Fn(usize, usize) -> f64 + Send + Sync + 'a>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Const,
    Leaf,
    Identity { tol: f64, range: f64 },
    /// Operands enter as `αx` and `y/α`, both bounded by `range`.
    Mult { tol: f64, range: f64, alpha: f64 },
}

#[derive(Clone, Copy, Debug)]
struct NodePlan {
    kind: Kind,
    bound: f64,
    err: f64,
}

/// Gadget tolerances of one tree and its a priori root error.
struct TreePlan {
    levels: Vec<Vec<NodePlan>>,
    root_error: f64,
}

/// Share of the relative tolerance given to identity gadgets.
const IDENTITY_SHARE: f64 = 0.1;

fn plan_levels(spec: &TreeSpec<'_>, depth: u32, kappa: f64, bounds: &[Vec<Option<f64>>]) -> TreePlan {
    let mut cur: Vec<NodePlan> = spec
        .leaves
        .iter()
        .map(|l| match l {
            Leaf::One => NodePlan {
                kind: Kind::Const,
                bound: 1.0,
                err: 0.0,
            },
            Leaf::Factor { bound, .. } => NodePlan {
                kind: Kind::Leaf,
                bound: *bound,
                err: 0.0,
            },
        })
        .collect();
    let mut levels = vec![cur.clone()];
    for level in 1..=depth {
        let next: Vec<NodePlan> = cur
            .chunks(2)
            .enumerate()
            .map(|(i, pair)| {
                let (x, y) = (pair[0], pair[1]);
                let bound = bounds[level as usize][i].unwrap_or(1.0);
                match (x.kind == Kind::Const, y.kind == Kind::Const) {
                    (true, true) => NodePlan {
                        kind: Kind::Const,
                        bound: 1.0,
                        err: 0.0,
                    },
                    (false, true) | (true, false) => {
                        let c = if x.kind == Kind::Const { y } else { x };
                        let range = c.bound + c.err;
                        let tol = IDENTITY_SHARE * kappa * 2.0 * range * range;
                        NodePlan {
                            kind: Kind::Identity { tol, range },
                            bound,
                            err: c.err + tol,
                        }
                    }
                    (false, false) => {
                        let (rx, ry) = (x.bound + x.err, y.bound + y.err);
                        let tol = kappa * 2.0 * rx * ry;
                        NodePlan {
                            kind: Kind::Mult {
                                tol,
                                range: (rx * ry).sqrt(),
                                alpha: (ry / rx).sqrt(),
                            },
                            bound,
                            err: tol + x.bound * y.err + y.bound * x.err + x.err * y.err,
                        }
                    }
                }
            })
            .collect();
        levels.push(next.clone());
        cur = next;
    }
    let root_error = cur[0].err;
    TreePlan { levels, root_error }
}

fn plan_tree(spec: &TreeSpec<'_>, depth: u32, delta: f64) -> Result<TreePlan> {
    if spec.leaves.len() != 1 << depth {
        return Err(Error::dim("tree leaves must be padded to 2^depth"));
    }
    // True bounds for every non-constant node.
    let mut bounds = vec![vec![None; spec.leaves.len()]];
    let mut width = 1usize;
    for _ in 0..depth {
        width *= 2;
        let count = spec.leaves.len() / width;
        let row = (0..count)
            .map(|i| {
                let (lo, hi) = (i * width, (i + 1) * width);
                let any = spec.leaves[lo..hi].iter().any(|l| matches!(l, Leaf::Factor { .. }));
                any.then(|| (spec.range_bound)(lo, hi))
            })
            .collect();
        bounds.push(row);
    }
    let at = |kappa: f64| plan_levels(spec, depth, kappa, &bounds);
    let full = at(1.0);
    if full.root_error <= delta {
        return Ok(full);
    }
    let (mut lo, mut hi) = ((delta * 1e-14).ln(), 0.0);
    if at(lo.exp()).root_error > delta {
        return Err(Error::Numeric("no tolerance allocation meets the requested error".into()));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if at(mid.exp()).root_error <= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo.exp()))
}

/// Network with one output per tree, and the a priori error of each.
pub(crate) fn compile_trees(
    input_dim: usize,
    specs: &[TreeSpec<'_>],
    depth: u32,
    delta: f64,
) -> Result<(FeedforwardNetwork, Vec<f64>)> {
    let plans: Vec<TreePlan> = specs
        .par_iter()
        .map(|s| plan_tree(s, depth, delta))
        .collect::<Result<_>>()?;

    // Current node values per tree: `None` for the constant 1.
    let mut values: Vec<Vec<Option<Expr>>> = specs
        .iter()
        .map(|s| {
            s.leaves
                .iter()
                .map(|l| match l {
                    Leaf::One => None,
                    Leaf::Factor { expr, .. } => Some(expr.clone()),
                })
                .collect()
        })
        .collect();
    let mut layers = Vec::new();
    let mut prev_width = input_dim;
    for level in 1..=depth as usize {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut bias: Vec<f64> = Vec::new();
        let push = |e: &Expr, entries: &mut Vec<(usize, usize, f64)>, bias: &mut Vec<f64>| -> usize {
            let row = bias.len();
            bias.push(e.bias);
            entries.extend(e.terms.iter().map(|&(c, v)| (row, c, v)));
            row
        };
        for (tree, plan) in values.iter_mut().zip(&plans) {
            let next: Vec<Option<Expr>> = tree
                .chunks(2)
                .zip(&plan.levels[level])
                .map(|(pair, node)| -> Result<Option<Expr>> {
                    Ok(match node.kind {
                        Kind::Const | Kind::Leaf => None,
                        Kind::Identity { tol, range } => {
                            let x = pair[0].as_ref().or(pair[1].as_ref()).expect("one signal child");
                            let h = identity_step(tol, range);
                            let row = push(&x.scaled(h), &mut entries, &mut bias);
                            Some(Expr {
                                bias: 0.0,
                                terms: vec![(row, 1.0 / h)],
                            })
                        }
                        Kind::Mult { tol, range, alpha } => {
                            let (x, y) = (pair[0].as_ref().expect("signal"), pair[1].as_ref().expect("signal"));
                            let s = mult_stencil(tol, range)?;
                            let sum = Expr::combine(x, s.h * alpha, y, s.h / alpha);
                            let diff = Expr::combine(x, s.h * alpha, y, -s.h / alpha);
                            let shift = Expr::constant(SHIFT);
                            let rows = [
                                push(&Expr::combine(&shift, 1.0, &sum, 1.0), &mut entries, &mut bias),
                                push(&Expr::combine(&shift, 1.0, &sum, -1.0), &mut entries, &mut bias),
                                push(&Expr::combine(&shift, 1.0, &diff, 1.0), &mut entries, &mut bias),
                                push(&Expr::combine(&shift, 1.0, &diff, -1.0), &mut entries, &mut bias),
                            ];
                            let q = s.c / 4.0;
                            Some(Expr {
                                bias: 0.0,
                                terms: vec![(rows[0], q), (rows[1], q), (rows[2], -q), (rows[3], -q)],
                            })
                        }
                    })
                })
                .collect::<Result<_>>()?;
            *tree = next;
        }
        let rows = bias.len();
        layers.push(SparseAffine::from_triplets(rows, prev_width, entries, bias)?);
        prev_width = rows;
    }
    let mut entries = Vec::new();
    let mut bias = Vec::with_capacity(specs.len());
    for (row, tree) in values.iter().enumerate() {
        match &tree[0] {
            None => bias.push(1.0),
            Some(e) => {
                bias.push(e.bias);
                entries.extend(e.terms.iter().map(|&(c, v)| (row, c, v)));
            }
        }
    }
    layers.push(SparseAffine::from_triplets(specs.len(), prev_width, entries, bias)?);
    let net = FeedforwardNetwork::new(input_dim, Activation::Tanh, layers)?;
    Ok((net, plans.iter().map(|p| p.root_error).collect()))
}

fn tree_depth(factors: usize) -> u32 {
    if factors <= 1 {
        0
    } else {
        usize::BITS - (factors - 1).leading_zeros()
    }
}

/// `x₁⋯x_d` on `[-M, M]^d` within `δ` by a balanced tree of
/// multiplication gadgets of depth `⌈log₂ d⌉`.
pub fn product_tree(d: usize, delta: f64, m: f64) -> Result<FeedforwardNetwork> {
    if d == 0 {
        return Err(Error::domain("product tree needs d >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) || !(m >= 1.0 && m.is_finite()) {
        return Err(Error::domain("need delta in (0, 1) and M >= 1"));
    }
    let depth = tree_depth(d);
    let mut leaves: Vec<Leaf> = (0..d)
        .map(|i| Leaf::Factor {
            expr: Expr {
                bias: 0.0,
                terms: vec![(i, 1.0)],
            },
            bound: m,
        })
        .collect();
    leaves.resize(1 << depth, Leaf::One);
    let spec = TreeSpec {
        range_bound: Box::new(move |lo, hi| m.powi((hi.min(d) - lo.min(d)) as i32)),
        leaves,
    };
    Ok(compile_trees(d, &[spec], depth, delta)?.0)
}

/// Roots of `P_k` ordered so that every contiguous block of factors stays
/// bounded: `±r` pairs are adjacent, and pairs alternate between the
/// outermost and innermost remaining roots. An odd degree ends with the
/// root at 0.
fn ordered_roots(f: &Factorization) -> Vec<f64> {
    let mut pos: Vec<f64> = f.roots.iter().copied().filter(|r| *r > 1e-12).collect();
    pos.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(f.roots.len());
    let (mut lo, mut hi) = (0usize, pos.len());
    let mut outer = true;
    while lo < hi {
        let r = if outer {
            hi -= 1;
            pos[hi]
        } else {
            lo += 1;
            pos[lo - 1]
        };
        out.push(r);
        out.push(-r);
        outer = !outer;
    }
    if f.degree % 2 == 1 {
        out.push(0.0);
    }
    out
}

const BOUND_GRID: usize = 2000;
/// Relative allowance for maxima falling between grid points.
const BOUND_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy)]
struct LinearFactor {
    dim: usize,
    scale: f64,
    root: f64,
}

fn block_bound(factors: &[LinearFactor]) -> f64 {
    let mut total = 1.0;
    let mut start = 0;
    while start < factors.len() {
        let dim = factors[start].dim;
        let end = start + factors[start..].iter().take_while(|f| f.dim == dim).count();
        let sup = (0..=BOUND_GRID)
            .map(|i| {
                let y = -1.0 + 2.0 * i as f64 / BOUND_GRID as f64;
                factors[start..end]
                    .iter()
                    .map(|f| f.scale * (y - f.root))
                    .product::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        total *= sup * (1.0 + BOUND_MARGIN);
        start = end;
    }
    total
}

/// Sup-norm certification of an emulation on a point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub delta: f64,
    pub points: usize,
    pub max_error: f64,
    /// Per output, aligned with the index set.
    pub component_errors: Vec<f64>,
    /// Largest a priori bound over the outputs.
    pub a_priori_error: f64,
    pub passed: bool,
    pub width: usize,
    pub depth: usize,
    pub parameters: usize,
    /// `m(Λ) = max ‖ν‖₁`.
    pub max_order: u64,
    /// `width / (|Λ| m(Λ))`.
    pub c1: f64,
    /// `depth / log₂ max(m(Λ), 2)`.
    pub c2: f64,
}

/// Emulation of the Legendre dictionary of an index set.
#[derive(Clone, Debug)]
pub struct Emulation {
    pub network: FeedforwardNetwork,
    pub report: CertificationReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmulationOptions {
    /// Network input width; at least the index set's ambient dimension.
    pub input_dim: Option<usize>,
    pub cert_points: usize,
}

impl Default for EmulationOptions {
    fn default() -> Self {
        Self {
            input_dim: None,
            cert_points: 10_000,
        }
    }
}

/// `Φ_{Λ,δ}: R^n → R^{|Λ|}` with `‖Ψ_ν − Φ_ν‖_∞ ≤ δ` on `[-1, 1]^n`.
///
/// The first affine layer produces the factors `a_k (y_j − r)` of each
/// `ψ_k(y_j)`; products are formed by depth-`⌈log₂ m(Λ)⌉` gadget trees.
/// The result is certified on a Halton point set plus both corners
/// `±(1, …, 1)`; a failed certification is reported, not raised.
pub fn emulate_legendre(set: &IndexSet, delta: f64) -> Result<Emulation> {
    emulate_legendre_with(set, delta, &EmulationOptions::default())
}

pub fn emulate_legendre_with(set: &IndexSet, delta: f64, opts: &EmulationOptions) -> Result<Emulation> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let input_dim = opts.input_dim.unwrap_or(set.ambient_dim()).max(1);
    if input_dim < set.ambient_dim() {
        return Err(Error::dim(format!(
            "input width {input_dim} below the index set's {} dimensions",
            set.ambient_dim()
        )));
    }
    let max_order = set.max_order()?;
    let depth = tree_depth(max_order as usize);
    let mut factorizations: HashMap<u32, (f64, Vec<f64>)> = HashMap::new();
    for k in 1..=set.max_degree() {
        let f = factorize(k)?;
        factorizations.insert(k, (f.scale, ordered_roots(&f)));
    }
    let factor_lists: Vec<Vec<LinearFactor>> = set
        .iter()
        .map(|nu| {
            nu.iter()
                .flat_map(|(j, k)| {
                    let (scale, roots) = &factorizations[&k];
                    roots.iter().map(move |&root| LinearFactor {
                        dim: j as usize - 1,
                        scale: *scale,
                        root,
                    })
                })
                .collect()
        })
        .collect();
    let specs: Vec<TreeSpec<'_>> = factor_lists
        .iter()
        .map(|fs| {
            let mut leaves: Vec<Leaf> = fs
                .iter()
                .map(|f| Leaf::Factor {
                    expr: Expr {
                        bias: -f.scale * f.root,
                        terms: vec![(f.dim, f.scale)],
                    },
                    bound: f.scale * (1.0 + f.root.abs()),
                })
                .collect();
            leaves.resize(1 << depth, Leaf::One);
            let n = fs.len();
            TreeSpec {
                leaves,
                range_bound: Box::new(move |lo, hi| block_bound(&fs[lo.min(n)..hi.min(n)])),
            }
        })
        .collect();
    let (network, a_priori) = compile_trees(input_dim, &specs, depth, delta)?;
    let report = certify(&network, set, delta, opts.cert_points, &a_priori)?;
    if !report.passed {
        log::warn!(
            "emulation certification failed: max error {:.3e} > delta {delta:.3e}",
            report.max_error
        );
    }
    Ok(Emulation { network, report })
}

/// First `count` points of the Halton sequence mapped to `[-1, 1]^d`.
pub fn halton_points(count: usize, d: usize) -> Samples {
    let primes = first_primes(d);
    let rows: Vec<Vec<f64>> = (1..=count as u64)
        .map(|i| primes.iter().map(|&p| 2.0 * radical_inverse(i, p) - 1.0).collect())
        .collect();
    Samples::from_rows(&rows).expect("rectangular rows")
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut out) = (inv, 0.0);
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Exact `Ψ_ν(y)` for all members of `set` (inputs beyond the set's
/// dimensions are ignored).
pub(crate) fn legendre_features(set: &IndexSet, y: &[f64], out: &mut [f64]) {
    let active = set.ambient_dim();
    let stride = set.max_degree() as usize + 1;
    let mut table = vec![0.0; active * stride];
    for (j, chunk) in table.chunks_mut(stride).enumerate() {
        psi_all(y[j], chunk);
    }
    for (o, nu) in out.iter_mut().zip(set.iter()) {
        *o = nu
            .iter()
            .map(|(j, k)| table[(j as usize - 1) * stride + k as usize])
            .product();
    }
}

fn certify(
    net: &FeedforwardNetwork,
    set: &IndexSet,
    delta: f64,
    count: usize,
    a_priori: &[f64],
) -> Result<CertificationReport> {
    let n = net.input_dim();
    let mut pts = halton_points(count, n);
    let corners = Samples::from_rows(&[vec![1.0; n], vec![-1.0; n]])?;
    let mut rows: Vec<Vec<f64>> = pts.iter().map(<[f64]>::to_vec).collect();
    rows.extend(corners.iter().map(<[f64]>::to_vec));
    pts = Samples::from_rows(&rows)?;
    let big_n = set.len();
    let component_errors = (0..pts.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let y = pts.point(i);
            let mut exact = vec![0.0; big_n];
            legendre_features(set, y, &mut exact);
            let approx = net.eval(y)?;
            Ok(exact.iter().zip(&approx).map(|(a, b)| (a - b).abs()).collect())
        })
        .try_reduce(
            || vec![0.0; big_n],
            |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect()),
        )?;
    let max_error = component_errors.iter().cloned().fold(0.0, f64::max);
    let max_order = set.max_order()?;
    let width = net.width();
    let depth = net.depth();
    Ok(CertificationReport {
        delta,
        points: pts.len(),
        max_error,
        component_errors,
        a_priori_error: a_priori.iter().cloned().fold(0.0, f64::max),
        passed: max_error <= delta,
        width,
        depth,
        parameters: net.num_parameters(),
        max_order,
        c1: width as f64 / (set.len() as f64 * max_order.max(1) as f64),
        c2: depth as f64 / (max_order.max(2) as f64).log2(),
    })
}
