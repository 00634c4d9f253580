//! Random sampling, design/data matrix assembly and sampling-discretization
//! diagnostics.
//!
//! All randomness comes from ChaCha20 (`rand_chacha`) keyed by a `u64` seed
//! and a stream id, so draws are reproducible across platforms and
//! independent streams can be handed to parallel workers.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre::psi_all;
use crate::model::TargetFunction;
use crate::multiindex::IndexSet;

/// Stream ids used for the distinct random draws of one experiment cell.
pub mod streams {
    pub const SAMPLES: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const MONTE_CARLO: u64 = 2;
}

pub fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `m` points in `[-1, 1]^d`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    m: usize,
    d: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("ragged sample rows"));
        }
        Ok(Self {
            m: rows.len(),
            d,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d.max(1)).take(self.m)
    }

    /// Rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.point(p));
        }
        Self { m: perm.len(), d: self.d, data }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|j| format!("y{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `m` i.i.d. uniform points on `[-1, 1]^d`.
pub fn draw_samples(m: usize, d: usize, seed: u64) -> Result<Samples> {
    if m == 0 || d == 0 {
        return Err(Error::domain("need m >= 1 and d >= 1"));
    }
    let mut r = rng(seed, streams::SAMPLES);
    let data = (0..m * d).map(|_| r.random_range(-1.0..=1.0)).collect();
    Ok(Samples { m, d, data })
}

/// Unnormalized design matrix `Ψ_{ν_j}(y_i)`.
pub fn design_matrix(set: &IndexSet, points: &Samples) -> Result<DMatrix<f64>> {
    if set.ambient_dim() > points.dim() {
        return Err(Error::dim(format!(
            "index set uses {} dimensions but points have {}",
            set.ambient_dim(),
            points.dim()
        )));
    }
    let n = set.len();
    let kmax = set.max_degree() as usize;
    let active = set.ambient_dim();
    let rows: Vec<Vec<f64>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let y = points.point(i);
            let mut table = vec![0.0; active * (kmax + 1)];
            for j in 0..active {
                psi_all(y[j], &mut table[j * (kmax + 1)..(j + 1) * (kmax + 1)]);
            }
            set.iter()
                .map(|nu| {
                    nu.iter()
                        .map(|(j, k)| table[(j as usize - 1) * (kmax + 1) + k as usize])
                        .product()
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(points.len(), n, |i, j| rows[i][j]))
}

/// Evaluate `target` at every point, row `i` holding `f(y_i)`.
pub fn evaluate_target(target: &dyn TargetFunction, points: &Samples) -> Result<DMatrix<f64>> {
    let k = target.output_dim();
    let rows: Vec<Vec<f64>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; k];
            target.evaluate(points.point(i), &mut out).map(|_| out)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(points.len(), k, |i, j| rows[i][j]))
}

/// Noise `e` with `√(Σ_i ‖e_i‖²_V) = scale`, direction uniform on that sphere.
pub fn draw_noise(m: usize, gram: &DMatrix<f64>, scale: f64, seed: u64) -> Result<DMatrix<f64>> {
    let k = gram.nrows();
    if scale == 0.0 {
        return Ok(DMatrix::zeros(m, k));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("Gram matrix is not positive definite".into()))?;
    let mut r = rng(seed, streams::NOISE);
    let xi = DMatrix::<f64>::from_fn(m, k, |_, _| r.sample(StandardNormal));
    let norm = xi.norm();
    // e_i = L^{-T} ξ_i so that e_iᵀ G e_i = ‖ξ_i‖².
    let lt = chol.l().transpose();
    let e_t = lt
        .solve_upper_triangular(&xi.transpose())
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    Ok(e_t.transpose() * (scale / norm))
}

/// `A` (`m × N`), `F` (`m × K`) and the data that produced them.
#[derive(Clone, Debug)]
pub struct MeasurementSystem {
    pub points: Samples,
    /// `Ψ_{ν_j}(y_i) / √m`.
    pub a: DMatrix<f64>,
    /// Rows `(f(y_i) + e_i) / √m`.
    pub f: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub index_set: IndexSet,
    pub seed: u64,
    /// `‖e‖₂` of the injected noise (unnormalized).
    pub noise_norm: f64,
}

impl MeasurementSystem {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn k(&self) -> usize {
        self.f.ncols()
    }

    /// Same system with rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let a = DMatrix::from_fn(perm.len(), self.n(), |i, j| self.a[(perm[i], j)]);
        let f = DMatrix::from_fn(perm.len(), self.k(), |i, j| self.f[(perm[i], j)]);
        Self {
            points: self.points.permuted(perm),
            a,
            f,
            gram: self.gram.clone(),
            index_set: self.index_set.clone(),
            seed: self.seed,
            noise_norm: self.noise_norm,
        }
    }

    fn header(&self) -> SystemHeader {
        SystemHeader {
            format: SYSTEM_FORMAT.to_string(),
            version: 1,
            m: self.m(),
            n: self.n(),
            k: self.k(),
            d: self.points.dim(),
            seed: self.seed,
            noise_norm: self.noise_norm,
            index_set_digest: self.index_set.digest(),
            index_set: serde_json::from_str(&self.index_set.to_json())
                .expect("index set JSON round-trips"),
        }
    }

    /// Binary container: magic, `u64` header length, JSON header, then
    /// points (`m × d`), `A`, `F` and `G` as row-major little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        w.write_all(SYSTEM_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.points.data {
            w.write_all(&v.to_le_bytes())?;
        }
        for mat in [&self.a, &self.f, &self.gram] {
            write_row_major(mat, &mut w)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SYSTEM_MAGIC {
            return Err(Error::Format("not a measurement system container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: SystemHeader = serde_json::from_slice(&header)?;
        if header.format != SYSTEM_FORMAT || header.version != 1 {
            return Err(Error::Format(format!("unsupported container {} v{}", header.format, header.version)));
        }
        let index_set = IndexSet::from_json(&header.index_set.to_string())?;
        if index_set.digest() != header.index_set_digest {
            return Err(Error::Format("index set digest mismatch".into()));
        }
        let data = read_f64s(&mut r, header.m * header.d)?;
        let a = read_row_major(&mut r, header.m, header.n)?;
        let f = read_row_major(&mut r, header.m, header.k)?;
        let gram = read_row_major(&mut r, header.k, header.k)?;
        Ok(Self {
            points: Samples { m: header.m, d: header.d, data },
            a,
            f,
            gram,
            index_set: index_set.with_ambient_dim(header.d)?,
            seed: header.seed,
            noise_norm: header.noise_norm,
        })
    }

    /// `y_*, a_*, f_*` columns, one row per sample. Intended for small systems.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.points.dim()).map(|j| format!("y{j}")).collect();
        header.extend((1..=self.n()).map(|j| format!("a{j}")));
        header.extend((1..=self.k()).map(|j| format!("f{j}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.m() {
            let mut row: Vec<String> = self.points.point(i).iter().map(|v| format!("{v:e}")).collect();
            row.extend(self.a.row(i).iter().map(|v| format!("{v:e}")));
            row.extend(self.f.row(i).iter().map(|v| format!("{v:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

const SYSTEM_MAGIC: &[u8; 8] = b"HFSYS\x00\x01\n";
const SYSTEM_FORMAT: &str = "holofit-system";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemHeader {
    format: String,
    version: u32,
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    seed: u64,
    noise_norm: f64,
    index_set_digest: String,
    index_set: serde_json::Value,
}

pub(crate) fn write_row_major<W: Write>(mat: &DMatrix<f64>, w: &mut W) -> Result<()> {
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            w.write_all(&mat[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn read_row_major<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let data = read_f64s(r, rows * cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Assemble `A c + e + e′ = f` in normalized form.
pub fn build_system(
    target: &dyn TargetFunction,
    set: &IndexSet,
    points: Samples,
    noise_scale: f64,
    seed: u64,
) -> Result<MeasurementSystem> {
    if set.ambient_dim() > target.dim() {
        return Err(Error::dim(format!(
            "index set uses {} dimensions, target has {}",
            set.ambient_dim(),
            target.dim()
        )));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::domain("noise scale must be nonnegative"));
    }
    let m = points.len();
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();
    let a = design_matrix(set, &points)? * inv_sqrt_m;
    let gram = target.gram();
    let values = evaluate_target(target, &points)?;
    let noise = draw_noise(m, &gram, noise_scale, seed)?;
    let f = (values + noise) * inv_sqrt_m;
    Ok(MeasurementSystem {
        points,
        a,
        f,
        gram,
        index_set: set.clone(),
        seed,
        noise_norm: noise_scale,
    })
}

/// Squared extreme singular values `(σ_min², σ_max²)` of the column subset,
/// i.e. the sharpest sampling-discretization constants `(α, β)` for the
/// span of the selected basis functions.
pub fn discretization_constants(a: &DMatrix<f64>, cols: &[usize]) -> Result<(f64, f64)> {
    if let Some(&bad) = cols.iter().find(|&&c| c >= a.ncols()) {
        return Err(Error::dim(format!("column {bad} out of range")));
    }
    if cols.is_empty() {
        return Ok((0.0, 0.0));
    }
    let sub = a.select_columns(cols);
    let sv = sub.singular_values();
    let smax = sv.max();
    let rank_deficient = cols.len() > a.nrows();
    let smin = if rank_deficient { 0.0 } else { sv.min() };
    Ok((smin * smin, smax * smax))
}

/// Monte Carlo `‖f − g‖_{L²_ρ(U; V)}` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Fresh points from the Monte Carlo stream of `seed`, independent of the
/// training draw.
pub fn l2_error(
    f: &dyn TargetFunction,
    approx: &dyn TargetFunction,
    n_mc: usize,
    seed: u64,
) -> Result<L2Estimate> {
    if n_mc == 0 {
        return Err(Error::domain("n_mc must be >= 1"));
    }
    if f.output_dim() != approx.output_dim() {
        return Err(Error::dim("target and approximant have different output spaces"));
    }
    let d = f.dim().max(approx.dim());
    let mut r = rng(seed, streams::MONTE_CARLO);
    let data: Vec<f64> = (0..n_mc * d).map(|_| r.random_range(-1.0..=1.0)).collect();
    let points = Samples { m: n_mc, d, data };
    let gram = f.gram();
    let k = f.output_dim();
    let sq: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let y = points.point(i);
            let mut a = vec![0.0; k];
            let mut b = vec![0.0; k];
            f.evaluate(y, &mut a)?;
            approx.evaluate(y, &mut b)?;
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            Ok(gram_norm_sq(&gram, &diff))
        })
        .collect::<Result<_>>()?;
    let n = n_mc as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = if n_mc > 1 {
        sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let value = mean.sqrt();
    let std_error = if value > 0.0 { (var / n).sqrt() / (2.0 * value) } else { 0.0 };
    Ok(L2Estimate {
        value,
        std_error,
        samples: n_mc,
    })
}

pub(crate) fn gram_norm_sq(gram: &DMatrix<f64>, v: &[f64]) -> f64 {
    let k = v.len();
    if k == 1 {
        return gram[(0, 0)] * v[0] * v[0];
    }
    let mut s = 0.0;
    for i in 0..k {
        let mut gi = 0.0;
        for j in 0..k {
            let g = gram[(i, j)];
            if g != 0.0 {
                gi += g * v[j];
            }
        }
        s += v[i] * gi;
    }
    s
}
