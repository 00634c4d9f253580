use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{read_f64s, Samples};
use crate::model::TargetFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }
}

/// `x ↦ W x + b` with `W` stored in compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAffine {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    bias: Vec<f64>,
}

impl SparseAffine {
    /// Entries `(row, col, value)` in any order; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != rows {
            return Err(Error::dim(format!("bias has {} entries for {rows} rows", bias.len())));
        }
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::dim(format!("entry ({r}, {c}) outside {rows}x{cols}")));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            col_idx.push(c as u32);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            bias,
        })
    }

    pub fn from_dense(w: &DMatrix<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut entries = Vec::new();
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                if w[(r, c)] != 0.0 {
                    entries.push((r, c, w[(r, c)]));
                }
            }
        }
        Self::from_triplets(w.nrows(), w.ncols(), entries, bias)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                w[(r, c)] = v;
            }
        }
        w
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let mut acc = self.bias[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            *o = acc;
        }
    }

    /// `Mᵀ · self` for a dense `M` with `self.rows` rows.
    fn left_multiply_transpose(&self, m: &DMatrix<f64>) -> Result<Self> {
        let k = m.ncols();
        let mut dense = vec![vec![0.0; self.cols]; k];
        let mut bias = vec![0.0; k];
        for r in 0..self.rows {
            for (j, out) in dense.iter_mut().enumerate() {
                let coef = m[(r, j)];
                if coef == 0.0 {
                    continue;
                }
                bias[j] += coef * self.bias[r];
                for (c, v) in self.row(r) {
                    out[c] += coef * v;
                }
            }
        }
        let entries = dense
            .iter()
            .enumerate()
            .flat_map(|(j, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(c, v)| (j, c, *v))
            })
            .collect();
        Self::from_triplets(k, self.cols, entries, bias)
    }
}

/// Feedforward network `A_{L+1} ∘ σ ∘ A_L ∘ ⋯ ∘ σ ∘ A_1` (no activation on
/// the final affine map).
#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardNetwork {
    input_dim: usize,
    activation: Activation,
    layers: Vec<SparseAffine>,
}

impl FeedforwardNetwork {
    pub fn new(input_dim: usize, activation: Activation, layers: Vec<SparseAffine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim("network needs at least one affine map"));
        }
        let mut width = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            if layer.cols != width {
                return Err(Error::dim(format!(
                    "layer {l} expects {} inputs but receives {width}",
                    layer.cols
                )));
            }
            width = layer.rows;
        }
        Ok(Self {
            input_dim,
            activation,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").rows
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[SparseAffine] {
        &self.layers
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Largest hidden layer; zero for a purely affine network.
    pub fn width(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(SparseAffine::rows)
            .max()
            .unwrap_or(0)
    }

    /// Nonzero weights plus biases.
    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.nnz() + l.rows).sum()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() < self.input_dim {
            return Err(Error::dim(format!("network needs {} inputs, got {}", self.input_dim, x.len())));
        }
        if out.len() != self.output_dim() {
            return Err(Error::dim("output buffer size"));
        }
        let mut cur = x[..self.input_dim].to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l == last {
                layer.apply(&cur, out);
            } else {
                let mut next = vec![0.0; layer.rows];
                layer.apply(&cur, &mut next);
                self.activation.apply(&mut next);
                cur = next;
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Row `i` holds the output at point `i`.
    pub fn eval_batch(&self, points: &Samples) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = (0..points.len())
            .into_par_iter()
            .map(|i| self.eval(points.point(i)))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(points.len(), self.output_dim(), |i, j| rows[i][j]))
    }

    /// `Zᵀ ∘ self`, folding the `N × K` matrix into the final affine map.
    pub fn compose_output(&self, z: &DMatrix<f64>) -> Result<Self> {
        if z.nrows() != self.output_dim() {
            return Err(Error::dim(format!("Z has {} rows for {} outputs", z.nrows(), self.output_dim())));
        }
        let mut layers = self.layers.clone();
        let last = layers.pop().expect("nonempty");
        layers.push(last.left_multiply_transpose(z)?);
        Self::new(self.input_dim, self.activation, layers)
    }

    /// Magic, `u64` header length, JSON header, then per layer: row
    /// pointers (`u64`), column indices (`u32`), values and biases (`f64`),
    /// all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = NetworkHeader {
            format: NETWORK_FORMAT.into(),
            version: 1,
            input_dim: self.input_dim,
            output_dim: self.output_dim(),
            activation: self.activation,
            width: self.width(),
            depth: self.depth(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerShape {
                    rows: l.rows,
                    cols: l.cols,
                    nnz: l.nnz(),
                })
                .collect(),
        };
        let bytes = serde_json::to_vec(&header)?;
        w.write_all(NETWORK_MAGIC)?;
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(&bytes)?;
        for l in &self.layers {
            for &p in &l.row_ptr {
                w.write_all(&(p as u64).to_le_bytes())?;
            }
            for &c in &l.col_idx {
                w.write_all(&c.to_le_bytes())?;
            }
            for v in l.values.iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != NETWORK_MAGIC {
            return Err(Error::Format("not a network container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut bytes = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut bytes)?;
        let header: NetworkHeader = serde_json::from_slice(&bytes)?;
        if header.format != NETWORK_FORMAT || header.version != 1 {
            return Err(Error::Format(format!("unsupported container {} v{}", header.format, header.version)));
        }
        let mut layers = Vec::with_capacity(header.layers.len());
        for shape in &header.layers {
            let mut buf = vec![0u8; 8 * (shape.rows + 1)];
            r.read_exact(&mut buf)?;
            let row_ptr: Vec<usize> = buf
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
                .collect();
            let mut buf = vec![0u8; 4 * shape.nnz];
            r.read_exact(&mut buf)?;
            let col_idx: Vec<u32> = buf
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let values = read_f64s(&mut r, shape.nnz)?;
            let bias = read_f64s(&mut r, shape.rows)?;
            let valid = row_ptr.first() == Some(&0)
                && row_ptr.last() == Some(&shape.nnz)
                && row_ptr.windows(2).all(|w| w[0] <= w[1])
                && col_idx.iter().all(|&c| (c as usize) < shape.cols);
            if !valid {
                return Err(Error::Format("corrupt sparse layer".into()));
            }
            layers.push(SparseAffine {
                rows: shape.rows,
                cols: shape.cols,
                row_ptr,
                col_idx,
                values,
                bias,
            });
        }
        Self::new(header.input_dim, header.activation, layers)
    }
}

impl TargetFunction for FeedforwardNetwork {
    fn dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        FeedforwardNetwork::output_dim(self)
    }

    fn evaluate(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.eval_into(y, out)
    }
}

const NETWORK_MAGIC: &[u8; 8] = b"HFNET\x00\x01\n";
const NETWORK_FORMAT: &str = "holofit-network";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkHeader {
    format: String,
    version: u32,
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    width: usize,
    depth: usize,
    layers: Vec<LayerShape>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerShape {
    rows: usize,
    cols: usize,
    nnz: usize,
}
