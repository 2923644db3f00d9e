//! Row-major dense matrices and the mean-normalized incidence products
//! `B⁻¹Hᵀ·X` (gather) and `D⁻¹H·X` (scatter), with their adjoints.
//!
//! A zero degree normalizes to zero, so isolated nodes and empty
//! hyperedges produce all-zero rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::IncidenceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::from_vec",
                format!("{} values", rows * cols),
                values.len(),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("DenseMatrix::from_rows", cols, bad.len()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.concat(),
        })
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![v; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `alpha * a + beta * b`.
    pub fn lin_comb(alpha: f64, a: &Self, beta: f64, b: &Self) -> Result<Self> {
        a.check_same_shape(b, "lin_comb")?;
        Ok(Self {
            rows: a.rows,
            cols: a.cols,
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| alpha * x + beta * y)
                .collect(),
        })
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Plain dense product, used by the reference paths.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{} rows", self.cols),
                format!("{} rows", other.rows),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(r).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[inline]
fn inv(deg: usize) -> f64 {
    if deg == 0 {
        0.0
    } else {
        1.0 / deg as f64
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

/// `B⁻¹Hᵀ·X`: row `e` is the mean of the node rows in hyperedge `e`.
pub fn hyperedge_gather(inc: &IncidenceMatrix, node_emb: &DenseMatrix) -> Result<DenseMatrix> {
    if node_emb.rows() != inc.num_nodes() {
        return Err(Error::shape("hyperedge_gather", inc.num_nodes(), node_emb.rows()));
    }
    let mut out = DenseMatrix::zeros(inc.num_hyperedges(), node_emb.cols());
    for e in 0..inc.num_hyperedges() {
        let nodes = inc.nodes_of(e);
        let w = inv(nodes.len());
        let dst = out.row_mut(e);
        for &n in nodes {
            add_into(dst, node_emb.row(n), 1.0);
        }
        dst.iter_mut().for_each(|v| *v *= w);
    }
    Ok(out)
}

/// `D⁻¹H·Y`: row `n` is the mean of the rows of the hyperedges containing `n`.
pub fn node_scatter(inc: &IncidenceMatrix, edge_emb: &DenseMatrix) -> Result<DenseMatrix> {
    if edge_emb.rows() != inc.num_hyperedges() {
        return Err(Error::shape("node_scatter", inc.num_hyperedges(), edge_emb.rows()));
    }
    let mut out = DenseMatrix::zeros(inc.num_nodes(), edge_emb.cols());
    for n in 0..inc.num_nodes() {
        let edges = inc.hyperedges_of(n);
        let w = inv(edges.len());
        let dst = out.row_mut(n);
        for &e in edges {
            add_into(dst, edge_emb.row(e), 1.0);
        }
        dst.iter_mut().for_each(|v| *v *= w);
    }
    Ok(out)
}

/// Adjoint of [`hyperedge_gather`]: `H·B⁻¹·G`, mapping hyperedge-shaped
/// gradients back onto nodes.
pub fn hyperedge_gather_adjoint(inc: &IncidenceMatrix, grad: &DenseMatrix) -> Result<DenseMatrix> {
    if grad.rows() != inc.num_hyperedges() {
        return Err(Error::shape(
            "hyperedge_gather_adjoint",
            inc.num_hyperedges(),
            grad.rows(),
        ));
    }
    let mut out = DenseMatrix::zeros(inc.num_nodes(), grad.cols());
    for n in 0..inc.num_nodes() {
        let dst = out.row_mut(n);
        for &e in inc.hyperedges_of(n) {
            add_into(dst, grad.row(e), inv(inc.hyperedge_degree(e)));
        }
    }
    Ok(out)
}

/// Adjoint of [`node_scatter`]: `Hᵀ·D⁻¹·G`.
pub fn node_scatter_adjoint(inc: &IncidenceMatrix, grad: &DenseMatrix) -> Result<DenseMatrix> {
    if grad.rows() != inc.num_nodes() {
        return Err(Error::shape("node_scatter_adjoint", inc.num_nodes(), grad.rows()));
    }
    let mut out = DenseMatrix::zeros(inc.num_hyperedges(), grad.cols());
    for e in 0..inc.num_hyperedges() {
        let dst = out.row_mut(e);
        for &n in inc.nodes_of(e) {
            add_into(dst, grad.row(n), inv(inc.node_degree(n)));
        }
    }
    Ok(out)
}

/// Which side of a dense incidence product to normalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    /// `B⁻¹Hᵀx`, input rows are nodes.
    Hyperedge,
    /// `D⁻¹Hx`, input rows are hyperedges.
    Node,
}

/// Explicit dense evaluation of the gather/scatter products from a dense
/// 0/1 incidence `h` (nodes x hyperedges). Test oracle; quadratic memory.
pub fn dense_reference_product(
    h: &DenseMatrix,
    x: &DenseMatrix,
    normalize: Normalize,
) -> Result<DenseMatrix> {
    let (op, deg_of): (DenseMatrix, Vec<f64>) = match normalize {
        Normalize::Hyperedge => {
            let ht = h.transpose();
            let deg = (0..ht.rows()).map(|r| ht.row(r).iter().sum()).collect();
            (ht, deg)
        }
        Normalize::Node => {
            let deg = (0..h.rows()).map(|r| h.row(r).iter().sum()).collect();
            (h.clone(), deg)
        }
    };
    let mut out = op.matmul(x)?;
    for (r, d) in deg_of.into_iter().enumerate() {
        let w = if d == 0.0 { 0.0 } else { 1.0 / d };
        out.row_mut(r).iter_mut().for_each(|v| *v *= w);
    }
    Ok(out)
}

/// Dense 0/1 copy of an incidence structure.
pub fn incidence_to_dense(inc: &IncidenceMatrix) -> DenseMatrix {
    DenseMatrix::from_rows(&inc.to_dense())
        .unwrap_or_else(|_| DenseMatrix::zeros(inc.num_nodes(), inc.num_hyperedges()))
}
