use serde::{Deserialize, Serialize};

use super::SlsError;
use crate::game_model::DynamicGameSpec;
use crate::linalg::{serde_matrix, Matrix, Vector};

/// A sequence of equally shaped matrices indexed by `n = 0..=N`.
///
/// Flattening order is `(n, row, col)` with columns fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSeq {
    blocks: Vec<Matrix>,
    rows: usize,
    cols: usize,
}

impl KernelSeq {
    pub fn zeros(horizon: usize, rows: usize, cols: usize) -> Self {
        Self {
            blocks: vec![Matrix::zeros(rows, cols); horizon + 1],
            rows,
            cols,
        }
    }

    pub fn from_blocks(blocks: Vec<Matrix>) -> Result<Self, SlsError> {
        let (rows, cols) = blocks.first().map(Matrix::shape).ok_or(SlsError::Shape(
            "kernel sequence needs at least one block".into(),
        ))?;
        if let Some(n) = blocks.iter().position(|b| b.shape() != (rows, cols)) {
            return Err(SlsError::Shape(format!(
                "block {n} is {:?}, expected {:?}",
                blocks[n].shape(),
                (rows, cols)
            )));
        }
        Ok(Self { blocks, rows, cols })
    }

    pub fn horizon(&self) -> usize {
        self.blocks.len() - 1
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn block(&self, n: usize) -> &Matrix {
        &self.blocks[n]
    }
    pub fn block_mut(&mut self, n: usize) -> &mut Matrix {
        &mut self.blocks[n]
    }
    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }
    pub fn flat_len(&self) -> usize {
        self.blocks.len() * self.rows * self.cols
    }

    pub fn flat_index(&self, n: usize, i: usize, j: usize) -> usize {
        (n * self.rows + i) * self.cols + j
    }

    pub fn to_vector(&self) -> Vector {
        let mut v = Vector::zeros(self.flat_len());
        let mut k = 0;
        for b in &self.blocks {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    v[k] = b[(i, j)];
                    k += 1;
                }
            }
        }
        v
    }

    pub fn from_vector(horizon: usize, rows: usize, cols: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), (horizon + 1) * rows * cols, "flat length mismatch");
        let blocks = (0..=horizon)
            .map(|n| {
                let base = n * rows * cols;
                Matrix::from_fn(rows, cols, |i, j| v[base + i * cols + j])
            })
            .collect();
        Self { blocks, rows, cols }
    }

    /// Copy of rows `start..start + count` of every block.
    pub fn row_slice(&self, start: usize, count: usize) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.rows(start, count).into_owned()).collect(),
            rows: count,
            cols: self.cols,
        }
    }

    pub fn set_row_slice(&mut self, start: usize, src: &KernelSeq) {
        for (b, s) in self.blocks.iter_mut().zip(&src.blocks) {
            b.rows_mut(start, src.rows).copy_from(s);
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(Matrix::norm_squared).sum()
    }
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(|b| b.amax()).fold(0.0, f64::max)
    }
    pub fn dot(&self, other: &Self) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.zip_apply(b, |x, y| *x += alpha * y);
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            *b *= alpha;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Closed-loop maps from `[x_0 disturbance; y noise]` to state and input.
///
/// `phi_x` blocks are `[Phi_xx Phi_xy]` and `phi_u` blocks stack all players'
/// `[Phi_ux Phi_uy]` rows in player order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    pub phi_x: KernelSeq,
    pub phi_u: KernelSeq,
    state_dim: usize,
    input_dims: Vec<usize>,
}

impl SystemResponse {
    pub fn new(spec: &DynamicGameSpec, phi_x: KernelSeq, phi_u: KernelSeq) -> Result<Self, SlsError> {
        let nc = spec.response_cols();
        if phi_x.rows() != spec.state_dim() || phi_x.cols() != nc {
            return Err(SlsError::Shape(format!(
                "phi_x blocks are {}x{}, expected {}x{nc}",
                phi_x.rows(),
                phi_x.cols(),
                spec.state_dim()
            )));
        }
        if phi_u.rows() != spec.total_input_dim() || phi_u.cols() != nc {
            return Err(SlsError::Shape(format!(
                "phi_u blocks are {}x{}, expected {}x{nc}",
                phi_u.rows(),
                phi_u.cols(),
                spec.total_input_dim()
            )));
        }
        if phi_x.horizon() != phi_u.horizon() {
            return Err(SlsError::Shape("phi_x and phi_u horizons differ".into()));
        }
        Ok(Self {
            phi_x,
            phi_u,
            state_dim: spec.state_dim(),
            input_dims: spec.input_dims().to_vec(),
        })
    }

    pub fn zeros(spec: &DynamicGameSpec) -> Self {
        let n = spec.fir_horizon();
        let nc = spec.response_cols();
        Self {
            phi_x: KernelSeq::zeros(n, spec.state_dim(), nc),
            phi_u: KernelSeq::zeros(n, spec.total_input_dim(), nc),
            state_dim: spec.state_dim(),
            input_dims: spec.input_dims().to_vec(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.horizon()
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn output_dim(&self) -> usize {
        self.phi_x.cols() - self.state_dim
    }
    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }
    fn offset(&self, p: usize) -> usize {
        self.input_dims[..p].iter().sum()
    }

    pub fn phi_xx(&self, n: usize) -> Matrix {
        self.phi_x.block(n).columns(0, self.state_dim).into_owned()
    }
    pub fn phi_xy(&self, n: usize) -> Matrix {
        let ny = self.output_dim();
        self.phi_x.block(n).columns(self.state_dim, ny).into_owned()
    }
    pub fn phi_ux(&self, p: usize, n: usize) -> Matrix {
        self.phi_u
            .block(n)
            .view((self.offset(p), 0), (self.input_dims[p], self.state_dim))
            .into_owned()
    }
    pub fn phi_uy(&self, p: usize, n: usize) -> Matrix {
        self.phi_u
            .block(n)
            .view((self.offset(p), self.state_dim), (self.input_dims[p], self.output_dim()))
            .into_owned()
    }

    pub fn to_json(&self) -> String {
        let n = self.horizon();
        let players = self.input_dims.len();
        let doc = ResponseDoc {
            fir_horizon: n,
            state_dim: self.state_dim,
            output_dim: self.output_dim(),
            input_dims: self.input_dims.clone(),
            phi_xx: (0..=n).map(|k| self.phi_xx(k)).collect(),
            phi_xy: (0..=n).map(|k| self.phi_xy(k)).collect(),
            phi_ux: (0..players)
                .map(|p| PlayerBlocks((0..=n).map(|k| self.phi_ux(p, k)).collect()))
                .collect(),
            phi_uy: (0..players)
                .map(|p| PlayerBlocks((0..=n).map(|k| self.phi_uy(p, k)).collect()))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("response serializes")
    }

    pub fn from_json(spec: &DynamicGameSpec, text: &str) -> Result<Self, SlsError> {
        let doc: ResponseDoc =
            serde_json::from_str(text).map_err(|e| SlsError::Parse(e.to_string()))?;
        let nx = spec.state_dim();
        let ny = spec.output_dim();
        if doc.state_dim != nx || doc.output_dim != ny || doc.input_dims != spec.input_dims() {
            return Err(SlsError::Shape("response dimensions do not match the spec".into()));
        }
        let n = doc.fir_horizon;
        let lens_ok = doc.phi_xx.len() == n + 1
            && doc.phi_xy.len() == n + 1
            && doc.phi_ux.len() == spec.num_players()
            && doc.phi_uy.len() == spec.num_players()
            && doc.phi_ux.iter().chain(&doc.phi_uy).all(|b| b.0.len() == n + 1);
        if !lens_ok {
            return Err(SlsError::Shape(format!("expected {} blocks per kernel", n + 1)));
        }
        let nc = nx + ny;
        let mut phi_x = KernelSeq::zeros(n, nx, nc);
        let mut phi_u = KernelSeq::zeros(n, spec.total_input_dim(), nc);
        let shape_err = |what: &str, k: usize| SlsError::Shape(format!("{what} block {k} has the wrong shape"));
        for k in 0..=n {
            if doc.phi_xx[k].shape() != (nx, nx) {
                return Err(shape_err("phi_xx", k));
            }
            if doc.phi_xy[k].shape() != (nx, ny) {
                return Err(shape_err("phi_xy", k));
            }
            phi_x.block_mut(k).columns_mut(0, nx).copy_from(&doc.phi_xx[k]);
            phi_x.block_mut(k).columns_mut(nx, ny).copy_from(&doc.phi_xy[k]);
            for p in 0..spec.num_players() {
                let m = spec.input_dim(p);
                let off = spec.input_offset(p);
                let ux = &doc.phi_ux[p].0[k];
                let uy = &doc.phi_uy[p].0[k];
                if ux.shape() != (m, nx) {
                    return Err(shape_err("phi_ux", k));
                }
                if uy.shape() != (m, ny) {
                    return Err(shape_err("phi_uy", k));
                }
                phi_u.block_mut(k).view_mut((off, 0), (m, nx)).copy_from(ux);
                phi_u.block_mut(k).view_mut((off, nx), (m, ny)).copy_from(uy);
            }
        }
        Self::new(spec, phi_x, phi_u)
    }
}

#[derive(Serialize, Deserialize)]
struct PlayerBlocks(#[serde(with = "serde_matrix::seq")] Vec<Matrix>);

#[derive(Serialize, Deserialize)]
struct ResponseDoc {
    fir_horizon: usize,
    state_dim: usize,
    output_dim: usize,
    input_dims: Vec<usize>,
    #[serde(with = "serde_matrix::seq")]
    phi_xx: Vec<Matrix>,
    #[serde(with = "serde_matrix::seq")]
    phi_xy: Vec<Matrix>,
    phi_ux: Vec<PlayerBlocks>,
    phi_uy: Vec<PlayerBlocks>,
}
