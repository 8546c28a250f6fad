//! Game specifications: dynamics, costs, constraints and information delays.

mod grid;
mod random;

pub use grid::{grid_power_game, GridGame, GridParams};
pub use random::{random_game, RandomGameParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{max_abs, rank, serde_matrix, spectral_radius, Matrix};

/// Relative rank threshold used by the assumption checks.
pub const RANK_TOL: f64 = 1e-9;
/// Absolute threshold for the orthogonality checks.
pub const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("dimension mismatch between {left} and {right}: {detail}")]
    DimensionMismatch {
        left: String,
        right: String,
        detail: String,
    },
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },
    #[error("malformed specification: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Plain-data form of a [`DynamicGameSpec`], also its JSON schema.
///
/// Matrices are row-major nested arrays. Per-player quantities are arrays
/// indexed by player.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecParts {
    pub num_players: usize,
    pub state_dim: usize,
    pub input_dims: Vec<usize>,
    pub output_dim: usize,
    pub noise_dim: usize,
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix::seq")]
    pub b_u: Vec<Matrix>,
    #[serde(with = "serde_matrix")]
    pub b_w: Matrix,
    #[serde(with = "serde_matrix")]
    pub c: Matrix,
    #[serde(with = "serde_matrix")]
    pub d_w: Matrix,
    #[serde(with = "serde_matrix::seq")]
    pub w_x: Vec<Matrix>,
    #[serde(with = "serde_matrix::seq")]
    pub w_u: Vec<Matrix>,
    #[serde(with = "serde_matrix")]
    pub g_x: Matrix,
    #[serde(with = "serde_matrix")]
    pub g_u: Matrix,
    #[serde(with = "serde_matrix::seq")]
    pub g_up: Vec<Matrix>,
    pub actuation_delay: usize,
    pub communication_delay: usize,
    pub fir_horizon: usize,
    pub chance_level: f64,
}

/// A validated N-player linear stochastic game with FIR horizon.
///
/// Dynamics `x+ = A x + B_w w + sum_p B_u^p u^p`, measurements
/// `y = C x + D_w w`, player costs `||W_x^p x + W_u^p u^p||^2`, and chance
/// constraints `[G_x G_u] [x; u] <= 1`, `G_u^p u^p <= 1`.
#[derive(Debug, Clone)]
pub struct DynamicGameSpec {
    parts: SpecParts,
    b_u_stacked: Matrix,
    w_w: Matrix,
    offsets: Vec<usize>,
}

fn mismatch(left: impl Into<String>, right: impl Into<String>, detail: String) -> SpecError {
    SpecError::DimensionMismatch {
        left: left.into(),
        right: right.into(),
        detail,
    }
}

fn check_shape(
    m: &Matrix,
    name: &str,
    against: &str,
    rows: usize,
    cols: usize,
) -> Result<(), SpecError> {
    if m.shape() != (rows, cols) {
        return Err(mismatch(
            name,
            against,
            format!("expected {rows}x{cols}, found {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// An empty row-major array carries no column count; restore it.
fn fix_empty(m: &mut Matrix, cols: usize) {
    if m.nrows() == 0 {
        *m = Matrix::zeros(0, cols);
    }
}

impl DynamicGameSpec {
    pub fn from_parts(mut parts: SpecParts) -> Result<Self, SpecError> {
        let np = parts.num_players;
        if np == 0 {
            return Err(SpecError::InvalidParameter {
                name: "num_players",
                detail: "at least one player is required".into(),
            });
        }
        for (name, len) in [
            ("input_dims", parts.input_dims.len()),
            ("b_u", parts.b_u.len()),
            ("w_x", parts.w_x.len()),
            ("w_u", parts.w_u.len()),
            ("g_up", parts.g_up.len()),
        ] {
            if len != np {
                return Err(mismatch(
                    name,
                    "num_players",
                    format!("{len} entries for {np} players"),
                ));
            }
        }
        let nx = parts.state_dim;
        let ny = parts.output_dim;
        let nw = parts.noise_dim;
        let nu: usize = parts.input_dims.iter().sum();
        if nx == 0 || ny == 0 || nw == 0 || parts.input_dims.contains(&0) {
            return Err(SpecError::InvalidParameter {
                name: "dimensions",
                detail: "state, output, noise and input dimensions must be positive".into(),
            });
        }

        fix_empty(&mut parts.g_x, nx);
        fix_empty(&mut parts.g_u, nu);
        for (g, &m) in parts.g_up.iter_mut().zip(&parts.input_dims) {
            fix_empty(g, m);
        }

        check_shape(&parts.a, "A", "state_dim", nx, nx)?;
        check_shape(&parts.b_w, "B_w", "A", nx, nw)?;
        check_shape(&parts.c, "C", "A", ny, nx)?;
        check_shape(&parts.d_w, "D_w", "B_w", ny, nw)?;
        for p in 0..np {
            let m = parts.input_dims[p];
            check_shape(&parts.b_u[p], &format!("B_u[{p}]"), "A", nx, m)?;
            if parts.w_x[p].ncols() != nx {
                return Err(mismatch(
                    format!("W_x[{p}]"),
                    "A",
                    format!("expected {nx} columns, found {}", parts.w_x[p].ncols()),
                ));
            }
            let nz = parts.w_x[p].nrows();
            check_shape(&parts.w_u[p], &format!("W_u[{p}]"), &format!("W_x[{p}]"), nz, m)?;
            if parts.g_up[p].ncols() != m {
                return Err(mismatch(
                    format!("G_u^{p}"),
                    format!("B_u[{p}]"),
                    format!("expected {m} columns, found {}", parts.g_up[p].ncols()),
                ));
            }
        }
        check_shape(&parts.g_x, "G_x", "A", parts.g_x.nrows(), nx)?;
        check_shape(&parts.g_u, "G_u", "G_x", parts.g_x.nrows(), nu)?;

        if parts.communication_delay < 1 {
            return Err(SpecError::InvalidParameter {
                name: "communication_delay",
                detail: "must be at least 1".into(),
            });
        }
        if parts.fir_horizon < 2 {
            return Err(SpecError::InvalidParameter {
                name: "fir_horizon",
                detail: "must be at least 2".into(),
            });
        }
        if !(parts.chance_level > 0.5 && parts.chance_level < 1.0) {
            return Err(SpecError::InvalidParameter {
                name: "chance_level",
                detail: format!("{} is outside (0.5, 1)", parts.chance_level),
            });
        }
        let all = std::iter::once(&parts.a)
            .chain(&parts.b_u)
            .chain([&parts.b_w, &parts.c, &parts.d_w, &parts.g_x, &parts.g_u])
            .chain(&parts.w_x)
            .chain(&parts.w_u)
            .chain(&parts.g_up);
        if all.flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return Err(SpecError::InvalidParameter {
                name: "matrices",
                detail: "non-finite entry".into(),
            });
        }

        let mut offsets = Vec::with_capacity(np + 1);
        let mut acc = 0;
        offsets.push(0);
        for &m in &parts.input_dims {
            acc += m;
            offsets.push(acc);
        }
        let mut b_u_stacked = Matrix::zeros(nx, nu);
        for p in 0..np {
            b_u_stacked
                .columns_mut(offsets[p], parts.input_dims[p])
                .copy_from(&parts.b_u[p]);
        }
        let mut w_w = Matrix::zeros(nx + ny, nw);
        w_w.rows_mut(0, nx).copy_from(&parts.b_w);
        w_w.rows_mut(nx, ny).copy_from(&parts.d_w);

        Ok(Self {
            parts,
            b_u_stacked,
            w_w,
            offsets,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        Self::from_parts(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.parts).expect("spec serializes")
    }

    pub fn parts(&self) -> &SpecParts {
        &self.parts
    }

    pub fn into_parts(self) -> SpecParts {
        self.parts
    }

    pub fn with_horizon(&self, n: usize) -> Result<Self, SpecError> {
        let mut parts = self.parts.clone();
        parts.fir_horizon = n;
        Self::from_parts(parts)
    }

    pub fn with_chance_level(&self, rho: f64) -> Result<Self, SpecError> {
        let mut parts = self.parts.clone();
        parts.chance_level = rho;
        Self::from_parts(parts)
    }

    pub fn num_players(&self) -> usize {
        self.parts.num_players
    }
    pub fn state_dim(&self) -> usize {
        self.parts.state_dim
    }
    pub fn output_dim(&self) -> usize {
        self.parts.output_dim
    }
    pub fn noise_dim(&self) -> usize {
        self.parts.noise_dim
    }
    pub fn input_dim(&self, p: usize) -> usize {
        self.parts.input_dims[p]
    }
    pub fn input_dims(&self) -> &[usize] {
        &self.parts.input_dims
    }
    pub fn total_input_dim(&self) -> usize {
        self.offsets[self.num_players()]
    }
    /// First row of player `p` inside the stacked input vector.
    pub fn input_offset(&self, p: usize) -> usize {
        self.offsets[p]
    }
    /// Number of columns of every response kernel, `N_x + N_y`.
    pub fn response_cols(&self) -> usize {
        self.state_dim() + self.output_dim()
    }
    pub fn a(&self) -> &Matrix {
        &self.parts.a
    }
    pub fn b_u(&self, p: usize) -> &Matrix {
        &self.parts.b_u[p]
    }
    pub fn b_u_stacked(&self) -> &Matrix {
        &self.b_u_stacked
    }
    pub fn b_w(&self) -> &Matrix {
        &self.parts.b_w
    }
    pub fn c(&self) -> &Matrix {
        &self.parts.c
    }
    pub fn d_w(&self) -> &Matrix {
        &self.parts.d_w
    }
    /// `[B_w; D_w]`.
    pub fn w_w(&self) -> &Matrix {
        &self.w_w
    }
    pub fn w_x(&self, p: usize) -> &Matrix {
        &self.parts.w_x[p]
    }
    pub fn w_u(&self, p: usize) -> &Matrix {
        &self.parts.w_u[p]
    }
    pub fn g_x(&self) -> &Matrix {
        &self.parts.g_x
    }
    pub fn g_u(&self) -> &Matrix {
        &self.parts.g_u
    }
    pub fn g_up(&self, p: usize) -> &Matrix {
        &self.parts.g_up[p]
    }
    pub fn actuation_delay(&self) -> usize {
        self.parts.actuation_delay
    }
    pub fn communication_delay(&self) -> usize {
        self.parts.communication_delay
    }
    pub fn fir_horizon(&self) -> usize {
        self.parts.fir_horizon
    }
    pub fn chance_level(&self) -> f64 {
        self.parts.chance_level
    }

    /// Checks the standing assumptions. Never fails; inspect the report.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let nx = self.state_dim();
        for p in 0..self.num_players() {
            let wu = self.w_u(p);
            let r = rank(wu, RANK_TOL);
            checks.push(CheckResult::new(
                format!("W_u[{p}] full column rank"),
                r == wu.ncols(),
                format!("rank {r} of {}", wu.ncols()),
            ));
            let cross = max_abs(&(wu.transpose() * self.w_x(p)));
            checks.push(CheckResult::new(
                format!("W_u[{p}]^T W_x[{p}] = 0"),
                cross <= ORTHO_TOL,
                format!("max |entry| {cross:.3e}"),
            ));
        }
        let rbw = rank(self.b_w(), RANK_TOL);
        checks.push(CheckResult::new(
            "B_w full row rank",
            rbw == nx,
            format!("rank {rbw} of {nx}"),
        ));
        let rdw = rank(self.d_w(), RANK_TOL);
        checks.push(CheckResult::new(
            "D_w full row rank",
            rdw == self.output_dim(),
            format!("rank {rdw} of {}", self.output_dim()),
        ));
        let cross = max_abs(&(self.b_w() * self.d_w().transpose()));
        checks.push(CheckResult::new(
            "B_w D_w^T = 0",
            cross <= ORTHO_TOL,
            format!("max |entry| {cross:.3e}"),
        ));

        let b = self.b_u_stacked();
        let mut ctrb = Matrix::zeros(nx, nx * b.ncols());
        let mut block = b.clone();
        for k in 0..nx {
            ctrb.columns_mut(k * b.ncols(), b.ncols()).copy_from(&block);
            block = self.a() * block;
        }
        let rc = rank(&ctrb, RANK_TOL);
        checks.push(CheckResult::new(
            "(A, B_u) controllable",
            rc == nx,
            format!("controllability rank {rc} of {nx}"),
        ));
        let c = self.c();
        let mut obsv = Matrix::zeros(nx * c.nrows(), nx);
        let mut block = c.clone();
        for k in 0..nx {
            obsv.rows_mut(k * c.nrows(), c.nrows()).copy_from(&block);
            block *= self.a();
        }
        let ro = rank(&obsv, RANK_TOL);
        checks.push(CheckResult::new(
            "(A, C) observable",
            ro == nx,
            format!("observability rank {ro} of {nx}"),
        ));

        ValidationReport {
            checks,
            spectral_radius: spectral_radius(self.a()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// Informational only; open-loop instability is allowed.
    pub spectral_radius: f64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_parts() -> SpecParts {
        let m = |v: f64| Matrix::from_element(1, 1, v);
        SpecParts {
            num_players: 1,
            state_dim: 1,
            input_dims: vec![1],
            output_dim: 1,
            noise_dim: 2,
            a: m(1.2),
            b_u: vec![m(1.0)],
            b_w: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            c: m(1.0),
            d_w: Matrix::from_row_slice(1, 2, &[0.0, 0.5]),
            w_x: vec![Matrix::from_row_slice(2, 1, &[1.0, 0.0])],
            w_u: vec![Matrix::from_row_slice(2, 1, &[0.0, 1.0])],
            g_x: m(0.5),
            g_u: m(0.0),
            g_up: vec![Matrix::zeros(0, 1)],
            actuation_delay: 0,
            communication_delay: 1,
            fir_horizon: 3,
            chance_level: 0.9,
        }
    }

    #[test]
    fn scalar_spec_validates() {
        let spec = DynamicGameSpec::from_parts(scalar_parts()).unwrap();
        let report = spec.validate();
        assert!(report.all_passed(), "{:?}", report.checks);
        assert!((report.spectral_radius - 1.2).abs() < 1e-12);
    }

    #[test]
    fn mismatched_input_matrix_is_named() {
        let mut parts = scalar_parts();
        parts.b_u[0] = Matrix::zeros(2, 1);
        let err = DynamicGameSpec::from_parts(parts).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("B_u[0]") && msg.contains("A"), "{msg}");
    }

    #[test]
    fn correlated_noise_fails_validation() {
        let mut parts = scalar_parts();
        parts.d_w = Matrix::from_row_slice(1, 2, &[0.3, 0.5]);
        let report = DynamicGameSpec::from_parts(parts).unwrap().validate();
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["B_w D_w^T = 0"]);
    }

    #[test]
    fn coupled_cost_fails_validation() {
        let mut parts = scalar_parts();
        parts.w_x[0] = Matrix::from_row_slice(2, 1, &[1.0, 0.1]);
        let report = DynamicGameSpec::from_parts(parts).unwrap().validate();
        assert!(!report.all_passed());
        assert!(report.failures().any(|c| c.name.contains("W_x")));
    }

    #[test]
    fn rejects_bad_scalars() {
        let mut parts = scalar_parts();
        parts.chance_level = 0.4;
        assert!(DynamicGameSpec::from_parts(parts).is_err());
        let mut parts = scalar_parts();
        parts.communication_delay = 0;
        assert!(DynamicGameSpec::from_parts(parts).is_err());
        let mut parts = scalar_parts();
        parts.fir_horizon = 1;
        assert!(DynamicGameSpec::from_parts(parts).is_err());
    }

    #[test]
    fn json_roundtrip_preserves_empty_constraint_blocks() {
        let spec = DynamicGameSpec::from_parts(scalar_parts()).unwrap();
        let back = DynamicGameSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back.g_up(0).shape(), (0, 1));
        assert_eq!(back.a(), spec.a());
        assert_eq!(back.w_w(), spec.w_w());
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = DynamicGameSpec::from_json("{\"num_players\": 1,\n \"state_dim\": }").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
