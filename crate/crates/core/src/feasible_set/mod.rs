//! The shared feasible set of input kernels and projection onto it.
//!
//! Every affine condition (primal and dual recursions, anchor, boundary
//! zeros, support masks) is eliminated up front: feasible kernels are
//! written `x0 + Z y` with `Z` an orthonormal basis of the affine set's
//! direction space. Only the second-order-cone chance constraints remain,
//! and those are handled by ADMM in `y` coordinates.

mod admm;
mod quantile;

pub use admm::{AdmmConfig, AdmmState, AdmmStats};
pub use quantile::{normal_cdf, normal_quantile};

use std::sync::Mutex;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game_model::DynamicGameSpec;
use crate::linalg::{orthonormalize, solve_affine, Matrix, Vector};
use crate::sls_core::{
    anchor, apply_mask, propagate_primal, propagate_primal_linear, residual_anchor,
    residual_boundary, residual_dual, residual_mask, residual_primal, support_pattern, KernelSeq,
    SupportMask, SystemResponse,
};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("feasible set is empty: {0}")]
    Infeasible(String),
    #[error("ADMM did not converge in {} iterations (primal {:.3e}, dual {:.3e})", .0.iterations, .0.primal_residual, .0.dual_residual)]
    NotConverged(AdmmStats),
    #[error("input has the wrong shape: {0}")]
    Shape(String),
}

/// Metric used by the projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMetric {
    /// Euclidean distance on the input kernels, the metric of the
    /// forward-backward iteration.
    #[default]
    Exact,
    /// Adds the distance between the implied state kernels.
    Lifted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub metric: ProjectionMetric,
    pub admm: AdmmConfig,
    /// Relative pivot threshold for the rank decision of the affine system.
    pub rank_tol: f64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            metric: ProjectionMetric::Exact,
            admm: AdmmConfig::default(),
            rank_tol: 1e-9,
        }
    }
}

/// Where a chance-constraint row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSource {
    /// Row `i` of `[G_x G_u]`.
    Global(usize),
    /// Row `r` of player `p`'s `G_u^p`.
    Player { player: usize, row: usize },
}

#[derive(Debug, Clone)]
pub struct SocRow {
    pub source: RowSource,
    /// Coefficients on `[x; u]`.
    pub coeffs: Vector,
    /// Index of the cone this row maps to; rows equal up to sign share one.
    pub cone: usize,
}

/// Declarative constraint counts, in scalar rows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintCounts {
    /// Primal recursion for `n = 1..N-1`.
    pub primal_rows: usize,
    /// Both dual recursions for `n = 1..N-1`.
    pub dual_rows: usize,
    /// The `n = 0` equations of the dual recursions.
    pub dual_anchor_rows: usize,
    /// The `n = 0` equation of the primal recursion.
    pub primal_anchor_rows: usize,
    /// Causality zeros at `n = 0` and terminal zeros at `n = N`.
    pub boundary_zeros: usize,
    /// Entries outside the support mask for `n = 1..N-1`.
    pub mask_zeros: usize,
    pub soc_rows: usize,
    pub soc_cones: usize,
    /// Unmasked `Phi_uy` entries, the parametrization's raw unknowns.
    pub raw_unknowns: usize,
    /// Rows of the eliminated affine system.
    pub eliminated_rows: usize,
    pub rank: usize,
    /// Dimension of the affine set.
    pub dimension: usize,
}

struct Cone {
    /// `s = k_mat y + k_off` is the cone argument.
    k_mat: Matrix,
    k_off: Vector,
}

#[derive(Debug)]
struct Lifted {
    /// Linear state kernels of each basis column, flattened.
    lz: Matrix,
    p_chol: Cholesky<f64, nalgebra::Dyn>,
    p: Matrix,
}

/// Compiled feasible set; immutable and shareable across threads.
#[derive(Debug)]
pub struct FeasibleSetSpec {
    spec: DynamicGameSpec,
    mask: SupportMask,
    radius: f64,
    counts: ConstraintCounts,
    x0: Vector,
    basis: Matrix,
    rows: Vec<SocRow>,
    stacked_k: Matrix,
    stacked_off: Vector,
    cone_offsets: Vec<usize>,
    ktk: Matrix,
    lifted: Option<Lifted>,
    options: AssembleOptions,
    factor_cache: Mutex<Option<(f64, Cholesky<f64, nalgebra::Dyn>)>>,
}

/// Result of one projection.
#[derive(Debug, Clone)]
pub struct Projection {
    pub phi_u: KernelSeq,
    /// Coordinates in the affine parametrization.
    pub coords: Vector,
    pub stats: AdmmStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SocSlack {
    pub source: RowSource,
    pub norm: f64,
    pub radius: f64,
    /// `radius - norm`; negative means violated.
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub primal: f64,
    pub dual: f64,
    pub anchor: f64,
    pub boundary: f64,
    pub mask: f64,
    pub soc: Vec<SocSlack>,
}

impl FeasibilityReport {
    pub fn max_affine_residual(&self) -> f64 {
        self.primal.max(self.dual).max(self.anchor).max(self.boundary).max(self.mask)
    }

    pub fn min_soc_slack(&self) -> f64 {
        self.soc.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_affine_residual() <= tol && self.min_soc_slack() >= -tol
    }
}

/// Location of an unmasked `Phi_uy` entry.
#[derive(Debug, Clone, Copy)]
struct FreeEntry {
    n: usize,
    row: usize,
    col: usize,
}

fn flat(k: &KernelSeq) -> Vector {
    k.to_vector()
}

impl FeasibleSetSpec {
    pub fn spec(&self) -> &DynamicGameSpec {
        &self.spec
    }
    pub fn mask(&self) -> &SupportMask {
        &self.mask
    }
    /// Cone radius `1 / Q(rho)`.
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn counts(&self) -> &ConstraintCounts {
        &self.counts
    }
    pub fn rows(&self) -> &[SocRow] {
        &self.rows
    }
    pub fn admm_config(&self) -> &AdmmConfig {
        &self.options.admm
    }
    pub fn metric(&self) -> ProjectionMetric {
        self.options.metric
    }
    pub fn dimension(&self) -> usize {
        self.basis.ncols()
    }
    /// Orthonormal basis of the affine set's directions, flattened kernels.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }
    /// The point of the affine set closest to the origin.
    pub fn origin_point(&self) -> KernelSeq {
        self.unflatten(&self.x0)
    }

    fn unflatten(&self, v: &Vector) -> KernelSeq {
        KernelSeq::from_vector(
            self.spec.fir_horizon(),
            self.spec.total_input_dim(),
            self.spec.response_cols(),
            v.as_slice(),
        )
    }

    /// Input kernels at coordinates `y`.
    pub fn point(&self, y: &Vector) -> KernelSeq {
        self.unflatten(&(&self.x0 + &self.basis * y))
    }

    pub fn coordinates(&self, phi_u: &KernelSeq) -> Vector {
        self.basis.tr_mul(&flat(phi_u))
    }

    /// Full response with masked entries set to exact zeros.
    pub fn response(&self, phi_u: KernelSeq) -> SystemResponse {
        let phi_x = propagate_primal(&self.spec, &phi_u);
        let mut r = SystemResponse::new(&self.spec, phi_x, phi_u).expect("shapes follow the spec");
        apply_mask(&self.mask, &mut r);
        let n = r.horizon();
        *r.phi_x.block_mut(n) *= 0.0;
        *r.phi_u.block_mut(n) *= 0.0;
        *r.phi_x.block_mut(0) *= 0.0;
        r.phi_u.block_mut(0).columns_mut(0, self.spec.state_dim()).fill(0.0);
        r
    }

    /// Chance-constraint argument for one row:
    /// `(g [Phi_x,n; Phi_u,n] W_w)` stacked over `n`.
    pub fn soc_vector(&self, row: &SocRow, r: &SystemResponse) -> Vector {
        soc_vector(&self.spec, &row.coeffs, &r.phi_x, &r.phi_u)
    }

    pub fn feasibility_report(&self, r: &SystemResponse) -> FeasibilityReport {
        let soc = self
            .rows
            .iter()
            .map(|row| {
                let norm = self.soc_vector(row, r).norm();
                SocSlack {
                    source: row.source,
                    norm,
                    radius: self.radius,
                    slack: self.radius - norm,
                }
            })
            .collect();
        FeasibilityReport {
            primal: residual_primal(&self.spec, r),
            dual: residual_dual(&self.spec, r),
            anchor: residual_anchor(&self.spec, r),
            boundary: residual_boundary(&self.spec, r),
            mask: residual_mask(&self.mask, r),
            soc,
        }
    }

    fn cone_args(&self, y: &Vector) -> Vector {
        &self.stacked_k * y + &self.stacked_off
    }

    fn cones_satisfied(&self, y: &Vector) -> bool {
        if self.stacked_k.nrows() == 0 {
            return true;
        }
        let s = self.cone_args(y);
        self.cone_offsets
            .windows(2)
            .all(|w| s.rows(w[0], w[1] - w[0]).norm() <= self.radius)
    }

    /// Linear term and metric of the projection objective
    /// `1/2 y^T P y - q^T y` for target `v`.
    fn target(&self, v: &KernelSeq) -> Vector {
        let w = flat(v) - &self.x0;
        let mut q = self.basis.tr_mul(&w);
        if let Some(l) = &self.lifted {
            let lw = flat(&propagate_primal_linear(&self.spec, &self.unflatten(&w)));
            q += l.lz.tr_mul(&lw);
        }
        q
    }

    fn unconstrained(&self, q: &Vector) -> Vector {
        match &self.lifted {
            Some(l) => l.p_chol.solve(q),
            None => q.clone(),
        }
    }

    fn metric_matrix(&self) -> Matrix {
        match &self.lifted {
            Some(l) => l.p.clone(),
            None => Matrix::identity(self.dimension(), self.dimension()),
        }
    }

    pub fn project(&self, v: &KernelSeq) -> Result<Projection, ProjectionError> {
        self.project_warm(v, None)
    }

    /// Projection with an optional ADMM warm start, updated in place.
    pub fn project_warm(
        &self,
        v: &KernelSeq,
        warm: Option<&mut AdmmState>,
    ) -> Result<Projection, ProjectionError> {
        let spec = &self.spec;
        if v.horizon() != spec.fir_horizon()
            || v.rows() != spec.total_input_dim()
            || v.cols() != spec.response_cols()
        {
            return Err(ProjectionError::Shape(format!(
                "expected N = {} with {}x{} blocks",
                spec.fir_horizon(),
                spec.total_input_dim(),
                spec.response_cols()
            )));
        }
        let q = self.target(v);
        let y0 = self.unconstrained(&q);
        if self.cones_satisfied(&y0) {
            return Ok(Projection {
                phi_u: self.clean(self.point(&y0)),
                coords: y0,
                stats: AdmmStats::skipped(),
            });
        }
        if self.dimension() == 0 {
            return Err(ProjectionError::Infeasible(
                "the unique affine solution violates the chance constraints".into(),
            ));
        }
        let problem = admm::Problem {
            p: self.metric_matrix(),
            q,
            k: &self.stacked_k,
            k_off: &self.stacked_off,
            ktk: &self.ktk,
            offsets: &self.cone_offsets,
            radius: self.radius,
        };
        let m = self.stacked_k.nrows();
        let mut local;
        let state = match warm {
            Some(s) => {
                if !s.matches(m) {
                    *s = AdmmState::cold(m, self.options.admm.rho);
                }
                s
            }
            None => {
                local = AdmmState::cold(m, self.options.admm.rho);
                &mut local
            }
        };
        let (y, stats) = admm::solve(&problem, &self.options.admm, state, &self.factor_cache)?;
        Ok(Projection {
            phi_u: self.clean(self.point(&y)),
            coords: y,
            stats,
        })
    }

    /// Sets masked and boundary entries of the input kernels to exact zeros.
    fn clean(&self, mut phi_u: KernelSeq) -> KernelSeq {
        let n_max = phi_u.horizon();
        for n in 0..=n_max {
            let pat = &self.mask.u[n];
            let b = phi_u.block_mut(n);
            for (v, &allowed) in b.iter_mut().zip(pat.iter()) {
                if !allowed || n == n_max {
                    *v = 0.0;
                }
            }
            if n == 0 {
                b.columns_mut(0, self.spec.state_dim()).fill(0.0);
            }
        }
        phi_u
    }
}

pub(crate) fn soc_vector(
    spec: &DynamicGameSpec,
    coeffs: &Vector,
    phi_x: &KernelSeq,
    phi_u: &KernelSeq,
) -> Vector {
    let nx = spec.state_dim();
    let nw = spec.noise_dim();
    let gx = coeffs.rows(0, nx).transpose();
    let gu = coeffs.rows(nx, spec.total_input_dim()).transpose();
    let mut out = Vector::zeros((phi_x.horizon() + 1) * nw);
    for n in 0..=phi_x.horizon() {
        let row = (&gx * phi_x.block(n) + &gu * phi_u.block(n)) * spec.w_w();
        out.rows_mut(n * nw, nw).copy_from(&row.transpose());
    }
    out
}

/// All chance-constraint rows, deduplicated into cones.
fn collect_rows(spec: &DynamicGameSpec) -> (Vec<SocRow>, usize) {
    let nx = spec.state_dim();
    let nu = spec.total_input_dim();
    let mut rows = Vec::new();
    for i in 0..spec.g_x().nrows() {
        let mut c = Vector::zeros(nx + nu);
        c.rows_mut(0, nx).copy_from(&spec.g_x().row(i).transpose());
        c.rows_mut(nx, nu).copy_from(&spec.g_u().row(i).transpose());
        rows.push((RowSource::Global(i), c));
    }
    for p in 0..spec.num_players() {
        let g = spec.g_up(p);
        for r in 0..g.nrows() {
            let mut c = Vector::zeros(nx + nu);
            c.rows_mut(nx + spec.input_offset(p), spec.input_dim(p))
                .copy_from(&g.row(r).transpose());
            rows.push((RowSource::Player { player: p, row: r }, c));
        }
    }
    // Sign-normalized coefficient vectors identify equal cones.
    let mut keys: Vec<Vector> = Vec::new();
    let mut out = Vec::with_capacity(rows.len());
    for (source, coeffs) in rows {
        let sign = coeffs.iter().find(|v| **v != 0.0).map_or(1.0, |v| v.signum());
        let key = &coeffs * sign;
        let cone = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                keys.len() - 1
            }
        };
        out.push(SocRow { source, coeffs, cone });
    }
    (out, keys.len())
}

pub fn assemble(spec: &DynamicGameSpec) -> Result<FeasibleSetSpec, ProjectionError> {
    assemble_with(spec, &AssembleOptions::default())
}

pub fn assemble_with(
    spec: &DynamicGameSpec,
    options: &AssembleOptions,
) -> Result<FeasibleSetSpec, ProjectionError> {
    let mask = support_pattern(spec);
    let n_max = spec.fir_horizon();
    let nx = spec.state_dim();
    let ny = spec.output_dim();
    let nu = spec.total_input_dim();
    let nc = nx + ny;

    let mut free = Vec::new();
    for n in 0..n_max {
        for row in 0..nu {
            for col in nx..nc {
                if mask.u[n][(row, col)] {
                    free.push(FreeEntry { n, row, col });
                }
            }
        }
    }

    // Input kernels from raw unknowns: Phi_uy directly, Phi_ux through its
    // dual recursion Phi_ux,n+1 = Phi_ux,n A + Phi_uy,n C with Phi_ux,0 = 0.
    let expand = |phi: &[f64]| -> KernelSeq {
        let mut k = KernelSeq::zeros(n_max, nu, nc);
        for (e, &v) in free.iter().zip(phi) {
            k.block_mut(e.n)[(e.row, e.col)] = v;
        }
        for n in 0..n_max {
            let b = k.block(n);
            let next = b.columns(0, nx) * spec.a() + b.columns(nx, ny) * spec.c();
            k.block_mut(n + 1).columns_mut(0, nx).copy_from(&next);
        }
        k
    };

    // Remaining affine conditions, as a residual vector that vanishes on the set.
    let residual = |phi_u: &KernelSeq, phi_x: &KernelSeq| -> Vec<f64> {
        let mut out = Vec::new();
        for n in 1..=n_max {
            let ux = phi_u.block(n);
            for i in 0..nu {
                for j in 0..nx {
                    if n == n_max || !mask.u[n][(i, j)] {
                        out.push(ux[(i, j)]);
                    }
                }
            }
            let xb = phi_x.block(n);
            for i in 0..nx {
                for j in 0..nc {
                    if n == n_max || !mask.x[n][(i, j)] {
                        out.push(xb[(i, j)]);
                    }
                }
            }
            if n < n_max {
                let d = phi_x.block(n + 1).columns(0, nx)
                    - xb.columns(0, nx) * spec.a()
                    - xb.columns(nx, ny) * spec.c();
                out.extend(d.transpose().iter());
            }
        }
        out
    };

    let zero_u = expand(&vec![0.0; free.len()]);
    let base = residual(&zero_u, &propagate_primal(spec, &zero_u));
    let mut e = Matrix::zeros(base.len(), free.len());
    let mut unit = vec![0.0; free.len()];
    for k in 0..free.len() {
        unit[k] = 1.0;
        let u = expand(&unit);
        let col = residual(&u, &propagate_primal_linear(spec, &u));
        for (r, v) in col.into_iter().enumerate() {
            e[(r, k)] = v;
        }
        unit[k] = 0.0;
    }
    let f = -Vector::from_vec(base);
    let sol = solve_affine(&e, &f, options.rank_tol);
    let scale = f.amax().max(1.0);
    if sol.residual > 1e-9 * scale {
        return Err(ProjectionError::Infeasible(format!(
            "affine constraints are inconsistent (least-squares residual {:.3e}); \
             try a longer FIR horizon",
            sol.residual
        )));
    }

    let dim = sol.kernel.ncols();
    let full_len = (n_max + 1) * nu * nc;
    let mut directions = Matrix::zeros(full_len, dim);
    for c in 0..dim {
        let k = expand(sol.kernel.column(c).as_slice());
        directions.column_mut(c).copy_from(&flat(&k));
    }
    let basis = orthonormalize(directions);
    let mut x0 = flat(&expand(sol.particular.as_slice()));
    let along = basis.tr_mul(&x0);
    x0 -= &basis * along;

    let (rows, n_cones) = collect_rows(spec);
    let radius = 1.0 / normal_quantile(spec.chance_level());
    let unflat = |v: &[f64]| KernelSeq::from_vector(n_max, nu, nc, v);

    let x0_k = unflat(x0.as_slice());
    let x0_x = propagate_primal(spec, &x0_k);
    let seg = (n_max + 1) * spec.noise_dim();
    let mut cone_coeffs: Vec<Option<Vector>> = vec![None; n_cones];
    for r in &rows {
        cone_coeffs[r.cone].get_or_insert_with(|| r.coeffs.clone());
    }
    let mut cones: Vec<Cone> = cone_coeffs
        .iter()
        .map(|c| Cone {
            k_mat: Matrix::zeros(seg, dim),
            k_off: soc_vector(spec, c.as_ref().unwrap(), &x0_x, &x0_k),
        })
        .collect();
    let want_lift = options.metric == ProjectionMetric::Lifted;
    let mut lz = if want_lift {
        Matrix::zeros((n_max + 1) * nx * nc, dim)
    } else {
        Matrix::zeros(0, 0)
    };
    if !cones.is_empty() || want_lift {
        for c in 0..dim {
            let zk = unflat(basis.column(c).as_slice());
            let zx = propagate_primal_linear(spec, &zk);
            for (cone, coeffs) in cones.iter_mut().zip(&cone_coeffs) {
                let s = soc_vector(spec, coeffs.as_ref().unwrap(), &zx, &zk);
                cone.k_mat.column_mut(c).copy_from(&s);
            }
            if want_lift {
                lz.column_mut(c).copy_from(&flat(&zx));
            }
        }
    }
    let mut cone_offsets = vec![0];
    for _ in &cones {
        cone_offsets.push(cone_offsets.last().unwrap() + seg);
    }
    let m_total = *cone_offsets.last().unwrap();
    let mut stacked_k = Matrix::zeros(m_total, dim);
    let mut stacked_off = Vector::zeros(m_total);
    for (i, cone) in cones.iter().enumerate() {
        stacked_k.rows_mut(cone_offsets[i], seg).copy_from(&cone.k_mat);
        stacked_off.rows_mut(cone_offsets[i], seg).copy_from(&cone.k_off);
    }
    let ktk = stacked_k.tr_mul(&stacked_k);

    let lifted = if want_lift {
        let p = Matrix::identity(dim, dim) + lz.tr_mul(&lz);
        let p_chol = Cholesky::new(p.clone()).expect("I + L^T L is positive definite");
        Some(Lifted { lz, p_chol, p })
    } else {
        None
    };

    let counts = count_constraints(spec, &mask, &rows, n_cones, free.len(), e.nrows(), sol.rank, dim);

    Ok(FeasibleSetSpec {
        spec: spec.clone(),
        mask,
        radius,
        counts,
        x0,
        basis,
        rows,
        stacked_k,
        stacked_off,
        cone_offsets,
        ktk,
        lifted,
        options: options.clone(),
        factor_cache: Mutex::new(None),
    })
}

#[allow(clippy::too_many_arguments)]
fn count_constraints(
    spec: &DynamicGameSpec,
    mask: &SupportMask,
    rows: &[SocRow],
    n_cones: usize,
    raw_unknowns: usize,
    eliminated_rows: usize,
    rank: usize,
    dimension: usize,
) -> ConstraintCounts {
    let n_max = spec.fir_horizon();
    let nx = spec.state_dim();
    let nu = spec.total_input_dim();
    let nc = spec.response_cols();
    let inner = n_max.saturating_sub(1);
    let mask_zeros = (1..n_max)
        .map(|n| {
            mask.x[n].iter().filter(|a| !**a).count() + mask.u[n].iter().filter(|a| !**a).count()
        })
        .sum();
    ConstraintCounts {
        primal_rows: inner * nx * nc,
        dual_rows: inner * (nx + nu) * nx,
        dual_anchor_rows: (nx + nu) * nx,
        primal_anchor_rows: nx * nc,
        boundary_zeros: nx * nc + nu * nx + (nx + nu) * nc,
        mask_zeros,
        soc_rows: rows.len(),
        soc_cones: n_cones,
        raw_unknowns,
        eliminated_rows,
        rank,
        dimension,
    }
}

/// The anchor block, exposed for oracles that rebuild the recursions.
pub fn anchor_block(spec: &DynamicGameSpec) -> Matrix {
    anchor(spec)
}

#[cfg(test)]
mod tests;
