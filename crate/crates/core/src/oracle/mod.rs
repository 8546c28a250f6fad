//! Brute-force references for tests.
//!
//! Everything here is rebuilt from the raw spec with dense linear algebra:
//! state kernels by explicit convolution, masks by graph search, affine
//! projections through an SVD and chance constraints through a secular
//! equation. Nothing reuses the recursions or solvers of the modules under
//! test, so agreement between the two is meaningful.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game_model::DynamicGameSpec;
use crate::linalg::{Matrix, Vector};
use crate::rng::{SplitRng, Stream};
use crate::sls_core::{ControllerRealization, KernelSeq};

/// Largest number of scalar decision variables the oracles accept.
pub const DEFAULT_SIZE_GUARD: usize = 5000;

/// Slack below which a cone counts as active for [`kkt_vgne`].
pub const SOC_INACTIVE_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{vars} decision variables exceed the oracle size guard of {limit}")]
    TooLarge { vars: usize, limit: usize },
    #[error("oracle inapplicable: {0}")]
    Inapplicable(String),
    #[error("affine constraints are inconsistent (residual {0:e})")]
    Inconsistent(f64),
    #[error("singular reduced system")]
    Singular,
    #[error("Dykstra did not converge in {iterations} sweeps (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
}

/// Comparison of an oracle value against a tested value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub oracle: Vec<f64>,
    pub tested: Vec<f64>,
    /// Max-abs difference.
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn compare(quantity: impl Into<String>, oracle: &[f64], tested: &[f64], tolerance: f64) -> Self {
        let discrepancy = if oracle.len() == tested.len() {
            oracle
                .iter()
                .zip(tested)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        Self {
            quantity: quantity.into(),
            oracle: oracle.to_vec(),
            tested: tested.to_vec(),
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Dense description of the game over the flattened input kernels `phi`
/// (blocks `n = 0..=N`, row-major inside each block).
pub struct OracleProblem {
    spec: DynamicGameSpec,
    /// Flattened state kernels are `t_map * phi + t_off`.
    t_map: Matrix,
    t_off: Vector,
    /// All equality constraints `e * phi = f`.
    e: Matrix,
    f: Vector,
    /// One `(K, k)` per chance row: the cone argument is `K phi + k`.
    cones: Vec<(Matrix, Vector)>,
    radius: f64,
}

/// `max(0, floor((n - d_a) / d_c))`.
fn depth(n: usize, da: usize, dc: usize) -> usize {
    if n < da {
        0
    } else {
        (n - da) / dc
    }
}

/// Shortest dependency distance: `dist[i][j]` is the fewest steps for state
/// `j` to influence state `i` through nonzero entries of `A`.
fn dependency_distances(a: &Matrix) -> Vec<Vec<usize>> {
    let nx = a.nrows();
    let mut dist = vec![vec![usize::MAX; nx]; nx];
    for j in 0..nx {
        let mut queue = std::collections::VecDeque::from([j]);
        dist[j][j] = 0;
        while let Some(k) = queue.pop_front() {
            for i in 0..nx {
                if a[(i, k)] != 0.0 && dist[i][j] == usize::MAX {
                    dist[i][j] = dist[k][j] + 1;
                    queue.push_back(i);
                }
            }
        }
    }
    dist
}

/// One boolean pattern per `n`, indexed `[n][row][col]`.
pub type PatternSeq = Vec<Vec<Vec<bool>>>;

/// Masks `(x, u)` rebuilt by breadth-first search over the graph of `A`.
pub fn oracle_masks(spec: &DynamicGameSpec) -> (PatternSeq, PatternSeq) {
    let nx = spec.state_dim();
    let ny = spec.output_dim();
    let nu = spec.total_input_dim();
    let dist = dependency_distances(spec.a());
    let b = spec.b_u_stacked();
    let c = spec.c();
    let (da, dc) = (spec.actuation_delay(), spec.communication_delay());
    let near = |i: usize, j: usize, k: usize| dist[i][j] <= k;
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for n in 0..=spec.fir_horizon() {
        let k = depth(n, da, dc);
        let k1 = depth(n + 1, da, dc);
        let mut x = vec![vec![false; nx + ny]; nx];
        for i in 0..nx {
            for j in 0..nx {
                x[i][j] = near(i, j, k);
            }
            for y in 0..ny {
                x[i][nx + y] = (0..nx).any(|j| c[(y, j)] != 0.0 && near(i, j, k));
            }
        }
        let mut u = vec![vec![false; nx + ny]; nu];
        for q in 0..nu {
            let acts: Vec<usize> = (0..nx).filter(|&i| b[(i, q)] != 0.0).collect();
            for j in 0..nx {
                u[q][j] = acts.iter().any(|&i| near(i, j, k));
            }
            for y in 0..ny {
                u[q][nx + y] = acts
                    .iter()
                    .any(|&i| (0..nx).any(|j| c[(y, j)] != 0.0 && near(i, j, k1)));
            }
        }
        xs.push(x);
        us.push(u);
    }
    (xs, us)
}

/// Gaussian upper quantile by bisection on the tail probability.
fn gaussian_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 0.5 * libm::erfc(-mid / std::f64::consts::SQRT_2) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl OracleProblem {
    pub fn new(spec: &DynamicGameSpec) -> Result<Self, OracleError> {
        Self::with_guard(spec, DEFAULT_SIZE_GUARD)
    }

    pub fn with_guard(spec: &DynamicGameSpec, guard: usize) -> Result<Self, OracleError> {
        let nn = spec.fir_horizon();
        let nx = spec.state_dim();
        let ny = spec.output_dim();
        let nu = spec.total_input_dim();
        let nc = nx + ny;
        let d = (nn + 1) * nu * nc;
        if d > guard {
            return Err(OracleError::TooLarge { vars: d, limit: guard });
        }
        let bx = nx * nc;
        let bu = nu * nc;
        let a = spec.a();
        let b = spec.b_u_stacked();
        let inc = Matrix::identity(nc, nc);

        // Phi_x,n = sum_{k<n} A^(n-1-k) (B Phi_u,k + [k = 0] [I 0]).
        let mut a_pow = vec![Matrix::identity(nx, nx)];
        for k in 1..=nn {
            a_pow.push(a * &a_pow[k - 1]);
        }
        let mut anchor = Matrix::zeros(nx, nc);
        anchor.columns_mut(0, nx).fill_with_identity();
        let mut t_map = Matrix::zeros((nn + 1) * bx, d);
        let mut t_off = Vector::zeros((nn + 1) * bx);
        for n in 1..=nn {
            for k in 0..n {
                let blk = kron(&(&a_pow[n - 1 - k] * b), &inc);
                t_map.view_mut((n * bx, k * bu), (bx, bu)).copy_from(&blk);
            }
            let off = &a_pow[n - 1] * &anchor;
            for i in 0..nx {
                for j in 0..nc {
                    t_off[n * bx + i * nc + j] = off[(i, j)];
                }
            }
        }

        let mut rows: Vec<(Vector, f64)> = Vec::new();
        let unit = |idx: usize| {
            let mut v = Vector::zeros(d);
            v[idx] = 1.0;
            v
        };
        let u_idx = |n: usize, i: usize, j: usize| n * bu + i * nc + j;
        let x_row = |n: usize, i: usize, j: usize| -> (Vector, f64) {
            let r = n * bx + i * nc + j;
            (t_map.row(r).transpose(), -t_off[r])
        };
        // Causality and terminal zeros.
        for i in 0..nu {
            for j in 0..nx {
                rows.push((unit(u_idx(0, i, j)), 0.0));
            }
            for j in 0..nc {
                rows.push((unit(u_idx(nn, i, j)), 0.0));
            }
        }
        for i in 0..nx {
            for j in 0..nc {
                rows.push(x_row(nn, i, j));
            }
        }
        // Dual recursions: Phi_.x,n+1 = Phi_.x,n A + Phi_.y,n C (+ I at n = 0 for x).
        let ac = {
            let mut m = Matrix::zeros(nc, nx);
            m.rows_mut(0, nx).copy_from(a);
            m.rows_mut(nx, ny).copy_from(spec.c());
            m
        };
        for n in 0..nn {
            for i in 0..nx {
                for j in 0..nx {
                    let (mut v, mut rhs) = x_row(n + 1, i, j);
                    for l in 0..nc {
                        let (w, o) = x_row(n, i, l);
                        v -= w * ac[(l, j)];
                        rhs -= o * ac[(l, j)];
                    }
                    if n == 0 && i == j {
                        rhs += 1.0;
                    }
                    rows.push((v, rhs));
                }
            }
            for i in 0..nu {
                for j in 0..nx {
                    let mut v = unit(u_idx(n + 1, i, j));
                    for l in 0..nc {
                        v[u_idx(n, i, l)] -= ac[(l, j)];
                    }
                    rows.push((v, 0.0));
                }
            }
        }
        // Support masks.
        let (mx, mu) = oracle_masks(spec);
        for n in 0..=nn {
            for i in 0..nx {
                for j in 0..nc {
                    if !mx[n][i][j] {
                        rows.push(x_row(n, i, j));
                    }
                }
            }
            for i in 0..nu {
                for j in 0..nc {
                    if !mu[n][i][j] {
                        rows.push((unit(u_idx(n, i, j)), 0.0));
                    }
                }
            }
        }
        let mut e = Matrix::zeros(rows.len(), d);
        let mut f = Vector::zeros(rows.len());
        for (r, (v, rhs)) in rows.iter().enumerate() {
            e.row_mut(r).copy_from(&v.transpose());
            f[r] = *rhs;
        }

        // Chance rows: global [G_x G_u] rows, then each player's rows.
        let ww = spec.w_w();
        let nw = spec.noise_dim();
        let wwt = ww.transpose();
        let mut coeffs: Vec<(Vector, Vector)> = Vec::new();
        for r in 0..spec.g_x().nrows() {
            coeffs.push((spec.g_x().row(r).transpose(), spec.g_u().row(r).transpose()));
        }
        for p in 0..spec.num_players() {
            let g = spec.g_up(p);
            for r in 0..g.nrows() {
                let mut gu = Vector::zeros(nu);
                gu.rows_mut(spec.input_offset(p), spec.input_dim(p))
                    .copy_from(&g.row(r).transpose());
                coeffs.push((Vector::zeros(nx), gu));
            }
        }
        let mut cones = Vec::new();
        for (gx, gu) in coeffs {
            let sx = &wwt * kron(&Matrix::from_row_slice(1, nx, gx.as_slice()), &inc);
            let su = &wwt * kron(&Matrix::from_row_slice(1, nu, gu.as_slice()), &inc);
            let mut k_mat = Matrix::zeros((nn + 1) * nw, d);
            let mut k_off = Vector::zeros((nn + 1) * nw);
            for n in 0..=nn {
                let tx = t_map.rows(n * bx, bx);
                let mut blk = &sx * tx;
                let mut cols = blk.columns_mut(n * bu, bu);
                cols += &su;
                k_mat.rows_mut(n * nw, nw).copy_from(&blk);
                k_off.rows_mut(n * nw, nw).copy_from(&(&sx * t_off.rows(n * bx, bx)));
            }
            cones.push((k_mat, k_off));
        }

        Ok(Self {
            spec: spec.clone(),
            t_map,
            t_off,
            e,
            f,
            cones,
            radius: 1.0 / gaussian_quantile(spec.chance_level()),
        })
    }

    pub fn num_vars(&self) -> usize {
        self.e.ncols()
    }
    pub fn num_cones(&self) -> usize {
        self.cones.len()
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn flat(&self, phi_u: &KernelSeq) -> Vector {
        phi_u.to_vector()
    }

    fn unflat(&self, v: &Vector) -> KernelSeq {
        KernelSeq::from_vector(
            self.spec.fir_horizon(),
            self.spec.total_input_dim(),
            self.spec.response_cols(),
            v.as_slice(),
        )
    }

    /// State kernels by explicit convolution.
    pub fn state_kernels(&self, phi_u: &KernelSeq) -> KernelSeq {
        let v = &self.t_map * self.flat(phi_u) + &self.t_off;
        KernelSeq::from_vector(
            self.spec.fir_horizon(),
            self.spec.state_dim(),
            self.spec.response_cols(),
            v.as_slice(),
        )
    }

    /// Player `p`'s cost as `||M_p phi + c_p||^2`.
    fn cost_map(&self, p: usize) -> (Matrix, Vector) {
        let spec = &self.spec;
        let nn = spec.fir_horizon();
        let nc = spec.response_cols();
        let nx = spec.state_dim();
        let nu = spec.total_input_dim();
        let d = self.num_vars();
        let (bx, bu) = (nx * nc, nu * nc);
        let wwt = spec.w_w().transpose();
        let kx = kron(spec.w_x(p), &wwt);
        let mut sel = Matrix::zeros(spec.input_dim(p), nu);
        sel.view_mut((0, spec.input_offset(p)), (spec.input_dim(p), spec.input_dim(p)))
            .fill_with_identity();
        let ku = kron(&(spec.w_u(p) * sel), &wwt);
        let rows = kx.nrows();
        let mut m = Matrix::zeros((nn + 1) * rows, d);
        let mut c = Vector::zeros((nn + 1) * rows);
        for n in 0..=nn {
            let mut blk = &kx * self.t_map.rows(n * bx, bx);
            let mut cols = blk.columns_mut(n * bu, bu);
            cols += &ku;
            m.rows_mut(n * rows, rows).copy_from(&blk);
            c.rows_mut(n * rows, rows)
                .copy_from(&(&kx * self.t_off.rows(n * bx, bx)));
        }
        (m, c)
    }

    pub fn cost(&self, phi_u: &KernelSeq, p: usize) -> f64 {
        let (m, c) = self.cost_map(p);
        (m * self.flat(phi_u) + c).norm_squared()
    }

    /// Indices of player `p`'s entries in the flattened kernels.
    fn player_indices(&self, p: usize) -> Vec<usize> {
        let spec = &self.spec;
        let nc = spec.response_cols();
        let nu = spec.total_input_dim();
        let off = spec.input_offset(p);
        let mut idx = Vec::new();
        for n in 0..=spec.fir_horizon() {
            for i in off..off + spec.input_dim(p) {
                for j in 0..nc {
                    idx.push((n * nu + i) * nc + j);
                }
            }
        }
        idx
    }

    /// The pseudo-gradient as `F(phi) = H phi + h`.
    pub fn operator_affine(&self) -> (Matrix, Vector) {
        let d = self.num_vars();
        let mut h_mat = Matrix::zeros(d, d);
        let mut h = Vector::zeros(d);
        for p in 0..self.spec.num_players() {
            let (m, c) = self.cost_map(p);
            let mtm = m.tr_mul(&m) * 2.0;
            let mtc = m.tr_mul(&c) * 2.0;
            for i in self.player_indices(p) {
                h_mat.row_mut(i).copy_from(&mtm.row(i));
                h[i] = mtc[i];
            }
        }
        (h_mat, h)
    }

    pub fn cone_norms(&self, phi_u: &KernelSeq) -> Vec<f64> {
        let v = self.flat(phi_u);
        self.cones.iter().map(|(k, o)| (k * &v + o).norm()).collect()
    }

    pub fn affine_residual(&self, phi_u: &KernelSeq) -> f64 {
        (&self.e * self.flat(phi_u) - &self.f).amax()
    }

    /// Particular solution, orthonormal row-space basis and null-space basis
    /// of the equality constraints.
    fn affine_split(&self) -> Result<(Vector, Matrix, Matrix), OracleError> {
        let d = self.num_vars();
        let svd = SVD::new(self.e.clone(), true, true);
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(1.0);
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let u = svd.u.as_ref().expect("u requested");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        let mut x_p = Vector::zeros(d);
        let mut row_basis = Matrix::zeros(d, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let vi = v_t.row(i).transpose();
            x_p += &vi * (u.column(i).dot(&self.f) / svd.singular_values[i]);
            row_basis.column_mut(c).copy_from(&vi);
        }
        let res = (&self.e * &x_p - &self.f).amax();
        if res > 1e-8 * self.f.amax().max(1.0) {
            return Err(OracleError::Inconsistent(res));
        }
        // Null space: complete the row basis through a second SVD of its
        // orthogonal complement projector.
        let proj = Matrix::identity(d, d) - &row_basis * row_basis.transpose();
        let svd2 = SVD::new(proj, true, false);
        let u2 = svd2.u.expect("u requested");
        let null_cols: Vec<usize> = (0..svd2.singular_values.len())
            .filter(|&i| svd2.singular_values[i] > 0.5)
            .collect();
        let mut null = Matrix::zeros(d, null_cols.len());
        for (c, &i) in null_cols.iter().enumerate() {
            null.column_mut(c).copy_from(&u2.column(i));
        }
        Ok((x_p, row_basis, null))
    }
}

/// Central-difference gradient of player `p`'s cost with respect to its
/// own input kernels, blocks shaped like that player's rows.
pub fn fd_gradient(spec: &DynamicGameSpec, phi_u: &KernelSeq, p: usize, step: f64) -> KernelSeq {
    assert!(step > 0.0, "finite-difference step must be positive");
    let prob = OracleProblem::with_guard(spec, usize::MAX).expect("no guard");
    let off = spec.input_offset(p);
    let m = spec.input_dim(p);
    let mut out = KernelSeq::zeros(phi_u.horizon(), m, phi_u.cols());
    let mut work = phi_u.clone();
    for n in 0..=phi_u.horizon() {
        for i in 0..m {
            for j in 0..phi_u.cols() {
                let orig = work.block(n)[(off + i, j)];
                work.block_mut(n)[(off + i, j)] = orig + step;
                let up = prob.cost(&work, p);
                work.block_mut(n)[(off + i, j)] = orig - step;
                let down = prob.cost(&work, p);
                work.block_mut(n)[(off + i, j)] = orig;
                out.block_mut(n)[(i, j)] = (up - down) / (2.0 * step);
            }
        }
    }
    out
}

/// Projection onto `{phi : ||K phi + k|| <= r}` by solving the secular
/// equation for the multiplier.
struct BallProjector {
    v_t: Matrix,
    sigma: Vector,
    utk: Vector,
    k_perp: f64,
    k_mat: Matrix,
    k_off: Vector,
    radius: f64,
}

impl BallProjector {
    fn new(k_mat: &Matrix, k_off: &Vector, radius: f64) -> Self {
        let svd = SVD::new(k_mat.clone(), true, true);
        let u = svd.u.expect("u requested");
        let utk = u.tr_mul(k_off);
        let k_perp = (k_off - &u * &utk).norm();
        Self {
            v_t: svd.v_t.expect("v_t requested"),
            sigma: svd.singular_values,
            utk,
            k_perp,
            k_mat: k_mat.clone(),
            k_off: k_off.clone(),
            radius,
        }
    }

    fn project(&self, x: &Vector) -> Result<Vector, OracleError> {
        if (&self.k_mat * x + &self.k_off).norm() <= self.radius {
            return Ok(x.clone());
        }
        if self.k_perp > self.radius {
            return Err(OracleError::Inconsistent(self.k_perp - self.radius));
        }
        let vtx = &self.v_t * x;
        // In the singular basis the cone argument at multiplier lam is
        // (sigma vtx + utk) / (1 + lam sigma^2), plus the fixed k_perp part.
        let arg_norm = |lam: f64| -> f64 {
            let s: f64 = (0..self.sigma.len())
                .map(|i| {
                    let s = self.sigma[i];
                    ((s * vtx[i] + self.utk[i]) / (1.0 + lam * s * s)).powi(2)
                })
                .sum();
            (s + self.k_perp * self.k_perp).sqrt()
        };
        let mut hi = 1.0;
        while arg_norm(hi) > self.radius {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(OracleError::Inconsistent(arg_norm(hi) - self.radius));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if arg_norm(mid) > self.radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = hi;
        let mut coef = Vector::zeros(self.sigma.len());
        for i in 0..self.sigma.len() {
            let s = self.sigma[i];
            coef[i] = -(lam * s * s * vtx[i] + lam * s * self.utk[i]) / (1.0 + lam * s * s);
        }
        Ok(x + self.v_t.tr_mul(&coef))
    }
}

/// Dykstra's alternating projections onto the affine set and each cone.
///
/// Stops when one full sweep moves the iterate by less than `1e-14` relative
/// to its norm.
pub fn dykstra_project(spec: &DynamicGameSpec, target: &KernelSeq, iters: usize) -> Result<KernelSeq, OracleError> {
    let prob = OracleProblem::new(spec)?;
    let (x_p, row_basis, _) = prob.affine_split()?;
    let affine = |x: &Vector| -> Vector {
        let dx = x - &x_p;
        x - &row_basis * row_basis.tr_mul(&dx)
    };
    let balls: Vec<BallProjector> = prob
        .cones
        .iter()
        .map(|(k, o)| BallProjector::new(k, o, prob.radius))
        .collect();
    let mut x = prob.flat(target);
    let mut incs = vec![Vector::zeros(x.len()); balls.len() + 1];
    let mut change = f64::INFINITY;
    for _ in 0..iters {
        let start = x.clone();
        let y = affine(&(&x + &incs[0]));
        incs[0] = &x + &incs[0] - &y;
        x = y;
        for (b, inc) in balls.iter().zip(incs.iter_mut().skip(1)) {
            let y = b.project(&(&x + &*inc))?;
            *inc = &x + &*inc - &y;
            x = y;
        }
        change = (&x - &start).norm();
        if change <= 1e-14 * x.norm().max(1.0) {
            return Ok(prob.unflat(&x));
        }
    }
    Err(OracleError::NotConverged { iterations: iters, change })
}

/// Variational equilibrium of an instance whose chance constraints are
/// inactive, from the reduced linear system on the affine set's null space.
pub fn kkt_vgne(spec: &DynamicGameSpec) -> Result<KernelSeq, OracleError> {
    let prob = OracleProblem::new(spec)?;
    let (x_p, _, z) = prob.affine_split()?;
    let (h_mat, h) = prob.operator_affine();
    let reduced = z.tr_mul(&(&h_mat * &z));
    let rhs = -z.tr_mul(&(&h_mat * &x_p + &h));
    let y = reduced.full_piv_lu().solve(&rhs).ok_or(OracleError::Singular)?;
    let phi = &x_p + &z * y;

    // F(phi) must lie in the row space of the constraints.
    let grad = &h_mat * &phi + &h;
    let tangential = z.tr_mul(&grad).amax();
    let scale = (h_mat.amax() * phi.amax() + h.amax()).max(1.0);
    if tangential > 1e-10 * scale {
        return Err(OracleError::Inapplicable(format!(
            "stationarity residual {tangential:e} exceeds tolerance"
        )));
    }
    let phi_u = prob.unflat(&phi);
    if let Some(worst) = prob
        .cone_norms(&phi_u)
        .iter()
        .map(|n| prob.radius - n)
        .reduce(f64::min)
    {
        if worst <= SOC_INACTIVE_SLACK {
            return Err(OracleError::Inapplicable(format!(
                "chance constraint active at the affine solution (slack {worst:e})"
            )));
        }
    }
    Ok(phi_u)
}

/// Monte Carlo estimate of how often one constraint row holds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChanceEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Closed-loop Monte Carlo under unit Gaussian white noise.
///
/// `row` indexes the global rows of `[G_x G_u]` followed by every player's
/// own rows. Each trial starts from rest and runs `horizon` steps; steps
/// `t >= N` are counted, by which point the FIR closed loop is stationary.
pub fn mc_chance(
    spec: &DynamicGameSpec,
    realization: &ControllerRealization,
    row: usize,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> ChanceEstimate {
    let nn = realization.horizon();
    assert!(horizon > nn, "horizon must exceed the burn-in of {nn} steps");
    let nx = spec.state_dim();
    let nu = spec.total_input_dim();
    let (gx, gu) = {
        let global = spec.g_x().nrows();
        if row < global {
            (spec.g_x().row(row).transpose(), spec.g_u().row(row).transpose())
        } else {
            let mut r = row - global;
            let mut found = None;
            for p in 0..spec.num_players() {
                let g = spec.g_up(p);
                if r < g.nrows() {
                    let mut gu = Vector::zeros(nu);
                    gu.rows_mut(spec.input_offset(p), spec.input_dim(p))
                        .copy_from(&g.row(r).transpose());
                    found = Some((Vector::zeros(nx), gu));
                    break;
                }
                r -= g.nrows();
            }
            found.expect("constraint row out of range")
        }
    };
    let b = spec.b_u_stacked();
    let mut hits = 0usize;
    let mut samples = 0usize;
    for trial in 0..trials {
        let mut rng = SplitRng::new(seed, Stream::Trial(trial as u64));
        let mut x = Vector::zeros(nx);
        let mut xi_hist: Vec<Vector> = vec![Vector::zeros(nx)];
        let mut y_hist: Vec<Vector> = Vec::new();
        for t in 0..horizon {
            let w = Vector::from_fn(spec.noise_dim(), |_, _| rng.normal());
            let y = spec.c() * &x + spec.d_w() * &w;
            y_hist.push(y);
            let mut u = Vector::zeros(nu);
            for k in 1..=nn {
                if t + 1 >= k {
                    u += realization.ux(k) * &xi_hist[t + 1 - k];
                }
            }
            for k in 0..=nn {
                if t >= k {
                    u += realization.uy(k) * &y_hist[t - k];
                }
            }
            let mut xi_next = Vector::zeros(nx);
            for k in 2..=nn {
                if t + 2 >= k {
                    xi_next -= realization.xx(k) * &xi_hist[t + 2 - k];
                }
            }
            for k in 1..=nn {
                if t + 1 >= k {
                    xi_next -= realization.xy(k) * &y_hist[t + 1 - k];
                }
            }
            xi_hist.push(xi_next);
            if t >= nn {
                samples += 1;
                if gx.dot(&x) + gu.dot(&u) <= 1.0 {
                    hits += 1;
                }
            }
            x = spec.a() * &x + b * &u + spec.b_w() * &w;
        }
    }
    let p = hits as f64 / samples as f64;
    ChanceEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    }
}
