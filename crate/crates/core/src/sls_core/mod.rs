//! FIR system-level parametrization: responses, residuals, costs and
//! gradients, the affine game operator and controller realization.

mod kernels;
mod mask;
mod realization;

pub use kernels::{KernelSeq, SystemResponse};
pub use mask::{propagation_depth, reachability_powers, support_pattern, SupportMask};
pub use realization::{reconstruct_policy, ControllerMemory, ControllerRealization};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game_model::DynamicGameSpec;
use crate::linalg::{singular_values, Matrix};

/// Default cap on the number of entries of the dense `H` matrix.
pub const DEFAULT_HESSIAN_BUDGET: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum SlsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("response is not causal: {block} at n = 0 has max |entry| {value:.3e}")]
    NonCausal { block: &'static str, value: f64 },
    #[error("dense operator would need {elements} entries, budget is {budget}")]
    SizeGuard { elements: usize, budget: usize },
    #[error("malformed response: {0}")]
    Parse(String),
}

/// The anchor `[I 0]` that seeds both recursions.
pub fn anchor(spec: &DynamicGameSpec) -> Matrix {
    let nx = spec.state_dim();
    let mut m = Matrix::zeros(nx, spec.response_cols());
    m.columns_mut(0, nx).fill_with_identity();
    m
}

fn propagate(spec: &DynamicGameSpec, phi_u: &KernelSeq, with_anchor: bool) -> KernelSeq {
    let n_max = phi_u.horizon();
    let mut phi_x = KernelSeq::zeros(n_max, spec.state_dim(), spec.response_cols());
    let b = spec.b_u_stacked();
    for n in 0..n_max {
        let mut next = b * phi_u.block(n);
        if n == 0 {
            if with_anchor {
                next += anchor(spec);
            }
        } else {
            next += spec.a() * phi_x.block(n);
        }
        *phi_x.block_mut(n + 1) = next;
    }
    phi_x
}

/// State kernels implied by the input kernels through the primal recursion
/// `Phi_x,n+1 = A Phi_x,n + B_u Phi_u,n`, `Phi_x,1 = [I 0] + B_u Phi_u,0`.
pub fn propagate_primal(spec: &DynamicGameSpec, phi_u: &KernelSeq) -> KernelSeq {
    propagate(spec, phi_u, true)
}

/// Linear part of [`propagate_primal`], without the anchor.
pub fn propagate_primal_linear(spec: &DynamicGameSpec, phi_u: &KernelSeq) -> KernelSeq {
    propagate(spec, phi_u, false)
}

pub fn response_from_inputs(spec: &DynamicGameSpec, phi_u: KernelSeq) -> SystemResponse {
    let phi_x = propagate_primal(spec, &phi_u);
    SystemResponse::new(spec, phi_x, phi_u).expect("shapes follow the spec")
}

/// Max-abs violation of the primal recursion for `n = 1..=N`, with
/// `Phi_x,N+1 = 0`. The `n = 0` step is the anchor; see [`residual_anchor`].
pub fn residual_primal(spec: &DynamicGameSpec, r: &SystemResponse) -> f64 {
    let n_max = r.horizon();
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        let mut res = spec.a() * r.phi_x.block(n) + spec.b_u_stacked() * r.phi_u.block(n);
        if n < n_max {
            res -= r.phi_x.block(n + 1);
        }
        worst = worst.max(res.amax());
    }
    worst
}

/// Max-abs violation of the dual recursions
/// `Phi_xx,n+1 = Phi_xx,n A + Phi_xy,n C` and
/// `Phi_ux,n+1 = Phi_ux,n A + Phi_uy,n C` for `n = 1..=N`.
pub fn residual_dual(spec: &DynamicGameSpec, r: &SystemResponse) -> f64 {
    let n_max = r.horizon();
    let nx = spec.state_dim();
    let ny = spec.output_dim();
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        for kernels in [&r.phi_x, &r.phi_u] {
            let b = kernels.block(n);
            let mut res = b.columns(0, nx) * spec.a() + b.columns(nx, ny) * spec.c();
            if n < n_max {
                res -= kernels.block(n + 1).columns(0, nx);
            }
            worst = worst.max(res.amax());
        }
    }
    worst
}

/// Max-abs violation of the `n = 0` equations of both recursions:
/// `Phi_x,1 = [I 0] + B_u Phi_u,0`, `Phi_xx,1 = I + Phi_xy,0 C` and
/// `Phi_ux,1 = Phi_uy,0 C`.
pub fn residual_anchor(spec: &DynamicGameSpec, r: &SystemResponse) -> f64 {
    let nx = spec.state_dim();
    let ny = spec.output_dim();
    let i = Matrix::identity(nx, nx);
    let p = r.phi_x.block(1) - anchor(spec) - spec.b_u_stacked() * r.phi_u.block(0);
    let x0 = r.phi_x.block(0);
    let dx = r.phi_x.block(1).columns(0, nx) - i - x0.columns(0, nx) * spec.a() - x0.columns(nx, ny) * spec.c();
    let u0 = r.phi_u.block(0);
    let du = r.phi_u.block(1).columns(0, nx) - u0.columns(0, nx) * spec.a() - u0.columns(nx, ny) * spec.c();
    p.amax().max(dx.amax()).max(du.amax())
}

/// Max-abs of entries that must vanish: causality at `n = 0` and all
/// blocks at `n = N`.
pub fn residual_boundary(spec: &DynamicGameSpec, r: &SystemResponse) -> f64 {
    let nx = spec.state_dim();
    let n_max = r.horizon();
    r.phi_x
        .block(0)
        .amax()
        .max(r.phi_u.block(0).columns(0, nx).amax())
        .max(r.phi_x.block(n_max).amax())
        .max(r.phi_u.block(n_max).amax())
}

/// Max-abs of entries outside the support mask.
pub fn residual_mask(mask: &SupportMask, r: &SystemResponse) -> f64 {
    let mut worst: f64 = 0.0;
    for (kernels, pats) in [(&r.phi_x, &mask.x), (&r.phi_u, &mask.u)] {
        for (b, pat) in kernels.blocks().iter().zip(pats) {
            for (v, &allowed) in b.iter().zip(pat.iter()) {
                if !allowed {
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

/// Zeroes every entry outside the mask.
pub fn apply_mask(mask: &SupportMask, r: &mut SystemResponse) {
    for (kernels, pats) in [(&mut r.phi_x, &mask.x), (&mut r.phi_u, &mask.u)] {
        for (n, pat) in pats.iter().enumerate() {
            let b = kernels.block_mut(n);
            for (v, &allowed) in b.iter_mut().zip(pat.iter()) {
                if !allowed {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Player `p`'s cost `sum_n ||(W_x^p Phi_x,n + W_u^p Phi_u,n^p) W_w||_F^2`.
pub fn objective(spec: &DynamicGameSpec, r: &SystemResponse, p: usize) -> f64 {
    let off = spec.input_offset(p);
    let m = spec.input_dim(p);
    (0..=r.horizon())
        .map(|n| {
            let z = spec.w_x(p) * r.phi_x.block(n) + spec.w_u(p) * r.phi_u.block(n).rows(off, m);
            (z * spec.w_w()).norm_squared()
        })
        .sum()
}

/// Per-player data reused by every gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradientCache {
    a_t: Matrix,
    wwt2: Matrix,
    players: Vec<PlayerCache>,
}

#[derive(Debug, Clone)]
struct PlayerCache {
    offset: usize,
    dim: usize,
    w_x: Matrix,
    w_u: Matrix,
    w_x_t: Matrix,
    w_u_t: Matrix,
    b_t: Matrix,
}

impl GradientCache {
    pub fn new(spec: &DynamicGameSpec) -> Self {
        let ww = spec.w_w();
        Self {
            a_t: spec.a().transpose(),
            wwt2: ww * ww.transpose() * 2.0,
            players: (0..spec.num_players())
                .map(|p| PlayerCache {
                    offset: spec.input_offset(p),
                    dim: spec.input_dim(p),
                    w_x: spec.w_x(p).clone(),
                    w_u: spec.w_u(p).clone(),
                    w_x_t: spec.w_x(p).transpose(),
                    w_u_t: spec.w_u(p).transpose(),
                    b_t: spec.b_u(p).transpose(),
                })
                .collect(),
        }
    }

    /// Gradient of player `p`'s cost with respect to its own input kernels,
    /// given the state kernels implied by `phi_u`.
    ///
    /// Uses the adjoint sweep `Delta_N = 0`,
    /// `Delta_n-1 = A^T Delta_n + W_x^T z_n`, so the cost is linear in `N`.
    pub fn player_gradient(&self, phi_x: &KernelSeq, phi_u: &KernelSeq, p: usize) -> KernelSeq {
        let pc = &self.players[p];
        let n_max = phi_u.horizon();
        let mut delta = Matrix::zeros(phi_x.rows(), phi_x.cols());
        let mut out = KernelSeq::zeros(n_max, pc.dim, phi_u.cols());
        for n in (0..=n_max).rev() {
            let z = &pc.w_x * phi_x.block(n) + &pc.w_u * phi_u.block(n).rows(pc.offset, pc.dim);
            let g = (&pc.w_u_t * &z + &pc.b_t * &delta) * &self.wwt2;
            *out.block_mut(n) = g;
            if n > 0 {
                delta = &self.a_t * &delta + &pc.w_x_t * &z;
            }
        }
        out
    }

    /// The game operator: all players' gradients stacked like `phi_u`.
    pub fn operator(&self, spec: &DynamicGameSpec, phi_u: &KernelSeq) -> KernelSeq {
        let phi_x = propagate_primal(spec, phi_u);
        let parts: Vec<KernelSeq> = (0..self.players.len())
            .into_par_iter()
            .map(|p| self.player_gradient(&phi_x, phi_u, p))
            .collect();
        let mut out = KernelSeq::zeros(phi_u.horizon(), phi_u.rows(), phi_u.cols());
        for (pc, g) in self.players.iter().zip(&parts) {
            out.set_row_slice(pc.offset, g);
        }
        out
    }
}

pub fn gradient(spec: &DynamicGameSpec, phi_u: &KernelSeq, p: usize) -> KernelSeq {
    let phi_x = propagate_primal(spec, phi_u);
    GradientCache::new(spec).player_gradient(&phi_x, phi_u, p)
}

pub fn game_operator(spec: &DynamicGameSpec, phi_u: &KernelSeq) -> KernelSeq {
    GradientCache::new(spec).operator(spec, phi_u)
}

/// Row offsets of the player-major stacking `(p, n, i)` of the inputs.
fn player_major_offsets(spec: &DynamicGameSpec) -> Vec<usize> {
    let n1 = spec.fir_horizon() + 1;
    let mut offs = vec![0];
    for p in 0..spec.num_players() {
        offs.push(offs[p] + n1 * spec.input_dim(p));
    }
    offs
}

/// Stacks `phi_u` player-major: rows ordered by player, then `n`, then row.
pub fn stack_player_major(spec: &DynamicGameSpec, phi_u: &KernelSeq) -> Matrix {
    let offs = player_major_offsets(spec);
    let mut out = Matrix::zeros(offs[spec.num_players()], phi_u.cols());
    for p in 0..spec.num_players() {
        let m = spec.input_dim(p);
        for n in 0..=phi_u.horizon() {
            out.rows_mut(offs[p] + n * m, m)
                .copy_from(&phi_u.block(n).rows(spec.input_offset(p), m));
        }
    }
    out
}

pub fn unstack_player_major(spec: &DynamicGameSpec, m: &Matrix) -> KernelSeq {
    let offs = player_major_offsets(spec);
    let n_max = spec.fir_horizon();
    let mut out = KernelSeq::zeros(n_max, spec.total_input_dim(), m.ncols());
    for p in 0..spec.num_players() {
        let d = spec.input_dim(p);
        for n in 0..=n_max {
            out.block_mut(n)
                .rows_mut(spec.input_offset(p), d)
                .copy_from(&m.rows(offs[p] + n * d, d));
        }
    }
    out
}

/// Dense block matrices of the affine game operator
/// `F(Phi) = 2 D^T H Phi W_w W_w^T + h`, with `Phi` stacked player-major.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// `blkdiag_p H^pp`, same shape as `h`.
    pub d: Matrix,
    pub h: Matrix,
}

pub fn hessian_blocks(spec: &DynamicGameSpec, budget: usize) -> Result<HessianBlocks, SlsError> {
    let np = spec.num_players();
    let n1 = spec.fir_horizon() + 1;
    let row_offs: Vec<usize> = (0..=np)
        .map(|p| (0..p).map(|q| n1 * spec.w_x(q).nrows()).sum())
        .collect();
    let col_offs = player_major_offsets(spec);
    let rows = row_offs[np];
    let cols = col_offs[np];
    let elements = rows.saturating_mul(cols);
    if elements > budget {
        return Err(SlsError::SizeGuard { elements, budget });
    }
    // A^k B^q for k = 0..N-1.
    let powers: Vec<Vec<Matrix>> = (0..np)
        .map(|q| {
            let mut v = Vec::with_capacity(n1);
            let mut m = spec.b_u(q).clone();
            for _ in 0..n1 {
                v.push(m.clone());
                m = spec.a() * m;
            }
            v
        })
        .collect();
    let mut h = Matrix::zeros(rows, cols);
    let mut d = Matrix::zeros(rows, cols);
    for p in 0..np {
        let nz = spec.w_x(p).nrows();
        for q in 0..np {
            let mq = spec.input_dim(q);
            for n in 0..n1 {
                for k in 0..=n {
                    let block = if k == n {
                        if p != q {
                            continue;
                        }
                        spec.w_u(p).clone()
                    } else {
                        spec.w_x(p) * &powers[q][n - 1 - k]
                    };
                    let (r0, c0) = (row_offs[p] + n * nz, col_offs[q] + k * mq);
                    h.view_mut((r0, c0), (nz, mq)).copy_from(&block);
                    if p == q {
                        d.view_mut((r0, c0), (nz, mq)).copy_from(&block);
                    }
                }
            }
        }
    }
    Ok(HessianBlocks { d, h })
}

/// Strong-monotonicity and Lipschitz constants of the game operator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonotonicityConstants {
    /// `2 sigma_min(D^T H) sigma_min(W_w)^2`.
    pub m: f64,
    /// `2 sigma_max(D^T H) sigma_max(W_w)^2`.
    pub l: f64,
    pub sigma_min_dh: f64,
    pub sigma_max_dh: f64,
    pub sigma_min_ww: f64,
    pub sigma_max_ww: f64,
    /// `lambda_min` of the symmetric part of `D^T H`; the exact modulus is
    /// `2 lambda_min sigma_min(W_w)^2` when this is positive.
    pub lambda_min_sym_dh: f64,
}

impl MonotonicityConstants {
    /// Strong-monotonicity modulus from the symmetric part, never larger than `m`.
    pub fn symmetric_modulus(&self) -> f64 {
        2.0 * self.lambda_min_sym_dh * self.sigma_min_ww.powi(2)
    }
}

pub fn monotonicity_constants(
    spec: &DynamicGameSpec,
    budget: usize,
) -> Result<MonotonicityConstants, SlsError> {
    let hb = hessian_blocks(spec, budget)?;
    let k = hb.d.transpose() * &hb.h;
    let s = singular_values(&k);
    let sym = (&k + k.transpose()) * 0.5;
    let lambda_min = sym.symmetric_eigenvalues().min();
    let sw = singular_values(spec.w_w());
    // W_w W_w^T is singular when there are fewer noise channels than columns.
    let sw_min = if spec.noise_dim() < spec.response_cols() {
        0.0
    } else {
        *sw.last().unwrap_or(&0.0)
    };
    let sw_max = *sw.first().unwrap_or(&0.0);
    let (smin, smax) = (*s.last().unwrap_or(&0.0), *s.first().unwrap_or(&0.0));
    Ok(MonotonicityConstants {
        m: 2.0 * smin * sw_min * sw_min,
        l: 2.0 * smax * sw_max * sw_max,
        sigma_min_dh: smin,
        sigma_max_dh: smax,
        sigma_min_ww: sw_min,
        sigma_max_ww: sw_max,
        lambda_min_sym_dh: lambda_min,
    })
}

#[cfg(test)]
mod tests;
