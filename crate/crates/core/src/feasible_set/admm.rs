//! ADMM for `min 1/2 y^T P y - q^T y` subject to `||K_i y + k_i|| <= r`.

use std::sync::Mutex;

use nalgebra::{Cholesky, Dyn};
use serde::{Deserialize, Serialize};

use super::ProjectionError;
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iterations: usize,
    /// Relative primal and dual stopping tolerance.
    pub tolerance: f64,
    /// Rebalance `rho` when one residual exceeds the other by this ratio.
    pub balance_ratio: f64,
    pub balance_factor: f64,
    /// Iterations between infeasibility checks.
    pub stall_window: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iterations: 200_000,
            tolerance: 1e-10,
            balance_ratio: 10.0,
            balance_factor: 2.0,
            stall_window: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AdmmStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    /// False when every cone was inactive and no iteration ran.
    pub ran: bool,
}

impl AdmmStats {
    pub(super) fn skipped() -> Self {
        Self::default()
    }
}

/// Splitting variables carried between projections to warm-start ADMM.
#[derive(Debug, Clone)]
pub struct AdmmState {
    z: Vector,
    u: Vector,
    rho: f64,
}

impl AdmmState {
    pub fn cold(m: usize, rho: f64) -> Self {
        Self {
            z: Vector::zeros(m),
            u: Vector::zeros(m),
            rho,
        }
    }

    pub(super) fn matches(&self, m: usize) -> bool {
        self.z.len() == m
    }
}

pub(super) struct Problem<'a> {
    pub p: Matrix,
    pub q: Vector,
    pub k: &'a Matrix,
    pub k_off: &'a Vector,
    pub ktk: &'a Matrix,
    pub offsets: &'a [usize],
    pub radius: f64,
}

type Factor = Cholesky<f64, Dyn>;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e8;

fn factor(prob: &Problem, rho: f64, cache: &Mutex<Option<(f64, Factor)>>) -> Factor {
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some((r, f)) = guard.as_ref() {
        if *r == rho {
            return f.clone();
        }
    }
    let f = Cholesky::new(&prob.p + prob.ktk * rho).expect("P + rho K^T K is positive definite");
    *guard = Some((rho, f.clone()));
    f
}

fn project_cones(v: &mut Vector, offsets: &[usize], radius: f64) {
    for w in offsets.windows(2) {
        let mut seg = v.rows_mut(w[0], w[1] - w[0]);
        let n = seg.norm();
        if n > radius {
            seg *= radius / n;
        }
    }
}

pub(super) fn solve(
    prob: &Problem,
    cfg: &AdmmConfig,
    state: &mut AdmmState,
    cache: &Mutex<Option<(f64, Factor)>>,
) -> Result<(Vector, AdmmStats), ProjectionError> {
    let mut rho = state.rho;
    let mut chol = factor(prob, rho, cache);
    let mut stats = AdmmStats {
        ran: true,
        ..AdmmStats::default()
    };
    let mut checkpoint: Option<(f64, f64)> = None;
    for it in 1..=cfg.max_iterations {
        let rhs = &prob.q + prob.k.tr_mul(&(&state.z - &state.u - prob.k_off)) * rho;
        let y = chol.solve(&rhs);
        let ky = prob.k * &y + prob.k_off;
        let z_old = state.z.clone();
        state.z = &ky + &state.u;
        project_cones(&mut state.z, prob.offsets, prob.radius);
        let r = &ky - &state.z;
        state.u += &r;

        let r_norm = r.norm();
        let s_norm = rho * prob.k.tr_mul(&(&state.z - &z_old)).norm();
        let eps_p = cfg.tolerance * ky.norm().max(state.z.norm()).max(1.0);
        let eps_d = cfg.tolerance * (prob.k.tr_mul(&state.u) * rho).norm().max(1.0);
        stats = AdmmStats {
            iterations: it,
            primal_residual: r_norm,
            dual_residual: s_norm,
            rho,
            ran: true,
        };
        if r_norm <= eps_p && s_norm <= eps_d {
            state.rho = rho;
            return Ok((y, stats));
        }

        if it % cfg.stall_window == 0 {
            // An empty intersection shows up as a primal residual that stops
            // shrinking while the scaled dual grows without bound.
            let u_norm = rho * state.u.norm();
            if let Some((r_prev, u_prev)) = checkpoint {
                if r_norm > 0.9 * r_prev && u_norm > 1.5 * u_prev && u_norm > 1e3 {
                    return Err(ProjectionError::Infeasible(format!(
                        "chance constraints cannot be met: ADMM primal residual stalled at {r_norm:.3e}"
                    )));
                }
            }
            checkpoint = Some((r_norm, u_norm));
        }

        if it % 10 == 0 {
            let scale_p = r_norm / eps_p;
            let scale_d = s_norm / eps_d;
            let new_rho = if scale_p > cfg.balance_ratio * scale_d {
                rho * cfg.balance_factor
            } else if scale_d > cfg.balance_ratio * scale_p {
                rho / cfg.balance_factor
            } else {
                rho
            }
            .clamp(RHO_MIN, RHO_MAX);
            if new_rho != rho {
                state.u *= rho / new_rho;
                rho = new_rho;
                chol = factor(prob, rho, cache);
            }
        }
    }
    state.rho = rho;
    Err(ProjectionError::NotConverged(stats))
}
