use crate::game_model::DynamicGameSpec;
use crate::linalg::{pattern_identity, pattern_mul, pattern_of, pattern_or, Pattern};

/// Allowed nonzero pattern of every kernel block.
///
/// `x[n]` covers `[Phi_xx,n Phi_xy,n]` and `u[n]` covers the stacked
/// `[Phi_ux,n Phi_uy,n]`. Causality and terminal zeros are not part of the
/// mask; they are boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMask {
    pub x: Vec<Pattern>,
    pub u: Vec<Pattern>,
}

/// Information-propagation exponent `max(0, floor((n - d_a) / d_c))`.
pub fn propagation_depth(n: usize, actuation_delay: usize, communication_delay: usize) -> usize {
    n.saturating_sub(actuation_delay) / communication_delay
}

/// Patterns `Sp((I + |A|)^k)` for `k = 0..=max_power`.
///
/// The closure under the identity reads `Sp(A^k)` as "reachable in at most
/// `k` steps", which keeps the masks nested in `k`.
pub fn reachability_powers(spec: &DynamicGameSpec, max_power: usize) -> Vec<Pattern> {
    let nx = spec.state_dim();
    let step = pattern_or(&pattern_identity(nx), &pattern_of(spec.a()));
    let mut out = Vec::with_capacity(max_power + 1);
    out.push(pattern_identity(nx));
    for k in 1..=max_power {
        let next = pattern_mul(&step, &out[k - 1]);
        out.push(next);
    }
    out
}

pub fn support_pattern(spec: &DynamicGameSpec) -> SupportMask {
    let n_max = spec.fir_horizon();
    let (da, dc) = (spec.actuation_delay(), spec.communication_delay());
    let depth = |n: usize| propagation_depth(n, da, dc);
    let powers = reachability_powers(spec, depth(n_max + 1));
    let nx = spec.state_dim();
    let ny = spec.output_dim();
    let nu = spec.total_input_dim();
    let ct = pattern_of(&spec.c().transpose());
    let bt = pattern_of(&spec.b_u_stacked().transpose());

    let mut x = Vec::with_capacity(n_max + 1);
    let mut u = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let r = &powers[depth(n)];
        let r_next = &powers[depth(n + 1)];
        let mut px = Pattern::from_element(nx, nx + ny, false);
        px.columns_mut(0, nx).copy_from(r);
        px.columns_mut(nx, ny).copy_from(&pattern_mul(r, &ct));
        let mut pu = Pattern::from_element(nu, nx + ny, false);
        pu.columns_mut(0, nx).copy_from(&pattern_mul(&bt, r));
        pu.columns_mut(nx, ny)
            .copy_from(&pattern_mul(&pattern_mul(&bt, r_next), &ct));
        x.push(px);
        u.push(pu);
    }
    SupportMask { x, u }
}
