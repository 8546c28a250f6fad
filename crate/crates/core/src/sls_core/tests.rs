use super::*;
use crate::game_model::{grid_power_game, random_game, GridParams, RandomGameParams, SpecParts};
use crate::linalg::Matrix;
use crate::rng::{SplitRng, Stream};

fn scalar_spec(n: usize) -> DynamicGameSpec {
    let m = |v: f64| Matrix::from_element(1, 1, v);
    DynamicGameSpec::from_parts(SpecParts {
        num_players: 1,
        state_dim: 1,
        input_dims: vec![1],
        output_dim: 1,
        noise_dim: 2,
        a: m(2.0),
        b_u: vec![m(1.0)],
        b_w: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        c: m(1.0),
        d_w: Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
        w_x: vec![Matrix::from_row_slice(2, 1, &[1.0, 0.0])],
        w_u: vec![Matrix::from_row_slice(2, 1, &[0.0, 1.0])],
        g_x: m(1.0),
        g_u: m(0.0),
        g_up: vec![Matrix::zeros(0, 1)],
        actuation_delay: 0,
        communication_delay: 1,
        fir_horizon: n,
        chance_level: 0.9,
    })
    .unwrap()
}

fn random_kernels(spec: &DynamicGameSpec, seed: u64) -> KernelSeq {
    let mut rng = SplitRng::new(seed, Stream::Trial(0));
    let mut k = KernelSeq::zeros(spec.fir_horizon(), spec.total_input_dim(), spec.response_cols());
    for n in 0..=spec.fir_horizon() {
        *k.block_mut(n) = Matrix::from_fn(k.rows(), k.cols(), |_, _| rng.normal());
    }
    k
}

#[test]
fn scalar_deadbeat_response_by_hand() {
    // x+ = 2x + u, y = x: u_t = -2 y_t gives Phi_x = [0, [1 0], 0],
    // Phi_u = [[0 -2], [0 0]... ] is not feasible for the dual, but the
    // primal propagation is checked against hand values.
    let spec = scalar_spec(2);
    let mut phi_u = KernelSeq::zeros(2, 1, 2);
    phi_u.block_mut(0)[(0, 1)] = 0.5;
    phi_u.block_mut(1)[(0, 0)] = -2.0;
    let phi_x = propagate_primal(&spec, &phi_u);
    assert_eq!(phi_x.block(0), &Matrix::zeros(1, 2));
    assert_eq!(phi_x.block(1), &Matrix::from_row_slice(1, 2, &[1.0, 0.5]));
    // 2 * [1 0.5] + [-2 0] = [0 1]
    assert_eq!(phi_x.block(2), &Matrix::from_row_slice(1, 2, &[0.0, 1.0]));
}

#[test]
fn zero_response_violates_only_the_anchor() {
    let spec = scalar_spec(3);
    let r = SystemResponse::zeros(&spec);
    assert_eq!(residual_anchor(&spec, &r), 1.0);
    assert_eq!(residual_primal(&spec, &r), 0.0);
    assert_eq!(residual_dual(&spec, &r), 0.0);
    assert_eq!(residual_boundary(&spec, &r), 0.0);
}

#[test]
fn propagated_response_satisfies_primal() {
    let spec = random_game(&RandomGameParams::default()).unwrap();
    let mut phi_u = random_kernels(&spec, 1);
    *phi_u.block_mut(spec.fir_horizon()) *= 0.0;
    let r = response_from_inputs(&spec, phi_u);
    // The last step of the primal recursion is the terminal condition, which
    // a random input sequence does not meet.
    let nx = spec.state_dim();
    assert!(residual_anchor(&spec, &r) > 0.0 || r.phi_u.block(0).columns(0, nx).amax() == 0.0);
    let n = spec.fir_horizon();
    let expect = (spec.a() * r.phi_x.block(n)).amax();
    assert!((residual_primal(&spec, &r) - expect).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let spec = random_game(&RandomGameParams {
        players: 3,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let phi_u = random_kernels(&spec, 2);
    for p in 0..3 {
        let g = gradient(&spec, &phi_u, p);
        let off = spec.input_offset(p);
        let cost = |k: &KernelSeq| objective(&spec, &response_from_inputs(&spec, k.clone()), p);
        let h = 0.5;
        for n in [0, 2, spec.fir_horizon()] {
            for j in 0..phi_u.cols() {
                let mut plus = phi_u.clone();
                plus.block_mut(n)[(off, j)] += h;
                let mut minus = phi_u.clone();
                minus.block_mut(n)[(off, j)] -= h;
                // Central differences are exact for quadratics.
                let fd = (cost(&plus) - cost(&minus)) / (2.0 * h);
                let an = g.block(n)[(0, j)];
                assert!((fd - an).abs() <= 1e-8 * (1.0 + an.abs()), "p{p} n{n} j{j}: {fd} vs {an}");
            }
        }
    }
}

#[test]
fn operator_matches_affine_form() {
    let spec = random_game(&RandomGameParams {
        players: 2,
        input_dim: 2,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let hb = hessian_blocks(&spec, DEFAULT_HESSIAN_BUDGET).unwrap();
    let k = hb.d.transpose() * &hb.h;
    let ww = spec.w_w() * spec.w_w().transpose();
    let f0 = stack_player_major(&spec, &game_operator(&spec, &KernelSeq::zeros(6, 4, 4)));
    for seed in 0..3 {
        let phi = random_kernels(&spec, seed);
        let f = stack_player_major(&spec, &game_operator(&spec, &phi));
        let affine = &k * stack_player_major(&spec, &phi) * &ww * 2.0 + &f0;
        assert!((f - affine).amax() < 1e-10);
    }
}

#[test]
fn player_major_roundtrip() {
    let spec = random_game(&RandomGameParams {
        players: 3,
        input_dim: 2,
        ..Default::default()
    })
    .unwrap();
    let phi = random_kernels(&spec, 3);
    assert_eq!(unstack_player_major(&spec, &stack_player_major(&spec, &phi)), phi);
}

#[test]
fn grid_strong_monotonicity_constant() {
    let g = grid_power_game(&GridParams::reduced()).unwrap();
    let c = monotonicity_constants(&g.spec, DEFAULT_HESSIAN_BUDGET).unwrap();
    // sigma_min(W_w) is the phase noise level 0.01 and D^T H is close to I.
    assert!((c.m - 2e-4).abs() < 1e-6, "M = {}", c.m);
    assert!(c.l > c.m);
    assert!(c.symmetric_modulus() <= c.m * (1.0 + 1e-12));
}

#[test]
fn hessian_guard_trips() {
    let g = grid_power_game(&GridParams::reduced()).unwrap();
    assert!(matches!(hessian_blocks(&g.spec, 10), Err(SlsError::SizeGuard { .. })));
}

#[test]
fn noncausal_response_is_rejected() {
    let spec = scalar_spec(3);
    let mut r = SystemResponse::zeros(&spec);
    r.phi_u.block_mut(0)[(0, 0)] = 1.0;
    assert!(matches!(reconstruct_policy(&r), Err(SlsError::NonCausal { block: "Phi_ux", .. })));
    r.phi_u.block_mut(0)[(0, 0)] = 0.0;
    assert!(reconstruct_policy(&r).is_ok());
}

#[test]
fn response_json_roundtrip() {
    let spec = random_game(&RandomGameParams::default()).unwrap();
    let r = response_from_inputs(&spec, random_kernels(&spec, 5));
    let back = SystemResponse::from_json(&spec, &r.to_json()).unwrap();
    assert_eq!(back, r);
}
