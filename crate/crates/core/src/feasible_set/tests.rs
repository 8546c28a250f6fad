use super::*;
use crate::game_model::{
    grid_power_game, random_game, GridParams, RandomGameParams, SpecParts,
};
use crate::rng::{SplitRng, Stream};
use crate::sls_core::response_from_inputs;

fn random_target(set: &FeasibleSetSpec, seed: u64, scale: f64) -> KernelSeq {
    let spec = set.spec();
    let mut rng = SplitRng::new(seed, Stream::Trial(7));
    let v: Vec<f64> = (0..(spec.fir_horizon() + 1) * spec.total_input_dim() * spec.response_cols())
        .map(|_| scale * rng.normal())
        .collect();
    KernelSeq::from_vector(spec.fir_horizon(), spec.total_input_dim(), spec.response_cols(), &v)
}

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
        g_x: Matrix::zeros(0, 1),
        g_u: Matrix::zeros(0, 1),
        g_up: vec![Matrix::zeros(0, 1)],
        actuation_delay: 0,
        communication_delay: 1,
        fir_horizon: n,
        chance_level: 0.9,
    })
    .unwrap()
}

#[test]
fn scalar_counts_by_hand() {
    let set = assemble(&scalar_spec(2)).unwrap();
    let c = set.counts();
    assert_eq!(c.dual_rows, 2);
    assert_eq!(c.dual_anchor_rows, 2);
    assert_eq!(c.primal_rows, 2);
    assert_eq!(c.primal_anchor_rows, 2);
    // Phi_x,0 (2) + Phi_ux,0 (1) + terminal Phi_x,2 and Phi_u,2 (4).
    assert_eq!(c.boundary_zeros, 7);
    assert_eq!(c.soc_rows, 0);
}

#[test]
fn scalar_deadbeat_is_unique() {
    // x+ = 2x + u, y = x + v with N = 2: the only FIR response is
    // u_t = -2 y_t, i.e. Phi_uy,0 = -2, Phi_ux,1 = -2, everything else zero
    // apart from Phi_xx,1 = 1.
    let spec = scalar_spec(2);
    let set = assemble(&spec).unwrap();
    assert_eq!(set.dimension(), 0);
    let r = set.response(set.origin_point());
    assert!((r.phi_uy(0, 0)[(0, 0)] + 2.0).abs() < 1e-12);
    assert!((r.phi_ux(0, 1)[(0, 0)] + 2.0).abs() < 1e-12);
    assert!((r.phi_xx(1)[(0, 0)] - 1.0).abs() < 1e-12);
    assert!((r.phi_xy(1)[(0, 0)] + 2.0).abs() < 1e-12);
    assert!(set.feasibility_report(&r).is_feasible(1e-12));
}

#[test]
fn reduced_grid_dimension() {
    let g = grid_power_game(&GridParams::reduced()).unwrap();
    let set = assemble(&g.spec).unwrap();
    // Matches an independent dense rank computation on the full kernel space.
    assert_eq!(set.dimension(), 40);
    assert_eq!(set.counts().soc_rows, 8);
    assert_eq!(set.counts().soc_cones, 4);
    let r = set.response(set.origin_point());
    let rep = set.feasibility_report(&r);
    assert!(rep.max_affine_residual() < 1e-10, "{rep:?}");
}

#[test]
fn short_horizon_grid_is_infeasible() {
    let g = grid_power_game(&GridParams {
        fir_horizon: 6,
        ..GridParams::default()
    })
    .unwrap();
    assert!(matches!(assemble(&g.spec), Err(ProjectionError::Infeasible(_))));
}

#[test]
fn affine_projection_is_orthogonal_and_idempotent() {
    let spec = random_game(&RandomGameParams {
        constraint_rows: 0,
        ..Default::default()
    })
    .unwrap();
    let set = assemble(&spec).unwrap();
    let v = random_target(&set, 1, 1.0);
    let p = set.project(&v).unwrap();
    assert!(!p.stats.ran);
    let again = set.project(&p.phi_u).unwrap();
    assert!(again.phi_u.sub(&p.phi_u).max_abs() < 1e-12);
    // The residual is orthogonal to every feasible direction.
    let resid = v.sub(&p.phi_u).to_vector();
    assert!(set.basis().tr_mul(&resid).amax() < 1e-10);
}

#[test]
fn cone_projection_satisfies_constraints() {
    let spec = random_game(&RandomGameParams {
        constraint_rows: 2,
        constraint_scale: 0.5,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let set = assemble(&spec).unwrap();
    let v = random_target(&set, 2, 3.0);
    let p = set.project(&v).unwrap();
    assert!(p.stats.ran);
    let r = response_from_inputs(&spec, p.phi_u.clone());
    let rep = set.feasibility_report(&r);
    assert!(rep.max_affine_residual() < 1e-9, "{rep:?}");
    assert!(rep.min_soc_slack() > -1e-8, "{rep:?}");
    // At least one cone is active.
    assert!(rep.min_soc_slack() < 1e-6);
}

#[test]
fn lifted_metric_is_feasible_and_differs() {
    let spec = random_game(&RandomGameParams {
        constraint_rows: 0,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let exact = assemble(&spec).unwrap();
    let lifted = assemble_with(
        &spec,
        &AssembleOptions {
            metric: ProjectionMetric::Lifted,
            ..Default::default()
        },
    )
    .unwrap();
    let v = random_target(&exact, 4, 1.0);
    let a = exact.project(&v).unwrap().phi_u;
    let b = lifted.project(&v).unwrap().phi_u;
    let rb = lifted.feasibility_report(&response_from_inputs(&spec, b.clone()));
    assert!(rb.max_affine_residual() < 1e-9);
    // The exact metric is closer in the input-kernel norm.
    assert!(v.sub(&a).norm() <= v.sub(&b).norm() + 1e-12);
    assert!(a.sub(&b).norm() > 1e-6);
}
