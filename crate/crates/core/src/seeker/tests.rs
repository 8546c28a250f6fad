use proptest::prelude::*;

use super::*;
use crate::feasible_set::assemble;
use crate::game_model::{random_game, RandomGameParams};
use crate::oracle::kkt_vgne;
use crate::rng::{SplitRng, Stream};
use crate::sls_core::game_operator;
use crate::test_support::random_kernels;

#[test]
fn rate_formula_values() {
    assert_eq!(predicted_rate(1.0, 1.0, 1.0).unwrap(), 0.0);
    let r = predicted_rate(0.5, 2e-4, 4e-4).unwrap();
    assert!((r - 0.999_900_015_001_5).abs() < 1e-15);
    let tiny = predicted_rate(1e-12, 1.0, 1.0).unwrap();
    assert!(tiny < 1.0 && tiny > 1.0 - 1e-11);
}

#[test]
fn rate_rejects_inadmissible_steps() {
    assert!(matches!(predicted_rate(2.0, 1.0, 1.0), Err(SeekError::InadmissibleStep { .. })));
    assert!(matches!(predicted_rate(0.0, 1.0, 1.0), Err(SeekError::InadmissibleStep { .. })));
    assert!(matches!(predicted_rate(0.1, 2.0, 1.0), Err(SeekError::InvalidConstants(_))));
}

#[test]
fn step_choices() {
    assert_eq!(eta_from_constants(2.0, 2.0).unwrap(), 0.5);
    assert_eq!(eta_from_constants(1.0, 2.0).unwrap(), 0.25);
    let c = step_choice(2e-4, 4e-4).unwrap();
    assert!((c.ratio - 1250.0).abs() < 1e-9);
    assert!((c.quotient - 0.5).abs() < 1e-15);
    assert!((c.bound - 2500.0).abs() < 1e-9);
    // Even with M > L the ratio stays below the bound.
    assert_eq!(eta_from_constants(2.0, 1.0).unwrap(), 2.0);
}

fn box_proj(v: Vec<Vector>) -> Result<Vec<Vector>, ()> {
    Ok(v.into_iter().map(|x| x.map(|e| e.clamp(-1.0, 1.0))).collect())
}

fn own_square(p: usize) -> impl Fn(&[Vector]) -> Result<Vector, ()> + Sync {
    move |s: &[Vector]| Ok(&s[p] * 2.0)
}

#[test]
fn static_step_on_a_box() {
    let grads = [own_square(0), own_square(1)];
    let s = vec![Vector::from_element(1, 1.0), Vector::from_element(1, -1.0)];
    let next = fb_step_static(&grads, box_proj, &s, 0.25).unwrap();
    assert_eq!((next[0][0], next[1][0]), (0.5, -0.5));
    let next = fb_step_static(&grads, box_proj, &s, 1.0).unwrap();
    assert_eq!((next[0][0], next[1][0]), (-1.0, 1.0));
}

#[test]
fn static_game_with_shared_constraint() {
    // L1 = (s1 - 2)^2, L2 = (s2 - 1)^2, s1 + s2 <= 1. Equal multipliers give
    // s1 - s2 = 1 on the boundary, so (s1, s2) = (1, 0).
    let g1 = |s: &[Vector]| Ok::<_, ()>(s[0].map(|v| 2.0 * (v - 2.0)));
    let g2 = |s: &[Vector]| Ok::<_, ()>(s[1].map(|v| 2.0 * (v - 1.0)));
    let halfspace = |v: Vec<Vector>| {
        let excess = (v[0][0] + v[1][0] - 1.0).max(0.0) / 2.0;
        Ok(v.into_iter().map(|x| x.add_scalar(-excess)).collect())
    };
    type Grad<'a> = &'a (dyn Fn(&[Vector]) -> Result<Vector, ()> + Sync);
    let grads: [Grad; 2] = [&g1, &g2];
    let mut s = vec![Vector::zeros(1), Vector::zeros(1)];
    for _ in 0..200 {
        s = fb_step_static(&grads, halfspace, &s, 0.3).unwrap();
    }
    assert!((s[0][0] - 1.0).abs() < 1e-8 && s[1][0].abs() < 1e-8);
}

#[test]
fn strongly_convex_single_player_reaches_the_minimizer() {
    let g = |s: &[Vector]| Ok::<_, ()>(s[0].map(|v| 4.0 * (v - 0.3)));
    let grads = [g];
    let mut s = vec![Vector::zeros(1)];
    for _ in 0..100 {
        s = fb_step_static(&grads, Ok, &s, 0.2).unwrap();
    }
    assert!((s[0][0] - 0.3).abs() < 1e-14);
}

fn small_spec(seed: u64) -> DynamicGameSpec {
    random_game(&RandomGameParams {
        constraint_rows: 0,
        fir_horizon: 5,
        state_weight: 0.2,
        spectral_radius: 0.5,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn fast_config() -> SeekerConfig {
    SeekerConfig {
        max_updates: 200_000,
        ..Default::default()
    }
}

#[test]
fn seek_matches_kkt_oracle() {
    let spec = small_spec(2);
    let set = assemble(&spec).unwrap();
    let out = seek(&set, &fast_config(), None, None).unwrap();
    assert!(out.converged, "{} updates", out.log.len());
    let star = kkt_vgne(&spec).unwrap();
    assert!(out.phi_u.sub(&star).max_abs() < 1e-7);

    // Fixed point and variational inequality at the returned point.
    let seeker = Seeker::new(&set, fast_config(), Some(out.phi_u.clone())).unwrap();
    let image = seeker.map(&out.phi_u, None).unwrap();
    assert!(image.sub(&out.phi_u).norm() <= 10.0 * 1e-12 * out.phi_u.norm());
    let f = game_operator(&spec, &out.phi_u);
    let mut rng = SplitRng::new(1, Stream::Trial(0));
    for _ in 0..100 {
        let y = Vector::from_fn(set.dimension(), |_, _| rng.normal());
        let q = set.point(&y);
        assert!(f.dot(&q.sub(&out.phi_u)) >= -1e-6);
    }
}

#[test]
fn fixed_point_stops_after_one_update() {
    let spec = small_spec(3);
    let set = assemble(&spec).unwrap();
    let star = kkt_vgne(&spec).unwrap();
    let out = seek(&set, &fast_config(), Some(star), None).unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(out.log.records[0].rel_step < 1e-12);
}

#[test]
fn callback_sees_every_update_and_checkpoints() {
    let spec = small_spec(4);
    let set = assemble(&spec).unwrap();
    let cfg = SeekerConfig {
        max_updates: 25,
        checkpoint_every: 10,
        ..Default::default()
    };
    let mut seen = Vec::new();
    let mut checkpoints = Vec::new();
    let mut cb = |v: &UpdateView| {
        seen.push(v.record.update);
        if v.checkpoint {
            checkpoints.push(v.record.update);
        }
        assert_eq!(v.realization.horizon(), 5);
    };
    let out = seek(&set, &cfg, None, Some(&mut cb)).unwrap();
    assert_eq!(seen, (1..=25).collect::<Vec<_>>());
    assert_eq!(checkpoints, vec![10, 20]);
    assert!(!out.converged);
    assert!(out.log.records.iter().all(|r| r.affine_residual < 1e-9));
}

#[test]
fn inadmissible_fixed_step_is_refused() {
    let spec = small_spec(5);
    let set = assemble(&spec).unwrap();
    let c = monotonicity_constants(&spec, DEFAULT_HESSIAN_BUDGET).unwrap();
    let cfg = SeekerConfig {
        eta: StepSize::Fixed(1.01 * step_bound(c.m, c.l)),
        ..Default::default()
    };
    assert!(matches!(Seeker::new(&set, cfg, None), Err(SeekError::InadmissibleStep { .. })));
}

#[test]
fn iterate_log_roundtrips_as_jsonl() {
    let spec = small_spec(6);
    let set = assemble(&spec).unwrap();
    let cfg = SeekerConfig {
        max_updates: 3,
        ..Default::default()
    };
    let out = seek(&set, &cfg, Some(random_kernels(&spec, 1, 1.0)), None).unwrap();
    let mut buf = Vec::new();
    out.log.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    let back = IterateLog::read_jsonl(&text).unwrap();
    assert_eq!(back.records[2].update, 3);
    assert_eq!(back.records[1].rel_step, out.log.records[1].rel_step);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_is_in_unit_interval(m in 1e-6f64..1.0, ratio in 1.0f64..100.0, frac in 0.001f64..0.999) {
        let l = m * ratio;
        let eta = frac * step_bound(m, l);
        let r = predicted_rate(eta, m, l).unwrap();
        prop_assert!((0.0..1.0).contains(&r));
    }

    #[test]
    fn auto_step_is_admissible(m in 1e-6f64..1.0, ratio in 1.0f64..100.0) {
        let l = m * ratio;
        let eta = eta_from_constants(m, l).unwrap();
        prop_assert!(eta > 0.0 && eta < step_bound(m, l));
    }
}
