use crate::game_model::{DynamicGameSpec, SpecParts};
use crate::linalg::Matrix;
use crate::rng::{SplitRng, Stream};
use crate::sls_core::KernelSeq;

/// `x+ = a x + u + w_1`, `y = x + w_2`, one player, optional bounds
/// `|x| <= 1 / bound` as two chance rows.
pub fn scalar_spec(a: f64, n: usize, bound: Option<f64>) -> DynamicGameSpec {
    let m = |v: f64| Matrix::from_element(1, 1, v);
    let g_x = match bound {
        Some(g) => Matrix::from_row_slice(2, 1, &[g, -g]),
        None => Matrix::zeros(0, 1),
    };
    DynamicGameSpec::from_parts(SpecParts {
        num_players: 1,
        state_dim: 1,
        input_dims: vec![1],
        output_dim: 1,
        noise_dim: 2,
        a: m(a),
        b_u: vec![m(1.0)],
        b_w: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        c: m(1.0),
        d_w: Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
        w_x: vec![Matrix::from_row_slice(2, 1, &[1.0, 0.0])],
        w_u: vec![Matrix::from_row_slice(2, 1, &[0.0, 1.0])],
        g_u: Matrix::zeros(g_x.nrows(), 1),
        g_x,
        g_up: vec![Matrix::zeros(0, 1)],
        actuation_delay: 0,
        communication_delay: 1,
        fir_horizon: n,
        chance_level: 0.9,
    })
    .unwrap()
}

/// Gaussian kernels shaped like the spec's input kernels.
pub fn random_kernels(spec: &DynamicGameSpec, seed: u64, scale: f64) -> KernelSeq {
    let mut rng = SplitRng::new(seed, Stream::Trial(7));
    let (n, r, c) = (spec.fir_horizon(), spec.total_input_dim(), spec.response_cols());
    let v: Vec<f64> = (0..(n + 1) * r * c).map(|_| scale * rng.normal()).collect();
    KernelSeq::from_vector(n, r, c, &v)
}
