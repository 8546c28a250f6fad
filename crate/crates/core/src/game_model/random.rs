use serde::{Deserialize, Serialize};

use super::{DynamicGameSpec, SpecError, SpecParts};
use crate::linalg::{spectral_radius, Matrix};
use crate::rng::{SplitRng, Stream};

/// Parameters for small random games used in tests and benchmarks.
///
/// Noise enters through `B_w = [I 0]`, `D_w = [0 sigma_y I]`, so `[B_w; D_w]`
/// has full column rank and the standing assumptions hold by construction
/// whenever the drawn pair `(A, B_u)` is controllable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomGameParams {
    pub players: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub fir_horizon: usize,
    pub seed: u64,
    /// Target spectral radius of `A`.
    pub spectral_radius: f64,
    pub measurement_noise_std: f64,
    pub state_weight: f64,
    /// Number of random rows in `[G_x G_u]`.
    pub constraint_rows: usize,
    /// Scale of the constraint rows; larger means tighter.
    pub constraint_scale: f64,
    pub actuation_delay: usize,
    pub communication_delay: usize,
    pub chance_level: f64,
}

impl Default for RandomGameParams {
    fn default() -> Self {
        Self {
            players: 2,
            state_dim: 2,
            input_dim: 1,
            output_dim: 2,
            fir_horizon: 6,
            seed: 0,
            spectral_radius: 0.9,
            measurement_noise_std: 1.0,
            state_weight: 1.0,
            constraint_rows: 1,
            constraint_scale: 0.1,
            actuation_delay: 0,
            communication_delay: 1,
            chance_level: 0.9,
        }
    }
}

fn gaussian(rng: &mut SplitRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn random_game(params: &RandomGameParams) -> Result<DynamicGameSpec, SpecError> {
    let mut rng = SplitRng::new(params.seed, Stream::Parameters);
    let nx = params.state_dim;
    let ny = params.output_dim;
    let np = params.players;
    let nu = params.input_dim;

    let mut a = gaussian(&mut rng, nx, nx);
    let r = spectral_radius(&a);
    if r > 0.0 {
        a *= params.spectral_radius / r;
    }
    let b_u: Vec<Matrix> = (0..np).map(|_| gaussian(&mut rng, nx, nu)).collect();
    let c = gaussian(&mut rng, ny, nx);
    let mut b_w = Matrix::zeros(nx, nx + ny);
    b_w.view_mut((0, 0), (nx, nx)).fill_with_identity();
    let mut d_w = Matrix::zeros(ny, nx + ny);
    for i in 0..ny {
        d_w[(i, nx + i)] = params.measurement_noise_std;
    }
    let w_x: Vec<Matrix> = (0..np)
        .map(|_| {
            let mut w = Matrix::zeros(nx + nu, nx);
            w.rows_mut(0, nx)
                .copy_from(&(gaussian(&mut rng, nx, nx) * params.state_weight));
            w
        })
        .collect();
    let w_u: Vec<Matrix> = (0..np)
        .map(|_| {
            let mut w = Matrix::zeros(nx + nu, nu);
            w.view_mut((nx, 0), (nu, nu)).fill_with_identity();
            w
        })
        .collect();
    let g_x = gaussian(&mut rng, params.constraint_rows, nx) * params.constraint_scale;
    let g_u = gaussian(&mut rng, params.constraint_rows, np * nu) * params.constraint_scale;

    DynamicGameSpec::from_parts(SpecParts {
        num_players: np,
        state_dim: nx,
        input_dims: vec![nu; np],
        output_dim: ny,
        noise_dim: nx + ny,
        a,
        b_u,
        b_w,
        c,
        d_w,
        w_x,
        w_u,
        g_x,
        g_u,
        g_up: vec![Matrix::zeros(0, nu); np],
        actuation_delay: params.actuation_delay,
        communication_delay: params.communication_delay,
        fir_horizon: params.fir_horizon,
        chance_level: params.chance_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_games_satisfy_assumptions() {
        for seed in 0..10 {
            let spec = random_game(&RandomGameParams {
                seed,
                ..Default::default()
            })
            .unwrap();
            let report = spec.validate();
            assert!(report.all_passed(), "seed {seed}: {:?}", report.checks);
            assert!((report.spectral_radius - 0.9).abs() < 1e-9);
        }
    }
}
