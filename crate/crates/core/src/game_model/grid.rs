use serde::{Deserialize, Serialize};

use super::{DynamicGameSpec, SpecError, SpecParts};
use crate::linalg::Matrix;
use crate::rng::{SplitRng, Stream};

/// Parameters of the rectangular power-grid benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub inertia_range: (f64, f64),
    pub damping_range: (f64, f64),
    pub coupling_range: (f64, f64),
    pub dt: f64,
    pub bus_limit: f64,
    pub process_noise_std: f64,
    pub measurement_noise_std: f64,
    pub phase_noise_std: f64,
    pub state_weight: f64,
    pub fir_horizon: usize,
    pub actuation_delay: usize,
    pub communication_delay: usize,
    pub chance_level: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            seed: 0,
            inertia_range: (0.5, 1.0),
            damping_range: (1.0, 1.5),
            coupling_range: (0.5, 1.0),
            dt: 0.1,
            bus_limit: 5.0,
            process_noise_std: 1.0,
            measurement_noise_std: 0.1,
            phase_noise_std: 0.01,
            state_weight: 0.01,
            fir_horizon: 16,
            actuation_delay: 1,
            communication_delay: 1,
            chance_level: 0.975,
        }
    }
}

impl GridParams {
    /// The 2x2, N = 8 instance used for quick experiments.
    pub fn reduced() -> Self {
        Self {
            rows: 2,
            cols: 2,
            fir_horizon: 8,
            ..Self::default()
        }
    }
}

/// A generated grid game plus the physical data behind it.
#[derive(Debug, Clone)]
pub struct GridGame {
    pub spec: DynamicGameSpec,
    pub params: GridParams,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    /// Edges `(p, q)` with `p < q`, in generation order.
    pub edges: Vec<(usize, usize)>,
    pub coupling: Vec<f64>,
}

impl GridGame {
    pub fn node_count(&self) -> usize {
        self.params.rows * self.params.cols
    }

    pub fn node_index(&self, row: usize, col: usize) -> usize {
        row * self.params.cols + col
    }

    /// State index of the phase angle of node `p`.
    pub fn phase_index(p: usize) -> usize {
        2 * p
    }

    pub fn frequency_index(p: usize) -> usize {
        2 * p + 1
    }

    /// Hop distance between two nodes on the grid graph.
    pub fn hops(&self, p: usize, q: usize) -> usize {
        let c = self.params.cols;
        (p / c).abs_diff(q / c) + (p % c).abs_diff(q % c)
    }

    /// Normalized line flows `kappa (theta_p - theta_q) / limit`, one per edge.
    pub fn line_flows(&self, x: &[f64]) -> Vec<f64> {
        self.edges
            .iter()
            .zip(&self.coupling)
            .map(|(&(p, q), k)| {
                k * (x[Self::phase_index(p)] - x[Self::phase_index(q)]) / self.params.bus_limit
            })
            .collect()
    }
}

/// Builds the swing-equation grid game: one player per node.
///
/// Each node has state `[theta, omega]`, a scalar power injection and a noisy
/// phase measurement. Every edge contributes two chance-constraint
/// rows, one per flow direction.
pub fn grid_power_game(params: &GridParams) -> Result<GridGame, SpecError> {
    if params.rows == 0 || params.cols == 0 {
        return Err(SpecError::InvalidParameter {
            name: "rows/cols",
            detail: "grid must have at least one node".into(),
        });
    }
    if params.dt <= 0.0 || params.bus_limit <= 0.0 {
        return Err(SpecError::InvalidParameter {
            name: "dt/bus_limit",
            detail: "must be positive".into(),
        });
    }
    let n = params.rows * params.cols;
    let mut rng = SplitRng::new(params.seed, Stream::Parameters);
    let inertia: Vec<f64> = (0..n)
        .map(|_| rng.uniform_in(params.inertia_range.0, params.inertia_range.1))
        .collect();
    let damping: Vec<f64> = (0..n)
        .map(|_| rng.uniform_in(params.damping_range.0, params.damping_range.1))
        .collect();
    let mut edges = Vec::new();
    for r in 0..params.rows {
        for c in 0..params.cols {
            let p = r * params.cols + c;
            if c + 1 < params.cols {
                edges.push((p, p + 1));
            }
            if r + 1 < params.rows {
                edges.push((p, p + params.cols));
            }
        }
    }
    let coupling: Vec<f64> = edges
        .iter()
        .map(|_| rng.uniform_in(params.coupling_range.0, params.coupling_range.1))
        .collect();

    let nx = 2 * n;
    let ny = n;
    let dt = params.dt;
    let mut a = Matrix::zeros(nx, nx);
    let mut total_coupling = vec![0.0; n];
    for (&(p, q), &k) in edges.iter().zip(&coupling) {
        total_coupling[p] += k;
        total_coupling[q] += k;
        a[(2 * p + 1, 2 * q)] = dt * k / inertia[p];
        a[(2 * q + 1, 2 * p)] = dt * k / inertia[q];
    }
    for p in 0..n {
        a[(2 * p, 2 * p)] = 1.0;
        a[(2 * p, 2 * p + 1)] = dt;
        a[(2 * p + 1, 2 * p)] = -dt * total_coupling[p] / inertia[p];
        a[(2 * p + 1, 2 * p + 1)] = 1.0 - dt * damping[p] / inertia[p];
    }

    let b_u: Vec<Matrix> = (0..n)
        .map(|p| {
            let mut b = Matrix::zeros(nx, 1);
            b[(2 * p + 1, 0)] = dt / inertia[p];
            b
        })
        .collect();

    let nw = nx + ny;
    let mut b_w = Matrix::zeros(nx, nw);
    for p in 0..n {
        b_w[(2 * p, 2 * p)] = params.phase_noise_std;
        b_w[(2 * p + 1, 2 * p + 1)] = dt * params.process_noise_std / inertia[p];
    }
    let mut d_w = Matrix::zeros(ny, nw);
    let mut c = Matrix::zeros(ny, nx);
    for p in 0..n {
        d_w[(p, nx + p)] = params.measurement_noise_std;
        c[(p, 2 * p)] = 1.0;
    }

    // Stacking [W_x W_u] as blkdiag(state weight, input weight) keeps W_u^T W_x = 0.
    let w_x: Vec<Matrix> = (0..n)
        .map(|p| {
            let mut w = Matrix::zeros(nx + 1, nx);
            w[(2 * p, 2 * p)] = params.state_weight;
            w[(2 * p + 1, 2 * p + 1)] = params.state_weight;
            w
        })
        .collect();
    let w_u: Vec<Matrix> = (0..n)
        .map(|_| {
            let mut w = Matrix::zeros(nx + 1, 1);
            w[(nx, 0)] = 1.0;
            w
        })
        .collect();

    let mut g_x = Matrix::zeros(2 * edges.len(), nx);
    for (e, (&(p, q), &k)) in edges.iter().zip(&coupling).enumerate() {
        let g = k / params.bus_limit;
        g_x[(2 * e, 2 * p)] = g;
        g_x[(2 * e, 2 * q)] = -g;
        g_x[(2 * e + 1, 2 * p)] = -g;
        g_x[(2 * e + 1, 2 * q)] = g;
    }

    let parts = SpecParts {
        num_players: n,
        state_dim: nx,
        input_dims: vec![1; n],
        output_dim: ny,
        noise_dim: nw,
        a,
        b_u,
        b_w,
        c,
        d_w,
        w_x,
        w_u,
        g_u: Matrix::zeros(g_x.nrows(), n),
        g_x,
        g_up: vec![Matrix::zeros(0, 1); n],
        actuation_delay: params.actuation_delay,
        communication_delay: params.communication_delay,
        fir_horizon: params.fir_horizon,
        chance_level: params.chance_level,
    };
    Ok(GridGame {
        spec: DynamicGameSpec::from_parts(parts)?,
        params: params.clone(),
        inertia,
        damping,
        edges,
        coupling,
    })
}
