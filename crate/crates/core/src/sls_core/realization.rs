use std::collections::VecDeque;

use super::{SlsError, SystemResponse};
use crate::linalg::{Matrix, Vector};

/// State-space-free controller implementing a system response.
///
/// With internal state `xi` (dimension `N_x`):
///
/// ```text
/// xi_t+1 = -sum_{n=0}^{N-2} Phi_xx,n+2 xi_t-n - sum_{n=0}^{N-1} Phi_xy,n+1 y_t-n
/// u_t    =  sum_{n=0}^{N-1} Phi_ux,n+1 xi_t-n + sum_{n=0}^{N}   Phi_uy,n   y_t-n
/// ```
///
/// Input rows of all players are stacked; player `p` only reads its own rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    horizon: usize,
    input_dims: Vec<usize>,
    /// `Phi_xx,k` for `k = 2..=N`.
    xx: Vec<Matrix>,
    /// `Phi_xy,k` for `k = 1..=N`.
    xy: Vec<Matrix>,
    /// `Phi_ux,k` for `k = 1..=N`.
    ux: Vec<Matrix>,
    /// `Phi_uy,k` for `k = 0..=N`.
    uy: Vec<Matrix>,
}

/// Causality threshold on the `n = 0` blocks.
const CAUSAL_TOL: f64 = 1e-12;

pub fn reconstruct_policy(r: &SystemResponse) -> Result<ControllerRealization, SlsError> {
    let n_max = r.horizon();
    let stacked_ux = |k: usize| {
        let nx = r.state_dim();
        r.phi_u.block(k).columns(0, nx).into_owned()
    };
    let stacked_uy = |k: usize| {
        let nx = r.state_dim();
        r.phi_u.block(k).columns(nx, r.output_dim()).into_owned()
    };
    for (block, value) in [
        ("Phi_xx", r.phi_xx(0).amax()),
        ("Phi_xy", r.phi_xy(0).amax()),
        ("Phi_ux", stacked_ux(0).amax()),
    ] {
        if value > CAUSAL_TOL {
            return Err(SlsError::NonCausal { block, value });
        }
    }
    Ok(ControllerRealization {
        horizon: n_max,
        input_dims: r.input_dims().to_vec(),
        xx: (2..=n_max).map(|k| r.phi_xx(k)).collect(),
        xy: (1..=n_max).map(|k| r.phi_xy(k)).collect(),
        ux: (1..=n_max).map(stacked_ux).collect(),
        uy: (0..=n_max).map(stacked_uy).collect(),
    })
}

impl ControllerRealization {
    /// The controller `u_t = 0`, used for open-loop baselines.
    pub fn zero(horizon: usize, state_dim: usize, output_dim: usize, input_dims: &[usize]) -> Self {
        Self::with_static_gain(horizon, state_dim, &Matrix::zeros(input_dims.iter().sum(), output_dim), input_dims)
    }

    /// The memoryless controller `u_t = K y_t`.
    pub fn with_static_gain(horizon: usize, state_dim: usize, gain: &Matrix, input_dims: &[usize]) -> Self {
        assert!(horizon >= 1, "horizon must be positive");
        let (nu, ny) = gain.shape();
        assert_eq!(nu, input_dims.iter().sum::<usize>(), "gain rows must match the inputs");
        let mut uy = vec![Matrix::zeros(nu, ny); horizon + 1];
        uy[0] = gain.clone();
        Self {
            horizon,
            input_dims: input_dims.to_vec(),
            xx: vec![Matrix::zeros(state_dim, state_dim); horizon - 1],
            xy: vec![Matrix::zeros(state_dim, ny); horizon],
            ux: vec![Matrix::zeros(nu, state_dim); horizon],
            uy,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_players(&self) -> usize {
        self.input_dims.len()
    }
    pub fn state_dim(&self) -> usize {
        self.xy[0].nrows()
    }
    pub fn output_dim(&self) -> usize {
        self.xy[0].ncols()
    }
    pub fn total_input_dim(&self) -> usize {
        self.input_dims.iter().sum()
    }
    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// `Phi_xx,k` for `2 <= k <= N`.
    pub fn xx(&self, k: usize) -> &Matrix {
        &self.xx[k - 2]
    }
    /// `Phi_xy,k` for `1 <= k <= N`.
    pub fn xy(&self, k: usize) -> &Matrix {
        &self.xy[k - 1]
    }
    /// Stacked `Phi_ux,k` for `1 <= k <= N`.
    pub fn ux(&self, k: usize) -> &Matrix {
        &self.ux[k - 1]
    }
    /// Stacked `Phi_uy,k` for `0 <= k <= N`.
    pub fn uy(&self, k: usize) -> &Matrix {
        &self.uy[k]
    }
}

/// Ring buffers of past internal states and measurements.
///
/// Holds `xi_t, ..., xi_t-N+1` and `y_t, ..., y_t-N`; older entries never
/// enter the sums and are dropped.
#[derive(Debug, Clone)]
pub struct ControllerMemory {
    xi: VecDeque<Vector>,
    y: VecDeque<Vector>,
    horizon: usize,
}

impl ControllerMemory {
    pub fn new(r: &ControllerRealization) -> Self {
        let mut xi = VecDeque::with_capacity(r.horizon + 1);
        xi.push_front(Vector::zeros(r.state_dim()));
        Self {
            xi,
            y: VecDeque::with_capacity(r.horizon + 2),
            horizon: r.horizon,
        }
    }

    pub fn xi_len(&self) -> usize {
        self.xi.len()
    }
    pub fn y_len(&self) -> usize {
        self.y.len()
    }

    /// Current internal state `xi_t`.
    pub fn xi(&self) -> &Vector {
        &self.xi[0]
    }

    /// Consumes `y_t`, returns `u_t` and advances to `xi_t+1`.
    pub fn step(&mut self, r: &ControllerRealization, y: &Vector) -> Vector {
        assert_eq!(r.horizon, self.horizon, "hot swap requires equal horizons");
        self.y.push_front(y.clone());
        self.y.truncate(self.horizon + 1);

        let mut u = Vector::zeros(r.total_input_dim());
        for (n, xi) in self.xi.iter().enumerate().take(self.horizon) {
            u.gemv(1.0, &r.ux[n], xi, 1.0);
        }
        for (n, yk) in self.y.iter().enumerate() {
            u.gemv(1.0, &r.uy[n], yk, 1.0);
        }

        let mut next = Vector::zeros(r.state_dim());
        for (n, xi) in self.xi.iter().enumerate().take(self.horizon.saturating_sub(1)) {
            next.gemv(-1.0, &r.xx[n], xi, 1.0);
        }
        for (n, yk) in self.y.iter().enumerate().take(self.horizon) {
            next.gemv(-1.0, &r.xy[n], yk, 1.0);
        }
        self.xi.push_front(next);
        self.xi.truncate(self.horizon);
        u
    }
}
