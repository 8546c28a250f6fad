//! Seeded closed-loop simulation under output-feedback policies.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasible_set::FeasibleSetSpec;
use crate::game_model::DynamicGameSpec;
use crate::linalg::{Matrix, Vector};
use crate::rng::{SplitRng, Stream};
use crate::seeker::{IterateLog, SeekError, Seeker, SeekerConfig};
use crate::sls_core::{
    reconstruct_policy, ControllerMemory, ControllerRealization, KernelSeq, MonotonicityConstants, SlsError,
};

/// State magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state diverged at t = {time} (max |x| = {magnitude:e})")]
    Diverged { time: usize, magnitude: f64 },
    #[error(transparent)]
    Seek(#[from] SeekError),
    #[error(transparent)]
    Sls(#[from] SlsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseModel {
    /// Unit-variance white noise on every channel. Channels that enter the
    /// state draw from the process stream, pure measurement channels from
    /// the measurement stream.
    GaussianWhite { seed: u64 },
    /// A unit pulse on one channel at one time.
    Impulse { channel: usize, time: usize },
    Zero,
    /// Explicit samples; steps past the end are zero.
    Sequence { samples: Vec<Vec<f64>> },
}

struct NoiseSource {
    model: NoiseModel,
    process: SplitRng,
    measurement: SplitRng,
    is_process: Vec<bool>,
}

impl NoiseSource {
    fn new(spec: &DynamicGameSpec, model: NoiseModel) -> Result<Self, SimError> {
        let nw = spec.noise_dim();
        match &model {
            NoiseModel::Impulse { channel, .. } if *channel >= nw => {
                return Err(SimError::Shape(format!("impulse channel {channel} >= N_w = {nw}")))
            }
            NoiseModel::Sequence { samples } if samples.iter().any(|s| s.len() != nw) => {
                return Err(SimError::Shape(format!("noise samples must have length {nw}")))
            }
            _ => {}
        }
        let seed = match model {
            NoiseModel::GaussianWhite { seed } => seed,
            _ => 0,
        };
        let b_w = spec.b_w();
        Ok(Self {
            model,
            process: SplitRng::new(seed, Stream::ProcessNoise),
            measurement: SplitRng::new(seed, Stream::MeasurementNoise),
            is_process: (0..nw).map(|j| b_w.column(j).amax() > 0.0).collect(),
        })
    }

    fn sample(&mut self, t: usize) -> Vector {
        let nw = self.is_process.len();
        match &self.model {
            NoiseModel::GaussianWhite { .. } => Vector::from_fn(nw, |j, _| {
                if self.is_process[j] {
                    self.process.normal()
                } else {
                    self.measurement.normal()
                }
            }),
            NoiseModel::Impulse { channel, time } => {
                let mut w = Vector::zeros(nw);
                if t == *time {
                    w[*channel] = 1.0;
                }
                w
            }
            NoiseModel::Zero => Vector::zeros(nw),
            NoiseModel::Sequence { samples } => samples
                .get(t)
                .map_or_else(|| Vector::zeros(nw), |s| Vector::from_column_slice(s)),
        }
    }
}

/// Per-step signals of one run. Entry `t` holds the values at time `t`,
/// with `x_0 = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub x: Vec<Vector>,
    pub y: Vec<Vector>,
    pub u: Vec<Vector>,
    pub w: Vec<Vector>,
    /// Controller internal state before the update at `t`.
    pub xi: Vec<Vector>,
    /// Constraint rows: `[G_x G_u]` rows, then each player's own rows.
    pub constraints: Vec<Vector>,
    /// Times at which a new policy took effect.
    pub swaps: Vec<usize>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        let dims = |v: &[Vector]| v.first().map_or(0, |e| e.len());
        let mut header = vec!["t".to_string()];
        for (name, sig) in self.signals() {
            header.extend((0..dims(sig)).map(|i| format!("{name}{i}")));
        }
        header.push("swap".into());
        out.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            for (_, sig) in self.signals() {
                rec.extend(sig[t].iter().map(|v| format!("{v:e}")));
            }
            rec.push(u8::from(self.swaps.contains(&t)).to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    fn signals(&self) -> [(&'static str, &[Vector]); 6] {
        [
            ("x", &self.x),
            ("y", &self.y),
            ("u", &self.u),
            ("w", &self.w),
            ("xi", &self.xi),
            ("g", &self.constraints),
        ]
    }

    /// First time at which component `i` of `u` is nonzero.
    pub fn first_input(&self, i: usize) -> Option<usize> {
        self.u.iter().position(|u| u[i] != 0.0)
    }
}

/// Stacked constraint rows as `[G_x G_u]` acting on `[x; u]`.
pub fn constraint_matrix(spec: &DynamicGameSpec) -> Matrix {
    let nx = spec.state_dim();
    let nu = spec.total_input_dim();
    let global = spec.g_x().nrows();
    let own: usize = (0..spec.num_players()).map(|p| spec.g_up(p).nrows()).sum();
    let mut g = Matrix::zeros(global + own, nx + nu);
    g.view_mut((0, 0), (global, nx)).copy_from(spec.g_x());
    g.view_mut((0, nx), (global, nu)).copy_from(spec.g_u());
    let mut r = global;
    for p in 0..spec.num_players() {
        let gp = spec.g_up(p);
        g.view_mut((r, nx + spec.input_offset(p)), gp.shape()).copy_from(gp);
        r += gp.nrows();
    }
    g
}

/// A running simulation; the policy can be replaced between steps.
pub struct Simulation<'a> {
    spec: &'a DynamicGameSpec,
    policy: ControllerRealization,
    memory: ControllerMemory,
    noise: NoiseSource,
    g: Matrix,
    x: Vector,
    t: usize,
    trace: SimTrace,
}

fn check_shapes(spec: &DynamicGameSpec, k: &ControllerRealization) -> Result<(), SimError> {
    if k.state_dim() != spec.state_dim()
        || k.output_dim() != spec.output_dim()
        || k.input_dims() != spec.input_dims()
    {
        return Err(SimError::Shape("controller does not match the spec".into()));
    }
    Ok(())
}

impl<'a> Simulation<'a> {
    pub fn new(spec: &'a DynamicGameSpec, policy: ControllerRealization, noise: NoiseModel) -> Result<Self, SimError> {
        check_shapes(spec, &policy)?;
        Ok(Self {
            memory: ControllerMemory::new(&policy),
            noise: NoiseSource::new(spec, noise)?,
            g: constraint_matrix(spec),
            x: Vector::zeros(spec.state_dim()),
            t: 0,
            trace: SimTrace::default(),
            spec,
            policy,
        })
    }

    /// Open loop, `u_t = 0`.
    pub fn open_loop(spec: &'a DynamicGameSpec, noise: NoiseModel) -> Result<Self, SimError> {
        let zero = ControllerRealization::zero(
            spec.fir_horizon(),
            spec.state_dim(),
            spec.output_dim(),
            spec.input_dims(),
        );
        Self::new(spec, zero, noise)
    }

    pub fn time(&self) -> usize {
        self.t
    }
    pub fn memory(&self) -> &ControllerMemory {
        &self.memory
    }

    /// Replaces the policy from the next step on, keeping the controller's
    /// internal-state and measurement history.
    pub fn swap(&mut self, policy: ControllerRealization) -> Result<(), SimError> {
        check_shapes(self.spec, &policy)?;
        if policy.horizon() != self.policy.horizon() {
            return Err(SimError::Shape("hot swap requires equal horizons".into()));
        }
        self.policy = policy;
        self.trace.swaps.push(self.t);
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let spec = self.spec;
        let w = self.noise.sample(self.t);
        let y = spec.c() * &self.x + spec.d_w() * &w;
        let xi = self.memory.xi().clone();
        let u = self.memory.step(&self.policy, &y);
        let mut xu = Vector::zeros(self.x.len() + u.len());
        xu.rows_mut(0, self.x.len()).copy_from(&self.x);
        xu.rows_mut(self.x.len(), u.len()).copy_from(&u);
        let next = spec.a() * &self.x + spec.b_u_stacked() * &u + spec.b_w() * &w;

        self.trace.constraints.push(&self.g * xu);
        self.trace.x.push(std::mem::replace(&mut self.x, next));
        self.trace.y.push(y);
        self.trace.u.push(u);
        self.trace.w.push(w);
        self.trace.xi.push(xi);
        self.t += 1;

        let magnitude = self.x.amax();
        if !magnitude.is_finite() || magnitude > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged { time: self.t, magnitude });
        }
        Ok(())
    }

    pub fn run(&mut self, steps: usize) -> Result<(), SimError> {
        (0..steps).try_for_each(|_| self.step())
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }
    pub fn into_trace(self) -> SimTrace {
        self.trace
    }
}

/// Policies to switch to every `delta_k` steps; `policies[i]` takes over
/// at `t = (i + 1) * delta_k`.
#[derive(Debug, Clone)]
pub struct SwapSchedule {
    pub delta_k: usize,
    pub policies: Vec<ControllerRealization>,
}

pub fn simulate(
    spec: &DynamicGameSpec,
    realization: &ControllerRealization,
    noise: NoiseModel,
    steps: usize,
    schedule: Option<&SwapSchedule>,
) -> Result<SimTrace, SimError> {
    let mut sim = Simulation::new(spec, realization.clone(), noise)?;
    if let Some(s) = schedule {
        assert!(s.delta_k >= 1, "swap interval must be positive");
    }
    for t in 0..steps {
        if let Some(s) = schedule {
            if t > 0 && t % s.delta_k == 0 {
                if let Some(k) = s.policies.get(t / s.delta_k - 1) {
                    sim.swap(k.clone())?;
                }
            }
        }
        sim.step()?;
    }
    Ok(sim.into_trace())
}

/// Unit impulse on `channel` at `t = 0`.
pub fn impulse_response(
    spec: &DynamicGameSpec,
    realization: &ControllerRealization,
    channel: usize,
    steps: usize,
) -> Result<SimTrace, SimError> {
    simulate(spec, realization, NoiseModel::Impulse { channel, time: 0 }, steps, None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintStats {
    pub steps: usize,
    /// Fraction of steps at which every row is at most one.
    pub joint: f64,
    pub per_row: Vec<f64>,
}

pub fn constraint_stats(trace: &SimTrace) -> ConstraintStats {
    let steps = trace.constraints.len();
    let rows = trace.constraints.first().map_or(0, |g| g.len());
    if steps == 0 {
        return ConstraintStats { steps, joint: 1.0, per_row: vec![1.0; rows] };
    }
    let mut per_row = vec![0usize; rows];
    let mut joint = 0usize;
    for g in &trace.constraints {
        let mut all = true;
        for (i, v) in g.iter().enumerate() {
            if *v <= 1.0 {
                per_row[i] += 1;
            } else {
                all = false;
            }
        }
        joint += usize::from(all);
    }
    let frac = |c: usize| c as f64 / steps as f64;
    ConstraintStats {
        steps,
        joint: frac(joint),
        per_row: per_row.into_iter().map(frac).collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub constraints: ConstraintStats,
    /// `sum_t ||W_x^p x_t + W_u^p u_t^p||^2` per player.
    pub cost_energy: Vec<f64>,
    pub swaps: Vec<usize>,
}

pub fn summarize(spec: &DynamicGameSpec, trace: &SimTrace) -> SimSummary {
    let cost_energy = (0..spec.num_players())
        .map(|p| {
            let off = spec.input_offset(p);
            let m = spec.input_dim(p);
            trace
                .x
                .iter()
                .zip(&trace.u)
                .map(|(x, u)| (spec.w_x(p) * x + spec.w_u(p) * u.rows(off, m)).norm_squared())
                .sum()
        })
        .collect();
    SimSummary {
        constraints: constraint_stats(trace),
        cost_energy,
        swaps: trace.swaps.clone(),
    }
}

/// Result of [`run_with_live_seeking`].
#[derive(Debug, Clone)]
pub struct LiveRun {
    pub trace: SimTrace,
    pub log: IterateLog,
    /// Input kernels of the last policy swapped in.
    pub phi_u: KernelSeq,
    pub eta: f64,
    pub constants: Option<MonotonicityConstants>,
}

/// Simulates while seeking: every `delta_k` steps one seeker update runs
/// and the resulting policy is swapped in.
pub fn run_with_live_seeking(
    set: &FeasibleSetSpec,
    config: &SeekerConfig,
    noise: NoiseModel,
    steps: usize,
    delta_k: usize,
) -> Result<LiveRun, SimError> {
    assert!(delta_k >= 1, "swap interval must be positive");
    let spec = set.spec();
    let mut seeker = Seeker::new(set, config.clone(), None)?;
    let policy = reconstruct_policy(&set.response(seeker.current().clone()))?;
    let mut sim = Simulation::new(spec, policy, noise)?;
    let mut log = IterateLog::default();
    let mut done = false;
    for t in 0..steps {
        if t > 0 && t % delta_k == 0 && !done && seeker.updates() < config.max_updates {
            let record = seeker.step()?;
            done = record.rel_step <= config.rel_stop_tol;
            log.records.push(record);
            sim.swap(reconstruct_policy(&set.response(seeker.current().clone()))?)?;
        }
        sim.step()?;
    }
    Ok(LiveRun {
        trace: sim.into_trace(),
        log,
        eta: seeker.eta(),
        constants: seeker.constants().copied(),
        phi_u: seeker.into_current(),
    })
}
