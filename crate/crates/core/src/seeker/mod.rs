//! Forward-backward equilibrium seeking.
//!
//! Each update takes a gradient step on every player's own cost and then
//! projects the stacked input kernels back onto the shared feasible set.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasible_set::{AdmmState, FeasibleSetSpec, ProjectionError};
use crate::game_model::DynamicGameSpec;
use crate::linalg::Vector;
use crate::sls_core::{
    monotonicity_constants, objective, reconstruct_policy, response_from_inputs, ControllerRealization,
    GradientCache, KernelSeq, MonotonicityConstants, SlsError, DEFAULT_HESSIAN_BUDGET,
};

#[derive(Debug, Error)]
pub enum SeekError {
    #[error("step size {eta:e} is outside the admissible interval (0, {bound:e})")]
    InadmissibleStep { eta: f64, bound: f64 },
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("projection failed at update {update}: {source}")]
    Projection {
        update: usize,
        #[source]
        source: ProjectionError,
        /// Last feasible iterate.
        last: Box<KernelSeq>,
    },
    #[error("iteration diverged at update {update}: relative step {rel_step:e}")]
    Diverged {
        update: usize,
        rel_step: f64,
        last: Box<KernelSeq>,
    },
    #[error(transparent)]
    Sls(#[from] SlsError),
    #[error("initial iterate has the wrong shape: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    /// `M / L^2` from the monotonicity constants.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeekerConfig {
    pub eta: StepSize,
    pub max_updates: usize,
    pub rel_stop_tol: f64,
    /// Invoke checkpoint handling every this many updates; 0 disables it.
    pub checkpoint_every: usize,
    /// Element budget for the dense operator behind the constants.
    pub hessian_budget: usize,
}

impl Default for SeekerConfig {
    fn default() -> Self {
        Self {
            eta: StepSize::Auto,
            max_updates: 10_000,
            rel_stop_tol: 1e-12,
            checkpoint_every: 0,
            hessian_budget: DEFAULT_HESSIAN_BUDGET,
        }
    }
}

fn check_constants(m: f64, l: f64) -> Result<(), SeekError> {
    if !(m > 0.0 && l >= m && l.is_finite()) {
        return Err(SeekError::InvalidConstants(format!(
            "need 0 < M <= L, got M = {m:e}, L = {l:e}"
        )));
    }
    Ok(())
}

/// Upper end `2M/L^2` of the admissible step interval.
pub fn step_bound(m: f64, l: f64) -> f64 {
    2.0 * m / (l * l)
}

/// Contraction factor `sqrt(1 - eta (2M - eta L^2))` of the iteration.
pub fn predicted_rate(eta: f64, m: f64, l: f64) -> Result<f64, SeekError> {
    check_constants(m, l)?;
    let bound = step_bound(m, l);
    if !(eta > 0.0 && eta < bound) {
        return Err(SeekError::InadmissibleStep { eta, bound });
    }
    Ok((1.0 - eta * (2.0 * m - eta * l * l)).max(0.0).sqrt())
}

/// Step sizes derived from a pair of constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepChoice {
    /// `M / L^2`.
    pub ratio: f64,
    /// `M / L`, kept for comparison with the literal quotient in the
    /// benchmark description.
    pub quotient: f64,
    pub bound: f64,
}

pub fn step_choice(m: f64, l: f64) -> Result<StepChoice, SeekError> {
    check_constants(m, l)?;
    Ok(StepChoice {
        ratio: m / (l * l),
        quotient: m / l,
        bound: step_bound(m, l),
    })
}

/// `M / L^2`, clipped to `0.99 * 2M/L^2` for user-supplied constants that
/// break `M <= L`.
pub fn eta_from_constants(m: f64, l: f64) -> Result<f64, SeekError> {
    if !(m > 0.0 && l > 0.0 && l.is_finite()) {
        return Err(SeekError::InvalidConstants(format!("M = {m:e}, L = {l:e}")));
    }
    let bound = step_bound(m, l);
    Ok((m / (l * l)).min(0.99 * bound))
}

pub fn auto_eta(spec: &DynamicGameSpec, budget: usize) -> Result<f64, SeekError> {
    let c = monotonicity_constants(spec, budget)?;
    eta_from_constants(c.m, c.l)
}

/// One forward-backward step of a static game.
///
/// `grads[p]` returns player `p`'s gradient of its own cost at the joint
/// point; the forward steps run in parallel and `proj` maps the stacked
/// result back onto the feasible set.
pub fn fb_step_static<G, P, E>(grads: &[G], proj: P, s: &[Vector], eta: f64) -> Result<Vec<Vector>, E>
where
    G: Fn(&[Vector]) -> Result<Vector, E> + Sync,
    P: FnOnce(Vec<Vector>) -> Result<Vec<Vector>, E>,
    E: Send,
{
    let forward = grads
        .par_iter()
        .zip(s.par_iter())
        .map(|(g, sp)| g(s).map(|d| sp - d * eta))
        .collect::<Result<Vec<_>, E>>()?;
    proj(forward)
}

/// Diagnostics for one seeker update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Index `k` of the iterate produced by this update, starting at 1.
    pub update: usize,
    pub rel_step: f64,
    pub objectives: Vec<f64>,
    pub affine_residual: f64,
    /// `None` without chance constraints.
    pub min_soc_slack: Option<f64>,
    pub admm_iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IterateLog {
    pub records: Vec<UpdateRecord>,
}

impl IterateLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn last(&self) -> Option<&UpdateRecord> {
        self.records.last()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// State passed to the per-update callback.
pub struct UpdateView<'a> {
    pub record: &'a UpdateRecord,
    pub phi_u: &'a KernelSeq,
    pub realization: &'a ControllerRealization,
    /// True on updates selected by `checkpoint_every`.
    pub checkpoint: bool,
}

#[derive(Debug, Clone)]
pub struct SeekOutcome {
    pub phi_u: KernelSeq,
    pub log: IterateLog,
    pub converged: bool,
    pub eta: f64,
    /// `None` when the dense operator exceeds the budget and a fixed step
    /// was supplied.
    pub constants: Option<MonotonicityConstants>,
}

const DIVERGENCE_WINDOW: usize = 100;
const DIVERGENCE_GROWTH: f64 = 10.0;

/// Iterator state of the forward-backward seeker.
pub struct Seeker<'a> {
    set: &'a FeasibleSetSpec,
    cache: GradientCache,
    eta: f64,
    constants: Option<MonotonicityConstants>,
    current: KernelSeq,
    admm: AdmmState,
    update: usize,
    steps: Vec<f64>,
}

impl<'a> Seeker<'a> {
    /// Resolves the step size and projects `init` (zero when absent).
    pub fn new(set: &'a FeasibleSetSpec, config: SeekerConfig, init: Option<KernelSeq>) -> Result<Self, SeekError> {
        let spec = set.spec();
        let constants = match (config.eta, monotonicity_constants(spec, config.hessian_budget)) {
            (_, Ok(c)) => Some(c),
            (StepSize::Auto, Err(e)) => return Err(e.into()),
            (StepSize::Fixed(_), Err(SlsError::SizeGuard { .. })) => None,
            (StepSize::Fixed(_), Err(e)) => return Err(e.into()),
        };
        let eta = match config.eta {
            StepSize::Auto => {
                let c = constants.as_ref().expect("constants resolved for auto step");
                eta_from_constants(c.m, c.l)?
            }
            StepSize::Fixed(eta) => {
                let bound = constants.map_or(f64::INFINITY, |c| step_bound(c.m, c.l));
                if !(eta > 0.0 && eta < bound) {
                    return Err(SeekError::InadmissibleStep { eta, bound });
                }
                eta
            }
        };
        let shape = (spec.fir_horizon(), spec.total_input_dim(), spec.response_cols());
        let init = init.unwrap_or_else(|| KernelSeq::zeros(shape.0, shape.1, shape.2));
        if (init.horizon(), init.rows(), init.cols()) != shape {
            return Err(SeekError::Shape(format!("expected (N, rows, cols) = {shape:?}")));
        }
        let mut admm = AdmmState::cold(0, set.admm_config().rho);
        let current = set
            .project_warm(&init, Some(&mut admm))
            .map_err(|source| SeekError::Projection {
                update: 0,
                source,
                last: Box::new(init.clone()),
            })?
            .phi_u;
        Ok(Self {
            set,
            cache: GradientCache::new(spec),
            eta,
            constants,
            current,
            admm,
            update: 0,
            steps: Vec::new(),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn constants(&self) -> Option<&MonotonicityConstants> {
        self.constants.as_ref()
    }
    pub fn current(&self) -> &KernelSeq {
        &self.current
    }
    pub fn updates(&self) -> usize {
        self.update
    }

    /// Forward step followed by the coordinator projection.
    pub fn map(&self, phi_u: &KernelSeq, warm: Option<&mut AdmmState>) -> Result<KernelSeq, ProjectionError> {
        let spec = self.set.spec();
        let mut forward = phi_u.clone();
        forward.axpy(-self.eta, &self.cache.operator(spec, phi_u));
        Ok(self.set.project_warm(&forward, warm)?.phi_u)
    }

    pub fn step(&mut self) -> Result<UpdateRecord, SeekError> {
        let start = Instant::now();
        let spec = self.set.spec();
        let mut forward = self.current.clone();
        forward.axpy(-self.eta, &self.cache.operator(spec, &self.current));
        let proj = self
            .set
            .project_warm(&forward, Some(&mut self.admm))
            .map_err(|source| SeekError::Projection {
                update: self.update + 1,
                source,
                last: Box::new(self.current.clone()),
            })?;
        let diff = proj.phi_u.sub(&self.current).norm();
        let base = self.current.norm();
        let rel_step = if base > 0.0 { diff / base } else { diff };
        self.current = proj.phi_u;
        self.update += 1;
        self.steps.push(rel_step);

        let r = response_from_inputs(spec, self.current.clone());
        let report = self.set.feasibility_report(&r);
        let record = UpdateRecord {
            update: self.update,
            rel_step,
            objectives: (0..spec.num_players()).map(|p| objective(spec, &r, p)).collect(),
            affine_residual: report.max_affine_residual(),
            min_soc_slack: (!report.soc.is_empty()).then(|| report.min_soc_slack()),
            admm_iterations: proj.stats.iterations,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if self.diverging() {
            return Err(SeekError::Diverged {
                update: self.update,
                rel_step,
                last: Box::new(self.current.clone()),
            });
        }
        Ok(record)
    }

    /// Relative steps that grew monotonically by 10x over the last window.
    fn diverging(&self) -> bool {
        let k = self.steps.len();
        if k <= DIVERGENCE_WINDOW {
            return false;
        }
        let w = &self.steps[k - DIVERGENCE_WINDOW - 1..];
        w.windows(2).all(|p| p[1] >= p[0]) && w[DIVERGENCE_WINDOW] > DIVERGENCE_GROWTH * w[0]
    }

    pub fn into_current(self) -> KernelSeq {
        self.current
    }
}

/// Runs forward-backward updates until the relative step falls below the
/// tolerance or the update budget runs out.
pub fn seek(
    set: &FeasibleSetSpec,
    config: &SeekerConfig,
    init: Option<KernelSeq>,
    mut on_update: Option<&mut dyn FnMut(&UpdateView)>,
) -> Result<SeekOutcome, SeekError> {
    let mut seeker = Seeker::new(set, config.clone(), init)?;
    let mut log = IterateLog::default();
    let mut converged = false;
    while seeker.updates() < config.max_updates {
        let record = seeker.step()?;
        converged = record.rel_step <= config.rel_stop_tol;
        if let Some(cb) = on_update.as_deref_mut() {
            let response = response_from_inputs(set.spec(), seeker.current().clone());
            let realization = reconstruct_policy(&response)?;
            let checkpoint = config.checkpoint_every > 0 && record.update % config.checkpoint_every == 0;
            cb(&UpdateView {
                record: &record,
                phi_u: seeker.current(),
                realization: &realization,
                checkpoint,
            });
        }
        log.records.push(record);
        if converged {
            break;
        }
    }
    Ok(SeekOutcome {
        eta: seeker.eta(),
        constants: seeker.constants().copied(),
        phi_u: seeker.into_current(),
        log,
        converged,
    })
}

#[cfg(test)]
mod tests;
