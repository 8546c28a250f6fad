use std::collections::VecDeque;
use std::path::Path;

use serde_json::{json, Value};
use vgfne_core::feasible_set::{assemble_with, AdmmConfig, AssembleOptions, FeasibleSetSpec};
use vgfne_core::game_model::{grid_power_game, DynamicGameSpec, GridGame, GridParams};
use vgfne_core::seeker::{
    predicted_rate, seek as run_seek, step_bound, IterateLog, SeekError, SeekOutcome, SeekerConfig, StepSize,
    UpdateView,
};
use vgfne_core::simulator::{
    impulse_response, run_with_live_seeking, simulate as run_simulation, summarize, NoiseModel, SimTrace,
    Simulation,
};
use vgfne_core::sls_core::{reconstruct_policy, response_from_inputs, MonotonicityConstants, SystemResponse};

use crate::error::CliError;
use crate::io::{read_response, read_spec, response_json, Outputs};
use crate::{BenchGridArgs, GridArgs, GridShape, ImpulseArgs, SeekArgs, SeekFlags, SimulateArgs};

/// Control inputs below this magnitude count as silent.
const REACTION_TOL: f64 = 1e-12;

fn grid_params(s: &GridShape) -> GridParams {
    GridParams {
        rows: s.rows,
        cols: s.cols,
        seed: s.seed,
        fir_horizon: s.horizon,
        chance_level: s.rho,
        actuation_delay: s.actuation_delay,
        communication_delay: s.communication_delay,
        ..GridParams::default()
    }
}

fn seeker_config(f: &SeekFlags) -> Result<SeekerConfig, CliError> {
    if f.tol.is_nan() || f.tol <= 0.0 {
        return Err(CliError::Invalid(format!("--tol must be positive, got {}", f.tol)));
    }
    if let Some(eta) = f.eta {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(CliError::Invalid(format!("--eta must be positive, got {eta}")));
        }
    }
    Ok(SeekerConfig {
        eta: f.eta.map_or(StepSize::Auto, StepSize::Fixed),
        max_updates: f.max_updates,
        rel_stop_tol: f.tol,
        checkpoint_every: f.checkpoint_every,
        ..SeekerConfig::default()
    })
}

fn assemble_options(f: &SeekFlags) -> Result<AssembleOptions, CliError> {
    if !(f.admm_rho > 0.0 && f.admm_tol > 0.0) {
        return Err(CliError::Invalid("--admm-rho and --admm-tol must be positive".into()));
    }
    Ok(AssembleOptions {
        admm: AdmmConfig {
            rho: f.admm_rho,
            tolerance: f.admm_tol,
            ..AdmmConfig::default()
        },
        ..AssembleOptions::default()
    })
}

fn require_valid(spec: &DynamicGameSpec) -> Result<(), CliError> {
    let report = spec.validate();
    if report.all_passed() {
        return Ok(());
    }
    let failed: Vec<String> = report.failures().map(|c| format!("{} ({})", c.name, c.detail)).collect();
    Err(CliError::Invalid(format!("spec fails validation: {}", failed.join("; "))))
}

fn constants_report(
    config: &Value,
    eta: f64,
    constants: Option<&MonotonicityConstants>,
    log: &IterateLog,
    converged: bool,
) -> Value {
    let (bound, rate) = match constants {
        Some(c) => (Some(step_bound(c.m, c.l)), predicted_rate(eta, c.m, c.l).ok()),
        None => (None, None),
    };
    json!({
        "config": config,
        "eta": eta,
        "m": constants.map(|c| c.m),
        "l": constants.map(|c| c.l),
        "m_over_l": constants.map(|c| c.m / c.l),
        "step_bound": bound,
        "predicted_rate": rate,
        "constants": constants,
        "updates": log.len(),
        "converged": converged,
        "final_rel_step": log.last().map(|r| r.rel_step),
    })
}

fn objectives_table(log: &IterateLog, players: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["update".to_string()];
    header.extend((0..players).map(|p| format!("J{p}")));
    header.push("rel_step".into());
    let rows = log
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.update.to_string()];
            row.extend(r.objectives.iter().map(|j| j.to_string()));
            row.push(r.rel_step.to_string());
            row
        })
        .collect();
    (header, rows)
}

fn write_log(out: &Outputs, log: &IterateLog, players: usize) -> Result<(), CliError> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).expect("writing to memory");
    out.text("iterates.jsonl", &String::from_utf8(buf).expect("JSONL is UTF-8"))?;
    let (header, rows) = objectives_table(log, players);
    out.csv("objectives.csv", &header, &rows)
}

pub fn grid(a: &GridArgs) -> Result<(), CliError> {
    let params = grid_params(&a.shape);
    let game = grid_power_game(&params)?;
    let mut doc: Value = serde_json::from_str(&game.spec.to_json()).expect("spec JSON parses");
    doc["config"] = json!({ "command": "grid", "grid": params });
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&doc).expect("spec serializes") + "\n";
    std::fs::write(&a.out, text).map_err(|e| CliError::io(&a.out, e))?;
    println!(
        "wrote {}: {} nodes, {} lines, N_x = {}, N = {}",
        a.out.display(),
        game.node_count(),
        game.edges.len(),
        game.spec.state_dim(),
        params.fir_horizon
    );
    Ok(())
}

pub fn validate(path: &Path) -> Result<(), CliError> {
    let spec = read_spec(path)?;
    let report = spec.validate();
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    for c in report.failures() {
        eprintln!("failed check {}: {}", c.name, c.detail);
    }
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Invalid(format!("validation failed: {}", names.join(", "))))
    }
}

fn seek_diagnostics(out: &Outputs, spec: &DynamicGameSpec, config: &Value, err: &SeekError) -> Result<(), CliError> {
    let (update, last) = match err {
        SeekError::Projection { update, last, .. } | SeekError::Diverged { update, last, .. } => {
            (Some(*update), Some(last))
        }
        _ => (None, None),
    };
    out.json(
        "diagnostics.json",
        &json!({ "config": config, "error": err.to_string(), "update": update }),
    )?;
    if let Some(last) = last {
        let r = response_from_inputs(spec, (**last).clone());
        out.text("last_response.json", &response_json(&r, config))?;
    }
    Ok(())
}

pub fn seek(a: &SeekArgs) -> Result<(), CliError> {
    let mut spec = read_spec(&a.spec)?;
    if let Some(n) = a.horizon {
        spec = spec.with_horizon(n)?;
    }
    if let Some(rho) = a.rho {
        spec = spec.with_chance_level(rho)?;
    }
    require_valid(&spec)?;
    let cfg = seeker_config(&a.flags)?;
    let options = assemble_options(&a.flags)?;
    let out = Outputs::create(&a.out, &[&a.spec])?;
    let config = json!({
        "command": "seek",
        "spec": a.spec,
        "fir_horizon": spec.fir_horizon(),
        "chance_level": spec.chance_level(),
        "seeker": cfg,
        "assemble": options,
    });
    let set = assemble_with(&spec, &options)?;

    let checkpoints = if cfg.checkpoint_every > 0 { Some(out.subdir("checkpoints")?) } else { None };
    let mut checkpoint_err = None;
    let mut on_update = |v: &UpdateView| {
        if let (true, Some(dir), None) = (v.checkpoint, &checkpoints, &checkpoint_err) {
            let r = response_from_inputs(&spec, v.phi_u.clone());
            if let Err(e) = dir.text(&format!("update_{:06}.json", v.record.update), &response_json(&r, &config)) {
                checkpoint_err = Some(e);
            }
        }
    };
    let outcome = match run_seek(&set, &cfg, None, Some(&mut on_update)) {
        Ok(o) => o,
        Err(e) => {
            seek_diagnostics(&out, &spec, &config, &e)?;
            return Err(e.into());
        }
    };
    if let Some(e) = checkpoint_err {
        return Err(e);
    }
    write_seek_outcome(&out, &set, &config, &outcome)?;
    println!(
        "{} after {} updates (eta = {:.4e}, last relative step {:.3e})",
        if outcome.converged { "converged" } else { "stopped" },
        outcome.log.len(),
        outcome.eta,
        outcome.log.last().map_or(0.0, |r| r.rel_step)
    );
    Ok(())
}

fn write_seek_outcome(out: &Outputs, set: &FeasibleSetSpec, config: &Value, o: &SeekOutcome) -> Result<(), CliError> {
    let spec = set.spec();
    let r = set.response(o.phi_u.clone());
    out.text("response.json", &response_json(&r, config))?;
    write_log(out, &o.log, spec.num_players())?;
    out.json(
        "constants.json",
        &constants_report(config, o.eta, o.constants.as_ref(), &o.log, o.converged),
    )
}

fn noise_model(zero: bool, seed: u64) -> NoiseModel {
    if zero {
        NoiseModel::Zero
    } else {
        NoiseModel::GaussianWhite { seed }
    }
}

fn open_loop(spec: &DynamicGameSpec, noise: NoiseModel, steps: usize) -> Result<SimTrace, CliError> {
    let mut sim = Simulation::open_loop(spec, noise)?;
    sim.run(steps)?;
    Ok(sim.into_trace())
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec = read_spec(&a.spec)?;
    let response = read_response(&spec, &a.response)?;
    let policy = reconstruct_policy(&response)?;
    let out = Outputs::create(&a.out, &[&a.spec, &a.response])?;
    let noise = noise_model(a.zero_noise, a.seed);
    let config = json!({
        "command": "simulate",
        "spec": a.spec,
        "response": a.response,
        "steps": a.steps,
        "noise": noise,
    });
    let closed = run_simulation(&spec, &policy, noise.clone(), a.steps, None)?;
    let open = open_loop(&spec, noise, a.steps)?;
    out.trace("closed_loop.csv", &closed)?;
    out.trace("open_loop.csv", &open)?;
    let (cs, os) = (summarize(&spec, &closed), summarize(&spec, &open));
    println!(
        "joint constraint satisfaction: closed {:.4}, open {:.4}",
        cs.constraints.joint, os.constraints.joint
    );
    out.json("stats.json", &json!({ "config": config, "closed_loop": cs, "open_loop": os }))
}

/// Fewest steps of `A` from the states a noise channel enters to the states
/// a player actuates, or `None` when the channel never reaches them.
fn state_distance(spec: &DynamicGameSpec, channel: usize, player: usize) -> Option<usize> {
    let nx = spec.state_dim();
    let (a, bw, bu) = (spec.a(), spec.b_w(), spec.b_u(player));
    let mut dist = vec![usize::MAX; nx];
    let mut queue: VecDeque<usize> = (0..nx).filter(|&i| bw[(i, channel)] != 0.0).collect();
    for &i in &queue {
        dist[i] = 0;
    }
    while let Some(k) = queue.pop_front() {
        for i in 0..nx {
            if a[(i, k)] != 0.0 && dist[i] == usize::MAX {
                dist[i] = dist[k] + 1;
                queue.push_back(i);
            }
        }
    }
    (0..nx)
        .filter(|&i| bu.row(i).iter().any(|v| *v != 0.0))
        .map(|i| dist[i])
        .filter(|&d| d != usize::MAX)
        .min()
}

/// First step at which any input of `player` is nonzero.
fn first_reaction(spec: &DynamicGameSpec, trace: &SimTrace, player: usize) -> Option<usize> {
    let (off, m) = (spec.input_offset(player), spec.input_dim(player));
    trace.u.iter().position(|u| u.rows(off, m).amax() > REACTION_TOL)
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn impulse(a: &ImpulseArgs) -> Result<(), CliError> {
    let spec = read_spec(&a.spec)?;
    let response = read_response(&spec, &a.response)?;
    let policy = reconstruct_policy(&response)?;
    let out = Outputs::create(&a.out, &[&a.spec, &a.response])?;
    let nw = spec.noise_dim();
    let channels: Vec<usize> = if a.channels.is_empty() { (0..nw).collect() } else { a.channels.clone() };
    if let Some(&c) = channels.iter().find(|&&c| c >= nw) {
        return Err(CliError::Invalid(format!("channel {c} out of range, spec has {nw} noise channels")));
    }
    let steps = a.steps.unwrap_or(spec.fir_horizon() + 10);
    let config = json!({
        "command": "impulse",
        "spec": a.spec,
        "response": a.response,
        "channels": channels,
        "steps": steps,
    });
    let mut rows = Vec::new();
    for &ch in &channels {
        let trace = impulse_response(&spec, &policy, ch, steps)?;
        out.trace(&format!("impulse_ch{ch}.csv"), &trace)?;
        for p in 0..spec.num_players() {
            rows.push(vec![
                ch.to_string(),
                p.to_string(),
                opt(state_distance(&spec, ch, p)),
                opt(first_reaction(&spec, &trace, p)),
            ]);
        }
    }
    let header = ["channel", "player", "state_distance", "first_input"].map(String::from);
    out.csv("delays.csv", &header, &rows)?;
    out.json("impulse.json", &json!({ "config": config }))?;
    println!("wrote {} impulse traces to {}", channels.len(), a.out.display());
    Ok(())
}

/// First step at which node `p` measures anything.
fn first_measurement(trace: &SimTrace, p: usize) -> Option<usize> {
    trace.y.iter().position(|y| y[p].abs() > REACTION_TOL)
}

fn grid_delay_table(game: &GridGame, trace: &SimTrace, source: usize) -> Vec<Vec<String>> {
    (0..game.node_count())
        .map(|p| {
            vec![
                p.to_string(),
                game.hops(source, p).to_string(),
                opt(first_measurement(trace, p)),
                opt(first_reaction(&game.spec, trace, p)),
            ]
        })
        .collect()
}

pub fn bench_grid(a: &BenchGridArgs) -> Result<(), CliError> {
    if a.delta_k == 0 {
        return Err(CliError::Invalid("--delta-k must be at least 1".into()));
    }
    let params = grid_params(&a.shape);
    let game = grid_power_game(&params)?;
    let spec = &game.spec;
    require_valid(spec)?;
    let cfg = seeker_config(&a.flags)?;
    let options = assemble_options(&a.flags)?;
    let out = Outputs::create(&a.out, &[])?;
    let noise = NoiseModel::GaussianWhite { seed: a.noise_seed };
    let config = json!({
        "command": "bench-grid",
        "grid": params,
        "steps": a.steps,
        "delta_k": a.delta_k,
        "noise": noise,
        "seeker": cfg,
        "assemble": options,
    });
    let mut spec_doc: Value = serde_json::from_str(&spec.to_json()).expect("spec JSON parses");
    spec_doc["config"] = config.clone();
    out.json("spec.json", &spec_doc)?;

    let set = assemble_with(spec, &options)?;
    let live = run_with_live_seeking(&set, &cfg, noise.clone(), a.steps, a.delta_k)?;
    let open = open_loop(spec, noise, a.steps)?;
    out.trace("closed_loop.csv", &live.trace)?;
    out.trace("open_loop.csv", &open)?;
    write_log(&out, &live.log, spec.num_players())?;
    let response: SystemResponse = set.response(live.phi_u.clone());
    out.text("response.json", &response_json(&response, &config))?;

    let center = game.node_index(params.rows / 2, params.cols / 2);
    let channel = GridGame::phase_index(center);
    let policy = reconstruct_policy(&response)?;
    let imp = impulse_response(spec, &policy, channel, spec.fir_horizon() + 10)?;
    out.trace("impulse_center.csv", &imp)?;
    let header = ["node", "hops", "first_measurement", "first_input"].map(String::from);
    out.csv("delays.csv", &header, &grid_delay_table(&game, &imp, center))?;

    let converged = live.log.last().is_some_and(|r| r.rel_step <= cfg.rel_stop_tol);
    let (cs, os) = (summarize(spec, &live.trace), summarize(spec, &open));
    out.json(
        "constants.json",
        &constants_report(&config, live.eta, live.constants.as_ref(), &live.log, converged),
    )?;
    out.json(
        "stats.json",
        &json!({
            "config": config,
            "joint_satisfaction": { "closed_loop": cs.constraints.joint, "open_loop": os.constraints.joint },
            "closed_loop": cs,
            "open_loop": os,
            "updates": live.log.len(),
            "impulse_channel": channel,
        }),
    )?;
    println!(
        "{} updates; joint bus-limit satisfaction closed {:.4}, open {:.4}",
        live.log.len(),
        cs.constraints.joint,
        os.constraints.joint
    );
    Ok(())
}
