//! Fixtures shared by the benchmarks.

use vgfne_core::feasible_set::{assemble, FeasibleSetSpec};
use vgfne_core::game_model::{grid_power_game, DynamicGameSpec, GridParams};
use vgfne_core::sls_core::KernelSeq;

/// The reduced grid with its feasible set.
pub fn reduced_grid() -> (DynamicGameSpec, FeasibleSetSpec) {
    let spec = grid_power_game(&GridParams::reduced()).expect("grid builds").spec;
    let set = assemble(&spec).expect("grid set assembles");
    (spec, set)
}

/// A deterministic dense point to project.
pub fn probe(spec: &DynamicGameSpec) -> KernelSeq {
    let n = spec.fir_horizon();
    let (rows, cols) = (spec.total_input_dim(), spec.response_cols());
    let len = (n + 1) * rows * cols;
    let v: Vec<f64> = (0..len).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
    KernelSeq::from_vector(n, rows, cols, &v)
}
