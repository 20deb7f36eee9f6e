//! Topologies, combination policies, and the spectral split of `A = A1 A0 A2`.

mod policy;
mod spectral;
mod topology;

pub use policy::{
    check_left_stochastic, check_primitive, compose, make_policy, validate_policy, weight_vectors,
    CombinationMatrices, PolicyRule, Primitivity, StepSizeProfile, STOCHASTIC_TOL,
};
pub use spectral::{perron_vector, spectral_split, SpectralSplit};
pub use topology::{build_topology, Topology, TopologyKind};

use nalgebra::DMatrix;

/// Writes a matrix as row-major CSV with round-trip precision.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
