//! Fixtures shared by the kernel benchmarks.

use finsler::{HamiltonianSystem, MetricModel, ModelConfig};
use nalgebra::DVector;

/// Catalog model with an added potential, so every curvature term is live.
pub fn system(catalog: &str, potential: &str) -> HamiltonianSystem {
    let model = ModelConfig::catalog(catalog)
        .and_then(|c| c.validated_model())
        .and_then(|m| m.with_potential(potential))
        .expect("catalog model");
    HamiltonianSystem::new(model)
}

/// Phase state `(x, p)` packed as one vector.
pub fn state(x: &[f64], p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + p.len(), x.iter().chain(p).copied())
}

/// Tangent vector at `x` for a covector `p`.
pub fn velocity(model: &MetricModel, x: &[f64], p: &[f64]) -> Vec<f64> {
    finsler::legendre_to_tangent(model, x, p)
        .expect("nonzero covector")
        .iter()
        .copied()
        .collect()
}
