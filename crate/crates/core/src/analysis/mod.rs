//! Network transform, energy operators, and the theoretical bound engine.

mod bundle;
mod envelopes;
mod operators;
mod properties;
mod transform;

pub use bundle::{
    gamma_c, gamma_e, h_c, reference_step_bound, theory_bundle, TheoryBundle, TheoryInputs,
    DEFAULT_RATE_EPSILON,
};
pub use envelopes::{agent_band, bound_envelopes, envelope_floors, resolvent_transient, Envelopes};
pub use operators::{energy, kron_norm_matrix, norm_matrix, EnergyVector, NormMatrix};
pub use properties::{
    operator_property_suite, Fault, PropertyReport, PropertyResult, SuiteOptions,
    DEFAULT_INSTANCES, PROPERTIES, PROPERTY_TOLERANCE,
};
pub use transform::{error_components, inverse_transform, transform, ErrorComponents, Transformed};
