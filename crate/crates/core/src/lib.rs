//! Numerical Finsler geometry and natural mechanical systems.

pub mod config;
pub mod curvature;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod hyperbolicity;
pub mod jacobi;
pub mod jets;
pub mod linalg;
pub mod metric;
pub mod report;
pub mod tensor;

pub use config::{load_config, parse_config, ModelConfig};
pub use curvature::{curvature_map, riemann_tensor, CurvatureBundle, CurvatureMapMatrix, MapKind};
pub use dynamics::{flow, variational_flow, FlowOptions, HamiltonianSystem, Trajectory};
pub use error::{Error, ExprError, Result, SourceSpan};
pub use expr::{parse, ExprAst, Scalar, VarKind};
pub use hyperbolicity::{anosov_criterion, negativity_scan, sample_level_set, Convention, GridSpec, ScanReport};
pub use jacobi::{closed_form_vs_oracle, conjugate_points, normal_frame_propagate, RSource, SubspaceFrame};
pub use jets::{fd_partial, seed, Jet};
pub use metric::{
    cartan_tensor, chern_connection, fundamental_tensor, legendre_to_cotangent,
    legendre_to_tangent, validate_metric, MetricModel, PhaseState, TensorBundle, Topology,
    ValidationReport, ValidityBox,
};
pub use report::RunReport;
pub use tensor::{Tensor3, Tensor4};
