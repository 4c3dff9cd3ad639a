use thiserror::Error;

use crate::distance::WitnessPair;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("semi-axis lengths must be finite and positive, got {0:?}")]
    InvalidScale([f64; 3]),
    #[error("shape exponent {0} outside the convex range [{min}, 2]", min = crate::superquadric::MIN_EXPONENT)]
    InvalidExponent(f64),
    #[error("sampling resolution must be at least 4 along each coordinate, got {n_u}x{n_v}")]
    Resolution { n_u: usize, n_v: usize },
    #[error("polytope has no vertices")]
    EmptyPolytope,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("rotation is not proper (orthogonality error {ortho_error:e}, det {det})")]
    InvalidRotation { ortho_error: f64, det: f64 },
    #[error("voxel resolution must be positive, got {0}")]
    VoxelResolution(f64),
    #[error("reference shape set occupies no voxels")]
    EmptyReference,
    #[error("malformed shape file: {0}")]
    Format(String),
}

#[derive(Debug, Error, Clone)]
pub enum DistanceError {
    #[error("support direction has zero length")]
    ZeroDirection,
    #[error("{algorithm} did not converge in {iterations} iterations (best bound {:.3e})", best.signed_distance)]
    NotConverged {
        algorithm: &'static str,
        iterations: usize,
        best: Box<WitnessPair>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothingError {
    #[error("neighborhood holds {0} vertices, at least 2 are required")]
    NeighborhoodTooSmall(usize),
    #[error("vertex id {0} out of range")]
    InvalidVertex(usize),
    #[error("direction has zero length")]
    ZeroDirection,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("neighborhood depth must be at least 1")]
    Depth,
    #[error("stationarity Jacobian is singular")]
    Singular,
    #[error("separation vector vanished and no fallback direction is available")]
    DegenerateWitness,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("link index {0} does not exist")]
    InvalidLink(usize),
    #[error("attachment rotation angle {0} too close to pi")]
    AttachmentAngle(f64),
    #[error("velocity limits must be positive")]
    VelocityLimit,
    #[error("task Jacobian has more rows ({rows}) than joints ({joints})")]
    TaskRows { rows: usize, joints: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed robot file: {0}")]
    Format(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian is not positive definite")]
    NotConvex,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}
