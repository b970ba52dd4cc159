use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh dimensions: nx={nx}, nt={nt} (both must be at least 2)")]
    InvalidDims { nx: usize, nt: usize },
    #[error("observation interval endpoint {0} is not aligned with the mesh")]
    OmegaNotAligned(f64),
    #[error("invalid observation interval ({0}, {1})")]
    InvalidInterval(f64, f64),
    #[error("edge ({0}, {1}) borders more than two triangles")]
    NonManifold(usize, usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("point (t={t}, x={x}) lies outside the spacetime domain")]
    OutOfDomain { t: f64, x: f64 },
    #[error("no quadrature rule of degree {0} (maximum is 10)")]
    UnsupportedDegree(usize),
    #[error("unsupported polynomial degree {0} (expected 1, 2 or 3)")]
    UnsupportedElement(usize),
    #[error("spaces or fields live on different meshes")]
    MeshMismatch,
    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("face-only primal stabilizer requires q in {{p-2, p-1, p}}, got p={p}, q={q}")]
    VariantConstraint { p: usize, q: usize },
    #[error("dual degree q={q} exceeds primal degree p={p} (set allow_locking to override)")]
    DegreeOrder { p: usize, q: usize },
    #[error("unstable parameter choice: {0}")]
    Unstable(String),
    #[error("factorization failed: {0}")]
    Singular(String),
    #[error("rate fit needs at least 3 positive points: {0}")]
    NonPositive(String),
    #[error("point (t={t}, x={x}) lies outside the observation domain")]
    OutsideObservationDomain { t: f64, x: f64 },
    #[error("facet {0} is a boundary facet")]
    BoundaryFacet(usize),
    #[error("nothing to plot: {0}")]
    EmptyStudy(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
