use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("eigensolver failed at kappa={kappa}, kx={kx}, M={m}: {reason}")]
    Solver { kappa: f64, kx: f64, m: usize, reason: String },

    #[error("eigenvalue {re:+.3e}{im:+.3e}i has near-zero real part at kappa={kappa}, kx={kx} (grazing mode)")]
    Grazing { re: f64, im: f64, kappa: f64, kx: f64 },

    #[error("expected {expected} eigenvalues with negative real part, found {found} (kappa={kappa}, kx={kx})")]
    Split { expected: usize, found: usize, kappa: f64, kx: f64 },

    #[error("fundamental mode m=0 has no matching eigenvalue at kappa={kappa}, kx={kx} (best relative mismatch {best:.3e})")]
    NoFundamentalMatch { kappa: f64, kx: f64, best: f64 },

    #[error("boundary system ill-conditioned (cond={cond:.3e}) at kappa={kappa}, kx={kx}")]
    IllConditioned { cond: f64, kappa: f64, kx: f64 },

    #[error("singular normalization |L-_{{mm}}| < 1e-12 for m={m}")]
    SingularNormalization { m: i64 },

    #[error("log-determinant has imaginary part {im:.3e} at kappa={kappa}, kx={kx}")]
    ComplexLogDet { im: f64, kappa: f64, kx: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),
}

impl Error {
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
