use thiserror::Error;

/// Failure modes of the measurement, geometry and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("selected NV axes do not span the lab frame")]
    RankDeficient,

    #[error("found {found} resolvable ODMR dips, need {needed}")]
    UnresolvedPeaks { found: usize, needed: usize },

    #[error("resonance at {f_res_khz:.3} kHz lies outside the chirp {start_khz}..{end_khz} kHz")]
    ResonanceOutOfRange {
        f_res_khz: f64,
        start_khz: f64,
        end_khz: f64,
    },

    #[error("no zero crossing of the quadrature signal")]
    NoResonance,

    #[error("correction direction undefined: b_nv + b_0 vanishes")]
    DegenerateDirection,

    #[error("calibration geometry is singular (Jacobian rank < 3)")]
    SingularGeometry,

    #[error("background calibration did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("field direction undefined for a zero field")]
    ZeroField,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
