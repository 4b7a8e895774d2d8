use alloc::string::String;

/// Errors reported by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("quaternion is not unit: norm = {norm}")]
    NotUnit { norm: f64 },

    #[error("invalid array geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("constraint Jacobian is rank deficient (rank {rank} < 4)")]
    DegenerateState { rank: usize },

    #[error("pair is not stabilizable: controllability rank {rank} < {required}")]
    NotControllable { rank: usize, required: usize },

    #[error("Hamiltonian stable/unstable eigenvalue split failed: {0}")]
    HamiltonianSplit(String),

    #[error("Riccati equation residual {residual:e} exceeds tolerance")]
    RiccatiResidual { residual: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("Riccati sweep blew up at t = {t}")]
    RiccatiBlowUp { t: f64 },

    #[error("no non-singular zero momentum configuration found after {attempts} attempts")]
    ZeroMomentumSearch { attempts: usize },

    #[error("steering law diverged: attitude error grew from {mid_deg:.3} deg at T/2 to {end_deg:.3} deg at T")]
    GuessDiverged { mid_deg: f64, end_deg: f64 },

    #[error("trajectory is malformed: {0}")]
    Trajectory(String),
}

pub type Result<T> = core::result::Result<T, Error>;
