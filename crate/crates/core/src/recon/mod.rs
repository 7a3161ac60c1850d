//! Inverse solvers: multi-depth Richardson-Lucy and TV-regularized
//! nonnegative least squares by ADMM.

mod admm;
mod rl;
mod tv;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, Measurement, Volume};
use crate::wavesim::PsfStack;

pub use admm::{admm_tv_model, gradient_circular, gradient_circular_adjoint, AdmmRecord, AdmmResult, SolveStatus};
pub use rl::{poisson_log_likelihood, richardson_lucy as richardson_lucy_model, RlNormalization, RlResult, RlStatus};
pub use tv::{gradient_adjoint, gradient_op, soft_threshold, tv_norm, TvWeights};

/// ADMM settings. The data term is always evaluated on the measurement
/// normalized to unit maximum, so `tau` transfers between data sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tau: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this value.
    pub tolerance: f64,
    pub admm_rho: f64,
    /// Residual balancing: double or halve the penalty when the primal and
    /// dual residuals differ by more than a factor of ten.
    pub adaptive_rho: bool,
    pub tv_weights: TvWeights,
    pub nonneg: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 1e-5,
            max_iters: 200,
            tolerance: 1e-6,
            admm_rho: 0.3,
            adaptive_rho: false,
            tv_weights: TvWeights::default(),
            nonneg: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be finite and nonnegative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be nonnegative".into()));
        }
        if !(self.admm_rho > 0.0 && self.admm_rho.is_finite()) {
            return Err(Error::Config("admm_rho must be positive".into()));
        }
        if !self.nonneg {
            return Err(Error::Config("only the nonnegative solver is available".into()));
        }
        self.tv_weights.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

fn volume_from(x: ndarray::Array3<f64>, psfs: &PsfStack, lateral_pitch_um: f64) -> Result<Volume> {
    Volume::new(x, lateral_pitch_um, psfs.z_positions_um.clone())
}

/// Richardson-Lucy on a measurement against a PSF stack, reconstructing a
/// volume of lateral shape `vol_shape` with voxels of `lateral_pitch_um`.
pub fn richardson_lucy(
    meas: &Measurement,
    psfs: &PsfStack,
    vol_shape: (usize, usize),
    lateral_pitch_um: f64,
    iters: usize,
    norm: RlNormalization,
) -> Result<(Volume, RlResult)> {
    let op = ForwardModel::new(psfs, vol_shape)?;
    let r = rl::richardson_lucy(&op, meas.image.view(), iters, norm)?;
    Ok((volume_from(r.volume.clone(), psfs, lateral_pitch_um)?, r))
}

/// ADMM-TV reconstruction of a volume of lateral shape `vol_shape`.
pub fn admm_tv(
    meas: &Measurement,
    psfs: &PsfStack,
    vol_shape: (usize, usize),
    lateral_pitch_um: f64,
    config: &SolverConfig,
) -> Result<(Volume, AdmmResult)> {
    let op = ForwardModel::new(psfs, vol_shape)?;
    let r = admm_tv_model(&op, meas.image.view(), config)?;
    Ok((volume_from(r.volume.clone(), psfs, lateral_pitch_um)?, r))
}
