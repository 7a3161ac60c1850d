//! Multi-depth Richardson-Lucy deconvolution.

use ndarray::{Array2, Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;

/// Per-voxel normalization of the multiplicative update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RlNormalization {
    /// `H^T 1`: the exact EM step; equals the kernel sum for voxels whose
    /// PSF stays on the sensor.
    #[default]
    Sensitivity,
    /// Plain per-depth kernel sums.
    KernelSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlStatus {
    Ok,
    /// The measurement was identically zero; the result is the zero volume.
    ZeroMeasurement,
}

#[derive(Debug, Clone)]
pub struct RlResult {
    pub volume: Array3<f64>,
    pub status: RlStatus,
    /// Poisson log-likelihood `sum y log(Hx) - Hx` (constant terms dropped)
    /// at the initial guess and after every iteration.
    pub log_likelihood: Vec<f64>,
}

/// Poisson log-likelihood of `y` under the model prediction `m`, with the
/// prediction floored at `eps`.
pub fn poisson_log_likelihood(y: ArrayView2<f64>, m: &Array2<f64>, eps: f64) -> f64 {
    y.iter()
        .zip(m.iter())
        .map(|(&y, &m)| {
            let m = m.max(eps);
            if y > 0.0 {
                y * m.ln() - m
            } else {
                -m
            }
        })
        .sum()
}

/// `iters` multiplicative updates from a uniform start.
pub fn richardson_lucy(op: &ForwardModel, y: ArrayView2<f64>, iters: usize, norm: RlNormalization) -> Result<RlResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument("Richardson-Lucy needs at least one iteration".into()));
    }
    if y.dim() != op.measurement_shape() {
        return Err(Error::Shape(format!(
            "measurement {:?} does not match operator {:?}",
            y.dim(),
            op.measurement_shape()
        )));
    }
    if y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("measurement must be finite and nonnegative".into()));
    }
    let shape = op.volume_shape();
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    if ymax == 0.0 {
        log::warn!("Richardson-Lucy on an all-zero measurement");
        return Ok(RlResult {
            volume: Array3::zeros(shape),
            status: RlStatus::ZeroMeasurement,
            log_likelihood: vec![0.0],
        });
    }
    let eps = 1e-12 * ymax;

    let sens: Array3<f64> = match norm {
        RlNormalization::Sensitivity => op.adjoint(Array2::from_elem(y.dim(), 1.0).view())?,
        RlNormalization::KernelSum => {
            let mut s = Array3::zeros(shape);
            for (z, &k) in op.kernel_sums().iter().enumerate() {
                s.index_axis_mut(ndarray::Axis(0), z).fill(k);
            }
            s
        }
    };
    let total_sens: f64 = sens.iter().map(|v| v.max(0.0)).sum();
    if !(total_sens > 0.0) {
        return Err(Error::InvalidArgument("PSF stack has no energy on the sensor".into()));
    }
    let start = y.sum() / total_sens;
    let mut x = Array3::<f64>::from_elem(shape, start);
    Zip::from(&mut x).and(&sens).for_each(|v, &s| {
        if !(s > 0.0) {
            *v = 0.0;
        }
    });

    let mut model = op.forward(x.view())?;
    let mut ll = vec![poisson_log_likelihood(y, &model, eps)];
    for _ in 0..iters {
        let ratio = Zip::from(&y).and(&model).map_collect(|&y, &m| y / m.max(eps));
        let corr = op.adjoint(ratio.view())?;
        Zip::from(&mut x).and(&corr).and(&sens).for_each(|v, &c, &s| {
            *v = if s > 0.0 { (*v * c / s).max(0.0) } else { 0.0 };
        });
        model = op.forward(x.view())?;
        ll.push(poisson_log_likelihood(y, &model, eps));
    }
    Ok(RlResult {
        volume: x,
        status: RlStatus::Ok,
        log_likelihood: ll,
    })
}
