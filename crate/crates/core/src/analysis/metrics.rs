//! Image metrics: PSNR, dips between peaks, local maxima and PSF
//! similarity profiles.

use ndarray::{Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{cosine_similarity, register};

/// `10 log10(max(gt)^2 / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(recon: ArrayView3<f64>, ground_truth: ArrayView3<f64>) -> Result<f64> {
    if recon.dim() != ground_truth.dim() {
        return Err(Error::Shape(format!(
            "psnr shapes differ: {:?} vs {:?}",
            recon.dim(),
            ground_truth.dim()
        )));
    }
    let n = recon.len() as f64;
    let mse = recon.iter().zip(ground_truth.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let peak = ground_truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Trilinear sample of `v` at fractional voxel coordinates, clamped to the
/// volume.
pub fn trilinear(v: ArrayView3<f64>, p: [f64; 3]) -> f64 {
    let dims = [v.dim().0, v.dim().1, v.dim().2];
    let mut i0 = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let c = p[a].clamp(0.0, max);
        let f = c.floor().min((dims[a].max(2) - 2) as f64).max(0.0);
        i0[a] = f as usize;
        t[a] = if dims[a] == 1 { 0.0 } else { c - f };
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dz == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dx == 1 { t[2] } else { 1.0 - t[2] });
                if w == 0.0 {
                    continue;
                }
                let idx = [
                    (i0[0] + dz).min(dims[0] - 1),
                    (i0[1] + dy).min(dims[1] - 1),
                    (i0[2] + dx).min(dims[2] - 1),
                ];
                acc += w * v[idx];
            }
        }
    }
    acc
}

/// Relative dip between two points: `1 - min(profile) / min(endpoints)`,
/// with the profile trilinearly sampled along the joining segment.
pub fn dip_between(v: ArrayView3<f64>, a: [f64; 3], b: [f64; 3]) -> f64 {
    let len = ((0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()).sqrt();
    let samples = ((len * 8.0).ceil() as usize).max(8);
    let mut lo = f64::INFINITY;
    for s in 0..=samples {
        let t = s as f64 / samples as f64;
        let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])];
        lo = lo.min(trilinear(v, p));
    }
    let ends = trilinear(v, a).min(trilinear(v, b));
    if ends <= 0.0 {
        return 0.0;
    }
    (1.0 - lo / ends).max(0.0)
}

/// Strict local maxima over the 26-neighbourhood (8 in a single plane)
/// whose value is at least `threshold`, sorted by decreasing value.
pub fn local_maxima(v: ArrayView3<f64>, threshold: f64) -> Vec<([usize; 3], f64)> {
    let (nz, ny, nx) = v.dim();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = v[[z, y, x]];
                if c < threshold || c <= 0.0 {
                    continue;
                }
                let mut is_max = true;
                'n: for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dz == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                            if zz < 0 || yy < 0 || xx < 0 || zz >= nz as i64 || yy >= ny as i64 || xx >= nx as i64 {
                                continue;
                            }
                            let o = v[[zz as usize, yy as usize, xx as usize]];
                            // ties resolve toward the lower index
                            let earlier = (dz, dy, dx) < (0, 0, 0);
                            if o > c || (o == c && earlier) {
                                is_max = false;
                                break 'n;
                            }
                        }
                    }
                }
                if is_max {
                    out.push(([z, y, x], c));
                }
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Registered similarity of PSFs against a reference PSF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub shift_positions_um: Vec<f64>,
    pub cosine_similarity: Vec<f64>,
    /// Entries whose registration found no correlation peak (recorded as 0).
    pub registration_failed: Vec<bool>,
}

/// Register each off-axis PSF onto the on-axis PSF (phase correlation with
/// 1/100 pixel refinement), then take the normalized inner product.
pub fn cosine_similarity_profile(
    on_axis: ArrayView2<f64>,
    off_axis: &[Array2<f64>],
    shifts_um: &[f64],
) -> Result<SimilarityProfile> {
    if off_axis.len() != shifts_um.len() {
        return Err(Error::Shape("one shift position per off-axis PSF".into()));
    }
    let mut sims = Vec::with_capacity(off_axis.len());
    let mut failed = Vec::with_capacity(off_axis.len());
    for psf in off_axis {
        if psf.dim() != on_axis.dim() {
            return Err(Error::Shape("PSFs must share one shape".into()));
        }
        match register(on_axis, psf.view(), 100) {
            Some(r) => {
                let back = crate::registration::fourier_shift(psf.view(), -r.shift.0, -r.shift.1);
                sims.push(cosine_similarity(on_axis, back.view()).clamp(0.0, 1.0));
                failed.push(false);
            }
            None => {
                sims.push(0.0);
                failed.push(true);
            }
        }
    }
    Ok(SimilarityProfile {
        shift_positions_um: shifts_um.to_vec(),
        cosine_similarity: sims,
        registration_failed: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn psnr_examples() {
        let gt = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| (i * 2 + j) as f64);
        assert_eq!(psnr(gt.view(), gt.view()).unwrap(), f64::INFINITY);
        // one pixel off by 1 in four: MSE = 1/4, max = 3 -> 10 log10(36)
        let mut r = gt.clone();
        r[[0, 1, 1]] = 2.0;
        assert!((psnr(r.view(), gt.view()).unwrap() - 10.0 * 36f64.log10()).abs() < 1e-12);
        // MSE equal to max^2 -> 0 dB
        let flat = Array3::from_elem((1, 2, 2), 1.0);
        let zero = Array3::<f64>::zeros((1, 2, 2));
        assert!(psnr(zero.view(), flat.view()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dip_and_maxima() {
        let mut v = Array3::<f64>::zeros((1, 1, 7));
        v[[0, 0, 1]] = 1.0;
        v[[0, 0, 3]] = 0.5;
        v[[0, 0, 5]] = 0.8;
        let m = local_maxima(v.view(), 0.1);
        assert_eq!(m.iter().map(|p| p.0[2]).collect::<Vec<_>>(), vec![1, 5, 3]);
        let d = dip_between(v.view(), [0.0, 0.0, 1.0], [0.0, 0.0, 5.0]);
        assert!((d - 1.0).abs() < 1e-12);
        v[[0, 0, 2]] = 0.9;
        v[[0, 0, 4]] = 0.9;
        let d = dip_between(v.view(), [0.0, 0.0, 1.0], [0.0, 0.0, 5.0]);
        assert!((d - (1.0 - 0.5 / 0.8)).abs() < 1e-12, "{d}");
    }

    #[test]
    fn trilinear_is_exact_on_linear_fields() {
        let v = Array3::from_shape_fn((3, 4, 5), |(z, y, x)| 2.0 * z as f64 - y as f64 + 0.5 * x as f64);
        let p = [1.3, 2.25, 3.7];
        assert!((trilinear(v.view(), p) - (2.6 - 2.25 + 1.85)).abs() < 1e-12);
    }

    #[test]
    fn similarity_of_shifted_copy_is_one() {
        let a = Array2::from_shape_fn((32, 32), |(i, j)| {
            (-((i as f64 - 12.0).powi(2) + (j as f64 - 15.0).powi(2)) / 6.0).exp()
        });
        let b = Array2::from_shape_fn((32, 32), |(i, j)| a[[(i + 32 - 3) % 32, (j + 5) % 32]]);
        let p = cosine_similarity_profile(a.view(), &[b, Array2::zeros((32, 32))], &[1.0, 2.0]).unwrap();
        assert!((p.cosine_similarity[0] - 1.0).abs() < 1e-6);
        assert_eq!(p.cosine_similarity[1], 0.0);
        assert!(p.registration_failed[1]);
    }
}
