//! ADMM for `1/2 |C H x - y|^2 + tau |diag(gamma) grad x|_1` with `x >= 0`.
//!
//! All variables live on the zero-padded convolution domain of the forward
//! model. Laterally the operators are circular and diagonal in the Fourier
//! domain; axially the gradient keeps its replicate boundary, so each lateral
//! frequency needs a `Z x Z` solve with a tridiagonal-plus-rank-one matrix.
//! The crop `C` and the volume support are handled by the splitting.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, ArrayViewMut2, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::tv::{soft_threshold, TvWeights};
use super::SolverConfig;
use crate::error::{Error, Result};
use crate::fft::RealFft2;
use crate::forward::ForwardModel;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// The measurement was identically zero.
    ZeroMeasurement,
}

/// One line of solver telemetry. Objective terms refer to the normalized
/// problem and are evaluated at the feasible split variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmRecord {
    pub iter: usize,
    pub objective: f64,
    pub data_term: f64,
    pub tv_term: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    /// Best iterate in the units of the input measurement.
    pub volume: Array3<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub records: Vec<AdmmRecord>,
}

/// One row `(c, z, i, ..)` of the weighted gradient of a standard-layout
/// volume.
fn gradient_row(x: &ArrayView3<f64>, w: TvWeights, c: usize, z: usize, i: usize, out: &mut [f64]) {
    let (nz, ny, nx) = x.dim();
    let row = |z: usize, i: usize| x.slice(s![z, i, ..]).to_slice().expect("standard layout");
    let cur = row(z, i);
    match c {
        0 => {
            for j in 0..nx - 1 {
                out[j] = w.gamma_xy * (cur[j + 1] - cur[j]);
            }
            out[nx - 1] = w.gamma_xy * (cur[0] - cur[nx - 1]);
        }
        1 => {
            let next = row(z, (i + 1) % ny);
            for j in 0..nx {
                out[j] = w.gamma_xy * (next[j] - cur[j]);
            }
        }
        _ => {
            if z + 1 < nz {
                let next = row(z + 1, i);
                for j in 0..nx {
                    out[j] = w.gamma_z * (next[j] - cur[j]);
                }
            } else {
                out[..nx].fill(0.0);
            }
        }
    }
}

/// Weighted gradient with circular lateral and replicate axial boundary.
pub fn gradient_circular(x: ArrayView3<f64>, w: TvWeights) -> Array4<f64> {
    let x = x.as_standard_layout();
    let x = x.view();
    let (nz, ny, nx) = x.dim();
    let mut g = Array4::<f64>::zeros((3, nz, ny, nx));
    for c in 0..3 {
        for z in 0..nz {
            for i in 0..ny {
                let mut row = g.slice_mut(s![c, z, i, ..]);
                gradient_row(&x, w, c, z, i, row.as_slice_mut().expect("fresh array"));
            }
        }
    }
    g
}

/// Adjoint of the gradient applied to `a - b` (or `a` alone), written into
/// `out`.
fn gradient_adjoint_into(a: &ArrayView4<f64>, b: Option<&ArrayView4<f64>>, w: TvWeights, out: &mut Array3<f64>) {
    let (_, nz, ny, nx) = a.dim();
    let mut bufs = [vec![0.0; nx], vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]];
    let fetch = |c: usize, z: usize, i: usize, dst: &mut [f64]| {
        let ra = a.slice(s![c, z, i, ..]);
        match b {
            Some(b) => {
                let rb = b.slice(s![c, z, i, ..]);
                for ((d, &p), &q) in dst.iter_mut().zip(ra.iter()).zip(rb.iter()) {
                    *d = p - q;
                }
            }
            None => {
                for (d, &p) in dst.iter_mut().zip(ra.iter()) {
                    *d = p;
                }
            }
        }
    };
    for z in 0..nz {
        for i in 0..ny {
            let [gx, gy, gyp, gz] = &mut bufs;
            fetch(0, z, i, gx);
            fetch(1, z, i, gy);
            fetch(1, z, (i + ny - 1) % ny, gyp);
            let mut o = out.slice_mut(s![z, i, ..]);
            for j in 0..nx {
                let jm = if j == 0 { nx - 1 } else { j - 1 };
                o[j] = w.gamma_xy * (gx[jm] - gx[j] + gyp[j] - gy[j]);
            }
            if nz > 1 {
                if z + 1 < nz {
                    fetch(2, z, i, gz);
                    for j in 0..nx {
                        o[j] -= w.gamma_z * gz[j];
                    }
                }
                if z >= 1 {
                    fetch(2, z - 1, i, gz);
                    for j in 0..nx {
                        o[j] += w.gamma_z * gz[j];
                    }
                }
            }
        }
    }
}

/// Exact adjoint of [`gradient_circular`].
pub fn gradient_circular_adjoint(g: ArrayView4<f64>, w: TvWeights) -> Array3<f64> {
    let (_, nz, ny, nx) = g.dim();
    let mut out = Array3::<f64>::zeros((nz, ny, nx));
    gradient_adjoint_into(&g, None, w, &mut out);
    out
}

/// `sum |grad x|` without materializing the gradient.
fn gradient_l1(x: &Array3<f64>, w: TvWeights) -> f64 {
    let (nz, ny, nx) = x.dim();
    let xv = x.view();
    let mut buf = vec![0.0; nx];
    let mut acc = 0.0;
    for c in 0..3 {
        for z in 0..nz {
            for i in 0..ny {
                gradient_row(&xv, w, c, z, i, &mut buf);
                acc += buf.iter().map(|v| v.abs()).sum::<f64>();
            }
        }
    }
    acc
}

fn fft_volume(plan: &RealFft2, x: &Array3<f64>) -> Array3<Complex64> {
    let (hr, hc) = plan.spectrum_shape();
    let parts = par::map_range(x.dim().0, |z| plan.forward(x.index_axis(Axis(0), z)));
    let mut out = Array3::<Complex64>::zeros((x.dim().0, hr, hc));
    for (z, p) in parts.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), z).assign(&p);
    }
    out
}

fn ifft_volume(plan: &RealFft2, xs: &Array3<Complex64>) -> Array3<f64> {
    let (r, c) = plan.shape();
    let parts = par::map_range(xs.dim().0, |z| plan.inverse(xs.index_axis(Axis(0), z).to_owned()));
    let mut out = Array3::<f64>::zeros((xs.dim().0, r, c));
    for (z, p) in parts.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), z).assign(&p);
    }
    out
}

/// `sum_z k_z X_z` per frequency.
fn apply_kernels(k: &Array3<Complex64>, xs: &Array3<Complex64>) -> Array2<Complex64> {
    let mut acc = Array2::<Complex64>::zeros((k.dim().1, k.dim().2));
    for (kz, xz) in k.outer_iter().zip(xs.outer_iter()) {
        Zip::from(&mut acc).and(&kz).and(&xz).for_each(|a, &k, &x| *a += k * x);
    }
    acc
}

/// In-place solve of `(d I + g L) r = r` with `L` the replicate-boundary
/// axial Laplacian `D^T D`.
fn solve_tridiagonal(d: f64, g: f64, r: &mut [Complex64], cp: &mut [f64]) {
    let n = r.len();
    if n == 1 {
        r[0] /= d;
        return;
    }
    let diag = |k: usize| if k == 0 || k == n - 1 { d + g } else { d + 2.0 * g };
    let off = -g;
    // Thomas algorithm with real coefficients
    let mut beta = diag(0);
    cp[0] = off / beta;
    r[0] /= beta;
    for k in 1..n {
        beta = diag(k) - off * cp[k - 1];
        if k + 1 < n {
            cp[k] = off / beta;
        }
        r[k] = (r[k] - r[k - 1] * off) / beta;
    }
    for k in (0..n - 1).rev() {
        let next = r[k + 1];
        r[k] -= next * cp[k];
    }
}

struct FrequencySolver {
    /// `gamma_xy^2` times the lateral Laplacian eigenvalue plus one.
    diag: Array2<f64>,
    gz2: f64,
    /// Kernel spectra, `[z][ky][kx]`, divided by their median norm.
    k: Array3<Complex64>,
    /// `T^-1 conj(k)` per frequency.
    q: Array3<Complex64>,
    /// `1 / (1 + k^T T^-1 conj(k))` per frequency.
    inv_den: Array2<f64>,
}

fn for_each_row_pair<F>(a: &mut Array3<Complex64>, f: F)
where
    F: Fn(usize, ArrayViewMut2<Complex64>) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use ndarray::parallel::prelude::*;
        a.axis_iter_mut(Axis(1))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, v)| f(i, v));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, v) in a.axis_iter_mut(Axis(1)).enumerate() {
            f(i, v);
        }
    }
}

impl FrequencySolver {
    fn new(k: Array3<Complex64>, pad: (usize, usize), w: TvWeights) -> Self {
        let (nz, hr, hc) = k.dim();
        let lat_y: Vec<f64> = (0..hr).map(|i| 2.0 - 2.0 * (2.0 * PI * i as f64 / pad.0 as f64).cos()).collect();
        let lat_x: Vec<f64> = (0..hc).map(|j| 2.0 - 2.0 * (2.0 * PI * j as f64 / pad.1 as f64).cos()).collect();
        let g2 = w.gamma_xy * w.gamma_xy;
        let diag = Array2::from_shape_fn((hr, hc), |(i, j)| 1.0 + g2 * (lat_y[i] + lat_x[j]));
        let gz2 = w.gamma_z * w.gamma_z;
        let mut q = k.mapv(|v| v.conj());
        for_each_row_pair(&mut q, |i, mut qi| {
            let mut buf = vec![Complex64::new(0.0, 0.0); nz];
            let mut cp = vec![0.0; nz];
            for j in 0..hc {
                for z in 0..nz {
                    buf[z] = qi[[z, j]];
                }
                solve_tridiagonal(diag[[i, j]], gz2, &mut buf, &mut cp);
                for z in 0..nz {
                    qi[[z, j]] = buf[z];
                }
            }
        });
        let mut dot = Array2::<f64>::zeros((hr, hc));
        for (kz, qz) in k.outer_iter().zip(q.outer_iter()) {
            Zip::from(&mut dot).and(&kz).and(&qz).for_each(|d, &k, &q| *d += (k * q).re);
        }
        let inv_den = dot.mapv(|d| 1.0 / (1.0 + d));
        Self {
            diag,
            gz2,
            k,
            q,
            inv_den,
        }
    }

    /// Solve `(conj(k) k^T + T) x = r` in place at every frequency.
    fn solve(&self, r: &mut Array3<Complex64>) {
        let nz = r.dim().0;
        let hc = r.dim().2;
        for_each_row_pair(r, |i, mut ri| {
            let mut buf = vec![Complex64::new(0.0, 0.0); nz];
            let mut cp = vec![0.0; nz];
            for j in 0..hc {
                for z in 0..nz {
                    buf[z] = ri[[z, j]];
                }
                solve_tridiagonal(self.diag[[i, j]], self.gz2, &mut buf, &mut cp);
                let mut dot = Complex64::new(0.0, 0.0);
                for z in 0..nz {
                    dot += self.k[[z, i, j]] * buf[z];
                }
                let c = dot * self.inv_den[[i, j]];
                for z in 0..nz {
                    ri[[z, j]] = buf[z] - self.q[[z, i, j]] * c;
                }
            }
        });
    }
}

fn sum_sq(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().map(|v| v * v).sum()
}

/// Run ADMM against a prebuilt forward model. `y` must have the model's
/// measurement shape; the result has the model's volume shape.
pub fn admm_tv_model(op: &ForwardModel, y: ArrayView2<f64>, config: &SolverConfig) -> Result<AdmmResult> {
    config.validate()?;
    if y.dim() != op.measurement_shape() {
        return Err(Error::Shape(format!(
            "measurement {:?} does not match operator {:?}",
            y.dim(),
            op.measurement_shape()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("measurement must be finite".into()));
    }
    let vol_shape = op.volume_shape();
    let (nz, vr, vc) = vol_shape;
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    if !(ymax > 0.0) {
        log::warn!("ADMM on a measurement without positive values");
        return Ok(AdmmResult {
            volume: Array3::zeros(vol_shape),
            status: SolveStatus::ZeroMeasurement,
            iterations: 0,
            objective: 0.0,
            records: Vec::new(),
        });
    }

    let plan = op.plan();
    let pad = op.padded_shape();
    let (hr, hc) = plan.spectrum_shape();
    let mut k = Array3::<Complex64>::zeros((nz, hr, hc));
    for z in 0..nz {
        k.index_axis_mut(Axis(0), z).assign(op.kernel_spectrum(z));
    }
    let scale = {
        let mut norm2 = Array2::<f64>::zeros((hr, hc));
        for kz in k.outer_iter() {
            Zip::from(&mut norm2).and(&kz).for_each(|n, v| *n += v.norm_sqr());
        }
        let mut v: Vec<f64> = norm2.iter().cloned().collect();
        v.sort_by(f64::total_cmp);
        // median spectral norm, kept away from zero for band-limited kernels
        let max = v[v.len() - 1];
        v[(v.len() - 1) / 2].max(1e-6 * max).sqrt()
    };
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("PSF stack is identically zero".into()));
    }
    k.mapv_inplace(|v| v / scale);
    let w = config.tv_weights;
    let solver = FrequencySolver::new(k, pad, w);

    let mut rho = config.admm_rho;
    let y_full = op.embed(y.mapv(|v| v / ymax).view());
    let mask = op.embed(Array2::from_elem(y.dim(), 1.0).view());

    let full3 = (nz, pad.0, pad.1);
    let mut v = Array2::<f64>::zeros(pad);
    let mut dv = Array2::<f64>::zeros(pad);
    let mut u = Array4::<f64>::zeros((3, nz, pad.0, pad.1));
    let mut du = Array4::<f64>::zeros((3, nz, pad.0, pad.1));
    let mut wv = Array3::<f64>::zeros(full3);
    let mut dw = Array3::<f64>::zeros(full3);

    let mut rhs = Array3::<f64>::zeros(full3);
    let mut gbuf = vec![0.0; pad.1];
    let mut best = Array3::<f64>::zeros(full3);
    let mut best_obj = f64::INFINITY;
    let mut prev_obj = f64::NAN;
    let mut records = Vec::with_capacity(config.max_iters);
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        // x-update
        gradient_adjoint_into(&u.view(), Some(&du.view()), w, &mut rhs);
        Zip::from(&mut rhs).and(&wv).and(&dw).for_each(|r, &a, &b| *r += a - b);
        let mut rhs_f = fft_volume(plan, &rhs);
        let vs = plan.forward((&v - &dv).view());
        for z in 0..nz {
            Zip::from(rhs_f.index_axis_mut(Axis(0), z))
                .and(solver.k.index_axis(Axis(0), z))
                .and(&vs)
                .for_each(|r, k, &s| *r += k.conj() * s);
        }
        solver.solve(&mut rhs_f);
        let hx = plan.inverse(apply_kernels(&solver.k, &rhs_f));
        let x = ifft_volume(plan, &rhs_f);
        drop(rhs_f);

        // v-update: masked data term
        let v_old = v.clone();
        Zip::from(&mut v)
            .and(&hx)
            .and(&dv)
            .and(&y_full)
            .and(&mask)
            .for_each(|v, &h, &d, &yv, &m| {
                let a = h + d;
                *v = if m > 0.0 { (yv + rho * a) / (1.0 + rho) } else { a };
            });

        let mut r_sq = 0.0;
        Zip::from(&mut dv).and(&hx).and(&v).for_each(|d, &h, &v| {
            *d += h - v;
            r_sq += (h - v) * (h - v);
        });

        // u-update (shrinkage of the weighted gradient) with its dual step
        let thr = config.tau / scale / rho;
        let mut du_sq = 0.0;
        let xv = x.view();
        for c in 0..3 {
            for z in 0..nz {
                for i in 0..pad.0 {
                    gradient_row(&xv, w, c, z, i, &mut gbuf);
                    let mut ur = u.slice_mut(s![c, z, i, ..]);
                    let mut dr = du.slice_mut(s![c, z, i, ..]);
                    for ((uj, dj), &g) in ur.iter_mut().zip(dr.iter_mut()).zip(gbuf.iter()) {
                        let nu = soft_threshold(g + *dj, thr);
                        du_sq += (nu - *uj) * (nu - *uj);
                        *uj = nu;
                        *dj += g - nu;
                        r_sq += (g - nu) * (g - nu);
                    }
                }
            }
        }

        // w-update (nonnegativity and support) with its dual step
        let mut dw_sq = 0.0;
        Zip::indexed(&mut wv).and(&x).and(&mut dw).for_each(|(_, i, j), w, &x, d| {
            let nw = if i < vr && j < vc { (x + *d).max(0.0) } else { 0.0 };
            dw_sq += (nw - *w) * (nw - *w);
            *w = nw;
            *d += x - nw;
            r_sq += (x - nw) * (x - nw);
        });
        drop(x);
        let dv_sq = sum_sq(v.iter().zip(v_old.iter()).map(|(a, b)| a - b));
        let primal = r_sq.sqrt();
        let dual = rho * (dv_sq + du_sq + dw_sq).sqrt();

        // objective at the feasible variable w
        let hw = plan.inverse(apply_kernels(&solver.k, &fft_volume(plan, &wv)));
        let data = 0.5 * sum_sq(hw.iter().zip(y_full.iter()).zip(mask.iter()).map(|((h, y), m)| m * (h - y)));
        let tv = config.tau / scale * gradient_l1(&wv, w);
        let obj = data + tv;
        records.push(AdmmRecord {
            iter: it,
            objective: obj,
            data_term: data,
            tv_term: tv,
            primal_residual: primal,
            dual_residual: dual,
            rho,
        });
        if obj < best_obj {
            best_obj = obj;
            best.assign(&wv);
        }
        if it > 1 && (prev_obj - obj).abs() <= config.tolerance * obj.abs().max(f64::MIN_POSITIVE) {
            status = SolveStatus::Converged;
            break;
        }
        prev_obj = obj;
        if config.adaptive_rho {
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                // scaled duals follow the penalty
                rho *= factor;
                dv.mapv_inplace(|d| d / factor);
                du.mapv_inplace(|d| d / factor);
                dw.mapv_inplace(|d| d / factor);
            }
        }
    }

    let unit = ymax / scale;
    let volume = best.slice(s![.., ..vr, ..vc]).mapv(|v| v * unit);
    Ok(AdmmResult {
        volume,
        status,
        iterations,
        objective: best_obj,
        records,
    })
}
