//! Subpixel translation: Fourier shifting, phase-correlation registration
//! with upsampled-DFT refinement, and normalized inner products.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::fft::{freq_index, RealFft2};

/// Translate `a` by `(dy, dx)` pixels with periodic boundary using the
/// Fourier shift theorem.
pub fn fourier_shift(a: ArrayView2<f64>, dy: f64, dx: f64) -> Array2<f64> {
    let (r, c) = a.dim();
    let plan = RealFft2::new(r, c);
    let mut spec = plan.forward(a);
    apply_shift(&mut spec, r, c, dy, dx);
    plan.inverse(spec)
}

/// Multiply a half spectrum by the phase ramp of a `(dy, dx)` translation.
pub fn apply_shift(spec: &mut Array2<Complex64>, rows: usize, cols: usize, dy: f64, dx: f64) {
    for ((i, j), v) in spec.indexed_iter_mut() {
        let ky = freq_index(i, rows) / rows as f64;
        let kx = j as f64 / cols as f64;
        *v *= Complex64::from_polar(1.0, -2.0 * PI * (ky * dy + kx * dx));
    }
}

/// Result of a registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    /// `moving` is approximately `reference` translated by `(dy, dx)`.
    pub shift: (f64, f64),
    /// Normalized correlation peak height, zero when no peak was found.
    pub peak: f64,
}

/// Phase-correlation registration with upsampled refinement to `1 / upsample`
/// pixel.
pub fn register(reference: ArrayView2<f64>, moving: ArrayView2<f64>, upsample: usize) -> Option<Registration> {
    let (r, c) = reference.dim();
    assert_eq!(moving.dim(), (r, c), "registration shape mismatch");
    let plan = RealFft2::new(r, c);
    let fa = plan.forward(reference);
    let fb = plan.forward(moving);
    let mut cross: Array2<Complex64> = Array2::zeros(fa.dim());
    let mut maxmag: f64 = 0.0;
    for ((v, a), b) in cross.iter_mut().zip(fa.iter()).zip(fb.iter()) {
        *v = a.conj() * b;
        maxmag = maxmag.max(v.norm());
    }
    if maxmag == 0.0 {
        return None;
    }
    let eps = 1e-3 * maxmag;
    cross.mapv_inplace(|v| v / (v.norm() + eps));
    let full = full_spectrum(&cross, r, c);

    let corr = plan.inverse(cross);
    let (mut pi, mut pj, mut best) = (0, 0, f64::NEG_INFINITY);
    for ((i, j), &v) in corr.indexed_iter() {
        if v > best {
            best = v;
            pi = i;
            pj = j;
        }
    }
    if !(best > 0.0) {
        return None;
    }
    let mut dy = freq_index(pi, r);
    let mut dx = freq_index(pj, c);
    if upsample > 1 {
        let up = upsample as f64;
        let win = (1.5 * up).ceil() as usize;
        let off = (win / 2) as f64;
        let ys: Vec<f64> = (0..win).map(|u| dy + (u as f64 - off) / up).collect();
        let xs: Vec<f64> = (0..win).map(|u| dx + (u as f64 - off) / up).collect();
        let cc = dft_at(&full, r, c, &ys, &xs);
        let (mut bi, mut bj, mut bv) = (0, 0, f64::NEG_INFINITY);
        for ((i, j), v) in cc.indexed_iter() {
            if v.re > bv {
                bv = v.re;
                bi = i;
                bj = j;
            }
        }
        dy = ys[bi];
        dx = xs[bj];
    }
    let norm = (r * c) as f64;
    Some(Registration {
        shift: (dy, dx),
        peak: best * norm / full.iter().map(|v| v.norm()).sum::<f64>().max(f64::MIN_POSITIVE),
    })
}

/// Hermitian completion of a `rows x (cols / 2 + 1)` half spectrum.
fn full_spectrum(half: &Array2<Complex64>, rows: usize, cols: usize) -> Array2<Complex64> {
    let hc = cols / 2 + 1;
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        if j < hc {
            half[[i, j]]
        } else {
            half[[(rows - i) % rows, cols - j]].conj()
        }
    })
}

/// Inverse DFT of `spec` evaluated at arbitrary sample positions.
fn dft_at(spec: &Array2<Complex64>, rows: usize, cols: usize, ys: &[f64], xs: &[f64]) -> Array2<Complex64> {
    let ky: Vec<f64> = (0..rows).map(|i| freq_index(i, rows) / rows as f64).collect();
    let kx: Vec<f64> = (0..cols).map(|j| freq_index(j, cols) / cols as f64).collect();
    // (ys x rows) * (rows x cols) * (cols x xs)
    let ey = Array2::from_shape_fn((ys.len(), rows), |(u, i)| {
        Complex64::from_polar(1.0, 2.0 * PI * ky[i] * ys[u])
    });
    let ex = Array2::from_shape_fn((cols, xs.len()), |(j, v)| {
        Complex64::from_polar(1.0, 2.0 * PI * kx[j] * xs[v])
    });
    ey.dot(spec).dot(&ex)
}

/// `<a, b> / (|a| |b|)`, zero if either argument vanishes.
pub fn cosine_similarity(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(n: usize, cy: f64, cx: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            let (y, x) = (i as f64 - cy, j as f64 - cx);
            (-(x * x + y * y) / 8.0).exp() + 0.5 * (-((x - 7.0).powi(2) + (y + 3.0).powi(2)) / 3.0).exp()
        })
    }

    #[test]
    fn integer_fourier_shift_is_a_roll() {
        let a = blob(32, 16.0, 16.0);
        let b = fourier_shift(a.view(), 3.0, -2.0);
        for i in 0..32 {
            for j in 0..32 {
                let want = a[[(i + 32 - 3) % 32, (j + 2) % 32]];
                assert!((b[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn registration_recovers_subpixel_shift() {
        let a = blob(64, 30.0, 31.0);
        let b = blob(64, 30.0 + 2.37, 31.0 - 4.61);
        let r = register(a.view(), b.view(), 100).unwrap();
        assert!((r.shift.0 - 2.37).abs() < 0.02, "{:?}", r.shift);
        assert!((r.shift.1 + 4.61).abs() < 0.02, "{:?}", r.shift);
    }

    #[test]
    fn cosine_examples() {
        let a = blob(16, 8.0, 8.0);
        assert!((cosine_similarity(a.view(), a.view()) - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(a.view(), (a.clone() * 3.0).view()) - 1.0).abs() < 1e-12);
        let mut l = Array2::<f64>::zeros((4, 4));
        let mut r = Array2::<f64>::zeros((4, 4));
        l[[0, 0]] = 1.0;
        r[[3, 3]] = 2.0;
        assert_eq!(cosine_similarity(l.view(), r.view()), 0.0);
        assert_eq!(cosine_similarity(l.view(), Array2::zeros((4, 4)).view()), 0.0);
    }
}
