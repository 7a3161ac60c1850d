//! Two-dimensional FFT plans over row-major `ndarray` buffers.
//!
//! Rows are transformed in one batched call; columns go through a transpose
//! so every 1D transform runs on contiguous memory.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn transpose_into(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// In-place FFT of every contiguous `len`-sample line of `data`.
fn batched(plan: &dyn Fft<f64>, data: &mut [Complex64], len: usize) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let lines = data.len() / len;
        let per = lines.div_ceil(rayon::current_num_threads().max(1)).max(1);
        data.par_chunks_mut(per * len).for_each(|chunk| {
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(chunk, &mut scratch);
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        debug_assert_eq!(data.len() % len, 0);
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
    }
}

/// Batched 1D FFTs along the columns of a row-major `rows x cols` buffer.
struct ColumnPass {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ColumnPass {
    fn new(planner: &mut FftPlanner<f64>, rows: usize) -> Self {
        Self {
            fwd: planner.plan_fft_forward(rows),
            inv: planner.plan_fft_inverse(rows),
        }
    }

    fn run(&self, data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut t = vec![Complex64::default(); rows * cols];
        transpose_into(data, rows, cols, &mut t);
        batched(plan.as_ref(), &mut t, rows);
        transpose_into(&t, cols, rows, data);
    }
}

/// Complex 2D FFT plan. The inverse is normalized by `1 / (rows * cols)`.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col: ColumnPass,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col: ColumnPass::new(&mut planner, rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, false);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, true);
        let s = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * s);
    }

    fn run(&self, data: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        let buf = data
            .as_slice_mut()
            .expect("fft buffers must be in standard layout");
        let plan = if inverse { &self.row_inv } else { &self.row_fwd };
        batched(plan.as_ref(), buf, self.cols);
        self.col.run(buf, self.rows, self.cols, inverse);
    }
}

/// Real-input 2D FFT plan producing the `rows x (cols / 2 + 1)` half spectrum.
pub struct RealFft2 {
    rows: usize,
    cols: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col: ColumnPass,
}

impl RealFft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut cplx = FftPlanner::new();
        Self {
            rows,
            cols,
            r2c: real.plan_fft_forward(cols),
            c2r: real.plan_fft_inverse(cols),
            col: ColumnPass::new(&mut cplx, rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn spectrum_shape(&self) -> (usize, usize) {
        (self.rows, self.cols / 2 + 1)
    }

    /// Forward transform of a real array of the plan's shape.
    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<Complex64> {
        assert_eq!(input.dim(), (self.rows, self.cols), "fft shape mismatch");
        let (hr, hc) = self.spectrum_shape();
        let mut out = Array2::<Complex64>::zeros((hr, hc));
        let mut row = vec![0.0; self.cols];
        let mut scratch = self.r2c.make_scratch_vec();
        {
            let o = out.as_slice_mut().unwrap();
            for (r, in_row) in input.rows().into_iter().enumerate() {
                for (dst, &v) in row.iter_mut().zip(in_row.iter()) {
                    *dst = v;
                }
                self.r2c
                    .process_with_scratch(&mut row, &mut o[r * hc..(r + 1) * hc], &mut scratch)
                    .expect("r2c length");
            }
            self.col.run(o, hr, hc, false);
        }
        out
    }

    /// Forward transform of `input` zero-padded into the plan's shape at the
    /// top-left corner.
    pub fn forward_padded(&self, input: ArrayView2<f64>) -> Array2<Complex64> {
        let (r, c) = input.dim();
        assert!(r <= self.rows && c <= self.cols, "input larger than plan");
        if (r, c) == (self.rows, self.cols) {
            return self.forward(input);
        }
        let mut padded = Array2::<f64>::zeros((self.rows, self.cols));
        padded.slice_mut(ndarray::s![..r, ..c]).assign(&input);
        self.forward(padded.view())
    }

    /// Normalized inverse transform; consumes the spectrum as scratch space.
    pub fn inverse(&self, mut spectrum: Array2<Complex64>) -> Array2<f64> {
        let (hr, hc) = self.spectrum_shape();
        assert_eq!(spectrum.dim(), (hr, hc), "spectrum shape mismatch");
        let mut out = Array2::<f64>::zeros((self.rows, self.cols));
        let s = 1.0 / (self.rows * self.cols) as f64;
        let mut scratch = self.c2r.make_scratch_vec();
        let sp = spectrum.as_slice_mut().unwrap();
        self.col.run(sp, hr, hc, true);
        let o = out.as_slice_mut().unwrap();
        for r in 0..hr {
            let line = &mut sp[r * hc..(r + 1) * hc];
            line[0].im = 0.0;
            if self.cols % 2 == 0 {
                line[hc - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(line, &mut o[r * self.cols..(r + 1) * self.cols], &mut scratch)
                .expect("c2r length");
        }
        out.mapv_inplace(|v| v * s);
        out
    }
}

/// Signed FFT frequency index of bin `i` in an `n`-point transform.
#[inline]
pub fn freq_index(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Swap quadrants so the zero-frequency / zero-lag sample moves to `n / 2`.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((r, c), |(i, j)| a[[(i + r - r / 2) % r, (j + c - c / 2) % c]].clone())
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((r, c), |(i, j)| a[[(i + r / 2) % r, (j + c / 2) % c]].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(a: &Array2<Complex64>) -> Array2<Complex64> {
        let (r, c) = a.dim();
        Array2::from_shape_fn((r, c), |(u, v)| {
            let mut acc = Complex64::default();
            for y in 0..r {
                for x in 0..c {
                    let ph = -2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / r as f64 + (v * x) as f64 / c as f64);
                    acc += a[[y, x]] * Complex64::from_polar(1.0, ph);
                }
            }
            acc
        })
    }

    #[test]
    fn complex_matches_naive_dft() {
        let a = Array2::from_shape_fn((6, 10), |(i, j)| {
            Complex64::new((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64).sin())
        });
        let mut f = a.clone();
        let plan = Fft2::new(6, 10);
        plan.forward(&mut f);
        let want = naive_dft(&a);
        for (x, y) in f.iter().zip(want.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
        plan.inverse(&mut f);
        for (x, y) in f.iter().zip(a.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn real_matches_complex_half_spectrum() {
        for &(r, c) in &[(8, 8), (5, 7), (6, 9)] {
            let a = Array2::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 1.3);
            let plan = RealFft2::new(r, c);
            let half = plan.forward(a.view());
            let full = naive_dft(&a.mapv(|v| Complex64::new(v, 0.0)));
            for i in 0..r {
                for j in 0..c / 2 + 1 {
                    assert!((half[[i, j]] - full[[i, j]]).norm() < 1e-10);
                }
            }
            let back = plan.inverse(half);
            for (x, y) in back.iter().zip(a.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_len_and_shift() {
        assert_eq!(next_fast_len(607), 625);
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(97), 100);
        let a = Array2::from_shape_fn((5, 4), |(i, j)| i * 10 + j);
        assert_eq!(ifftshift(&fftshift(&a)), a);
        assert_eq!(fftshift(&a)[[2, 2]], 0);
    }
}
