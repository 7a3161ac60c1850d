//! Image formation `y = sum_z h_z * x_z` and its adjoint.
//!
//! Convolutions are linear (zero padded) and evaluated with real FFTs on a
//! grid of at least `volume + kernel - 1` samples per axis, so there is no
//! wrap-around. The measurement has the kernel's shape and is aligned so that
//! a unit voxel at the volume center reproduces the kernel exactly.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fft::{next_fast_len, RealFft2};
use crate::wavesim::PsfStack;
use crate::{par, rng};

/// Nonnegative intensity volume, `[z][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub intensities: Array3<f64>,
    pub lateral_pitch_um: f64,
    pub z_positions_um: Vec<f64>,
}

impl Volume {
    pub fn new(intensities: Array3<f64>, lateral_pitch_um: f64, z_positions_um: Vec<f64>) -> Result<Self> {
        if intensities.dim().0 != z_positions_um.len() {
            return Err(Error::Shape(format!(
                "volume has {} slices but {} depths",
                intensities.dim().0,
                z_positions_um.len()
            )));
        }
        if z_positions_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("volume depths must be strictly increasing".into()));
        }
        if !(lateral_pitch_um > 0.0) {
            return Err(Error::InvalidArgument("lateral pitch must be positive".into()));
        }
        Ok(Self {
            intensities,
            lateral_pitch_um,
            z_positions_um,
        })
    }

    pub fn zeros(shape: (usize, usize, usize), lateral_pitch_um: f64, z_positions_um: Vec<f64>) -> Result<Self> {
        Self::new(Array3::zeros(shape), lateral_pitch_um, z_positions_um)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.intensities.dim()
    }
}

/// Nonnegative sensor image.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub image: Array2<f64>,
    pub sensor_pitch_um: f64,
}

/// Precomputed linear-convolution operator for one PSF stack and one volume
/// lateral shape.
pub struct ForwardModel {
    vol: (usize, usize),
    ker: (usize, usize),
    pad: (usize, usize),
    plan: RealFft2,
    spectra: Vec<Array2<Complex64>>,
    kernel_sums: Vec<f64>,
    sensor_pitch_um: f64,
}

impl ForwardModel {
    /// Operator for volumes of lateral shape `vol_shape` against `psfs`.
    pub fn new(psfs: &PsfStack, vol_shape: (usize, usize)) -> Result<Self> {
        let ker = psfs.kernel_shape();
        if vol_shape.0 == 0 || vol_shape.1 == 0 || ker.0 == 0 || ker.1 == 0 {
            return Err(Error::Shape("empty volume or kernel".into()));
        }
        // Circular convolution over `pad` only aliases full-convolution
        // samples below `v + k - 1 - pad`, which stay left of the centred crop
        // as long as the crop itself fits.
        let pad = (
            next_fast_len((vol_shape.0 / 2 + ker.0).max(vol_shape.0)),
            next_fast_len((vol_shape.1 / 2 + ker.1).max(vol_shape.1)),
        );
        let plan = RealFft2::new(pad.0, pad.1);
        let idx: Vec<usize> = (0..psfs.depth_count()).collect();
        let spectra = par::map(&idx, |&z| plan.forward_padded(psfs.kernel(z)));
        let kernel_sums = idx.iter().map(|&z| psfs.kernel(z).sum()).collect();
        Ok(Self {
            vol: vol_shape,
            ker,
            pad,
            plan,
            spectra,
            kernel_sums,
            sensor_pitch_um: psfs.sensor_pitch_um,
        })
    }

    pub fn depth_count(&self) -> usize {
        self.spectra.len()
    }

    pub fn volume_shape(&self) -> (usize, usize, usize) {
        (self.spectra.len(), self.vol.0, self.vol.1)
    }

    pub fn measurement_shape(&self) -> (usize, usize) {
        self.ker
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        self.pad
    }

    pub fn kernel_sums(&self) -> &[f64] {
        &self.kernel_sums
    }

    pub fn kernel_spectrum(&self, z: usize) -> &Array2<Complex64> {
        &self.spectra[z]
    }

    /// Offset of measurement pixel 0 inside the full linear convolution.
    fn offset(&self) -> (usize, usize) {
        (self.vol.0 / 2, self.vol.1 / 2)
    }

    fn check_volume(&self, x: &ArrayView3<f64>) -> Result<()> {
        if x.dim() != self.volume_shape() {
            return Err(Error::Shape(format!(
                "volume shape {:?} does not match operator {:?}",
                x.dim(),
                self.volume_shape()
            )));
        }
        Ok(())
    }

    /// Spectrum of one zero-padded volume slice.
    pub fn slice_spectrum(&self, slice: ArrayView2<f64>) -> Array2<Complex64> {
        self.plan.forward_padded(slice)
    }

    /// `sum_z K_z X_z` in the padded Fourier domain.
    pub fn forward_spectrum(&self, x: ArrayView3<f64>) -> Result<Array2<Complex64>> {
        self.check_volume(&x)?;
        let parts = par::map_range(self.depth_count(), |z| {
            let mut xs = self.plan.forward_padded(x.index_axis(Axis(0), z));
            xs.zip_mut_with(&self.spectra[z], |a, b| *a *= *b);
            xs
        });
        let mut acc = Array2::<Complex64>::zeros(self.plan.spectrum_shape());
        for p in parts {
            acc += &p;
        }
        Ok(acc)
    }

    /// Crop a full padded-domain image to the measurement window.
    pub fn crop(&self, full: &Array2<f64>) -> Array2<f64> {
        let (oy, ox) = self.offset();
        full.slice(s![oy..oy + self.ker.0, ox..ox + self.ker.1]).to_owned()
    }

    /// Embed a measurement-shaped image into the padded domain (adjoint of
    /// [`ForwardModel::crop`]).
    pub fn embed(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let (oy, ox) = self.offset();
        let mut full = Array2::<f64>::zeros(self.pad);
        full.slice_mut(s![oy..oy + self.ker.0, ox..ox + self.ker.1]).assign(&y);
        full
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<Array2<f64>> {
        let spec = self.forward_spectrum(x)?;
        Ok(self.crop(&self.plan.inverse(spec)))
    }

    /// Spectrum of the embedded measurement.
    pub fn measurement_spectrum(&self, y: ArrayView2<f64>) -> Result<Array2<Complex64>> {
        if y.dim() != self.ker {
            return Err(Error::Shape(format!(
                "measurement shape {:?} does not match kernel shape {:?}",
                y.dim(),
                self.ker
            )));
        }
        Ok(self.plan.forward(self.embed(y).view()))
    }

    /// Per-depth correlation of `y` with the kernels.
    pub fn adjoint(&self, y: ArrayView2<f64>) -> Result<Array3<f64>> {
        let ys = self.measurement_spectrum(y)?;
        Ok(self.adjoint_from_spectrum(&ys))
    }

    /// Adjoint given the spectrum of an embedded measurement.
    pub fn adjoint_from_spectrum(&self, ys: &Array2<Complex64>) -> Array3<f64> {
        let slices = par::map_range(self.depth_count(), |z| {
            let mut c = ys.clone();
            c.zip_mut_with(&self.spectra[z], |a, b| *a *= b.conj());
            let full = self.plan.inverse(c);
            full.slice(s![..self.vol.0, ..self.vol.1]).to_owned()
        });
        let mut out = Array3::<f64>::zeros(self.volume_shape());
        for (z, sl) in slices.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), z).assign(&sl);
        }
        out
    }

    pub fn project(&self, vol: &Volume) -> Result<Measurement> {
        Ok(Measurement {
            image: self.forward(vol.intensities.view())?,
            sensor_pitch_um: self.sensor_pitch_um,
        })
    }

    pub fn plan(&self) -> &RealFft2 {
        &self.plan
    }
}

/// `y = sum_z h_z * x_z`, cropped to the kernel-sized sensor.
pub fn forward_project(vol: &Volume, psfs: &PsfStack) -> Result<Measurement> {
    check_pair(vol, psfs)?;
    let (_, r, c) = vol.shape();
    ForwardModel::new(psfs, (r, c))?.project(vol)
}

/// Exact adjoint of [`forward_project`].
pub fn adjoint_project(meas: &Measurement, psfs: &PsfStack, vol_shape: (usize, usize), lateral_pitch_um: f64) -> Result<Volume> {
    let op = ForwardModel::new(psfs, vol_shape)?;
    Volume::new(op.adjoint(meas.image.view())?, lateral_pitch_um, psfs.z_positions_um.clone())
}

fn check_pair(vol: &Volume, psfs: &PsfStack) -> Result<()> {
    if vol.shape().0 != psfs.depth_count() {
        return Err(Error::Shape(format!(
            "volume has {} depths, PSF stack {}",
            vol.shape().0,
            psfs.depth_count()
        )));
    }
    Ok(())
}

/// Per-block PSFs for a shift-varying single-plane model.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfField {
    /// Block edge in object pixels.
    pub block_px: usize,
    /// Number of blocks along y and x.
    pub blocks: (usize, usize),
    /// Kernels in row-major block order.
    pub kernels: Array3<f64>,
    pub sensor_pitch_um: f64,
}

impl PsfField {
    pub fn kernel(&self, by: usize, bx: usize) -> ArrayView2<'_, f64> {
        self.kernels.index_axis(Axis(0), by * self.blocks.1 + bx)
    }
}

/// Sum over blocks of `(block content) * (block PSF)`.
pub fn forward_project_blockwise(plane: ArrayView2<f64>, field: &PsfField) -> Result<Measurement> {
    let (r, c) = plane.dim();
    let b = field.block_px;
    if b == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    if field.blocks.0 * b < r || field.blocks.1 * b < c {
        return Err(Error::Shape(format!(
            "PSF field of {:?} blocks of {b} px does not cover a {r}x{c} plane",
            field.blocks
        )));
    }
    if field.kernels.dim().0 != field.blocks.0 * field.blocks.1 {
        return Err(Error::Shape("PSF field kernel count does not match its block grid".into()));
    }
    let (_, kr, kc) = field.kernels.dim();
    let pad = (next_fast_len(r + kr - 1), next_fast_len(c + kc - 1));
    let plan = RealFft2::new(pad.0, pad.1);
    let mut coords = Vec::new();
    for by in 0..field.blocks.0 {
        for bx in 0..field.blocks.1 {
            let (y0, x0) = (by * b, bx * b);
            if y0 < r && x0 < c {
                coords.push((by, bx));
            }
        }
    }
    let parts = par::map(&coords, |&(by, bx)| {
        let (y0, x0) = (by * b, bx * b);
        let (y1, x1) = ((y0 + b).min(r), (x0 + b).min(c));
        let block = plane.slice(s![y0..y1, x0..x1]);
        if block.iter().all(|&v| v == 0.0) {
            return None;
        }
        let mut content = Array2::<f64>::zeros((r, c));
        content.slice_mut(s![y0..y1, x0..x1]).assign(&block);
        let mut xs = plan.forward_padded(content.view());
        let ks = plan.forward_padded(field.kernel(by, bx));
        xs.zip_mut_with(&ks, |a, b| *a *= *b);
        Some(xs)
    });
    let mut acc = Array2::<Complex64>::zeros(plan.spectrum_shape());
    for p in parts.into_iter().flatten() {
        acc += &p;
    }
    let full = plan.inverse(acc);
    let (oy, ox) = (r / 2, c / 2);
    Ok(Measurement {
        image: full.slice(s![oy..oy + kr, ox..ox + kc]).to_owned(),
        sensor_pitch_um: field.sensor_pitch_um,
    })
}

/// Additive Gaussian noise with `sigma = level * max(y)`, clamped at zero.
pub fn add_gaussian_noise(meas: &Measurement, level_fraction: f64, seed: u64) -> Result<Measurement> {
    if !(level_fraction >= 0.0 && level_fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {level_fraction}")));
    }
    if level_fraction == 0.0 {
        return Ok(meas.clone());
    }
    let peak = meas.image.iter().cloned().fold(0.0, f64::max);
    let sigma = level_fraction * peak;
    if sigma == 0.0 {
        return Ok(meas.clone());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng::substream(seed, rng::NOISE);
    let image = meas.image.mapv(|v| (v + dist.sample(&mut rng)).max(0.0));
    Ok(Measurement {
        image,
        sensor_pitch_um: meas.sensor_pitch_um,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_stack(seed: u64, depths: usize, kr: usize, kc: usize) -> PsfStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Array3::from_shape_fn((depths, kr, kc), |_| rng.random::<f64>());
        PsfStack::new(k, (0..depths).map(|z| z as f64).collect(), 2.0).unwrap()
    }

    fn random_volume(seed: u64, shape: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.random::<f64>())
    }

    #[test]
    fn unit_voxel_reproduces_kernel() {
        let psfs = random_stack(1, 3, 9, 12);
        for &(vr, vc) in &[(5, 5), (6, 7), (1, 1)] {
            let mut x = Array3::<f64>::zeros((3, vr, vc));
            x[[1, vr / 2, vc / 2]] = 1.0;
            let op = ForwardModel::new(&psfs, (vr, vc)).unwrap();
            let y = op.forward(x.view()).unwrap();
            for (a, b) in y.iter().zip(psfs.kernel(1).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity_across_shapes() {
        for (i, &(d, vr, vc, kr, kc)) in [
            (1, 8, 8, 8, 8),
            (2, 5, 9, 7, 6),
            (3, 16, 4, 11, 13),
            (2, 1, 1, 5, 5),
            (4, 10, 12, 3, 20),
        ]
        .iter()
        .enumerate()
        {
            let psfs = random_stack(i as u64, d, kr, kc);
            let op = ForwardModel::new(&psfs, (vr, vc)).unwrap();
            let x = random_volume(100 + i as u64, (d, vr, vc));
            let mut rng = ChaCha8Rng::seed_from_u64(200 + i as u64);
            let y = Array2::from_shape_fn((kr, kc), |_| rng.random::<f64>() - 0.5);
            let lhs = (&op.forward(x.view()).unwrap() * &y).sum();
            let rhs = (&x * &op.adjoint(y.view()).unwrap()).sum();
            assert!(((lhs - rhs) / lhs.abs()).abs() < 1e-10, "{lhs} {rhs}");
        }
    }

    #[test]
    fn single_pixel_measurement_gives_flipped_kernels() {
        let psfs = random_stack(4, 2, 7, 7);
        let op = ForwardModel::new(&psfs, (7, 7)).unwrap();
        let mut y = Array2::<f64>::zeros((7, 7));
        y[[3, 3]] = 1.0;
        let a = op.adjoint(y.view()).unwrap();
        for z in 0..2 {
            for i in 0..7 {
                for j in 0..7 {
                    assert!((a[[z, i, j]] - psfs.kernel(z)[[6 - i, 6 - j]]).abs() < 1e-12);
                }
            }
        }
        let zero = op.adjoint(Array2::zeros((7, 7)).view()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blockwise_with_shared_kernel_matches_shift_invariant() {
        let psfs = random_stack(5, 1, 16, 16);
        let plane = random_volume(6, (1, 12, 12)).index_axis(Axis(0), 0).to_owned();
        let mut k = Array3::zeros((9, 16, 16));
        for b in 0..9 {
            k.index_axis_mut(Axis(0), b).assign(&psfs.kernel(0));
        }
        let field = PsfField {
            block_px: 4,
            blocks: (3, 3),
            kernels: k,
            sensor_pitch_um: 2.0,
        };
        let a = forward_project_blockwise(plane.view(), &field).unwrap();
        let vol = Volume::new(plane.clone().insert_axis(Axis(0)), 1.0, vec![0.0]).unwrap();
        let b = forward_project(&vol, &psfs).unwrap();
        for (x, y) in a.image.iter().zip(b.image.iter()) {
            assert!((x - y).abs() < 1e-9 * y.abs().max(1.0));
        }
        let short = PsfField {
            blocks: (2, 3),
            kernels: field.kernels.slice(s![..6, .., ..]).to_owned(),
            ..field
        };
        assert!(forward_project_blockwise(plane.view(), &short).is_err());
    }

    #[test]
    fn noise_statistics_and_clamping() {
        let img = Array2::from_elem((256, 256), 10.0);
        let m = Measurement {
            image: img,
            sensor_pitch_um: 2.0,
        };
        let n = add_gaussian_noise(&m, 0.05, 3).unwrap();
        let mean = n.image.mean().unwrap();
        let var = n.image.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!((var.sqrt() - 0.5).abs() / 0.5 < 0.02);
        assert_eq!(add_gaussian_noise(&m, 0.0, 3).unwrap(), m);
        let big = add_gaussian_noise(&m, 2.0, 3).unwrap();
        assert!(big.image.iter().all(|&v| v >= 0.0));
        assert_eq!(n, add_gaussian_noise(&m, 0.05, 3).unwrap());
    }
}
