use fdscope::forward::ForwardModel;
use fdscope::recon::{
    admm_tv_model, richardson_lucy_model, tv_norm, RlNormalization, SolveStatus, SolverConfig, TvWeights,
};
use fdscope::wavesim::PsfStack;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_psfs(seed: u64, depths: usize, n: usize) -> PsfStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Array3::from_shape_fn((depths, n, n), |_| rng.random::<f64>());
    PsfStack::new(k, (0..depths).map(|z| z as f64).collect(), 1.0).unwrap()
}

fn dense_operator(op: &ForwardModel) -> DMatrix<f64> {
    let (nz, r, c) = op.volume_shape();
    let (mr, mc) = op.measurement_shape();
    let mut h = DMatrix::<f64>::zeros(mr * mc, nz * r * c);
    let mut e = Array3::<f64>::zeros((nz, r, c));
    for col in 0..nz * r * c {
        let idx = (col / (r * c), (col / c) % r, col % c);
        e[idx] = 1.0;
        let y = op.forward(e.view()).unwrap();
        for (row, v) in y.iter().enumerate() {
            h[(row, col)] = *v;
        }
        e[idx] = 0.0;
    }
    h
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Stack of sparse multi-spot kernels, a well-conditioned stand-in for
/// diffuser PSFs.
fn spot_psfs(seed: u64, depths: usize, n: usize, spots: usize) -> PsfStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = Array3::<f64>::zeros((depths, n, n));
    for z in 0..depths {
        for _ in 0..spots {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            k[[z, i, j]] += 0.5 + rng.random::<f64>();
        }
    }
    PsfStack::new(k, (0..depths).map(|z| z as f64).collect(), 1.0).unwrap()
}

#[test]
fn admm_without_regularization_matches_dense_normal_equations() {
    let psfs = spot_psfs(11, 3, 32, 8);
    let op = ForwardModel::new(&psfs, (16, 16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = Array3::from_shape_fn((3, 16, 16), |_| 0.5 + rng.random::<f64>());
    let mut y = op.forward(truth.view()).unwrap();
    let peak = y.iter().cloned().fold(0.0, f64::max);
    y.mapv_inplace(|v| v + 1e-3 * peak * (rng.random::<f64>() - 0.5));

    let h = dense_operator(&op);
    let yv = DVector::from_iterator(y.len(), y.iter().cloned());
    let ls = (h.transpose() * &h).cholesky().unwrap().solve(&(h.transpose() * yv));
    assert!(ls.iter().all(|&v| v > 0.0), "oracle must be interior");

    let cfg = SolverConfig {
        tau: 0.0,
        max_iters: 4000,
        tolerance: 0.0,
        admm_rho: 0.1,
        ..SolverConfig::default()
    };
    let r = admm_tv_model(&op, y.view(), &cfg).unwrap();
    let got: Vec<f64> = r.volume.iter().cloned().collect();
    let err = rel_err(&got, ls.as_slice());
    assert!(err <= 1e-4, "relative error {err}");
}

fn small_problem(seed: u64) -> (ForwardModel, Array2<f64>) {
    let psfs = spot_psfs(seed, 3, 24, 10);
    let op = ForwardModel::new(&psfs, (12, 12)).unwrap();
    let mut truth = Array3::<f64>::zeros((3, 12, 12));
    truth[[0, 3, 4]] = 1.0;
    truth[[1, 7, 8]] = 2.0;
    truth[[2, 5, 2]] = 1.5;
    for i in 8..11 {
        for j in 2..5 {
            truth[[1, i, j]] = 0.7;
        }
    }
    let y = op.forward(truth.view()).unwrap();
    (op, y)
}

#[test]
fn admm_objective_is_non_increasing_after_burn_in() {
    for seed in 0..3 {
        let (op, y) = small_problem(20 + seed);
        let cfg = SolverConfig {
            tau: 1e-3,
            max_iters: 60,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        let r = admm_tv_model(&op, y.view(), &cfg).unwrap();
        let obj: Vec<f64> = r.records.iter().map(|r| r.objective).collect();
        for w in obj[5..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "seed {seed}: {obj:?}");
        }
    }
}

#[test]
fn admm_residuals_shrink_and_long_run_agrees() {
    let (op, y) = small_problem(30);
    let cfg = SolverConfig {
        tau: 1e-3,
        max_iters: 150,
        tolerance: 0.0,
        ..SolverConfig::default()
    };
    let r = admm_tv_model(&op, y.view(), &cfg).unwrap();
    let first = r.records[0];
    let last = *r.records.last().unwrap();
    assert!(last.primal_residual < 1e-2 * first.primal_residual, "{first:?} {last:?}");
    assert!(last.dual_residual < 1e-2 * first.dual_residual.max(first.primal_residual), "{first:?} {last:?}");

    let long = admm_tv_model(
        &op,
        y.view(),
        &SolverConfig {
            max_iters: 1500,
            ..cfg.clone()
        },
    )
    .unwrap();
    let rel = (r.objective - long.objective).abs() / long.objective;
    assert!(rel < 1e-3, "{} vs {}", r.objective, long.objective);
}

#[test]
fn admm_stops_on_relative_objective_change() {
    let (op, y) = small_problem(31);
    let cfg = SolverConfig {
        tau: 1e-3,
        max_iters: 5000,
        tolerance: 1e-7,
        ..SolverConfig::default()
    };
    let r = admm_tv_model(&op, y.view(), &cfg).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert!(r.iterations < 5000);
}

#[test]
fn large_tau_flattens_the_volume() {
    let (op, y) = small_problem(40);
    let w = TvWeights::default();
    let back = op.adjoint(y.view()).unwrap();
    let cfg = SolverConfig {
        tau: 1e3,
        max_iters: 100,
        ..SolverConfig::default()
    };
    let r = admm_tv_model(&op, y.view(), &cfg).unwrap();
    let scale = back.iter().cloned().fold(0.0, f64::max) / r.volume.iter().cloned().fold(1e-300, f64::max);
    assert!(tv_norm(r.volume.view(), w) * scale < tv_norm(back.view(), w));
    let weak = admm_tv_model(
        &op,
        y.view(),
        &SolverConfig {
            tau: 1e-6,
            max_iters: 100,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    let tv_rel = |v: &Array3<f64>| tv_norm(v.view(), w) / v.sum().max(1e-300);
    assert!(tv_rel(&r.volume) < 0.5 * tv_rel(&weak.volume));
}

#[test]
fn unregularized_admm_fits_at_least_as_well_as_rl() {
    let psfs = random_psfs(50, 1, 24);
    let op = ForwardModel::new(&psfs, (12, 12)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let truth = Array3::from_shape_fn((1, 12, 12), |_| rng.random::<f64>());
    let y = op.forward(truth.view()).unwrap();
    let misfit = |x: &Array3<f64>| {
        let m = op.forward(x.view()).unwrap();
        m.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let rl = richardson_lucy_model(&op, y.view(), 8, RlNormalization::KernelSum).unwrap();
    let admm = admm_tv_model(
        &op,
        y.view(),
        &SolverConfig {
            tau: 0.0,
            max_iters: 200,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    assert!(misfit(&admm.volume) <= misfit(&rl.volume), "{} {}", misfit(&admm.volume), misfit(&rl.volume));
}

#[test]
fn rl_concentrates_on_the_true_depth() {
    let psfs = spot_psfs(60, 5, 16, 10);
    let op = ForwardModel::new(&psfs, (16, 16)).unwrap();
    let y = psfs.kernel(2).to_owned();
    let r = richardson_lucy_model(&op, y.view(), 8, RlNormalization::KernelSum).unwrap();
    let total = r.volume.sum();
    let near: f64 = (1..=3).map(|z| r.volume.index_axis(ndarray::Axis(0), z).sum()).sum();
    assert!(near >= 0.9 * total, "{near} of {total}");
}
