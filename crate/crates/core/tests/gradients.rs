//! Analytic updates against central differences of `|e|²`.
//!
//! Each update at `μ = 1` must equal `−½(∂J/∂Re θ + j·∂J/∂Im θ)` for every
//! parameter `θ`. `J` is recomputed from scratch through the forward path on
//! the window history, so the check covers indexing and the learning rule.

mod common;

use common::{cplx, cplx_vec, rel_err, sample_below, wirtinger_descent};
use rand::Rng;
use spline_dpd::learning::{mp_step, smp_step, sph_step, LearningConfig, SampleWindow};
use spline_dpd::models::{mp_basis, MpModel, SmpModel, SphModel};
use spline_dpd::numerics::ComplexMatrix;
use spline_dpd::spline::{MagnitudeMode, SplineConfig, SplineLut};
use spline_dpd::{Complex64, ComplexSignal};

const DRAWS: usize = 100;
const STEP: f64 = 1e-6;
const TOL: f64 = 1e-6;
/// With `J = O(1)` and a step of 1e-6 the differences carry about 1e-9 of
/// rounding, so components smaller than this are judged on an absolute
/// scale of `TOL·FLOOR`.
const FLOOR: f64 = 1e-2;

fn unit_steps() -> LearningConfig {
    LearningConfig {
        mu_h: 1.0,
        mu_c: 1.0,
        mu_q: 1.0,
        mu_w: 1.0,
        ..LearningConfig::default()
    }
}

fn random_config(r: &mut impl Rng) -> SplineConfig {
    // Δ is chosen so that A_max stays O(1) and |e|² is not dominated by
    // the input scale, which would swamp the differences in rounding.
    let order = r.random_range(1..=3);
    let q: usize = r.random_range(5..=12);
    let a_max = r.random_range(0.5..2.0);
    let cfg = SplineConfig::with_control_points(order, a_max / (q - order) as f64, q).unwrap();
    if r.random_bool(0.3) {
        cfg.with_magnitude(MagnitudeMode::AlphaMaxBetaMin)
    } else {
        cfg
    }
}

/// History newest first and the same samples as a chronological signal.
fn history(r: &mut impl Rng, len: usize, a_max: f64) -> (Vec<Complex64>, ComplexSignal) {
    let h: Vec<Complex64> = (0..len).map(|_| sample_below(r, a_max)).collect();
    let chrono: Vec<Complex64> = h.iter().rev().copied().collect();
    (h, ComplexSignal::new(chrono, 1.0).unwrap())
}

fn last(sig: &ComplexSignal) -> Complex64 {
    *sig.samples.last().unwrap()
}

#[test]
fn sph_updates_are_descent_directions() {
    let mut r = common::rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..DRAWS {
        let cfg = random_config(&mut r);
        let m = r.random_range(1..=4);
        let lut = SplineLut::new(cfg, cplx_vec(&mut r, cfg.num_control_points(), 0.3)).unwrap();
        let model = SphModel::new(lut, cplx_vec(&mut r, m, 1.0)).unwrap();
        let (hist, sig) = history(&mut r, m, cfg.a_max());
        let x = cplx(&mut r, cfg.a_max());

        let mut updated = model.clone();
        let window = SampleWindow::from_history(cfg, &hist).unwrap();
        let e = sph_step(&mut updated, &window, x, &unit_steps()).unwrap();
        assert!((e - (x - last(&model.forward(&sig)))).norm() < 1e-12);

        for k in 0..m {
            let fd = wirtinger_descent(
                |d| {
                    let mut p = model.clone();
                    p.taps[k] += d;
                    x - last(&p.forward(&sig))
                },
                STEP,
            );
            let err = rel_err(updated.taps[k] - model.taps[k], fd, FLOOR);
            worst = worst.max(err);
            assert!(err < TOL, "h[{k}]: {err:e}");
        }
        for j in 0..cfg.num_control_points() {
            let fd = wirtinger_descent(
                |d| {
                    let mut p = model.clone();
                    p.lut.control_points_mut()[j] += d;
                    x - last(&p.forward(&sig))
                },
                STEP,
            );
            let analytic = updated.lut.control_points()[j] - model.lut.control_points()[j];
            let err = rel_err(analytic, fd, FLOOR);
            worst = worst.max(err);
            assert!(err < TOL, "c[{j}]: {err:e}");
        }
    }
    println!("SPH worst relative error {worst:.2e}");
}

#[test]
fn smp_updates_are_descent_directions() {
    let mut r = common::rng(12);
    for _ in 0..DRAWS {
        let cfg = random_config(&mut r);
        let m = r.random_range(1..=5);
        let luts = (0..m)
            .map(|_| SplineLut::new(cfg, cplx_vec(&mut r, cfg.num_control_points(), 0.3)).unwrap())
            .collect();
        let model = SmpModel::new(luts).unwrap();
        let (hist, sig) = history(&mut r, m, cfg.a_max());
        let x = cplx(&mut r, cfg.a_max());

        let mut updated = model.clone();
        let window = SampleWindow::from_history(cfg, &hist).unwrap();
        let e = smp_step(&mut updated, &window, x, &unit_steps()).unwrap();
        assert!((e - (x - last(&model.forward(&sig)))).norm() < 1e-12);

        for branch in 0..m {
            for j in 0..cfg.num_control_points() {
                let fd = wirtinger_descent(
                    |d| {
                        let mut p = model.clone();
                        p.lut_mut(branch).control_points_mut()[j] += d;
                        x - last(&p.forward(&sig))
                    },
                    STEP,
                );
                let analytic = updated.luts()[branch].control_points()[j]
                    - model.luts()[branch].control_points()[j];
                let err = rel_err(analytic, fd, FLOOR);
                assert!(err < TOL, "q[{branch}][{j}]: {err:e}");
            }
        }
    }
}

/// Random Hermitian positive definite matrix `AᴴA + I`.
fn random_spd(r: &mut impl Rng, n: usize) -> ComplexMatrix {
    let a = cplx_vec(r, n * n, 0.5);
    let mut out = ComplexMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v: Complex64 = (0..n).map(|k| a[k * n + i].conj() * a[k * n + j]).sum();
            out.set(i, j, out.get(i, j) + v);
        }
    }
    out
}

#[test]
fn mp_updates_are_preconditioned_descent_directions() {
    let mut r = common::rng(13);
    for draw in 0..DRAWS {
        let order = [1, 3, 5, 7][r.random_range(0..4)];
        let m = r.random_range(1..=4);
        let n = spline_dpd::models::mp_coefficient_count(order, m);
        let model = MpModel::new(order, m, cplx_vec(&mut r, n, 0.3)).unwrap();
        let (_, sig) = history(&mut r, m, 1.2);
        let x = cplx(&mut r, 1.0);
        let basis = mp_basis(&sig, order, m).unwrap().pop().unwrap();
        // Half the draws use plain LMS, the rest a random preconditioner.
        let r_inv = if draw % 2 == 0 {
            ComplexMatrix::identity(n)
        } else {
            random_spd(&mut r, n)
        };

        let mut updated = model.clone();
        let e = mp_step(&mut updated, &basis, x, &r_inv, &unit_steps()).unwrap();
        assert!((e - (x - last(&model.forward(&sig)))).norm() < 1e-12);

        let grad: Vec<Complex64> = (0..n)
            .map(|i| {
                wirtinger_descent(
                    |d| {
                        let mut p = model.clone();
                        p.weights[i] += d;
                        x - last(&p.forward(&sig))
                    },
                    STEP,
                )
            })
            .collect();
        let expected = r_inv.mul_vec(&grad);
        for i in 0..n {
            let err = rel_err(updated.weights[i] - model.weights[i], expected[i], FLOOR);
            assert!(err < TOL, "w[{i}]: {err:e}");
        }
    }
}
