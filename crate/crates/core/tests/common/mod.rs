#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spline_dpd::spline::SplineConfig;
use spline_dpd::Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cplx(rng: &mut impl Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
}

pub fn cplx_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Complex64> {
    (0..n).map(|_| cplx(rng, scale)).collect()
}

/// Complex sample with magnitude uniform in `[0, a_max)`.
pub fn sample_below(rng: &mut impl Rng, a_max: f64) -> Complex64 {
    let r = rng.random_range(0.0..a_max);
    Complex64::from_polar(
        r,
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// Cox–de Boor recursion for `N_{j,p}(x)` on the uniform knots
/// `t_k = (k − shift)·Δ`.
pub fn cox_de_boor(j: usize, p: usize, shift: usize, delta: f64, x: f64) -> f64 {
    let t = |k: usize| (k as f64 - shift as f64) * delta;
    if p == 0 {
        return if t(j) <= x && x < t(j + 1) { 1.0 } else { 0.0 };
    }
    let left = (x - t(j)) / (t(j + p) - t(j)) * cox_de_boor(j, p - 1, shift, delta, x);
    let right =
        (t(j + p + 1) - x) / (t(j + p + 1) - t(j + 1)) * cox_de_boor(j + 1, p - 1, shift, delta, x);
    left + right
}

/// Dense weights of all `Q` control points at magnitude `x`, from the
/// recursion. Control point `j` carries `N_{j,P}` with knots shifted by `P`.
pub fn oracle_weights(cfg: &SplineConfig, x: f64) -> Vec<f64> {
    (0..cfg.num_control_points())
        .map(|j| cox_de_boor(j, cfg.order, cfg.order, cfg.knot_spacing, x))
        .collect()
}

/// Basis matrix reconstructed from the recursion: for a span well inside
/// the knot vector, fit each local weight as a degree-`P` polynomial in `u`.
/// Row `r` holds the coefficients of `u^(P−r)`.
pub fn oracle_basis_matrix(order: usize, delta: f64) -> Vec<Vec<f64>> {
    let span = order;
    let nodes: Vec<f64> = (0..=order)
        .map(|k| delta * (k as f64 + 0.5) / (order as f64 + 1.0))
        .collect();
    let mut out = vec![vec![0.0; order + 1]; order + 1];
    for i in 0..=order {
        let values: Vec<f64> = nodes
            .iter()
            .map(|u| cox_de_boor(span + i, order, order, delta, span as f64 * delta + u))
            .collect();
        let coeffs = fit_polynomial(&nodes, &values);
        for (power, c) in coeffs.iter().enumerate() {
            out[order - power][i] = *c;
        }
    }
    out
}

/// Coefficients `a_0..a_n` of the interpolating polynomial, lowest power first.
fn fit_polynomial(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut a: Vec<Vec<f64>> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let mut row: Vec<f64> = (0..n).map(|k| xi.powi(k as i32)).collect();
            row.push(*yi);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// `−½(∂J/∂Re θ + j·∂J/∂Im θ)` for `J = |e|²` by central differences,
/// where `e(d)` is the error with `θ` perturbed by `d`.
///
/// The difference `J(+h) − J(−h)` is formed as `Re((e₊ − e₋)·conj(e₊ + e₋))`,
/// which is the same quantity without cancelling two nearly equal squares.
pub fn wirtinger_descent(e: impl Fn(Complex64) -> Complex64, step: f64) -> Complex64 {
    let diff = |d: Complex64| {
        let (p, m) = (e(d), e(-d));
        ((p - m) * (p + m).conj()).re / (2.0 * step)
    };
    -0.5 * Complex64::new(
        diff(Complex64::new(step, 0.0)),
        diff(Complex64::new(0.0, step)),
    )
}

/// Relative error with a floor on the denominator, so components that are
/// zero analytically are judged on an absolute scale.
pub fn rel_err(analytic: Complex64, numeric: Complex64, floor: f64) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(floor)
}
