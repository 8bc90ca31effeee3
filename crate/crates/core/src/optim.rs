//! Small optimizers used by the fits: Levenberg–Marquardt for the smooth
//! low-dimensional curve fits and Nelder–Mead for the knot search, whose
//! objective is only piecewise smooth.

use nalgebra::{DMatrix, DVector};

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Initial simplex edge, relative to each coordinate (absolute when the
    /// coordinate is zero).
    pub initial_step: f64,
    pub max_evaluations: usize,
    /// Spread of function values across the simplex at which a run stops.
    pub f_tolerance: f64,
    /// Largest vertex distance from the best vertex at which a run stops.
    pub x_tolerance: f64,
    /// Extra runs restarted from the best point with a fresh simplex.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            max_evaluations: 200_000,
            f_tolerance: 1e-14,
            x_tolerance: 1e-10,
            restarts: 4,
        }
    }
}

/// Nelder–Mead with dimension-adaptive coefficients and restarts.
///
/// The best vertex is only ever replaced by a strictly better point, so a
/// start at a global minimum is returned unchanged.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let dim = n.max(1) as f64;
    let alpha = 1.0;
    let gamma = 1.0 + 2.0 / dim;
    let rho = 0.75 - 1.0 / (2.0 * dim);
    let sigma = 1.0 - 1.0 / dim;

    let mut evals = 0usize;
    let mut iterations = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_f = eval(&best_x, &mut evals);
    let mut converged = false;

    for run in 0..=opts.restarts {
        if n == 0 {
            converged = true;
            break;
        }
        let start_f = best_f;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..n {
            let mut x = best_x.clone();
            let step = if x[i] != 0.0 {
                opts.initial_step * x[i].abs()
            } else {
                opts.initial_step
            };
            x[i] += step;
            let fx = eval(&x, &mut evals);
            simplex.push((x, fx));
        }
        let mut run_converged = false;
        loop {
            // stable sort: ties keep their previous order, so the incumbent
            // best stays first
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (fb, fw) = (simplex[0].1, simplex[n].1);
            let spread = fw - fb;
            let size = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= opts.f_tolerance * (1.0 + fb.abs()) || size <= opts.x_tolerance {
                run_converged = true;
                break;
            }
            if evals >= opts.max_evaluations {
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / dim;
                }
            }
            let toward = |t: f64, worst: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let worst = simplex[n].0.clone();
            let xr = toward(alpha, &worst);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = toward(gamma, &worst);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < fw {
                    let xc = toward(alpha * rho, &worst);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = toward(-rho, &worst);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < fr.min(fw) {
                    simplex[n] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best) {
                            *xi = bi + sigma * (*xi - bi);
                        }
                        *fx = eval(x, &mut evals);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best_f {
            best_x = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        converged = run_converged;
        log::debug!("nelder-mead run {run}: f = {best_f:e}, evaluations = {evals}");
        let improved = start_f - best_f > opts.f_tolerance * (1.0 + best_f.abs());
        if evals >= opts.max_evaluations || (run > 0 && !improved) {
            break;
        }
    }

    Minimum {
        x: best_x,
        value: best_f,
        evaluations: evals,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevenbergMarquardtOptions {
    pub max_iterations: usize,
    /// Converged once an accepted step satisfies ‖Δp‖ ≤ tol · (‖p‖ + tol).
    pub step_tolerance: f64,
}

impl Default for LevenbergMarquardtOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-10,
        }
    }
}

/// Damped Gauss–Newton on `Σ r_i(p)²`.
///
/// `residuals` returns the residual vector and `jacobian` its derivative
/// (one row per residual). Both must have a fixed length.
pub fn levenberg_marquardt<R, J>(
    residuals: R,
    jacobian: J,
    p0: &[f64],
    opts: &LevenbergMarquardtOptions,
) -> Minimum
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let mut c = cost(&r);
    let mut evals = 1;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if c == 0.0 {
            converged = true;
            break;
        }
        let jac = jacobian(&p);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let tr = residuals(&trial);
            evals += 1;
            let tc = cost(&tr);
            if tc.is_finite() && tc <= c {
                let step_norm = step.norm();
                let p_norm = trial.iter().map(|x| x * x).sum::<f64>().sqrt();
                p = trial;
                r = tr;
                let reduced = tc < c;
                c = tc;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if step_norm <= opts.step_tolerance * (p_norm + opts.step_tolerance) || !reduced {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    Minimum {
        x: p,
        value: c,
        evaluations: evals,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(rosen, &[-1.2, 1.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6,
            "{m:?}"
        );
    }

    #[test]
    fn nelder_mead_high_dimensional_quadratic() {
        let target: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (1.0 + i as f64) * (a - b).powi(2))
                .sum::<f64>()
        };
        let m = nelder_mead(f, &[0.5; 20], &NelderMeadOptions::default());
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn nelder_mead_keeps_optimal_start() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 2.0).powi(2)).sum::<f64>();
        let m = nelder_mead(f, &[2.0, 2.0, 2.0], &NelderMeadOptions::default());
        assert_eq!(m.x, vec![2.0, 2.0, 2.0]);
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn lm_fits_exponential() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-1.3 * x).exp() + 0.5).collect();
        let res = |p: &[f64]| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| p[0] * (p[1] * x).exp() + p[2] - y)
                .collect::<Vec<_>>()
        };
        let jac = |p: &[f64]| {
            DMatrix::from_fn(xs.len(), 3, |i, j| match j {
                0 => (p[1] * xs[i]).exp(),
                1 => p[0] * xs[i] * (p[1] * xs[i]).exp(),
                _ => 1.0,
            })
        };
        let m = levenberg_marquardt(res, jac, &[1.0, -0.5, 0.0], &Default::default());
        assert!(m.converged);
        assert!(
            (m.x[0] - 3.0).abs() < 1e-8
                && (m.x[1] + 1.3).abs() < 1e-8
                && (m.x[2] - 0.5).abs() < 1e-8
        );
    }
}
