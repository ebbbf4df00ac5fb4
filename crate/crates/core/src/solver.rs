//! Box-constrained local minimizer (SQP with a damped BFGS Hessian and an
//! active-set QP subproblem) plus a low-discrepancy multi-start driver.
//!
//! Variables live in the unit box `[0, 1]^n`; callers map them onto their
//! own bounds. Gradients are central finite differences, one-sided at the
//! box faces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Stopping rules for one local run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Projected-gradient tolerance, relative to `max(1, |f|)`.
    pub gtol: f64,
    /// Relative decrease below which an iteration counts as stalled.
    pub ftol: f64,
    /// Finite-difference step in unit coordinates.
    pub fd_step: f64,
    /// Number of multi-start points.
    pub starts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 200, gtol: 1e-7, ftol: 1e-12, fd_step: 1e-6, starts: 16 }
    }
}

/// Outcome of one local run.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let xi = x[i];
        let up = (xi + h).min(1.0);
        let down = (xi - h).max(0.0);
        probe[i] = up;
        let fu = f(&probe);
        probe[i] = down;
        let fd = f(&probe);
        probe[i] = xi;
        g[i] = if fu.is_finite() && fd.is_finite() && up > down {
            (fu - fd) / (up - down)
        } else if fu.is_finite() && up > xi {
            (fu - fx) / (up - xi)
        } else if fd.is_finite() && xi > down {
            (fx - fd) / (xi - down)
        } else {
            0.0
        };
    }
    g
}

fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| ((xi - gi).clamp(0.0, 1.0) - xi).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, PartialEq)]
enum Active {
    Free,
    Lower,
    Upper,
    Pinned,
}

/// Minimizes `gᵀd + ½ dᵀBd` subject to `lo ≤ d ≤ hi` (with `lo ≤ 0 ≤ hi`)
/// by a primal active-set method started from `d = 0`.
pub fn box_qp(b: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let mut d = DVector::zeros(n);
    let mut state: Vec<Active> = (0..n)
        .map(|i| {
            if hi[i] - lo[i] <= 0.0 {
                Active::Pinned
            } else if lo[i] >= 0.0 && g[i] > 0.0 {
                Active::Lower
            } else if hi[i] <= 0.0 && g[i] < 0.0 {
                Active::Upper
            } else {
                Active::Free
            }
        })
        .collect();

    for _ in 0..(10 * n + 20) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Active::Free).collect();
        if !free.is_empty() {
            let nf = free.len();
            let mut bff = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (a, &i) in free.iter().enumerate() {
                let mut r = -g[i];
                for j in 0..n {
                    if state[j] != Active::Free {
                        r -= b[(i, j)] * d[j];
                    }
                }
                rhs[a] = r;
                for (c, &j) in free.iter().enumerate() {
                    bff[(a, c)] = b[(i, j)];
                }
            }
            let target = solve_spd(bff, rhs);
            let mut alpha = 1.0_f64;
            let mut blocking = None;
            for (a, &i) in free.iter().enumerate() {
                let step = target[a] - d[i];
                if step > 0.0 && d[i] + step > hi[i] {
                    let t = (hi[i] - d[i]) / step;
                    if t < alpha {
                        alpha = t;
                        blocking = Some((i, Active::Upper));
                    }
                } else if step < 0.0 && d[i] + step < lo[i] {
                    let t = (lo[i] - d[i]) / step;
                    if t < alpha {
                        alpha = t;
                        blocking = Some((i, Active::Lower));
                    }
                }
            }
            let alpha = alpha.max(0.0);
            for (a, &i) in free.iter().enumerate() {
                d[i] += alpha * (target[a] - d[i]);
            }
            if let Some((i, side)) = blocking {
                d[i] = if side == Active::Upper { hi[i] } else { lo[i] };
                state[i] = side;
                continue;
            }
        }
        let grad = g + b * &d;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match state[i] {
                Active::Lower => -grad[i],
                Active::Upper => grad[i],
                _ => 0.0,
            };
            if violation > 1e-14 && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((i, violation));
            }
        }
        match worst {
            Some((i, _)) => state[i] = Active::Free,
            None => break,
        }
    }
    d
}

fn solve_spd(m: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.solve(&rhs);
    }
    let scale = m.diagonal().abs().max().max(1.0);
    let mut reg = 1e-10 * scale;
    loop {
        let shifted = &m + DMatrix::identity(m.nrows(), m.ncols()) * reg;
        if let Some(ch) = shifted.cholesky() {
            return ch.solve(&rhs);
        }
        reg *= 10.0;
    }
}

/// Powell-damped BFGS update keeping `b` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 1e-300 {
        return;
    }
    let sy = s.dot(y);
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    };
    let sr = s.dot(&r);
    if sr <= 1e-300 {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

/// Local minimization of `f` over the unit box starting from `x0`.
pub fn minimize_box(f: &impl Fn(&[f64]) -> f64, x0: &[f64], opts: &SolverOptions) -> LocalResult {
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut fx = f(&x);
    if n == 0 || !fx.is_finite() {
        return LocalResult { x, fx, iterations: 0, converged: n == 0 && fx.is_finite() };
    }
    let mut g = gradient(f, &x, fx, opts.fd_step);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut stalls = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let scale = fx.abs().max(1.0);
        if projected_gradient_norm(&x, &g) <= opts.gtol * scale {
            converged = true;
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let lo = DVector::from_iterator(n, x.iter().map(|v| -v));
        let hi = DVector::from_iterator(n, x.iter().map(|v| 1.0 - v));
        let mut d = box_qp(&b, &gv, &lo, &hi);
        let mut slope = gv.dot(&d);
        if !(slope < 0.0) {
            b = DMatrix::identity(n, n);
            d = box_qp(&b, &gv, &lo, &hi);
            slope = gv.dot(&d);
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let trial: Vec<f64> = x
                .iter()
                .zip(d.iter())
                .map(|(&xi, &di)| (xi + alpha * di).clamp(0.0, 1.0))
                .collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if b != DMatrix::identity(n, n) {
                b = DMatrix::identity(n, n);
                continue;
            }
            converged = projected_gradient_norm(&x, &g) <= 1e3 * opts.gtol * scale;
            break;
        };

        let g_new = gradient(f, &x_new, f_new, opts.fd_step);
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g_new.iter().zip(&g).map(|(a, b)| a - b));
        bfgs_update(&mut b, &s, &y);

        let decrease = fx - f_new;
        let step = s.amax();
        x = x_new;
        fx = f_new;
        g = g_new;
        if step < 1e-12 {
            converged = true;
            break;
        }
        if decrease <= opts.ftol * fx.abs().max(1.0) {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    LocalResult { x, fx, iterations, converged }
}

/// Start points for `starts` local runs: a scrambled Sobol sequence over the
/// unit box. Coordinates given in `fixed` override the sampled value.
pub fn start_points(dim: usize, starts: usize, seed: u64, fixed: &[Option<f64>]) -> Vec<Vec<f64>> {
    let seed32 = (seed ^ (seed >> 32)) as u32;
    (0..starts)
        .map(|s| {
            (0..dim)
                .map(|d| match fixed.get(d).copied().flatten() {
                    Some(v) => v,
                    None => f64::from(sobol_burley::sample(s as u32, (d % 256) as u32, seed32.wrapping_add((d / 256) as u32))),
                })
                .collect()
        })
        .collect()
}

/// Runs [`minimize_box`] from every start point and returns all local results
/// in start order.
pub fn multistart(
    f: &impl Fn(&[f64]) -> f64,
    dim: usize,
    seed: u64,
    fixed: &[Option<f64>],
    opts: &SolverOptions,
) -> Vec<LocalResult> {
    start_points(dim, opts.starts.max(1), seed, fixed)
        .iter()
        .map(|x0| minimize_box(f, x0, opts))
        .collect()
}
