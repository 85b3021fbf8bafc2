//! Small numerical kernels shared by the solvers: Gauss-Legendre quadrature,
//! classical RK4 on uniform grids, a tridiagonal solver and pairwise sums.

use crate::error::{numeric, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Roots are found by Newton iteration on the three-term Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite 8-point Gauss-Legendre on `[a, b]`, doubling the number of panels
/// until two successive estimates agree to `rel_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(8);
    let panel_sum = |panels: usize| -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            let s: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * f(mid + 0.5 * h * x))
                .sum();
            total += 0.5 * h * s;
        }
        total
    };
    let mut panels = 1;
    let mut prev = panel_sum(panels);
    for _ in 0..20 {
        panels *= 2;
        let next = panel_sum(panels);
        if !next.is_finite() {
            return numeric("quadrature produced a non-finite value");
        }
        if (next - prev).abs() <= rel_tol * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        prev = next;
    }
    numeric(format!("quadrature did not reach relative tolerance {rel_tol}"))
}

/// Uniform grid with `n` nodes on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    let h = horizon / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { horizon } else { i as f64 * h })
        .collect()
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

fn check_finite<const N: usize>(y: &[f64; N], node: usize, t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        numeric(format!("non-finite ODE state at grid node {node} (t = {t})"))
    }
}

/// Classical RK4 from the last grid node back to the first. Returns the state
/// at every node, in ascending time order.
pub fn rk4_backward<const N: usize>(
    grid: &[f64],
    terminal: [f64; N],
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> Result<Vec<[f64; N]>> {
    let n = grid.len();
    let mut out = vec![[0.0; N]; n];
    out[n - 1] = terminal;
    let mut y = terminal;
    for i in (0..n - 1).rev() {
        let t = grid[i + 1];
        let h = grid[i] - t;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        for j in 0..N {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        check_finite(&y, i, grid[i])?;
        out[i] = y;
    }
    Ok(out)
}

/// Classical RK4 from the first grid node forward.
pub fn rk4_forward<const N: usize>(
    grid: &[f64],
    initial: [f64; N],
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> Result<Vec<[f64; N]>> {
    let n = grid.len();
    let mut out = vec![[0.0; N]; n];
    out[0] = initial;
    let mut y = initial;
    for i in 0..n - 1 {
        let t = grid[i];
        let h = grid[i + 1] - t;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        for j in 0..N {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        check_finite(&y, i + 1, grid[i + 1])?;
        out[i + 1] = y;
    }
    Ok(out)
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. The right-hand side is overwritten with the
/// solution; `scratch` must have the same length.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) {
    let n = diag.len();
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
}

/// Pairwise summation in a fixed order, so the result does not depend on how
/// the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and (n-1)-normalised standard deviation. The deviation is
/// `None` for fewer than two values.
pub fn mean_and_stdev(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, Some((pairwise_sum(&sq) / (n - 1) as f64).sqrt()))
}
