//! Classical fourth-order Runge-Kutta with a fixed step.

use crate::error::Result;

/// One RK4 step of `y' = rhs(t, y)`.
pub fn rk4_step<F>(rhs: &F, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let axpy = |a: f64, x: &[f64]| -> Vec<f64> {
        y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
    };
    let k1 = rhs(t, y)?;
    let k2 = rhs(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = rhs(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = rhs(t + h, &axpy(h, &k3))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Number of equal steps covering `span` with steps no longer than `h`.
pub fn step_count(span: f64, h: f64) -> usize {
    ((span.abs() / h) - 1e-9).ceil().max(1.0) as usize
}

/// Integrate from `t0` to `t1` in `steps` equal steps, returning the state
/// at `t1`. `t1 < t0` integrates backwards.
pub fn integrate<F>(rhs: &F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    for s in 0..steps {
        y = rk4_step(rhs, t0 + h * s as f64, &y, h)?;
    }
    Ok(y)
}
