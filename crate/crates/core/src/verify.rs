//! Numerical verification independent of the symbolic bracket path: finite
//! difference quotient brackets, closed-loop simulation and the
//! leaf-quotient trajectory test.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{AffineSystem, PointwiseSystem};
use crate::grid::GridSpec;
use crate::invariance::BracketTable;
use crate::ode;

pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const DEFAULT_ODE_STEP: f64 = 1e-3;

/// Maxima over grid nodes and leaf axes of `‖π([∂j, X])‖`.
#[derive(Clone, Debug, Serialize)]
pub struct BracketResiduals {
    pub drift: f64,
    pub controls: Vec<f64>,
    pub max: f64,
    pub worst_node: usize,
    pub fd_step: f64,
}

impl BracketResiduals {
    fn from_nodes(per_node: Vec<(f64, Vec<f64>)>, m: usize, fd_step: f64) -> Self {
        let mut drift: f64 = 0.0;
        let mut controls = vec![0.0_f64; m];
        let mut worst = (0, -1.0);
        for (flat, (d, c)) in per_node.iter().enumerate() {
            drift = drift.max(*d);
            let mut here = *d;
            for (acc, v) in controls.iter_mut().zip(c) {
                *acc = acc.max(*v);
                here = here.max(*v);
            }
            if here > worst.1 {
                worst = (flat, here);
            }
        }
        let max = controls.iter().copied().fold(drift, f64::max);
        BracketResiduals {
            drift,
            controls,
            max,
            worst_node: worst.0,
            fd_step,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences along leaf axis `axis` of the quotient components of
/// the drift and every control at `q`.
pub fn quotient_derivative(
    system: &dyn PointwiseSystem,
    q: &[f64],
    axis: usize,
    h: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let k = system.chart().k();
    let mut plus = q.to_vec();
    plus[axis] += h;
    let mut minus = q.to_vec();
    minus[axis] -= h;
    let (fp, gp) = system.fields_at(&plus)?;
    let (fm, gm) = system.fields_at(&minus)?;
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a[k..].iter().zip(&b[k..]).map(|(x, y)| (x - y) / (2.0 * h)).collect()
    };
    Ok((
        diff(&fp, &fm),
        gp.iter().zip(&gm).map(|(a, b)| diff(a, b)).collect(),
    ))
}

pub fn bracket_residuals(
    system: &dyn PointwiseSystem,
    grid: &GridSpec,
    h: f64,
) -> Result<BracketResiduals> {
    let points: Vec<Vec<f64>> = grid.nodes().collect();
    bracket_residuals_at(system, &points, h)
}

/// As [`bracket_residuals`] over an explicit point set; `worst_node` indexes
/// `points`.
pub fn bracket_residuals_at(
    system: &dyn PointwiseSystem,
    points: &[Vec<f64>],
    h: f64,
) -> Result<BracketResiduals> {
    if !(h > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let k = system.chart().k();
    let m = system.num_controls();
    let per_node = points
        .par_iter()
        .map(|q| {
            let mut d: f64 = 0.0;
            let mut c = vec![0.0_f64; m];
            for axis in 0..k {
                let (df, dg) = quotient_derivative(system, q, axis, h)?;
                d = d.max(norm(&df));
                for (acc, v) in c.iter_mut().zip(&dg) {
                    *acc = acc.max(norm(v));
                }
            }
            Ok((d, c))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BracketResiduals::from_nodes(per_node, m, h))
}

/// The same maxima from the symbolic quotient brackets.
pub fn symbolic_bracket_residuals(system: &AffineSystem, grid: &GridSpec) -> Result<BracketResiduals> {
    let table = BracketTable::new(system)?;
    let k = system.chart().k();
    let m = system.m();
    let per_node = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let q = grid.node(flat);
            let mut d: f64 = 0.0;
            let mut c = vec![0.0_f64; m];
            for axis in 0..k {
                d = d.max(norm(&table.d_drift(axis).eval(&q)?));
                for (j, acc) in c.iter_mut().enumerate() {
                    *acc = acc.max(norm(&table.d_control(axis, j).eval(&q)?));
                }
            }
            Ok((d, c))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BracketResiduals::from_nodes(per_node, m, 0.0))
}

/// `|D_h - D_{h/2}| / |D_{h/2} - D_{h/4}|` for the drift's quotient
/// derivative at `q`; close to 4 for a second-order difference.
pub fn fd_convergence_ratio(
    system: &dyn PointwiseSystem,
    q: &[f64],
    axis: usize,
    h: f64,
) -> Result<f64> {
    let d = |s: f64| quotient_derivative(system, q, axis, s).map(|r| r.0);
    let (a, b, c) = (d(h)?, d(h / 2.0)?, d(h / 4.0)?);
    let e1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let e2: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x - y).collect();
    Ok(norm(&e1) / norm(&e2))
}

/// A control signal constant on consecutive intervals of length `dt`; the
/// last value holds beyond the end.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseConstant {
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

impl PiecewiseConstant {
    pub fn constant(u: Vec<f64>) -> Self {
        PiecewiseConstant {
            dt: f64::INFINITY,
            values: vec![u],
        }
    }

    pub fn zero(m: usize) -> Self {
        Self::constant(vec![0.0; m])
    }

    /// Uniform values in `[-amplitude, amplitude]`, reproducible from `seed`.
    pub fn random(m: usize, pieces: usize, dt: f64, amplitude: f64, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let values = (0..pieces.max(1))
            .map(|_| {
                (0..m)
                    .map(|_| rng.random_range(-amplitude..=amplitude))
                    .collect()
            })
            .collect();
        PiecewiseConstant { dt, values }
    }

    pub fn m(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let i = if self.dt.is_finite() {
            ((t / self.dt) + 1e-9).floor().max(0.0) as usize
        } else {
            0
        };
        &self.values[i.min(self.values.len() - 1)]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub h: f64,
    /// The state left the chart box and integration stopped.
    pub truncated: bool,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }
}

/// Fixed-step RK4 of `ẋ = f(x) + Σ g_i(x) u_i(t)`, with `u` held over each
/// step at its value at the step start.
pub fn simulate(
    system: &dyn PointwiseSystem,
    u: &PiecewiseConstant,
    x0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<Trajectory> {
    let chart = system.chart();
    if !(h > 0.0) {
        return Err(Error::Input(format!("integrator step must be positive, got {h}")));
    }
    if !(horizon >= 0.0) {
        return Err(Error::Input(format!("horizon must be non-negative, got {horizon}")));
    }
    if !chart.contains(x0, 0.0) {
        return Err(Error::Input(format!("initial point {x0:?} lies outside the chart box")));
    }
    if u.m() != system.num_controls() {
        return Err(Error::Dimension {
            expected: system.num_controls(),
            found: u.m(),
            context: "control signal width",
        });
    }
    let steps = if horizon == 0.0 { 0 } else { ode::step_count(horizon, h) };
    let step = if steps == 0 { h } else { horizon / steps as f64 };
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        h: step,
        truncated: false,
    };
    let mut x = x0.to_vec();
    for s in 0..steps {
        let t = step * s as f64;
        let us = u.at(t);
        let rhs = |_t: f64, y: &[f64]| system.velocity(y, us);
        x = ode::rk4_step(&rhs, t, &x, step)?;
        if !chart.contains(&x, 1e-12) {
            traj.truncated = true;
            break;
        }
        traj.times.push(if s + 1 == steps { horizon } else { t + step });
        traj.states.push(x.clone());
    }
    Ok(traj)
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafTest {
    /// `max_t ‖x_{k+1..n}(t) - x'_{k+1..n}(t)‖`.
    pub deviation: f64,
    pub first: Trajectory,
    pub second: Trajectory,
    pub truncated: bool,
}

/// Simulate from two points of the same leaf and compare transversal
/// coordinates.
pub fn leaf_invariance_test(
    system: &dyn PointwiseSystem,
    x0: &[f64],
    x0p: &[f64],
    u: &PiecewiseConstant,
    horizon: f64,
    h: f64,
) -> Result<LeafTest> {
    let k = system.chart().k();
    if x0.len() != x0p.len() || x0[k..] != x0p[k..] {
        return Err(Error::Input(
            "leaf test start points must share their transversal coordinates".into(),
        ));
    }
    let (a, b) = rayon::join(
        || simulate(system, u, x0, horizon, h),
        || simulate(system, u, x0p, horizon, h),
    );
    let (first, second) = (a?, b?);
    let deviation = first
        .states
        .iter()
        .zip(&second.states)
        .map(|(p, q)| {
            p[k..]
                .iter()
                .zip(&q[k..])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    Ok(LeafTest {
        deviation,
        truncated: first.truncated || second.truncated,
        first,
        second,
    })
}

/// Verification summary for a transformed system.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub residuals: BracketResiduals,
    pub leaf_deviation: Option<f64>,
    pub fd_convergence_ratio: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ChartSpec, VectorFieldExpr};

    fn sys(n: usize, k: usize, bounds: &[(f64, f64)], f: &[&str], gs: &[&[&str]]) -> AffineSystem {
        AffineSystem::new(
            ChartSpec::new(n, k, bounds).unwrap(),
            VectorFieldExpr::parse(f, n).unwrap(),
            gs.iter().map(|g| VectorFieldExpr::parse(g, n).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parallel_drift_has_no_residual() {
        let s = sys(3, 2, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 5.0)], &["0", "0", "x3"], &[&["0", "0", "1"]]);
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let r = bracket_residuals(&s, &grid, DEFAULT_FD_STEP).unwrap();
        assert!(r.max <= 1e-9);
    }

    #[test]
    fn running_drift_residual_scale() {
        let s = sys(
            3,
            2,
            &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 5.0)],
            &["0", "0", "x1*x2 + x3"],
            &[&["0", "0", "1 + x1^2"]],
        );
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let r = bracket_residuals(&s, &grid, DEFAULT_FD_STEP).unwrap();
        // ∂1 π(f) = x2 and ∂2 π(f) = x1, both peaking at 1 on the box
        assert!((r.drift - 1.0).abs() < 1e-8);
        assert!((r.controls[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn simulate_constant_and_linear_fields() {
        let s = sys(2, 1, &[(-2.0, 2.0); 2], &["1", "0"], &[]);
        let t = simulate(&s, &PiecewiseConstant::zero(0), &[0.0, 0.0], 1.0, 0.01).unwrap();
        assert!((t.last()[0] - 1.0).abs() < 1e-10 && t.last()[1].abs() < 1e-12);
        assert!(!t.truncated);
        let s = sys(2, 1, &[(-3.0, 3.0); 2], &["x1", "0"], &[]);
        let t = simulate(&s, &PiecewiseConstant::zero(0), &[1.0, 0.0], 1.0, 1e-3).unwrap();
        assert!((t.last()[0] - std::f64::consts::E).abs() < 1e-8);
        let t = simulate(&s, &PiecewiseConstant::zero(0), &[1.0, 0.0], 2.0, 1e-3).unwrap();
        assert!(t.truncated);
        assert!(t.last()[0] <= 3.0);
    }

    #[test]
    fn leaf_test_start_points_must_share_a_leaf() {
        let s = sys(3, 2, &[(-1.0, 1.0); 3], &["0", "0", "x3"], &[]);
        let u = PiecewiseConstant::zero(0);
        assert!(leaf_invariance_test(&s, &[0.0, 0.0, 0.1], &[0.0, 0.0, 0.2], &u, 1.0, 1e-2).is_err());
    }

    #[test]
    fn random_signals_are_reproducible() {
        let a = PiecewiseConstant::random(2, 4, 0.25, 1.0, 7);
        let b = PiecewiseConstant::random(2, 4, 0.25, 1.0, 7);
        assert_eq!(a, b);
        assert_eq!(a.at(0.3), a.values[1].as_slice());
        assert_eq!(a.at(10.0), a.values[3].as_slice());
    }
}
