//! Parallel sections of `TM/D` and the coefficient field expressing the
//! projected controls in that frame.
//!
//! `Z̄_i` is the parallel translate of `π(g_i)` from the slice through the
//! base point; in a flat chart that is `π(g_i)` with the leaf coordinates
//! frozen at the slice. Coefficient matrices use the row convention
//! `π(g_i) = Σ_j A_ij Z̄_j`, matching the transport ODE
//! `σ'_jr = Σ_a γ^a_{lj} σ_ar` whose rows expand `π(g_j)` in the `Z̄` basis.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::geometry::{quotient_project, AffineSystem, ChartSpec, QuotientSection};
use crate::grid::GridSpec;
use crate::invariance::{section_matrix, BracketTable, ConnectionField};
use crate::linalg::{condition_number, pseudo_inverse, RANK_REL_TOL};
use crate::ode;

/// Condition number above which `A` is not inverted.
pub const MAX_CONDITION: f64 = 1e8;

/// Segments per unit of transport when no step is given.
pub const DEFAULT_DIVISIONS: usize = 100;

/// Quotient components of each control with the leaf coordinates set to the
/// slice through the base point.
pub fn build_zbar(system: &AffineSystem) -> Vec<QuotientSection> {
    let chart = system.chart();
    let frozen: Vec<(usize, f64)> = chart.slice().iter().copied().enumerate().collect();
    system
        .controls()
        .iter()
        .map(|g| {
            let pi = quotient_project(g, chart);
            QuotientSection::new(
                pi.components()
                    .iter()
                    .map(|c| c.substitute_values(&frozen))
                    .collect::<Vec<ScalarExpr>>(),
            )
        })
        .collect()
}

/// An axis-aligned piece of a transport path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub axis: usize,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct TransportResult {
    pub sigma_start: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Largest step actually used.
    pub h: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub path: Vec<Segment>,
}

/// Step selection for transport segments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `segment length / divisions`.
    Divisions(usize),
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Divisions(DEFAULT_DIVISIONS)
    }
}

impl StepRule {
    fn steps_for(self, span: f64) -> Result<usize> {
        match self {
            StepRule::Fixed(h) if !(h > 0.0) => {
                Err(Error::Transport(format!("step must be positive, got {h}")))
            }
            StepRule::Fixed(h) => Ok(ode::step_count(span, h)),
            StepRule::Divisions(0) => Err(Error::Transport("zero divisions".into())),
            StepRule::Divisions(d) => Ok(d),
        }
    }
}

/// Integrate `σ' = M_axis(c(s)) σ` along the coordinate segment from `from`
/// to `to`, which may differ only in `axis`.
pub fn parallel_transport(
    init: &DMatrix<f64>,
    axis: usize,
    from: &[f64],
    to: &[f64],
    gamma: &dyn ConnectionField,
    chart: &ChartSpec,
    step: StepRule,
) -> Result<TransportResult> {
    let m = gamma.m();
    if init.shape() != (m, m) {
        return Err(Error::Dimension {
            expected: m,
            found: init.nrows(),
            context: "transport initial matrix",
        });
    }
    if axis >= chart.k() {
        return Err(Error::Transport(format!(
            "axis x{} is not a leaf direction",
            axis + 1
        )));
    }
    if from.len() != chart.n() || to.len() != chart.n() {
        return Err(Error::Dimension {
            expected: chart.n(),
            found: from.len().min(to.len()),
            context: "transport endpoints",
        });
    }
    if let Some(i) = (0..chart.n()).find(|&i| i != axis && from[i] != to[i]) {
        return Err(Error::Transport(format!(
            "endpoints differ in x{} as well as the transport axis",
            i + 1
        )));
    }
    let slack = 1e-12;
    if !chart.contains(from, slack) || !chart.contains(to, slack) {
        return Err(Error::Transport("path leaves the chart box".into()));
    }
    let span = to[axis] - from[axis];
    let steps = step.steps_for(span)?;
    let mut result = TransportResult {
        sigma_start: init.clone(),
        sigma: init.clone(),
        h: 0.0,
        start: from.to_vec(),
        end: to.to_vec(),
        path: Vec::new(),
    };
    if span == 0.0 {
        return Ok(result);
    }
    // column-major flattening of σ
    let rhs = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
        let mut q = from.to_vec();
        q[axis] = s;
        let mat = gamma.leaf_matrix(axis, &q)?;
        let sigma = DMatrix::from_column_slice(m, m, y);
        Ok((mat * sigma).as_slice().to_vec())
    };
    let y = ode::integrate(&rhs, from[axis], init.as_slice(), to[axis], steps)?;
    result.sigma = DMatrix::from_column_slice(m, m, &y);
    result.h = (span / steps as f64).abs();
    result.path.push(Segment {
        axis,
        from: from[axis],
        to: to[axis],
        steps,
    });
    Ok(result)
}

/// Transport the identity from the slice point below `q` to `q` along an
/// axis staircase, moving the leaf axes in `order`. The result's `sigma`
/// expands `π(g_j)(q)` in the `Z̄(q)` basis.
pub fn transport_to(
    q: &[f64],
    order: &[usize],
    gamma: &dyn ConnectionField,
    chart: &ChartSpec,
    step: StepRule,
) -> Result<TransportResult> {
    let m = gamma.m();
    let start = chart.slice_point(q);
    let mut at = start.clone();
    let mut sigma = DMatrix::identity(m, m);
    let mut path = Vec::new();
    let mut h: f64 = 0.0;
    for &axis in order {
        let mut next = at.clone();
        next[axis] = q[axis];
        let seg = parallel_transport(&sigma, axis, &at, &next, gamma, chart, step)?;
        sigma = seg.sigma;
        h = h.max(seg.h);
        path.extend(seg.path);
        at = next;
    }
    Ok(TransportResult {
        sigma_start: DMatrix::identity(m, m),
        sigma,
        h,
        start,
        end: at,
        path,
    })
}

/// Default staircase `x1, x2, …, xk`.
pub fn default_order(chart: &ChartSpec) -> Vec<usize> {
    (0..chart.k()).collect()
}

/// Index-space sub-box of a grid, with its coordinate bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubBox {
    pub index_lo: Vec<usize>,
    pub index_hi: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SubBox {
    pub fn full(grid: &GridSpec) -> Self {
        let counts = grid.counts();
        Self::from_indices(grid, vec![0; counts.len()], counts.iter().map(|c| c - 1).collect())
    }

    fn from_indices(grid: &GridSpec, index_lo: Vec<usize>, index_hi: Vec<usize>) -> Self {
        SubBox {
            lower: grid.node_at(&index_lo),
            upper: grid.node_at(&index_hi),
            index_lo,
            index_hi,
        }
    }

    pub fn contains_node(&self, grid: &GridSpec, flat: usize) -> bool {
        grid.multi_index(flat)
            .iter()
            .zip(self.index_lo.iter().zip(&self.index_hi))
            .all(|(i, (lo, hi))| lo <= i && i <= hi)
    }

    pub fn contains_point(&self, q: &[f64], slack: f64) -> bool {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&x, (&a, &b))| x >= a - slack && x <= b + slack)
    }

    pub fn node_count(&self) -> usize {
        self.index_lo
            .iter()
            .zip(&self.index_hi)
            .map(|(lo, hi)| hi - lo + 1)
            .product()
    }
}

/// Grow a box around `seed` one face at a time while every node in it is
/// `ok`.
pub fn largest_valid_subbox(grid: &GridSpec, seed: usize, ok: &dyn Fn(usize) -> bool) -> SubBox {
    let counts = grid.counts();
    let n = counts.len();
    let mut lo = grid.multi_index(seed);
    let mut hi = lo.clone();
    let face_ok = |lo: &[usize], hi: &[usize]| -> bool {
        let mut idx = lo.to_vec();
        loop {
            if !ok(grid.flat_index(&idx)) {
                return false;
            }
            let mut a = n;
            loop {
                if a == 0 {
                    return true;
                }
                a -= 1;
                if idx[a] < hi[a] {
                    idx[a] += 1;
                    break;
                }
                idx[a] = lo[a];
            }
        }
    };
    loop {
        let mut grew = false;
        for a in 0..n {
            if hi[a] + 1 < counts[a] {
                let mut flo = lo.clone();
                flo[a] = hi[a] + 1;
                let mut fhi = hi.clone();
                fhi[a] = hi[a] + 1;
                if face_ok(&flo, &fhi) {
                    hi[a] += 1;
                    grew = true;
                }
            }
            if lo[a] > 0 {
                let mut flo = lo.clone();
                flo[a] = lo[a] - 1;
                let mut fhi = hi.clone();
                fhi[a] = lo[a] - 1;
                if face_ok(&flo, &fhi) {
                    lo[a] -= 1;
                    grew = true;
                }
            }
        }
        if !grew {
            return SubBox::from_indices(grid, lo, hi);
        }
    }
}

/// `A(q)` solving `π(g_i)(q) = Σ_j A_ij Z̄_j(q)`. Among all solutions the one
/// closest to the identity in Frobenius norm is taken, so `A = Id` exactly
/// where `π(g_i) = Z̄_i` (on the slice) and redundant controls still give an
/// invertible field. Returns `(A, reconstruction residual)`.
pub fn a_matrix_at(
    table: &BracketTable,
    zbar: &[QuotientSection],
    q: &[f64],
) -> Result<(DMatrix<f64>, f64)> {
    let rows = table.chart().quotient_dim();
    let m = zbar.len();
    let z = section_matrix(zbar, rows, q)?;
    let g = table.control_matrix(q)?;
    let pinv = pseudo_inverse(&z, RANK_REL_TOL);
    let at = DMatrix::identity(m, m) + &pinv * (&g - &z);
    let residual = if m == 0 { 0.0 } else { (&z * &at - &g).norm() };
    Ok((at.transpose(), residual))
}

#[derive(Clone, Debug)]
pub struct AMatrixField {
    pub grid: GridSpec,
    pub values: Vec<DMatrix<f64>>,
    pub condition: Vec<f64>,
    pub residuals: Vec<f64>,
    pub base_value: DMatrix<f64>,
    /// `max |A(p) - Id|` entrywise.
    pub base_identity_error: f64,
    /// Largest grid sub-box around the base point where `A` is safely
    /// invertible.
    pub validity: SubBox,
    /// Set when `A` is ill-conditioned somewhere on the grid.
    pub advisory: Option<String>,
}

impl AMatrixField {
    pub fn max_condition(&self) -> f64 {
        self.condition.iter().copied().fold(1.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub fn assemble_a(
    system: &AffineSystem,
    zbar: &[QuotientSection],
    grid: &GridSpec,
) -> Result<AMatrixField> {
    let table = BracketTable::new(system)?;
    assemble_a_from(&table, zbar, grid)
}

pub fn assemble_a_from(
    table: &BracketTable,
    zbar: &[QuotientSection],
    grid: &GridSpec,
) -> Result<AMatrixField> {
    let per_node: Vec<(DMatrix<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|flat| a_matrix_at(table, zbar, &grid.node(flat)))
        .collect::<Result<_>>()?;
    let condition: Vec<f64> = per_node.iter().map(|(a, _)| condition_number(a)).collect();
    let chart = table.chart();
    let (base_value, _) = a_matrix_at(table, zbar, chart.base_point())?;
    let m = zbar.len();
    let base_identity_error = (&base_value - DMatrix::<f64>::identity(m, m)).amax();
    let seed = grid.nearest_node(chart.base_point());
    let ok = |flat: usize| condition[flat].is_finite() && condition[flat] <= MAX_CONDITION;
    let (validity, advisory) = if (0..grid.len()).all(ok) {
        (SubBox::full(grid), None)
    } else {
        let sub = largest_valid_subbox(grid, seed, &ok);
        let msg = format!(
            "A is ill-conditioned (condition > {MAX_CONDITION:e}) on part of the box; \
             feedback restricted to the sub-box {:?} .. {:?}",
            sub.lower, sub.upper
        );
        (sub, Some(msg))
    };
    let (values, residuals) = per_node.into_iter().unzip();
    Ok(AMatrixField {
        grid: grid.clone(),
        values,
        condition,
        residuals,
        base_value,
        base_identity_error,
        validity,
        advisory,
    })
}
