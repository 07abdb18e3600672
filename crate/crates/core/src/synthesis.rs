//! Feedback synthesis: `β = A⁻¹` makes the controls parallel, and integrating
//! the drift coefficients along a leaf staircase gives the drift correction.
//!
//! Feedback follows `f̂ = f + Σ_i g_i α_i`, `ĝ_i = Σ_j β_ij g_j`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::geometry::{AffineSystem, ChartSpec, PointwiseSystem, QuotientSection, VectorFieldExpr};
use crate::grid::GridSpec;
use crate::invariance::{alpha_at, extract_alpha_from, AlphaCoeffs, BracketTable, DEFAULT_TOLERANCE};
use crate::linalg::{checked_inverse, condition_number};
use crate::transport::{a_matrix_at, assemble_a_from, build_zbar, AMatrixField, SubBox, MAX_CONDITION};

/// Simpson subintervals per staircase segment for pointwise evaluation.
pub const DEFAULT_QUADRATURE_INTERVALS: usize = 32;

/// Anything that yields `(α(q), β(q))`.
pub trait FeedbackLaw: Send + Sync {
    fn m(&self) -> usize;
    fn eval(&self, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>;
}

/// Feedback given by expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicFeedback {
    pub alpha: Vec<ScalarExpr>,
    /// Row `i` holds `β_i1 … β_im`.
    pub beta: Vec<Vec<ScalarExpr>>,
}

impl SymbolicFeedback {
    pub fn identity(m: usize) -> Self {
        SymbolicFeedback {
            alpha: vec![ScalarExpr::zero(); m],
            beta: (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| if i == j { ScalarExpr::one() } else { ScalarExpr::zero() })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn parse(alpha: &[&str], beta: &[&[&str]], n: usize) -> Result<Self> {
        let m = alpha.len();
        if beta.len() != m || beta.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension {
                expected: m,
                found: beta.len(),
                context: "feedback matrix rows",
            });
        }
        Ok(SymbolicFeedback {
            alpha: alpha
                .iter()
                .map(|t| crate::expr::parse_expr(t, n))
                .collect::<Result<_>>()?,
            beta: beta
                .iter()
                .map(|row| row.iter().map(|t| crate::expr::parse_expr(t, n)).collect())
                .collect::<Result<_>>()?,
        })
    }
}

impl FeedbackLaw for SymbolicFeedback {
    fn m(&self) -> usize {
        self.alpha.len()
    }

    fn eval(&self, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let m = self.m();
        let alpha = self.alpha.iter().map(|a| a.eval(q)).collect::<Result<Vec<_>>>()?;
        let mut beta = DMatrix::zeros(m, m);
        for (i, row) in self.beta.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                beta[(i, j)] = e.eval(q)?;
            }
        }
        Ok((alpha, beta))
    }
}

/// Multilinear interpolation of node values of `α` and `β`.
#[derive(Clone, Debug)]
pub struct GridFeedback {
    grid: GridSpec,
    m: usize,
    /// Per node: `α` followed by `β` in row-major order.
    packed: Vec<Vec<f64>>,
}

impl GridFeedback {
    pub fn new(grid: GridSpec, alpha: &[Vec<f64>], beta: &[DMatrix<f64>]) -> Self {
        let m = alpha.first().map_or(0, Vec::len);
        let packed = alpha
            .iter()
            .zip(beta)
            .map(|(a, b)| {
                let mut v = a.clone();
                v.extend(b.transpose().iter());
                v
            })
            .collect();
        GridFeedback { grid, m, packed }
    }
}

impl FeedbackLaw for GridFeedback {
    fn m(&self) -> usize {
        self.m
    }

    fn eval(&self, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let m = self.m;
        let v = self.grid.interpolate(&self.packed, q);
        Ok((v[..m].to_vec(), DMatrix::from_row_slice(m, m, &v[m..])))
    }
}

/// The inverse pure feedback `(-β⁻ᵀ α, β⁻¹)`.
pub struct InverseLaw {
    inner: Arc<dyn FeedbackLaw>,
}

impl InverseLaw {
    pub fn new(inner: Arc<dyn FeedbackLaw>) -> Self {
        InverseLaw { inner }
    }
}

impl FeedbackLaw for InverseLaw {
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn eval(&self, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (alpha, beta) = self.inner.eval(q)?;
        let inv = invert(&beta, q)?;
        let a = -(inv.transpose() * DVector::from_vec(alpha));
        Ok((a.as_slice().to_vec(), inv))
    }
}

fn invert(a: &DMatrix<f64>, q: &[f64]) -> Result<DMatrix<f64>> {
    checked_inverse(a, MAX_CONDITION).ok_or_else(|| Error::Singular {
        condition: condition_number(a),
        point: q.to_vec(),
    })
}

/// Composite Simpson integral of a vector-valued `f` on `intervals` equal
/// pieces (rounded up to even).
fn simpson<F>(f: F, a: f64, b: f64, intervals: usize, width: usize) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let mut s = vec![0.0; width];
    if a == b {
        return Ok(s);
    }
    let n = intervals.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let t = if i == n { b } else { a + h * i as f64 };
        for (acc, v) in s.iter_mut().zip(f(t)?) {
            *acc += w * v;
        }
    }
    Ok(s.into_iter().map(|v| v * h / 3.0).collect())
}

/// `(α(q), β(q))` computed from the symbolic system at any point: `A(q)` by
/// least squares, `β̃(q)` by Simpson quadrature of the exact drift
/// coefficients along the staircase.
pub struct SynthesizedLaw {
    table: Arc<BracketTable>,
    zbar: Vec<QuotientSection>,
    order: Vec<usize>,
    intervals: usize,
}

impl SynthesizedLaw {
    pub fn new(
        table: Arc<BracketTable>,
        zbar: Vec<QuotientSection>,
        order: Vec<usize>,
        intervals: usize,
    ) -> Self {
        SynthesizedLaw {
            table,
            zbar,
            order,
            intervals,
        }
    }

    /// The nested integrals `β̃(q)`.
    pub fn drift_integral(&self, q: &[f64]) -> Result<Vec<f64>> {
        let chart = self.table.chart();
        let m = self.zbar.len();
        let mut at = chart.slice_point(q);
        let mut total = vec![0.0; m];
        for &axis in &self.order {
            let (from, to) = (at[axis], q[axis]);
            let integrand = |s: f64| -> Result<Vec<f64>> {
                let mut p = at.clone();
                p[axis] = s;
                let (alpha, _) = alpha_at(&self.table, &self.zbar, &p)?;
                Ok(alpha.row(axis).iter().copied().collect())
            };
            for (t, v) in total
                .iter_mut()
                .zip(simpson(integrand, from, to, self.intervals, m)?)
            {
                *t += v;
            }
            at[axis] = to;
        }
        Ok(total)
    }
}

impl FeedbackLaw for SynthesizedLaw {
    fn m(&self) -> usize {
        self.zbar.len()
    }

    fn eval(&self, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (a, _) = a_matrix_at(&self.table, &self.zbar, q)?;
        let beta = invert(&a, q)?;
        let bt = DVector::from_vec(self.drift_integral(q)?);
        let alpha = -(beta.transpose() * bt);
        Ok((alpha.as_slice().to_vec(), beta))
    }
}

/// `β̃_j` at every grid node.
#[derive(Clone, Debug)]
pub struct DriftCoefficients {
    pub grid: GridSpec,
    pub values: Vec<Vec<f64>>,
}

/// `∫` from node `s` to node `e` of node data on one axis with spacing `h`.
/// Uses composite Simpson, closing an odd tail with the 3/8 rule and a
/// single interval with the three-point rule.
fn node_integral(f: &dyn Fn(usize) -> f64, s: usize, e: usize, h: f64, count: usize) -> f64 {
    if s == e {
        return 0.0;
    }
    if s > e {
        return -node_integral(f, e, s, h, count);
    }
    let intervals = e - s;
    if intervals == 1 {
        return if e + 1 < count {
            h / 12.0 * (5.0 * f(s) + 8.0 * f(e) - f(e + 1))
        } else {
            h / 12.0 * (-f(s - 1) + 8.0 * f(s) + 5.0 * f(e))
        };
    }
    let (simpson_end, tail) = if intervals.is_multiple_of(2) {
        (e, false)
    } else {
        (e - 3, true)
    };
    let mut total = 0.0;
    let mut i = s;
    while i < simpson_end {
        total += h / 3.0 * (f(i) + 4.0 * f(i + 1) + f(i + 2));
        i += 2;
    }
    if tail {
        let t = e - 3;
        total += 3.0 * h / 8.0 * (f(t) + 3.0 * f(t + 1) + 3.0 * f(t + 2) + f(e));
    }
    total
}

/// Nested integrals `β̃_j` at every node, moving the leaf axes in `order`.
/// The first axis is integrated with the remaining leaf coordinates on the
/// slice and the last with all coordinates at the node.
pub fn integrate_drift_coeffs(
    alpha: &AlphaCoeffs,
    chart: &ChartSpec,
    order: &[usize],
) -> Result<DriftCoefficients> {
    let grid = &alpha.grid;
    check_order(order, chart.k())?;
    for &a in order {
        if grid.axis(a).len() < 3 {
            return Err(Error::Grid(format!(
                "axis x{} needs at least 3 nodes for Simpson quadrature",
                a + 1
            )));
        }
    }
    let m = alpha.nodes.first().map_or(0, |n| n.ncols());
    let values = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let target = grid.multi_index(flat);
            let mut idx = target.clone();
            for &a in order {
                idx[a] = grid.slice_index(a);
            }
            let mut out = vec![0.0; m];
            for &axis in order {
                let count = grid.axis(axis).len();
                let h = grid.spacing(axis);
                for (j, o) in out.iter_mut().enumerate() {
                    let f = |i: usize| {
                        let mut p = idx.clone();
                        p[axis] = i;
                        alpha.nodes[grid.flat_index(&p)][(axis, j)]
                    };
                    *o += node_integral(&f, idx[axis], target[axis], h, count);
                }
                idx[axis] = target[axis];
            }
            out
        })
        .collect();
    Ok(DriftCoefficients {
        grid: grid.clone(),
        values,
    })
}

fn check_order(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for &a in order {
        if a >= k || seen[a] {
            return Err(Error::Input(format!(
                "axis order must be a permutation of the leaf axes x1..x{k}"
            )));
        }
        seen[a] = true;
    }
    if order.len() != k {
        return Err(Error::Input(format!(
            "axis order must be a permutation of the leaf axes x1..x{k}"
        )));
    }
    Ok(())
}

/// `β = A⁻¹` at each node inside the validity box. Nodes outside it get a
/// matrix of NaN.
pub fn synthesize_beta(a: &AMatrixField) -> Result<Vec<DMatrix<f64>>> {
    let m = a.base_value.nrows();
    a.values
        .par_iter()
        .enumerate()
        .map(|(flat, v)| {
            if !a.validity.contains_node(&a.grid, flat) {
                return Ok(DMatrix::from_element(m, m, f64::NAN));
            }
            invert(v, &a.grid.node(flat))
        })
        .collect()
}

/// `α = -A⁻ᵀ β̃` at each node inside the validity box.
pub fn synthesize_alpha(drift: &DriftCoefficients, a: &AMatrixField) -> Result<Vec<Vec<f64>>> {
    let m = a.base_value.nrows();
    drift
        .values
        .par_iter()
        .enumerate()
        .map(|(flat, bt)| {
            if !a.validity.contains_node(&a.grid, flat) {
                return Ok(vec![f64::NAN; m]);
            }
            let beta = invert(&a.values[flat], &a.grid.node(flat))?;
            let alpha = -(beta.transpose() * DVector::from_column_slice(bt));
            Ok(alpha.as_slice().to_vec())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    pub order: Vec<usize>,
    pub tolerance: f64,
    pub quadrature_intervals: usize,
}

impl SynthesisOptions {
    pub fn new(chart: &ChartSpec) -> Self {
        SynthesisOptions {
            order: (0..chart.k()).collect(),
            tolerance: DEFAULT_TOLERANCE,
            quadrature_intervals: DEFAULT_QUADRATURE_INTERVALS,
        }
    }

    pub fn reversed(chart: &ChartSpec) -> Self {
        let mut o = Self::new(chart);
        o.order.reverse();
        o
    }
}

/// A synthesized feedback pair: node values for output, and a law that
/// evaluates anywhere.
#[derive(Clone)]
pub struct FeedbackPair {
    pub grid: GridSpec,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    pub validity: SubBox,
    law: Arc<dyn FeedbackLaw>,
    symbolic: Option<SymbolicFeedback>,
}

impl std::fmt::Debug for FeedbackPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackPair")
            .field("nodes", &self.alpha.len())
            .field("validity", &self.validity)
            .field("symbolic", &self.symbolic.is_some())
            .finish()
    }
}

impl FeedbackPair {
    pub fn m(&self) -> usize {
        self.law.m()
    }

    pub fn law(&self) -> Arc<dyn FeedbackLaw> {
        self.law.clone()
    }

    pub fn symbolic(&self) -> Option<&SymbolicFeedback> {
        self.symbolic.as_ref()
    }

    pub fn eval(&self, q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.law.eval(q)
    }

    /// Interpolating law over the node values.
    pub fn grid_law(&self) -> GridFeedback {
        GridFeedback::new(self.grid.clone(), &self.alpha, &self.beta)
    }

    /// Pair from an expression law, tabulated on `grid`.
    pub fn from_symbolic(fb: SymbolicFeedback, grid: &GridSpec) -> Result<Self> {
        let (alpha, beta) = tabulate(&fb, grid)?;
        Ok(FeedbackPair {
            grid: grid.clone(),
            alpha,
            beta,
            validity: SubBox::full(grid),
            law: Arc::new(fb.clone()),
            symbolic: Some(fb),
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        let law: Arc<dyn FeedbackLaw> = Arc::new(InverseLaw::new(self.law.clone()));
        let mut alpha = Vec::with_capacity(self.alpha.len());
        let mut beta = Vec::with_capacity(self.beta.len());
        for (flat, (a, b)) in self.alpha.iter().zip(&self.beta).enumerate() {
            if self.validity.contains_node(&self.grid, flat) {
                let inv = invert(b, &self.grid.node(flat))?;
                let na = -(inv.transpose() * DVector::from_column_slice(a));
                alpha.push(na.as_slice().to_vec());
                beta.push(inv);
            } else {
                alpha.push(a.clone());
                beta.push(b.clone());
            }
        }
        Ok(FeedbackPair {
            grid: self.grid.clone(),
            alpha,
            beta,
            validity: self.validity.clone(),
            law,
            symbolic: None,
        })
    }
}

fn tabulate(law: &dyn FeedbackLaw, grid: &GridSpec) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>)> {
    let per: Vec<(Vec<f64>, DMatrix<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|flat| law.eval(&grid.node(flat)))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().unzip())
}

/// Every intermediate of a synthesis run.
pub struct Synthesis {
    pub zbar: Vec<QuotientSection>,
    pub a: AMatrixField,
    pub alpha_coeffs: AlphaCoeffs,
    pub drift_coeffs: DriftCoefficients,
    pub feedback: FeedbackPair,
}

/// Synthesize `(α, β)` for a system already known to be invariant.
pub fn synthesize(
    system: &AffineSystem,
    grid: &GridSpec,
    options: &SynthesisOptions,
) -> Result<Synthesis> {
    let chart = system.chart();
    check_order(&options.order, chart.k())?;
    let table = Arc::new(BracketTable::new(system)?);
    let zbar = build_zbar(system);
    let a = assemble_a_from(&table, &zbar, grid)?;
    let alpha_coeffs = extract_alpha_from(&table, &zbar, grid, options.tolerance)?;
    let drift_coeffs = integrate_drift_coeffs(&alpha_coeffs, chart, &options.order)?;
    let beta = synthesize_beta(&a)?;
    let alpha = synthesize_alpha(&drift_coeffs, &a)?;
    let law = SynthesizedLaw::new(
        table,
        zbar.clone(),
        options.order.clone(),
        options.quadrature_intervals,
    );
    let feedback = FeedbackPair {
        grid: grid.clone(),
        alpha,
        beta,
        validity: a.validity.clone(),
        law: Arc::new(law),
        symbolic: None,
    };
    Ok(Synthesis {
        zbar,
        a,
        alpha_coeffs,
        drift_coeffs,
        feedback,
    })
}

/// `(f + Σ g_i α_i, Σ_j β_ij g_j)` in closed form.
pub fn apply_symbolic(system: &AffineSystem, fb: &SymbolicFeedback) -> Result<AffineSystem> {
    let m = system.m();
    if fb.alpha.len() != m || fb.beta.len() != m {
        return Err(Error::Dimension {
            expected: m,
            found: fb.alpha.len(),
            context: "feedback size",
        });
    }
    let g = system.controls();
    let mut drift = system.drift().clone();
    for (gi, ai) in g.iter().zip(&fb.alpha) {
        drift = drift.add(&gi.scale(ai));
    }
    let controls = fb
        .beta
        .iter()
        .map(|row| {
            row.iter()
                .zip(g)
                .fold(VectorFieldExpr::zero(system.chart().n()), |acc, (b, gj)| {
                    acc.add(&gj.scale(b))
                })
        })
        .collect();
    AffineSystem::new(system.chart().clone(), drift, controls)
}

/// A system under a feedback law, evaluated pointwise.
#[derive(Clone)]
pub struct ClosedLoop {
    inner: Arc<dyn PointwiseSystem>,
    law: Arc<dyn FeedbackLaw>,
}

impl ClosedLoop {
    pub fn new(inner: Arc<dyn PointwiseSystem>, law: Arc<dyn FeedbackLaw>) -> Result<Self> {
        if inner.num_controls() != law.m() {
            return Err(Error::Dimension {
                expected: inner.num_controls(),
                found: law.m(),
                context: "feedback size",
            });
        }
        Ok(ClosedLoop { inner, law })
    }
}

impl PointwiseSystem for ClosedLoop {
    fn chart(&self) -> &ChartSpec {
        self.inner.chart()
    }

    fn num_controls(&self) -> usize {
        self.inner.num_controls()
    }

    fn drift_at(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(self.fields_at(q)?.0)
    }

    fn control_at(&self, i: usize, q: &[f64]) -> Result<Vec<f64>> {
        Ok(self.fields_at(q)?.1.swap_remove(i))
    }

    fn fields_at(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (f, g) = self.inner.fields_at(q)?;
        let (alpha, beta) = self.law.eval(q)?;
        let mut fh = f;
        for (gi, ai) in g.iter().zip(&alpha) {
            for (x, y) in fh.iter_mut().zip(gi) {
                *x += ai * y;
            }
        }
        let m = g.len();
        let gh = (0..m)
            .map(|i| {
                let mut v = vec![0.0; fh.len()];
                for (j, gj) in g.iter().enumerate() {
                    for (x, y) in v.iter_mut().zip(gj) {
                        *x += beta[(i, j)] * y;
                    }
                }
                v
            })
            .collect();
        Ok((fh, gh))
    }

    fn velocity(&self, q: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (mut v, g) = self.fields_at(q)?;
        for (gi, ui) in g.iter().zip(u) {
            for (x, y) in v.iter_mut().zip(gi) {
                *x += ui * y;
            }
        }
        Ok(v)
    }
}

/// Result of [`apply_feedback`].
#[derive(Clone)]
pub enum Transformed {
    Symbolic(AffineSystem),
    Evaluated(ClosedLoop),
}

impl Transformed {
    pub fn as_pointwise(&self) -> &dyn PointwiseSystem {
        match self {
            Transformed::Symbolic(s) => s,
            Transformed::Evaluated(c) => c,
        }
    }

    pub fn symbolic(&self) -> Option<&AffineSystem> {
        match self {
            Transformed::Symbolic(s) => Some(s),
            Transformed::Evaluated(_) => None,
        }
    }
}

/// Compose a system with a feedback pair, in closed form when both have
/// expressions.
pub fn apply_feedback(system: &AffineSystem, fb: &FeedbackPair) -> Result<Transformed> {
    match fb.symbolic() {
        Some(s) => Ok(Transformed::Symbolic(apply_symbolic(system, s)?)),
        None => Ok(Transformed::Evaluated(ClosedLoop::new(
            Arc::new(system.clone()),
            fb.law(),
        )?)),
    }
}

/// Summary numbers of a synthesis run, for reports.
#[derive(Clone, Debug, Serialize)]
pub struct SynthesisSummary {
    pub max_condition: f64,
    pub base_identity_error: f64,
    pub max_a_residual: f64,
    pub max_alpha_residual: f64,
    pub validity: SubBox,
    pub advisory: Option<String>,
    pub axis_order: Vec<usize>,
}

impl Synthesis {
    pub fn summary(&self, order: &[usize]) -> SynthesisSummary {
        SynthesisSummary {
            max_condition: self.a.max_condition(),
            base_identity_error: self.a.base_identity_error,
            max_a_residual: self.a.max_residual(),
            max_alpha_residual: self.alpha_coeffs.max_residual(),
            validity: self.a.validity.clone(),
            advisory: self.a.advisory.clone(),
            axis_order: order.to_vec(),
        }
    }
}
