//! Grid-sampled invariance test, rank profiling, and extraction of the
//! coefficient functions of the quotient connection.
//!
//! In a flat chart `π([∂/∂xj, X]) = ∂_j π(X)`, so the controlled invariance
//! conditions reduce to: for every leaf axis `j`, `∂_j π(f)` and `∂_j π(g_i)`
//! lie in `span{π(g_1), …, π(g_m)}`. Pointwise membership only certifies the
//! module condition where `(G+D)/D` has constant rank, which is why a rank
//! drop turns a passing check into an inconclusive verdict.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    connection_apply, lie_bracket, quotient_project, AffineSystem, ChartSpec, PointwiseSystem,
    QuotientSection, VectorFieldExpr,
};
use crate::grid::GridSpec;
use crate::linalg::{lstsq_with, numerical_rank, pseudo_inverse, RANK_REL_TOL};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Per-node numerical ranks of `G`, `D + G` and `(G + D)/D`.
#[derive(Clone, Debug, Serialize)]
pub struct RankProfile {
    pub rank_g: Vec<usize>,
    pub rank_d_plus_g: Vec<usize>,
    pub rank_quotient: Vec<usize>,
    pub max_rank_g: usize,
    pub max_rank_quotient: usize,
    /// Nodes where `rank G` is below its grid maximum.
    pub g_singular_nodes: Vec<usize>,
    /// Nodes where `rank (G+D)/D` is below its grid maximum.
    pub quotient_singular_nodes: Vec<usize>,
    pub g_regular: bool,
    pub quotient_regular: bool,
}

fn rows_to_matrix(n_rows: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n_rows, cols.len(), |r, c| cols[c][r])
}

pub fn rank_profile(system: &dyn PointwiseSystem, grid: &GridSpec) -> Result<RankProfile> {
    let chart = system.chart();
    let (n, k, m) = (chart.n(), chart.k(), system.num_controls());
    let per_node: Vec<(usize, usize, usize)> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let q = grid.node(flat);
            let gs = (0..m)
                .map(|i| system.control_at(i, &q))
                .collect::<Result<Vec<_>>>()?;
            let g = rows_to_matrix(n, &gs);
            let mut dg = DMatrix::zeros(n, k + m);
            for i in 0..k {
                dg[(i, i)] = 1.0;
            }
            dg.view_mut((0, k), (n, m)).copy_from(&g);
            let quotient = g.rows(k, n - k).into_owned();
            Ok((
                numerical_rank(&g, RANK_REL_TOL),
                numerical_rank(&dg, RANK_REL_TOL),
                numerical_rank(&quotient, RANK_REL_TOL),
            ))
        })
        .collect::<Result<_>>()?;
    let rank_g: Vec<usize> = per_node.iter().map(|r| r.0).collect();
    let rank_d_plus_g: Vec<usize> = per_node.iter().map(|r| r.1).collect();
    let rank_quotient: Vec<usize> = per_node.iter().map(|r| r.2).collect();
    let max_rank_g = rank_g.iter().copied().max().unwrap_or(0);
    let max_rank_quotient = rank_quotient.iter().copied().max().unwrap_or(0);
    let below = |ranks: &[usize], max: usize| -> Vec<usize> {
        ranks
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < max)
            .map(|(i, _)| i)
            .collect()
    };
    let g_singular_nodes = below(&rank_g, max_rank_g);
    let quotient_singular_nodes = below(&rank_quotient, max_rank_quotient);
    Ok(RankProfile {
        g_regular: g_singular_nodes.is_empty(),
        quotient_regular: quotient_singular_nodes.is_empty(),
        rank_g,
        rank_d_plus_g,
        rank_quotient,
        max_rank_g,
        max_rank_quotient,
        g_singular_nodes,
        quotient_singular_nodes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Invariant,
    NotInvariant,
    InconclusiveSingular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum FieldId {
    Drift,
    Control(usize),
}

/// A node where a bracket leaves `D + G`.
#[derive(Clone, Debug, Serialize)]
pub struct Offense {
    pub node: usize,
    pub point: Vec<f64>,
    pub field: FieldId,
    /// Zero-based leaf axis of the bracketing coordinate field.
    pub axis: usize,
    pub residual: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub verdict: Verdict,
    pub tolerance: f64,
    /// Worst residual of the drift condition `[f, D] ⊆ D + G`.
    pub worst_drift_residual: f64,
    /// Worst residual of the control conditions `[g_i, D] ⊆ D + G`.
    pub worst_control_residual: f64,
    pub ranks: RankProfile,
    pub offending: Vec<Offense>,
}

impl InvarianceReport {
    pub fn offending_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.offending.iter().map(|o| o.node).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Symbolic quotient data of a system: `π(g_j)`, `∂_i π(g_j)` and `∂_i π(f)`
/// for leaf axes `i`.
#[derive(Clone, Debug)]
pub struct BracketTable {
    chart: ChartSpec,
    pi_drift: QuotientSection,
    pi_controls: Vec<QuotientSection>,
    /// `d_drift[i] = ∇_{∂i} π(f)`
    d_drift: Vec<QuotientSection>,
    /// `d_controls[i][j] = ∇_{∂i} π(g_j)`
    d_controls: Vec<Vec<QuotientSection>>,
}

impl BracketTable {
    pub fn new(system: &AffineSystem) -> Result<Self> {
        let chart = system.chart().clone();
        let n = chart.n();
        let pi_drift = quotient_project(system.drift(), &chart);
        let pi_controls: Vec<QuotientSection> = system
            .controls()
            .iter()
            .map(|g| quotient_project(g, &chart))
            .collect();
        let mut d_drift = Vec::new();
        let mut d_controls = Vec::new();
        for i in 0..chart.k() {
            let xi = VectorFieldExpr::coordinate(n, i);
            d_drift.push(connection_apply(&xi, &pi_drift, &chart)?);
            d_controls.push(
                pi_controls
                    .iter()
                    .map(|g| connection_apply(&xi, g, &chart))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(BracketTable {
            chart,
            pi_drift,
            pi_controls,
            d_drift,
            d_controls,
        })
    }

    pub fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    pub fn m(&self) -> usize {
        self.pi_controls.len()
    }

    pub fn pi_drift(&self) -> &QuotientSection {
        &self.pi_drift
    }

    pub fn pi_controls(&self) -> &[QuotientSection] {
        &self.pi_controls
    }

    pub fn d_drift(&self, axis: usize) -> &QuotientSection {
        &self.d_drift[axis]
    }

    pub fn d_control(&self, axis: usize, j: usize) -> &QuotientSection {
        &self.d_controls[axis][j]
    }

    /// `(n-k) × m` matrix with columns `π(g_j)(q)`.
    pub fn control_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        section_matrix(&self.pi_controls, self.chart.quotient_dim(), q)
    }

    /// `γ^l_{ij}(q)` by minimum-norm least squares, with the worst residual
    /// relative to `1 + |rhs|`.
    pub fn gamma_at(&self, q: &[f64]) -> Result<(GammaTensor, f64)> {
        let (k, m) = (self.chart.k(), self.m());
        let g = self.control_matrix(q)?;
        let pinv = pseudo_inverse(&g, RANK_REL_TOL);
        let mut tensor = GammaTensor::zeros(k, m);
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..m {
                let rhs = DVector::from_vec(self.d_controls[i][j].eval(q)?);
                let ls = lstsq_with(&pinv, &g, &rhs);
                worst = worst.max(ls.residual / (1.0 + rhs.norm()));
                for l in 0..m {
                    tensor.set(l, i, j, ls.solution[l]);
                }
            }
        }
        Ok((tensor, worst))
    }
}

pub(crate) fn section_matrix(
    sections: &[QuotientSection],
    rows: usize,
    q: &[f64],
) -> Result<DMatrix<f64>> {
    let cols = sections
        .iter()
        .map(|s| s.eval(q))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows_to_matrix(rows, &cols))
}

struct NodeCheck {
    drift: f64,
    control: f64,
    offenses: Vec<Offense>,
}

fn membership(
    grid: &GridSpec,
    tol: f64,
    m: usize,
    k: usize,
    span_at: &(dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync),
    bracket_at: &(dyn Fn(FieldId, usize, &[f64]) -> Result<Vec<f64>> + Sync),
) -> Result<Vec<NodeCheck>> {
    (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let q = grid.node(flat);
            let span = span_at(&q)?;
            let pinv = pseudo_inverse(&span, RANK_REL_TOL);
            let mut out = NodeCheck {
                drift: 0.0,
                control: 0.0,
                offenses: Vec::new(),
            };
            let fields = std::iter::once(FieldId::Drift).chain((0..m).map(FieldId::Control));
            for field in fields {
                for axis in 0..k {
                    let b = DVector::from_vec(bracket_at(field, axis, &q)?);
                    let residual = lstsq_with(&pinv, &span, &b).residual;
                    let threshold = tol * (1.0 + b.norm());
                    match field {
                        FieldId::Drift => out.drift = out.drift.max(residual),
                        FieldId::Control(_) => out.control = out.control.max(residual),
                    }
                    if residual > threshold {
                        out.offenses.push(Offense {
                            node: flat,
                            point: q.clone(),
                            field,
                            axis,
                            residual,
                            threshold,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

fn assemble_report(checks: Vec<NodeCheck>, ranks: RankProfile, tol: f64) -> InvarianceReport {
    let worst_drift_residual = checks.iter().map(|c| c.drift).fold(0.0, f64::max);
    let worst_control_residual = checks.iter().map(|c| c.control).fold(0.0, f64::max);
    let offending: Vec<Offense> = checks.into_iter().flat_map(|c| c.offenses).collect();
    let verdict = if !offending.is_empty() {
        Verdict::NotInvariant
    } else if !ranks.quotient_regular {
        Verdict::InconclusiveSingular
    } else {
        Verdict::Invariant
    };
    InvarianceReport {
        verdict,
        tolerance: tol,
        worst_drift_residual,
        worst_control_residual,
        ranks,
        offending,
    }
}

/// Decide local controlled invariance of the flat distribution on the grid.
pub fn check_local_invariance(
    system: &AffineSystem,
    grid: &GridSpec,
    tol: f64,
) -> Result<InvarianceReport> {
    let table = BracketTable::new(system)?;
    let ranks = rank_profile(system, grid)?;
    let chart = system.chart();
    let checks = membership(
        grid,
        tol,
        system.m(),
        chart.k(),
        &|q| table.control_matrix(q),
        &|field, axis, q| match field {
            FieldId::Drift => table.d_drift(axis).eval(q),
            FieldId::Control(j) => table.d_control(axis, j).eval(q),
        },
    )?;
    Ok(assemble_report(checks, ranks, tol))
}

/// Equivalent check in module form: `[f, X]/D` and `[g_i, X]/D` must lie in
/// `span{g_j/D}` for each supplied section `X` of `D`, computed with full
/// symbolic brackets rather than quotient derivatives. Offenses are indexed
/// by position in `sections` through [`Offense::axis`].
pub fn check_module_form(
    system: &AffineSystem,
    grid: &GridSpec,
    tol: f64,
    sections: &[VectorFieldExpr],
) -> Result<InvarianceReport> {
    let chart = system.chart();
    for x in sections {
        crate::geometry::ensure_section_of_d(x, chart)?;
    }
    let project = |a: &VectorFieldExpr, x: &VectorFieldExpr| -> Result<QuotientSection> {
        Ok(quotient_project(&lie_bracket(a, x)?, chart))
    };
    let drift: Vec<QuotientSection> = sections
        .iter()
        .map(|x| project(system.drift(), x))
        .collect::<Result<_>>()?;
    let controls: Vec<Vec<QuotientSection>> = system
        .controls()
        .iter()
        .map(|g| sections.iter().map(|x| project(g, x)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let pi_g: Vec<QuotientSection> = system
        .controls()
        .iter()
        .map(|g| quotient_project(g, chart))
        .collect();
    let ranks = rank_profile(system, grid)?;
    let checks = membership(
        grid,
        tol,
        system.m(),
        sections.len(),
        &|q| section_matrix(&pi_g, chart.quotient_dim(), q),
        &|field, s, q| match field {
            FieldId::Drift => drift[s].eval(q),
            FieldId::Control(j) => controls[j][s].eval(q),
        },
    )?;
    Ok(assemble_report(checks, ranks, tol))
}

/// `γ^l_{ij}` at one point, stored as `data[(l * k + i) * m + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTensor {
    k: usize,
    m: usize,
    data: Vec<f64>,
}

impl GammaTensor {
    pub fn zeros(k: usize, m: usize) -> Self {
        GammaTensor {
            k,
            m,
            data: vec![0.0; k * m * m],
        }
    }

    pub fn get(&self, l: usize, i: usize, j: usize) -> f64 {
        self.data[(l * self.k + i) * self.m + j]
    }

    pub fn set(&mut self, l: usize, i: usize, j: usize, v: f64) {
        self.data[(l * self.k + i) * self.m + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Transport matrix along leaf axis `i`: entry `(j, a)` is `γ^a_{ij}`,
    /// so `σ' = M σ` moves coefficient rows.
    pub fn leaf_matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |j, a| self.get(a, i, j))
    }
}

/// Source of connection coefficients along leaves.
pub trait ConnectionField: Sync {
    fn m(&self) -> usize;
    fn leaf_matrix(&self, axis: usize, q: &[f64]) -> Result<DMatrix<f64>>;
}

/// `γ` sampled on the grid, with the per-node least-squares residuals.
#[derive(Clone, Debug)]
pub struct ConnectionCoeffs {
    pub grid: GridSpec,
    pub k: usize,
    pub m: usize,
    pub nodes: Vec<GammaTensor>,
    pub residuals: Vec<f64>,
}

impl ConnectionCoeffs {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

impl ConnectionField for ConnectionCoeffs {
    fn m(&self) -> usize {
        self.m
    }

    /// Multilinear interpolation of the node tensors.
    fn leaf_matrix(&self, axis: usize, q: &[f64]) -> Result<DMatrix<f64>> {
        let width = self.k * self.m * self.m;
        let data = self
            .grid
            .interpolate_with(width, |i| self.nodes[i].as_slice(), q);
        let t = GammaTensor {
            k: self.k,
            m: self.m,
            data,
        };
        Ok(t.leaf_matrix(axis))
    }
}

/// `γ` evaluated exactly at any point from the symbolic system.
pub struct PointwiseConnection<'a> {
    pub table: &'a BracketTable,
}

impl ConnectionField for PointwiseConnection<'_> {
    fn m(&self) -> usize {
        self.table.m()
    }

    fn leaf_matrix(&self, axis: usize, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.table.gamma_at(q)?.0.leaf_matrix(axis))
    }
}

/// Solve `∇_{∂i} π(g_j) = Σ_l γ^l_{ij} π(g_l)` at every node.
pub fn extract_gamma(
    system: &AffineSystem,
    grid: &GridSpec,
    tol: f64,
) -> Result<ConnectionCoeffs> {
    let table = BracketTable::new(system)?;
    extract_gamma_from(&table, grid, tol)
}

pub fn extract_gamma_from(
    table: &BracketTable,
    grid: &GridSpec,
    tol: f64,
) -> Result<ConnectionCoeffs> {
    let per_node: Vec<(GammaTensor, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|flat| table.gamma_at(&grid.node(flat)))
        .collect::<Result<_>>()?;
    if let Some((node, (_, r))) = per_node
        .iter()
        .enumerate()
        .find(|(_, (_, r))| *r > tol)
    {
        return Err(Error::Residual {
            node,
            residual: *r,
            tolerance: tol,
            context: "connection coefficients",
        });
    }
    let (nodes, residuals) = per_node.into_iter().unzip();
    Ok(ConnectionCoeffs {
        grid: grid.clone(),
        k: table.chart().k(),
        m: table.m(),
        nodes,
        residuals,
    })
}

/// `α_{ij}` on the grid: `∇_{∂i} π(f) = Σ_j α_{ij} Z̄_j`. Each node holds a
/// `k × m` matrix.
#[derive(Clone, Debug)]
pub struct AlphaCoeffs {
    pub grid: GridSpec,
    pub nodes: Vec<DMatrix<f64>>,
    pub residuals: Vec<f64>,
}

impl AlphaCoeffs {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// The drift-side coefficients at one point, with the worst relative
/// residual.
pub fn alpha_at(
    table: &BracketTable,
    zbar: &[QuotientSection],
    q: &[f64],
) -> Result<(DMatrix<f64>, f64)> {
    let chart = table.chart();
    let z = section_matrix(zbar, chart.quotient_dim(), q)?;
    let pinv = pseudo_inverse(&z, RANK_REL_TOL);
    let mut out = DMatrix::zeros(chart.k(), zbar.len());
    let mut worst: f64 = 0.0;
    for i in 0..chart.k() {
        let rhs = DVector::from_vec(table.d_drift(i).eval(q)?);
        let ls = lstsq_with(&pinv, &z, &rhs);
        worst = worst.max(ls.residual / (1.0 + rhs.norm()));
        out.row_mut(i).copy_from(&ls.solution.transpose());
    }
    Ok((out, worst))
}

pub fn extract_alpha_coeffs(
    system: &AffineSystem,
    zbar: &[QuotientSection],
    grid: &GridSpec,
    tol: f64,
) -> Result<AlphaCoeffs> {
    let table = BracketTable::new(system)?;
    extract_alpha_from(&table, zbar, grid, tol)
}

pub fn extract_alpha_from(
    table: &BracketTable,
    zbar: &[QuotientSection],
    grid: &GridSpec,
    tol: f64,
) -> Result<AlphaCoeffs> {
    let per_node: Vec<(DMatrix<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|flat| alpha_at(table, zbar, &grid.node(flat)))
        .collect::<Result<_>>()?;
    if let Some((node, (_, r))) = per_node
        .iter()
        .enumerate()
        .find(|(_, (_, r))| *r > tol)
    {
        return Err(Error::Residual {
            node,
            residual: *r,
            tolerance: tol,
            context: "drift coefficients",
        });
    }
    let (nodes, residuals) = per_node.into_iter().unzip();
    Ok(AlphaCoeffs {
        grid: grid.clone(),
        nodes,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChartSpec;

    fn system(n: usize, k: usize, bounds: &[(f64, f64)], f: &[&str], gs: &[&[&str]]) -> AffineSystem {
        let chart = ChartSpec::new(n, k, bounds).unwrap();
        AffineSystem::new(
            chart,
            VectorFieldExpr::parse(f, n).unwrap(),
            gs.iter().map(|g| VectorFieldExpr::parse(g, n).unwrap()).collect(),
        )
        .unwrap()
    }

    fn cube(n: usize) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); n]
    }

    #[test]
    fn parallel_system_is_invariant() {
        let s = system(3, 2, &cube(3), &["0", "0", "x3"], &[&["0", "0", "1"]]);
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let r = check_local_invariance(&s, &grid, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::Invariant);
        assert_eq!(r.worst_drift_residual, 0.0);
        assert_eq!(r.worst_control_residual, 0.0);
    }

    #[test]
    fn running_fixture_is_invariant() {
        let s = system(
            3,
            2,
            &cube(3),
            &["0", "0", "x1*x2 + x3"],
            &[&["0", "0", "1 + x1^2"]],
        );
        let grid = GridSpec::uniform(s.chart(), 9).unwrap();
        let r = check_local_invariance(&s, &grid, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::Invariant);
        assert!(r.worst_drift_residual < 1e-14);
    }

    #[test]
    fn transversal_drift_shear_is_not_invariant() {
        // D = span{∂1}; π([∂1, f]) = (1, 0) is never in span{(x3, 1)}.
        let s = system(3, 1, &cube(3), &["0", "x1", "0"], &[&["0", "x3", "1"]]);
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let r = check_local_invariance(&s, &grid, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::NotInvariant);
        assert_eq!(r.offending_nodes().len(), grid.len());
        // oracle: the residual of (1, 0) against span{(x3, 1)} is 1/sqrt(1 + x3^2)
        for o in &r.offending {
            let x3 = o.point[2];
            assert_eq!(o.field, FieldId::Drift);
            assert!((o.residual - 1.0 / (1.0 + x3 * x3).sqrt()).abs() < 1e-12);
        }
        assert_eq!(r.worst_control_residual, 0.0);
    }

    #[test]
    fn duplicate_controls_rank() {
        let s = system(2, 1, &cube(2), &["0", "0"], &[&["0", "1"], &["0", "1"]]);
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let p = rank_profile(&s, &grid).unwrap();
        assert!(p.rank_g.iter().all(|&r| r == 1));
        assert!(p.rank_quotient.iter().all(|&r| r == 1));
        assert!(p.g_regular && p.quotient_regular);
    }

    #[test]
    fn gamma_of_running_control() {
        let s = system(3, 2, &cube(3), &["0", "0", "0"], &[&["0", "0", "1 + x1^2"]]);
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let c = extract_gamma(&s, &grid, DEFAULT_TOLERANCE).unwrap();
        for (flat, t) in c.nodes.iter().enumerate() {
            let x1 = grid.node(flat)[0];
            assert!((t.get(0, 0, 0) - 2.0 * x1 / (1.0 + x1 * x1)).abs() < 1e-14);
            assert_eq!(t.get(0, 1, 0), 0.0);
        }
        assert!(c.max_residual() < 1e-14);
    }

    #[test]
    fn gamma_splits_over_redundant_controls() {
        let s = system(
            3,
            2,
            &cube(3),
            &["0", "0", "0"],
            &[&["0", "0", "1 + x1^2"], &["0", "0", "1 + x1^2"]],
        );
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let c = extract_gamma(&s, &grid, DEFAULT_TOLERANCE).unwrap();
        for (flat, t) in c.nodes.iter().enumerate() {
            let x1 = grid.node(flat)[0];
            let half = x1 / (1.0 + x1 * x1);
            for (l, j) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                assert!((t.get(l, 0, j) - half).abs() < 1e-14);
            }
        }
        assert!(c.max_residual() < 1e-14);
    }

    #[test]
    fn gamma_rejects_inconsistent_system() {
        let s = system(3, 1, &cube(3), &["0", "0", "0"], &[&["0", "x1", "1"]]);
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        assert!(matches!(
            extract_gamma(&s, &grid, DEFAULT_TOLERANCE),
            Err(Error::Residual { .. })
        ));
    }

    #[test]
    fn alpha_of_running_drift() {
        let s = system(
            3,
            2,
            &cube(3),
            &["0", "0", "x1*x2 + x3"],
            &[&["0", "0", "1 + x1^2"]],
        );
        let zbar = vec![QuotientSection::new(vec![crate::expr::ScalarExpr::one()])];
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let a = extract_alpha_coeffs(&s, &zbar, &grid, DEFAULT_TOLERANCE).unwrap();
        for (flat, al) in a.nodes.iter().enumerate() {
            let q = grid.node(flat);
            assert_eq!(al[(0, 0)], q[1]);
            assert_eq!(al[(1, 0)], q[0]);
        }
    }

    #[test]
    fn module_form_agrees_with_quotient_derivatives() {
        let s = system(
            3,
            2,
            &cube(3),
            &["x3", "0", "x1*x2 + x3"],
            &[&["x2", "1", "1 + x1^2"]],
        );
        let grid = GridSpec::uniform(s.chart(), 5).unwrap();
        let sections = vec![
            VectorFieldExpr::parse(&["1 + x3^2", "0", "0"], 3).unwrap(),
            VectorFieldExpr::parse(&["x2", "2 + x1", "0"], 3).unwrap(),
        ];
        let a = check_local_invariance(&s, &grid, DEFAULT_TOLERANCE).unwrap();
        let b = check_module_form(&s, &grid, DEFAULT_TOLERANCE, &sections).unwrap();
        assert_eq!(a.verdict, Verdict::Invariant);
        assert_eq!(b.verdict, Verdict::Invariant);

        let bad = system(3, 1, &cube(3), &["0", "x1", "0"], &[&["0", "x3", "1"]]);
        let grid = GridSpec::uniform(bad.chart(), 5).unwrap();
        let sec = vec![VectorFieldExpr::parse(&["1", "0", "0"], 3).unwrap()];
        let a = check_local_invariance(&bad, &grid, DEFAULT_TOLERANCE).unwrap();
        let b = check_module_form(&bad, &grid, DEFAULT_TOLERANCE, &sec).unwrap();
        assert_eq!(a.offending_nodes(), b.offending_nodes());
    }
}
