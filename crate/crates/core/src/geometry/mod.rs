//! Flat charts, vector fields, affine systems and the quotient `TM/D`.
//!
//! In a flat chart `D = span{∂/∂x1, …, ∂/∂xk}`; the classes of
//! `∂/∂x(k+1), …, ∂/∂xn` form the frame of `TM/D`, so a quotient section is
//! just the last `n - k` components of any representative.

mod connection;
mod flatten;

pub use connection::{
    connection_apply, curvature_residual, ensure_section_of_d, lie_bracket, lift, quotient_project,
};
pub use flatten::{DistributionSpec, FlattenedSystem, Flattening};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{parse_expr, ScalarExpr};

/// A rectangular chart domain with a flat rank-`k` distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartSpec {
    n: usize,
    k: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    base_point: Vec<f64>,
}

impl ChartSpec {
    /// Chart with base point at the origin.
    pub fn new(n: usize, k: usize, bounds: &[(f64, f64)]) -> Result<Self> {
        Self::with_base_point(n, k, bounds, &vec![0.0; n])
    }

    pub fn with_base_point(
        n: usize,
        k: usize,
        bounds: &[(f64, f64)],
        base_point: &[f64],
    ) -> Result<Self> {
        if k == 0 || k >= n {
            return Err(Error::Chart(format!("rank k={k} must satisfy 1 <= k < n={n}")));
        }
        if bounds.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: bounds.len(),
                context: "chart box axes",
            });
        }
        if base_point.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: base_point.len(),
                context: "base point",
            });
        }
        for (i, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite()) || a >= b {
                return Err(Error::Chart(format!(
                    "axis x{} has degenerate interval [{a}, {b}]",
                    i + 1
                )));
            }
        }
        for (i, (&(a, b), &p)) in bounds.iter().zip(base_point).enumerate() {
            if !(a <= p && p <= b) {
                return Err(Error::Chart(format!(
                    "base point coordinate x{} = {p} lies outside [{a}, {b}]",
                    i + 1
                )));
            }
        }
        Ok(ChartSpec {
            n,
            k,
            lower: bounds.iter().map(|b| b.0).collect(),
            upper: bounds.iter().map(|b| b.1).collect(),
            base_point: base_point.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Dimension of the quotient `TM/D`.
    pub fn quotient_dim(&self) -> usize {
        self.n - self.k
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lower.iter().copied().zip(self.upper.iter().copied()).collect()
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    /// Leaf coordinates of the slice through the base point. All parallel
    /// sections and drift integrals are anchored on `{x_i = slice_i, i <= k}`.
    pub fn slice(&self) -> &[f64] {
        &self.base_point[..self.k]
    }

    /// Project `q` onto the slice: leaf coordinates replaced by the slice's.
    pub fn slice_point(&self, q: &[f64]) -> Vec<f64> {
        let mut s = q.to_vec();
        s[..self.k].copy_from_slice(self.slice());
        s
    }

    pub fn contains(&self, q: &[f64], slack: f64) -> bool {
        q.len() == self.n
            && q.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&a, &b))| x >= a - slack && x <= b + slack)
    }
}

/// A vector field given by `n` symbolic components.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldExpr {
    components: Vec<ScalarExpr>,
}

impl VectorFieldExpr {
    pub fn new(components: Vec<ScalarExpr>) -> Self {
        VectorFieldExpr { components }
    }

    pub fn parse(texts: &[&str], n: usize) -> Result<Self> {
        if texts.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: texts.len(),
                context: "vector field components",
            });
        }
        let components = texts
            .iter()
            .map(|t| parse_expr(t, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorFieldExpr { components })
    }

    pub fn zero(n: usize) -> Self {
        VectorFieldExpr {
            components: vec![ScalarExpr::zero(); n],
        }
    }

    /// `∂/∂x(i+1)`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut v = Self::zero(n);
        v.components[i] = ScalarExpr::one();
        v
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarExpr] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarExpr {
        &self.components[i]
    }

    pub fn eval(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(q)).collect()
    }

    pub fn scale(&self, f: &ScalarExpr) -> Self {
        VectorFieldExpr {
            components: self
                .components
                .iter()
                .map(|c| ScalarExpr::mul(f.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        VectorFieldExpr {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| ScalarExpr::add(a.clone(), b.clone()))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        VectorFieldExpr {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| ScalarExpr::sub(a.clone(), b.clone()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&ScalarExpr) -> ScalarExpr) -> Self {
        VectorFieldExpr {
            components: self.components.iter().map(f).collect(),
        }
    }

    fn check_dim(&self, n: usize, context: &'static str) -> Result<()> {
        if self.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                found: self.dim(),
                context,
            });
        }
        for c in &self.components {
            c.check_dimension(n)?;
        }
        Ok(())
    }
}

/// A section of `TM/D` in the quotient frame: `n - k` components.
#[derive(Clone, Debug, PartialEq)]
pub struct QuotientSection {
    components: Vec<ScalarExpr>,
}

impl QuotientSection {
    pub fn new(components: Vec<ScalarExpr>) -> Self {
        QuotientSection { components }
    }

    pub fn components(&self) -> &[ScalarExpr] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(q)).collect()
    }

    /// Every component folds or cancels to zero.
    pub fn is_zero(&self) -> bool {
        self.components.iter().all(ScalarExpr::is_zero)
    }

    pub fn scale(&self, f: &ScalarExpr) -> Self {
        QuotientSection {
            components: self
                .components
                .iter()
                .map(|c| ScalarExpr::mul(f.clone(), c.clone()))
                .collect(),
        }
    }
}

/// `ẋ = f(x) + Σ g_i(x) u_i` on a flat chart.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSystem {
    chart: ChartSpec,
    drift: VectorFieldExpr,
    controls: Vec<VectorFieldExpr>,
}

impl AffineSystem {
    /// Controls may be empty; such a system is controlled invariant only
    /// when the drift is already parallel.
    pub fn new(
        chart: ChartSpec,
        drift: VectorFieldExpr,
        controls: Vec<VectorFieldExpr>,
    ) -> Result<Self> {
        let n = chart.n();
        drift.check_dim(n, "drift components")?;
        for g in &controls {
            g.check_dim(n, "control field components")?;
        }
        Ok(AffineSystem {
            chart,
            drift,
            controls,
        })
    }

    pub fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    pub fn drift(&self) -> &VectorFieldExpr {
        &self.drift
    }

    pub fn controls(&self) -> &[VectorFieldExpr] {
        &self.controls
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }
}

/// Anything whose drift and control fields can be evaluated pointwise:
/// symbolic systems, tabulated fixtures, systems under numerical feedback.
pub trait PointwiseSystem: Send + Sync {
    fn chart(&self) -> &ChartSpec;
    fn num_controls(&self) -> usize;
    fn drift_at(&self, q: &[f64]) -> Result<Vec<f64>>;
    fn control_at(&self, i: usize, q: &[f64]) -> Result<Vec<f64>>;

    /// Drift and all controls at once.
    fn fields_at(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let g = (0..self.num_controls())
            .map(|i| self.control_at(i, q))
            .collect::<Result<_>>()?;
        Ok((self.drift_at(q)?, g))
    }

    /// `f(q) + Σ g_i(q) u_i`.
    fn velocity(&self, q: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.drift_at(q)?;
        for (i, &ui) in u.iter().enumerate().take(self.num_controls()) {
            if ui != 0.0 {
                let g = self.control_at(i, q)?;
                for (vj, gj) in v.iter_mut().zip(g) {
                    *vj += gj * ui;
                }
            }
        }
        Ok(v)
    }
}

impl PointwiseSystem for AffineSystem {
    fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    fn num_controls(&self) -> usize {
        self.controls.len()
    }

    fn drift_at(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.drift.eval(q)
    }

    fn control_at(&self, i: usize, q: &[f64]) -> Result<Vec<f64>> {
        self.controls[i].eval(q)
    }
}

pub type FieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A system whose fields are arbitrary callables, for data that the
/// expression grammar cannot express (piecewise or flat functions).
#[derive(Clone)]
pub struct CallableSystem {
    chart: ChartSpec,
    drift: FieldFn,
    controls: Vec<FieldFn>,
}

impl CallableSystem {
    pub fn new(chart: ChartSpec, drift: FieldFn, controls: Vec<FieldFn>) -> Self {
        CallableSystem {
            chart,
            drift,
            controls,
        }
    }
}

impl std::fmt::Debug for CallableSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CallableSystem")
            .field("chart", &self.chart)
            .field("controls", &self.controls.len())
            .finish()
    }
}

impl PointwiseSystem for CallableSystem {
    fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    fn num_controls(&self) -> usize {
        self.controls.len()
    }

    fn drift_at(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok((self.drift)(q))
    }

    fn control_at(&self, i: usize, q: &[f64]) -> Result<Vec<f64>> {
        Ok((self.controls[i])(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_validation() {
        assert!(ChartSpec::new(3, 0, &[(-1.0, 1.0); 3]).is_err());
        assert!(ChartSpec::new(3, 3, &[(-1.0, 1.0); 3]).is_err());
        assert!(ChartSpec::new(2, 1, &[(-1.0, 1.0), (1.0, 1.0)]).is_err());
        assert!(ChartSpec::with_base_point(2, 1, &[(-1.0, 1.0); 2], &[0.0, 2.0]).is_err());
        let c = ChartSpec::new(3, 2, &[(-1.0, 1.0); 3]).unwrap();
        assert_eq!(c.quotient_dim(), 1);
        assert_eq!(c.slice_point(&[0.5, 0.5, 0.2]), vec![0.0, 0.0, 0.2]);
    }

    #[test]
    fn system_rejects_wrong_dimensions() {
        let chart = ChartSpec::new(2, 1, &[(-1.0, 1.0); 2]).unwrap();
        let f = VectorFieldExpr::parse(&["0", "x2"], 2).unwrap();
        let bad = VectorFieldExpr::parse(&["0", "1", "0"], 3).unwrap();
        assert!(AffineSystem::new(chart.clone(), f.clone(), vec![bad]).is_err());
        assert!(AffineSystem::new(chart, f, vec![]).is_ok());
    }
}
