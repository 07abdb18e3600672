use super::{ChartSpec, QuotientSection, VectorFieldExpr};
use crate::error::{Error, Result};
use crate::expr::ScalarExpr;

/// Tolerance for accepting a numerically vanishing transversal component.
const SECTION_TOL: f64 = 1e-12;

/// Coordinate Lie bracket: `[X, Y]_j = Σ_i X_i ∂_i Y_j - Y_i ∂_i X_j`.
pub fn lie_bracket(x: &VectorFieldExpr, y: &VectorFieldExpr) -> Result<VectorFieldExpr> {
    let n = x.dim();
    if y.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.dim(),
            context: "lie bracket operands",
        });
    }
    let components = (0..n)
        .map(|j| {
            let mut acc = ScalarExpr::zero();
            for i in 0..n {
                let xi = x.component(i);
                let yi = y.component(i);
                if !xi.is_const_zero() {
                    acc = acc + xi.clone() * y.component(j).diff(i);
                }
                if !yi.is_const_zero() {
                    acc = acc - yi.clone() * x.component(j).diff(i);
                }
            }
            acc
        })
        .collect();
    Ok(VectorFieldExpr::new(components))
}

/// `π(Y)`: the transversal components `k+1..n` of `Y`.
pub fn quotient_project(y: &VectorFieldExpr, chart: &ChartSpec) -> QuotientSection {
    debug_assert_eq!(y.dim(), chart.n());
    QuotientSection::new(y.components()[chart.k()..].to_vec())
}

/// Canonical lift of a quotient section: leaf components set to zero.
pub fn lift(ybar: &QuotientSection, chart: &ChartSpec) -> VectorFieldExpr {
    let mut comps = vec![ScalarExpr::zero(); chart.k()];
    comps.extend(ybar.components().iter().cloned());
    VectorFieldExpr::new(comps)
}

fn sample_points(chart: &ChartSpec) -> Vec<Vec<f64>> {
    let per_axis = if chart.n() <= 4 { 5 } else { 3 };
    let axes: Vec<Vec<f64>> = chart
        .bounds()
        .iter()
        .map(|&(a, b)| {
            (0..per_axis)
                .map(|i| a + (b - a) * i as f64 / (per_axis - 1) as f64)
                .collect()
        })
        .collect();
    let mut pts = vec![Vec::new()];
    for axis in &axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    pts
}

/// Fail unless every transversal component of `x` vanishes, symbolically
/// or at the chart sample points.
pub fn ensure_section_of_d(x: &VectorFieldExpr, chart: &ChartSpec) -> Result<()> {
    let pending: Vec<usize> = (chart.k()..chart.n())
        .filter(|&j| !x.component(j).is_zero())
        .collect();
    if pending.is_empty() {
        return Ok(());
    }
    for q in sample_points(chart) {
        for &j in &pending {
            let v = x.component(j).eval(&q)?;
            if v.abs() > SECTION_TOL {
                return Err(Error::NotInDistribution {
                    component: j + 1,
                    value: v,
                    point: q,
                });
            }
        }
    }
    Ok(())
}

/// Quotient connection `∇_X Ȳ = π([X, Y])` for `X ∈ Γ(D)`, with `Y` the
/// canonical lift of `Ȳ`.
pub fn connection_apply(
    x: &VectorFieldExpr,
    ybar: &QuotientSection,
    chart: &ChartSpec,
) -> Result<QuotientSection> {
    if x.dim() != chart.n() {
        return Err(Error::Dimension {
            expected: chart.n(),
            found: x.dim(),
            context: "connection direction",
        });
    }
    if ybar.dim() != chart.quotient_dim() {
        return Err(Error::Dimension {
            expected: chart.quotient_dim(),
            found: ybar.dim(),
            context: "quotient section",
        });
    }
    ensure_section_of_d(x, chart)?;
    let bracket = lie_bracket(x, &lift(ybar, chart))?;
    Ok(quotient_project(&bracket, chart))
}

/// `∇_{∂i} ∇_{∂j} Ȳ - ∇_{∂j} ∇_{∂i} Ȳ` (zero-based leaf axes), with
/// polynomial cancellation applied to each component.
pub fn curvature_residual(
    ybar: &QuotientSection,
    i: usize,
    j: usize,
    chart: &ChartSpec,
) -> Result<QuotientSection> {
    let k = chart.k();
    if i >= k || j >= k {
        return Err(Error::Dimension {
            expected: k,
            found: i.max(j) + 1,
            context: "curvature axes must be leaf axes",
        });
    }
    let xi = VectorFieldExpr::coordinate(chart.n(), i);
    let xj = VectorFieldExpr::coordinate(chart.n(), j);
    let ij = connection_apply(&xi, &connection_apply(&xj, ybar, chart)?, chart)?;
    let ji = connection_apply(&xj, &connection_apply(&xi, ybar, chart)?, chart)?;
    Ok(QuotientSection::new(
        ij.components()
            .iter()
            .zip(ji.components())
            .map(|(a, b)| ScalarExpr::sub(a.clone(), b.clone()).cancel())
            .collect(),
    ))
}
