//! The JSON system description and its validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::parse_expr;
use crate::geometry::{AffineSystem, ChartSpec, DistributionSpec, Flattening, VectorFieldExpr};
use crate::grid::{GridSpec, DEFAULT_NODES_PER_AXIS};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum DistributionInput {
    Named(String),
    Vectors { vectors: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum GridInput {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative membership tolerance of the invariance test.
    pub invariance: Option<f64>,
    /// Bound on verified quotient-bracket residuals.
    pub residual: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Steps {
    pub fd: Option<f64>,
    pub ode: Option<f64>,
    pub quadrature_intervals: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum ControlInput {
    Named(String),
    Constant(Vec<f64>),
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationInput {
    pub horizon: Option<f64>,
    /// Pairs of start points on a common leaf.
    pub pairs: Option<Vec<[Vec<f64>; 2]>>,
    /// `"zero"`, `"random"` or a constant vector.
    pub control: Option<ControlInput>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemDescription {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub base_point: Option<Vec<f64>>,
    pub drift: Vec<String>,
    #[serde(default)]
    pub controls: Vec<Vec<String>>,
    pub distribution: Option<DistributionInput>,
    pub grid: Option<GridInput>,
    pub tolerances: Option<Tolerances>,
    pub steps: Option<Steps>,
    /// One-based leaf axes in the order the integration staircase moves.
    pub axis_order: Option<Vec<usize>>,
    pub simulation: Option<SimulationInput>,
}

/// A validated description: the system in its original coordinates, the
/// flattening, and the same system in flat coordinates.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub description: SystemDescription,
    pub original: AffineSystem,
    pub flattening: Flattening,
    pub flat: AffineSystem,
}

fn field_err(field: &str, e: impl std::fmt::Display) -> Error {
    Error::Input(format!("field `{field}`: {e}"))
}

impl SystemDescription {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Input(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let (n, k) = (self.n, self.k);
        if n == 0 {
            return Err(field_err("n", "must be positive"));
        }
        if k == 0 || k >= n {
            return Err(field_err("k", format!("must satisfy 1 <= k < n = {n}")));
        }
        if self.bounds.len() != n {
            return Err(field_err("box", format!("expected {n} intervals, found {}", self.bounds.len())));
        }
        let bounds: Vec<(f64, f64)> = self.bounds.iter().map(|b| (b[0], b[1])).collect();
        for (i, &(a, b)) in bounds.iter().enumerate() {
            if !(a < b) {
                return Err(field_err(&format!("box[{i}]"), format!("degenerate interval [{a}, {b}]")));
            }
        }
        let base = self.base_point.clone().unwrap_or_else(|| vec![0.0; n]);
        if base.len() != n {
            return Err(field_err("base_point", format!("expected {n} coordinates, found {}", base.len())));
        }
        let parse_field = |texts: &[String], name: &str| -> Result<VectorFieldExpr> {
            if texts.len() != n {
                return Err(field_err(name, format!("expected {n} components, found {}", texts.len())));
            }
            let comps = texts
                .iter()
                .enumerate()
                .map(|(i, t)| parse_expr(t, n).map_err(|e| field_err(&format!("{name}[{i}]"), e)))
                .collect::<Result<Vec<_>>>()?;
            Ok(VectorFieldExpr::new(comps))
        };
        let drift = parse_field(&self.drift, "drift")?;
        let controls = self
            .controls
            .iter()
            .enumerate()
            .map(|(i, g)| parse_field(g, &format!("controls[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let spec = match &self.distribution {
            None => DistributionSpec::Flat,
            Some(DistributionInput::Named(s)) if s == "flat" => DistributionSpec::Flat,
            Some(DistributionInput::Named(s)) => {
                return Err(field_err(
                    "distribution",
                    format!("unknown distribution `{s}`; use \"flat\" or {{\"vectors\": [...]}}"),
                ))
            }
            Some(DistributionInput::Vectors { vectors }) => DistributionSpec::Constant(vectors.clone()),
        };
        let flattening = Flattening::new(&spec, n, k).map_err(|e| field_err("distribution", e))?;
        let chart = ChartSpec::with_base_point(n, k, &bounds, &base).map_err(|e| field_err("box", e))?;
        let original = AffineSystem::new(chart, drift, controls)?;
        let flat = flattening
            .reduce_system(&bounds, &base, original.drift(), original.controls())
            .map_err(|e| field_err("distribution", e))?;
        if let Some(order) = &self.axis_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (1..=k).collect::<Vec<_>>() {
                return Err(field_err("axis_order", format!("must be a permutation of 1..{k}")));
            }
        }
        Ok(Prepared {
            description: self.clone(),
            original,
            flattening,
            flat,
        })
    }

    pub fn grid_counts(&self, override_nodes: Option<usize>) -> Result<Vec<usize>> {
        match (override_nodes, &self.grid) {
            (Some(c), _) => Ok(vec![c; self.n]),
            (None, None) => Ok(vec![DEFAULT_NODES_PER_AXIS; self.n]),
            (None, Some(GridInput::Uniform(c))) => Ok(vec![*c; self.n]),
            (None, Some(GridInput::PerAxis(v))) if v.len() == self.n => Ok(v.clone()),
            (None, Some(GridInput::PerAxis(v))) => Err(field_err(
                "grid",
                format!("expected {} node counts, found {}", self.n, v.len()),
            )),
        }
    }
}

impl Prepared {
    pub fn grid(&self, counts: &[usize]) -> Result<GridSpec> {
        GridSpec::with_counts(self.flat.chart(), counts).map_err(|e| field_err("grid", e))
    }

    /// Zero-based staircase order.
    pub fn axis_order(&self) -> Vec<usize> {
        match &self.description.axis_order {
            Some(o) => o.iter().map(|a| a - 1).collect(),
            None => (0..self.description.k).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUNNING: &str = r#"{
        "n": 3, "k": 2,
        "box": [[-1, 1], [-1, 1], [-1, 5]],
        "drift": ["0", "0", "x1*x2 + x3"],
        "controls": [["0", "0", "1 + x1^2"]]
    }"#;

    #[test]
    fn parses_running_fixture() {
        let d = SystemDescription::from_json(RUNNING).unwrap();
        let p = d.prepare().unwrap();
        assert!(p.flattening.is_identity());
        assert_eq!(p.flat, p.original);
        assert_eq!(d.grid_counts(None).unwrap(), vec![9, 9, 9]);
        assert_eq!(p.axis_order(), vec![0, 1]);
    }

    #[test]
    fn errors_name_the_field_or_line() {
        let bad = RUNNING.replace("1 + x1^2", "1 + * x1");
        let e = SystemDescription::from_json(&bad).unwrap().prepare().unwrap_err();
        assert!(e.to_string().contains("controls[0][2]"), "{e}");
        let e = SystemDescription::from_json("{\n  \"n\": 3,\n  \"k\": }").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = SystemDescription::from_json(&RUNNING.replace("\"k\": 2", "\"k\": 3"))
            .unwrap()
            .prepare()
            .unwrap_err();
        assert!(e.to_string().contains("`k`"), "{e}");
        let unknown = RUNNING.replace("\"n\": 3", "\"n\": 3, \"extra\": 1");
        assert!(SystemDescription::from_json(&unknown).is_err());
    }

    #[test]
    fn constant_distribution_is_flattened() {
        let text = r#"{
            "n": 2, "k": 1, "box": [[-1, 1], [-1, 1]],
            "drift": ["0", "0"], "controls": [["x1^2", "0"]],
            "distribution": {"vectors": [[0, 1]]}
        }"#;
        let p = SystemDescription::from_json(text).unwrap().prepare().unwrap();
        assert!(!p.flattening.is_identity());
        assert_eq!(p.flat.controls()[0].eval(&[0.3, 0.5]).unwrap(), vec![0.0, 0.25]);
        let rank_deficient = text.replace("[[0, 1]]", "[[0, 0]]");
        let e = SystemDescription::from_json(&rank_deficient).unwrap().prepare().unwrap_err();
        assert!(e.to_string().contains("`distribution`"), "{e}");
    }
}
