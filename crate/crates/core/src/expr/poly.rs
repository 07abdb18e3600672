use std::collections::BTreeMap;

use super::ScalarExpr;

/// Sparse polynomial in canonical form, used to decide whether a polynomial
/// expression vanishes identically.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<Vec<u32>, f64>,
}

// Sums that cancel to within this relative margin are treated as exact zeros;
// reordered products of non-dyadic coefficients differ in the last ulp.
const CANCEL_REL: f64 = 1e-13;

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        let mut p = Polynomial::default();
        if c != 0.0 {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    pub fn variable(i: usize) -> Self {
        let mut exps = vec![0; i + 1];
        exps[i] = 1;
        let mut p = Polynomial::default();
        p.terms.insert(exps, 1.0);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Canonical form of `e`, or `None` if `e` is not a polynomial
    /// (elementary functions, division by a non-constant).
    pub fn from_expr(e: &ScalarExpr) -> Option<Self> {
        use ScalarExpr as E;
        Some(match e {
            E::Const(c) => Self::constant(*c),
            E::Var(i) => Self::variable(*i),
            E::Neg(a) => Self::from_expr(a)?.scale(-1.0),
            E::Add(a, b) => Self::from_expr(a)?.add(&Self::from_expr(b)?),
            E::Sub(a, b) => Self::from_expr(a)?.add(&Self::from_expr(b)?.scale(-1.0)),
            E::Mul(a, b) => Self::from_expr(a)?.mul(&Self::from_expr(b)?),
            E::Div(a, b) => {
                let den = Self::from_expr(b)?;
                let c = den.as_constant()?;
                if c == 0.0 {
                    return None;
                }
                Self::from_expr(a)?.scale(1.0 / c)
            }
            E::Pow(a, n) => {
                let base = Self::from_expr(a)?;
                let mut acc = Self::constant(1.0);
                for _ in 0..*n {
                    acc = acc.mul(&base);
                }
                acc
            }
            E::Func(..) => return None,
        })
    }

    fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => self.terms.get(&Vec::new()).copied(),
            _ => None,
        }
    }

    fn normalize(exps: &[u32]) -> Vec<u32> {
        let mut v = exps.to_vec();
        while v.last() == Some(&0) {
            v.pop();
        }
        v
    }

    fn insert(&mut self, exps: Vec<u32>, c: f64) {
        let key = Self::normalize(&exps);
        let entry = self.terms.entry(key.clone()).or_insert(0.0);
        let prev = *entry;
        let sum = prev + c;
        if sum == 0.0 || sum.abs() <= CANCEL_REL * prev.abs().max(c.abs()) {
            self.terms.remove(&key);
        } else {
            *entry = sum;
        }
    }

    fn scale(mut self, s: f64) -> Self {
        if s == 0.0 {
            return Polynomial::default();
        }
        for v in self.terms.values_mut() {
            *v *= s;
        }
        self
    }

    fn add(mut self, other: &Self) -> Self {
        for (e, c) in &other.terms {
            self.insert(e.clone(), *c);
        }
        self
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = Polynomial::default();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let len = ea.len().max(eb.len());
                let exps: Vec<u32> = (0..len)
                    .map(|i| ea.get(i).copied().unwrap_or(0) + eb.get(i).copied().unwrap_or(0))
                    .collect();
                out.insert(exps, ca * cb);
            }
        }
        out
    }
}
