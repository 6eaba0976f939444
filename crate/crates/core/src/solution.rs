use serde::{Deserialize, Serialize};

use crate::linalg::{seq_rel_diff, Vector};

/// Primal and dual solution of an MPC problem.
///
/// `x` and `lambda` have `N+1` entries, `u` has `N`. `mu` holds the
/// multipliers of bounds held at zero (one vector per stage, possibly empty);
/// it is empty for a purely equality-constrained solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub lambda: Vec<Vector>,
    pub mu: Vec<Vector>,
    pub objective: f64,
}

#[derive(Serialize, Deserialize)]
struct SolutionDoc {
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    objective: f64,
}

fn rows(v: &[Vector]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

fn vectors(v: Vec<Vec<f64>>) -> Vec<Vector> {
    v.into_iter().map(Vector::from_vec).collect()
}

impl Solution {
    /// Largest relative gap over `x`, `u` and `λ`.
    pub fn max_rel_diff(&self, other: &Solution) -> f64 {
        seq_rel_diff(&self.x, &other.x)
            .max(seq_rel_diff(&self.u, &other.u))
            .max(seq_rel_diff(&self.lambda, &other.lambda))
    }

    /// Raw bit patterns of every number, in a fixed order.
    pub fn to_bits(&self) -> Vec<u64> {
        self.x
            .iter()
            .chain(&self.u)
            .chain(&self.lambda)
            .chain(&self.mu)
            .flat_map(|v| v.iter().map(|e| e.to_bits()))
            .chain(std::iter::once(self.objective.to_bits()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = SolutionDoc {
            x: rows(&self.x),
            u: rows(&self.u),
            lambda: rows(&self.lambda),
            mu: rows(&self.mu),
            objective: self.objective,
        };
        serde_json::to_string_pretty(&doc).expect("solution documents always serialize")
    }

    pub fn from_json(text: &str) -> crate::Result<Solution> {
        let doc: SolutionDoc = serde_json::from_str(text).map_err(|e| crate::Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(Solution {
            x: vectors(doc.x),
            u: vectors(doc.u),
            lambda: vectors(doc.lambda),
            mu: vectors(doc.mu),
            objective: doc.objective,
        })
    }
}
