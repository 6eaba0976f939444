//! Problem data for the equality-constrained MPC problem and its
//! bound-constrained parent.
//!
//! A problem has stages `t = 0..N-1`, each with dynamics
//! `x_{t+1} = A_t x_t + B_t u_t` and stage cost
//! `½ [x;u]ᵀ [Qx Qxu; Qxuᵀ Qu] [x;u]`, plus a terminal cost `½ x_Nᵀ QxN x_N`.
//! The control dimension may differ between stages (including zero).

mod json;
mod random;

pub use json::{parse_problem, serialize_problem};
pub use random::generate_random_stable;

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, Mat, Vector};

/// Default tolerance on the minimum eigenvalue for the PSD/PD checks.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub a: Mat,
    pub b: Mat,
    pub qx: Mat,
    pub qxu: Mat,
    pub qu: Mat,
}

impl StageData {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// The joint cost block `[Qx Qxu; Qxuᵀ Qu]`.
    pub fn joint_cost(&self) -> Mat {
        let (nx, nu) = (self.nx(), self.nu());
        let mut q = Mat::zeros(nx + nu, nx + nu);
        q.view_mut((0, 0), (nx, nx)).copy_from(&self.qx);
        q.view_mut((0, nx), (nx, nu)).copy_from(&self.qxu);
        q.view_mut((nx, 0), (nu, nx))
            .copy_from(&self.qxu.transpose());
        q.view_mut((nx, nx), (nu, nu)).copy_from(&self.qu);
        q
    }

    pub fn cost(&self, x: &Vector, u: &Vector) -> f64 {
        0.5 * x.dot(&(&self.qx * x)) + x.dot(&(&self.qxu * u)) + 0.5 * u.dot(&(&self.qu * u))
    }

    fn check_dims(&self, t: usize, nx: usize) -> Result<()> {
        let nu = self.b.ncols();
        let expect = |m: &Mat, r: usize, c: usize, name: &str| {
            if m.shape() == (r, c) {
                Ok(())
            } else {
                Err(Error::dims(
                    t,
                    format!("{name} is {}x{}, expected {r}x{c}", m.nrows(), m.ncols()),
                ))
            }
        };
        expect(&self.a, nx, nx, "A")?;
        expect(&self.b, nx, nu, "B")?;
        expect(&self.qx, nx, nx, "Qx")?;
        expect(&self.qxu, nx, nu, "Qxu")?;
        expect(&self.qu, nu, nu, "Qu")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub stages: Vec<StageData>,
    pub qxn: Mat,
    pub x0: Vector,
}

impl MpcProblem {
    /// Builds a problem after checking that all dimensions agree and `N ≥ 1`.
    pub fn new(stages: Vec<StageData>, qxn: Mat, x0: Vector) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidArgument(
                "horizon N must be at least 1".into(),
            ));
        }
        let p = MpcProblem { stages, qxn, x0 };
        p.check_dims()?;
        Ok(p)
    }

    /// Same as [`MpcProblem::new`] but admits `N = 0` (terminal cost only),
    /// which arises for the top problem of some reduction trees.
    pub(crate) fn with_horizon_zero_allowed(
        stages: Vec<StageData>,
        qxn: Mat,
        x0: Vector,
    ) -> Result<Self> {
        let p = MpcProblem { stages, qxn, x0 };
        p.check_dims()?;
        Ok(p)
    }

    pub fn nx(&self) -> usize {
        self.x0.len()
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn check_dims(&self) -> Result<()> {
        let nx = self.nx();
        if self.qxn.shape() != (nx, nx) {
            return Err(Error::dims(
                None,
                format!(
                    "QxN is {}x{}, x0 has length {nx}",
                    self.qxn.nrows(),
                    self.qxn.ncols()
                ),
            ));
        }
        for (t, s) in self.stages.iter().enumerate() {
            s.check_dims(t, nx)?;
        }
        Ok(())
    }

    /// Total cost of a trajectory; `x` has `N+1` entries and `u` has `N`.
    pub fn objective(&self, x: &[Vector], u: &[Vector]) -> f64 {
        let n = self.horizon();
        let stage: f64 = self
            .stages
            .iter()
            .enumerate()
            .map(|(t, s)| s.cost(&x[t], &u[t]))
            .sum();
        stage + 0.5 * x[n].dot(&(&self.qxn * &x[n]))
    }

    /// Copy of the problem with a different initial state.
    pub fn with_x0(&self, x0: Vector) -> Self {
        MpcProblem {
            stages: self.stages.clone(),
            qxn: self.qxn.clone(),
            x0,
        }
    }
}

/// Which part of the convexity assumption a stage violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionId {
    /// `[Qx Qxu; Qxuᵀ Qu]` is not PSD.
    JointCostPsd,
    /// `Qu` is not PD.
    InputCostPd,
    /// `QxN` is not PSD.
    TerminalCostPsd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Stage index; `N` for the terminal cost.
    pub stage: usize,
    pub assumption: AssumptionId,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the convexity assumptions on every stage.
///
/// `tol` is an absolute slack on the smallest eigenvalue of each symmetrized
/// block: PSD means `λ_min ≥ -tol`, PD means `λ_min > tol`.
pub fn validate_problem(p: &MpcProblem, tol: f64) -> Result<ValidationReport> {
    p.check_dims()?;
    let mut violations = Vec::new();
    for (t, s) in p.stages.iter().enumerate() {
        let joint = min_sym_eigenvalue(&s.joint_cost());
        if joint < -tol {
            violations.push(Violation {
                stage: t,
                assumption: AssumptionId::JointCostPsd,
                min_eigenvalue: joint,
            });
        }
        if s.nu() > 0 {
            let qu = min_sym_eigenvalue(&s.qu);
            if qu <= tol {
                violations.push(Violation {
                    stage: t,
                    assumption: AssumptionId::InputCostPd,
                    min_eigenvalue: qu,
                });
            }
        }
    }
    let term = min_sym_eigenvalue(&p.qxn);
    if term < -tol {
        violations.push(Violation {
            stage: p.horizon(),
            assumption: AssumptionId::TerminalCostPsd,
            min_eigenvalue: term,
        });
    }
    Ok(ValidationReport { violations })
}

/// The inequality-constrained problem: `0 ≤ u_t[j]` for every `j` in `bounded[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstrainedProblem {
    pub base: MpcProblem,
    /// Sorted, duplicate-free control indices per stage.
    pub bounded: Vec<Vec<usize>>,
}

impl BoundConstrainedProblem {
    pub fn new(base: MpcProblem, mut bounded: Vec<Vec<usize>>) -> Result<Self> {
        if bounded.len() != base.horizon() {
            return Err(Error::Index(format!(
                "{} bound sets for horizon {}",
                bounded.len(),
                base.horizon()
            )));
        }
        for (t, set) in bounded.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            let nu = base.stages[t].nu();
            if let Some(&j) = set.iter().find(|&&j| j >= nu) {
                return Err(Error::Index(format!(
                    "bound index {j} at stage {t} with nu = {nu}"
                )));
            }
        }
        Ok(BoundConstrainedProblem { base, bounded })
    }

    /// Problem with the controls in `fixed` (held at zero) deleted.
    pub fn eliminate(&self, fixed: &[Vec<usize>]) -> Result<MpcProblem> {
        if fixed.len() != self.base.horizon() {
            return Err(Error::Index(format!(
                "{} fixed sets for horizon {}",
                fixed.len(),
                self.base.horizon()
            )));
        }
        let mut stages = Vec::with_capacity(fixed.len());
        for (t, (s, set)) in self.base.stages.iter().zip(fixed).enumerate() {
            let free = free_indices(s.nu(), set).ok_or_else(|| {
                Error::Index(format!(
                    "fixed set {set:?} at stage {t} with nu = {}",
                    s.nu()
                ))
            })?;
            stages.push(StageData {
                a: s.a.clone(),
                b: s.b.select_columns(&free),
                qx: s.qx.clone(),
                qxu: s.qxu.select_columns(&free),
                qu: s.qu.select_rows(&free).select_columns(&free),
            });
        }
        MpcProblem::new(stages, self.base.qxn.clone(), self.base.x0.clone())
    }

    /// Every control of every stage is bounded below by zero.
    pub fn all_bounded(base: MpcProblem) -> Self {
        let bounded = base.stages.iter().map(|s| (0..s.nu()).collect()).collect();
        BoundConstrainedProblem { base, bounded }
    }
}

/// Indices `0..nu` not in `fixed`; `None` if `fixed` is unsorted, repeats, or out of range.
pub fn free_indices(nu: usize, fixed: &[usize]) -> Option<Vec<usize>> {
    if fixed.iter().any(|&j| j >= nu) || fixed.windows(2).any(|w| w[0] >= w[1]) {
        return None;
    }
    Some(
        (0..nu)
            .filter(|j| fixed.binary_search(j).is_err())
            .collect(),
    )
}

/// Scatters the free controls of a stage back into a full-length vector with
/// zeros at the fixed positions.
pub fn expand_controls(nu: usize, free: &[usize], u_free: &Vector) -> Vector {
    let mut u = Vector::zeros(nu);
    for (v, &j) in u_free.iter().zip(free) {
        u[j] = *v;
    }
    u
}

/// Scalar test problem used throughout the tests and docs:
/// `A = B = Qx = Qu = QxN = 1`, `Qxu = 0`, `x̄₀ = 1`.
pub fn scalar_problem(horizon: usize) -> MpcProblem {
    let one = || Mat::from_element(1, 1, 1.0);
    let stage = StageData {
        a: one(),
        b: one(),
        qx: one(),
        qxu: Mat::zeros(1, 1),
        qu: one(),
    };
    MpcProblem::new(vec![stage; horizon], one(), Vector::from_element(1, 1.0))
        .expect("scalar problem is well formed")
}
