//! Primal active-set method for `0 ≤ u` bounds.
//!
//! Each iteration solves the equality-constrained problem with the working
//! set's controls deleted (serial or parallel Riccati), then either takes the
//! longest feasible step towards that solution and adds the blocking bound,
//! or, at a full step, computes the bound multipliers with the dual forward
//! recursion and releases the most negative one.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::problem::{expand_controls, free_indices, BoundConstrainedProblem};
use crate::riccati::{dual_recursion, forward_recursion, riccati_factorize, Trajectory};
use crate::solution::Solution;
use crate::tree::{ParallelConfig, ParallelRiccati};

/// Multipliers above `-MU_TOL` count as nonnegative.
pub const MU_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Serial,
    Parallel(ParallelConfig),
}

/// Bounds currently held at zero, sorted per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkingSet {
    pub fixed: Vec<Vec<usize>>,
}

impl WorkingSet {
    fn insert(&mut self, t: usize, j: usize) {
        let set = &mut self.fixed[t];
        if let Err(pos) = set.binary_search(&j) {
            set.insert(pos, j);
        }
    }

    fn remove(&mut self, t: usize, j: usize) {
        self.fixed[t].retain(|&v| v != j);
    }

    fn contains(&self, t: usize, j: usize) -> bool {
        self.fixed[t].binary_search(&j).is_ok()
    }
}

#[derive(Debug, Clone)]
pub struct AsIterate {
    pub working_set: WorkingSet,
    /// Full-length controls; `mu[t]` is aligned with `working_set.fixed[t]`.
    pub solution: Solution,
    pub iterations: usize,
    /// Working set at the start of every iteration.
    pub history: Vec<WorkingSet>,
}

enum Solver {
    Serial,
    Parallel(ParallelRiccati),
}

impl Solver {
    fn trajectory(&self, p: &crate::problem::MpcProblem) -> Result<Trajectory> {
        match self {
            Solver::Serial => {
                let f = riccati_factorize(p, &p.qxn)?;
                forward_recursion(p, &f, &p.x0)
            }
            Solver::Parallel(s) => {
                let (sol, _) = s.solve(p)?;
                Ok(Trajectory {
                    x: sol.x,
                    u: sol.u,
                    lambda: sol.lambda,
                })
            }
        }
    }
}

pub fn solve_bound_constrained(
    q: &BoundConstrainedProblem,
    backend: Backend,
    max_iter: usize,
) -> Result<AsIterate> {
    let solver = match backend {
        Backend::Serial => Solver::Serial,
        Backend::Parallel(cfg) => Solver::Parallel(ParallelRiccati::new(cfg)?),
    };
    let base = &q.base;
    let n = base.horizon();
    let nus: Vec<usize> = base.stages.iter().map(|s| s.nu()).collect();

    let mut ws = WorkingSet {
        fixed: q.bounded.clone(),
    };
    let mut u: Vec<Vector> = nus.iter().map(|&m| Vector::zeros(m)).collect();
    let mut history = Vec::new();

    for iter in 0..max_iter {
        history.push(ws.clone());
        let reduced = q.eliminate(&ws.fixed)?;
        let traj = solver.trajectory(&reduced)?;
        let target: Vec<Vector> = (0..n)
            .map(|t| {
                let free = free_indices(nus[t], &ws.fixed[t]).expect("working set is consistent");
                expand_controls(nus[t], &free, &traj.u[t])
            })
            .collect();

        // ratio test over bounds not in the working set; ties keep the smallest (t, j)
        let mut alpha = 1.0;
        let mut blocking = None;
        for t in 0..n {
            for &j in &q.bounded[t] {
                if ws.contains(t, j) {
                    continue;
                }
                let step = target[t][j] - u[t][j];
                if step < 0.0 {
                    let ratio = (-u[t][j] / step).max(0.0);
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some((t, j));
                    }
                }
            }
        }

        if let Some((t, j)) = blocking {
            for (ut, tt) in u.iter_mut().zip(&target) {
                *ut += (tt - &*ut) * alpha;
            }
            u[t][j] = 0.0;
            ws.insert(t, j);
            continue;
        }

        let duals = dual_recursion(q, &ws.fixed, &traj)?;
        let mut release: Option<(usize, usize, f64)> = None;
        for (t, mu_t) in duals.mu.iter().enumerate() {
            for (&j, &m) in ws.fixed[t].iter().zip(mu_t.iter()) {
                if m < -MU_TOL && release.is_none_or(|(_, _, best)| m < best) {
                    release = Some((t, j, m));
                }
            }
        }
        match release {
            Some((t, j, _)) => {
                u = target;
                ws.remove(t, j);
            }
            None => {
                let objective = base.objective(&traj.x, &target);
                return Ok(AsIterate {
                    working_set: ws,
                    solution: Solution {
                        x: traj.x,
                        u: target,
                        lambda: traj.lambda,
                        mu: duals.mu,
                        objective,
                    },
                    iterations: iter + 1,
                    history,
                });
            }
        }
    }
    Err(Error::MaxIterExceeded(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{scalar_rel_diff, Mat};
    use crate::problem::{generate_random_stable, scalar_problem, MpcProblem, StageData};
    use crate::riccati::solve_serial;

    #[test]
    fn inactive_bounds_reproduce_the_unconstrained_solution() {
        // flip the sign of x̄₀ so the unconstrained scalar controls are positive
        let p = scalar_problem(2).with_x0(Vector::from_element(1, -1.0));
        let q = BoundConstrainedProblem::all_bounded(p.clone());
        let r = solve_bound_constrained(&q, Backend::Serial, 20).unwrap();
        assert!(r.working_set.fixed.iter().all(Vec::is_empty));
        let serial = solve_serial(&p).unwrap();
        assert!(r.solution.max_rel_diff(&serial) < 1e-12);
    }

    #[test]
    fn scalar_problem_with_both_bounds_active() {
        let q = BoundConstrainedProblem::all_bounded(scalar_problem(2));
        let r = solve_bound_constrained(&q, Backend::Serial, 20).unwrap();
        assert_eq!(r.working_set.fixed, vec![vec![0], vec![0]]);
        assert!(r.solution.u.iter().all(|u| u[0] == 0.0));
        let xs: Vec<f64> = r.solution.x.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![1.0, 1.0, 1.0]);
        // λ = (3, 2, 1), so μ₀ = λ₁ = 2 and μ₁ = λ₂ = 1
        assert!((r.solution.mu[0][0] - 2.0).abs() < 1e-12);
        assert!((r.solution.mu[1][0] - 1.0).abs() < 1e-12);
        assert!((r.solution.objective - 1.5).abs() < 1e-12);

        let dense = crate::oracle::solve_kkt_dense_fixed(&q, &r.working_set.fixed).unwrap();
        for (a, b) in r.solution.mu.iter().zip(&dense.mu) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn dual_recursion_matches_dense_multiplier() {
        // nx = 1, nu = 2, second control of stage 0 held at zero
        let stage = StageData {
            a: Mat::from_element(1, 1, 1.0),
            b: Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            qx: Mat::identity(1, 1),
            qxu: Mat::zeros(1, 2),
            qu: Mat::identity(2, 2),
        };
        let p = MpcProblem::new(
            vec![stage],
            Mat::identity(1, 1),
            Vector::from_element(1, 1.0),
        )
        .unwrap();
        let q = BoundConstrainedProblem::all_bounded(p);
        let fixed = vec![vec![1]];
        let reduced = q.eliminate(&fixed).unwrap();
        let f = riccati_factorize(&reduced, &reduced.qxn).unwrap();
        let tr = forward_recursion(&reduced, &f, &reduced.x0).unwrap();
        let mu = dual_recursion(&q, &fixed, &tr).unwrap();
        let dense = crate::oracle::solve_kkt_dense_fixed(&q, &fixed).unwrap();
        assert!((mu.mu[0][0] - dense.mu[0][0]).abs() < 1e-12);
        // x₁ = 0.5, λ₁ = 0.5, so μ₀ = B_vᵀ λ₁ = 0.5
        assert!((mu.mu[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uncoupled_fixed_control_has_zero_multiplier() {
        let stage = StageData {
            a: Mat::from_element(1, 1, 0.5),
            b: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            qx: Mat::identity(1, 1),
            qxu: Mat::zeros(1, 2),
            qu: Mat::identity(2, 2),
        };
        let p = MpcProblem::new(
            vec![stage; 2],
            Mat::identity(1, 1),
            Vector::from_element(1, 1.0),
        )
        .unwrap();
        let q = BoundConstrainedProblem::all_bounded(p);
        let fixed = vec![vec![1], vec![1]];
        let reduced = q.eliminate(&fixed).unwrap();
        let f = riccati_factorize(&reduced, &reduced.qxn).unwrap();
        let tr = forward_recursion(&reduced, &f, &reduced.x0).unwrap();
        let mu = dual_recursion(&q, &fixed, &tr).unwrap();
        assert!(mu.mu.iter().all(|m| m[0] == 0.0));
    }

    #[test]
    fn degenerate_zero_control_at_optimum() {
        // Qxu = -A QxN B makes H = 0, so the unconstrained control is exactly zero
        let stage = StageData {
            a: Mat::from_element(1, 1, 1.0),
            b: Mat::from_element(1, 1, 1.0),
            qx: Mat::from_element(1, 1, 2.0),
            qxu: Mat::from_element(1, 1, -1.0),
            qu: Mat::from_element(1, 1, 1.0),
        };
        let p = MpcProblem::new(
            vec![stage],
            Mat::identity(1, 1),
            Vector::from_element(1, 0.7),
        )
        .unwrap();
        let unconstrained = solve_serial(&p).unwrap();
        assert_eq!(unconstrained.u[0][0], 0.0);
        let q = BoundConstrainedProblem::all_bounded(p);
        let r = solve_bound_constrained(&q, Backend::Serial, 10).unwrap();
        assert!(scalar_rel_diff(r.solution.objective, unconstrained.objective) < 1e-12);
        if let Some(m) = r.solution.mu.first().and_then(|m| m.iter().next()) {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn backends_agree_on_the_working_set_sequence() {
        for seed in 0..10 {
            let p = generate_random_stable(3, 2, 12, seed).unwrap();
            let q = BoundConstrainedProblem::all_bounded(p);
            let s = solve_bound_constrained(&q, Backend::Serial, 200).unwrap();
            let par =
                solve_bound_constrained(&q, Backend::Parallel(ParallelConfig::default()), 200)
                    .unwrap();
            assert_eq!(s.history, par.history, "seed {seed}");
            assert!(s.solution.max_rel_diff(&par.solution) < 1e-9);
        }
    }

    #[test]
    fn iteration_limit() {
        let q = BoundConstrainedProblem::all_bounded(
            scalar_problem(2).with_x0(Vector::from_element(1, -1.0)),
        );
        assert_eq!(
            solve_bound_constrained(&q, Backend::Serial, 1).unwrap_err(),
            Error::MaxIterExceeded(1)
        );
    }
}
