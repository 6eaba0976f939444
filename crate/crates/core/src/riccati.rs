//! Classical serial Riccati recursion: backward factorization, forward
//! recursion for the primal variables and equality duals, and the forward
//! recursion for the duals of bounds held at zero.

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, GainPolicy, Mat, SymFactor, Vector};
use crate::problem::{BoundConstrainedProblem, MpcProblem, StageData};
use crate::solution::Solution;

/// Output of the backward Riccati pass.
///
/// `p` is indexed by stage `0..=N`. The per-stage sequences `k`, `g`, `f`, `h`
/// and `g_factor` are indexed by `t = 0..N-1` and hold `K_{t+1}`, `G_{t+1}`,
/// `F_{t+1}`, `H_{t+1}`.
#[derive(Debug, Clone)]
pub struct RiccatiFactorization {
    pub p: Vec<Mat>,
    pub k: Vec<Mat>,
    pub g: Vec<Mat>,
    pub g_factor: Vec<SymFactor>,
    pub f: Vec<Mat>,
    pub h: Vec<Mat>,
}

impl RiccatiFactorization {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }
}

/// Per-stage quantities of one backward step, shared with the condensing pass.
pub(crate) struct StageStep {
    pub f: Mat,
    pub g: Mat,
    pub h: Mat,
    pub g_factor: SymFactor,
    pub k: Mat,
    pub p: Mat,
}

pub(crate) fn backward_step(
    stage: &StageData,
    p_next: &Mat,
    t: usize,
    policy: GainPolicy,
) -> Result<StageStep> {
    let at_p = stage.a.tr_mul(p_next);
    let f = &stage.qx + &at_p * &stage.a;
    let mut g = &stage.qu + stage.b.tr_mul(p_next) * &stage.b;
    symmetrize(&mut g);
    let h = &stage.qxu + &at_p * &stage.b;
    let g_factor = SymFactor::factor(&g, t, policy)?;
    let k = -g_factor.solve(&h.transpose());
    let mut p = &f - k.tr_mul(&g) * &k;
    symmetrize(&mut p);
    Ok(StageStep {
        f,
        g,
        h,
        g_factor,
        k,
        p,
    })
}

/// Backward pass with `P_N := p_terminal`, requiring every `G_{t+1}` to be PD.
pub fn riccati_factorize(p: &MpcProblem, p_terminal: &Mat) -> Result<RiccatiFactorization> {
    riccati_factorize_with(p, p_terminal, GainPolicy::Strict)
}

pub fn riccati_factorize_with(
    p: &MpcProblem,
    p_terminal: &Mat,
    policy: GainPolicy,
) -> Result<RiccatiFactorization> {
    if p_terminal.shape() != (p.nx(), p.nx()) {
        return Err(Error::dims(
            p.horizon(),
            "terminal cost-to-go has the wrong size",
        ));
    }
    factorize_stages(&p.stages, p_terminal, policy)
}

/// Backward pass over a contiguous run of stages with `P_N := p_terminal`.
pub(crate) fn factorize_stages(
    stages: &[StageData],
    p_terminal: &Mat,
    policy: GainPolicy,
) -> Result<RiccatiFactorization> {
    let n = stages.len();
    let mut ps = vec![Mat::zeros(0, 0); n + 1];
    let mut k = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut g_factor = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);

    ps[n] = p_terminal.clone();
    for t in (0..n).rev() {
        let step = backward_step(&stages[t], &ps[t + 1], t, policy)?;
        ps[t] = step.p;
        k.push(step.k);
        g.push(step.g);
        g_factor.push(step.g_factor);
        f.push(step.f);
        h.push(step.h);
    }
    k.reverse();
    g.reverse();
    g_factor.reverse();
    f.reverse();
    h.reverse();

    Ok(RiccatiFactorization {
        p: ps,
        k,
        g,
        g_factor,
        f,
        h,
    })
}

/// States, controls and equality-constraint duals.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub lambda: Vec<Vector>,
}

/// `u_t = K_{t+1} x_t`, `x_{t+1} = A_t x_t + B_t u_t`, `λ_t = P_t x_t`.
pub fn forward_recursion(
    p: &MpcProblem,
    f: &RiccatiFactorization,
    x0: &Vector,
) -> Result<Trajectory> {
    if f.horizon() != p.horizon() {
        return Err(Error::dims(
            None,
            "factorization horizon differs from the problem",
        ));
    }
    if x0.len() != p.nx() {
        return Err(Error::dims(0, "initial state has the wrong length"));
    }
    Ok(forward_stages(&p.stages, f, x0))
}

pub(crate) fn forward_stages(
    stages: &[StageData],
    f: &RiccatiFactorization,
    x0: &Vector,
) -> Trajectory {
    let n = stages.len();
    let mut x = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n + 1);
    x.push(x0.clone());
    for (t, stage) in stages.iter().enumerate() {
        let ut = &f.k[t] * &x[t];
        let next = &stage.a * &x[t] + &stage.b * &ut;
        lambda.push(&f.p[t] * &x[t]);
        u.push(ut);
        x.push(next);
    }
    lambda.push(&f.p[n] * &x[n]);
    Trajectory { x, u, lambda }
}

/// Duals `μ_t` of the bounds held at zero, one vector per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMultipliers {
    pub mu: Vec<Vector>,
}

/// Multipliers of the fixed controls.
///
/// `traj` must solve the problem obtained from `q.base` by deleting the
/// controls listed in `fixed` (see [`BoundConstrainedProblem::eliminate`]);
/// its `u_t` therefore holds only the free controls.
/// `μ_t = Q_{xv,t}ᵀ x_t + B_{v,t}ᵀ λ_{t+1} + Q_{uv,t}ᵀ u_t`, where the `v`
/// columns are those of the fixed controls in the original stage matrices.
pub fn dual_recursion(
    q: &BoundConstrainedProblem,
    fixed: &[Vec<usize>],
    traj: &Trajectory,
) -> Result<DualMultipliers> {
    let base = &q.base;
    let n = base.horizon();
    if fixed.len() != n {
        return Err(Error::Index(format!(
            "{} fixed sets for horizon {n}",
            fixed.len()
        )));
    }
    if traj.x.len() != n + 1 || traj.lambda.len() != n + 1 || traj.u.len() != n {
        return Err(Error::dims(
            None,
            "trajectory length differs from the horizon",
        ));
    }
    let mut mu = Vec::with_capacity(n);
    for (t, stage) in base.stages.iter().enumerate() {
        let nu = stage.nu();
        let set = &fixed[t];
        if set.iter().any(|&j| j >= nu) || set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Index(format!(
                "fixed set {set:?} at stage {t} with nu = {nu}"
            )));
        }
        let free = crate::problem::free_indices(nu, set).expect("checked above");
        if traj.u[t].len() != free.len() {
            return Err(Error::dims(
                t,
                "reduced control length differs from the free set",
            ));
        }
        let b_v = stage.b.select_columns(set);
        let q_xv = stage.qxu.select_columns(set);
        let q_uv = stage.qu.select_rows(&free).select_columns(set);
        let m = q_xv.tr_mul(&traj.x[t]) + b_v.tr_mul(&traj.lambda[t + 1]) + q_uv.tr_mul(&traj.u[t]);
        mu.push(m);
    }
    Ok(DualMultipliers { mu })
}

/// Factorization with `P_N = QxN` followed by the forward recursion.
pub fn solve_serial(p: &MpcProblem) -> Result<Solution> {
    solve_serial_with(p, GainPolicy::Strict)
}

pub fn solve_serial_with(p: &MpcProblem, policy: GainPolicy) -> Result<Solution> {
    let f = riccati_factorize_with(p, &p.qxn, policy)?;
    let traj = forward_recursion(p, &f, &p.x0)?;
    Ok(solution_from(p, traj))
}

pub(crate) fn solution_from(p: &MpcProblem, traj: Trajectory) -> Solution {
    let objective = p.objective(&traj.x, &traj.u);
    Solution {
        x: traj.x,
        u: traj.u,
        lambda: traj.lambda,
        mu: Vec::new(),
        objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::problem::{scalar_problem, StageData};

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn scalar_factorization_matches_hand_trace() {
        let p = scalar_problem(2);
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        let pv: Vec<f64> = f.p.iter().map(|m| m[(0, 0)]).collect();
        assert!(
            close(pv[0], 1.6) && close(pv[1], 1.5) && close(pv[2], 1.0),
            "{pv:?}"
        );
        assert!(close(f.g[1][(0, 0)], 2.0) && close(f.k[1][(0, 0)], -0.5));
        assert!(close(f.g[0][(0, 0)], 2.5) && close(f.k[0][(0, 0)], -0.6));
    }

    #[test]
    fn zero_input_map_gives_zero_gain() {
        let mut p = crate::problem::generate_random_stable(3, 2, 4, 8).unwrap();
        for st in &mut p.stages {
            st.b.fill(0.0);
            st.qxu.fill(0.0);
        }
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        assert!(f.k.iter().all(|k| max_abs(k) == 0.0));
        // P_t = Qx + Aᵀ P_{t+1} A
        let st = &p.stages[0];
        let expect = &st.qx + st.a.tr_mul(&f.p[1]) * &st.a;
        assert!(crate::linalg::rel_diff(&f.p[0], &expect) < 1e-14);
    }

    #[test]
    fn zero_terminal_single_stage() {
        let stage = StageData {
            a: Mat::identity(2, 2),
            b: Mat::identity(2, 2),
            qx: Mat::identity(2, 2),
            qxu: Mat::zeros(2, 2),
            qu: Mat::identity(2, 2),
        };
        let p =
            MpcProblem::new(vec![stage], Mat::zeros(2, 2), Vector::from_element(2, 1.0)).unwrap();
        let f = riccati_factorize(&p, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(f.p[0], Mat::identity(2, 2));
        assert_eq!(max_abs(&f.k[0]), 0.0);
    }

    #[test]
    fn scalar_forward_recursion() {
        let p = scalar_problem(2);
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        let tr = forward_recursion(&p, &f, &p.x0).unwrap();
        let flat = |v: &[Vector]| v.iter().map(|x| x[0]).collect::<Vec<_>>();
        let expect_u = [-0.6, -0.2];
        let expect_x = [1.0, 0.4, 0.2];
        let expect_l = [1.6, 0.6, 0.2];
        for (a, b) in flat(&tr.u).iter().zip(expect_u) {
            assert!(close(*a, b));
        }
        for (a, b) in flat(&tr.x).iter().zip(expect_x) {
            assert!(close(*a, b));
        }
        for (a, b) in flat(&tr.lambda).iter().zip(expect_l) {
            assert!(close(*a, b));
        }
    }

    #[test]
    fn forward_recursion_is_linear_in_x0() {
        let p = crate::problem::generate_random_stable(3, 2, 5, 4).unwrap();
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        let zero = forward_recursion(&p, &f, &Vector::zeros(3)).unwrap();
        assert!(zero
            .x
            .iter()
            .chain(&zero.u)
            .chain(&zero.lambda)
            .all(|v| v.iter().all(|e| *e == 0.0)));

        let base = forward_recursion(&p, &f, &p.x0).unwrap();
        let scaled = forward_recursion(&p, &f, &(&p.x0 * 2.5)).unwrap();
        for (a, b) in base.x.iter().zip(&scaled.x) {
            assert!((a * 2.5 - b).amax() <= 1e-12 * (1.0 + b.amax()));
        }
    }

    #[test]
    fn forward_recursion_checks_sizes() {
        let p = scalar_problem(2);
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        assert!(matches!(
            forward_recursion(&p, &f, &Vector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn strict_policy_reports_the_failing_stage() {
        let mut p = scalar_problem(3);
        p.stages[1].qu = s(-5.0);
        assert_eq!(
            riccati_factorize(&p, &p.qxn).unwrap_err(),
            Error::NotPositiveDefinite(1)
        );
    }

    #[test]
    fn scalar_objective_is_point_eight() {
        let p = scalar_problem(2);
        let sol = solve_serial(&p).unwrap();
        assert!(close(sol.objective, 0.8));
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        assert!(close(0.5 * p.x0.dot(&(&f.p[0] * &p.x0)), 0.8));
    }

    #[test]
    fn nothing_penalized_but_input() {
        let stage = StageData {
            a: s(2.0),
            b: s(1.0),
            qx: s(0.0),
            qxu: s(0.0),
            qu: s(3.0),
        };
        let p = MpcProblem::new(vec![stage], s(0.0), Vector::from_element(1, 1.0)).unwrap();
        let sol = solve_serial(&p).unwrap();
        assert_eq!(sol.u[0][0], 0.0);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn empty_fixed_sets_give_empty_multipliers() {
        let q = BoundConstrainedProblem::all_bounded(scalar_problem(2));
        let f = riccati_factorize(&q.base, &q.base.qxn).unwrap();
        let tr = forward_recursion(&q.base, &f, &q.base.x0).unwrap();
        let d = dual_recursion(&q, &[vec![], vec![]], &tr).unwrap();
        assert!(d.mu.iter().all(|m| m.is_empty()));
    }

    #[test]
    fn inconsistent_fixed_sets_are_rejected() {
        let q = BoundConstrainedProblem::all_bounded(scalar_problem(2));
        let f = riccati_factorize(&q.base, &q.base.qxn).unwrap();
        let tr = forward_recursion(&q.base, &f, &q.base.x0).unwrap();
        assert!(matches!(
            dual_recursion(&q, &[vec![3], vec![]], &tr),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            dual_recursion(&q, &[vec![]], &tr),
            Err(Error::Index(_))
        ));
    }
}
