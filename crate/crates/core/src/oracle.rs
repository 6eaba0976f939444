//! Dense reference computations, independent of the Riccati recursions.
//!
//! The KKT system of the equality-constrained problem is assembled densely
//! and solved with a symmetric-indefinite (Bunch–Kaufman) factorization. The
//! Lagrangian is
//!
//! ```text
//! L = cost + λ₀ᵀ(x̄₀ − x₀) + Σ_t λ_{t+1}ᵀ(A_t x_t + B_t u_t − x_{t+1}) − Σ_t μ_tᵀ u_{t,fixed}
//! ```
//!
//! so that the multipliers coincide with `λ_t = P_t x_t` from the forward
//! recursion and `μ ≥ 0` at a bound-constrained optimum.

use crate::condense::{Batch, BatchTerminal};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, rel_diff, Mat, Vector};
use crate::problem::{free_indices, BoundConstrainedProblem, MpcProblem};
use crate::riccati::RiccatiFactorization;
use crate::solution::Solution;

/// Largest `N·(nx + nu)` the dense oracle accepts.
pub const MAX_DENSE_VARIABLES: usize = 5000;

/// Row/column offsets of each variable block.
///
/// Primal blocks come first in time order `x₀, u₀, x₁, u₁, …, x_N`, followed
/// by `λ₀ … λ_N` and then one row per fixed control.
#[derive(Debug, Clone, PartialEq)]
pub struct KktLayout {
    pub nx: usize,
    pub x: Vec<usize>,
    pub u: Vec<(usize, usize)>,
    pub lambda: Vec<usize>,
    /// `(stage, control index, row)` of each fixed-control multiplier.
    pub mu: Vec<(usize, usize, usize)>,
    pub n_primal: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct KktSystem {
    pub matrix: Mat,
    pub rhs: Vector,
    pub layout: KktLayout,
}

fn layout(p: &MpcProblem, fixed: &[Vec<usize>]) -> KktLayout {
    let nx = p.nx();
    let n = p.horizon();
    let mut off = 0;
    let mut x = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n);
    for st in &p.stages {
        x.push(off);
        off += nx;
        u.push((off, st.nu()));
        off += st.nu();
    }
    x.push(off);
    off += nx;
    let n_primal = off;
    let lambda = (0..=n).map(|t| n_primal + t * nx).collect();
    off = n_primal + (n + 1) * nx;
    let mut mu = Vec::new();
    for (t, set) in fixed.iter().enumerate() {
        for &j in set {
            mu.push((t, j, off));
            off += 1;
        }
    }
    KktLayout {
        nx,
        x,
        u,
        lambda,
        mu,
        n_primal,
        dim: off,
    }
}

/// KKT system of the equality-constrained problem.
pub fn assemble_kkt(p: &MpcProblem) -> Result<KktSystem> {
    assemble(p, &vec![Vec::new(); p.horizon()])
}

/// KKT system with the listed controls constrained to zero.
pub fn assemble_kkt_fixed(q: &BoundConstrainedProblem, fixed: &[Vec<usize>]) -> Result<KktSystem> {
    if fixed.len() != q.base.horizon() {
        return Err(Error::Index(format!(
            "{} fixed sets for horizon {}",
            fixed.len(),
            q.base.horizon()
        )));
    }
    for (t, set) in fixed.iter().enumerate() {
        if free_indices(q.base.stages[t].nu(), set).is_none() {
            return Err(Error::Index(format!("fixed set {set:?} at stage {t}")));
        }
    }
    assemble(&q.base, fixed)
}

fn assemble(p: &MpcProblem, fixed: &[Vec<usize>]) -> Result<KktSystem> {
    p.check_dims()?;
    let n = p.horizon();
    let nx = p.nx();
    let lay = layout(p, fixed);
    let mut k = Mat::zeros(lay.dim, lay.dim);
    let mut rhs = Vector::zeros(lay.dim);
    let eye = Mat::identity(nx, nx);

    let mut put = |r: usize, c: usize, blk: &Mat, sign: f64| {
        if blk.nrows() == 0 || blk.ncols() == 0 {
            return;
        }
        k.view_mut((r, c), blk.shape()).copy_from(&(blk * sign));
        k.view_mut((c, r), (blk.ncols(), blk.nrows()))
            .copy_from(&(blk.transpose() * sign));
    };

    for (t, st) in p.stages.iter().enumerate() {
        let (xo, (uo, _)) = (lay.x[t], lay.u[t]);
        put(xo, xo, &st.qx, 1.0);
        put(xo, uo, &st.qxu, 1.0);
        put(uo, uo, &st.qu, 1.0);
        // λ_{t+1} row: A x_t + B u_t − x_{t+1}
        let lo = lay.lambda[t + 1];
        put(lo, xo, &st.a, 1.0);
        put(lo, uo, &st.b, 1.0);
        put(lo, lay.x[t + 1], &eye, -1.0);
    }
    put(lay.x[n], lay.x[n], &p.qxn, 1.0);
    put(lay.lambda[0], lay.x[0], &eye, -1.0);
    for &(t, j, row) in &lay.mu {
        let col = lay.u[t].0 + j;
        k[(row, col)] = -1.0;
        k[(col, row)] = -1.0;
    }
    rhs.rows_mut(lay.lambda[0], nx).copy_from(&(-&p.x0));

    Ok(KktSystem {
        matrix: k,
        rhs,
        layout: lay,
    })
}

fn check_size(p: &MpcProblem) -> Result<()> {
    let vars: usize = p.stages.iter().map(|s| s.nx() + s.nu()).sum();
    if vars > MAX_DENSE_VARIABLES {
        return Err(Error::InvalidArgument(format!(
            "dense oracle limited to {MAX_DENSE_VARIABLES} variables, problem has {vars}"
        )));
    }
    Ok(())
}

fn solve_system(sys: &KktSystem) -> Result<Vector> {
    let z = sys
        .matrix
        .clone()
        .lblt()
        .solve(&sys.rhs)
        .ok_or(Error::SingularKkt)?;
    if z.iter().all(|v| v.is_finite()) {
        Ok(z)
    } else {
        Err(Error::SingularKkt)
    }
}

fn unpack(p: &MpcProblem, lay: &KktLayout, z: &Vector) -> Solution {
    let nx = lay.nx;
    let x: Vec<Vector> = lay.x.iter().map(|&o| z.rows(o, nx).into_owned()).collect();
    let u: Vec<Vector> = lay
        .u
        .iter()
        .map(|&(o, m)| z.rows(o, m).into_owned())
        .collect();
    let lambda = lay
        .lambda
        .iter()
        .map(|&o| z.rows(o, nx).into_owned())
        .collect();
    let objective = p.objective(&x, &u);
    Solution {
        x,
        u,
        lambda,
        mu: Vec::new(),
        objective,
    }
}

/// Dense solve of the equality-constrained problem.
pub fn solve_kkt_dense(p: &MpcProblem) -> Result<Solution> {
    check_size(p)?;
    let sys = assemble_kkt(p)?;
    let z = solve_system(&sys)?;
    Ok(unpack(p, &sys.layout, &z))
}

/// Dense solve with the controls in `fixed` held at zero. `u` in the result
/// has full stage length (zeros at fixed positions) and `mu[t]` lists the
/// multipliers of `fixed[t]` in order.
pub fn solve_kkt_dense_fixed(
    q: &BoundConstrainedProblem,
    fixed: &[Vec<usize>],
) -> Result<Solution> {
    check_size(&q.base)?;
    let sys = assemble_kkt_fixed(q, fixed)?;
    let z = solve_system(&sys)?;
    let mut sol = unpack(&q.base, &sys.layout, &z);
    let mut mu: Vec<Vec<f64>> = vec![Vec::new(); q.base.horizon()];
    for &(t, _, row) in &sys.layout.mu {
        mu[t].push(z[row]);
    }
    sol.mu = mu.into_iter().map(Vector::from_vec).collect();
    // the equality rows pin these to zero; make it exact
    for (t, set) in fixed.iter().enumerate() {
        for &j in set {
            sol.u[t][j] = 0.0;
        }
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Max-norm of the stationarity rows.
    pub stationarity: f64,
    /// Max-norm of the initial-condition and dynamics rows.
    pub feasibility: f64,
    /// Worst residual entry touching each stage `0..=N`.
    pub per_stage: Vec<f64>,
    /// Max-norm of the right-hand side, for relative scaling.
    pub rhs_norm: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility)
    }

    /// `max / (1 + ‖rhs‖)`.
    pub fn relative(&self) -> f64 {
        self.max() / (1.0 + self.rhs_norm)
    }
}

/// Residual of a candidate `(x, u, λ)` in the KKT system of `p`, evaluated
/// stage by stage so it also applies to horizons beyond the dense limit.
pub fn kkt_residual(p: &MpcProblem, s: &Solution) -> Result<ResidualReport> {
    p.check_dims()?;
    let n = p.horizon();
    let nx = p.nx();
    if s.x.len() != n + 1 || s.u.len() != n || s.lambda.len() != n + 1 {
        return Err(Error::dims(
            None,
            "solution length differs from the horizon",
        ));
    }
    for t in 0..=n {
        if s.x[t].len() != nx || s.lambda[t].len() != nx {
            return Err(Error::dims(t, "state or multiplier has the wrong length"));
        }
        if t < n && s.u[t].len() != p.stages[t].nu() {
            return Err(Error::dims(t, "control has the wrong length"));
        }
    }

    let mut per_stage = vec![0.0_f64; n + 1];
    let mut stationarity = 0.0_f64;
    let mut feasibility = (&p.x0 - &s.x[0]).amax();
    per_stage[0] = feasibility;
    for (t, st) in p.stages.iter().enumerate() {
        let (x, u, l_next) = (&s.x[t], &s.u[t], &s.lambda[t + 1]);
        let rx = &st.qx * x + &st.qxu * u + st.a.transpose() * l_next - &s.lambda[t];
        let ru = st.qxu.transpose() * x + &st.qu * u + st.b.transpose() * l_next;
        let rd = &st.a * x + &st.b * u - &s.x[t + 1];
        let s_t = rx.amax().max(if u.is_empty() { 0.0 } else { ru.amax() });
        let f_t = rd.amax();
        stationarity = stationarity.max(s_t);
        feasibility = feasibility.max(f_t);
        per_stage[t] = per_stage[t].max(s_t);
        per_stage[t + 1] = per_stage[t + 1].max(f_t);
    }
    let s_n = (&p.qxn * &s.x[n] - &s.lambda[n]).amax();
    stationarity = stationarity.max(s_n);
    per_stage[n] = per_stage[n].max(s_n);
    Ok(ResidualReport {
        stationarity,
        feasibility,
        per_stage,
        rhs_norm: p.x0.amax(),
    })
}

/// Explicit batch matrices: `x̄ = Ā x₀ + B̄ ū` under `u_t = K_{t+1} x_t + ū_t`.
#[derive(Debug, Clone)]
pub struct StackedBatchMatrices {
    pub a_bar: Mat,
    pub b_bar: Mat,
    /// Last block row of `B̄`.
    pub s: Mat,
    /// `blkdiag(G_{t+1})`.
    pub q_ubar: Mat,
}

/// Builds `Ā`, `B̄` by forward propagation of the closed-loop dynamics.
pub fn stacked_batch_matrices(
    b: &Batch<'_>,
    prelim: &RiccatiFactorization,
) -> Result<StackedBatchMatrices> {
    let n = b.len();
    if n == 0 || prelim.horizon() != n {
        return Err(Error::dims(None, "factorization does not match the batch"));
    }
    let nx = b.nx();
    let nus: Vec<usize> = b.stages.iter().map(|s| s.nu()).collect();
    let total_u: usize = nus.iter().sum();
    let mut a_bar = Mat::zeros((n + 1) * nx, nx);
    let mut b_bar = Mat::zeros((n + 1) * nx, total_u);
    let mut q_ubar = Mat::zeros(total_u, total_u);

    a_bar.view_mut((0, 0), (nx, nx)).fill_with_identity();
    let mut col = 0;
    for (t, st) in b.stages.iter().enumerate() {
        if prelim.k[t].shape() != (nus[t], nx) {
            return Err(Error::dims(t, "gain has the wrong size"));
        }
        let closed = &st.a + &st.b * &prelim.k[t];
        let a_next = &closed * a_bar.rows(t * nx, nx);
        a_bar.rows_mut((t + 1) * nx, nx).copy_from(&a_next);
        let b_next = &closed * b_bar.rows(t * nx, nx);
        b_bar.rows_mut((t + 1) * nx, nx).copy_from(&b_next);
        b_bar
            .view_mut(((t + 1) * nx, col), (nx, nus[t]))
            .copy_from(&st.b);
        q_ubar
            .view_mut((col, col), (nus[t], nus[t]))
            .copy_from(&prelim.g[t]);
        col += nus[t];
    }
    let s = b_bar.rows(n * nx, nx).into_owned();
    Ok(StackedBatchMatrices {
        a_bar,
        b_bar,
        s,
        q_ubar,
    })
}

/// Relative residuals of the condensing identities for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensationReport {
    /// `‖B̂ − S Q̄⁻¹ Sᵀ‖ / scale`.
    pub b_hat: f64,
    /// `‖Â − last block row of Ā‖ / scale`.
    pub a_hat: f64,
    /// `‖Q̂ₓ − P₀‖ / scale`, with `P₀` evaluated as the closed-loop cost of `Ā`.
    pub qx_hat: f64,
    /// `B̂` and `Q̂ᵤ` are bitwise equal.
    pub b_equals_qu: bool,
    pub control_rank: usize,
}

impl CondensationReport {
    pub fn max_residual(&self) -> f64 {
        self.b_hat.max(self.a_hat).max(self.qx_hat)
    }
}

/// Condenses a batch and checks the result against the explicit stacked matrices.
pub fn check_condensation(b: &Batch<'_>) -> Result<CondensationReport> {
    if b.terminal != BatchTerminal::Preliminary {
        return Err(Error::InvalidArgument(
            "identities concern the preliminary condensation".into(),
        ));
    }
    let c = crate::condense::condense_batch(b)?;
    let red = c
        .reduction
        .as_ref()
        .expect("preliminary batches carry a reduction");
    let st = stacked_batch_matrices(b, &c.factorization)?;
    let nx = b.nx();
    let n = b.len();

    // Q̄⁻¹ block by block, without the stored factorizations
    let mut q_inv = Mat::zeros(st.q_ubar.nrows(), st.q_ubar.ncols());
    let mut col = 0;
    for g in &c.factorization.g {
        let m = g.nrows();
        if m > 0 {
            let inv = g
                .clone()
                .lu()
                .try_inverse()
                .ok_or(Error::NotPositiveDefinite(col))?;
            q_inv.view_mut((col, col), (m, m)).copy_from(&inv);
        }
        col += m;
    }
    let b_expect = &st.s * q_inv * st.s.transpose();
    let a_expect = st.a_bar.rows(n * nx, nx).into_owned();

    // P₀ = Σ_t Φ_tᵀ [I; K]ᵀ Q_t [I; K] Φ_t with Φ_t the t-th block of Ā
    let mut p0 = Mat::zeros(nx, nx);
    for (t, stage) in b.stages.iter().enumerate() {
        let phi = st.a_bar.rows(t * nx, nx);
        let k = &c.factorization.k[t];
        let mut stacked = Mat::zeros(nx + stage.nu(), nx);
        stacked.rows_mut(0, nx).fill_with_identity();
        stacked.rows_mut(nx, stage.nu()).copy_from(k);
        let w = &stacked * phi;
        p0 += w.tr_mul(&(stage.joint_cost() * &w));
    }

    let rel = |a: &Mat, e: &Mat| {
        if max_abs(a) == 0.0 && max_abs(e) == 0.0 {
            0.0
        } else {
            rel_diff(a, e)
        }
    };
    Ok(CondensationReport {
        b_hat: rel(&red.b_hat, &b_expect),
        a_hat: rel(&red.a_hat, &a_expect),
        qx_hat: rel(&c.qx_hat, &p0),
        b_equals_qu: red
            .b_hat
            .iter()
            .zip(red.qu_hat.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()),
        control_rank: c.control_rank().unwrap_or(0),
    })
}
