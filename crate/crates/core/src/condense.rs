//! Condensing a batch of stages into a single reduced stage.
//!
//! A batch is first factored with a zero terminal cost (the preliminary
//! factorization). Any terminal cost `P` applied later can only shift the
//! controls by `ū` with `x_N = Â x₀ + S ū` and cost `½ x₀ᵀ P₀ x₀ + ½ ūᵀ Q̄ ū`,
//! where `Q̄ = blkdiag(G_{t+1})`. Eliminating `ū` leaves a one-stage problem in
//! `(x̂, û) ∈ ℝⁿˣ × ℝⁿˣ` with
//!
//! ```text
//! Q̂ₓ = P₀,   Â = Π_t (A_t + B_t K_{t+1}),   Q̂ᵤ = B̂ = S Q̄⁻¹ Sᵀ
//! ```
//!
//! all of which are accumulated during the same backward sweep.

use crate::error::{Error, Result};
use crate::linalg::{sym_rank, symmetrize, GainPolicy, Mat, Vector, RANK_TOL};
use crate::problem::StageData;
use crate::riccati::{backward_step, factorize_stages, RiccatiFactorization};

/// Terminal cost-to-go of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTerminal {
    /// Unknown terminal cost; factor with `P_N = 0` and condense.
    Preliminary,
    /// Terminal cost already known, so the batch is factored exactly.
    Known(Mat),
}

/// A contiguous run of stages treated as its own MPC problem.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub stages: &'a [StageData],
    pub terminal: BatchTerminal,
    pub policy: GainPolicy,
}

impl<'a> Batch<'a> {
    pub fn preliminary(stages: &'a [StageData]) -> Self {
        Batch {
            stages,
            terminal: BatchTerminal::Preliminary,
            policy: GainPolicy::Strict,
        }
    }

    pub fn known(stages: &'a [StageData], terminal: Mat) -> Self {
        Batch {
            stages,
            terminal: BatchTerminal::Known(terminal),
            policy: GainPolicy::Strict,
        }
    }

    pub fn with_policy(mut self, policy: GainPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn nx(&self) -> usize {
        self.stages[0].nx()
    }

    fn check(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument(
                "a batch needs at least one stage".into(),
            ));
        }
        if let BatchTerminal::Known(p) = &self.terminal {
            let nx = self.nx();
            if p.shape() != (nx, nx) {
                return Err(Error::dims(
                    self.len(),
                    "known terminal cost has the wrong size",
                ));
            }
        }
        Ok(())
    }
}

/// The reduced-stage data of a batch condensed with an unknown terminal cost.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub a_hat: Mat,
    pub b_hat: Mat,
    pub qu_hat: Mat,
    /// `V_t` for `t = 0..=N`.
    pub v: Vec<Mat>,
    /// `M_{t+1}` for `t = 0..N-1`.
    pub m: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct CondensedBatch {
    /// `P₀` of the batch factorization.
    pub qx_hat: Mat,
    /// Absent for a batch condensed with a known terminal cost.
    pub reduction: Option<Reduction>,
    /// The preliminary (`P_N = 0`) factorization, or the exact one for a known terminal.
    pub factorization: RiccatiFactorization,
}

impl CondensedBatch {
    /// Dimension of the reduced control, `rank(Q̂ᵤ)`, if the batch has one.
    pub fn control_rank(&self) -> Option<usize> {
        self.reduction
            .as_ref()
            .map(|r| sym_rank(&r.qu_hat, RANK_TOL))
    }
}

pub fn condense_batch(b: &Batch<'_>) -> Result<CondensedBatch> {
    b.check()?;
    match &b.terminal {
        BatchTerminal::Known(p) => {
            let factorization = factorize_stages(b.stages, p, b.policy)?;
            Ok(CondensedBatch {
                qx_hat: factorization.p[0].clone(),
                reduction: None,
                factorization,
            })
        }
        BatchTerminal::Preliminary => condense_preliminary(b.stages, b.policy),
    }
}

fn condense_preliminary(stages: &[StageData], policy: GainPolicy) -> Result<CondensedBatch> {
    let n = stages.len();
    let nx = stages[0].nx();

    let mut p = vec![Mat::zeros(0, 0); n + 1];
    let mut v = vec![Mat::zeros(0, 0); n + 1];
    let mut m = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut g_factor = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut qu_hat = Mat::zeros(nx, nx);

    p[n] = Mat::zeros(nx, nx);
    v[n] = Mat::identity(nx, nx);
    for t in (0..n).rev() {
        let st = &stages[t];
        let step = backward_step(st, &p[t + 1], t, policy)?;
        let bt_v = st.b.tr_mul(&v[t + 1]);
        let m_next = -step.g_factor.solve(&bt_v);
        // V_t = (A_tᵀ + K_{t+1}ᵀ B_tᵀ) V_{t+1}
        v[t] = st.a.tr_mul(&v[t + 1]) + step.k.tr_mul(&bt_v);
        qu_hat += m_next.tr_mul(&(&step.g * &m_next));
        symmetrize(&mut qu_hat);

        p[t] = step.p;
        m.push(m_next);
        k.push(step.k);
        g.push(step.g);
        g_factor.push(step.g_factor);
        f.push(step.f);
        h.push(step.h);
    }
    m.reverse();
    k.reverse();
    g.reverse();
    g_factor.reverse();
    f.reverse();
    h.reverse();

    let reduction = Reduction {
        a_hat: v[0].transpose(),
        b_hat: qu_hat.clone(),
        qu_hat,
        v,
        m,
    };
    Ok(CondensedBatch {
        qx_hat: p[0].clone(),
        reduction: Some(reduction),
        factorization: RiccatiFactorization {
            p,
            k,
            g,
            g_factor,
            f,
            h,
        },
    })
}

/// Start index, start state and perturbations `ū_t` for `t = start..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGoQuery {
    pub start: usize,
    pub x: Vector,
    pub ubar: Vec<Vector>,
}

impl CostToGoQuery {
    fn check(&self, b: &Batch<'_>) -> Result<()> {
        let n = b.len();
        if self.start > n {
            return Err(Error::Index(format!(
                "start index {} outside 0..={n}",
                self.start
            )));
        }
        if self.ubar.len() != n - self.start {
            return Err(Error::dims(
                self.start,
                format!(
                    "expected {} perturbations, got {}",
                    n - self.start,
                    self.ubar.len()
                ),
            ));
        }
        if self.x.len() != b.nx() {
            return Err(Error::dims(self.start, "start state has the wrong length"));
        }
        for (i, u) in self.ubar.iter().enumerate() {
            let t = self.start + i;
            if u.len() != b.stages[t].nu() {
                return Err(Error::dims(t, "perturbation has the wrong length"));
            }
        }
        Ok(())
    }
}

fn preliminary_factorization(b: &Batch<'_>) -> Result<RiccatiFactorization> {
    b.check()?;
    if b.terminal != BatchTerminal::Preliminary {
        return Err(Error::InvalidArgument(
            "cost-to-go is defined for the preliminary (zero terminal cost) factorization".into(),
        ));
    }
    factorize_stages(b.stages, &Mat::zeros(b.nx(), b.nx()), b.policy)
}

/// Closed-form cost-to-go `½ xᵀ P_t̄ x + ½ Σ_{t≥t̄} ū_tᵀ G_{t+1} ū_t` under the
/// feedback `u_t = K_{t+1} x_t + ū_t`, zero terminal cost.
pub fn cost_to_go(b: &Batch<'_>, q: &CostToGoQuery) -> Result<f64> {
    let f = preliminary_factorization(b)?;
    q.check(b)?;
    let quad = 0.5 * q.x.dot(&(&f.p[q.start] * &q.x));
    let pert: f64 = q
        .ubar
        .iter()
        .enumerate()
        .map(|(i, u)| 0.5 * u.dot(&(&f.g[q.start + i] * u)))
        .sum();
    Ok(quad + pert)
}

/// The same cost obtained by simulating the perturbed feedback law and summing
/// the stage costs directly.
pub fn closed_loop_cost(b: &Batch<'_>, q: &CostToGoQuery) -> Result<f64> {
    let f = preliminary_factorization(b)?;
    q.check(b)?;
    let mut x = q.x.clone();
    let mut total = 0.0;
    for (i, ubar) in q.ubar.iter().enumerate() {
        let t = q.start + i;
        let st = &b.stages[t];
        let u = &f.k[t] * &x + ubar;
        total += st.cost(&x, &u);
        x = &st.a * &x + &st.b * &u;
    }
    Ok(total)
}
