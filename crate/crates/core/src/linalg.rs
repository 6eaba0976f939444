//! Small dense linear-algebra helpers shared by the recursions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used to decide the numerical rank of a symmetric PSD matrix.
pub const RANK_TOL: f64 = 1e-10;

/// How the Riccati recursions treat a `G_{t+1}` that is not positive definite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainPolicy {
    /// Cholesky only; failure is reported as [`Error::NotPositiveDefinite`].
    #[default]
    Strict,
    /// Fall back to a minimum-norm eigendecomposition pseudo-inverse when `G`
    /// is (numerically) singular. Used for reduced problems, where `Q̂ᵤ` may be
    /// rank deficient.
    PseudoInverse,
}

/// A stored factorization of a symmetric PSD matrix, reused for every right-hand side.
#[derive(Debug, Clone)]
pub enum SymFactor {
    /// 0×0 matrix (a stage without controls).
    Empty,
    Cholesky(Cholesky<f64, Dyn>),
    /// `G⁺ = V diag(1/λ) Vᵀ` restricted to eigenvalues above the rank tolerance.
    PseudoInverse {
        vectors: Mat,
        inv_values: Vector,
        rank: usize,
    },
}

impl SymFactor {
    pub fn factor(g: &Mat, stage: usize, policy: GainPolicy) -> Result<Self> {
        if g.nrows() == 0 {
            return Ok(SymFactor::Empty);
        }
        match policy {
            GainPolicy::Strict => Cholesky::new(g.clone())
                .map(SymFactor::Cholesky)
                .ok_or(Error::NotPositiveDefinite(stage)),
            GainPolicy::PseudoInverse => Ok(Self::factor_psd(g)),
        }
    }

    /// Cholesky when every pivot is safely above the rank tolerance, otherwise
    /// the eigendecomposition pseudo-inverse.
    pub fn factor_psd(g: &Mat) -> Self {
        if g.nrows() == 0 {
            return SymFactor::Empty;
        }
        let scale = g.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            if let Some(chol) = Cholesky::new(g.clone()) {
                let min_pivot = chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .fold(f64::INFINITY, |m, v| m.min(v * v));
                if min_pivot > RANK_TOL * scale {
                    return SymFactor::Cholesky(chol);
                }
            }
        }
        Self::pseudo_inverse(g)
    }

    pub fn pseudo_inverse(g: &Mat) -> Self {
        let n = g.nrows();
        if n == 0 {
            return SymFactor::Empty;
        }
        let eig = SymmetricEigen::new(symmetric_part(g));
        let norm = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let cutoff = RANK_TOL * norm;
        let mut rank = 0;
        let inv_values = eig.eigenvalues.map(|v| {
            if norm > 0.0 && v > cutoff {
                rank += 1;
                1.0 / v
            } else {
                0.0
            }
        });
        SymFactor::PseudoInverse {
            vectors: eig.eigenvectors,
            inv_values,
            rank,
        }
    }

    /// Solves `G X = rhs` (minimum-norm solution for the pseudo-inverse variant).
    pub fn solve(&self, rhs: &Mat) -> Mat {
        match self {
            SymFactor::Empty => Mat::zeros(0, rhs.ncols()),
            SymFactor::Cholesky(c) => c.solve(rhs),
            SymFactor::PseudoInverse {
                vectors,
                inv_values,
                ..
            } => {
                let mut proj = vectors.tr_mul(rhs);
                for (mut row, s) in proj.row_iter_mut().zip(inv_values.iter()) {
                    row *= *s;
                }
                vectors * proj
            }
        }
    }

    pub fn is_pseudo_inverse(&self) -> bool {
        matches!(self, SymFactor::PseudoInverse { .. })
    }
}

pub fn symmetric_part(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of the symmetric part; `+∞` for an empty matrix.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetric_part(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

/// Numerical rank of a symmetric PSD matrix at tolerance `rel_tol · ‖m‖₂`.
pub fn sym_rank(m: &Mat, rel_tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let ev = symmetric_part(m).symmetric_eigenvalues();
    let norm = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if norm == 0.0 {
        return 0;
    }
    ev.iter().filter(|v| **v > rel_tol * norm).count()
}

pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// `‖a − b‖_max / max(‖a‖_max, ‖b‖_max)`, zero when both are zero.
pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_diff shape mismatch");
    let scale = max_abs(a).max(max_abs(b));
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(a - b)) / scale
}

/// Relative max-norm gap between two sequences of vectors, normalized by the
/// largest entry over both sequences.
pub fn seq_rel_diff(a: &[Vector], b: &[Vector]) -> f64 {
    assert_eq!(a.len(), b.len(), "sequence length mismatch");
    let mut diff = 0.0_f64;
    let mut scale = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len(), "vector length mismatch");
        for (p, q) in x.iter().zip(y.iter()) {
            diff = diff.max((p - q).abs());
            scale = scale.max(p.abs()).max(q.abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `|a − b| / max(|a|, |b|)`, zero when both are zero.
pub fn scalar_rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_gives_minimum_norm_solution() {
        // rank-1 G = v vᵀ with v = (1, 1)
        let g = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = SymFactor::factor_psd(&g);
        assert!(f.is_pseudo_inverse());
        let x = f.solve(&Mat::from_row_slice(2, 1, &[2.0, 2.0]));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn strict_policy_rejects_singular() {
        let g = Mat::zeros(2, 2);
        assert_eq!(
            SymFactor::factor(&g, 3, GainPolicy::Strict).unwrap_err(),
            Error::NotPositiveDefinite(3)
        );
    }

    #[test]
    fn well_conditioned_psd_uses_cholesky() {
        let g = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(!SymFactor::factor_psd(&g).is_pseudo_inverse());
    }

    #[test]
    fn rank_and_eigen_helpers() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!((min_sym_eigenvalue(&m) + 1.0).abs() < 1e-12);
        assert_eq!(
            sym_rank(&Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), RANK_TOL),
            1
        );
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -0.25, 0.0]);
        assert!((spectral_radius(&a) - 0.5).abs() < 1e-12);
    }
}
