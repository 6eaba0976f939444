use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MpcProblem, StageData};
use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, symmetrize, Mat, Vector};

const TARGET_SPECTRAL_RADIUS: f64 = 0.9;
const INPUT_COST_SHIFT: f64 = 1e-3;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0))
}

/// Random time-invariant problem with a strictly stable `A`.
///
/// `A` has i.i.d. entries in `[-1, 1]` rescaled to spectral radius 0.9,
/// `B` is i.i.d. in `[-1, 1]`, and the joint stage cost is `MᵀM` plus
/// `1e-3·I` on the input block. `QxN = LᵀL` and `x̄₀` are drawn the same way.
/// The output depends only on the arguments.
pub fn generate_random_stable(
    nx: usize,
    nu: usize,
    horizon: usize,
    seed: u64,
) -> Result<MpcProblem> {
    if nx == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(format!(
            "need nx >= 1 and N >= 1, got nx = {nx}, N = {horizon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let a = loop {
        let a = uniform(&mut rng, nx, nx);
        let rho = spectral_radius(&a);
        if rho > 1e-8 {
            break a * (TARGET_SPECTRAL_RADIUS / rho);
        }
    };
    let b = uniform(&mut rng, nx, nu);

    let m = uniform(&mut rng, nx + nu, nx + nu);
    let mut q = m.tr_mul(&m);
    for i in nx..nx + nu {
        q[(i, i)] += INPUT_COST_SHIFT;
    }
    symmetrize(&mut q);

    let l = uniform(&mut rng, nx, nx);
    let mut qxn = l.tr_mul(&l);
    symmetrize(&mut qxn);
    let x0 = Vector::from_fn(nx, |_, _| rng.random_range(-1.0..=1.0));

    let stage = StageData {
        a,
        b,
        qx: q.view((0, 0), (nx, nx)).into_owned(),
        qxu: q.view((0, nx), (nx, nu)).into_owned(),
        qu: q.view((nx, nx), (nu, nu)).into_owned(),
    };
    MpcProblem::new(vec![stage; horizon], qxn, x0)
}
