//! Fixed problem sets shared by the criterion benchmarks.

use riccati_core::{generate_random_stable, MpcProblem};

/// State and input sizes of the timing study.
pub const NX: usize = 7;
pub const NU: usize = 5;

pub const HORIZONS: [usize; 5] = [8, 32, 128, 512, 2048];

pub fn problem(n: usize) -> MpcProblem {
    generate_random_stable(NX, NU, n, n as u64).expect("valid sizes")
}
