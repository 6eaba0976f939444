//! Serial vs parallel timing study on random stable systems.
//!
//! Each `(N, seed)` pair is solved `repeats` times by both backends. Node
//! times of the parallel run are reduced to their per-node median before the
//! simulated parallel time is formed, so one descheduled node does not
//! dominate a level.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::kkt_residual;
use crate::problem::generate_random_stable;
use crate::riccati::solve_serial;
use crate::tree::{FinalBatch, LevelTimings, ParallelConfig, ParallelRiccati};

pub use crate::tree::simulated_parallel_time;

/// Parallel and serial solutions must agree to this before a row is kept.
pub const AGREEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub nx: usize,
    pub nu: usize,
    pub ns: usize,
    pub horizons: Vec<usize>,
    pub repeats: usize,
    pub seeds: usize,
    pub p_min: usize,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            nx: 7,
            nu: 5,
            ns: 2,
            horizons: (2..=9).map(|k| 1 << k).collect(),
            repeats: 5,
            seeds: 10,
            p_min: 1,
            workers: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be >= 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::InvalidArgument(
                "horizons must be non-empty and positive".into(),
            ));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "horizons must be strictly ascending".into(),
            ));
        }
        if self.nx == 0 {
            return Err(Error::InvalidArgument("nx must be >= 1".into()));
        }
        Ok(())
    }

    fn parallel(&self) -> ParallelConfig {
        ParallelConfig {
            ns: self.ns,
            p_min: self.p_min,
            workers: self.workers,
            final_batch: FinalBatch::Condensed,
        }
    }
}

/// One `(N, seed)` measurement; times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub serial_s: f64,
    pub sim_parallel_s: f64,
    pub wall_parallel_s: f64,
    pub depth: usize,
    /// Relative KKT residual of the parallel solution.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchFailure {
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub failures: Vec<BenchFailure>,
}

/// Seed-averaged times for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub n: usize,
    pub serial_mean: f64,
    pub sim_parallel_mean: f64,
    pub wall_parallel_mean: f64,
    pub depth: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-node median over repeated runs of the same tree.
fn median_phases(runs: &[LevelTimings]) -> Vec<Vec<f64>> {
    let phases: Vec<Vec<Vec<f64>>> = runs.iter().map(LevelTimings::phases).collect();
    let first = &phases[0];
    first
        .iter()
        .enumerate()
        .map(|(l, level)| {
            (0..level.len())
                .map(|i| median(phases.iter().map(|p| p[l][i]).collect()))
                .collect()
        })
        .collect()
}

fn measure(cfg: &BenchConfig, solver: &ParallelRiccati, n: usize, seed: u64) -> Result<BenchRow> {
    let p = generate_random_stable(cfg.nx, cfg.nu, n, seed)?;

    let mut serial_times = Vec::with_capacity(cfg.repeats);
    let mut serial = None;
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        let s = solve_serial(&p)?;
        serial_times.push(start.elapsed().as_secs_f64());
        serial = Some(s);
    }
    let serial = serial.expect("repeats >= 1");

    let mut wall = Vec::with_capacity(cfg.repeats);
    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut depth = 0;
    let mut parallel = None;
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        let mut tree = solver.build(&p)?;
        let s = solver.propagate(&mut tree)?;
        wall.push(start.elapsed().as_secs_f64());
        depth = tree.depth();
        runs.push(tree.timings);
        parallel = Some(s);
    }
    let parallel = parallel.expect("repeats >= 1");

    let diff = parallel.max_rel_diff(&serial);
    if diff.is_nan() || diff > AGREEMENT_TOL {
        return Err(Error::InvalidArgument(format!(
            "parallel solution differs from serial by {diff:e}"
        )));
    }
    let max_residual = kkt_residual(&p, &parallel)?.relative();

    Ok(BenchRow {
        n,
        seed,
        serial_s: median(serial_times),
        sim_parallel_s: simulated_parallel_time(&median_phases(&runs))?,
        wall_parallel_s: median(wall),
        depth,
        max_residual,
    })
}

/// Runs every `(N, seed)` pair; a failing pair is recorded and skipped.
///
/// Horizons are interleaved within each seed so that slow drifts in machine
/// load spread over all horizons instead of biasing one. Rows come back
/// ordered by `(N, seed)`.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let solver = ParallelRiccati::new(cfg.parallel())?;
    let mut report = BenchReport::default();
    for seed in 0..cfg.seeds as u64 {
        for &n in &cfg.horizons {
            match measure(cfg, &solver, n, seed) {
                Ok(row) => report.rows.push(row),
                Err(e) => report.failures.push(BenchFailure {
                    n,
                    seed,
                    message: e.to_string(),
                }),
            }
        }
    }
    report.rows.sort_by_key(|r| (r.n, r.seed));
    report.failures.sort_by_key(|f| (f.n, f.seed));
    Ok(report)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}

/// Means over seeds, one entry per horizon in ascending order.
pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.n == n).collect();
            let k = group.len() as f64;
            BenchSummary {
                n,
                serial_mean: group.iter().map(|r| r.serial_s).sum::<f64>() / k,
                sim_parallel_mean: group.iter().map(|r| r.sim_parallel_s).sum::<f64>() / k,
                wall_parallel_mean: group.iter().map(|r| r.wall_parallel_s).sum::<f64>() / k,
                depth: group[0].depth,
            }
        })
        .collect()
}

/// Smallest horizon from which simulated parallel time stays below serial time.
pub fn crossover(summary: &[BenchSummary]) -> Option<usize> {
    let last_slower = summary
        .iter()
        .rposition(|s| s.sim_parallel_mean >= s.serial_mean);
    match last_slower {
        None => summary.first().map(|s| s.n),
        Some(i) => summary.get(i + 1).map(|s| s.n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            nx: 2,
            nu: 1,
            ns: 2,
            horizons: vec![2, 4, 8],
            repeats: 3,
            seeds: 2,
            p_min: 1,
            workers: 1,
        }
    }

    #[test]
    fn simulated_time_examples() {
        assert_eq!(
            simulated_parallel_time(&[vec![3.0, 1.0], vec![2.0]]).unwrap(),
            5.0
        );
        assert_eq!(simulated_parallel_time(&[vec![7.0]]).unwrap(), 7.0);
        assert_eq!(
            simulated_parallel_time(&[vec![1.0; 3], vec![1.0], vec![1.0]]).unwrap(),
            3.0
        );
        assert_eq!(
            simulated_parallel_time(&[]).unwrap_err(),
            Error::EmptyTimings
        );
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rows_cover_every_pair() {
        let report = run_benchmark(&small()).unwrap();
        assert!(report.failures.is_empty());
        assert_eq!(report.rows.len(), 6);
        for r in &report.rows {
            assert!(r.serial_s > 0.0 && r.sim_parallel_s > 0.0 && r.wall_parallel_s > 0.0);
            assert_eq!(1 << r.depth, r.n);
            assert!(r.max_residual < 1e-12);
        }
    }

    #[test]
    fn single_node_tree() {
        let cfg = BenchConfig {
            horizons: vec![2],
            seeds: 1,
            ..small()
        };
        let report = run_benchmark(&cfg).unwrap();
        assert_eq!(report.rows[0].depth, 1);
    }

    #[test]
    fn csv_header_and_rows() {
        let report = run_benchmark(&small()).unwrap();
        let mut buf = Vec::new();
        write_csv(&report.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "N,seed,serial_s,sim_parallel_s,wall_parallel_s,depth,max_residual"
        );
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn invalid_configs() {
        assert!(run_benchmark(&BenchConfig {
            repeats: 0,
            ..small()
        })
        .is_err());
        assert!(run_benchmark(&BenchConfig {
            horizons: vec![8, 4],
            ..small()
        })
        .is_err());
        assert!(run_benchmark(&BenchConfig {
            horizons: vec![],
            ..small()
        })
        .is_err());
    }

    #[test]
    fn summary_and_crossover() {
        let row = |n, serial_s, sim_parallel_s| BenchRow {
            n,
            seed: 0,
            serial_s,
            sim_parallel_s,
            wall_parallel_s: 1.0,
            depth: 1,
            max_residual: 0.0,
        };
        let rows = vec![
            row(4, 1.0, 2.0),
            row(4, 3.0, 2.0),
            row(8, 4.0, 3.0),
            row(16, 8.0, 4.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].serial_mean, 2.0);
        assert_eq!(crossover(&s), Some(8));
        let never = summarize(&[row(4, 1.0, 2.0)]);
        assert_eq!(crossover(&never), None);
    }
}
