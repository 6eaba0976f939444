//! Parallel Riccati recursion over a reduction tree.
//!
//! Level 0 splits the horizon into batches that are condensed concurrently.
//! The condensed batches form the stages of a shorter problem of the same
//! form, which is split and condensed again, until the horizon is at most
//! `p_min`. The top problem is solved by the serial recursion. Going back
//! down, node `i` of a level receives its initial state `x̂ᵢ` and terminal
//! cost-to-go `P̂ᵢ₊₁` from the level above and solves its batch exactly.
//! Nodes on the same level never communicate; a level completes before the
//! next one starts.

use std::time::Instant;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::condense::{condense_batch, Batch, BatchTerminal, CondensedBatch};
use crate::error::{Error, Result};
use crate::linalg::{GainPolicy, Mat, Vector};
use crate::problem::{MpcProblem, StageData};
use crate::riccati::{
    factorize_stages, forward_stages, riccati_factorize_with, solution_from, Trajectory,
};
use crate::solution::Solution;

/// Batch boundaries `0 = b₀ < b₁ < … < b_{p+1} = N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonSplit {
    pub boundaries: Vec<usize>,
}

impl HorizonSplit {
    pub fn batch_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// `(start, end)` stage ranges of the batches.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        self.boundaries.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// `⌈N / Ns⌉` batches of length `Ns`, the last one shorter when `Ns ∤ N`.
pub fn split_horizon(n: usize, ns: usize) -> Result<HorizonSplit> {
    if n == 0 || ns < 2 {
        return Err(Error::InvalidArgument(format!(
            "need N >= 1 and Ns >= 2, got N = {n}, Ns = {ns}"
        )));
    }
    let mut boundaries: Vec<usize> = (0..n).step_by(ns).collect();
    boundaries.push(n);
    Ok(HorizonSplit { boundaries })
}

/// How the last batch of each level is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FinalBatch {
    /// Condensed like every other batch; the reduced problem has one stage
    /// per batch and keeps the level's terminal cost. Tree depth is then
    /// exactly `⌈log_Ns N⌉` for `p_min = 1`.
    #[default]
    Condensed,
    /// Factored exactly with the known terminal cost; its `P₀` becomes the
    /// reduced terminal cost and the reduced problem has one stage fewer.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelConfig {
    /// Target batch length.
    pub ns: usize,
    /// Stop reducing once the horizon is at most this.
    pub p_min: usize,
    /// Worker threads.
    pub workers: usize,
    pub final_batch: FinalBatch,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        ParallelConfig {
            ns: 2,
            p_min: 1,
            workers: 1,
            final_batch: FinalBatch::Condensed,
        }
    }
}

impl ParallelConfig {
    fn check(&self) -> Result<()> {
        if self.ns < 2 {
            return Err(Error::InvalidArgument(format!(
                "Ns must be >= 2, got {}",
                self.ns
            )));
        }
        if self.p_min < 1 {
            return Err(Error::InvalidArgument("p_min must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::InvalidArgument("need at least one worker".into()));
        }
        Ok(())
    }
}

/// Initial state and terminal cost-to-go handed to a node from its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAssignment {
    pub x0: Vector,
    pub p_terminal: Mat,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub level: usize,
    pub index: usize,
    /// Stage range `[start, end)` within the level's problem.
    pub range: (usize, usize),
    pub condensed: CondensedBatch,
    pub assigned: Option<NodeAssignment>,
}

#[derive(Debug, Clone)]
pub struct TreeLevel {
    pub split: HorizonSplit,
    pub nodes: Vec<TreeNode>,
    /// Gain policy for this level's stages: strict on the original problem,
    /// pseudo-inverse on reduced problems.
    pub policy: GainPolicy,
}

/// Wall-clock seconds per node for each phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelTimings {
    /// Condensation, indexed by level (bottom-up).
    pub build: Vec<Vec<f64>>,
    /// Serial solve of the top problem.
    pub top: f64,
    /// Exact per-node solves, indexed by level.
    pub propagate: Vec<Vec<f64>>,
}

impl LevelTimings {
    /// All node groups in execution order: build levels, the top solve, then
    /// propagation from the top level down.
    pub fn phases(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.build.clone();
        out.push(vec![self.top]);
        out.extend(self.propagate.iter().rev().cloned());
        out
    }

    /// Time of an ideal machine with one processor per node and free
    /// communication: the sum over levels of the slowest node.
    pub fn simulated_parallel_total(&self) -> f64 {
        simulated_parallel_time(&self.phases()).expect("timings always include the top solve")
    }

    /// Time to run every node one after another.
    pub fn serial_total(&self) -> f64 {
        self.phases().iter().flatten().sum()
    }
}

/// `Σ_levels max(node times)`.
pub fn simulated_parallel_time(levels: &[Vec<f64>]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::EmptyTimings);
    }
    Ok(levels
        .iter()
        .map(|l| l.iter().copied().fold(0.0, f64::max))
        .sum())
}

#[derive(Debug, Clone)]
pub struct ReductionTree<'a> {
    pub original: &'a MpcProblem,
    pub config: ParallelConfig,
    pub levels: Vec<TreeLevel>,
    /// Problems of levels `1..=depth`; the last one is the top problem.
    pub reduced: Vec<MpcProblem>,
    pub timings: LevelTimings,
}

impl<'a> ReductionTree<'a> {
    /// Number of condensation levels.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// The problem solved at level `k` (`0` is the original, `depth()` the top).
    pub fn problem(&self, k: usize) -> &MpcProblem {
        if k == 0 {
            self.original
        } else {
            &self.reduced[k - 1]
        }
    }

    pub fn top(&self) -> &MpcProblem {
        self.problem(self.depth())
    }

    /// Horizon of each level's problem, from the original up to the top.
    pub fn horizons(&self) -> Vec<usize> {
        (0..=self.depth())
            .map(|k| self.problem(k).horizon())
            .collect()
    }
}

fn level_policy(k: usize) -> GainPolicy {
    if k == 0 {
        GainPolicy::Strict
    } else {
        GainPolicy::PseudoInverse
    }
}

/// The level-`k+1` problem built from the condensed batches of level `k`.
fn assemble_reduced(level: &MpcProblem, nodes: &[TreeNode]) -> Result<MpcProblem> {
    let nx = level.nx();
    let mut stages = Vec::with_capacity(nodes.len());
    let mut terminal = level.qxn.clone();
    for node in nodes {
        match &node.condensed.reduction {
            Some(r) => stages.push(StageData {
                a: r.a_hat.clone(),
                b: r.b_hat.clone(),
                qx: node.condensed.qx_hat.clone(),
                qxu: Mat::zeros(nx, nx),
                qu: r.qu_hat.clone(),
            }),
            None => terminal = node.condensed.qx_hat.clone(),
        }
    }
    MpcProblem::with_horizon_zero_allowed(stages, terminal, level.x0.clone())
}

/// Reduction tree and parallel solver bound to a worker pool.
pub struct ParallelRiccati {
    config: ParallelConfig,
    pool: ThreadPool,
}

impl ParallelRiccati {
    pub fn new(config: ParallelConfig) -> Result<Self> {
        config.check()?;
        let pool = ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .thread_name(|i| format!("riccati-worker-{i}"))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        Ok(ParallelRiccati { config, pool })
    }

    pub fn config(&self) -> &ParallelConfig {
        &self.config
    }

    /// Reduces `p` level by level until the horizon is at most `p_min`.
    pub fn build<'a>(&self, p: &'a MpcProblem) -> Result<ReductionTree<'a>> {
        p.check_dims()?;
        let cfg = self.config;
        let mut tree = ReductionTree {
            original: p,
            config: cfg,
            levels: Vec::new(),
            reduced: Vec::new(),
            timings: LevelTimings::default(),
        };
        loop {
            let k = tree.depth();
            let current = tree.problem(k);
            if current.horizon() <= cfg.p_min {
                break;
            }
            let split = split_horizon(current.horizon(), cfg.ns)?;
            let ranges = split.ranges();
            let last = ranges.len() - 1;
            let policy = level_policy(k);
            let stages = &current.stages;
            let qxn = &current.qxn;

            let results: Vec<Result<(TreeNode, f64)>> = self.pool.install(|| {
                ranges
                    .par_iter()
                    .enumerate()
                    .map(|(i, &(s, e))| {
                        let start = Instant::now();
                        let terminal = if i == last && cfg.final_batch == FinalBatch::Exact {
                            BatchTerminal::Known(qxn.clone())
                        } else {
                            BatchTerminal::Preliminary
                        };
                        let batch = Batch {
                            stages: &stages[s..e],
                            terminal,
                            policy,
                        };
                        let condensed =
                            condense_batch(&batch).map_err(|err| offset_stage(err, s))?;
                        let elapsed = start.elapsed().as_secs_f64();
                        Ok((
                            TreeNode {
                                level: k,
                                index: i,
                                range: (s, e),
                                condensed,
                                assigned: None,
                            },
                            elapsed,
                        ))
                    })
                    .collect()
            });
            let mut nodes = Vec::with_capacity(results.len());
            let mut times = Vec::with_capacity(results.len());
            for r in results {
                let (node, t) = r?;
                nodes.push(node);
                times.push(t);
            }
            let next = assemble_reduced(current, &nodes)?;
            tree.levels.push(TreeLevel {
                split,
                nodes,
                policy,
            });
            tree.timings.build.push(times);
            tree.reduced.push(next);
        }
        Ok(tree)
    }

    /// Solves the top problem and pushes the solution down to level 0.
    pub fn propagate(&self, tree: &mut ReductionTree<'_>) -> Result<Solution> {
        let depth = tree.depth();
        let top = tree.top();
        let start = Instant::now();
        let policy = level_policy(depth);
        let f = riccati_factorize_with(top, &top.qxn, policy)?;
        let traj = forward_stages(&top.stages, &f, &top.x0);
        tree.timings.top = start.elapsed().as_secs_f64();
        let mut parent = LevelSolution { p: f.p, traj };

        tree.timings.propagate = vec![Vec::new(); depth];
        for k in (0..depth).rev() {
            let (solution, times, assigned) = self.propagate_level(tree, k, &parent)?;
            for (node, a) in tree.levels[k].nodes.iter_mut().zip(assigned) {
                node.assigned = Some(a);
            }
            tree.timings.propagate[k] = times;
            parent = solution;
        }
        Ok(solution_from(tree.original, parent.traj))
    }

    fn propagate_level(
        &self,
        tree: &ReductionTree<'_>,
        k: usize,
        parent: &LevelSolution,
    ) -> Result<(LevelSolution, Vec<f64>, Vec<NodeAssignment>)> {
        let level = &tree.levels[k];
        let problem = tree.problem(k);
        let parent_n = parent.p.len() - 1;
        let assigned: Vec<NodeAssignment> = (0..level.nodes.len())
            .map(|i| NodeAssignment {
                x0: parent.traj.x[i].clone(),
                p_terminal: if i < parent_n {
                    parent.p[i + 1].clone()
                } else {
                    problem.qxn.clone()
                },
            })
            .collect();

        let outputs: Vec<Result<(Vec<Mat>, Trajectory, f64)>> = self.pool.install(|| {
            level
                .nodes
                .par_iter()
                .zip(assigned.par_iter())
                .map(|(node, a)| {
                    let start = Instant::now();
                    let (s, e) = node.range;
                    let stages = &problem.stages[s..e];
                    let f = factorize_stages(stages, &a.p_terminal, level.policy)
                        .map_err(|err| offset_stage(err, s))?;
                    let traj = forward_stages(stages, &f, &a.x0);
                    Ok((f.p, traj, start.elapsed().as_secs_f64()))
                })
                .collect()
        });

        let n = problem.horizon();
        let x_scale = parent.traj.x.iter().fold(0.0_f64, |m, v| m.max(v.amax()));
        let mut p = Vec::with_capacity(n + 1);
        let mut x = Vec::with_capacity(n + 1);
        let mut u = Vec::with_capacity(n);
        let mut lambda = Vec::with_capacity(n + 1);
        let mut times = Vec::with_capacity(outputs.len());
        let count = outputs.len();
        for (i, out) in outputs.into_iter().enumerate() {
            let (mut ps, mut traj, t) = out?;
            times.push(t);
            if i < parent_n {
                // the node's final state is the parent's x̂ᵢ₊₁
                let end = traj.x.last().expect("batches are non-empty");
                let gap = (end - &parent.traj.x[i + 1]).amax();
                let rel = if x_scale > 0.0 { gap / x_scale } else { gap };
                if rel > STITCH_TOL {
                    return Err(Error::Stitch {
                        boundary: node_end(level, i),
                        gap: rel,
                    });
                }
            }
            if i + 1 < count {
                // the next node supplies the shared boundary values
                ps.pop();
                traj.x.pop();
                traj.lambda.pop();
            }
            p.append(&mut ps);
            x.append(&mut traj.x);
            u.append(&mut traj.u);
            lambda.append(&mut traj.lambda);
        }
        Ok((
            LevelSolution {
                p,
                traj: Trajectory { x, u, lambda },
            },
            times,
            assigned,
        ))
    }

    pub fn solve(&self, p: &MpcProblem) -> Result<(Solution, LevelTimings)> {
        let mut tree = self.build(p)?;
        let sol = self.propagate(&mut tree)?;
        Ok((sol, tree.timings))
    }
}

/// Relative disagreement tolerated between a node's final state and the
/// parent's value at the same boundary.
pub const STITCH_TOL: f64 = 1e-8;

fn node_end(level: &TreeLevel, i: usize) -> usize {
    level.nodes[i].range.1
}

fn offset_stage(err: Error, offset: usize) -> Error {
    match err {
        Error::NotPositiveDefinite(t) => Error::NotPositiveDefinite(t + offset),
        Error::DimensionMismatch {
            stage: Some(t),
            what,
        } => Error::DimensionMismatch {
            stage: Some(t + offset),
            what,
        },
        other => other,
    }
}

struct LevelSolution {
    p: Vec<Mat>,
    traj: Trajectory,
}

/// Builds the reduction tree on the calling thread's rayon pool with
/// [`FinalBatch::Condensed`].
pub fn build_tree(p: &MpcProblem, ns: usize, p_min: usize) -> Result<ReductionTree<'_>> {
    let solver = ParallelRiccati::new(ParallelConfig {
        ns,
        p_min,
        workers: 1,
        final_batch: FinalBatch::Condensed,
    })?;
    solver.build(p)
}

/// Solves the top problem of `tree` and propagates the solution down.
pub fn propagate_solution(tree: &mut ReductionTree<'_>) -> Result<Solution> {
    let solver = ParallelRiccati::new(ParallelConfig {
        workers: 1,
        ..tree.config
    })?;
    solver.propagate(tree)
}

/// Build and propagate with `cfg.workers` threads.
///
/// The result is bitwise identical for any worker count: every node is an
/// independent computation over immutable inputs and results are gathered
/// in node order.
pub fn solve_parallel(p: &MpcProblem, cfg: ParallelConfig) -> Result<(Solution, LevelTimings)> {
    ParallelRiccati::new(cfg)?.solve(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_random_stable, scalar_problem};
    use crate::riccati::{riccati_factorize, solve_serial};

    #[test]
    fn split_examples() {
        assert_eq!(split_horizon(8, 2).unwrap().boundaries, vec![0, 2, 4, 6, 8]);
        assert_eq!(
            split_horizon(9, 2).unwrap().boundaries,
            vec![0, 2, 4, 6, 8, 9]
        );
        assert_eq!(split_horizon(2, 4).unwrap().boundaries, vec![0, 2]);
        assert!(split_horizon(0, 2).is_err());
        assert!(split_horizon(5, 1).is_err());
    }

    #[test]
    fn simulated_time_examples() {
        assert_eq!(
            simulated_parallel_time(&[vec![3.0, 1.0], vec![2.0]]).unwrap(),
            5.0
        );
        assert_eq!(simulated_parallel_time(&[vec![7.0]]).unwrap(), 7.0);
        assert_eq!(
            simulated_parallel_time(&[vec![1.0, 1.0, 1.0], vec![1.0], vec![1.0]]).unwrap(),
            3.0
        );
        assert_eq!(simulated_parallel_time(&[]), Err(Error::EmptyTimings));
    }

    #[test]
    fn scalar_four_stage_tree() {
        let p = scalar_problem(4);
        let mut tree = build_tree(&p, 2, 1).unwrap();
        assert_eq!(tree.horizons(), vec![4, 2, 1]);
        let level1 = tree.problem(1);
        // both batches are the two-stage scalar batch
        for st in &level1.stages {
            assert!((st.a[(0, 0)] - 0.5).abs() < 1e-12);
            assert!((st.b[(0, 0)] - 1.5).abs() < 1e-12);
            assert!((st.qx[(0, 0)] - 1.5).abs() < 1e-12);
        }
        let sol = propagate_solution(&mut tree).unwrap();
        let serial = solve_serial(&p).unwrap();
        assert!(sol.max_rel_diff(&serial) < 1e-12);

        // λ at each split point equals P̂ᵢ x̂ᵢ
        let f = riccati_factorize(&p, &p.qxn).unwrap();
        for &b in &tree.levels[0].split.boundaries {
            let expect = f.p[b][(0, 0)] * sol.x[b][0];
            assert!((sol.lambda[b][0] - expect).abs() < 1e-12);
        }
        for node in &tree.levels[0].nodes {
            assert!(node.assigned.is_some());
        }
    }

    #[test]
    fn single_batch_tree_degenerates_to_serial() {
        let p = generate_random_stable(3, 2, 2, 4).unwrap();
        let mut tree = build_tree(&p, 2, 1).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.levels[0].nodes.len(), 1);
        let sol = propagate_solution(&mut tree).unwrap();
        assert!(sol.max_rel_diff(&solve_serial(&p).unwrap()) < 1e-10);

        let exact = ParallelRiccati::new(ParallelConfig {
            final_batch: FinalBatch::Exact,
            ..ParallelConfig::default()
        })
        .unwrap();
        let mut tree = exact.build(&p).unwrap();
        assert_eq!(tree.top().horizon(), 0);
        let sol = exact.propagate(&mut tree).unwrap();
        assert!(sol.max_rel_diff(&solve_serial(&p).unwrap()) < 1e-12);
    }

    #[test]
    fn depth_for_powers() {
        let p = generate_random_stable(2, 1, 64, 1).unwrap();
        assert_eq!(build_tree(&p, 2, 1).unwrap().depth(), 6);
        let p = generate_random_stable(2, 1, 27, 1).unwrap();
        assert_eq!(build_tree(&p, 3, 1).unwrap().depth(), 3);
    }

    #[test]
    fn short_horizon_needs_no_reduction() {
        let p = generate_random_stable(2, 1, 3, 1).unwrap();
        let (sol, t) = solve_parallel(
            &p,
            ParallelConfig {
                p_min: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(t.build.is_empty());
        assert!(sol.max_rel_diff(&solve_serial(&p).unwrap()) == 0.0);
    }

    #[test]
    fn zero_initial_state() {
        let p = generate_random_stable(3, 2, 16, 2)
            .unwrap()
            .with_x0(Vector::zeros(3));
        let (sol, _) = solve_parallel(&p, ParallelConfig::default()).unwrap();
        assert!(sol
            .x
            .iter()
            .chain(&sol.u)
            .chain(&sol.lambda)
            .all(|v| v.amax() == 0.0));
    }

    #[test]
    fn both_final_batch_modes_match_serial() {
        for (seed, n, ns) in [(1, 9, 2), (2, 17, 3), (3, 31, 2), (4, 64, 4), (5, 5, 3)] {
            let p = generate_random_stable(4, 2, n, seed).unwrap();
            let serial = solve_serial(&p).unwrap();
            for final_batch in [FinalBatch::Condensed, FinalBatch::Exact] {
                let cfg = ParallelConfig {
                    ns,
                    final_batch,
                    ..Default::default()
                };
                let (sol, _) = solve_parallel(&p, cfg).unwrap();
                let d = sol.max_rel_diff(&serial);
                assert!(d < 1e-9, "seed {seed} N {n} Ns {ns} {final_batch:?}: {d:e}");
            }
        }
    }

    #[test]
    fn rank_deficient_reduced_controls() {
        // a single input per stage and batches of two stages: Q̂ᵤ has rank ≤ 2 < nx
        let p = generate_random_stable(5, 1, 24, 9).unwrap();
        let tree = build_tree(&p, 2, 1).unwrap();
        assert!(tree.levels[0]
            .nodes
            .iter()
            .all(|n| n.condensed.control_rank().unwrap() <= 2));
        let (sol, _) = solve_parallel(&p, ParallelConfig::default()).unwrap();
        assert!(sol.max_rel_diff(&solve_serial(&p).unwrap()) < 1e-9);

        // autonomous stages: Q̂ᵤ = 0 everywhere
        let p = generate_random_stable(3, 0, 12, 9).unwrap();
        let (sol, _) = solve_parallel(
            &p,
            ParallelConfig {
                ns: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sol.max_rel_diff(&solve_serial(&p).unwrap()) < 1e-9);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let p = generate_random_stable(7, 5, 64, 2).unwrap();
        let one = solve_parallel(&p, ParallelConfig::default()).unwrap().0;
        let eight = solve_parallel(
            &p,
            ParallelConfig {
                workers: 8,
                ..Default::default()
            },
        )
        .unwrap()
        .0;
        assert_eq!(one.to_bits(), eight.to_bits());
    }

    #[test]
    fn reduced_problem_keeps_the_optimal_value() {
        let p = generate_random_stable(4, 3, 12, 6).unwrap();
        let tree = build_tree(&p, 3, 1).unwrap();
        let serial = solve_serial(&p).unwrap();
        for k in 1..=tree.depth() {
            let reduced =
                crate::riccati::solve_serial_with(tree.problem(k), GainPolicy::PseudoInverse)
                    .unwrap();
            assert!(
                crate::linalg::scalar_rel_diff(reduced.objective, serial.objective) < 1e-9,
                "level {k}"
            );
        }
    }

    #[test]
    fn timings_cover_every_node() {
        let p = generate_random_stable(3, 2, 16, 2).unwrap();
        let (_, t) = solve_parallel(&p, ParallelConfig::default()).unwrap();
        assert_eq!(
            t.build.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![8, 4, 2, 1]
        );
        assert_eq!(
            t.propagate.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![8, 4, 2, 1]
        );
        assert!(t.simulated_parallel_total() <= t.serial_total());
        assert!(t.simulated_parallel_total() > 0.0);
    }

    #[test]
    fn bad_config_is_rejected() {
        let p = scalar_problem(4);
        assert!(solve_parallel(
            &p,
            ParallelConfig {
                ns: 1,
                ..Default::default()
            }
        )
        .is_err());
        assert!(solve_parallel(
            &p,
            ParallelConfig {
                p_min: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(solve_parallel(
            &p,
            ParallelConfig {
                workers: 0,
                ..Default::default()
            }
        )
        .is_err());
    }
}
