use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use riccati_core::bench::{crossover, run_benchmark, summarize, write_csv, BenchConfig};
use riccati_core::condense::Batch;
use riccati_core::oracle::{
    check_condensation, kkt_residual, solve_kkt_dense, MAX_DENSE_VARIABLES,
};
use riccati_core::problem::PSD_TOL;
use riccati_core::{
    generate_random_stable, parse_problem, serialize_problem, solve_parallel, solve_serial,
    split_horizon, validate_problem, MpcProblem, ParallelConfig,
};

/// Agreement required between solvers in `verify`.
const VERIFY_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(
    name = "riccati",
    version,
    about = "Serial and parallel Riccati solvers for linear MPC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Serial,
    Parallel,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write the solution as JSON.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "serial")]
        backend: BackendArg,
        #[arg(long, default_value_t = 2)]
        ns: usize,
        #[arg(long, default_value_t = 1)]
        pmin: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check serial, parallel and dense solutions of a problem file.
    Verify {
        problem: PathBuf,
        #[arg(long, default_value_t = 2)]
        ns: usize,
    },
    /// Time serial against parallel solves on random problems.
    Bench {
        #[arg(long, default_value_t = 7)]
        nx: usize,
        #[arg(long, default_value_t = 5)]
        nu: usize,
        #[arg(long, default_value_t = 2)]
        ns: usize,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "4,8,16,32,64,128,256,512"
        )]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        pmin: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// CSV destination; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a random stable problem file.
    Gen {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        nu: usize,
        #[arg(long = "N", visible_alias = "horizon")]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_problem(path: &Path) -> Result<MpcProblem> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_problem(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.write_all(b"\n")?;
            Ok(())
        }
    }
}

/// Prints one line per check and returns whether all of them passed.
fn verify(p: &MpcProblem, ns: usize) -> Result<bool> {
    let mut ok = true;
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "ok  " } else { "FAIL" });
        ok &= pass;
    };

    let v = validate_problem(p, PSD_TOL)?;
    report(
        "assumptions",
        v.ok(),
        format!("{} violation(s)", v.violations.len()),
    );
    for viol in &v.violations {
        println!(
            "       stage {}: {:?}, min eigenvalue {:e}",
            viol.stage, viol.assumption, viol.min_eigenvalue
        );
    }
    if !v.ok() {
        return Ok(false);
    }

    let serial = solve_serial(p)?;
    let (parallel, _) = solve_parallel(
        p,
        ParallelConfig {
            ns,
            ..ParallelConfig::default()
        },
    )?;
    let d = serial.max_rel_diff(&parallel);
    report("serial vs parallel", d <= VERIFY_TOL, format!("{d:.3e}"));

    let vars: usize = p.stages.iter().map(|s| s.nx() + s.nu()).sum::<usize>() + p.nx();
    if vars <= MAX_DENSE_VARIABLES {
        let dense = solve_kkt_dense(p)?;
        let d = serial.max_rel_diff(&dense);
        report("serial vs dense KKT", d <= VERIFY_TOL, format!("{d:.3e}"));
    } else {
        println!("skip serial vs dense KKT: {vars} variables");
    }

    for (name, s) in [("serial", &serial), ("parallel", &parallel)] {
        let r = kkt_residual(p, s)?.relative();
        report(
            &format!("{name} KKT residual"),
            r <= VERIFY_TOL,
            format!("{r:.3e}"),
        );
    }

    let mut worst = 0.0_f64;
    let mut bitwise = true;
    for (s, e) in split_horizon(p.horizon(), ns)?.ranges() {
        let r = check_condensation(&Batch::preliminary(&p.stages[s..e]))?;
        worst = worst.max(r.max_residual());
        bitwise &= r.b_equals_qu;
    }
    report(
        "condensation identities",
        worst <= 1e-9 && bitwise,
        format!("worst residual {worst:.3e}"),
    );
    Ok(ok)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve {
            problem,
            backend,
            ns,
            pmin,
            workers,
            out,
        } => {
            let p = read_problem(&problem)?;
            let sol = match backend {
                BackendArg::Serial => solve_serial(&p)?,
                BackendArg::Parallel => {
                    let cfg = ParallelConfig {
                        ns,
                        p_min: pmin,
                        workers,
                        ..ParallelConfig::default()
                    };
                    solve_parallel(&p, cfg)?.0
                }
            };
            emit(out.as_deref(), &sol.to_json())?;
        }
        Command::Verify { problem, ns } => {
            let p = read_problem(&problem)?;
            if !verify(&p, ns)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench {
            nx,
            nu,
            ns,
            seeds,
            horizons,
            repeats,
            pmin,
            workers,
            out,
        } => {
            let cfg = BenchConfig {
                nx,
                nu,
                ns,
                horizons,
                repeats,
                seeds,
                p_min: pmin,
                workers,
            };
            let report = run_benchmark(&cfg)?;
            for f in &report.failures {
                eprintln!("N={} seed={} failed: {}", f.n, f.seed, f.message);
            }
            match &out {
                Some(path) => {
                    let file = fs::File::create(path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    write_csv(&report.rows, file)?;
                }
                None => write_csv(&report.rows, io::stdout().lock())?,
            }
            let summary = summarize(&report.rows);
            for s in &summary {
                eprintln!(
                    "N={:<5} depth={:<3} serial={:.3e}s sim_parallel={:.3e}s wall_parallel={:.3e}s",
                    s.n, s.depth, s.serial_mean, s.sim_parallel_mean, s.wall_parallel_mean
                );
            }
            match crossover(&summary) {
                Some(n) => eprintln!("simulated parallel faster from N={n}"),
                None => eprintln!("no crossover in the tested horizons"),
            }
            if !report.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Gen {
            nx,
            nu,
            n,
            seed,
            out,
        } => {
            if n == 0 {
                bail!("N must be at least 1");
            }
            let p = generate_random_stable(nx, nu, n, seed)?;
            emit(out.as_deref(), &serialize_problem(&p))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
