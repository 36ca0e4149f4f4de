//! Command-line front end.
//!
//! Subcommands: `solve` (parametric, path DP, or brute force, with optional
//! self-check), `gen` (synthetic instances), `ghmm` / `ghmm-online` (robust
//! smoothing), and `bench` (timing harness with CSV output).
//!
//! Exit codes: 0 on success, 1 on any input or solver error, 2 when
//! `--check` detects a discrepancy.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{brute_force_solve, direct_dp_path};
use crate::generators;
use crate::ghmm::{self, GhmmParams, OnlineState};
use crate::solver::{solve_tree, ClipMode, Solution, SolveOptions};
use crate::tree::{InstanceFile, TreeInstance};

#[derive(Parser, Debug)]
#[command(name = "treeqp", version, about = "Exact sparse quadratic optimization over trees")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve an instance file.
    Solve(SolveArgs),
    /// Generate a synthetic instance file.
    Gen(GenArgs),
    /// Batch robust smoothing of an observation stream.
    Ghmm(GhmmArgs),
    /// Streaming robust smoothing with per-step timing.
    GhmmOnline(GhmmOnlineArgs),
    /// Timing harness over generated instances.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Instance file (JSON).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "parametric")]
    method: Method,
    /// Disable breakpoint clipping.
    #[arg(long)]
    no_clip: bool,
    /// Fixed clipping radius (default: automatic bound).
    #[arg(long, conflicts_with = "no_clip")]
    clip: Option<f64>,
    /// Root node override.
    #[arg(long)]
    root: Option<usize>,
    /// Re-verify the objective by direct evaluation (and brute force when
    /// the instance is small); exit 2 on mismatch.
    #[arg(long)]
    check: bool,
    /// Solution file to write (JSON).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum Method {
    Parametric,
    PathDp,
    Brute,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Number of nodes (random-tree and path).
    #[arg(long)]
    n: Option<usize>,
    /// Number of branches (extended-star).
    #[arg(long)]
    branches: Option<usize>,
    /// Nodes per branch (extended-star).
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Constant indicator weight.
    #[arg(long, default_value = "7.5")]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum Kind {
    RandomTree,
    ExtendedStar,
    Path,
}

#[derive(Args, Debug)]
struct GhmmArgs {
    /// Observation file: one reading per line.
    #[arg(long)]
    obs: PathBuf,
    /// Skip the first line of the observation file.
    #[arg(long)]
    has_header: bool,
    /// Observations per hidden state.
    #[arg(long, default_value = "10")]
    window: usize,
    #[arg(long, default_value = "2")]
    sigma2: f64,
    /// Variance of the first state's prior (default: same as --sigma2).
    #[arg(long)]
    sigma2_initial: Option<f64>,
    #[arg(long, default_value = "1")]
    nu2: f64,
    #[arg(long, default_value = "100")]
    lambda_w: f64,
    #[arg(long, default_value = "400")]
    gamma_x: f64,
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GhmmOnlineArgs {
    #[command(flatten)]
    ghmm: GhmmArgs,
    /// How many recent states each step re-reports.
    #[arg(long, default_value = "5")]
    recent: usize,
    /// Per-step timing CSV to write.
    #[arg(long)]
    timing: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Instance sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value = "5")]
    trials: usize,
    /// Methods to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "parametric")]
    methods: Vec<Method>,
    #[arg(long, value_enum, default_value = "random-tree")]
    kind: Kind,
    /// Constant indicator weight of the generated instances.
    #[arg(long, default_value = "7.5")]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Everything the subcommands can fail with, carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn general(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    fn check(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

macro_rules! fail {
    ($($arg:tt)*) => { return Err(Failure::general(format!($($arg)*))) };
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Ghmm(args) => cmd_ghmm(args),
        Command::GhmmOnline(args) => cmd_ghmm_online(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn read_instance(path: &Path) -> Result<TreeInstance, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::general(format!("cannot read {}: {e}", path.display())))?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| Failure::general(format!("{}: {e}", path.display())))?;
    file.into_instance()
        .map_err(|e| Failure::general(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::general(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Failure::general(format!("cannot write {}: {e}", path.display())))
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let inst = read_instance(&args.input)?;
    let opts = SolveOptions {
        clip: if args.no_clip {
            ClipMode::Off
        } else if let Some(m) = args.clip {
            ClipMode::Fixed(m)
        } else {
            ClipMode::Auto
        },
        root: args.root,
        ..SolveOptions::default()
    };
    let sol: Solution = match args.method {
        Method::Parametric => {
            solve_tree(&inst, &opts).map_err(|e| Failure::general(e.to_string()))?
        }
        Method::PathDp => {
            direct_dp_path(&inst).map_err(|e| Failure::general(e.to_string()))?
        }
        Method::Brute => {
            brute_force_solve(&inst).map_err(|e| Failure::general(e.to_string()))?
        }
    };
    if args.check {
        let eval = inst.objective(&sol.x, &sol.z);
        if !inst.is_feasible(&sol.x, &sol.z) {
            return Err(Failure::check("check failed: solution violates complementarity"));
        }
        if (eval - sol.objective).abs() > 1e-8 * (1.0 + eval.abs()) {
            return Err(Failure::check(format!(
                "check failed: reported objective {} but direct evaluation gives {eval}",
                sol.objective
            )));
        }
        if inst.n <= 14 && args.method != Method::Brute {
            let bf = brute_force_solve(&inst).map_err(|e| Failure::general(e.to_string()))?;
            if (bf.objective - sol.objective).abs() > 1e-6 * (1.0 + bf.objective.abs()) {
                return Err(Failure::check(format!(
                    "check failed: objective {} but brute force gives {}",
                    sol.objective, bf.objective
                )));
            }
        }
    }
    let nnz = sol.x.iter().filter(|&&x| x != 0.0).count();
    println!(
        "objective {:.12e}  nonzeros {}/{}  time {:.3} ms{}",
        sol.objective,
        nnz,
        inst.n,
        sol.stats.time_ms,
        if args.check { "  check ok" } else { "" }
    );
    write_json(&args.output, &sol)
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let (inst, provenance) = match args.kind {
        Kind::ExtendedStar => {
            let (Some(b), Some(l)) = (args.branches, args.length) else {
                fail!("--branches and --length are required for kind=extended-star");
            };
            if args.n.is_some_and(|n| n != b * l + 1) {
                fail!("--n conflicts with --branches/--length (n = branches*length + 1)");
            }
            let inst = generators::extended_star(b, l, args.seed, args.lambda);
            let p = generators::provenance("extended-star", inst.n, args.seed, args.lambda);
            (inst, p)
        }
        kind => {
            if args.branches.is_some() || args.length.is_some() {
                fail!("--branches/--length only apply to kind=extended-star");
            }
            let Some(n) = args.n else {
                fail!("--n is required for this kind");
            };
            if n == 0 {
                fail!("--n must be at least 1");
            }
            let (inst, name) = match kind {
                Kind::RandomTree => (generators::random_tree(n, args.seed, args.lambda), "random-tree"),
                Kind::Path => (generators::random_path(n, args.seed, args.lambda), "path"),
                Kind::ExtendedStar => unreachable!(),
            };
            let p = generators::provenance(name, n, args.seed, args.lambda);
            (inst, p)
        }
    };
    write_json(&args.out, &InstanceFile::from_instance(&inst, Some(provenance)))?;
    println!("wrote {} ({} nodes)", args.out.display(), inst.n);
    Ok(())
}

fn read_observations(args: &GhmmArgs) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(&args.obs)
        .map_err(|e| Failure::general(format!("cannot read {}: {e}", args.obs.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && args.has_header {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| Failure::general(format!("{} line {}: {e}", args.obs.display(), i + 1)))?;
        values.push(v);
    }
    if values.is_empty() {
        fail!("{}: no observations", args.obs.display());
    }
    Ok(values)
}

fn ghmm_params(args: &GhmmArgs) -> GhmmParams {
    GhmmParams {
        sigma2: args.sigma2,
        sigma2_initial: args.sigma2_initial.unwrap_or(args.sigma2),
        nu2: args.nu2,
        lambda_w: args.lambda_w,
        gamma_x: args.gamma_x,
        window: args.window,
    }
}

fn cmd_ghmm(args: GhmmArgs) -> Result<(), Failure> {
    let readings = read_observations(&args)?;
    let params = ghmm_params(&args);
    params.validate().map_err(|e| Failure::general(e.to_string()))?;
    let windows = ghmm::windows_of(&readings, params.window);
    let opts = SolveOptions {
        clip: if args.no_clip { ClipMode::Off } else { ClipMode::Auto },
        ..SolveOptions::default()
    };
    let (sol, stats) =
        ghmm::solve_batch(&windows, &params, &opts).map_err(|e| Failure::general(e.to_string()))?;
    println!(
        "states {}  outliers {}  objective {:.6e}  time {:.1} ms",
        sol.x.len(),
        sol.outliers.len(),
        sol.objective_model,
        stats.time_ms
    );
    write_json(&args.out, &sol)
}

#[derive(serde::Serialize)]
struct OnlineSummary {
    steps: usize,
    objective_miqp: f64,
    objective_model: f64,
    x_suffix: Vec<f64>,
}

fn cmd_ghmm_online(args: GhmmOnlineArgs) -> Result<(), Failure> {
    let readings = read_observations(&args.ghmm)?;
    let params = ghmm_params(&args.ghmm);
    let windows = ghmm::windows_of(&readings, params.window);
    let mut state = OnlineState::new(params).map_err(|e| Failure::general(e.to_string()))?;
    let mut timing = String::from("step,window_len,time_ms,objective_miqp,objective_model\n");
    let mut last = None;
    for (t, window) in windows.iter().enumerate() {
        let t0 = Instant::now();
        let step = state
            .step(window, args.recent)
            .map_err(|e| Failure::general(e.to_string()))?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let _ = writeln!(
            timing,
            "{t},{},{ms:.6},{:.12e},{:.12e}",
            window.len(),
            step.objective_miqp,
            step.objective_model
        );
        last = Some(step);
    }
    let last = last.expect("at least one window");
    if let Some(path) = &args.timing {
        std::fs::write(path, timing)
            .map_err(|e| Failure::general(format!("cannot write {}: {e}", path.display())))?;
    }
    println!(
        "steps {}  objective {:.6e}  last states {:?}",
        state.horizon(),
        last.objective_model,
        last.x_suffix
    );
    write_json(
        &args.ghmm.out,
        &OnlineSummary {
            steps: state.horizon(),
            objective_miqp: last.objective_miqp,
            objective_model: last.objective_model,
            x_suffix: last.x_suffix,
        },
    )
}

struct BenchRow {
    method: Method,
    n: usize,
    seed: u64,
    trial: usize,
    time_ms: f64,
    objective: f64,
    pieces_mean: f64,
    pieces_max: usize,
    nz_fraction: f64,
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Parametric => "parametric",
        Method::PathDp => "path-dp",
        Method::Brute => "brute",
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    if args.trials == 0 || args.sizes.is_empty() {
        fail!("need at least one size and one trial");
    }
    for &m in &args.methods {
        match m {
            Method::Parametric => {}
            Method::PathDp if args.kind == Kind::Path => {}
            Method::PathDp => fail!("--methods path-dp requires --kind path"),
            Method::Brute => fail!("brute force is not a benchmark method"),
        }
    }
    let threads: usize = std::env::var("TREEQP_BENCH_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1);
    let jobs: Vec<(usize, usize, u64)> = args
        .sizes
        .iter()
        .flat_map(|&n| {
            (0..args.trials).map(move |trial| (n, trial, n as u64 * 1_000_003 + trial as u64))
        })
        .collect();
    let next = Mutex::new(0usize);
    let rows = Mutex::new(Vec::<BenchRow>::new());
    let run_job = |&(n, trial, seed): &(usize, usize, u64)| -> Result<Vec<BenchRow>, Failure> {
        let inst = match args.kind {
            Kind::RandomTree => generators::random_tree(n, seed, args.lambda),
            Kind::ExtendedStar => fail!("bench generates by --kind random-tree or path"),
            Kind::Path => generators::random_path(n, seed, args.lambda),
        };
        let mut out = Vec::new();
        for &m in &args.methods {
            let sol = match m {
                Method::Parametric => {
                    solve_tree(&inst, &SolveOptions::default())
                        .map_err(|e| Failure::general(format!("n={n} seed={seed}: {e}")))?
                }
                Method::PathDp => direct_dp_path(&inst)
                    .map_err(|e| Failure::general(format!("n={n} seed={seed}: {e}")))?,
                Method::Brute => unreachable!(),
            };
            let nnz = sol.x.iter().filter(|&&x| x != 0.0).count();
            out.push(BenchRow {
                method: m,
                n,
                seed,
                trial,
                time_ms: sol.stats.time_ms,
                objective: sol.objective,
                pieces_mean: sol.stats.pieces_mean,
                pieces_max: sol.stats.pieces_max,
                nz_fraction: nnz as f64 / inst.n as f64,
            });
        }
        Ok(out)
    };
    let worker = || -> Result<(), Failure> {
        loop {
            let job = {
                let mut idx = next.lock().unwrap();
                if *idx >= jobs.len() {
                    return Ok(());
                }
                let j = jobs[*idx];
                *idx += 1;
                j
            };
            let out = run_job(&job)?;
            rows.lock().unwrap().extend(out);
        }
    };
    let result: Result<(), Failure> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads.min(jobs.len()))
            .map(|_| scope.spawn(worker))
            .collect();
        for h in handles {
            h.join().expect("bench worker panicked")?;
        }
        Ok(())
    });
    result?;
    let mut rows = rows.into_inner().unwrap();
    rows.sort_by(|a, b| {
        (a.n, a.trial, method_name(a.method)).cmp(&(b.n, b.trial, method_name(b.method)))
    });

    let kind_name = match args.kind {
        Kind::RandomTree => "random-tree",
        Kind::ExtendedStar => "extended-star",
        Kind::Path => "path",
    };
    let mut csv =
        String::from("record,method,kind,n,seed,trial,time_ms,objective,pieces_mean,pieces_max,nz_fraction\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "run,{},{kind_name},{},{},{},{:.6},{:.12e},{:.3},{},{:.6}",
            method_name(r.method), r.n, r.seed, r.trial, r.time_ms, r.objective,
            r.pieces_mean, r.pieces_max, r.nz_fraction
        );
    }
    // Per-size means and a fitted log-log slope per method.
    for &m in &args.methods {
        let mut points = Vec::new();
        for &n in &args.sizes {
            let sel: Vec<&BenchRow> =
                rows.iter().filter(|r| r.method == m && r.n == n).collect();
            let mean = |f: &dyn Fn(&BenchRow) -> f64| {
                sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64
            };
            let t = mean(&|r| r.time_ms);
            let _ = writeln!(
                csv,
                "size-mean,{},{kind_name},{n},,,{t:.6},,{:.3},{},{:.6}",
                method_name(m),
                mean(&|r| r.pieces_mean),
                sel.iter().map(|r| r.pieces_max).max().unwrap_or(0),
                mean(&|r| r.nz_fraction),
            );
            points.push(((n as f64).ln(), t.max(1e-9).ln()));
            println!(
                "{} n={n}: mean {t:.3} ms over {} trials",
                method_name(m),
                sel.len()
            );
        }
        if points.len() >= 2 {
            let slope = least_squares_slope(&points);
            let _ = writeln!(csv, "loglog-slope,{},{kind_name},,,,{slope:.6},,,,", method_name(m));
            println!("{}: fitted log-log slope {slope:.4}", method_name(m));
        }
    }
    std::fs::write(&args.out, csv)
        .map_err(|e| Failure::general(format!("cannot write {}: {e}", args.out.display())))?;
    Ok(())
}

/// Least-squares slope of y against x.
pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let var = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    cov / var
}
