//! Command-line interface.  Exit codes: 0 on success, 2 for input or
//! validation errors, 1 for numerical non-convergence under `--strict`.

use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use berkgreen::elliptic::{
    build_elliptic, build_elliptic_on, equidistribution_experiment, EllipticModel, PointGenerator,
    Reduction,
};
use berkgreen::error::Error;
use berkgreen::green::{green_build, GreenFunction};
use berkgreen::io;
use berkgreen::kernel::{base_change_residual, KernelHandle};
use berkgreen::minimize::{self, MinimizeOpts, SolverKind};
use berkgreen::paf::SignedMeasure;
use berkgreen::space::{MetricSpace, SpacePoint};

/// Format a float with 12 significant digits.
fn fmt(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.11e}")
}

/// Round to 12 significant digits for JSON output.
fn sig(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(format!("{x:.11e}").parse::<f64>().unwrap())
    } else {
        json!(fmt(x))
    }
}

#[derive(Parser)]
#[command(name = "berkgreen", version, about = "Potential theory on metric graphs")]
struct Cli {
    /// Worker threads (the BERKGREEN_THREADS environment variable overrides).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct SpaceArg {
    /// Path to a space JSON file.
    #[arg(long)]
    space: std::path::PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Potential kernel values g_zeta(x, y), with optional base-change check.
    Kernel {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        zeta: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        x: String,
        /// Also print the base-change residual against this base point.
        #[arg(long)]
        zeta_prime: Option<String>,
    },
    /// Normalized Green's function value g_mu(x, y).
    Green {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        mu: std::path::PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        zeta0: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
    },
    /// Energy integral of nu against the Green's function of mu.
    Energy {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        mu: std::path::PathBuf,
        #[arg(long)]
        nu: std::path::PathBuf,
        #[arg(long)]
        zeta0: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
    },
    /// Equilibrium measure: minimize the energy over mesh measures.
    Minimize {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        mu: std::path::PathBuf,
        #[arg(long)]
        zeta0: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = SolverArg::FrankWolfe)]
        solver: SolverArg,
        /// Exit with status 1 if the solver does not converge.
        #[arg(long)]
        strict: bool,
    },
    /// Capacity of a region relative to zeta.
    Capacity {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        zeta0: String,
        #[arg(long)]
        zeta: String,
        #[arg(long)]
        region: std::path::PathBuf,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long)]
        strict: bool,
    },
    /// Local discrepancy of a point configuration on an elliptic model.
    Discrepancy {
        #[arg(long, value_enum)]
        reduction: ReductionArg,
        #[arg(long, default_value_t = 0.0)]
        log_abs_j: f64,
        /// Points JSON file ({"points":[{"circle":0.5}, ...]}).
        #[arg(long)]
        points: std::path::PathBuf,
        /// Optional space file for models with hanging trees.
        #[arg(long)]
        space: Option<std::path::PathBuf>,
        /// Optional measure file when --space is given (defaults delta at "o").
        #[arg(long)]
        mu: Option<std::path::PathBuf>,
        #[arg(long)]
        zeta0: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
    },
    /// Discrepancy/BL trace over a family of configuration sizes (CSV).
    Equidist {
        #[arg(long, value_enum)]
        reduction: ReductionArg,
        #[arg(long, default_value_t = 0.0)]
        log_abs_j: f64,
        #[arg(long, value_enum, default_value_t = GeneratorArg::Equispaced)]
        generator: GeneratorArg,
        /// Cluster arc width (clustered generator only).
        #[arg(long)]
        width: Option<f64>,
        /// Comma-separated configuration sizes.
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Run the invariant residual suite on a space.
    Check {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    FrankWolfe,
    ProjectedGradient,
}
impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> SolverKind {
        match s {
            SolverArg::FrankWolfe => SolverKind::FrankWolfe,
            SolverArg::ProjectedGradient => SolverKind::ProjectedGradient,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Good,
    Multiplicative,
}
impl From<ReductionArg> for Reduction {
    fn from(r: ReductionArg) -> Reduction {
        match r {
            ReductionArg::Good => Reduction::Good,
            ReductionArg::Multiplicative => Reduction::Multiplicative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Equispaced,
    Random,
    Clustered,
}

fn read_file(path: &std::path::Path) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_space(path: &std::path::Path) -> Result<Arc<MetricSpace>, Error> {
    Ok(Arc::new(io::parse_space_json(&read_file(path)?)?))
}

fn load_measure(space: &MetricSpace, path: &std::path::Path) -> Result<SignedMeasure, Error> {
    io::parse_measure_json(space, &read_file(path)?)
}

/// Base point: explicit, or the first skeleton vertex.
fn pick_zeta0(space: &MetricSpace, arg: &Option<String>) -> Result<SpacePoint, Error> {
    match arg {
        Some(s) => io::parse_point_str(space, s),
        None => {
            let v = (0..space.graph.vertices.len())
                .find(|&v| space.vertex_tree[v].is_none())
                .ok_or_else(|| Error::Input("space has no skeleton vertex".into()))?;
            Ok(SpacePoint::vertex(v))
        }
    }
}

fn build_green(
    space: Arc<MetricSpace>,
    mu_path: &std::path::Path,
    zeta0: &Option<String>,
    h: f64,
) -> Result<GreenFunction, Error> {
    let mu = load_measure(&space, mu_path)?;
    let z0 = pick_zeta0(&space, zeta0)?;
    green_build(space, mu, z0, h)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::Kernel { space, zeta, y, x, zeta_prime } => {
            let sp = load_space(&space.space)?;
            let pz = io::parse_point_str(&sp, zeta)?;
            let py = io::parse_point_str(&sp, y)?;
            let px = io::parse_point_str(&sp, x)?;
            let handle = KernelHandle::new(sp.clone(), pz)?;
            let value = handle.value(px, py);
            let diag = handle.value(py, py);
            let residual = match zeta_prime {
                Some(zp) => {
                    let pzp = io::parse_point_str(&sp, zp)?;
                    Some(base_change_residual(&sp, pz, pzp, px, py)?)
                }
                None => None,
            };
            match cli.format {
                Format::Text => {
                    println!("value {}", fmt(value));
                    println!("diagonal {}", fmt(diag));
                    if let Some(r) = residual {
                        println!("base_change_residual {}", fmt(r));
                    }
                }
                Format::Json => {
                    let mut obj = json!({ "value": sig(value), "diagonal": sig(diag) });
                    if let Some(r) = residual {
                        obj["base_change_residual"] = sig(r);
                    }
                    println!("{obj}");
                }
            }
        }
        Cmd::Green { space, mu, x, y, zeta0, h } => {
            let sp = load_space(&space.space)?;
            let g = build_green(sp.clone(), mu, zeta0, *h)?;
            let px = io::parse_point_str(&sp, x)?;
            let py = io::parse_point_str(&sp, y)?;
            let value = g.eval(px, py);
            match cli.format {
                Format::Text => {
                    println!("value {}", fmt(value));
                    println!("normalization {}", fmt(g.c));
                }
                Format::Json => println!(
                    "{}",
                    json!({ "value": sig(value), "normalization": sig(g.c) })
                ),
            }
        }
        Cmd::Energy { space, mu, nu, zeta0, h } => {
            let sp = load_space(&space.space)?;
            let g = build_green(sp.clone(), mu, zeta0, *h)?;
            let nu = load_measure(&sp, nu)?;
            let rep = g.energy(&nu, *h)?;
            match cli.format {
                Format::Text => {
                    println!("value {}", fmt(rep.value));
                    println!("diagonal {}", fmt(rep.diagonal));
                    println!("off_diagonal {}", fmt(rep.off_diagonal));
                    println!("density {}", fmt(rep.density));
                    println!("h {}", fmt(rep.h));
                }
                Format::Json => println!(
                    "{}",
                    json!({
                        "value": sig(rep.value),
                        "diagonal": sig(rep.diagonal),
                        "off_diagonal": sig(rep.off_diagonal),
                        "density": sig(rep.density),
                        "h": sig(rep.h),
                    })
                ),
            }
        }
        Cmd::Minimize { space, mu, zeta0, h, tol, max_iter, solver, strict } => {
            let sp = load_space(&space.space)?;
            let g = build_green(sp.clone(), mu, zeta0, *h)?;
            let opts = MinimizeOpts { max_iter: *max_iter, tol: *tol, solver: (*solver).into() };
            let res = minimize::minimize_energy(&g, *h, &opts)?;
            if *strict && !res.converged {
                return Err(Error::NonConvergence(format!(
                    "minimizer stopped after {} iterations",
                    res.iterations
                )));
            }
            print_equilibrium(cli.format, &sp, &res);
        }
        Cmd::Capacity { space, zeta0, zeta, region, h, tol, max_iter, strict } => {
            let sp = load_space(&space.space)?;
            let pz0 = io::parse_point_str(&sp, zeta0)?;
            let pz = io::parse_point_str(&sp, zeta)?;
            let reg = io::parse_region_json(&sp, &read_file(region)?)?;
            let opts = MinimizeOpts {
                max_iter: *max_iter,
                tol: *tol,
                solver: SolverKind::FrankWolfe,
            };
            let res = minimize::capacity(&sp, pz0, pz, &reg, *h, &opts)?;
            if *strict && !res.converged {
                return Err(Error::NonConvergence(format!(
                    "minimizer stopped after {} iterations",
                    res.iterations
                )));
            }
            print_equilibrium(cli.format, &sp, &res);
        }
        Cmd::Discrepancy { reduction, log_abs_j, points, space, mu, zeta0, h } => {
            let model = build_model(*reduction, *log_abs_j, space, mu, zeta0, *h)?;
            let pf = io::parse_points_json(&read_file(points)?)?;
            let pts = resolve_model_points(&model, &pf)?;
            let d = model.local_discrepancy(&pts)?;
            match cli.format {
                Format::Text => println!("discrepancy {}", fmt(d)),
                Format::Json => println!("{}", json!({ "discrepancy": sig(d) })),
            }
        }
        Cmd::Equidist { reduction, log_abs_j, generator, width, ns, seed, h, out } => {
            if ns.is_empty() {
                return Err(Error::Input("ns must list at least one size".into()));
            }
            let model = build_model(*reduction, *log_abs_j, &None, &None, &None, *h)?;
            let gen = match generator {
                GeneratorArg::Equispaced => PointGenerator::Equispaced,
                GeneratorArg::Random => PointGenerator::RandomUniform,
                GeneratorArg::Clustered => PointGenerator::Clustered {
                    width: width.ok_or_else(|| {
                        Error::Input("clustered generator requires --width".into())
                    })?,
                },
            };
            let rows = equidistribution_experiment(&model, &gen, ns, *seed)?;
            let mut csv = String::from("n,D,BL,seed,h\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.n,
                    fmt(r.discrepancy),
                    fmt(r.bl),
                    r.seed,
                    fmt(r.h)
                ));
            }
            match out {
                Some(path) => std::fs::write(path, csv)
                    .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?,
                None => print!("{csv}"),
            }
        }
        Cmd::Check { space, samples, seed } => {
            let sp = load_space(&space.space)?;
            let report = berkgreen::checks::run_checks(&sp, *samples, *seed)?;
            match cli.format {
                Format::Text => {
                    for (name, v) in &report.rows {
                        println!("{name} {}", fmt(*v));
                    }
                }
                Format::Json => {
                    let obj: serde_json::Map<String, serde_json::Value> = report
                        .rows
                        .iter()
                        .map(|(n, v)| (n.clone(), sig(*v)))
                        .collect();
                    println!("{}", serde_json::Value::Object(obj));
                }
            }
        }
    }
    Ok(())
}

fn build_model(
    reduction: ReductionArg,
    log_abs_j: f64,
    space: &Option<std::path::PathBuf>,
    mu: &Option<std::path::PathBuf>,
    zeta0: &Option<String>,
    h: f64,
) -> Result<EllipticModel, Error> {
    match space {
        None => build_elliptic(reduction.into(), log_abs_j, h),
        Some(path) => {
            let sp = load_space(path)?;
            let z0 = pick_zeta0(&sp, zeta0)?;
            let measure = match mu {
                Some(mp) => load_measure(&sp, mp)?,
                None => SignedMeasure::dirac(z0),
            };
            build_elliptic_on(reduction.into(), log_abs_j, sp, measure, z0, h)
        }
    }
}

fn resolve_model_points(
    model: &EllipticModel,
    pf: &io::PointsFile,
) -> Result<Vec<SpacePoint>, Error> {
    pf.points
        .iter()
        .map(|spec| match spec {
            io::PointSpec::Circle { circle } => model.circle_point(*circle),
            other => io::resolve_point(&model.space, other),
        })
        .collect()
}

fn print_equilibrium(format: Format, space: &MetricSpace, res: &minimize::EquilibriumResult) {
    let support: Vec<(String, f64)> = res
        .minimizer
        .atoms
        .iter()
        .filter(|(_, w)| *w > 1e-9)
        .map(|&(p, w)| (space.describe_point(p), w))
        .collect();
    match format {
        Format::Text => {
            println!("value {}", fmt(res.value));
            println!("robin_constant {}", fmt(res.robin_constant));
            println!("capacity {}", fmt(res.capacity));
            println!("frostman_deviation {}", fmt(res.frostman_deviation));
            println!("iterations {}", res.iterations);
            println!("converged {}", res.converged);
            println!("support_size {}", support.len());
            for (p, w) in &support {
                println!("atom {p} {}", fmt(*w));
            }
        }
        Format::Json => {
            let atoms: Vec<serde_json::Value> = support
                .iter()
                .map(|(p, w)| json!({ "point": p, "weight": sig(*w) }))
                .collect();
            println!(
                "{}",
                json!({
                    "value": sig(res.value),
                    "robin_constant": sig(res.robin_constant),
                    "capacity": sig(res.capacity),
                    "frostman_deviation": sig(res.frostman_deviation),
                    "iterations": res.iterations,
                    "converged": res.converged,
                    "support": atoms,
                })
            );
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::env::var("BERKGREEN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .or(cli.threads);
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::NonConvergence(msg)) => {
            eprintln!("error: solver did not converge: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
