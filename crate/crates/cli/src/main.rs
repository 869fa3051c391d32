use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cvxgrid::constraints::{convexity_defect, dconv_counterexample, DefectMode};
use cvxgrid::grid::GridDomain;
use cvxgrid::lattice::v;
use cvxgrid::monopolist::{default_refine, solve_method, Method, MonopolistInstance, Thresholds};
use cvxgrid::refine::{Algorithm, ConeFamily, RefineSettings};
use cvxgrid_cli::experiments::{self, fit_growth, summarize};
use cvxgrid_cli::export::{num, opt, write_heatmap, write_scatter, Csv};
use cvxgrid_cli::functions::FunctionKind;

#[derive(Parser)]
#[command(
    name = "cvxgrid",
    version,
    about = "Adaptive convexity constraints on Cartesian grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a monopolist instance and export values, trace, report and heatmaps.
    Solve(SolveArgs),
    /// Monte Carlo statistics of minimal stencil cardinality on random discs.
    StencilStats(StatsArgs),
    /// Flip counts from the standard Delaunay triangulation to a u-Delaunay one.
    FlipExperiment(FlipArgs),
    /// Constraint counts, defects and profits across methods and resolutions.
    Compare(CompareArgs),
    /// Full and directional convexity defects of a value file, in lattice units.
    Defect(DefectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Classical,
    Bundles,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConeArg {
    Conv,
    Dconv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Q,
    Spike,
    Counterexample,
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance JSON file; overrides --preset.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "classical")]
    preset: Preset,
    /// Rotation of the classical instance's support.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
}

impl InstanceArgs {
    fn load(&self) -> Result<MonopolistInstance> {
        if let Some(path) = &self.instance {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return MonopolistInstance::from_json(&text).with_context(|| format!("parsing {}", path.display()));
        }
        Ok(match self.preset {
            Preset::Classical => MonopolistInstance::classical(self.theta),
            Preset::Bundles => MonopolistInstance::bundles(),
        })
    }
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long, default_value_t = 1.5)]
    rho: f64,
    /// 1: sub-cones, 2: super-cones.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    algorithm: u8,
    #[arg(long, value_enum, default_value = "conv")]
    cone: ConeArg,
}

impl RefineArgs {
    fn settings(&self) -> RefineSettings {
        let cone = match self.cone {
            ConeArg::Conv => ConeFamily::Conv,
            ConeArg::Dconv => ConeFamily::DConv,
        };
        RefineSettings {
            algorithm: if self.algorithm == 1 {
                Algorithm::SubCones
            } else {
                Algorithm::SuperCones
            },
            rho: self.rho,
            ..default_refine(cone)
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    refine: RefineArgs,
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// clrm, ofK, adaptive-conv or adaptive-dconv. Defaults to the adaptive loop over --cone.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// q, quadratic, max-affine or ridge.
    #[arg(long, default_value = "q")]
    function: FunctionKind,
    /// Disc radii in grid units.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FlipArgs {
    #[arg(long, default_value = "quadratic")]
    function: FunctionKind,
    /// Square side lengths in grid units.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
    sides: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    refine: RefineArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
    n: Vec<usize>,
    #[arg(
        long = "method",
        value_delimiter = ',',
        default_value = "adaptive-conv,adaptive-dconv,clrm,of2,of3"
    )]
    methods: Vec<Method>,
    /// Larger full-cone systems are counted but not solved.
    #[arg(long, default_value_t = 20)]
    clrm_solve_max: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DefectArgs {
    /// Values in grid point order, as a JSON array or whitespace/comma separated numbers.
    #[arg(long, conflicts_with = "builtin")]
    values: Option<PathBuf>,
    /// Integer rectangle `WxH` holding the values.
    #[arg(long)]
    lattice: Option<String>,
    /// Use the grid of an instance at resolution --n instead of --lattice.
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    n: Option<usize>,
    /// Built-in function on the centered square of side --size.
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    #[arg(long, default_value_t = 9)]
    size: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::StencilStats(a) => cmd_stencil_stats(&a),
        Command::FlipExperiment(a) => cmd_flip(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Defect(a) => cmd_defect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let instance = a.instance.load()?;
    let grid = instance.grid(a.n)?;
    let settings = a.refine.settings();
    let method = a.method.unwrap_or(match settings.cone {
        ConeFamily::Conv => Method::AdaptiveConv,
        ConeFamily::DConv => Method::AdaptiveDConv,
    });
    let result = solve_method(&instance, &grid, method, &settings)?;
    out_dir(&a.out)?;

    let mut values = Csv::new(None, &["index", "a", "b", "x", "y", "u"]);
    for (i, &u) in result.values.iter().enumerate() {
        let z = grid.point(i);
        let p = grid.embed(i);
        values.row(&[
            i.to_string(),
            z.a.to_string(),
            z.b.to_string(),
            num(p[0]),
            num(p[1]),
            num(u),
        ]);
    }
    values.write(&a.out.join("values.csv"))?;
    if let Some(run) = &result.run {
        fs::write(a.out.join("trace.csv"), run.trace_csv(None))?;
        fs::write(a.out.join("stencils.json"), run.stencils.to_json(&grid).to_string())?;
    }

    let report = instance.economic_report(&grid, &result.values, &Thresholds::default())?;
    let mut json = report.to_json();
    json["method"] = serde_json::json!(method.to_string());
    json["n"] = serde_json::json!(a.n);
    json["objective"] = serde_json::json!(result.objective);
    json["constraints"] = serde_json::json!(result.constraint_count);
    json["refinement_steps"] = serde_json::json!(result.refinement_steps);
    json["full_defect"] = serde_json::json!(convexity_defect(&grid, &result.values, DefectMode::Full));
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&json)?)?;

    let env: Vec<Option<f64>> = report.envelope.iter().map(|&x| Some(x)).collect();
    write_heatmap(&a.out, "heatmap_u", &grid, &env, "U")?;
    write_heatmap(&a.out, "heatmap_det", &grid, &report.det, "det")?;
    let masks: Vec<Option<f64>> = report
        .exclusion
        .iter()
        .zip(&report.bunching)
        .map(|(&ex, &bu)| {
            Some(if ex {
                0.0
            } else if bu {
                1.0
            } else {
                2.0
            })
        })
        .collect();
    write_heatmap(
        &a.out,
        "heatmap_regions",
        &grid,
        &masks,
        "0 excluded, 1 bunching, 2 screened",
    )?;

    println!(
        "method={method} n={} points={} constraints={} steps={} objective={:.10} profit={:.6}",
        a.n,
        grid.len(),
        result.constraint_count,
        result.refinement_steps,
        result.objective,
        report.profit.value
    );
    Ok(())
}

fn cmd_stencil_stats(a: &StatsArgs) -> Result<()> {
    out_dir(&a.out)?;
    let samples = experiments::stencil_stats(a.function, &a.radii, a.samples, a.seed)?;
    let mut csv = Csv::new(
        Some(a.seed),
        &[
            "radius",
            "sample",
            "points",
            "cardinality",
            "worst_case_bound",
            "delaunay_cardinality",
            "max_stencil",
        ],
    );
    for s in &samples {
        csv.row(&[
            num(s.radius),
            s.sample.to_string(),
            s.points.to_string(),
            s.cardinality.to_string(),
            num(s.worst_case_bound),
            s.delaunay_cardinality.to_string(),
            s.max_stencil.to_string(),
        ]);
    }
    csv.write(&a.out.join("stencil_samples.csv"))?;

    let summary = summarize(&samples);
    let mut sum = Csv::new(
        Some(a.seed),
        &[
            "radius",
            "samples",
            "mean_points",
            "mean_cardinality",
            "std_cardinality",
            "mean_ratio",
        ],
    );
    for r in &summary {
        sum.row(&[
            num(r.radius),
            r.samples.to_string(),
            num(r.mean_points),
            num(r.mean_cardinality),
            num(r.std_cardinality),
            num(r.mean_ratio),
        ]);
    }
    sum.write(&a.out.join("stencil_summary.csv"))?;
    if samples.is_empty() {
        println!("no samples");
        return Ok(());
    }
    let pts: Vec<(f64, f64)> = summary.iter().map(|r| (r.mean_points, r.mean_cardinality)).collect();
    write_scatter(&a.out, "stencil_growth", &pts, "N", "mean_cardinality")?;
    let violations = samples.iter().filter(|s| !s.within_bounds()).count();
    for r in &summary {
        println!(
            "radius={} N={:.1} mean#V={:.1} std={:.1} #V/N={:.3}",
            r.radius, r.mean_points, r.mean_cardinality, r.std_cardinality, r.mean_ratio
        );
    }
    if let Some(fit) = fit_growth(&summary) {
        println!(
            "exponent={:.4} C(N ln^2 N)={:.4e} R2={:.4}",
            fit.exponent, fit.c_ln2, fit.r2_ln2
        );
        fs::write(a.out.join("stencil_fit.json"), serde_json::to_string_pretty(&fit)?)?;
    }
    println!("bound violations={violations}");
    Ok(())
}

fn cmd_flip(a: &FlipArgs) -> Result<()> {
    out_dir(&a.out)?;
    let samples = experiments::flip_experiment(a.function, &a.sides, a.samples, a.seed)?;
    let mut csv = Csv::new(
        Some(a.seed),
        &["side", "sample", "points", "flips", "minimal_cardinality", "bound"],
    );
    for s in &samples {
        csv.row(&[
            s.side.to_string(),
            s.sample.to_string(),
            s.points.to_string(),
            s.flips.to_string(),
            s.minimal_cardinality.to_string(),
            s.bound.to_string(),
        ]);
    }
    csv.write(&a.out.join("flips.csv"))?;
    let mut trend = Csv::new(Some(a.seed), &["side", "mean_points", "mean_flips_per_point", "ln2_n"]);
    for &side in &a.sides {
        let group: Vec<_> = samples.iter().filter(|s| s.side == side).collect();
        if group.is_empty() {
            continue;
        }
        let m = group.len() as f64;
        let n = group.iter().map(|s| s.points as f64).sum::<f64>() / m;
        let ratio = group.iter().map(|s| s.flips as f64 / s.points as f64).sum::<f64>() / m;
        trend.row(&[side.to_string(), num(n), num(ratio), num(n.ln().powi(2))]);
        println!("side={side} N={n:.1} flips/N={ratio:.4} ln^2N={:.2}", n.ln().powi(2));
    }
    trend.write(&a.out.join("flip_trend.csv"))?;
    let violations = samples.iter().filter(|s| !s.within_bound()).count();
    println!("samples={} bound violations={violations}", samples.len());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    out_dir(&a.out)?;
    let instance = a.instance.load()?;
    let rows = experiments::compare(&instance, &a.n, &a.methods, &a.refine.settings(), a.clrm_solve_max)?;
    let mut csv = Csv::new(
        None,
        &[
            "n",
            "method",
            "points",
            "constraints",
            "objective",
            "profit",
            "full_defect",
            "directional_defect",
            "refinement_steps",
        ],
    );
    // wall time lives in its own file so the main table is reproducible byte for byte
    let mut times = Csv::new(None, &["n", "method", "seconds"]);
    for r in &rows {
        csv.row(&[
            r.n.to_string(),
            r.method.clone(),
            r.points.to_string(),
            r.constraints.to_string(),
            opt(r.objective.map(num)),
            opt(r.profit.map(num)),
            opt(r.full_defect.map(num)),
            opt(r.directional_defect.map(num)),
            opt(r.refinement_steps),
        ]);
        times.row(&[
            r.n.to_string(),
            r.method.clone(),
            opt(r.seconds.map(|s| format!("{s:.3}"))),
        ]);
        println!(
            "n={:>3} {:<15} constraints={:>9} profit={} defect={} ddefect={} steps={}",
            r.n,
            r.method,
            r.constraints,
            opt(r.profit.map(|p| format!("{p:.6}"))),
            opt(r.full_defect.map(|d| format!("{d:.2e}"))),
            opt(r.directional_defect.map(|d| format!("{d:.2e}"))),
            opt(r.refinement_steps),
        );
    }
    csv.write(&a.out.join("compare.csv"))?;
    times.write(&a.out.join("compare_timings.csv"))?;
    Ok(())
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    if let Ok(v) = serde_json::from_str::<Vec<f64>>(text) {
        return Ok(v);
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad number {t:?}")))
        .collect()
}

fn centered_square(size: usize) -> Result<GridDomain> {
    if size < 2 {
        bail!("--size must be at least 2");
    }
    let lo = -((size as i64 - 1) / 2);
    let pts = (lo..lo + size as i64)
        .flat_map(|a| (lo..lo + size as i64).map(move |b| v(a, b)))
        .collect();
    Ok(GridDomain::from_lattice_points(pts)?)
}

fn cmd_defect(a: &DefectArgs) -> Result<()> {
    let (grid, values) = if let Some(b) = a.builtin {
        let grid = centered_square(a.size)?;
        let center = grid.index_of(v(0, 0)).expect("centered square holds the origin");
        let values = match b {
            Builtin::Q => grid.q_values(),
            Builtin::Spike => (0..grid.len()).map(|i| if i == center { 1.0 } else { 0.0 }).collect(),
            Builtin::Counterexample => grid.sample_lattice(dconv_counterexample),
        };
        (grid, values)
    } else {
        let Some(path) = &a.values else {
            bail!("pass --values or --builtin")
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let values = parse_values(&text)?;
        let grid = match (&a.lattice, a.n) {
            (Some(spec), _) => {
                let (w, h) = spec
                    .split_once(['x', 'X'])
                    .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
                    .with_context(|| format!("--lattice expects WxH, got {spec:?}"))?;
                GridDomain::lattice_rect(w, h)?
            }
            (None, Some(n)) => a.instance.load()?.grid(n)?,
            (None, None) => bail!("pass --lattice WxH or --n with an instance"),
        };
        if values.len() != grid.len() {
            bail!("{} values for a grid of {} points", values.len(), grid.len());
        }
        (grid, values)
    };
    let full = convexity_defect(&grid, &values, DefectMode::Full);
    let dir = convexity_defect(&grid, &values, DefectMode::Directional);
    println!("{full} {dir}");
    Ok(())
}
