use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eot_coloc::*;
use ndarray::Array2;

/// Entropic optimal transport colocalization curves and bootstrap bands.
#[derive(Parser, Debug)]
#[command(name = "eot-coloc", version)]
struct Cli {
    /// Worker threads for bootstrap replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of `key = value` lines supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the entropic problem and write the potentials and objectives.
    Solve {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        solver: SolverArgs,
        /// JSON output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dense plan as headerless CSV.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Write the colocalization curve `t,phi`.
    Curve {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrap confidence band around the colocalization curve.
    Band {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Band JSON (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// `t,phi,lower,upper` CSV; defaults to `--out` with a `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Replicate sup-deviations as a `sup_dev` column.
        #[arg(long)]
        sups_out: Option<PathBuf>,
    },
    /// Sample one of the simulation scenarios.
    Simulate {
        /// `i` (planar Gaussians) or `ii` (von Mises-Fisher on the sphere).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, env = "EOT_COLOC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_src: PathBuf,
        #[arg(long)]
        out_tgt: PathBuf,
    },
    /// Fraction of subsampled bands that contain a reference curve.
    Coverage {
        /// Reference curve CSV with columns `t,phi`; its thresholds are the grid.
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[arg(long)]
        repetitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Matched quantiles of two `sup_dev` samples.
    Qq {
        #[arg(long)]
        boot: PathBuf,
        #[arg(long)]
        mc: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Inputs {
    /// Source measure: point CSV with header `x1,..,xd[,weight]`, or a
    /// headerless intensity matrix.
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Physical size of one pixel for intensity-matrix inputs.
    #[arg(long, default_value_t = 1.0)]
    pitch: f64,
    /// `auto`, `euclidean`, `sphere`, or `matrix:<path>` (headerless CSV).
    #[arg(long, default_value = "auto")]
    cost: String,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long)]
    lambda: f64,
    /// L1 tolerance on the marginals.
    #[arg(long, default_value_t = SolverConfig::DEFAULT_MARGINAL_TOL)]
    tol: f64,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Iterate on scalings instead of log-potentials.
    #[arg(long)]
    scaling_domain: bool,
    /// Truncated kernel with absorption, for small `lambda`.
    #[arg(long)]
    truncate: bool,
    /// Geometric factor for the regularization schedule, or `off`.
    #[arg(long, default_value = "0.5")]
    eps_scaling: String,
    /// First level of the regularization schedule (default: largest cost).
    #[arg(long)]
    eps_start: Option<f64>,
    /// Over-relaxation factor in (0, 2), used with `--truncate`.
    #[arg(long, default_value_t = 1.0)]
    relaxation: f64,
}

#[derive(Args, Debug)]
struct BootArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    /// Draw this many points from each input (by weight) before banding.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, env = "EOT_COLOC_SEED", default_value_t = 0)]
    seed: u64,
    /// Solve replicates from scratch instead of from the center potentials.
    #[arg(long)]
    no_warm_start: bool,
}

const BOOL_FLAGS: &[&str] = &["scaling-domain", "truncate", "no-warm-start"];

/// Appends `--key value` for every config entry whose flag is absent from
/// the command line, so explicit flags win.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (k, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(k + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let mut out = args;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{path}: line {}: expected `key = value`", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let flag = format!("--{key}");
        let given = strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given || key == "config" {
            continue;
        }
        if BOOL_FLAGS.contains(&key.as_str()) {
            match value {
                "true" => out.push(flag.into()),
                "false" => {}
                _ => bail!("{path}: line {}: `{key}` takes true or false", n + 1),
            }
        } else {
            out.push(flag.into());
            out.push(value.into());
        }
    }
    Ok(out)
}

fn looks_like_matrix(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .all(|s| s.parse::<f64>().is_ok())
        })
        .unwrap_or(false)
}

enum Input {
    Points(Measure),
    Grid(GridMeasure),
}

impl Input {
    fn load(path: &Path, pitch: f64) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let origin = path.display().to_string();
        Ok(if looks_like_matrix(&text) {
            Input::Grid(parse_grid(&text, pitch, &origin)?)
        } else {
            Input::Points(read_measure(text.as_bytes(), &origin)?)
        })
    }

    fn measure(&self) -> Measure {
        match self {
            Input::Points(m) => m.clone(),
            Input::Grid(g) => to_measure(g),
        }
    }

    fn subsample(&self, n: usize, rng: &mut RngStream) -> Result<Measure> {
        Ok(match self {
            Input::Points(m) => resample(m, n, rng)?,
            Input::Grid(g) => subsample_grid(g, n, rng)?,
        })
    }
}

fn on_sphere(m: &Measure) -> bool {
    m.dim() == 3
        && m.points()
            .rows()
            .into_iter()
            .all(|r| (r.dot(&r).sqrt() - 1.0).abs() <= 1e-9)
}

fn read_matrix(path: &str) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let row = fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{path}: line {}", k + 1))?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            bail!("{path}: line {}: ragged row", k + 1);
        }
        rows.push(row);
    }
    let (m, n) = (rows.len(), rows.first().map_or(0, Vec::len));
    Ok(Array2::from_shape_vec((m, n), rows.concat())?)
}

fn cost_spec(name: &str, src: &Measure, tgt: &Measure) -> Result<CostSpec> {
    Ok(match name {
        "auto" if on_sphere(src) && on_sphere(tgt) => CostSpec::SphereGeodesic,
        "auto" | "euclidean" => CostSpec::Euclidean,
        "sphere" => CostSpec::SphereGeodesic,
        other => match other.strip_prefix("matrix:") {
            Some(path) => CostSpec::ExplicitMatrix(read_matrix(path)?),
            None => bail!("invalid parameter cost: unknown cost `{other}`"),
        },
    })
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let factor = match self.eps_scaling.as_str() {
            "off" | "none" => None,
            s => Some(s.parse::<f64>().context("invalid parameter eps_scaling")?),
        };
        let cfg = SolverConfig::new(self.lambda)
            .with_marginal_tol(self.tol)
            .with_max_iters(self.max_iters)
            .with_log_domain(!self.scaling_domain)
            .with_truncation(self.truncate)
            .with_eps_scaling(factor)
            .with_eps_start(self.eps_start)
            .with_relaxation(self.relaxation);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl BootArgs {
    fn config(&self) -> Result<BootstrapConfig> {
        let mut cfg = BootstrapConfig::new(self.replicates, self.alpha, self.seed);
        cfg.warm_start = !self.no_warm_start;
        if let Some(n) = self.subsample {
            cfg = cfg.with_resample_sizes(n, n);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<S: serde::Serialize>(value: &S, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Exit status 2 marks a run that stopped before reaching the tolerance.
struct NotConverged;

fn run(cli: Cli) -> Result<Option<NotConverged>> {
    match cli.command {
        Command::Solve { inputs, solver, out, plan } => {
            let cfg = solver.config()?;
            let src = Input::load(&inputs.src, inputs.pitch)?.measure();
            let tgt = Input::load(&inputs.tgt, inputs.pitch)?.measure();
            let cost = realize_cost(&src, &tgt, &cost_spec(&inputs.cost, &src, &tgt)?)?;
            let sol = solve_with(&src, &tgt, &cost, &cfg, None)?;
            write_json(&sol.summary(), out.as_deref())?;
            if let Some(p) = plan {
                sol.write_plan_csv(p)?;
            }
            Ok((!sol.converged).then_some(NotConverged))
        }
        Command::Curve { inputs, solver, resolution, out } => {
            let cfg = solver.config()?;
            let src = Input::load(&inputs.src, inputs.pitch)?.measure();
            let tgt = Input::load(&inputs.tgt, inputs.pitch)?.measure();
            let cost = realize_cost(&src, &tgt, &cost_spec(&inputs.cost, &src, &tgt)?)?;
            let sol = solve(&src, &tgt, &cost, &cfg)?;
            let curve = coloc_curve(&sol, &cost, &default_grid(&cost, resolution)?)?;
            match out {
                Some(p) => curve.write_csv_file(p)?,
                None => curve.write_csv(std::io::stdout().lock())?,
            }
            Ok(None)
        }
        Command::Band { inputs, solver, boot, resolution, out, csv, sups_out } => {
            let cfg = solver.config()?;
            let boot_cfg = boot.config()?;
            let (src_in, tgt_in) = (Input::load(&inputs.src, inputs.pitch)?, Input::load(&inputs.tgt, inputs.pitch)?);
            let (src, tgt) = match boot.subsample {
                Some(n) => {
                    // stream ids below `replicates` belong to the bootstrap
                    let mut rng = stream(boot.seed, u64::MAX);
                    (src_in.subsample(n, &mut rng)?, tgt_in.subsample(n, &mut rng)?)
                }
                None => (src_in.measure(), tgt_in.measure()),
            };
            let spec = cost_spec(&inputs.cost, &src, &tgt)?;
            let grid = default_grid(&realize_cost(&src, &tgt, &spec)?, resolution)?;
            let band = bootstrap_band(&src, &tgt, &spec, &cfg, &grid, &boot_cfg)?;
            write_json(&band.summary(), out.as_deref())?;
            if let Some(p) = csv.or_else(|| out.as_ref().map(|o| o.with_extension("csv"))) {
                band.write_csv_file(p)?;
            }
            if let Some(p) = sups_out {
                write_sups_csv(&band.replicate_sups, p)?;
            }
            Ok(None)
        }
        Command::Simulate { scenario, n, seed, out_src, out_tgt } => {
            let sc = Scenario::by_name(&scenario)
                .with_context(|| format!("invalid parameter scenario: unknown scenario `{scenario}`"))?;
            let (x, y) = sc.sample::<f64, _>(n, &mut seeded(seed))?;
            write_measure_csv(&x, out_src)?;
            write_measure_csv(&y, out_tgt)?;
            Ok(None)
        }
        Command::Coverage { truth, inputs, solver, boot, repetitions, out } => {
            let cfg = solver.config()?;
            let boot_cfg = boot.config()?;
            if repetitions == 0 {
                bail!("invalid parameter repetitions: must be at least 1");
            }
            let truth = ColocCurve::read_csv_file(&truth)?;
            let src = Input::load(&inputs.src, inputs.pitch)?.measure();
            let tgt = Input::load(&inputs.tgt, inputs.pitch)?.measure();
            let spec = cost_spec(&inputs.cost, &src, &tgt)?;
            let report = coverage_experiment(&truth, &src, &tgt, &spec, &cfg, &truth.grid, &boot_cfg, repetitions, boot.seed)?;
            write_json(&report, out.as_deref())?;
            Ok(None)
        }
        Command::Qq { boot, mc, out } => {
            let pairs = qq_data(&read_sups_csv(boot)?, &read_sups_csv(mc)?)?;
            let mut wtr: csv::Writer<Box<dyn std::io::Write>> = match out {
                Some(p) => csv::Writer::from_writer(Box::new(fs::File::create(p)?)),
                None => csv::Writer::from_writer(Box::new(std::io::stdout().lock())),
            };
            wtr.write_record(["q_boot", "q_mc"])?;
            for (a, b) in pairs {
                wtr.write_record([a.to_string(), b.to_string()])?;
            }
            wtr.flush()?;
            Ok(None)
        }
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            let mut e = e;
            while let Error::Replicate { source, .. } = e {
                e = source;
            }
            if matches!(e, Error::NotConverged { .. }) {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let args = match merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(NotConverged)) => {
            eprintln!("warning: solver stopped before reaching the marginal tolerance");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
