//! Command-line front end for `rieszlab`.
//!
//! Set files are JSON of the form
//!
//! ```json
//! {"dim": 1, "parts": [{"type": "interval", "a": -1, "b": 1}]}
//! ```
//!
//! with part types `interval`, `ball`, `sphere`, `ellipsoid` (set
//! `"surface": true` for the boundary) and `annulus`; the full schema is
//! `docs/set.schema.json`. Campaign files are
//! described in `docs/campaign.schema.json`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rieszlab::closedform::BallCase;
use rieszlab::equilibrium::EquilibriumResult;
use rieszlab::geometry::Cell;
use rieszlab::moments::{assign_verdicts, compare_single, BallReference, Expected};
use rieszlab::startransform::{jgrid_scan, lifted_kernel, LiftedPotential};
use rieszlab::verify::{solve_set, solved_unit_ball};
use rieszlab::{
    build_mesh, run_campaign, solve_equilibrium, CampaignReport, CampaignSpec, Error, Grading, KernelParam,
    KernelSpec, MomentComparison, MomentOrder, SetSpec, SolverMethod, SolverOptions, Theorem, Verdict,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VIOLATED: i32 = 3;

pub const CSV_HEADER: [&str; 12] = [
    "set_id",
    "n",
    "p",
    "q",
    "resolution",
    "capacity_K",
    "matched_radius",
    "moment_K",
    "moment_ball",
    "gap",
    "error_estimate",
    "verdict",
];

#[derive(Debug, Parser)]
#[command(name = "rieszlab", version, about = "Equilibrium measures, capacities and moment comparisons")]
pub struct Cli {
    /// Worker threads (falls back to RIESZLAB_THREADS, then all cores).
    #[arg(long, global = true, env = "RIESZLAB_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium measure of a set.
    Equilibrium(SolveArgs),
    /// Print the capacity of a set.
    Capacity(CapacityArgs),
    /// Compare moments of a set with the capacity-matched ball.
    Moments(MomentArgs),
    /// Scan J(v - u) against the matched ball on an (r, z) grid.
    Jscan(JscanArgs),
    /// Run a verification campaign.
    Verify(CampaignArgs),
    /// Run a campaign once per kernel exponent.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelChoice {
    Log,
    Riesz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    ActiveSet,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradingChoice {
    Uniform,
    EndpointRefined,
}

#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    #[arg(long, value_enum)]
    pub solver: Option<SolverChoice>,
    /// KKT residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

impl SolverFlags {
    fn apply(&self, mut opts: SolverOptions) -> SolverOptions {
        if let Some(s) = self.solver {
            opts.method = match s {
                SolverChoice::ActiveSet => SolverMethod::ActiveSet,
                SolverChoice::Pgd => SolverMethod::ProjectedGradient,
            };
        }
        if let Some(t) = self.tol {
            opts.tol = t;
        }
        if let Some(m) = self.max_iter {
            opts.max_iter = m;
        }
        opts
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Set description (JSON).
    #[arg(long)]
    pub set: PathBuf,
    #[arg(long, value_enum, default_value = "riesz")]
    pub kernel: KernelChoice,
    /// Riesz exponent.
    #[arg(long)]
    pub p: Option<f64>,
    /// Approximate number of atoms.
    #[arg(long, default_value_t = 1000)]
    pub n_points: usize,
    #[arg(long, value_enum, default_value = "endpoint-refined")]
    pub grading: GradingChoice,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Output file (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Monte-Carlo samples for checking the largest cell's self-energy.
    #[arg(long)]
    pub calibrate: Option<usize>,
    /// Seed for the Monte-Carlo check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct MomentArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Moment order, a number or `log`; repeat for several.
    #[arg(long, required = true, value_parser = parse_order)]
    pub q: Vec<MomentOrder>,
}

#[derive(Debug, Clone, Args)]
pub struct JscanArgs {
    /// Set in R^1 or R^2 (JSON).
    #[arg(long)]
    pub set: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n_points: usize,
    #[arg(long, value_enum, default_value = "endpoint-refined")]
    pub grading: GradingChoice,
    #[arg(long, default_value_t = 6.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 4.0)]
    pub z_max: f64,
    #[arg(long, default_value_t = 60)]
    pub nr: usize,
    #[arg(long, default_value_t = 40)]
    pub nz: usize,
    #[arg(long, default_value_t = 64)]
    pub quad_nodes: usize,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Output file for the grid (CSV with columns r, z, J).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CampaignArgs {
    /// Campaign description (JSON).
    #[arg(long)]
    pub campaign: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// Kernel exponents (`log` allowed), comma separated; defaults to the
    /// campaign's own.
    #[arg(long, value_delimiter = ',', value_parser = parse_param)]
    pub p: Vec<KernelParam>,
}

fn parse_order(s: &str) -> Result<MomentOrder, String> {
    MomentOrder::parse(s).map_err(|e| e.to_string())
}

fn parse_param(s: &str) -> Result<KernelParam, String> {
    KernelParam::parse(s).map_err(|e| e.to_string())
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            kind: "runtime",
            message: message.into(),
        }
    }

    /// One line: `rieszlab: error kind=<kind> code=<code>: <message>`.
    pub fn diagnostic(&self) -> String {
        let msg: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("rieszlab: error kind={} code={}: {msg}", self.kind, self.code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSet(_)
            | Error::InvalidMesh(_)
            | Error::InvalidKernel(_)
            | Error::NonIntegrableKernel { .. }
            | Error::Unsupported(_)
            | Error::InvalidArgument(_)
            | Error::Config(_) => Failure::config(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::runtime(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::runtime(format!("csv: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the CLI on `argv` and returns the exit code. Normal output goes to
/// `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            let _ = writeln!(err, "{}", Failure::config(first.trim_start_matches("error: ")).diagnostic());
            return EXIT_CONFIG;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "{}", f.diagnostic());
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::config("--threads must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Equilibrium(a) => cmd_equilibrium(a, out),
        Command::Capacity(a) => cmd_capacity(a, out),
        Command::Moments(a) => cmd_moments(a, out),
        Command::Jscan(a) => cmd_jscan(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
    }
}

fn read_set(path: &Path) -> CliResult<SetSpec> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok(SetSpec::from_json(&text)?)
}

fn read_campaign(path: &Path) -> CliResult<CampaignSpec> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok(CampaignSpec::from_json(&text)?)
}

fn grading(g: GradingChoice) -> Grading {
    match g {
        GradingChoice::Uniform => Grading::Uniform,
        GradingChoice::EndpointRefined => Grading::EndpointRefined,
    }
}

fn kernel_for(a: &SolveArgs, dim: usize) -> CliResult<KernelSpec> {
    match (a.kernel, a.p) {
        (KernelChoice::Log, None) => Ok(KernelSpec::log(dim)),
        (KernelChoice::Log, Some(_)) => Err(Failure::config("--p does not apply to the log kernel")),
        (KernelChoice::Riesz, Some(p)) => Ok(KernelSpec::riesz(p, dim)?),
        (KernelChoice::Riesz, None) => Err(Failure::config("the riesz kernel needs --p")),
    }
}

fn solve_args(a: &SolveArgs) -> CliResult<(SetSpec, KernelSpec, EquilibriumResult)> {
    let set = read_set(&a.set)?;
    let kernel = kernel_for(a, set.dim)?;
    let opts = a.solver.apply(SolverOptions::default());
    let mesh = Arc::new(build_mesh(&set, a.n_points, grading(a.grading))?);
    let m = rieszlab::kernel_matrix(kernel, mesh)?;
    let r = solve_equilibrium(&m, &opts)?;
    Ok((set, kernel, r))
}

/// Shortest decimal with 17 significant digits that parses back exactly.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_order(q: MomentOrder) -> String {
    match q {
        MomentOrder::Power(q) => fmt_float(q),
        MomentOrder::Log => "log".into(),
    }
}

fn fmt_param(p: KernelParam) -> String {
    match p {
        KernelParam::Exponent(p) => fmt_float(p),
        KernelParam::Log => "log".into(),
    }
}

fn summary_lines(r: &EquilibriumResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "atoms        {}", r.measure.len());
    let _ = writeln!(s, "energy       {:.10}", r.energy);
    let _ = writeln!(s, "capacity     {:.10}", r.capacity);
    let _ = writeln!(s, "kkt_residual {:.3e}", r.kkt_residual);
    let _ = writeln!(s, "support      {:.4}", r.active_support_fraction);
    let _ = writeln!(s, "iterations   {} ({:?})", r.iterations, r.method);
    s
}

fn cmd_equilibrium(a: &SolveArgs, out: &mut dyn Write) -> CliResult<i32> {
    let (_, _, r) = solve_args(a)?;
    write!(out, "{}", summary_lines(&r))?;
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "z", "weight", "potential"])?;
        for (i, p) in r.measure.atoms().iter().enumerate() {
            w.write_record([
                fmt_float(p[0]),
                fmt_float(p[1]),
                fmt_float(p[2]),
                fmt_float(r.measure.w[i]),
                fmt_float(r.atom_potential[i]),
            ])?;
        }
        w.flush()?;
    }
    Ok(EXIT_OK)
}

/// Mean of the kernel over two independent uniform points of a cell.
pub fn monte_carlo_self_energy(kernel: &KernelSpec, cell: &Cell, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..samples {
        let mut d2 = 0.0;
        for k in 0..cell.dim {
            let t = cell.widths[k] * (rng.random::<f64>() - rng.random::<f64>());
            d2 += t * t;
        }
        let v = kernel.at_distance(d2.sqrt());
        sum += v;
        sum2 += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

fn cmd_capacity(a: &CapacityArgs, out: &mut dyn Write) -> CliResult<i32> {
    let (_, kernel, r) = solve_args(&a.solve)?;
    writeln!(out, "capacity {:.10}", r.capacity)?;
    writeln!(out, "energy   {:.10}", r.energy)?;
    if let Some(samples) = a.calibrate {
        if samples == 0 {
            return Err(Failure::config("--calibrate needs at least one sample"));
        }
        let mesh = &r.measure.mesh;
        let (i, cell) = mesh
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_point())
            .max_by(|x, y| x.1.equivalent_radius().total_cmp(&y.1.equivalent_radius()))
            .ok_or_else(|| Failure::runtime("mesh has no cells"))?;
        let (mc, se) = monte_carlo_self_energy(&kernel, cell, samples, a.seed);
        writeln!(
            out,
            "self_energy cell {i}: quadrature {:.8} monte_carlo {:.8} +- {:.1e}",
            r.self_energy[i], mc, se
        )?;
    }
    if let Some(path) = &a.solve.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["atoms", "energy", "capacity", "kkt_residual"])?;
        w.write_record([
            r.measure.len().to_string(),
            fmt_float(r.energy),
            fmt_float(r.capacity),
            fmt_float(r.kkt_residual),
        ])?;
        w.flush()?;
    }
    Ok(EXIT_OK)
}

fn set_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "set".into())
}

/// A CSV row of the campaign layout.
pub fn csv_row(set_id: &str, n: usize, p: &str, c: &MomentComparison) -> [String; 12] {
    [
        set_id.to_string(),
        n.to_string(),
        p.to_string(),
        fmt_order(c.q),
        c.resolution.to_string(),
        fmt_float(c.capacity_k),
        fmt_float(c.matched_radius),
        fmt_float(c.moment_k),
        fmt_float(c.moment_ball),
        fmt_float(c.gap),
        fmt_float(c.error_estimate),
        c.verdict.to_string(),
    ]
}

/// Moments at `n_points / 2` and `n_points`, so each row has an error
/// estimate.
fn cmd_moments(a: &MomentArgs, out: &mut dyn Write) -> CliResult<i32> {
    let s = &a.solve;
    let set = read_set(&s.set)?;
    let kernel = kernel_for(s, set.dim)?;
    let opts = s.solver.apply(SolverOptions::default());
    let n = set.dim;
    let coarse = (s.n_points / 2).max(2);
    let levels = [coarse, s.n_points.max(coarse + 1)];
    let g = grading(s.grading);
    let results = levels
        .iter()
        .map(|&res| solve_set(&set, kernel, res, g, &opts))
        .collect::<rieszlab::Result<Vec<_>>>()?;
    let references = match BallCase::for_kernel(n, &kernel) {
        Ok(case) => vec![BallReference::closed(n, case); 2],
        Err(_) => levels
            .iter()
            .map(|&res| {
                solved_unit_ball(kernel, n, res, g, &opts).map(|unit| BallReference::Solved { n, unit })
            })
            .collect::<rieszlab::Result<Vec<_>>>()?,
    };
    let p = if kernel.is_log() { "log".to_string() } else { fmt_float(kernel.exponent()) };
    let id = set_id(&s.set);
    let mut rows = Vec::new();
    for &q in &a.q {
        let mut recs = results
            .iter()
            .zip(&references)
            .map(|(r, b)| compare_single(r, b, q, Expected::AtLeast))
            .collect::<rieszlab::Result<Vec<_>>>()?;
        for (rec, res) in recs.iter_mut().zip(levels) {
            rec.resolution = res;
        }
        assign_verdicts(&mut recs);
        rows.extend(recs);
    }
    write_table(out, rows.iter().map(|c| (id.as_str(), c)))?;
    if let Some(path) = &s.out {
        let f = fs::File::create(path)?;
        write_csv(f, rows.iter().map(|c| csv_row(&id, n, &p, c)))?;
    }
    Ok(EXIT_OK)
}

fn cmd_jscan(a: &JscanArgs, out: &mut dyn Write) -> CliResult<i32> {
    let set = read_set(&a.set)?;
    let n = set.dim;
    if n > 2 {
        return Err(Failure::config(format!("jscan supports sets in R^1 and R^2, got R^{n}")));
    }
    let kernel = lifted_kernel(n)?;
    let opts = a.solver.apply(SolverOptions::default());
    let g = grading(a.grading);
    let k = Arc::new(solve_set(&set, kernel, a.n_points, g, &opts)?);
    let ball = solved_unit_ball(kernel, n, a.n_points, g, &opts)?;
    let radius = k.capacity / ball.capacity;
    let u = LiftedPotential::new(k.clone())?;
    let v = LiftedPotential::scaled(ball, radius)?;
    let grid = jgrid_scan(&v, &u, a.r_max, a.z_max, a.nr, a.nz, a.quad_nodes)?;
    writeln!(out, "capacity       {:.10}", k.capacity)?;
    writeln!(out, "matched_radius {:.10}", radius)?;
    writeln!(
        out,
        "min J(v - u)   {:.6e} at r = {:.4}, z = {:.4}",
        grid.min_value, grid.min_location.0, grid.min_location.1
    )?;
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "z", "J"])?;
        for (i, r) in grid.r_nodes.iter().enumerate() {
            for (j, z) in grid.z_nodes.iter().enumerate() {
                w.write_record([fmt_float(*r), fmt_float(*z), fmt_float(grid.values[i][j])])?;
            }
        }
        w.flush()?;
    }
    Ok(EXIT_OK)
}

fn load_campaign(a: &CampaignArgs) -> CliResult<CampaignSpec> {
    let mut spec = read_campaign(&a.campaign)?;
    spec.solver = a.solver.apply(spec.solver);
    spec.validate()?;
    Ok(spec)
}

fn finish_campaigns(reports: &[CampaignReport], a: &CampaignArgs, out: &mut dyn Write) -> CliResult<i32> {
    for r in reports {
        writeln!(
            out,
            "{} n={} p={}: {} ({:.1} s)",
            r.theorem,
            r.n,
            r.p,
            r.aggregate,
            r.wall_seconds
        )?;
        for s in &r.sets {
            if let Some(f) = &s.failure {
                writeln!(out, "  {}: failed: {f}", s.id)?;
            }
            if let Some(j) = &s.jgrid {
                writeln!(
                    out,
                    "  {}: min J(v - u) = {:.3e}, error {:.1e}: {}",
                    s.id,
                    j.min_values.last().copied().unwrap_or(f64::NAN),
                    j.error_estimate,
                    j.verdict
                )?;
            }
            if let Some(d) = &s.moment_dual {
                writeln!(
                    out,
                    "  {}: q=2 direct {:.8} via J {:.8} relative discrepancy {:.1e}",
                    s.id, d.direct, d.via_j, d.rel_discrepancy
                )?;
            }
            if let Some(t) = &s.threshold {
                writeln!(
                    out,
                    "  {}: first holding q {:?}, persistent {}",
                    s.id, t.first_holding_q, t.persistent
                )?;
            }
        }
        write_table(out, r.records().map(|(s, c)| (s.id.as_str(), c)))?;
    }
    if let Some(path) = &a.out {
        emit_csv_many(reports, path)?;
    }
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(reports).map_err(|e| Failure::runtime(e.to_string()))?;
        fs::write(path, text)?;
    }
    Ok(exit_code(reports))
}

/// `EXIT_VIOLATED` if any campaign's aggregate verdict is violated.
pub fn exit_code(reports: &[CampaignReport]) -> i32 {
    if reports.iter().any(|r| r.aggregate == Verdict::Violated) {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    }
}

fn cmd_verify(a: &CampaignArgs, out: &mut dyn Write) -> CliResult<i32> {
    let spec = load_campaign(a)?;
    let report = run_campaign(&spec)?;
    finish_campaigns(std::slice::from_ref(&report), a, out)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CliResult<i32> {
    let base = load_campaign(&a.campaign)?;
    if base.theorem != Theorem::C3Sweep && !a.p.is_empty() {
        return Err(Failure::config("--p lists only apply to c3_sweep campaigns"));
    }
    let params = if a.p.is_empty() { vec![base.p] } else { a.p.clone() };
    let mut reports = Vec::new();
    for p in params {
        let mut spec = base.clone();
        spec.p = p;
        spec.validate()?;
        reports.push(run_campaign(&spec)?);
    }
    finish_campaigns(&reports, &a.campaign, out)
}

fn write_table<'a>(out: &mut dyn Write, rows: impl Iterator<Item = (&'a str, &'a MomentComparison)>) -> io::Result<()> {
    writeln!(
        out,
        "{:<12} {:>6} {:>6} {:>12} {:>14} {:>14} {:>12} {:>10}  verdict",
        "set", "q", "res", "capacity_K", "moment_K", "moment_ball", "gap", "error"
    )?;
    for (id, c) in rows {
        writeln!(
            out,
            "{:<12} {:>6} {:>6} {:>12.6} {:>14.8} {:>14.8} {:>12.4e} {:>10.2e}  {}",
            id,
            c.q.to_string(),
            c.resolution,
            c.capacity_k,
            c.moment_k,
            c.moment_ball,
            c.gap,
            c.error_estimate,
            c.verdict
        )?;
    }
    Ok(())
}

/// Writes the header and `rows` in the campaign CSV layout.
pub fn write_csv<W: Write>(w: W, rows: impl Iterator<Item = [String; 12]>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn report_rows(report: &CampaignReport) -> impl Iterator<Item = [String; 12]> + '_ {
    let p = fmt_param(report.p);
    report.records().map(move |(s, c)| csv_row(&s.id, report.n, &p, c))
}

/// Campaign report as CSV, one row per set, q and resolution.
pub fn emit_csv(report: &CampaignReport, path: &Path) -> CliResult<()> {
    emit_csv_many(std::slice::from_ref(report), path)
}

fn emit_csv_many(reports: &[CampaignReport], path: &Path) -> CliResult<()> {
    let f = fs::File::create(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    write_csv(io::BufWriter::new(f), reports.iter().flat_map(report_rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = fmt_float(x);
            prop_assert_eq!(text.parse::<f64>().unwrap().to_bits(), x.to_bits());
            let digits = text.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            prop_assert_eq!(digits, 17);
        }
    }

    #[test]
    fn special_floats() {
        assert_eq!(fmt_float(f64::NAN), "NaN");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert!("NaN".parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn monte_carlo_matches_segment_closed_form() {
        let cell = Cell { widths: [0.2, 0.0, 0.0], dim: 1 };
        let k = KernelSpec::log(1);
        let exact = k.cell_self_energy(&cell).unwrap();
        let (mc, se) = monte_carlo_self_energy(&k, &cell, 400_000, 11);
        assert!((mc - exact).abs() < 4.0 * se, "{mc} +- {se} vs {exact}");
        let again = monte_carlo_self_energy(&k, &cell, 1000, 11);
        assert_eq!(again, monte_carlo_self_energy(&k, &cell, 1000, 11));
    }

    #[test]
    fn diagnostics_are_one_line() {
        let f = Failure::config("bad\nthing   here");
        assert_eq!(f.diagnostic(), "rieszlab: error kind=config code=2: bad thing here");
    }
}
