//! Command-line front end: single runs, convergence studies and
//! prediction-step diagnostics, with CSV/markdown/JSON reports.
//!
//! Exit codes are a stable contract: 0 success, 1 numerical failure,
//! 2 usage/configuration error.

use crate::analysis::{
    self, convergence_study, energy_series, error_norms, fitted_rate, prediction_diagnostics,
    ConvergenceReport,
};
use crate::mesh::{build_mesh, BoundaryLayout};
use crate::problems::ProblemSpec;
use crate::schemes::{run_tail, run_trajectory, state_norms, Scheme, StepOperators};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "rrdc",
    about = "Robin-Robin prediction-correction solver for parabolic-parabolic interface problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single simulation and write the final-time error record.
    Run(CommonArgs),
    /// Run a convergence study over refinement levels (h = dt = 2^-k).
    Convergence(CommonArgs),
    /// Run the prediction-step time-difference diagnostics over levels.
    Diagnose(CommonArgs),
}

#[derive(Debug, Args, Clone)]
struct CommonArgs {
    /// Problem label: neumann-slanted | two-viscosity | dirichlet-slanted.
    #[arg(long)]
    problem: Option<String>,
    /// Scheme: prediction | correction | modified-prediction |
    /// modified-correction | monolithic.
    #[arg(long)]
    scheme: Option<String>,
    /// Time step for a single run; the mesh uses h = dt.
    #[arg(long)]
    dt: Option<f64>,
    /// Inclusive level range `k0..k1` for studies and diagnostics.
    #[arg(long)]
    levels: Option<String>,
    /// Override the Robin parameter of the problem.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory for reports (created if missing).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Report format: csv | md | json.
    #[arg(long)]
    format: Option<String>,
    /// Worker threads for level fan-out (requires the `parallel` feature).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the per-step state norms of a single run.
    #[arg(long)]
    dump_states: bool,
    /// JSON config file; explicit flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// JSON configuration file mirroring the command-line flags.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    problem: Option<String>,
    scheme: Option<String>,
    dt: Option<f64>,
    levels: Option<String>,
    alpha: Option<f64>,
    out_dir: Option<PathBuf>,
    format: Option<String>,
    threads: Option<usize>,
    dump_states: Option<bool>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

fn numerical(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_NUMERICAL,
        message: msg.into(),
    }
}

/// Resolved configuration after merging flags over the config file.
struct RunConfig {
    problem: ProblemSpec,
    scheme: Scheme,
    dt: Option<f64>,
    levels: Option<Vec<u32>>,
    out_dir: PathBuf,
    format: ReportFormat,
    dump_states: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }
}

fn parse_levels(text: &str) -> Result<Vec<u32>, Failure> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| usage(format!("levels must be a range like 2..8, got {text:?}")))?;
    let lo: u32 = lo
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad level range start {lo:?}")))?;
    let hi: u32 = hi
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| usage(format!("bad level range end {hi:?}")))?;
    if lo < 2 || hi < lo {
        return Err(usage(format!(
            "level range {lo}..{hi} is empty or too coarse"
        )));
    }
    Ok((lo..=hi).collect())
}

fn resolve(args: &CommonArgs) -> Result<RunConfig, Failure> {
    let file: ConfigFile = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad config {}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };

    let problem_label = args
        .problem
        .clone()
        .or(file.problem)
        .ok_or_else(|| usage("missing --problem"))?;
    let mut problem = ProblemSpec::by_label(&problem_label).ok_or_else(|| {
        usage(format!(
            "unknown problem {problem_label:?}; expected one of {:?}",
            ProblemSpec::labels()
        ))
    })?;
    let scheme_label = args
        .scheme
        .clone()
        .or(file.scheme)
        .unwrap_or_else(|| "correction".to_string());
    let scheme = Scheme::parse(&scheme_label)
        .ok_or_else(|| usage(format!("unknown scheme {scheme_label:?}")))?;
    if let Some(alpha) = args.alpha.or(file.alpha) {
        if alpha <= 0.0 {
            return Err(usage(format!("alpha must be positive, got {alpha}")));
        }
        problem.alpha = alpha;
    }
    if scheme.is_modified() {
        if problem.layout != BoundaryLayout::DirichletSides {
            return Err(usage(format!(
                "scheme {} requires a Dirichlet-sides problem, but {} has Neumann sides",
                scheme.label(),
                problem.label
            )));
        }
        if problem.nu_f != problem.nu_s {
            return Err(usage(format!(
                "scheme {} requires nu_f = nu_s, but {} has nu_f={} nu_s={}",
                scheme.label(),
                problem.label,
                problem.nu_f,
                problem.nu_s
            )));
        }
    }

    let levels = match args.levels.clone().or(file.levels) {
        Some(text) => Some(parse_levels(&text)?),
        None => None,
    };
    let format = match args.format.clone().or(file.format) {
        Some(text) => ReportFormat::parse(&text)
            .ok_or_else(|| usage(format!("unknown format {text:?}; expected csv, md or json")))?,
        None => ReportFormat::Csv,
    };

    if let Some(threads) = args.threads.or(file.threads) {
        configure_threads(threads)?;
    }

    Ok(RunConfig {
        problem,
        scheme,
        dt: args.dt.or(file.dt),
        levels,
        out_dir: args
            .out_dir
            .clone()
            .or(file.out_dir)
            .unwrap_or_else(|| PathBuf::from(".")),
        format,
        dump_states: args.dump_states || file.dump_states.unwrap_or(false),
    })
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) -> Result<(), Failure> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    // Ignore the error if a global pool already exists (repeat invocations
    // inside one process, e.g. from tests).
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: usize) -> Result<(), Failure> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    eprintln!("note: built without the `parallel` feature; --threads ignored");
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create out-dir {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    problem: &'a str,
    scheme: &'a str,
    dt: f64,
    steps: usize,
    errors: &'a analysis::ErrorRecord,
}

fn cmd_run(config: &RunConfig) -> Result<(), Failure> {
    let dt = config
        .dt
        .ok_or_else(|| usage("run requires --dt (or dt in the config file)"))?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(usage(format!("dt must be positive, got {dt}")));
    }
    // Refinement convention h = dt: the mesh resolution comes from dt.
    let n = (1.0 / dt).round();
    if n < 2.0 || (n * dt - 1.0).abs() > 1e-9 {
        return Err(usage(format!(
            "dt must satisfy 1/dt = integer >= 2 (mesh uses h = dt), got dt={dt}"
        )));
    }
    let steps = config.problem.t_final / dt;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(usage(format!(
            "final time {} is not an integer multiple of dt {dt}",
            config.problem.t_final
        )));
    }

    let mesh = build_mesh(n as usize, config.problem.interface, config.problem.layout)
        .map_err(|e| usage(e.to_string()))?;
    let ops = StepOperators::new(&mesh, &config.problem, dt, config.scheme)
        .map_err(|e| numerical(e.to_string()))?;

    if config.dump_states {
        let traj = run_trajectory(&ops, dt, config.problem.t_final)
            .map_err(|e| numerical(e.to_string()))?;
        let mut csv = String::from("t,w_norm,u_norm,lambda_norm\n");
        for state in &traj.states {
            let (nw, nu, nl) = state_norms(&ops, state);
            csv.push_str(&format!("{:.9e},{nw:.9e},{nu:.9e},{nl:.9e}\n", state.t));
        }
        let path = write_file(
            &config.out_dir,
            &format!(
                "states_{}_{}.csv",
                config.problem.label,
                config.scheme.label()
            ),
            &csv,
        )?;
        println!("wrote {}", path.display());
    }

    let tail = run_tail(&ops, dt, config.problem.t_final).map_err(|e| numerical(e.to_string()))?;
    let errors = error_norms(&ops, &tail);
    let summary = RunSummary {
        problem: config.problem.label,
        scheme: config.scheme.label(),
        dt,
        steps: tail.steps,
        errors: &errors,
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable");
    let path = write_file(
        &config.out_dir,
        &format!(
            "run_{}_{}.json",
            config.problem.label,
            config.scheme.label()
        ),
        &json,
    )?;
    println!("wrote {}", path.display());
    println!("{json}");
    Ok(())
}

fn report_to_string(report: &ConvergenceReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Markdown => report.to_markdown(),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("serializable");
            s.push('\n');
            s
        }
    }
}

fn cmd_convergence(config: &RunConfig) -> Result<(), Failure> {
    let levels = config
        .levels
        .as_ref()
        .ok_or_else(|| usage("convergence requires --levels k0..k1"))?;
    if levels.len() < 2 {
        return Err(usage("convergence requires at least two levels"));
    }
    let report = convergence_study(&config.problem, config.scheme, levels)
        .map_err(|e| usage(e.to_string()))?;

    print!("{}", report.to_markdown());
    let rendered = report_to_string(&report, config.format);
    let name = format!(
        "convergence_{}_{}.{}",
        config.problem.label,
        config.scheme.label(),
        config.format.extension()
    );
    let path = write_file(&config.out_dir, &name, &rendered)?;
    println!("wrote {}", path.display());

    for check in analysis::acceptance_rate_checks(&report) {
        println!("{check}");
    }

    if let Some(bad) = report.levels.iter().find(|l| l.errors.is_none()) {
        return Err(numerical(format!(
            "level {} failed: {}",
            bad.level,
            bad.failure.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(())
}

fn cmd_diagnose(config: &RunConfig) -> Result<(), Failure> {
    let levels = config
        .levels
        .as_ref()
        .ok_or_else(|| usage("diagnose requires --levels k0..k1"))?;
    if config.scheme == Scheme::Monolithic {
        return Err(usage("diagnose needs a splitting scheme, not monolithic"));
    }

    let mut csv = String::from(
        "level,dt,max_du,max_grad_du,final_grad_du,first_diff_lhs,second_diff_lhs,multiplier_diff_lhs,max_z,sum_s\n",
    );
    let mut max_grads = Vec::new();
    let mut max_dus = Vec::new();
    let mut lam_lhs = Vec::new();
    for &level in levels {
        let (ops, _) = analysis::run_level(&config.problem, config.scheme, level)
            .map_err(|e| numerical(format!("level {level}: {e}")))?;
        let traj = run_trajectory(&ops, ops.dt, config.problem.t_final)
            .map_err(|e| numerical(format!("level {level}: {e}")))?;
        let pred = traj.prediction.as_deref().unwrap_or(&traj.states);
        let diag = prediction_diagnostics(&ops, pred);
        let (max_z, sum_s) = if ops.scheme.has_correction() {
            let energy = energy_series(&ops, &traj.states);
            (
                energy.z.iter().copied().fold(0.0, f64::max),
                energy.s.iter().sum::<f64>(),
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        csv.push_str(&format!(
            "{level},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{max_z:.9e},{sum_s:.9e}\n",
            ops.dt,
            diag.max_du(),
            diag.max_grad_du(),
            diag.grad_du_l2.last().copied().unwrap_or(0.0),
            diag.first_difference_lhs(),
            diag.second_difference_lhs(),
            diag.multiplier_difference_lhs(),
        ));
        max_grads.push(diag.max_grad_du());
        max_dus.push(diag.max_du());
        lam_lhs.push(diag.multiplier_difference_lhs());
    }
    let fit = |values: &[f64]| {
        fitted_rate(levels, values)
            .map(|r| format!("{r:.9e}"))
            .unwrap_or_default()
    };
    csv.push_str(&format!(
        "fitted-rate,,{},{},,,,{},,\n",
        fit(&max_dus),
        fit(&max_grads),
        fit(&lam_lhs)
    ));

    let name = format!(
        "diagnostics_{}_{}.csv",
        config.problem.label,
        config.scheme.label()
    );
    let path = write_file(&config.out_dir, &name, &csv)?;
    println!("wrote {}", path.display());
    println!(
        "fitted rates: max|dU| {}  max|grad dU| {}  dt*sum|dLambda|^2 {}",
        fit(&max_dus),
        fit(&max_grads),
        fit(&lam_lhs)
    );
    Ok(())
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version requests are not failures.
            let code = if err.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            };
            let _ = err.print();
            return code;
        }
    };
    let (args, command): (&CommonArgs, fn(&RunConfig) -> Result<(), Failure>) = match &cli.command {
        Command::Run(a) => (a, cmd_run),
        Command::Convergence(a) => (a, cmd_convergence),
        Command::Diagnose(a) => (a, cmd_diagnose),
    };
    let config = match resolve(args) {
        Ok(config) => config,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            return failure.code;
        }
    };
    match command(&config) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_range_parsing() {
        assert_eq!(parse_levels("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_levels("3..=4").unwrap(), vec![3, 4]);
        assert!(parse_levels("5..3").is_err());
        assert!(parse_levels("0..3").is_err());
        assert!(parse_levels("abc").is_err());
    }

    #[test]
    fn format_parsing() {
        assert_eq!(ReportFormat::parse("csv"), Some(ReportFormat::Csv));
        assert_eq!(ReportFormat::parse("md"), Some(ReportFormat::Markdown));
        assert_eq!(ReportFormat::parse("json"), Some(ReportFormat::Json));
        assert_eq!(ReportFormat::parse("yaml"), None);
    }
}
