//! Command-line driver: run the specification test on CSV data, replicate
//! Monte Carlo rejection-rate tables, and dump kernel diagnostics.
//!
//! Exit codes: 0 on success, 2 on input/usage errors, 3 on numerical
//! failures (the error kind is printed on stderr).

use clap::{Args, Parser, Subcommand, ValueEnum};
use deconvospec::engine::{run_test, ErrorSpec, Multiplier, TestConfig, TestResult};
use deconvospec::error_model::ErrorModel;
use deconvospec::flattop::{bandwidth_rot, SmoothnessCase};
use deconvospec::kernel::DeconvKernelSpec;
use deconvospec::projection::XiGrid;
use deconvospec::simulate::{run_table, simulate_dgp, Dgp, DgpSpec, NoiseFamily, TableOptions};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "deconvospec",
    version,
    about = "Specification tests for polynomial regression with a mismeasured covariate"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Test a polynomial null model on a CSV dataset with columns y,w[,w_rep].
    Test(TestArgs),
    /// Replicate Monte Carlo rejection-rate tables, or emit simulated datasets.
    Simulate(SimulateArgs),
    /// Dump the deconvolution kernel, the moment table, and the error CF.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaseArg {
    /// Polynomially decaying error CF (e.g. Laplace).
    Ordinary,
    /// Exponentially decaying error CF (e.g. Gaussian).
    #[value(alias = "supersmooth")]
    Super,
}

impl From<CaseArg> for SmoothnessCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Ordinary => SmoothnessCase::Ordinary,
            CaseArg::Super => SmoothnessCase::Supersmooth,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ErrorArg {
    Laplace,
    Gaussian,
    Estimated,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    JsonLines,
}

/// Flags shared by every subcommand that builds an error model.
#[derive(Args)]
struct ErrorFlags {
    /// Smoothness regime of the measurement error (drives the bandwidth rule).
    #[arg(long, value_enum, default_value = "ordinary")]
    case: CaseArg,
    /// Error model for the deconvolution weights.
    #[arg(long, value_enum, default_value = "laplace")]
    error: ErrorArg,
    /// Laplace scale-squared parameter (with --error laplace).
    #[arg(long, default_value_t = 1.0 / 24.0)]
    lambda2: f64,
    /// Gaussian CF exponent parameter (with --error gaussian).
    #[arg(long, default_value_t = 1.0 / 24.0)]
    mu: f64,
    /// Bandwidth constant multiplying the rate-optimal rule.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

impl ErrorFlags {
    fn error_spec(&self) -> ErrorSpec {
        match self.error {
            ErrorArg::Laplace => ErrorSpec::Laplace { lambda2: self.lambda2 },
            ErrorArg::Gaussian => ErrorSpec::Gaussian { mu: self.mu },
            ErrorArg::Estimated => ErrorSpec::Estimated,
        }
    }
}

#[derive(Args)]
struct GridFlags {
    /// Lower end of the frequency grid.
    #[arg(long = "xi-lo", default_value_t = -3.0)]
    xi_lo: f64,
    /// Upper end of the frequency grid.
    #[arg(long = "xi-hi", default_value_t = 3.0)]
    xi_hi: f64,
    /// Number of frequency nodes (odd, so the grid contains zero).
    #[arg(long = "xi-n", default_value_t = 31)]
    xi_n: usize,
}

impl GridFlags {
    fn grid(&self) -> Result<XiGrid, deconvospec::Error> {
        XiGrid::new(self.xi_lo, self.xi_hi, self.xi_n)
    }
}

#[derive(Args)]
struct TestArgs {
    /// CSV file with header row naming columns y,w and optionally w_rep.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    error: ErrorFlags,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 199)]
    n_boot: usize,
    /// Nominal level; repeat the flag for several levels.
    #[arg(long = "alpha")]
    alphas: Vec<f64>,
    #[command(flatten)]
    grid: GridFlags,
    /// Degree of the polynomial null model.
    #[arg(long = "fit-degree", default_value_t = 1)]
    fit_degree: usize,
    /// Multiplier seed; falls back to DECONVOSPEC_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study table: 1 (known Laplace), 2 (known Gaussian), 3 (estimated
    /// Laplace), 4 (estimated Gaussian); a5..a12 alias the same setups.
    #[arg(long, conflicts_with_all = ["family", "repeated"])]
    table: Option<String>,
    /// Error family for an explicit grid (instead of --table).
    #[arg(long, value_enum)]
    family: Option<ErrorArg>,
    /// Treat the error law as unknown and estimate it from repeats.
    #[arg(long, default_value_t = false)]
    repeated: bool,
    /// Restrict the sample sizes (repeatable).
    #[arg(long = "n")]
    n_list: Vec<usize>,
    /// Restrict the bandwidth constants (repeatable).
    #[arg(long = "c")]
    c_list: Vec<f64>,
    /// Monte Carlo replications per cell.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Bootstrap replicates per test.
    #[arg(long = "B", default_value_t = 199)]
    n_boot: usize,
    /// Deviation amplitude of the alternative models.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Worker threads (0 keeps the library default).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Master seed; falls back to DECONVOSPEC_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit one simulated dataset CSV per replication into this directory
    /// instead of running any tests.
    #[arg(long = "emit-data")]
    emit_data: Option<PathBuf>,
    /// Data-generating process for --emit-data.
    #[arg(long, default_value = "dgp0")]
    dgp: String,
    /// Sample size for --emit-data.
    #[arg(long = "emit-n", default_value_t = 500)]
    emit_n: usize,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    error: ErrorFlags,
    /// CSV file with columns w,w_rep supplying repeated measurements
    /// (required with --error estimated).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample size fed into the bandwidth rule.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Dump at this exact bandwidth instead of the rule-of-thumb value.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Half-range of the kernel dump grid.
    #[arg(long = "u-max", default_value_t = 150.0)]
    u_max: f64,
    /// Step of the kernel dump grid.
    #[arg(long = "u-step", default_value_t = 0.05)]
    u_step: f64,
    /// Largest CF argument dumped.
    #[arg(long = "t-max", default_value_t = 5.0)]
    t_max: f64,
    #[command(flatten)]
    grid: GridFlags,
    /// Write the dump CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// 17 significant decimal digits: enough to round-trip any f64 exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("DECONVOSPEC_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("DECONVOSPEC_SEED must be an unsigned integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

/// A parsed input dataset; `w_rep` is present only when the file has the
/// column.
struct InputDataset {
    y: Vec<f64>,
    w: Vec<f64>,
    w_rep: Option<Vec<f64>>,
}

fn read_dataset(path: &Path, need_y: bool) -> Result<InputDataset, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let y_idx = col("y");
    let w_idx = col("w").ok_or_else(|| format!("{}: missing column w", path.display()))?;
    if need_y && y_idx.is_none() {
        return Err(format!("{}: missing column y", path.display()));
    }
    let rep_idx = col("w_rep");

    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut w_rep = rep_idx.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or_default();
        let field = |idx: usize, name: &str| -> Result<f64, String> {
            let raw = record.get(idx).ok_or_else(|| {
                format!("{}: line {line}: missing field {name}", path.display())
            })?;
            raw.parse::<f64>().map_err(|_| {
                format!(
                    "{}: line {line}: cannot parse {raw:?} in column {name}",
                    path.display()
                )
            })
        };
        if let Some(idx) = y_idx {
            y.push(field(idx, "y")?);
        }
        w.push(field(w_idx, "w")?);
        if let (Some(idx), Some(rep)) = (rep_idx, w_rep.as_mut()) {
            rep.push(field(idx, "w_rep")?);
        }
    }
    Ok(InputDataset { y, w, w_rep })
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            print!("{content}");
            std::io::stdout().flush().map_err(|e| e.to_string())
        }
    }
}

fn render_text(r: &TestResult) -> String {
    let d = &r.diagnostics;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "n = {}, bandwidth = {:.6}, error sigma2 = {:.6}",
        d.n, d.bandwidth, d.sigma2
    );
    let theta: Vec<String> = d.theta_hat.iter().map(|t| format!("{t:.6}")).collect();
    let _ = writeln!(
        s,
        "fitted coefficients = [{}] (cond {:.3e}{})",
        theta.join(", "),
        d.fit_cond,
        if d.fit_ridge { ", ridged" } else { "" }
    );
    let _ = writeln!(
        s,
        "error moments: mu2 = {:.6}, mu4 = {:.6}",
        d.error_mu2, d.error_mu4
    );
    let _ = writeln!(s, "sup statistic = {:.6}, p = {:.6}", r.ks, r.pval_ks);
    let _ = writeln!(s, "cvm statistic = {:.6}, p = {:.6}", r.cvm, r.pval_cvm);
    let _ = writeln!(s, "stat  alpha  critical   reject");
    for (i, &a) in r.alphas.iter().enumerate() {
        let _ = writeln!(
            s,
            "sup   {a:<5.3}{:>10.6}   {}",
            r.crit_ks[i],
            if r.reject_ks[i] { "yes" } else { "no" }
        );
    }
    for (i, &a) in r.alphas.iter().enumerate() {
        let _ = writeln!(
            s,
            "cvm   {a:<5.3}{:>10.6}   {}",
            r.crit_cvm[i],
            if r.reject_cvm[i] { "yes" } else { "no" }
        );
    }
    s
}

fn render_csv(r: &TestResult) -> String {
    let mut s = String::from("stat,alpha,statistic,critical,p_value,reject,n,bandwidth\n");
    let d = &r.diagnostics;
    for (stat, value, crits, pval, rejs) in [
        ("ks", r.ks, &r.crit_ks, r.pval_ks, &r.reject_ks),
        ("cvm", r.cvm, &r.crit_cvm, r.pval_cvm, &r.reject_cvm),
    ] {
        for (i, &a) in r.alphas.iter().enumerate() {
            let _ = writeln!(
                s,
                "{stat},{},{},{},{},{},{},{}",
                fmt_f64(a),
                fmt_f64(value),
                fmt_f64(crits[i]),
                fmt_f64(pval),
                rejs[i],
                d.n,
                fmt_f64(d.bandwidth)
            );
        }
    }
    s
}

fn render_json_lines(r: &TestResult) -> String {
    let d = &r.diagnostics;
    let mut s = String::new();
    for (stat, value, crits, pval, rejs) in [
        ("ks", r.ks, &r.crit_ks, r.pval_ks, &r.reject_ks),
        ("cvm", r.cvm, &r.crit_cvm, r.pval_cvm, &r.reject_cvm),
    ] {
        for (i, &a) in r.alphas.iter().enumerate() {
            let line = serde_json::json!({
                "stat": stat,
                "alpha": a,
                "statistic": value,
                "critical": crits[i],
                "p_value": pval,
                "reject": rejs[i],
                "n": d.n,
                "bandwidth": d.bandwidth,
                "theta_hat": d.theta_hat,
            });
            let _ = writeln!(s, "{line}");
        }
    }
    s
}

fn cmd_test(args: &TestArgs) -> Result<(), (u8, String)> {
    let seed = resolve_seed(args.seed).map_err(|m| (EXIT_INPUT, m))?;
    let grid = args
        .grid
        .grid()
        .map_err(|e| (EXIT_INPUT, e.to_string()))?;
    let data = read_dataset(&args.data, true).map_err(|m| (EXIT_INPUT, m))?;
    if args.error.error == ErrorArg::Estimated && data.w_rep.is_none() {
        return Err((
            EXIT_INPUT,
            format!(
                "{}: --error estimated needs a w_rep column with repeated measurements",
                args.data.display()
            ),
        ));
    }
    let alphas = if args.alphas.is_empty() {
        vec![0.01, 0.05, 0.10]
    } else {
        args.alphas.clone()
    };
    let config = TestConfig {
        case: args.error.case.into(),
        error: args.error.error_spec(),
        c: args.error.c,
        n_boot: args.n_boot,
        alphas,
        multiplier: Multiplier::Mammen,
        seed,
        xi: grid,
        fit_degree: args.fit_degree,
    };
    let w_rep = if args.error.error == ErrorArg::Estimated {
        data.w_rep.as_deref()
    } else {
        None
    };
    let result = run_test(&data.y, &data.w, w_rep, &config).map_err(map_core_error)?;
    let content = match args.format {
        FormatArg::Text => render_text(&result),
        FormatArg::Csv => render_csv(&result),
        FormatArg::JsonLines => render_json_lines(&result),
    };
    write_or_print(args.out.as_deref(), &content).map_err(|m| (EXIT_INPUT, m))
}

fn map_core_error(e: deconvospec::Error) -> (u8, String) {
    let code = match e {
        deconvospec::Error::InputShapeMismatch(_) => EXIT_INPUT,
        deconvospec::Error::UnstableDeconvolution { .. }
        | deconvospec::Error::QuadratureNonConvergence { .. }
        | deconvospec::Error::SingularDesign { .. } => EXIT_NUMERICAL,
    };
    (code, e.to_string())
}

fn parse_dgp(label: &str) -> Result<Dgp, String> {
    match label {
        "dgp0" | "0" => Ok(Dgp::Dgp0),
        "dgp1" | "1" => Ok(Dgp::Dgp1),
        "dgp2" | "2" => Ok(Dgp::Dgp2),
        other => Err(format!("unknown data-generating process {other:?}")),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), (u8, String)> {
    let seed = resolve_seed(args.seed).map_err(|m| (EXIT_INPUT, m))?;
    if args.jobs > 0 {
        // Build the global pool once; a second call in the same process
        // (e.g. in-process tests) leaves the existing pool in place, which
        // is harmless because results are scheduling-independent.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build_global();
    }

    if let Some(dir) = &args.emit_data {
        return emit_datasets(args, dir, seed).map_err(|m| (EXIT_INPUT, m));
    }

    let table = match (&args.table, args.family) {
        (Some(t), _) => t.clone(),
        (None, Some(family)) => match (family, args.repeated) {
            (ErrorArg::Laplace, false) => "1".to_string(),
            (ErrorArg::Gaussian, false) => "2".to_string(),
            (ErrorArg::Laplace, true) => "3".to_string(),
            (ErrorArg::Gaussian, true) => "4".to_string(),
            (ErrorArg::Estimated, _) => {
                return Err((
                    EXIT_INPUT,
                    "--family picks the noise law; use --repeated for the unknown-error \
                     tables instead of --family estimated"
                        .to_string(),
                ))
            }
        },
        (None, None) => {
            return Err((
                EXIT_INPUT,
                "either --table or --family (with optional --repeated) is required".to_string(),
            ))
        }
    };

    let mut opts = TableOptions {
        reps: args.reps,
        n_boot: args.n_boot,
        seed,
        delta: args.delta,
        ..TableOptions::default()
    };
    if !args.n_list.is_empty() {
        opts.n_list = args.n_list.clone();
    }
    if !args.c_list.is_empty() {
        opts.c_list = args.c_list.clone();
    }

    eprintln!(
        "table {table}: {} cells x {} replications, B = {}",
        opts.n_list.len() * opts.c_list.len() * 3,
        opts.reps,
        opts.n_boot
    );
    let report = run_table(&table, &opts).map_err(map_core_error)?;

    let mut buf = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        for row in &report.rows {
            writer.serialize(row).map_err(|e| (EXIT_INPUT, e.to_string()))?;
        }
        writer.flush().map_err(|e| (EXIT_INPUT, e.to_string()))?;
    }
    let content = String::from_utf8(buf).expect("csv output is utf-8");
    write_or_print(args.out.as_deref(), &content).map_err(|m| (EXIT_INPUT, m))?;
    eprintln!("table {table}: {} rows", report.rows.len());
    Ok(())
}

fn emit_datasets(args: &SimulateArgs, dir: &Path, seed: u64) -> Result<(), String> {
    let dgp = parse_dgp(&args.dgp)?;
    let family = match args.family {
        Some(ErrorArg::Gaussian) => NoiseFamily::Gaussian,
        Some(ErrorArg::Estimated) => {
            return Err("--family picks the noise law (laplace or gaussian)".to_string())
        }
        _ => NoiseFamily::Laplace,
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    for r in 0..args.reps {
        let spec = DgpSpec {
            model: dgp,
            delta: args.delta,
            n: args.emit_n,
            error: family,
            repeated: args.repeated,
            seed: seed.wrapping_add(r as u64),
        };
        let data = simulate_dgp(&spec).map_err(|e| e.to_string())?;
        let mut content = String::new();
        if data.w_rep.is_some() {
            content.push_str("y,w,w_rep\n");
        } else {
            content.push_str("y,w\n");
        }
        for i in 0..data.y.len() {
            match &data.w_rep {
                Some(rep) => {
                    let _ = writeln!(
                        content,
                        "{},{},{}",
                        fmt_f64(data.y[i]),
                        fmt_f64(data.w[i]),
                        fmt_f64(rep[i])
                    );
                }
                None => {
                    let _ = writeln!(content, "{},{}", fmt_f64(data.y[i]), fmt_f64(data.w[i]));
                }
            }
        }
        let path = dir.join(format!("{dgp}_rep{r:03}.csv"));
        std::fs::write(&path, content)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    eprintln!(
        "emitted {} dataset files into {}",
        args.reps,
        dir.display()
    );
    Ok(())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), (u8, String)> {
    let grid = args
        .grid
        .grid()
        .map_err(|e| (EXIT_INPUT, e.to_string()))?;
    let model = match args.error.error {
        ErrorArg::Laplace => ErrorModel::KnownLaplace {
            lambda2: args.error.lambda2,
        },
        ErrorArg::Gaussian => ErrorModel::KnownGaussian { mu: args.error.mu },
        ErrorArg::Estimated => {
            let path = args.data.as_ref().ok_or_else(|| {
                (
                    EXIT_INPUT,
                    "--error estimated needs --data with w,w_rep columns".to_string(),
                )
            })?;
            let data = read_dataset(path, false).map_err(|m| (EXIT_INPUT, m))?;
            let rep = data.w_rep.ok_or_else(|| {
                (
                    EXIT_INPUT,
                    format!("{}: missing column w_rep", path.display()),
                )
            })?;
            if rep.len() != data.w.len() {
                return Err((
                    EXIT_INPUT,
                    format!("{}: w and w_rep lengths differ", path.display()),
                ));
            }
            let diffs: Vec<f64> = data.w.iter().zip(&rep).map(|(a, b)| a - b).collect();
            ErrorModel::estimated(diffs)
        }
    };
    let b = args.bandwidth.unwrap_or_else(|| {
        bandwidth_rot(args.error.case.into(), model.sigma2(), args.n, args.error.c)
    });
    let spec = DeconvKernelSpec::new(b, model.clone()).map_err(map_core_error)?;

    let mut s = String::from("section,order,arg,re,im\n");
    // Kernel dump on a symmetric midpoint grid.
    let steps = (args.u_max / args.u_step).round() as i64;
    for k in -steps..steps {
        let u = (k as f64 + 0.5) * args.u_step;
        let value = spec.deconv_kernel_eval(u).map_err(map_core_error)?;
        let _ = writeln!(s, "kernel,,{},{},0", fmt_f64(u), fmt_f64(value));
    }
    // Moment table on the frequency grid.
    let table = spec.moment_table(&grid.nodes()).map_err(map_core_error)?;
    for l in 0..=table.max_order() {
        for (j, &xi) in table.xi().iter().enumerate() {
            let v = table.value(l, j);
            let _ = writeln!(
                s,
                "moment,{l},{},{},{}",
                fmt_f64(xi),
                fmt_f64(v.re),
                fmt_f64(v.im)
            );
        }
    }
    // CF curve.
    let t_steps = (args.t_max / 0.05).round() as usize;
    for k in 0..=t_steps {
        let t = k as f64 * 0.05;
        let _ = writeln!(s, "cf,,{},{},0", fmt_f64(t), fmt_f64(model.cf_eval(t)));
    }
    write_or_print(args.out.as_deref(), &s).map_err(|m| (EXIT_INPUT, m))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::Test(args) => cmd_test(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Diagnose(args) => cmd_diagnose(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
