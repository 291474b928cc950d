use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossfit_sc::inference::{crossfit_att, expected_ci_length, EstimationConfig, InferenceError};
use crossfit_sc::montecarlo::{
    calibrate, run_coverage, CoverageRequest, DgpConfig, DgpId, MonteCarloError, RepOutcome,
};
use crossfit_sc::{load_panel, Method};

const EXIT_VALIDATION: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "crossfit-sc", version, about = "Cross-fitted synthetic control estimation and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the ATT of a treated unit with cross-fitted inference.
    Estimate(EstimateArgs),
    /// Fit the factor-model DGP to a panel and write it as JSON.
    Calibrate(CalibrateArgs),
    /// Run a Monte Carlo coverage campaign.
    Simulate(SimulateArgs),
    /// Expected confidence-interval length as a function of K.
    Curve(CurveArgs),
}

#[derive(Args)]
struct PanelArgs {
    /// Wide CSV: first column time labels, one column per unit.
    #[arg(long)]
    panel: PathBuf,
    /// Column label of the treated unit.
    #[arg(long)]
    treated: String,
    /// Number of pre-treatment periods.
    #[arg(long)]
    t0: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// l1 radius for cl/mcl (defaults 1 and 1.5).
    #[arg(long)]
    q: Option<f64>,
    /// Null value for the t-test.
    #[arg(long, default_value_t = 0.0)]
    tau0: f64,
    /// Emit JSON instead of the aligned table.
    #[arg(long, conflicts_with = "table")]
    json: bool,
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Output path for the DGP JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design id: 1.1-1.5 (stationary) or 2.1-2.9 (trending).
    #[arg(long, value_parser = parse_dgp)]
    dgp: DgpId,
    /// DGP JSON written by `calibrate`.
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "cl,sc,did")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coverage CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the calibrated pre-period length.
    #[arg(long)]
    t0: Option<usize>,
    /// l1 radius override for cl/mcl.
    #[arg(long)]
    q: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write every replication's estimate and interval to this CSV.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    t0: usize,
    #[arg(long)]
    t1: usize,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    kmax: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_dgp(s: &str) -> Result<DgpId, String> {
    s.parse::<DgpId>().map_err(|e| e.to_string())
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<MonteCarloError> for Failure {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Config(_)
            | MonteCarloError::UnknownDgp(_)
            | MonteCarloError::Json(_)
            | MonteCarloError::Panel(_) => Failure::validation(e.to_string()),
            _ => Failure::numeric(e.to_string()),
        }
    }
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(|e| Failure::validation(format!("--out {}: {e}", p.display()))),
        None => io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|e| Failure::numeric(format!("stdout: {e}"))),
    }
}

fn read_panel(args: &PanelArgs) -> Result<crossfit_sc::Panel, Failure> {
    let file = File::open(&args.panel).map_err(|e| Failure::validation(format!("--panel {}: {e}", args.panel.display())))?;
    load_panel(BufReader::new(file), &args.treated, args.t0)
        .map_err(|e| Failure::validation(format!("--panel {}: {e}", args.panel.display())))
}

fn cmd_estimate(args: &EstimateArgs) -> Result<u8, Failure> {
    let mut cfg = EstimationConfig::new(args.method, args.k)
        .with_alpha(args.alpha)
        .with_tau0(args.tau0);
    cfg.q = args.q;
    cfg.validate().map_err(|e| Failure::validation(e.to_string()))?;
    let panel = read_panel(&args.panel)?;
    let (report, code) = match crossfit_att(&panel, &cfg) {
        Ok(res) => (res.report(), 0),
        Err(InferenceError::DegenerateVariance(d)) => {
            eprintln!("warning: fold estimates coincide; no interval can be formed");
            (d.report(), EXIT_DEGENERATE)
        }
        Err(e @ InferenceError::Config(_)) => return Err(Failure::validation(e.to_string())),
        Err(e) => return Err(Failure::numeric(e.to_string())),
    };
    let text = if args.json {
        serde_json::to_string_pretty(&report).map_err(|e| Failure::numeric(e.to_string()))?
    } else {
        report.to_string()
    };
    println!("{text}");
    Ok(code)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<u8, Failure> {
    let panel = read_panel(&args.panel)?;
    let cal = calibrate(&panel).map_err(|e| Failure::numeric(e.to_string()))?;
    eprintln!(
        "calibrated {} controls, T0 = {}, T1 = {}: median rho = {:.4}, rho_u = {:.4}, sigma_v = {:.4}",
        cal.config.n_units,
        cal.config.t0,
        cal.config.t1,
        cal.median_rho(),
        cal.config.rho_u,
        cal.config.sigma_v
    );
    let mut json = cal.config.to_json()?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)?;
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    if args.threads == Some(0) {
        return Err(Failure::validation("--threads must be at least 1"));
    }
    let text = std::fs::read_to_string(&args.calib)
        .map_err(|e| Failure::validation(format!("--calib {}: {e}", args.calib.display())))?;
    let mut base = DgpConfig::from_json(&text).map_err(|e| Failure::validation(format!("--calib: {e}")))?;
    if let Some(t0) = args.t0 {
        base.t0 = t0;
    }
    let (dgp, spec) = args.dgp.design(&base);
    let mut req = CoverageRequest::new(args.dgp.to_string(), args.methods.clone(), args.k.clone(), args.reps);
    req.alpha = args.alpha;
    req.master_seed = args.seed;
    req.q = args.q;
    req.threads = args.threads;
    req.keep_draws = args.dump.is_some();
    let run = run_coverage(&dgp, &spec, &req)?;
    for row in &run.table.rows {
        if row.degenerate > 0 || row.failed > 0 {
            eprintln!(
                "{} K={}: {} degenerate and {} failed replications excluded",
                row.method, row.k, row.degenerate, row.failed
            );
        }
    }
    if let Some(path) = &args.dump {
        let mut out = String::from("rep,method,K,tau_hat,ci_lo,ci_hi,status\n");
        for d in &run.draws {
            let line = match &d.outcome {
                RepOutcome::Estimated { tau_hat, ci } => format!("{tau_hat},{},{},ok", ci.0, ci.1),
                RepOutcome::Degenerate { tau_hat } => format!("{tau_hat},NA,NA,degenerate"),
                RepOutcome::Failed(_) => "NA,NA,NA,failed".to_string(),
            };
            out.push_str(&format!("{},{},{},{line}\n", d.rep, d.method, d.k));
        }
        write_output(Some(path), &out)?;
    }
    write_output(args.out.as_deref(), &run.table.to_csv())?;
    Ok(0)
}

fn cmd_curve(args: &CurveArgs) -> Result<u8, Failure> {
    if args.kmax < 2 {
        return Err(Failure::validation("--kmax must be at least 2"));
    }
    if args.t0 == 0 || args.t1 == 0 {
        return Err(Failure::validation("--t0 and --t1 must be positive"));
    }
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return Err(Failure::validation("--sigma must be positive"));
    }
    let c0 = args.t0 as f64 / args.t1 as f64;
    let mut out = String::from("K,expected_ci_length\n");
    for k in 2..=args.kmax {
        let len = expected_ci_length(k, args.alpha, c0, args.sigma).map_err(|e| Failure::validation(e.to_string()))?;
        out.push_str(&format!("{k},{len}\n"));
    }
    write_output(args.out.as_deref(), &out)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Curve(a) => cmd_curve(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
