use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hiv_ident::model::{hiv_model, parse_model, ModelError};
use hiv_ident::par::Execution;
use hiv_ident::ranktest::{run_rank_test, PhiVariant, RankConfig, RankError, RankMode, RankReport, RankTestError};
use hiv_ident::sim::{
    integrate_hiv, linspace, phi_residual_along, run_indistinguishability_full, sweep_indistinguishability, write_csv,
    EtaSignal, IndistReport, SimConfig, SimError,
};
use hiv_ident::transform::{verify_identities, HivParams, TransformError};

/// Exit status for a check that ran and failed.
const EXIT_FAIL: u8 = 1;
/// Exit status for bad flags, bad input files and inadmissible values.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "hiv-ident", version, about = "Identifiability checks for the HIV viral-dynamics model")]
struct Cli {
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    output: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Pretty,
}

#[derive(Subcommand)]
enum Command {
    /// Check the three transformed equations symbolically.
    VerifyIdentities,
    /// Randomized rank of the parameter Jacobian of the input-output relation.
    Rank(RankArgs),
    /// Co-integrate the model and a member of the transformation family.
    Simulate(SimulateArgs),
    /// Residual of the input-output relation along a simulated trajectory.
    PhiCheck(PhiCheckArgs),
    /// Validate a model file.
    Parse {
        file: PathBuf,
    },
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, default_value = "constrained")]
    mode: RankMode,
    #[arg(long, default_value = "corrected")]
    variant: PhiVariant,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated primes above 2^60.
    #[arg(long, value_delimiter = ',')]
    primes: Option<Vec<u64>>,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long = "N", default_value_t = 1.0)]
    n: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Initial uninfected cells.
    #[arg(long, default_value_t = 1.0)]
    tu0: f64,
    /// Initial infected cells.
    #[arg(long, default_value_t = 1.0)]
    ti0: f64,
    /// Initial virus.
    #[arg(long, default_value_t = 1.0)]
    v0: f64,
    /// Infection rate as an expression in `t`.
    #[arg(long, default_value = "1/2", allow_hyphen_values = true)]
    eta: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    t0: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    tf: f64,
    #[arg(long, default_value_t = 1e-10)]
    abs_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    rel_tol: f64,
    #[arg(long)]
    max_step: Option<f64>,
    /// Number of output samples.
    #[arg(long, default_value_t = 201)]
    points: usize,
}

impl ParamArgs {
    fn params(&self) -> HivParams {
        HivParams {
            lambda: self.lambda,
            rho: self.rho,
            delta: self.delta,
            n: self.n,
            c: self.c,
        }
    }

    fn init(&self) -> [f64; 3] {
        [self.tu0, self.ti0, self.v0]
    }

    fn config(&self) -> SimConfig {
        SimConfig {
            t0: self.t0,
            tf: self.tf,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
            dense_output_points: self.points,
            fixed_step: false,
        }
    }

    fn eta(&self) -> Result<EtaSignal, Failure> {
        EtaSignal::parse(&self.eta).map_err(|e| Failure::usage(format!("--eta: {e}")))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tau: f64,
    /// Sweep `n` values of tau from `lo` to `hi`, written `lo:hi:n`.
    #[arg(long, allow_hyphen_values = true)]
    sweep: Option<Sweep>,
    /// Write both trajectories as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Deviations at or above this bound count as a failure.
    #[arg(long, default_value_t = 1e-6)]
    max_dev: f64,
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    common: ParamArgs,
}

#[derive(Args)]
struct PhiCheckArgs {
    /// The corrected relation must stay below this residual.
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    /// The as-printed relation must exceed this residual.
    #[arg(long, default_value_t = 1e-2)]
    miao_threshold: f64,
    #[command(flatten)]
    common: ParamArgs,
}

#[derive(Clone, Copy)]
struct Sweep {
    lo: f64,
    hi: f64,
    n: usize,
}

impl std::str::FromStr for Sweep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err("expected lo:hi:n".into());
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        let n: usize = n.trim().parse().map_err(|e| format!("`{n}`: {e}"))?;
        if n == 0 {
            return Err("n must be positive".into());
        }
        Ok(Sweep {
            lo: num(lo)?,
            hi: num(hi)?,
            n,
        })
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn fail(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_FAIL,
            message: message.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::fail(format!("i/o: {e}"))
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_)
            | SimError::InvalidInput(_)
            | SimError::InvalidEta { .. }
            | SimError::Transform(TransformError::SingularTau { .. } | TransformError::InvalidParams(_)) => {
                Failure::usage(e.to_string())
            }
            _ => Failure::fail(e.to_string()),
        }
    }
}

impl From<RankTestError> for Failure {
    fn from(e: RankTestError) -> Self {
        match e {
            RankTestError::Rank(RankError::InvalidPrime(_) | RankError::TooFewPrimes | RankError::ZeroTrials) => {
                Failure::usage(e.to_string())
            }
            _ => Failure::fail(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match &cli.command {
        Command::VerifyIdentities => cmd_verify(&mut out, cli.output.unwrap_or(Format::Pretty)),
        Command::Rank(a) => cmd_rank(&mut out, cli.output.unwrap_or(Format::Json), a),
        Command::Simulate(a) => cmd_simulate(&mut out, cli.output.unwrap_or(Format::Json), a),
        Command::PhiCheck(a) => cmd_phi_check(&mut out, cli.output.unwrap_or(Format::Json), a),
        Command::Parse { file } => cmd_parse(&mut out, cli.output.unwrap_or(Format::Pretty), file),
    };
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(code), Ok(())) => ExitCode::from(code),
        (Err(f), _) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        (Ok(_), Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn status(pass: bool) -> u8 {
    if pass {
        0
    } else {
        EXIT_FAIL
    }
}

fn json_line<W: Write, T: Serialize + ?Sized>(out: &mut W, value: &T) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| Failure::fail(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn cmd_verify<W: Write>(out: &mut W, format: Format) -> Result<u8, Failure> {
    let checks = verify_identities().map_err(|e| Failure::fail(e.to_string()))?;
    let all = checks.iter().all(|c| c.passed());
    match format {
        Format::Pretty => {
            for c in &checks {
                writeln!(out, "{} d/dt {}' identity (residual {})", verdict(c.passed()), c.state, c.residual)?;
            }
        }
        Format::Json => {
            let rows: Vec<_> = checks
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "state": c.state,
                        "holds": c.holds,
                        "closed_forms_agree": c.closed_forms_agree,
                        "residual": c.residual.to_string(),
                        "passed": c.passed(),
                    })
                })
                .collect();
            json_line(out, &rows)?;
        }
        Format::Csv => {
            writeln!(out, "state,holds,closed_forms_agree,passed")?;
            for c in &checks {
                writeln!(out, "{},{},{},{}", c.state, c.holds, c.closed_forms_agree, c.passed())?;
            }
        }
    }
    Ok(status(all))
}

fn cmd_rank<W: Write>(out: &mut W, format: Format, a: &RankArgs) -> Result<u8, Failure> {
    let mut cfg = RankConfig {
        trials: a.trials,
        seed: a.seed,
        ..RankConfig::default()
    };
    if let Some(p) = &a.primes {
        cfg.primes = p.clone();
    }
    if a.sequential {
        cfg.execution = Execution::Sequential;
    }
    let report = run_rank_test(&hiv_model(), a.mode, a.variant, &cfg)?;
    match format {
        Format::Json => json_line(out, &report)?,
        Format::Csv => {
            writeln!(out, "rank,count")?;
            for (r, n) in &report.observed_ranks {
                writeln!(out, "{r},{n}")?;
            }
        }
        Format::Pretty => write_rank_pretty(out, &report)?,
    }
    Ok(0)
}

fn write_rank_pretty<W: Write>(out: &mut W, r: &RankReport) -> io::Result<()> {
    writeln!(out, "mode            {:?}", r.mode)?;
    writeln!(out, "variant         {:?}", r.variant)?;
    writeln!(out, "trials x primes {} x {}", r.trials, r.primes.len())?;
    writeln!(out, "seed            {}", r.seed)?;
    writeln!(out, "observed ranks  {:?}", r.observed_ranks)?;
    writeln!(out, "generic rank    {}", r.generic_rank)?;
    if let Some(s) = r.structured_point_rank {
        writeln!(out, "rank at eta^(k>=1) = 0: {s}")?;
    }
    writeln!(out, "elapsed         {} ms", r.elapsed_ms)
}

fn cmd_simulate<W: Write>(out: &mut W, format: Format, a: &SimulateArgs) -> Result<u8, Failure> {
    let (params, init, cfg, eta) = (a.common.params(), a.common.init(), a.common.config(), a.common.eta()?);
    let within = |r: &IndistReport| r.max_rel_output_dev < a.max_dev && r.max_rel_state_map_dev < a.max_dev;

    if let Some(sweep) = a.sweep {
        if a.csv.is_some() || format == Format::Csv {
            return Err(Failure::usage("CSV trajectories are only written for a single --tau"));
        }
        let taus = linspace(sweep.lo, sweep.hi, sweep.n);
        let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
        let results = sweep_indistinguishability(&params, init, &eta, &taus, &cfg, exec);
        let mut pass = true;
        let rows: Vec<serde_json::Value> = taus
            .iter()
            .zip(&results)
            .map(|(tau, r)| match r {
                Ok(rep) => {
                    pass &= within(rep);
                    serde_json::to_value(rep).expect("report serializes")
                }
                Err(e) => {
                    pass = false;
                    serde_json::json!({ "tau": tau, "error": e.to_string() })
                }
            })
            .collect();
        match format {
            Format::Pretty => {
                for (tau, r) in taus.iter().zip(&results) {
                    match r {
                        Ok(rep) => writeln!(
                            out,
                            "{} tau {tau:+.6} output {:.3e} state-map {:.3e}",
                            verdict(within(rep)),
                            rep.max_rel_output_dev,
                            rep.max_rel_state_map_dev
                        )?,
                        Err(e) => writeln!(out, "FAIL tau {tau:+.6} {e}")?,
                    }
                }
            }
            _ => json_line(out, &rows)?,
        }
        return Ok(status(pass));
    }

    let run = run_indistinguishability_full(&params, init, &eta, a.tau, &cfg)?;
    if let Some(path) = &a.csv {
        let file = File::create(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        write_csv(BufWriter::new(file), &run.original, Some(&run.primed))?;
    }
    let rep = &run.report;
    match format {
        Format::Json => json_line(out, rep)?,
        Format::Csv => write_csv(&mut *out, &run.original, Some(&run.primed))?,
        Format::Pretty => {
            writeln!(out, "{} tau {} (e^(rho tau) = {})", verdict(within(rep)), rep.tau, rep.exp_rho_tau)?;
            writeln!(out, "max relative output deviation    {:.3e}", rep.max_rel_output_dev)?;
            writeln!(out, "max relative state-map deviation {:.3e}", rep.max_rel_state_map_dev)?;
        }
    }
    Ok(status(within(rep)))
}

#[derive(Serialize)]
struct PhiCheckReport {
    corrected_residual: f64,
    miao_residual: f64,
    threshold: f64,
    miao_threshold: f64,
    grid_size: usize,
    params: HivParams,
    init: [f64; 3],
    eta: String,
    config: SimConfig,
    passed: bool,
}

fn cmd_phi_check<W: Write>(out: &mut W, format: Format, a: &PhiCheckArgs) -> Result<u8, Failure> {
    let c = &a.common;
    let (params, eta, cfg) = (c.params(), c.eta()?, c.config());
    let traj = integrate_hiv(&params, c.init(), &eta, &cfg)?;
    let corrected = phi_residual_along(&traj, &params, &eta, PhiVariant::Corrected);
    let miao = phi_residual_along(&traj, &params, &eta, PhiVariant::MiaoAsPrinted);
    let report = PhiCheckReport {
        corrected_residual: corrected,
        miao_residual: miao,
        threshold: a.threshold,
        miao_threshold: a.miao_threshold,
        grid_size: traj.len(),
        params,
        init: c.init(),
        eta: eta.source().to_string(),
        config: cfg,
        passed: corrected < a.threshold && miao > a.miao_threshold,
    };
    match format {
        Format::Json => json_line(out, &report)?,
        Format::Csv => {
            writeln!(out, "variant,residual")?;
            writeln!(out, "corrected,{corrected}")?;
            writeln!(out, "miao,{miao}")?;
        }
        Format::Pretty => {
            writeln!(out, "{} corrected relation residual {corrected:.3e} (< {:e})", verdict(corrected < a.threshold), a.threshold)?;
            writeln!(out, "{} as-printed relation residual {miao:.3e} (> {:e})", verdict(miao > a.miao_threshold), a.miao_threshold)?;
        }
    }
    Ok(status(report.passed))
}

fn cmd_parse<W: Write>(out: &mut W, format: Format, file: &PathBuf) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
    let m = parse_model(&text).map_err(|e| {
        let shown = file.display();
        match e {
            ModelError::MissingOdeForState { .. } => Failure::usage(format!("{shown}: {e}")),
            _ => Failure::usage(format!("{shown}:{e}")),
        }
    })?;
    let names = |v: &[hiv_ident::expr::Symbol]| v.iter().map(|s| s.base().to_string()).collect::<Vec<_>>();
    let summary = serde_json::json!({
        "model": m.name(),
        "states": names(m.states()),
        "params": names(m.const_params()),
        "tvparams": names(m.tv_params()),
        "outputs": m.outputs().iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
    });
    match format {
        Format::Json => json_line(out, &summary)?,
        Format::Csv => {
            writeln!(out, "model,states,params,tvparams,outputs")?;
            writeln!(
                out,
                "{},{},{},{},{}",
                m.name(),
                m.states().len(),
                m.const_params().len(),
                m.tv_params().len(),
                m.outputs().len()
            )?;
        }
        Format::Pretty => writeln!(
            out,
            "OK {}: model {} ({} states, {} params, {} tvparams, {} outputs)",
            file.display(),
            m.name(),
            m.states().len(),
            m.const_params().len(),
            m.tv_params().len(),
            m.outputs().len()
        )?,
    }
    Ok(0)
}
