use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use log::info;
use zonalsim::calibration::{calibrate, CalibrationConfig};
use zonalsim::clearing::{ClearingError, MarketDesign};
use zonalsim::cost::attach_costs;
use zonalsim::ingestion::{
    generate_synthetic, open_bundle, write_bundle, write_results, Bundle, IngestError, RunMeta,
    SyntheticConfig,
};
use zonalsim::pipeline::{run_days, PipelineError, RunOptions};
use zonalsim::policy::{PolicyId, DEFAULT_RENT_SHARE};
use zonalsim::report::{render_report, ReportError};
use zonalsim::scenario::DayScenario;

#[derive(Parser)]
#[command(
    name = "zonalsim",
    version,
    about = "Backcast GB electricity markets under national, zonal and nodal pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate, clear, redispatch, settle and write results for a date range.
    Run(RunArgs),
    /// Print the calibrated line tuning factor for each day.
    Calibrate(RangeArgs),
    /// Print summary tables from a results directory.
    Report {
        /// Results directory written by `run`.
        results: PathBuf,
    },
    /// Write a seeded synthetic scenario bundle.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RangeArgs {
    /// Scenario bundle directory.
    #[arg(long, env = "ZONALSIM_BUNDLE")]
    bundle: PathBuf,
    /// First day (YYYY-MM-DD); defaults to the first day of the bundle.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last day (YYYY-MM-DD); defaults to the last day of the bundle.
    #[arg(long)]
    to: Option<NaiveDate>,
}

#[derive(Clone, Copy)]
enum PolicyChoice {
    None,
    Some(PolicyId),
}

fn parse_policy(s: &str) -> Result<PolicyChoice, String> {
    match s {
        "none" => Ok(PolicyChoice::None),
        n => n
            .parse::<u8>()
            .ok()
            .and_then(PolicyId::from_number)
            .map(PolicyChoice::Some)
            .ok_or_else(|| format!("policy must be none, 1, 2 or 3, got '{s}'")),
    }
}

fn parse_share(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
        _ => Err(format!("rent share must be within 0..1, got '{s}'")),
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    range: RangeArgs,
    /// Comma-separated designs: national, zonal, nodal.
    #[arg(long, value_delimiter = ',', default_value = "national,zonal")]
    designs: Vec<MarketDesign>,
    /// Policy applied to the zonal outcome: none, 1, 2 or 3.
    #[arg(long, default_value = "none", value_parser = parse_policy)]
    policy: PolicyChoice,
    /// Share of intra-GB congestion rent available to the policy.
    #[arg(long, default_value_t = DEFAULT_RENT_SHARE, value_parser = parse_share)]
    rent_share: f64,
    /// Balancing markup in GBP/MWh.
    #[arg(long, default_value_t = 30.0)]
    markup: f64,
    /// Recorded with the results; the pipeline itself has no random draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for day-level parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Stop at the first failed day.
    #[arg(long)]
    fail_fast: bool,
    /// Multiplier on mean monthly curtailment for the SEB projection.
    #[arg(long, default_value_t = 1.0)]
    curtailment_scale: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    days: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First day (YYYY-MM-DD).
    #[arg(long, default_value = "2024-01-01")]
    start: NaiveDate,
    #[arg(long, default_value_t = 24)]
    buses: usize,
    #[arg(long, default_value_t = 6)]
    zones: usize,
    /// 300 buses and 450 units; overrides --buses.
    #[arg(long)]
    large: bool,
    /// Make every link unconstrained.
    #[arg(long)]
    unconstrained: bool,
}

/// Exit 1 for bad input or data, 2 for failures inside the model.
enum Failure {
    Data(String),
    Internal(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Data(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Pool(_) => Failure::Internal(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn load(range: &RangeArgs) -> Result<(Bundle, NaiveDate, NaiveDate, Vec<DayScenario>), Failure> {
    let bundle = open_bundle(&range.bundle)?;
    let (Some(&first), Some(&last)) = (bundle.dates.first(), bundle.dates.last()) else {
        return Err(Failure::Data(format!(
            "{} holds no days",
            range.bundle.display()
        )));
    };
    let from = range.from.unwrap_or(first);
    let to = range.to.unwrap_or(last);
    let days = bundle.load_range(from, to)?;
    Ok((bundle, from, to, days))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let (bundle, from, to, days) = load(&args.range)?;
    let policy = match args.policy {
        PolicyChoice::None => None,
        PolicyChoice::Some(p) => Some(p),
    };
    let options = RunOptions {
        designs: args.designs.clone(),
        policy,
        rent_share: args.rent_share,
        markup: args.markup,
        jobs: args.jobs,
        fail_fast: args.fail_fast,
        calibration: CalibrationConfig::default(),
    };
    let results = run_days(&bundle.topology, &days, &options)?;
    let meta = RunMeta {
        from: from.to_string(),
        to: to.to_string(),
        designs: args.designs,
        policy,
        rent_share: args.rent_share,
        markup: args.markup,
        seed: args.seed,
        curtailment_scale: args.curtailment_scale,
    };
    write_results(&results, &meta, &args.out)?;
    let w = &results.warnings;
    eprintln!(
        "days {} failed {} | warnings: stack exhausted {}, calibration not converged {}, grid fallback {}, policy {} | {:.1}s",
        results.days.len(),
        results.failures.len(),
        w.stack_exhausted,
        w.calibration_not_converged,
        w.calibration_grid_fallback,
        w.policy,
        started.elapsed().as_secs_f64()
    );
    if results.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "{} day(s) failed; see summary.json",
            results.failures.len()
        )))
    }
}

fn calibrate_days(range: RangeArgs) -> Result<(), Failure> {
    let (bundle, _, _, days) = load(&range)?;
    let cfg = CalibrationConfig::default();
    println!("date,tau,iterations,achieved_mwh,target_mwh,converged,grid_fallback");
    for mut day in days {
        attach_costs(&mut day).map_err(|e| Failure::Data(format!("{}: {e}", day.date)))?;
        let r = calibrate(&day, &bundle.topology, &cfg).map_err(|e| match e {
            ClearingError::Solver(_) => Failure::Internal(format!("{}: {e}", day.date)),
            _ => Failure::Data(format!("{}: {e}", day.date)),
        })?;
        info!("day={} stage=calibration tau={}", day.date, r.tau);
        println!(
            "{},{:.6},{},{:.3},{:.3},{},{}",
            day.date,
            r.tau,
            r.iterations,
            r.achieved_volume,
            r.target_volume,
            r.converged,
            r.grid_fallback
        );
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let base = if args.large {
        SyntheticConfig::large()
    } else {
        SyntheticConfig {
            buses: args.buses,
            ..SyntheticConfig::default()
        }
    };
    let cfg = SyntheticConfig {
        days: args.days,
        zones: args.zones,
        start: args.start,
        unconstrained_links: args.unconstrained,
        ..base
    };
    let (topology, days) = generate_synthetic(&cfg, args.seed)?;
    write_bundle(&args.out, &topology, &days)?;
    eprintln!("wrote {} days to {}", days.len(), args.out.display());
    Ok(())
}

fn report(results: &Path) -> Result<(), Failure> {
    print!("{}", render_report(results)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Calibrate(r) => calibrate_days(r),
        Command::Report { results } => report(&results),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
