//! `warmcloud`: run the moisture model and its verification batteries.
//!
//! Exit codes: 0 success, 1 failed assertion, 2 configuration error,
//! 3 solver failure, 4 I/O failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use warmcloud::config::ConfigFile;
use warmcloud::selftest::{kernel_selftest, KernelFault};
use warmcloud::stepper::{continuous_dependence_experiment, write_csv, VAR_NAMES};
use warmcloud::verify::{certificate_battery, mms_study, worst_relative_slack};
use warmcloud::Error;

#[derive(Parser)]
#[command(name = "warmcloud", version, about = "Warm-cloud moisture model and verification harness")]
struct Cli {
    /// Directory for all output files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    /// Seed for every random draw; recorded in output headers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the full model and write the time series and snapshots.
    Run { config: PathBuf },
    /// Randomized property batteries over the pointwise kernels.
    KernelSelftest {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Energy certificates on random linear parabolic problems.
    RotheVerify { config: Option<PathBuf> },
    /// Manufactured-solution refinement study of the linear parabolic solver.
    Mms { config: Option<PathBuf> },
    /// Continuous-dependence experiment: amplification per perturbation size.
    TwoRun {
        config: Option<PathBuf>,
        /// Comma-separated perturbation sizes (default: the config's list).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        eps: Option<Vec<f64>>,
    },
}

enum Failure {
    Assertion(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(Error::Io(e))
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        e if e.is_runtime() => 3,
        _ => 2,
    }
}

fn load(path: Option<&Path>) -> Result<ConfigFile, Error> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn create(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn cmd_run(cli: &Cli, path: &Path) -> CmdResult {
    let cfg = ConfigFile::load(path)?;
    let model = cfg.model()?;
    let init = cfg.initial_state(&model, cli.seed)?;
    let dir = &cli.output_dir;
    let cadence = cfg.output.cadence;
    let out = model.run(&init, cfg.time.t_end, |step, _, state| {
        if cadence > 0 && step % cadence == 0 {
            for (name, field) in VAR_NAMES.iter().zip(state.fields()) {
                let mut w = create(dir, &format!("{name}_{step}.fld"))?;
                field.write_snapshot(&mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    })?;
    let mut w = create(dir, "timeseries.csv")?;
    write_csv(&mut w, cli.seed, &out.records)?;
    w.flush()?;
    let mut summary = out.bounds.summary();
    if out.clamped_total > 0.0 {
        summary += &format!("clamped_mass: {:e}\n", out.clamped_total);
    }
    std::fs::write(dir.join("bounds.txt"), &summary)?;
    print!("{summary}");
    if out.bounds.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("{} bound violations", out.bounds.violations.len())))
    }
}

fn cmd_selftest(cli: &Cli, samples: usize, fault: bool) -> CmdResult {
    if samples == 0 {
        return Err(Error::Config("--samples must be positive".into()).into());
    }
    let fault = if fault { KernelFault::FlipEvaporationSign } else { KernelFault::None };
    let results = kernel_selftest(&warmcloud::PhysicalParams::default(), samples, cli.seed, fault);
    println!("# seed={}", cli.seed);
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("{failed} kernel batteries failed")))
    }
}

fn cmd_rothe_verify(cli: &Cli, path: Option<&Path>) -> CmdResult {
    let cfg = load(path)?;
    let b = &cfg.battery;
    b.validate()?;
    let opts = cfg.controls()?.cg;
    let outcomes = certificate_battery(b.cert_grid, b.cert_steps, b.problems, cli.seed, opts)?;
    let mut w = create(&cli.output_dir, "certificates.txt")?;
    writeln!(w, "# seed={}", cli.seed)?;
    for o in &outcomes {
        writeln!(w, "problem: {}", o.seed)?;
        write!(w, "{}", o.report.to_key_value())?;
        writeln!(w)?;
        println!(
            "{} problem {} l2_slack={:e} energy_slack={:e}",
            if o.report.pass() { "PASS" } else { "FAIL" },
            o.seed,
            o.report.l2_slack(),
            o.report.energy_slack()
        );
    }
    w.flush()?;
    let worst = worst_relative_slack(&outcomes);
    println!("worst relative slack: {worst:e}");
    if outcomes.iter().all(|o| o.report.pass()) {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("certificate violated, worst relative slack {worst:e}")))
    }
}

fn cmd_mms(cli: &Cli, path: Option<&Path>) -> CmdResult {
    let cfg = load(path)?;
    let b = &cfg.battery;
    let study = mms_study(b, cfg.controls()?.cg)?;
    std::fs::write(cli.output_dir.join("mms.csv"), study.to_csv())?;
    print!("{}", study.to_csv());
    let (s, t) = (study.min_spatial_order(), study.min_temporal_order());
    println!("min spatial order: {s:.4} (required {})", b.min_spatial_order);
    println!("min temporal order: {t:.4} (required {})", b.min_temporal_order);
    if s >= b.min_spatial_order && t >= b.min_temporal_order {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("observed orders too low: spatial {s:.4}, temporal {t:.4}")))
    }
}

fn cmd_two_run(cli: &Cli, path: Option<&Path>, eps: Option<&[f64]>) -> CmdResult {
    let cfg = load(path)?;
    let eps = eps.unwrap_or(&cfg.battery.eps);
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Config(format!("eps values must be positive and finite, got {eps:?}")).into());
    }
    let model = cfg.model()?;
    let init = cfg.initial_state(&model, cli.seed)?;
    let reports = continuous_dependence_experiment(&model, &init, cfg.time.t_end, eps, cli.seed.wrapping_add(1))?;
    let mut w = create(&cli.output_dir, "dependence.csv")?;
    writeln!(w, "# seed={}", cli.seed)?;
    writeln!(w, "eps,amplification,t_of_max,final_ratio")?;
    for r in &reports {
        writeln!(w, "{:e},{:e},{:e},{:e}", r.eps, r.amplification, r.t_of_max, r.final_ratio)?;
        println!(
            "eps={:e} amplification={:e} t_of_max={:e} final_ratio={:e}",
            r.eps, r.amplification, r.t_of_max, r.final_ratio
        );
    }
    w.flush()?;
    let amps: Vec<f64> = reports.iter().map(|r| r.amplification).collect();
    let hi = amps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = amps.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = (hi - lo) / hi;
    println!("relative spread: {spread:e} (allowed {})", cfg.battery.dependence_tol);
    if spread <= cfg.battery.dependence_tol {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("amplification factors disagree by {spread:e}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: invalid thread count {n}");
            return ExitCode::from(2);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.output_dir) {
        eprintln!("error: cannot create {}: {e}", cli.output_dir.display());
        return ExitCode::from(4);
    }
    let result = match &cli.cmd {
        Cmd::Run { config } => cmd_run(&cli, config),
        Cmd::KernelSelftest { samples, inject_fault } => cmd_selftest(&cli, *samples, *inject_fault),
        Cmd::RotheVerify { config } => cmd_rothe_verify(&cli, config.as_deref()),
        Cmd::Mms { config } => cmd_mms(&cli, config.as_deref()),
        Cmd::TwoRun { config, eps } => cmd_two_run(&cli, config.as_deref(), eps.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
