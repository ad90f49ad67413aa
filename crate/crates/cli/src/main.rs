//! `noonchip` command-line driver.
//!
//! Every command writes its artifacts plus a `manifest.json` into `--out-dir`.
//! Failures print a single `error[kind]: message` line on stderr.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use noonchip::calibration::{
    demo_phase, demo_voltages, fit_calibration, parse_scan_csv, scan_to_csv, synthetic_scan, with_poisson_noise,
    working_points, CalibrationCurve,
};
use noonchip::chip::ChipModel;
use noonchip::config::DeviceConfig;
use noonchip::fringe::{fit_fringe, FringeKind};
use noonchip::montecarlo::{configured_phase, Simulator};
use noonchip::tdc::{
    delay_histogram, fourfold_counts, heralded_single_counts, Qualification, TimeTagStream, DEFAULT_BIN_WIDTH_PS,
    DEFAULT_MAX_OFFSET,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "noonchip", version, about = "Two-photon state engineering chip simulator")]
struct Cli {
    /// Device configuration (TOML). Defaults are used when absent.
    #[arg(long, global = true, env = "NOONCHIP_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory receiving artifacts and the run manifest.
    #[arg(long, global = true, default_value = "noonchip-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Heralded output state, click probabilities and fidelities at one setting.
    State(PhaseArgs),
    /// Generate a time-tag stream.
    Run {
        #[command(flatten)]
        phase: PhaseArgs,
        #[arg(long, default_value_t = 1_000_000)]
        pulses: u64,
    },
    /// Monte Carlo phase sweep: counts per phase point.
    Sweep {
        #[arg(long, default_value_t = 13)]
        points: usize,
        #[arg(long, default_value_t = 100_000)]
        pulses: u64,
    },
    /// Start-stop delay histogram of a tag file.
    Histogram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "herald_same_pulse")]
        qualification: Qualification,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_PS)]
        bin_width_ps: i64,
        #[arg(long, default_value_t = DEFAULT_MAX_OFFSET)]
        max_offset: u32,
    },
    /// Fit a fringe to a sweep CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        kind: FringeKind,
        /// Count column; `fourfold` for double fringes and `single` otherwise by default.
        #[arg(long)]
        column: Option<String>,
    },
    /// Phase-versus-voltage calibration from a scan CSV.
    Calibrate {
        #[arg(long, required_unless_present = "demo")]
        scan: Option<PathBuf>,
        /// Use a synthetic noisy scan of a known quadratic law.
        #[arg(long, conflicts_with = "scan")]
        demo: bool,
    },
    /// Print the effective configuration.
    Config {
        /// Start from the lossless single-pair device instead of the defaults.
        #[arg(long)]
        ideal: bool,
    },
}

#[derive(Args, Debug)]
struct PhaseArgs {
    /// MZI phase in radians.
    #[arg(long, conflicts_with = "voltage")]
    phase: Option<f64>,
    /// Heater voltage, converted through the calibration curve.
    #[arg(long)]
    voltage: Option<f64>,
    /// Calibration CSV for `--voltage`; falls back to `mzi.calibration`.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    command: Vec<String>,
    config: Option<PathBuf>,
    seed: u64,
    outputs: Vec<PathBuf>,
    version: &'static str,
    wall_clock_s: f64,
}

struct Session {
    config: DeviceConfig,
    seed: u64,
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Session {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|cause| cause.downcast_ref::<noonchip::Error>())
                .map_or("input", noonchip::Error::kind);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{kind}]: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let started = Instant::now();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut config = match &cli.config {
        Some(path) => DeviceConfig::load(path)?,
        None => DeviceConfig::default(),
    };
    if let Command::Config { ideal } = cli.command {
        if ideal {
            config = DeviceConfig::ideal();
        }
        print!("{}", config.to_toml_string());
        return Ok(());
    }
    let seed = cli.seed.unwrap_or(config.seed);
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let mut ctx = Session {
        config,
        seed,
        out_dir: cli.out_dir.clone(),
        outputs: Vec::new(),
    };

    match &cli.command {
        Command::State(args) => state(&mut ctx, args)?,
        Command::Run { phase, pulses } => run_stream(&mut ctx, phase, *pulses)?,
        Command::Sweep { points, pulses } => sweep(&mut ctx, *points, *pulses)?,
        Command::Histogram {
            input,
            qualification,
            bin_width_ps,
            max_offset,
        } => histogram(&mut ctx, input, *qualification, *bin_width_ps, *max_offset)?,
        Command::Fit { input, kind, column } => fit(&mut ctx, input, *kind, column.as_deref())?,
        Command::Calibrate { scan, demo } => calibrate(&mut ctx, scan.as_deref(), *demo)?,
        Command::Config { .. } => unreachable!("handled above"),
    }

    let manifest = RunManifest {
        command: std::env::args().collect(),
        config: cli.config.clone(),
        seed: ctx.seed,
        outputs: ctx.outputs.clone(),
        version: VERSION,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let path = ctx.out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// Phase from the flags, else from the configuration.
fn resolve_phase(config: &DeviceConfig, args: &PhaseArgs) -> anyhow::Result<f64> {
    if let Some(phase) = args.phase {
        return Ok(phase);
    }
    let voltage = args.voltage.or(if config.mzi.phase_rad.is_none() {
        config.mzi.voltage_v
    } else {
        None
    });
    let Some(voltage) = voltage else {
        return Ok(configured_phase(config)?);
    };
    let path = args
        .calibration
        .clone()
        .or_else(|| config.mzi.calibration.as_ref().map(PathBuf::from));
    let Some(path) = path else {
        return Err(noonchip::Error::Calibration(
            "voltage given but no calibration curve (use --calibration or mzi.calibration)".into(),
        )
        .into());
    };
    let curve = CalibrationCurve::load(&path)?;
    Ok(curve.phase_from_voltage(voltage)?)
}

#[derive(Serialize)]
struct StateReport {
    phase_rad: f64,
    herald_probability: f64,
    p11: f64,
    p20: f64,
    p02: f64,
    fidelity_noon: f64,
    fidelity_product: f64,
}

fn state(ctx: &mut Session, args: &PhaseArgs) -> anyhow::Result<()> {
    let phase = resolve_phase(&ctx.config, args)?;
    let output = ChipModel::new(&ctx.config)?.heralded_output_state(phase)?;
    let probs = output.probabilities();
    let report = StateReport {
        phase_rad: phase,
        herald_probability: output.herald_probability,
        p11: probs.p11,
        p20: probs.p20,
        p02: probs.p02,
        fidelity_noon: output.fidelity_noon(),
        fidelity_product: output.fidelity_product(),
    };
    println!("phase = {phase:.6} rad");
    println!("herald probability = {:.6e}", report.herald_probability);
    println!("P11 = {:.6}  P20 = {:.6}  P02 = {:.6}", probs.p11, probs.p20, probs.p02);
    println!("fidelity to N00N = {:.3}", report.fidelity_noon);
    println!("fidelity to |11> = {:.3}", report.fidelity_product);
    ctx.write("state.json", serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(())
}

fn run_stream(ctx: &mut Session, args: &PhaseArgs, pulses: u64) -> anyhow::Result<()> {
    let phase = resolve_phase(&ctx.config, args)?;
    let stream = Simulator::new(&ctx.config, phase, ctx.seed)?.simulate(pulses)?;
    let path = ctx.write("tags.csv", stream.to_csv_string())?;
    println!(
        "{} tags over {pulses} pulses, {} four-fold -> {}",
        stream.len(),
        fourfold_counts(&stream),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct SweepRow {
    phase: f64,
    fourfold: u64,
    delayed: u64,
    single: u64,
}

// Seed of sweep point `index`; decorrelates the points' pulse streams.
fn point_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn sweep(ctx: &mut Session, points: usize, pulses: u64) -> anyhow::Result<()> {
    if points < 2 {
        bail!(noonchip::Error::Config("sweep needs at least 2 points".into()));
    }
    // inclusive grid over [0, 2 pi]
    let rows: Vec<SweepRow> = (0..points)
        .into_par_iter()
        .map(|i| -> anyhow::Result<SweepRow> {
            let phase = TAU * i as f64 / (points - 1) as f64;
            let stream = Simulator::new(&ctx.config, phase, point_seed(ctx.seed, i))?.simulate(pulses)?;
            let histogram = delay_histogram(&stream, Qualification::Full4fold, DEFAULT_BIN_WIDTH_PS, DEFAULT_MAX_OFFSET)?;
            Ok(SweepRow {
                phase,
                fourfold: fourfold_counts(&stream),
                delayed: histogram.delayed_total(),
                single: heralded_single_counts(&stream),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let mut csv = String::from("phase_rad,pulses,fourfold,delayed,single\n");
    for row in &rows {
        csv += &format!("{},{pulses},{},{},{}\n", row.phase, row.fourfold, row.delayed, row.single);
    }
    let path = ctx.write("sweep.csv", csv)?;
    let peak = rows.iter().map(|r| r.fourfold).max().unwrap_or(0);
    println!("{points} points x {pulses} pulses, peak four-fold {peak} -> {}", path.display());
    Ok(())
}

fn histogram(
    ctx: &mut Session,
    input: &Path,
    qualification: Qualification,
    bin_width_ps: i64,
    max_offset: u32,
) -> anyhow::Result<()> {
    let validated = TimeTagStream::load(input)?;
    if validated.out_of_order > 0 {
        log::warn!("{} records were out of order and have been sorted", validated.out_of_order);
    }
    let histogram = delay_histogram(&validated.stream, qualification, bin_width_ps, max_offset)?;
    let mut bins = Vec::new();
    histogram.write_csv(&mut bins)?;
    ctx.write("histogram.csv", bins)?;
    let mut peaks = String::from("offset,counts\n");
    for p in &histogram.peaks {
        peaks += &format!("{},{}\n", p.offset, p.counts);
    }
    ctx.write("peaks.csv", peaks)?;
    println!(
        "zero-delay peak {} counts, delayed peaks {} counts",
        histogram.peak(0).unwrap_or(0),
        histogram.delayed_total()
    );
    Ok(())
}

// (phase, counts) pairs from a CSV with a `phase_rad` column.
fn read_fringe(input: &Path, column: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        bail!(noonchip::Error::Parse {
            line: 1,
            message: "empty fringe file".into()
        });
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| names.iter().position(|n| *n == name);
    let (Some(phase_col), Some(count_col)) = (find("phase_rad"), find(column)) else {
        bail!(noonchip::Error::Parse {
            line: 1,
            message: format!("header needs phase_rad and {column} columns, got {header:?}"),
        });
    };
    lines
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let field = |col: usize| -> Result<f64, noonchip::Error> {
                fields
                    .get(col)
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| noonchip::Error::Parse {
                        line: i + 1,
                        message: format!("bad row {line:?}"),
                    })
            };
            Ok((field(phase_col)?, field(count_col)?))
        })
        .collect()
}

fn fit(ctx: &mut Session, input: &Path, kind: FringeKind, column: Option<&str>) -> anyhow::Result<()> {
    let column = column.unwrap_or(match kind {
        FringeKind::Double => "fourfold",
        FringeKind::Single => "single",
    });
    let points = read_fringe(input, column)?;
    let fit = fit_fringe(&points, kind)?;
    let report = fit.report();
    println!(
        "{kind} fringe: V = {:.4} +- {:.4}, A = {:.2} +- {:.2}, F = {:.4} +- {:.4} (1 sigma), chi2/dof = {:.2}",
        fit.visibility,
        fit.sigma_visibility,
        fit.amplitude,
        fit.sigma_amplitude,
        report.fidelity,
        report.sigma_fidelity,
        fit.chi2_dof
    );
    ctx.write("fit.json", serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    amplitude: f64,
    visibility: f64,
    residual_rms: f64,
    poisson_rms: f64,
    product_voltage_v: f64,
    noon_voltage_v: f64,
}

fn calibrate(ctx: &mut Session, scan: Option<&Path>, demo: bool) -> anyhow::Result<()> {
    let points = if demo {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed);
        let points = with_poisson_noise(&synthetic_scan(&demo_voltages(), 1e4, 1.0, demo_phase), &mut rng);
        ctx.write("scan.csv", scan_to_csv(&points))?;
        points
    } else {
        let path = scan.expect("clap requires --scan without --demo");
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        parse_scan_csv(&text)?
    };
    let fit = fit_calibration(&points)?;
    let wp = working_points(&fit.curve)?;
    ctx.write("calibration.csv", fit.curve.to_csv_string())?;
    let report = CalibrationReport {
        amplitude: fit.amplitude,
        visibility: fit.visibility,
        residual_rms: fit.residual_rms,
        poisson_rms: fit.poisson_rms,
        product_voltage_v: wp.product_v,
        noon_voltage_v: wp.noon_v,
    };
    ctx.write("calibration.json", serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "product state at {:.3} V, N00N state at {:.3} V (fringe visibility {:.4})",
        wp.product_v, wp.noon_v, fit.visibility
    );
    Ok(())
}
