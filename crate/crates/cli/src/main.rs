//! `homodyne`: simulate, analyze and verify balanced-homodyne noise spectra.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 I/O
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use homodyne_core::config::RunConfig;
use homodyne_core::io::{self, SpectrumMetadata};
use homodyne_core::noise_models::{quadrature_variance, variance_to_db};
use homodyne_core::spectral::{
    fig2_plan, fig3_plan, subtract_dark_stitched, VacuumReference, WindowPlan,
};
use homodyne_core::suite::{all_passed, analyze_samples, Suite, Tolerances};
use homodyne_core::verify::CheckReport;
use homodyne_core::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "homodyne",
    version,
    about = "Squeezed-light homodyne noise simulation and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig2,
    Fig3,
    Fast,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fast => "fast",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanName {
    Fig2,
    Fig3,
}

#[derive(Args)]
struct Source {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset (default: fast).
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Overrides the suite seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Output {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form spectrum table (no simulation).
    Spectrum {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate every run of the suite and write raw streams.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: Output,
    },
    /// Estimate the stitched spectrum of one raw stream.
    Analyze {
        /// Raw `.f64le` stream with its `.meta.toml` sidecar.
        #[arg(long)]
        input: PathBuf,
        /// Dark run to subtract in power.
        #[arg(long)]
        dark: Option<PathBuf>,
        /// Analysis plan; defaults to the plan the suite uses for this run.
        #[arg(long, value_enum)]
        plan: Option<PlanName>,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: Output,
    },
    /// Run the check suite, on written runs or simulated in memory.
    Verify {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: Output,
        /// Directory written by `simulate`; without it runs are simulated.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Overrides every dB tolerance.
        #[arg(long)]
        tolerance_db: Option<f64>,
        /// Overrides the whiteness slope tolerance (dB/decade).
        #[arg(long)]
        slope_tolerance: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

struct Loaded {
    suite: Suite,
    output_dir: Option<PathBuf>,
}

fn load(source: &Source) -> Result<Loaded, Error> {
    let (suite, output_dir) = match &source.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.to_suite()?, cfg.output_dir.map(PathBuf::from))
        }
        None => (
            Suite::preset(source.preset.unwrap_or(Preset::Fast).name())?,
            None,
        ),
    };
    let suite = match source.seed {
        Some(seed) => suite.with_seed(seed),
        None => suite,
    };
    Ok(Loaded { suite, output_dir })
}

fn out_dir(output: &Output, loaded: &Loaded) -> PathBuf {
    output
        .out
        .clone()
        .or_else(|| loaded.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_spectrum(source: &Source, output: &Output) -> Result<u8, Error> {
    let loaded = load(source)?;
    let scenario = loaded
        .suite
        .primary_scenario()
        .ok_or_else(|| Error::Config("suite has no scenario".into()))?;
    let pair = scenario.quadrature_pair()?;
    let v = quadrature_variance(&pair, scenario.homodyne.theta);
    let lo = scenario.homodyne.lo_scale();

    let mut table =
        String::from("frequency_hz,quantum_rel_vacuum,quantum_db,total_rel_vacuum,total_db\n");
    for f in [1.0, 3.2, 10.0, 50.0, 200.0, 800.0, 3200.0] {
        if f >= scenario.nyquist_hz() {
            continue;
        }
        let total = scenario.expected_psd(f)? / lo;
        table.push_str(&format!(
            "{f},{v:.6},{:.4},{total:.6},{:.4}\n",
            variance_to_db(v)?,
            variance_to_db(total)?
        ));
    }

    println!(
        "# V1 {:.6} ({:.4} dB), V2 {:.6} ({:+.4} dB), theta {} rad, digest {}",
        pair.v_squeezed,
        variance_to_db(pair.v_squeezed)?,
        pair.v_antisqueezed,
        variance_to_db(pair.v_antisqueezed)?,
        scenario.homodyne.theta,
        scenario.digest()
    );
    print!("{table}");
    if output.out.is_some() {
        let path = out_dir(output, &loaded).join("spectrum_table.csv");
        io::ensure_writable(&path, output.force)?;
        io::write_atomic(&path, table.as_bytes())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_simulate(source: &Source, output: &Output) -> Result<u8, Error> {
    let loaded = load(source)?;
    let dir = out_dir(output, &loaded);
    let metas = loaded.suite.write_runs(&dir, output.force)?;
    for m in metas {
        println!(
            "{} {} samples {:.1} s digest {} sha256 {}",
            m.name, m.n_samples, m.duration_s, m.scenario_digest, m.data_sha256
        );
    }
    Ok(0)
}

fn cmd_analyze(
    input: &Path,
    dark: Option<&Path>,
    plan: Option<PlanName>,
    source: &Source,
    output: &Output,
) -> Result<u8, Error> {
    let loaded = load(source)?;
    let (meta, samples) = io::read_stream(input)?;
    let plan: WindowPlan<f64> = match plan {
        Some(PlanName::Fig2) => fig2_plan(),
        Some(PlanName::Fig3) => fig3_plan(),
        None => {
            let base = meta.name.strip_suffix("_dark").unwrap_or(&meta.name);
            loaded
                .suite
                .runs()?
                .into_iter()
                .find(|r| r.name == meta.name || r.name == base)
                .map(|r| r.plan)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "run '{}' is not part of suite '{}'; pass --plan",
                        meta.name, loaded.suite.name
                    ))
                })?
        }
    };
    let params = loaded.suite.welch_params();
    let mut spectrum = analyze_samples(
        &samples,
        meta.sample_rate_hz,
        &plan,
        params,
        meta.scenario_digest.clone(),
    )?;
    let mut dark_digest = None;
    if let Some(path) = dark {
        let (dmeta, dsamples) = io::read_stream(path)?;
        if dmeta.sample_rate_hz != meta.sample_rate_hz {
            return Err(Error::Config(format!(
                "dark run sampled at {} Hz, signal at {} Hz",
                dmeta.sample_rate_hz, meta.sample_rate_hz
            )));
        }
        let d = analyze_samples(
            &dsamples,
            dmeta.sample_rate_hz,
            &plan,
            params,
            dmeta.scenario_digest.clone(),
        )?;
        spectrum = subtract_dark_stitched(&spectrum, &d, None)?;
        dark_digest = Some(dmeta.scenario_digest);
    }

    let reference = meta.lo_scale();
    let csv = io::spectrum_csv(&spectrum, VacuumReference::Flat(reference))?;
    let json = SpectrumMetadata::new(
        &plan,
        &spectrum,
        meta.sample_rate_hz,
        reference,
        dark_digest,
    );
    let json = serde_json::to_string_pretty(&json).expect("metadata serializes");

    let dir = out_dir(output, &loaded);
    let (csv_path, json_path) = io::spectrum_paths(&dir, &meta.name);
    io::ensure_writable(&csv_path, output.force)?;
    io::ensure_writable(&json_path, output.force)?;
    io::write_atomic(&csv_path, csv.as_bytes())?;
    io::write_atomic(&json_path, json.as_bytes())?;
    println!(
        "{}: {} bins in {} bands, {} floored -> {}",
        meta.name,
        spectrum.bins().count(),
        spectrum.segments.len(),
        spectrum.floored_count(),
        csv_path.display()
    );
    Ok(0)
}

fn cmd_verify(
    source: &Source,
    output: &Output,
    runs: Option<&Path>,
    tolerance_db: Option<f64>,
    slope_tolerance: Option<f64>,
) -> Result<u8, Error> {
    let mut loaded = load(source)?;
    if let Some(t) = tolerance_db {
        loaded.suite.tolerances = Tolerances {
            slope_db_per_decade: loaded.suite.tolerances.slope_db_per_decade,
            ..Tolerances::uniform(t)
        };
    }
    if let Some(t) = slope_tolerance {
        loaded.suite.tolerances.slope_db_per_decade = t;
    }
    let report_path = (output.out.is_some() || loaded.output_dir.is_some())
        .then(|| out_dir(output, &loaded).join("verify_report.json"));
    if let Some(path) = &report_path {
        io::ensure_writable(path, output.force)?;
    }
    let reports: Vec<CheckReport> = match runs {
        Some(dir) => loaded.suite.verify_from_dir(dir)?,
        None => loaded.suite.verify_simulated()?,
    };
    for r in &reports {
        println!("{}", r.summary_line());
    }
    if let Some(path) = report_path {
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        io::write_atomic(&path, json.as_bytes())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(if all_passed(&reports) {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum { source, output } => cmd_spectrum(source, output),
        Command::Simulate { source, output } => cmd_simulate(source, output),
        Command::Analyze {
            input,
            dark,
            plan,
            source,
            output,
        } => cmd_analyze(input, dark.as_deref(), *plan, source, output),
        Command::Verify {
            source,
            output,
            runs,
            tolerance_db,
            slope_tolerance,
        } => cmd_verify(
            source,
            output,
            runs.as_deref(),
            *tolerance_db,
            *slope_tolerance,
        ),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
