//! `misspec`: run presets and configs, sample limit laws, scan the Kullback-Leibler profile.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use misspec_core::experiments::{McReport, RungSummary, TargetStatus};
use misspec_core::format::decimal;
use misspec_core::limit::{rate_exponent, sample_argmax, ArgmaxLawSpec};
use misspec_core::signal::Family;
use misspec_core::{
    preset, run_scenario, CurvatureRegime, DeterministicProfile, ParamWindow, SignalSpecF64, TimeGrid, PRESET_NAMES,
};

use config::{parse_signal, RunConfig};

const DEFAULT_OUT: &str = "misspec-out";
const CUSP_LABEL: &str = "cusp: limit law out of scope";

#[derive(Parser)]
#[command(
    name = "misspec",
    version,
    about = "Small-noise estimation under misspecified signal regularity"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or config through the Monte Carlo ladder.
    Run(RunArgs),
    /// Sample an argmax limit law to samples.csv.
    LimitSample(LimitArgs),
    /// Tabulate the Kullback-Leibler profile to phi_scan.csv.
    KlScan(KlArgs),
    /// List presets, or print one as a config file.
    Presets {
        /// Print this preset as a full TOML config.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct OutArg {
    /// Output directory [env: MISSPEC_OUT] (default ./misspec-out).
    #[arg(long, env = "MISSPEC_OUT", hide_env = true)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per rung.
    #[arg(long = "N", visible_alias = "replications")]
    replications: Option<usize>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    /// Base grid size.
    #[arg(long)]
    steps: Option<usize>,
    /// Also write the first replication's path at every rung.
    #[arg(long)]
    emit_paths: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawKind {
    Quadratic,
    Power,
    LinearCp,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, value_enum)]
    law: LawKind,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    kappa: Option<f64>,
    /// Lattice step; defaults to U/1000.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct KlArgs {
    /// Take truth, θ0, model, window and horizon from a preset.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline TOML table, e.g. '{ family = "sgn" }'.
    #[arg(long)]
    truth: Option<String>,
    #[arg(long)]
    assumed: Option<String>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    lower: Option<f64>,
    #[arg(long)]
    upper: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 for numerical failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<misspec_core::Error>())
        .map_or(2, |c| if c.is_input_error() { 2 } else { 3 })
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::LimitSample(a) => cmd_limit_sample(a),
        Command::KlScan(a) => cmd_kl_scan(a),
        Command::Presets { show } => cmd_presets(show),
    }
}

fn out_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag.or(config).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = a.preset {
        cfg.preset = Some(p);
    }
    if cfg.preset.is_none() && cfg.scenario.is_none() {
        bail!(misspec_core::Error::InvalidInput(format!(
            "give --preset or --config; presets: {}",
            PRESET_NAMES.join(", ")
        )));
    }
    cfg.seed = a.seed.or(cfg.seed);
    cfg.replications = a.replications.or(cfg.replications);
    cfg.ladder = a.ladder.or(cfg.ladder);
    cfg.steps = a.steps.or(cfg.steps);
    cfg.emit_paths |= a.emit_paths;
    let s = cfg.scenario()?;
    let dir = out_dir(a.out.out, cfg.out.clone())?;

    let started = Instant::now();
    let report = run_scenario(&s)?;
    let elapsed = started.elapsed();

    println!(
        "{}: seed {}, N {}, regime {}, rate exponent {}",
        report.scenario, report.seed, report.replications, report.regime, report.rate_exponent
    );
    if let Some(label) = &report.label {
        println!("  {label}");
    }
    println!(
        "  kl minimizer {}, curvature {}",
        decimal(report.profile.kl_minimizer),
        decimal(report.profile.curvature_oracle)
    );
    for (k, r) in report.rungs.iter().enumerate() {
        println!("{}", rung_line(k, r));
    }
    if let Some(slope) = report.slope {
        println!("  slope {:.4} ± {:.4}", slope, report.slope_stderr.unwrap_or(f64::NAN));
    }
    print_targets(&report);
    for note in &report.notes {
        println!("  note: {note}");
    }

    fs::write(dir.join("report.json"), report.to_json()?).context("writing report.json")?;
    let mut est = create(&dir, "estimates.csv")?;
    report.write_estimates_csv(&mut est)?;
    est.flush()?;
    write_phi_scan(&dir, &report.profile)?;
    if cfg.emit_paths {
        for k in 0..s.ladder.len() {
            let mut w = create(&dir, &format!("path_rung{k}.csv"))?;
            s.sample_path(k, 0)?.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    println!("  wrote {} in {:.1}s", dir.display(), elapsed.as_secs_f64());

    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        println!("FAIL: gating targets not met");
        ExitCode::from(1)
    })
}

fn rung_line(k: usize, r: &RungSummary) -> String {
    let mut line = format!(
        "  rung {k}: eps {} n {} N {} boundary {}/{}",
        r.eps, r.steps, r.replications, r.boundary_hits, r.replications
    );
    if let Some(m) = &r.mle {
        line += &format!(
            " median|err| {:.4e} normalized {:.4}",
            m.median_abs, m.normalized_median_abs
        );
    }
    if r.unreliable {
        line += " (unreliable)";
    }
    line
}

fn print_targets(report: &McReport<f64>) {
    for t in &report.targets {
        let status = match t.status {
            TargetStatus::Pass => "pass",
            TargetStatus::Fail if t.gating => "FAIL",
            TargetStatus::Fail => "fail",
            TargetStatus::Skipped => "skipped",
        };
        let value = t.value.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let soft = match (report.gated, t.gating) {
            (false, _) => " (not gated)",
            (true, false) => " (soft)",
            (true, true) => "",
        };
        print!("  target {}{soft}: {value} {status}", t.name);
        match &t.detail {
            Some(d) => println!(" [{d}]"),
            None => println!(),
        }
    }
}

fn write_phi_scan(dir: &Path, p: &DeterministicProfile<f64>) -> Result<()> {
    let mut w = create(dir, "phi_scan.csv")?;
    writeln!(w, "theta,phi")?;
    for (th, v) in p.scan_theta.iter().zip(&p.scan_phi) {
        writeln!(w, "{},{}", decimal(*th), decimal(*v))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_limit_sample(a: LimitArgs) -> Result<ExitCode> {
    let mut spec = match a.law {
        LawKind::Quadratic => ArgmaxLawSpec::<f64>::quadratic(a.delta, a.gamma)?,
        LawKind::Power => {
            let kappa = a
                .kappa
                .ok_or_else(|| misspec_core::Error::InvalidInput("--kappa is required for the power law".into()))?;
            ArgmaxLawSpec::power(kappa)?
        }
        LawKind::LinearCp => ArgmaxLawSpec::linear_cp(a.delta)?,
    };
    if let Some(step) = a.step {
        spec = spec.with_step(step);
        spec.validate()?;
    }
    let sample = sample_argmax(&spec, a.seed, a.count)?;
    let dir = out_dir(a.out.out, None)?;
    let mut w = create(&dir, "samples.csv")?;
    writeln!(w, "argmax")?;
    for v in &sample.values {
        writeln!(w, "{}", decimal(*v))?;
    }
    w.flush()?;
    println!(
        "{} samples, truncation U = {}, step {}, truncation hits {} ({:.4}%)",
        sample.values.len(),
        decimal(spec.truncation),
        decimal(spec.step),
        sample.truncation_hits,
        100.0 * sample.hit_rate()
    );
    println!("wrote {}", dir.join("samples.csv").display());
    Ok(ExitCode::SUCCESS)
}

struct KlInputs {
    truth: SignalSpecF64,
    theta0: f64,
    assumed: SignalSpecF64,
    window: ParamWindow<f64>,
    grid: TimeGrid<f64>,
    label: Option<String>,
    regime: Option<String>,
}

fn kl_inputs(a: &KlArgs) -> Result<KlInputs> {
    let base = match (&a.preset, &a.config) {
        (Some(name), _) => Some(preset::<f64>(name)?),
        (None, Some(path)) => Some(RunConfig::load(path)?.scenario()?),
        (None, None) => None,
    };
    let missing =
        |what: &str| misspec_core::Error::InvalidInput(format!("kl-scan needs --{what} (or --preset/--config)"));
    let truth = match (&a.truth, &base) {
        (Some(t), _) => parse_signal(t)?,
        (None, Some(s)) => s.truth.clone(),
        (None, None) => bail!(missing("truth")),
    };
    let assumed = match (&a.assumed, &base) {
        (Some(t), _) => parse_signal(t)?,
        (None, Some(s)) => s.assumed.clone(),
        (None, None) => bail!(missing("assumed")),
    };
    let theta0 = a
        .theta0
        .or(base.as_ref().map(|s| s.theta0))
        .ok_or_else(|| missing("theta0"))?;
    let horizon = a.horizon.or(base.as_ref().map(|s| s.grid.horizon)).unwrap_or(1.0);
    let steps = a
        .steps
        .or(base.as_ref().map(|s| s.grid.steps))
        .unwrap_or(misspec_core::experiments::PRESET_STEPS);
    let lower = a
        .lower
        .or(base.as_ref().map(|s| s.window.lower))
        .ok_or_else(|| missing("lower"))?;
    let upper = a
        .upper
        .or(base.as_ref().map(|s| s.window.upper))
        .ok_or_else(|| missing("upper"))?;
    let from_base = a.truth.is_none() && a.assumed.is_none();
    let mut label = base.as_ref().filter(|_| from_base).and_then(|s| s.label.clone());
    if label.is_none() && matches!(assumed.family, Family::Cusp { .. }) {
        label = Some(CUSP_LABEL.to_string());
    }
    let regime = base
        .as_ref()
        .filter(|_| from_base)
        .map(|s| format!("{} (rate exponent {})", s.regime, rate_exponent(&s.regime)));
    Ok(KlInputs {
        truth,
        theta0,
        assumed,
        window: ParamWindow::new(lower, upper),
        grid: TimeGrid::new(horizon, steps)?,
        label,
        regime,
    })
}

fn cmd_kl_scan(a: KlArgs) -> Result<ExitCode> {
    let k = kl_inputs(&a)?;
    if let Some(label) = &k.label {
        println!("regime: {label}");
    } else if let Some(r) = &k.regime {
        println!("regime: {r}");
    }
    let p = DeterministicProfile::compute(&k.assumed, &k.truth, k.theta0, &k.window, &k.grid)?;
    let dir = out_dir(a.out.out, None)?;
    write_phi_scan(&dir, &p)?;
    let curvature = match p.curvature_regime {
        CurvatureRegime::Quadratic => "quadratic",
        CurvatureRegime::NonQuadratic => "non-quadratic",
    };
    println!("theta_hat {}", decimal(p.kl_minimizer));
    println!("phi_min {}", decimal(p.phi_min));
    println!("curvature {} ({curvature})", decimal(p.curvature_oracle));
    match p.necessary_residual {
        Some(r) => println!("necessary-condition residual {}", decimal(r)),
        None => println!("necessary-condition residual n/a"),
    }
    println!(
        "minorant kappa {} ({})",
        decimal(p.minorant_kappa),
        if p.minorant_holds() { "holds" } else { "fails" }
    );
    println!("wrote {}", dir.join("phi_scan.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_presets(show: Option<String>) -> Result<ExitCode> {
    if let Some(name) = show {
        print!("{}", RunConfig::inline_preset(&name)?.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    for name in PRESET_NAMES {
        let s = preset::<f64>(name)?;
        let extra = s.label.map(|l| format!("  ({l})")).unwrap_or_default();
        println!(
            "{name:<24} {:<22} rate ε^{}{extra}",
            s.regime.to_string(),
            rate_exponent(&s.regime)
        );
    }
    Ok(ExitCode::SUCCESS)
}
