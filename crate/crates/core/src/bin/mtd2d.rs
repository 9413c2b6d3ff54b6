//! Command line front end: simulate measurements, compute their moments,
//! recover the image, and run desk-scale sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mtd2d::ctf::{self, CtfSpec};
use mtd2d::experiment::{
    self, gamma_traces, run_sweep, write_csv, write_sweep, Case, ExperimentConfig, ExperimentKind,
    Setup, Snr,
};
use mtd2d::measurement::{
    self, place_occurrences, render_measurement, snr_to_sigma, Manifest, PlacementMode,
    PlacementPolicy, PlacementTarget,
};
use mtd2d::moments::{self, MomentAccumulator, MomentPath, MomentSet};
use mtd2d::recovery::{
    recover, relative_error_alpha, relative_error_gamma, write_pgm, RecoveryOptions,
    SeparationKnowledge,
};
use mtd2d::separation::{separation_functions, SeparationFunctions};
use mtd2d::{CoefficientVector, Complex64, Error, Measurement, Result};

/// Environment variable naming the basis cache directory.
const CACHE_ENV: &str = "MTD2D_CACHE_DIR";

#[derive(Parser)]
#[command(name = "mtd2d", version, about = "Image recovery from many rotated, arbitrarily spaced noisy copies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a measurement and write it with a JSON manifest.
    Simulate(SimulateArgs),
    /// Average the autocorrelations of one or more measurement files.
    Moments(MomentsArgs),
    /// Recover the image from a moment file.
    Recover(RecoverArgs),
    /// Run a sweep from a JSON config, with flag overrides.
    Experiment(ExperimentArgs),
    /// Convolve a measurement with a CTF and undo it in the moment domain.
    CtfDemo(CtfArgs),
}

#[derive(Args)]
struct BasisArgs {
    /// Image radius in pixels.
    #[arg(long = "n", default_value_t = 2.5)]
    radius: f64,
    /// Number of Fourier-Bessel coefficients.
    #[arg(long, default_value_t = 10)]
    coeffs: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    basis: BasisArgs,
    /// Measurement side length.
    #[arg(long = "N", default_value_t = 1000)]
    side: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Number or `inf`.
    #[arg(long, default_value = "inf")]
    snr: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "arbitrary")]
    mode: String,
    /// Coefficients as a JSON list of `[re, im]`; random when omitted.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Output path without extension; writes `.bin`, `.json` and `.sep`.
    #[arg(long, default_value = "measurement")]
    out: PathBuf,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "moments.bin")]
    out: PathBuf,
    /// direct, fft or auto.
    #[arg(long, default_value = "auto")]
    path: String,
}

#[derive(Args)]
struct RecoverArgs {
    #[command(flatten)]
    basis: BasisArgs,
    #[arg(long)]
    moments: PathBuf,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// known, approximated or ignored.
    #[arg(long, default_value = "approximated")]
    case: String,
    /// Separation functions file, needed for `--case known`.
    #[arg(long)]
    separation: Option<PathBuf>,
    /// Side of the surrogate placement used by the approximated case.
    #[arg(long)]
    surrogate_side: Option<usize>,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.09)]
    gamma_init: f64,
    /// Manifest of the simulated truth, to report errors.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "recovery")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// recovery, gamma, size-sweep, snr-sweep or ctf-demo.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long = "n")]
    radius: Option<f64>,
    #[arg(long)]
    coeffs: Option<usize>,
    /// Comma-separated sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Comma-separated SNRs, `inf` for noiseless.
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma_init: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    measurements: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow sizes and trial counts past the desk limits.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args)]
struct CtfArgs {
    #[command(flatten)]
    basis: BasisArgs,
    #[arg(long = "N", default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bispectrum band half-width.
    #[arg(long, default_value_t = 6)]
    band: usize,
    /// Radial text profile; a Gaussian CTF is used when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = "ctf-demo")]
    out: PathBuf,
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

fn placement_mode(s: &str) -> Result<PlacementMode> {
    match s {
        "arbitrary" | "arbitrary-spacing" => Ok(PlacementMode::ArbitrarySpacing),
        "well-separated" | "separated" => Ok(PlacementMode::WellSeparated),
        _ => Err(Error::InvalidParameter(format!("unknown placement mode {s:?}"))),
    }
}

fn moment_path(s: &str) -> Result<MomentPath> {
    match s {
        "direct" => Ok(MomentPath::Direct),
        "fft" => Ok(MomentPath::Fft),
        "auto" => Ok(MomentPath::Auto),
        _ => Err(Error::InvalidParameter(format!("unknown moment path {s:?}"))),
    }
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn coefficients_from_pairs(pairs: &[[f64; 2]]) -> CoefficientVector {
    CoefficientVector {
        values: pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let setup = Setup::new(a.basis.radius, a.basis.coeffs, cache_dir().as_deref())?;
    let snr: Snr = a.snr.parse()?;
    let alpha = match &a.coefficients {
        Some(p) => {
            let pairs: Vec<[f64; 2]> = serde_json::from_str(&fs::read_to_string(p)?)?;
            let alpha = coefficients_from_pairs(&pairs);
            if alpha.values.len() != setup.spec.len() {
                return Err(Error::SizeMismatch(format!(
                    "{} coefficients for a basis of {}",
                    alpha.values.len(),
                    setup.spec.len()
                )));
            }
            if setup.spec.reality_defect(&alpha) > 1e-12 * alpha.norm().max(1.0) {
                return Err(Error::InvalidParameter(
                    "coefficients do not describe a real image".into(),
                ));
            }
            alpha
        }
        None => setup.truth(a.seed),
    };
    let mode = placement_mode(&a.mode)?;
    let policy = PlacementPolicy {
        mode,
        target: PlacementTarget::Density(a.gamma),
    };
    let sigma = snr_to_sigma(&setup.tables, &alpha, snr.0)?;
    let locs = place_occurrences(a.side, a.basis.radius, &policy, a.seed)?;
    let m = render_measurement(a.side, &setup.tables, &alpha, &locs, None, sigma, a.seed)?;
    if let Some(dir) = a.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    m.save(&with_ext(&a.out, "bin"))?;
    separation_functions(&locs, a.basis.radius).save(&with_ext(&a.out, "sep"))?;
    let manifest = Manifest {
        side: a.side,
        radius: a.basis.radius,
        sigma,
        seed: a.seed,
        mode,
        density: measurement::count_to_density(locs.len(), a.side, a.basis.radius),
        count: locs.len(),
        coefficients: alpha.values.iter().map(|c| [c.re, c.im]).collect(),
        placements: m.placements.clone().unwrap_or_default(),
    };
    let doc = json!({
        "command": "simulate",
        "config": {
            "n": a.basis.radius, "coeffs": a.basis.coeffs, "N": a.side, "gamma": a.gamma,
            "snr": snr, "seed": a.seed, "mode": mode,
        },
        "manifest": manifest,
    });
    write_json(&with_ext(&a.out, "json"), &doc)?;
    eprintln!(
        "wrote {} occurrences, sigma {sigma:.6}, to {}",
        locs.len(),
        with_ext(&a.out, "bin").display()
    );
    Ok(())
}

fn compute_moments(a: MomentsArgs) -> Result<()> {
    let path = moment_path(&a.path)?;
    let mut acc = MomentAccumulator::new();
    let mut shape: Option<(usize, f64)> = None;
    for p in &a.inputs {
        let m = Measurement::load(p)?;
        match shape {
            None => shape = Some((m.side, m.radius)),
            Some(s) if s != (m.side, m.radius) => {
                return Err(Error::SizeMismatch(format!(
                    "{} has N = {}, n = {} but earlier files have N = {}, n = {}",
                    p.display(),
                    m.side,
                    m.radius,
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        acc.add(&moments::empirical_ac_with(&m, path)?)?;
    }
    let ms = acc.finish()?;
    ms.save(&a.out)?;
    eprintln!(
        "wrote moments of {} file(s), window {}, a1 = {:.6e}, to {}",
        a.inputs.len(),
        ms.window,
        ms.a1,
        a.out.display()
    );
    Ok(())
}

fn recover_cmd(a: RecoverArgs) -> Result<()> {
    let setup = Setup::new(a.basis.radius, a.basis.coeffs, cache_dir().as_deref())?;
    let targets = MomentSet::load(&a.moments)?;
    let case: Case = a.case.parse()?;
    let knowledge = match case {
        Case::Known => {
            let p = a.separation.as_ref().ok_or_else(|| {
                Error::InvalidParameter("--case known needs --separation".into())
            })?;
            SeparationKnowledge::Known(SeparationFunctions::load(p)?)
        }
        Case::Approximated => SeparationKnowledge::Approximated {
            surrogate_side: a.surrogate_side.unwrap_or(targets.side),
        },
        Case::Ignored => SeparationKnowledge::Ignored,
    };
    let opts = RecoveryOptions {
        starts: a.starts,
        seed: a.seed,
        gamma_init: a.gamma_init,
        ..Default::default()
    };
    let r = recover(&setup.fv, &targets, a.sigma, &knowledge, &opts)?;
    fs::create_dir_all(&a.out)?;
    let mut metrics = serde_json::Map::new();
    let mut phi = 0.0;
    if let Some(t) = &a.truth {
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(t)?)?;
        let manifest: Manifest = serde_json::from_value(doc["manifest"].clone())?;
        let truth = coefficients_from_pairs(&manifest.coefficients);
        let (e, best) = mtd2d::recovery::align_rotation(&setup.spec, &truth, &r.alpha())?;
        phi = best;
        metrics.insert("err_alpha".into(), json!(e));
        metrics.insert(
            "err_gamma".into(),
            json!(relative_error_gamma(manifest.density, r.gamma)?),
        );
        debug_assert!((relative_error_alpha(&setup.spec, &truth, &r.alpha())? - e).abs() < 1e-12);
    }
    let doc = json!({
        "command": "recover",
        "config": {
            "n": a.basis.radius, "coeffs": a.basis.coeffs, "moments": a.moments,
            "sigma": a.sigma, "case": case, "starts": a.starts, "seed": a.seed,
            "gamma_init": a.gamma_init,
        },
        "result": r,
        "metrics": metrics,
    });
    write_json(&a.out.join("result.json"), &doc)?;
    let est = setup.spec.steer(&r.alpha(), phi);
    write_pgm(&a.out.join("estimate.pgm"), &setup.tables.synthesize(&est, 0.0)?, 16)?;
    eprintln!(
        "gamma {:.6}, objective {:.3e}, {} iterations{}",
        r.gamma,
        r.objective,
        r.iterations,
        metrics
            .get("err_alpha")
            .map(|e| format!(", relative error {e}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = &a.experiment {
        cfg.experiment = e.parse()?;
    }
    if let Some(v) = a.radius {
        cfg.radius = v;
    }
    if let Some(v) = a.coeffs {
        cfg.coeffs = v;
    }
    if let Some(v) = &a.sizes {
        cfg.sizes = v.clone();
    }
    if let Some(v) = &a.snrs {
        cfg.snrs = v.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(v) = &a.cases {
        cfg.cases = v.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = a.gamma_init {
        cfg.gamma_init = v;
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.starts {
        cfg.starts = v;
    }
    if let Some(v) = a.measurements {
        cfg.measurements = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = &a.out {
        cfg.output = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut cfg = experiment_config(&a)?;
    if cfg.paper_scale() {
        if !a.paper_scale {
            return Err(Error::InvalidParameter(format!(
                "sizes above {} or more than {} trials are paper-scale; pass --paper-scale",
                experiment::DESK_MAX_SIDE,
                experiment::DESK_MAX_TRIALS
            )));
        }
        eprintln!("warning: paper-scale run; expect many hours and several GB of memory");
    }
    if cfg.experiment == ExperimentKind::CtfDemo {
        return ctf_demo(CtfArgs {
            basis: BasisArgs {
                radius: cfg.radius,
                coeffs: cfg.coeffs,
            },
            side: 64,
            gamma: cfg.gamma,
            seed: cfg.seed,
            band: 6,
            profile: None,
            out: cfg.output.clone(),
        });
    }
    match cfg.experiment {
        ExperimentKind::Recovery | ExperimentKind::Gamma if a.trials.is_none() && a.config.is_none() => {
            cfg.trials = 1;
        }
        _ => {}
    }
    if cfg.experiment == ExperimentKind::Gamma && a.snrs.is_none() && a.config.is_none() {
        cfg.snrs = vec![Snr(0.5)];
    }
    let setup = Setup::new(cfg.radius, cfg.coeffs, cache_dir().as_deref())?;
    let out = run_sweep(&setup, &cfg, &|r| {
        eprintln!(
            "{} N={} snr={} trial={} err_alpha={:.4e} gamma={:.5} ({:.1}s){}",
            r.case,
            r.size,
            r.snr,
            r.trial,
            r.err_alpha,
            r.gamma_est,
            r.seconds,
            if r.failure.is_empty() {
                String::new()
            } else {
                format!(" failure: {}", r.failure)
            }
        )
    })?;
    write_sweep(&cfg.output, &cfg, &out)?;
    match cfg.experiment {
        ExperimentKind::Gamma => {
            write_csv(
                &cfg.output.join("gamma_trace.csv"),
                &["case", "stage", "iteration", "gamma"],
                &gamma_traces(&out),
            )?;
        }
        ExperimentKind::Recovery => {
            let truth = setup.truth(cfg.seed);
            write_pgm(
                &cfg.output.join("truth.pgm"),
                &setup.tables.synthesize(&truth, 0.0)?,
                16,
            )?;
            for (rec, res) in out.records.iter().zip(&out.results) {
                if let Some(r) = res {
                    let (_, phi) = mtd2d::recovery::align_rotation(&setup.spec, &truth, &r.alpha())?;
                    let est = setup.spec.steer(&r.alpha(), phi);
                    let name = format!("estimate_{}_{}_{}.pgm", rec.case, rec.size, rec.snr);
                    write_pgm(&cfg.output.join(name), &setup.tables.synthesize(&est, 0.0)?, 16)?;
                }
            }
        }
        _ => {}
    }
    for row in &out.summary {
        println!(
            "{} {} N={} snr={} median_err_alpha={:.4e} median_err_gamma={:.4e} failures={}",
            row.experiment,
            row.case,
            row.size,
            row.snr,
            row.median_err_alpha,
            row.median_err_gamma,
            row.failures
        );
    }
    Ok(())
}

fn ctf_demo(a: CtfArgs) -> Result<()> {
    let setup = Setup::new(a.basis.radius, a.basis.coeffs, cache_dir().as_deref())?;
    let truth = setup.truth(a.seed);
    let policy = PlacementPolicy {
        mode: PlacementMode::ArbitrarySpacing,
        target: PlacementTarget::Density(a.gamma),
    };
    let locs = place_occurrences(a.side, a.basis.radius, &policy, a.seed)?;
    let m = render_measurement(a.side, &setup.tables, &truth, &locs, None, 0.0, a.seed)?;
    let h = match &a.profile {
        Some(p) => CtfSpec::load_profile(a.side, p)?,
        None => ctf::gaussian_ctf(a.side, 0.25, 0.05),
    };
    let y = ctf::apply_ctf(&m.grid, a.side, &h)?;
    let reference = ctf::moment_transforms(&m.grid, a.side, a.band)?;
    let observed = ctf::moment_transforms(&y, a.side, a.band)?;
    let recovered = ctf::deconvolve_moments(&observed, &h)?;
    let err = ctf::transforms_relative_error(&recovered, &reference);
    let blurred_err = ctf::transforms_relative_error(&observed, &reference);
    let zero = ctf::oscillating_ctf(a.side, 8.0 / a.side as f64);
    let rejected = match ctf::deconvolve_moments(&ctf::moment_transforms(&y, a.side, a.band)?, &zero) {
        Err(Error::InadmissibleCtf { offending, .. }) => offending.len(),
        Err(e) => return Err(e),
        Ok(_) => 0,
    };
    fs::create_dir_all(&a.out)?;
    let doc = json!({
        "command": "ctf-demo",
        "config": {"n": a.basis.radius, "coeffs": a.basis.coeffs, "N": a.side, "gamma": a.gamma,
                   "seed": a.seed, "band": a.band, "profile": a.profile},
        "relative_error_before": blurred_err,
        "relative_error_after": err,
        "zero_crossing_ctf_offending_frequencies": rejected,
    });
    write_json(&a.out.join("ctf_demo.json"), &doc)?;
    println!(
        "moment statistics: relative error {blurred_err:.3e} with the CTF, {err:.3e} after deconvolution; \
         zero-crossing CTF rejected at {rejected} frequencies"
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Moments(a) => compute_moments(a),
        Command::Recover(a) => recover_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
        Command::CtfDemo(a) => ctf_demo(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
