//! Desk-scale sweeps: recovery error against measurement size or SNR for
//! the three separation-knowledge cases, plus a density-trace run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::basis::{BasisSpec, BasisTables, CoefficientVector};
use crate::error::{Error, Result};
use crate::image_moments::FreqVectors;
use crate::measurement::{
    count_to_density, place_occurrences, render_measurement, snr_to_sigma, PlacementMode,
    PlacementPolicy, PlacementTarget,
};
use crate::moments::{empirical_ac, MomentAccumulator, MomentSet};
use crate::recovery::{
    recover, relative_error_alpha, relative_error_gamma, RecoveryOptions, RecoveryResult,
    SeparationKnowledge,
};
use crate::separation::separation_functions;

/// Signal-to-noise ratio; `inf` means noiseless. Serialized as a number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Snr(pub f64);

impl Snr {
    pub const NOISELESS: Snr = Snr(f64::INFINITY);
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Snr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" => f64::INFINITY,
            t => t
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("snr {s:?}")))?,
        };
        if v.is_nan() || v <= 0.0 {
            return Err(Error::InvalidParameter(format!("snr {s:?} must be positive")));
        }
        Ok(Snr(v))
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let v = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(t) => return t.parse().map_err(serde::de::Error::custom),
        };
        if v.is_nan() || v <= 0.0 {
            return Err(serde::de::Error::custom(format!("snr {v} must be positive")));
        }
        Ok(Snr(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// Separation functions from the true placements.
    Known,
    /// Two-stage recovery with surrogate separation functions.
    Approximated,
    /// Well-separated model on arbitrarily spaced data.
    Ignored,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Known, Case::Approximated, Case::Ignored];

    pub fn name(self) -> &'static str {
        match self {
            Case::Known => "known",
            Case::Approximated => "approximated",
            Case::Ignored => "ignored",
        }
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" | "a" => Ok(Case::Known),
            "approximated" | "b" => Ok(Case::Approximated),
            "ignored" | "c" => Ok(Case::Ignored),
            _ => Err(Error::InvalidParameter(format!("unknown case {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// One recovery per SNR, with images of the truth and the estimate.
    Recovery,
    /// Density estimate through the iterations for each case.
    Gamma,
    SizeSweep,
    SnrSweep,
    CtfDemo,
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recovery" => Ok(Self::Recovery),
            "gamma" => Ok(Self::Gamma),
            "size-sweep" => Ok(Self::SizeSweep),
            "snr-sweep" => Ok(Self::SnrSweep),
            "ctf-demo" => Ok(Self::CtfDemo),
            _ => Err(Error::InvalidParameter(format!("unknown experiment {s:?}"))),
        }
    }
}

/// Sizes or trial counts beyond these get a runtime warning.
pub const DESK_MAX_SIDE: usize = 8000;
pub const DESK_MAX_TRIALS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub radius: f64,
    pub coeffs: usize,
    pub sizes: Vec<usize>,
    pub snrs: Vec<Snr>,
    pub gamma: f64,
    pub gamma_init: f64,
    pub cases: Vec<Case>,
    pub trials: usize,
    pub starts: usize,
    /// Measurements averaged per trial.
    pub measurements: usize,
    pub seed: u64,
    pub workers: usize,
    pub output: PathBuf,
    /// Keep the same image across trials.
    pub fixed_image: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::SizeSweep,
            radius: 2.5,
            coeffs: 10,
            sizes: vec![1000, 2000, 4000],
            snrs: vec![Snr::NOISELESS],
            gamma: 0.1,
            gamma_init: 0.09,
            cases: Case::ALL.to_vec(),
            trials: 10,
            starts: 5,
            measurements: 1,
            seed: 0,
            workers: 1,
            output: PathBuf::from("results"),
            fixed_image: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.sizes.is_empty() {
            return bad("size list is empty");
        }
        if self.snrs.is_empty() {
            return bad("SNR list is empty");
        }
        if self.cases.is_empty() {
            return bad("case list is empty");
        }
        if self.trials == 0 || self.starts == 0 || self.measurements == 0 {
            return bad("trials, starts and measurements must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.gamma_init > 0.0 && self.gamma_init < 1.0) {
            return bad("gamma_init must lie in (0, 1)");
        }
        if !(self.radius >= 1.0) || self.coeffs == 0 {
            return bad("radius must be at least 1 and coeffs positive");
        }
        Ok(())
    }

    /// True when the run exceeds what the desk defaults are sized for.
    pub fn paper_scale(&self) -> bool {
        self.sizes.iter().any(|&n| n > DESK_MAX_SIDE) || self.trials > DESK_MAX_TRIALS
    }
}

/// One recovery in a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub case: String,
    pub size: usize,
    pub snr: String,
    pub gamma_true: f64,
    pub trial: usize,
    pub seed: u64,
    pub err_alpha: f64,
    pub err_gamma: f64,
    pub gamma_est: f64,
    pub objective: f64,
    pub iterations: usize,
    pub stop: String,
    pub failure: String,
    pub seconds: f64,
}

/// Column order of the per-trial CSV.
pub const TRIAL_COLUMNS: [&str; 15] = [
    "experiment",
    "case",
    "size",
    "snr",
    "gamma_true",
    "trial",
    "seed",
    "err_alpha",
    "err_gamma",
    "gamma_est",
    "objective",
    "iterations",
    "stop",
    "failure",
    "seconds",
];

/// Aggregate over the trials of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub case: String,
    pub size: usize,
    pub snr: String,
    pub trials: usize,
    pub failures: usize,
    pub median_err_alpha: f64,
    pub mean_err_alpha: f64,
    pub median_err_gamma: f64,
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "experiment",
    "case",
    "size",
    "snr",
    "trials",
    "failures",
    "median_err_alpha",
    "mean_err_alpha",
    "median_err_gamma",
];

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Seed of one trial, mixed so neighbouring indices give unrelated streams.
pub fn trial_seed(base: u64, size: usize, snr_index: usize, trial: usize) -> u64 {
    let mut z = base
        ^ (size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (snr_index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (trial as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A simulated trial: moments of the measurements and what the cases need.
pub struct TrialData {
    pub truth: CoefficientVector,
    pub gamma: f64,
    pub sigma: f64,
    pub moments: MomentSet,
    pub known: SeparationKnowledge,
}

pub fn simulate_trial(
    tables: &BasisTables,
    truth: &CoefficientVector,
    side: usize,
    gamma: f64,
    snr: Snr,
    measurements: usize,
    seed: u64,
) -> Result<TrialData> {
    let radius = tables.spec.radius;
    let sigma = snr_to_sigma(tables, truth, snr.0)?;
    let policy = PlacementPolicy {
        mode: PlacementMode::ArbitrarySpacing,
        target: PlacementTarget::Density(gamma),
    };
    let mut acc = MomentAccumulator::new();
    let mut all_locs = Vec::new();
    let mut count = 0;
    for m in 0..measurements {
        let s = seed.wrapping_add(m as u64 * 7919);
        let locs = place_occurrences(side, radius, &policy, s)?;
        let meas = render_measurement(side, tables, truth, &locs, None, sigma, s)?;
        acc.add(&empirical_ac(&meas)?)?;
        count += locs.len();
        // offsets between different measurements never coincide
        let shift = (m * (side + 64)) as i64;
        all_locs.extend(locs.into_iter().map(|(r, c)| (r + shift, c)));
    }
    let sep = separation_functions(&all_locs, radius);
    Ok(TrialData {
        truth: truth.clone(),
        gamma: count_to_density(count, side, radius) / measurements as f64,
        sigma,
        moments: acc.finish()?,
        known: SeparationKnowledge::Known(sep),
    })
}

/// Everything a sweep needs that does not depend on the trial.
pub struct Setup {
    pub spec: BasisSpec,
    pub tables: BasisTables,
    pub fv: FreqVectors,
}

impl Setup {
    pub fn new(radius: f64, coeffs: usize, cache: Option<&Path>) -> Result<Self> {
        let spec = BasisSpec::with_count(radius, coeffs)?;
        let tables = BasisTables::load_or_build(&spec, cache)?;
        let fv = FreqVectors::new(&tables);
        Ok(Self { spec, tables, fv })
    }

    pub fn truth(&self, seed: u64) -> CoefficientVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.spec.random(&mut rng)
    }
}

pub struct CaseOutcome {
    pub record: TrialRecord,
    pub result: Option<RecoveryResult>,
}

fn run_case(
    setup: &Setup,
    data: &TrialData,
    case: Case,
    cfg: &ExperimentConfig,
    point: (usize, Snr, usize, u64),
) -> CaseOutcome {
    let (size, snr, trial, seed) = point;
    let knowledge = match case {
        Case::Known => data.known.clone(),
        Case::Approximated => SeparationKnowledge::Approximated {
            surrogate_side: size,
        },
        Case::Ignored => SeparationKnowledge::Ignored,
    };
    let opts = RecoveryOptions {
        starts: cfg.starts,
        seed,
        gamma_init: cfg.gamma_init,
        ..Default::default()
    };
    let t = Instant::now();
    let res = recover(&setup.fv, &data.moments, data.sigma, &knowledge, &opts);
    let seconds = t.elapsed().as_secs_f64();
    let mut record = TrialRecord {
        experiment: experiment_label(cfg.experiment).into(),
        case: case.name().into(),
        size,
        snr: snr.to_string(),
        gamma_true: data.gamma,
        trial,
        seed,
        err_alpha: f64::NAN,
        err_gamma: f64::NAN,
        gamma_est: f64::NAN,
        objective: f64::NAN,
        iterations: 0,
        stop: String::new(),
        failure: String::new(),
        seconds,
    };
    match res {
        Ok(r) => {
            record.err_alpha =
                relative_error_alpha(&setup.spec, &data.truth, &r.alpha()).unwrap_or(f64::NAN);
            record.err_gamma = relative_error_gamma(data.gamma, r.gamma).unwrap_or(f64::NAN);
            record.gamma_est = r.gamma;
            record.objective = r.objective;
            record.iterations = r.iterations;
            record.stop = serde_json::to_value(r.stop)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            record.failure = r.failure.clone().unwrap_or_default();
            CaseOutcome {
                record,
                result: Some(r),
            }
        }
        Err(e) => {
            record.failure = e.to_string();
            CaseOutcome {
                record,
                result: None,
            }
        }
    }
}

pub fn experiment_label(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Recovery => "recovery",
        ExperimentKind::Gamma => "gamma",
        ExperimentKind::SizeSweep => "size-sweep",
        ExperimentKind::SnrSweep => "snr-sweep",
        ExperimentKind::CtfDemo => "ctf-demo",
    }
}

/// Result of a sweep, in a deterministic order.
pub struct SweepOutput {
    pub records: Vec<TrialRecord>,
    pub results: Vec<Option<RecoveryResult>>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every (size, snr, trial) point for every configured case. Points
/// are spread over `cfg.workers` threads; each point is seeded on its own,
/// so the output does not depend on the worker count.
pub fn run_sweep(
    setup: &Setup,
    cfg: &ExperimentConfig,
    progress: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<SweepOutput> {
    cfg.validate()?;
    let mut points = Vec::new();
    for &size in &cfg.sizes {
        for (si, &snr) in cfg.snrs.iter().enumerate() {
            for trial in 0..cfg.trials {
                points.push((size, si, snr, trial));
            }
        }
    }
    let fixed = setup.truth(cfg.seed);
    let next = Mutex::new(0usize);
    let done: Mutex<Vec<(usize, Vec<CaseOutcome>)>> = Mutex::new(Vec::new());
    let first_err: Mutex<Option<Error>> = Mutex::new(None);
    let worker = || loop {
        let i = {
            let mut n = next.lock().unwrap();
            let i = *n;
            *n += 1;
            i
        };
        if i >= points.len() || first_err.lock().unwrap().is_some() {
            break;
        }
        let (size, si, snr, trial) = points[i];
        let seed = trial_seed(cfg.seed, size, si, trial);
        let truth = if cfg.fixed_image {
            fixed.clone()
        } else {
            setup.truth(seed)
        };
        let data = match simulate_trial(
            &setup.tables,
            &truth,
            size,
            cfg.gamma,
            snr,
            cfg.measurements,
            seed,
        ) {
            Ok(d) => d,
            Err(e) => {
                first_err.lock().unwrap().get_or_insert(e);
                break;
            }
        };
        let outs: Vec<CaseOutcome> = cfg
            .cases
            .iter()
            .map(|&c| {
                let o = run_case(setup, &data, c, cfg, (size, snr, trial, seed));
                progress(&o.record);
                o
            })
            .collect();
        done.lock().unwrap().push((i, outs));
    };
    std::thread::scope(|s| {
        for _ in 1..cfg.workers.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    if let Some(e) = first_err.into_inner().unwrap() {
        return Err(e);
    }
    let mut done = done.into_inner().unwrap();
    done.sort_by_key(|(i, _)| *i);
    let mut records = Vec::new();
    let mut results = Vec::new();
    for (_, outs) in done {
        for o in outs {
            records.push(o.record);
            results.push(o.result);
        }
    }
    let summary = summarize(cfg, &records);
    Ok(SweepOutput {
        records,
        results,
        summary,
    })
}

pub fn summarize(cfg: &ExperimentConfig, records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        for snr in &cfg.snrs {
            for &case in &cfg.cases {
                let sel: Vec<&TrialRecord> = records
                    .iter()
                    .filter(|r| r.size == size && r.snr == snr.to_string() && r.case == case.name())
                    .collect();
                if sel.is_empty() {
                    continue;
                }
                let ok: Vec<&&TrialRecord> = sel.iter().filter(|r| r.err_alpha.is_finite()).collect();
                let ea: Vec<f64> = ok.iter().map(|r| r.err_alpha).collect();
                let eg: Vec<f64> = ok.iter().map(|r| r.err_gamma).collect();
                rows.push(SummaryRow {
                    experiment: experiment_label(cfg.experiment).into(),
                    case: case.name().into(),
                    size,
                    snr: snr.to_string(),
                    trials: sel.len(),
                    failures: sel.iter().filter(|r| !r.failure.is_empty()).count(),
                    median_err_alpha: median(&ea),
                    mean_err_alpha: if ea.is_empty() {
                        f64::NAN
                    } else {
                        ea.iter().sum::<f64>() / ea.len() as f64
                    },
                    median_err_gamma: median(&eg),
                });
            }
        }
    }
    rows
}

/// Writes rows with a serde-derived header; `columns` pins the expected order.
pub fn write_csv<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(columns).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Per-trial JSON with the full configuration for provenance.
#[derive(Serialize)]
struct TrialFile<'a> {
    config: &'a ExperimentConfig,
    record: &'a TrialRecord,
    result: &'a Option<RecoveryResult>,
}

/// Writes `trials.csv`, `summary.csv`, `config.json` and one JSON per trial.
pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, out: &SweepOutput) -> Result<()> {
    fs::create_dir_all(dir.join("trials"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    write_csv(&dir.join("trials.csv"), &TRIAL_COLUMNS, &out.records)?;
    write_csv(&dir.join("summary.csv"), &SUMMARY_COLUMNS, &out.summary)?;
    for (rec, res) in out.records.iter().zip(&out.results) {
        let name = format!(
            "{}_{}_{}_{}_{:03}.json",
            rec.experiment, rec.case, rec.size, rec.snr, rec.trial
        );
        let file = TrialFile {
            config: cfg,
            record: rec,
            result: res,
        };
        fs::write(dir.join("trials").join(name), serde_json::to_string_pretty(&file)?)?;
    }
    Ok(())
}

/// Density estimate per iteration for one case, as `(iteration, gamma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTraceRow {
    pub case: String,
    pub stage: String,
    pub iteration: usize,
    pub gamma: f64,
}

pub fn gamma_traces(out: &SweepOutput) -> Vec<GammaTraceRow> {
    let mut rows = Vec::new();
    for (rec, res) in out.records.iter().zip(&out.results) {
        let Some(r) = res else { continue };
        let mut it = 0;
        for st in &r.stages {
            for (k, &g) in st.gamma.iter().enumerate() {
                if k == 0 && it > 0 {
                    continue;
                }
                rows.push(GammaTraceRow {
                    case: rec.case.clone(),
                    stage: st.name.clone(),
                    iteration: it,
                    gamma: g,
                });
                it += 1;
            }
        }
    }
    rows
}
