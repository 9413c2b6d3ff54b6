//! Least-squares fit of predicted to empirical autocorrelations, solved by
//! BFGS over the free coefficient parameters and the density.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, CoefficientVector, ImageGrid};
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ForwardPrediction, DENSITY_TO_OCCUPANCY};
use crate::image_moments::FreqVectors;
use crate::moments::MomentSet;
use crate::separation::{approximate_separation, SeparationFunctions};

/// Residual weights: `1/2`, `1/(2 |L|)` and `1/(2 |L|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Weights {
    pub fn for_window(window: usize) -> Self {
        let n2 = (window * window) as f64;
        Self {
            w1: 0.5,
            w2: 0.5 / n2,
            w3: 0.5 / (n2 * n2),
        }
    }
}

/// Objective over the flat parameter vector `[free coefficients..., gamma]`.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub fv: &'a FreqVectors,
    pub targets: &'a MomentSet,
    pub model: ForwardModel,
    pub weights: Weights,
}

impl<'a> Objective<'a> {
    pub fn new(
        fv: &'a FreqVectors,
        targets: &'a MomentSet,
        sigma: f64,
        sep: Option<&SeparationFunctions>,
    ) -> Result<Self> {
        let model = ForwardModel::new(fv.tables.spec.radius, sigma, sep)?;
        if targets.window != model.window {
            return Err(Error::SizeMismatch(format!(
                "moment window {} but basis window {}",
                targets.window, model.window
            )));
        }
        if !targets.is_finite() {
            return Err(Error::NonFinite("target moments".into()));
        }
        Ok(Self {
            fv,
            targets,
            weights: Weights::for_window(model.window),
            model,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.fv.tables.spec
    }

    pub fn num_params(&self) -> usize {
        self.spec().num_free() + 1
    }

    pub fn pack(&self, alpha: &CoefficientVector, gamma: f64) -> Vec<f64> {
        let mut x = self.spec().to_free(alpha);
        x.push(gamma);
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (CoefficientVector, f64) {
        let nf = self.spec().num_free();
        (self.spec().from_free(&x[..nf]), x[nf])
    }

    fn residuals(&self, p: &ForwardPrediction) -> ForwardPrediction {
        ForwardPrediction {
            window: p.window,
            a1: p.a1 - self.targets.a1,
            a2: p.a2.iter().zip(&self.targets.a2).map(|(a, b)| a - b).collect(),
            a3: p.a3.iter().zip(&self.targets.a3).map(|(a, b)| a - b).collect(),
        }
    }

    fn weighted(&self, e: &ForwardPrediction) -> f64 {
        let w = self.weights;
        w.w1 * e.a1 * e.a1
            + w.w2 * e.a2.iter().map(|v| v * v).sum::<f64>()
            + w.w3 * e.a3.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn value_at(&self, alpha: &CoefficientVector, gamma: f64) -> Result<f64> {
        let s = self.fv.spatial(alpha);
        let f = self.weighted(&self.residuals(&self.model.predict(gamma, &s)));
        if !f.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        Ok(f)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let (a, g) = self.unpack(x);
        self.value_at(&a, g)
    }

    /// Value and gradient with respect to the free parameters and `gamma`.
    pub fn value_grad_at(&self, alpha: &CoefficientVector, gamma: f64) -> Result<(f64, Vec<f64>)> {
        let fields = self.fv.fields(alpha);
        let (s, _) = self.fv.to_spatial(&self.fv.moments_with_fields(alpha, &fields));
        let e = self.residuals(&self.model.predict(gamma, &s));
        let f = self.weighted(&e);
        if !f.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        let w = self.weights;
        let r = ForwardPrediction {
            window: e.window,
            a1: 2.0 * w.w1 * e.a1,
            a2: e.a2.iter().map(|v| 2.0 * w.w2 * v).collect(),
            a3: e.a3.iter().map(|v| 2.0 * w.w3 * v).collect(),
        };
        let (adj, dgamma) = self.model.adjoint(gamma, &s, &r);
        let g = self.fv.vjp_with_fields(&fields, &adj);
        let mut grad = self.spec().realify_gradient(&g);
        grad.push(dgamma);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective gradient".into()));
        }
        Ok((f, grad))
    }

    pub fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, g) = self.unpack(x);
        self.value_grad_at(&a, g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    /// Relative decrease stayed below `ftol` for `stall_window` steps.
    Stalled,
    MaxIterations,
    /// The monitor callback asked to stop.
    Monitor,
    /// No decrease found along the search direction.
    LineSearchFailed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this fraction of its initial value.
    pub grad_tol: f64,
    pub ftol: f64,
    pub stall_window: usize,
    pub max_halvings: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 400,
            grad_tol: 1e-9,
            ftol: 1e-11,
            stall_window: 5,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    /// Objective value after each accepted step, starting with the initial one.
    pub values: Vec<f64>,
    /// Last coordinate after each accepted step.
    pub last_coordinate: Vec<f64>,
}

const ARMIJO_C: f64 = 1e-4;

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking (halving). The inverse Hessian is reset to
/// the identity whenever the curvature condition fails or the direction is
/// not a descent direction. `monitor` sees the iteration count and current
/// point after each step and may stop early.
pub fn minimize<F>(
    mut fg: F,
    x0: &[f64],
    opts: &MinimizeOptions,
    monitor: &mut dyn FnMut(usize, &[f64]) -> bool,
) -> Result<MinimizeOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x)?;
    let mut evaluations = 1;
    let g0 = dotv(&g, &g).sqrt();
    let mut h = identity(n, 1.0);
    let mut fresh = true;
    let mut values = vec![f];
    let mut last = vec![x[n - 1]];
    let mut iterations = 0;
    let mut stalled = 0;
    let stop = loop {
        let gn = dotv(&g, &g).sqrt();
        if gn <= opts.grad_tol * g0 || gn == 0.0 {
            break StopReason::GradientTolerance;
        }
        if stalled >= opts.stall_window.max(1) {
            break StopReason::Stalled;
        }
        if iterations >= opts.max_iters {
            break StopReason::MaxIterations;
        }
        let mut p = matvec(&h, &g, n);
        p.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dotv(&g, &p);
        if !(slope < 0.0) {
            h = identity(n, 1.0);
            p = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
            fresh = true;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_halvings {
            let xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            evaluations += 1;
            if let Ok((ft, gt)) = fg(&xt) {
                if ft <= f + ARMIJO_C * t * slope {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if !fresh {
                // retry once along steepest descent before giving up
                h = identity(n, 1.0);
                fresh = true;
                continue;
            }
            break StopReason::LineSearchFailed;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotv(&s, &y);
        if sy > 1e-12 * dotv(&s, &s).sqrt() * dotv(&y, &y).sqrt() && sy > 0.0 {
            if fresh {
                h = identity(n, sy / dotv(&y, &y));
            }
            bfgs_update(&mut h, &s, &y, sy, n);
            fresh = false;
        } else {
            h = identity(n, 1.0);
            fresh = true;
        }
        if f - fnew <= opts.ftol * f.abs() {
            stalled += 1;
        } else {
            stalled = 0;
        }
        x = xn;
        f = fnew;
        g = gnew;
        iterations += 1;
        values.push(f);
        last.push(x[n - 1]);
        if monitor(iterations, &x) {
            break StopReason::Monitor;
        }
    };
    Ok(MinimizeOutcome {
        grad_norm: dotv(&g, &g).sqrt(),
        x,
        value: f,
        iterations,
        evaluations,
        stop,
        values,
        last_coordinate: last,
    })
}

fn identity(n: usize, s: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = s;
    }
    m
}

fn matvec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dotv(&m[i * n..(i + 1) * n], v)).collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    let hy = matvec(h, y, n);
    let yhy = dotv(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// How the separation functions enter a recovery.
#[derive(Clone, Debug)]
pub enum SeparationKnowledge {
    /// Fixed, e.g. computed from the true placements.
    Known(SeparationFunctions),
    /// Estimated from surrogate placements in two stages.
    Approximated { surrogate_side: usize },
    /// Well-separated model.
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub starts: usize,
    pub seed: u64,
    pub gamma_init: f64,
    pub minimize: MinimizeOptions,
    /// Stage one stops once `|gamma_k - gamma_{k-window}| < tol |gamma_k|`.
    pub stage1_window: usize,
    pub stage1_tol: f64,
    pub stage1_max_iters: usize,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0,
            gamma_init: 0.09,
            minimize: MinimizeOptions::default(),
            stage1_window: 10,
            stage1_tol: 1e-3,
            stage1_max_iters: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub name: String,
    pub iterations: usize,
    pub stop: StopReason,
    pub gamma: Vec<f64>,
    pub objective: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    /// `[re, im]` per entry of the index set.
    pub coefficients: Vec<[f64; 2]>,
    pub gamma: f64,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub stop: StopReason,
    /// Line search failed before the gradient tolerance was met.
    pub degraded: bool,
    /// Set when stage one drove `gamma` out of `(0, 0.5]`.
    pub failure: Option<String>,
    pub start: usize,
    pub stages: Vec<StageTrace>,
}

impl RecoveryResult {
    pub fn alpha(&self) -> CoefficientVector {
        CoefficientVector {
            values: self
                .coefficients
                .iter()
                .map(|c| Complex64::new(c[0], c[1]))
                .collect(),
        }
    }

    fn from_outcome(obj: &Objective, out: &MinimizeOutcome, stages: Vec<StageTrace>, start: usize) -> Self {
        let (alpha, gamma) = obj.unpack(&out.x);
        Self {
            coefficients: alpha.values.iter().map(|c| [c.re, c.im]).collect(),
            gamma,
            objective: out.value,
            iterations: stages.iter().map(|s| s.iterations).sum(),
            grad_norm: out.grad_norm,
            stop: out.stop,
            degraded: out.stop == StopReason::LineSearchFailed,
            failure: None,
            start,
            stages,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }
}

fn trace(name: &str, out: &MinimizeOutcome) -> StageTrace {
    StageTrace {
        name: name.into(),
        iterations: out.iterations,
        stop: out.stop,
        gamma: out.last_coordinate.clone(),
        objective: out.values.clone(),
    }
}

/// Minimize with fixed separation functions (or none).
pub fn minimize_objective(
    obj: &Objective,
    alpha0: &CoefficientVector,
    gamma0: f64,
    opts: &MinimizeOptions,
) -> Result<RecoveryResult> {
    let x0 = obj.pack(alpha0, gamma0);
    let out = minimize(|x| obj.value_grad(x), &x0, opts, &mut |_, _| false)?;
    Ok(RecoveryResult::from_outcome(obj, &out, vec![trace("fixed", &out)], 0))
}

/// Two-stage recovery: fit with surrogate separation functions at
/// `gamma_init` until `gamma` settles, then refit with surrogates drawn at
/// the estimated density.
#[allow(clippy::too_many_arguments)]
pub fn algorithm1(
    fv: &FreqVectors,
    targets: &MomentSet,
    sigma: f64,
    gamma_init: f64,
    alpha_init: &CoefficientVector,
    surrogate_side: usize,
    seed: u64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    let radius = fv.tables.spec.radius;
    let sep1 = approximate_separation(gamma_init, surrogate_side, radius, seed)?;
    let obj1 = Objective::new(fv, targets, sigma, Some(&sep1))?;
    let x0 = obj1.pack(alpha_init, gamma_init);
    let stage1_opts = MinimizeOptions {
        max_iters: opts.stage1_max_iters,
        ..opts.minimize
    };
    let win = opts.stage1_window.max(1);
    let mut gammas: Vec<f64> = vec![gamma_init];
    let nf = obj1.num_params() - 1;
    let out1 = minimize(
        |x| obj1.value_grad(x),
        &x0,
        &stage1_opts,
        &mut |_, x| {
            gammas.push(x[nf]);
            let k = gammas.len();
            k > win && {
                let (now, then) = (gammas[k - 1], gammas[k - 1 - win]);
                (now - then).abs() < opts.stage1_tol * now.abs()
            }
        },
    )?;
    let gamma1 = out1.x[nf];
    let mut stages = vec![trace("stage1", &out1)];
    if !(gamma1 > 0.0 && gamma1 <= 0.5) {
        let mut r = RecoveryResult::from_outcome(&obj1, &out1, stages, 0);
        r.failure = Some(format!("stage one density estimate {gamma1} left (0, 0.5]"));
        return Ok(r);
    }
    let sep2 = approximate_separation(gamma1, surrogate_side, radius, seed.wrapping_add(1))?;
    let obj2 = Objective::new(fv, targets, sigma, Some(&sep2))?;
    let out2 = minimize(|x| obj2.value_grad(x), &out1.x, &opts.minimize, &mut |_, _| false)?;
    stages.push(trace("stage2", &out2));
    Ok(RecoveryResult::from_outcome(&obj2, &out2, stages, 0))
}

/// Random start: standard normal free parameters scaled so the image energy
/// matches what `a2[0] - sigma^2` implies at density `gamma_init`.
pub fn initial_guess(
    fv: &FreqVectors,
    targets: &MomentSet,
    sigma: f64,
    gamma_init: f64,
    seed: u64,
) -> Result<CoefficientVector> {
    let spec = &fv.tables.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = spec.random(&mut rng);
    let energy = fv.tables.synthesize(&alpha, 0.0)?.energy();
    let n = spec.radius;
    let want = (targets.a2[0] - sigma * sigma) * 4.0 * n * n / (DENSITY_TO_OCCUPANCY * gamma_init);
    if want > 0.0 && energy > 0.0 && want.is_finite() {
        Ok(alpha.scale((want / energy).sqrt()))
    } else {
        Ok(alpha)
    }
}

/// Runs `opts.starts` random starts and keeps the one with the smallest
/// final objective. Starts that fail numerically or diverge in stage one
/// are skipped unless all of them do.
pub fn recover(
    fv: &FreqVectors,
    targets: &MomentSet,
    sigma: f64,
    knowledge: &SeparationKnowledge,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    let mut best: Option<RecoveryResult> = None;
    let mut fallback: Option<RecoveryResult> = None;
    let mut last_err = None;
    for start in 0..opts.starts.max(1) {
        let seed = opts.seed.wrapping_mul(1000).wrapping_add(start as u64);
        let alpha0 = initial_guess(fv, targets, sigma, opts.gamma_init, seed)?;
        let res = match knowledge {
            SeparationKnowledge::Known(sep) => {
                let obj = Objective::new(fv, targets, sigma, Some(sep))?;
                minimize_objective(&obj, &alpha0, opts.gamma_init, &opts.minimize)
            }
            SeparationKnowledge::Ignored => {
                let obj = Objective::new(fv, targets, sigma, None)?;
                minimize_objective(&obj, &alpha0, opts.gamma_init, &opts.minimize)
            }
            SeparationKnowledge::Approximated { surrogate_side } => algorithm1(
                fv,
                targets,
                sigma,
                opts.gamma_init,
                &alpha0,
                *surrogate_side,
                seed,
                opts,
            ),
        };
        match res {
            Ok(mut r) => {
                r.start = start;
                let slot = if r.failure.is_none() { &mut best } else { &mut fallback };
                if slot.as_ref().is_none_or(|b| r.objective < b.objective) {
                    *slot = Some(r);
                }
            }
            Err(e @ Error::NonFinite(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.or(fallback)
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::NonFinite("every start".into())))
}

const ALIGN_GRID: usize = 1024;

/// `min_phi ||truth - steer(est, phi)|| / ||truth||` and the minimizing angle.
pub fn align_rotation(spec: &BasisSpec, truth: &CoefficientVector, est: &CoefficientVector) -> Result<(f64, f64)> {
    let tn = truth.norm();
    if tn == 0.0 {
        return Err(Error::InvalidParameter("true coefficients are zero".into()));
    }
    if truth.values.len() != est.values.len() {
        return Err(Error::SizeMismatch("coefficient lengths differ".into()));
    }
    let dist = |phi: f64| -> f64 {
        let s = spec.steer(est, phi);
        truth
            .values
            .iter()
            .zip(&s.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
    };
    let step = 2.0 * PI / ALIGN_GRID as f64;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..ALIGN_GRID {
        let phi = i as f64 * step;
        let d = dist(phi);
        if d < best.0 {
            best = (d, phi);
        }
    }
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (dist(c), dist(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = dist(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = dist(d);
        }
    }
    let phi = 0.5 * (a + b);
    let d = dist(phi).min(best.0);
    let phi = if dist(phi) <= best.0 { phi } else { best.1 };
    Ok((d.sqrt() / tn, phi.rem_euclid(2.0 * PI)))
}

pub fn relative_error_alpha(spec: &BasisSpec, truth: &CoefficientVector, est: &CoefficientVector) -> Result<f64> {
    Ok(align_rotation(spec, truth, est)?.0)
}

pub fn relative_error_gamma(truth: f64, est: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::InvalidParameter("true density is zero".into()));
    }
    Ok((truth - est).abs() / truth.abs())
}

/// Binary PGM of an image, min-max scaled to 0..255 and enlarged by
/// pixel replication.
pub fn write_pgm(path: &Path, image: &ImageGrid, scale: usize) -> Result<()> {
    let side = image.side();
    let scale = scale.max(1);
    let lo = image.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = image.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let out = side * scale;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{out} {out}\n255\n")?;
    let mut bytes = Vec::with_capacity(out * out);
    for y in 0..out {
        for x in 0..out {
            let v = image.data[(y / scale) * side + x / scale];
            bytes.push(((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
