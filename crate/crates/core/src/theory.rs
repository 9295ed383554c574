//! Empirical checks of the estimator properties and convergence rate on
//! synthetic objectives with analytic gradients.
//!
//! The smoothing parameter `mu` here is the same quantity as the optimizer's
//! perturbation scale `eps`.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream_seed, Stream};

/// Synthetic objectives with closed-form gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// `1/2 sum c_i theta_i^2`
    DiagonalQuadratic { curvature: Vec<f64> },
    /// `sum theta_i^4`
    Quartic { dim: usize },
    /// `sum theta_i^2 / 2 + beta (1 - cos theta_i)`, `(1 + beta)`-smooth.
    CosineRipple { dim: usize, beta: f64 },
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::DiagonalQuadratic { curvature } => curvature.len(),
            Objective::Quartic { dim } | Objective::CosineRipple { dim, .. } => *dim,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Objective::DiagonalQuadratic { curvature } => {
                0.5 * curvature.iter().zip(theta).map(|(c, t)| c * t * t).sum::<f64>()
            }
            Objective::Quartic { .. } => theta.iter().map(|t| t.powi(4)).sum(),
            Objective::CosineRipple { beta, .. } => {
                theta.iter().map(|t| 0.5 * t * t + beta * (1.0 - t.cos())).sum()
            }
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Objective::DiagonalQuadratic { curvature } => curvature.iter().zip(theta).map(|(c, t)| c * t).collect(),
            Objective::Quartic { .. } => theta.iter().map(|t| 4.0 * t.powi(3)).collect(),
            Objective::CosineRipple { beta, .. } => theta.iter().map(|t| t + beta * t.sin()).collect(),
        }
    }

    /// Global smoothness constant, when one exists.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Objective::DiagonalQuadratic { curvature } => Some(curvature.iter().fold(0.0, |m: f64, c| m.max(c.abs()))),
            Objective::Quartic { .. } => None,
            Objective::CosineRipple { beta, .. } => Some(1.0 + beta.abs()),
        }
    }
}

/// Forward-difference estimate `(f(theta + mu u) - f(theta)) / mu * u`.
pub fn zo_estimate(obj: &Objective, theta: &[f64], f0: f64, mu: f64, u: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = theta.iter().zip(u).map(|(t, u)| t + mu * u).collect();
    let c = (obj.value(&shifted) - f0) / mu;
    u.iter().map(|u| c * u).collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// How probe directions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeSampling {
    /// Independent `N(0, I)` probes.
    Iid,
    /// Blocks of `d` probes along a random orthonormal basis, each scaled
    /// by an independent chi(d) radius. Every probe is still marginally
    /// `N(0, I)`; the block structure only cancels part of the sampling
    /// noise of the linear term.
    OrthogonalBlocks,
}

/// Orthonormal basis of `R^d` from Gram-Schmidt on Gaussian vectors.
fn random_basis(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = gaussian_vec(rng, d);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Stream of probe directions.
pub struct ProbeStream {
    rng: ChaCha8Rng,
    dim: usize,
    sampling: ProbeSampling,
    pending: Vec<Vec<f64>>,
}

impl ProbeStream {
    pub fn new(seed: u64, dim: usize, sampling: ProbeSampling) -> Self {
        Self { rng: rng_from_seed(seed), dim, sampling, pending: Vec::new() }
    }
}

impl Iterator for ProbeStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        match self.sampling {
            ProbeSampling::Iid => Some(gaussian_vec(&mut self.rng, self.dim)),
            ProbeSampling::OrthogonalBlocks => {
                if self.pending.is_empty() {
                    let basis = random_basis(&mut self.rng, self.dim);
                    self.pending = basis
                        .into_iter()
                        .map(|q| {
                            let r = gaussian_vec(&mut self.rng, self.dim).iter().map(|x| x * x).sum::<f64>().sqrt();
                            q.into_iter().map(|x| r * x).collect()
                        })
                        .collect();
                }
                self.pending.pop()
            }
        }
    }
}

/// Monte-Carlo mean of the forward-difference estimator.
pub fn mean_zo_estimate(obj: &Objective, theta: &[f64], mu: f64, probes: usize, seed: u64, sampling: ProbeSampling) -> Vec<f64> {
    let f0 = obj.value(theta);
    let mut acc = vec![0.0; theta.len()];
    for u in ProbeStream::new(seed, theta.len(), sampling).take(probes) {
        for (a, g) in acc.iter_mut().zip(zo_estimate(obj, theta, f0, mu, &u)) {
            *a += g;
        }
    }
    acc.iter().map(|a| a / probes as f64).collect()
}

/// Monte-Carlo estimate of `E[g_hat] - grad f`.
///
/// Uses the identity `E[g_hat(u)] = E[(g_hat(u) + g_hat(-u)) / 2]` and the
/// zero-mean control variate `(grad f . u) u - grad f`, which removes the
/// sampling noise of the first-order term so that small biases are visible.
pub fn estimator_bias(obj: &Objective, theta: &[f64], mu: f64, probes: usize, seed: u64) -> Vec<f64> {
    let d = theta.len();
    let f0 = obj.value(theta);
    let grad = obj.gradient(theta);
    let mut rng = rng_from_seed(seed);
    let mut acc = vec![0.0; d];
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for _ in 0..probes {
        let u = gaussian_vec(&mut rng, d);
        for i in 0..d {
            plus[i] = theta[i] + mu * u[i];
            minus[i] = theta[i] - mu * u[i];
        }
        // (c(u) u + c(-u)(-u)) / 2 - (grad . u) u
        let cp = (obj.value(&plus) - f0) / mu;
        let cm = (obj.value(&minus) - f0) / mu;
        let gu: f64 = grad.iter().zip(&u).map(|(g, u)| g * u).sum();
        let c = 0.5 * (cp - cm) - gu;
        for (a, u) in acc.iter_mut().zip(&u) {
            *a += c * u;
        }
    }
    acc.iter().map(|a| a / probes as f64).collect()
}

/// Monte-Carlo `E[|g_hat|^2]`.
pub fn second_moment(obj: &Objective, theta: &[f64], mu: f64, probes: usize, seed: u64) -> f64 {
    let f0 = obj.value(theta);
    let mut rng = rng_from_seed(seed);
    let mut acc = 0.0;
    for _ in 0..probes {
        let u = gaussian_vec(&mut rng, theta.len());
        acc += zo_estimate(obj, theta, f0, mu, &u).iter().map(|g| g * g).sum::<f64>();
    }
    acc / probes as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::config("a line fit needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::config("line fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

/// Fit in log10-log10 space.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::config("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log10()).collect();
    ols_fit(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    OneOverSqrtT,
}

/// A synthetic Hi-ZFO run: the first `d_zo` coordinates take forward-
/// difference steps, the remaining `d_fo` take noisy gradient steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRunSpec {
    pub d_zo: usize,
    pub d_fo: usize,
    /// Smoothing parameter; `None` uses `1 / sqrt(d_zo * T)`.
    pub mu: Option<f64>,
    pub horizons: Vec<usize>,
    pub schedule: StepSchedule,
    /// Per-coordinate curvatures of the quadratic objective (cycled).
    pub curvature: Vec<f64>,
    pub sigma_fo: f64,
    pub sigma_zo: f64,
    pub theta0: f64,
    pub seeds: usize,
    pub master_seed: u64,
}

impl TheoryRunSpec {
    /// Noisy quadratic, `d_zo = d_fo = 8`, horizons `10^2 .. 10^4` in half decades.
    pub fn noisy_quadratic() -> Self {
        Self {
            d_zo: 8,
            d_fo: 8,
            mu: None,
            horizons: vec![100, 316, 1000, 3162, 10000],
            schedule: StepSchedule::OneOverSqrtT,
            curvature: vec![1.0, 0.5],
            sigma_fo: 0.5,
            sigma_zo: 0.5,
            theta0: 1.0,
            seeds: 5,
            master_seed: 2024,
        }
    }

    pub fn objective(&self) -> Objective {
        let d = self.d_zo + self.d_fo;
        Objective::DiagonalQuadratic { curvature: (0..d).map(|i| self.curvature[i % self.curvature.len()]).collect() }
    }

    /// Smoothness constant of the objective.
    pub fn l_const(&self) -> f64 {
        self.objective().smoothness().unwrap_or(f64::INFINITY)
    }

    /// Initial optimality gap `L(theta_0) - L*`.
    pub fn delta(&self) -> f64 {
        let obj = self.objective();
        obj.value(&vec![self.theta0; obj.dim()])
    }

    fn validate(&self) -> Result<()> {
        if self.d_zo + self.d_fo == 0 || self.curvature.is_empty() || self.seeds == 0 {
            return Err(Error::config("theory run needs a non-empty objective and at least one seed"));
        }
        if self.horizons.iter().any(|&t| t < 10) {
            return Err(Error::config("horizons must be at least 10 steps"));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) {
                return Err(Error::config("mu must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub horizon: usize,
    pub eta: f64,
    pub mu: f64,
    /// `min_t` of the seed-averaged `|grad L(theta_t)|^2`.
    pub min_grad_sq: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// log10-log10 fit over non-diverged rows.
    pub fit: Option<LinearFit>,
}

impl RateTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("T,eta,mu,min_grad_sq,diverged\n");
        for r in &self.rows {
            writeln!(s, "{},{:e},{:e},{:e},{}", r.horizon, r.eta, r.mu, r.min_grad_sq, r.diverged).unwrap();
        }
        if let Some(f) = self.fit {
            writeln!(s, "# fit slope={:.6} intercept={:.6} r2={:.6}", f.slope, f.intercept, f.r_squared).unwrap();
        }
        s
    }
}

/// Gradient-norm trajectory of one synthetic run of `horizon` steps.
fn run_trajectory(spec: &TheoryRunSpec, obj: &Objective, horizon: usize, eta: f64, mu: f64, seed: u64) -> Option<Vec<f64>> {
    let d = obj.dim();
    let mut rng = rng_from_seed(seed);
    let mut theta = vec![spec.theta0; d];
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let g = obj.gradient(&theta);
        let gsq: f64 = g.iter().map(|v| v * v).sum();
        if !gsq.is_finite() {
            return None;
        }
        out.push(gsq);
        if out.len() > horizon {
            break;
        }
        let mut v = vec![0.0; d];
        if spec.d_zo > 0 {
            let zo = &theta[..spec.d_zo];
            let rest = &theta[spec.d_zo..];
            let u = gaussian_vec(&mut rng, spec.d_zo);
            let value = |z: &[f64]| {
                let mut full = z.to_vec();
                full.extend_from_slice(rest);
                obj.value(&full)
            };
            let shifted: Vec<f64> = zo.iter().zip(&u).map(|(t, u)| t + mu * u).collect();
            let c = (value(&shifted) - value(zo)) / mu;
            for i in 0..spec.d_zo {
                let noise: f64 = rng.sample(StandardNormal);
                v[i] = c * u[i] + spec.sigma_zo * noise;
            }
        }
        for i in spec.d_zo..d {
            let noise: f64 = rng.sample(StandardNormal);
            v[i] = g[i] + spec.sigma_fo * noise;
        }
        for (t, v) in theta.iter_mut().zip(&v) {
            *t -= eta * v;
        }
    }
    Some(out)
}

/// For each horizon `T`: run `spec.seeds` seeds with `eta = 1/sqrt(T)` (or
/// the constant schedule) and `mu = 1/sqrt(d_zo T)`, average `|grad L|^2`
/// across seeds at each step, and record its minimum over the run.
pub fn rate_experiment(spec: &TheoryRunSpec) -> Result<RateTable> {
    spec.validate()?;
    let obj = spec.objective();
    let base = stream_seed(spec.master_seed, Stream::Theory);
    let mut rows = Vec::new();
    for &horizon in &spec.horizons {
        let eta = match spec.schedule {
            StepSchedule::Constant(e) => e,
            StepSchedule::OneOverSqrtT => 1.0 / (horizon as f64).sqrt(),
        };
        let mu = spec.mu.unwrap_or_else(|| 1.0 / ((spec.d_zo.max(1) * horizon) as f64).sqrt());
        let mut mean = vec![0.0; horizon + 1];
        let mut diverged = false;
        for s in 0..spec.seeds {
            let seed = derive_seed(base, (horizon as u64) << 16 | s as u64);
            match run_trajectory(spec, &obj, horizon, eta, mu, seed) {
                Some(traj) => {
                    for (m, g) in mean.iter_mut().zip(traj) {
                        *m += g / spec.seeds as f64;
                    }
                }
                None => diverged = true,
            }
        }
        let min_grad_sq = if diverged { f64::INFINITY } else { mean.iter().copied().fold(f64::INFINITY, f64::min) };
        rows.push(RateRow { horizon, eta, mu, min_grad_sq, diverged });
    }
    let ok: Vec<&RateRow> = rows.iter().filter(|r| !r.diverged && r.min_grad_sq > 0.0).collect();
    let fit = if ok.len() >= 2 {
        let xs: Vec<f64> = ok.iter().map(|r| r.horizon as f64).collect();
        let ys: Vec<f64> = ok.iter().map(|r| r.min_grad_sq).collect();
        Some(loglog_fit(&xs, &ys)?)
    } else {
        None
    };
    Ok(RateTable { rows, fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub d_zo: usize,
    pub mu: f64,
    pub bias_sq: f64,
}

pub fn bias_rows_to_csv(rows: &[BiasRow]) -> String {
    let mut s = String::from("d_zo,mu,empirical_bias_sq\n");
    for r in rows {
        writeln!(s, "{},{:e},{:e}", r.d_zo, r.mu, r.bias_sq).unwrap();
    }
    s
}

/// Kind of objective used by [`bias_dimension_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepObjective {
    Quadratic,
    Quartic,
}

/// `|E[g_hat] - grad L|^2` over a grid of dimensions and smoothing values,
/// evaluated at `theta = 0.5 * 1`.
pub fn bias_dimension_sweep(kind: SweepObjective, dims: &[usize], mus: &[f64], probes: usize, seed: u64) -> Vec<BiasRow> {
    let mut rows = Vec::new();
    for &d in dims {
        let obj = match kind {
            SweepObjective::Quadratic => Objective::DiagonalQuadratic { curvature: (0..d).map(|i| 1.0 + (i % 3) as f64).collect() },
            SweepObjective::Quartic => Objective::Quartic { dim: d },
        };
        let theta = vec![0.5; d];
        for (j, &mu) in mus.iter().enumerate() {
            let b = estimator_bias(&obj, &theta, mu, probes, derive_seed(seed, (d as u64) << 8 | j as u64));
            rows.push(BiasRow { d_zo: d, mu, bias_sq: b.iter().map(|v| v * v).sum() });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub states: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` observed (negative when the bound holds with room).
    pub worst_gap: f64,
}

/// One-step descent inequality on the cosine ripple:
/// `E[L(theta - eta v)] <= L(theta) - eta <grad L, E[v]> + L eta^2 / 2 E[|v|^2]`,
/// with `v` the hybrid direction (forward-difference on the first `d_zo`
/// coordinates, noisy gradient on the rest), averaged over `draws` samples
/// at each of `states` random points.
pub fn descent_check(d_zo: usize, d_fo: usize, beta: f64, eta: f64, mu: f64, sigma_fo: f64, states: usize, draws: usize, tol: f64, seed: u64) -> DescentCheck {
    let d = d_zo + d_fo;
    let obj = Objective::CosineRipple { dim: d, beta };
    let l = obj.smoothness().unwrap();
    let mut rng = rng_from_seed(seed);
    let mut violations = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..states {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f0 = obj.value(&theta);
        let g = obj.gradient(&theta);
        let (mut next, mut lin, mut quad) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let mut v = vec![0.0; d];
            if d_zo > 0 {
                let u = gaussian_vec(&mut rng, d_zo);
                let mut shifted = theta.clone();
                for i in 0..d_zo {
                    shifted[i] += mu * u[i];
                }
                let c = (obj.value(&shifted) - f0) / mu;
                for i in 0..d_zo {
                    v[i] = c * u[i];
                }
            }
            for i in d_zo..d {
                let noise: f64 = rng.sample(StandardNormal);
                v[i] = g[i] + sigma_fo * noise;
            }
            let stepped: Vec<f64> = theta.iter().zip(&v).map(|(t, v)| t - eta * v).collect();
            next += obj.value(&stepped);
            lin += g.iter().zip(&v).map(|(g, v)| g * v).sum::<f64>();
            quad += v.iter().map(|v| v * v).sum::<f64>();
        }
        let n = draws as f64;
        let lhs = next / n;
        let rhs = f0 - eta * lin / n + 0.5 * l * eta * eta * quad / n;
        let gap = lhs - rhs;
        worst_gap = worst_gap.max(gap);
        if gap > tol {
            violations += 1;
        }
    }
    DescentCheck { states, violations, worst_gap }
}
