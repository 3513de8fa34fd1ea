//! Particle marginal Metropolis-Hastings with a Gaussian random walk
//! proposal, two-stage covariance tuning from a preliminary run, and the
//! conditional-acceptance-rate procedure for choosing the number of
//! particles.
//!
//! The acceptance ratio is computed in log space and the likelihood
//! estimate of the current state is stored alongside it, so no filter
//! ever reruns for the current state. Candidates outside the prior
//! support are rejected without spending a filter run.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fom::{BatteryTheta, Dataset, FoModel};
use crate::smc::{run_filter, FilterConfig};

/// Prior family over a box support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Uniform,
    /// Gaussian centered at the range midpoint with sd = range/4,
    /// truncated to the box.
    TruncatedGaussian,
}

/// Componentwise prior over a box; both kinds share the same support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prior {
    pub kind: PriorKind,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Prior {
    pub fn new(kind: PriorKind, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("prior bounds must be nonempty and equal length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::config("prior requires lo < hi componentwise"));
        }
        Ok(Prior { kind, lo, hi })
    }

    /// The battery parameter box: R_inf in [0.005, 0.10], R1 in
    /// [0.050, 0.50], C1 in [1, 5], C2 in [300, 500], alphas in [0.40, 1.00].
    pub fn battery(kind: PriorKind) -> Self {
        Prior {
            kind,
            lo: vec![0.005, 0.050, 1.0, 300.0, 0.40, 0.40],
            hi: vec![0.10, 0.50, 5.0, 500.0, 1.00, 1.00],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn in_support(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| l <= t && t <= h)
    }

    pub fn range(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// Range midpoints (also the truncated-Gaussian centers).
    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Componentwise standard deviation used for the stage-1 proposal:
    /// range/sqrt(12) for the uniform kind, range/4 for the truncated
    /// Gaussian (the sd of the untruncated Gaussian it is built from).
    pub fn sd(&self) -> Vec<f64> {
        let f = match self.kind {
            PriorKind::Uniform => 1.0 / 12f64.sqrt(),
            PriorKind::TruncatedGaussian => 0.25,
        };
        self.range().iter().map(|r| r * f).collect()
    }

    /// Log density up to the truncation constant: -inf outside the box;
    /// inside, the exact uniform log density or the unnormalized Gaussian
    /// log density (the constant cancels in the acceptance ratio).
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        match self.kind {
            PriorKind::Uniform => -self.range().iter().map(|r| r.ln()).sum::<f64>(),
            PriorKind::TruncatedGaussian => {
                let mid = self.midpoint();
                let sd = self.sd();
                theta
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let z = (t - mid[i]) / sd[i];
                        -0.5 * z * z - sd[i].ln()
                    })
                    .sum()
            }
        }
    }

    /// Normalized marginal density of component `i` at `x` (zero outside
    /// the box). The truncated Gaussian normalizes by the box mass.
    pub fn marginal_density(&self, i: usize, x: f64) -> f64 {
        if x < self.lo[i] || x > self.hi[i] {
            return 0.0;
        }
        match self.kind {
            PriorKind::Uniform => 1.0 / (self.hi[i] - self.lo[i]),
            PriorKind::TruncatedGaussian => {
                let mid = 0.5 * (self.lo[i] + self.hi[i]);
                let sd = (self.hi[i] - self.lo[i]) * 0.25;
                let n = Normal::new(mid, sd).expect("valid normal");
                let mass = n.cdf(self.hi[i]) - n.cdf(self.lo[i]);
                let z = (x - mid) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt() * mass)
            }
        }
    }

    /// Draws a parameter vector; the truncated Gaussian rejects against
    /// the box (about 1.05 proposals per accepted draw at sd = range/4).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            PriorKind::Uniform => self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(&l, &h)| rng.random_range(l..h))
                .collect(),
            PriorKind::TruncatedGaussian => {
                let mid = self.midpoint();
                let sd = self.sd();
                let dim = self.dim();
                let mut out = vec![0.0; dim];
                for i in 0..dim {
                    loop {
                        let z: f64 = rng.sample(StandardNormal);
                        let v = mid[i] + sd[i] * z;
                        if self.lo[i] <= v && v <= self.hi[i] {
                            out[i] = v;
                            break;
                        }
                    }
                }
                out
            }
        }
    }
}

/// Chain start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ChainInit {
    PriorDraw,
    Given(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct PmmhConfig {
    /// Main-run iteration count M.
    pub iterations: usize,
    /// Random-walk proposal covariance (dim x dim, symmetric PSD).
    pub proposal_cov: DMatrix<f64>,
    /// Particle filter settings; the seed field is ignored (per-run
    /// seeds are drawn from the chain stream).
    pub filter: FilterConfig,
    pub seed: u64,
    pub init: ChainInit,
    /// Preliminary-run length for [`tune_and_run`]; half of it is
    /// discarded before estimating the posterior covariance.
    pub stage1_iterations: usize,
}

impl PmmhConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if self.proposal_cov.nrows() != dim || self.proposal_cov.ncols() != dim {
            return Err(Error::config("proposal covariance dimension mismatch"));
        }
        self.filter.validate()
    }
}

/// Settings and acceptance rates of both tuning stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningMeta {
    pub stage1_iterations: usize,
    pub stage1_burn: usize,
    pub stage1_acceptance: f64,
    pub stage2_acceptance: f64,
    /// Diagonal of the stage-1 (prior-sd) proposal covariance.
    pub stage1_cov_diag: Vec<f64>,
    /// Diagonal of the tuned stage-2 covariance.
    pub stage2_cov_diag: Vec<f64>,
}

/// PMMH output: one row per iteration.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub loglik: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    pub tuning_meta: Option<TuningMeta>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `iter,<names...>,loglik,accepted` rows.
    pub fn write_csv(&self, path: &std::path::Path, names: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iter".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        header.push("loglik".into());
        header.push("accepted".into());
        w.write_record(&header)?;
        for (t, sample) in self.samples.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(sample.iter().map(|v| format!("{v:.17e}")));
            rec.push(format!("{:.17e}", self.loglik[t]));
            rec.push(if self.accepted[t] { "1" } else { "0" }.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn cholesky_with_fallback(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = cov.nrows();
    let mut jitter = 0.0;
    let scale = cov.diagonal().iter().cloned().fold(0.0, f64::max).max(1e-300);
    for _ in 0..16 {
        let m = cov + DMatrix::identity(dim, dim) * jitter;
        if let Some(chol) = m.cholesky() {
            return chol.l();
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    // last resort: diagonal proposal from the covariance diagonal
    DMatrix::from_diagonal(&cov.diagonal().map(|v| v.abs().sqrt()))
}

/// Runs PMMH (random-walk Gaussian proposal, log-space acceptance)
/// against an arbitrary log-likelihood estimator. The estimator receives
/// the candidate and a fresh seed drawn from the chain stream; plugging
/// in an exact likelihood reduces the algorithm to textbook
/// Metropolis-Hastings.
pub fn pmmh_run(
    prior: &Prior,
    mut loglik: impl FnMut(&[f64], u64) -> f64,
    cfg_iterations: usize,
    proposal_cov: &DMatrix<f64>,
    init: &ChainInit,
    seed: u64,
) -> Result<Chain> {
    let dim = prior.dim();
    if proposal_cov.nrows() != dim || proposal_cov.ncols() != dim {
        return Err(Error::config("proposal covariance dimension mismatch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chol = cholesky_with_fallback(proposal_cov);
    let mut theta = match init {
        ChainInit::PriorDraw => prior.sample(&mut rng),
        ChainInit::Given(t) => {
            if !prior.in_support(t) {
                return Err(Error::config("initial state outside prior support"));
            }
            t.clone()
        }
    };
    let mut log_prior = prior.log_density(&theta);
    let mut log_lik = loglik(&theta, rng.random());
    let mut samples = Vec::with_capacity(cfg_iterations);
    let mut logliks = Vec::with_capacity(cfg_iterations);
    let mut accepted_flags = Vec::with_capacity(cfg_iterations);
    let mut accepted = 0usize;
    let mut z = vec![0.0; dim];
    for _ in 0..cfg_iterations {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let mut cand = theta.clone();
        for i in 0..dim {
            for j in 0..=i {
                cand[i] += chol[(i, j)] * z[j];
            }
        }
        let cand_log_prior = prior.log_density(&cand);
        let mut accept = false;
        if cand_log_prior > f64::NEG_INFINITY {
            // filter runs only for candidates inside the support
            let cand_log_lik = loglik(&cand, rng.random());
            let log_alpha = (cand_log_prior + cand_log_lik) - (log_prior + log_lik);
            let u: f64 = rng.random();
            if u.ln() < log_alpha {
                theta = cand;
                log_prior = cand_log_prior;
                log_lik = cand_log_lik;
                accept = true;
            }
        }
        if accept {
            accepted += 1;
        }
        samples.push(theta.clone());
        logliks.push(log_lik);
        accepted_flags.push(accept);
    }
    Ok(Chain {
        samples,
        loglik: logliks,
        accepted: accepted_flags,
        acceptance_rate: accepted as f64 / cfg_iterations.max(1) as f64,
        tuning_meta: None,
    })
}

/// Particle log-likelihood estimator for the battery model; invalid
/// parameter vectors (outside the model's own domain) score -inf.
pub fn battery_loglik_estimator<'a>(
    data: &'a Dataset,
    ts: f64,
    sigma_x: f64,
    sigma_y: f64,
    filter_template: &'a FilterConfig,
) -> impl Fn(&[f64], u64) -> f64 + 'a + Sync {
    move |theta: &[f64], seed: u64| {
        let theta = match BatteryTheta::from_slice(theta) {
            Ok(t) => t,
            Err(_) => return f64::NEG_INFINITY,
        };
        let model = match FoModel::battery(&theta, ts, data.len() - 1, sigma_x, sigma_y) {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        let cfg = FilterConfig {
            seed,
            ..filter_template.clone()
        };
        match run_filter(&model, &data, &cfg) {
            Ok(out) => out.log_likelihood,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

fn sample_covariance(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let n = samples.len();
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for i in 0..dim {
            mean[i] += s[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    cov / (n.max(2) - 1) as f64
}

/// Two-stage PMMH: a preliminary run with the prior-sd diagonal proposal,
/// then the main run using the sample covariance of the preliminary
/// run's second half (plus a small diagonal jitter so a degenerate
/// covariance never aborts the run), started from the preliminary run's
/// last state.
pub fn tune_and_run(
    prior: &Prior,
    loglik: impl Fn(&[f64], u64) -> f64,
    cfg: &PmmhConfig,
) -> Result<Chain> {
    let dim = prior.dim();
    if cfg.iterations < 1 || cfg.stage1_iterations < 2 {
        return Err(Error::config("tune_and_run needs iterations >= 1 and stage1 >= 2"));
    }
    let sd = prior.sd();
    let stage1_cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        sd.iter().map(|s| s * s),
    ));
    let stage1 = pmmh_run(
        prior,
        &loglik,
        cfg.stage1_iterations,
        &stage1_cov,
        &cfg.init,
        cfg.seed,
    )?;
    let burn = cfg.stage1_iterations / 2;
    let kept = &stage1.samples[burn..];
    let mut cov = sample_covariance(kept);
    // jitter against rank deficiency from low-acceptance preliminary runs
    let range = prior.range();
    for i in 0..dim {
        cov[(i, i)] += 1e-10 * range[i] * range[i];
    }
    let last = stage1.samples.last().expect("stage1 nonempty").clone();
    let mut stage2 = pmmh_run(
        prior,
        &loglik,
        cfg.iterations,
        &cov,
        &ChainInit::Given(last),
        cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
    )?;
    stage2.tuning_meta = Some(TuningMeta {
        stage1_iterations: cfg.stage1_iterations,
        stage1_burn: burn,
        stage1_acceptance: stage1.acceptance_rate,
        stage2_acceptance: stage2.acceptance_rate,
        stage1_cov_diag: stage1_cov.diagonal().iter().cloned().collect(),
        stage2_cov_diag: cov.diagonal().iter().cloned().collect(),
    });
    Ok(stage2)
}

/// Metropolis-Hastings mimic over repeated likelihood estimates at a
/// fixed parameter: walks through `log_zs`, accepting each new estimate
/// with probability min(1, Z_j / Z_current), and reports the acceptance
/// fraction. Perfect (zero-variance) estimates give exactly 1.0; an
/// infinitely noisy sequence gives 0.
pub fn conditional_acceptance_rate<R: Rng>(log_zs: &[f64], rng: &mut R) -> f64 {
    assert!(log_zs.len() >= 2, "need at least two estimates");
    let mut current = log_zs[0];
    let mut accepts = 0usize;
    for &z in &log_zs[1..] {
        let log_alpha = z - current;
        let u: f64 = rng.random();
        // NaN (e.g. -inf minus -inf) counts as a rejection
        if u.ln() < log_alpha {
            current = z;
            accepts += 1;
        }
    }
    accepts as f64 / (log_zs.len() - 1) as f64
}

/// Per-(N, theta) entry of the particle count selection report.
#[derive(Debug, Clone, Serialize)]
pub struct SelectEntry {
    pub n_particles: usize,
    pub theta: Vec<f64>,
    pub acceptance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectReport {
    pub entries: Vec<SelectEntry>,
    /// Mean conditional acceptance per candidate N, in candidate order.
    pub mean_acceptance: Vec<f64>,
    pub chosen: usize,
    /// True when no candidate reached the threshold and the largest was
    /// returned instead.
    pub threshold_unmet: bool,
}

/// Chooses the number of particles by the conditional acceptance rate:
/// for each candidate N and each of `n_theta` prior draws, runs the
/// filter `n_reps` times and feeds the estimates through the
/// accept/reject mimic. Returns the smallest N whose mean acceptance
/// reaches `threshold` (falling back to the largest candidate if none
/// does, flagged in the report).
#[allow(clippy::too_many_arguments)]
pub fn select_num_particles(
    prior: &Prior,
    estimator: impl Fn(usize, &[f64], u64) -> f64 + Sync,
    filter_ns: &[usize],
    n_reps: usize,
    n_theta: usize,
    threshold: f64,
    seed: u64,
) -> Result<(usize, SelectReport)> {
    if filter_ns.is_empty() {
        return Err(Error::config("candidate particle counts must be nonempty"));
    }
    if n_reps < 2 {
        return Err(Error::config("n_reps must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas: Vec<Vec<f64>> = (0..n_theta.max(1)).map(|_| prior.sample(&mut rng)).collect();
    // deterministic per-(N, theta, rep) seeds so the triples can run in parallel
    let mut entries = Vec::new();
    let mut mean_acceptance = Vec::new();
    for (ni, &n) in filter_ns.iter().enumerate() {
        let accs: Vec<(Vec<f64>, f64)> = thetas
            .par_iter()
            .enumerate()
            .map(|(ti, theta)| {
                let base = seed
                    .wrapping_add(1 + ni as u64)
                    .wrapping_mul(0x100000001b3)
                    .wrapping_add(ti as u64);
                let zs: Vec<f64> = (0..n_reps)
                    .into_par_iter()
                    .map(|rep| estimator(n, theta, base.wrapping_add(rep as u64 * 0x9e3779b9)))
                    .collect();
                let mut mimic_rng = ChaCha8Rng::seed_from_u64(base ^ 0xdead_beef);
                (theta.clone(), conditional_acceptance_rate(&zs, &mut mimic_rng))
            })
            .collect();
        let mean = accs.iter().map(|(_, a)| a).sum::<f64>() / accs.len() as f64;
        for (theta, acceptance) in accs {
            entries.push(SelectEntry {
                n_particles: n,
                theta,
                acceptance,
            });
        }
        mean_acceptance.push(mean);
    }
    let chosen_idx = mean_acceptance.iter().position(|&a| a >= threshold);
    let (chosen, threshold_unmet) = match chosen_idx {
        Some(i) => (filter_ns[i], false),
        None => (*filter_ns.last().unwrap(), true),
    };
    Ok((
        chosen,
        SelectReport {
            entries,
            mean_acceptance,
            chosen,
            threshold_unmet,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn battery_prior_bounds_and_density() {
        let p = Prior::battery(PriorKind::Uniform);
        let theta_star = [0.01, 0.2, 3.0, 400.0, 0.8, 0.5];
        let ld = p.log_density(&theta_star);
        assert!(ld.is_finite());
        // constant everywhere inside the box
        assert_eq!(ld, p.log_density(&[0.05, 0.3, 2.0, 450.0, 0.5, 0.9]));
        // R_inf above its 0.10 max
        let mut out = theta_star;
        out[0] = 0.2;
        assert_eq!(p.log_density(&out), f64::NEG_INFINITY);
        // marginal density for R_inf alone is 1/0.095
        assert_abs_diff_eq!(p.marginal_density(0, 0.05), 1.0 / 0.095, epsilon = 1e-12);
    }

    #[test]
    fn truncated_gaussian_prior() {
        let p = Prior::battery(PriorKind::TruncatedGaussian);
        let mid = p.midpoint();
        assert!(p.log_density(&mid).is_finite());
        assert_eq!(p.log_density(&[1.0; 6]), f64::NEG_INFINITY);
        // marginal integrates to one over the box
        let (lo, hi) = (p.lo[0], p.hi[0]);
        let g = 20_000;
        let dx = (hi - lo) / g as f64;
        let total: f64 = (0..g)
            .map(|i| p.marginal_density(0, lo + (i as f64 + 0.5) * dx) * dx)
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        // samples stay inside and are denser at the center
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<Vec<f64>> = (0..2000).map(|_| p.sample(&mut rng)).collect();
        assert!(draws.iter().all(|d| p.in_support(d)));
        let center = draws
            .iter()
            .filter(|d| (d[0] - mid[0]).abs() < 0.25 * (hi - lo))
            .count();
        assert!(center > 1000);
    }

    #[test]
    fn stage1_proposal_sd_matches_uniform_formula() {
        let p = Prior::battery(PriorKind::Uniform);
        let sd = p.sd();
        assert_abs_diff_eq!(sd[0] * sd[0], (0.095f64 / 12f64.sqrt()).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn pmmh_always_accepts_flat_target() {
        // equal prior, constant likelihood, symmetric proposal: alpha = 1
        let p = Prior::new(PriorKind::Uniform, vec![-1e6], vec![1e6]).unwrap();
        let cov = DMatrix::from_element(1, 1, 0.01);
        let chain = pmmh_run(
            &p,
            |_t, _s| 0.0,
            500,
            &cov,
            &ChainInit::Given(vec![0.0]),
            7,
        )
        .unwrap();
        assert_eq!(chain.acceptance_rate, 1.0);
        assert!(chain.accepted.iter().all(|&a| a));
    }

    #[test]
    fn out_of_support_candidates_skip_the_filter() {
        let p = Prior::new(PriorKind::Uniform, vec![0.0], vec![1.0]).unwrap();
        // a huge step guarantees out-of-box proposals
        let cov = DMatrix::from_element(1, 1, 1e8);
        let calls = std::cell::Cell::new(0usize);
        let chain = pmmh_run(
            &p,
            |_t, _s| {
                calls.set(calls.get() + 1);
                0.0
            },
            200,
            &cov,
            &ChainInit::Given(vec![0.5]),
            1,
        )
        .unwrap();
        // the initial evaluation plus only in-support candidates
        assert!(calls.get() < 50, "filter invoked {} times", calls.get());
        assert!(chain.acceptance_rate < 0.25);
        // rejected iterations copy the previous state exactly
        for t in 1..chain.len() {
            if !chain.accepted[t] {
                assert_eq!(chain.samples[t], chain.samples[t - 1]);
                assert_eq!(chain.loglik[t], chain.loglik[t - 1]);
            }
        }
    }

    #[test]
    fn chain_stays_in_support() {
        let p = Prior::battery(PriorKind::Uniform);
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            6,
            p.sd().iter().map(|s| s * s),
        ));
        // pseudo-likelihood favoring the box center, noisy like a filter
        let chain = pmmh_run(
            &p,
            |t, s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let noise: f64 = rng.sample(StandardNormal);
                -t.iter().map(|v| v * v).sum::<f64>() + 0.5 * noise
            },
            400,
            &cov,
            &ChainInit::PriorDraw,
            5,
        )
        .unwrap();
        assert!(chain.samples.iter().all(|s| p.in_support(s)));
    }

    #[test]
    fn conditional_acceptance_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(conditional_acceptance_rate(&[3.0; 50], &mut rng), 1.0);
        let mut degenerate = vec![f64::NEG_INFINITY; 50];
        degenerate[0] = 1.0;
        assert_eq!(conditional_acceptance_rate(&degenerate, &mut rng), 0.0);
    }

    #[test]
    fn degenerate_stage1_still_tunes() {
        // likelihood of -inf everywhere except the starting point: the
        // stage-1 chain never moves, covariance collapses, jitter saves it
        let p = Prior::new(PriorKind::Uniform, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let start = vec![0.5, 0.5];
        let start_c = start.clone();
        let ll = move |t: &[f64], _s: u64| {
            if t == start_c.as_slice() {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let cfg = PmmhConfig {
            iterations: 50,
            proposal_cov: DMatrix::identity(2, 2),
            filter: FilterConfig {
                n_particles: 1,
                proposal: crate::smc::Proposal::Bootstrap,
                resampling: crate::smc::Resampling::Systematic,
                seed: 0,
            },
            seed: 9,
            init: ChainInit::Given(start),
            stage1_iterations: 40,
        };
        let chain = tune_and_run(&p, ll, &cfg).unwrap();
        assert_eq!(chain.len(), 50);
        let meta = chain.tuning_meta.unwrap();
        assert_eq!(meta.stage1_acceptance, 0.0);
        assert!(meta.stage2_cov_diag.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn chain_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.csv");
        let chain = Chain {
            samples: vec![vec![1.0; 6], vec![2.0; 6]],
            loglik: vec![-1.0, -2.0],
            accepted: vec![true, false],
            acceptance_rate: 0.5,
            tuning_meta: None,
        };
        chain.write_csv(&path, &crate::fom::PARAM_NAMES).unwrap();
        let head = std::fs::read_to_string(&path).unwrap();
        assert!(head.starts_with("iter,R_inf,R1,C1,C2,alpha1,alpha2,loglik,accepted"));
    }
}
