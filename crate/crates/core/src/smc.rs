//! Particle filter for non-Markovian state-space models.
//!
//! The filter resamples at every step, proposes from either the model
//! transition (bootstrap) or the locally optimal proposal, and
//! accumulates the likelihood estimator
//! `prod_k (1/N) sum_i w_k^i` as a running log sum with per-step
//! max-weight shifts. Whole trajectories are held in a
//! [`TrajectoryTree`], whose single-traversal weighted sums provide the
//! history-dependent transition means for all particles at once.
//!
//! RNG discipline: one seeded stream per filter run, consumed in a fixed
//! order so an independent dense-path implementation can replay it.
//! Step 0 draws nothing (the initial state is a Dirac mass at zero).
//! Each step k >= 1 draws, in order: the resampling randomness (one
//! uniform for systematic, N uniforms for multinomial), then per
//! particle i = 1..N the proposal's standard normals (n for bootstrap,
//! 2 for locally optimal).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{Dataset, FoModel};
use crate::pathtree::TrajectoryTree;

const LN_2PI: f64 = 1.8378770664093453;

/// Transition proposal used by [`run_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// q_k = f_k; the weight reduces to the observation density.
    Bootstrap,
    /// q_k = p(x_k | y_k, x_{0:k-1}, theta); battery-shaped models only.
    LocallyOptimal,
}

/// Ancestor selection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Systematic,
    /// Retained to test the genealogy-tree growth expectation, which is
    /// stated for multinomial resampling.
    Multinomial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub proposal: Proposal,
    pub resampling: Resampling,
    pub seed: u64,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 1 {
            return Err(Error::config("n_particles must be >= 1"));
        }
        Ok(())
    }
}

/// Result of one filter run.
#[derive(Debug)]
pub struct FilterOutput {
    /// Natural log of the likelihood estimator; -inf when every particle
    /// weight underflowed at some step.
    pub log_likelihood: f64,
    pub final_tree: TrajectoryTree,
    /// Effective sample size at each assimilated step.
    pub per_step_ess: Vec<f64>,
    /// Live tree node count after each step.
    pub node_count_trace: Vec<usize>,
}

/// Gaussian log-density.
fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Effective sample size `(sum w)^2 / sum w^2` of nonnegative weights.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    assert!(s > 0.0, "ess requires at least one positive weight");
    s * s / s2
}

/// Systematic resampling driven by a single uniform draw: normalizes the
/// weights, strides the unit interval with offset `u/N`, and sweeps the
/// cumulative sums. Returns 0-based ancestor indices; the copy count of
/// index i always lies in {floor(N w_i), ceil(N w_i)}.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "systematic_resample requires a positive weight");
    let mut ancestors = Vec::with_capacity(n);
    let mut ubar = u / n as f64;
    let mut j = 0usize;
    let mut cum = weights[0] / total;
    for _ in 0..n {
        while cum < ubar {
            j += 1;
            cum += weights[j] / total;
        }
        ancestors.push(j);
        ubar += 1.0 / n as f64;
    }
    ancestors
}

/// Multinomial resampling: N independent categorical draws by inverting
/// the weight CDF, one uniform per particle.
pub fn multinomial_resample<R: Rng>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "multinomial_resample requires a positive weight");
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            cdf.partition_point(|&c| c < u).min(n - 1)
        })
        .collect()
}

/// One locally optimal proposal step for the battery form (n = 2,
/// output = x1 + x2 + feedthrough). Given the history mean `phi` and the
/// feedthrough contribution `c_k`, draws the new state from
/// `p(x_k | y_k, x_{0:k-1})` and returns `(state, log incremental weight)`
/// with the weight `log N(y_k; zeta_k, 2 sigma_x^2 + sigma_y^2)`,
/// `zeta_k = c_k + phi_1 + phi_2`.
pub fn locally_optimal_step<R: Rng>(
    model: &FoModel,
    phi: &[f64],
    c_k: f64,
    y_k: f64,
    rng: &mut R,
) -> Result<([f64; 2], f64)> {
    if model.n != 2 || phi.len() != 2 {
        return Err(Error::config("locally optimal proposal requires the 2-state battery form"));
    }
    let sx2 = model.sigma_x * model.sigma_x;
    let sy2 = model.sigma_y * model.sigma_y;
    let pred_var = 2.0 * sx2 + sy2;
    if pred_var <= 0.0 {
        return Err(Error::config("locally optimal proposal needs sigma_x or sigma_y > 0"));
    }
    let zeta = c_k + phi[0] + phi[1];
    let log_w = log_normal_pdf(y_k, zeta, pred_var);
    let gain = sx2 / pred_var;
    let shift = gain * (y_k - zeta);
    // covariance sigma_x^2 I - v 11', v = sigma_x^4 / (2 sigma_x^2 + sigma_y^2)
    let v = sx2 * sx2 / pred_var;
    let s = sx2 - v;
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let (x1, x2) = if s > 0.0 {
        let l11 = s.sqrt();
        let l21 = -v / l11;
        let l22_sq = s - (v * v) / s;
        let l22 = l22_sq.max(0.0).sqrt();
        (l11 * z1, l21 * z1 + l22 * z2)
    } else {
        (0.0, 0.0)
    };
    Ok(([phi[0] + shift + x1, phi[1] + shift + x2], log_w))
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Runs the particle filter on a dataset whose length matches the model
/// horizon. Deterministic given `cfg.seed`. If every particle weight
/// underflows at some step the run returns `log_likelihood = -inf`
/// immediately (the caller treats such parameters as rejectable, not
/// fatal); the diagnostic traces are truncated at that step.
pub fn run_filter(model: &FoModel, data: &Dataset, cfg: &FilterConfig) -> Result<FilterOutput> {
    cfg.validate()?;
    data.validate()?;
    if data.len() != model.horizon + 1 {
        return Err(Error::config(format!(
            "dataset length {} does not match model horizon+1 = {}",
            data.len(),
            model.horizon + 1
        )));
    }
    if cfg.proposal == Proposal::LocallyOptimal && model.n != 2 {
        return Err(Error::config("locally optimal proposal requires the 2-state battery form"));
    }
    let n = model.n;
    let n_particles = cfg.n_particles;
    let t_len = model.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sy2 = model.sigma_y * model.sigma_y;

    // Dirac initial state: all particles start at zero
    let mut tree = TrajectoryTree::new(n, &vec![0.0; n_particles * n])?;
    let lw0 = log_normal_pdf(data.y[0], model.d * data.u[0], sy2);
    let mut log_weights = vec![lw0; n_particles];
    let mut log_likelihood = logsumexp(&log_weights) - (n_particles as f64).ln();
    let mut per_step_ess = Vec::with_capacity(t_len + 1);
    let mut node_count_trace = Vec::with_capacity(t_len + 1);
    per_step_ess.push(n_particles as f64);
    node_count_trace.push(tree.node_count());

    let mut lin_weights = vec![0.0; n_particles];
    let mut new_states = vec![0.0; n_particles * n];
    for k in 1..=t_len {
        // linear weights, shifted by the max for resampling
        let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Ok(FilterOutput {
                log_likelihood: f64::NEG_INFINITY,
                final_tree: tree,
                per_step_ess,
                node_count_trace,
            });
        }
        for (lin, lw) in lin_weights.iter_mut().zip(&log_weights) {
            *lin = (lw - m).exp();
        }
        let ancestors = match cfg.resampling {
            Resampling::Systematic => {
                let u: f64 = rng.random();
                systematic_resample(&lin_weights, u)
            }
            Resampling::Multinomial => multinomial_resample(&lin_weights, &mut rng),
        };
        // history-dependent transition means for every surviving path
        let b_term: Vec<f64> = model.b.iter().map(|b| b * data.u[k - 1]).collect();
        let phi_all = tree.weighted_sums(&model.coeff, &b_term)?;
        let c_k = model.d * data.u[k];
        for i in 0..n_particles {
            let phi = &phi_all[ancestors[i] * n..(ancestors[i] + 1) * n];
            match cfg.proposal {
                Proposal::Bootstrap => {
                    let mut y_mean = c_k;
                    for d in 0..n {
                        let z: f64 = rng.sample(StandardNormal);
                        let x = phi[d] + model.sigma_x * z;
                        new_states[i * n + d] = x;
                        y_mean += model.m[d] * x;
                    }
                    log_weights[i] = log_normal_pdf(data.y[k], y_mean, sy2);
                }
                Proposal::LocallyOptimal => {
                    let (x, lw) = locally_optimal_step(model, phi, c_k, data.y[k], &mut rng)?;
                    new_states[i * n] = x[0];
                    new_states[i * n + 1] = x[1];
                    log_weights[i] = lw;
                }
            }
        }
        tree.insert_generation(&ancestors, &new_states)?;
        let incr = logsumexp(&log_weights) - (n_particles as f64).ln();
        log_likelihood += incr;
        let m2 = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m2.is_finite() {
            for (lin, lw) in lin_weights.iter_mut().zip(&log_weights) {
                *lin = (lw - m2).exp();
            }
            per_step_ess.push(ess(&lin_weights));
        } else {
            log_likelihood = f64::NEG_INFINITY;
        }
        node_count_trace.push(tree.node_count());
        if log_likelihood == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(FilterOutput {
        log_likelihood,
        final_tree: tree,
        per_step_ess,
        node_count_trace,
    })
}

/// Per-step diagnostic row for the optional trace CSV.
#[derive(Debug, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub ess: f64,
    pub node_count: usize,
    pub log_incr: f64,
}

/// Writes the `k,ess,node_count,log_incr` diagnostic trace.
pub fn write_trace_csv(path: &std::path::Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
