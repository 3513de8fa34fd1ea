//! Posterior summarization: kernel density estimates, moments, empirical
//! quantiles, pairwise correlations, and the prior-posterior overlap
//! coefficient used to state identifiability claims. Overlap 1 means the
//! posterior is indistinguishable from the prior (nothing learned),
//! 0 means disjoint support.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pmmh::{Chain, Prior};

/// Silverman's rule-of-thumb bandwidth `1.06 sd n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::config("bandwidth selection needs >= 2 samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(Error::config("degenerate samples; supply a bandwidth explicitly"));
    }
    Ok(1.06 * sd * n.powf(-0.2))
}

/// Gaussian kernel density estimate on a sorted grid. With no bandwidth
/// given, Silverman's rule is used (requiring >= 2 non-degenerate
/// samples); a forced bandwidth admits any nonempty sample set.
pub fn kde(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::config("kde needs at least one sample"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(_) => return Err(Error::config("bandwidth must be > 0")),
        None => silverman_bandwidth(samples)?,
    };
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Evenly spaced grid covering the sample range extended by
/// `pad_bandwidths` bandwidths on each side.
pub fn kde_grid(samples: &[f64], bandwidth: f64, pad_bandwidths: f64, points: usize) -> Vec<f64> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - pad_bandwidths * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad_bandwidths * bandwidth;
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    (0..points).map(|i| lo + i as f64 * step).collect()
}

/// Per-parameter posterior statistics.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Prior-posterior overlap in [0, 1], when a prior was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    /// Pearson correlation matrix; degenerate (constant) coordinates get
    /// zero off-diagonal entries and a flag below.
    pub correlation: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
    pub burn_in: f64,
    pub n_kept: usize,
}

/// Empirical quantile with linear interpolation on sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Post-burn-in parameter columns of a chain.
pub fn chain_columns(chain: &Chain, burn_in: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::config("burn_in must lie in [0, 1)"));
    }
    if chain.is_empty() {
        return Err(Error::config("empty chain"));
    }
    let skip = (burn_in * chain.len() as f64).floor() as usize;
    let kept = &chain.samples[skip..];
    if kept.is_empty() {
        return Err(Error::config("burn-in removed every sample"));
    }
    let dim = kept[0].len();
    let mut cols = vec![Vec::with_capacity(kept.len()); dim];
    for s in kept {
        for (i, &v) in s.iter().enumerate() {
            cols[i].push(v);
        }
    }
    Ok(cols)
}

/// Moments, quantiles and correlations of the post-burn-in chain.
pub fn summarize(chain: &Chain, burn_in: f64) -> Result<PosteriorSummary> {
    summarize_columns(&chain_columns(chain, burn_in)?, burn_in)
}

/// Like [`summarize`], additionally scoring each parameter's
/// prior-posterior overlap.
pub fn summarize_with_prior(
    chain: &Chain,
    burn_in: f64,
    prior: &Prior,
    grid_size: usize,
) -> Result<PosteriorSummary> {
    let cols = chain_columns(chain, burn_in)?;
    let mut summary = summarize_columns(&cols, burn_in)?;
    for (i, col) in cols.iter().enumerate() {
        summary.params[i].overlap = Some(prior_posterior_overlap(prior, i, col, grid_size)?);
    }
    Ok(summary)
}

/// Summary over pooled columns (used directly when pooling several
/// chains).
pub fn summarize_columns(cols: &[Vec<f64>], burn_in: f64) -> Result<PosteriorSummary> {
    if cols.is_empty() || cols[0].is_empty() {
        return Err(Error::config("no samples to summarize"));
    }
    let dim = cols.len();
    let n = cols[0].len() as f64;
    let mut params = Vec::with_capacity(dim);
    let mut degenerate = vec![false; dim];
    let mut means = vec![0.0; dim];
    let mut sds = vec![0.0; dim];
    for (i, col) in cols.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n;
        let var = if col.len() > 1 {
            col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let sd = var.sqrt();
        degenerate[i] = sd == 0.0;
        means[i] = mean;
        sds[i] = sd;
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        params.push(ParamSummary {
            mean,
            sd,
            q05: quantile(&sorted, 0.05),
            q50: quantile(&sorted, 0.50),
            q95: quantile(&sorted, 0.95),
            overlap: None,
        });
    }
    let mut correlation = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        correlation[i][i] = 1.0;
        for j in 0..i {
            let r = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                let cov = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                (cov / (sds[i] * sds[j])).clamp(-1.0, 1.0)
            };
            correlation[i][j] = r;
            correlation[j][i] = r;
        }
    }
    Ok(PosteriorSummary {
        params,
        correlation,
        degenerate,
        burn_in,
        n_kept: cols[0].len(),
    })
}

/// Overlap coefficient between the KDE of posterior samples and the
/// prior marginal of component `i`: `1 - 0.5 integral |kde - prior|`
/// over the prior's box support, trapezoid rule on `grid_size` points.
pub fn prior_posterior_overlap(
    prior: &Prior,
    i: usize,
    samples: &[f64],
    grid_size: usize,
) -> Result<f64> {
    if i >= prior.dim() {
        return Err(Error::config("parameter index out of range"));
    }
    if grid_size < 2 {
        return Err(Error::config("grid_size must be >= 2"));
    }
    let (lo, hi) = (prior.lo[i], prior.hi[i]);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|k| lo + k as f64 * step).collect();
    let bw = silverman_bandwidth(samples)
        .unwrap_or((hi - lo) * 1e-3); // point-mass posterior: estimate with a narrow kernel
    let post = kde(samples, &grid, Some(bw))?;
    let mut l1 = 0.0;
    for k in 0..grid_size {
        let diff = (post[k] - prior.marginal_density(i, grid[k])).abs();
        let w = if k == 0 || k == grid_size - 1 { 0.5 } else { 1.0 };
        l1 += w * diff * step;
    }
    // KDE mass outside the box also counts as disagreement; the in-box
    // L1 distance alone underestimates it, so clamp is the only guard
    Ok((1.0 - 0.5 * l1).clamp(0.0, 1.0))
}

/// Writes a `x,density` KDE curve for one parameter.
pub fn write_kde_csv(
    path: &std::path::Path,
    samples: &[f64],
    points: usize,
    bandwidth: Option<f64>,
) -> Result<()> {
    let h = match bandwidth {
        Some(h) => h,
        None => silverman_bandwidth(samples)?,
    };
    let grid = kde_grid(samples, h, 5.0, points);
    let dens = kde(samples, &grid, Some(h))?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "density"])?;
    for (x, d) in grid.iter().zip(&dens) {
        w.write_record([format!("{x:.17e}"), format!("{d:.17e}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmmh::PriorKind;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn chain_of(samples: Vec<Vec<f64>>) -> Chain {
        let n = samples.len();
        Chain {
            samples,
            loglik: vec![0.0; n],
            accepted: vec![true; n],
            acceptance_rate: 1.0,
            tuning_meta: None,
        }
    }

    #[test]
    fn kde_point_mass_peak() {
        let d = kde(&[0.0], &[0.0], Some(1.0)).unwrap();
        assert_abs_diff_eq!(d[0], 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn kde_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let samples: Vec<f64> = (0..500).map(|_| rng.random_range(-2.0..3.0)).collect();
        let h = silverman_bandwidth(&samples).unwrap();
        let grid = kde_grid(&samples, h, 5.0, 2000);
        let dens = kde(&samples, &grid, None).unwrap();
        let step = grid[1] - grid[0];
        let integral: f64 = dens.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
        assert!((0.99..=1.01).contains(&integral), "integral {integral}");
        assert!(dens.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn kde_recovers_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let grid: Vec<f64> = (0..400).map(|i| -4.0 + i as f64 * 0.02).collect();
        let dens = kde(&samples, &grid, None).unwrap();
        let max_dev = grid
            .iter()
            .zip(&dens)
            .map(|(&x, &d)| {
                let truth = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                (d - truth).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_dev <= 0.02, "max deviation {max_dev}");
    }

    #[test]
    fn kde_input_validation() {
        assert!(kde(&[], &[0.0], Some(1.0)).is_err());
        assert!(kde(&[1.0], &[0.0], None).is_err());
        assert!(kde(&[1.0, 1.0], &[0.0], None).is_err());
    }

    #[test]
    fn summarize_burn_in_arithmetic() {
        let chain = chain_of(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let s = summarize(&chain, 0.5).unwrap();
        assert_eq!(s.params[0].mean, 3.5);
        assert_eq!(s.n_kept, 2);
    }

    #[test]
    fn summarize_constant_chain_is_flagged() {
        let chain = chain_of(vec![vec![2.0, 5.0]; 10]);
        let s = summarize(&chain, 0.0).unwrap();
        assert_eq!(s.params[0].sd, 0.0);
        assert_eq!(s.params[0].q05, 2.0);
        assert_eq!(s.params[0].q95, 2.0);
        assert!(s.degenerate.iter().all(|&d| d));
        assert_eq!(s.correlation[0][1], 0.0);
        assert_eq!(s.correlation[0][0], 1.0);
    }

    #[test]
    fn summarize_quantiles_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chain = chain_of(
            (0..500)
                .map(|_| vec![rng.sample::<f64, _>(StandardNormal), rng.random_range(0.0..1.0)])
                .collect(),
        );
        let s = summarize(&chain, 0.25).unwrap();
        for p in &s.params {
            assert!(p.q05 <= p.q50 && p.q50 <= p.q95);
            assert!(p.mean >= p.q05 && p.mean <= p.q95);
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((-1.0..=1.0).contains(&s.correlation[i][j]));
                assert_eq!(s.correlation[i][j], s.correlation[j][i]);
            }
        }
    }

    #[test]
    fn summarize_correlated_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let chain = chain_of(
            (0..2000)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    let e: f64 = rng.sample(StandardNormal);
                    vec![x, -x + 0.1 * e]
                })
                .collect(),
        );
        let s = summarize(&chain, 0.0).unwrap();
        assert!(s.correlation[0][1] < -0.9);
    }

    #[test]
    fn overlap_of_prior_samples_is_high() {
        let prior = Prior::battery(PriorKind::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| rng.random_range(prior.lo[3]..prior.hi[3]))
            .collect();
        let o = prior_posterior_overlap(&prior, 3, &samples, 512).unwrap();
        assert!(o >= 0.9, "self-overlap {o}");
    }

    #[test]
    fn overlap_of_point_mass_is_low() {
        let prior = Prior::battery(PriorKind::Uniform);
        // posterior concentrated near the middle of a wide uniform prior
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples: Vec<f64> = (0..5000)
            .map(|_| 400.0 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let o = prior_posterior_overlap(&prior, 3, &samples, 1024).unwrap();
        assert!(o < 0.1, "point-mass overlap {o}");
        // and it is always a valid coefficient
        assert!((0.0..=1.0).contains(&o));
    }

    #[test]
    fn kde_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kde.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        write_kde_csv(&path, &samples, 64, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,density"));
        assert_eq!(text.lines().count(), 65);
    }
}
