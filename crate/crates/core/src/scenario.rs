//! Scenario-driven experiment runner: simulates (or loads) a dataset,
//! runs independent tuned PMMH chains, and writes the chain, KDE and
//! summary artifacts for each of the built-in identifiability studies.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::fom::{gen_prbs, BatteryTheta, Dataset, DatasetMeta, FoModel, PARAM_NAMES};
use crate::pmmh::{
    battery_loglik_estimator, tune_and_run, Chain, ChainInit, PmmhConfig, Prior, PriorKind,
};
use crate::smc::{FilterConfig, Proposal, Resampling};

/// Desk-scale defaults; `--paper-scale` switches to the full study size.
pub const DESK_ITERATIONS: usize = 2_000;
pub const DESK_CHAINS: usize = 3;
pub const PAPER_ITERATIONS: usize = 20_000;
pub const PAPER_CHAINS: usize = 5;

/// Flat experiment description; serializable as a flat key-value JSON
/// scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Data length T; observations run k = 0..=T.
    pub t_len: usize,
    pub input_magnitude: f64,
    pub prior_kind: PriorKind,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub ts: f64,
    pub theta_true: BatteryTheta,
    pub n_particles: usize,
    /// Main-run PMMH iterations M.
    pub iterations: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Preliminary-run length; defaults to 5000 when omitted.
    #[serde(default = "default_tuning_iterations")]
    pub tuning_iterations: usize,
    #[serde(default = "default_proposal")]
    pub proposal: Proposal,
}

fn default_tuning_iterations() -> usize {
    5_000
}

fn default_proposal() -> Proposal {
    Proposal::Bootstrap
}

impl Scenario {
    fn base_with(name: &str) -> Scenario {
        Scenario {
            name: name.to_string(),
            t_len: 930,
            input_magnitude: 1.0,
            prior_kind: PriorKind::Uniform,
            sigma_x: 0.002,
            sigma_y: 0.02,
            ts: 5e-4,
            theta_true: BatteryTheta::reference(),
            n_particles: 128,
            iterations: DESK_ITERATIONS,
            n_chains: DESK_CHAINS,
            seed: 2016,
            tuning_iterations: default_tuning_iterations(),
            proposal: Proposal::Bootstrap,
        }
    }

    pub fn paper_scale(&mut self) {
        self.iterations = PAPER_ITERATIONS;
        self.n_chains = PAPER_CHAINS;
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("invalid scenario field `{name}`")))
            }
        };
        field("t_len", self.t_len >= 2)?;
        field("input_magnitude", self.input_magnitude > 0.0)?;
        field("sigma_x", self.sigma_x >= 0.0)?;
        field("sigma_y", self.sigma_y > 0.0)?;
        field("ts", self.ts > 0.0)?;
        field("n_particles", self.n_particles >= 1)?;
        field("iterations", self.iterations >= 1)?;
        field("n_chains", self.n_chains >= 1)?;
        field("tuning_iterations", self.tuning_iterations >= 2)?;
        self.theta_true
            .validate()
            .map_err(|_| Error::config("invalid scenario field `theta_true`"))
    }

    pub fn prior(&self) -> Prior {
        Prior::battery(self.prior_kind)
    }

    /// Simulates the scenario's synthetic dataset.
    pub fn simulate(&self) -> Result<(FoModel, Dataset)> {
        let model = FoModel::battery(
            &self.theta_true,
            self.ts,
            self.t_len,
            self.sigma_x,
            self.sigma_y,
        )?;
        let u = gen_prbs(self.t_len + 1, self.input_magnitude, self.seed);
        let mut data = model.simulate(&u, self.seed)?;
        data.theta_true = Some(self.theta_true);
        Ok((model, data))
    }
}

/// The built-in studies: base setup plus the data-length, input
/// magnitude, prior and noise-ratio variations.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let mut tlen_635 = Scenario::base_with("tlen_635");
    tlen_635.t_len = 635;
    let mut tlen_1890 = Scenario::base_with("tlen_1890");
    tlen_1890.t_len = 1890;
    let mut mag5 = Scenario::base_with("mag5");
    mag5.input_magnitude = 5.0;
    let mut prior_gauss = Scenario::base_with("prior_gauss");
    prior_gauss.prior_kind = PriorKind::TruncatedGaussian;
    let mut snr_high = Scenario::base_with("snr_high");
    snr_high.sigma_y = 0.002;
    vec![
        Scenario::base_with("base"),
        tlen_635,
        tlen_1890,
        mag5,
        prior_gauss,
        snr_high,
    ]
}

/// Names and one-line descriptions of the built-in scenarios.
pub fn list_scenarios() -> Vec<(String, String)> {
    builtin_scenarios()
        .iter()
        .map(|s| {
            let desc = match s.name.as_str() {
                "base" => "base setup: T = 930, PRBS +/-1, uniform prior, sigma_y = 0.02".into(),
                "tlen_635" => "data-length study: T = 635".into(),
                "tlen_1890" => "data-length study: T = 1890".into(),
                "mag5" => "input magnitude 5 instead of 1".into(),
                "prior_gauss" => "truncated Gaussian prior instead of uniform".into(),
                "snr_high" => "low observation noise: sigma_y = 0.002".into(),
                other => other.to_string(),
            };
            (s.name.clone(), desc)
        })
        .collect()
}

/// Resolves a `--scenario` argument: a built-in name or a path to a
/// scenario JSON file.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    if let Some(s) = builtin_scenarios().into_iter().find(|s| s.name == arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sc: Scenario = serde_json::from_str(&text)?;
        sc.validate()?;
        return Ok(sc);
    }
    Err(Error::config(format!(
        "unknown scenario {arg:?}; use a built-in name ({}) or a JSON file path",
        list_scenarios()
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the scenario's dataset artifacts (`dataset.csv`,
/// `dataset_meta.json`, `scenario.json`) and returns the dataset.
pub fn write_dataset(scenario: &Scenario, out_dir: &Path) -> Result<Dataset> {
    ensure_dir(out_dir)?;
    let (_, data) = scenario.simulate()?;
    data.write_csv(&out_dir.join("dataset.csv"))?;
    let meta = DatasetMeta {
        ts: scenario.ts,
        seed: scenario.seed,
        theta_true: Some(scenario.theta_true),
        sigma_x: scenario.sigma_x,
        sigma_y: scenario.sigma_y,
    };
    write_json(&out_dir.join("dataset_meta.json"), &meta)?;
    write_json(&out_dir.join("scenario.json"), scenario)?;
    Ok(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the full scenario: dataset simulation, `n_chains` independent
/// tuned PMMH chains (seeds `seed + chain_index`, run concurrently), and
/// per-chain chain/KDE files plus a pooled summary JSON. Idempotent for
/// a fixed seed.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<()> {
    scenario.validate()?;
    let data = write_dataset(scenario, out_dir)?;
    let prior = scenario.prior();
    let filter_template = FilterConfig {
        n_particles: scenario.n_particles,
        proposal: scenario.proposal,
        resampling: Resampling::Systematic,
        seed: 0,
    };
    let chains: Vec<Result<Chain>> = (0..scenario.n_chains)
        .into_par_iter()
        .map(|c| {
            let loglik = battery_loglik_estimator(
                &data,
                scenario.ts,
                scenario.sigma_x,
                scenario.sigma_y,
                &filter_template,
            );
            let cfg = PmmhConfig {
                iterations: scenario.iterations,
                proposal_cov: nalgebra::DMatrix::identity(6, 6),
                filter: filter_template.clone(),
                seed: scenario.seed + c as u64,
                init: ChainInit::PriorDraw,
                stage1_iterations: scenario.tuning_iterations,
            };
            tune_and_run(&prior, loglik, &cfg)
        })
        .collect();
    let chains: Vec<Chain> = chains.into_iter().collect::<Result<_>>()?;
    let burn_in = 0.25;
    for (c, chain) in chains.iter().enumerate() {
        chain.write_csv(&out_dir.join(format!("chain_{c}.csv")), &PARAM_NAMES)?;
        if let Some(meta) = &chain.tuning_meta {
            write_json(&out_dir.join(format!("tuning_{c}.json")), meta)?;
        }
        let cols = analysis::chain_columns(chain, burn_in)?;
        for (p, col) in cols.iter().enumerate() {
            let path = out_dir.join(format!("kde_chain{}_{}.csv", c, PARAM_NAMES[p]));
            if analysis::write_kde_csv(&path, col, 256, None).is_err() {
                // constant column (chain never moved); skip the curve
                continue;
            }
        }
    }
    let summary = pooled_summary(&chains, burn_in, &prior, 512)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(())
}

/// Scenario summary JSON payload.
#[derive(Debug, Serialize)]
pub struct ScenarioSummary {
    pub parameters: Vec<ParamEntry>,
    pub correlation: Vec<Vec<f64>>,
    pub n_chains: usize,
    pub n_kept: usize,
    pub acceptance_rates: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct ParamEntry {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub overlap: Option<f64>,
}

/// Pools post-burn-in samples from several chains into one summary with
/// prior-posterior overlaps.
pub fn pooled_summary(
    chains: &[Chain],
    burn_in: f64,
    prior: &Prior,
    grid_size: usize,
) -> Result<ScenarioSummary> {
    if chains.is_empty() {
        return Err(Error::config("no chains to summarize"));
    }
    let dim = prior.dim();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); dim];
    for chain in chains {
        for (i, col) in analysis::chain_columns(chain, burn_in)?.into_iter().enumerate() {
            cols[i].extend(col);
        }
    }
    let mut summary = analysis::summarize_columns(&cols, burn_in)?;
    for i in 0..dim {
        summary.params[i].overlap =
            Some(analysis::prior_posterior_overlap(prior, i, &cols[i], grid_size)?);
    }
    Ok(ScenarioSummary {
        parameters: summary
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| ParamEntry {
                name: PARAM_NAMES[i].to_string(),
                mean: p.mean,
                sd: p.sd,
                q05: p.q05,
                q50: p.q50,
                q95: p.q95,
                overlap: p.overlap,
            })
            .collect(),
        correlation: summary.correlation,
        n_chains: chains.len(),
        n_kept: summary.n_kept,
        acceptance_rates: chains.iter().map(|c| c.acceptance_rate).collect(),
    })
}

/// Reads a chain CSV written by [`Chain::write_csv`].
pub fn read_chain_csv(path: &Path) -> Result<Chain> {
    let mut r = csv::Reader::from_path(path)?;
    let n_cols = r.headers()?.len();
    if n_cols < 3 {
        return Err(Error::config(format!("chain file {path:?} has too few columns")));
    }
    let dim = n_cols - 3;
    let mut samples = Vec::new();
    let mut loglik = Vec::new();
    let mut accepted = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::config(format!("bad number {s:?} in {path:?}: {e}")))
        };
        let mut row = Vec::with_capacity(dim);
        for i in 0..dim {
            row.push(parse(rec.get(1 + i).unwrap_or(""))?);
        }
        samples.push(row);
        loglik.push(parse(rec.get(1 + dim).unwrap_or(""))?);
        accepted.push(rec.get(2 + dim) == Some("1"));
    }
    if samples.is_empty() {
        return Err(Error::config(format!("chain file {path:?} is empty")));
    }
    let rate = accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64;
    Ok(Chain {
        samples,
        loglik,
        accepted,
        acceptance_rate: rate,
        tuning_meta: None,
    })
}
