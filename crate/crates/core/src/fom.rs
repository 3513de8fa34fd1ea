//! Discrete-time fractional-order model of the battery equivalent circuit.
//!
//! The continuous-time circuit is R_inf in series with R1 || CPE(C1, alpha1)
//! and a Warburg element CPE(C2, alpha2). Its Grünwald-Letnikov
//! discretization yields a state recursion that depends on the entire past:
//!
//!   x_{k+1} = sum_{j=0}^{k} A_j x_{k-j} + B u_k + sigma_x eps_k,
//!   y_k     = sum_i x_{k,i} + R_inf u_k + sigma_y eta_k,
//!
//! where the A_j are diagonal with entries built from signed fractional
//! binomial coefficients. All coefficient sequences are precomputed once
//! per parameter vector and shared read-only across particles.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter vector of the battery circuit, laid out as
/// `[R_inf, R1, C1, C2, alpha1, alpha2]`.
///
/// The resistor paired with C2 is open-circuit (Warburg term), so it is
/// not a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryTheta {
    /// Ohmic series resistance (Ohm).
    pub r_inf: f64,
    /// Charge-transfer resistance (Ohm).
    pub r1: f64,
    /// Pseudo-capacitance of the first CPE (F cm^-2 s^-alpha1).
    pub c1: f64,
    /// Pseudo-capacitance of the Warburg CPE (F cm^-2 s^-alpha2).
    pub c2: f64,
    /// Fractional order of the first CPE, in (0, 1).
    pub alpha1: f64,
    /// Fractional order of the Warburg CPE, in (0, 1).
    pub alpha2: f64,
}

/// Column labels matching [`BatteryTheta::to_array`].
pub const PARAM_NAMES: [&str; 6] = ["R_inf", "R1", "C1", "C2", "alpha1", "alpha2"];

impl BatteryTheta {
    pub fn new(r_inf: f64, r1: f64, c1: f64, c2: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        let theta = BatteryTheta {
            r_inf,
            r1,
            c1,
            c2,
            alpha1,
            alpha2,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// The synthetic-data generating parameter set used throughout the
    /// identifiability studies.
    pub fn reference() -> Self {
        BatteryTheta {
            r_inf: 0.01,
            r1: 0.2,
            c1: 3.0,
            c2: 400.0,
            alpha1: 0.8,
            alpha2: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::config("all battery parameters must be finite and > 0"));
        }
        for alpha in [self.alpha1, self.alpha2] {
            if !(0.0 < alpha && alpha < 1.0) {
                return Err(Error::config("fractional orders must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.r_inf, self.r1, self.c1, self.c2, self.alpha1, self.alpha2]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::config("battery parameter vector must have 6 entries"));
        }
        BatteryTheta::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }
}

/// Fractional binomial coefficient C(alpha, j) via the stable product
/// recursion `C(alpha, 0) = 1`, `C(alpha, j) = C(alpha, j-1) (alpha-j+1)/j`.
///
/// Equals Gamma(alpha+1) / (Gamma(j+1) Gamma(alpha+1-j)) wherever the
/// gamma form is finite; the recursion avoids its sign-alternating poles.
pub fn binom_frac(alpha: f64, j: u32) -> f64 {
    let mut c = 1.0;
    for i in 1..=j {
        c *= (alpha - (i as f64) + 1.0) / (i as f64);
    }
    c
}

/// Precomputed discrete-time model: per-dimension history coefficient
/// rows `coeff[i][j]` for lags j = 0..=horizon, input gains, output map
/// (all ones), feedthrough, noise scales and sample time.
#[derive(Debug, Clone)]
pub struct FoModel {
    /// State dimension (2 for the battery).
    pub n: usize,
    /// Sample time (s).
    pub ts: f64,
    /// `coeff[i][j]` multiplies state component i at lag j; n rows,
    /// horizon+1 columns.
    pub coeff: Vec<Vec<f64>>,
    /// Input gains per state component.
    pub b: Vec<f64>,
    /// Output row; all ones for the battery.
    pub m: Vec<f64>,
    /// Feedthrough (R_inf for the battery).
    pub d: f64,
    /// State noise standard deviation.
    pub sigma_x: f64,
    /// Observation noise standard deviation.
    pub sigma_y: f64,
    /// Number of transitions; observations run k = 0..=horizon.
    pub horizon: usize,
}

impl FoModel {
    /// Builds the battery model (n = 2, R2 open-circuit):
    /// `coeff[0][0] = alpha1 - ts^alpha1/(R1 C1)`, `coeff[1][0] = alpha2`,
    /// `coeff[i][j] = (-1)^j C(alpha_i, j+1)` for j >= 1,
    /// `b = (ts^alpha1/C1, ts^alpha2/C2)`, `d = R_inf`.
    pub fn battery(
        theta: &BatteryTheta,
        ts: f64,
        horizon: usize,
        sigma_x: f64,
        sigma_y: f64,
    ) -> Result<Self> {
        theta.validate()?;
        if !(ts > 0.0) {
            return Err(Error::config("sample time must be > 0"));
        }
        if horizon < 1 {
            return Err(Error::config("horizon must be >= 1"));
        }
        let alphas = [theta.alpha1, theta.alpha2];
        let mut coeff = Vec::with_capacity(2);
        for (i, &alpha) in alphas.iter().enumerate() {
            let mut row = Vec::with_capacity(horizon + 1);
            let a0 = if i == 0 {
                // 1/(R2 C2) term vanishes for the open-circuit Warburg branch.
                alpha - ts.powf(alpha) / (theta.r1 * theta.c1)
            } else {
                alpha
            };
            row.push(a0);
            // (-1)^j C(alpha, j+1) by extending the product recursion.
            let mut c = alpha; // C(alpha, 1)
            let mut sign = 1.0;
            for j in 1..=horizon {
                c *= (alpha - (j as f64)) / ((j + 1) as f64); // C(alpha, j+1)
                sign = -sign;
                row.push(sign * c);
            }
            coeff.push(row);
        }
        let b = vec![
            ts.powf(theta.alpha1) / theta.c1,
            ts.powf(theta.alpha2) / theta.c2,
        ];
        Ok(FoModel {
            n: 2,
            ts,
            coeff,
            b,
            m: vec![1.0; 2],
            d: theta.r_inf,
            sigma_x,
            sigma_y,
            horizon,
        })
    }

    /// Assembles a model from explicit parts. Used for non-battery test
    /// models (e.g. a scalar AR(1) is `coeff = [[a, 0, ...]]`).
    pub fn from_parts(
        coeff: Vec<Vec<f64>>,
        b: Vec<f64>,
        m: Vec<f64>,
        d: f64,
        ts: f64,
        sigma_x: f64,
        sigma_y: f64,
    ) -> Result<Self> {
        let n = coeff.len();
        if n == 0 {
            return Err(Error::config("coefficient table must have >= 1 row"));
        }
        let cols = coeff[0].len();
        if cols < 2 || coeff.iter().any(|r| r.len() != cols) {
            return Err(Error::config("coefficient rows must share length >= 2"));
        }
        if b.len() != n || m.len() != n {
            return Err(Error::config("b and m must match the state dimension"));
        }
        Ok(FoModel {
            n,
            ts,
            coeff,
            b,
            m,
            d,
            sigma_x,
            sigma_y,
            horizon: cols - 1,
        })
    }

    /// Deterministic part of the transition given the whole past:
    /// `sum_{j=0}^{k} diag(coeff[.][j]) x_{k-j} + b u_k` for a path
    /// `x_{0:k}` stored in time order.
    pub fn step_mean(&self, path: &[Vec<f64>], u: f64) -> Result<Vec<f64>> {
        if path.is_empty() {
            return Err(Error::config("step_mean needs a nonempty path"));
        }
        if path.len() > self.horizon {
            return Err(Error::config("path longer than model horizon"));
        }
        let k = path.len() - 1;
        let mut out: Vec<f64> = self.b.iter().map(|bi| bi * u).collect();
        for j in 0..=k {
            let x = &path[k - j];
            for i in 0..self.n {
                out[i] += self.coeff[i][j] * x[i];
            }
        }
        Ok(out)
    }

    /// Output mean `m . x + d u`.
    pub fn output_mean(&self, x: &[f64], u: f64) -> f64 {
        let mut y = self.d * u;
        for i in 0..self.n {
            y += self.m[i] * x[i];
        }
        y
    }

    /// Simulates a synthetic dataset from x_0 = 0 under the seeded noise
    /// stream. Draw order per time step k: one observation noise eta_k,
    /// then (for k < horizon) n state noises entering x_{k+1}.
    pub fn simulate(&self, u: &[f64], seed: u64) -> Result<Dataset> {
        if u.len() != self.horizon + 1 {
            return Err(Error::config(format!(
                "input length {} does not match horizon+1 = {}",
                u.len(),
                self.horizon + 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut path: Vec<Vec<f64>> = vec![vec![0.0; self.n]];
        let mut y = Vec::with_capacity(u.len());
        for k in 0..u.len() {
            let eta: f64 = rng.sample(StandardNormal);
            y.push(self.output_mean(&path[k], u[k]) + self.sigma_y * eta);
            if k < self.horizon {
                let mut next = self.step_mean(&path, u[k])?;
                for v in next.iter_mut() {
                    let eps: f64 = rng.sample(StandardNormal);
                    *v += self.sigma_x * eps;
                }
                path.push(next);
            }
        }
        Ok(Dataset {
            u: u.to_vec(),
            y,
            ts: self.ts,
            seed,
            theta_true: None,
        })
    }
}

/// Pseudo-random binary sequence from a maximal-length Fibonacci LFSR
/// with register length 10 and taps [10, 7] (period 1023). The initial
/// register is derived from the seed; every sample is +/- magnitude.
pub fn gen_prbs(length: usize, magnitude: f64, seed: u64) -> Vec<f64> {
    assert!(length >= 1, "PRBS length must be >= 1");
    assert!(magnitude > 0.0, "PRBS magnitude must be > 0");
    let mut state: u16 = ((seed % 1023) + 1) as u16; // nonzero 10-bit register
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let bit = state & 1;
        out.push(if bit == 1 { magnitude } else { -magnitude });
        let fb = ((state >> 9) ^ (state >> 6)) & 1;
        state = ((state << 1) | fb) & 0x3FF;
    }
    out
}

/// Complex impedance of the circuit at angular frequency omega:
/// `Z = R_inf + R1/(1 + R1 C1 (j w)^a1) + 1/(C2 (j w)^a2)`,
/// with principal-branch complex powers.
pub fn impedance(theta: &BatteryTheta, omega: f64) -> Complex64 {
    let jw = Complex64::new(0.0, omega);
    let s1 = jw.powf(theta.alpha1);
    let s2 = jw.powf(theta.alpha2);
    Complex64::new(theta.r_inf, 0.0)
        + theta.r1 / (1.0 + theta.r1 * theta.c1 * s1)
        + 1.0 / (theta.c2 * s2)
}

/// True iff every order divided by `base` is within `tol` of a positive
/// integer. Exposed with explicit base and tolerance; with real bases
/// any rational-ratio order pair is commensurate for a small enough base.
pub fn is_commensurate(orders: &[f64], base: f64, tol: f64) -> bool {
    assert!(!orders.is_empty() && base > 0.0 && tol >= 0.0);
    orders.iter().all(|&a| {
        let r = a / base;
        let k = r.round();
        k >= 1.0 && (r - k).abs() <= tol
    })
}

/// Input/observation record with provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Input sequence (A), length horizon+1.
    pub u: Vec<f64>,
    /// Observation sequence (V), same length as `u`.
    pub y: Vec<f64>,
    /// Sample time (s).
    pub ts: f64,
    /// RNG seed the dataset was simulated with.
    pub seed: u64,
    /// Generating parameters, when known.
    pub theta_true: Option<BatteryTheta>,
}

/// Sidecar metadata written next to the dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub ts: f64,
    pub seed: u64,
    pub theta_true: Option<BatteryTheta>,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.len() != self.y.len() || self.u.len() < 2 {
            return Err(Error::config("u and y must have identical length >= 2"));
        }
        Ok(())
    }

    /// Writes `k,u,y` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "u", "y"])?;
        for (k, (u, y)) in self.u.iter().zip(&self.y).enumerate() {
            w.write_record([k.to_string(), format!("{u:.17e}"), format!("{y:.17e}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, ts: f64, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut u = Vec::new();
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::config(format!("bad number {s:?} in {path:?}: {e}")))
            };
            u.push(parse(rec.get(1).unwrap_or(""))?);
            y.push(parse(rec.get(2).unwrap_or(""))?);
        }
        let ds = Dataset {
            u,
            y,
            ts,
            seed,
            theta_true: None,
        };
        ds.validate()?;
        Ok(ds)
    }
}
