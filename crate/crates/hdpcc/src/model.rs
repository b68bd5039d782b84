//! Core model pieces: the Bernoulli allele kernel, the log-linear precision
//! maps, and the base measure over allele-probability vectors.
//!
//! All likelihood arithmetic is done in log space; with more than a thousand
//! loci the raw products underflow long before they become comparable.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::EnvMatrix;
use crate::error::{Error, Result};

/// Clamp applied to sampled probabilities so log kernels stay finite.
pub const P_CLAMP: f64 = 1e-12;

/// Mixture-precision hyperparameters: one intercept and one coefficient
/// vector per level of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub mu_g: f64,
    pub beta_g: Vec<f64>,
    pub mu_g0: f64,
    pub beta_g0: Vec<f64>,
    pub mu_h: f64,
    pub beta_h: Vec<f64>,
}

impl HyperParams {
    pub fn zeros(d: usize) -> Self {
        HyperParams {
            mu_g: 0.0,
            beta_g: vec![0.0; d],
            mu_g0: 0.0,
            beta_g0: vec![0.0; d],
            mu_h: 0.0,
            beta_h: vec![0.0; d],
        }
    }

    /// Flatten into (mu_g, beta_g.., mu_g0, beta_g0.., mu_h, beta_h..),
    /// the coordinate order used by the block update.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + 3 * self.beta_g.len());
        v.push(self.mu_g);
        v.extend_from_slice(&self.beta_g);
        v.push(self.mu_g0);
        v.extend_from_slice(&self.beta_g0);
        v.push(self.mu_h);
        v.extend_from_slice(&self.beta_h);
        v
    }

    pub fn from_vec(v: &[f64], d: usize) -> Self {
        assert_eq!(v.len(), 3 + 3 * d);
        HyperParams {
            mu_g: v[0],
            beta_g: v[1..1 + d].to_vec(),
            mu_g0: v[1 + d],
            beta_g0: v[2 + d..2 + 2 * d].to_vec(),
            mu_h: v[2 + 2 * d],
            beta_h: v[3 + 2 * d..].to_vec(),
        }
    }
}

/// Which precision map of the three-level hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Per-individual mixture level, driven by E_ik.
    G,
    /// Per-group gene level, driven by the group mean covariate.
    G0,
    /// Top level, driven by the grand mean covariate.
    H,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::G => "G",
            Level::G0 => "G0",
            Level::H => "H",
        }
    }
}

/// Fixed scale/offset constants of one precision map: alpha = scale * exp(offset + mu + beta'e).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionConsts {
    pub scale: f64,
    pub offset: f64,
}

impl Default for PrecisionConsts {
    fn default() -> Self {
        PrecisionConsts {
            scale: 0.1,
            offset: 100.0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluate one precision map at covariate vector `e`.
pub fn precision_at(consts: PrecisionConsts, mu: f64, beta: &[f64], e: &[f64]) -> Result<f64> {
    let alpha = consts.scale * (consts.offset + mu + dot(beta, e)).exp();
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Numeric(format!(
            "precision map produced non-positive or non-finite alpha = {alpha}"
        )));
    }
    Ok(alpha)
}

/// The alpha value for `level`; `i` is required for G, `k` for G and G0.
pub fn precision(
    level: Level,
    consts: PrecisionConsts,
    hp: &HyperParams,
    env: &EnvMatrix,
    i: Option<usize>,
    k: Option<usize>,
) -> Result<f64> {
    let res = match level {
        Level::G => {
            let (i, k) = (
                i.ok_or_else(|| Error::Validation("level G requires i".into()))?,
                k.ok_or_else(|| Error::Validation("level G requires k".into()))?,
            );
            precision_at(consts, hp.mu_g, &hp.beta_g, env.row(k, i))
        }
        Level::G0 => {
            let k = k.ok_or_else(|| Error::Validation("level G0 requires k".into()))?;
            precision_at(consts, hp.mu_g0, &hp.beta_g0, env.group_mean(k))
        }
        Level::H => precision_at(consts, hp.mu_h, &hp.beta_h, env.grand_mean()),
    };
    res.map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("level {}: {msg}", level.name())),
        other => other,
    })
}

/// Bernoulli mass of an allele pair: p^(x1+x2) (1-p)^(2-x1-x2).
pub fn bernoulli_kernel(x: (u8, u8), p: f64) -> Result<f64> {
    Ok(log_bernoulli_kernel(x, p)?.exp())
}

/// Log-space variant of [`bernoulli_kernel`].
pub fn log_bernoulli_kernel(x: (u8, u8), p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("allele probability {p} outside (0,1)")));
    }
    if x.0 > 1 || x.1 > 1 {
        return Err(Error::Domain(format!("allele pair ({}, {}) not binary", x.0, x.1)));
    }
    let ones = (x.0 + x.1) as f64;
    Ok(ones * p.ln() + (2.0 - ones) * (1.0 - p).ln())
}

/// Log kernel from minor/major allele counts at one locus.
#[inline]
pub fn log_kernel_counts(n1: f64, n2: f64, p: f64) -> f64 {
    n1 * p.ln() + n2 * (1.0 - p).ln()
}

/// Sum of per-locus log Bernoulli kernels of `rows` against `p` over `range`
/// (0-based, exclusive end). Empty range yields 0.
pub fn locus_product_loglik(rows: &[(u8, u8)], p: &[f64], range: std::ops::Range<usize>) -> f64 {
    range
        .map(|r| {
            let ones = (rows[r].0 + rows[r].1) as f64;
            log_kernel_counts(ones, 2.0 - ones, p[r])
        })
        .sum()
}

/// Stable log(sum(exp(x))) over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Base measure over allele-probability vectors: independent Beta(nu1, nu2)
/// per locus.
#[derive(Debug, Clone, Copy)]
pub struct BaseMeasure {
    pub nu1: f64,
    pub nu2: f64,
    pub n_loci: usize,
}

impl BaseMeasure {
    pub fn new(nu1: f64, nu2: f64, n_loci: usize) -> Result<Self> {
        if nu1 <= 0.0 || nu2 <= 0.0 {
            return Err(Error::Domain(format!(
                "base measure shapes must be positive, got ({nu1}, {nu2})"
            )));
        }
        Ok(BaseMeasure { nu1, nu2, n_loci })
    }

    /// Draw one atom, clamped away from {0,1}.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let beta = Beta::new(self.nu1, self.nu2).expect("shapes checked at construction");
        (0..self.n_loci)
            .map(|_| beta.sample(rng).clamp(P_CLAMP, 1.0 - P_CLAMP))
            .collect()
    }
}
