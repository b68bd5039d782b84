//! Run configuration: sampler schedule, model constants, and tuning knobs.
//!
//! The on-disk format is a line-oriented `key = value` file. Unknown keys are
//! rejected outright — a silent typo in a sampler setting is the costliest
//! failure mode this tool has.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::PrecisionConsts;

/// All run settings for a fit. Defaults follow the reference settings; the
/// precision maps default to alpha = 0.1 * exp(100 + mu + beta'e).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Maximum mixture components per (i, j, k).
    pub m: usize,
    /// Base-measure Beta shapes.
    pub nu1: f64,
    pub nu2: f64,
    /// Chain schedule.
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub seed: u64,
    pub workers: usize,
    /// Precision-map constants per level.
    pub consts_g: PrecisionConsts,
    pub consts_g0: PrecisionConsts,
    pub consts_h: PrecisionConsts,
    /// Prior support for intercepts (uniform) and coefficients (uniform).
    pub mu_min: f64,
    pub mu_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Quantile used when calibrating test thresholds.
    pub eps_quantile: f64,
    /// Replicate draws per interaction-covariance estimate.
    pub r_cov: usize,
    /// Stick-breaking tail mass tolerance for normalizing constants.
    pub eps_trunc: f64,
    /// Hyperparameter move tuning.
    pub tmcmc_additive_scale: f64,
    pub tmcmc_mult_scale: f64,
    pub tmcmc_move_mix: f64,
    /// Pre-simulation budget for shared stick-breaking caches.
    pub cache_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: 10,
            nu1: 1.0,
            nu2: 1.0,
            iterations: 1000,
            burnin: 200,
            thin: 1,
            seed: 1,
            workers: 1,
            consts_g: PrecisionConsts::default(),
            consts_g0: PrecisionConsts::default(),
            consts_h: PrecisionConsts::default(),
            mu_min: 0.0,
            mu_max: 1.0,
            beta_min: -1.0,
            beta_max: 1.0,
            eps_quantile: 0.55,
            r_cov: 50,
            eps_trunc: 1e-10,
            tmcmc_additive_scale: 0.05,
            tmcmc_mult_scale: 0.05,
            tmcmc_move_mix: 0.5,
            cache_budget: 1024,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Validation(format!("m must be at least 2, got {}", self.m)));
        }
        if self.nu1 <= 0.0 || self.nu2 <= 0.0 {
            return Err(Error::Validation(format!(
                "nu1, nu2 must be positive, got ({}, {})",
                self.nu1, self.nu2
            )));
        }
        if self.burnin >= self.iterations {
            return Err(Error::Validation(format!(
                "burnin ({}) must be below iterations ({})",
                self.burnin, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        if !(self.eps_quantile > 0.0 && self.eps_quantile < 1.0) {
            return Err(Error::Validation(format!(
                "eps_quantile must lie in (0,1), got {}",
                self.eps_quantile
            )));
        }
        if !(self.eps_trunc > 0.0 && self.eps_trunc <= 1e-6) {
            return Err(Error::Validation(format!(
                "eps_trunc must lie in (0, 1e-6], got {}",
                self.eps_trunc
            )));
        }
        if self.mu_min >= self.mu_max || self.beta_min >= self.beta_max {
            return Err(Error::Validation("prior bounds must be ordered".into()));
        }
        if self.r_cov < 2 {
            return Err(Error::Validation("r_cov must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.tmcmc_move_mix) {
            return Err(Error::Validation("tmcmc_move_mix must lie in [0,1]".into()));
        }
        if self.tmcmc_additive_scale <= 0.0 || self.tmcmc_mult_scale <= 0.0 {
            return Err(Error::Validation("tmcmc scales must be positive".into()));
        }
        if self.cache_budget == 0 {
            return Err(Error::Validation("cache_budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Parse a `key = value` config body; unknown keys are validation errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: lineno,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Parse {
                line: lineno,
                msg: format!("bad {what} value {value:?} for key {key}"),
            };
            macro_rules! num {
                ($t:ty, $what:expr) => {
                    value.parse::<$t>().map_err(|_| bad($what))?
                };
            }
            match key {
                "m" => cfg.m = num!(usize, "integer"),
                "nu1" => cfg.nu1 = num!(f64, "float"),
                "nu2" => cfg.nu2 = num!(f64, "float"),
                "iterations" => cfg.iterations = num!(u64, "integer"),
                "burnin" => cfg.burnin = num!(u64, "integer"),
                "thin" => cfg.thin = num!(u64, "integer"),
                "seed" => cfg.seed = num!(u64, "integer"),
                "workers" => cfg.workers = num!(usize, "integer"),
                "scale_g" => cfg.consts_g.scale = num!(f64, "float"),
                "offset_g" => cfg.consts_g.offset = num!(f64, "float"),
                "scale_g0" => cfg.consts_g0.scale = num!(f64, "float"),
                "offset_g0" => cfg.consts_g0.offset = num!(f64, "float"),
                "scale_h" => cfg.consts_h.scale = num!(f64, "float"),
                "offset_h" => cfg.consts_h.offset = num!(f64, "float"),
                "mu_min" => cfg.mu_min = num!(f64, "float"),
                "mu_max" => cfg.mu_max = num!(f64, "float"),
                "beta_min" => cfg.beta_min = num!(f64, "float"),
                "beta_max" => cfg.beta_max = num!(f64, "float"),
                "eps_quantile" => cfg.eps_quantile = num!(f64, "float"),
                "r_cov" => cfg.r_cov = num!(usize, "integer"),
                "eps_trunc" => cfg.eps_trunc = num!(f64, "float"),
                "tmcmc_additive_scale" => cfg.tmcmc_additive_scale = num!(f64, "float"),
                "tmcmc_mult_scale" => cfg.tmcmc_mult_scale = num!(f64, "float"),
                "tmcmc_move_mix" => cfg.tmcmc_move_mix = num!(f64, "float"),
                "cache_budget" => cfg.cache_budget = num!(usize, "integer"),
                other => {
                    return Err(Error::Validation(format!(
                        "unknown config key {other:?} at line {lineno}"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
