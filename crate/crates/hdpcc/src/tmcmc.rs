//! Block hyperparameter update by a mixture of additive and multiplicative
//! transformation moves.
//!
//! The target factors are the three sequential urn likelihoods: the row urn
//! per (i, k) (fresh with probability ∝ α_G,ik, copy ∝ previous multiplicity),
//! the dish urn per triplet (dishes are distinct by construction, so every
//! factor is a fresh factor in α_G0,k), and the group-dish urn (likewise all
//! fresh in α_H). Everything the likelihood needs from the chain state is
//! condensed into [`UrnStats`] once, so repeated evaluations at candidate
//! hyperparameters cost O(N·M) with no state traversal.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::data::EnvMatrix;
use crate::error::Result;
use crate::model::{precision_at, HyperParams, Level};
use crate::registry::Registry;
use crate::state::ChainState;

/// Sufficient statistics of the three urn likelihoods.
#[derive(Debug, Clone)]
pub struct UrnStats {
    /// Per (k, i): fresh-draw count at rows m ≥ 2 and the α-free copy-log
    /// constant Σ log(multiplicity).
    pub row_fresh: [Vec<u64>; 2],
    pub row_copy_const: [Vec<f64>; 2],
    /// Rows per mixture.
    pub m: usize,
    /// Genes.
    pub n_genes: usize,
    /// Per k: total fresh dish factors Σ_{i,j} (τ_ijk − 1).
    pub dish_fresh: [u64; 2],
    /// Per k: hist\[t\] = #{(i,j): τ_ijk ≥ t+2} for denominator terms at
    /// positions t+2.
    pub dish_hist: [Vec<u64>; 2],
    /// Distinct dishes per group.
    pub r_k: [usize; 2],
}

impl UrnStats {
    pub fn build(state: &ChainState, n_genes: usize, m: usize) -> Self {
        let mut row_fresh: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
        let mut row_copy_const: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut dish_fresh = [0u64; 2];
        let mut dish_hist: [Vec<u64>; 2] = [vec![0; m.saturating_sub(1)], vec![0; m.saturating_sub(1)]];

        for k in 0..2 {
            for per_gene in &state.triplets[k] {
                let mut fresh = 0u64;
                let mut copy_const = 0.0;
                for triplet in per_gene {
                    // row urn: walk labels in row order
                    let mut seen = vec![0u64; triplet.dishes.len()];
                    for (mm, &t) in triplet.labels.iter().enumerate() {
                        if mm > 0 {
                            if seen[t] == 0 {
                                fresh += 1;
                            } else {
                                copy_const += (seen[t] as f64).ln();
                            }
                        }
                        seen[t] += 1;
                    }
                    // dish urn: τ − 1 fresh factors at positions 2..τ
                    let tau = triplet.tau();
                    dish_fresh[k] += (tau - 1) as u64;
                    for t in 2..=tau {
                        dish_hist[k][t - 2] += 1;
                    }
                }
                row_fresh[k].push(fresh);
                row_copy_const[k].push(copy_const);
            }
        }

        let registry = Registry::build(state, n_genes);
        UrnStats {
            row_fresh,
            row_copy_const,
            m,
            n_genes,
            dish_fresh,
            dish_hist,
            r_k: [registry.groups[0].r_k(), registry.groups[1].r_k()],
        }
    }

    /// Log urn likelihood of one level under candidate hyperparameters.
    pub fn level_loglik(
        &self,
        level: Level,
        hyper: &HyperParams,
        env: &EnvMatrix,
        cfg: &RunConfig,
    ) -> Result<f64> {
        let mut total = 0.0;
        match level {
            Level::G => {
                for k in 0..2 {
                    for i in 0..self.row_fresh[k].len() {
                        let alpha =
                            precision_at(cfg.consts_g, hyper.mu_g, &hyper.beta_g, env.row(k, i))?;
                        let mut denom = 0.0;
                        for mm in 2..=self.m {
                            denom += (alpha + (mm - 1) as f64).ln();
                        }
                        total += self.row_fresh[k][i] as f64 * alpha.ln()
                            + self.row_copy_const[k][i]
                            - self.n_genes as f64 * denom;
                    }
                }
            }
            Level::G0 => {
                for k in 0..2 {
                    let alpha = precision_at(
                        cfg.consts_g0,
                        hyper.mu_g0,
                        &hyper.beta_g0,
                        env.group_mean(k),
                    )?;
                    total += self.dish_fresh[k] as f64 * alpha.ln();
                    for (slot, &count) in self.dish_hist[k].iter().enumerate() {
                        if count > 0 {
                            // denominator at dish position t = slot + 2
                            total -= count as f64 * (alpha + (slot + 1) as f64).ln();
                        }
                    }
                }
            }
            Level::H => {
                let alpha =
                    precision_at(cfg.consts_h, hyper.mu_h, &hyper.beta_h, env.grand_mean())?;
                for k in 0..2 {
                    total += (self.r_k[k] - 1) as f64 * alpha.ln();
                    for s in 2..=self.r_k[k] {
                        total -= (alpha + (s - 1) as f64).ln();
                    }
                }
            }
        }
        Ok(total)
    }

    /// Sum of the three level log-likelihoods.
    pub fn loglik(&self, hyper: &HyperParams, env: &EnvMatrix, cfg: &RunConfig) -> Result<f64> {
        Ok(self.level_loglik(Level::G, hyper, env, cfg)?
            + self.level_loglik(Level::G0, hyper, env, cfg)?
            + self.level_loglik(Level::H, hyper, env, cfg)?)
    }
}

/// Whether flattened coordinates lie inside the uniform prior box.
pub fn in_prior_support(coords: &[f64], d: usize, cfg: &RunConfig) -> bool {
    let mu_idx = [0, 1 + d, 2 + 2 * d];
    coords.iter().enumerate().all(|(idx, &v)| {
        if mu_idx.contains(&idx) {
            v >= cfg.mu_min && v <= cfg.mu_max
        } else {
            v >= cfg.beta_min && v <= cfg.beta_max
        }
    })
}

/// Log posterior density (up to a constant) at flattened coordinates, or
/// None outside the prior support. The uniform prior is flat inside the box.
pub fn log_target(
    coords: &[f64],
    d: usize,
    stats: &UrnStats,
    env: &EnvMatrix,
    cfg: &RunConfig,
) -> Result<Option<f64>> {
    if !in_prior_support(coords, d, cfg) {
        return Ok(None);
    }
    let hyper = HyperParams::from_vec(coords, d);
    Ok(Some(stats.loglik(&hyper, env, cfg)?))
}

/// A proposed block move with its log Jacobian.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub coords: Vec<f64>,
    pub log_jacobian: f64,
}

/// Draw one proposal: with probability `tmcmc_move_mix` an additive move
/// x' = x + b·a·ε with one shared ε ~ |N(0,1)| and independent signs b
/// (Jacobian 1); otherwise a multiplicative move x' = x·η with
/// η = exp(u), u ~ U(−a,a), Jacobian η^q.
pub fn propose(x: &[f64], cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Proposal {
    let additive = rng.gen::<f64>() < cfg.tmcmc_move_mix;
    if additive {
        let eps: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng).abs();
        let coords = x
            .iter()
            .map(|&v| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                v + sign * cfg.tmcmc_additive_scale * eps
            })
            .collect();
        Proposal {
            coords,
            log_jacobian: 0.0,
        }
    } else {
        let u = rng.gen_range(-cfg.tmcmc_mult_scale..cfg.tmcmc_mult_scale);
        let eta = u.exp();
        Proposal {
            coords: x.iter().map(|&v| v * eta).collect(),
            log_jacobian: x.len() as f64 * u,
        }
    }
}

/// One Metropolis step of the whole block. Returns whether the proposal was
/// accepted. `use_jacobian` exists so tests can exercise the (incorrect)
/// Jacobian-free variant; production callers pass true.
pub fn step(
    hyper: &mut HyperParams,
    stats: &UrnStats,
    env: &EnvMatrix,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
    use_jacobian: bool,
) -> Result<bool> {
    let d = hyper.beta_g.len();
    let x = hyper.to_vec();
    let cur = stats.loglik(hyper, env, cfg)?;
    let prop = propose(&x, cfg, rng);
    let u: f64 = rng.gen();
    let Some(new) = log_target(&prop.coords, d, stats, env, cfg)? else {
        return Ok(false); // outside prior support: auto-reject
    };
    let mut log_r = new - cur;
    if use_jacobian {
        log_r += prop.log_jacobian;
    }
    if u.ln() < log_r {
        *hyper = HyperParams::from_vec(&prop.coords, d);
        Ok(true)
    } else {
        Ok(false)
    }
}
