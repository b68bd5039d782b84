//! Urn samplers: entry sources realizing the full conditionals of the
//! top-level and per-gene random measures, plus the plain Polya urn step.
//!
//! A cache entry of the top-level measure is either a fresh base-measure
//! draw (probability ∝ α_H) or a copy of an existing global dish
//! (probability ∝ its count). A per-gene entry is either a copy of an
//! existing group dish or a draw from the top-level realization, which
//! recurses into the shared per-group cache.

use std::sync::Arc;

use rand::Rng;

use crate::atom::Atom;
use crate::error::Result;
use crate::model::BaseMeasure;
use crate::rng::{stream, StreamKey};
use crate::sticks::{EntrySource, StickBreakingCache};

/// Pick a component of (α, counts...) at uniform-scaled coordinate.
/// Returns None for the α branch, Some(index) for a count.
pub fn pick_branch(alpha: f64, counts: &[u64], u: f64) -> Option<usize> {
    let total: f64 = alpha + counts.iter().sum::<u64>() as f64;
    let mut r = u * total;
    if r < alpha {
        return None;
    }
    r -= alpha;
    for (idx, &c) in counts.iter().enumerate() {
        r -= c as f64;
        if r < 0.0 {
            return Some(idx);
        }
    }
    // numeric edge: fall back to the last nonzero count
    counts.iter().rposition(|&c| c > 0)
}

/// Entry source for a group's top-level cache: mean measure
/// (α_H·base + Σ_s n_sk·δ_{ζ_s}) / (α_H + n_·k).
pub struct HSource<'a> {
    pub seed: u64,
    pub sweep: u64,
    pub k: u8,
    pub alpha_h: f64,
    pub base: BaseMeasure,
    pub zeta: &'a [Arc<Atom>],
    /// n_sk for this group, aligned with `zeta`.
    pub counts: &'a [u64],
}

impl EntrySource for HSource<'_> {
    fn entry(&mut self, pos: u64) -> Result<(f64, Arc<Atom>)> {
        let mut rng = stream(
            self.seed,
            StreamKey::HCacheEntry {
                sweep: self.sweep,
                k: self.k,
                pos,
            },
        );
        let u_stick = 1.0 - rng.gen::<f64>();
        let atom = match pick_branch(self.alpha_h, self.counts, rng.gen()) {
            None => Atom::new(self.base.draw(&mut rng)),
            Some(s) => self.zeta[s].clone(),
        };
        Ok((u_stick, atom))
    }
}

/// Entry source for a gene's cache: mean measure
/// (α_G0·H_k + Σ_l n_ljk·δ_{ξ_l}) / (α_G0 + n_·jk), with the H_k branch
/// recursing into the shared per-group cache.
pub struct G0Source<'a> {
    pub seed: u64,
    pub sweep: u64,
    pub k: u8,
    pub j: u32,
    pub alpha_g0: f64,
    pub xi: &'a [Arc<Atom>],
    /// n_ljk for this gene, aligned with `xi`.
    pub counts: &'a [u64],
    pub h_cache: &'a mut StickBreakingCache,
    pub h_source: HSource<'a>,
}

impl EntrySource for G0Source<'_> {
    fn entry(&mut self, pos: u64) -> Result<(f64, Arc<Atom>)> {
        let mut rng = stream(
            self.seed,
            StreamKey::G0CacheEntry {
                sweep: self.sweep,
                k: self.k,
                j: self.j,
                pos,
            },
        );
        let u_stick = 1.0 - rng.gen::<f64>();
        let atom = match pick_branch(self.alpha_g0, self.counts, rng.gen()) {
            None => {
                let l = self.h_cache.prior_index(&mut self.h_source, rng.gen())?;
                self.h_cache.atom(l).clone()
            }
            Some(l) => self.xi[l].clone(),
        };
        Ok((u_stick, atom))
    }
}

/// One draw from a realized measure: the minimal stick index covering `u`.
pub fn measure_draw(
    cache: &mut StickBreakingCache,
    src: &mut dyn EntrySource,
    u: f64,
) -> Result<Arc<Atom>> {
    let l = cache.prior_index(src, u)?;
    Ok(cache.atom(l).clone())
}

/// Outcome of one Polya urn step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolyaDraw {
    /// Draw fresh from the base branch.
    Fresh,
    /// Copy the given previous draw (0-based among the first m−1).
    Copy(usize),
}

/// The m-th urn step (1-based): fresh with probability α/(α+m−1), otherwise
/// a uniformly chosen previous draw. `u` is the caller's uniform.
pub fn polya_step(m: usize, alpha: f64, u: f64) -> PolyaDraw {
    assert!(m >= 1);
    if m == 1 {
        return PolyaDraw::Fresh;
    }
    let prev = (m - 1) as f64;
    let fresh_p = alpha / (alpha + prev);
    if u < fresh_p {
        PolyaDraw::Fresh
    } else {
        let v = (u - fresh_p) / (1.0 - fresh_p);
        PolyaDraw::Copy(((v * prev) as usize).min(m - 2))
    }
}
