//! Stick-breaking caches and retrospective sampling.
//!
//! A cache lazily materializes one realization of a discrete random measure
//! Σ_l w_l δ_{atom_l} (Sethuraman construction): stick fractions V_l come
//! from Beta(1, c) where c is the concentration, and atoms come from an
//! [`EntrySource`]. Entries only ever append, and every entry is generated
//! from randomness keyed by its position, so the realized prefix is the same
//! no matter which consumer forces the growth or in what order.
//!
//! Draws against a kernel-reweighted version of the measure (the
//! retrospective posterior draw) terminate at the deterministic minimal
//! prefix length at which bracketing bounds identify the sampled index, so a
//! result never depends on how far the cache happens to have grown.

use std::sync::Arc;

use crate::atom::Atom;
use crate::error::{Error, Result};

/// Hard cap on cache growth; exceeded only when tail mass refuses to decay.
pub const MAX_ATOMS: usize = 10_000_000;

/// Produces the raw material of cache entries. For entry `pos` it returns the
/// Beta uniform u ∈ (0,1] (the stick fraction is V = 1 − u^(1/c)) and the
/// atom. Implementations derive all randomness from `pos`-keyed streams.
pub trait EntrySource {
    fn entry(&mut self, pos: u64) -> Result<(f64, Arc<Atom>)>;
}

#[derive(Debug, Clone)]
struct Entry {
    atom: Arc<Atom>,
    weight: f64,
    /// ln(weight), cached because many scans revisit the same entry.
    log_weight: f64,
    /// Π_{a ≤ l} (1 − V_a): prior mass beyond this entry, exactly tracked.
    tail: f64,
}

/// One lazily grown stick-breaking realization.
#[derive(Debug, Clone)]
pub struct StickBreakingCache {
    concentration: f64,
    entries: Vec<Entry>,
}

pub(crate) fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    // ln1p(e^d) ≤ e^-80 ≈ 1.8e-35 is below half an ulp of any |hi| ≥ 1e-13,
    // so the sum rounds to hi exactly and the libm calls can be skipped
    if lo - hi < -80.0 && hi.abs() >= 1e-13 {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Outcome of a draw against a frozen prefix: either a result or a signal
/// that the cache must grow first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrozenOutcome<T> {
    Done(T),
    NeedMoreAtoms,
}

impl<T> FrozenOutcome<T> {
    pub fn done(self) -> Option<T> {
        match self {
            FrozenOutcome::Done(t) => Some(t),
            FrozenOutcome::NeedMoreAtoms => None,
        }
    }
}

impl StickBreakingCache {
    pub fn new(concentration: f64) -> Result<Self> {
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::Numeric(format!(
                "stick concentration must be positive and finite, got {concentration}"
            )));
        }
        Ok(StickBreakingCache {
            concentration,
            entries: Vec::new(),
        })
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn atom(&self, l: usize) -> &Arc<Atom> {
        &self.entries[l].atom
    }

    pub fn weight(&self, l: usize) -> f64 {
        self.entries[l].weight
    }

    /// ln of entry `l`'s weight (−∞ for an underflowed weight).
    pub fn log_weight(&self, l: usize) -> f64 {
        self.entries[l].log_weight
    }

    /// Prior mass not yet materialized.
    pub fn leftover(&self) -> f64 {
        self.entries.last().map_or(1.0, |e| e.tail)
    }

    /// Materialized prior mass, defined as 1 − leftover so the tail identity
    /// holds exactly.
    pub fn cumulative(&self) -> f64 {
        1.0 - self.leftover()
    }

    /// Prior mass beyond entry `l` (tails are strictly decreasing in `l`).
    pub fn tail_at(&self, l: usize) -> f64 {
        self.entries[l].tail
    }

    /// Append one entry from the source.
    pub fn extend_one(&mut self, src: &mut dyn EntrySource) -> Result<()> {
        if self.entries.len() >= MAX_ATOMS {
            return Err(Error::Truncation(format!(
                "stick-breaking cache exceeded {MAX_ATOMS} atoms (concentration {}, leftover mass {:e})",
                self.concentration,
                self.leftover()
            )));
        }
        let pos = self.entries.len() as u64;
        let (u, atom) = src.entry(pos)?;
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Numeric(format!("stick uniform {u} outside (0,1]")));
        }
        let shrink = u.powf(1.0 / self.concentration); // 1 − V
        let prev_tail = self.leftover();
        let weight = (1.0 - shrink) * prev_tail;
        self.entries.push(Entry {
            atom,
            weight,
            log_weight: if weight > 0.0 {
                weight.ln()
            } else {
                f64::NEG_INFINITY
            },
            tail: shrink * prev_tail,
        });
        Ok(())
    }

    /// Extend until the materialized mass reaches `target` (< 1). Existing
    /// entries are never touched.
    pub fn stick_extend(&mut self, src: &mut dyn EntrySource, target: f64) -> Result<()> {
        if !(target < 1.0) {
            return Err(Error::Validation(format!(
                "stick_extend target must be below 1, got {target}"
            )));
        }
        while self.cumulative() < target {
            self.extend_one(src)?;
        }
        Ok(())
    }

    pub fn extend_to_len(&mut self, src: &mut dyn EntrySource, len: usize) -> Result<()> {
        while self.entries.len() < len {
            self.extend_one(src)?;
        }
        Ok(())
    }

    /// Index of a prior draw at uniform `u`: the minimal l with cumulative
    /// mass ≥ u, against the frozen prefix.
    pub fn prior_index_frozen(&self, u: f64) -> FrozenOutcome<usize> {
        // tails are strictly decreasing; want the first l with tail ≤ 1 − u
        let want = 1.0 - u;
        let idx = self.entries.partition_point(|e| e.tail > want);
        if idx < self.entries.len() {
            FrozenOutcome::Done(idx)
        } else {
            FrozenOutcome::NeedMoreAtoms
        }
    }

    /// Growing variant of [`Self::prior_index_frozen`].
    pub fn prior_index(&mut self, src: &mut dyn EntrySource, u: f64) -> Result<usize> {
        loop {
            if let FrozenOutcome::Done(l) = self.prior_index_frozen(u) {
                return Ok(l);
            }
            self.extend_one(src)?;
        }
    }
}

/// Incremental scanner for one retrospective posterior draw.
///
/// Bracketing: with prefix sums S_t = Σ_{a ≤ t} w_a f_a, lower constant
/// c_ℓ(K) = S_K and upper constant c_u(K) = S_K + tail(K)·B (B an upper
/// bound on the kernel), index t is identified once
/// S_{t−1}/c_ℓ(K) ≤ U ≤ S_t/c_u(K) — both inequalities use the constant that
/// makes them hold for every value the true normalizer could take, so the
/// accepted index is exact and is found at a minimal K independent of how
/// long the cache actually is.
pub struct RetroScan {
    log_u: f64,
    log_bound: f64,
    /// prefix log-sum-exp of log(w_a f_a)
    b: Vec<f64>,
    /// stage already checked (entries consumed)
    checked: usize,
}

impl RetroScan {
    /// `u` is the caller's uniform; `log_bound` is a log-space upper bound on
    /// the kernel over atoms (0 for the universal Bernoulli bound).
    pub fn new(u: f64, log_bound: f64) -> Self {
        RetroScan {
            log_u: u.ln(),
            log_bound,
            b: Vec::new(),
            checked: 0,
        }
    }

    /// Scan any not-yet-checked prefix stages of `cache`; `log_kernel` is
    /// evaluated once per new entry. Returns the accepted index if bracketing
    /// succeeds at some stage K ≤ cache.len().
    pub fn advance(
        &mut self,
        cache: &StickBreakingCache,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
    ) -> FrozenOutcome<usize> {
        while self.checked < cache.len() {
            let k = self.checked; // 0-based entry index of this stage
            let lw = cache.log_weight(k);
            let logw = if lw > f64::NEG_INFINITY {
                lw + log_kernel(cache.atom(k))
            } else {
                f64::NEG_INFINITY
            };
            let prev = self.b.last().copied().unwrap_or(f64::NEG_INFINITY);
            self.b.push(logaddexp(prev, logw));
            self.checked = k + 1;

            let log_cl = self.b[k];
            if log_cl == f64::NEG_INFINITY {
                continue; // no mass materialized yet
            }
            let tail = cache.tail_at(k);
            let log_cu = logaddexp(log_cl, tail.ln() + self.log_bound);

            // largest candidate t with S_{t-1} ≤ U·c_ℓ
            let thresh_lo = self.log_u + log_cl;
            let count = self.b[..k].partition_point(|&s| s <= thresh_lo);
            let t = count + 1; // 1-based candidate
            if t <= k + 1 && self.b[t - 1] >= self.log_u + log_cu {
                return FrozenOutcome::Done(t - 1);
            }
        }
        FrozenOutcome::NeedMoreAtoms
    }
}

/// Draw from the kernel-reweighted measure, growing the cache as needed.
pub fn retro_posterior_draw(
    cache: &mut StickBreakingCache,
    src: &mut dyn EntrySource,
    log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
    u: f64,
    log_bound: f64,
) -> Result<usize> {
    let mut scan = RetroScan::new(u, log_bound);
    loop {
        if let FrozenOutcome::Done(l) = scan.advance(cache, log_kernel) {
            return Ok(l);
        }
        cache.extend_one(src)?;
    }
}

/// Frozen-prefix variant of [`retro_posterior_draw`].
pub fn retro_posterior_draw_frozen(
    cache: &StickBreakingCache,
    log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
    u: f64,
    log_bound: f64,
) -> FrozenOutcome<usize> {
    RetroScan::new(u, log_bound).advance(cache, log_kernel)
}

/// Normalizing-constant estimate: extend until the prior tail mass drops
/// below `eps_trunc`, then return (log c_ℓ(K*), achieved gap) at the minimal
/// such K*. The inverse constant is bounded between 1/(c_ℓ + gap) and 1/c_ℓ.
pub fn estimate_log_c(
    cache: &mut StickBreakingCache,
    src: &mut dyn EntrySource,
    log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
    eps_trunc: f64,
) -> Result<(f64, f64)> {
    if !(eps_trunc > 0.0) {
        return Err(Error::Validation(format!(
            "eps_trunc must be positive, got {eps_trunc}"
        )));
    }
    while cache.leftover() >= eps_trunc {
        cache.extend_one(src)?;
    }
    match estimate_log_c_frozen(cache, log_kernel, eps_trunc) {
        FrozenOutcome::Done(v) => Ok(v),
        FrozenOutcome::NeedMoreAtoms => unreachable!("tail already below eps_trunc"),
    }
}

/// Frozen-prefix variant of [`estimate_log_c`]; uses the minimal qualifying
/// prefix so the estimate is independent of extra materialized atoms.
pub fn estimate_log_c_frozen(
    cache: &StickBreakingCache,
    log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
    eps_trunc: f64,
) -> FrozenOutcome<(f64, f64)> {
    let mut acc = f64::NEG_INFINITY;
    for l in 0..cache.len() {
        let lw = cache.log_weight(l);
        if lw > f64::NEG_INFINITY {
            acc = logaddexp(acc, lw + log_kernel(cache.atom(l)));
        }
        let tail = cache.tail_at(l);
        if tail < eps_trunc {
            return FrozenOutcome::Done((acc, tail));
        }
    }
    FrozenOutcome::NeedMoreAtoms
}
