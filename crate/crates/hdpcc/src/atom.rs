//! Shared dish atoms: allele-probability vectors with precomputed logs.
//!
//! Atoms are reference-counted and deduplicated by pointer wherever possible;
//! a sweep touches the same handful of distinct values through thousands of
//! stick positions, so kernel evaluations are memoized per pointer.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::Arc;

use crate::model::P_CLAMP;

/// One allele-probability vector with cached log terms.
#[derive(Debug, PartialEq)]
pub struct Atom {
    /// Per-locus success probability, clamped into (0,1).
    pub p: Vec<f64>,
    /// ln(p) per locus.
    pub ln_p: Vec<f64>,
    /// ln(1-p) per locus.
    pub ln_q: Vec<f64>,
}

impl Atom {
    pub fn new(p: Vec<f64>) -> Arc<Atom> {
        let p: Vec<f64> = p
            .into_iter()
            .map(|v| v.clamp(P_CLAMP, 1.0 - P_CLAMP))
            .collect();
        let ln_p = p.iter().map(|v| v.ln()).collect();
        let ln_q = p.iter().map(|v| (1.0 - v).ln()).collect();
        Arc::new(Atom { p, ln_p, ln_q })
    }

    pub fn n_loci(&self) -> usize {
        self.p.len()
    }

    /// Log kernel against per-locus minor/major counts over loci `0..range`.
    pub fn log_kernel_counts(&self, n1: &[f64], n2: &[f64], range: usize) -> f64 {
        let mut acc = 0.0;
        for r in 0..range {
            acc += n1[r] * self.ln_p[r] + n2[r] * self.ln_q[r];
        }
        acc
    }

    /// Log kernel of observed allele pairs over their full length.
    pub fn log_kernel_rows(&self, rows: &[(u8, u8)]) -> f64 {
        let mut acc = 0.0;
        for (r, &(a, b)) in rows.iter().enumerate() {
            let ones = (a + b) as f64;
            acc += ones * self.ln_p[r] + (2.0 - ones) * self.ln_q[r];
        }
        acc
    }
}

/// Multiplicative hasher for pointer keys; the memo sits on the innermost
/// sampler loop, where SipHash would dominate the profile.
#[derive(Default)]
pub struct PtrHasher(u64);

impl Hasher for PtrHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x9e3779b97f4a7c15);
        }
    }

    fn write_usize(&mut self, v: usize) {
        self.0 = (v as u64).wrapping_mul(0x9e3779b97f4a7c15);
        self.0 ^= self.0 >> 29;
    }
}

/// Pointer-keyed memo for log-kernel values of the atoms seen in one draw.
pub struct KernelMemo<'a, F: FnMut(&Atom) -> f64> {
    eval: F,
    memo: HashMap<usize, f64, BuildHasherDefault<PtrHasher>>,
    _marker: std::marker::PhantomData<&'a ()>,
}

impl<'a, F: FnMut(&Atom) -> f64> KernelMemo<'a, F> {
    pub fn new(eval: F) -> Self {
        KernelMemo {
            eval,
            memo: HashMap::default(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn log_kernel(&mut self, atom: &Arc<Atom>) -> f64 {
        let key = Arc::as_ptr(atom) as usize;
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = (self.eval)(atom);
        self.memo.insert(key, v);
        v
    }
}
