//! Franchise bookkeeping: distinct dishes per group and globally.
//!
//! Rebuilt from triplet labels at the start of every sweep, in canonical
//! (k, i, j, dish) order with bitwise value deduplication, so every rebuild
//! of the same state yields identical atom orderings and counts.

use std::collections::HashMap;
use std::sync::Arc;

use crate::atom::Atom;
use crate::error::{Error, Result};
use crate::state::ChainState;

fn value_key(atom: &Atom) -> Vec<u64> {
    atom.p.iter().map(|v| v.to_bits()).collect()
}

/// Distinct dishes of one group and their per-gene table counts.
#[derive(Debug, Clone)]
pub struct GroupRegistry {
    /// Distinct dish values ξ, in first-appearance order.
    pub xi: Vec<Arc<Atom>>,
    /// n_lj\[j\]\[l\]: tables (dish instances across individuals) of gene j
    /// pointing at ξ_l.
    pub n_lj: Vec<Vec<u64>>,
}

impl GroupRegistry {
    /// R_k: number of distinct dishes in the group.
    pub fn r_k(&self) -> usize {
        self.xi.len()
    }

    /// n_·jk: total tables for gene j.
    pub fn n_dot_j(&self, j: usize) -> u64 {
        self.n_lj[j].iter().sum()
    }
}

/// Registry of dishes at both the group and global level.
#[derive(Debug, Clone)]
pub struct Registry {
    pub groups: [GroupRegistry; 2],
    /// Distinct dish values ζ across both groups, first-appearance order.
    pub zeta: Vec<Arc<Atom>>,
    /// n_sk\[k\]\[s\]: distinct group-k dishes equal to ζ_s.
    pub n_sk: [Vec<u64>; 2],
}

impl Registry {
    /// n_·k = R_k: group-k draws from the top-level measure.
    pub fn n_dot_k(&self, k: usize) -> u64 {
        self.n_sk[k].iter().sum()
    }

    /// Rebuild from triplet labels in canonical order.
    pub fn build(state: &ChainState, n_genes: usize) -> Registry {
        let mut groups = Vec::with_capacity(2);
        let mut zeta: Vec<Arc<Atom>> = Vec::new();
        let mut zeta_by_value: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut n_sk: [Vec<u64>; 2] = [Vec::new(), Vec::new()];

        for k in 0..2 {
            let mut xi: Vec<Arc<Atom>> = Vec::new();
            let mut by_value: HashMap<Vec<u64>, usize> = HashMap::new();
            let mut by_ptr: HashMap<usize, usize> = HashMap::new();
            let mut n_lj: Vec<Vec<u64>> = vec![Vec::new(); n_genes];

            for per_gene in &state.triplets[k] {
                for (j, triplet) in per_gene.iter().enumerate() {
                    for dish in &triplet.dishes {
                        let ptr = Arc::as_ptr(&dish.atom) as usize;
                        let l = match by_ptr.get(&ptr) {
                            Some(&l) => l,
                            None => {
                                let l = *by_value.entry(value_key(&dish.atom)).or_insert_with(
                                    || {
                                        xi.push(dish.atom.clone());
                                        xi.len() - 1
                                    },
                                );
                                by_ptr.insert(ptr, l);
                                l
                            }
                        };
                        if n_lj[j].len() <= l {
                            n_lj[j].resize(xi.len(), 0);
                        }
                        n_lj[j][l] += 1;
                    }
                }
            }
            for counts in n_lj.iter_mut() {
                counts.resize(xi.len(), 0);
            }

            // fold this group's distinct dishes into the global registry
            for atom in &xi {
                let s = *zeta_by_value.entry(value_key(atom)).or_insert_with(|| {
                    zeta.push(atom.clone());
                    zeta.len() - 1
                });
                if n_sk[k].len() <= s {
                    n_sk[k].resize(zeta.len(), 0);
                }
                n_sk[k][s] += 1;
            }

            groups.push(GroupRegistry { xi, n_lj });
        }
        for counts in n_sk.iter_mut() {
            counts.resize(zeta.len(), 0);
        }

        let mut it = groups.into_iter();
        Registry {
            groups: [it.next().unwrap(), it.next().unwrap()],
            zeta,
            n_sk,
        }
    }

    /// Verify count identities and that this registry equals a fresh rebuild
    /// of `state` — the recount oracle.
    pub fn audit(&self, state: &ChainState, n_genes: usize) -> Result<()> {
        for k in 0..2 {
            let tables: u64 = state.triplets[k]
                .iter()
                .flat_map(|per_gene| per_gene.iter())
                .map(|t| t.dishes.len() as u64)
                .sum();
            let counted: u64 = (0..n_genes).map(|j| self.groups[k].n_dot_j(j)).sum();
            if tables != counted {
                return Err(Error::Audit(format!(
                    "group {k}: {tables} tables in state, {counted} in registry"
                )));
            }
            if self.n_dot_k(k) != self.groups[k].r_k() as u64 {
                return Err(Error::Audit(format!(
                    "group {k}: n_·k = {} but R_k = {}",
                    self.n_dot_k(k),
                    self.groups[k].r_k()
                )));
            }
        }
        let rebuilt = Registry::build(state, n_genes);
        for k in 0..2 {
            let a = &self.groups[k];
            let b = &rebuilt.groups[k];
            if a.n_lj != b.n_lj
                || a.xi.len() != b.xi.len()
                || a.xi.iter().zip(&b.xi).any(|(x, y)| x.p != y.p)
            {
                return Err(Error::Audit(format!("group {k} registry differs from recount")));
            }
        }
        if self.n_sk != rebuilt.n_sk
            || self.zeta.len() != rebuilt.zeta.len()
            || self.zeta.iter().zip(&rebuilt.zeta).any(|(x, y)| x.p != y.p)
        {
            return Err(Error::Audit("global registry differs from recount".into()));
        }
        Ok(())
    }
}
