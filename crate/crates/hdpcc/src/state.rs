//! Chain state: per-triplet mixture rows, dish labels, allocations, imputed
//! alleles, and hyperparameters, plus binary snapshot/restore.
//!
//! Rows are stored as dish handles: rows sharing a label share one atom
//! pointer, which makes the "rows with equal labels are element-wise
//! identical" invariant structural. All randomness is derived from
//! `(seed, sweep)`-keyed streams, so a snapshot needs no RNG positions beyond
//! those two numbers.

use std::sync::Arc;

use rand::Rng;

use crate::atom::Atom;
use crate::config::RunConfig;
use crate::data::{EnvMatrix, GenotypeTensor};
use crate::error::{Error, Result};
use crate::model::{BaseMeasure, HyperParams};
use crate::rng::{stream, StreamKey};

/// One occupied dish of a triplet's mixture.
#[derive(Debug, Clone)]
pub struct Dish {
    pub atom: Arc<Atom>,
    /// Number of rows labeled with this dish.
    pub mult: usize,
}

/// Mixture state of one (i, j, k) triplet.
#[derive(Debug, Clone)]
pub struct TripletState {
    /// Occupied dishes, compacted (no zero multiplicities).
    pub dishes: Vec<Dish>,
    /// Row label per m in 0..M, indexing into `dishes`.
    pub labels: Vec<usize>,
    /// Allocated row index z in 0..M.
    pub z: usize,
    /// Imputed allele pairs for padded loci L_j..L.
    pub imputed: Vec<(u8, u8)>,
}

impl TripletState {
    pub fn tau(&self) -> usize {
        self.dishes.len()
    }

    /// Atom of row m.
    pub fn row(&self, m: usize) -> &Arc<Atom> {
        &self.dishes[self.labels[m]].atom
    }

    /// Check the structural invariants against dimensions (M, L, L_j).
    pub fn audit(&self, m: usize, l: usize, l_j: usize) -> Result<()> {
        if self.labels.len() != m {
            return Err(Error::Audit(format!(
                "label vector length {} != M = {m}",
                self.labels.len()
            )));
        }
        if self.z >= m {
            return Err(Error::Audit(format!("allocation z = {} out of range", self.z)));
        }
        if self.imputed.len() != l - l_j {
            return Err(Error::Audit(format!(
                "imputed length {} != L - L_j = {}",
                self.imputed.len(),
                l - l_j
            )));
        }
        let mut counts = vec![0usize; self.dishes.len()];
        for &t in &self.labels {
            if t >= self.dishes.len() {
                return Err(Error::Audit(format!("label {t} beyond dish count")));
            }
            counts[t] += 1;
        }
        for (t, (dish, &c)) in self.dishes.iter().zip(&counts).enumerate() {
            if dish.mult != c {
                return Err(Error::Audit(format!(
                    "dish {t} multiplicity {} != recount {c}",
                    dish.mult
                )));
            }
            if c == 0 {
                return Err(Error::Audit(format!("dish {t} is empty but not compacted")));
            }
            if dish.atom.n_loci() != l {
                return Err(Error::Audit(format!(
                    "dish {t} atom has {} loci, expected {l}",
                    dish.atom.n_loci()
                )));
            }
        }
        Ok(())
    }
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct ChainState {
    /// triplets[k][i][j]
    pub triplets: [Vec<Vec<TripletState>>; 2],
    pub hyper: HyperParams,
    pub sweep: u64,
    pub seed: u64,
}

impl ChainState {
    /// Deterministic initialization: hyperparameters from their priors, one
    /// dish per triplet from the base measure, uniform allocation, fair-coin
    /// imputations. All transient — the first sweep resamples everything.
    pub fn init(tensor: &GenotypeTensor, env: &EnvMatrix, cfg: &RunConfig, seed: u64) -> Self {
        let mut rng = stream(seed, StreamKey::Init);
        let d = env.d;
        let mut hyper = HyperParams::zeros(d);
        hyper.mu_g = rng.gen_range(cfg.mu_min..cfg.mu_max);
        hyper.mu_g0 = rng.gen_range(cfg.mu_min..cfg.mu_max);
        hyper.mu_h = rng.gen_range(cfg.mu_min..cfg.mu_max);
        for c in 0..d {
            hyper.beta_g[c] = rng.gen_range(cfg.beta_min..cfg.beta_max);
            hyper.beta_g0[c] = rng.gen_range(cfg.beta_min..cfg.beta_max);
            hyper.beta_h[c] = rng.gen_range(cfg.beta_min..cfg.beta_max);
        }

        let l = tensor.l_max();
        let base = BaseMeasure::new(cfg.nu1, cfg.nu2, l).expect("validated config");
        let mut triplets: [Vec<Vec<TripletState>>; 2] = [Vec::new(), Vec::new()];
        for (k, group) in triplets.iter_mut().enumerate() {
            for _i in 0..tensor.n_k(k) {
                let mut per_gene = Vec::with_capacity(tensor.n_genes());
                for j in 0..tensor.n_genes() {
                    let atom = Atom::new(base.draw(&mut rng));
                    let z = rng.gen_range(0..cfg.m);
                    let imputed = (tensor.l_j(j)..l)
                        .map(|_| (rng.gen_range(0..2u8), rng.gen_range(0..2u8)))
                        .collect();
                    per_gene.push(TripletState {
                        dishes: vec![Dish { atom, mult: cfg.m }],
                        labels: vec![0; cfg.m],
                        z,
                        imputed,
                    });
                }
                group.push(per_gene);
            }
        }
        ChainState {
            triplets,
            hyper,
            sweep: 0,
            seed,
        }
    }

    pub fn triplet(&self, k: usize, i: usize, j: usize) -> &TripletState {
        &self.triplets[k][i][j]
    }

    pub fn triplet_mut(&mut self, k: usize, i: usize, j: usize) -> &mut TripletState {
        &mut self.triplets[k][i][j]
    }

    /// Audit every triplet's structural invariants.
    pub fn audit(&self, tensor: &GenotypeTensor, m: usize) -> Result<()> {
        let l = tensor.l_max();
        for (k, i, j) in tensor.triplets() {
            self.triplets[k][i][j]
                .audit(m, l, tensor.l_j(j))
                .map_err(|e| Error::Audit(format!("triplet (k={k}, i={i}, j={j}): {e}")))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Snapshot format: magic + version, then length-prefixed sections
// (rng, hyper, dims, triplets), then a trailing FNV-1a 64 checksum over all
// preceding bytes.
// ---------------------------------------------------------------------------

const SNAP_MAGIC: &[u8; 8] = b"HDPCCSN\x01";
const SNAP_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn section(&mut self, body: Vec<u8>) {
        self.u64(body.len() as u64);
        self.buf.extend_from_slice(&body);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity("snapshot truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn section(&mut self) -> Result<Reader<'a>> {
        let len = self.u64()? as usize;
        Ok(Reader {
            buf: self.take(len)?,
            pos: 0,
        })
    }
}

impl ChainState {
    /// Serialize to the snapshot byte format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(SNAP_MAGIC);
        w.u32(SNAP_VERSION);

        // rng section: master seed and sweep counter fully determine streams
        let mut rng = Writer { buf: Vec::new() };
        rng.u64(self.seed);
        rng.u64(self.sweep);
        w.section(rng.buf);

        // hyper section
        let d = self.hyper.beta_g.len();
        let mut hy = Writer { buf: Vec::new() };
        hy.u32(d as u32);
        for v in self.hyper.to_vec() {
            hy.f64(v);
        }
        w.section(hy.buf);

        // triplets section
        let mut tr = Writer { buf: Vec::new() };
        for group in &self.triplets {
            tr.u32(group.len() as u32);
            for per_gene in group {
                tr.u32(per_gene.len() as u32);
                for t in per_gene {
                    tr.u32(t.labels.len() as u32);
                    tr.u32(t.dishes.len() as u32);
                    for dish in &t.dishes {
                        tr.u32(dish.mult as u32);
                        tr.u32(dish.atom.p.len() as u32);
                        for &p in &dish.atom.p {
                            tr.f64(p);
                        }
                    }
                    for &label in &t.labels {
                        tr.u32(label as u32);
                    }
                    tr.u32(t.z as u32);
                    tr.u32(t.imputed.len() as u32);
                    for &(a, b) in &t.imputed {
                        tr.u8(a);
                        tr.u8(b);
                    }
                }
            }
        }
        w.section(tr.buf);

        let checksum = fnv1a(&w.buf);
        w.u64(checksum);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SNAP_MAGIC.len() + 12 {
            return Err(Error::Integrity("snapshot truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(Error::Integrity("snapshot checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(SNAP_MAGIC.len())? != SNAP_MAGIC {
            return Err(Error::Integrity("not a chain snapshot".into()));
        }
        let version = r.u32()?;
        if version != SNAP_VERSION {
            return Err(Error::Integrity(format!(
                "snapshot version {version} unsupported (expected {SNAP_VERSION})"
            )));
        }

        let mut rng = r.section()?;
        let seed = rng.u64()?;
        let sweep = rng.u64()?;

        let mut hy = r.section()?;
        let d = hy.u32()? as usize;
        let mut coords = Vec::with_capacity(3 + 3 * d);
        for _ in 0..3 + 3 * d {
            coords.push(hy.f64()?);
        }
        let hyper = HyperParams::from_vec(&coords, d);

        let mut tr = r.section()?;
        let mut triplets: [Vec<Vec<TripletState>>; 2] = [Vec::new(), Vec::new()];
        for group in triplets.iter_mut() {
            let n_k = tr.u32()? as usize;
            for _ in 0..n_k {
                let n_genes = tr.u32()? as usize;
                let mut per_gene = Vec::with_capacity(n_genes);
                for _ in 0..n_genes {
                    let m = tr.u32()? as usize;
                    let tau = tr.u32()? as usize;
                    let mut dishes = Vec::with_capacity(tau);
                    for _ in 0..tau {
                        let mult = tr.u32()? as usize;
                        let n_loci = tr.u32()? as usize;
                        let mut p = Vec::with_capacity(n_loci);
                        for _ in 0..n_loci {
                            p.push(tr.f64()?);
                        }
                        dishes.push(Dish {
                            atom: Atom::new(p),
                            mult,
                        });
                    }
                    let mut labels = Vec::with_capacity(m);
                    for _ in 0..m {
                        labels.push(tr.u32()? as usize);
                    }
                    let z = tr.u32()? as usize;
                    let n_imp = tr.u32()? as usize;
                    let mut imputed = Vec::with_capacity(n_imp);
                    for _ in 0..n_imp {
                        imputed.push((tr.u8()?, tr.u8()?));
                    }
                    per_gene.push(TripletState {
                        dishes,
                        labels,
                        z,
                        imputed,
                    });
                }
                group.push(per_gene);
            }
        }

        Ok(ChainState {
            triplets,
            hyper,
            sweep,
            seed,
        })
    }

    pub fn snapshot(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn restore(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
