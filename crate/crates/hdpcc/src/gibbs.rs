//! The per-triplet Gibbs update and the serial sweep.
//!
//! A sweep freezes the dish registry and the per-level stick-breaking caches
//! at its start, then updates every (i, j, k) triplet: row labels, dish
//! values, the allocation, and imputed alleles, in that order, followed by
//! one hyperparameter block move. All triplet randomness comes from a stream
//! keyed by (sweep, k, i, j), and all cache randomness from position-keyed
//! streams, so the chain is bit-identical however the work is scheduled.
//!
//! Only the allocated row of a triplet carries the data kernel; every other
//! row sees a flat kernel, for which the fresh branch reduces to a plain
//! prior draw from the gene's measure and the normalizing constant is 1.

use std::sync::Arc;

use rand::Rng;

use crate::atom::{Atom, KernelMemo};
use crate::config::RunConfig;
use crate::data::{EnvMatrix, GenotypeTensor};
use crate::error::{Error, Result};
use crate::model::{precision, BaseMeasure, Level};
use crate::registry::Registry;
use crate::rng::{stream, StreamKey};
use crate::state::{ChainState, Dish, TripletState};
use crate::sticks::{logaddexp, EntrySource, StickBreakingCache};
use crate::tmcmc::{self, UrnStats};
use crate::urns::{pick_branch, G0Source, HSource};

/// Per-locus minor/major allele counts of the observed rows.
pub fn kernel_counts(rows: &[(u8, u8)]) -> (Vec<f64>, Vec<f64>) {
    let n1: Vec<f64> = rows.iter().map(|&(a, b)| (a + b) as f64).collect();
    let n2: Vec<f64> = n1.iter().map(|&v| 2.0 - v).collect();
    (n1, n2)
}

/// Log-space upper bound of the data kernel over all probability vectors:
/// homozygous loci are bounded by 1, heterozygous by max p(1−p) = 1/4.
pub fn kernel_log_bound(rows: &[(u8, u8)]) -> f64 {
    let het = rows.iter().filter(|&&(a, b)| a + b == 1).count();
    het as f64 * 0.25f64.ln()
}

/// Sample an index from unnormalized log weights at uniform `u`.
pub fn sample_log_weights(lw: &[f64], u: f64) -> usize {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = lw.iter().map(|&w| (w - m).exp()).sum();
    let target = u * total;
    let mut acc = 0.0;
    for (idx, &w) in lw.iter().enumerate() {
        acc += (w - m).exp();
        if acc > target {
            return idx;
        }
    }
    lw.len() - 1
}

/// A gene's random measure as seen by one triplet update: either a growing
/// cache (serial) or a frozen prefix (parallel workers). Frozen variants
/// return None when the prefix is too short, signalling a growth request.
pub trait GeneMeasure {
    /// Draw from the kernel-reweighted measure.
    fn retro(
        &mut self,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
        u: f64,
        log_bound: f64,
    ) -> Result<Option<Arc<Atom>>>;

    /// Draw from the measure itself.
    fn prior(&mut self, u: f64) -> Result<Option<Arc<Atom>>>;

    /// Log of the kernel's normalizing mass under the measure.
    fn log_c(
        &mut self,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
        eps_trunc: f64,
    ) -> Result<Option<f64>>;
}

/// Kernel-weighted prefix sums shared by every retro/normalizer call of one
/// measure instance. Valid because one instance serves one triplet update,
/// whose data kernel is fixed; each stick entry's kernel is evaluated once.
///
/// Equivalence with the incremental minimal-stage scan: the bracketing
/// brackets [S_K, S_K + tail_K·B] are nested in K, so whenever the stage-wise
/// scan identifies an index at some K it is the unique true index, and the
/// same check evaluated at any deeper prefix returns that same index.
#[derive(Default)]
struct ScanState {
    /// prefix log-sum-exp of log(w_a f_a)
    b: Vec<f64>,
}

impl ScanState {
    fn extend(
        &mut self,
        cache: &StickBreakingCache,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
    ) {
        self.b.reserve(cache.len().saturating_sub(self.b.len()));
        while self.b.len() < cache.len() {
            let l = self.b.len();
            let lw = cache.log_weight(l);
            let logw = if lw > f64::NEG_INFINITY {
                lw + log_kernel(cache.atom(l))
            } else {
                f64::NEG_INFINITY
            };
            let prev = self.b.last().copied().unwrap_or(f64::NEG_INFINITY);
            self.b.push(logaddexp(prev, logw));
        }
    }

    /// Retro index check against the full scanned prefix.
    fn retro_at(&self, cache: &StickBreakingCache, log_u: f64, log_bound: f64) -> Option<usize> {
        let l = self.b.len();
        if l == 0 {
            return None;
        }
        let log_cl = self.b[l - 1];
        if log_cl == f64::NEG_INFINITY {
            return None;
        }
        let log_cu = logaddexp(log_cl, cache.tail_at(l - 1).ln() + log_bound);
        let thresh_lo = log_u + log_cl;
        let t = self.b[..l - 1].partition_point(|&s| s <= thresh_lo) + 1;
        if t <= l && self.b[t - 1] >= log_u + log_cu {
            Some(t - 1)
        } else {
            None
        }
    }

    /// Normalizer at the minimal prefix whose prior tail is below `eps`,
    /// making the estimate independent of extra materialized atoms.
    fn log_c_at(&self, cache: &StickBreakingCache, eps: f64) -> Option<f64> {
        let n = self.b.len();
        let mut lo = 0;
        let mut hi = n;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if cache.tail_at(mid) < eps {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo < n {
            Some(self.b[lo])
        } else {
            None
        }
    }
}

/// Serial measure: grows its cache on demand, never signals growth.
pub struct GrowingMeasure<'a, S: EntrySource> {
    cache: &'a mut StickBreakingCache,
    src: S,
    scan: ScanState,
}

impl<'a, S: EntrySource> GrowingMeasure<'a, S> {
    pub fn new(cache: &'a mut StickBreakingCache, src: S) -> Self {
        GrowingMeasure {
            cache,
            src,
            scan: ScanState::default(),
        }
    }
}

impl<S: EntrySource> GeneMeasure for GrowingMeasure<'_, S> {
    fn retro(
        &mut self,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
        u: f64,
        log_bound: f64,
    ) -> Result<Option<Arc<Atom>>> {
        let log_u = u.ln();
        loop {
            self.scan.extend(self.cache, log_kernel);
            if let Some(l) = self.scan.retro_at(self.cache, log_u, log_bound) {
                return Ok(Some(self.cache.atom(l).clone()));
            }
            self.cache.extend_one(&mut self.src)?;
        }
    }

    fn prior(&mut self, u: f64) -> Result<Option<Arc<Atom>>> {
        let l = self.cache.prior_index(&mut self.src, u)?;
        Ok(Some(self.cache.atom(l).clone()))
    }

    fn log_c(
        &mut self,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
        eps_trunc: f64,
    ) -> Result<Option<f64>> {
        if !(eps_trunc > 0.0) {
            return Err(Error::Validation(format!(
                "eps_trunc must be positive, got {eps_trunc}"
            )));
        }
        loop {
            self.scan.extend(self.cache, log_kernel);
            if let Some(v) = self.scan.log_c_at(self.cache, eps_trunc) {
                return Ok(Some(v));
            }
            self.cache.extend_one(&mut self.src)?;
        }
    }
}

/// Worker-side measure: reads a frozen prefix only.
pub struct FrozenMeasure<'a> {
    cache: &'a StickBreakingCache,
    scan: ScanState,
}

impl<'a> FrozenMeasure<'a> {
    pub fn new(cache: &'a StickBreakingCache) -> Self {
        FrozenMeasure {
            cache,
            scan: ScanState::default(),
        }
    }
}

impl GeneMeasure for FrozenMeasure<'_> {
    fn retro(
        &mut self,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
        u: f64,
        log_bound: f64,
    ) -> Result<Option<Arc<Atom>>> {
        self.scan.extend(self.cache, log_kernel);
        Ok(self
            .scan
            .retro_at(self.cache, u.ln(), log_bound)
            .map(|l| self.cache.atom(l).clone()))
    }

    fn prior(&mut self, u: f64) -> Result<Option<Arc<Atom>>> {
        Ok(self
            .cache
            .prior_index_frozen(u)
            .done()
            .map(|l| self.cache.atom(l).clone()))
    }

    fn log_c(
        &mut self,
        log_kernel: &mut dyn FnMut(&Arc<Atom>) -> f64,
        eps_trunc: f64,
    ) -> Result<Option<f64>> {
        self.scan.extend(self.cache, log_kernel);
        Ok(self.scan.log_c_at(self.cache, eps_trunc))
    }
}

/// Everything one triplet update needs besides the previous state and the
/// gene's measure.
pub struct TripletCtx<'a> {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    /// Observed allele pairs, length L_j.
    pub rows: &'a [(u8, u8)],
    /// Padded locus count L.
    pub l: usize,
    pub m: usize,
    pub alpha_g: f64,
    pub eps_trunc: f64,
    pub seed: u64,
    pub sweep: u64,
}

fn remove_row(t: &mut TripletState, m: usize) {
    let old = t.labels[m];
    t.dishes[old].mult -= 1;
    if t.dishes[old].mult == 0 {
        t.dishes.remove(old);
        for lab in t.labels.iter_mut() {
            if *lab > old {
                *lab -= 1;
            }
        }
        // t.labels[m] is dangling until the caller reassigns it
    }
}

/// One full conditional update of a triplet: row labels (with the data
/// kernel only on the allocated row), dish values, allocation, and imputed
/// alleles. Returns None when a frozen measure needs more atoms; the caller
/// must grow and rerun — the whole update restarts from the same stream, so
/// the rerun is exact.
pub fn update_triplet(
    ctx: &TripletCtx,
    prev: &TripletState,
    measure: &mut dyn GeneMeasure,
) -> Result<Option<TripletState>> {
    let mut rng = stream(
        ctx.seed,
        StreamKey::Triplet {
            sweep: ctx.sweep,
            k: ctx.k as u8,
            i: ctx.i as u32,
            j: ctx.j as u32,
        },
    );
    let mut t = prev.clone();
    let l_j = ctx.rows.len();
    let (n1, n2) = kernel_counts(ctx.rows);
    let log_bound = kernel_log_bound(ctx.rows);
    let mut memo = KernelMemo::new(|a: &Atom| a.log_kernel_counts(&n1, &n2, l_j));
    // the normalizing mass is state-free within the sweep: compute once
    let mut log_c_cache: Option<f64> = None;

    // row labels, in row order; the allocation is the previous sweep's
    for m in 0..ctx.m {
        remove_row(&mut t, m);
        let u_branch: f64 = rng.gen();
        let new_label = if m == t.z {
            let log_c = match log_c_cache {
                Some(v) => v,
                None => {
                    let Some(v) =
                        measure.log_c(&mut |a| memo.log_kernel(a), ctx.eps_trunc)?
                    else {
                        return Ok(None);
                    };
                    log_c_cache = Some(v);
                    v
                }
            };
            let mut lw = Vec::with_capacity(t.dishes.len() + 1);
            lw.push(ctx.alpha_g.ln() + log_c);
            for dish in &t.dishes {
                lw.push((dish.mult as f64).ln() + memo.log_kernel(&dish.atom));
            }
            let pick = sample_log_weights(&lw, u_branch);
            if pick == 0 {
                let u_atom: f64 = rng.gen();
                let Some(atom) =
                    measure.retro(&mut |a| memo.log_kernel(a), u_atom, log_bound)?
                else {
                    return Ok(None);
                };
                t.dishes.push(Dish { atom, mult: 0 });
                t.dishes.len() - 1
            } else {
                pick - 1
            }
        } else {
            // flat kernel: plain urn step over (alpha, multiplicities)
            let counts: Vec<u64> = t.dishes.iter().map(|d| d.mult as u64).collect();
            match pick_branch(ctx.alpha_g, &counts, u_branch) {
                None => {
                    let u_atom: f64 = rng.gen();
                    let Some(atom) = measure.prior(u_atom)? else {
                        return Ok(None);
                    };
                    t.dishes.push(Dish { atom, mult: 0 });
                    t.dishes.len() - 1
                }
                Some(idx) => idx,
            }
        };
        t.labels[m] = new_label;
        t.dishes[new_label].mult += 1;
    }

    // dish values: the dish holding the allocated row sees the data kernel,
    // every other dish is a fresh draw from the gene's measure
    let data_dish = t.labels[t.z];
    for d in 0..t.dishes.len() {
        let u: f64 = rng.gen();
        let drawn = if d == data_dish {
            measure.retro(&mut |a| memo.log_kernel(a), u, log_bound)?
        } else {
            measure.prior(u)?
        };
        let Some(atom) = drawn else {
            return Ok(None);
        };
        t.dishes[d].atom = atom;
    }

    // allocation over rows against the observed data
    let lw: Vec<f64> = (0..ctx.m).map(|m| memo.log_kernel(t.row(m))).collect();
    t.z = sample_log_weights(&lw, rng.gen());

    // impute padded loci from the allocated row
    let p = t.row(t.z).clone();
    t.imputed = (l_j..ctx.l)
        .map(|r| {
            let pr = p.p[r];
            let a = u8::from(rng.gen::<f64>() < pr);
            let b = u8::from(rng.gen::<f64>() < pr);
            (a, b)
        })
        .collect();
    Ok(Some(t))
}

/// Frozen per-sweep quantities shared by every triplet update: the dish
/// registry and the precision values.
pub struct SweepPlan {
    pub registry: Registry,
    pub alpha_h: f64,
    pub alpha_g0: [f64; 2],
    /// alpha_g\[k\]\[i\]
    pub alpha_g: [Vec<f64>; 2],
    pub base: BaseMeasure,
}

impl SweepPlan {
    pub fn build(
        state: &ChainState,
        tensor: &GenotypeTensor,
        env: &EnvMatrix,
        cfg: &RunConfig,
    ) -> Result<Self> {
        let registry = Registry::build(state, tensor.n_genes());
        let alpha_h = precision(Level::H, cfg.consts_h, &state.hyper, env, None, None)?;
        let mut alpha_g0 = [0.0; 2];
        let mut alpha_g: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for k in 0..2 {
            alpha_g0[k] = precision(Level::G0, cfg.consts_g0, &state.hyper, env, None, Some(k))?;
            for i in 0..tensor.n_k(k) {
                alpha_g[k].push(precision(
                    Level::G,
                    cfg.consts_g,
                    &state.hyper,
                    env,
                    Some(i),
                    Some(k),
                )?);
            }
        }
        let base = BaseMeasure::new(cfg.nu1, cfg.nu2, tensor.l_max())?;
        Ok(SweepPlan {
            registry,
            alpha_h,
            alpha_g0,
            alpha_g,
            base,
        })
    }

    /// Concentration of the group-k top-level cache: α_H + n_·k.
    pub fn h_concentration(&self, k: usize) -> f64 {
        self.alpha_h + self.registry.n_dot_k(k) as f64
    }

    /// Concentration of the (j, k) gene cache: α_G0,k + n_·jk.
    pub fn g0_concentration(&self, k: usize, j: usize) -> f64 {
        self.alpha_g0[k] + self.registry.groups[k].n_dot_j(j) as f64
    }

    /// Entry source of the group-k top-level cache for this sweep.
    pub fn h_source(&self, seed: u64, sweep: u64, k: usize) -> HSource<'_> {
        HSource {
            seed,
            sweep,
            k: k as u8,
            alpha_h: self.alpha_h,
            base: self.base,
            zeta: &self.registry.zeta,
            counts: &self.registry.n_sk[k],
        }
    }

    /// Entry source of the (j, k) gene cache; fresh-branch draws recurse into
    /// the shared group cache.
    pub fn g0_source<'a>(
        &'a self,
        seed: u64,
        sweep: u64,
        k: usize,
        j: usize,
        h_cache: &'a mut StickBreakingCache,
    ) -> G0Source<'a> {
        G0Source {
            seed,
            sweep,
            k: k as u8,
            j: j as u32,
            alpha_g0: self.alpha_g0[k],
            xi: &self.registry.groups[k].xi,
            counts: &self.registry.groups[k].n_lj[j],
            h_cache,
            h_source: self.h_source(seed, sweep, k),
        }
    }
}

/// One full serial sweep: freeze the registry and caches, update every
/// triplet of the control group then of the case group, then one
/// hyperparameter block move. Increments the sweep counter.
pub fn sweep_serial(
    state: &mut ChainState,
    tensor: &GenotypeTensor,
    env: &EnvMatrix,
    cfg: &RunConfig,
) -> Result<()> {
    let plan = SweepPlan::build(state, tensor, env, cfg)?;
    let (seed, sweep) = (state.seed, state.sweep);
    let mut h_caches = [
        StickBreakingCache::new(plan.h_concentration(0))?,
        StickBreakingCache::new(plan.h_concentration(1))?,
    ];
    let mut g0_caches: [Vec<StickBreakingCache>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        for j in 0..tensor.n_genes() {
            g0_caches[k].push(StickBreakingCache::new(plan.g0_concentration(k, j))?);
        }
    }

    for k in 0..2 {
        for i in 0..tensor.n_k(k) {
            for j in 0..tensor.n_genes() {
                let src = plan.g0_source(seed, sweep, k, j, &mut h_caches[k]);
                let mut measure = GrowingMeasure::new(&mut g0_caches[k][j], src);
                let ctx = TripletCtx {
                    k,
                    i,
                    j,
                    rows: tensor.observed(k, i, j),
                    l: tensor.l_max(),
                    m: cfg.m,
                    alpha_g: plan.alpha_g[k][i],
                    eps_trunc: cfg.eps_trunc,
                    seed,
                    sweep,
                };
                let updated = update_triplet(&ctx, state.triplet(k, i, j), &mut measure)?
                    .ok_or_else(|| {
                        Error::Numeric("growing measure signalled growth".into())
                    })?;
                *state.triplet_mut(k, i, j) = updated;
            }
        }
    }

    let stats = UrnStats::build(state, tensor.n_genes(), cfg.m);
    let mut rng = stream(seed, StreamKey::Tmcmc { sweep });
    tmcmc::step(&mut state.hyper, &stats, env, cfg, &mut rng, true)?;
    state.sweep += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_genotypes;
    use crate::model::PrecisionConsts;

    fn fixture() -> (GenotypeTensor, EnvMatrix) {
        let geno = "#hdpcc-geno v1\n\
            a\t0\tg1\t1\t0\t1\na\t0\tg1\t2\t1\t1\na\t0\tg1\t3\t0\t0\n\
            a\t0\tg2\t1\t0\t0\na\t0\tg2\t2\t1\t0\n\
            b\t0\tg1\t1\t1\t0\nb\t0\tg1\t2\t0\t0\nb\t0\tg1\t3\t1\t1\n\
            b\t0\tg2\t1\t1\t1\nb\t0\tg2\t2\t0\t1\n\
            c\t1\tg1\t1\t1\t0\nc\t1\tg1\t2\t0\t1\nc\t1\tg1\t3\t0\t0\n\
            c\t1\tg2\t1\t1\t1\nc\t1\tg2\t2\t1\t0\n";
        let tensor = parse_genotypes(geno.as_bytes()).unwrap();
        let env = crate::data::parse_environment(
            "individual_id,group,e1\na,0,0.4\nb,0,-0.2\nc,1,0.1\n".as_bytes(),
            &tensor,
        )
        .unwrap();
        (tensor, env)
    }

    fn test_cfg() -> RunConfig {
        let consts = PrecisionConsts {
            scale: 1.0,
            offset: 0.0,
        };
        RunConfig {
            m: 4,
            consts_g: consts,
            consts_g0: consts,
            consts_h: consts,
            eps_trunc: 1e-8,
            ..RunConfig::default()
        }
    }

    fn states_equal(a: &ChainState, b: &ChainState) -> bool {
        if a.sweep != b.sweep || a.hyper != b.hyper {
            return false;
        }
        for k in 0..2 {
            for (ia, ib) in a.triplets[k].iter().zip(&b.triplets[k]) {
                for (ta, tb) in ia.iter().zip(ib) {
                    if ta.labels != tb.labels || ta.z != tb.z || ta.imputed != tb.imputed {
                        return false;
                    }
                    for (da, db) in ta.dishes.iter().zip(&tb.dishes) {
                        if da.mult != db.mult || da.atom.p != db.atom.p {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    #[test]
    fn sample_log_weights_uniform_chi2() {
        let lw = [0.0f64; 4];
        let mut counts = [0u64; 4];
        let mut rng = stream(1, StreamKey::Init);
        for _ in 0..40_000 {
            counts[sample_log_weights(&lw, rng.gen())] += 1;
        }
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0)
            .sum();
        // chi2(3) 99.9% quantile is 16.27
        assert!(stat < 16.27, "chi2 stat {stat}, counts {counts:?}");
    }

    #[test]
    fn sample_log_weights_three_to_one() {
        let lw = [0.75f64.ln(), 0.25f64.ln()];
        let mut first = 0u64;
        let mut rng = stream(2, StreamKey::Init);
        let n = 40_000;
        for _ in 0..n {
            if sample_log_weights(&lw, rng.gen()) == 0 {
                first += 1;
            }
        }
        let phat = first as f64 / n as f64;
        let se = (0.75 * 0.25 / n as f64).sqrt();
        assert!((phat - 0.75).abs() < 4.0 * se, "phat {phat}");
    }

    #[test]
    fn sample_log_weights_edges() {
        let lw = [-1000.0, 0.0, -1000.0];
        assert_eq!(sample_log_weights(&lw, 0.5), 1);
        // u = 0 lands on the first index with positive relative mass
        assert_eq!(sample_log_weights(&lw, 0.0), 1);
        assert_eq!(sample_log_weights(&[1e-3f64.ln(), 0.0], 0.0), 0);
        assert_eq!(sample_log_weights(&[0.0], 0.999), 0);
    }

    #[test]
    fn kernel_bound_counts_heterozygotes() {
        let rows = [(0u8, 1u8), (1, 1), (1, 0), (0, 0)];
        assert!((kernel_log_bound(&rows) - 2.0 * 0.25f64.ln()).abs() < 1e-15);
        let (n1, n2) = kernel_counts(&rows);
        assert_eq!(n1, vec![1.0, 2.0, 1.0, 0.0]);
        assert_eq!(n2, vec![1.0, 0.0, 1.0, 2.0]);
    }

    /// Measure stub handing out scripted atoms.
    struct StubMeasure {
        atoms: Vec<Arc<Atom>>,
        next: usize,
        log_c: f64,
    }

    impl GeneMeasure for StubMeasure {
        fn retro(
            &mut self,
            _k: &mut dyn FnMut(&Arc<Atom>) -> f64,
            _u: f64,
            _b: f64,
        ) -> Result<Option<Arc<Atom>>> {
            let a = self.atoms[self.next % self.atoms.len()].clone();
            self.next += 1;
            Ok(Some(a))
        }
        fn prior(&mut self, _u: f64) -> Result<Option<Arc<Atom>>> {
            let a = self.atoms[self.next % self.atoms.len()].clone();
            self.next += 1;
            Ok(Some(a))
        }
        fn log_c(
            &mut self,
            _k: &mut dyn FnMut(&Arc<Atom>) -> f64,
            _e: f64,
        ) -> Result<Option<f64>> {
            Ok(Some(self.log_c))
        }
    }

    fn ctx<'a>(rows: &'a [(u8, u8)], l: usize, m: usize, alpha_g: f64, sweep: u64) -> TripletCtx<'a> {
        TripletCtx {
            k: 0,
            i: 0,
            j: 0,
            rows,
            l,
            m,
            alpha_g,
            eps_trunc: 1e-8,
            seed: 11,
            sweep,
        }
    }

    fn single_dish_state(atom: Arc<Atom>, m: usize, n_imputed: usize) -> TripletState {
        TripletState {
            dishes: vec![Dish { atom, mult: m }],
            labels: vec![0; m],
            z: 0,
            imputed: vec![(0, 0); n_imputed],
        }
    }

    #[test]
    fn vanishing_alpha_collapses_to_one_dish() {
        let rows = [(1u8, 0u8), (0, 0)];
        let atom = Atom::new(vec![0.4, 0.6]);
        let mut measure = StubMeasure {
            atoms: vec![Atom::new(vec![0.5, 0.5])],
            next: 0,
            log_c: -1.0,
        };
        for sweep in 0..50 {
            let prev = single_dish_state(atom.clone(), 5, 0);
            let c = ctx(&rows, 2, 5, 1e-12, sweep);
            let new = update_triplet(&c, &prev, &mut measure).unwrap().unwrap();
            assert_eq!(new.tau(), 1, "alpha → 0 must keep a single dish");
            new.audit(5, 2, 2).unwrap();
        }
    }

    #[test]
    fn huge_alpha_gives_all_fresh_dishes() {
        let rows = [(1u8, 0u8), (0, 0)];
        let atom = Atom::new(vec![0.4, 0.6]);
        let mut measure = StubMeasure {
            atoms: (0..16).map(|i| Atom::new(vec![0.1 + 0.05 * i as f64, 0.5])).collect(),
            next: 0,
            log_c: -1.0,
        };
        for sweep in 0..20 {
            let prev = single_dish_state(atom.clone(), 5, 0);
            let c = ctx(&rows, 2, 5, 1e12, sweep);
            let new = update_triplet(&c, &prev, &mut measure).unwrap().unwrap();
            assert_eq!(new.tau(), 5, "alpha → ∞ must give every row its own dish");
            new.audit(5, 2, 2).unwrap();
        }
    }

    #[test]
    fn imputation_follows_allocated_row() {
        // single extreme atom: padded locus probability ~1 → imputed (1,1)
        let rows = [(1u8, 1u8)];
        let atom = Atom::new(vec![0.99, 1.0 - 1e-12]);
        let mut measure = StubMeasure {
            atoms: vec![atom.clone()],
            next: 0,
            log_c: -0.1,
        };
        for sweep in 0..20 {
            let prev = single_dish_state(atom.clone(), 3, 1);
            let c = ctx(&rows, 2, 3, 1.0, sweep);
            let new = update_triplet(&c, &prev, &mut measure).unwrap().unwrap();
            assert_eq!(new.imputed, vec![(1, 1)]);
        }
    }

    #[test]
    fn update_is_deterministic() {
        let rows = [(1u8, 0u8), (0, 1), (1, 1)];
        let atom = Atom::new(vec![0.3, 0.5, 0.7]);
        let run = || {
            let mut measure = StubMeasure {
                atoms: (0..8).map(|i| Atom::new(vec![0.2, 0.4, 0.1 + 0.1 * i as f64])).collect(),
                next: 0,
                log_c: -2.0,
            };
            let prev = single_dish_state(atom.clone(), 6, 0);
            update_triplet(&ctx(&rows, 3, 6, 0.8, 4), &prev, &mut measure)
                .unwrap()
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.z, b.z);
        assert!(a.dishes.iter().zip(&b.dishes).all(|(x, y)| x.atom.p == y.atom.p));
    }

    /// The growing and frozen measures must produce identical updates when
    /// the frozen prefix is long enough — the foundation of worker-count
    /// independence.
    #[test]
    fn growing_equals_frozen_on_real_measure() {
        let (tensor, env) = fixture();
        let cfg = test_cfg();
        let state = ChainState::init(&tensor, &env, &cfg, 5);
        let plan = SweepPlan::build(&state, &tensor, &env, &cfg).unwrap();
        let (k, i, j) = (0, 1, 0);
        let c = TripletCtx {
            k,
            i,
            j,
            rows: tensor.observed(k, i, j),
            l: tensor.l_max(),
            m: cfg.m,
            alpha_g: plan.alpha_g[k][i],
            eps_trunc: cfg.eps_trunc,
            seed: state.seed,
            sweep: 0,
        };

        // growing path
        let mut h1 = StickBreakingCache::new(plan.h_concentration(k)).unwrap();
        let mut g1 = StickBreakingCache::new(plan.g0_concentration(k, j)).unwrap();
        let mut growing =
            GrowingMeasure::new(&mut g1, plan.g0_source(state.seed, 0, k, j, &mut h1));
        let a = update_triplet(&c, state.triplet(k, i, j), &mut growing)
            .unwrap()
            .unwrap();

        // frozen path on a long prefix of the same realization
        let mut h2 = StickBreakingCache::new(plan.h_concentration(k)).unwrap();
        let mut g2 = StickBreakingCache::new(plan.g0_concentration(k, j)).unwrap();
        {
            let mut src = plan.g0_source(state.seed, 0, k, j, &mut h2);
            g2.extend_to_len(&mut src, 2048).unwrap();
        }
        let mut frozen = FrozenMeasure::new(&g2);
        let b = update_triplet(&c, state.triplet(k, i, j), &mut frozen)
            .unwrap()
            .expect("2048 atoms is ample for this concentration");

        assert_eq!(a.labels, b.labels);
        assert_eq!(a.z, b.z);
        assert_eq!(a.imputed, b.imputed);
        assert!(a.dishes.iter().zip(&b.dishes).all(|(x, y)| x.atom.p == y.atom.p));
    }

    #[test]
    fn frozen_on_short_prefix_signals_growth() {
        let (tensor, env) = fixture();
        let cfg = test_cfg();
        let state = ChainState::init(&tensor, &env, &cfg, 5);
        let plan = SweepPlan::build(&state, &tensor, &env, &cfg).unwrap();
        let g = StickBreakingCache::new(plan.g0_concentration(0, 0)).unwrap();
        let mut frozen = FrozenMeasure::new(&g); // empty prefix
        let c = TripletCtx {
            k: 0,
            i: 0,
            j: 0,
            rows: tensor.observed(0, 0, 0),
            l: tensor.l_max(),
            m: cfg.m,
            alpha_g: plan.alpha_g[0][0],
            eps_trunc: cfg.eps_trunc,
            seed: state.seed,
            sweep: 0,
        };
        let out = update_triplet(&c, state.triplet(0, 0, 0), &mut frozen).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn sweeps_audit_and_are_deterministic() {
        let (tensor, env) = fixture();
        let cfg = test_cfg();
        let mut s1 = ChainState::init(&tensor, &env, &cfg, 9);
        let mut s2 = ChainState::init(&tensor, &env, &cfg, 9);
        for _ in 0..5 {
            sweep_serial(&mut s1, &tensor, &env, &cfg).unwrap();
            s1.audit(&tensor, cfg.m).unwrap();
            Registry::build(&s1, tensor.n_genes())
                .audit(&s1, tensor.n_genes())
                .unwrap();
            sweep_serial(&mut s2, &tensor, &env, &cfg).unwrap();
        }
        assert_eq!(s1.sweep, 5);
        assert!(states_equal(&s1, &s2));
    }

    #[test]
    fn snapshot_resume_is_exact() {
        let (tensor, env) = fixture();
        let cfg = test_cfg();
        let mut full = ChainState::init(&tensor, &env, &cfg, 13);
        sweep_serial(&mut full, &tensor, &env, &cfg).unwrap();
        let bytes = full.to_bytes();
        sweep_serial(&mut full, &tensor, &env, &cfg).unwrap();

        let mut resumed = ChainState::from_bytes(&bytes).unwrap();
        sweep_serial(&mut resumed, &tensor, &env, &cfg).unwrap();
        assert!(states_equal(&full, &resumed));
    }

    #[test]
    fn sweep_moves_hyperparameters_eventually() {
        let (tensor, env) = fixture();
        let cfg = RunConfig {
            tmcmc_additive_scale: 0.1,
            ..test_cfg()
        };
        let mut state = ChainState::init(&tensor, &env, &cfg, 3);
        let start = state.hyper.clone();
        let mut moved = false;
        for _ in 0..50 {
            sweep_serial(&mut state, &tensor, &env, &cfg).unwrap();
            if state.hyper != start {
                moved = true;
                break;
            }
        }
        assert!(moved, "hyperparameter block never accepted in 50 sweeps");
    }
}
