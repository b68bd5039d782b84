//! Chain orchestration: bulk-synchronous parallel sweeps with frozen
//! per-sweep caches, a growth barrier, deterministic work partitioning, and
//! thinned trace emission.
//!
//! Within a sweep the registry and every stick-breaking cache are frozen;
//! workers update disjoint triplets against read-only prefixes and report
//! either a result or a growth request. Requests are serviced after the
//! phase and the affected triplets rerun from the start of their dedicated
//! random streams, so the rerun is exact. Because cache entries are
//! position-keyed and every triplet draw is prefix-length independent, the
//! chain is bit-identical for any worker count.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::config::RunConfig;
use crate::data::{EnvMatrix, GenotypeTensor};
use crate::error::{Error, Result};
use crate::gibbs::{
    kernel_counts, kernel_log_bound, update_triplet, FrozenMeasure, GeneMeasure, GrowingMeasure,
    SweepPlan, TripletCtx,
};
use crate::infer::{gene_statistics, interaction_covariance, locus_distances, logit};
use crate::rng::{stream, StreamKey};
use crate::state::{ChainState, TripletState};
use crate::sticks::StickBreakingCache;
use crate::tmcmc::{self, UrnStats};

/// One trace record: `sweep<TAB>stat_name<TAB>indices<TAB>value`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub sweep: u64,
    pub stat: String,
    pub indices: String,
    pub value: f64,
}

impl TraceRecord {
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.sweep, self.stat, self.indices, self.value)
    }

    pub fn parse(line: &str, lineno: usize) -> Result<TraceRecord> {
        let mut parts = line.split('\t');
        let bad = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("trace record missing or malformed {what}: {line:?}"),
        };
        let sweep = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("sweep"))?;
        let stat = parts.next().ok_or_else(|| bad("stat name"))?.to_string();
        let indices = parts.next().ok_or_else(|| bad("indices"))?.to_string();
        let value = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("value"))?;
        Ok(TraceRecord {
            sweep,
            stat,
            indices,
            value,
        })
    }
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(idx, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            TraceRecord::parse(&line, idx + 1)
        })
        .collect()
}

/// Deterministic partition of the per-sweep work: phase lists (control
/// group first, then cases) in canonical (i, j) order.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkPlan {
    pub phases: [Vec<(usize, usize)>; 2],
    pub workers: usize,
}

impl WorkPlan {
    pub fn build(cfg: &RunConfig, tensor: &GenotypeTensor) -> WorkPlan {
        let mut phases: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
        for (k, phase) in phases.iter_mut().enumerate() {
            for i in 0..tensor.n_k(k) {
                for j in 0..tensor.n_genes() {
                    phase.push((i, j));
                }
            }
        }
        WorkPlan {
            phases,
            workers: cfg.workers,
        }
    }

    /// Contiguous worker blocks of one phase; trailing workers may be idle.
    pub fn blocks(&self, k: usize) -> Vec<&[(usize, usize)]> {
        let items = &self.phases[k];
        if items.is_empty() {
            return Vec::new();
        }
        let chunk = items.len().div_ceil(self.workers);
        items.chunks(chunk).collect()
    }
}

fn triplet_ctx<'a>(
    tensor: &'a GenotypeTensor,
    plan: &SweepPlan,
    cfg: &RunConfig,
    seed: u64,
    sweep: u64,
    k: usize,
    i: usize,
    j: usize,
) -> TripletCtx<'a> {
    TripletCtx {
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
    }
}

/// Whether completed sweep `s` (1-based) is retained by the schedule.
pub fn thinned(cfg: &RunConfig, s: u64) -> bool {
    s > cfg.burnin && (s - cfg.burnin).is_multiple_of(cfg.thin)
}

/// One parallel sweep. Steps: freeze registry and precisions, pre-simulate
/// the shared caches, run both phases over the worker pool with a growth
/// barrier, then the hyperparameter block move. Returns the caches so the
/// trace emitter can reuse them for replicate draws.
fn sweep_parallel(
    state: &mut ChainState,
    tensor: &GenotypeTensor,
    env: &EnvMatrix,
    cfg: &RunConfig,
    work: &WorkPlan,
    depth_hint: &mut [Vec<usize>; 2],
) -> Result<(SweepPlan, [Vec<StickBreakingCache>; 2], [StickBreakingCache; 2])> {
    let plan = SweepPlan::build(state, tensor, env, cfg)?;
    let (seed, sweep) = (state.seed, state.sweep);

    let mut h_caches = [
        StickBreakingCache::new(plan.h_concentration(0))?,
        StickBreakingCache::new(plan.h_concentration(1))?,
    ];
    let mut g0_caches: [Vec<StickBreakingCache>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        for j in 0..tensor.n_genes() {
            let mut cache = StickBreakingCache::new(plan.g0_concentration(k, j))?;
            let mut src = plan.g0_source(seed, sweep, k, j, &mut h_caches[k]);
            // pre-simulate the budget, the prefix needed by normalizing
            // constants, and the depth the previous sweep actually used, so
            // growth-barrier reruns stay rare; extra depth never changes
            // results because every draw is prefix-length independent
            let target = cfg.cache_budget.max(depth_hint[k][j]);
            while cache.len() < target || cache.leftover() >= cfg.eps_trunc {
                cache.extend_one(&mut src)?;
            }
            g0_caches[k].push(cache);
        }
    }

    for k in 0..2 {
        let blocks = work.blocks(k);
        let state_ref: &ChainState = state;
        let caches_ref = &g0_caches;
        type PhaseResult = Vec<(usize, usize, Option<TripletState>)>;
        let results: Result<Vec<PhaseResult>> = std::thread::scope(|scope| {
            let handles: Vec<_> = blocks
                .iter()
                .map(|&block| {
                    let plan = &plan;
                    scope.spawn(move || -> Result<PhaseResult> {
                        block
                            .iter()
                            .map(|&(i, j)| {
                                let mut measure = FrozenMeasure::new(&caches_ref[k][j]);
                                let ctx =
                                    triplet_ctx(tensor, plan, cfg, seed, sweep, k, i, j);
                                update_triplet(&ctx, state_ref.triplet(k, i, j), &mut measure)
                                    .map(|out| (i, j, out))
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });

        // growth barrier: apply completed triplets, then rerun the starved
        // ones against growing caches — the rerun restarts the triplet's
        // stream, so its result is the one an infinite prefix would give
        let mut retries = Vec::new();
        for (i, j, out) in results?.into_iter().flatten() {
            match out {
                Some(updated) => *state.triplet_mut(k, i, j) = updated,
                None => retries.push((i, j)),
            }
        }
        for (i, j) in retries {
            let src = plan.g0_source(seed, sweep, k, j, &mut h_caches[k]);
            let mut measure = GrowingMeasure::new(&mut g0_caches[k][j], src);
            let ctx = triplet_ctx(tensor, &plan, cfg, seed, sweep, k, i, j);
            let updated = update_triplet(&ctx, state.triplet(k, i, j), &mut measure)?
                .ok_or_else(|| Error::Numeric("growing measure signalled growth".into()))?;
            *state.triplet_mut(k, i, j) = updated;
        }
        for (j, cache) in g0_caches[k].iter().enumerate() {
            // raise the hint (with headroom) only when the barrier had to
            // grow this cache; otherwise decay slowly so a one-off deep
            // excursion does not inflate pre-simulation forever
            let target = cfg.cache_budget.max(depth_hint[k][j]);
            depth_hint[k][j] = if cache.len() > target {
                cache.len() + cache.len() / 4
            } else {
                cfg.cache_budget.max(target * 15 / 16)
            };
        }
    }

    let stats = UrnStats::build(state, tensor.n_genes(), cfg.m);
    let mut rng = stream(seed, StreamKey::Tmcmc { sweep });
    tmcmc::step(&mut state.hyper, &stats, env, cfg, &mut rng, true)?;
    state.sweep += 1;
    Ok((plan, g0_caches, h_caches))
}

/// Names of the flattened hyperparameter coordinates.
pub fn hyper_coord_names(d: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(3 + 3 * d);
    for level in ["G", "G0", "H"] {
        names.push(format!("mu_{level}"));
        for c in 0..d {
            names.push(format!("beta_{level}.{c}"));
        }
    }
    names
}

#[allow(clippy::too_many_arguments)]
fn emit_sweep_records(
    state: &ChainState,
    tensor: &GenotypeTensor,
    cfg: &RunConfig,
    plan: &SweepPlan,
    g0_caches: &mut [Vec<StickBreakingCache>; 2],
    h_caches: &mut [StickBreakingCache; 2],
    cache_sweep: u64,
    out: &mut Vec<TraceRecord>,
) -> Result<()> {
    let s = state.sweep;
    let rec = |stat: &str, indices: String, value: f64| TraceRecord {
        sweep: s,
        stat: stat.to_string(),
        indices,
        value,
    };

    let d = state.hyper.beta_g.len();
    for (name, value) in hyper_coord_names(d).iter().zip(state.hyper.to_vec()) {
        out.push(rec("hyper", name.clone(), value));
    }

    for (k, i, j) in tensor.triplets() {
        out.push(rec(
            "tau",
            format!("{k},{i},{j}"),
            state.triplet(k, i, j).tau() as f64,
        ));
    }

    let stats = gene_statistics(state, tensor)?;
    for j in 0..tensor.n_genes() {
        out.push(rec("d_hat", format!("{j}"), stats.d_hat[j]));
        out.push(rec("d_e", format!("{j}"), stats.d_e[j]));
    }
    out.push(rec("d_star", "-".into(), stats.d_star));
    out.push(rec("d_star_e", "-".into(), stats.d_star_e));

    for (j, per_locus) in locus_distances(state, tensor, &stats.central)
        .iter()
        .enumerate()
    {
        for (r, &dist) in per_locus.iter().enumerate() {
            out.push(rec("dpl", format!("{j},{r}"), dist));
        }
    }

    // interaction covariances: replicate redraws of the allocated rows of a
    // gene pair from their full conditionals, all else held fixed
    for k in 0..2 {
        for i in 0..tensor.n_k(k) {
            for j1 in 0..tensor.n_genes() {
                for j2 in j1 + 1..tensor.n_genes() {
                    // each replicate's stream yields one uniform per gene;
                    // drawing per gene (not per replicate) lets one measure
                    // instance amortize its kernel scan over all replicates
                    let mut uniforms = [Vec::new(), Vec::new()];
                    for rep in 0..cfg.r_cov as u32 {
                        let mut rng = stream(
                            state.seed,
                            StreamKey::CovReplicate {
                                sweep: cache_sweep,
                                k: k as u8,
                                i: i as u32,
                                j1: j1 as u32,
                                j2: j2 as u32,
                                rep,
                            },
                        );
                        uniforms[0].push(rng.gen::<f64>());
                        uniforms[1].push(rng.gen::<f64>());
                    }
                    let mut coords = [Vec::new(), Vec::new()];
                    for (slot, &j) in [j1, j2].iter().enumerate() {
                        let rows = tensor.observed(k, i, j);
                        let l_j = rows.len();
                        let (n1, n2) = kernel_counts(rows);
                        let [c0, c1] = h_caches;
                        let h_cache = if k == 0 { c0 } else { c1 };
                        let src = plan.g0_source(state.seed, cache_sweep, k, j, h_cache);
                        let mut measure = GrowingMeasure::new(&mut g0_caches[k][j], src);
                        for &u in &uniforms[slot] {
                            let atom = measure
                                .retro(
                                    &mut |a| a.log_kernel_counts(&n1, &n2, l_j),
                                    u,
                                    kernel_log_bound(rows),
                                )?
                                .expect("growing measure always completes");
                            let pbar = atom.p[..l_j].iter().sum::<f64>() / l_j as f64;
                            coords[slot].push(logit(pbar));
                        }
                    }
                    let est = {
                        let mut sampler =
                            |rep: u32| Ok((coords[0][rep as usize], coords[1][rep as usize]));
                        interaction_covariance(&mut sampler, cfg.r_cov)?
                    };
                    let idx = format!("{k},{i},{j1},{j2}");
                    out.push(rec("cov", idx.clone(), est.value));
                    out.push(rec(
                        "cov_degenerate",
                        idx,
                        if est.degenerate { 1.0 } else { 0.0 },
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Run the chain from its current sweep up to `cfg.iterations` sweeps,
/// collecting thinned trace records. Resuming a restored snapshot continues
/// the exact same chain.
pub fn run_chain(
    state: &mut ChainState,
    tensor: &GenotypeTensor,
    env: &EnvMatrix,
    cfg: &RunConfig,
) -> Result<Vec<TraceRecord>> {
    let work = WorkPlan::build(cfg, tensor);
    let mut records = Vec::new();
    let mut depth_hint: [Vec<usize>; 2] = [
        vec![cfg.cache_budget; tensor.n_genes()],
        vec![cfg.cache_budget; tensor.n_genes()],
    ];
    while state.sweep < cfg.iterations {
        let cache_sweep = state.sweep;
        let (plan, mut g0_caches, mut h_caches) =
            sweep_parallel(state, tensor, env, cfg, &work, &mut depth_hint)?;
        if thinned(cfg, state.sweep) {
            emit_sweep_records(
                state,
                tensor,
                cfg,
                &plan,
                &mut g0_caches,
                &mut h_caches,
                cache_sweep,
                &mut records,
            )?;
        }
    }
    Ok(records)
}
