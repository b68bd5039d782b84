//! Statistical acceptance suite: ten end-to-end checks of the sampler, the
//! parallel runner, and the calibrated test pipeline, each printed as one
//! PASS/FAIL line. Run with `--nocapture` to see the lines as they finish.
//!
//! Individual criteria are also exposed as `#[ignore]`d tests so a single
//! check can be rerun during development:
//! `cargo test --test acceptance -- --ignored criterion_7`.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use hdpcc::atom::Atom;
use hdpcc::config::RunConfig;
use hdpcc::data::{EnvMatrix, GenotypeTensor};
use hdpcc::gibbs::sweep_serial;
use hdpcc::infer::{
    calibrate_threshold, dpl_flags, interaction_covariance, ks_two_sample, posterior_prob,
};
use hdpcc::model::{BaseMeasure, HyperParams, Level, PrecisionConsts};
use hdpcc::report::{dpl_mean_distances, epsilons_from_trace, test_report, trace_targets};
use hdpcc::rng::{stream, StreamKey};
use hdpcc::runner::{run_chain, write_trace};
use hdpcc::simgen::{generate_null, generate_regime, Dims, Effects};
use hdpcc::state::{ChainState, Dish, TripletState};
use hdpcc::sticks::{retro_posterior_draw, EntrySource, StickBreakingCache};
use hdpcc::tmcmc::{step, UrnStats};
use hdpcc::urns::{measure_draw, pick_branch, polya_step, G0Source, HSource, PolyaDraw};
use hdpcc::Result;

// ---------------------------------------------------------------------------
// harness
// ---------------------------------------------------------------------------

fn run_criterion(
    failures: &mut Vec<&'static str>,
    name: &'static str,
    f: impl FnOnce() -> Result<(bool, String)>,
) {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok((p, d)) => (p, d),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "[{}] criterion {name}: {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    if !pass {
        failures.push(name);
    }
}

fn run_single(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) {
    let mut failures = Vec::new();
    run_criterion(&mut failures, name, f);
    assert!(failures.is_empty(), "failed: {failures:?}");
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    run_criterion(&mut failures, "1 retrospective-draw exactness", retro_exactness);
    run_criterion(&mut failures, "2 Polya-urn cluster-count law", polya_cluster_law);
    run_criterion(&mut failures, "3 marginal preservation", marginal_preservation);
    run_criterion(&mut failures, "5 hyperparameter-move target recovery", tmcmc_target_recovery);
    run_criterion(&mut failures, "6 parallel/serial equivalence", worker_equivalence);
    run_criterion(&mut failures, "9 interaction-covariance sanity", covariance_sanity);
    run_criterion(&mut failures, "10 state audit", state_audit);
    run_criterion(&mut failures, "4 joint-distribution coherence", geweke_coherence);
    run_criterion(&mut failures, "7 null self-calibration", null_self_calibration);
    run_criterion(&mut failures, "8 regime discrimination", regime_discrimination);
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

#[test]
#[ignore]
fn criterion_1() {
    run_single("1 retrospective-draw exactness", retro_exactness);
}

#[test]
#[ignore]
fn criterion_2() {
    run_single("2 Polya-urn cluster-count law", polya_cluster_law);
}

#[test]
#[ignore]
fn criterion_3() {
    run_single("3 marginal preservation", marginal_preservation);
}

#[test]
#[ignore]
fn criterion_4() {
    run_single("4 joint-distribution coherence", geweke_coherence);
}

#[test]
#[ignore]
fn criterion_5() {
    run_single("5 hyperparameter-move target recovery", tmcmc_target_recovery);
}

#[test]
#[ignore]
fn criterion_6() {
    run_single("6 parallel/serial equivalence", worker_equivalence);
}

#[test]
#[ignore]
fn criterion_7() {
    run_single("7 null self-calibration", null_self_calibration);
}

#[test]
#[ignore]
fn criterion_8() {
    run_single("8 regime discrimination", regime_discrimination);
}

#[test]
#[ignore]
fn criterion_9() {
    run_single("9 interaction-covariance sanity", covariance_sanity);
}

#[test]
#[ignore]
fn criterion_10() {
    run_single("10 state audit", state_audit);
}

// ---------------------------------------------------------------------------
// criterion 1: retrospective draws match exact enumeration on finite measures
// ---------------------------------------------------------------------------

/// Finite stick realization: 15 real sticks, then a stick fraction of
/// essentially 1 that absorbs the remaining mass, so the measure is a known
/// 16-atom distribution up to negligible (< 1e-11) tail mass.
struct FiniteSource {
    us: Vec<f64>,
    atoms: Vec<Arc<Atom>>,
}

impl EntrySource for FiniteSource {
    fn entry(&mut self, pos: u64) -> Result<(f64, Arc<Atom>)> {
        let i = (pos as usize).min(self.us.len() - 1);
        Ok((self.us[i], self.atoms[i].clone()))
    }
}

fn retro_exactness() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let n_draws = 100_000u64;
    let mut passes = 0;
    let mut min_p = 1.0f64;
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC1_0000 + case);
        let us: Vec<f64> = (0..15)
            .map(|_| rng.gen_range(0.3..0.9))
            .chain([1e-12])
            .collect();
        let atoms: Vec<Arc<Atom>> = (0..16)
            .map(|_| Atom::new(vec![rng.gen_range(0.1..0.9)]))
            .collect();
        let mut src = FiniteSource { us, atoms };
        let mut cache = StickBreakingCache::new(1.0)?;
        cache.extend_to_len(&mut src, 16)?;

        // exact kernel-reweighted pmf over the realized sticks
        let masses: Vec<f64> = (0..16).map(|l| cache.weight(l) * cache.atom(l).p[0]).collect();
        let total: f64 = masses.iter().sum();

        let mut counts = [0u64; 16];
        for _ in 0..n_draws {
            let u: f64 = rng.gen();
            let idx = retro_posterior_draw(
                &mut cache,
                &mut src,
                &mut |a: &Arc<Atom>| a.ln_p[0],
                u,
                0.0,
            )?;
            counts[idx.min(15)] += 1;
        }

        // chi-square with cells pooled to expected counts >= 5
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let (mut o_acc, mut e_acc) = (0.0f64, 0.0f64);
        for l in 0..16 {
            o_acc += counts[l] as f64;
            e_acc += n_draws as f64 * masses[l] / total;
            if e_acc >= 5.0 {
                cells.push((o_acc, e_acc));
                o_acc = 0.0;
                e_acc = 0.0;
            }
        }
        if e_acc > 0.0 {
            if let Some(last) = cells.last_mut() {
                last.0 += o_acc;
                last.1 += e_acc;
            }
        }
        let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
        let dof = cells.len().saturating_sub(1).max(1);
        let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
        min_p = min_p.min(p);
        if p > 0.001 {
            passes += 1;
        }
    }
    let elapsed = t0.elapsed();
    let ok = passes >= 19 && elapsed < Duration::from_secs(60);
    Ok((
        ok,
        format!("{passes}/20 cases at p > 0.001 (min p = {min_p:.4}), need >= 19 within 1 min"),
    ))
}

// ---------------------------------------------------------------------------
// criterion 2: Polya-urn expected cluster count matches the harmonic sum
// ---------------------------------------------------------------------------

fn polya_cluster_law() -> Result<(bool, String)> {
    let reps = 10_000usize;
    let m_max = 50usize;
    let alpha = 1.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut sum = 0.0;
    for _ in 0..reps {
        let mut tau = 0u64;
        for m in 1..=m_max {
            if matches!(polya_step(m, alpha, rng.gen()), PolyaDraw::Fresh) {
                tau += 1;
            }
        }
        sum += tau as f64;
    }
    let mean = sum / reps as f64;
    // fresh indicators are independent Bernoulli(alpha / (alpha + m - 1))
    let expect: f64 = (1..=m_max).map(|m| alpha / (alpha + (m - 1) as f64)).sum();
    let var: f64 = (1..=m_max)
        .map(|m| {
            let p = alpha / (alpha + (m - 1) as f64);
            p * (1.0 - p)
        })
        .sum();
    let band = 3.0 * (var / reps as f64).sqrt();
    let ok = (mean - expect).abs() <= band;
    Ok((
        ok,
        format!("mean tau = {mean:.4}, oracle {expect:.4}, 3-sigma band {band:.4}"),
    ))
}

// ---------------------------------------------------------------------------
// criterion 3: a draw through the individual-level measure has the same
// marginal as a direct draw from the gene-level mean measure, whatever the
// individual-level concentration is
// ---------------------------------------------------------------------------

/// Entry source for an individual-level cache: every entry is one prior draw
/// from a realized gene-level measure (which recurses into the group-level
/// cache), with all randomness keyed by (replicate, position).
struct GeneDrawSource {
    rep: u64,
    alpha_h: f64,
    xi: Vec<Arc<Atom>>,
    xi_counts: Vec<u64>,
    g0_cache: StickBreakingCache,
    h_cache: StickBreakingCache,
}

impl EntrySource for GeneDrawSource {
    fn entry(&mut self, pos: u64) -> Result<(f64, Arc<Atom>)> {
        let mut rng = stream(
            0xC3,
            StreamKey::Triplet {
                sweep: self.rep,
                k: 0,
                i: pos as u32,
                j: 0,
            },
        );
        let u_stick = 1.0 - rng.gen::<f64>();
        let h_source = HSource {
            seed: 0xC3,
            sweep: self.rep,
            k: 0,
            alpha_h: self.alpha_h,
            base: BaseMeasure::new(1.0, 1.0, 1)?,
            zeta: &[],
            counts: &[],
        };
        let mut g0_source = G0Source {
            seed: 0xC3,
            sweep: self.rep,
            k: 0,
            j: 0,
            alpha_g0: self.g0_cache.concentration(),
            xi: &self.xi,
            counts: &self.xi_counts,
            h_cache: &mut self.h_cache,
            h_source,
        };
        let atom = measure_draw(&mut self.g0_cache, &mut g0_source, rng.gen())?;
        Ok((u_stick, atom))
    }
}

fn marginal_preservation() -> Result<(bool, String)> {
    let reps = 3000u64;
    let alpha_g0 = 2.0;
    let xi_p = [0.2, 0.5, 0.8];
    let xi_counts = vec![3u64, 2, 1];

    // direct draws from the gene-level mean measure
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3D1);
    let base = BaseMeasure::new(1.0, 1.0, 1)?;
    let direct: Vec<f64> = (0..reps)
        .map(|_| match pick_branch(alpha_g0, &xi_counts, rng.gen()) {
            None => base.draw(&mut rng)[0],
            Some(l) => xi_p[l],
        })
        .collect();

    let mut details = Vec::new();
    let mut ok = true;
    for &alpha_g in &[0.01, 1.0, 100.0] {
        let mut urn = Vec::with_capacity(reps as usize);
        for rep in 0..reps {
            let mut src = GeneDrawSource {
                rep: (alpha_g * 1000.0) as u64 * 1_000_000 + rep,
                alpha_h: 1.0,
                xi: xi_p.iter().map(|&p| Atom::new(vec![p])).collect(),
                xi_counts: xi_counts.clone(),
                g0_cache: StickBreakingCache::new(alpha_g0)?,
                h_cache: StickBreakingCache::new(1.0)?,
            };
            let mut g_cache = StickBreakingCache::new(alpha_g)?;
            let mut rep_rng = ChaCha8Rng::seed_from_u64(0xC3_0000 + src.rep);
            let atom = measure_draw(&mut g_cache, &mut src, rep_rng.gen())?;
            urn.push(atom.p[0]);
        }
        let (_, p) = ks_two_sample(&urn, &direct);
        ok &= p > 0.001;
        details.push(format!("alpha={alpha_g}: KS p = {p:.4}"));
    }
    Ok((ok, details.join(", ")))
}

// ---------------------------------------------------------------------------
// criterion 4: ancestral vs successive-conditional simulation agree on the
// first two moments of the allele probabilities and cluster counts
// ---------------------------------------------------------------------------

/// Batch-means standard error: (mean, se) over equally sized batches.
fn batch_se(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let batch = xs.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| xs[b * batch..(b + 1) * batch].iter().sum::<f64>() / batch as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (n_batches as f64 - 1.0);
    (grand, (var / n_batches as f64).sqrt())
}

fn iid_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-realization functionals: mean p, mean p^2 over all (triplet, row,
/// locus) slots, mean tau, mean tau^2 over triplets.
#[derive(Default)]
struct Moments {
    p: f64,
    p2: f64,
    tau: f64,
    tau2: f64,
}

fn geweke_coherence() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let (n_ind, n_genes, l, m) = (5usize, 2usize, 4usize, 5usize);
    let sweeps = 20_000usize;
    let burn = 1_000usize;
    let reps = 20_000usize;

    // ancestral side: hyperparameters from the prior, then one franchise walk
    let mut anc = [const { Vec::new() }; 4];
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC4A0_0000 + rep as u64);
        let a_g = rng.gen_range(0.0f64..1.0).exp();
        let a_g0 = rng.gen_range(0.0f64..1.0).exp();
        let a_h = rng.gen_range(0.0f64..1.0).exp();
        let mut zeta: Vec<Vec<(Vec<f64>, u64)>> = vec![Vec::new(); 2];
        let mut xi: Vec<Vec<Vec<(Vec<f64>, u64)>>> = vec![vec![Vec::new(); n_genes]; 2];
        let mut mo = Moments::default();
        for k in 0..2 {
            for _i in 0..n_ind {
                for j in 0..n_genes {
                    let mut tables: Vec<(Vec<f64>, u64)> = Vec::new();
                    for _row in 0..m {
                        let tcounts: Vec<u64> = tables.iter().map(|t| t.1).collect();
                        match pick_branch(a_g, &tcounts, rng.gen()) {
                            Some(t) => tables[t].1 += 1,
                            None => {
                                let xcounts: Vec<u64> = xi[k][j].iter().map(|x| x.1).collect();
                                let v = match pick_branch(a_g0, &xcounts, rng.gen()) {
                                    Some(d) => {
                                        xi[k][j][d].1 += 1;
                                        xi[k][j][d].0.clone()
                                    }
                                    None => {
                                        let zcounts: Vec<u64> =
                                            zeta[k].iter().map(|z| z.1).collect();
                                        let v = match pick_branch(a_h, &zcounts, rng.gen()) {
                                            Some(s) => {
                                                zeta[k][s].1 += 1;
                                                zeta[k][s].0.clone()
                                            }
                                            None => {
                                                let v: Vec<f64> =
                                                    (0..l).map(|_| rng.gen()).collect();
                                                zeta[k].push((v.clone(), 1));
                                                v
                                            }
                                        };
                                        xi[k][j].push((v.clone(), 1));
                                        v
                                    }
                                };
                                tables.push((v, 1));
                            }
                        }
                    }
                    for (v, c) in &tables {
                        for &p in v {
                            mo.p += *c as f64 * p;
                            mo.p2 += *c as f64 * p * p;
                        }
                    }
                    let tau = tables.len() as f64;
                    mo.tau += tau;
                    mo.tau2 += tau * tau;
                }
            }
        }
        let slots = (2 * n_ind * n_genes * m * l) as f64;
        let triplets = (2 * n_ind * n_genes) as f64;
        anc[0].push(mo.p / slots);
        anc[1].push(mo.p2 / slots);
        anc[2].push(mo.tau / triplets);
        anc[3].push(mo.tau2 / triplets);
    }

    // successive-conditional side: sweep, record, regenerate the data
    let unit = PrecisionConsts {
        scale: 1.0,
        offset: 0.0,
    };
    let cfg = RunConfig {
        m,
        iterations: sweeps as u64 + 1,
        burnin: 1,
        thin: 1,
        consts_g: unit,
        consts_g0: unit,
        consts_h: unit,
        eps_trunc: 1e-6,
        ..RunConfig::default()
    };
    let genes: Vec<String> = (0..n_genes).map(|j| format!("g{j:03}")).collect();
    let loci = vec![l; n_genes];
    let individuals = [
        (0..n_ind).map(|i| format!("ctrl{i:02}")).collect::<Vec<_>>(),
        (0..n_ind).map(|i| format!("case{i:02}")).collect::<Vec<_>>(),
    ];
    let env = EnvMatrix::from_rows(vec![vec![vec![0.0]; n_ind], vec![vec![0.0]; n_ind]])?;
    let zero_rows = || {
        let per_ind = vec![vec![(0u8, 0u8); l]; n_genes];
        [vec![per_ind.clone(); n_ind], vec![per_ind; n_ind]]
    };
    let mut tensor = GenotypeTensor::from_parts(
        genes.clone(),
        loci.clone(),
        individuals.clone(),
        zero_rows(),
    )?;
    let mut state = ChainState::init(&tensor, &env, &cfg, 0xC4);
    let mut chain = [const { Vec::new() }; 4];
    for _s in 0..sweeps {
        sweep_serial(&mut state, &tensor, &env, &cfg)?;
        // regenerate the observations from the allocated rows
        let mut gen_rng =
            ChaCha8Rng::seed_from_u64(0xC4D0_0000 ^ state.sweep.wrapping_mul(0x9E37_79B9));
        let mut rows = zero_rows();
        let mut mo = Moments::default();
        for k in 0..2 {
            for i in 0..n_ind {
                for j in 0..n_genes {
                    let t = state.triplet(k, i, j);
                    for row in 0..m {
                        for &p in &t.row(row).p {
                            mo.p += p;
                            mo.p2 += p * p;
                        }
                    }
                    let tau = t.tau() as f64;
                    mo.tau += tau;
                    mo.tau2 += tau * tau;
                    let pz = &t.row(t.z).p;
                    rows[k][i][j] = (0..l)
                        .map(|r| {
                            (
                                (gen_rng.gen::<f64>() < pz[r]) as u8,
                                (gen_rng.gen::<f64>() < pz[r]) as u8,
                            )
                        })
                        .collect();
                }
            }
        }
        tensor =
            GenotypeTensor::from_parts(genes.clone(), loci.clone(), individuals.clone(), rows)?;
        let slots = (2 * n_ind * n_genes * m * l) as f64;
        let triplets = (2 * n_ind * n_genes) as f64;
        chain[0].push(mo.p / slots);
        chain[1].push(mo.p2 / slots);
        chain[2].push(mo.tau / triplets);
        chain[3].push(mo.tau2 / triplets);
    }

    let names = ["E[p]", "E[p^2]", "E[tau]", "E[tau^2]"];
    let mut details = Vec::new();
    let mut ok = true;
    for f in 0..4 {
        let (ma, sa) = iid_se(&anc[f]);
        let (mc, sc) = batch_se(&chain[f][burn..], 95);
        let z = (ma - mc) / (sa * sa + sc * sc).sqrt();
        ok &= z.abs() <= 3.0;
        details.push(format!("{} z = {z:.2}", names[f]));
    }
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(600);
    Ok((ok, format!("{} within 10 min", details.join(", "))))
}

// ---------------------------------------------------------------------------
// criterion 5: hyperparameter block move recovers the frozen-state posterior;
// dropping the Jacobian must not
// ---------------------------------------------------------------------------

fn frozen_urn_state() -> (ChainState, usize, usize) {
    // one individual per group, two genes each, mixed fresh/copy patterns
    let labels: Vec<Vec<usize>> = vec![
        vec![0, 1, 0, 2, 1],
        vec![0, 0, 1, 1, 0],
        vec![0, 1, 2, 3, 3],
        vec![0, 0, 0, 0, 1],
    ];
    let m = labels[0].len();
    let make = |labels: &Vec<usize>| {
        let tau = labels.iter().max().unwrap() + 1;
        let mut dishes: Vec<Dish> = (0..tau)
            .map(|t| Dish {
                atom: Atom::new(vec![0.1 + 0.2 * t as f64]),
                mult: 0,
            })
            .collect();
        for &t in labels {
            dishes[t].mult += 1;
        }
        TripletState {
            dishes,
            labels: labels.clone(),
            z: 0,
            imputed: vec![],
        }
    };
    let state = ChainState {
        triplets: [
            vec![labels[..2].iter().map(make).collect()],
            vec![labels[2..].iter().map(make).collect()],
        ],
        hyper: HyperParams::zeros(1),
        sweep: 0,
        seed: 0,
    };
    (state, 2, m)
}

fn tmcmc_target_recovery() -> Result<(bool, String)> {
    let (state, n_genes, m) = frozen_urn_state();
    let stats = UrnStats::build(&state, n_genes, m);
    let env = EnvMatrix::from_rows(vec![vec![vec![0.0]], vec![vec![0.0]]])?;
    let unit = PrecisionConsts {
        scale: 1.0,
        offset: 0.0,
    };
    let cfg = RunConfig {
        consts_g: unit,
        consts_g0: unit,
        consts_h: unit,
        tmcmc_additive_scale: 0.2,
        tmcmc_mult_scale: 0.5,
        tmcmc_move_mix: 0.5,
        ..RunConfig::default()
    };

    // with zero covariates the posterior factorizes, so the marginal of the
    // individual-level intercept is exactly its own level's urn likelihood
    let bins = 20usize;
    let fine = 200usize;
    let mut log_density = vec![f64::NEG_INFINITY; bins * fine];
    for (idx, ld) in log_density.iter_mut().enumerate() {
        let x = (idx as f64 + 0.5) / (bins * fine) as f64;
        let hyper = HyperParams {
            mu_g: x,
            ..HyperParams::zeros(1)
        };
        *ld = stats.level_loglik(Level::G, &hyper, &env, &cfg)?;
    }
    let max_ld = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut target = vec![0.0f64; bins];
    for (idx, &ld) in log_density.iter().enumerate() {
        target[idx / fine] += (ld - max_ld).exp();
    }
    let total: f64 = target.iter().sum();
    for t in &mut target {
        *t /= total;
    }

    let chain_hist = |use_jacobian: bool, seed: u64| -> Result<Vec<f64>> {
        let mut hyper = HyperParams {
            mu_g: 0.5,
            mu_g0: 0.5,
            mu_h: 0.5,
            ..HyperParams::zeros(1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist = vec![0u64; bins];
        for _ in 0..1_000_000 {
            step(&mut hyper, &stats, &env, &cfg, &mut rng, use_jacobian)?;
            hist[((hyper.mu_g * bins as f64) as usize).min(bins - 1)] += 1;
        }
        Ok(hist.iter().map(|&c| c as f64 / 1e6).collect())
    };
    let tv = |a: &[f64], b: &[f64]| {
        0.5 * a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
    };
    let tv_correct = tv(&chain_hist(true, 0xC5)?, &target);
    let tv_mutant = tv(&chain_hist(false, 0xC5F)?, &target);
    let ok = tv_correct < 0.05 && tv_mutant >= 0.05;
    Ok((
        ok,
        format!("TV = {tv_correct:.4} with Jacobian (< 0.05), {tv_mutant:.4} without (must fail)"),
    ))
}

// ---------------------------------------------------------------------------
// criterion 6: any worker count yields byte-identical traces
// ---------------------------------------------------------------------------

fn worker_equivalence() -> Result<(bool, String)> {
    let (tensor, env) = generate_null(&Dims::uniform(2, 10, 6, 6, 6), 1.0, 1.0, 2.0, 0xC6)?;
    let base_cfg = RunConfig {
        m: 6,
        iterations: 100,
        burnin: 10,
        thin: 5,
        seed: 11,
        consts_g: PrecisionConsts {
            scale: 1.0,
            offset: 0.0,
        },
        consts_g0: PrecisionConsts {
            scale: 1.0,
            offset: 1.0,
        },
        consts_h: PrecisionConsts {
            scale: 1.0,
            offset: 1.0,
        },
        eps_trunc: 1e-6,
        cache_budget: 64,
        r_cov: 4,
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let mut blobs = Vec::new();
    for &workers in &[1usize, 2, 4, 8] {
        let cfg = RunConfig {
            workers,
            ..base_cfg.clone()
        };
        let mut state = ChainState::init(&tensor, &env, &cfg, cfg.seed);
        let records = run_chain(&mut state, &tensor, &env, &cfg)?;
        let path = dir.path().join(format!("workers{workers}.tsv"));
        write_trace(&path, &records)?;
        blobs.push(std::fs::read(&path).expect("read trace"));
    }
    let ok = !blobs[0].is_empty() && blobs.iter().all(|b| *b == blobs[0]);
    Ok((
        ok,
        format!(
            "workers 1/2/4/8 traces {} ({} bytes)",
            if ok { "identical" } else { "DIFFER" },
            blobs[0].len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// criterion 7: thresholds calibrated on a null chain re-test that same chain
// at the calibration point
// ---------------------------------------------------------------------------

fn null_self_calibration() -> Result<(bool, String)> {
    let (tensor, env) = generate_null(&Dims::uniform(2, 6, 8, 8, 8), 1.0, 1.0, 2.0, 0xC7)?;
    // the clustering statistics live on a 1/M grid; M = 200 keeps the mass of
    // any single grid atom small enough for the mid-p probability to sit
    // within tolerance of the calibration point
    let cfg = RunConfig {
        m: 200,
        iterations: 1300,
        burnin: 100,
        thin: 4,
        seed: 21,
        consts_g: PrecisionConsts {
            scale: 1.0,
            offset: 1.0,
        },
        consts_g0: PrecisionConsts {
            scale: 1.0,
            offset: 2.0,
        },
        consts_h: PrecisionConsts {
            scale: 1.0,
            offset: 1.0,
        },
        eps_trunc: 1e-6,
        cache_budget: 128,
        r_cov: 40,
        ..RunConfig::default()
    };
    let mut state = ChainState::init(&tensor, &env, &cfg, cfg.seed);
    let records = run_chain(&mut state, &tensor, &env, &cfg)?;
    let epsilons = epsilons_from_trace(&records, 0.55)?;
    let report = test_report(&records, &epsilons)?;
    let mut worst = 0.0f64;
    let mut worst_target = String::new();
    for outcome in &report {
        let dev = (outcome.posterior_prob - 0.55).abs();
        if dev > worst {
            worst = dev;
            worst_target = outcome.statistic.clone();
        }
    }
    let ok = worst <= 0.02;
    Ok((
        ok,
        format!(
            "{} targets, worst |P - 0.55| = {worst:.4} at {worst_target} (tolerance 0.02)",
            report.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// criterion 8: regime discrimination with thresholds from an independent
// null calibration chain
// ---------------------------------------------------------------------------

fn regime_discrimination() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let dims = Dims::uniform(2, 40, 30, 30, 10);
    let cfg8 = RunConfig {
        m: 10,
        iterations: 5000,
        burnin: 1000,
        thin: 20,
        nu1: 1.0,
        nu2: 1.0,
        consts_g: PrecisionConsts {
            scale: 1.0,
            offset: 2.0,
        },
        consts_g0: PrecisionConsts {
            scale: 1.0,
            offset: 0.0,
        },
        consts_h: PrecisionConsts {
            scale: 1.0,
            offset: 0.0,
        },
        mu_min: 0.0,
        mu_max: 0.2,
        beta_min: -0.1,
        beta_max: 0.1,
        eps_trunc: 1e-6,
        cache_budget: 256,
        r_cov: 2,
        ..RunConfig::default()
    };
    let fit = |tensor: &GenotypeTensor, env: &EnvMatrix, seed: u64| {
        let cfg = RunConfig { seed, ..cfg8.clone() };
        let mut state = ChainState::init(tensor, env, &cfg, seed);
        run_chain(&mut state, tensor, env, &cfg)
    };
    let d_star_samples = |records: &[hdpcc::runner::TraceRecord]| {
        trace_targets(records)
            .remove("d_star:-")
            .expect("trace has d_star records")
    };

    // calibration threshold from one independent null chain
    let (cal_tensor, cal_env) = generate_null(&dims, 1.0, 1.0, 2.0, 9000)?;
    let cal_records = fit(&cal_tensor, &cal_env, 999)?;
    let eps = calibrate_threshold(&d_star_samples(&cal_records), 0.85)?;

    let effects = Effects {
        genetic: 3.0,
        environmental: 1.0,
    };
    let (mut null_accepts, mut alt_rejects, mut dpl_hits) = (0, 0, 0);
    for s in 0..10u64 {
        let (tensor, env) = generate_null(&dims, 1.0, 1.0, 2.0, 9100 + s)?;
        let records = fit(&tensor, &env, 200 + s)?;
        if posterior_prob(&d_star_samples(&records), eps) > 0.5 {
            null_accepts += 1;
        }

        let ds = generate_regime(4, &dims, effects, 1.0, 1.0, 2.0, 9400 + s)?;
        let records = fit(&ds.tensor, &ds.env, 500 + s)?;
        if posterior_prob(&d_star_samples(&records), eps) <= 0.5 {
            alt_rejects += 1;
        }
        // The planted disease locus is locus 0 of gene 0; the scan succeeds
        // if that gene flags it in its top 2%.
        let distances = dpl_mean_distances(&records)?;
        if dpl_flags(&distances[0])[0] {
            dpl_hits += 1;
        }
    }
    let elapsed = t0.elapsed();
    let ok = null_accepts >= 8
        && alt_rejects >= 8
        && dpl_hits >= 7
        && elapsed < Duration::from_secs(7200);
    Ok((
        ok,
        format!(
            "null accepts {null_accepts}/10 (>= 8), planted-effect rejects {alt_rejects}/10 (>= 8), \
             locus flagged {dpl_hits}/10 (>= 7), {:.0}s (< 2h)",
            elapsed.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------
// criterion 9: covariance estimator on perfectly correlated and independent
// replicate stubs
// ---------------------------------------------------------------------------

fn covariance_sanity() -> Result<(bool, String)> {
    let r = 1000usize;
    let shared = |rep: u32| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC9_0000 + rep as u64);
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    };
    let mut xy = |rep: u32| -> Result<(f64, f64)> {
        let v = shared(rep);
        Ok((v, 0.7 * v))
    };
    let mut xx = |rep: u32| -> Result<(f64, f64)> {
        let v = shared(rep);
        Ok((v, v))
    };
    let mut yy = |rep: u32| -> Result<(f64, f64)> {
        let v = shared(rep);
        Ok((0.7 * v, 0.7 * v))
    };
    let c_xy = interaction_covariance(&mut xy, r)?;
    let c_xx = interaction_covariance(&mut xx, r)?;
    let c_yy = interaction_covariance(&mut yy, r)?;
    let corr = c_xy.value / (c_xx.value * c_yy.value).sqrt();

    let mut indep = |rep: u32| -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC9_F000 + rep as u64);
        let x: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let y: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        Ok((x, y))
    };
    let c_ind = interaction_covariance(&mut indep, r)?;
    let bound = 3.0 / (r as f64).sqrt();
    let ok = (corr - 1.0).abs() < 0.05
        && !c_xy.degenerate
        && c_ind.value.abs() < bound
        && !c_ind.degenerate;
    Ok((
        ok,
        format!(
            "correlated stub corr = {corr:.4} (|corr-1| < 0.05), independent stub cov = {:.4} (< {bound:.4})",
            c_ind.value
        ),
    ))
}

// ---------------------------------------------------------------------------
// criterion 10: the registry recount audit holds after every sweep
// ---------------------------------------------------------------------------

fn state_audit() -> Result<(bool, String)> {
    let (tensor, env) = generate_null(&Dims::uniform(2, 5, 4, 4, 4), 1.0, 1.0, 2.0, 0xCA)?;
    let cfg = RunConfig {
        m: 5,
        iterations: 1001,
        burnin: 1,
        consts_g: PrecisionConsts {
            scale: 1.0,
            offset: 0.0,
        },
        consts_g0: PrecisionConsts {
            scale: 1.0,
            offset: 1.0,
        },
        consts_h: PrecisionConsts {
            scale: 1.0,
            offset: 1.0,
        },
        eps_trunc: 1e-6,
        ..RunConfig::default()
    };
    let mut state = ChainState::init(&tensor, &env, &cfg, 0xCA);
    for _ in 0..1000 {
        sweep_serial(&mut state, &tensor, &env, &cfg)?;
        state.audit(&tensor, cfg.m)?;
    }
    Ok((true, "1000 sweeps, zero audit violations".into()))
}
