//! Test statistics and calibrated Bayesian tests: clustering distances,
//! central clusterings, Euclidean logit distances, interaction covariances,
//! threshold calibration on null chains, and per-locus scans.
//!
//! Everything here is pure post-processing over chain states or recorded
//! samples; all randomness is injected by the caller.

use std::collections::HashMap;
use std::sync::Arc;

use crate::atom::Atom;
use crate::data::GenotypeTensor;
use crate::error::{Error, Result};
use crate::state::{ChainState, TripletState};

/// A clustering of M items, as induced by the mixture-component values the
/// triplet's rows hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
}

impl Partition {
    /// Rows belong to the same cluster exactly when they share a component
    /// value; how many serving tables hold that value is urn bookkeeping,
    /// not part of the mixture clustering.
    pub fn from_triplet(t: &TripletState) -> Partition {
        let mut reps: Vec<&Arc<Atom>> = Vec::new();
        let labels = t
            .labels
            .iter()
            .map(|&lab| {
                let atom = &t.dishes[lab].atom;
                match reps
                    .iter()
                    .position(|r| Arc::ptr_eq(r, atom) || r.p == atom.p)
                {
                    Some(c) => c,
                    None => {
                        reps.push(atom);
                        reps.len() - 1
                    }
                }
            })
            .collect();
        Partition { labels }
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }
}

/// One-directional divergence: 1 − (Σ_i max_j n_ij)/n over the contingency
/// table of cluster overlaps.
fn d_bar(a: &Partition, b: &Partition) -> f64 {
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        *table.entry(la).or_default().entry(lb).or_default() += 1;
    }
    let matched: usize = table
        .values()
        .map(|row| row.values().copied().max().unwrap_or(0))
        .sum();
    1.0 - matched as f64 / a.labels.len() as f64
}

/// Clustering divergence d̂ = max of the two directional divergences.
/// Symmetric, in [0,1], and 0 exactly when the partitions agree up to
/// relabeling.
pub fn cluster_distance(a: &Partition, b: &Partition) -> Result<f64> {
    if a.n_items() != b.n_items() {
        return Err(Error::Shape(format!(
            "partitions over {} vs {} items",
            a.n_items(),
            b.n_items()
        )));
    }
    if a.n_items() == 0 {
        return Err(Error::Shape("empty partitions".into()));
    }
    Ok(d_bar(a, b).max(d_bar(b, a)))
}

/// Index of the approximately central clustering: the one whose
/// ε-neighborhood contains the most of the given clusterings (itself
/// included). Ties break to the smallest index.
pub fn central_index(parts: &[Partition], eps_c: f64) -> usize {
    let n = parts.len();
    let mut best = 0usize;
    let mut best_count = 0usize;
    for l in 0..n {
        let count = (0..n)
            .filter(|&o| cluster_distance(&parts[l], &parts[o]).unwrap() < eps_c)
            .count();
        if count > best_count {
            best = l;
            best_count = count;
        }
    }
    best
}

/// Linear-interpolation empirical quantile of sorted samples.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// logit(p̄_m) per row, where p̄_m averages the row's allele probabilities
/// over the observed loci.
pub fn logit_pbar(t: &TripletState, l_j: usize) -> Vec<f64> {
    (0..t.labels.len())
        .map(|m| {
            let p = &t.row(m).p;
            let pbar = p[..l_j].iter().sum::<f64>() / l_j as f64;
            logit(pbar)
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-sweep genetic test statistics.
#[derive(Debug, Clone)]
pub struct SweepStats {
    /// Central individual per gene and group.
    pub central: Vec<[usize; 2]>,
    /// Clustering divergence between the central case and control per gene.
    pub d_hat: Vec<f64>,
    /// Euclidean logit distance between the central case and control per gene.
    pub d_e: Vec<f64>,
    pub d_star: f64,
    pub d_star_e: f64,
}

/// Neighborhood radius for the central clustering: the 10th percentile of
/// this sweep's pairwise distances (0 when there are no pairs).
fn central_radius(parts: &[Partition]) -> f64 {
    let n = parts.len();
    let mut dists = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            dists.push(cluster_distance(&parts[a], &parts[b]).unwrap());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    quantile(&dists, 0.1)
}

/// Compute the per-gene statistics of one chain state: central individuals
/// per (gene, group), clustering and Euclidean distances per gene, and their
/// maxima d* and d*_E.
pub fn gene_statistics(state: &ChainState, tensor: &GenotypeTensor) -> Result<SweepStats> {
    let n_genes = tensor.n_genes();
    let mut central = Vec::with_capacity(n_genes);
    let mut d_hat = Vec::with_capacity(n_genes);
    let mut d_e = Vec::with_capacity(n_genes);
    for j in 0..n_genes {
        let mut idx = [0usize; 2];
        for k in 0..2 {
            let parts: Vec<Partition> = (0..tensor.n_k(k))
                .map(|i| Partition::from_triplet(state.triplet(k, i, j)))
                .collect();
            let eps_c = central_radius(&parts);
            idx[k] = central_index(&parts, eps_c);
        }
        let t0 = state.triplet(0, idx[0], j);
        let t1 = state.triplet(1, idx[1], j);
        d_hat.push(cluster_distance(
            &Partition::from_triplet(t0),
            &Partition::from_triplet(t1),
        )?);
        let l_j = tensor.l_j(j);
        d_e.push(euclid(&logit_pbar(t0, l_j), &logit_pbar(t1, l_j)));
        central.push(idx);
    }
    let d_star = d_hat.iter().cloned().fold(0.0, f64::max);
    let d_star_e = d_e.iter().cloned().fold(0.0, f64::max);
    Ok(SweepStats {
        central,
        d_hat,
        d_e,
        d_star,
        d_star_e,
    })
}

/// Per-locus Euclidean distances between the logit allele-probability
/// M-vectors at the central case and control individuals: one vector of
/// length L_j per gene.
pub fn locus_distances(
    state: &ChainState,
    tensor: &GenotypeTensor,
    central: &[[usize; 2]],
) -> Vec<Vec<f64>> {
    (0..tensor.n_genes())
        .map(|j| {
            let t0 = state.triplet(0, central[j][0], j);
            let t1 = state.triplet(1, central[j][1], j);
            let m = t0.labels.len();
            (0..tensor.l_j(j))
                .map(|r| {
                    let v0: Vec<f64> = (0..m).map(|mm| logit(t0.row(mm).p[r])).collect();
                    let v1: Vec<f64> = (0..m).map(|mm| logit(t1.row(mm).p[r])).collect();
                    euclid(&v0, &v1)
                })
                .collect()
        })
        .collect()
}

/// An interaction covariance estimate; `degenerate` marks zero variance in
/// both coordinates across replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovEstimate {
    pub value: f64,
    pub degenerate: bool,
}

/// Empirical covariance of paired replicate draws. The sampler is injected:
/// replicate `rep` must return the two coordinates (logit mean allele
/// probabilities of the allocated rows of the two genes).
pub fn interaction_covariance(
    sampler: &mut dyn FnMut(u32) -> Result<(f64, f64)>,
    r_cov: usize,
) -> Result<CovEstimate> {
    if r_cov < 2 {
        return Err(Error::Validation(format!(
            "interaction covariance needs at least 2 replicates, got {r_cov}"
        )));
    }
    let mut xs = Vec::with_capacity(r_cov);
    let mut ys = Vec::with_capacity(r_cov);
    for rep in 0..r_cov {
        let (x, y) = sampler(rep as u32)?;
        xs.push(x);
        ys.push(y);
    }
    let n = r_cov as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let var_x: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / (n - 1.0);
    let var_y: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / (n - 1.0);
    if var_x == 0.0 && var_y == 0.0 {
        return Ok(CovEstimate {
            value: 0.0,
            degenerate: true,
        });
    }
    let cov = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1.0);
    Ok(CovEstimate {
        value: cov,
        degenerate: false,
    })
}

/// Empirical q-quantile threshold from null-chain posterior samples.
pub fn calibrate_threshold(samples: &[f64], q: f64) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::CalibrationInsufficiency {
            required: 100,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(quantile(&sorted, q))
}

/// Posterior probability of the null event {statistic < ε}, with ties at ε
/// counted half.
pub fn posterior_prob(samples: &[f64], eps: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let below = samples.iter().filter(|&&s| s < eps).count() as f64;
    let at = samples.iter().filter(|&&s| s == eps).count() as f64;
    (below + 0.5 * at) / samples.len() as f64
}

/// One tested hypothesis with its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub hypothesis: String,
    pub statistic: String,
    pub epsilon: f64,
    pub posterior_prob: f64,
    /// Null accepted iff the posterior probability exceeds 1/2.
    pub verdict: bool,
}

pub fn test_hypothesis(
    hypothesis: &str,
    statistic: &str,
    samples: &[f64],
    eps: f64,
) -> TestOutcome {
    let p = posterior_prob(samples, eps);
    TestOutcome {
        hypothesis: hypothesis.to_string(),
        statistic: statistic.to_string(),
        epsilon: eps,
        posterior_prob: p,
        verdict: p > 0.5,
    }
}

/// CSV body of a test report.
pub fn report_csv(outcomes: &[TestOutcome]) -> String {
    let mut out = String::from("hypothesis,statistic,epsilon,posterior_prob,verdict\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            o.hypothesis,
            o.statistic,
            o.epsilon,
            o.posterior_prob,
            if o.verdict { "accept" } else { "reject" }
        ));
    }
    out
}

/// Flags for a gene's per-locus distances: true at or above the gene's 98th
/// percentile.
pub fn dpl_flags(distances: &[f64]) -> Vec<bool> {
    if distances.is_empty() {
        return Vec::new();
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cutoff = quantile(&sorted, 0.98);
    distances.iter().map(|&d| d >= cutoff).collect()
}

/// CSV body of a per-locus scan.
pub fn dpl_csv(genes: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("gene_id,locus_index,distance,flag\n");
    for (gene, distances) in genes {
        let flags = dpl_flags(distances);
        for (r, (&d, &f)) in distances.iter().zip(&flags).enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                gene,
                r + 1,
                d,
                if f { 1 } else { 0 }
            ));
        }
    }
    out
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value
/// (Stephens' small-sample correction of the Kolmogorov series).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs non-empty samples");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        let t = x.min(y);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n as f64 * m as f64 / (n + m) as f64).sqrt();
    let lambda = (n_eff + 0.12 + 0.11 / n_eff) * d;
    if lambda < 1e-3 {
        return (d, 1.0); // the alternating series only converges for λ > 0
    }
    let mut p = 0.0;
    for k in 1..=100u32 {
        let term = 2.0 * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += if k % 2 == 1 { term } else { -term };
    }
    (d, p.clamp(0.0, 1.0))
}
