//! Synthetic dataset generation: the independent-genes null model and five
//! structured regimes with known ground truth.
//!
//! Each regime plants its effects through the model's own building blocks —
//! Polya-urn row pools restructured into distinct haplotype classes around a
//! gene's head block, optional row sharing across genes, covariate-tilted
//! row selection, and per-locus probability shifts — so every dataset comes
//! with a descriptor of which hypotheses a correct analysis should reject.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::data::{EnvMatrix, GenotypeTensor};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamKey};
use crate::urns::{polya_step, PolyaDraw};

/// Shape of a generated dataset.
#[derive(Debug, Clone)]
pub struct Dims {
    pub n_genes: usize,
    /// Observed locus count per gene.
    pub loci: Vec<usize>,
    pub n0: usize,
    pub n1: usize,
    /// Mixture rows per triplet.
    pub m: usize,
}

impl Dims {
    pub fn uniform(n_genes: usize, loci: usize, n0: usize, n1: usize, m: usize) -> Dims {
        Dims {
            n_genes,
            loci: vec![loci; n_genes],
            n0,
            n1,
            m,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_genes == 0
            || self.loci.len() != self.n_genes
            || self.loci.contains(&0)
            || self.n0 == 0
            || self.n1 == 0
            || self.m == 0
        {
            return Err(Error::Validation(
                "dataset dims must be positive with one locus count per gene".into(),
            ));
        }
        Ok(())
    }
}

/// Effect magnitudes injected by the structured regimes. `genetic` is the
/// case-group probability shift planted at the target locus;
/// `environmental` scales the covariate's influence on case status or row
/// selection.
#[derive(Debug, Clone, Copy)]
pub struct Effects {
    pub genetic: f64,
    pub environmental: f64,
}

impl Default for Effects {
    fn default() -> Self {
        Effects {
            genetic: 0.45,
            environmental: 1.0,
        }
    }
}

/// Ground-truth descriptor: which test targets a correct analysis should
/// reject on this dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub entries: Vec<(String, bool)>,
}

impl Truth {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,should_reject\n");
        for (target, reject) in &self.entries {
            out.push_str(&format!("{},{}\n", target, u8::from(*reject)));
        }
        out
    }

    pub fn should_reject(&self, target: &str) -> Option<bool> {
        self.entries
            .iter()
            .find(|(t, _)| t == target)
            .map(|(_, r)| *r)
    }
}

/// A generated dataset together with its ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tensor: GenotypeTensor,
    pub env: EnvMatrix,
    pub truth: Truth,
}

fn base_row(rng: &mut impl Rng, l: usize, nu1: f64, nu2: f64) -> Result<Vec<f64>> {
    let beta = Beta::new(nu1, nu2)
        .map_err(|e| Error::Validation(format!("invalid Beta base parameters: {e}")))?;
    Ok((0..l).map(|_| beta.sample(rng)).collect())
}

/// M-row pool for one gene drawn by the Polya urn over the Beta product base.
fn polya_pool(
    rng: &mut impl Rng,
    m: usize,
    l: usize,
    alpha_h: f64,
    nu1: f64,
    nu2: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut pool: Vec<Vec<f64>> = Vec::with_capacity(m);
    for step in 1..=m {
        let draw = polya_step(step, alpha_h, rng.gen());
        let row = match draw {
            PolyaDraw::Fresh => base_row(rng, l, nu1, nu2)?,
            PolyaDraw::Copy(prev) => pool[prev].clone(),
        };
        pool.push(row);
    }
    Ok(pool)
}

fn pools_per_gene(
    rng: &mut impl Rng,
    dims: &Dims,
    alpha_h: f64,
    nu1: f64,
    nu2: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    dims.loci
        .iter()
        .map(|&l| polya_pool(rng, dims.m, l, alpha_h, nu1, nu2))
        .collect()
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}

fn gene_ids(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("g{j:03}")).collect()
}

fn bernoulli_pair(rng: &mut impl Rng, p: f64) -> (u8, u8) {
    (
        u8::from(rng.gen::<f64>() < p),
        u8::from(rng.gen::<f64>() < p),
    )
}

/// How an individual's mixture rows are selected across genes.
enum RowSelection {
    /// Independent uniform row per gene.
    Independent,
    /// One shared row index across all genes (gene-gene dependence),
    /// optionally tilted towards high indices by the covariate.
    Shared { env_tilt: f64 },
}

fn pick_row(rng: &mut impl Rng, m: usize, tilt: f64) -> usize {
    if tilt == 0.0 {
        return rng.gen_range(0..m);
    }
    let weights: Vec<f64> = (0..m)
        .map(|r| (tilt * (r as f64 + 0.5) / m as f64).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (r, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return r;
        }
    }
    m - 1
}

fn sample_individual(
    rng: &mut impl Rng,
    dims: &Dims,
    pools: &[Vec<Vec<f64>>],
    selection: &RowSelection,
    e: f64,
) -> Vec<Vec<(u8, u8)>> {
    let shared = match selection {
        RowSelection::Independent => None,
        RowSelection::Shared { env_tilt } => Some(pick_row(rng, dims.m, env_tilt * e)),
    };
    (0..dims.n_genes)
        .map(|j| {
            let z = shared.unwrap_or_else(|| rng.gen_range(0..dims.m));
            pools[j][z]
                .iter()
                .map(|&p| bernoulli_pair(rng, p))
                .collect()
        })
        .collect()
}

fn standard_normal_env(rng: &mut impl Rng, n0: usize, n1: usize, shift1: f64) -> Vec<Vec<Vec<f64>>> {
    let mut groups = Vec::with_capacity(2);
    for (n, shift) in [(n0, 0.0), (n1, shift1)] {
        groups.push(
            (0..n)
                .map(|_| vec![shift + rng.sample::<f64, _>(StandardNormal)])
                .collect(),
        );
    }
    groups
}

fn build_tensor(
    dims: &Dims,
    rows: [Vec<Vec<Vec<(u8, u8)>>>; 2],
) -> Result<GenotypeTensor> {
    GenotypeTensor::from_parts(
        gene_ids(dims.n_genes),
        dims.loci.clone(),
        [ids("ctrl", dims.n0), ids("case", dims.n1)],
        rows,
    )
}

/// Null model: per gene a stratified row pool (urn-drawn background, head
/// block carrying the class structure) shared verbatim by cases and
/// controls, uniform row selection, genotypes from the Bernoulli model, and
/// covariates standard normal independent of everything.
pub fn generate_null(
    dims: &Dims,
    nu1: f64,
    nu2: f64,
    alpha_h: f64,
    seed: u64,
) -> Result<(GenotypeTensor, EnvMatrix)> {
    dims.validate()?;
    let mut pool_rng = stream(seed, StreamKey::Simgen { part: 0 });
    let mut pools = pools_per_gene(&mut pool_rng, dims, alpha_h, nu1, nu2)?;
    for pool in pools.iter_mut() {
        stratify_pool(pool);
    }

    let mut env_rng = stream(seed, StreamKey::Simgen { part: 2 });
    let env_rows = standard_normal_env(&mut env_rng, dims.n0, dims.n1, 0.0);

    let mut geno_rng = stream(seed, StreamKey::Simgen { part: 3 });
    let mut rows: [Vec<Vec<Vec<(u8, u8)>>>; 2] = [Vec::new(), Vec::new()];
    for (k, n) in [dims.n0, dims.n1].into_iter().enumerate() {
        for _ in 0..n {
            rows[k].push(sample_individual(
                &mut geno_rng,
                dims,
                &pools,
                &RowSelection::Independent,
                0.0,
            ));
        }
    }
    Ok((build_tensor(dims, rows)?, EnvMatrix::from_rows(env_rows)?))
}

fn truth(entries: &[(&str, bool)]) -> Truth {
    Truth {
        entries: entries
            .iter()
            .map(|&(t, r)| (t.to_string(), r))
            .collect(),
    }
}

/// Loci 1..=HAPLOTYPE_BITS carry each pool row's binary haplotype signature.
const HAPLOTYPE_BITS: usize = 4;

/// Number of loci behind the risk locus over which the planted effect
/// spreads the case haplotype signatures.
const SIGNATURE_LOCI: usize = 12;

/// Plant the disease locus in the first gene: every pool row in both
/// groups is flattened to allele frequency one half (no haplotype
/// structure), except locus 0 where the control frequency stays at the
/// rare baseline 0.03 and the case frequency is shifted up. The gene thus
/// carries a single clean frequency contrast and nothing else.
fn plant_risk_locus(control_pool: &mut [Vec<f64>], case_pool: &mut [Vec<f64>], shift: f64) {
    for (pool, p0) in [
        (control_pool, 0.03),
        (case_pool, (0.03 + shift).clamp(0.01, 0.99)),
    ] {
        for row in pool.iter_mut() {
            row.fill(0.5);
            row[0] = p0;
        }
    }
}

/// Sharpen a case pool's weak haplotype signatures to near-fixation across
/// SIGNATURE_LOCI loci (the 4-bit row signature tiled), so case haplotype
/// classes become sharply distinguishable from each other while the
/// controls' classes stay weakly separated.
fn sharpen_classes(pool: &mut [Vec<f64>]) {
    for (i, row) in pool.iter_mut().enumerate() {
        let sig = SIGNATURE_LOCI.min(row.len().saturating_sub(1));
        for b in 0..sig {
            row[1 + b] = if (i >> (b % HAPLOTYPE_BITS)) & 1 == 1 {
                0.97
            } else {
                0.03
            };
        }
    }
}

/// Concentrate a gene pool's diversity in its head block: every row shares
/// the first row's background polarized to near-fixation (0.03/0.97 by
/// whether the urn draw fell below or above one half), locus 0 (the
/// candidate risk locus) sits at allele frequency 0.03 on all rows, and
/// loci 1..=HAPLOTYPE_BITS spell the row index in binary with mild
/// frequencies 0.40/0.60. Rows thus form weakly separated haplotype
/// classes over an otherwise near-deterministic shared haplotype.
fn stratify_pool(pool: &mut [Vec<f64>]) {
    let background: Vec<f64> = pool[0]
        .iter()
        .map(|&p| if p > 0.5 { 0.97 } else { 0.03 })
        .collect();
    for (i, row) in pool.iter_mut().enumerate() {
        row.copy_from_slice(&background);
        row[0] = 0.03;
        for b in 0..HAPLOTYPE_BITS.min(row.len().saturating_sub(1)) {
            row[1 + b] = if (i >> b) & 1 == 1 { 0.60 } else { 0.40 };
        }
    }
}

/// Structured regimes:
/// 1. gene-gene and gene-environment interaction: shared rows across genes,
///    covariate-tilted row selection, a planted risk locus with shifted case
///    frequencies in the first gene, and sharpened case haplotype classes in
///    the remaining genes;
/// 2. the null model;
/// 3. environment drives case status only: genotypes null, case covariates
///    mean-shifted;
/// 4. genetic and gene-gene effects with environment decoupled: shared rows
///    plus the planted risk locus and sharpened case classes as in regime 1,
///    covariates standard normal;
/// 5. independent additive genetic and environmental scores thresholded
///    into the case label.
pub fn generate_regime(
    regime: u8,
    dims: &Dims,
    effects: Effects,
    nu1: f64,
    nu2: f64,
    alpha_h: f64,
    seed: u64,
) -> Result<Dataset> {
    dims.validate()?;
    let genetic_on = effects.genetic != 0.0;
    let env_on = effects.environmental != 0.0;
    match regime {
        2 => {
            let (tensor, env) = generate_null(dims, nu1, nu2, alpha_h, seed)?;
            return Ok(Dataset {
                tensor,
                env,
                truth: truth(&[
                    ("d_star", false),
                    ("d_star_e", false),
                    ("cov", false),
                    ("env", false),
                    ("dpl", false),
                ]),
            });
        }
        1 | 3 | 4 | 5 => {}
        other => {
            return Err(Error::Validation(format!(
                "unknown simulation regime {other}: expected 1..=5"
            )))
        }
    }

    let mut pool_rng = stream(seed, StreamKey::Simgen { part: 0 });
    let mut control_pools = pools_per_gene(&mut pool_rng, dims, alpha_h, nu1, nu2)?;
    for pool in control_pools.iter_mut() {
        stratify_pool(pool);
    }
    let mut case_pools = control_pools.clone();

    let mut env_rng = stream(seed, StreamKey::Simgen { part: 2 });
    let mut geno_rng = stream(seed, StreamKey::Simgen { part: 3 });

    match regime {
        1 | 4 => {
            // the planted effect splits across genes: the first gene carries
            // a single clean allele-frequency contrast at locus 0 (the
            // disease locus) on an otherwise structureless background, and
            // the remaining genes carry sharpened case haplotype classes, so
            // the two groups differ in frequency at the planted locus and in
            // clustering structure elsewhere
            if genetic_on {
                plant_risk_locus(&mut control_pools[0], &mut case_pools[0], effects.genetic);
                for pool in case_pools.iter_mut().skip(1) {
                    sharpen_classes(pool);
                }
            }
            let tilt = if regime == 1 { effects.environmental } else { 0.0 };
            let env_rows = standard_normal_env(&mut env_rng, dims.n0, dims.n1, 0.0);
            let mut rows: [Vec<Vec<Vec<(u8, u8)>>>; 2] = [Vec::new(), Vec::new()];
            for (k, (n, pools)) in [(dims.n0, &control_pools), (dims.n1, &case_pools)]
                .into_iter()
                .enumerate()
            {
                for i in 0..n {
                    let e = env_rows[k][i][0];
                    rows[k].push(sample_individual(
                        &mut geno_rng,
                        dims,
                        pools,
                        &RowSelection::Shared { env_tilt: tilt },
                        e,
                    ));
                }
            }
            let coupled = regime == 1 && env_on;
            Ok(Dataset {
                tensor: build_tensor(dims, rows)?,
                env: EnvMatrix::from_rows(env_rows)?,
                truth: truth(&[
                    ("d_star", genetic_on),
                    ("d_star_e", genetic_on),
                    ("cov", genetic_on),
                    ("env", coupled),
                    ("dpl", genetic_on),
                ]),
            })
        }
        3 => {
            let env_rows =
                standard_normal_env(&mut env_rng, dims.n0, dims.n1, effects.environmental);
            let mut rows: [Vec<Vec<Vec<(u8, u8)>>>; 2] = [Vec::new(), Vec::new()];
            for (k, n) in [dims.n0, dims.n1].into_iter().enumerate() {
                for _ in 0..n {
                    rows[k].push(sample_individual(
                        &mut geno_rng,
                        dims,
                        &control_pools,
                        &RowSelection::Independent,
                        0.0,
                    ));
                }
            }
            Ok(Dataset {
                tensor: build_tensor(dims, rows)?,
                env: EnvMatrix::from_rows(env_rows)?,
                truth: truth(&[
                    ("d_star", false),
                    ("d_star_e", false),
                    ("cov", false),
                    ("env", env_on),
                    ("dpl", false),
                ]),
            })
        }
        5 => {
            // accept/reject candidates until both quotas are filled; the
            // label is a threshold on independent additive scores
            let mut label_rng = stream(seed, StreamKey::Simgen { part: 4 });
            let mut groups: [Vec<(Vec<Vec<(u8, u8)>>, f64)>; 2] = [Vec::new(), Vec::new()];
            let quota = [dims.n0, dims.n1];
            let mut attempts = 0u64;
            while groups[0].len() < quota[0] || groups[1].len() < quota[1] {
                attempts += 1;
                if attempts > 1000 * (dims.n0 + dims.n1) as u64 {
                    return Err(Error::Numeric(
                        "regime 5 threshold produced too few individuals of one label".into(),
                    ));
                }
                let e: f64 = env_rng.sample(StandardNormal);
                let geno = sample_individual(
                    &mut geno_rng,
                    dims,
                    &control_pools,
                    &RowSelection::Independent,
                    0.0,
                );
                // gene 0's diversity lives in its head block, so the
                // additive genetic score counts risk alleles there
                let block = (HAPLOTYPE_BITS + 1).min(dims.loci[0]);
                let alleles: f64 = geno[0][..block]
                    .iter()
                    .map(|&(a, b)| (a + b) as f64)
                    .sum::<f64>();
                let g_score = alleles / (2.0 * block as f64) - 0.35;
                let noise: f64 = label_rng.sample(StandardNormal);
                let score =
                    4.0 * effects.genetic * g_score + effects.environmental * e + 0.5 * noise;
                let k = usize::from(score > 0.0);
                if groups[k].len() < quota[k] {
                    groups[k].push((geno, e));
                }
            }
            let [g0, g1] = groups;
            let mut rows: [Vec<Vec<Vec<(u8, u8)>>>; 2] = [Vec::new(), Vec::new()];
            let mut env_rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(), Vec::new()];
            for (k, group) in [g0, g1].into_iter().enumerate() {
                for (geno, e) in group {
                    rows[k].push(geno);
                    env_rows[k].push(vec![e]);
                }
            }
            Ok(Dataset {
                tensor: build_tensor(dims, rows)?,
                env: EnvMatrix::from_rows(env_rows)?,
                truth: truth(&[
                    ("d_star", genetic_on),
                    ("d_star_e", genetic_on),
                    ("cov", false),
                    ("env", env_on),
                    ("dpl", genetic_on),
                ]),
            })
        }
        _ => unreachable!(),
    }
}
