//! Genotype and environment ingestion.
//!
//! Genotype files are flat TSV with header `#hdpcc-geno v1` and rows
//! `individual_id  group(0|1)  gene_id  locus_index(1-based)  allele1  allele2`.
//! Environment files are CSV with header `individual_id,group,e1,...,ed`.
//!
//! Individuals and genes are ordered lexicographically by their declared IDs
//! so downstream indices are reproducible. Loading is single-threaded and the
//! resulting structures are immutable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

pub const GENO_HEADER: &str = "#hdpcc-geno v1";

/// Observed case-control genotype data, padded to a common locus count `L`.
///
/// Only observed loci (r < L_j, 0-based) are stored; padded loci exist solely
/// as imputed values in the chain state and never contribute observed
/// likelihood terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeTensor {
    /// Gene IDs, lexicographic.
    pub genes: Vec<String>,
    /// Observed locus count per gene.
    pub loci_per_gene: Vec<usize>,
    /// Individual IDs per group, lexicographic; k = 0 control, k = 1 case.
    pub individuals: [Vec<String>; 2],
    /// rows[k][i][j] = observed allele pairs of length loci_per_gene[j].
    rows: [Vec<Vec<Vec<(u8, u8)>>>; 2],
}

impl GenotypeTensor {
    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_k(&self, k: usize) -> usize {
        self.individuals[k].len()
    }

    pub fn n_total(&self) -> usize {
        self.n_k(0) + self.n_k(1)
    }

    /// L = max_j L_j.
    pub fn l_max(&self) -> usize {
        self.loci_per_gene.iter().copied().max().unwrap_or(0)
    }

    pub fn l_j(&self, j: usize) -> usize {
        self.loci_per_gene[j]
    }

    /// Observed allele pairs for triplet (i, j, k).
    pub fn observed(&self, k: usize, i: usize, j: usize) -> &[(u8, u8)] {
        &self.rows[k][i][j]
    }

    /// Whether locus r (0-based, r < L) is observed for gene j.
    pub fn is_observed(&self, j: usize, r: usize) -> bool {
        r < self.loci_per_gene[j]
    }

    /// Triplets in canonical (k, i, j) order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..2).flat_map(move |k| {
            (0..self.n_k(k)).flat_map(move |i| (0..self.n_genes()).map(move |j| (k, i, j)))
        })
    }

    pub fn n_triplets(&self) -> usize {
        self.n_total() * self.n_genes()
    }

    /// Build directly from in-memory rows; validates shapes.
    pub fn from_parts(
        genes: Vec<String>,
        loci_per_gene: Vec<usize>,
        individuals: [Vec<String>; 2],
        rows: [Vec<Vec<Vec<(u8, u8)>>>; 2],
    ) -> Result<Self> {
        let t = GenotypeTensor {
            genes,
            loci_per_gene,
            individuals,
            rows,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.genes.len() != self.loci_per_gene.len() {
            return Err(Error::Shape("gene list and locus counts disagree".into()));
        }
        if self.loci_per_gene.contains(&0) {
            return Err(Error::Shape("every gene needs at least one locus".into()));
        }
        for k in 0..2 {
            if self.rows[k].len() != self.individuals[k].len() {
                return Err(Error::Shape(format!("group {k}: row/individual count mismatch")));
            }
            for (i, per_gene) in self.rows[k].iter().enumerate() {
                if per_gene.len() != self.genes.len() {
                    return Err(Error::Shape(format!(
                        "individual {} of group {k} has {} genes, expected {}",
                        self.individuals[k][i],
                        per_gene.len(),
                        self.genes.len()
                    )));
                }
                for (j, loci) in per_gene.iter().enumerate() {
                    if loci.len() != self.loci_per_gene[j] {
                        return Err(Error::Completeness(format!(
                            "individual {} group {k} gene {} has {} loci, expected {}",
                            self.individuals[k][i],
                            self.genes[j],
                            loci.len(),
                            self.loci_per_gene[j]
                        )));
                    }
                    if loci.iter().any(|&(a, b)| a > 1 || b > 1) {
                        return Err(Error::Domain("allele outside {0,1}".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize in the genotype TSV format (used by simgen).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(GENO_HEADER);
        out.push('\n');
        for k in 0..2 {
            for i in 0..self.n_k(k) {
                for j in 0..self.n_genes() {
                    for (r, &(a1, a2)) in self.rows[k][i][j].iter().enumerate() {
                        writeln!(
                            out,
                            "{}\t{k}\t{}\t{}\t{a1}\t{a2}",
                            self.individuals[k][i],
                            self.genes[j],
                            r + 1
                        )
                        .unwrap();
                    }
                }
            }
        }
        out
    }
}

fn parse_allele(tok: &str, line: usize) -> Result<u8> {
    match tok {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Domain(format!(
            "line {line}: allele value {tok} outside {{0,1}}"
        ))),
    }
}

/// Parse genotype data from any reader (see [`load_genotypes`]).
pub fn parse_genotypes<R: Read>(reader: R) -> Result<GenotypeTensor> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::io("<genotype stream>", e)),
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    };
    if header.trim_end() != GENO_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {GENO_HEADER:?}, got {header:?}"),
        });
    }

    // (k, individual, gene) -> locus -> pair
    type Key = (u8, String, String);
    let mut cells: BTreeMap<Key, BTreeMap<usize, (u8, u8)>> = BTreeMap::new();
    let mut gene_loci: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io("<genotype stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let group: u8 = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("group must be 0 or 1, got {other}"),
                })
            }
        };
        let locus: usize = fields[3].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad locus index {:?}", fields[3]),
        })?;
        if locus == 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: "locus index is 1-based".into(),
            });
        }
        let a1 = parse_allele(fields[4], lineno)?;
        let a2 = parse_allele(fields[5], lineno)?;

        let key = (group, fields[0].to_string(), fields[2].to_string());
        let per_locus = cells.entry(key).or_default();
        if per_locus.insert(locus, (a1, a2)).is_some() {
            return Err(Error::Conflict(format!(
                "line {lineno}: duplicate entry for individual {} gene {} locus {locus}",
                fields[0], fields[2]
            )));
        }
        let l = gene_loci.entry(fields[2].to_string()).or_insert(0);
        *l = (*l).max(locus);
    }

    if cells.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no genotype rows".into(),
        });
    }

    let genes: Vec<String> = gene_loci.keys().cloned().collect();
    let loci_per_gene: Vec<usize> = genes.iter().map(|g| gene_loci[g]).collect();

    let mut individuals: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (k, id, _) in cells.keys() {
        let list = &mut individuals[*k as usize];
        if list.last().map(|s| s.as_str()) != Some(id.as_str()) && !list.contains(id) {
            list.push(id.clone());
        }
    }
    for list in &mut individuals {
        list.sort();
    }
    // same individual cannot sit in both groups
    for id in &individuals[0] {
        if individuals[1].contains(id) {
            return Err(Error::Conflict(format!(
                "individual {id} appears in both groups"
            )));
        }
    }

    let mut rows: [Vec<Vec<Vec<(u8, u8)>>>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2u8 {
        for id in &individuals[k as usize] {
            let mut per_gene = Vec::with_capacity(genes.len());
            for (j, gene) in genes.iter().enumerate() {
                let per_locus = cells.get(&(k, id.clone(), gene.clone())).ok_or_else(|| {
                    Error::Completeness(format!(
                        "individual {id} group {k} has no data for gene {gene}"
                    ))
                })?;
                let lj = loci_per_gene[j];
                let mut loci = Vec::with_capacity(lj);
                for r in 1..=lj {
                    let pair = per_locus.get(&r).ok_or_else(|| {
                        Error::Completeness(format!(
                            "individual {id} group {k} gene {gene} missing locus {r}"
                        ))
                    })?;
                    loci.push(*pair);
                }
                if per_locus.len() != lj {
                    return Err(Error::Conflict(format!(
                        "individual {id} group {k} gene {gene} has extra loci beyond {lj}"
                    )));
                }
                per_gene.push(loci);
            }
            rows[k as usize].push(per_gene);
        }
    }

    GenotypeTensor::from_parts(genes, loci_per_gene, individuals, rows)
}

/// Load genotypes from a TSV file.
pub fn load_genotypes(path: &Path) -> Result<GenotypeTensor> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_genotypes(file)
}

/// Environmental covariates per individual, aligned with a
/// [`GenotypeTensor`]'s individual ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMatrix {
    /// rows[k][i] is the d-vector for individual i of group k.
    rows: [Vec<Vec<f64>>; 2],
    group_means: [Vec<f64>; 2],
    grand_mean: Vec<f64>,
    pub d: usize,
}

impl EnvMatrix {
    pub fn from_rows(groups: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if groups.len() != 2 {
            return Err(Error::Shape("expected exactly two groups".into()));
        }
        let mut it = groups.into_iter();
        let rows = [it.next().unwrap(), it.next().unwrap()];
        let d = rows
            .iter()
            .flat_map(|g| g.iter())
            .map(|r| r.len())
            .next()
            .ok_or_else(|| Error::Shape("environment matrix is empty".into()))?;
        if d == 0 {
            return Err(Error::Shape("covariate dimension must be at least 1".into()));
        }
        for g in &rows {
            for r in g {
                if r.len() != d {
                    return Err(Error::Shape(format!(
                        "covariate dimension {} inconsistent with {d}",
                        r.len()
                    )));
                }
            }
        }
        let mut group_means = [vec![0.0; d], vec![0.0; d]];
        for k in 0..2 {
            let n = rows[k].len().max(1) as f64;
            for r in &rows[k] {
                for (m, v) in group_means[k].iter_mut().zip(r) {
                    *m += v / n;
                }
            }
        }
        let grand_mean: Vec<f64> = (0..d)
            .map(|c| (group_means[0][c] + group_means[1][c]) / 2.0)
            .collect();
        Ok(EnvMatrix {
            rows,
            group_means,
            grand_mean,
            d,
        })
    }

    pub fn row(&self, k: usize, i: usize) -> &[f64] {
        &self.rows[k][i]
    }

    pub fn group_mean(&self, k: usize) -> &[f64] {
        &self.group_means[k]
    }

    pub fn grand_mean(&self) -> &[f64] {
        &self.grand_mean
    }

    pub fn n_k(&self, k: usize) -> usize {
        self.rows[k].len()
    }

    /// Serialize in the environment CSV format.
    pub fn to_csv(&self, tensor: &GenotypeTensor) -> String {
        let mut out = String::from("individual_id,group");
        for c in 1..=self.d {
            write!(out, ",e{c}").unwrap();
        }
        out.push('\n');
        for k in 0..2 {
            for i in 0..self.n_k(k) {
                write!(out, "{},{k}", tensor.individuals[k][i]).unwrap();
                for v in &self.rows[k][i] {
                    write!(out, ",{v}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Parse environment CSV for the individuals of `tensor`.
pub fn parse_environment<R: Read>(reader: R, tensor: &GenotypeTensor) -> Result<EnvMatrix> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::io("<environment stream>", e)),
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 3 || cols[0] != "individual_id" || cols[1] != "group" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header individual_id,group,e1,...".into(),
        });
    }
    let d = cols.len() - 2;

    let mut seen: BTreeMap<(u8, String), Vec<f64>> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io("<environment stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::Shape(format!(
                "line {lineno}: {} covariates, expected {d}",
                fields.len().saturating_sub(2)
            )));
        }
        let group: u8 = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("group must be 0 or 1, got {other}"),
                })
            }
        };
        let mut vals = Vec::with_capacity(d);
        for f in &fields[2..] {
            vals.push(f.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad covariate value {f:?}"),
            })?);
        }
        if seen.insert((group, fields[0].to_string()), vals).is_some() {
            return Err(Error::Conflict(format!(
                "line {lineno}: duplicate environment row for {}",
                fields[0]
            )));
        }
    }

    let mut groups = vec![Vec::new(), Vec::new()];
    for k in 0..2u8 {
        for id in &tensor.individuals[k as usize] {
            let row = seen.remove(&(k, id.clone())).ok_or_else(|| {
                Error::Completeness(format!("no environment row for individual {id} group {k}"))
            })?;
            groups[k as usize].push(row);
        }
    }
    EnvMatrix::from_rows(groups)
}

/// Load environment covariates for the individuals of `tensor`.
pub fn load_environment(path: &Path, tensor: &GenotypeTensor) -> Result<EnvMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_environment(file, tensor)
}
