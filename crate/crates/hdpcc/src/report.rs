//! Bridges trace records to the calibrated hypothesis tests: extracting
//! test-statistic samples from a chain's trace, deriving null thresholds,
//! producing verdict reports, and aggregating per-locus scans.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::infer::{calibrate_threshold, test_hypothesis, TestOutcome};
use crate::runner::TraceRecord;

/// Per-target posterior samples of every tested statistic found in a trace.
/// Targets are `<stat>:<indices>`; effect magnitudes (`abs_beta`, `abs_cov`)
/// are recorded as absolute values because their hypotheses bound |·|.
pub fn trace_targets(records: &[TraceRecord]) -> BTreeMap<String, Vec<f64>> {
    let mut targets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let (target, value) = match r.stat.as_str() {
            "hyper" if r.indices.starts_with("beta_") => {
                (format!("abs_beta:{}", r.indices), r.value.abs())
            }
            "cov" => (format!("abs_cov:{}", r.indices), r.value.abs()),
            "d_hat" | "d_e" | "d_star" | "d_star_e" => {
                (format!("{}:{}", r.stat, r.indices), r.value)
            }
            _ => continue,
        };
        targets.entry(target).or_default().push(value);
    }
    targets
}

/// Null thresholds ε = F⁻¹(q) per target from a null chain's trace.
pub fn epsilons_from_trace(records: &[TraceRecord], q: f64) -> Result<Vec<(String, f64)>> {
    trace_targets(records)
        .into_iter()
        .map(|(target, samples)| Ok((target, calibrate_threshold(&samples, q)?)))
        .collect()
}

pub fn epsilons_csv(epsilons: &[(String, f64)]) -> String {
    let mut out = String::from("target,epsilon\n");
    for (target, eps) in epsilons {
        out.push_str(&format!("{target},{eps}\n"));
    }
    out
}

pub fn parse_epsilons(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && line.trim() == "target,epsilon" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        // target names may contain commas (index tuples); the epsilon is
        // everything after the last one
        let (target, eps) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: format!("expected `target,epsilon`, got {line:?}"),
        })?;
        let eps: f64 = eps.trim().parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("malformed epsilon {eps:?}"),
        })?;
        out.push((target.trim().to_string(), eps));
    }
    Ok(out)
}

/// Test every statistic present in the trace against its calibrated
/// threshold. A target without a threshold is a validation error naming it.
pub fn test_report(
    records: &[TraceRecord],
    epsilons: &[(String, f64)],
) -> Result<Vec<TestOutcome>> {
    let eps_map: BTreeMap<&str, f64> = epsilons
        .iter()
        .map(|(t, e)| (t.as_str(), *e))
        .collect();
    trace_targets(records)
        .into_iter()
        .map(|(target, samples)| {
            let eps = *eps_map.get(target.as_str()).ok_or_else(|| {
                Error::Validation(format!("epsilon file is missing statistic {target}"))
            })?;
            let hypothesis = format!("H0[{target} < eps]");
            Ok(test_hypothesis(&hypothesis, &target, &samples, eps))
        })
        .collect()
}

/// Mean per-locus distance per gene over the thinned sweeps, from `dpl`
/// records with `j,r` indices.
pub fn dpl_mean_distances(records: &[TraceRecord]) -> Result<Vec<Vec<f64>>> {
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stat == "dpl") {
        let (j, locus) = r
            .indices
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| {
                Error::Validation(format!("malformed dpl indices {:?}", r.indices))
            })?;
        let slot = sums.entry((j, locus)).or_insert((0.0, 0));
        slot.0 += r.value;
        slot.1 += 1;
    }
    let n_genes = sums.keys().map(|&(j, _)| j + 1).max().unwrap_or(0);
    let mut genes = vec![Vec::new(); n_genes];
    for ((j, locus), (sum, count)) in sums {
        if genes[j].len() != locus {
            return Err(Error::Validation(format!(
                "dpl trace has a gap before gene {j} locus {locus}"
            )));
        }
        genes[j].push(sum / count as f64);
    }
    Ok(genes)
}
