//! Parameter sweeps: one pipeline run per axis value and replication.

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::metrics::{write_metrics, MetricsRow};
use crate::harness::pipeline::run_pipeline;
use crate::harness::spec::ExperimentSpec;
use crate::rng::{derive_seed, stream};

/// Seed of replication `rep`. Replication 0 uses the master seed itself.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    if rep == 0 {
        master
    } else {
        derive_seed(master, stream::SWEEP, rep as u64)
    }
}

/// Runs every (axis value, replication) point and writes the aggregated
/// CSV with its sidecar. Without an axis this is `replications` plain runs.
pub fn sweep(spec: &ExperimentSpec) -> Result<Vec<MetricsRow>> {
    spec.validate()?;
    let base = spec.resolve_config()?;
    let cache = spec.cache_dir();
    let values: Vec<Option<f64>> = match spec.axis {
        Some(_) => spec.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let points: Vec<(usize, Option<f64>, usize)> = values
        .iter()
        .enumerate()
        .flat_map(|(i, v)| (0..spec.replications).map(move |r| (i, *v, r)))
        .collect();

    let run = |&(i, v, rep): &(usize, Option<f64>, usize)| -> Result<(usize, usize, Vec<MetricsRow>)> {
        let mut cfg = base.clone();
        if let (Some(axis), Some(v)) = (spec.axis, v) {
            axis.apply(&mut cfg, v)?;
        }
        let seed = replication_seed(spec.seed, rep);
        let out = run_pipeline(&cfg, &spec.schemes, seed, &cache)
            .map_err(|e| crate::error::Error::Stage { stage: format!("point {i} rep {rep}"), source: Box::new(e) })?;
        let rows = out
            .rows
            .into_iter()
            .map(|mut r| {
                r.axis = spec.axis.map(|a| a.name().to_string()).unwrap_or_default();
                r.axis_value = v;
                r.replication = rep;
                r
            })
            .collect();
        Ok((i, rep, rows))
    };

    // The first point runs alone so shared upstream stages are built once.
    let mut results = vec![run(&points[0])?];
    results.extend(points[1..].par_iter().map(run).collect::<Result<Vec<_>>>()?);
    results.sort_by_key(|(i, rep, _)| (*i, *rep));
    let rows: Vec<MetricsRow> = results.into_iter().flat_map(|(_, _, r)| r).collect();

    let sidecar = serde_json::json!({
        "spec": spec,
        "config": base,
        "code_version": crate::harness::cache::CODE_VERSION,
    });
    write_metrics(&spec.output, &rows, &sidecar)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replication_zero_is_master() {
        assert_eq!(replication_seed(42, 0), 42);
        assert_ne!(replication_seed(42, 1), replication_seed(42, 2));
    }
}
