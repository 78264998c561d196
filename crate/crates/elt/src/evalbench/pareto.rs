//! Quality-vs-compute sweeps over (checkpoint, loop count) pairs, with
//! Pareto marking under (block FLOPs, metric) dominance.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ckpt;
use crate::data::DataSourceSpec;
use crate::error::{EltError, Result};
use crate::evalbench::elasticity::held_out_loss;
use crate::evalbench::workqueue::parallel_map;
use crate::model::{count_flops, count_params, LoopedModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub ckpt: PathBuf,
    pub loops: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub version: String,
    pub entries: Vec<SweepEntry>,
    pub source: DataSourceSpec,
    pub eval_examples: usize,
    pub seed: u64,
}

pub const SWEEP_SPEC_VERSION: &str = "elt-sweep-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub ckpt: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub loops: usize,
    pub params_total: u64,
    pub block_flops: u64,
    pub metric: f64,
    pub wall_ms: f64,
    pub seed: u64,
    pub pareto: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub metric_name: String,
    pub rows: Vec<SweepRow>,
}

/// Mark rows not dominated by any other row; lower is better on both axes.
pub fn mark_pareto(rows: &mut [SweepRow]) {
    for i in 0..rows.len() {
        let dominated = rows.iter().enumerate().any(|(j, other)| {
            j != i
                && other.block_flops <= rows[i].block_flops
                && other.metric <= rows[i].metric
                && (other.block_flops < rows[i].block_flops || other.metric < rows[i].metric)
        });
        rows[i].pareto = !dominated;
    }
}

/// Evaluate every (checkpoint, loops) pair on one shared held-out set and
/// mark the Pareto-optimal rows. Jobs run on the capped work queue; rows
/// come back in grid order regardless of completion order.
pub fn pareto_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.version != SWEEP_SPEC_VERSION {
        return Err(EltError::Config(format!(
            "unsupported sweep version {:?}, expected {SWEEP_SPEC_VERSION:?}",
            spec.version
        )));
    }
    if spec.entries.is_empty() {
        return Err(EltError::Config("sweep grid is empty".to_string()));
    }
    let mut models = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        let (cfg, params) = ckpt::load(&e.ckpt).map_err(|err| {
            EltError::Config(format!("checkpoint {}: {err}", e.ckpt.display()))
        })?;
        models.push(LoopedModel::new(cfg, params)?);
    }
    // One shared eval set per sweep: rows are comparable across checkpoints.
    let batch = spec
        .source
        .assemble_batch(spec.eval_examples, 0.0, spec.seed)?;

    let mut jobs = Vec::new();
    for (mi, e) in spec.entries.iter().enumerate() {
        for &loops in &e.loops {
            jobs.push((mi, loops));
        }
    }
    let results = parallel_map(&jobs, |_, &(mi, loops)| {
        let model = &models[mi];
        let started = Instant::now();
        let metric = held_out_loss(model, &batch, loops);
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        (metric, wall_ms)
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for ((mi, loops), (metric, wall_ms)) in jobs.into_iter().zip(results) {
        let model = &models[mi];
        let cfg = model.cfg();
        rows.push(SweepRow {
            ckpt: spec.entries[mi].ckpt.display().to_string(),
            n_layers: cfg.n_layers,
            d_model: cfg.d_model,
            loops,
            params_total: count_params(cfg)?.total,
            block_flops: count_flops(cfg, loops, cfg.seq_len)?.block,
            metric: metric?,
            wall_ms,
            seed: spec.seed,
            pareto: false,
        });
    }
    mark_pareto(&mut rows);
    Ok(SweepResult {
        metric_name: metric_name_for(&spec.source),
        rows,
    })
}

fn metric_name_for(source: &DataSourceSpec) -> String {
    match source {
        DataSourceSpec::MarkovGrid { .. } => "held_out_masked_cross_entropy".to_string(),
        DataSourceSpec::GaussianMixture { .. } => "held_out_weighted_mse".to_string(),
    }
}

/// Fixed CSV layout; the metric definition rides in a leading comment line.
pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# metric: {}", result.metric_name)?;
    writeln!(
        w,
        "ckpt,n_layers,d_model,loops,params_total,block_flops,metric,wall_ms,seed,pareto"
    )?;
    for r in &result.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.ckpt,
            r.n_layers,
            r.d_model,
            r.loops,
            r.params_total,
            r.block_flops,
            r.metric,
            r.wall_ms,
            r.seed,
            r.pareto
        )?;
    }
    w.flush()?;
    Ok(())
}
