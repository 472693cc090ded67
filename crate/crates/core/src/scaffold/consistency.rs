//! Repeated generation over a fixed subset to measure how stable the hidden
//! soft labels are across runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::generate::{generate_batch, GenConfig, ScaffoldOutcome};
use super::provider::Provider;
use crate::domain::{Instance, InstanceId, TaskSpec};
use crate::metrics::{pearson_r, MetricsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("at least two runs are required, got {0}")]
    TooFewRuns(u32),
    #[error("no instances given")]
    NoInstances,
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("every instance failed in run {0}")]
    RunFailed(u32),
    #[error("runs {first} and {second}: {source}")]
    Correlation {
        first: u32,
        second: u32,
        source: MetricsError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: u32,
    pub instance_id: InstanceId,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPairCorrelation {
    pub first: u32,
    pub second: u32,
    /// Instances that succeeded in both runs.
    pub instances: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub instances: Vec<InstanceId>,
    pub runs: u32,
    pub temperature: f64,
    /// `soft_labels[run][instance]`, `None` where generation failed.
    pub soft_labels: Vec<Vec<Option<Vec<f64>>>>,
    pub failures: Vec<RunFailure>,
    pub pairwise_r: Vec<RunPairCorrelation>,
    pub mean_r: f64,
}

/// Flattened `(instance × category)` vectors of two runs over the instances
/// both runs produced.
fn paired_vectors(a: &[Option<Vec<f64>>], b: &[Option<Vec<f64>>]) -> (Vec<f64>, Vec<f64>, usize) {
    let (mut x, mut y, mut n) = (Vec::new(), Vec::new(), 0);
    for (pa, pb) in a.iter().zip(b) {
        if let (Some(pa), Some(pb)) = (pa, pb) {
            x.extend_from_slice(pa);
            y.extend_from_slice(pb);
            n += 1;
        }
    }
    (x, y, n)
}

/// Generates every instance `runs` times with identical prompts and
/// configuration (`run_index` is the run number), then averages Pearson r
/// over all run pairs.
pub fn run_consistency_study(
    provider: &dyn Provider,
    spec: &TaskSpec,
    instances: &[Instance],
    runs: u32,
    cfg: &GenConfig,
    parallelism: usize,
) -> Result<ConsistencyResult, StudyError> {
    if runs < 2 {
        return Err(StudyError::TooFewRuns(runs));
    }
    if instances.is_empty() {
        return Err(StudyError::NoInstances);
    }
    cfg.validate().map_err(StudyError::Config)?;

    let mut soft_labels = Vec::with_capacity(runs as usize);
    let mut failures = Vec::new();
    for run in 0..runs {
        let run_cfg = GenConfig {
            run_index: run,
            ..cfg.clone()
        };
        let outcomes = generate_batch(provider, spec, instances, &run_cfg, parallelism);
        let mut row = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match o {
                ScaffoldOutcome::Generated(s) => row.push(Some(s.soft_labels)),
                ScaffoldOutcome::Failed(f) => {
                    failures.push(RunFailure {
                        run,
                        instance_id: f.instance_id,
                        cause: f.cause,
                    });
                    row.push(None);
                }
            }
        }
        if row.iter().all(Option::is_none) {
            return Err(StudyError::RunFailed(run));
        }
        soft_labels.push(row);
    }

    let mut pairwise_r = Vec::new();
    for first in 0..runs {
        for second in first + 1..runs {
            let (x, y, n) =
                paired_vectors(&soft_labels[first as usize], &soft_labels[second as usize]);
            let r = pearson_r(&x, &y).map_err(|source| StudyError::Correlation {
                first,
                second,
                source,
            })?;
            pairwise_r.push(RunPairCorrelation {
                first,
                second,
                instances: n,
                r,
            });
        }
    }
    let mean_r = pairwise_r.iter().map(|p| p.r).sum::<f64>() / pairwise_r.len() as f64;

    Ok(ConsistencyResult {
        instances: instances.iter().map(|i| i.instance_id.clone()).collect(),
        runs,
        temperature: cfg.temperature,
        soft_labels,
        failures,
        pairwise_r,
        mean_r,
    })
}
