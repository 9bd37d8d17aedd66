use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_scm, sample, Family, Result, ScmError, ScmSpec};
use crate::graph::{generate_er_dag, Dag, NodeSet};
use crate::seed::{self, derive_seed};
use crate::stats::DataMatrix;

/// Attempts before [`generate_task`] gives up on a configuration.
pub const MAX_RETRIES: usize = 100;

/// Closed interval `[low, high]` of admissible MB ratios, `0 <= low < high <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct MbBand {
    low: f64,
    high: f64,
}

impl MbBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if 0.0 <= low && low < high && high <= 1.0 {
            Ok(Self { low, high })
        } else {
            Err(ScmError::InvalidParameter(format!("MB-ratio band [{low}, {high}]")))
        }
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn contains(&self, ratio: f64) -> bool {
        self.low <= ratio && ratio <= self.high
    }
}

impl TryFrom<[f64; 2]> for MbBand {
    type Error = ScmError;
    fn try_from(b: [f64; 2]) -> Result<Self> {
        MbBand::new(b[0], b[1])
    }
}

impl From<MbBand> for [f64; 2] {
    fn from(b: MbBand) -> Self {
        [b.low, b.high]
    }
}

/// Uniform choice among nodes whose MB ratio lies in `band`. A positive lower
/// bound excludes empty boundaries.
pub fn select_target(dag: &Dag, band: &MbBand, seed: u64) -> Option<usize> {
    let qualifying: Vec<usize> = (0..dag.node_count())
        .filter(|&v| band.contains(dag.mb_ratio_of(v).expect("node in range")))
        .collect();
    if qualifying.is_empty() {
        return None;
    }
    let mut rng = seed::rng(seed);
    Some(qualifying[rng.random_range(0..qualifying.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    #[serde(rename = "F")]
    pub f: usize,
    pub density: f64,
    pub family: Family,
    pub band: MbBand,
    pub n: usize,
    pub coeff_range: f64,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    #[serde(rename = "F")]
    pub f: usize,
    pub n: usize,
    pub density: f64,
    pub family: Family,
    pub band: MbBand,
    pub coeff_range: f64,
    pub noise_std: f64,
    pub target: usize,
    pub mb_ratio: f64,
    pub redundancy_ratio: f64,
    pub seed: u64,
    pub task_id: String,
}

/// One benchmark task. Data columns are indexed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub dag: Dag,
    /// Absent when the task was reloaded from a bundle without `scm.json`.
    pub spec: Option<ScmSpec>,
    pub data: Array2<f64>,
    pub oracle_boundary: NodeSet,
    pub meta: TaskMeta,
}

impl TaskInstance {
    pub fn task_id(&self) -> &str {
        &self.meta.task_id
    }

    pub fn target(&self) -> usize {
        self.dag.target()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn features(&self) -> Vec<usize> {
        self.dag.features()
    }

    /// Whole sample matrix with node indices as column ids.
    pub fn data_matrix(&self) -> DataMatrix<f64> {
        DataMatrix::new(self.data.clone(), (0..self.data.ncols()).collect())
            .expect("task data is finite with distinct columns")
    }
}

pub fn task_id(config: &TaskConfig) -> String {
    format!("F{}_d{}_{}_{:016x}", config.f, config.density, config.family, config.seed)
}

/// Generate DAG, select target, build SCM and sample, retrying with fresh
/// sub-seeds until a node falls in the MB-ratio band.
pub fn generate_task(config: &TaskConfig) -> Result<TaskInstance> {
    for retry in 0..MAX_RETRIES as u64 {
        let dag = generate_er_dag(config.f + 1, config.density, derive_seed(config.seed, "dag", retry))?;
        let Some(target) = select_target(&dag, &config.band, derive_seed(config.seed, "target", retry)) else {
            continue;
        };
        let dag = dag.with_target(target)?;
        let spec = build_scm(
            &dag,
            config.family,
            config.coeff_range,
            config.noise_std,
            derive_seed(config.seed, "scm", retry),
        )?;
        let data = sample(&spec, &dag, config.n, derive_seed(config.seed, "data", retry))?;
        let oracle_boundary = dag.markov_boundary(target)?;
        let mb_ratio = dag.mb_ratio();
        let meta = TaskMeta {
            f: config.f,
            n: config.n,
            density: config.density,
            family: config.family,
            band: config.band,
            coeff_range: config.coeff_range,
            noise_std: config.noise_std,
            target,
            mb_ratio,
            redundancy_ratio: 1.0 - mb_ratio,
            seed: config.seed,
            task_id: task_id(config),
        };
        return Ok(TaskInstance { dag, spec: Some(spec), data, oracle_boundary, meta });
    }
    Err(ScmError::GenerationFailed { config: Box::new(config.clone()), retries: MAX_RETRIES })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(f: usize, density: f64, band: (f64, f64), n: usize, seed: u64) -> TaskConfig {
        TaskConfig {
            f,
            density,
            family: Family::LinearGaussian,
            band: MbBand::new(band.0, band.1).unwrap(),
            n,
            coeff_range: 1.0,
            noise_std: 0.5,
            seed,
        }
    }

    #[test]
    fn band_validation() {
        assert!(MbBand::new(0.1, 0.9).is_ok());
        assert!(MbBand::new(0.5, 0.5).is_err());
        assert!(MbBand::new(-0.1, 0.5).is_err());
        assert!(MbBand::new(0.1, 1.1).is_err());
        assert!(serde_json::from_str::<MbBand>("[0.9, 0.1]").is_err());
    }

    #[test]
    fn edgeless_graph_has_no_target() {
        let dag = Dag::new(6, &[], 0).unwrap();
        assert_eq!(select_target(&dag, &MbBand::new(0.10, 0.90).unwrap(), 1), None);
    }

    #[test]
    fn complete_graph_targets() {
        let dag = generate_er_dag(5, 1.0, 3).unwrap();
        assert_eq!(select_target(&dag, &MbBand::new(0.05, 0.95).unwrap(), 1), None);
        assert!(select_target(&dag, &MbBand::new(0.05, 1.0).unwrap(), 1).is_some());
    }

    #[test]
    fn dense_split_task() {
        let task = generate_task(&config(40, 0.2, (0.10, 0.90), 1000, 5)).unwrap();
        assert!((0.10..=0.90).contains(&task.meta.mb_ratio));
        assert_eq!(task.data.ncols(), 41);
        assert_eq!(task.data.nrows(), 1000);
        assert_eq!(task.oracle_boundary, task.dag.markov_boundary(task.target()).unwrap());
        assert!((task.meta.redundancy_ratio - (1.0 - task.meta.mb_ratio)).abs() < 1e-15);
        assert!(!task.oracle_boundary.contains(task.target()));
    }

    #[test]
    fn sparse_split_task() {
        let task = generate_task(&config(200, 0.02, (0.05, 0.95), 300, 6)).unwrap();
        assert!((0.05..=0.95).contains(&task.meta.mb_ratio));
        assert_eq!(task.data.ncols(), 201);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = config(30, 0.2, (0.1, 0.9), 200, 42);
        let a = generate_task(&c).unwrap();
        let b = generate_task(&c).unwrap();
        assert_eq!(a.meta.task_id, b.meta.task_id);
        assert_eq!(a.data, b.data);
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_band_fails_with_config() {
        // an edgeless graph never has a boundary, so no node reaches the band
        let c = config(10, 0.0, (0.1, 0.9), 50, 1);
        match generate_task(&c) {
            Err(ScmError::GenerationFailed { config, retries }) => {
                assert_eq!(*config, c);
                assert_eq!(retries, MAX_RETRIES);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
