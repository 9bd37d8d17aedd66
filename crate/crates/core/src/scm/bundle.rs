//! Task bundles on disk: `dag.json`, `data.csv`, `meta.json`, plus `scm.json`
//! with the mechanism parameters when they are known.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ScmSpec, TaskInstance, TaskMeta};
use crate::graph::{Dag, NodeSet};

pub const DAG_FILE: &str = "dag.json";
pub const DATA_FILE: &str = "data.csv";
pub const META_FILE: &str = "meta.json";
pub const SCM_FILE: &str = "scm.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

type Result<T> = std::result::Result<T, BundleError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    #[serde(flatten)]
    pub meta: TaskMeta,
    pub oracle_boundary: NodeSet,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|source| BundleError::Json { path: path.display().to_string(), source })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| BundleError::Json { path: path.display().to_string(), source })
}

pub fn write_bundle(dir: &Path, task: &TaskInstance) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(DAG_FILE), &task.dag)?;
    write_json(
        &dir.join(META_FILE),
        &BundleMeta { meta: task.meta.clone(), oracle_boundary: task.oracle_boundary.clone() },
    )?;
    if let Some(spec) = &task.spec {
        write_json(&dir.join(SCM_FILE), spec)?;
    }
    let path = dir.join(DATA_FILE);
    let csv_err = |source| BundleError::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record((0..task.data.ncols()).map(|c| c.to_string())).map_err(csv_err)?;
    for row in task.data.rows() {
        // `Display` for f64 is the shortest representation that round-trips
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

pub fn read_data_csv(path: &Path) -> Result<Array2<f64>> {
    let csv_err = |source| BundleError::Csv { path: path.display().to_string(), source };
    let invalid = |reason: String| BundleError::Invalid { path: path.display().to_string(), reason };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    for (i, h) in header.iter().enumerate() {
        if h.parse::<usize>() != Ok(i) {
            return Err(invalid(format!("header column {i} is `{h}`")));
        }
    }
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        for field in record.iter() {
            let x: f64 = field.parse().map_err(|_| invalid(format!("row {rows}: `{field}` is not a number")))?;
            if !x.is_finite() {
                return Err(invalid(format!("row {rows}: non-finite value")));
            }
            values.push(x);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| invalid(e.to_string()))
}

pub fn read_bundle(dir: &Path) -> Result<TaskInstance> {
    let dag: Dag = read_json(&dir.join(DAG_FILE))?;
    let BundleMeta { meta, oracle_boundary } = read_json(&dir.join(META_FILE))?;
    let scm_path = dir.join(SCM_FILE);
    let spec: Option<ScmSpec> = if scm_path.exists() { Some(read_json(&scm_path)?) } else { None };
    let data_path = dir.join(DATA_FILE);
    let data = read_data_csv(&data_path)?;
    let invalid = |reason: String| BundleError::Invalid { path: dir.display().to_string(), reason };
    if data.ncols() != dag.node_count() {
        return Err(invalid(format!("{} data columns for {} nodes", data.ncols(), dag.node_count())));
    }
    if meta.target != dag.target() {
        return Err(invalid(format!("meta target {} but dag target {}", meta.target, dag.target())));
    }
    let expected = dag.markov_boundary(dag.target()).map_err(|e| invalid(e.to_string()))?;
    if expected != oracle_boundary {
        return Err(invalid("oracle_boundary disagrees with the graph".into()));
    }
    Ok(TaskInstance { dag, spec, data, oracle_boundary, meta })
}

/// SHA-256 over the bundle files in a fixed order, hex encoded.
pub fn bundle_checksum(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [DAG_FILE, DATA_FILE, META_FILE, SCM_FILE] {
        let path = dir.join(name);
        match fs::read(&path) {
            Ok(bytes) => {
                h.update(name.as_bytes());
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound && name == SCM_FILE => {}
            Err(source) => return Err(BundleError::Io { path: path.display().to_string(), source }),
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::super::{generate_task, Family, MbBand, TaskConfig};
    use super::*;

    fn task() -> TaskInstance {
        generate_task(&TaskConfig {
            f: 12,
            density: 0.3,
            family: Family::PostNonlinear,
            band: MbBand::new(0.1, 0.9).unwrap(),
            n: 64,
            coeff_range: 1.0,
            noise_std: 0.5,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = task();
        write_bundle(dir.path(), &t).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, t);
        let max_diff = (&back.data - &t.data).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn meta_json_carries_sorted_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let t = task();
        write_bundle(dir.path(), &t).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join(META_FILE)).unwrap()).unwrap();
        let b: Vec<usize> = serde_json::from_value(v["oracle_boundary"].clone()).unwrap();
        assert_eq!(b, t.oracle_boundary.members());
        assert_eq!(v["F"], 12);
        assert_eq!(v["task_id"], t.meta.task_id.as_str());
        assert!(v["redundancy_ratio"].is_number());
    }

    #[test]
    fn checksum_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &task()).unwrap();
        let a = bundle_checksum(dir.path()).unwrap();
        assert_eq!(a, bundle_checksum(dir.path()).unwrap());
        fs::write(dir.path().join(DATA_FILE), "0\n1\n").unwrap();
        assert_ne!(a, bundle_checksum(dir.path()).unwrap());
        assert!(read_bundle(dir.path()).is_err());
    }

    #[test]
    fn bundle_without_scm_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let t = task();
        write_bundle(dir.path(), &t).unwrap();
        fs::remove_file(dir.path().join(SCM_FILE)).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert!(back.spec.is_none());
        assert_eq!(back.data, t.data);
    }
}
