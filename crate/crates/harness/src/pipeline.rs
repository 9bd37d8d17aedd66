use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use blanket_core::discovery::{discover, DiscoveryRecord, Method};
use blanket_core::eval::{mask_families, perturbation_masks, score_mask, EvalRecord, MaskKind, TaskEvaluator};
use blanket_core::scm::{bundle_checksum, generate_task, read_bundle, write_bundle, TaskConfig, TaskInstance};
use blanket_core::seed::{derive_seed, seed_from_str};
use blanket_core::NodeSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::jsonl::{read_jsonl_or_empty, write_atomic, OrderedWriter};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TASKS_DIR: &str = "tasks";
pub const DISCOVERY_FILE: &str = "discovery.jsonl";
pub const DISCOVERY_SUMMARY_FILE: &str = "discovery_summary.csv";
pub const EVAL_DIR: &str = "eval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub cell: usize,
    pub index: usize,
    pub config: TaskConfig,
    pub target: usize,
    pub oracle_boundary: NodeSet,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub cell: usize,
    pub index: usize,
    pub config: TaskConfig,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub master_seed: u64,
    pub tasks: Vec<ManifestEntry>,
    pub failures: Vec<GenerationFailure>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Manifest> {
        let path = out.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn save(&self, out: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(&out.join(MANIFEST_FILE), &bytes)
    }

    pub fn entries(&self) -> HashMap<&str, &ManifestEntry> {
        self.tasks.iter().map(|t| (t.task_id.as_str(), t)).collect()
    }
}

pub fn bundle_dir(out: &Path, task_id: &str) -> PathBuf {
    out.join(TASKS_DIR).join(task_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerateSummary {
    pub generated: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| anyhow!("thread pool: {e}"))
}

enum SlotOutcome {
    Existing(ManifestEntry),
    Generated(ManifestEntry),
    Failed(GenerationFailure),
}

/// Writes one bundle per grid slot plus `manifest.json`. Bundles already listed
/// in the manifest with a matching checksum are left alone.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<GenerateSummary> {
    std::fs::create_dir_all(out.join(TASKS_DIR)).with_context(|| format!("creating {}", out.display()))?;
    let previous: HashMap<String, ManifestEntry> = match Manifest::load(out) {
        Ok(m) => m.tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
        Err(_) => HashMap::new(),
    };
    let slots = cfg.slots();
    let outcomes: Vec<SlotOutcome> = pool(cfg.parallelism)?.install(|| {
        slots
            .par_iter()
            .map(|slot| {
                let dir = bundle_dir(out, &slot.task_id);
                if let Some(prev) = previous.get(&slot.task_id) {
                    if prev.config == slot.config && bundle_checksum(&dir).ok().as_deref() == Some(prev.checksum.as_str()) {
                        return SlotOutcome::Existing(prev.clone());
                    }
                    log::warn!("bundle {} changed or missing; regenerating", slot.task_id);
                }
                let fail = |error: String| {
                    SlotOutcome::Failed(GenerationFailure { cell: slot.cell, index: slot.index, config: slot.config.clone(), error })
                };
                let task = match generate_task(&slot.config) {
                    Ok(t) => t,
                    Err(e) => return fail(e.to_string()),
                };
                if let Err(e) = write_bundle(&dir, &task) {
                    return fail(e.to_string());
                }
                match bundle_checksum(&dir) {
                    Ok(checksum) => SlotOutcome::Generated(ManifestEntry {
                        task_id: slot.task_id.clone(),
                        cell: slot.cell,
                        index: slot.index,
                        config: slot.config.clone(),
                        target: task.target(),
                        oracle_boundary: task.oracle_boundary.clone(),
                        checksum,
                    }),
                    Err(e) => fail(e.to_string()),
                }
            })
            .collect()
    });
    let mut manifest = Manifest { master_seed: cfg.master_seed, ..Default::default() };
    let mut summary = GenerateSummary::default();
    for o in outcomes {
        match o {
            SlotOutcome::Existing(e) => {
                summary.skipped += 1;
                manifest.tasks.push(e);
            }
            SlotOutcome::Generated(e) => {
                summary.generated += 1;
                manifest.tasks.push(e);
            }
            SlotOutcome::Failed(f) => {
                log::error!("generation failed for cell {} task {}: {}", f.cell, f.index, f.error);
                summary.failed += 1;
                manifest.failures.push(f);
            }
        }
    }
    manifest.save(out)?;
    Ok(summary)
}

fn load_task(out: &Path, task_id: &str) -> Result<TaskInstance> {
    read_bundle(&bundle_dir(out, task_id)).with_context(|| format!("loading task {task_id}"))
}

/// Mean recovery and timing per (F, method), in output column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverySummaryRow {
    #[serde(rename = "F")]
    pub f: usize,
    pub method: Method,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub time_s: f64,
    pub completion: f64,
    pub tasks: usize,
}

/// Mean scores of completed records against the manifest oracles; time and
/// completion are averaged over every record.
pub fn summarize_discovery(records: &[DiscoveryRecord], manifest: &Manifest) -> Vec<DiscoverySummaryRow> {
    #[derive(Default)]
    struct Acc {
        f1: f64,
        precision: f64,
        recall: f64,
        scored: usize,
        time: f64,
        completed: usize,
        total: usize,
    }
    let entries = manifest.entries();
    let mut acc: BTreeMap<(usize, Method), Acc> = BTreeMap::new();
    for r in records {
        let Some(entry) = entries.get(r.task_id.as_str()) else {
            log::warn!("discovery record for unknown task {}", r.task_id);
            continue;
        };
        let a = acc.entry((entry.config.f, r.method)).or_default();
        a.total += 1;
        a.time += r.wall_time_s;
        if r.completed {
            a.completed += 1;
        }
        if let Some(mask) = &r.mask {
            let s = score_mask(mask, &entry.oracle_boundary);
            a.f1 += s.f1;
            a.precision += s.precision;
            a.recall += s.recall;
            a.scored += 1;
        }
    }
    acc.into_iter()
        .map(|((f, method), a)| {
            let mean = |v: f64| if a.scored > 0 { v / a.scored as f64 } else { f64::NAN };
            DiscoverySummaryRow {
                f,
                method,
                f1: mean(a.f1),
                precision: mean(a.precision),
                recall: mean(a.recall),
                time_s: a.time / a.total as f64,
                completion: a.completed as f64 / a.total as f64,
                tasks: a.total,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const DISCOVERY_SUMMARY_HEADER: [&str; 8] = ["F", "method", "f1", "precision", "recall", "time_s", "completion", "tasks"];

/// Runs every configured method on every manifest task and writes
/// `discovery.jsonl` and the per-(F, method) summary.
pub fn cmd_discover(cfg: &RunConfig, out: &Path) -> Result<Vec<DiscoverySummaryRow>> {
    let manifest = Manifest::load(out)?;
    let writer = OrderedWriter::create(&out.join(DISCOVERY_FILE))?;
    let sender = writer.sender();
    pool(cfg.parallelism)?.install(|| {
        manifest.tasks.par_iter().enumerate().for_each(|(seq, entry)| {
                let mut records = Vec::new();
                match load_task(out, &entry.task_id) {
                    Ok(task) => {
                        let data = task.data_matrix();
                        for &m in &cfg.methods {
                            match discover(m, &data, task.target(), cfg.alpha, cfg.budget_s) {
                                Ok(r) => records.push(DiscoveryRecord::new(task.task_id(), &r)),
                                Err(e) => log::error!("{} {m}: {e}", entry.task_id),
                            }
                        }
                    }
                    Err(e) => log::error!("{e:#}"),
                }
                if let Err(e) = sender.send(seq, &records) {
                    log::error!("{e:#}");
                }
        })
    });
    drop(sender);
    writer.finish()?;
    let records: Vec<DiscoveryRecord> = read_jsonl_or_empty(&out.join(DISCOVERY_FILE))?;
    let rows = summarize_discovery(&records, &manifest);
    write_csv(&out.join(DISCOVERY_SUMMARY_FILE), &DISCOVERY_SUMMARY_HEADER, &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskSource {
    All,
    Oracle,
    Estimated,
    Layered,
    Proximity,
    Perturbed,
}

impl MaskSource {
    pub const ALL: [MaskSource; 6] =
        [MaskSource::All, MaskSource::Oracle, MaskSource::Estimated, MaskSource::Layered, MaskSource::Proximity, MaskSource::Perturbed];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskSource::All => "all",
            MaskSource::Oracle => "oracle",
            MaskSource::Estimated => "estimated",
            MaskSource::Layered => "layered",
            MaskSource::Proximity => "proximity",
            MaskSource::Perturbed => "perturbed",
        }
    }
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        MaskSource::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown mask source `{s}`"))
    }
}

pub fn eval_path(out: &Path, source: MaskSource) -> PathBuf {
    out.join(EVAL_DIR).join(format!("{source}.jsonl"))
}

fn masks_for(
    cfg: &RunConfig,
    source: MaskSource,
    task: &TaskInstance,
    estimated: &HashMap<String, Vec<DiscoveryRecord>>,
) -> Result<Vec<(MaskKind, Option<Method>, NodeSet, Option<blanket_core::eval::Perturbation>)>> {
    let features: NodeSet = task.features().into_iter().collect();
    Ok(match source {
        MaskSource::All => vec![(MaskKind::All, None, features, None)],
        MaskSource::Oracle => vec![(MaskKind::Oracle, None, task.oracle_boundary.clone(), None)],
        MaskSource::Estimated => estimated
            .get(task.task_id())
            .into_iter()
            .flatten()
            .filter_map(|r| r.mask.clone().map(|m| (MaskKind::Estimated, Some(r.method), m, None)))
            .collect(),
        MaskSource::Layered => mask_families(task, cfg.layered_max, 0)?
            .layered
            .into_iter()
            .map(|(k, m)| (MaskKind::Layered(k), None, m, None))
            .collect(),
        MaskSource::Proximity => mask_families(task, 0, cfg.proximity_max)?
            .proximity
            .into_iter()
            .map(|(r, m)| (MaskKind::Proximity(r), None, m, None))
            .collect(),
        MaskSource::Perturbed => {
            let seed = derive_seed(seed_from_str(task.task_id()), "perturb", 0);
            perturbation_masks(&task.oracle_boundary, &task.features(), &cfg.perturbation, seed)
                .into_iter()
                .map(|(p, m)| (MaskKind::Perturbed, None, m, Some(p)))
                .collect()
        }
    })
}

/// Evaluates every (task, regressor, mask) triple of one mask source and writes
/// `eval/<source>.jsonl`. Returns the record count.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, source: MaskSource) -> Result<usize> {
    let manifest = Manifest::load(out)?;
    let estimated: HashMap<String, Vec<DiscoveryRecord>> = if source == MaskSource::Estimated {
        let path = out.join(DISCOVERY_FILE);
        if !path.exists() {
            return Err(anyhow!("estimated masks need {}; run `discover` first", path.display()));
        }
        let mut by_task: HashMap<String, Vec<DiscoveryRecord>> = HashMap::new();
        for r in read_jsonl_or_empty::<DiscoveryRecord>(&path)? {
            if cfg.methods.contains(&r.method) {
                by_task.entry(r.task_id.clone()).or_default().push(r);
            }
        }
        by_task
    } else {
        HashMap::new()
    };
    let writer = OrderedWriter::create(&eval_path(out, source))?;
    let sender = writer.sender();
    pool(cfg.parallelism)?.install(|| {
        manifest.tasks.par_iter().enumerate().for_each(|(seq, entry)| {
            let records = evaluate_task(cfg, out, source, &entry.task_id, &estimated).unwrap_or_else(|e| {
                log::error!("{e:#}");
                Vec::new()
            });
            if let Err(e) = sender.send(seq, &records) {
                log::error!("{e:#}");
            }
        })
    });
    drop(sender);
    writer.finish()
}

fn evaluate_task(
    cfg: &RunConfig,
    out: &Path,
    source: MaskSource,
    task_id: &str,
    estimated: &HashMap<String, Vec<DiscoveryRecord>>,
) -> Result<Vec<EvalRecord>> {
    let task = load_task(out, task_id)?;
    let ev = TaskEvaluator::new(&task)?;
    let masks = masks_for(cfg, source, &task, estimated)?;
    let mut records = Vec::new();
    for &kind in &cfg.regressors {
        for (mask_kind, method, mask, perturbation) in &masks {
            let mut r = ev.evaluate(kind, *mask_kind, mask).with_context(|| format!("task {task_id}, {kind}, {mask_kind}"))?;
            r.method = *method;
            r.perturbation = *perturbation;
            records.push(r);
        }
    }
    Ok(records)
}
