use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use blanket_core::discovery::DiscoveryRecord;
use blanket_core::eval::{fit_attribution, fit_cost_coefficients, AttributionRow, EvalRecord, MaskKind};
use blanket_core::reward::{fit_reward_model, gain_surface};
use serde::Serialize;

use crate::jsonl::{read_jsonl_or_empty, write_atomic};
use crate::pipeline::{
    eval_path, summarize_discovery, write_csv, MaskSource, Manifest, DISCOVERY_FILE, MANIFEST_FILE,
};

pub const REPORTS_DIR: &str = "reports";
pub const MAPS_DIR: &str = "maps";
pub const DEFAULT_GRID_STEP: f64 = 0.02;

pub const GAP_HEADER: [&str; 6] = ["F", "regressor", "median_gap_rel", "median_gap_abs", "mean_gap_rel", "tasks"];
pub const TABLE2_HEADER: [&str; 9] = ["F", "method", "regressor", "f1", "precision", "recall", "win_rate", "time_s", "completion"];
pub const COST_HEADER: [&str; 8] = ["F", "regressor", "alpha_fn", "alpha_fp", "ratio", "fit_r2", "records", "error"];
pub const ATTRIBUTION_HEADER: [&str; 2] = ["term", "coefficient"];
pub const REWARD_HEADER: [&str; 11] =
    ["F", "regressor", "coef_tp", "coef_fn", "coef_fp_over_n", "intercept", "r2", "records", "boundary_size", "contour_points", "error"];
pub const SURFACE_HEADER: [&str; 3] = ["precision", "recall", "predicted_gain"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    #[serde(rename = "F")]
    pub f: usize,
    pub regressor: String,
    pub median_gap_rel: f64,
    pub median_gap_abs: f64,
    pub mean_gap_rel: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    #[serde(rename = "F")]
    pub f: usize,
    pub method: String,
    pub regressor: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub win_rate: f64,
    pub time_s: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    #[serde(rename = "F")]
    pub f: usize,
    pub regressor: String,
    pub alpha_fn: f64,
    pub alpha_fp: f64,
    pub ratio: f64,
    pub fit_r2: f64,
    pub records: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardRow {
    #[serde(rename = "F")]
    pub f: usize,
    pub regressor: String,
    pub coef_tp: f64,
    pub coef_fn: f64,
    pub coef_fp_over_n: f64,
    pub intercept: f64,
    pub r2: f64,
    pub records: usize,
    pub boundary_size: usize,
    pub contour_points: usize,
    pub error: String,
}

/// Everything `cmd_report` wrote, for callers that want the numbers.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub gaps: Vec<GapRow>,
    pub table2: Vec<Table2Row>,
    pub costs: Vec<CostRow>,
    pub rewards: Vec<RewardRow>,
}

/// Median of a non-empty slice; midpoint of the two central values for even length.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Records where the mask strictly beats the all-features fit.
pub fn win_count<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> usize {
    records.into_iter().filter(|r| r.rmse_mask < r.rmse_all).count()
}

fn group<'a, K: Ord>(records: &'a [EvalRecord], key: impl Fn(&EvalRecord) -> K) -> BTreeMap<K, Vec<&'a EvalRecord>> {
    let mut out: BTreeMap<K, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(key(r)).or_default().push(r);
    }
    out
}

pub fn gap_table(oracle: &[EvalRecord]) -> Vec<GapRow> {
    group(oracle, |r| (r.f, r.regressor.clone()))
        .into_iter()
        .map(|((f, regressor), rs)| {
            let rel: Vec<f64> = rs.iter().map(|r| r.gap_rel).collect();
            let abs: Vec<f64> = rs.iter().map(|r| r.gap_abs).collect();
            GapRow {
                f,
                regressor,
                median_gap_rel: median(&rel),
                median_gap_abs: median(&abs),
                mean_gap_rel: rel.iter().sum::<f64>() / rel.len() as f64,
                tasks: rs.len(),
            }
        })
        .collect()
}

/// Recovery columns per (F, method) joined with win rates per regressor. Tasks
/// whose discovery did not finish count as non-wins. Oracle rows use the true
/// boundary with zero discovery time.
pub fn table2(manifest: &Manifest, discovery: &[DiscoveryRecord], estimated: &[EvalRecord], oracle: &[EvalRecord]) -> Vec<Table2Row> {
    let mut rows = Vec::new();
    let by_method = group(estimated, |r| (r.f, r.method, r.regressor.clone()));
    let regressors: BTreeSet<String> = estimated.iter().chain(oracle).map(|r| r.regressor.clone()).collect();
    for s in summarize_discovery(discovery, manifest) {
        for reg in &regressors {
            let wins = by_method.get(&(s.f, Some(s.method), reg.clone())).map(|rs| win_count(rs.iter().copied())).unwrap_or(0);
            rows.push(Table2Row {
                f: s.f,
                method: s.method.to_string(),
                regressor: reg.clone(),
                f1: s.f1,
                precision: s.precision,
                recall: s.recall,
                win_rate: wins as f64 / s.tasks as f64,
                time_s: s.time_s,
                completion: s.completion,
            });
        }
    }
    for ((f, regressor), rs) in group(oracle, |r| (r.f, r.regressor.clone())) {
        rows.push(Table2Row {
            f,
            method: "oracle".into(),
            regressor,
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
            win_rate: win_count(rs.iter().copied()) as f64 / rs.len() as f64,
            time_s: 0.0,
            completion: 1.0,
        });
    }
    rows
}

pub fn cost_table(perturbed: &[EvalRecord]) -> Vec<CostRow> {
    group(perturbed, |r| (r.f, r.regressor.clone()))
        .into_iter()
        .map(|((f, regressor), rs)| {
            let owned: Vec<EvalRecord> = rs.into_iter().cloned().collect();
            match fit_cost_coefficients(&owned) {
                Ok(c) => CostRow {
                    f,
                    regressor,
                    alpha_fn: c.alpha_fn,
                    alpha_fp: c.alpha_fp,
                    ratio: c.ratio,
                    fit_r2: c.fit_r2,
                    records: c.total_records,
                    error: String::new(),
                },
                Err(e) => CostRow {
                    f,
                    regressor,
                    alpha_fn: f64::NAN,
                    alpha_fp: f64::NAN,
                    ratio: f64::NAN,
                    fit_r2: f64::NAN,
                    records: owned.len(),
                    error: e.to_string(),
                },
            }
        })
        .collect()
}

/// Mean `[precision, recall]` per level over the records of one mask family.
fn mean_trajectory(records: &[&EvalRecord], level: impl Fn(MaskKind) -> Option<usize>) -> Vec<[f64; 2]> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        if let Some(k) = level(r.mask_kind) {
            let e = acc.entry(k).or_default();
            e.0 += r.score.precision;
            e.1 += r.score.recall;
            e.2 += 1;
        }
    }
    acc.into_values().map(|(p, r, c)| [p / c as f64, r / c as f64]).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Fits one gain map per (F, regressor) over every non-baseline mask record and
/// writes its surface, zero contour and mask-family trajectories.
fn reward_maps(records: &[EvalRecord], maps_dir: &Path, grid_step: f64) -> Result<Vec<RewardRow>> {
    let mut rows = Vec::new();
    for ((f, regressor), rs) in group(records, |r| (r.f, r.regressor.clone())) {
        let stem = format!("F{f}_{regressor}");
        let per_task: BTreeMap<&str, usize> = rs.iter().map(|r| (r.task_id.as_str(), r.boundary_size)).collect();
        let b = median(&per_task.values().map(|&v| v as f64).collect::<Vec<_>>()).round() as usize;
        let owned: Vec<EvalRecord> = rs.iter().map(|&r| r.clone()).collect();
        let layered = mean_trajectory(&rs, |k| if let MaskKind::Layered(k) = k { Some(k) } else { None });
        let proximity = mean_trajectory(&rs, |k| if let MaskKind::Proximity(k) = k { Some(k) } else { None });
        write_json(&maps_dir.join(format!("{stem}_layered.json")), &layered)?;
        write_json(&maps_dir.join(format!("{stem}_proximity.json")), &proximity)?;
        let fitted = fit_reward_model(&owned, &regressor).and_then(|fit| Ok((gain_surface(&fit, b, grid_step)?, fit)));
        match fitted {
            Ok((surface, fit)) => {
                let cells: Vec<(f64, f64, f64)> = surface.cells().collect();
                write_csv(&maps_dir.join(format!("{stem}_surface.csv")), &SURFACE_HEADER, &cells)?;
                write_json(&maps_dir.join(format!("{stem}_contour.json")), &surface.zero_contour)?;
                rows.push(RewardRow {
                    f,
                    regressor,
                    coef_tp: fit.coef_tp,
                    coef_fn: fit.coef_fn,
                    coef_fp_over_n: fit.coef_fp_over_n,
                    intercept: fit.intercept,
                    r2: fit.r2,
                    records: fit.records,
                    boundary_size: b,
                    contour_points: surface.zero_contour.len(),
                    error: String::new(),
                });
            }
            Err(e) => {
                log::warn!("no gain map for F={f} {regressor}: {e}");
                rows.push(RewardRow {
                    f,
                    regressor,
                    coef_tp: f64::NAN,
                    coef_fn: f64::NAN,
                    coef_fp_over_n: f64::NAN,
                    intercept: f64::NAN,
                    r2: f64::NAN,
                    records: owned.len(),
                    boundary_size: b,
                    contour_points: 0,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

fn load_eval(out: &Path, source: MaskSource) -> Result<Vec<EvalRecord>> {
    read_jsonl_or_empty(&eval_path(out, source))
}

/// Aggregates whatever records exist under `out` into `out/reports`. Absent
/// record files are treated as empty, so an empty run yields header-only tables.
pub fn cmd_report(out: &Path, grid_step: f64) -> Result<Report> {
    if !out.is_dir() {
        bail!("records directory {} does not exist", out.display());
    }
    let manifest = if out.join(MANIFEST_FILE).exists() { Manifest::load(out)? } else { Manifest::default() };
    let discovery: Vec<DiscoveryRecord> = read_jsonl_or_empty(&out.join(DISCOVERY_FILE))?;
    let oracle = load_eval(out, MaskSource::Oracle)?;
    let estimated = load_eval(out, MaskSource::Estimated)?;
    let perturbed = load_eval(out, MaskSource::Perturbed)?;
    let mut map_records = perturbed.clone();
    map_records.extend(oracle.iter().cloned());
    map_records.extend(estimated.iter().cloned());
    map_records.extend(load_eval(out, MaskSource::Layered)?);
    map_records.extend(load_eval(out, MaskSource::Proximity)?);

    let dir = out.join(REPORTS_DIR);
    let maps = dir.join(MAPS_DIR);
    std::fs::create_dir_all(&maps).with_context(|| format!("creating {}", maps.display()))?;

    let report = Report {
        gaps: gap_table(&oracle),
        table2: table2(&manifest, &discovery, &estimated, &oracle),
        costs: cost_table(&perturbed),
        rewards: reward_maps(&map_records, &maps, grid_step)?,
    };
    write_csv(&dir.join("gap_table.csv"), &GAP_HEADER, &report.gaps)?;
    write_csv(&dir.join("table2.csv"), &TABLE2_HEADER, &report.table2)?;
    write_csv(&dir.join("cost_ratios.csv"), &COST_HEADER, &report.costs)?;
    write_csv(&dir.join("reward_fits.csv"), &REWARD_HEADER, &report.rewards)?;

    let rows: Vec<AttributionRow> = oracle.iter().map(AttributionRow::from_record).collect();
    let (terms, json) = if rows.is_empty() {
        (Vec::new(), serde_json::json!({ "error": "no oracle records" }))
    } else {
        match fit_attribution(&rows) {
            Ok(fit) => (fit.coefficients.clone(), serde_json::to_value(&fit)?),
            Err(e) => (Vec::new(), serde_json::json!({ "error": e.to_string() })),
        }
    };
    write_csv(&dir.join("attribution.csv"), &ATTRIBUTION_HEADER, &terms)?;
    write_json(&dir.join("attribution.json"), &json)?;
    Ok(report)
}
