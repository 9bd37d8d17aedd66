use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use blanket_core::discovery::Method;
use blanket_core::eval::{EvalRecord, PerturbationPlan};
use blanket_core::Family;
use blanket_harness::jsonl::read_jsonl;
use blanket_harness::pipeline::{bundle_dir, eval_path, DISCOVERY_FILE, DISCOVERY_SUMMARY_FILE, MANIFEST_FILE};
use blanket_harness::report::REPORTS_DIR;
use blanket_harness::{cmd_discover, cmd_evaluate, cmd_generate, cmd_report, GridCell, Manifest, MaskSource, RunConfig};

fn small_config() -> RunConfig {
    RunConfig {
        grid: vec![
            GridCell::new(12, 0.3, Family::LinearGaussian, (0.1, 0.9), 3),
            GridCell::new(16, 0.25, Family::AdditiveGaussian, (0.1, 0.9), 3),
        ],
        regressors: vec![blanket_core::RegressorKind::Ols, blanket_core::RegressorKind::Ridge],
        perturbation: PerturbationPlan { sizes: vec![1, 2], reps: 3, mixed: true },
        master_seed: 3,
        ..RunConfig::default()
    }
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn generate_is_idempotent_and_repairs_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let first = cmd_generate(&cfg, dir.path()).unwrap();
    assert_eq!((first.generated, first.skipped, first.failed), (6, 0, 0));
    let manifest = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    let again = cmd_generate(&cfg, dir.path()).unwrap();
    assert_eq!((again.generated, again.skipped), (0, 6));
    assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);

    let m = Manifest::load(dir.path()).unwrap();
    assert_eq!(m.tasks.len(), 6);
    let victim = bundle_dir(dir.path(), &m.tasks[0].task_id).join("data.csv");
    let text = std::fs::read_to_string(&victim).unwrap();
    std::fs::write(&victim, text.replacen('1', "2", 1)).unwrap();
    let repaired = cmd_generate(&cfg, dir.path()).unwrap();
    assert_eq!((repaired.generated, repaired.skipped), (1, 5));
    assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
}

#[test]
fn impossible_cells_are_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    // no node of an edgeless graph has a non-empty boundary
    cfg.grid.push(GridCell::new(10, 0.0, Family::LinearGaussian, (0.2, 0.9), 2));
    let s = cmd_generate(&cfg, dir.path()).unwrap();
    assert_eq!((s.generated, s.failed), (6, 2));
    let m = Manifest::load(dir.path()).unwrap();
    assert_eq!(m.failures.len(), 2);
    assert!(m.failures.iter().all(|f| f.cell == 2 && f.config.density == 0.0 && !f.error.is_empty()));
}

#[test]
fn discovery_summary_shape_and_empty_methods() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cmd_generate(&cfg, dir.path()).unwrap();
    let rows = cmd_discover(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 2 * Method::ALL.len());
    let (header, csv) = csv_rows(&dir.path().join(DISCOVERY_SUMMARY_FILE));
    assert_eq!(&header[..7], ["F", "method", "f1", "precision", "recall", "time_s", "completion"]);
    assert_eq!(csv.len(), rows.len());

    cfg.methods.clear();
    assert!(cmd_discover(&cfg, dir.path()).unwrap().is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join(DISCOVERY_FILE)).unwrap(), "");
}

#[test]
fn estimated_masks_need_discovery_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    cmd_generate(&cfg, dir.path()).unwrap();
    let err = cmd_evaluate(&cfg, dir.path(), MaskSource::Estimated).unwrap_err();
    assert!(err.to_string().contains(DISCOVERY_FILE));
}

#[test]
fn serial_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, 1), (&b, 3)] {
        cfg.parallelism = jobs;
        cmd_generate(&cfg, out).unwrap();
        for s in [MaskSource::All, MaskSource::Oracle, MaskSource::Layered] {
            cmd_evaluate(&cfg, out, s).unwrap();
        }
    }
    for s in [MaskSource::All, MaskSource::Oracle, MaskSource::Layered] {
        let mut ra: Vec<String> = std::fs::read_to_string(eval_path(&a, s)).unwrap().lines().map(String::from).collect();
        let mut rb: Vec<String> = std::fs::read_to_string(eval_path(&b, s)).unwrap().lines().map(String::from).collect();
        ra.sort();
        rb.sort();
        assert_eq!(ra, rb, "{s}");
    }
    let all: Vec<EvalRecord> = read_jsonl(&eval_path(&a, MaskSource::All)).unwrap();
    assert!(all.iter().all(|r| r.prediction_gain == 0.0 && r.rmse_mask == r.rmse_all));
    // layered@1 is the boundary itself
    let oracle: Vec<EvalRecord> = read_jsonl(&eval_path(&a, MaskSource::Oracle)).unwrap();
    let layered: Vec<EvalRecord> = read_jsonl(&eval_path(&a, MaskSource::Layered)).unwrap();
    for o in &oracle {
        let l1 = layered
            .iter()
            .find(|l| l.task_id == o.task_id && l.regressor == o.regressor && l.mask_kind.to_string() == "layered_1")
            .unwrap();
        assert_eq!(l1.rmse_mask, o.rmse_mask);
    }
}

#[test]
fn report_on_empty_directory_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_report(dir.path(), 0.05).unwrap();
    assert!(report.gaps.is_empty() && report.table2.is_empty());
    let reports = dir.path().join(REPORTS_DIR);
    for (file, first) in [
        ("gap_table.csv", "F"),
        ("table2.csv", "F"),
        ("cost_ratios.csv", "F"),
        ("reward_fits.csv", "F"),
        ("attribution.csv", "term"),
    ] {
        let (header, rows) = csv_rows(&reports.join(file));
        assert_eq!(header[0], first, "{file}");
        assert!(rows.is_empty(), "{file}");
    }
    let (h, _) = csv_rows(&reports.join("table2.csv"));
    assert_eq!(h, ["F", "method", "regressor", "f1", "precision", "recall", "win_rate", "time_s", "completion"]);
    assert!(cmd_report(&dir.path().join("missing"), 0.05).is_err());
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[test]
fn report_matches_direct_aggregation_of_raw_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = small_config();
    cmd_generate(&cfg, out).unwrap();
    cmd_discover(&cfg, out).unwrap();
    for s in MaskSource::ALL {
        cmd_evaluate(&cfg, out, s).unwrap();
    }
    cmd_report(out, 0.05).unwrap();
    let reports = out.join(REPORTS_DIR);

    // gap table from raw JSON values, independent of the record types
    let raw = |s: MaskSource| -> Vec<serde_json::Value> {
        std::fs::read_to_string(eval_path(out, s)).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    let mut gaps: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for v in raw(MaskSource::Oracle) {
        gaps.entry((v["F"].as_u64().unwrap(), v["regressor"].as_str().unwrap().to_string()))
            .or_default()
            .push(v["gap_rel"].as_f64().unwrap());
    }
    let (_, rows) = csv_rows(&reports.join("gap_table.csv"));
    assert_eq!(rows.len(), gaps.len());
    for row in rows {
        let key = (row[0].parse().unwrap(), row[1].clone());
        let want = median(gaps.get_mut(&key).unwrap());
        assert!((row[2].parse::<f64>().unwrap() - want).abs() < 1e-15, "{key:?}");
    }

    // win rates: strict wins of estimated masks over all features, per attempted task
    let attempts: BTreeMap<String, u64> = {
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
        m["tasks"].as_array().unwrap().iter().map(|t| (t["task_id"].as_str().unwrap().to_string(), t["config"]["F"].as_u64().unwrap())).collect()
    };
    let mut tried: BTreeMap<(u64, String), f64> = BTreeMap::new();
    for line in std::fs::read_to_string(out.join(DISCOVERY_FILE)).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        *tried.entry((attempts[v["task_id"].as_str().unwrap()], v["method"].as_str().unwrap().to_string())).or_default() += 1.0;
    }
    let mut wins: BTreeMap<(u64, String, String), f64> = BTreeMap::new();
    for v in raw(MaskSource::Estimated) {
        let key = (v["F"].as_u64().unwrap(), v["method"].as_str().unwrap().to_string(), v["regressor"].as_str().unwrap().to_string());
        let e = wins.entry(key).or_default();
        if v["rmse_mask"].as_f64().unwrap() < v["rmse_all"].as_f64().unwrap() {
            *e += 1.0;
        }
    }
    let (_, rows) = csv_rows(&reports.join("table2.csv"));
    let mut checked = 0;
    for row in &rows {
        if row[1] == "oracle" {
            continue;
        }
        let f: u64 = row[0].parse().unwrap();
        let want = wins.get(&(f, row[1].clone(), row[2].clone())).copied().unwrap_or(0.0) / tried[&(f, row[1].clone())];
        assert!((row[6].parse::<f64>().unwrap() - want).abs() < 1e-15);
        checked += 1;
    }
    assert_eq!(checked, 2 * Method::ALL.len() * cfg.regressors.len());

    let (_, costs) = csv_rows(&reports.join("cost_ratios.csv"));
    assert_eq!(costs.len(), 2 * cfg.regressors.len());
    for stem in ["F12_ridge", "F16_ols"] {
        let maps = reports.join("maps");
        let layered: Vec<[f64; 2]> = serde_json::from_str(&std::fs::read_to_string(maps.join(format!("{stem}_layered.json"))).unwrap()).unwrap();
        assert!(layered.iter().all(|p| p[1] == 1.0));
        let (h, cells) = csv_rows(&maps.join(format!("{stem}_surface.csv")));
        assert_eq!(h, ["precision", "recall", "predicted_gain"]);
        assert_eq!(cells.len(), 20 * 20);
    }
}

#[test]
fn all_feature_masks_never_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    cmd_generate(&cfg, dir.path()).unwrap();
    cmd_evaluate(&cfg, dir.path(), MaskSource::All).unwrap();
    let recs: Vec<EvalRecord> = read_jsonl(&eval_path(dir.path(), MaskSource::All)).unwrap();
    assert_eq!(blanket_harness::report::win_count(&recs), 0);
}

#[test]
fn cli_runs_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    let mut cfg = small_config();
    cfg.grid.truncate(1);
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = dir.path().join("run");
    let bin = env!("CARGO_BIN_EXE_blanket");
    let run = |args: &[&str]| {
        let status = Command::new(bin)
            .args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "8", "--jobs", "2"])
            .args(args)
            .status()
            .unwrap();
        assert!(status.success(), "{args:?}");
    };
    run(&["generate"]);
    run(&["discover"]);
    run(&["evaluate", "--masks", "all,oracle,estimated"]);
    run(&["report"]);
    assert_eq!(Manifest::load(&out).unwrap().master_seed, 8);
    assert!(out.join(REPORTS_DIR).join("table2.csv").exists());
    let bad = Command::new(bin).args(["--out", out.to_str().unwrap(), "evaluate", "--masks", "bogus"]).output().unwrap();
    assert!(!bad.status.success());
}

mod torn_writes {
    use blanket_harness::jsonl::{read_jsonl, OrderedWriter};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn truncated_file_reads_as_a_prefix(values in proptest::collection::vec(any::<(u32, String)>(), 1..20), cut in any::<prop::sample::Index>()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.jsonl");
            let w = OrderedWriter::create(&path).unwrap();
            let s = w.sender();
            for (i, v) in values.iter().enumerate() {
                s.send(i, std::slice::from_ref(v)).unwrap();
            }
            drop(s);
            prop_assert_eq!(w.finish().unwrap(), values.len());
            let bytes = std::fs::read(&path).unwrap();
            let keep = cut.index(bytes.len() + 1);
            std::fs::write(&path, &bytes[..keep]).unwrap();
            let back: Vec<(u32, String)> = read_jsonl(&path).unwrap();
            let complete = bytes[..keep].iter().filter(|&&b| b == b'\n').count();
            prop_assert_eq!(&back[..], &values[..complete]);
        }
    }
}
