//! Scoring masks against the oracle boundary, test-RMSE evaluation with gap
//! bookkeeping, FN/FP perturbations, and the linear summary fits built on top.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2};
use num_rational::Ratio;
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::{FeatureMask, Method};
use crate::graph::NodeSet;
use crate::scm::{Family, TaskInstance};
use crate::seed::{self, derive_seed, seed_from_str};
use crate::stats::linalg::{cholesky, cholesky_solve};
use crate::stats::{self, BuiltinRegressor, DataMatrix, FitSettings, Regressor, RegressorKind, StatsError};

/// Held-out share of rows in the per-task split.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task {task_id}: {source}")]
    Fit { task_id: String, source: StatsError },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("perturbation size {j} out of range (at most {max})")]
    PerturbationRange { j: usize, max: usize },
    #[error("rank-deficient design: term `{0}` is collinear with earlier terms")]
    RankDeficient(String),
    #[error("cost ratio undefined: alpha_fp = {alpha_fp} (alpha_fn = {alpha_fn})")]
    UndefinedRatio { alpha_fn: f64, alpha_fp: f64 },
    #[error("not enough data: {0}")]
    InsufficientRecords(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskScore {
    pub tp_count: usize,
    pub fn_count: usize,
    pub fp_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MaskScore {
    /// Precision as an exact fraction of the counts.
    pub fn precision_exact(&self) -> Ratio<usize> {
        match self.tp_count + self.fp_count {
            0 if self.fn_count == 0 => Ratio::from_integer(1),
            0 => Ratio::from_integer(0),
            d => Ratio::new(self.tp_count, d),
        }
    }

    pub fn recall_exact(&self) -> Ratio<usize> {
        match self.tp_count + self.fn_count {
            0 => Ratio::from_integer(1),
            d => Ratio::new(self.tp_count, d),
        }
    }
}

/// Counts and rates of `mask` against `oracle`. Empty predictions score
/// precision 0 unless the oracle is empty too; an empty oracle has recall 1.
pub fn score_mask(mask: &FeatureMask, oracle: &FeatureMask) -> MaskScore {
    let tp = mask.intersection(oracle).len();
    let fp = mask.len() - tp;
    let fn_ = oracle.len() - tp;
    let ratio = |r: Ratio<usize>| *r.numer() as f64 / *r.denom() as f64;
    let mut s = MaskScore { tp_count: tp, fn_count: fn_, fp_count: fp, precision: 0.0, recall: 0.0, f1: 0.0 };
    s.precision = ratio(s.precision_exact());
    s.recall = ratio(s.recall_exact());
    s.f1 = if s.precision + s.recall > 0.0 { 2.0 * s.precision * s.recall / (s.precision + s.recall) } else { 0.0 };
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskKind {
    All,
    Oracle,
    Estimated,
    Layered(usize),
    Proximity(usize),
    Perturbed,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskKind::All => f.write_str("all"),
            MaskKind::Oracle => f.write_str("oracle"),
            MaskKind::Estimated => f.write_str("estimated"),
            MaskKind::Layered(k) => write!(f, "layered_{k}"),
            MaskKind::Proximity(r) => write!(f, "proximity_{r}"),
            MaskKind::Perturbed => f.write_str("perturbed"),
        }
    }
}

impl FromStr for MaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let level = |rest: &str| rest.parse::<usize>().map_err(|_| format!("bad mask kind `{s}`"));
        match s {
            "all" => Ok(MaskKind::All),
            "oracle" => Ok(MaskKind::Oracle),
            "estimated" => Ok(MaskKind::Estimated),
            "perturbed" => Ok(MaskKind::Perturbed),
            _ => {
                if let Some(k) = s.strip_prefix("layered_") {
                    Ok(MaskKind::Layered(level(k)?))
                } else if let Some(r) = s.strip_prefix("proximity_") {
                    Ok(MaskKind::Proximity(level(r)?))
                } else {
                    Err(format!("bad mask kind `{s}`"))
                }
            }
        }
    }
}

impl Serialize for MaskKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MaskKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    FnOnly,
    FpOnly,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbKind,
    pub j_fn: usize,
    pub j_fp: usize,
    pub rep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub regressor: String,
    pub mask_kind: MaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub mask: FeatureMask,
    pub rmse_all: f64,
    pub rmse_mask: f64,
    pub rmse_oracle: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub prediction_gain: f64,
    pub hyperparameter: f64,
    pub score: MaskScore,
    #[serde(rename = "F")]
    pub f: usize,
    pub n: usize,
    pub family: Family,
    pub density: f64,
    pub redundancy_ratio: f64,
    pub boundary_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

type Memo = Arc<Mutex<Option<(f64, f64)>>>;

/// Evaluates masks on one task with a fixed train/test split. RMSE values are
/// memoised per (regressor, mask); each entry is computed by exactly one thread
/// and read by any number afterwards.
pub struct TaskEvaluator<'a> {
    task: &'a TaskInstance,
    train: DataMatrix<f64>,
    test: DataMatrix<f64>,
    y_train: Array1<f64>,
    y_test: Array1<f64>,
    cv_seed: u64,
    memo: Mutex<HashMap<(String, Vec<usize>), Memo>>,
}

impl<'a> TaskEvaluator<'a> {
    pub fn new(task: &'a TaskInstance) -> Result<Self> {
        let key = seed_from_str(task.task_id());
        let fit_err = |source| EvalError::Fit { task_id: task.task_id().to_string(), source };
        let (train, test) = stats::split(&task.data_matrix(), TEST_FRACTION, derive_seed(key, "split", 0)).map_err(fit_err)?;
        let y = task.target();
        Ok(Self {
            task,
            y_train: train.column(y).to_owned(),
            y_test: test.column(y).to_owned(),
            train,
            test,
            cv_seed: derive_seed(key, "cv", 0),
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn task(&self) -> &TaskInstance {
        self.task
    }

    pub fn builtin(&self, kind: RegressorKind) -> BuiltinRegressor<f64> {
        BuiltinRegressor { kind, settings: FitSettings::default().with_cv_seed(self.cv_seed) }
    }

    fn check_mask(&self, mask: &FeatureMask) -> Result<()> {
        let target = self.task.target();
        let m = self.task.dag.node_count();
        match mask.iter().find(|&v| v == target || v >= m) {
            Some(v) => Err(EvalError::InvalidMask(format!("member {v} is the target or out of range"))),
            None => Ok(()),
        }
    }

    /// Test RMSE and selected penalty of `reg` fitted on the mask columns.
    pub fn rmse(&self, reg: &dyn Regressor<f64>, mask: &FeatureMask) -> Result<(f64, f64)> {
        self.check_mask(mask)?;
        let cell = {
            let mut memo = self.memo.lock().expect("memo lock");
            memo.entry((reg.tag().to_string(), mask.members().to_vec())).or_default().clone()
        };
        let mut slot = cell.lock().expect("memo entry lock");
        if let Some(v) = *slot {
            return Ok(v);
        }
        let fit_err = |source| EvalError::Fit { task_id: self.task.task_id().to_string(), source };
        let xt = self.train.select_ids(mask.members()).map_err(fit_err)?;
        let xv = self.test.select_ids(mask.members()).map_err(fit_err)?;
        let fit = reg.fit(&xt, self.y_train.view()).map_err(fit_err)?;
        let pred = stats::predict(&fit, &xv).map_err(fit_err)?;
        let value = (stats::rmse(pred.view(), self.y_test.view()).map_err(fit_err)?, fit.hyperparameter);
        *slot = Some(value);
        Ok(value)
    }

    pub fn evaluate(&self, kind: RegressorKind, mask_kind: MaskKind, mask: &FeatureMask) -> Result<EvalRecord> {
        self.evaluate_with(&self.builtin(kind), mask_kind, mask)
    }

    pub fn evaluate_with(&self, reg: &dyn Regressor<f64>, mask_kind: MaskKind, mask: &FeatureMask) -> Result<EvalRecord> {
        let all: FeatureMask = self.task.features().into_iter().collect();
        let (rmse_all, _) = self.rmse(reg, &all)?;
        let (rmse_oracle, _) = self.rmse(reg, &self.task.oracle_boundary)?;
        let (rmse_mask, hyperparameter) = self.rmse(reg, mask)?;
        let gain = rmse_all - rmse_mask;
        let meta = &self.task.meta;
        Ok(EvalRecord {
            task_id: meta.task_id.clone(),
            regressor: reg.tag().to_string(),
            mask_kind,
            method: None,
            mask: mask.clone(),
            rmse_all,
            rmse_mask,
            rmse_oracle,
            gap_abs: gain,
            gap_rel: gain / rmse_all,
            prediction_gain: gain,
            hyperparameter,
            score: score_mask(mask, &self.task.oracle_boundary),
            f: meta.f,
            n: meta.n,
            family: meta.family,
            density: meta.density,
            redundancy_ratio: meta.redundancy_ratio,
            boundary_size: self.task.oracle_boundary.len(),
            perturbation: None,
        })
    }
}

/// Oracle minus `j` uniformly chosen members.
pub fn perturb_fn(oracle: &FeatureMask, j: usize, seed: u64) -> Result<FeatureMask> {
    if j > oracle.len() {
        return Err(EvalError::PerturbationRange { j, max: oracle.len() });
    }
    let mut rng = seed::rng(seed);
    let drop: BTreeSet<usize> = sample_indices(&mut rng, oracle.len(), j).into_iter().map(|i| oracle.members()[i]).collect();
    Ok(oracle.iter().filter(|v| !drop.contains(v)).collect())
}

/// Oracle plus `j` uniformly chosen members of `universe` outside it.
pub fn perturb_fp(oracle: &FeatureMask, j: usize, universe: &[usize], seed: u64) -> Result<FeatureMask> {
    let outside: Vec<usize> = universe.iter().copied().filter(|&v| !oracle.contains(v)).collect();
    if j > outside.len() {
        return Err(EvalError::PerturbationRange { j, max: outside.len() });
    }
    let mut rng = seed::rng(seed);
    let mut mask = oracle.clone();
    for i in sample_indices(&mut rng, outside.len(), j) {
        mask.insert(outside[i]);
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub sizes: Vec<usize>,
    pub reps: usize,
    /// Also draw masks with equal numbers of removals and additions.
    pub mixed: bool,
}

impl Default for PerturbationPlan {
    fn default() -> Self {
        Self { sizes: vec![1, 2, 4, 8], reps: 20, mixed: true }
    }
}

/// All perturbed masks of `oracle` in `plan`. Sizes are capped by what the
/// oracle and its complement allow, and duplicates after capping are dropped.
pub fn perturbation_masks(oracle: &FeatureMask, universe: &[usize], plan: &PerturbationPlan, seed: u64) -> Vec<(Perturbation, FeatureMask)> {
    let outside = universe.iter().filter(|&&v| !oracle.contains(v)).count();
    let capped = |max: usize| -> Vec<usize> {
        let set: BTreeSet<usize> = plan.sizes.iter().map(|&j| j.min(max)).filter(|&j| j > 0).collect();
        set.into_iter().collect()
    };
    let mut out = Vec::new();
    let mut push = |kind: PerturbKind, j_fn: usize, j_fp: usize| {
        for rep in 0..plan.reps {
            let s = derive_seed(seed, &format!("{kind:?}/{j_fn}/{j_fp}"), rep as u64);
            let dropped = perturb_fn(oracle, j_fn, derive_seed(s, "fn", 0)).expect("capped size");
            let added = perturb_fp(oracle, j_fp, universe, derive_seed(s, "fp", 0)).expect("capped size");
            let mask = dropped.union(&added.difference(oracle));
            out.push((Perturbation { kind, j_fn, j_fp, rep }, mask));
        }
    };
    for j in capped(oracle.len()) {
        push(PerturbKind::FnOnly, j, 0);
    }
    for j in capped(outside) {
        push(PerturbKind::FpOnly, 0, j);
    }
    if plan.mixed && !oracle.is_empty() && outside > 0 {
        for j in plan.sizes.iter().copied().filter(|&j| j > 0) {
            let pair = (j.min(oracle.len()), j.min(outside));
            if plan.sizes.iter().take_while(|&&i| i != j).any(|&i| (i.min(oracle.len()), i.min(outside)) == pair) {
                continue;
            }
            push(PerturbKind::Mixed, pair.0, pair.1);
        }
    }
    out
}

/// Least-squares fit of `y` on the columns of `x` (which carry their own
/// intercept column if wanted).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub r2: f64,
    pub sse: f64,
}

pub fn least_squares(x: &Array2<f64>, y: &Array1<f64>, names: &[String]) -> Result<LinearFit> {
    let (n, p) = x.dim();
    if n <= p {
        return Err(EvalError::InsufficientRecords(format!("{n} rows for {p} terms")));
    }
    // unit-norm columns keep the rank test scale free
    let norms: Vec<f64> = x.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    if let Some(j) = norms.iter().position(|&v| v == 0.0) {
        return Err(EvalError::RankDeficient(names[j].clone()));
    }
    let mut z = x.clone();
    for (mut c, &s) in z.columns_mut().into_iter().zip(&norms) {
        c.mapv_inplace(|v| v / s);
    }
    let gram = z.t().dot(&z);
    let l = cholesky(gram.view(), 1e-10).map_err(|j| EvalError::RankDeficient(names[j].clone()))?;
    let b = cholesky_solve(l.view(), z.t().dot(y).view());
    let coefficients: Vec<f64> = b.iter().zip(&norms).map(|(v, s)| v / s).collect();
    let resid = y - &x.dot(&Array1::from(coefficients.clone()));
    let sse = resid.dot(&resid);
    let mean = y.mean().unwrap_or(0.0);
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    Ok(LinearFit { coefficients, r2, sse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFit {
    pub alpha_fn: f64,
    pub alpha_fp: f64,
    pub ratio: f64,
    pub fit_r2: f64,
    pub fn_records: usize,
    pub fp_records: usize,
    pub total_records: usize,
}

/// Joint no-intercept fit of `rmse_mask - rmse_oracle` on `(fn_count, fp_count)`
/// over the FN-only and FP-only perturbation records. Mixed perturbations are
/// left to the reward map.
pub fn fit_cost_coefficients(records: &[EvalRecord]) -> Result<CostFit> {
    let rows: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| matches!(r.perturbation, Some(p) if p.kind != PerturbKind::Mixed))
        .collect();
    let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| {
        if j == 0 {
            rows[i].score.fn_count as f64
        } else {
            rows[i].score.fp_count as f64
        }
    });
    let y: Array1<f64> = rows.iter().map(|r| r.rmse_mask - r.rmse_oracle).collect();
    let fit = least_squares(&x, &y, &["fn_count".to_string(), "fp_count".to_string()])?;
    let (alpha_fn, alpha_fp) = (fit.coefficients[0], fit.coefficients[1]);
    if alpha_fp.abs() <= 1e-12 * alpha_fn.abs().max(1.0) {
        return Err(EvalError::UndefinedRatio { alpha_fn, alpha_fp });
    }
    Ok(CostFit {
        alpha_fn,
        alpha_fp,
        ratio: alpha_fn / alpha_fp,
        fit_r2: fit.r2,
        fn_records: rows.iter().filter(|r| r.score.fn_count > 0).count(),
        fp_records: rows.iter().filter(|r| r.score.fp_count > 0).count(),
        total_records: rows.len(),
    })
}

/// One observation for the attribution model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub response: f64,
    pub redundancy_ratio: f64,
    #[serde(rename = "F")]
    pub f: usize,
    pub family: String,
    pub regressor: String,
    pub density: f64,
}

impl AttributionRow {
    /// Relative MB gap of an oracle-mask record.
    pub fn from_record(r: &EvalRecord) -> Self {
        Self {
            response: r.gap_rel,
            redundancy_ratio: r.redundancy_ratio,
            f: r.f,
            family: r.family.to_string(),
            regressor: r.regressor.clone(),
            density: r.density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionFit {
    pub coefficients: Vec<(String, f64)>,
    pub r2: f64,
    pub r2_adjusted: f64,
    pub univariate_r2_adjusted: Vec<(String, f64)>,
    pub rows: usize,
}

impl AttributionFit {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.coefficients.iter().find(|(t, _)| t == term).map(|&(_, v)| v)
    }
}

fn levels(values: impl Iterator<Item = String>) -> Vec<String> {
    values.collect::<BTreeSet<_>>().into_iter().collect()
}

/// Dummy columns for every level but the first.
fn dummies(name: &str, levels: &[String], value: &str) -> Vec<(String, f64)> {
    levels[1..].iter().map(|l| (format!("{name}[T.{l}]"), f64::from(u8::from(l == value)))).collect()
}

fn adjusted(r2: f64, n: usize, p: usize) -> f64 {
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0)
}

fn fit_terms(rows: &[AttributionRow], build: impl Fn(&AttributionRow) -> Vec<(String, f64)>) -> Result<(Vec<String>, LinearFit)> {
    let first = build(&rows[0]);
    let mut names = vec!["intercept".to_string()];
    names.extend(first.iter().map(|(n, _)| n.clone()));
    let p = names.len();
    let mut x = Array2::zeros((rows.len(), p));
    for (i, r) in rows.iter().enumerate() {
        x[[i, 0]] = 1.0;
        for (j, (_, v)) in build(r).into_iter().enumerate() {
            x[[i, j + 1]] = v;
        }
    }
    let y: Array1<f64> = rows.iter().map(|r| r.response).collect();
    let fit = least_squares(&x, &y, &names)?;
    Ok((names, fit))
}

/// Main effects for redundancy ratio, log10 F, SCM family and regressor plus
/// regressor interactions with the two numeric terms. Factors are dummy coded
/// against their first level in sorted order.
pub fn fit_attribution(rows: &[AttributionRow]) -> Result<AttributionFit> {
    if rows.is_empty() {
        return Err(EvalError::InsufficientRecords("no attribution rows".into()));
    }
    let families = levels(rows.iter().map(|r| r.family.clone()));
    let regressors = levels(rows.iter().map(|r| r.regressor.clone()));
    let densities = levels(rows.iter().map(|r| r.density.to_string()));
    for (factor, lv) in [("scm_family", &families), ("regressor", &regressors)] {
        if lv.len() < 2 {
            return Err(EvalError::InsufficientRecords(format!("factor {factor} has a single level")));
        }
    }
    let full = |r: &AttributionRow| {
        let lf = (r.f as f64).log10();
        let mut t = vec![("redundancy_ratio".to_string(), r.redundancy_ratio), ("log10_F".to_string(), lf)];
        t.extend(dummies("scm_family", &families, &r.family));
        let reg = dummies("regressor", &regressors, &r.regressor);
        t.extend(reg.iter().cloned());
        for (name, v) in &reg {
            t.push((format!("{name}:redundancy_ratio"), v * r.redundancy_ratio));
        }
        for (name, v) in &reg {
            t.push((format!("{name}:log10_F"), v * lf));
        }
        t
    };
    let (names, fit) = fit_terms(rows, full)?;
    let n = rows.len();
    let mut univariate = Vec::new();
    type Builder<'b> = Box<dyn Fn(&AttributionRow) -> Vec<(String, f64)> + 'b>;
    let factors: Vec<(&str, Builder)> = vec![
        ("redundancy_ratio", Box::new(|r: &AttributionRow| vec![("redundancy_ratio".to_string(), r.redundancy_ratio)])),
        ("log10_F", Box::new(|r: &AttributionRow| vec![("log10_F".to_string(), (r.f as f64).log10())])),
        ("scm_family", Box::new(|r: &AttributionRow| dummies("scm_family", &families, &r.family))),
        ("regressor", Box::new(|r: &AttributionRow| dummies("regressor", &regressors, &r.regressor))),
        ("density", Box::new(|r: &AttributionRow| dummies("density", &densities, &r.density.to_string()))),
    ];
    for (factor, build) in factors {
        let (terms, f) = match fit_terms(rows, build) {
            Ok(v) => v,
            // single-level or constant factors explain nothing
            Err(EvalError::RankDeficient(_)) => {
                univariate.push((factor.to_string(), 0.0));
                continue;
            }
            Err(e) => return Err(e),
        };
        if terms.len() == 1 {
            univariate.push((factor.to_string(), 0.0));
        } else {
            univariate.push((factor.to_string(), adjusted(f.r2, n, terms.len() - 1)));
        }
    }
    let p = fit.coefficients.len() - 1;
    Ok(AttributionFit {
        coefficients: names.into_iter().zip(fit.coefficients).collect(),
        r2: fit.r2,
        r2_adjusted: adjusted(fit.r2, n, p),
        univariate_r2_adjusted: univariate,
        rows: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFamilies {
    pub layered: Vec<(usize, NodeSet)>,
    pub proximity: Vec<(usize, NodeSet)>,
}

/// Layered blankets `L<=1..=k_max` and proximity masks of radius `1..=r_max`
/// around the task target, with later duplicates removed.
pub fn mask_families(task: &TaskInstance, k_max: usize, r_max: usize) -> Result<MaskFamilies> {
    let dag = &task.dag;
    let y = task.target();
    let bad = |e: crate::graph::GraphError| EvalError::InvalidMask(e.to_string());
    let mut layered = Vec::new();
    if k_max > 0 {
        for (i, l) in dag.layered_blankets(y, k_max).map_err(bad)?.into_iter().enumerate() {
            if layered.last().map(|(_, prev)| prev != &l).unwrap_or(true) {
                layered.push((i + 1, l));
            }
        }
    }
    let mut proximity = Vec::new();
    for r in 1..=r_max {
        let m = dag.proximity_mask(y, r).map_err(bad)?;
        if proximity.last().map(|(_, prev)| prev != &m).unwrap_or(true) {
            proximity.push((r, m));
        }
    }
    Ok(MaskFamilies { layered, proximity })
}
