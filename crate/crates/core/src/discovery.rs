//! Local Markov-boundary estimators driven by Fisher-z partial-correlation
//! tests, with cooperative wall-clock budgets.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeSet;
use crate::scalar::Real;
use crate::scm::TaskInstance;
use crate::stats::{fisher_z_test, CorrelationMatrix, DataMatrix, StatsError};

/// Sorted feature indices, never containing the target.
pub type FeatureMask = NodeSet;

/// Largest conditioning set HITON-MB tries when eliminating candidates.
pub const HITON_MAX_COND: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum DiscoveryError {
    #[error("alpha {0} not in (0, 1)")]
    InvalidAlpha(f64),
    #[error("target column {0} not present in the data")]
    UnknownTarget(usize),
    #[error("no tasks to run")]
    NoTasks,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GrowShrink,
    HitonMb,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::GrowShrink, Method::HitonMb];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GrowShrink => "grow_shrink",
            Method::HitonMb => "hiton_mb",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown discovery method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    /// `None` when the budget ran out.
    pub mask: Option<FeatureMask>,
    pub method: Method,
    pub ci_test_count: usize,
    pub wall_time_s: f64,
    pub completed: bool,
    pub budget_s: f64,
    /// Tests that could not be run (too few samples, singular conditioning
    /// set) and were counted as "dependent".
    pub forced_dependent: usize,
}

/// One JSONL line of discovery output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub task_id: String,
    pub method: Method,
    pub mask: Option<FeatureMask>,
    pub ci_tests: usize,
    pub wall_time_s: f64,
    pub completed: bool,
}

impl DiscoveryRecord {
    pub fn new(task_id: impl Into<String>, r: &DiscoveryResult) -> Self {
        Self {
            task_id: task_id.into(),
            method: r.method,
            mask: r.mask.clone(),
            ci_tests: r.ci_test_count,
            wall_time_s: r.wall_time_s,
            completed: r.completed,
        }
    }
}

struct OutOfBudget;

/// Counts tests, enforces the budget and maps column positions to node ids.
struct CiTester<'a, T: Real> {
    corr: &'a CorrelationMatrix<T>,
    alpha: T,
    start: Instant,
    budget_s: f64,
    tests: usize,
    forced: usize,
}

impl<'a, T: Real> CiTester<'a, T> {
    fn new(corr: &'a CorrelationMatrix<T>, alpha: f64, budget_s: f64) -> Self {
        Self { corr, alpha: T::c(alpha), start: Instant::now(), budget_s, tests: 0, forced: 0 }
    }

    /// True when `a` and `b` test independent given `s` (positions).
    fn independent(&mut self, a: usize, b: usize, s: &[usize]) -> Result<bool, OutOfBudget> {
        if !(self.start.elapsed().as_secs_f64() < self.budget_s) {
            return Err(OutOfBudget);
        }
        self.tests += 1;
        let outcome = self
            .corr
            .partial(a, b, s)
            .and_then(|r| fisher_z_test(r, self.corr.n(), s.len(), self.alpha));
        match outcome {
            Ok(res) => Ok(res.independent),
            Err(StatsError::InsufficientSamples { .. } | StatsError::Singular { .. }) => {
                self.forced += 1;
                Ok(false)
            }
            Err(e) => unreachable!("CI test arguments are built internally: {e}"),
        }
    }

    fn finish(self, method: Method, mask: Option<Vec<usize>>, ids: &[usize]) -> DiscoveryResult {
        let completed = mask.is_some();
        DiscoveryResult {
            mask: mask.map(|m| m.into_iter().map(|p| ids[p]).collect()),
            method,
            ci_test_count: self.tests,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            completed,
            budget_s: self.budget_s,
            forced_dependent: self.forced,
        }
    }
}

/// Positions other than `target`, by decreasing |marginal correlation| with
/// the target, ties by ascending position.
fn candidate_order<T: Real>(corr: &CorrelationMatrix<T>, target: usize, exclude: &[usize]) -> Vec<usize> {
    let mut cands: Vec<usize> = (0..corr.dim()).filter(|&c| c != target && !exclude.contains(&c)).collect();
    cands.sort_by(|&a, &b| {
        let (ra, rb) = (corr.get(a, target).abs(), corr.get(b, target).abs());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    cands
}

fn prepare<T: Real>(data: &DataMatrix<T>, target: usize, alpha: f64) -> Result<(CorrelationMatrix<T>, usize), DiscoveryError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DiscoveryError::InvalidAlpha(alpha));
    }
    let pos = data.position_of(target).ok_or(DiscoveryError::UnknownTarget(target))?;
    Ok((CorrelationMatrix::from_data(data), pos))
}

fn grow<T: Real>(t: &mut CiTester<'_, T>, target: usize, order: &[usize], set: &mut Vec<usize>) -> Result<(), OutOfBudget> {
    loop {
        let mut added = false;
        for &x in order {
            if set.contains(&x) {
                continue;
            }
            if !t.independent(x, target, set)? {
                set.push(x);
                added = true;
            }
        }
        if !added {
            return Ok(());
        }
    }
}

fn shrink_in_place<T: Real>(t: &mut CiTester<'_, T>, target: usize, set: &mut Vec<usize>) -> Result<(), OutOfBudget> {
    loop {
        let mut removed = false;
        let mut i = 0;
        while i < set.len() {
            let x = set[i];
            let rest: Vec<usize> = set.iter().copied().filter(|&v| v != x).collect();
            if t.independent(x, target, &rest)? {
                set.remove(i);
                removed = true;
            } else {
                i += 1;
            }
        }
        if !removed {
            return Ok(());
        }
    }
}

/// Grow-Shrink: greedy growth in marginal-association order until a full pass
/// adds nothing, then pruning to a fixed point.
pub fn grow_shrink<T: Real>(data: &DataMatrix<T>, target: usize, alpha: f64, budget_s: f64) -> Result<DiscoveryResult, DiscoveryError> {
    let (corr, y) = prepare(data, target, alpha)?;
    let mut t = CiTester::new(&corr, alpha, budget_s);
    let order = candidate_order(&corr, y, &[]);
    let mut set = Vec::new();
    let outcome = grow(&mut t, y, &order, &mut set).and_then(|()| shrink_in_place(&mut t, y, &mut set));
    let mask = outcome.ok().map(|()| set);
    Ok(t.finish(Method::GrowShrink, mask, data.column_ids()))
}

/// Shrink phase alone on a given mask (node ids). Returns the pruned mask.
pub fn shrink<T: Real>(data: &DataMatrix<T>, target: usize, mask: &FeatureMask, alpha: f64) -> Result<FeatureMask, DiscoveryError> {
    let (corr, y) = prepare(data, target, alpha)?;
    let mut set = data.positions_of(mask.members())?;
    let mut t = CiTester::new(&corr, alpha, f64::INFINITY);
    if shrink_in_place(&mut t, y, &mut set).is_err() {
        unreachable!("unbounded budget");
    }
    Ok(set.into_iter().map(|p| data.column_ids()[p]).collect())
}

/// Every subset of `items` with at most `max` elements that contains `must`
/// (when given), smallest first.
fn bounded_subsets(items: &[usize], max: usize, must: Option<usize>) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max.min(items.len()) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l: &usize| items.iter().position(|&v| v == l).unwrap() + 1);
            for &v in &items[start..] {
                let mut t = s.clone();
                t.push(v);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    match must {
        Some(m) => out.into_iter().filter(|s| s.contains(&m)).collect(),
        None => out,
    }
}

struct PcOutcome {
    pc: Vec<usize>,
    sepsets: HashMap<usize, Vec<usize>>,
}

/// HITON-PC around `target`: admission in marginal-association order, with
/// interleaved elimination over conditioning sets of size <= `HITON_MAX_COND`.
fn hiton_pc<T: Real>(t: &mut CiTester<'_, T>, corr: &CorrelationMatrix<T>, target: usize) -> Result<PcOutcome, OutOfBudget> {
    let mut pc: Vec<usize> = Vec::new();
    let mut sepsets = HashMap::new();
    for x in candidate_order(corr, target, &[]) {
        if t.independent(x, target, &[])? {
            sepsets.insert(x, Vec::new());
            continue;
        }
        pc.push(x);
        // subsets not containing x were already tried against older members
        let mut i = 0;
        while i < pc.len() {
            let y = pc[i];
            let others: Vec<usize> = pc.iter().copied().filter(|&v| v != y).collect();
            let must = if y == x { None } else { Some(x) };
            let mut separated = None;
            for s in bounded_subsets(&others, HITON_MAX_COND, must) {
                if s.is_empty() {
                    continue;
                }
                if t.independent(y, target, &s)? {
                    separated = Some(s);
                    break;
                }
            }
            match separated {
                Some(s) => {
                    sepsets.insert(y, s);
                    pc.remove(i);
                }
                None => i += 1,
            }
        }
    }
    Ok(PcOutcome { pc, sepsets })
}

fn hiton_inner<T: Real>(t: &mut CiTester<'_, T>, corr: &CorrelationMatrix<T>, y: usize) -> Result<Vec<usize>, OutOfBudget> {
    let PcOutcome { pc, sepsets } = hiton_pc(t, corr, y)?;
    let mut mask = pc.clone();
    for &c in &pc {
        let around_c = hiton_pc(t, corr, c)?;
        for s in around_c.pc {
            if s == y || mask.contains(&s) {
                continue;
            }
            let Some(sep) = sepsets.get(&s) else { continue };
            let mut cond = sep.clone();
            if !cond.contains(&c) {
                cond.push(c);
            }
            if !t.independent(s, y, &cond)? {
                mask.push(s);
            }
        }
    }
    Ok(mask)
}

/// HITON-MB: parents/children of the target, then spouses found through each
/// admitted neighbour's own parent/child set.
pub fn hiton_mb<T: Real>(data: &DataMatrix<T>, target: usize, alpha: f64, budget_s: f64) -> Result<DiscoveryResult, DiscoveryError> {
    let (corr, y) = prepare(data, target, alpha)?;
    let mut t = CiTester::new(&corr, alpha, budget_s);
    let mask = hiton_inner(&mut t, &corr, y).ok();
    Ok(t.finish(Method::HitonMb, mask, data.column_ids()))
}

pub fn discover<T: Real>(method: Method, data: &DataMatrix<T>, target: usize, alpha: f64, budget_s: f64) -> Result<DiscoveryResult, DiscoveryError> {
    match method {
        Method::GrowShrink => grow_shrink(data, target, alpha, budget_s),
        Method::HitonMb => hiton_mb(data, target, alpha, budget_s),
    }
}

/// Runs `method` on each task in turn. Per-task errors are returned in place.
pub fn run_budgeted(
    method: Method,
    tasks: &[TaskInstance],
    alpha: f64,
    budget_s: f64,
) -> Result<Vec<Result<DiscoveryRecord, DiscoveryError>>, DiscoveryError> {
    if tasks.is_empty() {
        return Err(DiscoveryError::NoTasks);
    }
    Ok(tasks
        .iter()
        .map(|task| {
            discover(method, &task.data_matrix(), task.target(), alpha, budget_s)
                .map(|r| DiscoveryRecord::new(task.task_id(), &r))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_bounded_and_filtered() {
        let all = bounded_subsets(&[1, 2, 3, 4], 2, None);
        assert_eq!(all.len(), 1 + 4 + 6);
        let with3 = bounded_subsets(&[1, 2, 3, 4], 3, Some(3));
        assert_eq!(with3.len(), 1 + 3 + 3);
        assert!(with3.iter().all(|s| s.contains(&3) && s.len() <= 3));
        assert_eq!(bounded_subsets(&[], 3, None), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn method_tags() {
        assert_eq!("hiton_mb".parse::<Method>().unwrap(), Method::HitonMb);
        assert_eq!(serde_json::to_string(&Method::GrowShrink).unwrap(), "\"grow_shrink\"");
        assert!("ges".parse::<Method>().is_err());
    }
}
