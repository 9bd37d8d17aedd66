//! Linear prediction-gain model over mask composition counts, evaluated on a
//! precision/recall lattice.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::discovery::FeatureMask;
use crate::eval::{least_squares, score_mask, EvalError, EvalRecord, Result};

/// Distinct (tp, fn, fp) compositions needed before a map is fitted.
pub const MIN_COMPOSITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFit {
    pub coef_tp: f64,
    pub coef_fn: f64,
    pub coef_fp_over_n: f64,
    pub intercept: f64,
    pub r2: f64,
    pub regressor: String,
    #[serde(rename = "F")]
    pub f: usize,
    pub n: usize,
    pub records: usize,
}

impl RewardFit {
    pub fn predict(&self, tp: f64, fn_: f64, fp: f64) -> f64 {
        self.intercept + self.coef_tp * tp + self.coef_fn * fn_ + self.coef_fp_over_n * fp / self.n as f64
    }
}

fn single<T: Ord + Copy + std::fmt::Debug>(what: &str, values: impl Iterator<Item = T>) -> Result<T> {
    let set: BTreeSet<T> = values.collect();
    match set.len() {
        1 => Ok(*set.iter().next().expect("one element")),
        0 => Err(EvalError::InsufficientRecords("no records".into())),
        _ => Err(EvalError::InsufficientRecords(format!("records mix several {what} values: {set:?}"))),
    }
}

/// OLS of prediction gain on `[1, tp, fn, fp/n]` over the records of one
/// regressor at a single feature count.
pub fn fit_reward_model(records: &[EvalRecord], regressor: &str) -> Result<RewardFit> {
    let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.regressor == regressor).collect();
    let f = single("F", rows.iter().map(|r| r.f))?;
    let n = single("n", rows.iter().map(|r| r.n))?;
    let compositions: BTreeSet<(usize, usize, usize)> =
        rows.iter().map(|r| (r.score.tp_count, r.score.fn_count, r.score.fp_count)).collect();
    if compositions.len() < MIN_COMPOSITIONS {
        return Err(EvalError::InsufficientRecords(format!(
            "{} distinct mask compositions, need {MIN_COMPOSITIONS}",
            compositions.len()
        )));
    }
    let x = Array2::from_shape_fn((rows.len(), 4), |(i, j)| {
        let s = &rows[i].score;
        match j {
            0 => 1.0,
            1 => s.tp_count as f64,
            2 => s.fn_count as f64,
            _ => s.fp_count as f64 / n as f64,
        }
    });
    let y: Array1<f64> = rows.iter().map(|r| r.prediction_gain).collect();
    let names = ["intercept", "tp_count", "fn_count", "fp_count/n"].map(String::from);
    let fit = least_squares(&x, &y, &names)?;
    let c = &fit.coefficients;
    Ok(RewardFit {
        intercept: c[0],
        coef_tp: c[1],
        coef_fn: c[2],
        coef_fp_over_n: c[3],
        r2: fit.r2,
        regressor: regressor.to_string(),
        f,
        n,
        records: rows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedCounts {
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub fp: f64,
}

/// Counts implied by a (precision, recall) pair for a boundary of the given
/// size: `fn = (1 - r)|B|`, `fp = r|B|(1/π - 1)`, `tp = r|B|`.
pub fn implied_counts(precision: f64, recall: f64, boundary_size: usize) -> Result<ImpliedCounts> {
    if !(precision > 0.0 && precision <= 1.0) || !(0.0..=1.0).contains(&recall) {
        return Err(EvalError::InvalidMask(format!("precision {precision} / recall {recall} outside (0,1] x [0,1]")));
    }
    let b = boundary_size as f64;
    Ok(ImpliedCounts { tp: recall * b, fn_: (1.0 - recall) * b, fp: recall * b * (1.0 / precision - 1.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSurface {
    /// Ascending, ending at 1.
    pub precisions: Vec<f64>,
    pub recalls: Vec<f64>,
    /// `predicted_gain[i][j]` at `(precisions[i], recalls[j])`.
    pub predicted_gain: Vec<Vec<f64>>,
    /// `[precision, recall]` points, sorted.
    pub zero_contour: Vec<[f64; 2]>,
    pub boundary_size: usize,
}

impl GainSurface {
    /// Rows `(precision, recall, predicted_gain)`.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.precisions.iter().enumerate().flat_map(move |(i, &p)| {
            self.recalls.iter().enumerate().map(move |(j, &r)| (p, r, self.predicted_gain[i][j]))
        })
    }
}

/// Lattice `{1, 1 - step, 1 - 2 step, ...} ∩ (0, 1]`, ascending.
pub fn axis(step: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut i = 0usize;
    loop {
        let x = 1.0 - i as f64 * step;
        if x <= 1e-12 {
            break;
        }
        v.push(x);
        i += 1;
    }
    v.reverse();
    v
}

pub fn gain_surface(fit: &RewardFit, boundary_size: usize, grid_step: f64) -> Result<GainSurface> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(EvalError::InvalidMask(format!("grid step {grid_step} not in (0, 0.5]")));
    }
    let precisions = axis(grid_step);
    let recalls = precisions.clone();
    let mut g = vec![vec![0.0; recalls.len()]; precisions.len()];
    for (i, &p) in precisions.iter().enumerate() {
        for (j, &r) in recalls.iter().enumerate() {
            let c = implied_counts(p, r, boundary_size)?;
            g[i][j] = fit.predict(c.tp, c.fn_, c.fp);
        }
    }
    let mut contour = Vec::new();
    let crossing = |a: f64, b: f64| (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0);
    for i in 0..precisions.len() {
        for j in 0..recalls.len() {
            if g[i][j] == 0.0 {
                contour.push([precisions[i], recalls[j]]);
                continue;
            }
            if i + 1 < precisions.len() && crossing(g[i][j], g[i + 1][j]) {
                let t = g[i][j] / (g[i][j] - g[i + 1][j]);
                contour.push([precisions[i] + t * (precisions[i + 1] - precisions[i]), recalls[j]]);
            }
            if j + 1 < recalls.len() && crossing(g[i][j], g[i][j + 1]) {
                let t = g[i][j] / (g[i][j] - g[i][j + 1]);
                contour.push([precisions[i], recalls[j] + t * (recalls[j + 1] - recalls[j])]);
            }
        }
    }
    contour.sort_by(|a, b| a.partial_cmp(b).expect("finite contour"));
    Ok(GainSurface { precisions, recalls, predicted_gain: g, zero_contour: contour, boundary_size })
}

/// `(precision, recall)` of each mask against the oracle, in order.
pub fn trajectory(masks: &[FeatureMask], oracle: &FeatureMask) -> Result<Vec<[f64; 2]>> {
    if masks.is_empty() {
        return Err(EvalError::InsufficientRecords("empty mask sequence".into()));
    }
    Ok(masks
        .iter()
        .map(|m| {
            let s = score_mask(m, oracle);
            [s.precision, s.recall]
        })
        .collect())
}
