//! OLS, Ridge and LASSO on internally standardized features.
//!
//! Each fit centers `y` and standardizes the feature columns (when an intercept
//! is fitted), solves on that scale, and maps the coefficients back so that
//! `predict` works on raw inputs. Penalties use the per-sample objective
//! `(1/2n)||y - Xb||^2 + penalty(b)`, which keeps the default λ grid meaningful
//! on unit-variance columns.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, cholesky_solve, solve_psd};
use super::{check_finite, DataMatrix, Result, StatsError};
use crate::scalar::Real;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Ols,
    Ridge,
    Lasso,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 3] = [RegressorKind::Ols, RegressorKind::Ridge, RegressorKind::Lasso];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressorKind::Ols => "ols",
            RegressorKind::Ridge => "ridge",
            RegressorKind::Lasso => "lasso",
        }
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegressorKind {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self> {
        RegressorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StatsError::InvalidArgument(format!("unknown regressor `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings<T> {
    /// Fixed penalty; `None` selects it by cross-validation over `lambda_grid`.
    pub lambda: Option<T>,
    pub lambda_grid: Vec<T>,
    pub cv_folds: usize,
    pub cv_seed: u64,
    /// LASSO stops when the largest coefficient change in a sweep is below this.
    pub tolerance: T,
    pub max_sweeps: usize,
    pub fit_intercept: bool,
    /// Relative eigenvalue cutoff for the OLS pseudo-inverse fallback.
    pub rcond: T,
}

impl<T: Real> Default for FitSettings<T> {
    fn default() -> Self {
        // 13 log-spaced points from 1e-4 to 1e1
        let lambda_grid = (0..13).map(|i| T::c(10f64.powf(-4.0 + 5.0 * i as f64 / 12.0))).collect();
        Self {
            lambda: None,
            lambda_grid,
            cv_folds: 5,
            cv_seed: 0,
            tolerance: T::c(1e-7),
            max_sweeps: 10_000,
            fit_intercept: true,
            rcond: T::c(1e-10),
        }
    }
}

impl<T: Real> FitSettings<T> {
    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_cv_seed(mut self, seed: u64) -> Self {
        self.cv_seed = seed;
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.fit_intercept = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub regressor: String,
    pub coefficients: Vec<T>,
    pub intercept: T,
    /// Penalty λ; zero for OLS.
    pub hyperparameter: T,
    pub column_ids: Vec<usize>,
}

/// Pluggable regressor: anything that turns a feature matrix and a response
/// into a linear-in-inputs [`FitResult`] can be evaluated by the harness.
pub trait Regressor<T: Real>: Send + Sync {
    fn tag(&self) -> &str;
    fn fit(&self, x: &DataMatrix<T>, y: ArrayView1<T>) -> Result<FitResult<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinRegressor<T> {
    pub kind: RegressorKind,
    pub settings: FitSettings<T>,
}

impl<T: Real> BuiltinRegressor<T> {
    pub fn new(kind: RegressorKind) -> Self {
        Self { kind, settings: FitSettings::default() }
    }
}

impl<T: Real> Regressor<T> for BuiltinRegressor<T> {
    fn tag(&self) -> &str {
        self.kind.as_str()
    }

    fn fit(&self, x: &DataMatrix<T>, y: ArrayView1<T>) -> Result<FitResult<T>> {
        fit(self.kind, x, y, &self.settings)
    }
}

pub fn soft_threshold<T: Real>(z: T, lambda: T) -> T {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        T::zero()
    }
}

/// `(1/2) b'Gb - c'b + λ|b|_1`, the per-sample LASSO objective up to a constant.
pub fn lasso_objective<T: Real>(gram: ArrayView2<T>, xty: ArrayView1<T>, lambda: T, b: ArrayView1<T>) -> T {
    let half = T::c(0.5);
    half * b.dot(&gram.dot(&b)) - xty.dot(&b) + lambda * b.iter().map(|x| x.abs()).sum::<T>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution<T> {
    pub coefficients: Array1<T>,
    pub sweeps: usize,
    /// Objective after each sweep, when requested.
    pub objective_trace: Vec<T>,
}

/// Cyclic coordinate descent with soft-thresholding on the covariance form
/// `(G, c) = (X'X/n, X'y/n)`.
///
/// Once the support and signs have stopped changing for a few sweeps, the
/// stationary point for that pattern is solved directly and kept if it meets
/// the optimality conditions; this shortcuts the slow tail on collinear
/// designs. Convergence is still declared by a sweep whose largest
/// coefficient change is below `tolerance`.
pub fn lasso_coordinate_descent<T: Real>(
    gram: ArrayView2<T>,
    xty: ArrayView1<T>,
    lambda: T,
    tolerance: T,
    max_sweeps: usize,
    warm_start: Option<ArrayView1<T>>,
    trace: bool,
) -> Result<LassoSolution<T>> {
    let m = xty.len();
    let mut b = warm_start.map(|w| w.to_owned()).unwrap_or_else(|| Array1::zeros(m));
    let mut q = gram.dot(&b);
    let mut objective_trace = Vec::new();
    let mut last_pattern: Vec<(usize, bool)> = Vec::new();
    let mut stable = 0usize;
    for sweep in 1..=max_sweeps {
        let mut max_delta = T::zero();
        for j in 0..m {
            let gjj = gram[[j, j]];
            if gjj <= T::zero() {
                continue;
            }
            let z = xty[j] - q[j] + gjj * b[j];
            let updated = soft_threshold(z, lambda) / gjj;
            let delta = updated - b[j];
            if delta != T::zero() {
                q.scaled_add(delta, &gram.column(j));
                b[j] = updated;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if trace {
            objective_trace.push(lasso_objective(gram, xty, lambda, b.view()));
        }
        if max_delta < tolerance {
            return Ok(LassoSolution { coefficients: b, sweeps: sweep, objective_trace });
        }
        let pattern: Vec<(usize, bool)> = (0..m).filter(|&j| b[j] != T::zero()).map(|j| (j, b[j] > T::zero())).collect();
        if pattern == last_pattern {
            stable += 1;
        } else {
            stable = 0;
            last_pattern = pattern;
        }
        if stable == 2 || (stable > 0 && stable % 50 == 0) {
            if let Some(x) = solve_on_support(gram, xty, lambda, &last_pattern) {
                q = gram.dot(&x);
                b = x;
            }
        }
    }
    Err(StatsError::LassoNonConvergence { sweeps: max_sweeps })
}

/// Minimiser of the LASSO objective restricted to a support with fixed signs,
/// returned only when it satisfies the full optimality conditions.
fn solve_on_support<T: Real>(gram: ArrayView2<T>, xty: ArrayView1<T>, lambda: T, pattern: &[(usize, bool)]) -> Option<Array1<T>> {
    let k = pattern.len();
    let m = xty.len();
    let sub = Array2::from_shape_fn((k, k), |(a, c)| gram[[pattern[a].0, pattern[c].0]]);
    let rhs: Array1<T> = pattern.iter().map(|&(j, pos)| if pos { xty[j] - lambda } else { xty[j] + lambda }).collect();
    let l = cholesky(sub.view(), T::epsilon()).ok()?;
    let xs = cholesky_solve(l.view(), rhs.view());
    if pattern.iter().zip(xs.iter()).any(|(&(_, pos), &v)| (v > T::zero()) != pos || v == T::zero()) {
        return None;
    }
    let mut x = Array1::zeros(m);
    for (&(j, _), &v) in pattern.iter().zip(xs.iter()) {
        x[j] = v;
    }
    let grad = gram.dot(&x);
    let slack = lambda * (T::one() + T::c(1e-9));
    if (0..m).any(|j| x[j] == T::zero() && (xty[j] - grad[j]).abs() > slack) {
        return None;
    }
    Some(x)
}

/// Standardized sufficient statistics of one training set.
struct Prepared<T> {
    means: Array1<T>,
    scales: Array1<T>,
    y_mean: T,
    gram: Array2<T>,
    xty: Array1<T>,
}

impl<T: Real> Prepared<T> {
    fn new(x: ArrayView2<T>, y: ArrayView1<T>, intercept: bool) -> Self {
        let n = T::from_usize_lossy(x.nrows());
        let means = if intercept { x.mean_axis(Axis(0)).expect("non-empty") } else { Array1::zeros(x.ncols()) };
        let mut z = &x - &means;
        let scales: Array1<T> = z
            .columns()
            .into_iter()
            .map(|c| (c.dot(&c) / n).sqrt())
            .collect();
        for (mut col, &s) in z.columns_mut().into_iter().zip(scales.iter()) {
            if s > T::zero() {
                col.mapv_inplace(|v| v / s);
            } else {
                col.fill(T::zero());
            }
        }
        let y_mean = if intercept { super::mean(y) } else { T::zero() };
        let yc = y.mapv(|v| v - y_mean);
        let gram = z.t().dot(&z) / n;
        let xty = z.t().dot(&yc) / n;
        Self { means, scales, y_mean, gram, xty }
    }

    /// Maps standardized-scale coefficients back to raw inputs.
    fn unscale(&self, b: &Array1<T>) -> (Array1<T>, T) {
        let coef: Array1<T> = b
            .iter()
            .zip(self.scales.iter())
            .map(|(&bj, &s)| if s > T::zero() { bj / s } else { T::zero() })
            .collect();
        let intercept = self.y_mean - coef.dot(&self.means);
        (coef, intercept)
    }

    fn solve(&self, kind: RegressorKind, lambda: T, settings: &FitSettings<T>, warm: Option<&Array1<T>>) -> Result<Array1<T>> {
        match kind {
            RegressorKind::Ols => Ok(solve_psd(self.gram.view(), self.xty.view(), settings.rcond).0),
            RegressorKind::Ridge => {
                let mut a = self.gram.clone();
                a.diag_mut().mapv_inplace(|d| d + lambda);
                match cholesky(a.view(), T::zero()) {
                    Ok(l) => Ok(cholesky_solve(l.view(), self.xty.view())),
                    Err(_) => Ok(solve_psd(a.view(), self.xty.view(), settings.rcond).0),
                }
            }
            RegressorKind::Lasso => lasso_coordinate_descent(
                self.gram.view(),
                self.xty.view(),
                lambda,
                settings.tolerance,
                settings.max_sweeps,
                warm.map(|w| w.view()),
                false,
            )
            .map(|s| s.coefficients),
        }
    }
}

fn cross_validate<T: Real>(
    kind: RegressorKind,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    settings: &FitSettings<T>,
) -> Result<T> {
    let n = x.nrows();
    let folds = settings.cv_folds.min(n);
    if folds < 2 || settings.lambda_grid.is_empty() {
        return Err(StatsError::InvalidArgument(format!(
            "cross-validation needs >= 2 folds and a non-empty grid (folds={folds})"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(settings.cv_seed));
    // LASSO warm-starts along decreasing λ; the order of evaluation does not
    // change which grid point wins.
    let mut order: Vec<usize> = (0..settings.lambda_grid.len()).collect();
    if kind == RegressorKind::Lasso {
        order.sort_by(|&a, &b| settings.lambda_grid[b].partial_cmp(&settings.lambda_grid[a]).expect("finite grid"));
    }
    let mut sse = vec![T::zero(); settings.lambda_grid.len()];
    for fold in 0..folds {
        let (mut train, mut valid) = (Vec::new(), Vec::new());
        for (pos, &row) in perm.iter().enumerate() {
            if pos % folds == fold {
                valid.push(row);
            } else {
                train.push(row);
            }
        }
        let xt = x.select(Axis(0), &train);
        let yt = y.select(Axis(0), &train);
        let xv = x.select(Axis(0), &valid);
        let yv = y.select(Axis(0), &valid);
        let prep = Prepared::new(xt.view(), yt.view(), settings.fit_intercept);
        let mut warm: Option<Array1<T>> = None;
        for &g in &order {
            let b = prep.solve(kind, settings.lambda_grid[g], settings, warm.as_ref())?;
            let (coef, intercept) = prep.unscale(&b);
            let resid = &yv - &(xv.dot(&coef) + intercept);
            sse[g] = sse[g] + resid.dot(&resid);
            warm = Some(b);
        }
    }
    let best = (0..sse.len())
        .min_by(|&a, &b| sse[a].partial_cmp(&sse[b]).expect("finite errors").then(a.cmp(&b)))
        .expect("non-empty grid");
    Ok(settings.lambda_grid[best])
}

/// Fits `kind` on `x` and `y`. An empty feature matrix gives the intercept-only
/// model (the training mean).
pub fn fit<T: Real>(kind: RegressorKind, x: &DataMatrix<T>, y: ArrayView1<T>, settings: &FitSettings<T>) -> Result<FitResult<T>> {
    let n = x.nrows();
    let m = x.ncols();
    if y.len() != n {
        return Err(StatsError::ShapeMismatch { what: "response", expected: n, got: y.len() });
    }
    if n < 2 {
        return Err(StatsError::InsufficientSamples { n, needed: 1 });
    }
    check_finite(y, "response")?;
    if let Some(l) = settings.lambda {
        if !(l >= T::zero() && l.is_finite()) {
            return Err(StatsError::InvalidArgument(format!("penalty {l} must be finite and >= 0")));
        }
    }
    let intercept_dof = usize::from(settings.fit_intercept);
    if kind == RegressorKind::Ols && n <= m + intercept_dof {
        return Err(StatsError::InsufficientSamples { n, needed: m + intercept_dof });
    }
    let column_ids = x.column_ids().to_vec();
    if m == 0 {
        let intercept = if settings.fit_intercept { super::mean(y) } else { T::zero() };
        return Ok(FitResult {
            regressor: kind.as_str().to_string(),
            coefficients: Vec::new(),
            intercept,
            hyperparameter: T::zero(),
            column_ids,
        });
    }
    let lambda = match kind {
        RegressorKind::Ols => T::zero(),
        _ => match settings.lambda {
            Some(l) => l,
            None => cross_validate(kind, x.values(), y, settings)?,
        },
    };
    let prep = Prepared::new(x.values(), y, settings.fit_intercept);
    let b = prep.solve(kind, lambda, settings, None)?;
    let (coef, intercept) = prep.unscale(&b);
    Ok(FitResult {
        regressor: kind.as_str().to_string(),
        coefficients: coef.to_vec(),
        intercept,
        hyperparameter: lambda,
        column_ids,
    })
}

/// `intercept + x * coefficients`.
pub fn predict<T: Real>(fit: &FitResult<T>, x: &DataMatrix<T>) -> Result<Array1<T>> {
    if x.ncols() != fit.coefficients.len() {
        return Err(StatsError::ShapeMismatch {
            what: "prediction columns",
            expected: fit.coefficients.len(),
            got: x.ncols(),
        });
    }
    let coef = super::to_array1(&fit.coefficients);
    Ok(x.values().dot(&coef) + fit.intercept)
}
