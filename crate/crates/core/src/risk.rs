//! Linear-Gaussian designs with known covariance, for measuring the excess
//! risk of fitted linear predictors exactly instead of on a finite test set.

use ndarray::{Array1, Array2};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::generate_er_dag;
use crate::scm::COEFF_FLOOR;
use crate::seed::{self, derive_seed};
use crate::stats::{self, FitSettings, RegressorKind, StatsError};

/// Features `X ~ N(0, Σ)` from a random linear DAG (unit noise variances),
/// response `y = X β + σ ε` with `β` supported on `support`.
#[derive(Debug, Clone)]
pub struct LinearGaussianDesign {
    /// `x = W x + e`; entry `j` lists `(parent, weight)` of feature `j`.
    parents: Vec<Vec<(usize, f64)>>,
    order: Vec<usize>,
    covariance: Array2<f64>,
    beta: Array1<f64>,
    support: Vec<usize>,
    sigma: f64,
}

impl LinearGaussianDesign {
    /// `num_features` features wired by an ER DAG of the given density, with
    /// `support_size` of them chosen as the response's parents.
    pub fn random(num_features: usize, support_size: usize, density: f64, sigma: f64, seed: u64) -> Self {
        assert!(support_size <= num_features && num_features >= 2);
        let dag = generate_er_dag(num_features, density, derive_seed(seed, "design_dag", 0)).expect("valid design");
        let mut rng = seed::rng(derive_seed(seed, "design_weights", 0));
        let mut parents = vec![Vec::new(); num_features];
        for (p, c) in dag.edges() {
            parents[c].push((p, signed_coefficient(&mut rng)));
        }
        let mut support: Vec<usize> = sample_indices(&mut rng, num_features, support_size).into_vec();
        support.sort_unstable();
        let mut beta = Array1::zeros(num_features);
        for &s in &support {
            beta[s] = signed_coefficient(&mut rng);
        }
        let order = dag.topological_order().to_vec();
        let covariance = implied_covariance(&parents, &order);
        Self { parents, order, covariance, beta, support, sigma }
    }

    pub fn num_features(&self) -> usize {
        self.beta.len()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample(&self, n: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let m = self.num_features();
        let mut rng = seed::rng(seed);
        let mut x = Array2::<f64>::zeros((n, m));
        for i in 0..n {
            for &j in &self.order {
                let mut v: f64 = rng.sample(StandardNormal);
                for &(k, w) in &self.parents[j] {
                    v += w * x[[i, k]];
                }
                x[[i, j]] = v;
            }
        }
        let noise: Array1<f64> = (0..n).map(|_| self.sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let y = x.dot(&self.beta) + noise;
        (x, y)
    }

    /// Population excess risk `(b - β)' Σ (b - β)` of the linear predictor
    /// `x ↦ x' b` over the Bayes risk `σ²`.
    pub fn excess_risk(&self, coefficients: &Array1<f64>) -> f64 {
        let e = coefficients - &self.beta;
        e.dot(&self.covariance.dot(&e))
    }

    /// Fits `kind` without intercept on the columns in `mask` and returns the
    /// excess risk of the fit.
    pub fn fitted_excess_risk(
        &self,
        kind: RegressorKind,
        x: &Array2<f64>,
        y: &Array1<f64>,
        mask: &[usize],
        settings: &FitSettings<f64>,
    ) -> Result<f64, StatsError> {
        let data = stats::DataMatrix::new(x.select(ndarray::Axis(1), mask), mask.to_vec())?;
        let fit = stats::fit(kind, &data, y.view(), settings)?;
        let mut b = Array1::zeros(self.num_features());
        for (&c, &v) in mask.iter().zip(&fit.coefficients) {
            b[c] = v;
        }
        Ok(self.excess_risk(&b))
    }
}

fn signed_coefficient(rng: &mut impl Rng) -> f64 {
    let magnitude = rng.random_range(COEFF_FLOOR..1.0);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// `Σ = A A'` with `A = (I - W)^{-1}`, built column by column in topological order.
fn implied_covariance(parents: &[Vec<(usize, f64)>], order: &[usize]) -> Array2<f64> {
    let m = parents.len();
    let mut a = Array2::<f64>::zeros((m, m));
    for &j in order {
        // row j of A: e_j + Σ_k W[j,k] A[k,:]
        let mut row = Array1::<f64>::zeros(m);
        row[j] = 1.0;
        for &(k, w) in &parents[j] {
            row.scaled_add(w, &a.row(k));
        }
        a.row_mut(j).assign(&row);
    }
    a.dot(&a.t())
}

/// Expected excess risk of no-intercept OLS on a sufficient subset of size
/// `p` with Gaussian features: `σ² p / (n - p - 1)`.
pub fn expected_ols_excess(p: usize, n: usize, sigma: f64) -> f64 {
    sigma * sigma * p as f64 / (n as f64 - p as f64 - 1.0)
}

/// Leading-order squared-error gap between all `f` features and a boundary of
/// size `k`: `σ² (f - k) / n`.
pub fn leading_gap(f: usize, k: usize, n: usize, sigma: f64) -> f64 {
    sigma * sigma * (f as f64 - k as f64) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_matches_sample_covariance() {
        let d = LinearGaussianDesign::random(6, 2, 0.5, 0.5, 1);
        let (x, _) = d.sample(200_000, 2);
        let emp = x.t().dot(&x) / 200_000.0;
        for (a, b) in emp.iter().zip(d.covariance().iter()) {
            assert!((a - b).abs() < 0.05 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn true_coefficients_have_zero_excess() {
        let d = LinearGaussianDesign::random(5, 3, 0.3, 0.5, 3);
        assert_eq!(d.excess_risk(&d.beta().clone()), 0.0);
        assert!(d.excess_risk(&Array1::zeros(5)) > 0.0);
    }

    #[test]
    fn closed_forms() {
        assert!((expected_ols_excess(5, 1000, 0.5) - 0.25 * 5.0 / 994.0).abs() < 1e-15);
        assert!((leading_gap(100, 10, 1000, 0.5) - 0.0225).abs() < 1e-15);
    }
}
