use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, forward_substitute};
use super::{DataMatrix, Result, StatsError};
use crate::scalar::Real;

/// Outcome of one Fisher-z conditional-independence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiResult<T> {
    pub statistic: T,
    pub p_value: T,
    pub independent: bool,
}

/// Pearson correlation of two columns.
pub fn pearson<T: Real>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    let ma = super::mean(a);
    let mb = super::mean(b);
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return T::zero();
    }
    (sab / (saa * sbb).sqrt()).max(-T::one()).min(T::one())
}

fn collinearity_tolerance<T: Real>() -> T {
    T::c(1e-10).max(T::epsilon() * T::c(100.0))
}

/// Full correlation matrix of a data set; partial correlations of any order are
/// read off it without touching the samples again.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix<T> {
    corr: Array2<T>,
    n: usize,
    column_ids: Vec<usize>,
}

impl<T: Real> CorrelationMatrix<T> {
    pub fn from_data(data: &DataMatrix<T>) -> Self {
        let n = data.nrows();
        let m = data.ncols();
        let mut z = data.values().to_owned();
        for mut col in z.columns_mut() {
            let mu = super::mean(col.view());
            col.mapv_inplace(|x| x - mu);
            let norm = col.dot(&col).sqrt();
            if norm > T::zero() {
                col.mapv_inplace(|x| x / norm);
            }
        }
        let mut corr = z.t().dot(&z);
        for i in 0..m {
            // constant columns keep a unit diagonal so they behave as uncorrelated noise
            corr[[i, i]] = T::one();
            for j in 0..m {
                corr[[i, j]] = corr[[i, j]].max(-T::one()).min(T::one());
            }
        }
        Self { corr, n, column_ids: data.column_ids().to_vec() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.corr.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.corr[[i, j]]
    }

    /// Partial correlation of columns `i` and `j` (positions) given positions `s`.
    pub fn partial(&self, i: usize, j: usize, s: &[usize]) -> Result<T> {
        let m = self.dim();
        if i == j || s.contains(&i) || s.contains(&j) {
            return Err(StatsError::InvalidArgument(format!(
                "partial correlation needs distinct i, j outside the conditioning set (i={i}, j={j}, s={s:?})"
            )));
        }
        if let Some(&bad) = [i, j].iter().chain(s.iter()).find(|&&c| c >= m) {
            return Err(StatsError::InvalidArgument(format!("column position {bad} out of range")));
        }
        if s.is_empty() {
            return Ok(self.corr[[i, j]]);
        }
        let k = s.len();
        let sub = Array2::from_shape_fn((k, k), |(a, b)| self.corr[[s[a], s[b]]]);
        let tol = collinearity_tolerance::<T>();
        let l = cholesky(sub.view(), tol).map_err(|pivot| StatsError::Singular {
            columns: s[..=pivot].iter().map(|&c| self.column_ids[c]).collect(),
        })?;
        let ui: Array1<T> = s.iter().map(|&c| self.corr[[c, i]]).collect();
        let uj: Array1<T> = s.iter().map(|&c| self.corr[[c, j]]).collect();
        let a = forward_substitute(l.view(), ui.view());
        let b = forward_substitute(l.view(), uj.view());
        let cij = self.corr[[i, j]] - a.dot(&b);
        let cii = T::one() - a.dot(&a);
        let cjj = T::one() - b.dot(&b);
        for (c, v) in [(cii, i), (cjj, j)] {
            if c <= tol {
                let mut columns: Vec<usize> = s.iter().map(|&p| self.column_ids[p]).collect();
                columns.push(self.column_ids[v]);
                return Err(StatsError::Singular { columns });
            }
        }
        Ok((cij / (cii * cjj).sqrt()).max(-T::one()).min(T::one()))
    }
}

/// Correlation of the residuals of columns `i` and `j` (positions) after linear
/// regression on the columns in `s`.
pub fn partial_correlation<T: Real>(data: &DataMatrix<T>, i: usize, j: usize, s: &[usize]) -> Result<T> {
    if data.nrows() <= s.len() + 3 {
        return Err(StatsError::InsufficientSamples { n: data.nrows(), needed: s.len() + 3 });
    }
    if i == j || s.contains(&i) || s.contains(&j) {
        return Err(StatsError::InvalidArgument(format!("overlapping columns i={i}, j={j}, s={s:?}")));
    }
    let mut cols = vec![i, j];
    cols.extend_from_slice(s);
    if let Some(&bad) = cols.iter().find(|&&c| c >= data.ncols()) {
        return Err(StatsError::InvalidArgument(format!("column position {bad} out of range")));
    }
    let sub = data.select_columns(&cols);
    let rest: Vec<usize> = (2..cols.len()).collect();
    CorrelationMatrix::from_data(&sub).partial(0, 1, &rest)
}

/// Fisher-z test of zero (partial) correlation:
/// `z = atanh(r) * sqrt(n - cond_size - 3)` with a two-sided normal p-value.
pub fn fisher_z_test<T: Real>(r: T, n: usize, cond_size: usize, alpha: T) -> Result<CiResult<T>> {
    if n <= cond_size + 3 {
        return Err(StatsError::InsufficientSamples { n, needed: cond_size + 3 });
    }
    if !r.is_finite() || r.abs() > T::one() {
        return Err(StatsError::InvalidArgument(format!("correlation {r} outside [-1, 1]")));
    }
    if r.abs() == T::one() {
        return Ok(CiResult { statistic: r * T::infinity(), p_value: T::zero(), independent: false });
    }
    let dof = (n - cond_size - 3) as f64;
    let z = r.as_f64().atanh() * dof.sqrt();
    let p = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    let p_value = T::c(p);
    Ok(CiResult { statistic: T::c(z), p_value, independent: p_value >= alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn empty_conditioning_is_pearson() {
        let d = DataMatrix::from_array(array![[1.0f64, 2.0, 0.0], [2.0, 3.5, 1.0], [3.0, 3.9, 0.0], [4.0, 6.0, 1.0], [5.0, 6.1, 0.5]])
            .unwrap();
        let r = partial_correlation(&d, 0, 1, &[]).unwrap();
        assert!((r - pearson(d.column(0), d.column(1))).abs() < 1e-14);
    }

    #[test]
    fn partial_matches_residual_regression() {
        use rand::Rng;
        let mut rng = crate::seed::rng(3);
        let x = Array2::from_shape_fn((200, 4), |_| rng.random::<f64>());
        let mut d = x.clone();
        for r in 0..200 {
            d[[r, 1]] += 0.5 * d[[r, 0]] + d[[r, 2]];
            d[[r, 3]] += d[[r, 2]] - d[[r, 0]];
        }
        let data = DataMatrix::from_array(d.clone()).unwrap();
        let r = partial_correlation(&data, 1, 3, &[0, 2]).unwrap();
        // oracle: residualize by explicit least squares on [1, x0, x2]
        let design = Array2::from_shape_fn((200, 3), |(i, j)| match j {
            0 => 1.0,
            1 => d[[i, 0]],
            _ => d[[i, 2]],
        });
        let resid = |col: usize| {
            let y = d.column(col).to_owned();
            let g = design.t().dot(&design);
            let l = cholesky(g.view(), 0.0).unwrap();
            let beta = super::super::linalg::cholesky_solve(l.view(), design.t().dot(&y).view());
            &y - &design.dot(&beta)
        };
        let (ra, rb) = (resid(1), resid(3));
        let oracle = ra.dot(&rb) / (ra.dot(&ra) * rb.dot(&rb)).sqrt();
        assert!((r - oracle).abs() < 1e-10, "{r} vs {oracle}");
    }

    #[test]
    fn singular_conditioning_names_columns() {
        let d = DataMatrix::new(
            array![[1.0, 0.3, 2.0, 4.0], [2.0, 0.1, 4.0, 3.0], [3.0, 0.7, 6.0, 1.0], [4.0, 0.2, 8.0, 0.0], [5.0, 0.9, 10.0, 2.0], [6.0, 0.4, 12.0, 1.0]],
            vec![10, 11, 12, 13],
        )
        .unwrap();
        match partial_correlation(&d, 1, 3, &[0, 2]) {
            Err(StatsError::Singular { columns }) => assert_eq!(columns, vec![10, 12]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn argument_checks() {
        let d = DataMatrix::from_array(Array2::<f64>::zeros((4, 3))).unwrap();
        assert!(matches!(partial_correlation(&d, 0, 1, &[2]), Err(StatsError::InsufficientSamples { .. })));
        let d = DataMatrix::from_array(Array2::<f64>::zeros((10, 3))).unwrap();
        assert!(partial_correlation(&d, 0, 0, &[]).is_err());
        assert!(partial_correlation(&d, 0, 1, &[1]).is_err());
    }

    #[test]
    fn fisher_zero_correlation() {
        let res = fisher_z_test(0.0f64, 100, 0, 0.05).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert!((res.p_value - 1.0).abs() < 1e-15);
        assert!(res.independent);
    }

    #[test]
    fn fisher_extremes() {
        assert!(!fisher_z_test(0.9999, 10, 0, 0.05).unwrap().independent);
        let one = fisher_z_test(1.0f64, 50, 2, 0.05).unwrap();
        assert_eq!(one.p_value, 0.0);
        assert!(!one.independent);
        assert!(matches!(fisher_z_test(0.1, 5, 2, 0.05), Err(StatsError::InsufficientSamples { .. })));
    }

    #[test]
    fn fisher_in_f32() {
        let res = fisher_z_test(0.1f32, 1000, 0, 0.05).unwrap();
        assert!((res.statistic - 3.1681).abs() < 1e-3);
        assert!(!res.independent);
    }
}
