//! Numerical kernel: data matrices, correlation and conditional-independence
//! tests, linear regressors, splitting and error metrics.
//!
//! Everything here is generic over [`Real`] so the same code runs in `f32` and
//! `f64`; the rest of the crate uses the `f64` aliases from the crate root.

mod corr;
pub mod linalg;
mod regress;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::scalar::Real;
use crate::seed;

pub use corr::{fisher_z_test, partial_correlation, pearson, CiResult, CorrelationMatrix};
pub use regress::{
    fit, lasso_coordinate_descent, lasso_objective, predict, soft_threshold, BuiltinRegressor, FitResult,
    FitSettings, LassoSolution, Regressor, RegressorKind,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("column id {0} appears twice")]
    DuplicateColumn(usize),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular design; collinear columns {columns:?}")]
    Singular { columns: Vec<usize> },
    #[error("{n} samples are not enough (need more than {needed})")]
    InsufficientSamples { n: usize, needed: usize },
    #[error("coordinate descent did not converge within {sweeps} sweeps")]
    LassoNonConvergence { sweeps: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Sample matrix with the node index of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<T> {
    values: Array2<T>,
    column_ids: Vec<usize>,
}

impl<T: Real> DataMatrix<T> {
    pub fn new(values: Array2<T>, column_ids: Vec<usize>) -> Result<Self> {
        if column_ids.len() != values.ncols() {
            return Err(StatsError::ShapeMismatch {
                what: "column ids",
                expected: values.ncols(),
                got: column_ids.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite("data matrix"));
        }
        let mut sorted = column_ids.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(StatsError::DuplicateColumn(w[0]));
        }
        Ok(Self { values, column_ids })
    }

    /// Columns labelled `0..m`.
    pub fn from_array(values: Array2<T>) -> Result<Self> {
        let ids = (0..values.ncols()).collect();
        Self::new(values, ids)
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn column_ids(&self) -> &[usize] {
        &self.column_ids
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, pos: usize) -> ArrayView1<'_, T> {
        self.values.column(pos)
    }

    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.column_ids.iter().position(|&c| c == id)
    }

    /// Positions of the given column ids, in the given order.
    pub fn positions_of(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| {
                self.position_of(id)
                    .ok_or_else(|| StatsError::InvalidArgument(format!("no column with id {id}")))
            })
            .collect()
    }

    pub fn select_columns(&self, positions: &[usize]) -> DataMatrix<T> {
        DataMatrix {
            values: self.values.select(Axis(1), positions),
            column_ids: positions.iter().map(|&p| self.column_ids[p]).collect(),
        }
    }

    pub fn select_ids(&self, ids: &[usize]) -> Result<DataMatrix<T>> {
        Ok(self.select_columns(&self.positions_of(ids)?))
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix<T> {
        DataMatrix { values: self.values.select(Axis(0), rows), column_ids: self.column_ids.clone() }
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }
}

/// Root mean squared error.
pub fn rmse<T: Real>(predicted: ArrayView1<T>, actual: ArrayView1<T>) -> Result<T> {
    if predicted.len() != actual.len() {
        return Err(StatsError::ShapeMismatch { what: "rmse vectors", expected: actual.len(), got: predicted.len() });
    }
    if actual.is_empty() {
        return Err(StatsError::InvalidArgument("rmse of empty vectors".into()));
    }
    let sse: T = predicted.iter().zip(actual.iter()).map(|(&p, &a)| (p - a) * (p - a)).sum();
    Ok((sse / T::from_usize_lossy(actual.len())).sqrt())
}

/// Seeded partition of `0..n` into sorted `(train, test)` row indices with
/// `round(n * test_fraction)` test rows.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(StatsError::InvalidArgument(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(StatsError::InvalidArgument(format!(
            "test fraction {test_fraction} of {n} rows leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split<T: Real>(data: &DataMatrix<T>, test_fraction: f64, seed: u64) -> Result<(DataMatrix<T>, DataMatrix<T>)> {
    let (train, test) = split_indices(data.nrows(), test_fraction, seed)?;
    Ok((data.select_rows(&train), data.select_rows(&test)))
}

pub(crate) fn check_finite<T: Real>(v: ArrayView1<T>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite(what))
    }
}

pub(crate) fn mean<T: Real>(v: ArrayView1<T>) -> T {
    v.sum() / T::from_usize_lossy(v.len())
}

pub(crate) fn to_array1<T: Real>(v: &[T]) -> Array1<T> {
    Array1::from(v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn data_matrix_validation() {
        assert!(DataMatrix::new(array![[1.0, 2.0]], vec![0]).is_err());
        assert_eq!(DataMatrix::new(array![[1.0, 2.0]], vec![3, 3]), Err(StatsError::DuplicateColumn(3)));
        assert_eq!(DataMatrix::new(array![[1.0, f64::NAN]], vec![0, 1]), Err(StatsError::NonFinite("data matrix")));
        let d = DataMatrix::new(array![[1.0, 2.0, 3.0]], vec![7, 4, 9]).unwrap();
        let s = d.select_ids(&[9, 7]).unwrap();
        assert_eq!(s.column_ids(), &[9, 7]);
        assert_eq!(s.values(), array![[3.0, 1.0]]);
    }

    #[test]
    fn rmse_cases() {
        let a = array![1.0f64, 2.0, 3.0];
        assert_eq!(rmse(a.view(), a.view()).unwrap(), 0.0);
        let b = &a + 1.0;
        assert!((rmse(b.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse(a.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_accumulation() {
        let mut rng = crate::seed::rng(5);
        use rand::Rng;
        let p: Array1<f64> = (0..1000).map(|_| rng.random::<f64>() * 10.0).collect();
        let a: Array1<f64> = (0..1000).map(|_| rng.random::<f64>() * 10.0).collect();
        // oracle: accumulate squared errors pairwise, then Kahan-free mean
        let sq: Vec<f64> = p.iter().zip(a.iter()).map(|(x, y)| (x - y) * (x - y)).collect();
        let half = sq.len() / 2;
        let s1: f64 = sq[..half].iter().sum();
        let s2: f64 = sq[half..].iter().sum();
        let oracle = ((s1 + s2) / sq.len() as f64).sqrt();
        assert!((rmse(p.view(), a.view()).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = split_indices(1000, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(split_indices(1000, 0.2, 3).unwrap(), (train, test.clone()));
        // different seeds give different partitions
        let distinct: std::collections::HashSet<Vec<usize>> =
            (0..10).map(|s| split_indices(1000, 0.2, s).unwrap().1).collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        assert!(split_indices(10, 0.0, 1).is_err());
        assert!(split_indices(10, 1.0, 1).is_err());
        assert!(split_indices(10, 0.01, 1).is_err());
        assert!(split_indices(10, 0.99, 1).is_err());
    }

    #[test]
    fn split_matrix_rows() {
        let d = DataMatrix::from_array(Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f32)).unwrap();
        let (tr, te) = split(&d, 0.3, 9).unwrap();
        assert_eq!(tr.nrows() + te.nrows(), 10);
        assert_eq!(te.nrows(), 3);
    }
}
