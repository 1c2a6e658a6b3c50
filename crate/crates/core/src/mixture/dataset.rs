//! Observation matrices and random partitioning into machine-local chunks.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// An `n x d` matrix of observations with optional ground-truth component
/// labels (populated by sampling, used only for diagnostics).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(rows: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InvalidDataset("dataset must have at least one row".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "dataset rows",
            });
        }
        if let Some(l) = &labels {
            if l.len() != rows.nrows() {
                return Err(Error::InvalidDataset(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows.nrows()
                )));
            }
        }
        Ok(Dataset { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires n >= 1
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Observations as a `d x n` matrix (one column per observation), the
    /// layout used by the batched density kernels.
    pub fn to_cols(&self) -> DMatrix<f64> {
        self.rows.transpose()
    }
}

/// Split `data` into `m` disjoint chunks of equal size `n/m`, uniformly at
/// random. Rejects `n` not divisible by `m`.
pub fn partition<R: Rng>(data: &Dataset, m: usize, rng: &mut R) -> Result<Vec<Dataset>> {
    if m == 0 {
        return Err(Error::InvalidDataset("cannot partition into 0 chunks".into()));
    }
    let n = data.len();
    if n % m != 0 {
        return Err(Error::InvalidDataset(format!(
            "{n} observations cannot be split into {m} equal chunks"
        )));
    }
    let chunk = n / m;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let d = data.dim();
    let mut out = Vec::with_capacity(m);
    for c in 0..m {
        let idx = &order[c * chunk..(c + 1) * chunk];
        let rows = DMatrix::from_fn(chunk, d, |i, j| data.rows[(idx[i], j)]);
        let labels = data
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        out.push(Dataset::new(rows, labels)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn toy(n: usize) -> Dataset {
        let rows = DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
        Dataset::new(rows, None).unwrap()
    }

    #[test]
    fn partition_equal_disjoint_chunks() {
        let data = toy(100);
        let mut rng = seed::rng(1, &[seed::stream::PARTITION]);
        let parts = partition(&data, 4, &mut rng).unwrap();
        assert_eq!(parts.len(), 4);
        let mut seen: Vec<f64> = Vec::new();
        for p in &parts {
            assert_eq!(p.len(), 25);
            seen.extend(p.rows().column(0).iter());
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<f64> = (0..100).map(|i| (i * 2) as f64).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, expected);
    }

    #[test]
    fn partition_rejects_uneven_split() {
        let data = toy(10);
        let mut rng = seed::rng(1, &[]);
        assert!(partition(&data, 3, &mut rng).is_err());
    }

    #[test]
    fn single_chunk_is_input_up_to_order() {
        let data = toy(8);
        let mut rng = seed::rng(5, &[]);
        let parts = partition(&data, 1, &mut rng).unwrap();
        assert_eq!(parts[0].len(), 8);
        let mut got: Vec<f64> = parts[0].rows().column(0).iter().cloned().collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<f64> = data.rows().column(0).iter().cloned().collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, expected);
    }

    #[test]
    fn partition_is_seed_deterministic() {
        let data = toy(60);
        let a = partition(&data, 3, &mut seed::rng(11, &[2])).unwrap();
        let b = partition(&data, 3, &mut seed::rng(11, &[2])).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rows(), y.rows());
        }
    }

    #[test]
    fn rejects_non_finite_rows() {
        let rows = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(Dataset::new(rows, None).is_err());
    }
}
