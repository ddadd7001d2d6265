//! Dense and sparse real vectors plus diagonal metrics.
//!
//! Every reduction accumulates in ascending index order, so results are
//! bit-reproducible for a given input regardless of storage.

use crate::error::{check_dim, invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Strictly increasing indices, no stored zeros.
    Sparse { indices: Vec<usize>, values: Vec<f64> },
}

/// A real coordinate vector with dense or sparse storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    dim: usize,
    storage: Storage,
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl Vector {
    /// Dense vector. Fails on NaN or infinite entries.
    pub fn dense(values: Vec<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFinite("Vector::dense"));
        }
        Ok(Self {
            dim: values.len(),
            storage: Storage::Dense(values),
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            storage: Storage::Dense(vec![0.0; dim]),
        }
    }

    /// Sparse vector from `(index, value)` pairs. Indices must be strictly
    /// increasing and below `dim`; explicit zeros are dropped.
    pub fn sparse(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, v) in pairs {
            if i >= dim {
                return Err(invalid(format!("sparse index {i} out of range for dimension {dim}")));
            }
            if let Some(&last) = indices.last() {
                if i <= last {
                    return Err(invalid(format!("sparse indices not strictly increasing at {i}")));
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("Vector::sparse"));
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(Self {
            dim,
            storage: Storage::Sparse { indices, values },
        })
    }

    /// Empty sparse vector.
    pub fn sparse_zeros(dim: usize) -> Self {
        Self {
            dim,
            storage: Storage::Sparse {
                indices: Vec::new(),
                values: Vec::new(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    /// Dense values, if stored densely.
    pub fn as_slice(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense(v) => Some(v),
            Storage::Sparse { .. } => None,
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[i],
            Storage::Sparse { indices, values } => match indices.binary_search(&i) {
                Ok(k) => values[k],
                Err(_) => 0.0,
            },
        }
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse { indices, .. } => indices.len(),
        }
    }

    /// Stored `(index, value)` pairs in ascending index order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.storage {
            Storage::Dense(v) => Box::new(v.iter().copied().enumerate()),
            Storage::Sparse { indices, values } => {
                Box::new(indices.iter().copied().zip(values.iter().copied()))
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(v) => v.clone(),
            Storage::Sparse { indices, values } => {
                let mut out = vec![0.0; self.dim];
                for (&i, &v) in indices.iter().zip(values) {
                    out[i] = v;
                }
                out
            }
        }
    }

    pub fn into_dense(self) -> Vec<f64> {
        match self.storage {
            Storage::Dense(v) => v,
            Storage::Sparse { .. } => self.to_dense(),
        }
    }

    /// Adds `a * self` into a dense buffer.
    pub fn add_scaled_to(&self, a: f64, out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, out.len())?;
        match &self.storage {
            Storage::Dense(v) => out.iter_mut().zip(v).for_each(|(o, x)| *o += a * x),
            Storage::Sparse { indices, values } => {
                for (&i, &x) in indices.iter().zip(values) {
                    out[i] += a * x;
                }
            }
        }
        Ok(())
    }

    /// Dot product against a dense slice.
    pub fn dot_dense(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(match &self.storage {
            Storage::Dense(v) => dense_dot(v, y),
            Storage::Sparse { indices, values } => {
                let mut acc = 0.0;
                for (&i, &x) in indices.iter().zip(values) {
                    acc += x * y[i];
                }
                acc
            }
        })
    }

    pub fn scale(&self, a: f64) -> Result<Vector> {
        let storage = match &self.storage {
            Storage::Dense(v) => Storage::Dense(v.iter().map(|x| a * x).collect()),
            Storage::Sparse { indices, values } => {
                let (indices, values) = indices
                    .iter()
                    .zip(values)
                    .map(|(&i, &v)| (i, a * v))
                    .filter(|&(_, v)| v != 0.0)
                    .unzip();
                Storage::Sparse { indices, values }
            }
        };
        Vector {
            dim: self.dim,
            storage,
        }
        .checked("scale")
    }

    pub fn norm_sq(&self) -> f64 {
        self.iter().map(|(_, v)| v * v).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm1(&self) -> f64 {
        self.iter().map(|(_, v)| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.iter().fold(0.0, |m, (_, v)| m.max(v.abs()))
    }

    fn checked(self, op: &'static str) -> Result<Vector> {
        let ok = match &self.storage {
            Storage::Dense(v) => all_finite(v),
            Storage::Sparse { values, .. } => all_finite(values),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// `a * x + y`. The result is sparse only when both inputs are sparse.
pub fn axpy(a: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    check_dim(x.dim, y.dim)?;
    let out = match (&x.storage, &y.storage) {
        (
            Storage::Sparse {
                indices: xi,
                values: xv,
            },
            Storage::Sparse {
                indices: yi,
                values: yv,
            },
        ) => {
            let mut indices = Vec::with_capacity(xi.len() + yi.len());
            let mut values = Vec::with_capacity(xi.len() + yi.len());
            let (mut p, mut q) = (0, 0);
            while p < xi.len() || q < yi.len() {
                let (i, v) = if q == yi.len() || (p < xi.len() && xi[p] < yi[q]) {
                    p += 1;
                    (xi[p - 1], a * xv[p - 1])
                } else if p == xi.len() || yi[q] < xi[p] {
                    q += 1;
                    (yi[q - 1], yv[q - 1])
                } else {
                    p += 1;
                    q += 1;
                    (xi[p - 1], a * xv[p - 1] + yv[q - 1])
                };
                if v != 0.0 {
                    indices.push(i);
                    values.push(v);
                }
            }
            Vector {
                dim: x.dim,
                storage: Storage::Sparse { indices, values },
            }
        }
        _ => {
            let mut out = y.to_dense();
            x.add_scaled_to(a, &mut out)?;
            Vector {
                dim: x.dim,
                storage: Storage::Dense(out),
            }
        }
    };
    out.checked("axpy")
}

/// Inner product, accumulated in ascending index order.
pub fn dot(x: &Vector, y: &Vector) -> Result<f64> {
    check_dim(x.dim, y.dim)?;
    match (&x.storage, &y.storage) {
        (Storage::Dense(a), Storage::Dense(b)) => Ok(dense_dot(a, b)),
        (Storage::Dense(a), _) => y.dot_dense(a),
        (_, Storage::Dense(b)) => x.dot_dense(b),
        (
            Storage::Sparse {
                indices: xi,
                values: xv,
            },
            Storage::Sparse {
                indices: yi,
                values: yv,
            },
        ) => {
            let (mut p, mut q, mut acc) = (0, 0, 0.0);
            while p < xi.len() && q < yi.len() {
                match xi[p].cmp(&yi[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        acc += xv[p] * yv[q];
                        p += 1;
                        q += 1;
                    }
                }
            }
            Ok(acc)
        }
    }
}

pub(crate) fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// A diagonal positive-definite metric `H = diag(h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMetric {
    diag: Vec<f64>,
}

impl DiagonalMetric {
    /// Fails unless every entry is finite and strictly positive.
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if let Some((i, &h)) = diag
            .iter()
            .enumerate()
            .find(|(_, h)| !(h.is_finite() && **h > 0.0))
        {
            return Err(invalid(format!("metric entry {i} must be positive, got {h}")));
        }
        Ok(Self { diag })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            diag: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `H x`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.dim())?;
        let out: Vec<f64> = x
            .to_dense()
            .iter()
            .zip(&self.diag)
            .map(|(v, h)| v * h)
            .collect();
        Vector::dense(out)
    }
}

/// `‖x‖²_H = Σ hᵢ xᵢ²`.
pub fn weighted_norm_sq(x: &Vector, metric: &DiagonalMetric) -> Result<f64> {
    check_dim(metric.dim(), x.dim())?;
    Ok(x.iter().map(|(i, v)| metric.diag[i] * v * v).sum())
}

/// `H⁻¹ x`, keeping the storage kind of `x`.
pub fn metric_apply_inverse(metric: &DiagonalMetric, x: &Vector) -> Result<Vector> {
    check_dim(metric.dim(), x.dim())?;
    let storage = match &x.storage {
        Storage::Dense(v) => Storage::Dense(v.iter().zip(&metric.diag).map(|(v, h)| v / h).collect()),
        Storage::Sparse { indices, values } => Storage::Sparse {
            indices: indices.clone(),
            values: indices
                .iter()
                .zip(values)
                .map(|(&i, &v)| v / metric.diag[i])
                .collect(),
        },
    };
    Vector {
        dim: x.dim,
        storage,
    }
    .checked("metric_apply_inverse")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> Vector {
        Vector::dense(v.to_vec()).unwrap()
    }

    #[test]
    fn axpy_examples() {
        assert_eq!(axpy(0.0, &d(&[1., 2.]), &d(&[3., 4.])).unwrap().to_dense(), vec![3., 4.]);
        assert_eq!(axpy(1.0, &d(&[1., 0.]), &d(&[0., 1.])).unwrap().to_dense(), vec![1., 1.]);
        let x = Vector::sparse(2, [(0, 1.0)]).unwrap();
        let r = axpy(-2.0, &x, &d(&[3., 4.])).unwrap();
        assert!(!r.is_sparse());
        assert_eq!(r.to_dense(), vec![1., 4.]);
    }

    #[test]
    fn axpy_sparse_stays_sparse() {
        let x = Vector::sparse(5, [(0, 1.0), (3, 2.0)]).unwrap();
        let y = Vector::sparse(5, [(1, 1.0), (3, 4.0)]).unwrap();
        let r = axpy(-2.0, &x, &y).unwrap();
        assert!(r.is_sparse());
        // index 3 cancels exactly and is dropped
        assert_eq!(r.nnz(), 2);
        assert_eq!(r.to_dense(), vec![-2., 1., 0., 0., 0.]);
    }

    #[test]
    fn axpy_dimension_mismatch() {
        assert!(matches!(
            axpy(1.0, &d(&[1.]), &d(&[1., 2.])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&d(&[1., 0.]), &d(&[0., 1.])).unwrap(), 0.0);
        assert_eq!(dot(&d(&[1., 2.]), &d(&[3., 4.])).unwrap(), 11.0);
        let s = Vector::sparse(3, [(2, 5.0)]).unwrap();
        assert_eq!(dot(&s, &d(&[0., 0., 2.])).unwrap(), 10.0);
        assert_eq!(dot(&d(&[0., 0., 2.]), &s).unwrap(), 10.0);
        assert!(dot(&s, &d(&[1.])).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let id = DiagonalMetric::identity(2);
        assert_eq!(weighted_norm_sq(&d(&[1., 1.]), &id).unwrap(), 2.0);
        let h = DiagonalMetric::new(vec![3., 5.]).unwrap();
        assert_eq!(weighted_norm_sq(&d(&[2., 0.]), &h).unwrap(), 12.0);
        assert_eq!(weighted_norm_sq(&Vector::zeros(2), &h).unwrap(), 0.0);
    }

    #[test]
    fn inverse_examples() {
        let id = DiagonalMetric::identity(2);
        assert_eq!(metric_apply_inverse(&id, &d(&[3., 4.])).unwrap().to_dense(), vec![3., 4.]);
        let h = DiagonalMetric::new(vec![2., 4.]).unwrap();
        assert_eq!(metric_apply_inverse(&h, &d(&[2., 4.])).unwrap().to_dense(), vec![1., 1.]);
        let h = DiagonalMetric::new(vec![0.5]).unwrap();
        assert_eq!(metric_apply_inverse(&h, &d(&[1.])).unwrap().to_dense(), vec![2.]);
    }

    #[test]
    fn metric_rejects_nonpositive() {
        assert!(DiagonalMetric::new(vec![1.0, 0.0]).is_err());
        assert!(DiagonalMetric::new(vec![-1.0]).is_err());
        assert!(DiagonalMetric::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn sparse_invariants_enforced() {
        assert!(Vector::sparse(3, [(1, 1.0), (1, 2.0)]).is_err());
        assert!(Vector::sparse(3, [(3, 1.0)]).is_err());
        assert_eq!(Vector::sparse(3, [(0, 0.0), (2, 1.0)]).unwrap().nnz(), 1);
        assert!(Vector::dense(vec![f64::INFINITY]).is_err());
    }

    fn pair(max_d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..max_d).prop_flat_map(|n| {
            (
                prop::collection::vec(-1e3..1e3f64, n),
                prop::collection::vec(-1e3..1e3f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn dot_is_symmetric_bitwise((x, y) in pair(40)) {
            let (x, y) = (d(&x), d(&y));
            prop_assert_eq!(dot(&x, &y).unwrap().to_bits(), dot(&y, &x).unwrap().to_bits());
        }

        #[test]
        fn identity_weighted_norm_is_dot((x, _) in pair(40)) {
            let x = d(&x);
            let a = weighted_norm_sq(&x, &DiagonalMetric::identity(x.dim())).unwrap();
            let b = dot(&x, &x).unwrap();
            prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn inverse_undoes_apply(
            (x, h) in (1usize..30).prop_flat_map(|n| (
                prop::collection::vec(-1e3..1e3f64, n),
                prop::collection::vec(-6.0..6.0f64, n),
            ))
        ) {
            let h = DiagonalMetric::new(h.iter().map(|e| 10f64.powf(*e)).collect()).unwrap();
            let x = d(&x);
            let back = metric_apply_inverse(&h, &h.apply(&x).unwrap()).unwrap();
            for (a, b) in back.to_dense().iter().zip(x.to_dense()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
        }
    }
}
