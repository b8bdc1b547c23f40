//! Dense vector and matrix primitives shared by every other module.
//!
//! All arithmetic runs in `f64`; storage formats narrow to `f32` only at the
//! file boundary (see [`crate::codec`]).

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance for the unit-norm tag.
pub const UNIT_TOL: f64 = 1e-6;

/// A fixed-dimension real vector, optionally tagged unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    unit: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            values,
            unit: false,
        })
    }

    /// Wraps `values` and tags it unit-norm; fails if the norm is off by more than [`UNIT_TOL`].
    pub fn new_unit(values: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(values)?;
        let n = norm(&e.values);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "vector tagged unit-norm has norm {n}"
            )));
        }
        e.unit = true;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_unit(&self) -> bool {
        self.unit
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Multiplies every entry by `a`; the unit tag survives only for `a == 1`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * a).collect();
        let mut e = Self::new(values)?;
        e.unit = self.unit && a == 1.0;
        Ok(e)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two slices. Shared by [`cosine`] and the matrix routines.
pub fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu <= ZERO_NORM || nv <= ZERO_NORM {
        return Err(Error::ZeroVector { row: None });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    cosine_slices(u.values(), v.values())
}

/// Scales `v` to unit length.
pub fn l2_normalize(v: &Embedding) -> Result<Embedding> {
    let n = v.norm();
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector { row: None });
    }
    Ok(Embedding {
        values: v.values.iter().map(|x| x / n).collect(),
        unit: true,
    })
}

/// Row-major `M × d` real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{dim} matrix needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        let arr = Array2::from_shape_vec((rows, dim), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        // Normalise to standard layout so row slices are contiguous.
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, flat)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            data: Array2::zeros((rows, dim)),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn row_view(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    /// Copies the selected rows, in the given order.
    pub fn gather(&self, ids: &[usize]) -> Result<FeatureMatrix> {
        let d = self.dim();
        let mut flat = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= self.rows() {
                return Err(Error::UnknownId(id.to_string()));
            }
            flat.extend_from_slice(self.row(id));
        }
        FeatureMatrix::new(ids.len(), d, flat)
    }

    /// Row-wise L2 normalisation; reports the first zero row.
    pub fn normalized_rows(&self) -> Result<FeatureMatrix> {
        let mut out = self.data.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if n <= ZERO_NORM {
                return Err(Error::ZeroVector { row: Some(i) });
            }
            row.mapv_inplace(|v| v / n);
        }
        Ok(FeatureMatrix { data: out })
    }

    pub fn row_embedding(&self, i: usize) -> Result<Embedding> {
        Embedding::new(self.row(i).to_vec())
    }
}
