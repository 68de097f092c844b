use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Precision tag written next to serialized arrays.
#[cfg(not(feature = "f32"))]
pub const PRECISION: &str = "f64";
#[cfg(feature = "f32")]
pub const PRECISION: &str = "f32";

/// Dense row-major array.
///
/// Every operation on the tape treats arrays as matrices: a 1-D array of
/// length `n` behaves as a `1 x n` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Array::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if shape.len() > 2 {
            return Err(Error::shape("Array::new", "only 1-D and 2-D arrays are supported"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: Real) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: Real) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<Real>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows<R: AsRef<[Real]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Array::from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<Real>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[Real] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Real) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, mut f: impl FnMut(Real) -> Real) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Real, Real) -> Real) -> Result<Self> {
        if self.data.len() != other.data.len() || self.rows() != other.rows() {
            return Err(Error::shape(
                "Array::zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Plain (non-taped) matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{m}x{k} times {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, &self.data, (k, 1), &other.data, (n, 1), &mut out);
        Ok(Self::from_parts(m, n, out))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(c, r, out)
    }

    /// Rows selected by `index`, in order.
    pub fn select_rows(&self, index: &[usize]) -> Self {
        let c = self.cols();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(self.row(i));
        }
        Self::from_parts(index.len(), c, out)
    }

    /// Reshape view as a 2-D matrix without touching the data.
    pub fn as_matrix(mut self) -> Self {
        if self.shape.len() != 2 {
            self.shape = vec![self.rows(), self.cols()];
        }
        self
    }
}

impl std::ops::Index<std::ops::Range<usize>> for Array {
    type Output = [Real];
    fn index(&self, r: std::ops::Range<usize>) -> &[Real] {
        &self.data()[r]
    }
}

impl std::ops::IndexMut<std::ops::Range<usize>> for Array {
    fn index_mut(&mut self, r: std::ops::Range<usize>) -> &mut [Real] {
        &mut self.data_mut()[r]
    }
}

/// `c += a * b` for strided row-major operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    a_strides: (usize, usize),
    b: &[Real],
    b_strides: (usize, usize),
    c: &mut [Real],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers guarantee that the strided views stay inside the slices;
    // the largest touched offsets are (m-1, k-1) for a, (k-1, n-1) for b and
    // (m-1, n-1) for c.
    debug_assert!((m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    debug_assert!((k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    unsafe {
        gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            c.as_mut_ptr(),
            n as isize,
        );
    }
}

#[cfg(not(feature = "f32"))]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: *const Real,
    rsa: isize,
    csa: isize,
    b: *const Real,
    rsb: isize,
    csb: isize,
    c: *mut Real,
    rsc: isize,
) {
    matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, 1);
}

#[cfg(feature = "f32")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: *const Real,
    rsa: isize,
    csa: isize,
    b: *const Real,
    rsb: isize,
    csb: isize,
    c: *mut Real,
    rsc: isize,
) {
    matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Array::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let i = Array::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Array::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Array::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn shape_product_is_checked() {
        assert!(Array::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Array::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
