//! Dense row-major arrays of `f64` and the pointwise kernels built on them.

use crate::error::{MastError, Result};

/// Layer-norm stabilizer.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Default negative slope of the leaky ReLU.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// An n-dimensional array stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MastError::Shape {
                op: "Array::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Array {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Array {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Array::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(MastError::Shape {
                    op: "Array::from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Array {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a matrix (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Number of columns of a matrix (the extent for vectors).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let cols = self.cols();
        self.data[i * cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(MastError::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Array {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Array {
            shape: vec![idx.len(), c],
            data,
        }
    }

    pub fn matmul(&self, other: &Array) -> Result<Array> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(MastError::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Array {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Array {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Array {
            shape: vec![c, r],
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out += a (m×k) · b (k×n)`, row-major, i-k-j loop order.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// Softmax over the unmasked entries; masked entries are exactly zero.
pub fn softmax_masked(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(MastError::Shape {
            op: "softmax_masked",
            lhs: vec![logits.len()],
            rhs: vec![mask.len()],
        });
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(MastError::EmptyMask);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// `(x − mean)/sqrt(var + ε) ⊙ gain + bias` with population variance.
pub fn layernorm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let (xhat, _) = normalize(x);
    xhat.iter()
        .zip(gain)
        .zip(bias)
        .map(|((h, g), b)| h * g + b)
        .collect()
}

/// Returns the normalized vector and `1/sqrt(var + ε)`.
pub(crate) fn normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + LAYERNORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect()
}

/// Derivative of the leaky ReLU; the kink at zero takes the negative-side slope.
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Array::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(Array::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn one_by_one_product() {
        let a = Array::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Array::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Array::zeros(&[2, 3]);
        let b = Array::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_masked(&[0.0, 0.0, 0.0], &[true; 3]).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax_masked(&[5.0, 100.0], &[true, false]).unwrap(), vec![1.0, 0.0]);
        let e = std::f64::consts::E;
        let p = softmax_masked(&[1.0, 2.0, 3.0], &[true, true, false]).unwrap();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn softmax_all_masked_is_an_error() {
        assert_eq!(softmax_masked(&[1.0, 2.0], &[false, false]), Err(MastError::EmptyMask));
    }

    #[test]
    fn layernorm_examples() {
        let out = layernorm(&[3.0; 4], &[1.0; 4], &[0.0; 4]);
        assert!(out.iter().all(|&v| v == 0.0));
        let out = layernorm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2]);
        assert!((out[0] - 1.0).abs() < 1e-4 && out[0] < 1.0);
        assert!((out[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(&[2.0, -2.0], 0.01), vec![2.0, -0.02]);
        assert_eq!(leaky_relu(&[0.0; 3], 0.01), vec![0.0; 3]);
        assert_eq!(leaky_relu_grad(-1.0, 0.01), 0.01);
        assert_eq!(leaky_relu_grad(0.0, 0.01), 0.01);
    }
}
