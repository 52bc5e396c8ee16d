//! Dense row-major tensors over `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking the shape product and that all values are finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        let t = Self { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![1.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.ndim(), 2, "rows() needs a 2-D tensor, got {:?}", self.shape);
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.ndim(), 2, "cols() needs a 2-D tensor, got {:?}", self.shape);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{context}: element {i} is {v}"
                )));
            }
        }
        Ok(())
    }

    /// Exact equality of shape and every element's bit pattern.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `x [n×k] · wᵀ [m×k] -> [n×m]`
pub fn matmul_nt(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, k) = (x.rows(), x.cols());
    let (m, k2) = (w.rows(), w.cols());
    assert_eq!(k, k2, "matmul_nt inner dims: {k} vs {k2}");
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..m {
            let wj = w.row(j);
            let mut acc = 0.0;
            for t in 0..k {
                acc += xi[t] * wj[t];
            }
            out[i * m + j] = acc;
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

/// `aᵀ [n×m] · b [n×k] -> [m×k]` (gradient accumulation over the batch axis)
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), a.cols());
    let (n2, k) = (b.rows(), b.cols());
    assert_eq!(n, n2, "matmul_tn batch dims: {n} vs {n2}");
    let mut out = vec![0.0; m * k];
    for i in 0..n {
        let ai = a.row(i);
        let bi = b.row(i);
        for j in 0..m {
            let aij = ai[j];
            if aij == 0.0 {
                continue;
            }
            let row = &mut out[j * k..(j + 1) * k];
            for t in 0..k {
                row[t] += aij * bi[t];
            }
        }
    }
    Tensor {
        shape: vec![m, k],
        data: out,
    }
}

/// `a [n×m] · b [m×k] -> [n×k]`
pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), a.cols());
    let (m2, k) = (b.rows(), b.cols());
    assert_eq!(m, m2, "matmul_nn inner dims: {m} vs {m2}");
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let aij = ai[j];
            if aij == 0.0 {
                continue;
            }
            let bj = b.row(j);
            let row = &mut out[i * k..(i + 1) * k];
            for t in 0..k {
                row[t] += aij * bj[t];
            }
        }
    }
    Tensor {
        shape: vec![n, k],
        data: out,
    }
}
