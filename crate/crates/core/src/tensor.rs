//! Dense row-major f64 tensors and the scalar kernels shared by the taped
//! and untaped execution paths.
//!
//! Keeping one kernel per op guarantees that a value computed with a tape
//! attached is bit-identical to the same value computed without one.

use crate::error::{Error, Result};

/// Floor applied inside `log`; cross-entropy on a saturated softmax must
/// stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Dense tensor: `data` is row-major, `product(shape) == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&s| s == 0) || numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor-new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::NonScalarRoot { shape: self.shape.clone() });
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data.iter().map(|x| c * x).collect();
    Tensor { shape: a.shape.clone(), data }
}

/// Matrix times vector or matrix times matrix; no other broadcasting.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if !a.is_matrix() {
        return Err(mismatch());
    }
    let (m, n) = (a.shape[0], a.shape[1]);
    if b.is_vector() {
        if b.len() != n {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &a.data[i * n..(i + 1) * n];
            out[i] = row.iter().zip(&b.data).map(|(w, x)| w * x).sum();
        }
        Ok(Tensor::vector(out))
    } else if b.is_matrix() {
        let (n2, p) = (b.shape[0], b.shape[1]);
        if n2 != n {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for k in 0..n {
                let aik = a.data[i * n + k];
                for j in 0..p {
                    out[i * p + j] += aik * b.data[k * p + j];
                }
            }
        }
        Tensor::matrix(m, p, out)
    } else {
        Err(mismatch())
    }
}

pub fn relu(a: &Tensor) -> Tensor {
    // NaN passes through rather than being silently zeroed, so upstream
    // numeric failures stay detectable.
    let data = a
        .data
        .iter()
        .map(|&x| if x.is_nan() || x > 0.0 { x } else { 0.0 })
        .collect();
    Tensor { shape: a.shape.clone(), data }
}

pub fn tanh(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|x| x.tanh()).collect();
    Tensor { shape: a.shape.clone(), data }
}

pub fn exp(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|x| x.exp()).collect();
    Tensor { shape: a.shape.clone(), data }
}

/// Clamped natural log: `ln(max(v, LOG_FLOOR))` for finite v. Non-finite
/// inputs propagate (`f64::max` would otherwise swallow a NaN into the
/// clamp and hide an upstream failure).
pub fn log(a: &Tensor) -> Tensor {
    let data = a
        .data
        .iter()
        .map(|&x| {
            if x.is_finite() {
                x.max(LOG_FLOOR).ln()
            } else if x == f64::INFINITY {
                x
            } else {
                f64::NAN
            }
        })
        .collect();
    Tensor { shape: a.shape.clone(), data }
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

/// Max-stabilized softmax over the flattened entries.
pub fn softmax(a: &Tensor) -> Tensor {
    let max = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.data.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let data = exps.iter().map(|e| e / total).collect();
    Tensor { shape: a.shape.clone(), data }
}
