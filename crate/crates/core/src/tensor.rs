//! Dense row-major `f32` tensors and the handful of kernels a ViT forward
//! pass needs.
//!
//! Every reduction runs in ascending index order with an `f32` accumulator
//! starting at zero, so a row computed alone and the same row computed
//! inside a larger batch are bitwise identical. The patching engine relies
//! on this to make the parallel and per-patch attribution paths agree
//! exactly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    /// Stacks equal-length rows into a `rows.len() × width` matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![width],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            other => Err(Error::ShapeMismatch {
                op,
                left: other.to_vec(),
                right: vec![],
            }),
        }
    }
}

/// Dot product accumulated left to right.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `c[i][j] = Σ_t a[i][t]·b[t][j]`, summed over ascending `t`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, n) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        // i-t-j loop order keeps each c[i][j] accumulating in ascending t.
        for (t, &av) in arow.iter().enumerate() {
            let brow = &b.data[t * n..(t + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `x·W + bias` with `W` stored `in × out`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, weight)?;
    add_row_bias(&mut y, bias)?;
    Ok(y)
}

pub fn add_row_bias(x: &mut Tensor, bias: &Tensor) -> Result<()> {
    let n = x.cols();
    if bias.numel() != n {
        return Err(Error::ShapeMismatch {
            op: "add_row_bias",
            left: x.shape.clone(),
            right: bias.shape.clone(),
        });
    }
    for row in x.data.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(())
}

pub fn add_assign(x: &mut Tensor, y: &Tensor) -> Result<()> {
    if x.shape != y.shape {
        return Err(Error::ShapeMismatch {
            op: "add_assign",
            left: x.shape.clone(),
            right: y.shape.clone(),
        });
    }
    for (a, b) in x.data.iter_mut().zip(&y.data) {
        *a += b;
    }
    Ok(())
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.require_matrix("softmax_rows")?;
    let mut out = x.clone();
    let n = out.cols();
    for row in out.data.chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub fn layernorm_row(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32, out: &mut [f32]) {
    let d = x.len() as f32;
    let mut sum = 0.0f32;
    for v in x {
        sum += v;
    }
    let mean = sum / d;
    let mut var = 0.0f32;
    for v in x {
        let c = v - mean;
        var += c * c;
    }
    let inv = 1.0 / (var / d + eps).sqrt();
    for (((o, v), g), b) in out.iter_mut().zip(x).zip(gamma).zip(beta) {
        *o = (v - mean) * inv * g + b;
    }
}

/// Normalizes every vector along the last axis, then applies `γ·x̂ + β`.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::ShapeMismatch {
            op: "layernorm",
            left: x.shape.clone(),
            right: gamma.shape.clone(),
        });
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "layernorm eps must be positive, got {eps}"
        )));
    }
    let mut out = Tensor::zeros(x.shape.clone());
    for (src, dst) in x.data.chunks_exact(d).zip(out.data.chunks_exact_mut(d)) {
        layernorm_row(src, &gamma.data, &beta.data, eps, dst);
    }
    Ok(out)
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

/// GELU, tanh form: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    gelu_in_place(&mut out);
    out
}

pub fn gelu_in_place(x: &mut Tensor) {
    for v in x.data.iter_mut() {
        *v = gelu_scalar(*v);
    }
}
