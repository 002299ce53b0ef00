//! Dense row-major matrices and the handful of operations the color-mapping
//! pipeline needs: multiplication, the exact-erf GeLU, and closed-form
//! multiplication counting for cost accounting.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Dimension {
                context: "Matrix::from_vec",
                expected: format!("{}x{} = {} elements", rows, cols, rows * cols),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Elementwise map, consuming self.
    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Matrix {
        for v in &mut self.data {
            *v = f(*v);
        }
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Standard matrix product. Dimension mismatch is a hard error naming both
/// shapes.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::MatmulShape(a.rows, a.cols, b.rows, b.cols));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    // i-k-j ordering: streams over rows of b, vectorizes on the inner loop.
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for j in 0..n {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    Ok(out)
}

/// Product of a chain, evaluated left to right.
pub fn matmul_chain(ms: &[&Matrix]) -> Result<Matrix> {
    if ms.len() < 2 {
        return Err(Error::ChainTooShort(ms.len()));
    }
    let mut acc = matmul(ms[0], ms[1])?;
    for m in &ms[2..] {
        acc = matmul(&acc, m)?;
    }
    Ok(acc)
}

/// Exact GeLU: x * Phi(x) with Phi the standard normal CDF via erf.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Derivative of the exact GeLU: Phi(x) + x * phi(x).
#[inline]
pub fn gelu_prime_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

/// Tanh approximation of GeLU. Kept only to document its divergence from the
/// exact form; the pipeline itself always uses `gelu_scalar`.
#[inline]
pub fn gelu_tanh_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Elementwise exact GeLU over a matrix.
pub fn gelu(x: &Matrix) -> Matrix {
    x.clone().map(gelu_scalar)
}

/// Scalar multiplications needed to evaluate a multiplication-compatible
/// chain of the given shapes left to right: sum over adjacent pairs of
/// m * k * n.
pub fn mul_count(shapes: &[(usize, usize)]) -> Result<u64> {
    if shapes.len() < 2 {
        return Err(Error::ChainTooShort(shapes.len()));
    }
    let mut total = 0u64;
    let (rows, mut inner) = shapes[0];
    for &(r, c) in &shapes[1..] {
        if inner != r {
            return Err(Error::MatmulShape(rows, inner, r, c));
        }
        total += (rows * inner * c) as u64;
        inner = c;
        let _ = rows;
    }
    Ok(total)
}
