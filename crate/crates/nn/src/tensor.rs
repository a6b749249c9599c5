//! Dense row-major f64 matrices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length does not match shape"
        );
        Self { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `self * other`, optionally with either operand transposed.
    pub fn matmul_t(&self, ta: bool, other: &Tensor, tb: bool) -> Tensor {
        let (m, k) = if ta {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        let (k2, n) = if tb {
            (other.cols, other.rows)
        } else {
            (other.rows, other.cols)
        };
        assert_eq!(
            k,
            k2,
            "matmul inner dimensions differ: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Tensor::zeros(m, n);
        gemm_into(self, ta, other, tb, &mut out, 0.0);
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(false, other, false)
    }
}

/// `out = a' * b' + beta * out` where primes denote optional transposes.
pub fn gemm_into(a: &Tensor, ta: bool, b: &Tensor, tb: bool, out: &mut Tensor, beta: f64) {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if tb { b.rows } else { b.cols };
    assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut out.data {
            *x *= beta;
        }
        return;
    }
    if !ta && m <= SMALL_ROWS {
        small_rows(a, b, tb, out, beta, k, n);
        return;
    }
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: strides and dimensions describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row counts up to which products skip packing and stream `b` once.
pub(crate) const SMALL_ROWS: usize = 8;

fn small_rows(a: &Tensor, b: &Tensor, tb: bool, out: &mut Tensor, beta: f64, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { small_rows_fma(a, b, tb, out, beta, k, n) };
        return;
    }
    small_rows_body::<false>(a, b, tb, out, beta, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn small_rows_fma(
    a: &Tensor,
    b: &Tensor,
    tb: bool,
    out: &mut Tensor,
    beta: f64,
    k: usize,
    n: usize,
) {
    small_rows_body::<true>(a, b, tb, out, beta, k, n)
}

#[inline(always)]
fn madd<const FMA: bool>(x: f64, y: f64, acc: f64) -> f64 {
    if FMA {
        x.mul_add(y, acc)
    } else {
        acc + x * y
    }
}

#[inline(always)]
#[allow(clippy::needless_range_loop)]
fn small_rows_body<const FMA: bool>(
    a: &Tensor,
    b: &Tensor,
    tb: bool,
    out: &mut Tensor,
    beta: f64,
    k: usize,
    n: usize,
) {
    if beta == 0.0 {
        out.data.fill(0.0);
    } else if beta != 1.0 {
        out.data.iter_mut().for_each(|x| *x *= beta);
    }
    let m = a.rows;
    let (ad, bd) = (&a.data, &b.data);
    if tb {
        // out[i, j] = a_i . b_j
        for j in 0..n {
            let bj = &bd[j * k..(j + 1) * k];
            for i in 0..m {
                out.data[i * n + j] += dot(&ad[i * k..(i + 1) * k], bj);
            }
        }
        return;
    }
    const R: usize = 4;
    const C: usize = 8;
    let full_cols = n - n % C;
    let mut i0 = 0;
    while i0 < m {
        let rows = R.min(m - i0);
        for j0 in (0..full_cols).step_by(C) {
            let mut acc = [[0.0f64; C]; R];
            for p in 0..k {
                let w: &[f64; C] = bd[p * n + j0..p * n + j0 + C].try_into().unwrap();
                for r in 0..R {
                    if r < rows {
                        let x = ad[(i0 + r) * k + p];
                        for l in 0..C {
                            acc[r][l] = madd::<FMA>(x, w[l], acc[r][l]);
                        }
                    }
                }
            }
            for r in 0..rows {
                for (o, v) in out.data[(i0 + r) * n + j0..(i0 + r) * n + j0 + C]
                    .iter_mut()
                    .zip(&acc[r])
                {
                    *o += v;
                }
            }
        }
        for j in full_cols..n {
            for r in 0..rows {
                let mut s = 0.0;
                for p in 0..k {
                    s = madd::<FMA>(ad[(i0 + r) * k + p], bd[p * n + j], s);
                }
                out.data[(i0 + r) * n + j] += s;
            }
        }
        i0 += rows;
    }
}

#[inline(always)]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(p, q)| p * q)
        .sum();
    for (p, q) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += p[l] * q[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
