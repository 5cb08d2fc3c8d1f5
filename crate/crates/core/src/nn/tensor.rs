use alloc::vec;
use alloc::vec::Vec;

use super::NnError;

/// Dense row-major f64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(alloc::format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all but the last axis.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Products below this many multiply-adds skip the packed kernel.
const SMALL_GEMM: usize = 2048;

/// `c[m,n] += A * B` where `A[i,p] = a[i*ars + p*acs]` and `B[p,j] = b[p*brs + j*bcs]`.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    a: &[f64],
    ars: usize,
    acs: usize,
    b: &[f64],
    brs: usize,
    bcs: usize,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * ars + (k - 1) * acs < a.len(), "gemm: lhs too short");
    assert!((k - 1) * brs + (n - 1) * bcs < b.len(), "gemm: rhs too short");
    assert!(m * n <= c.len(), "gemm: output too short");
    if m * k * n < SMALL_GEMM {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * ars + p * acs] * b[p * brs + j * bcs];
                }
                c[i * n + j] += acc;
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            ars as isize,
            acs as isize,
            b.as_ptr(),
            brs as isize,
            bcs as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_strided(a, k, 1, b, n, 1, c, m, k, n);
}

/// `c[m,n] += a[m,k] * b[n,k]^T`.
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_strided(a, k, 1, b, 1, k, c, m, k, n);
}

/// `c[m,n] += a[k,m]^T * b[k,n]`.
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_strided(a, 1, m, b, n, 1, c, m, k, n);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn kernels_agree_with_naive() {
        // small path and packed path, accumulating into a non-zero output
        for (m, k, n) in [(3, 5, 4), (20, 31, 17)] {
            let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.05 - 3.0).collect();
            let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.37).sin()).collect();
            let base: Vec<f64> = (0..m * n).map(|v| v as f64).collect();
            let expect: Vec<f64> = naive(&a, &b, m, k, n).iter().zip(&base).map(|(x, y)| x + y).collect();
            let close = |c: &[f64]| c.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-10);
            let mut c = base.clone();
            gemm_nn(&a, &b, &mut c, m, k, n);
            assert!(close(&c));
            let mut c = base.clone();
            gemm_nt(&a, &transpose(&b, k, n), &mut c, m, k, n);
            assert!(close(&c));
            let mut c = base.clone();
            gemm_tn(&transpose(&a, m, k), &b, &mut c, m, k, n);
            assert!(close(&c));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }
}
