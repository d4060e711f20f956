//! Plain array kernels shared by forward evaluation and backward replay.
//! Row-major layout throughout.

use crate::Real;

/// c += a @ b, where a is m×k and b is k×n.
pub fn matmul_acc(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        gemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c += a @ bᵀ, where a is m×k and b is n×k (so bᵀ is k×n).
pub fn matmul_nt_acc(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        gemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c += aᵀ @ b, where a is k×m and b is k×n.
pub fn matmul_tn_acc(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        gemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(not(feature = "narrow"))]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: *const Real,
    rsa: isize,
    csa: isize,
    b: *const Real,
    rsb: isize,
    csb: isize,
    beta: Real,
    c: *mut Real,
    rsc: isize,
    csc: isize,
) {
    matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
}

#[cfg(feature = "narrow")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: *const Real,
    rsa: isize,
    csa: isize,
    b: *const Real,
    rsb: isize,
    csb: isize,
    beta: Real,
    c: *mut Real,
    rsc: isize,
    csc: isize,
) {
    matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
}

pub fn dot(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(x: &[Real]) -> Real {
    dot(x, x).sqrt()
}

/// Row-wise softmax over the causal prefix: row i is normalized over columns
/// 0..=i; columns beyond i are exactly zero.
pub fn causal_softmax(x: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let width = (i + 1).min(cols);
        let row = &x[i * cols..i * cols + width];
        let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[i * cols + j] = e;
            sum += e;
        }
        for j in 0..width {
            out[i * cols + j] /= sum;
        }
    }
    out
}

/// Dense softmax of a single row (no masking). Used by evaluation paths.
pub fn softmax(x: &[Real]) -> Vec<Real> {
    let max = x.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: Real = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// log softmax of a single row, numerically stabilized.
pub fn log_softmax(x: &[Real]) -> Vec<Real> {
    let max = x.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let lse: Real = x.iter().map(|v| (v - max).exp()).sum::<Real>().ln() + max;
    x.iter().map(|v| v - lse).collect()
}

pub fn gelu(x: Real) -> Real {
    // tanh approximation
    const C: Real = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_derivative(x: Real) -> Real {
    const C: Real = 0.7978845608028654;
    let x3 = 0.044715 * x * x * x;
    let t = (C * (x + x3)).tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable log(1 + exp(x)).
pub fn softplus(x: Real) -> Real {
    x.max(0.0) + (-(x.abs())).exp().ln_1p()
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        matmul_acc(&mut c, &a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_nt_matches_transposed() {
        let a = [1.0, 2.0, 3.0, 4.0]; // 2x2
        let b = [5.0, 6.0, 7.0, 8.0]; // 2x2, used as transposed
        let mut c = vec![0.0; 4];
        matmul_nt_acc(&mut c, &a, &b, 2, 2, 2);
        // a @ b^T = [[1*5+2*6, 1*7+2*8], [3*5+4*6, 3*7+4*8]]
        assert_eq!(c, vec![17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn causal_rows_sum_to_one() {
        let x: Vec<Real> = (0..16).map(|i| (i as Real) * 0.3 - 2.0).collect();
        let y = causal_softmax(&x, 4, 4);
        for i in 0..4 {
            let s: Real = y[i * 4..(i + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for j in (i + 1)..4 {
                assert_eq!(y[i * 4 + j], 0.0);
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - (2.0 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-6, "x={x}");
        }
    }
}
