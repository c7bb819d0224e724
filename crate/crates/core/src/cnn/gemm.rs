//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major buffers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k`, `op(b)` is
/// `k x n` and `c` is `m x n`, all row-major and contiguous.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: Op, b: &[f64], tb: Op, beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the assertions above guarantee every index the kernel touches
    // (row stride * (rows-1) + col stride * (cols-1)) lies inside its slice,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
