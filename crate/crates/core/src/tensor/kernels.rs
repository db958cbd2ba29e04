//! Matrix kernels. Each output row is accumulated in a fixed order that does
//! not depend on how many rows are in the batch, so batched and unbatched
//! evaluations agree bitwise.

use super::Scalar;

/// `out[m,n] = a[m,k] * b[k,n]`, overwriting `out`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::ZERO);
    if n == 0 {
        return;
    }
    let mut rows = out.chunks_exact_mut(n);
    let mut i = 0;
    while i + 4 <= m {
        let c0 = rows.next().expect("row");
        let c1 = rows.next().expect("row");
        let c2 = rows.next().expect("row");
        let c3 = rows.next().expect("row");
        let (r0, r1, r2, r3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        for (p, brow) in b.chunks_exact(n).enumerate() {
            let (x0, x1, x2, x3) = (r0[p], r1[p], r2[p], r3[p]);
            for ((((y0, y1), y2), y3), &bj) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(brow)
            {
                *y0 += x0 * bj;
                *y1 += x1 * bj;
                *y2 += x2 * bj;
                *y3 += x3 * bj;
            }
        }
        i += 4;
    }
    for c in rows {
        let r = &a[i * k..(i + 1) * k];
        for (p, brow) in b.chunks_exact(n).enumerate() {
            let x = r[p];
            for (y, &bj) in c.iter_mut().zip(brow) {
                *y += x * bj;
            }
        }
        i += 1;
    }
}

/// Transpose of a row-major `[m, n]` matrix.
pub fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    const B: usize = 32;
    for i0 in (0..m).step_by(B) {
        for j0 in (0..n).step_by(B) {
            for i in i0..(i0 + B).min(m) {
                for j in j0..(j0 + B).min(n) {
                    out[j * m + i] = a[i * n + j];
                }
            }
        }
    }
    out
}

/// Dot product with eight interleaved partial sums.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::ZERO;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
