//! Dense products behind the convolution kernels.
//!
//! Every output element is accumulated from zero over the inner index in
//! ascending order, whatever the tiling or worker count. Work is split
//! over disjoint output rows only, so results are bit-identical across
//! thread counts.

use rayon::prelude::*;

use super::Real;

const COL_TILE: usize = 64;
const ROW_GROUP: usize = 4;

/// `out[m, q] = Σ_k a[m, k] · b[k, q]`, with `out` overwritten.
pub(crate) fn matmul<T: Real>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    rows: usize,
    inner: usize,
    cols: usize,
) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    out.par_chunks_mut(ROW_GROUP * cols)
        .enumerate()
        .for_each(|(group, block)| {
            let row0 = group * ROW_GROUP;
            let nrows = block.len() / cols;
            block.iter_mut().for_each(|v| *v = T::zero());
            let mut q0 = 0;
            while q0 < cols {
                let q1 = (q0 + COL_TILE).min(cols);
                if nrows == ROW_GROUP {
                    let (r0, rest) = block.split_at_mut(cols);
                    let (r1, rest) = rest.split_at_mut(cols);
                    let (r2, r3) = rest.split_at_mut(cols);
                    let (r0, r1, r2, r3) = (
                        &mut r0[q0..q1],
                        &mut r1[q0..q1],
                        &mut r2[q0..q1],
                        &mut r3[q0..q1],
                    );
                    for k in 0..inner {
                        let a0 = a[row0 * inner + k];
                        let a1 = a[(row0 + 1) * inner + k];
                        let a2 = a[(row0 + 2) * inner + k];
                        let a3 = a[(row0 + 3) * inner + k];
                        let brow = &b[k * cols + q0..k * cols + q1];
                        for (j, &bv) in brow.iter().enumerate() {
                            r0[j] += a0 * bv;
                            r1[j] += a1 * bv;
                            r2[j] += a2 * bv;
                            r3[j] += a3 * bv;
                        }
                    }
                } else {
                    for r in 0..nrows {
                        let row = &mut block[r * cols + q0..r * cols + q1];
                        for k in 0..inner {
                            let av = a[(row0 + r) * inner + k];
                            let brow = &b[k * cols + q0..k * cols + q1];
                            for (o, &bv) in row.iter_mut().zip(brow) {
                                *o += av * bv;
                            }
                        }
                    }
                }
                q0 = q1;
            }
        });
}

/// `out[m, k] = Σ_q a[m, q] · b[k, q]`, accumulating into `out`.
///
/// Used for weight gradients, where the reduction runs over batch and
/// spatial positions in row-major order.
pub(crate) fn matmul_nt_acc<T: Real>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    rows: usize,
    inner: usize,
    cols: usize,
) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * inner);
    out.par_chunks_mut(inner).enumerate().for_each(|(m, orow)| {
        let arow = &a[m * cols..(m + 1) * cols];
        for (k, o) in orow.iter_mut().enumerate() {
            let brow = &b[k * cols..(k + 1) * cols];
            let mut acc = *o;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    });
}
