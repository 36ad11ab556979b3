use super::Scalar;

const ROWS: usize = 8;
const COLS: usize = 32;

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major; `c` is overwritten.
///
/// Every output element starts at zero and accumulates `a[i][p]·b[p][j]` for
/// `p = 0, 1, …, k-1` in that order with separate multiply and add, so the
/// result is bit-identical to the textbook triple loop. Tiling only regroups
/// independent output elements.
pub fn gemm<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + ROWS <= m {
        let mut j = 0;
        while j + COLS <= n {
            tile::<S>(a, b, c, i, j, k, n);
            j += COLS;
        }
        if j < n {
            for r in i..i + ROWS {
                row_segment(a, b, c, r, j, n, k, n);
            }
        }
        i += ROWS;
    }
    for r in i..m {
        row_segment(a, b, c, r, 0, n, k, n);
    }
}

#[inline(always)]
fn tile<S: Scalar>(a: &[S], b: &[S], c: &mut [S], i: usize, j: usize, k: usize, n: usize) {
    let mut acc = [[S::zero(); COLS]; ROWS];
    for p in 0..k {
        let brow: &[S; COLS] = b[p * n + j..p * n + j + COLS].try_into().unwrap();
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let av = a[(i + r) * k + p];
            for (x, &bv) in acc_row.iter_mut().zip(brow) {
                *x = *x + av * bv;
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        c[(i + r) * n + j..(i + r) * n + j + COLS].copy_from_slice(acc_row);
    }
}

#[allow(clippy::too_many_arguments)]
fn row_segment<S: Scalar>(a: &[S], b: &[S], c: &mut [S], r: usize, j0: usize, j1: usize, k: usize, n: usize) {
    let out = &mut c[r * n + j0..r * n + j1];
    out.fill(S::zero());
    for p in 0..k {
        let av = a[r * k + p];
        let brow = &b[p * n + j0..p * n + j1];
        for (x, &bv) in out.iter_mut().zip(brow) {
            *x = *x + av * bv;
        }
    }
}

/// `dst[cols×rows] = srcᵀ` for a row-major `rows×cols` source.
pub fn transpose2d<S: Copy>(src: &[S], dst: &mut [S], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
