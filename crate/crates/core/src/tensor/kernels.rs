//! Dense kernels shared by the forward and backward passes.
//!
//! Parallel variants split work by output row only, so every output element
//! is reduced in the same order regardless of thread count.

use rayon::prelude::*;

use super::Float;

const PAR_THRESHOLD: usize = 1 << 16;

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`, all row-major.
pub fn gemm_acc<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    let row = |(a_row, c_row): (&[T], &mut [T])| {
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        a.par_chunks(k.max(1))
            .zip(c.par_chunks_mut(n))
            .for_each(row);
    } else {
        a.chunks(k.max(1)).zip(c.chunks_mut(n)).for_each(row);
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn gemm_nt_acc<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || k == 0 {
        return;
    }
    let row = |(a_row, c_row): (&[T], &mut [T])| {
        for (j, cj) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *cj += acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        a.par_chunks(k).zip(c.par_chunks_mut(n)).for_each(row);
    } else {
        a.chunks(k).zip(c.chunks_mut(n)).for_each(row);
    }
}

/// `c += aᵀ · b` with `a: m×k`, `b: m×n`, `c: k×n`.
pub fn gemm_tn_acc<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let at = transpose(a, m, k);
    gemm_acc(&at, b, c, k, m, n);
}

pub fn transpose<T: Float>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
