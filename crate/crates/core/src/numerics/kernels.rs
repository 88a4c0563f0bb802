//! Row-major dense kernels. All accumulate into `out` (`out += ...`).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// out[n×m] += a[n×k] · b[k×m]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[n×m] += a[n×k] · b[m×k]ᵀ
pub fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] += dot(arow, brow);
        }
    }
}

/// out[k×m] += a[n×k]ᵀ · b[n×m]
pub fn matmul_at_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Softmax over the unmasked entries of one row, max-subtracted.
/// Masked entries are written as exactly zero.
pub fn softmax_masked_row<T: Scalar>(
    scores: &[T],
    mask: &[bool],
    out: &mut [T],
    row: usize,
) -> Result<()> {
    let mut max = T::neg_infinity();
    for (&s, &m) in scores.iter().zip(mask) {
        if m && s > max {
            max = s;
        }
    }
    if max == T::neg_infinity() {
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidMask { row });
        }
        return Err(Error::Numerical(format!("non-finite scores in row {row}")));
    }
    let mut sum = T::zero();
    for ((o, &s), &m) in out.iter_mut().zip(scores).zip(mask) {
        if m {
            let e = (s - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = T::zero();
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o /= sum;
        }
    }
    Ok(())
}

/// Backward of a masked softmax row: dx = p ⊙ (dy − ⟨p, dy⟩). Masked entries
/// receive nothing.
pub fn softmax_row_backward<T: Scalar>(p: &[T], dy: &[T], mask: &[bool], dx: &mut [T]) {
    let mut s = T::zero();
    for ((&pv, &g), &m) in p.iter().zip(dy).zip(mask) {
        if m {
            s += pv * g;
        }
    }
    for (((d, &pv), &g), &m) in dx.iter_mut().zip(p).zip(dy).zip(mask) {
        if m {
            *d += pv * (g - s);
        }
    }
}
