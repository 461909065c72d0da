//! Dense kernels behind the tape ops. Written so the inner loops run over
//! contiguous slices and auto-vectorize; this is the hot path of training.

use super::Scalar;

/// Dot product with eight partial accumulators so LLVM can vectorize the
/// reduction without float reassociation.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let a8 = &a[c * 8..c * 8 + 8];
        let b8 = &b[c * 8..c * 8 + 8];
        for j in 0..8 {
            acc[j] = acc[j] + a8[j] * b8[j];
        }
    }
    let mut tail = F::zero();
    for j in chunks * 8..a.len() {
        tail += a[j] * b[j];
    }
    acc.iter().copied().sum::<F>() + tail
}

/// y += alpha * x over contiguous slices.
pub fn axpy<F: Scalar>(y: &mut [F], alpha: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// out[r][o] = dot(x[r], w[o]) for row-major x: [rows x inner], w: [out x inner].
pub fn matmul_xwt<F: Scalar>(x: &[F], w: &[F], out: &mut [F], rows: usize, inner: usize, outc: usize) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(w.len(), outc * inner);
    debug_assert_eq!(out.len(), rows * outc);
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * outc..(r + 1) * outc];
        for (o, slot) in or.iter_mut().enumerate() {
            *slot = dot(xr, &w[o * inner..(o + 1) * inner]);
        }
    }
}

/// Numerically safe softmax into `out`, returning nothing; max-subtracted.
pub fn softmax<F: Scalar>(logits: &[F], out: &mut [F]) {
    debug_assert_eq!(logits.len(), out.len());
    let mut hi = logits[0];
    for &v in &logits[1..] {
        if v > hi {
            hi = v;
        }
    }
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(logits) {
        let e = (v - hi).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}
