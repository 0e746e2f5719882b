//! Plain numeric kernels shared by the tape ops and the tape-free decoding
//! paths. Both routes call the same functions so their results agree bit
//! for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// `c = a·b + beta·c` where `a` is `m×k` (or `k×m` when `a_t`) and `b` is
/// `k×n` (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = beta * *x);
        return;
    }
    if m == 1 && !b_t {
        // Row vector times matrix: axpy over rows of b.
        if beta == T::zero() {
            c.iter_mut().for_each(|x| *x = T::zero());
        } else if beta != T::one() {
            c.iter_mut().for_each(|x| *x *= beta);
        }
        for (p, &ap) in a.iter().enumerate() {
            if ap == T::zero() {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c.iter_mut().zip(row) {
                *cj += ap * bj;
            }
        }
        return;
    }
    if m == 1 && b_t {
        // Row vector times transposed matrix: one dot per output.
        for (j, cj) in c.iter_mut().enumerate() {
            let d = dot(a, &b[j * k..(j + 1) * k]);
            *cj = if beta == T::zero() { d } else { beta * *cj + d };
        }
        return;
    }
    if k == 1 {
        // Outer product.
        for i in 0..m {
            let ai = a[i];
            let row = &mut c[i * n..(i + 1) * n];
            for (j, cj) in row.iter_mut().enumerate() {
                let bj = b[j];
                *cj = if beta == T::zero() { ai * bj } else { beta * *cj + ai * bj };
            }
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths were asserted above, so every strided index addressed
    // by the kernel lies inside the slices.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

pub fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm(m, k, n, a, false, b, false, T::zero(), &mut c);
    c
}

/// Dot product with a fixed four-lane reduction order: lane `r` sums the
/// entries `i ≡ r (mod 4)`, lanes are combined as `(l0 + l1) + (l2 + l3)`,
/// then the tail is added in order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut l = [T::zero(); 4];
    let ac = a.chunks_exact(4);
    let bc = b.chunks_exact(4);
    let (ta, tb) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        l[0] += x[0] * y[0];
        l[1] += x[1] * y[1];
        l[2] += x[2] * y[2];
        l[3] += x[3] * y[3];
    }
    let mut acc = (l[0] + l[1]) + (l[2] + l[3]);
    for (&x, &y) in ta.iter().zip(tb) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// In-place max-subtracted softmax.
pub fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// `log Σ exp(x)` over the entries where `allowed` is true.
pub fn log_sum_exp_masked<T: Real>(xs: &[T], allowed: &[bool]) -> T {
    let max = xs
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&x, _)| x)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let mut sum = T::zero();
    for (&x, &a) in xs.iter().zip(allowed) {
        if a {
            sum += (x - max).exp();
        }
    }
    max + sum.ln()
}

/// One LSTM step from pre-projected input gates `xg = x·W_ih`.
///
/// Gate layout is `[input, forget, candidate, output]`, each `hidden` wide.
/// Returns the post-activation gates together with the new `(h, c)`.
pub fn lstm_step<T: Real>(
    xg: &[T],
    h_prev: &[T],
    c_prev: &[T],
    w_hh: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hd = h_prev.len();
    let mut gates = vec![T::zero(); 4 * hd];
    gemm(1, hd, 4 * hd, h_prev, false, w_hh, false, T::zero(), &mut gates);
    for ((g, &x), &b) in gates.iter_mut().zip(xg).zip(bias) {
        *g = x + *g + b;
    }
    for j in 0..hd {
        gates[j] = sigmoid(gates[j]);
        gates[hd + j] = sigmoid(gates[hd + j]);
        gates[2 * hd + j] = gates[2 * hd + j].tanh();
        gates[3 * hd + j] = sigmoid(gates[3 * hd + j]);
    }
    let mut h = vec![T::zero(); hd];
    let mut c = vec![T::zero(); hd];
    for j in 0..hd {
        c[j] = gates[hd + j] * c_prev[j] + gates[j] * gates[2 * hd + j];
        h[j] = gates[3 * hd + j] * c[j].tanh();
    }
    (gates, h, c)
}

/// Candidate scores for one predictor step: `g·w_i`, plus `g·v_{bucket(i)}`
/// on destination steps. Disallowed candidates are `-inf`.
pub fn candidate_logits<T: Real>(
    nodes: &[T],
    dist_table: Option<&[T]>,
    g: &[T],
    buckets: &[usize],
    allowed: &[bool],
) -> Vec<T> {
    let d = g.len();
    let count = allowed.len();
    let bucket_scores: Option<Vec<T>> = dist_table.map(|table| {
        table.chunks_exact(d).map(|v| dot(v, g)).collect()
    });
    (0..count)
        .map(|i| {
            if !allowed[i] {
                return T::neg_infinity();
            }
            let mut s = dot(&nodes[i * d..(i + 1) * d], g);
            if let Some(bs) = &bucket_scores {
                s += bs[buckets[i]];
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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

    #[test]
    fn gemm_transposes_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, a_t, bb, b_t, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let mut row = vec![1.0; n];
        gemm(1, k, n, &a[..k], false, &b, false, 1.0, &mut row);
        let want_row = naive(1, k, n, &a[..k], &b);
        for (x, y) in row.iter().zip(&want_row) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_logsumexp_ignores_disallowed() {
        let xs = [1.0f64, 1000.0, 2.0];
        let got = log_sum_exp_masked(&xs, &[true, false, true]);
        let want = (1.0f64.exp() + 2.0f64.exp()).ln();
        assert!((got - want).abs() < 1e-12);
    }
}
