//! Dense kernels on row-major `f64` buffers.

/// `c = a · b (+ c if accumulate)` for an `m × k` matrix `a` and a `k × n`
/// matrix `b`, each given with explicit row/column strides so transposes are free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    assert!(a.len() > (m - 1) * a_rs + (k - 1) * a_cs);
    assert!(b.len() > (k - 1) * b_rs + (n - 1) * b_cs);
    // SAFETY: bounds of a, b and c checked above for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax_with_temperature(logits: &[f64], classes: usize, temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    assert_eq!(logits.len() % classes, 0);
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits
        .chunks_exact(classes)
        .zip(out.chunks_exact_mut(classes))
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = ((z - max) / temperature).exp();
            sum += *d;
        }
        let inv = 1.0 / sum;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

/// Index of the largest entry of each row; ties resolve to the lowest class id.
pub fn argmax_rows(values: &[f64], classes: usize) -> Vec<u8> {
    values
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Mean cross-entropy of `logits` against hard targets, skipping `None`
/// targets. Returns `(loss, dL/dlogits, counted points)`.
pub fn cross_entropy(
    logits: &[f64],
    classes: usize,
    targets: &[Option<u8>],
) -> (f64, Vec<f64>, usize) {
    let probs = softmax_with_temperature(logits, classes, 1.0);
    let counted = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = vec![0.0; logits.len()];
    if counted == 0 {
        return (0.0, grad, 0);
    }
    let inv = 1.0 / counted as f64;
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let t = t as usize;
        let p = &probs[i * classes..(i + 1) * classes];
        let z = &logits[i * classes..(i + 1) * classes];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[t];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for c in 0..classes {
            g[c] = p[c] * inv;
        }
        g[t] -= inv;
    }
    (loss * inv, grad, counted)
}
