//! Eager kernels. The tape in [`super::tape`] records these and supplies the
//! matching backward rules.

use super::{NumericsError, Scalar, Tensor};

/// `out[m×n] = a[m×k] · b[k×n]`, accumulated into `out`.
pub(crate) fn matmul_into<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`, accumulated into `out`.
pub(crate) fn matmul_nt_into<F: Scalar>(
    a: &[F],
    b: &[F],
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `out[m×n] = a[k×m]ᵀ · b[k×n]`, accumulated into `out`.
pub(crate) fn matmul_tn_into<F: Scalar>(
    a: &[F],
    b: &[F],
    out: &mut [F],
    k: usize,
    m: usize,
    n: usize,
) {
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn as_matrix<F: Scalar>(t: &Tensor<F>, what: &str) -> Result<(usize, usize), NumericsError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(NumericsError::Shape(format!("{what} must be a matrix, got {s:?}"))),
    }
}

pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, NumericsError> {
    let (m, k) = as_matrix(a, "lhs")?;
    let (k2, n) = as_matrix(b, "rhs")?;
    if k != k2 {
        return Err(NumericsError::Shape(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![F::zero(); m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

/// `y = xW + b`, row-wise.
pub fn affine<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
) -> Result<Tensor<F>, NumericsError> {
    let mut y = matmul(x, w)?;
    let (_, n) = y.dims2();
    if b.len() != n {
        return Err(NumericsError::Shape(format!(
            "bias has {} entries, output has {n} columns",
            b.len()
        )));
    }
    for row in y.data_mut().chunks_mut(n) {
        for (v, &bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Numerically stable softmax of `z / temperature`.
pub fn softmax<F: Scalar>(z: &[F], temperature: F) -> Result<Vec<F>, NumericsError> {
    if !(temperature > F::zero()) {
        return Err(NumericsError::Contract(format!(
            "temperature must be positive, got {temperature:?}"
        )));
    }
    if z.is_empty() {
        return Err(NumericsError::Contract("softmax of empty vector".into()));
    }
    let mut out: Vec<F> = z.iter().map(|&v| v / temperature).collect();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `log Σ exp(z)` without overflow.
pub fn log_sum_exp<F: Scalar>(z: &[F]) -> F {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// `-log softmax(logits)[target]`, evaluated in log space.
pub fn cross_entropy<F: Scalar>(logits: &[F], target: usize) -> Result<F, NumericsError> {
    if target >= logits.len() {
        return Err(NumericsError::Contract(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[target])
}

/// Layer normalisation of a single vector, variance with `1/d`.
pub fn layer_norm<F: Scalar>(
    x: &[F],
    gain: &[F],
    shift: &[F],
    eps: F,
) -> Result<Vec<F>, NumericsError> {
    if x.is_empty() || gain.len() != x.len() || shift.len() != x.len() {
        return Err(NumericsError::Shape(format!(
            "layer_norm extents {} / {} / {}",
            x.len(),
            gain.len(),
            shift.len()
        )));
    }
    let mut out = vec![F::zero(); x.len()];
    layer_norm_row(x, gain, shift, eps, &mut out);
    Ok(out)
}

/// Returns `1/sqrt(var + eps)` so the backward pass can reuse it.
pub(crate) fn layer_norm_row<F: Scalar>(x: &[F], gain: &[F], shift: &[F], eps: F, out: &mut [F]) -> F {
    let d = F::of(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / d;
    let inv_std = F::one() / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = gain[i] * (x[i] - mean) * inv_std + shift[i];
    }
    inv_std
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let u = F::of(SQRT_2_OVER_PI) * (x + F::of(GELU_CUBIC) * x * x * x);
    F::of(0.5) * x * (F::one() + u.tanh())
}

pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::of(SQRT_2_OVER_PI);
    let a = F::of(GELU_CUBIC);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + F::of(3.0) * a * x * x);
    F::of(0.5) * (F::one() + t) + F::of(0.5) * x * (F::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_bias() {
        let x = Tensor::from_rows(&[vec![1.0f64, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = affine(&x, &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 0.0, 1.0]);

        let x = Tensor::from_rows(&[vec![5.0f64, 6.0]]).unwrap();
        let b = Tensor::new(&[2], vec![7.0, 8.0]).unwrap();
        let y = affine(&x, &Tensor::zeros(&[2, 2]), &b).unwrap();
        assert_eq!(y.data(), &[7.0, 8.0]);
    }

    #[test]
    fn affine_matches_scalar_loop() {
        let x = Tensor::from_rows(&[vec![1.0f64, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = affine(&x, &w, &Tensor::zeros(&[2])).unwrap();
        // Independent scalar loop.
        let mut expected = [0.0f64; 2];
        for j in 0..2 {
            for k in 0..2 {
                expected[j] += x.data()[k] * w.data()[k * 2 + j];
            }
        }
        assert_eq!(expected, [7.0, 10.0]);
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn affine_rejects_mismatched_extents() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        let w = Tensor::<f32>::zeros(&[2, 2]);
        assert!(matches!(
            affine(&x, &w, &Tensor::zeros(&[2])),
            Err(NumericsError::Shape(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        let p = softmax(&[1e9f32, 0.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() <= 1e-7 && p[1] <= 1e-7);
        assert!(softmax(&[1.0f32], 0.0).is_err());
        assert!(softmax(&[1.0f32], -1.0).is_err());
    }

    #[test]
    fn softmax_shift_invariant_and_normalised() {
        let z = [0.3f64, -1.2, 4.0, 0.0, 2.5];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.5).collect();
        let a = softmax(&z, 0.7).unwrap();
        let b = softmax(&shifted, 0.7).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0f64; 4];
        let zeros = [0.0f64; 4];
        let y = layer_norm(&[3.5; 4], &ones, &zeros, 1e-5).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));

        let y = layer_norm(&[1.0f64, -1.0], &ones[..2], &zeros[..2], 1e-5).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-2 && (y[1] + 1.0).abs() < 1e-2);

        let y = layer_norm(&[1.0f64, 2.0, 3.0], &ones[..3], &[5.0; 3], 1e-5).unwrap();
        assert!((y.iter().sum::<f64>() / 3.0 - 5.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_examples() {
        let l = cross_entropy(&[0.25f64; 37], 3).unwrap();
        assert!((l - 37f64.ln()).abs() < 1e-12);

        let mut logits = vec![-1e9f64; 5];
        logits[2] = 1e9;
        assert!(cross_entropy(&logits, 2).unwrap().abs() < 1e-6);

        let l = cross_entropy(&[0.0f64, 3f64.ln()], 0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        assert!(matches!(
            cross_entropy(&[0.0f32, 1.0], 2),
            Err(NumericsError::Contract(_))
        ));
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.2] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
