//! Parameter initialization.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fan-in / fan-out of a parameter shape.
///
/// Rank 2 is `(out, in)`; rank 3/4 are convolution kernels
/// `(c_out, c_in, k...)` where the kernel volume multiplies both fans.
/// Rank 1 uses the length for both.
fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n] => Ok((n, n)),
        [out, inp] => Ok((inp, out)),
        [co, ci, k] => Ok((ci * k, co * k)),
        [co, ci, kh, kw] => Ok((ci * kh * kw, co * kh * kw)),
        _ => Err(Error::Shape(format!(
            "no fan convention for shape {shape:?}"
        ))),
    }
}

/// Glorot-uniform tensor: entries drawn from
/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<S: Scalar>(shape: &[usize], rng: &mut StreamRng) -> Result<Tensor<S>> {
    let (fan_in, fan_out) = fans(shape)?;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| rng.uniform::<S>(-bound, bound))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Glorot bound for a shape, exposed for tests.
pub fn glorot_bound(shape: &[usize]) -> Result<f64> {
    let (fan_in, fan_out) = fans(shape)?;
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces() {
        let a: Tensor<f64> =
            glorot_uniform(&[2, 2], &mut StreamRng::new(7, "w")).unwrap();
        let b: Tensor<f64> =
            glorot_uniform(&[2, 2], &mut StreamRng::new(7, "w")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bound_matches_fan_sum() {
        let bound = glorot_bound(&[2, 2]).unwrap();
        assert!((bound - (6.0f64 / 4.0).sqrt()).abs() < 1e-15);
        let t: Tensor<f64> = glorot_uniform(&[2, 2], &mut StreamRng::new(7, "w")).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn conv_kernel_fans() {
        // (c_out=8, c_in=4, k=5): fan_in = 20, fan_out = 40
        let bound = glorot_bound(&[8, 4, 5]).unwrap();
        assert!((bound - (6.0f64 / 60.0).sqrt()).abs() < 1e-15);
    }
}
