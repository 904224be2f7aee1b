//! Exact dot-product reference used to verify the PE datapath.
//!
//! Every product and the running sum are kept as an arbitrary-precision
//! integer scaled by a power of two, so no rounding ever happens.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use super::format::Decoded;
use super::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum ExactValue {
    /// `mantissa * 2^exp`
    Finite { mantissa: BigInt, exp: i32 },
    Inf { neg: bool },
    NaN,
}

impl ExactValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            ExactValue::Finite { mantissa, exp } => {
                if mantissa.is_zero() {
                    return 0.0;
                }
                // Keep 64 significant bits before scaling to avoid overflow in
                // the intermediate conversion.
                let bits = mantissa.bits() as i32;
                let drop = (bits - 64).max(0);
                let top: BigInt = mantissa >> drop as usize;
                top.to_f64().unwrap_or(f64::NAN) * 2f64.powi(exp + drop)
            }
            ExactValue::Inf { neg } => {
                if *neg {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
            ExactValue::NaN => f64::NAN,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ExactValue::Finite { mantissa, .. } if mantissa.is_zero())
    }

    /// Sum of absolute products, a scale for norm-wise error bounds.
    pub fn abs(&self) -> ExactValue {
        match self {
            ExactValue::Finite { mantissa, exp } => ExactValue::Finite {
                mantissa: mantissa.abs(),
                exp: *exp,
            },
            ExactValue::Inf { .. } => ExactValue::Inf { neg: false },
            ExactValue::NaN => ExactValue::NaN,
        }
    }
}

/// Exact `sum(a[i] * b[i])`.
///
/// # Panics
/// If the slices differ in length or format.
pub fn oracle_dot(a: &[Scalar], b: &[Scalar]) -> ExactValue {
    exact_sum(a, b, false)
}

/// Exact `sum(|a[i] * b[i]|)`.
pub fn oracle_abs_dot(a: &[Scalar], b: &[Scalar]) -> ExactValue {
    exact_sum(a, b, true)
}

fn exact_sum(a: &[Scalar], b: &[Scalar], absolute: bool) -> ExactValue {
    assert_eq!(a.len(), b.len(), "oracle_dot length mismatch");
    let mut products = Vec::with_capacity(a.len());
    let mut pos_inf = false;
    let mut neg_inf = false;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.kind, y.kind, "oracle_dot format mismatch");
        match (x.decode(), y.decode()) {
            (Decoded::NaN, _) | (_, Decoded::NaN) => return ExactValue::NaN,
            (Decoded::Inf { neg: n1 }, other) | (other, Decoded::Inf { neg: n1 }) => {
                let n2 = match other {
                    Decoded::Zero { .. } => return ExactValue::NaN,
                    Decoded::Finite { neg, .. } | Decoded::Inf { neg } => neg,
                    Decoded::NaN => unreachable!(),
                };
                if (n1 ^ n2) && !absolute {
                    neg_inf = true;
                } else {
                    pos_inf = true;
                }
            }
            (Decoded::Zero { .. }, _) | (_, Decoded::Zero { .. }) => {}
            (
                Decoded::Finite {
                    neg: n1,
                    sig: s1,
                    exp: e1,
                },
                Decoded::Finite {
                    neg: n2,
                    sig: s2,
                    exp: e2,
                },
            ) => {
                // Significands are at most 24 bits, so the product fits.
                let mut p = (u64::from(s1) * u64::from(s2)) as i64;
                if (n1 ^ n2) && !absolute {
                    p = -p;
                }
                products.push((p, e1 + e2));
            }
        }
    }
    match (pos_inf, neg_inf) {
        (true, true) => return ExactValue::NaN,
        (true, false) => return ExactValue::Inf { neg: false },
        (false, true) => return ExactValue::Inf { neg: true },
        _ => {}
    }
    let Some(min_exp) = products.iter().map(|(_, e)| *e).min() else {
        return ExactValue::Finite {
            mantissa: BigInt::zero(),
            exp: 0,
        };
    };
    let max_exp = products.iter().map(|(_, e)| *e).max().unwrap_or(min_exp);
    // Products are at most 48 bits wide; when every shifted product and the
    // running sum fit in an i128 there is no need for heap arithmetic.
    let headroom = 127 - 48 - (usize::BITS - products.len().leading_zeros()) as i32;
    let mantissa = if max_exp - min_exp <= headroom {
        let sum: i128 = products.iter().map(|&(p, e)| i128::from(p) << (e - min_exp)).sum();
        BigInt::from(sum)
    } else {
        products
            .into_iter()
            .fold(BigInt::zero(), |acc, (p, e)| acc + (BigInt::from(p) << (e - min_exp) as usize))
    };
    ExactValue::Finite {
        mantissa,
        exp: min_exp,
    }
}
