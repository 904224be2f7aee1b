//! Generic small binary floating-point codec.
//!
//! Covers every float input format of the PE array with one parametrized
//! implementation. Encoding rounds to nearest, ties to even.

/// Decoded scalar: `(-1)^neg * sig * 2^exp` for finite values, where `sig`
/// carries the hidden bit for normals and `exp` is the weight of its LSB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Zero { neg: bool },
    Finite { neg: bool, sig: u32, exp: i32 },
    Inf { neg: bool },
    NaN,
}

impl Decoded {
    pub fn to_f64(self) -> f64 {
        match self {
            Decoded::Zero { neg } => {
                if neg {
                    -0.0
                } else {
                    0.0
                }
            }
            Decoded::Finite { neg, sig, exp } => {
                let v = f64::from(sig) * 2f64.powi(exp);
                if neg {
                    -v
                } else {
                    v
                }
            }
            Decoded::Inf { neg } => {
                if neg {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
            Decoded::NaN => f64::NAN,
        }
    }
}

/// How the top exponent code is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Specials {
    /// All-ones exponent encodes Inf (zero mantissa) or NaN.
    Ieee,
    /// No infinities; only the all-ones exponent *and* mantissa pattern is NaN.
    /// Overflow on encode produces NaN.
    NanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloatFormat {
    pub exp_bits: u32,
    pub man_bits: u32,
    pub specials: Specials,
}

impl FloatFormat {
    pub const FP8_E4M3: FloatFormat = FloatFormat {
        exp_bits: 4,
        man_bits: 3,
        specials: Specials::NanOnly,
    };
    pub const FP16: FloatFormat = FloatFormat {
        exp_bits: 5,
        man_bits: 10,
        specials: Specials::Ieee,
    };
    pub const BF16: FloatFormat = FloatFormat {
        exp_bits: 8,
        man_bits: 7,
        specials: Specials::Ieee,
    };
    /// Code width is 19 bits; the container shift is handled by the caller.
    pub const TF32: FloatFormat = FloatFormat {
        exp_bits: 8,
        man_bits: 10,
        specials: Specials::Ieee,
    };

    pub const fn bias(&self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    pub const fn width(&self) -> u32 {
        1 + self.exp_bits + self.man_bits
    }

    fn exp_mask(&self) -> u32 {
        (1 << self.exp_bits) - 1
    }

    fn man_mask(&self) -> u32 {
        (1 << self.man_bits) - 1
    }

    fn nan_bits(&self) -> u32 {
        match self.specials {
            Specials::Ieee => (self.exp_mask() << self.man_bits) | (1 << (self.man_bits - 1)),
            Specials::NanOnly => (self.exp_mask() << self.man_bits) | self.man_mask(),
        }
    }

    pub fn decode(&self, bits: u32) -> Decoded {
        let neg = (bits >> (self.exp_bits + self.man_bits)) & 1 == 1;
        let ef = (bits >> self.man_bits) & self.exp_mask();
        let mf = bits & self.man_mask();
        if ef == self.exp_mask() {
            match self.specials {
                Specials::Ieee => {
                    return if mf == 0 { Decoded::Inf { neg } } else { Decoded::NaN };
                }
                Specials::NanOnly if mf == self.man_mask() => return Decoded::NaN,
                Specials::NanOnly => {}
            }
        }
        let m = self.man_bits as i32;
        if ef == 0 {
            if mf == 0 {
                Decoded::Zero { neg }
            } else {
                Decoded::Finite {
                    neg,
                    sig: mf,
                    exp: 1 - self.bias() - m,
                }
            }
        } else {
            Decoded::Finite {
                neg,
                sig: mf | (1 << self.man_bits),
                exp: ef as i32 - self.bias() - m,
            }
        }
    }

    pub fn encode(&self, x: f64) -> u32 {
        let sign_shift = self.exp_bits + self.man_bits;
        if x.is_nan() {
            return self.nan_bits();
        }
        let sign = u32::from(x.is_sign_negative()) << sign_shift;
        if x.is_infinite() {
            return match self.specials {
                Specials::Ieee => sign | (self.exp_mask() << self.man_bits),
                Specials::NanOnly => sign | self.nan_bits(),
            };
        }
        if x == 0.0 {
            return sign;
        }

        let raw = x.abs().to_bits();
        let e64 = ((raw >> 52) & 0x7ff) as i32;
        let frac = raw & ((1u64 << 52) - 1);
        let (m, e) = if e64 == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), e64 - 1075)
        };
        let msb = e + (63 - m.leading_zeros() as i32);
        let man = self.man_bits as i32;
        let emin = 1 - self.bias();
        let mut q = if msb < emin { emin - man } else { msb - man };
        let mut sig = shift_round_even(m, q - e);
        if sig == 1u64 << (self.man_bits + 1) {
            sig >>= 1;
            q += 1;
        }

        let (ef, mf) = if sig < (1u64 << self.man_bits) {
            (0u32, sig as u32)
        } else {
            let ef = q + man + self.bias();
            (ef as u32, (sig as u32) & self.man_mask())
        };
        let overflow = match self.specials {
            Specials::Ieee => ef >= self.exp_mask(),
            Specials::NanOnly => {
                ef > self.exp_mask() || (ef == self.exp_mask() && mf == self.man_mask())
            }
        };
        if overflow {
            return match self.specials {
                Specials::Ieee => sign | (self.exp_mask() << self.man_bits),
                Specials::NanOnly => sign | self.nan_bits(),
            };
        }
        sign | (ef << self.man_bits) | mf
    }

    /// Largest finite magnitude.
    pub fn max_finite(&self) -> f64 {
        let (ef, mf) = match self.specials {
            Specials::Ieee => (self.exp_mask() - 1, self.man_mask()),
            Specials::NanOnly => (self.exp_mask(), self.man_mask() - 1),
        };
        self.decode((ef << self.man_bits) | mf).to_f64()
    }
}

/// `m * 2^-shift` rounded to nearest even (left shift when `shift < 0`).
fn shift_round_even(m: u64, shift: i32) -> u64 {
    if shift <= 0 {
        return m << (-shift) as u32;
    }
    if shift >= 64 {
        // m < 2^53, so the value is below one half.
        return 0;
    }
    let wide = u128::from(m);
    let q = wide >> shift;
    let rem = wide & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    let up = rem > half || (rem == half && q & 1 == 1);
    (q + u128::from(up)) as u64
}
