/// A non-negative real multiplier stored as a Q31 mantissa and a right shift:
/// `m ≈ mantissa · 2^(−shift)` with `mantissa ∈ [2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedMultiplier {
    pub mantissa: i32,
    pub shift: i32,
}

impl FixedMultiplier {
    pub const ZERO: FixedMultiplier = FixedMultiplier {
        mantissa: 0,
        shift: 0,
    };

    pub fn from_real(m: f64) -> Self {
        if !(m > 0.0) || !m.is_finite() {
            return Self::ZERO;
        }
        // frexp: m = f · 2^e with f in [0.5, 1)
        let mut e = m.log2().floor() as i32 + 1;
        let mut f = m / 2f64.powi(e);
        if f >= 1.0 {
            f /= 2.0;
            e += 1;
        } else if f < 0.5 {
            f *= 2.0;
            e -= 1;
        }
        let mut mant = (f * (1u64 << 31) as f64).round() as i64;
        if mant == 1 << 31 {
            mant >>= 1;
            e += 1;
        }
        Self {
            mantissa: mant as i32,
            shift: 31 - e,
        }
    }

    pub fn to_real(self) -> f64 {
        self.mantissa as f64 * 2f64.powi(-self.shift)
    }

    /// `round(x · m)` with round-half-away-from-zero.
    #[inline]
    pub fn apply(self, x: i64) -> i64 {
        let p = x as i128 * self.mantissa as i128;
        let r = if self.shift > 0 {
            rounding_shift_right(p, self.shift as u32)
        } else {
            p << (-self.shift) as u32
        };
        r.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }

    /// Same result as [`apply`](Self::apply) for a 32-bit accumulator, using
    /// a 64-bit product when the shift allows it.
    #[inline]
    pub fn apply_i32(self, x: i32) -> i64 {
        if (1..=62).contains(&self.shift) {
            let p = x as i64 * self.mantissa as i64;
            let s = self.shift as u32;
            let half = 1i64 << (s - 1);
            if p >= 0 {
                (p + half) >> s
            } else {
                -((-p + half) >> s)
            }
        } else {
            self.apply(x as i64)
        }
    }
}

/// Arithmetic right shift by `s ≥ 1` rounding half away from zero.
#[inline]
pub fn rounding_shift_right(v: i128, s: u32) -> i128 {
    if s >= 127 {
        return 0;
    }
    let half = 1i128 << (s - 1);
    if v >= 0 {
        (v + half) >> s
    } else {
        -((-v + half) >> s)
    }
}
