use std::f64::consts::TAU;

use thiserror::Error;

use super::{WORLD_MAX, WORLD_MIN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangeError {
    #[error("value {value} outside quantizer range [{lo}, {hi}]")]
    Value { value: f64, lo: f64, hi: f64 },
    #[error("bin {bin} outside [0, {levels})")]
    Bin { bin: u32, levels: u32 },
}

/// Uniform scalar quantizer with `2^bits` bins over `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantizer {
    pub bits: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Quantizer {
    pub fn new(bits: u32, lo: f64, hi: f64) -> Self {
        assert!(bits > 0 && bits < 16 && hi > lo);
        Self { bits, lo, hi }
    }

    /// 6-bit coordinate quantizer over the world box.
    pub fn coord() -> Self {
        Self::new(6, WORLD_MIN, WORLD_MAX)
    }

    /// 5-bit orientation quantizer over `[0, 2π)`.
    pub fn angle() -> Self {
        Self::new(5, 0.0, TAU)
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.levels() as f64
    }

    pub fn quantize(&self, v: f64) -> Result<u32, RangeError> {
        if !(self.lo..=self.hi).contains(&v) {
            return Err(RangeError::Value {
                value: v,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let levels = self.levels();
        let bin = ((v - self.lo) / (self.hi - self.lo) * levels as f64).floor() as u32;
        Ok(bin.min(levels - 1))
    }

    /// Center of `bin`.
    pub fn dequantize(&self, bin: u32) -> Result<f64, RangeError> {
        let levels = self.levels();
        if bin >= levels {
            return Err(RangeError::Bin { bin, levels });
        }
        Ok(self.lo + (bin as f64 + 0.5) * self.bin_width())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coordinate_examples() {
        let q = Quantizer::coord();
        assert_eq!(q.quantize(0.0), Ok(0));
        assert_eq!(q.quantize(64.0), Ok(63));
        // floor(32.5 / 64 * 64) = 32
        assert_eq!(q.quantize(32.5), Ok(32));
        assert_eq!(q.dequantize(0), Ok(0.5));
        assert_eq!(q.dequantize(63), Ok(63.5));
        assert_eq!(q.quantize(q.dequantize(17).unwrap()), Ok(17));
    }

    #[test]
    fn out_of_range() {
        let q = Quantizer::coord();
        assert!(matches!(q.quantize(-0.1), Err(RangeError::Value { .. })));
        assert!(matches!(q.quantize(64.01), Err(RangeError::Value { .. })));
        assert!(matches!(
            q.quantize(f64::NAN),
            Err(RangeError::Value { .. })
        ));
        assert_eq!(
            q.dequantize(64),
            Err(RangeError::Bin {
                bin: 64,
                levels: 64
            })
        );
    }

    #[test]
    fn angle_has_32_bins() {
        let q = Quantizer::angle();
        assert_eq!(q.levels(), 32);
        assert_eq!(q.quantize(0.0), Ok(0));
        assert_eq!(q.quantize(TAU - 1e-9), Ok(31));
    }

    proptest! {
        #[test]
        fn monotone(a in 0.0f64..=64.0, b in 0.0f64..=64.0) {
            let q = Quantizer::coord();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(lo).unwrap() <= q.quantize(hi).unwrap());
        }

        #[test]
        fn round_trip_within_half_bin(v in 0.0f64..=64.0) {
            let q = Quantizer::coord();
            let back = q.dequantize(q.quantize(v).unwrap()).unwrap();
            prop_assert!((back - v).abs() <= q.bin_width() / 2.0 + 1e-12);
        }

        #[test]
        fn bin_identity(b in 0u32..64) {
            let q = Quantizer::coord();
            prop_assert_eq!(q.quantize(q.dequantize(b).unwrap()).unwrap(), b);
        }
    }
}
