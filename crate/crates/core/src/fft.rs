//! In-place radix-2 FFT for power-of-two lengths.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Complex, Error, Result};

/// Precomputed plan for a complex FFT of one power-of-two length.
#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    // exp(-2πik/len) for k < len/2
    twiddles: Vec<Complex>,
    bit_reverse: Vec<usize>,
}

impl Fft {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::InvalidParameter(alloc::format!(
                "FFT length {len} is not a power of two"
            )));
        }
        let twiddles = (0..len / 2)
            .map(|k| {
                let phase = -2.0 * PI * k as f64 / len as f64;
                Complex::new(libm::cos(phase), libm::sin(phase))
            })
            .collect();
        let bits = len.trailing_zeros();
        let bit_reverse = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Self {
            len,
            twiddles,
            bit_reverse,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward transform, `X[k] = Σ x[n]·exp(-2πikn/N)`.
    pub fn forward(&self, buf: &mut [Complex]) {
        self.transform(buf, false);
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex]) {
        self.transform(buf, true);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex], inverse: bool) {
        assert_eq!(buf.len(), self.len, "buffer length does not match FFT plan");
        let n = self.len;
        for i in 0..n {
            let j = self.bit_reverse[i];
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}
