//! Reproducible workload inputs.
//!
//! Everything is drawn from SplitMix64 seeded with the run seed:
//!
//! * `f64` in `[0, 1)`: `(x >> 11) * 2^-53`
//! * 31-bit integer in `[1, 2^31)`: `1 + (x >> 33) % (2^31 - 1)`
//! * small integer-valued `f64` in `[0, 16)`: `(x >> 60) as f64`
//!
//! Matrices are filled in row-major order.

use rand_core::RngCore;
use rand_xoshiro::SplitMix64;
use rand_core::SeedableRng;

pub struct InputRng(SplitMix64);

impl InputRng {
    pub fn new(seed: u64) -> Self {
        InputRng(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_i31(&mut self) -> i32 {
        (1 + (self.next_u64() >> 33) % ((1 << 31) - 1)) as i32
    }

    pub fn next_small(&mut self) -> f64 {
        (self.next_u64() >> 60) as f64
    }
}

/// `rows x cols` row-major matrix of uniform `[0, 1)` values.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = InputRng::new(seed);
    (0..rows * cols).map(|_| rng.next_f64()).collect()
}

/// Row-major matrix of integers in `[0, 16)`, exact under any summation
/// order at the sizes used here.
pub fn integer_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = InputRng::new(seed);
    (0..rows * cols).map(|_| rng.next_small()).collect()
}

pub fn random_integers(count: usize, seed: u64) -> Vec<i32> {
    let mut rng = InputRng::new(seed);
    (0..count).map(|_| rng.next_i31()).collect()
}

/// Plain triple-loop product of row-major matrices, summing over the inner
/// index in ascending order.
pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * m + j];
            }
            c[i * m + j] = s;
        }
    }
    c
}

/// `max |x - y| / max |y|`, the error measure used for verification.
pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got.iter().zip(want).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of SplitMix64 seeded with 0.
        let mut r = InputRng::new(0);
        assert_eq!(r.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(r.next_u64(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn ranges() {
        let mut r = InputRng::new(7);
        for _ in 0..10_000 {
            let f = r.next_f64();
            assert!((0.0..1.0).contains(&f));
            let i = r.next_i31();
            assert!(i >= 1);
            let s = r.next_small();
            assert!((0.0..16.0).contains(&s) && s.fract() == 0.0);
        }
    }

    #[test]
    fn naive_matmul_2x2() {
        let c = naive_matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }
}
