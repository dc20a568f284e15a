//! Unitary DFT, complex block helpers and seeded Gaussian generation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Deref;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// A non-empty block of finite complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBlock(Vec<Complex64>);

impl ComplexBlock {
    pub fn new(data: Vec<Complex64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyBlock);
        }
        if let Some(bad) = data.iter().find(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Dimension(format!("non-finite sample {bad}")));
        }
        Ok(Self(data))
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }
}

impl Deref for ComplexBlock {
    type Target = [Complex64];

    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

/// Cached forward/inverse FFT pair with unitary (1/sqrt(K)) scaling on both sides.
#[derive(Clone)]
pub struct DftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<usize, DftPlan>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

impl DftPlan {
    /// Returns the plan for length `len`, shared per thread.
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyBlock);
        }
        Ok(PLANNER.with(|cell| {
            let (planner, cache) = &mut *cell.borrow_mut();
            cache
                .entry(len)
                .or_insert_with(|| DftPlan {
                    len,
                    forward: planner.plan_fft_forward(len),
                    inverse: planner.plan_fft_inverse(len),
                    scale: 1.0 / (len as f64).sqrt(),
                })
                .clone()
        }))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.len);
        self.forward.process(data);
        data.iter_mut().for_each(|z| *z *= self.scale);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.len);
        self.inverse.process(data);
        data.iter_mut().for_each(|z| *z *= self.scale);
    }
}

/// Unitary DFT `F_K x` (or `F_K^H x` when `inverse` is set).
pub fn unitary_dft(block: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let plan = DftPlan::new(block.len())?;
    let mut out = block.to_vec();
    if inverse {
        plan.inverse(&mut out);
    } else {
        plan.forward(&mut out);
    }
    Ok(out)
}

/// Circular convolution of `taps` (length L <= K) with `x` (length K).
pub fn circular_convolve(taps: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    let k = x.len();
    let mut y = vec![Complex64::new(0.0, 0.0); k];
    for (l, h) in taps.iter().enumerate() {
        for (n, out) in y.iter_mut().enumerate() {
            *out += h * x[(n + k - l % k) % k];
        }
    }
    y
}

/// Seeded random stream. Identical `(seed, stream_id)` pairs reproduce the same samples.
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with unit variance.
    pub fn complex_normal(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(s * self.standard_normal(), s * self.standard_normal())
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bits(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| (self.rng.next_u32() & 1) as u8).collect()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draws `n` independent CN(0, variance_diag[k]) samples.
pub fn gaussian_vector(
    n: usize,
    variance_diag: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<Complex64>> {
    if variance_diag.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: variance_diag.len(),
        });
    }
    if let Some(&v) = variance_diag.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeVariance(v));
    }
    Ok(variance_diag
        .iter()
        .map(|v| rng.complex_normal() * v.sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct O(K^2) evaluation of the normalized DFT matrix product.
    fn naive_dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let k = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..k)
            .map(|m| {
                x.iter()
                    .enumerate()
                    .map(|(n, v)| {
                        let ang = sign * 2.0 * std::f64::consts::PI * (n * m) as f64 / k as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum::<Complex64>()
                    / (k as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn impulse_is_flat() {
        let out =
            unitary_dft(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], false).unwrap();
        for z in out {
            assert!((z - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn proakis_c_dc_bin() {
        let s = 19f64.sqrt();
        let mut h: Vec<Complex64> = [1.0, 2.0, 3.0, 2.0, 1.0]
            .iter()
            .map(|v| c(v / s, 0.0))
            .collect();
        h.resize(8, c(0.0, 0.0));
        let out = unitary_dft(&h, false).unwrap();
        assert!((out[0].re - 9.0 / (19.0f64 * 8.0).sqrt()).abs() < 1e-14);
        assert!(out[0].im.abs() < 1e-14);
    }

    #[test]
    fn matches_naive_for_odd_and_composite_lengths() {
        let mut rng = RngStream::new(3, 0);
        for k in [1usize, 2, 3, 7, 12, 96, 97, 1536] {
            let x: Vec<_> = (0..k).map(|_| rng.complex_normal()).collect();
            for inv in [false, true] {
                let fast = unitary_dft(&x, inv).unwrap();
                let slow = naive_dft(&x, inv);
                let err: f64 = fast
                    .iter()
                    .zip(&slow)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(err < 1e-9, "k={k} err={err}");
            }
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(unitary_dft(&[], false), Err(Error::EmptyBlock)));
        assert!(ComplexBlock::new(vec![]).is_err());
        assert!(ComplexBlock::new(vec![c(f64::NAN, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(k in 2usize..=1024, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed, 1);
            let x: Vec<_> = (0..k).map(|_| rng.complex_normal()).collect();
            let fx = unitary_dft(&x, false).unwrap();
            let back = unitary_dft(&fx, true).unwrap();
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12);
            let e0: f64 = x.iter().map(|z| z.norm_sqr()).sum();
            let e1: f64 = fx.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((e0 - e1).abs() < 1e-10 * e0.max(1.0));
        }
    }

    #[test]
    fn zero_variance_gives_zero_vector() {
        let mut rng = RngStream::new(1, 2);
        let v = gaussian_vector(4, &[0.0; 4], &mut rng).unwrap();
        assert!(v.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn negative_variance_rejected() {
        let mut rng = RngStream::new(1, 2);
        assert!(matches!(
            gaussian_vector(2, &[1.0, -0.5], &mut rng),
            Err(Error::NegativeVariance(_))
        ));
        assert!(gaussian_vector(3, &[1.0, 1.0], &mut rng).is_err());
    }

    #[test]
    fn sample_variance_within_band() {
        // chi-square 99% band for n = 1e5 complex samples of variance 2
        let n = 100_000;
        let mut rng = RngStream::new(42, 7);
        let v = gaussian_vector(n, &vec![2.0; n], &mut rng).unwrap();
        let var = v.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        assert!((1.96..=2.04).contains(&var), "{var}");
        // each quadrature carries half the power (3 sigma band)
        let re = v.iter().map(|z| z.re * z.re).sum::<f64>() / n as f64;
        let im = v.iter().map(|z| z.im * z.im).sum::<f64>() / n as f64;
        let band = 3.0 * (2.0f64).sqrt() * 1.0 / (n as f64).sqrt();
        assert!((re - 1.0).abs() < band, "{re}");
        assert!((im - 1.0).abs() < band, "{im}");
        let mean = v.iter().sum::<Complex64>() / n as f64;
        assert!(mean.norm() < 0.02);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = gaussian_vector(16, &[1.0; 16], &mut RngStream::new(9, 4)).unwrap();
        let b = gaussian_vector(16, &[1.0; 16], &mut RngStream::new(9, 4)).unwrap();
        let d = gaussian_vector(16, &[1.0; 16], &mut RngStream::new(9, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn circular_delay() {
        let x = vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0)];
        let y = circular_convolve(&[c(0.0, 0.0), c(1.0, 0.0)], &x);
        assert_eq!(y, vec![c(4.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)]);
    }
}
