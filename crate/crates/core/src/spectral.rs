//! Dense spectral primitives: zero-padded power-of-two FFT and the chirp-z
//! transform (Bluestein) used for spectral zoom.
//!
//! FFT plans are cached per thread, so every function here is safe to call
//! concurrently.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Uniform frequency grid evaluated by [`czt`].
///
/// Bin `m` sits at `start_freq + m * freq_step` radians/sample. The start may
/// be negative; frequencies are interpreted modulo 2π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomSpec {
    start_freq: f64,
    freq_step: f64,
    num_bins: usize,
}

impl ZoomSpec {
    pub fn new(start_freq: f64, freq_step: f64, num_bins: usize) -> Result<Self> {
        if num_bins < 2 {
            return Err(invalid(format!("zoom needs at least 2 bins, got {num_bins}")));
        }
        if !(freq_step > 0.0) || !freq_step.is_finite() {
            return Err(invalid(format!("zoom step must be positive, got {freq_step}")));
        }
        if !start_freq.is_finite() {
            return Err(invalid("zoom start frequency must be finite"));
        }
        let span = freq_step * (num_bins - 1) as f64;
        if span >= 2.0 * PI * (1.0 + 1e-12) {
            return Err(invalid(format!("zoom span {span} exceeds the unit circle")));
        }
        Ok(Self { start_freq, freq_step, num_bins })
    }

    /// Zoom with `num_bins` bins spread evenly over `[center - half_width, center + half_width]`.
    pub fn centered(center: f64, half_width: f64, num_bins: usize) -> Result<Self> {
        if num_bins < 2 {
            return Err(invalid(format!("zoom needs at least 2 bins, got {num_bins}")));
        }
        Self::new(center - half_width, 2.0 * half_width / (num_bins - 1) as f64, num_bins)
    }

    pub fn start_freq(&self) -> f64 {
        self.start_freq
    }

    pub fn freq_step(&self) -> f64 {
        self.freq_step
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn freq(&self, bin: usize) -> f64 {
        self.start_freq + bin as f64 * self.freq_step
    }
}

fn check_pow2(size: usize) -> Result<()> {
    if size == 0 || !size.is_power_of_two() {
        return Err(invalid(format!("transform size {size} is not a power of two")));
    }
    Ok(())
}

fn transform_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let plan = if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// `size`-point DFT of `x` zero-padded to `size`:
/// bin `m` holds `Σ_n x_n exp(-j 2π m n / size)`.
pub fn fft(x: &[Complex64], size: usize) -> Result<Vec<Complex64>> {
    check_pow2(size)?;
    if x.len() > size {
        return Err(invalid(format!("input length {} exceeds transform size {size}", x.len())));
    }
    let mut buf = Vec::with_capacity(size);
    buf.extend_from_slice(x);
    buf.resize(size, Complex64::new(0.0, 0.0));
    transform_in_place(&mut buf, false);
    Ok(buf)
}

/// Inverse of [`fft`], including the `1/size` normalization.
pub fn ifft(x: &[Complex64], size: usize) -> Result<Vec<Complex64>> {
    check_pow2(size)?;
    if x.len() > size {
        return Err(invalid(format!("input length {} exceeds transform size {size}", x.len())));
    }
    let mut buf = Vec::with_capacity(size);
    buf.extend_from_slice(x);
    buf.resize(size, Complex64::new(0.0, 0.0));
    transform_in_place(&mut buf, true);
    let scale = 1.0 / size as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Promote a real sequence to complex.
pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Length of the circular convolution [`czt`] uses for an input of
/// `input_len` samples and `num_bins` output bins.
pub fn czt_conv_len(input_len: usize, num_bins: usize) -> usize {
    (input_len + num_bins - 1).next_power_of_two()
}

/// Chirp-z transform: bin `m` holds `Σ_n x_n exp(-j (start + m step) n)`.
///
/// Computed with Bluestein's chirp convolution; the circular convolution
/// length is the smallest power of two `>= len(x) + num_bins - 1`.
pub fn czt(x: &[Complex64], zoom: &ZoomSpec) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n == 0 {
        return Err(invalid("czt of an empty sequence"));
    }
    let m = zoom.num_bins;
    let len = czt_conv_len(n, m);
    let step = zoom.freq_step;

    // chirp[k] = exp(-j step k^2 / 2)
    let chirp: Vec<Complex64> = (0..n.max(m))
        .map(|k| {
            let k = k as f64;
            Complex64::from_polar(1.0, -0.5 * step * k * k)
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); len];
    for (i, (&xi, &ci)) in x.iter().zip(&chirp).enumerate() {
        let rot = Complex64::from_polar(1.0, -zoom.start_freq * i as f64);
        a[i] = xi * rot * ci;
    }

    let mut b = vec![Complex64::new(0.0, 0.0); len];
    for k in 0..m {
        b[k] = chirp[k].conj();
    }
    for k in 1..n {
        b[len - k] = chirp[k].conj();
    }

    transform_in_place(&mut a, false);
    transform_in_place(&mut b, false);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    transform_in_place(&mut a, true);

    let scale = 1.0 / len as f64;
    Ok((0..m).map(|k| a[k] * chirp[k] * scale).collect())
}

/// Index of the largest-magnitude entry among those accepted by `keep`;
/// ties go to the lowest index. Returns `None` if nothing is accepted.
pub(crate) fn argmax_abs(values: &[Complex64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        let p = v.norm_sqr();
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((i, p)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft(x: &[Complex64], size: usize) -> Vec<Complex64> {
        (0..size)
            .map(|m| {
                x.iter()
                    .enumerate()
                    .map(|(n, &v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (m * n) as f64 / size as f64)
                    })
                    .sum()
            })
            .collect()
    }

    fn lcg_signal(n: usize, seed: u64) -> Vec<Complex64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        (0..n).map(|_| Complex64::new(next(), next())).collect()
    }

    #[test]
    fn fft_of_zeros_is_zero() {
        let out = fft(&[Complex64::new(0.0, 0.0); 5], 8).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn fft_of_impulse_is_flat() {
        let out = fft(&[Complex64::new(1.0, 0.0)], 8).unwrap();
        assert_eq!(out.len(), 8);
        for v in out {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn fft_of_bin_three_tone() {
        let x: Vec<_> = (0..8)
            .map(|n| Complex64::from_polar(1.0, 2.0 * PI * 3.0 * n as f64 / 8.0))
            .collect();
        let out = fft(&x, 8).unwrap();
        let oracle = dft(&x, 8);
        for (m, (v, o)) in out.iter().zip(&oracle).enumerate() {
            let want = if m == 3 { 8.0 } else { 0.0 };
            assert!((v - Complex64::new(want, 0.0)).norm() < 1e-10, "bin {m}: {v}");
            assert!((v - o).norm() < 1e-10);
        }
    }

    #[test]
    fn fft_rejects_non_power_of_two() {
        assert!(fft(&[Complex64::new(1.0, 0.0)], 6).is_err());
        assert!(fft(&[Complex64::new(1.0, 0.0); 9], 8).is_err());
    }

    #[test]
    fn fft_matches_brute_force_with_padding() {
        let x = lcg_signal(11, 3);
        let out = fft(&x, 16).unwrap();
        for (v, o) in out.iter().zip(dft(&x, 16)) {
            assert!((v - o).norm() < 1e-12);
        }
    }

    #[test]
    fn ifft_inverts_fft() {
        let x = lcg_signal(32, 9);
        let back = ifft(&fft(&x, 32).unwrap(), 32).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn czt_full_circle_is_dft() {
        for &n in &[2usize, 8, 64, 512] {
            let x = lcg_signal(n, n as u64);
            let zoom = ZoomSpec::new(0.0, 2.0 * PI / n as f64, n).unwrap();
            let c = czt(&x, &zoom).unwrap();
            let f = fft(&x, n).unwrap();
            let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in c.iter().zip(&f) {
                assert!((a - b).norm() <= 1e-10 * scale, "n={n}");
            }
        }
    }

    #[test]
    fn czt_of_zeros_is_zero() {
        let zoom = ZoomSpec::new(0.3, 0.01, 17).unwrap();
        let c = czt(&[Complex64::new(0.0, 0.0); 10], &zoom).unwrap();
        assert_eq!(c.len(), 17);
        assert!(c.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn czt_rejects_empty_input() {
        let zoom = ZoomSpec::new(0.0, 0.1, 4).unwrap();
        assert!(czt(&[], &zoom).is_err());
    }

    #[test]
    fn czt_matches_direct_summation_off_grid() {
        let x = lcg_signal(37, 5);
        let zoom = ZoomSpec::new(-0.2, 0.0137, 23).unwrap();
        let c = czt(&x, &zoom).unwrap();
        for (m, v) in c.iter().enumerate() {
            let w = zoom.freq(m);
            let direct: Complex64 = x
                .iter()
                .enumerate()
                .map(|(n, &xn)| xn * Complex64::from_polar(1.0, -w * n as f64))
                .sum();
            assert!((v - direct).norm() < 1e-11);
        }
    }

    #[test]
    fn czt_zoom_locates_off_grid_tone() {
        let n = 128;
        let w0 = 1.234_567;
        let x: Vec<_> = (0..n).map(|t| Complex64::from_polar(1.0, w0 * t as f64)).collect();
        let zoom = ZoomSpec::new(1.2, 1e-4, 800).unwrap();
        let c = czt(&x, &zoom).unwrap();
        // direct-summation oracle on the same grid
        let oracle_peak = (0..800)
            .map(|m| {
                let w = zoom.freq(m);
                let s: Complex64 = x
                    .iter()
                    .enumerate()
                    .map(|(t, &v)| v * Complex64::from_polar(1.0, -w * t as f64))
                    .sum();
                (m, s.norm())
            })
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc })
            .0;
        let peak = argmax_abs(&c, |_| true).unwrap();
        assert_eq!(peak, oracle_peak);
        assert!((zoom.freq(peak) - w0).abs() <= 1e-4);
    }

    #[test]
    fn zoom_spec_validation() {
        assert!(ZoomSpec::new(0.0, 0.1, 1).is_err());
        assert!(ZoomSpec::new(0.0, 0.0, 4).is_err());
        assert!(ZoomSpec::new(0.0, -0.1, 4).is_err());
        assert!(ZoomSpec::new(0.0, 1.0, 10).is_err());
        let z = ZoomSpec::centered(1.0, 0.5, 11).unwrap();
        assert!((z.freq(0) - 0.5).abs() < 1e-15);
        assert!((z.freq(10) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let v = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.5, 0.0)];
        assert_eq!(argmax_abs(&v, |_| true), Some(0));
        assert_eq!(argmax_abs(&v, |i| i > 0), Some(1));
        assert_eq!(argmax_abs(&v, |_| false), None);
    }
}
