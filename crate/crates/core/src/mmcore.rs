//! Majorization-minimization engine.
//!
//! Each MM iteration replaces the one-bit likelihood by its quadratic
//! majorizer, which reduces to the least-squares problem
//!
//! ```text
//! min_{θ̃, λ} g = Σ (s(θ̃) - λ h - z̃)²,    z̃ = y (x - f'(x))
//! ```
//!
//! i.e. fitting sinusoids to the "pseudo-data" `z̃ + λh`. That problem is
//! decreased cyclically: closed-form `λ`, then one sinusoid at a time by a
//! zero-padded FFT peak followed by two chirp-z zooms and a least-squares
//! amplitude fit.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::likelihood::{
    check_dims, margins_from_signal, nlcdf_d1, nll_of_margins, ScaledComponent, ScaledParams,
};
use crate::sigmodel::{wrap_2pi, Dim, Shape, SignedRecord};
use crate::spectral::{argmax_abs, czt, fft, ZoomSpec};

/// MM settings. FFT lengths default to the smallest power of two covering
/// each axis; zoom bin counts default to FFT length + 1, which makes every
/// chirp-z convolution exactly twice the FFT length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmConfig {
    pub max_mm_iters: usize,
    pub mm_rel_tol: f64,
    pub inner_rel_tol: f64,
    /// Cap on cyclic sweeps per MM iteration.
    pub max_inner_sweeps: usize,
    /// Override for the coarse FFT length (per axis); must be a power of two
    /// no smaller than the axis length.
    pub fft_len: Option<usize>,
    /// After the MM loop at each order, re-fit all amplitudes and `λ`
    /// jointly at the final frequencies (1bMMRELAX only).
    #[serde(default = "yes")]
    pub amplitude_refit: bool,
}

fn yes() -> bool {
    true
}

impl Default for MmConfig {
    fn default() -> Self {
        Self {
            max_mm_iters: 30,
            mm_rel_tol: 1e-5,
            inner_rel_tol: 1e-5,
            max_inner_sweeps: 500,
            fft_len: None,
            amplitude_refit: true,
        }
    }
}

impl MmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mm_rel_tol > 0.0) || !(self.inner_rel_tol > 0.0) {
            return Err(invalid("MM tolerances must be positive"));
        }
        if self.max_inner_sweeps == 0 {
            return Err(invalid("at least one cyclic sweep is required"));
        }
        if let Some(n) = self.fft_len {
            if !n.is_power_of_two() {
                return Err(invalid(format!("fft_len {n} is not a power of two")));
            }
        }
        Ok(())
    }

    /// Coarse FFT length `N1` for an axis of `len` samples.
    pub fn n1_for(&self, len: usize) -> usize {
        let base = len.next_power_of_two();
        self.fft_len.map_or(base, |n| n.max(base))
    }

    /// Zoom bin count `N2` paired with coarse length `n1`.
    pub fn n2_for(n1: usize) -> usize {
        n1 + 1
    }
}

/// Pseudo-data `z̃` as flat channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoData {
    pub dim: Dim,
    pub z: Vec<f64>,
}

fn pseudo_from_margins(record: &SignedRecord, x: &[f64]) -> Vec<f64> {
    record.y.iter().zip(x).map(|(&y, &x)| y * (x - nlcdf_d1(x))).collect()
}

/// `z̃ = y (x - f'(x))` per channel.
pub fn pseudo_data(record: &SignedRecord, params: &ScaledParams) -> Result<PseudoData> {
    check_dims(record, params.dim)?;
    let s = params.signal(record.shape);
    let x = margins_from_signal(record, &s, params.lambda);
    Ok(PseudoData { dim: record.dim, z: pseudo_from_margins(record, &x) })
}

/// Closed-form `λ = max(0, hᵀ(s - z̃) / hᵀh)`. For complex data the flat
/// channel layout makes this `Re{hᴴ(s - z̃)} / hᴴh`. If `h = 0` the scale is
/// unidentifiable and `current` is returned unchanged.
pub fn lambda_update(h: &[f64], s: &[f64], z: &[f64], current: f64) -> f64 {
    let hh: f64 = h.iter().map(|v| v * v).sum();
    if hh == 0.0 {
        return current;
    }
    let num: f64 = h.iter().zip(s).zip(z).map(|((&h, &s), &z)| h * (s - z)).sum();
    (num / hh).max(0.0)
}

/// Whether the threshold leaves `λ` unidentifiable.
pub fn lambda_degenerate(h: &[f64]) -> bool {
    h.iter().all(|&v| v == 0.0)
}

/// Data for updating component `k` (0-based): `z̃ + λh - Σ_{p≠k} s_p`.
pub fn residual_for(
    record: &SignedRecord,
    params: &ScaledParams,
    lambda: f64,
    z: &PseudoData,
    k: usize,
) -> Result<Vec<f64>> {
    check_dims(record, params.dim)?;
    if k >= params.components.len() {
        return Err(invalid(format!(
            "component index {k} out of range for order {}",
            params.components.len()
        )));
    }
    let mut v: Vec<f64> = z.z.iter().zip(&record.h).map(|(&z, &h)| z + lambda * h).collect();
    for (p, c) in params.components.iter().enumerate() {
        if p != k {
            c.add_to(params.dim, record.shape, -1.0, &mut v);
        }
    }
    Ok(v)
}

fn flat_to_complex(dim: Dim, v: &[f64]) -> Vec<Complex64> {
    if dim.is_complex() {
        v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    } else {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }
}

/// Least-squares amplitudes of a single real sinusoid `a sin ωt + b cos ωt`.
fn ls_real(v: &[f64], omega: f64) -> (f64, f64) {
    let (mut ss, mut sc, mut cc, mut vs, mut vc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, &x) in v.iter().enumerate() {
        let (s, c) = (omega * t as f64).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        vs += x * s;
        vc += x * c;
    }
    let det = ss * cc - sc * sc;
    if det > 1e-9 * (ss + cc).powi(2) {
        ((cc * vs - sc * vc) / det, (ss * vc - sc * vs) / det)
    } else if cc >= ss {
        (0.0, vc / cc)
    } else {
        (vs / ss, 0.0)
    }
}

/// Energy of the least-squares projection of `v` onto `{sin ωt, cos ωt}`,
/// in one pass with the sinusoids generated by rotation.
fn ls_real_energy(v: &[f64], omega: f64) -> f64 {
    let (ds, dc) = omega.sin_cos();
    let (mut s, mut c) = (0.0f64, 1.0f64);
    let (mut ss, mut sc, mut cc, mut vs, mut vc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &x in v {
        ss += s * s;
        sc += s * c;
        cc += c * c;
        vs += x * s;
        vc += x * c;
        (s, c) = (s * dc + c * ds, c * dc - s * ds);
    }
    let det = ss * cc - sc * sc;
    if det > 1e-9 * (ss + cc).powi(2) {
        (cc * vs * vs - 2.0 * sc * vs * vc + ss * vc * vc) / det
    } else {
        vc * vc / cc.max(f64::MIN_POSITIVE)
    }
}

/// Golden-section maximization of the exact real least-squares fit within
/// `omega ± half_width`, restricted to `[0, π]`. The periodogram peak of a
/// real tone is pulled by its mirror image at `-ω`; this removes that pull.
fn polish_real(v: &[f64], omega: f64, half_width: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut lo = (omega - half_width).max(0.0);
    let mut hi = (omega + half_width).min(PI);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut e1 = ls_real_energy(v, x1);
    let mut e2 = ls_real_energy(v, x2);
    while hi - lo > tol {
        if e1 >= e2 {
            hi = x2;
            x2 = x1;
            e2 = e1;
            x1 = hi - INV_PHI * (hi - lo);
            e1 = ls_real_energy(v, x1);
        } else {
            lo = x1;
            x1 = x2;
            e1 = e2;
            x2 = lo + INV_PHI * (hi - lo);
            e2 = ls_real_energy(v, x2);
        }
    }
    let best = 0.5 * (lo + hi);
    if ls_real_energy(v, best) >= ls_real_energy(v, omega) {
        best
    } else {
        omega
    }
}

/// Least-squares complex amplitude of `α exp(j(ω1 t1 + ω2 t2))`.
fn ls_complex(v: &[Complex64], shape: Shape, omega1: f64, omega2: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for t1 in 0..shape.n1 {
        for t2 in 0..shape.n2 {
            let ph = omega1 * t1 as f64 + omega2 * t2 as f64;
            acc += v[t1 * shape.n2 + t2] * Complex64::from_polar(1.0, -ph);
        }
    }
    acc / shape.len() as f64
}

/// Peak of a 1-D spectrum refined by the two-stage chirp-z zoom.
fn zoom_peak_1d(x: &[Complex64], n1: usize, real: bool) -> Result<f64> {
    let spectrum = fft(x, n1)?;
    let coarse_bins = if real { n1 / 2 } else { n1 };
    let coarse = argmax_abs(&spectrum, |m| m < coarse_bins).unwrap_or(0);
    let mut omega = TAU * coarse as f64 / n1 as f64;
    let n2 = MmConfig::n2_for(n1);
    let in_domain = |w: f64| !real || (0.0..PI).contains(&w);
    for half_width in [TAU / n1 as f64, 2.0 * TAU / (n1 * n2) as f64] {
        let zoom = ZoomSpec::centered(omega, half_width, n2)?;
        let vals = czt(x, &zoom)?;
        if let Some(m) = argmax_abs(&vals, |m| in_domain(zoom.freq(m))) {
            omega = zoom.freq(m);
        }
    }
    Ok(if real { omega.clamp(0.0, PI) } else { wrap_2pi(omega) })
}

/// Row-major 2-D transform helper: applies `row_op` along axis 2 for every
/// row and `col_op` along axis 1 for every resulting column.
fn separable_2d(
    v: &[Complex64],
    shape: Shape,
    row_op: &dyn Fn(&[Complex64]) -> Result<Vec<Complex64>>,
    col_op: &dyn Fn(&[Complex64]) -> Result<Vec<Complex64>>,
) -> Result<(Vec<Complex64>, usize, usize)> {
    let mut rows = Vec::with_capacity(shape.n1);
    for t1 in 0..shape.n1 {
        rows.push(row_op(&v[t1 * shape.n2..(t1 + 1) * shape.n2])?);
    }
    let m2 = rows[0].len();
    let mut out: Vec<Complex64> = Vec::new();
    let mut m1 = 0;
    let mut col = vec![Complex64::new(0.0, 0.0); shape.n1];
    for c in 0..m2 {
        for (t1, r) in rows.iter().enumerate() {
            col[t1] = r[c];
        }
        let tc = col_op(&col)?;
        if out.is_empty() {
            m1 = tc.len();
            out = vec![Complex64::new(0.0, 0.0); m1 * m2];
        }
        for (r, val) in tc.into_iter().enumerate() {
            out[r * m2 + c] = val;
        }
    }
    Ok((out, m1, m2))
}

fn zoom_peak_2d(x: &[Complex64], shape: Shape, n1a: usize, n1b: usize) -> Result<(f64, f64)> {
    let (spec, _, m2) = separable_2d(x, shape, &|r| fft(r, n1b), &|c| fft(c, n1a))?;
    let peak = argmax_abs(&spec, |_| true).unwrap_or(0);
    let mut w1 = TAU * (peak / m2) as f64 / n1a as f64;
    let mut w2 = TAU * (peak % m2) as f64 / n1b as f64;
    let (n2a, n2b) = (MmConfig::n2_for(n1a), MmConfig::n2_for(n1b));
    let stages = [
        (TAU / n1a as f64, TAU / n1b as f64),
        (2.0 * TAU / (n1a * n2a) as f64, 2.0 * TAU / (n1b * n2b) as f64),
    ];
    for (hw1, hw2) in stages {
        let za = ZoomSpec::centered(w1, hw1, n2a)?;
        let zb = ZoomSpec::centered(w2, hw2, n2b)?;
        let (vals, _, m2) = separable_2d(x, shape, &|r| czt(r, &zb), &|c| czt(c, &za))?;
        let p = argmax_abs(&vals, |_| true).unwrap_or(0);
        w1 = za.freq(p / m2);
        w2 = zb.freq(p % m2);
    }
    Ok((wrap_2pi(w1), wrap_2pi(w2)))
}

/// Fit one sinusoid to `v` (flat channels): coarse `N1`-point FFT peak,
/// `N2`-point chirp-z zoom over `ω ± 2π/N1`, a second zoom over
/// `ω ± 4π/(N1 N2)`, then least-squares amplitudes at the final frequency.
/// Real data searches `[0, π)`; complex data `[0, 2π)` per axis.
pub fn refine_sinusoid(v: &[f64], dim: Dim, shape: Shape, config: &MmConfig) -> Result<ScaledComponent> {
    if v.is_empty() {
        return Err(invalid("cannot refine an empty residual"));
    }
    if v.len() != shape.len() * dim.channels() {
        return Err(invalid("residual length does not match the record shape"));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(ScaledComponent::new(0.0, 0.0, 0.0));
    }
    let x = flat_to_complex(dim, v);
    match dim {
        Dim::Real1 => {
            let n1 = config.n1_for(shape.len());
            let coarse = zoom_peak_1d(&x, n1, true)?;
            // resolve well below the final zoom width
            let tol = 1e-4 * 2.0 * TAU / (n1 * MmConfig::n2_for(n1)) as f64;
            let omega = polish_real(v, coarse, TAU / n1 as f64, tol);
            let omega = if omega >= PI { coarse } else { omega };
            let (a, b) = ls_real(v, omega);
            Ok(ScaledComponent::new(a, b, omega))
        }
        Dim::Complex1 => {
            let omega = zoom_peak_1d(&x, config.n1_for(shape.len()), false)?;
            let alpha = ls_complex(&x, shape, omega, 0.0);
            Ok(ScaledComponent::new(alpha.re, alpha.im, omega))
        }
        Dim::Complex2 => {
            let (w1, w2) = zoom_peak_2d(&x, shape, config.n1_for(shape.n1), config.n1_for(shape.n2))?;
            let alpha = ls_complex(&x, shape, w1, w2);
            Ok(ScaledComponent::new_2d(alpha.re, alpha.im, w1, w2))
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of one cyclic minimization of `g`.
#[derive(Debug, Clone)]
pub struct CyclicOutcome {
    pub params: ScaledParams,
    /// `g` before any update, then after every `λ` and component update.
    pub g_trace: Vec<f64>,
    pub sweeps: usize,
}

/// `g(θ̃, λ) = Σ (s(θ̃) - λh - z̃)²`.
pub fn surrogate_ls(record: &SignedRecord, params: &ScaledParams, z: &PseudoData) -> Result<f64> {
    check_dims(record, params.dim)?;
    let s = params.signal(record.shape);
    Ok(g_value(&s, &record.h, &z.z, params.lambda))
}

fn g_value(s: &[f64], h: &[f64], z: &[f64], lambda: f64) -> f64 {
    s.iter().zip(h).zip(z).map(|((&s, &h), &z)| (s - lambda * h - z).powi(2)).sum()
}

/// Cyclically decrease `g` at fixed pseudo-data: starting at the last
/// component and wrapping around, re-solve `λ` in closed form and then refit
/// one sinusoid to its residual. A refit that would increase `g` is
/// discarded. Stops when a full sweep changes `g` by less than
/// `inner_rel_tol` (relative).
pub fn cyclic_minimize(
    record: &SignedRecord,
    params_in: &ScaledParams,
    z: &PseudoData,
    config: &MmConfig,
) -> Result<CyclicOutcome> {
    check_dims(record, params_in.dim)?;
    let k_total = params_in.components.len();
    if k_total == 0 {
        return Err(invalid("cyclic minimization needs at least one sinusoid"));
    }
    let dim = record.dim;
    let shape = record.shape;
    let nch = record.channels();
    let h = &record.h;

    let mut params = params_in.clone();
    let mut comp_sig: Vec<Vec<f64>> = params
        .components
        .iter()
        .map(|c| {
            let mut s = vec![0.0; nch];
            c.add_to(dim, shape, 1.0, &mut s);
            s
        })
        .collect();
    let mut total = vec![0.0; nch];
    for s in &comp_sig {
        total.iter_mut().zip(s).for_each(|(t, v)| *t += v);
    }

    let mut g = g_value(&total, h, &z.z, params.lambda);
    let mut trace = vec![g];
    let mut k = k_total - 1;
    let mut sweeps = 0;
    let mut v = vec![0.0; nch];
    while sweeps < config.max_inner_sweeps {
        let g_start = g;
        for _ in 0..k_total {
            params.lambda = lambda_update(h, &total, &z.z, params.lambda);
            g = g_value(&total, h, &z.z, params.lambda);
            trace.push(g);

            for (((vi, &zi), &hi), (&ti, &si)) in
                v.iter_mut().zip(&z.z).zip(h).zip(total.iter().zip(&comp_sig[k]))
            {
                *vi = zi + params.lambda * hi - (ti - si);
            }
            let cand = refine_sinusoid(&v, dim, shape, config)?;
            let mut cand_sig = vec![0.0; nch];
            cand.add_to(dim, shape, 1.0, &mut cand_sig);
            if sq_dist(&v, &cand_sig) < sq_dist(&v, &comp_sig[k]) {
                for ((t, &new), &old) in total.iter_mut().zip(&cand_sig).zip(&comp_sig[k]) {
                    *t += new - old;
                }
                params.components[k] = cand;
                comp_sig[k] = cand_sig;
                g = g_value(&total, h, &z.z, params.lambda);
            }
            trace.push(g);
            k = (k + 1) % k_total;
        }
        sweeps += 1;
        let rel = (g_start - g).abs() / g_start.abs().max(f64::MIN_POSITIVE);
        if rel < config.inner_rel_tol {
            break;
        }
    }
    Ok(CyclicOutcome { params, g_trace: trace, sweeps })
}

/// Result of [`mm_minimize`].
#[derive(Debug, Clone)]
pub struct MmOutcome {
    pub params: ScaledParams,
    /// Negative log-likelihood at the initialization and after each accepted iteration.
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    pub inner_sweeps: usize,
}

fn nll_at(record: &SignedRecord, params: &ScaledParams) -> f64 {
    let s = params.signal(record.shape);
    nll_of_margins(&margins_from_signal(record, &s, params.lambda))
}

/// Outer MM loop: pseudo-data from the current margins, cyclic minimization
/// of the surrogate, repeat until the relative NLL change drops below
/// `mm_rel_tol` or `max_mm_iters` iterations have run.
pub fn mm_minimize(record: &SignedRecord, params_init: &ScaledParams, config: &MmConfig) -> Result<MmOutcome> {
    config.validate()?;
    check_dims(record, params_init.dim)?;
    if params_init.components.is_empty() {
        return Err(invalid("MM needs at least one sinusoid"));
    }
    let finite = params_init.lambda.is_finite()
        && params_init.components.iter().all(|c| c.a.is_finite() && c.b.is_finite() && c.omega.is_finite());
    if !finite {
        return Err(invalid("initial parameters must be finite"));
    }

    let mut params = params_init.clone();
    let mut l = nll_at(record, &params);
    let mut trace = vec![l];
    let mut iterations = 0;
    let mut inner_sweeps = 0;
    while iterations < config.max_mm_iters {
        let s = params.signal(record.shape);
        let x = margins_from_signal(record, &s, params.lambda);
        let z = PseudoData { dim: record.dim, z: pseudo_from_margins(record, &x) };
        let out = cyclic_minimize(record, &params, &z, config)?;
        iterations += 1;
        inner_sweeps += out.sweeps;
        let l_new = nll_at(record, &out.params);
        if !(l_new <= l) {
            // only reachable through rounding; the majorizer forbids an increase
            break;
        }
        let rel = (l - l_new) / l.abs().max(f64::MIN_POSITIVE);
        params = out.params;
        l = l_new;
        trace.push(l);
        if rel < config.mm_rel_tol {
            break;
        }
    }
    Ok(MmOutcome { params, nll_trace: trace, iterations, inner_sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::nll;
    use crate::sigmodel::{sample_one_bit, synth, RngState, Sinusoid, SinusoidSet, ThresholdSpec};

    fn rec_from(dim: Dim, shape: Shape, y: Vec<f64>, h: Vec<f64>) -> SignedRecord {
        SignedRecord::new(dim, shape, y, h).unwrap()
    }

    #[test]
    fn pseudo_data_examples() {
        let rec = rec_from(Dim::Real1, Shape::one(2), vec![1.0, -1.0], vec![0.0, 0.0]);
        let z = pseudo_data(&rec, &ScaledParams::null(Dim::Real1, 1.0)).unwrap();
        assert!((z.z[0] - 0.797_884_560_802_865_4).abs() < 1e-15);
        assert!((z.z[1] + 0.797_884_560_802_865_4).abs() < 1e-15);

        // x = 2 via y = -1, h = 2, λ = 1
        let rec = rec_from(Dim::Real1, Shape::one(1), vec![-1.0], vec![2.0]);
        let z = pseudo_data(&rec, &ScaledParams::null(Dim::Real1, 1.0)).unwrap();
        // z = y (x - f'(x)) = -(2 + 0.0552478626789899...)
        assert!((z.z[0] + 2.055_247_862_678_99).abs() < 1e-12);
    }

    #[test]
    fn lambda_update_examples() {
        assert_eq!(lambda_update(&[1.0, 2.0], &[0.5, 0.5], &[0.5, 0.5], 3.0), 0.0);
        assert_eq!(lambda_update(&[1.0], &[0.0], &[1.0], 3.0), 0.0);
        assert!((lambda_update(&[1.0, 2.0], &[2.0, 4.0], &[0.0, 0.0], 3.0) - 2.0).abs() < 1e-15);
        assert_eq!(lambda_update(&[0.0, 0.0], &[2.0, 4.0], &[0.0, 0.0], 3.0), 3.0);
        assert!(lambda_degenerate(&[0.0, 0.0]));
    }

    #[test]
    fn residual_examples() {
        let rec = rec_from(Dim::Real1, Shape::one(4), vec![1.0; 4], vec![0.5, -0.5, 1.0, 0.0]);
        let z = PseudoData { dim: Dim::Real1, z: vec![0.1, 0.2, 0.3, 0.4] };
        let one = ScaledParams::new(Dim::Real1, vec![ScaledComponent::new(1.0, 2.0, 0.3)], 1.0);
        let v = residual_for(&rec, &one, 2.0, &z, 0).unwrap();
        for i in 0..4 {
            assert!((v[i] - (z.z[i] + 2.0 * rec.h[i])).abs() < 1e-15);
        }

        let two = ScaledParams::new(
            Dim::Real1,
            vec![ScaledComponent::new(1.0, 0.0, PI / 2.0), ScaledComponent::new(0.0, 1.0, PI)],
            1.0,
        );
        // component 2 = cos(πn) = [1, -1, 1, -1]
        let v = residual_for(&rec, &two, 0.0, &z, 0).unwrap();
        let want = [0.1 - 1.0, 0.2 + 1.0, 0.3 - 1.0, 0.4 + 1.0];
        for i in 0..4 {
            assert!((v[i] - want[i]).abs() < 1e-12);
        }
        // component 1 = sin(πn/2) = [0, 1, 0, -1]
        let v = residual_for(&rec, &two, 0.0, &z, 1).unwrap();
        let want = [0.1, 0.2 - 1.0, 0.3, 0.4 + 1.0];
        for i in 0..4 {
            assert!((v[i] - want[i]).abs() < 1e-12);
        }
        assert!(residual_for(&rec, &two, 0.0, &z, 2).is_err());
    }

    #[test]
    fn refine_zero_residual() {
        let c = refine_sinusoid(&[0.0; 16], Dim::Real1, Shape::one(16), &MmConfig::default()).unwrap();
        assert_eq!((c.a, c.b, c.omega), (0.0, 0.0, 0.0));
    }

    #[test]
    fn refine_on_grid_complex_tone() {
        let n = 64;
        let w = TAU * 5.0 / 64.0;
        let alpha = Complex64::from_polar(1.0, 0.7);
        let v: Vec<f64> = (0..n)
            .flat_map(|t| {
                let s = alpha * Complex64::from_polar(1.0, w * t as f64);
                [s.re, s.im]
            })
            .collect();
        let c = refine_sinusoid(&v, Dim::Complex1, Shape::one(n), &MmConfig::default()).unwrap();
        assert!((c.omega - w).abs() < 1e-12);
        assert!((c.a - alpha.re).abs() < 1e-6 && (c.b - alpha.im).abs() < 1e-6);
    }

    #[test]
    fn refine_off_grid_tones_within_final_zoom() {
        let mut rng = RngState::new(11);
        let cfg = MmConfig::default();
        for &n in &[100usize, 256] {
            let n1 = cfg.n1_for(n);
            let tol = 2.0 * TAU / (n1 * MmConfig::n2_for(n1)) as f64;
            for _ in 0..20 {
                let w = 0.05 + rng.next_f64() * (PI - 0.1);
                let set = SinusoidSet::new(Dim::Real1, vec![Sinusoid::new(1.3, rng.next_f64() * TAU, w)]);
                let v = synth(&set, Shape::one(n)).unwrap().data;
                let c = refine_sinusoid(&v, Dim::Real1, Shape::one(n), &cfg).unwrap();
                assert!((c.omega - w).abs() <= tol, "n={n} w={w} got {}", c.omega);

                let wc = rng.next_f64() * TAU;
                let set = SinusoidSet::new(Dim::Complex1, vec![Sinusoid::new(0.9, 1.0, wc)]);
                let v = synth(&set, Shape::one(n)).unwrap().data;
                let c = refine_sinusoid(&v, Dim::Complex1, Shape::one(n), &cfg).unwrap();
                let d = (c.omega - wc).abs();
                assert!(d.min(TAU - d) <= tol, "complex n={n} w={wc} got {}", c.omega);
            }
        }
    }

    #[test]
    fn refine_2d_tone() {
        let shape = Shape::two(16, 24);
        let set = SinusoidSet::new(Dim::Complex2, vec![Sinusoid::new_2d(1.0, 0.4, 1.234, 4.321)]);
        let v = synth(&set, shape).unwrap().data;
        let c = refine_sinusoid(&v, Dim::Complex2, shape, &MmConfig::default()).unwrap();
        assert!((c.omega - 1.234).abs() < 2.0 * TAU / (16.0 * 17.0));
        assert!((c.omega2 - 4.321).abs() < 2.0 * TAU / (32.0 * 33.0));
        assert!((c.a.hypot(c.b) - 1.0).abs() < 1e-3);
    }

    fn noisy_record(seed: u64, set: &SinusoidSet, n: usize, sigma: f64) -> SignedRecord {
        let sig = synth(set, Shape::one(n)).unwrap();
        sample_one_bit(&sig, sigma, &ThresholdSpec::default(), &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn cyclic_fixed_point_at_truth() {
        let n = 64;
        let dim = Dim::Complex1;
        let truth = ScaledParams::new(dim, vec![ScaledComponent::new(1.0, -0.5, TAU * 7.0 / 64.0)], 1.5);
        let rec = noisy_record(1, &SinusoidSet::new(dim, vec![Sinusoid::new(1.0, 0.0, 1.0)]), n, 0.5);
        // z̃ = s - λh exactly
        let s = truth.signal(rec.shape);
        let z = PseudoData { dim, z: s.iter().zip(&rec.h).map(|(s, h)| s - 1.5 * h).collect() };
        let out = cyclic_minimize(&rec, &truth, &z, &MmConfig::default()).unwrap();
        assert!((out.params.lambda - 1.5).abs() < 1e-10);
        let c = out.params.components[0];
        assert!((c.omega - truth.components[0].omega).abs() < 1e-12);
        assert!((c.a - 1.0).abs() < 1e-10 && (c.b + 0.5).abs() < 1e-10);
        assert!(out.g_trace.last().unwrap().abs() < 1e-18);
    }

    #[test]
    fn cyclic_recovers_tone_from_bad_start() {
        let n = 128;
        let dim = Dim::Real1;
        let w0 = 0.77;
        let target = ScaledParams::new(dim, vec![ScaledComponent::new(2.0, 1.0, w0)], 0.8);
        let rec = noisy_record(2, &SinusoidSet::new(dim, vec![Sinusoid::new(1.0, 0.0, 1.0)]), n, 0.5);
        let s = target.signal(rec.shape);
        let z = PseudoData { dim, z: s.iter().zip(&rec.h).map(|(s, h)| s - 0.8 * h).collect() };
        let start = ScaledParams::new(dim, vec![ScaledComponent::new(0.1, 0.0, TAU * 3.0 / 128.0)], 0.1);
        let out = cyclic_minimize(&rec, &start, &z, &MmConfig::default()).unwrap();
        let c = out.params.components[0];
        assert!((c.omega - w0).abs() < 2.0 * TAU / (128.0 * 129.0));
        assert!((c.a - 2.0).abs() < 1e-3 && (c.b - 1.0).abs() < 1e-3);
        assert!((out.params.lambda - 0.8).abs() < 1e-3);
    }

    #[test]
    fn cyclic_trace_is_monotone() {
        let cfg = MmConfig::default();
        for seed in 0..40u64 {
            let mut rng = RngState::new(seed);
            let dim = if seed % 3 == 0 { Dim::Complex1 } else { Dim::Real1 };
            let k = 1 + (seed % 3) as usize;
            let comps: Vec<_> = (0..k)
                .map(|_| Sinusoid::new(0.5 + rng.next_f64(), rng.next_f64() * TAU, rng.next_f64() * dim.freq_limit()))
                .collect();
            let set = SinusoidSet::new(dim, comps);
            let rec = noisy_record(seed, &set, 96, 0.4);
            let start = ScaledParams::new(
                dim,
                (0..k).map(|_| ScaledComponent::new(rng.next_gaussian(), rng.next_gaussian(), rng.next_f64() * dim.freq_limit())).collect(),
                rng.next_f64() * 3.0,
            );
            let z = pseudo_data(&rec, &start).unwrap();
            let out = cyclic_minimize(&rec, &start, &z, &cfg).unwrap();
            for w in out.g_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
            let g_end = surrogate_ls(&rec, &out.params, &z).unwrap();
            assert!((g_end - out.g_trace.last().unwrap()).abs() < 1e-8 * (1.0 + g_end));
        }
    }

    #[test]
    fn lambda_is_optimal_in_g() {
        let mut rng = RngState::new(99);
        for _ in 0..50 {
            let n = 40;
            let h: Vec<f64> = (0..n).map(|_| rng.next_gaussian()).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.next_gaussian()).collect();
            let z: Vec<f64> = (0..n).map(|_| rng.next_gaussian() * 2.0).collect();
            let lam = lambda_update(&h, &s, &z, 1.0);
            let g0 = g_value(&s, &h, &z, lam);
            for d in [-1e-4, 1e-4] {
                let l2 = (lam + d).max(0.0);
                assert!(g_value(&s, &h, &z, l2) >= g0 - 1e-12);
            }
        }
    }

    #[test]
    fn mm_decreases_nll_and_finds_tone() {
        let n = 512;
        let w0 = 1.1;
        let set = SinusoidSet::new(Dim::Real1, vec![Sinusoid::new(1.0, 0.4, w0)]);
        let sigma = crate::sigmodel::snr_to_sigma(&set, 20.0).unwrap();
        let rec = noisy_record(5, &set, n, sigma);
        // coarse init two bins off
        let init = ScaledParams::new(Dim::Real1, vec![ScaledComponent::new(0.5, 0.5, w0 + 2.0 * TAU / n as f64)], 1.0);
        let out = mm_minimize(&rec, &init, &MmConfig::default()).unwrap();
        for w in out.nll_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(out.nll_trace.last().unwrap() < &out.nll_trace[0]);
        let c = out.params.components[0];
        assert!((c.omega - w0).abs() < TAU / n as f64, "omega {}", c.omega);
        assert!((nll(&rec, &out.params).unwrap() - out.nll_trace.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mm_at_stationary_point_stops_quickly() {
        let n = 256;
        let set = SinusoidSet::new(Dim::Real1, vec![Sinusoid::new(1.0, 0.4, 0.9)]);
        let rec = noisy_record(6, &set, n, 0.2);
        let tight = MmConfig { mm_rel_tol: 1e-13, max_mm_iters: 2000, ..Default::default() };
        let first = mm_minimize(&rec, &ScaledParams::from_unscaled(&set, 0.2), &tight).unwrap();
        let cfg = MmConfig::default();
        let again = mm_minimize(&rec, &first.params, &cfg).unwrap();
        assert!(again.iterations <= 2);
        let t = &again.nll_trace;
        assert!((t[0] - t[t.len() - 1]).abs() <= 1e-5 * t[0]);
    }

    #[test]
    fn mm_rejects_empty_model() {
        let rec = noisy_record(1, &SinusoidSet::empty(Dim::Real1), 16, 1.0);
        assert!(mm_minimize(&rec, &ScaledParams::null(Dim::Real1, 1.0), &MmConfig::default()).is_err());
    }
}
