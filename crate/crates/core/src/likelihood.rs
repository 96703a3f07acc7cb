//! One-bit likelihood: `f(x) = -log Φ(x)` with its derivatives, the margin
//! vector, the negative log-likelihood and its quadratic majorizer.
//!
//! `f` is evaluated through `erfc` for `x > -5` and through a continued
//! fraction for the Mills ratio below that. The continued fraction returns
//! `D(t) = 1/R(t) - t` (with `R` the Mills ratio and `t = -x`) directly, so
//! `f'' = (t + D) D` has no cancellation in the far left tail.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sigmodel::{add_component, Dim, Shape, SignedRecord, Sinusoid, SinusoidSet};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const TAIL_SWITCH: f64 = -5.0;
const CF_DEPTH: usize = 40;

/// `1/R(t) - t` for `t >= 5`, where `R(t) = Q(t)/ψ(t)` is the Mills ratio.
fn mills_excess(t: f64) -> f64 {
    let mut cur = t;
    for k in (2..=CF_DEPTH).rev() {
        cur = t + k as f64 / cur;
    }
    1.0 / cur
}

/// `(f(x), f'(x), f''(x))` without input validation.
#[inline]
pub(crate) fn nlcdf_all(x: f64) -> (f64, f64, f64) {
    if x <= TAIL_SWITCH {
        let t = -x;
        let d = mills_excess(t);
        let imr = t + d;
        (0.5 * x * x + LN_SQRT_2PI + imr.ln(), -imr, imr * d)
    } else {
        let (f, phi) = if x < 0.0 {
            let phi = 0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2);
            (-phi.ln(), phi)
        } else {
            let q = 0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2);
            (-(-q).ln_1p(), 1.0 - q)
        };
        let d1 = -FRAC_1_SQRT_2PI * (-0.5 * x * x).exp() / phi;
        (f, d1, -d1 * (x - d1))
    }
}

/// `f(x)` without input validation.
#[inline]
pub(crate) fn nlcdf(x: f64) -> f64 {
    if x <= TAIL_SWITCH {
        let t = -x;
        0.5 * x * x + LN_SQRT_2PI + (t + mills_excess(t)).ln()
    } else if x < 0.0 {
        -(0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)).ln()
    } else {
        -(-0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
    }
}

/// `f'(x)` without input validation.
#[inline]
pub(crate) fn nlcdf_d1(x: f64) -> f64 {
    if x <= TAIL_SWITCH {
        let t = -x;
        -(t + mills_excess(t))
    } else {
        let phi = 0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2);
        -FRAC_1_SQRT_2PI * (-0.5 * x * x).exp() / phi
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_nan() {
        Err(invalid("NaN argument"))
    } else {
        Ok(())
    }
}

/// `f(x) = -log Φ(x)`.
pub fn f(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(nlcdf(x))
}

/// `f'(x) = -ψ(x)/Φ(x)`, the negated inverse Mills ratio at `-x`.
///
/// Strictly negative wherever `ψ(x)` is representable (`x` below about 38).
pub fn f_prime(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(nlcdf_d1(x))
}

/// `f''(x) = -f'(x) (x - f'(x))`, which lies in `(0, 1)`.
pub fn f_second(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(nlcdf_all(x).2)
}

/// Pairwise summation; fixed association order, so results are reproducible.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Scaled sinusoid `(ã, b̃, ω)`; `omega2` is used only for 2-D data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledComponent {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
    #[serde(default)]
    pub omega2: f64,
}

impl ScaledComponent {
    pub fn new(a: f64, b: f64, omega: f64) -> Self {
        Self { a, b, omega, omega2: 0.0 }
    }

    pub fn new_2d(a: f64, b: f64, omega1: f64, omega2: f64) -> Self {
        Self { a, b, omega: omega1, omega2 }
    }

    pub(crate) fn add_to(&self, dim: Dim, shape: Shape, scale: f64, out: &mut [f64]) {
        add_component(dim, shape, self.a, self.b, self.omega, self.omega2, scale, out);
    }
}

/// Reparameterized model: amplitudes divided by the noise scale and
/// `λ = 1/σ` (real) or `λ = √2/σ` (complex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledParams {
    pub dim: Dim,
    pub components: Vec<ScaledComponent>,
    pub lambda: f64,
}

impl ScaledParams {
    pub fn new(dim: Dim, components: Vec<ScaledComponent>, lambda: f64) -> Self {
        Self { dim, components, lambda }
    }

    pub fn null(dim: Dim, lambda: f64) -> Self {
        Self { dim, components: Vec::new(), lambda }
    }

    pub fn order(&self) -> usize {
        self.components.len()
    }

    /// `λ` corresponding to noise standard deviation `sigma`.
    pub fn lambda_for_sigma(dim: Dim, sigma: f64) -> f64 {
        if dim.is_complex() {
            2f64.sqrt() / sigma
        } else {
            1.0 / sigma
        }
    }

    /// Scale a physical model by its noise level.
    pub fn from_unscaled(set: &SinusoidSet, sigma: f64) -> Self {
        let lambda = Self::lambda_for_sigma(set.dim, sigma);
        let components = set
            .components
            .iter()
            .map(|c| {
                let (a, b) = c.ab();
                ScaledComponent { a: a * lambda, b: b * lambda, omega: c.omega, omega2: c.omega2 }
            })
            .collect();
        Self { dim: set.dim, components, lambda }
    }

    /// Noise level `σ̂`; `None` when `λ = 0`.
    pub fn sigma(&self) -> Option<f64> {
        if self.lambda > 0.0 {
            Some(if self.dim.is_complex() { 2f64.sqrt() / self.lambda } else { 1.0 / self.lambda })
        } else {
            None
        }
    }

    /// Physical amplitudes `a = ã/λ`, `b = b̃/λ`. Amplitudes are infinite
    /// (or NaN for zero components) when `λ = 0`.
    pub fn to_unscaled(&self) -> SinusoidSet {
        let comps = self
            .components
            .iter()
            .map(|c| Sinusoid::from_ab(c.a / self.lambda, c.b / self.lambda, c.omega, c.omega2))
            .collect();
        SinusoidSet::new(self.dim, comps)
    }

    /// Model signal `s(θ̃)` as flat channels.
    pub fn signal(&self, shape: Shape) -> Vec<f64> {
        let mut out = vec![0.0; shape.len() * self.dim.channels()];
        for c in &self.components {
            c.add_to(self.dim, shape, 1.0, &mut out);
        }
        out
    }
}

pub(crate) fn check_dims(record: &SignedRecord, dim: Dim) -> Result<()> {
    if record.dim != dim {
        return Err(Error::DimensionMismatch(format!(
            "record is {} but parameters are {}",
            record.dim.tag(),
            dim.tag()
        )));
    }
    Ok(())
}

/// Margins `x = y (s(θ̃) - λ h)`, one per real channel. For complex data the
/// real- and imaginary-part margins are interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginVector {
    pub dim: Dim,
    pub x: Vec<f64>,
}

/// Margins from a precomputed model signal.
pub(crate) fn margins_from_signal(record: &SignedRecord, signal: &[f64], lambda: f64) -> Vec<f64> {
    record
        .y
        .iter()
        .zip(&record.h)
        .zip(signal)
        .map(|((&y, &h), &s)| y * (s - lambda * h))
        .collect()
}

pub fn margins(record: &SignedRecord, params: &ScaledParams) -> Result<MarginVector> {
    check_dims(record, params.dim)?;
    let s = params.signal(record.shape);
    Ok(MarginVector { dim: record.dim, x: margins_from_signal(record, &s, params.lambda) })
}

/// `Σ f(x)` over a margin slice.
pub(crate) fn nll_of_margins(x: &[f64]) -> f64 {
    let terms: Vec<f64> = x.iter().map(|&v| nlcdf(v)).collect();
    pairwise_sum(&terms)
}

/// Negative log-likelihood `l(β̃) = Σ f(x)`; complex samples contribute one
/// term per quadrature.
pub fn nll(record: &SignedRecord, params: &ScaledParams) -> Result<f64> {
    let m = margins(record, params)?;
    if let Some(bad) = m.x.iter().position(|v| v.is_nan()) {
        return Err(Error::Numerical(format!("margin {bad} is NaN")));
    }
    Ok(nll_of_margins(&m.x))
}

/// Quadratic majorizer `G(β̃ | anchor) = Σ f(xⁱ) + f'(xⁱ)(x - xⁱ) + ½(x - xⁱ)²`.
pub fn surrogate(record: &SignedRecord, params: &ScaledParams, anchor: &ScaledParams) -> Result<f64> {
    check_dims(record, anchor.dim)?;
    let x = margins(record, params)?.x;
    let xa = margins(record, anchor)?.x;
    let terms: Vec<f64> = x
        .iter()
        .zip(&xa)
        .map(|(&x, &u)| {
            let (fu, d1, _) = nlcdf_all(u);
            let dx = x - u;
            fu + d1 * dx + 0.5 * dx * dx
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

const TABLE_LO: f64 = -16.0;
const TABLE_HI: f64 = 16.0;
const TABLE_STEPS_PER_UNIT: f64 = 128.0;

/// `(f, f', f'', f''')` on a uniform grid over `[TABLE_LO, TABLE_HI]`.
fn nlcdf_table() -> &'static [[f64; 4]] {
    static TABLE: std::sync::OnceLock<Vec<[f64; 4]>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((TABLE_HI - TABLE_LO) * TABLE_STEPS_PER_UNIT) as usize;
        (0..=n)
            .map(|i| {
                let x = TABLE_LO + i as f64 / TABLE_STEPS_PER_UNIT;
                let (f, d1, d2) = nlcdf_all(x);
                let d3 = -d2 * (x - d1) - d1 * (1.0 - d2);
                [f, d1, d2, d3]
            })
            .collect()
    })
}

/// Table-driven `(f, f', f'')` by cubic Hermite interpolation, for search
/// loops that only rank candidates. Absolute error is below 1e-10 inside the
/// table; above it every term is under 1e-57 and is returned as zero.
#[inline]
pub(crate) fn nlcdf_fast(x: f64) -> (f64, f64, f64) {
    if x >= TABLE_HI {
        return (0.0, 0.0, 0.0);
    }
    if !(x > TABLE_LO) {
        return nlcdf_all(x);
    }
    let table = nlcdf_table();
    let pos = (x - TABLE_LO) * TABLE_STEPS_PER_UNIT;
    let i = (pos as usize).min(table.len() - 2);
    let t = pos - i as f64;
    let h = 1.0 / TABLE_STEPS_PER_UNIT;
    let (p, q) = (&table[i], &table[i + 1]);
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = (t3 - 2.0 * t2 + t) * h;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = (t3 - t2) * h;
    (
        h00 * p[0] + h10 * p[1] + h01 * q[0] + h11 * q[1],
        h00 * p[1] + h10 * p[2] + h01 * q[1] + h11 * q[2],
        h00 * p[2] + h10 * p[3] + h01 * q[2] + h11 * q[3],
    )
}
