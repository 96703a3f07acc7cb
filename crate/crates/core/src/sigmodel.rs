//! Sinusoidal signal model, deterministic noise/threshold generation and
//! one-bit sampling.
//!
//! Conventions (sampling period 1, `t = 0..N-1`):
//!
//! * real 1-D: `s_t = Σ A_k sin(ω_k t + φ_k) = Σ a_k sin(ω_k t) + b_k cos(ω_k t)`
//! * complex 1-D: `s_t = Σ A_k exp(j(ω_k t + φ_k))`
//! * complex 2-D: `s_{t1,t2} = Σ A_k exp(j(ω_{1k} t1 + ω_{2k} t2 + φ_k))`
//!
//! with `a_k = A_k cos φ_k`, `b_k = A_k sin φ_k`.
//!
//! SNR convention: the power of the strongest component over the noise power,
//! `A_max² / (2σ²)` for real data and `A_max² / σ²` for complex data.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Data dimensionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    #[serde(rename = "r1")]
    Real1,
    #[serde(rename = "c1")]
    Complex1,
    #[serde(rename = "c2")]
    Complex2,
}

impl Dim {
    pub fn is_complex(self) -> bool {
        !matches!(self, Dim::Real1)
    }

    /// Real channels per sample.
    pub fn channels(self) -> usize {
        if self.is_complex() {
            2
        } else {
            1
        }
    }

    /// Upper end (exclusive) of the frequency domain, starting at 0.
    pub fn freq_limit(self) -> f64 {
        if self.is_complex() {
            TAU
        } else {
            PI
        }
    }

    pub fn is_2d(self) -> bool {
        matches!(self, Dim::Complex2)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Dim::Real1 => "r1",
            Dim::Complex1 => "c1",
            Dim::Complex2 => "c2",
        }
    }
}

impl FromStr for Dim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r1" => Ok(Dim::Real1),
            "c1" => Ok(Dim::Complex1),
            "c2" => Ok(Dim::Complex2),
            other => Err(invalid(format!("unknown dimensionality '{other}' (expected r1, c1 or c2)"))),
        }
    }
}

/// Sample grid: `n1 × n2` samples, row-major, with `n2 == 1` for 1-D data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n1: usize,
    pub n2: usize,
}

impl Shape {
    pub fn one(n: usize) -> Self {
        Self { n1: n, n2: 1 }
    }

    pub fn two(n1: usize, n2: usize) -> Self {
        Self { n1, n2 }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check(&self, dim: Dim) -> Result<()> {
        if self.is_empty() {
            return Err(invalid("sample count must be positive"));
        }
        if !dim.is_2d() && self.n2 != 1 {
            return Err(Error::DimensionMismatch(format!("{} data needs a 1-D shape", dim.tag())));
        }
        Ok(())
    }
}

/// One sinusoidal component. `omega2` is only meaningful for 2-D data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub phase: f64,
    pub omega: f64,
    pub omega2: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, phase: f64, omega: f64) -> Self {
        Self { amplitude, phase, omega, omega2: 0.0 }
    }

    pub fn new_2d(amplitude: f64, phase: f64, omega1: f64, omega2: f64) -> Self {
        Self { amplitude, phase, omega: omega1, omega2 }
    }

    /// Quadrature form `(a, b) = (A cos φ, A sin φ)`.
    pub fn ab(&self) -> (f64, f64) {
        let (s, c) = self.phase.sin_cos();
        (self.amplitude * c, self.amplitude * s)
    }

    /// Inverse of [`Sinusoid::ab`]; the phase is wrapped into `[0, 2π)`.
    pub fn from_ab(a: f64, b: f64, omega: f64, omega2: f64) -> Self {
        Self { amplitude: a.hypot(b), phase: wrap_2pi(b.atan2(a)), omega, omega2 }
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// A list of sinusoids tagged with their dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidSet {
    pub dim: Dim,
    pub components: Vec<Sinusoid>,
}

impl SinusoidSet {
    pub fn new(dim: Dim, components: Vec<Sinusoid>) -> Self {
        Self { dim, components }
    }

    pub fn empty(dim: Dim) -> Self {
        Self { dim, components: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let lim = self.dim.freq_limit();
        for (k, c) in self.components.iter().enumerate() {
            if !(c.amplitude > 0.0) || !c.amplitude.is_finite() {
                return Err(invalid(format!("component {k}: amplitude must be positive")));
            }
            if !c.phase.is_finite() {
                return Err(invalid(format!("component {k}: phase must be finite")));
            }
            let in_domain = |w: f64| (0.0..lim).contains(&w);
            if !in_domain(c.omega) || (self.dim.is_2d() && !in_domain(c.omega2)) {
                return Err(invalid(format!(
                    "component {k}: frequency outside [0, {lim}) for {} data",
                    self.dim.tag()
                )));
            }
        }
        Ok(())
    }

    pub fn max_amplitude(&self) -> Option<f64> {
        self.components.iter().map(|c| c.amplitude).reduce(f64::max)
    }
}

/// Add `scale × (a, b, ω)`-component to flat channel data in place.
pub(crate) fn add_component(
    dim: Dim,
    shape: Shape,
    a: f64,
    b: f64,
    omega: f64,
    omega2: f64,
    scale: f64,
    out: &mut [f64],
) {
    let (a, b) = (a * scale, b * scale);
    match dim {
        Dim::Real1 => {
            for (t, o) in out.iter_mut().enumerate() {
                let (s, c) = (omega * t as f64).sin_cos();
                *o += a * s + b * c;
            }
        }
        Dim::Complex1 | Dim::Complex2 => {
            for t1 in 0..shape.n1 {
                for t2 in 0..shape.n2 {
                    let idx = t1 * shape.n2 + t2;
                    let (s, c) = (omega * t1 as f64 + omega2 * t2 as f64).sin_cos();
                    out[2 * idx] += a * c - b * s;
                    out[2 * idx + 1] += a * s + b * c;
                }
            }
        }
    }
}

/// Sampled signal stored as flat real channels (interleaved re/im for complex data).
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub dim: Dim,
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Signal {
    pub fn zeros(dim: Dim, shape: Shape) -> Self {
        Self { dim, shape, data: vec![0.0; shape.len() * dim.channels()] }
    }

    /// Samples as complex numbers (imaginary parts zero for real data).
    pub fn to_complex(&self) -> Vec<Complex64> {
        if self.dim.is_complex() {
            self.data.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
        } else {
            self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        channels_to_json(self.dim, &self.data, |v| serde_json::json!(v))
    }
}

/// Evaluate the model on the sample grid.
pub fn synth(params: &SinusoidSet, shape: Shape) -> Result<Signal> {
    shape.check(params.dim)?;
    let mut sig = Signal::zeros(params.dim, shape);
    for c in &params.components {
        let (a, b) = c.ab();
        add_component(params.dim, shape, a, b, c.omega, c.omega2, 1.0, &mut sig.data);
    }
    Ok(sig)
}

/// `+1` iff `x >= 0`.
pub fn sign_real(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Componentwise sign of a complex number.
pub fn sign_complex(x: Complex64) -> Complex64 {
    Complex64::new(sign_real(x.re), sign_real(x.im))
}

/// SplitMix64 generator.
///
/// Update: `state += 0x9E3779B97F4A7C15`. Output: the standard SplitMix64
/// finalizer of the new state. Uniform doubles take the top 53 bits;
/// Gaussians use one Box–Muller pair per draw
/// (`sqrt(-2 ln(1-u1)) cos(2π u2)`, evaluated with `libm` for bitwise
/// reproducibility across platforms).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState(pub u64);

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(GOLDEN_GAMMA);
        mix64(self.0)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(TAU * u2)
    }
}

/// Threshold generation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThresholdSpec {
    /// The same threshold for every sample; `im` is used only for complex data.
    Fixed { re: f64, im: f64 },
    /// Each sample (and each quadrature for complex data) draws independently
    /// and uniformly from `levels` equally spaced values covering `[lo, hi]`.
    Discrete { levels: usize, lo: f64, hi: f64 },
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec::Discrete { levels: 8, lo: -1.0, hi: 1.0 }
    }
}

impl ThresholdSpec {
    pub fn fixed(h: f64) -> Self {
        ThresholdSpec::Fixed { re: h, im: h }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdSpec::Fixed { re, im } => {
                if !re.is_finite() || !im.is_finite() {
                    return Err(invalid("fixed threshold must be finite"));
                }
            }
            ThresholdSpec::Discrete { levels, lo, hi } => {
                if levels < 2 {
                    return Err(invalid("discrete threshold needs at least 2 levels"));
                }
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(invalid("discrete threshold range must satisfy lo < hi"));
                }
            }
        }
        Ok(())
    }

    /// The admissible values of a discrete threshold (empty for a fixed one).
    pub fn level_values(&self) -> Vec<f64> {
        match *self {
            ThresholdSpec::Fixed { .. } => Vec::new(),
            ThresholdSpec::Discrete { levels, lo, hi } => {
                let step = (hi - lo) / (levels - 1) as f64;
                (0..levels)
                    .map(|i| if i + 1 == levels { hi } else { lo + i as f64 * step })
                    .collect()
            }
        }
    }

    /// Materialize thresholds as flat channels.
    pub fn materialize(&self, dim: Dim, shape: Shape, rng: &mut RngState) -> Result<Vec<f64>> {
        self.validate()?;
        let n = shape.len();
        Ok(match *self {
            ThresholdSpec::Fixed { re, im } => {
                if dim.is_complex() {
                    (0..n).flat_map(|_| [re, im]).collect()
                } else {
                    vec![re; n]
                }
            }
            ThresholdSpec::Discrete { levels, .. } => {
                let values = self.level_values();
                (0..n * dim.channels())
                    .map(|_| {
                        let idx = ((rng.next_f64() * levels as f64) as usize).min(levels - 1);
                        values[idx]
                    })
                    .collect()
            }
        })
    }
}

impl FromStr for ThresholdSpec {
    type Err = Error;

    /// `fixed:H`, `fixed:RE:IM` or `discrete:LEVELS:LO:HI`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<f64> {
            p.trim().parse::<f64>().map_err(|_| invalid(format!("bad number '{p}' in threshold '{s}'")))
        };
        let spec = match parts.as_slice() {
            ["fixed", h] => ThresholdSpec::fixed(num(h)?),
            ["fixed", re, im] => ThresholdSpec::Fixed { re: num(re)?, im: num(im)? },
            ["discrete", l, lo, hi] => ThresholdSpec::Discrete {
                levels: l.trim().parse().map_err(|_| invalid(format!("bad level count in '{s}'")))?,
                lo: num(lo)?,
                hi: num(hi)?,
            },
            _ => {
                return Err(invalid(format!(
                    "threshold '{s}' must be fixed:H, fixed:RE:IM or discrete:LEVELS:LO:HI"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ThresholdSpec::Fixed { re, im } if re == im => write!(f, "fixed:{re}"),
            ThresholdSpec::Fixed { re, im } => write!(f, "fixed:{re}:{im}"),
            ThresholdSpec::Discrete { levels, lo, hi } => write!(f, "discrete:{levels}:{lo}:{hi}"),
        }
    }
}

/// Ground truth carried by simulated records.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub components: SinusoidSet,
    pub sigma: f64,
}

/// One-bit measurements and the thresholds they were taken against, both as
/// flat channels. Every entry of `y` is exactly `±1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRecord {
    pub dim: Dim,
    pub shape: Shape,
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    pub truth: Option<Truth>,
}

impl SignedRecord {
    pub fn new(dim: Dim, shape: Shape, y: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let rec = Self { dim, shape, y, h, truth: None };
        rec.validate()?;
        Ok(rec)
    }

    /// Number of samples (not channels).
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.check(self.dim)?;
        let want = self.shape.len() * self.dim.channels();
        if self.y.len() != want || self.h.len() != want {
            return Err(Error::Data(format!(
                "expected {want} channels, got y={} h={}",
                self.y.len(),
                self.h.len()
            )));
        }
        if let Some(bad) = self.y.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Data(format!("y[{bad}] is not ±1")));
        }
        if self.h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("dim".into(), self.dim.tag().into());
        obj.insert("n".into(), shape_to_json(self.dim, self.shape));
        obj.insert("y".into(), channels_to_json(self.dim, &self.y, |v| serde_json::json!(v as i64)));
        obj.insert("h".into(), channels_to_json(self.dim, &self.h, |v| serde_json::json!(v)));
        if let Some(t) = &self.truth {
            obj.insert(
                "truth".into(),
                serde_json::json!({
                    "components": components_to_json(&t.components),
                    "sigma": t.sigma,
                }),
            );
        }
        serde_json::Value::Object(obj)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("record serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::Data("record must be a JSON object".into()))?;
        let dim: Dim = obj
            .get("dim")
            .and_then(|d| d.as_str())
            .ok_or_else(|| Error::Data("missing 'dim'".into()))?
            .parse()
            .map_err(|e: Error| Error::Data(e.to_string()))?;
        let shape = shape_from_json(dim, obj.get("n").ok_or_else(|| Error::Data("missing 'n'".into()))?)?;
        let y = channels_from_json(dim, obj.get("y"), "y")?;
        let h = channels_from_json(dim, obj.get("h"), "h")?;
        let truth = match obj.get("truth") {
            None | Some(serde_json::Value::Null) => None,
            Some(t) => {
                let comps = components_from_json(
                    dim,
                    t.get("components").ok_or_else(|| Error::Data("truth without components".into()))?,
                )?;
                let sigma = t
                    .get("sigma")
                    .and_then(|s| s.as_f64())
                    .ok_or_else(|| Error::Data("truth without sigma".into()))?;
                Some(Truth { components: comps, sigma })
            }
        };
        let rec = SignedRecord { dim, shape, y, h, truth };
        rec.validate()?;
        Ok(rec)
    }
}

fn shape_to_json(dim: Dim, shape: Shape) -> serde_json::Value {
    if dim.is_2d() {
        serde_json::json!([shape.n1, shape.n2])
    } else {
        serde_json::json!(shape.n1)
    }
}

fn shape_from_json(dim: Dim, v: &serde_json::Value) -> Result<Shape> {
    let bad = || Error::Data("'n' must be a positive integer or [n1, n2]".into());
    let shape = if dim.is_2d() {
        let arr = v.as_array().ok_or_else(bad)?;
        if arr.len() != 2 {
            return Err(bad());
        }
        Shape::two(
            arr[0].as_u64().ok_or_else(bad)? as usize,
            arr[1].as_u64().ok_or_else(bad)? as usize,
        )
    } else {
        Shape::one(v.as_u64().ok_or_else(bad)? as usize)
    };
    if shape.is_empty() {
        return Err(bad());
    }
    Ok(shape)
}

fn channels_to_json(dim: Dim, data: &[f64], conv: impl Fn(f64) -> serde_json::Value) -> serde_json::Value {
    if dim.is_complex() {
        serde_json::Value::Array(data.chunks_exact(2).map(|p| serde_json::json!([conv(p[0]), conv(p[1])])).collect())
    } else {
        serde_json::Value::Array(data.iter().map(|&v| conv(v)).collect())
    }
}

fn channels_from_json(dim: Dim, v: Option<&serde_json::Value>, name: &str) -> Result<Vec<f64>> {
    let arr = v
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Data(format!("missing array '{name}'")))?;
    let num = |x: &serde_json::Value| {
        x.as_f64().ok_or_else(|| Error::Data(format!("non-numeric entry in '{name}'")))
    };
    if dim.is_complex() {
        let mut out = Vec::with_capacity(2 * arr.len());
        for p in arr {
            match p.as_array().map(|a| a.as_slice()) {
                Some([re, im]) => {
                    out.push(num(re)?);
                    out.push(num(im)?);
                }
                _ => return Err(Error::Data(format!("'{name}' entries must be [re, im] pairs"))),
            }
        }
        Ok(out)
    } else {
        arr.iter().map(num).collect()
    }
}

/// `[{A, phi, omega | [omega1, omega2]}, ...]`
pub fn components_to_json(set: &SinusoidSet) -> serde_json::Value {
    serde_json::Value::Array(
        set.components
            .iter()
            .map(|c| {
                let omega = if set.dim.is_2d() {
                    serde_json::json!([c.omega, c.omega2])
                } else {
                    serde_json::json!(c.omega)
                };
                serde_json::json!({"A": c.amplitude, "phi": c.phase, "omega": omega})
            })
            .collect(),
    )
}

pub fn components_from_json(dim: Dim, v: &serde_json::Value) -> Result<SinusoidSet> {
    let arr = v.as_array().ok_or_else(|| Error::Data("components must be an array".into()))?;
    let mut comps = Vec::with_capacity(arr.len());
    for (k, c) in arr.iter().enumerate() {
        let field = |name: &str| {
            c.get(name)
                .and_then(|x| x.as_f64())
                .ok_or_else(|| Error::Data(format!("component {k}: missing numeric '{name}'")))
        };
        let amp = field("A")?;
        let phi = field("phi")?;
        let omega = c.get("omega").ok_or_else(|| Error::Data(format!("component {k}: missing 'omega'")))?;
        let comp = match (dim.is_2d(), omega) {
            (false, w) if w.is_number() => Sinusoid::new(amp, phi, w.as_f64().unwrap_or(f64::NAN)),
            (true, serde_json::Value::Array(pair)) if pair.len() == 2 => Sinusoid::new_2d(
                amp,
                phi,
                pair[0].as_f64().unwrap_or(f64::NAN),
                pair[1].as_f64().unwrap_or(f64::NAN),
            ),
            _ => {
                return Err(Error::Data(format!(
                    "component {k}: 'omega' must be {} for {} data",
                    if dim.is_2d() { "[omega1, omega2]" } else { "a number" },
                    dim.tag()
                )))
            }
        };
        comps.push(comp);
    }
    let set = SinusoidSet::new(dim, comps);
    set.validate().map_err(|e| Error::Data(e.to_string()))?;
    Ok(set)
}

/// One-bit sampling of `signal` plus Gaussian noise against generated thresholds.
///
/// Draw order: all thresholds first (channel order), then all noise (channel
/// order). Real noise is `N(0, σ²)`; complex noise has independent
/// `N(0, σ²/2)` real and imaginary parts.
pub fn sample_one_bit(
    signal: &Signal,
    noise_sigma: f64,
    thresholds: &ThresholdSpec,
    rng: &mut RngState,
) -> Result<SignedRecord> {
    if !(noise_sigma > 0.0) || !noise_sigma.is_finite() {
        return Err(invalid(format!("noise sigma must be positive, got {noise_sigma}")));
    }
    signal.shape.check(signal.dim)?;
    let h = thresholds.materialize(signal.dim, signal.shape, rng)?;
    let std = if signal.dim.is_complex() { noise_sigma / 2f64.sqrt() } else { noise_sigma };
    let y = signal
        .data
        .iter()
        .zip(&h)
        .map(|(&s, &hn)| {
            let e = std * rng.next_gaussian();
            sign_real(s + e - hn)
        })
        .collect();
    Ok(SignedRecord { dim: signal.dim, shape: signal.shape, y, h, truth: None })
}

/// Noise standard deviation giving the requested SNR for the strongest component.
pub fn snr_to_sigma(params: &SinusoidSet, snr_db: f64) -> Result<f64> {
    let amax = params
        .max_amplitude()
        .ok_or_else(|| invalid("SNR is undefined for an empty sinusoid set"))?;
    let snr = 10f64.powf(snr_db / 10.0);
    Ok(if params.dim.is_complex() { amax / snr.sqrt() } else { amax / (2.0 * snr).sqrt() })
}
