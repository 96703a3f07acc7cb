//! Estimator drivers: exhaustive coarse search, 1bCLEAN, 1bRELAX,
//! 1bMMRELAX and 1bBIC order selection.
//!
//! For a fixed frequency the negative log-likelihood is convex in the scaled
//! amplitudes and `λ`, so every "exhaustive search" step fits those by damped
//! Newton at each grid frequency and keeps the best one.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, Result};
use crate::likelihood::{check_dims, nlcdf_all, nlcdf_fast, nll, ScaledComponent, ScaledParams};
use crate::mmcore::{mm_minimize, MmConfig};
use crate::sigmodel::{components_to_json, wrap_2pi, Dim, Shape, SignedRecord, SinusoidSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Converged once half the squared Newton decrement falls below this.
    pub grad_tol: f64,
    pub backtrack: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { max_iters: 50, grad_tol: 1e-9, backtrack: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub max_relax_iters: usize,
    pub relax_rel_tol: f64,
    /// Coarse grid size per axis; defaults to the axis length.
    pub grid_size: Option<usize>,
    pub newton: NewtonConfig,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self { max_relax_iters: 30, relax_rel_tol: 1e-5, grid_size: None, newton: NewtonConfig::default() }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relax_rel_tol > 0.0) || !(self.newton.grad_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if !(self.newton.backtrack > 0.0 && self.newton.backtrack < 1.0) {
            return Err(invalid("backtracking factor must lie in (0, 1)"));
        }
        if self.newton.max_iters == 0 {
            return Err(invalid("Newton needs at least one iteration"));
        }
        if self.grid_size.is_some_and(|g| g < 2) {
            return Err(invalid("coarse grid needs at least 2 points"));
        }
        Ok(())
    }

    fn grid(&self, len: usize) -> usize {
        self.grid_size.unwrap_or(len).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Clean,
    Relax,
    MmRelax,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Clean => "1bCLEAN",
            Method::Relax => "1bRELAX",
            Method::MmRelax => "1bMMRELAX",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Method::Clean => "clean",
            Method::Relax => "relax",
            Method::MmRelax => "mmrelax",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clean" | "1bclean" => Ok(Method::Clean),
            "relax" | "1brelax" => Ok(Method::Relax),
            "mmrelax" | "1bmmrelax" => Ok(Method::MmRelax),
            other => Err(invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Fixed model order, or 1bBIC selection over `0..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderPolicy {
    Fixed(usize),
    Bic(usize),
}

impl OrderPolicy {
    pub fn max_order(self) -> usize {
        match self {
            OrderPolicy::Fixed(k) | OrderPolicy::Bic(k) => k,
        }
    }
}

// ---------------------------------------------------------------------------
// Convex fit
// ---------------------------------------------------------------------------

/// Outcome of a convex fit at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexFit {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub nll: f64,
    pub iters: usize,
    /// False when Newton hit its iteration cap; the best iterate is returned.
    pub converged: bool,
}

/// Per-channel data shared by every fit in one search: signs, the fixed
/// part of the signal and, when `λ` is free, `-h`.
struct FitData {
    y: Vec<f64>,
    base: Vec<f64>,
    q: Option<Vec<f64>>,
}

impl FitData {
    fn new(record: &SignedRecord, fixed: &[ScaledComponent], lambda: f64, fit_lambda: bool) -> Self {
        let mut base = vec![0.0; record.channels()];
        for c in fixed {
            c.add_to(record.dim, record.shape, 1.0, &mut base);
        }
        let q = if fit_lambda {
            Some(record.h.iter().map(|h| -h).collect())
        } else {
            base.iter_mut().zip(&record.h).for_each(|(b, h)| *b -= lambda * h);
            None
        };
        Self { y: record.y.clone(), base, q }
    }

    fn nparams(&self) -> usize {
        if self.q.is_some() {
            3
        } else {
            2
        }
    }
}

/// Evaluator for `f`: exact, or the interpolation table used inside searches
/// (where only the ranking of candidates matters).
trait Lik {
    fn all(x: f64) -> (f64, f64, f64);
}

struct Exact;
struct Tabulated;

impl Lik for Exact {
    #[inline]
    fn all(x: f64) -> (f64, f64, f64) {
        nlcdf_all(x)
    }
}

impl Lik for Tabulated {
    #[inline]
    fn all(x: f64) -> (f64, f64, f64) {
        nlcdf_fast(x)
    }
}

/// Objective, gradient and Hessian at `θ = (a, b, λ)`.
struct Eval {
    l: f64,
    g: [f64; 3],
    h: [[f64; 3]; 3],
}

fn evaluate<L: Lik>(d: &FitData, u: &[f64], w: &[f64], th: [f64; 3]) -> Eval {
    let mut l = 0.0;
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    match &d.q {
        None => {
            for r in 0..d.y.len() {
                let y = d.y[r];
                let x = y * (d.base[r] + th[0] * u[r] + th[1] * w[r]);
                let (f, f1, f2) = L::all(x);
                l += f;
                let gy = f1 * y;
                g[0] += gy * u[r];
                g[1] += gy * w[r];
                h[0][0] += f2 * u[r] * u[r];
                h[0][1] += f2 * u[r] * w[r];
                h[1][1] += f2 * w[r] * w[r];
            }
        }
        Some(q) => {
            for r in 0..d.y.len() {
                let y = d.y[r];
                let x = y * (d.base[r] + th[0] * u[r] + th[1] * w[r] + th[2] * q[r]);
                let (f, f1, f2) = L::all(x);
                l += f;
                let gy = f1 * y;
                let dv = [u[r], w[r], q[r]];
                for i in 0..3 {
                    g[i] += gy * dv[i];
                    for j in i..3 {
                        h[i][j] += f2 * dv[i] * dv[j];
                    }
                }
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            h[i][j] = h[j][i];
        }
    }
    Eval { l, g, h }
}

/// Solve the leading `p×p` block of `h x = -g` by Cholesky, with a small
/// ridge if the block is not numerically positive definite.
fn newton_direction(h: &[[f64; 3]; 3], g: &[f64; 3], active: &[bool; 3]) -> [f64; 3] {
    let idx: Vec<usize> = (0..3).filter(|&i| active[i]).collect();
    let p = idx.len();
    let scale = idx.iter().map(|&i| h[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut l = [[0.0; 3]; 3];
        let mut ok = true;
        'chol: for i in 0..p {
            for j in 0..=i {
                let mut s = h[idx[i]][idx[j]] + if i == j { ridge } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 1e-14 * scale {
                        ok = false;
                        break 'chol;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        if ok {
            let mut z = [0.0; 3];
            for i in 0..p {
                let mut s = -g[idx[i]];
                for k in 0..i {
                    s -= l[i][k] * z[k];
                }
                z[i] = s / l[i][i];
            }
            let mut x = [0.0; 3];
            for i in (0..p).rev() {
                let mut s = z[i];
                for k in i + 1..p {
                    s -= l[k][i] * x[k];
                }
                x[i] = s / l[i][i];
            }
            let mut out = [0.0; 3];
            for (k, &i) in idx.iter().enumerate() {
                out[i] = x[k];
            }
            return out;
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
    }
    let mut out = [0.0; 3];
    for &i in &idx {
        out[i] = -g[i] / (h[i][i].abs() + scale);
    }
    out
}

/// Damped Newton from `start`, keeping `λ ≥ 0`. `first` may carry the
/// evaluation at `start` when the caller already has it.
fn newton_fit<L: Lik>(d: &FitData, u: &[f64], w: &[f64], start: [f64; 3], first: Option<Eval>, cfg: &NewtonConfig) -> ConvexFit {
    let p = d.nparams();
    let mut th = start;
    if p == 3 {
        th[2] = th[2].max(0.0);
    }
    let mut ev = first.unwrap_or_else(|| evaluate::<L>(d, u, w, th));
    let mut iters = 0;
    let mut converged = false;
    while iters < cfg.max_iters {
        iters += 1;
        let mut active = [true, true, p == 3];
        let mut dir = newton_direction(&ev.h, &ev.g, &active);
        if p == 3 && th[2] <= 0.0 && dir[2] < 0.0 {
            active[2] = false;
            dir = newton_direction(&ev.h, &ev.g, &active);
        }
        let slope: f64 = (0..3).filter(|&i| active[i]).map(|i| ev.g[i] * dir[i]).sum();
        if -slope / 2.0 <= cfg.grad_tol || !(slope < 0.0) {
            converged = true;
            break;
        }
        let mut t = 1.0f64;
        if active[2] && th[2] + dir[2] < 0.0 {
            t = th[2] / -dir[2];
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = th;
            for i in 0..3 {
                if active[i] {
                    trial[i] += t * dir[i];
                }
            }
            if p == 3 {
                trial[2] = trial[2].max(0.0);
            }
            let et = evaluate::<L>(d, u, w, trial);
            if et.l <= ev.l + 1e-4 * t * slope {
                accepted = Some((trial, et));
                break;
            }
            t *= cfg.backtrack;
        }
        match accepted {
            Some((trial, et)) => {
                th = trial;
                ev = et;
            }
            None => {
                // no representable decrease left along the Newton direction
                converged = -slope / 2.0 <= 1e-6 * (1.0 + ev.l.abs());
                break;
            }
        }
    }
    let lambda = if p == 3 { th[2] } else { start[2] };
    ConvexFit { a: th[0], b: th[1], lambda, nll: ev.l, iters, converged }
}

/// Basis vectors `u, w` with `component = a u + b w` in flat channels.
fn fill_basis(dim: Dim, shape: Shape, omega: f64, omega2: f64, u: &mut [f64], w: &mut [f64]) {
    match dim {
        Dim::Real1 => {
            for t in 0..shape.len() {
                let (s, c) = (omega * t as f64).sin_cos();
                u[t] = s;
                w[t] = c;
            }
        }
        Dim::Complex1 | Dim::Complex2 => {
            let n2 = shape.n2;
            let e2: Vec<(f64, f64)> = (0..n2).map(|t| (omega2 * t as f64).sin_cos()).collect();
            for t1 in 0..shape.n1 {
                let (s1, c1) = (omega * t1 as f64).sin_cos();
                for (t2, &(s2, c2)) in e2.iter().enumerate() {
                    let (s, c) = if dim == Dim::Complex1 { (s1, c1) } else { (s1 * c2 + c1 * s2, c1 * c2 - s1 * s2) };
                    let r = 2 * (t1 * n2 + t2);
                    u[r] = c;
                    u[r + 1] = s;
                    w[r] = -s;
                    w[r + 1] = c;
                }
            }
        }
    }
}

/// Damped-Newton fit of one component's `(ã, b̃)` (and `λ` when
/// `fit_lambda`) at frequency `omega` (`omega2` for 2-D), holding `fixed`
/// and, if not fitted, `lambda` at their values. Newton starts from zero
/// amplitude and the given `lambda`.
pub fn convex_fit(
    record: &SignedRecord,
    fixed: &[ScaledComponent],
    omega: f64,
    omega2: f64,
    lambda: f64,
    fit_lambda: bool,
    cfg: &NewtonConfig,
) -> Result<ConvexFit> {
    check_freq(record.dim, omega, omega2)?;
    let fit_lambda = fit_lambda && !lambda_unidentifiable(record);
    let d = FitData::new(record, fixed, lambda, fit_lambda);
    let nch = record.channels();
    let (mut u, mut w) = (vec![0.0; nch], vec![0.0; nch]);
    fill_basis(record.dim, record.shape, omega, omega2, &mut u, &mut w);
    Ok(newton_fit::<Exact>(&d, &u, &w, [0.0, 0.0, lambda], None, cfg))
}

/// Cholesky solve of `h x = -g` restricted to `active`, with a growing ridge
/// when the block is not numerically positive definite.
fn solve_active(h: &[Vec<f64>], g: &[f64], active: &[bool]) -> Vec<f64> {
    let idx: Vec<usize> = (0..g.len()).filter(|&i| active[i]).collect();
    let p = idx.len();
    let scale = idx.iter().map(|&i| h[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut out = vec![0.0; g.len()];
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut l = vec![vec![0.0; p]; p];
        let mut ok = true;
        'chol: for i in 0..p {
            for j in 0..=i {
                let mut s = h[idx[i]][idx[j]] + if i == j { ridge } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 1e-14 * scale {
                        ok = false;
                        break 'chol;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        if ok {
            let mut z = vec![0.0; p];
            for i in 0..p {
                z[i] = (-g[idx[i]] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
            }
            for i in (0..p).rev() {
                let s: f64 = (i + 1..p).map(|k| l[k][i] * out[idx[k]]).sum();
                out[idx[i]] = (z[i] - s) / l[i][i];
            }
            return out;
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
    }
    for &i in &idx {
        out[i] = -g[i] / (h[i][i].abs() + scale);
    }
    out
}

/// Joint damped-Newton fit of every component's `(ã, b̃)` and `λ` with all
/// frequencies held. The problem is convex, so this finds the exact optimum
/// of the amplitudes and scale for the given frequencies. Returns the input
/// unchanged if it does not lower the NLL.
pub fn refit_amplitudes(record: &SignedRecord, params: &ScaledParams, cfg: &NewtonConfig) -> Result<ScaledParams> {
    check_dims(record, params.dim)?;
    let k = params.components.len();
    let fit_lambda = !lambda_unidentifiable(record);
    let nch = record.channels();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(2 * k + 1);
    for c in &params.components {
        let (mut u, mut w) = (vec![0.0; nch], vec![0.0; nch]);
        fill_basis(record.dim, record.shape, c.omega, c.omega2, &mut u, &mut w);
        cols.push(u);
        cols.push(w);
    }
    let mut base = vec![0.0; nch];
    if fit_lambda {
        cols.push(record.h.iter().map(|h| -h).collect());
    } else {
        base.iter_mut().zip(&record.h).for_each(|(b, h)| *b = -params.lambda * h);
    }
    let p = cols.len();
    let li = if fit_lambda { Some(p - 1) } else { None };

    let eval = |th: &[f64]| {
        let mut l = 0.0;
        let mut g = vec![0.0; p];
        let mut h = vec![vec![0.0; p]; p];
        let mut v = vec![0.0; p];
        for r in 0..nch {
            let y = record.y[r];
            for j in 0..p {
                v[j] = cols[j][r];
            }
            let x = y * (base[r] + th.iter().zip(&v).map(|(t, c)| t * c).sum::<f64>());
            let (f, f1, f2) = nlcdf_all(x);
            l += f;
            for i in 0..p {
                g[i] += f1 * y * v[i];
                for j in i..p {
                    h[i][j] += f2 * v[i] * v[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                h[i][j] = h[j][i];
            }
        }
        (l, g, h)
    };

    let mut th: Vec<f64> = params.components.iter().flat_map(|c| [c.a, c.b]).collect();
    if fit_lambda {
        th.push(params.lambda.max(0.0));
    }
    let (mut l, mut g, mut h) = eval(&th);
    let l_start = nll(record, params)?;
    for _ in 0..cfg.max_iters {
        let mut active = vec![true; p];
        let mut dir = solve_active(&h, &g, &active);
        if let Some(i) = li {
            if th[i] <= 0.0 && dir[i] < 0.0 {
                active[i] = false;
                dir = solve_active(&h, &g, &active);
            }
        }
        let slope: f64 = (0..p).filter(|&i| active[i]).map(|i| g[i] * dir[i]).sum();
        if -slope / 2.0 <= cfg.grad_tol || !(slope < 0.0) {
            break;
        }
        let mut t = 1.0f64;
        if let Some(i) = li {
            if active[i] && th[i] + dir[i] < 0.0 {
                t = th[i] / -dir[i];
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = th.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if let Some(i) = li {
                trial[i] = trial[i].max(0.0);
            }
            let (lt, gt, ht) = eval(&trial);
            if lt <= l + 1e-4 * t * slope {
                (th, l, g, h) = (trial, lt, gt, ht);
                accepted = true;
                break;
            }
            t *= cfg.backtrack;
        }
        if !accepted {
            break;
        }
    }
    let comps = params
        .components
        .iter()
        .enumerate()
        .map(|(j, c)| ScaledComponent { a: th[2 * j], b: th[2 * j + 1], ..*c })
        .collect();
    let out = ScaledParams::new(record.dim, comps, li.map_or(params.lambda, |i| th[i]));
    Ok(if nll(record, &out)? < l_start { out } else { params.clone() })
}

fn check_freq(dim: Dim, omega: f64, omega2: f64) -> Result<()> {
    let lim = dim.freq_limit();
    let ok = |w: f64| w.is_finite() && (0.0..=lim).contains(&w);
    if !ok(omega) || (dim.is_2d() && !ok(omega2)) {
        return Err(invalid(format!("frequency ({omega}, {omega2}) outside the valid domain")));
    }
    Ok(())
}

fn lambda_unidentifiable(record: &SignedRecord) -> bool {
    record.h.iter().all(|&h| h == 0.0)
}

// ---------------------------------------------------------------------------
// Coarse search and local refinement
// ---------------------------------------------------------------------------

/// Best component found by a search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub component: ScaledComponent,
    pub lambda: f64,
    pub nll: f64,
    /// Fits in the search that hit the Newton cap.
    pub flagged: usize,
}

/// Grid frequencies per axis: `N` points on `[0, π)` (real) or `[0, 2π)`.
fn grid_freq(dim: Dim, size: usize, m: usize) -> f64 {
    if dim.is_complex() {
        TAU * m as f64 / size as f64
    } else {
        PI * m as f64 / size as f64
    }
}

struct GridBasis {
    /// `sin(πk/G), cos(πk/G)` for `k < 2G`.
    table: Vec<(f64, f64)>,
    size: usize,
}

impl GridBasis {
    fn new(size: usize) -> Self {
        let table = (0..2 * size).map(|k| (PI * k as f64 / size as f64).sin_cos()).collect();
        Self { table, size }
    }

    /// 1-D basis at grid index `m`; the phase `ω_m t` maps to table index
    /// `m t mod 2G` (real) or `2 m t mod 2G` (complex).
    fn fill(&self, dim: Dim, m: usize, u: &mut [f64], w: &mut [f64]) {
        let modulus = 2 * self.size;
        let stepk = if dim.is_complex() { (2 * m) % modulus } else { m % modulus };
        let mut k = 0usize;
        if dim.is_complex() {
            for t in 0..u.len() / 2 {
                let (s, c) = self.table[k];
                u[2 * t] = c;
                u[2 * t + 1] = s;
                w[2 * t] = -s;
                w[2 * t + 1] = c;
                k = (k + stepk) % modulus;
            }
        } else {
            for t in 0..u.len() {
                let (s, c) = self.table[k];
                u[t] = s;
                w[t] = c;
                k = (k + stepk) % modulus;
            }
        }
    }
}

/// Exhaustive search for one component: a convex fit at every coarse grid
/// frequency with `fixed` held, keeping the smallest NLL (lowest frequency on
/// ties). `λ` is fitted jointly when `fit_lambda`, otherwise held at `lambda`.
pub fn coarse_search(
    record: &SignedRecord,
    fixed: &[ScaledComponent],
    lambda: f64,
    fit_lambda: bool,
    cfg: &RelaxConfig,
) -> Result<SearchHit> {
    if record.is_empty() {
        return Err(invalid("cannot search an empty record"));
    }
    cfg.validate()?;
    let fit_lambda = fit_lambda && !lambda_unidentifiable(record);
    let d = FitData::new(record, fixed, lambda, fit_lambda);
    let nch = record.channels();
    let start = [0.0, 0.0, lambda];

    // every fit starts at zero amplitude, so the per-channel derivatives at
    // the start point are shared across the grid
    let mut l0 = 0.0;
    let mut f1y = vec![0.0; nch];
    let mut f2 = vec![0.0; nch];
    for r in 0..nch {
        let mut x = d.base[r];
        if let Some(q) = &d.q {
            x += lambda * q[r];
        }
        let (f, d1, d2) = nlcdf_fast(d.y[r] * x);
        l0 += f;
        f1y[r] = d1 * d.y[r];
        f2[r] = d2;
    }
    let first_eval = |u: &[f64], w: &[f64]| {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for r in 0..nch {
            let dv = [u[r], w[r], d.q.as_ref().map_or(0.0, |q| q[r])];
            for i in 0..3 {
                g[i] += f1y[r] * dv[i];
                for j in i..3 {
                    h[i][j] += f2[r] * dv[i] * dv[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..i {
                h[i][j] = h[j][i];
            }
        }
        Eval { l: l0, g, h }
    };

    let (mut u, mut w) = (vec![0.0; nch], vec![0.0; nch]);
    let mut best: Option<(ConvexFit, f64, f64)> = None;
    let mut flagged = 0;
    let mut consider = |fit: ConvexFit, w1: f64, w2: f64| {
        if !fit.converged {
            flagged += 1;
        }
        if best.as_ref().is_none_or(|(b, _, _)| fit.nll < b.nll) {
            best = Some((fit, w1, w2));
        }
    };
    match record.dim {
        Dim::Real1 | Dim::Complex1 => {
            let g = cfg.grid(record.shape.len());
            let basis = GridBasis::new(g);
            for m in 0..g {
                basis.fill(record.dim, m, &mut u, &mut w);
                let fit = newton_fit::<Tabulated>(&d, &u, &w, start, Some(first_eval(&u, &w)), &cfg.newton);
                consider(fit, grid_freq(record.dim, g, m), 0.0);
            }
        }
        Dim::Complex2 => {
            let (g1, g2) = (cfg.grid(record.shape.n1), cfg.grid(record.shape.n2));
            for m1 in 0..g1 {
                for m2 in 0..g2 {
                    let (w1, w2) = (grid_freq(Dim::Complex2, g1, m1), grid_freq(Dim::Complex2, g2, m2));
                    fill_basis(Dim::Complex2, record.shape, w1, w2, &mut u, &mut w);
                    let fit = newton_fit::<Tabulated>(&d, &u, &w, start, Some(first_eval(&u, &w)), &cfg.newton);
                    consider(fit, w1, w2);
                }
            }
        }
    }
    let (fit, w1, w2) = best.expect("grid has at least two points");
    let component = if record.dim.is_2d() {
        ScaledComponent::new_2d(fit.a, fit.b, w1, w2)
    } else {
        ScaledComponent::new(fit.a, fit.b, w1)
    };
    Ok(SearchHit { component, lambda: fit.lambda, nll: fit.nll, flagged })
}

/// Golden-section refinement of one frequency coordinate over
/// `center ± half_width`, re-solving the amplitudes at every probe from the
/// best amplitudes seen so far. Returns the best probe, which is never worse
/// than `hit`.
fn golden_axis(
    record: &SignedRecord,
    d: &FitData,
    hit: SearchHit,
    axis: usize,
    half_width: f64,
    cfg: &NewtonConfig,
) -> SearchHit {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let dim = record.dim;
    let nch = record.channels();
    let center = if axis == 0 { hit.component.omega } else { hit.component.omega2 };
    let (mut lo, mut hi) = (center - half_width, center + half_width);
    if !dim.is_complex() {
        lo = lo.max(0.0);
        hi = hi.min(PI);
    }
    let (mut u, mut w) = (vec![0.0; nch], vec![0.0; nch]);
    let mut best = hit;
    let mut probe = |freq: f64, best: &mut SearchHit| -> f64 {
        let wrapped = if dim.is_complex() { wrap_2pi(freq) } else { freq };
        let (o1, o2) = if axis == 0 { (wrapped, best.component.omega2) } else { (best.component.omega, wrapped) };
        fill_basis(dim, record.shape, o1, o2, &mut u, &mut w);
        let start = [best.component.a, best.component.b, best.lambda];
        let fit = newton_fit::<Tabulated>(d, &u, &w, start, None, cfg);
        if !fit.converged {
            best.flagged += 1;
        }
        if fit.nll < best.nll {
            best.component = ScaledComponent { a: fit.a, b: fit.b, omega: o1, omega2: o2 };
            best.lambda = fit.lambda;
            best.nll = fit.nll;
        }
        fit.nll
    };
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = probe(x1, &mut best);
    let mut f2 = probe(x2, &mut best);
    while hi - lo > 1e-10 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = probe(x1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = probe(x2, &mut best);
        }
    }
    best
}

/// Coarse search followed by golden-section refinement over `ω̃ ± π/N`
/// (per axis for 2-D). The returned NLL is the refined one.
pub fn search_and_refine(
    record: &SignedRecord,
    fixed: &[ScaledComponent],
    lambda: f64,
    fit_lambda: bool,
    cfg: &RelaxConfig,
) -> Result<SearchHit> {
    let hit = coarse_search(record, fixed, lambda, fit_lambda, cfg)?;
    Ok(refine_hit(record, fixed, lambda, fit_lambda, hit, cfg))
}

fn refine_hit(
    record: &SignedRecord,
    fixed: &[ScaledComponent],
    lambda: f64,
    fit_lambda: bool,
    hit: SearchHit,
    cfg: &RelaxConfig,
) -> SearchHit {
    let fit_lambda = fit_lambda && !lambda_unidentifiable(record);
    let d = FitData::new(record, fixed, lambda, fit_lambda);
    let shape = record.shape;
    if record.dim.is_2d() {
        let hit = golden_axis(record, &d, hit, 0, PI / shape.n1 as f64, &cfg.newton);
        golden_axis(record, &d, hit, 1, PI / shape.n2 as f64, &cfg.newton)
    } else {
        golden_axis(record, &d, hit, 0, PI / shape.len() as f64, &cfg.newton)
    }
}

/// Joint `(ã, b̃, λ)` fit of one component at its current frequency.
fn refit_with_lambda(
    record: &SignedRecord,
    fixed: &[ScaledComponent],
    hit: SearchHit,
    cfg: &NewtonConfig,
) -> SearchHit {
    if lambda_unidentifiable(record) {
        return hit;
    }
    let d = FitData::new(record, fixed, hit.lambda, true);
    let nch = record.channels();
    let (mut u, mut w) = (vec![0.0; nch], vec![0.0; nch]);
    let c = hit.component;
    fill_basis(record.dim, record.shape, c.omega, c.omega2, &mut u, &mut w);
    let fit = newton_fit::<Tabulated>(&d, &u, &w, [c.a, c.b, hit.lambda], None, cfg);
    if fit.nll < hit.nll {
        SearchHit {
            component: ScaledComponent { a: fit.a, b: fit.b, ..c },
            lambda: fit.lambda,
            nll: fit.nll,
            flagged: hit.flagged + usize::from(!fit.converged),
        }
    } else {
        hit
    }
}

// ---------------------------------------------------------------------------
// Null model
// ---------------------------------------------------------------------------

/// Order-0 fit: `λ` alone. With an all-zero threshold `λ` has no effect and
/// is reported as 1.
pub fn fit_null(record: &SignedRecord, cfg: &NewtonConfig) -> Result<(f64, f64)> {
    if record.is_empty() {
        return Err(invalid("cannot fit an empty record"));
    }
    if lambda_unidentifiable(record) {
        let l = nll(record, &ScaledParams::null(record.dim, 1.0))?;
        return Ok((1.0, l));
    }
    // one-parameter Newton on λ ≥ 0
    let mut lam = 1.0f64;
    let eval = |lam: f64| {
        let (mut l, mut g, mut h) = (0.0, 0.0, 0.0);
        for (&y, &hr) in record.y.iter().zip(&record.h) {
            let (f, f1, f2) = nlcdf_all(-y * lam * hr);
            l += f;
            g += -f1 * y * hr;
            h += f2 * hr * hr;
        }
        (l, g, h)
    };
    let (mut l, mut g, mut h) = eval(lam);
    for _ in 0..cfg.max_iters {
        let mut step = if h > 0.0 { -g / h } else { -g };
        if lam <= 0.0 && step < 0.0 {
            break;
        }
        if -g * step / 2.0 <= cfg.grad_tol {
            break;
        }
        if lam + step < 0.0 {
            step = -lam;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = (lam + t * step).max(0.0);
            let (lc, gc, hc) = eval(cand);
            if lc <= l + 1e-4 * t * g * step {
                lam = cand;
                (l, g, h) = (lc, gc, hc);
                moved = true;
                break;
            }
            t *= cfg.backtrack;
        }
        if !moved {
            break;
        }
    }
    let l = nll(record, &ScaledParams::null(record.dim, lam))?;
    Ok((lam, l))
}

// ---------------------------------------------------------------------------
// Drivers and reports
// ---------------------------------------------------------------------------

/// Result of an estimator run over orders `0..=K̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub dim: Dim,
    pub shape: Shape,
    /// Selected order.
    pub order: usize,
    /// Scaled fit at every order; `fits[k].order() == k`.
    pub fits: Vec<ScaledParams>,
    pub nll_per_order: Vec<f64>,
    pub bic_per_order: Vec<f64>,
    /// Update sweeps (1bRELAX) or MM iterations (1bMMRELAX) per order.
    pub iters: Vec<usize>,
    pub elapsed_ms: f64,
    /// Convex fits that hit the Newton iteration cap.
    pub flagged_fits: usize,
    /// True when the threshold is identically zero, so `λ` and the
    /// amplitude scale are not identifiable.
    pub lambda_degenerate: bool,
}

impl EstimateReport {
    /// Scaled parameters at the selected order.
    pub fn params(&self) -> &ScaledParams {
        &self.fits[self.order]
    }

    pub fn lambda(&self) -> f64 {
        self.params().lambda
    }

    pub fn sigma(&self) -> Option<f64> {
        self.params().sigma()
    }

    /// Physical parameters `a = ã/λ̂`, `b = b̃/λ̂` at the selected order.
    pub fn components(&self) -> SinusoidSet {
        self.params().to_unscaled()
    }

    /// Re-select the order by 1bBIC over every order in the report.
    pub fn select_bic(mut self) -> Self {
        self.order = bic_select(self.dim, self.shape, &self.nll_per_order).0;
        self
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let comps = self.components();
        json!({
            "method": self.method.tag(),
            "dim": self.dim.tag(),
            "order": self.order,
            "components": components_to_json(&comps),
            "sigma": self.sigma(),
            "lambda": self.lambda(),
            "nll_per_order": self.nll_per_order,
            "bic_per_order": self.bic_per_order,
            "iters": self.iters,
            "elapsed_ms": self.elapsed_ms,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes")
    }
}

/// 1bBIC penalty: `5K ln N` for 1-D data, `6K ln(N1 N2)` for 2-D.
pub fn bic_penalty(dim: Dim, shape: Shape, order: usize) -> f64 {
    let k = order as f64;
    if dim.is_2d() {
        6.0 * k * ((shape.n1 * shape.n2) as f64).ln()
    } else {
        5.0 * k * (shape.len() as f64).ln()
    }
}

/// Scores `2 l_K + penalty(K)` for orders `0..nll_per_order.len()` and the
/// minimizing order (lowest on ties).
pub fn bic_select(dim: Dim, shape: Shape, nll_per_order: &[f64]) -> (usize, Vec<f64>) {
    let scores: Vec<f64> = nll_per_order
        .iter()
        .enumerate()
        .map(|(k, &l)| 2.0 * l + bic_penalty(dim, shape, k))
        .collect();
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    (best, scores)
}

struct Progress {
    fits: Vec<ScaledParams>,
    nlls: Vec<f64>,
    iters: Vec<usize>,
    flagged: usize,
}

impl Progress {
    fn start(record: &SignedRecord, cfg: &RelaxConfig) -> Result<Self> {
        let (lam, l) = fit_null(record, &cfg.newton)?;
        Ok(Self { fits: vec![ScaledParams::null(record.dim, lam)], nlls: vec![l], iters: vec![0], flagged: 0 })
    }

    fn push(&mut self, record: &SignedRecord, params: ScaledParams, iters: usize) -> Result<()> {
        let l = nll(record, &params)?;
        self.fits.push(params);
        self.nlls.push(l);
        self.iters.push(iters);
        Ok(())
    }

    fn finish(self, record: &SignedRecord, method: Method, policy: OrderPolicy, started: Instant) -> EstimateReport {
        let (best, scores) = bic_select(record.dim, record.shape, &self.nlls);
        let order = match policy {
            OrderPolicy::Fixed(k) => k,
            OrderPolicy::Bic(_) => best,
        };
        EstimateReport {
            method,
            dim: record.dim,
            shape: record.shape,
            order,
            fits: self.fits,
            nll_per_order: self.nlls,
            bic_per_order: scores,
            iters: self.iters,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            flagged_fits: self.flagged,
            lambda_degenerate: lambda_unidentifiable(record),
        }
    }
}

fn others(components: &[ScaledComponent], skip: usize) -> Vec<ScaledComponent> {
    components.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, c)| *c).collect()
}

/// Add one component to `current`: exhaustive search with `λ` fitted only
/// for the first component, golden refinement, then a joint `(ã, b̃, λ)`
/// re-fit at the refined frequency.
fn add_component(record: &SignedRecord, current: &ScaledParams, cfg: &RelaxConfig, flagged: &mut usize) -> Result<ScaledParams> {
    let first = current.components.is_empty();
    let hit = search_and_refine(record, &current.components, current.lambda, first, cfg)?;
    let hit = if first { hit } else { refit_with_lambda(record, &current.components, hit, &cfg.newton) };
    *flagged += hit.flagged;
    let mut comps = current.components.clone();
    comps.push(hit.component);
    Ok(ScaledParams::new(record.dim, comps, hit.lambda))
}

/// Re-estimate component `k` by exhaustive search with the others held,
/// keeping the old value unless the NLL drops.
fn update_component(
    record: &SignedRecord,
    params: &mut ScaledParams,
    k: usize,
    fit_lambda: bool,
    cfg: &RelaxConfig,
    flagged: &mut usize,
) -> Result<()> {
    let rest = others(&params.components, k);
    let hit = search_and_refine(record, &rest, params.lambda, fit_lambda, cfg)?;
    *flagged += hit.flagged;
    let mut cand = params.clone();
    cand.components[k] = hit.component;
    cand.lambda = hit.lambda;
    if nll(record, &cand)? < nll(record, params)? {
        *params = cand;
    }
    Ok(())
}

fn check_start(record: &SignedRecord) -> Result<()> {
    record.validate()?;
    if record.is_empty() {
        return Err(invalid("empty record"));
    }
    Ok(())
}

/// 1bCLEAN: components are added one at a time and never revisited.
pub fn one_bit_clean(record: &SignedRecord, policy: OrderPolicy, cfg: &RelaxConfig) -> Result<EstimateReport> {
    check_start(record)?;
    cfg.validate()?;
    let started = Instant::now();
    let mut prog = Progress::start(record, cfg)?;
    for _ in 1..=policy.max_order() {
        let prev = prog.fits.last().expect("order 0 present").clone();
        let next = add_component(record, &prev, cfg, &mut prog.flagged)?;
        prog.push(record, next, 0)?;
    }
    Ok(prog.finish(record, Method::Clean, policy, started))
}

/// 1bRELAX: after adding component `K`, cyclically re-estimate component
/// `K`, then component 1 with `λ`, then components `2..K-1`, until the
/// relative NLL change between sweeps drops below `relax_rel_tol` or
/// `max_relax_iters` sweeps have run. With zero sweeps this is 1bCLEAN.
pub fn one_bit_relax(record: &SignedRecord, policy: OrderPolicy, cfg: &RelaxConfig) -> Result<EstimateReport> {
    check_start(record)?;
    cfg.validate()?;
    let started = Instant::now();
    let mut prog = Progress::start(record, cfg)?;
    for order in 1..=policy.max_order() {
        let prev = prog.fits.last().expect("order 0 present").clone();
        let mut params = add_component(record, &prev, cfg, &mut prog.flagged)?;
        let mut sweeps = 0;
        if order >= 2 {
            let mut l_prev = nll(record, &params)?;
            while sweeps < cfg.max_relax_iters {
                if sweeps > 0 {
                    update_component(record, &mut params, order - 1, false, cfg, &mut prog.flagged)?;
                }
                update_component(record, &mut params, 0, true, cfg, &mut prog.flagged)?;
                for k in 1..order - 1 {
                    update_component(record, &mut params, k, false, cfg, &mut prog.flagged)?;
                }
                sweeps += 1;
                let l = nll(record, &params)?;
                let rel = (l_prev - l).abs() / l_prev.abs().max(f64::MIN_POSITIVE);
                l_prev = l;
                if rel < cfg.relax_rel_tol {
                    break;
                }
            }
        }
        prog.push(record, params, sweeps)?;
    }
    Ok(prog.finish(record, Method::Relax, policy, started))
}

/// 1bMMRELAX: for each order, coarse search for the new component (others
/// and `λ` held; `λ` fitted for the first), then MM over all components.
pub fn one_bit_mm_relax(
    record: &SignedRecord,
    policy: OrderPolicy,
    cfg: &RelaxConfig,
    mm: &MmConfig,
) -> Result<EstimateReport> {
    check_start(record)?;
    cfg.validate()?;
    mm.validate()?;
    let started = Instant::now();
    let mut prog = Progress::start(record, cfg)?;
    for _ in 1..=policy.max_order() {
        let prev = prog.fits.last().expect("order 0 present").clone();
        let first = prev.components.is_empty();
        let hit = coarse_search(record, &prev.components, prev.lambda, first, cfg)?;
        prog.flagged += hit.flagged;
        let mut comps = prev.components.clone();
        comps.push(hit.component);
        let init = ScaledParams::new(record.dim, comps, hit.lambda);
        let out = mm_minimize(record, &init, mm)?;
        let fit = if mm.amplitude_refit { refit_amplitudes(record, &out.params, &cfg.newton)? } else { out.params };
        prog.push(record, fit, out.iterations)?;
    }
    Ok(prog.finish(record, Method::MmRelax, policy, started))
}

/// Run `method` under `policy`.
pub fn estimate(
    record: &SignedRecord,
    method: Method,
    policy: OrderPolicy,
    cfg: &RelaxConfig,
    mm: &MmConfig,
) -> Result<EstimateReport> {
    check_dims(record, record.dim)?;
    match method {
        Method::Clean => one_bit_clean(record, policy, cfg),
        Method::Relax => one_bit_relax(record, policy, cfg),
        Method::MmRelax => one_bit_mm_relax(record, policy, cfg, mm),
    }
}
