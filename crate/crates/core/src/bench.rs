//! Monte Carlo harness: preset scenarios, estimate/truth matching, detection,
//! aggregated metrics and the CSV/JSON artifacts consumed by the plotting
//! scripts.
//!
//! Trial `t` draws its threshold and noise from `RngState(mix64(seed ^ mix64(t)))`.
//! The same trial seeds are reused at every sweep point, and all estimators
//! in a trial see the same record.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, Error, Result};
use crate::likelihood::pairwise_sum;
use crate::mmcore::MmConfig;
use crate::relax::{estimate, Method, OrderPolicy, RelaxConfig};
use crate::sigmodel::{
    mix64, sample_one_bit, snr_to_sigma, synth, Dim, RngState, Shape, SignedRecord, Sinusoid, SinusoidSet,
    ThresholdSpec,
};

/// Example 1: six real sinusoids, the first two `2π/N` apart.
pub fn example1_signal(n: usize) -> SinusoidSet {
    let f = [0.11, 0.11 + 1.0 / n as f64, 0.2, 0.3, 0.37, 0.45];
    let amp = [1.0, 1.0, 0.7, 0.8, 0.6, 0.5];
    let phase = [7.0 * PI / 6.0, PI / 6.0, PI / 2.0, PI / 4.0, 11.0 * PI / 6.0, PI];
    let comps = (0..6).map(|k| Sinusoid::new(amp[k], phase[k], f[k] * TAU)).collect();
    SinusoidSet::new(Dim::Real1, comps)
}

/// Example 2: two unit sinusoids `π/N` apart.
pub fn example2_signal(n: usize) -> SinusoidSet {
    let f1 = 0.108;
    let f2 = 0.108 + 1.0 / (2.0 * n as f64);
    SinusoidSet::new(
        Dim::Real1,
        vec![Sinusoid::new(1.0, PI / 3.0, f1 * TAU), Sinusoid::new(1.0, PI / 3.0, f2 * TAU)],
    )
}

/// Signal used by a scenario; the preset examples depend on `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignalSpec {
    Example1,
    Example2,
    /// No sinusoids; `sigma` sets the noise level directly.
    Noise { dim: Dim, sigma: f64 },
    Custom { components: serde_json::Value, dim: Dim },
}

impl SignalSpec {
    pub fn dim(&self) -> Dim {
        match self {
            SignalSpec::Example1 | SignalSpec::Example2 => Dim::Real1,
            SignalSpec::Noise { dim, .. } | SignalSpec::Custom { dim, .. } => *dim,
        }
    }

    pub fn at(&self, n: usize) -> Result<SinusoidSet> {
        match self {
            SignalSpec::Example1 => Ok(example1_signal(n)),
            SignalSpec::Example2 => Ok(example2_signal(n)),
            SignalSpec::Noise { dim, .. } => Ok(SinusoidSet::empty(*dim)),
            SignalSpec::Custom { components, dim } => crate::sigmodel::components_from_json(*dim, components),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    N,
    Snr,
}

impl SweepVar {
    pub fn tag(self) -> &'static str {
        match self {
            SweepVar::N => "n",
            SweepVar::Snr => "snr",
        }
    }
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McScenario {
    pub name: String,
    pub signal: SignalSpec,
    /// Sample count when the sweep is over SNR.
    pub n: usize,
    /// Second axis length for 2-D signals.
    #[serde(default)]
    pub n2: Option<usize>,
    /// SNR in dB when the sweep is over `N`.
    pub snr_db: f64,
    pub sweep_var: SweepVar,
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub threshold: ThresholdSpec,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    pub order: OrderPolicy,
    #[serde(default)]
    pub relax: RelaxConfig,
    #[serde(default)]
    pub mm: MmConfig,
}

impl McScenario {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.sweep.is_empty() {
            return Err(invalid("sweep must not be empty"));
        }
        if self.sweep_var == SweepVar::N && self.sweep.iter().any(|&v| !(v >= 1.0) || v.fract() != 0.0) {
            return Err(invalid("N sweep values must be positive integers"));
        }
        if self.sweep.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep values must be finite"));
        }
        if let SignalSpec::Noise { sigma, .. } = self.signal {
            if !(sigma > 0.0) {
                return Err(invalid("noise sigma must be positive"));
            }
        }
        if self.signal.dim().is_2d() != self.n2.is_some() {
            return Err(invalid("n2 must be given exactly for 2-D signals"));
        }
        self.threshold.validate()?;
        self.relax.validate()?;
        self.mm.validate()
    }

    fn point(&self, value: f64) -> (usize, f64) {
        match self.sweep_var {
            SweepVar::N => (value as usize, self.snr_db),
            SweepVar::Snr => (self.n, value),
        }
    }

    fn shape(&self, n: usize) -> Shape {
        match self.n2 {
            Some(n2) => Shape::two(n, n2),
            None => Shape::one(n),
        }
    }
}

/// Seed of trial `t`.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    mix64(base ^ mix64(t as u64))
}

/// Frequency distance: plain on `[0, π)`, wrapped on the complex circle,
/// and the larger axis distance for 2-D.
pub fn freq_distance(dim: Dim, a: &Sinusoid, b: &Sinusoid) -> f64 {
    let wrap = |d: f64| {
        let d = d.abs() % TAU;
        d.min(TAU - d)
    };
    match dim {
        Dim::Real1 => (a.omega - b.omega).abs(),
        Dim::Complex1 => wrap(a.omega - b.omega),
        Dim::Complex2 => wrap(a.omega - b.omega).max(wrap(a.omega2 - b.omega2)),
    }
}

/// Optimal one-to-one pairing of truth and estimate components.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(truth index, estimate index)` sorted by truth index.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
    pub unmatched_truth: Vec<usize>,
    pub unmatched_estimate: Vec<usize>,
}

/// Minimum-cost assignment on a rectangular cost matrix (Hungarian method
/// with potentials). Returns the column assigned to each row when rows ≤
/// columns; callers transpose otherwise.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Pair truth and estimate components to minimize the total frequency
/// distance. With unequal sizes the `min(K, K̂)` best pairs are kept and the
/// surplus is listed.
pub fn match_components(truth: &SinusoidSet, estimate: &SinusoidSet) -> Result<Assignment> {
    if truth.dim != estimate.dim {
        return Err(Error::DimensionMismatch("truth and estimate dimensions differ".into()));
    }
    if truth.is_empty() || estimate.is_empty() {
        return Err(invalid("matching needs non-empty sets"));
    }
    let dim = truth.dim;
    let (kt, ke) = (truth.len(), estimate.len());
    let d = |i: usize, j: usize| freq_distance(dim, &truth.components[i], &estimate.components[j]);
    let mut pairs: Vec<(usize, usize)> = if kt <= ke {
        let cost: Vec<Vec<f64>> = (0..kt).map(|i| (0..ke).map(|j| d(i, j)).collect()).collect();
        hungarian(&cost).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..ke).map(|j| (0..kt).map(|i| d(i, j)).collect()).collect();
        hungarian(&cost).into_iter().enumerate().map(|(j, i)| (i, j)).collect()
    };
    pairs.sort_unstable();
    let cost = pairs.iter().map(|&(i, j)| d(i, j)).sum();
    let unmatched_truth = (0..kt).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
    let unmatched_estimate = (0..ke).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
    Ok(Assignment { pairs, cost, unmatched_truth, unmatched_estimate })
}

/// Correct detection: every true component is matched and the largest
/// matched frequency error is strictly below `threshold`.
pub fn detect(truth: &SinusoidSet, estimate: &SinusoidSet, assignment: &Assignment, threshold: f64) -> bool {
    if !assignment.unmatched_truth.is_empty() {
        return false;
    }
    assignment
        .pairs
        .iter()
        .all(|&(i, j)| freq_distance(truth.dim, &truth.components[i], &estimate.components[j]) < threshold)
}

/// Detection threshold `2π/N`; for 2-D the shorter axis sets `N`.
pub fn detection_threshold(shape: Shape) -> f64 {
    let n = if shape.n2 > 1 { shape.n1.min(shape.n2) } else { shape.n1 };
    TAU / n as f64
}

/// Outcome of one estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub sweep_value: f64,
    pub estimator: Method,
    pub trial: usize,
    pub order: usize,
    /// Estimated frequencies (axis 1) and amplitudes in estimator order.
    pub est_omega: Vec<f64>,
    pub est_amplitude: Vec<f64>,
    /// Matched frequency error per true component (`None` if unmatched).
    pub freq_errors: Vec<Option<f64>>,
    pub amp_errors: Vec<Option<f64>>,
    pub detected: bool,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

/// Aggregate for one sweep point and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub estimator: String,
    pub trials: usize,
    pub detected: usize,
    /// Mean over detected trials of the mean squared frequency error; NaN if none.
    pub freq_mse: f64,
    pub amp_mse: f64,
    pub pd: f64,
    pub order_success: f64,
    pub mean_runtime_ms: f64,
}

impl McRow {
    pub fn excluded(&self) -> usize {
        self.trials - self.detected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub scenario: String,
    pub rows: Vec<McRow>,
    pub trials: Vec<TrialRecord>,
}

impl McResult {
    pub fn row(&self, sweep_value: f64, method: Method) -> Option<&McRow> {
        self.rows.iter().find(|r| r.sweep_value == sweep_value && r.estimator == method.name())
    }

    pub fn trials_for(&self, sweep_value: f64, method: Method) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(move |t| t.sweep_value == sweep_value && t.estimator == method)
    }
}

/// Generate the record for trial `t` at sweep point `value`.
pub fn trial_record(sc: &McScenario, value: f64, t: usize) -> Result<(SinusoidSet, SignedRecord)> {
    let (n, snr) = sc.point(value);
    let truth = sc.signal.at(n)?;
    let sigma = match sc.signal {
        SignalSpec::Noise { sigma, .. } => sigma,
        _ => snr_to_sigma(&truth, snr)?,
    };
    let sig = synth(&truth, sc.shape(n))?;
    let mut rng = RngState::new(trial_seed(sc.seed, t));
    let rec = sample_one_bit(&sig, sigma, &sc.threshold, &mut rng)?;
    Ok((truth, rec))
}

fn score_trial(
    truth: &SinusoidSet,
    rec: &SignedRecord,
    method: Method,
    sc: &McScenario,
    value: f64,
    t: usize,
) -> TrialRecord {
    let started = Instant::now();
    let out = estimate(rec, method, sc.order, &sc.relax, &sc.mm);
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut tr = TrialRecord {
        sweep_value: value,
        estimator: method,
        trial: t,
        order: 0,
        est_omega: vec![],
        est_amplitude: vec![],
        freq_errors: vec![None; truth.len()],
        amp_errors: vec![None; truth.len()],
        detected: false,
        runtime_ms,
        error: None,
    };
    let report = match out {
        Ok(r) => r,
        Err(e) => {
            tr.error = Some(e.to_string());
            return tr;
        }
    };
    let est = report.components();
    tr.order = report.order;
    tr.est_omega = est.components.iter().map(|c| c.omega).collect();
    tr.est_amplitude = est.components.iter().map(|c| c.amplitude).collect();
    if truth.is_empty() || est.is_empty() {
        tr.detected = truth.is_empty();
        return tr;
    }
    let asg = match match_components(truth, &est) {
        Ok(a) => a,
        Err(e) => {
            tr.error = Some(e.to_string());
            return tr;
        }
    };
    for &(i, j) in &asg.pairs {
        tr.freq_errors[i] = Some(freq_distance(truth.dim, &truth.components[i], &est.components[j]));
        tr.amp_errors[i] = Some(est.components[j].amplitude - truth.components[i].amplitude);
    }
    tr.detected = detect(truth, &est, &asg, detection_threshold(rec.shape));
    tr
}

fn aggregate(sc: &McScenario, value: f64, method: Method, records: &[&TrialRecord], true_order: usize) -> McRow {
    let mut records = records.to_vec();
    records.sort_by_key(|r| r.trial);
    let det: Vec<&&TrialRecord> = records.iter().filter(|r| r.detected && r.error.is_none()).collect();
    let mse = |f: &dyn Fn(&TrialRecord) -> &Vec<Option<f64>>| {
        if det.is_empty() {
            return f64::NAN;
        }
        let per_trial: Vec<f64> = det
            .iter()
            .map(|r| {
                let sq: Vec<f64> = f(r).iter().map(|e| e.map_or(0.0, |e| e * e)).collect();
                if sq.is_empty() {
                    0.0
                } else {
                    pairwise_sum(&sq) / sq.len() as f64
                }
            })
            .collect();
        pairwise_sum(&per_trial) / det.len() as f64
    };
    let trials = records.len();
    let order_ok: Vec<f64> = records.iter().map(|r| f64::from(r.error.is_none() && r.order == true_order)).collect();
    let runtimes: Vec<f64> = records.iter().map(|r| r.runtime_ms).collect();
    McRow {
        sweep_var: sc.sweep_var.tag().into(),
        sweep_value: value,
        estimator: method.name().into(),
        trials,
        detected: det.len(),
        freq_mse: mse(&|r| &r.freq_errors),
        amp_mse: mse(&|r| &r.amp_errors),
        pd: det.len() as f64 / trials as f64,
        order_success: pairwise_sum(&order_ok) / trials as f64,
        mean_runtime_ms: pairwise_sum(&runtimes) / trials as f64,
    }
}

/// Run every trial of `sc`; `progress` is called after each trial.
pub fn run_scenario_with(sc: &McScenario, mut progress: impl FnMut(f64, usize)) -> Result<McResult> {
    sc.validate()?;
    let mut trials = Vec::new();
    let mut rows = Vec::new();
    for &value in &sc.sweep {
        let mut point: Vec<TrialRecord> = Vec::new();
        let mut true_order = 0;
        for t in 0..sc.trials {
            let (truth, rec) = trial_record(sc, value, t)?;
            true_order = truth.len();
            for &m in &sc.estimators {
                point.push(score_trial(&truth, &rec, m, sc, value, t));
            }
            progress(value, t);
        }
        for &m in &sc.estimators {
            let recs: Vec<&TrialRecord> = point.iter().filter(|r| r.estimator == m).collect();
            rows.push(aggregate(sc, value, m, &recs, true_order));
        }
        trials.extend(point);
    }
    Ok(McResult { scenario: sc.name.clone(), rows, trials })
}

pub fn run_scenario(sc: &McScenario) -> Result<McResult> {
    run_scenario_with(sc, |_, _| {})
}

/// Preset scenarios with desk-scale trial counts.
pub fn scenario_presets() -> Vec<McScenario> {
    let all = vec![Method::Clean, Method::MmRelax, Method::Relax];
    let base = McScenario {
        name: "example1".into(),
        signal: SignalSpec::Example1,
        n: 1024,
        n2: None,
        snr_db: 10.0,
        sweep_var: SweepVar::N,
        sweep: vec![256.0, 512.0, 1024.0],
        threshold: ThresholdSpec::default(),
        trials: 20,
        seed: 1,
        estimators: all.clone(),
        order: OrderPolicy::Fixed(6),
        relax: RelaxConfig::default(),
        mm: MmConfig::default(),
    };
    vec![
        base.clone(),
        McScenario {
            name: "example1-snr".into(),
            sweep_var: SweepVar::Snr,
            sweep: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            ..base.clone()
        },
        McScenario {
            name: "example2".into(),
            signal: SignalSpec::Example2,
            sweep_var: SweepVar::Snr,
            sweep: vec![10.0],
            trials: 30,
            order: OrderPolicy::Fixed(2),
            ..base.clone()
        },
        McScenario { name: "fixed-threshold".into(), threshold: ThresholdSpec::fixed(0.5), ..base.clone() },
        McScenario {
            name: "order-selection".into(),
            sweep: vec![256.0, 512.0, 1024.0, 2048.0],
            estimators: vec![Method::MmRelax],
            order: OrderPolicy::Bic(10),
            ..base
        },
    ]
}

pub fn preset(name: &str) -> Option<McScenario> {
    scenario_presets().into_iter().find(|s| s.name == name)
}

pub const CSV_COLUMNS: [&str; 10] = [
    "sweep_var",
    "sweep_value",
    "estimator",
    "trials",
    "detected",
    "freq_mse",
    "amp_mse",
    "pd",
    "order_success",
    "mean_runtime_ms",
];

fn sci(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

/// Write rows as CSV with the fixed column set; reals in shortest round-trip
/// scientific notation.
pub fn write_csv<W: Write>(rows: &[McRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.sweep_var.clone(),
            sci(r.sweep_value),
            r.estimator.clone(),
            r.trials.to_string(),
            r.detected.to_string(),
            sci(r.freq_mse),
            sci(r.amp_mse),
            sci(r.pd),
            sci(r.order_success),
            sci(r.mean_runtime_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a CSV written by [`write_csv`], checking the header.
pub fn read_csv(text: &str) -> Result<Vec<McRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Data(format!("unexpected CSV columns {header:?}; want {CSV_COLUMNS:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(csv_err)?);
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("CSV: {e}"))
}

/// Per-trial frequency estimates with the true frequencies, for scatter
/// plots of resolution studies.
pub fn scatter_json(sc: &McScenario, result: &McResult) -> Result<serde_json::Value> {
    let mut points = Vec::new();
    for &value in &sc.sweep {
        let (n, _) = sc.point(value);
        let truth = sc.signal.at(n)?;
        let by_est: Vec<_> = sc
            .estimators
            .iter()
            .map(|&m| {
                let trials: Vec<_> = result
                    .trials_for(value, m)
                    .map(|t| json!({"trial": t.trial, "omega": t.est_omega, "amplitude": t.est_amplitude}))
                    .collect();
                json!({"estimator": m.name(), "trials": trials})
            })
            .collect();
        points.push(json!({
            "sweep_var": sc.sweep_var.tag(),
            "sweep_value": value,
            "n": n,
            "true_omega": truth.components.iter().map(|c| c.omega).collect::<Vec<_>>(),
            "true_amplitude": truth.components.iter().map(|c| c.amplitude).collect::<Vec<_>>(),
            "estimators": by_est,
        }));
    }
    Ok(json!({"scenario": sc.name, "points": points}))
}
