//! Global tests built from individual p-values.
//!
//! The Cauchy combination test (CCT) is calibrated analytically through the
//! standard Cauchy tail. MAX is calibrated through its Gumbel limit and MINP
//! by Monte Carlo. Fisher, the Pearson-type log test, Stouffer, and Edgington
//! are included as the classical dense-signal baselines.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStreams, StreamRng, Workers};
use crate::special::{cauchy_tail, gamma_p, gumbel_sf, norm_cdf, norm_isf, norm_sf, Probability};

/// Smallest p-value admitted after sanitization.
pub const P_FLOOR: f64 = 1e-300;
/// Largest p-value admitted after sanitization.
pub const P_CEIL: f64 = 1.0 - 1e-16;
/// Below this p-value the CCT term switches to the reciprocal form `1/(πp)`.
pub const SMALL_P_SEAM: f64 = 1e-15;
/// Largest size handled by the exact Irwin–Hall sum.
pub const IRWIN_HALL_EXACT_MAX: usize = 50;

/// What sanitization had to do to the raw input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizationReport {
    pub exact_zero: usize,
    pub exact_one: usize,
    pub clamped_low: usize,
    pub clamped_high: usize,
}

impl SanitizationReport {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.exact_zero > 0 {
            out.push(format!(
                "{} p-value(s) exactly 0 clamped to {P_FLOOR:e}",
                self.exact_zero
            ));
        }
        if self.exact_one > 0 {
            out.push(format!(
                "{} p-value(s) exactly 1 clamped to 1-1e-16",
                self.exact_one
            ));
        }
        let other_low = self.clamped_low - self.exact_zero;
        let other_high = self.clamped_high - self.exact_one;
        if other_low > 0 {
            out.push(format!("{other_low} p-value(s) below {P_FLOOR:e} clamped"));
        }
        if other_high > 0 {
            out.push(format!("{other_high} p-value(s) above 1-1e-16 clamped"));
        }
        out
    }
}

/// Individual p-values, each strictly inside `(0, 1)` after sanitization.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    values: Vec<f64>,
    report: SanitizationReport,
}

impl PValueVector {
    /// Validate and clamp into `[P_FLOOR, P_CEIL]`. Values outside `[0, 1]`
    /// or non-finite values are errors; boundary values are clamped and
    /// recorded in the report.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        let mut report = SanitizationReport::default();
        let mut values = values;
        for (i, p) in values.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Domain(format!("p-value {p} at index {i} outside [0, 1]")));
            }
            if *p < P_FLOOR {
                report.clamped_low += 1;
                if *p == 0.0 {
                    report.exact_zero += 1;
                }
                *p = P_FLOOR;
            } else if *p > P_CEIL {
                report.clamped_high += 1;
                if *p == 1.0 {
                    report.exact_one += 1;
                }
                *p = P_CEIL;
            }
        }
        Ok(Self { values, report })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn report(&self) -> &SanitizationReport {
        &self.report
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty);
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if *w < 0.0 {
                return Err(Error::Domain(format!("negative weight {w} at index {i}")));
            }
        }
        let total = neumaier_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn equal(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Empty);
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    /// Rescale arbitrary nonnegative weights to sum to one.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        let total = neumaier_sum(raw.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Domain("weights must have a positive finite sum".into()));
        }
        Self::new(raw.into_iter().map(|w| w / total).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Cct,
    Max,
    Minp,
    Fisher,
    Pearson,
    Stouffer,
    Edgington,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cct" => Method::Cct,
            "max" => Method::Max,
            "minp" => Method::Minp,
            "fisher" => Method::Fisher,
            "pearson" => Method::Pearson,
            "stouffer" => Method::Stouffer,
            "edgington" => Method::Edgington,
            other => return Err(Error::Invalid(format!("unknown method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Calibration {
    Analytic,
    MonteCarlo,
}

/// A global test result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: Method,
    pub statistic: f64,
    pub p_value: Probability,
    pub calibration: Calibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TestOutcome {
    pub fn analytic(method: Method, statistic: f64, p_value: f64) -> Self {
        Self {
            method,
            statistic,
            p_value: Probability::saturating(p_value),
            calibration: Calibration::Analytic,
            mc_replicates: None,
            mc_stderr: None,
            warnings: Vec::new(),
        }
    }

    pub fn monte_carlo(method: Method, statistic: f64, p_value: f64, replicates: usize) -> Self {
        let p = Probability::saturating(p_value);
        let stderr = (p.value() * (1.0 - p.value()) / replicates as f64).sqrt();
        Self {
            method,
            statistic,
            p_value: p,
            calibration: Calibration::MonteCarlo,
            mc_replicates: Some(replicates),
            mc_stderr: Some(stderr),
            warnings: Vec::new(),
        }
    }

    fn with_report(mut self, report: &SanitizationReport) -> Self {
        self.warnings.extend(report.warnings());
        self
    }

    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }
}

/// Compensated sum (Neumaier).
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated sum that does not depend on the order of its inputs.
pub fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    neumaier_sum(values.iter().copied())
}

// ---------------------------------------------------------------------------
// CCT
// ---------------------------------------------------------------------------

/// `tan((0.5 − p)π)` evaluated without losing the small-p tail.
///
/// Away from the middle the identity `tan((0.5 − p)π) = cot(πp)` is used,
/// and below [`SMALL_P_SEAM`] the reciprocal `1/(πp)`.
pub fn cauchy_transform(p: f64) -> f64 {
    if p < SMALL_P_SEAM {
        1.0 / (PI * p)
    } else if p < 0.25 {
        1.0 / (PI * p).tan()
    } else if p <= 0.75 {
        ((0.5 - p) * PI).tan()
    } else {
        -1.0 / (PI * (1.0 - p)).tan()
    }
}

pub fn cct_statistic(p: &PValueVector, w: &WeightVector) -> Result<f64> {
    if p.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: w.len(),
        });
    }
    let mut terms: Vec<f64> = p
        .values()
        .iter()
        .zip(w.values())
        .map(|(&pi, &wi)| wi * cauchy_transform(pi))
        .collect();
    Ok(order_free_sum(&mut terms))
}

/// Equal-weight CCT over a scratch buffer of raw p-values; used by the
/// simulation loops where inputs are already in `(0, 1)`.
pub(crate) fn cct_equal_weight_in_place(p: &mut [f64]) -> f64 {
    let w = 1.0 / p.len() as f64;
    for v in p.iter_mut() {
        *v = w * cauchy_transform(v.clamp(P_FLOOR, P_CEIL));
    }
    order_free_sum(p)
}

pub fn cct_pvalue(statistic: f64) -> f64 {
    cauchy_tail(statistic)
}

pub fn cct(p: &PValueVector, w: &WeightVector) -> Result<TestOutcome> {
    let stat = cct_statistic(p, w)?;
    if !stat.is_finite() {
        return Err(Error::Domain("CCT statistic is not finite".into()));
    }
    Ok(TestOutcome::analytic(Method::Cct, stat, cct_pvalue(stat)).with_report(p.report()))
}

// ---------------------------------------------------------------------------
// MAX and MINP
// ---------------------------------------------------------------------------

pub fn max_statistic(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Empty);
    }
    let mut best = 0.0f64;
    for (i, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        best = best.max(v * v);
    }
    Ok(best)
}

/// Extreme-value normalizing constants for `m` standard normals: the
/// `(ã_m, b̃_m)` pair for `max Z_i²` and the `(a_m, b_m)` pair for `max |Z_i|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelNorm {
    pub a_tilde: f64,
    pub b_tilde: f64,
    pub a: f64,
    pub b: f64,
    pub m: usize,
}

impl GumbelNorm {
    /// `(MAX − ã_m)/b̃_m`.
    pub fn normalized_square(&self, max_stat: f64) -> f64 {
        (max_stat - self.a_tilde) / self.b_tilde
    }

    /// `(√MAX − a_m)/b_m`.
    pub fn normalized_abs(&self, max_stat: f64) -> f64 {
        (max_stat.sqrt() - self.a) / self.b
    }
}

pub fn gumbel_norm(m: usize) -> Result<GumbelNorm> {
    if m < 2 {
        return Err(Error::Domain(format!("m must be at least 2, got {m}")));
    }
    let log_m = (m as f64).ln();
    // log log m + log(4π) − log 4
    let c = log_m.ln() + (4.0 * PI).ln() - 4f64.ln();
    Ok(GumbelNorm {
        a_tilde: 2.0 * log_m - c + c / (2.0 * log_m),
        b_tilde: 2.0 - 1.0 / log_m,
        a: (2.0 * log_m).sqrt() - c / (8.0 * log_m).sqrt(),
        b: 1.0 / (2.0 * log_m).sqrt(),
        m,
    })
}

/// Gumbel-limit p-value of `MAX = max Z_i²`.
pub fn max_pvalue_gumbel(max_stat: f64, m: usize) -> Result<f64> {
    let norm = gumbel_norm(m)?;
    Ok(gumbel_sf(norm.normalized_square(max_stat)))
}

/// MAX test on z-scores with the Gumbel calibration.
pub fn max_test(z: &[f64]) -> Result<TestOutcome> {
    let stat = max_statistic(z)?;
    Ok(TestOutcome::analytic(
        Method::Max,
        stat,
        max_pvalue_gumbel(stat, z.len())?,
    ))
}

pub fn minp_statistic(p: &PValueVector) -> Result<f64> {
    p.values()
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .ok_or(Error::Empty)
}

/// Monte Carlo MINP p-value with the add-one rule
/// `(1 + #{sim ≤ obs}) / (replicates + 1)`.
///
/// Replicate `r` receives stream `r` of the `(seed, "minp")` family, so the
/// result is bit-identical for any worker count.
pub fn minp_pvalue_mc<F>(
    p_obs: &PValueVector,
    null_sampler: F,
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<TestOutcome>
where
    F: Fn(&mut StreamRng) -> Result<Vec<f64>> + Sync + Send,
{
    if replicates == 0 {
        return Err(Error::InvalidParameter {
            name: "replicates",
            reason: "must be at least 1".into(),
        });
    }
    let observed = minp_statistic(p_obs)?;
    let streams = SeedStreams::new(seed, "minp");
    let hits = workers.try_map_indexed(replicates, |r| {
        let mut rng = streams.stream(r as u64);
        let sim = null_sampler(&mut rng)?;
        let min = sim.iter().copied().min_by(f64::total_cmp).ok_or(Error::Empty)?;
        Ok(min <= observed)
    })?;
    let count = hits.into_iter().filter(|&h| h).count();
    let p = (1 + count) as f64 / (replicates + 1) as f64;
    Ok(TestOutcome::monte_carlo(Method::Minp, observed, p, replicates).with_report(p_obs.report()))
}

/// Null sampler drawing `m` independent uniforms.
pub fn independent_uniform_null(m: usize) -> impl Fn(&mut StreamRng) -> Result<Vec<f64>> + Sync {
    use rand::Rng;
    move |rng: &mut StreamRng| Ok((0..m).map(|_| rng.random::<f64>()).collect())
}

// ---------------------------------------------------------------------------
// Classical combiners
// ---------------------------------------------------------------------------

/// Fisher: `−2 Σ ln p_i` against χ² with `2m` degrees of freedom.
pub fn fisher(p: &PValueVector) -> Result<TestOutcome> {
    let stat = -2.0 * neumaier_sum(p.values().iter().map(|v| v.ln()));
    let m = p.len() as f64;
    let pv = crate::special::gamma_q(m, 0.5 * stat);
    Ok(TestOutcome::analytic(Method::Fisher, stat, pv).with_report(p.report()))
}

/// Pearson-type: `−Σ ln(1 − p_i)`. Small p-values make the statistic small,
/// so the p-value is the lower tail of Gamma(m, 1).
pub fn pearson_combine(p: &PValueVector) -> Result<TestOutcome> {
    let stat = -neumaier_sum(p.values().iter().map(|v| (-v).ln_1p()));
    let pv = gamma_p(p.len() as f64, stat);
    Ok(TestOutcome::analytic(Method::Pearson, stat, pv).with_report(p.report()))
}

/// Stouffer: `Σ Φ^{-1}(1 − p_i)`, p-value `1 − Φ(S/√m)`.
pub fn stouffer(p: &PValueVector) -> Result<TestOutcome> {
    let mut scores = Vec::with_capacity(p.len());
    for &v in p.values() {
        scores.push(norm_isf(v)?);
    }
    let stat = neumaier_sum(scores);
    let pv = norm_sf(stat / (p.len() as f64).sqrt());
    Ok(TestOutcome::analytic(Method::Stouffer, stat, pv).with_report(p.report()))
}

/// Edgington: `Σ p_i`, p-value from the lower tail of the Irwin–Hall law.
pub fn edgington(p: &PValueVector) -> Result<TestOutcome> {
    let stat = neumaier_sum(p.values().iter().copied());
    let pv = irwin_hall_cdf(stat, p.len());
    Ok(TestOutcome::analytic(Method::Edgington, stat, pv).with_report(p.report()))
}

/// CDF of the sum of `n` independent uniforms. Exact alternating sum up to
/// [`IRWIN_HALL_EXACT_MAX`] terms, normal approximation beyond.
pub fn irwin_hall_cdf(x: f64, n: usize) -> f64 {
    let nf = n as f64;
    if x <= 0.0 {
        return 0.0;
    }
    if x >= nf {
        return 1.0;
    }
    if n > IRWIN_HALL_EXACT_MAX {
        return norm_cdf((x - 0.5 * nf) / (nf / 12.0).sqrt());
    }
    // Reflect so the alternating sum has as few terms as possible.
    if x > 0.5 * nf {
        return 1.0 - irwin_hall_lower(nf - x, n);
    }
    irwin_hall_lower(x, n)
}

// F_n(x) = Σ_j B_{n+1}(x − j) where B_k is the cardinal B-spline of order k
// (the Irwin–Hall density is B_n). Cox–de Boor only mixes nonnegative terms,
// which avoids the cancellation of the alternating binomial sum.
fn irwin_hall_lower(x: f64, n: usize) -> f64 {
    let top = x.floor() as usize;
    // b[s] = B_r(x − s) for s = 0..=top
    let mut b = vec![0.0f64; top + 2];
    b[top] = 1.0;
    for r in 2..=n + 1 {
        let rf = r as f64;
        for s in 0..=top {
            let y = x - s as f64;
            let next = b[s + 1];
            b[s] = if y <= 0.0 || y >= rf {
                0.0
            } else {
                (y * b[s] + (rf - y) * next) / (rf - 1.0)
            };
        }
    }
    neumaier_sum(b[..=top].iter().copied()).clamp(0.0, 1.0)
}

/// Dispatch for the p-value based methods. MINP uses an independent uniform
/// null with `replicates` Monte Carlo draws; MAX converts two-sided p-values
/// back to |z| scores.
pub fn combine(
    method: Method,
    p: &PValueVector,
    w: &WeightVector,
    mc: Option<(usize, u64)>,
    workers: Workers,
) -> Result<TestOutcome> {
    match method {
        Method::Cct => cct(p, w),
        Method::Fisher => fisher(p),
        Method::Pearson => pearson_combine(p),
        Method::Stouffer => stouffer(p),
        Method::Edgington => edgington(p),
        Method::Max => {
            let mut z = Vec::with_capacity(p.len());
            for &v in p.values() {
                z.push(norm_isf(0.5 * v)?);
            }
            if z.len() < 2 {
                return Err(Error::Domain("MAX needs at least two statistics".into()));
            }
            Ok(max_test(&z)?.with_report(p.report()))
        }
        Method::Minp => {
            let (replicates, seed) =
                mc.ok_or_else(|| Error::Invalid("MINP needs a replicate count and a seed".into()))?;
            minp_pvalue_mc(p, independent_uniform_null(p.len()), replicates, seed, workers)
        }
    }
}
