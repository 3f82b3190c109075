//! Monte Carlo pipelines: tail calibration of the CCT against the standard
//! Cauchy, empirical size, and CCT-vs-MAX power.
//!
//! Every replicate draws from its own stream of a `(seed, domain)` family and
//! all reductions are integer counts, so results are bit-identical for any
//! worker count.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::combiners::{cct_equal_weight_in_place, gumbel_norm};
use crate::copulas::{mixed_copula_fill, CopulaSpec, Family};
use crate::correlation::{
    build_correlation, mvn_chunk, CorrelationMatrix, CorrelationModel, CorrelationSpec, MeanSpec,
    SAMPLE_CHUNK,
};
use crate::diagnostics::binomial_se;
use crate::error::{invalid, Error, Result};
use crate::rng::{SeedStreams, Workers};
use crate::special::{cauchy_isf, cauchy_quantile, cauchy_tail, gumbel_quantile, two_sided_normal_p};

pub const TAIL_GRID_POINTS: usize = 40;
pub const TAIL_GRID_MAX: f64 = 1000.0;
pub const MIN_REPLICATES: usize = 10_000;

/// Source of null p-values.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// Two-sided p-values of `Z ~ N(0, R)`.
    Gaussian(CorrelationSpec),
    /// Consecutive pairs drawn from a bivariate copula, otherwise independent.
    MixedCopula { family: Family, theta: f64, m: usize },
}

impl Scenario {
    pub fn m(&self) -> usize {
        match self {
            Scenario::Gaussian(spec) => spec.m,
            Scenario::MixedCopula { m, .. } => *m,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Scenario::Gaussian(spec) => spec.describe(),
            Scenario::MixedCopula { family, theta, m } => {
                format!("MIXED_{family:?}(theta={theta}), m={m}").to_uppercase()
            }
        }
    }

    fn prepare(&self) -> Result<Prepared> {
        match self {
            Scenario::Gaussian(spec) => Ok(Prepared::Gaussian(build_correlation(spec)?)),
            Scenario::MixedCopula { family, theta, m } => {
                if !matches!(family, Family::Fgm | Family::Amh) {
                    return Err(invalid("family", "mixed models use FGM or AMH"));
                }
                if *m == 0 {
                    return Err(invalid("m", "must be at least 1"));
                }
                Ok(Prepared::Copula(CopulaSpec::new(*family, *theta)?, *m))
            }
        }
    }
}

enum Prepared {
    Gaussian(CorrelationMatrix),
    Copula(CopulaSpec, usize),
}

/// Equal-weight CCT statistics of `replicates` null draws, in replicate order.
pub fn null_cct_statistics(
    scenario: &Scenario,
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<Vec<f64>> {
    let prepared = scenario.prepare()?;
    let streams = SeedStreams::new(seed, "null-cct");
    let chunks = replicates.div_ceil(SAMPLE_CHUNK);
    let blocks = workers.try_map_indexed(chunks, |c| {
        let first = c * SAMPLE_CHUNK;
        let rows = SAMPLE_CHUNK.min(replicates - first);
        let mut out = Vec::with_capacity(rows);
        match &prepared {
            Prepared::Gaussian(r) => {
                let z = mvn_chunk(r, &streams, first, rows);
                let mut buf = vec![0.0; r.m()];
                for col in z.column_iter() {
                    for (b, &v) in buf.iter_mut().zip(col.iter()) {
                        *b = two_sided_normal_p(v);
                    }
                    out.push(cct_equal_weight_in_place(&mut buf));
                }
            }
            Prepared::Copula(spec, m) => {
                let mut buf = vec![0.0; *m];
                for i in 0..rows {
                    let mut rng = streams.stream((first + i) as u64);
                    mixed_copula_fill(spec, &mut buf, &mut rng)?;
                    out.push(cct_equal_weight_in_place(&mut buf));
                }
            }
        }
        Ok(out)
    })?;
    Ok(blocks.into_iter().flatten().collect())
}

/// 40 log-spaced thresholds from the Cauchy 95% quantile to 1000.
pub fn default_tail_grid() -> Vec<f64> {
    let lo = cauchy_quantile(0.95).expect("valid level");
    let mut g = crate::copulas::log_grid(lo.log10(), TAIL_GRID_MAX.log10(), TAIL_GRID_POINTS);
    g[0] = lo;
    g[TAIL_GRID_POINTS - 1] = TAIL_GRID_MAX;
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCalibration {
    pub t_grid: Vec<f64>,
    pub exceedances: Vec<u64>,
    pub empirical_tail: Vec<f64>,
    pub cauchy_tail_ref: Vec<f64>,
    /// `√(q(1−q)/N)` with `q` the Cauchy reference.
    pub mc_stderr: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub scenario: String,
}

impl TailCalibration {
    /// Empirical/reference ratio at the largest `t` with at least
    /// `min_count` exceedances.
    pub fn tail_ratio(&self, min_count: u64) -> Option<(f64, f64)> {
        (0..self.t_grid.len())
            .rev()
            .find(|&i| self.exceedances[i] >= min_count)
            .map(|i| (self.t_grid[i], self.empirical_tail[i] / self.cauchy_tail_ref[i]))
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &g) in self.t_grid.iter().enumerate() {
            if (g - t).abs() < (self.t_grid[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let rows = (0..self.t_grid.len()).map(|i| {
            (
                self.t_grid[i],
                self.empirical_tail[i],
                self.cauchy_tail_ref[i],
                self.mc_stderr[i],
            )
        });
        csv_body(rows)
    }
}

fn csv_body(rows: impl Iterator<Item = (f64, f64, f64, f64)>) -> String {
    let mut s = String::from("t_or_m,empirical,reference,stderr\n");
    for (a, b, c, d) in rows {
        s.push_str(&format!("{a},{b},{c},{d}\n"));
    }
    s
}

/// `P(CCT > t)` for each `t` in `t_grid` (any order), counted in one pass by
/// placing each statistic in the sorted grid.
pub fn tail_calibration_at(
    scenario: &Scenario,
    t_grid: &[f64],
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<TailCalibration> {
    if replicates < MIN_REPLICATES {
        return Err(invalid(
            "replicates",
            format!("{replicates} is below {MIN_REPLICATES}"),
        ));
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(invalid("t_grid", "must be nonempty and finite"));
    }
    let stats = null_cct_statistics(scenario, replicates, seed, workers)?;
    let mut order: Vec<usize> = (0..t_grid.len()).collect();
    order.sort_by(|&a, &b| t_grid[a].total_cmp(&t_grid[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| t_grid[i]).collect();

    // hist[k] = #{T : exactly k grid points lie strictly below T}.
    let mut hist = vec![0u64; sorted.len() + 1];
    for &t in &stats {
        hist[sorted.partition_point(|&g| g < t)] += 1;
    }
    let mut above = vec![0u64; sorted.len()];
    let mut running = 0;
    for k in (0..sorted.len()).rev() {
        running += hist[k + 1];
        above[k] = running;
    }
    let mut exceedances = vec![0u64; t_grid.len()];
    for (k, &i) in order.iter().enumerate() {
        exceedances[i] = above[k];
    }

    let n = replicates as f64;
    let cauchy_tail_ref: Vec<f64> = t_grid.iter().map(|&t| cauchy_tail(t)).collect();
    Ok(TailCalibration {
        t_grid: t_grid.to_vec(),
        empirical_tail: exceedances.iter().map(|&c| c as f64 / n).collect(),
        mc_stderr: cauchy_tail_ref
            .iter()
            .map(|&q| binomial_se(q, replicates))
            .collect(),
        cauchy_tail_ref,
        exceedances,
        replicates,
        seed,
        scenario: scenario.describe(),
    })
}

pub fn tail_calibration(
    scenario: &Scenario,
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<TailCalibration> {
    tail_calibration_at(scenario, &default_tail_grid(), replicates, seed, workers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub alpha: f64,
    pub rejections: u64,
    pub size: f64,
    /// `√(α(1−α)/N)`.
    pub stderr: f64,
    pub replicates: usize,
}

impl SizeEstimate {
    /// `(size − α)/stderr`.
    pub fn z_score(&self) -> f64 {
        (self.size - self.alpha) / self.stderr
    }
}

/// Empirical size at several levels from one set of null draws.
pub fn size_check_levels(
    scenario: &Scenario,
    alphas: &[f64],
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<Vec<SizeEstimate>> {
    if replicates < MIN_REPLICATES {
        return Err(invalid(
            "replicates",
            format!("{replicates} is below {MIN_REPLICATES}"),
        ));
    }
    for &a in alphas {
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid("alpha", format!("{a} outside (0, 1)")));
        }
    }
    let stats = null_cct_statistics(scenario, replicates, seed, workers)?;
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let rejections = stats.iter().filter(|&&t| cauchy_tail(t) <= alpha).count() as u64;
            SizeEstimate {
                alpha,
                rejections,
                size: rejections as f64 / replicates as f64,
                stderr: binomial_se(alpha, replicates),
                replicates,
            }
        })
        .collect())
}

pub fn size_check(
    scenario: &Scenario,
    alpha: f64,
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<SizeEstimate> {
    Ok(size_check_levels(scenario, &[alpha], replicates, seed, workers)?.remove(0))
}

pub fn sizes_to_csv(sizes: &[SizeEstimate]) -> String {
    csv_body(sizes.iter().map(|s| (s.alpha, s.size, s.alpha, s.stderr)))
}

// ---------------------------------------------------------------------------
// Power
// ---------------------------------------------------------------------------

/// Correlation families admitted in power studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PowerModel {
    Ar1 { rho: f64 },
    PolyDecay { a: f64 },
}

impl PowerModel {
    pub fn spec(self, m: usize) -> Result<CorrelationSpec> {
        match self {
            PowerModel::Ar1 { rho } => CorrelationSpec::ar1(rho, m),
            PowerModel::PolyDecay { a } => CorrelationSpec::poly_decay(a, m),
        }
    }

    pub fn describe(self) -> String {
        match self {
            PowerModel::Ar1 { rho } => format!("AR1(rho={rho})"),
            PowerModel::PolyDecay { a } => format!("POLY_DECAY(a={a})"),
        }
    }
}

impl TryFrom<&CorrelationModel> for PowerModel {
    type Error = Error;

    fn try_from(model: &CorrelationModel) -> Result<Self> {
        match model {
            CorrelationModel::Ar1 { rho } => Ok(PowerModel::Ar1 { rho: *rho }),
            CorrelationModel::PolyDecay { a } => Ok(PowerModel::PolyDecay { a: *a }),
            _ => Err(invalid("model", "power studies use AR1 or POLY_DECAY")),
        }
    }
}

/// How the signal magnitude is chosen at each `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Magnitude {
    Fixed(f64),
    /// `√(2 · 0.6 · log m)` at each `m`.
    Default,
    /// Bisect on a pilot run until CCT power lands near the midpoint of
    /// `(lo, hi)`.
    Tuned {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub support_fraction: f64,
    pub placement: crate::correlation::Placement,
    pub magnitude: Magnitude,
    /// Also report MAX calibrated by this many null simulations.
    pub mc_max_replicates: Option<usize>,
    pub pilot_replicates: usize,
}

impl PowerOptions {
    pub fn new(support_fraction: f64, magnitude: Magnitude) -> Self {
        Self {
            support_fraction,
            placement: crate::correlation::Placement::Prefix,
            magnitude,
            mc_max_replicates: None,
            pilot_replicates: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub m_grid: Vec<usize>,
    pub magnitude: Vec<f64>,
    pub power_cct: Vec<f64>,
    pub power_max: Vec<f64>,
    pub power_max_mc: Option<Vec<f64>>,
    /// Standard error of the paired difference `power_cct − power_max`.
    pub stderr: Vec<f64>,
    pub stderr_cct: Vec<f64>,
    pub stderr_max: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub scenario: String,
}

impl PowerResult {
    pub fn to_csv(&self) -> String {
        csv_body((0..self.m_grid.len()).map(|i| {
            (
                self.m_grid[i] as f64,
                self.power_cct[i],
                self.power_max[i],
                self.stderr[i],
            )
        }))
    }
}

/// Paired rejection counts for one `(model, m, magnitude)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct PairedCounts {
    cct: u64,
    max: u64,
    cct_only: u64,
    max_only: u64,
}

struct Thresholds {
    cct: f64,
    max_norm: crate::combiners::GumbelNorm,
    gumbel: f64,
}

/// Per replicate: (CCT statistic, max z²).
fn alt_statistics(
    r: &CorrelationMatrix,
    mean: &[f64],
    replicates: usize,
    streams: &SeedStreams,
    workers: Workers,
) -> Vec<(f64, f64)> {
    let chunks = replicates.div_ceil(SAMPLE_CHUNK);
    workers
        .map_indexed(chunks, |c| {
            let first = c * SAMPLE_CHUNK;
            let rows = SAMPLE_CHUNK.min(replicates - first);
            let z: DMatrix<f64> = mvn_chunk(r, streams, first, rows);
            let mut buf = vec![0.0; r.m()];
            z.column_iter()
                .map(|col| {
                    let mut max_sq = 0.0f64;
                    for ((b, &v), &mu) in buf.iter_mut().zip(col.iter()).zip(mean) {
                        let x = v + mu;
                        max_sq = max_sq.max(x * x);
                        *b = two_sided_normal_p(x);
                    }
                    (cct_equal_weight_in_place(&mut buf), max_sq)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
}

fn count(stats: &[(f64, f64)], th: &Thresholds) -> PairedCounts {
    let mut c = PairedCounts::default();
    for &(t, max_sq) in stats {
        let a = t > th.cct;
        let b = th.max_norm.normalized_abs(max_sq) > th.gumbel;
        c.cct += a as u64;
        c.max += b as u64;
        c.cct_only += (a && !b) as u64;
        c.max_only += (b && !a) as u64;
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn tune_magnitude(
    r: &CorrelationMatrix,
    mean: &MeanSpec,
    lo: f64,
    hi: f64,
    th: &Thresholds,
    pilot: usize,
    streams: &SeedStreams,
    workers: Workers,
) -> f64 {
    let target = 0.5 * (lo + hi);
    let m = r.m();
    let power_at = |mag: f64| {
        let mu = MeanSpec {
            magnitude: mag,
            ..*mean
        }
        .vector(m);
        let stats = alt_statistics(r, &mu, pilot, streams, workers);
        count(&stats, th).cct as f64 / pilot as f64
    };
    // Bracket, then bisect; the pilot stream is shared across evaluations.
    let mut low = 0.0;
    let mut high = MeanSpec::default_magnitude(m).max(1.0);
    while power_at(high) < target && high < 64.0 {
        low = high;
        high *= 2.0;
    }
    for _ in 0..20 {
        let mid = 0.5 * (low + high);
        let p = power_at(mid);
        if p > lo && p < hi && (p - target).abs() < 0.05 {
            return mid;
        }
        if p < target {
            low = mid;
        } else {
            high = mid;
        }
    }
    0.5 * (low + high)
}

/// CCT vs MAX power at each `m`, from shared draws `Z = μ + L g`.
///
/// CCT rejects when its statistic exceeds the Cauchy `1 − α` quantile; MAX
/// rejects when `(√MAX − a_m)/b_m` exceeds the Gumbel `1 − α` quantile.
pub fn power_study(
    model: PowerModel,
    opts: &PowerOptions,
    m_grid: &[usize],
    alpha: f64,
    replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<PowerResult> {
    if m_grid.is_empty() || m_grid.iter().any(|&m| m < 2) {
        return Err(invalid("m_grid", "must be nonempty with every m ≥ 2"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} outside (0, 1)")));
    }
    if replicates == 0 || opts.pilot_replicates == 0 {
        return Err(invalid("replicates", "must be positive"));
    }
    if let Magnitude::Tuned { lo, hi } = opts.magnitude {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(invalid("magnitude", "tuning band must satisfy 0 ≤ lo < hi ≤ 1"));
        }
    }
    let base = SeedStreams::new(seed, "power");
    let n = replicates as f64;
    let mut out = PowerResult {
        m_grid: m_grid.to_vec(),
        magnitude: Vec::new(),
        power_cct: Vec::new(),
        power_max: Vec::new(),
        power_max_mc: opts.mc_max_replicates.map(|_| Vec::new()),
        stderr: Vec::new(),
        stderr_cct: Vec::new(),
        stderr_max: Vec::new(),
        alpha,
        replicates,
        seed,
        scenario: format!(
            "{}, support={}, placement={:?}, magnitude={:?}",
            model.describe(),
            opts.support_fraction,
            opts.placement,
            opts.magnitude
        ),
    };
    for &m in m_grid {
        let r = build_correlation(&model.spec(m)?)?;
        let th = Thresholds {
            cct: cauchy_isf(alpha)?,
            max_norm: gumbel_norm(m)?,
            gumbel: gumbel_quantile(1.0 - alpha)?,
        };
        let cell = base.child("m", m as u64);
        let placeholder = MeanSpec::new(opts.support_fraction, 0.0, opts.placement)?;
        let magnitude = match opts.magnitude {
            Magnitude::Fixed(v) => v,
            Magnitude::Default => MeanSpec::default_magnitude(m),
            Magnitude::Tuned { lo, hi } => tune_magnitude(
                &r,
                &placeholder,
                lo,
                hi,
                &th,
                opts.pilot_replicates,
                &cell.child("pilot", 0),
                workers,
            ),
        };
        let mean = MeanSpec::new(opts.support_fraction, magnitude, opts.placement)?;
        let stats = alt_statistics(&r, &mean.vector(m), replicates, &cell.child("main", 0), workers);
        let c = count(&stats, &th);
        let (pc, pm) = (c.cct as f64 / n, c.max as f64 / n);
        let (p10, p01) = (c.cct_only as f64 / n, c.max_only as f64 / n);
        let var_diff = (p10 + p01 - (p10 - p01).powi(2)).max(0.0);
        out.magnitude.push(magnitude);
        out.power_cct.push(pc);
        out.power_max.push(pm);
        out.stderr.push((var_diff / n).sqrt());
        out.stderr_cct.push(binomial_se(pc, replicates));
        out.stderr_max.push(binomial_se(pm, replicates));

        if let (Some(null_reps), Some(mc)) = (opts.mc_max_replicates, out.power_max_mc.as_mut()) {
            let zero = vec![0.0; m];
            let mut null: Vec<f64> =
                alt_statistics(&r, &zero, null_reps, &cell.child("max-null", 0), workers)
                    .into_iter()
                    .map(|(_, s)| s)
                    .collect();
            null.sort_by(f64::total_cmp);
            // Reject when MAX exceeds the empirical (1 − α) quantile.
            let k = (((1.0 - alpha) * null_reps as f64).ceil() as usize).clamp(1, null_reps) - 1;
            let crit = null[k];
            let hits = stats.iter().filter(|&&(_, s)| s > crit).count();
            mc.push(hits as f64 / n);
        }
    }
    Ok(out)
}

/// Serializable wrapper carrying the seed and a description next to a result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub scenario: String,
    pub result: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(kind: &str, seed: u64, scenario: String, result: T) -> Self {
        Self {
            kind: kind.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            scenario,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_endpoints() {
        let g = default_tail_grid();
        assert_eq!(g.len(), 40);
        assert!((g[0] - 6.313_751_514_675_04).abs() < 1e-9);
        assert!((g[39] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn exceedance_counting_matches_rescan() {
        let sc = Scenario::Gaussian(CorrelationSpec::ar1(0.3, 5).unwrap());
        let grid = [50.0, 2.0, 10.0, 10.0, -1.0];
        let tc = tail_calibration_at(&sc, &grid, 10_000, 3, Workers::single()).unwrap();
        let stats = null_cct_statistics(&sc, 10_000, 3, Workers::single()).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let direct = stats.iter().filter(|&&s| s > t).count() as u64;
            assert_eq!(tc.exceedances[i], direct);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let sc = Scenario::Gaussian(CorrelationSpec::ar1(0.3, 5).unwrap());
        assert!(tail_calibration(&sc, 100, 1, Workers::single()).is_err());
        assert!(size_check(&sc, 1.5, 10_000, 1, Workers::single()).is_err());
        let bad = Scenario::MixedCopula {
            family: Family::Normal,
            theta: 0.5,
            m: 4,
        };
        assert!(null_cct_statistics(&bad, 10, 1, Workers::single()).is_err());
        let opts = PowerOptions::new(0.1, Magnitude::Fixed(1.0));
        assert!(power_study(
            PowerModel::Ar1 { rho: 0.5 },
            &opts,
            &[1],
            0.05,
            10,
            1,
            Workers::single()
        )
        .is_err());
        assert!(PowerModel::try_from(&CorrelationModel::EqualCorr { rho: 0.1 }).is_err());
    }

    #[test]
    fn csv_schema() {
        let sc = Scenario::MixedCopula {
            family: Family::Fgm,
            theta: 0.5,
            m: 3,
        };
        let tc = tail_calibration(&sc, 10_000, 1, Workers::single()).unwrap();
        let csv = tc.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t_or_m,empirical,reference,stderr");
        assert_eq!(lines.len(), 41);
        let env = Envelope::new("tail", 1, tc.scenario.clone(), &tc);
        let json: serde_json::Value = serde_json::from_str(&env.to_json().unwrap()).unwrap();
        assert_eq!(json["seed"], 1);
        assert_eq!(json["result"]["t_grid"].as_array().unwrap().len(), 40);
    }
}
