//! Six bivariate copulas, their rectangle probabilities, conditional-inversion
//! samplers, the paired mixed-copula p-value models, and a numerical check of
//! the pairwise tail-decay conditions behind the Cauchy approximation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bvn::bvn_cdf;
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_quantile};

/// Largest |ρ| accepted for the normal copula.
pub const RHO_MAX: f64 = 0.999;
const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Product,
    Fgm,
    CuadrasAuge,
    Normal,
    Amh,
    Survival,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Product,
        Family::Fgm,
        Family::CuadrasAuge,
        Family::Normal,
        Family::Amh,
        Family::Survival,
    ];

    /// Closed parameter range.
    pub fn range(self) -> (f64, f64) {
        match self {
            Family::Product => (f64::NEG_INFINITY, f64::INFINITY),
            Family::Fgm | Family::Amh => (-1.0, 1.0),
            Family::CuadrasAuge | Family::Survival => (0.0, 1.0),
            Family::Normal => (-RHO_MAX, RHO_MAX),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "product" | "independence" => Family::Product,
            "fgm" => Family::Fgm,
            "cuadrasauge" | "ca" => Family::CuadrasAuge,
            "normal" | "gaussian" => Family::Normal,
            "amh" => Family::Amh,
            "survival" => Family::Survival,
            other => return Err(Error::Invalid(format!("unknown copula family `{other}`"))),
        })
    }
}

/// A copula family with its parameter (θ, or ρ for the normal copula).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    family: Family,
    theta: f64,
}

impl CopulaSpec {
    pub fn new(family: Family, theta: f64) -> Result<Self> {
        if family == Family::Product {
            return Ok(Self { family, theta: 0.0 });
        }
        let (lo, hi) = family.range();
        if !theta.is_finite() || theta < lo || theta > hi {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!("{theta} outside [{lo}, {hi}] for {family:?}"),
            });
        }
        Ok(Self { family, theta })
    }

    pub fn product() -> Self {
        Self {
            family: Family::Product,
            theta: 0.0,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// `[u_lo, u_hi] × [v_lo, v_hi]` inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub u_lo: f64,
    pub u_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Rectangle {
    pub fn new(u_lo: f64, u_hi: f64, v_lo: f64, v_hi: f64) -> Result<Self> {
        for x in [u_lo, u_hi, v_lo, v_hi] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!("rectangle corner {x} outside [0, 1]")));
            }
        }
        if !(u_lo < u_hi && v_lo < v_hi) {
            return Err(Error::Domain("rectangle must have positive extent".into()));
        }
        Ok(Self {
            u_lo,
            u_hi,
            v_lo,
            v_hi,
        })
    }

    pub fn unit() -> Self {
        Self {
            u_lo: 0.0,
            u_hi: 1.0,
            v_lo: 0.0,
            v_hi: 1.0,
        }
    }
}

fn check_unit(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("{x} outside [0, 1]"),
        })
    }
}

/// `C(u, v)`.
pub fn copula_cdf(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    check_unit("u", u)?;
    check_unit("v", v)?;
    Ok(cdf_unchecked(spec, u, v))
}

fn cdf_unchecked(spec: &CopulaSpec, u: f64, v: f64) -> f64 {
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    if u == 1.0 {
        return v;
    }
    if v == 1.0 {
        return u;
    }
    let th = spec.theta;
    let c = match spec.family {
        Family::Product => u * v,
        Family::Fgm => u * v * (1.0 + th * (1.0 - u) * (1.0 - v)),
        Family::CuadrasAuge => u.min(v).powf(th) * (u * v).powf(1.0 - th),
        Family::Normal => {
            if th == 0.0 {
                u * v
            } else {
                bvn_cdf(quantile(u), quantile(v), th)
            }
        }
        Family::Amh => u * v / (1.0 - th * (1.0 - u) * (1.0 - v)),
        Family::Survival => u * v * (-th * u.ln() * v.ln()).exp(),
    };
    c.clamp(0.0, u.min(v))
}

fn quantile(p: f64) -> f64 {
    // Arguments are already known to lie strictly inside (0, 1).
    norm_quantile(p).unwrap_or(if p < 0.5 { f64::NEG_INFINITY } else { f64::INFINITY })
}

/// `P(U ≤ u, V > 1 − vbar)`, written so that small `u` and `vbar` keep their
/// relative accuracy.
pub fn upper_strip(spec: &CopulaSpec, u: f64, vbar: f64) -> Result<f64> {
    check_unit("u", u)?;
    check_unit("vbar", vbar)?;
    Ok(upper_strip_unchecked(spec, u, vbar))
}

fn upper_strip_unchecked(spec: &CopulaSpec, u: f64, vbar: f64) -> f64 {
    if u == 0.0 || vbar == 0.0 {
        return 0.0;
    }
    if vbar == 1.0 {
        return u;
    }
    if u == 1.0 {
        return vbar;
    }
    let th = spec.theta;
    let p = match spec.family {
        Family::Product => u * vbar,
        Family::Fgm => u * vbar * ((1.0 - th) + th * (vbar + u - u * vbar)),
        // With v = 1 − vbar: u − C(u, v) = u(1 − v^{1−θ}) when u ≤ v.
        Family::CuadrasAuge if u <= 1.0 - vbar => -u * ((1.0 - th) * (-vbar).ln_1p()).exp_m1(),
        Family::CuadrasAuge => u - cdf_unchecked(spec, u, 1.0 - vbar),
        Family::Amh => {
            let a = th * (1.0 - u);
            u * vbar * (1.0 - a) / (1.0 - a * vbar)
        }
        Family::Survival => {
            let ln_v = (-vbar).ln_1p();
            -u * (ln_v - th * u.ln() * ln_v).exp_m1()
        }
        Family::Normal => bvn_cdf(quantile(u), quantile(vbar), -th),
    };
    p.clamp(0.0, u.min(vbar))
}

/// `P(U ∈ [u_lo, u_hi], V ∈ [v_lo, v_hi])`.
///
/// Rectangles anchored at a corner or spanning a full strip are evaluated
/// in closed form; the rest use inclusion–exclusion floored at zero.
pub fn rectangle_prob(spec: &CopulaSpec, r: &Rectangle) -> Result<f64> {
    let r = Rectangle::new(r.u_lo, r.u_hi, r.v_lo, r.v_hi)?;
    let p = if r.u_lo == 0.0 && r.v_lo == 0.0 {
        cdf_unchecked(spec, r.u_hi, r.v_hi)
    } else if r.u_lo == 0.0 && r.v_hi == 1.0 {
        upper_strip_unchecked(spec, r.u_hi, 1.0 - r.v_lo)
    } else if r.v_lo == 0.0 && r.u_hi == 1.0 {
        // All six families are exchangeable.
        upper_strip_unchecked(spec, r.v_hi, 1.0 - r.u_lo)
    } else {
        let c = |u, v| cdf_unchecked(spec, u, v);
        (c(r.u_hi, r.v_hi) - c(r.u_lo, r.v_hi) - c(r.u_hi, r.v_lo) + c(r.u_lo, r.v_lo)).max(0.0)
    };
    Ok(p.clamp(0.0, 1.0))
}

/// `∂C(u, v)/∂u`, the conditional CDF of V given U = u.
fn h_function(spec: &CopulaSpec, u: f64, v: f64) -> f64 {
    let th = spec.theta;
    match spec.family {
        Family::Product => v,
        Family::Fgm => v * (1.0 + th * (1.0 - 2.0 * u) * (1.0 - v)),
        Family::CuadrasAuge => {
            if v < u {
                (1.0 - th) * u.powf(-th) * v
            } else {
                v.powf(1.0 - th)
            }
        }
        Family::Normal => {
            let s = ((1.0 - th) * (1.0 + th)).sqrt();
            norm_cdf((quantile(v) - th * quantile(u)) / s)
        }
        Family::Amh => {
            let d = 1.0 - th * (1.0 - u) * (1.0 - v);
            v * (1.0 - th * (1.0 - v)) / (d * d)
        }
        Family::Survival => {
            let ln_v = v.ln();
            v * (-th * u.ln() * ln_v).exp() * (1.0 - th * ln_v)
        }
    }
}

/// Solve `∂C(u, v)/∂u = w` for `v`.
pub fn conditional_quantile(spec: &CopulaSpec, u: f64, w: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) || !(w > 0.0 && w < 1.0) {
        return Err(Error::Domain(format!("u = {u}, w = {w} must lie in (0, 1)")));
    }
    let th = spec.theta;
    let v = match spec.family {
        Family::Product => w,
        Family::Fgm => {
            let a = th * (1.0 - 2.0 * u);
            // Stable root of a v² − (1 + a) v + w = 0.
            2.0 * w / ((1.0 + a) + ((1.0 + a) * (1.0 + a) - 4.0 * a * w).sqrt())
        }
        Family::Normal => {
            let s = ((1.0 - th) * (1.0 + th)).sqrt();
            norm_cdf(th * quantile(u) + s * quantile(w))
        }
        Family::CuadrasAuge => {
            // The conditional CDF jumps at v = u (the singular diagonal part).
            let below = (1.0 - th) * u.powf(1.0 - th);
            if w < below {
                w * u.powf(th) / (1.0 - th)
            } else if w < u.powf(1.0 - th) {
                u
            } else {
                w.powf(1.0 / (1.0 - th))
            }
        }
        Family::Amh | Family::Survival => bisect(|v| h_function(spec, u, v) - w)?,
    };
    Ok(v.clamp(0.0, 1.0))
}

fn bisect(f: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..BISECTION_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NoConvergence(BISECTION_MAX_STEPS))
}

/// Draw `(u, v)` by conditional inversion.
pub fn sample_pair<R: Rng + ?Sized>(spec: &CopulaSpec, rng: &mut R) -> Result<(f64, f64)> {
    let u: f64 = rng.sample(Open01);
    let w: f64 = rng.sample(Open01);
    Ok((u, conditional_quantile(spec, u, w)?))
}

/// Paired p-value model: `(p_1, p_2), (p_3, p_4), …` are independent draws
/// from the copula; all other pairs are independent, and a trailing odd
/// entry is an independent uniform.
pub fn mixed_copula_fill<R: Rng + ?Sized>(spec: &CopulaSpec, out: &mut [f64], rng: &mut R) -> Result<()> {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (u, v) = sample_pair(spec, rng)?;
        pair[0] = u;
        pair[1] = v;
    }
    if let [last] = chunks.into_remainder() {
        *last = rng.sample(Open01);
    }
    Ok(())
}

pub fn mixed_copula_sample<R: Rng + ?Sized>(
    family: Family,
    theta: f64,
    m: usize,
    rng: &mut R,
) -> Result<crate::combiners::PValueVector> {
    if !matches!(family, Family::Fgm | Family::Amh) {
        return Err(Error::InvalidParameter {
            name: "family",
            reason: "mixed models use FGM or AMH".into(),
        });
    }
    if m == 0 {
        return Err(Error::Empty);
    }
    let spec = CopulaSpec::new(family, theta)?;
    let mut p = vec![0.0; m];
    mixed_copula_fill(&spec, &mut p, rng)?;
    crate::combiners::PValueVector::new(p)
}

// ---------------------------------------------------------------------------
// Decay conditions
// ---------------------------------------------------------------------------

/// How the number of tests grows with the threshold `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MRule {
    /// Fixed `m`; weights are the actual `ω_i`, scaled value `t·P`.
    Fixed(usize),
    /// `m = ⌊t^{γ/2}⌋`; weights are in units of `1/m` (equal weights are 1),
    /// scaled value `t^{1+γ}·P`.
    Divergent(f64),
}

/// `δ_t = t^{exponent}`, or the family default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum DeltaSchedule {
    #[default]
    FamilyDefault,
    Power(f64),
}

/// Largest `γ` for which the divergent-regime condition can hold, exclusive.
pub fn gamma_upper_bound(spec: &CopulaSpec) -> f64 {
    let th = spec.theta;
    match spec.family {
        Family::CuadrasAuge => (1.0 - th) / (1.0 + th),
        Family::Normal => (1.0 - th.abs()) / (1.0 + th.abs()),
        _ => 1.0,
    }
}

/// A `γ` safely inside the admissible range.
pub fn default_gamma(spec: &CopulaSpec) -> f64 {
    match spec.family {
        Family::CuadrasAuge | Family::Normal => 0.5 * gamma_upper_bound(spec),
        _ => 0.5,
    }
}

/// For the normal copula, `δ_t t = t^β` ties `β` and `γ` through
/// `β = (1 + |ρ|)(1 + γ)/2`.
pub fn normal_gamma_from_beta(rho: f64, beta: f64) -> f64 {
    2.0 * beta / (1.0 + rho.abs()) - 1.0
}

fn delta_exponent(spec: &CopulaSpec, rule: MRule, schedule: DeltaSchedule) -> f64 {
    if let DeltaSchedule::Power(e) = schedule {
        return e;
    }
    let r = spec.theta.abs();
    match (rule, spec.family) {
        (MRule::Fixed(_), Family::Normal) => (3.0 + r) / 4.0 - 1.0,
        (MRule::Fixed(_), _) => -0.5,
        (MRule::Divergent(g), Family::Normal) => (1.0 + r) * (1.0 + g) / 2.0 - 1.0,
        (MRule::Divergent(g), _) => (g - 1.0) / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub t_grid: Vec<f64>,
    pub m: Vec<usize>,
    pub delta_t: Vec<f64>,
    pub p_joint: Vec<f64>,
    pub p_cross: Vec<f64>,
    pub scaled_probs_joint: Vec<f64>,
    pub scaled_probs_cross: Vec<f64>,
    pub gamma: Option<f64>,
    pub delta_schedule: String,
}

impl DecayReport {
    fn strictly_decreasing(xs: &[f64]) -> bool {
        xs.windows(2).all(|w| w[1] < w[0])
    }

    /// Both scaled sequences strictly decrease across the grid.
    pub fn is_certified(&self) -> bool {
        Self::strictly_decreasing(&self.scaled_probs_joint)
            && Self::strictly_decreasing(&self.scaled_probs_cross)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,m,delta_t,p_joint,p_cross,scaled_joint,scaled_cross\n");
        for i in 0..self.t_grid.len() {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e}",
                self.t_grid[i],
                self.m[i],
                self.delta_t[i],
                self.p_joint[i],
                self.p_cross[i],
                self.scaled_probs_joint[i],
                self.scaled_probs_cross[i]
            );
        }
        out
    }
}

/// Evaluate the two pairwise events
///
/// * `0 < p_i < c_i/(π t)`, `0 < p_j < c_j/(π δ_t t)`
/// * `0 < p_i < c_i/(π (1+δ_t) t)`, `1 − c_j/(π δ_t t) < p_j < 1`
///
/// with `c = ω·m`, and scale by `t` (fixed `m`) or `t^{1+γ}` (divergent `m`).
pub fn condition_decay_check(
    spec: &CopulaSpec,
    w_i: f64,
    w_j: f64,
    rule: MRule,
    t_grid: &[f64],
) -> Result<DecayReport> {
    condition_decay_check_with(spec, w_i, w_j, rule, t_grid, DeltaSchedule::FamilyDefault)
}

pub fn condition_decay_check_with(
    spec: &CopulaSpec,
    w_i: f64,
    w_j: f64,
    rule: MRule,
    t_grid: &[f64],
    schedule: DeltaSchedule,
) -> Result<DecayReport> {
    if t_grid.is_empty() {
        return Err(Error::Empty);
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 0.0) {
        return Err(Error::Domain("t_grid must be positive and increasing".into()));
    }
    for (name, w) in [("w_i", w_i), ("w_j", w_j)] {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("{w} must be positive"),
            });
        }
    }
    let gamma = match rule {
        MRule::Fixed(0) => {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "must be at least 1".into(),
            })
        }
        MRule::Fixed(_) => None,
        MRule::Divergent(g) => {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "gamma",
                    reason: format!("{g} outside (0, 1]"),
                });
            }
            Some(g)
        }
    };
    let exponent = delta_exponent(spec, rule, schedule);
    if !(exponent > -1.0 && exponent < 0.0) {
        return Err(Error::InvalidParameter {
            name: "delta_t",
            reason: format!("exponent {exponent} does not give δ_t → 0 with δ_t·t → ∞"),
        });
    }

    let n = t_grid.len();
    let mut report = DecayReport {
        t_grid: t_grid.to_vec(),
        m: Vec::with_capacity(n),
        delta_t: Vec::with_capacity(n),
        p_joint: Vec::with_capacity(n),
        p_cross: Vec::with_capacity(n),
        scaled_probs_joint: Vec::with_capacity(n),
        scaled_probs_cross: Vec::with_capacity(n),
        gamma,
        delta_schedule: format!("delta_t = t^{exponent:.6}"),
    };
    for &t in t_grid {
        let (m, c_i, c_j, scale) = match rule {
            MRule::Fixed(m) => (m, w_i * m as f64, w_j * m as f64, t),
            MRule::Divergent(g) => {
                let m = (t.powf(g / 2.0).floor() as usize).max(1);
                (m, w_i, w_j, t.powf(1.0 + g))
            }
        };
        let delta = t.powf(exponent);
        let a = c_i / (PI * t);
        let b = c_j / (PI * delta * t);
        let a_cross = c_i / (PI * (1.0 + delta) * t);
        if a >= 1.0 || b >= 1.0 {
            return Err(Error::Domain(format!(
                "t = {t} too small: rectangle bounds {a:.3e}, {b:.3e} must be below 1"
            )));
        }
        let joint = rectangle_prob(spec, &Rectangle::new(0.0, a, 0.0, b)?)?;
        let cross = upper_strip_unchecked(spec, a_cross, b);
        report.m.push(m);
        report.delta_t.push(delta);
        report.p_joint.push(joint);
        report.p_cross.push(cross);
        report.scaled_probs_joint.push(scale * joint);
        report.scaled_probs_cross.push(scale * cross);
    }
    Ok(report)
}

/// Log-spaced grid `10^{lo}, …, 10^{hi}` with `points` entries.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..points)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect()
}

/// Parameter grid used for the decay certificates of each family. The
/// θ = 1 endpoints of Cuadras–Augé and AMH are excluded: their scaled
/// sequences level off instead of decaying.
pub fn certificate_grid(family: Family) -> &'static [f64] {
    match family {
        Family::Product => &[0.0],
        Family::Fgm => &[-1.0, -0.5, 0.0, 0.5, 1.0],
        Family::CuadrasAuge => &[0.0, 0.25, 0.5, 0.75, 0.9],
        Family::Normal => &[-0.9, -0.5, 0.0, 0.5, 0.9],
        Family::Amh => &[-1.0, -0.5, 0.0, 0.5, 0.9],
        Family::Survival => &[0.0, 0.25, 0.5, 0.75, 1.0],
    }
}
