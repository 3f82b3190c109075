//! Bivariate standard normal CDF.
//!
//! Genz's BVND (Drezner–Wesolowsky with Gauss–Legendre rules, and the
//! asymptotic expansion for |ρ| > 0.925). When ρ < 0 and both limits are
//! negative, BVND subtracts two nearly equal numbers; that corner is
//! integrated directly so tiny probabilities keep their relative accuracy.
#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use crate::special::{norm_cdf, norm_pdf};

const TWO_PI: f64 = 2.0 * PI;

// (weight, node) pairs on [-1, 0); the rules are symmetric.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705e+00, -0.9324695142031522e+00),
    (0.3607615730481384e+00, -0.6612093864662647e+00),
    (0.4679139345726904e+00, -0.2386191860831970e+00),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191e+00),
    (0.1069393259953183e+00, -0.9041172563704750e+00),
    (0.1600783285433464e+00, -0.7699026741943050e+00),
    (0.2031674267230659e+00, -0.5873179542866171e+00),
    (0.2334925365383547e+00, -0.3678314989981802e+00),
    (0.2491470458134029e+00, -0.1252334085114692e+00),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949e+00),
    (0.4060142980038694e-01, -0.9639719272779138e+00),
    (0.6267204833410906e-01, -0.9122344282513259e+00),
    (0.8327674157670475e-01, -0.8391169718222188e+00),
    (0.1019301198172404e+00, -0.7463319064601508e+00),
    (0.1181945319615184e+00, -0.6360536807265150e+00),
    (0.1316886384491766e+00, -0.5108670019508271e+00),
    (0.1420961093183821e+00, -0.3737060887154196e+00),
    (0.1491729864726037e+00, -0.2277858511416451e+00),
    (0.1527533871307259e+00, -0.7652652113349733e-01),
];

fn rule(rho_abs: f64) -> &'static [(f64, f64)] {
    if rho_abs < 0.3 {
        &GL6
    } else if rho_abs < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let quad = rule(r.abs());
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        if r != 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let sn = (asr * (is * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / TWO_PI;
        }
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }

    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-0.5 * (b_s / a_s + hk)).exp()
            * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * TWO_PI.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in quad {
            for is in [-1.0, 1.0] {
                let xs = (a * (is * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * w
                    * ((-b_s / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                        - (-0.5 * (b_s / xs + hk)).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        (-bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)).max(0.0)
    }
}

/// `P(X ≤ x, Y ≤ y)` for a standard bivariate normal with correlation `rho`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    if rho == 0.0 {
        return norm_cdf(x) * norm_cdf(y);
    }
    if rho < 0.0 && rho > -1.0 && x < 0.0 && y < 0.0 {
        return lower_corner_negative(x, y, rho);
    }
    bvn_upper(-x, -y, rho).clamp(0.0, 1.0)
}

/// `∫_{-∞}^{x} φ(s) Φ((y − ρ s)/√(1 − ρ²)) ds` by composite Gauss–Legendre.
/// The integrand is positive and log-concave, so the truncation point only
/// has to make φ negligible relative to its value at `x`.
fn lower_corner_negative(x: f64, y: f64, rho: f64) -> f64 {
    // Integrate over the variable with the larger limit so the other factor
    // carries the tail.
    let (x, y) = if x < y { (y, x) } else { (x, y) };
    let sigma = ((1.0 - rho) * (1.0 + rho)).sqrt();
    let span = (x * x + 92.0).sqrt() - x.abs();
    let lo = x - span;
    const PANELS: usize = 32;
    let width = span / PANELS as f64;
    let half = 0.5 * width;
    let f = |s: f64| norm_pdf(s) * norm_cdf((y - rho * s) / sigma);
    let mut total = 0.0;
    for p in 0..PANELS {
        let mid = lo + (p as f64 + 0.5) * width;
        let mut acc = 0.0;
        for &(w, node) in &GL20 {
            acc += w * (f(mid + half * node) + f(mid - half * node));
        }
        total += acc * half;
    }
    total
}
