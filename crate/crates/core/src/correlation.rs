//! Correlation models for the Gaussian test statistics, multivariate normal
//! sampling, and the `ϱ_k` decay diagnostic.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combiners::PValueVector;
use crate::error::{Error, Result};
use crate::rng::{SeedStreams, Workers};
use crate::special::two_sided_normal_p;

/// Eigenvalues above `-CLIP_TOL` are clipped to zero at factorization.
pub const CLIP_TOL: f64 = 1e-10;
/// Replicates per batched matrix product. Fixed so results never depend on
/// how work is split between threads.
pub const SAMPLE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorrelationModel {
    EqualCorr {
        rho: f64,
    },
    SpikedEigen {
        d: usize,
        base: f64,
        seed: u64,
    },
    Ar1 {
        rho: f64,
    },
    PolyDecay {
        a: f64,
    },
    #[serde(skip)]
    Explicit(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub model: CorrelationModel,
    pub m: usize,
}

impl CorrelationSpec {
    pub fn new(model: CorrelationModel, m: usize) -> Result<Self> {
        let spec = Self { model, m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn equal_corr(rho: f64, m: usize) -> Result<Self> {
        Self::new(CorrelationModel::EqualCorr { rho }, m)
    }

    pub fn spiked(d: usize, m: usize, seed: u64) -> Result<Self> {
        Self::new(CorrelationModel::SpikedEigen { d, base: 3.0, seed }, m)
    }

    pub fn ar1(rho: f64, m: usize) -> Result<Self> {
        Self::new(CorrelationModel::Ar1 { rho }, m)
    }

    pub fn poly_decay(a: f64, m: usize) -> Result<Self> {
        Self::new(CorrelationModel::PolyDecay { a }, m)
    }

    pub fn explicit(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        Self::new(CorrelationModel::Explicit(matrix), m)
    }

    fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "must be at least 1".into(),
            });
        }
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        match &self.model {
            CorrelationModel::EqualCorr { rho } => {
                let lower = if m > 1 { -1.0 / (m as f64 - 1.0) } else { -1.0 };
                if !(rho.abs() < 1.0 && *rho >= lower) {
                    return bad("rho", format!("{rho} must lie in [{lower}, 1)"));
                }
            }
            CorrelationModel::Ar1 { rho } => {
                if !(rho.abs() < 1.0) {
                    return bad("rho", format!("{rho} must satisfy |rho| < 1"));
                }
            }
            CorrelationModel::PolyDecay { a } => {
                if !(*a > 0.0 && a.is_finite()) {
                    return bad("a", format!("{a} must be positive"));
                }
            }
            CorrelationModel::SpikedEigen { d, base, .. } => {
                if *d >= m {
                    return bad("d", format!("{d} must be below m = {m}"));
                }
                if !(*base > 1.0 && base.is_finite()) {
                    return bad("base", format!("{base} must exceed 1"));
                }
            }
            CorrelationModel::Explicit(r) => {
                if r.nrows() != r.ncols() || r.nrows() != m {
                    return Err(Error::LengthMismatch {
                        expected: m,
                        actual: r.ncols(),
                    });
                }
                if r.iter().any(|x| !x.is_finite()) {
                    return bad("matrix", "entries must be finite".into());
                }
                for i in 0..m {
                    if (r[(i, i)] - 1.0).abs() > 1e-12 {
                        return bad("matrix", format!("diagonal entry {i} is not 1"));
                    }
                    for j in 0..i {
                        if (r[(i, j)] - r[(j, i)]).abs() > 1e-12 {
                            return bad("matrix", format!("not symmetric at ({i}, {j})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Parse a `key = value` stanza, e.g.
    ///
    /// ```text
    /// model = ar1
    /// m = 1000
    /// rho = 0.5
    /// ```
    ///
    /// Explicit matrices are given as `path = <file>` in the binary export
    /// format. Blank lines and `#` comments are ignored.
    pub fn from_stanza(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
        Self::from_pairs(&kv)
    }

    pub fn from_pairs(kv: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        fn num<T: std::str::FromStr>(
            kv: &std::collections::BTreeMap<String, String>,
            key: &'static str,
        ) -> Result<Option<T>> {
            kv.get(key)
                .map(|v| {
                    v.parse::<T>().map_err(|_| Error::InvalidParameter {
                        name: key,
                        reason: format!("cannot parse `{v}`"),
                    })
                })
                .transpose()
        }
        let need = |key: &'static str| Error::InvalidParameter {
            name: key,
            reason: "missing".into(),
        };
        let model = kv.get("model").ok_or_else(|| need("model"))?;
        let model = model.to_ascii_lowercase().replace('-', "_");
        if model == "explicit" {
            let path = kv.get("path").ok_or_else(|| need("path"))?;
            return Self::explicit(read_binary(path)?);
        }
        let m: usize = num(kv, "m")?.ok_or_else(|| need("m"))?;
        let model = match model.as_str() {
            "equal_corr" | "equal" | "compound_symmetry" => CorrelationModel::EqualCorr {
                rho: num(kv, "rho")?.ok_or_else(|| need("rho"))?,
            },
            "spiked_eigen" | "spiked" => CorrelationModel::SpikedEigen {
                d: num(kv, "d")?.ok_or_else(|| need("d"))?,
                base: num(kv, "base")?.unwrap_or(3.0),
                seed: num(kv, "seed")?.unwrap_or(0),
            },
            "ar1" => CorrelationModel::Ar1 {
                rho: num(kv, "rho")?.ok_or_else(|| need("rho"))?,
            },
            "poly_decay" | "polynomial" => CorrelationModel::PolyDecay {
                a: num(kv, "a")?.ok_or_else(|| need("a"))?,
            },
            other => return Err(Error::Invalid(format!("unknown correlation model `{other}`"))),
        };
        Self::new(model, m)
    }

    pub fn describe(&self) -> String {
        match &self.model {
            CorrelationModel::EqualCorr { rho } => format!("EQUAL_CORR(rho={rho}), m={}", self.m),
            CorrelationModel::SpikedEigen { d, base, seed } => {
                format!("SPIKED_EIGEN(d={d}, base={base}, seed={seed}), m={}", self.m)
            }
            CorrelationModel::Ar1 { rho } => format!("AR1(rho={rho}), m={}", self.m),
            CorrelationModel::PolyDecay { a } => format!("POLY_DECAY(a={a}), m={}", self.m),
            CorrelationModel::Explicit(_) => format!("EXPLICIT, m={}", self.m),
        }
    }
}

/// A correlation matrix with a cached factor `L` (`L Lᵀ = R`).
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
    factor: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    target_eigenvalues: Option<Vec<f64>>,
    clipped: usize,
}

impl CorrelationMatrix {
    /// Factor a symmetric unit-diagonal matrix by eigendecomposition,
    /// clipping eigenvalues in `[-CLIP_TOL, 0)` to zero.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(entries.clone());
        let mut clipped = 0;
        let mut roots = Vec::with_capacity(eig.eigenvalues.len());
        for &l in eig.eigenvalues.iter() {
            if l < -CLIP_TOL {
                return Err(Error::NotPositiveSemidefinite(l));
            }
            if l < 0.0 {
                clipped += 1;
            }
            roots.push(l.max(0.0).sqrt());
        }
        let mut factor = eig.eigenvectors;
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            col *= roots[j];
        }
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_unstable_by(|a, b| b.total_cmp(a));
        Ok(Self {
            entries,
            factor,
            eigenvalues,
            target_eigenvalues: None,
            clipped,
        })
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Realized eigenvalues, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The recipe eigenvalues before unit-diagonal rescaling (spiked model).
    pub fn target_eigenvalues(&self) -> Option<&[f64]> {
        self.target_eigenvalues.as_deref()
    }

    pub fn clipped_eigenvalues(&self) -> usize {
        self.clipped
    }

    /// `max |L Lᵀ − R|`.
    pub fn reconstruction_error(&self) -> f64 {
        let llt = &self.factor * self.factor.transpose();
        (llt - &self.entries).amax()
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        write_binary(&self.entries, path)
    }
}

/// Dense binary layout: `m` as u64 little-endian, then `m²` row-major f64 LE.
pub fn write_binary(matrix: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let m = matrix.nrows();
    let mut buf = Vec::with_capacity(8 + 8 * m * m);
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    for i in 0..m {
        for j in 0..m {
            buf.extend_from_slice(&matrix[(i, j)].to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Invalid("matrix file shorter than its header".into()));
    }
    let m = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let expected = m
        .checked_mul(m)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| Error::Invalid("matrix dimension overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Invalid(format!(
            "matrix file has {} bytes, expected {expected} for m = {m}",
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    Ok(DMatrix::from_row_iterator(m, m, values))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn haar_orthogonal(m: usize, streams: &SeedStreams) -> DMatrix<f64> {
    let mut rng = streams.stream(0);
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col *= -1.0;
        }
    }
    q
}

pub fn build_correlation(spec: &CorrelationSpec) -> Result<CorrelationMatrix> {
    spec.validate()?;
    let m = spec.m;
    let entries = match &spec.model {
        CorrelationModel::EqualCorr { rho } => DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { *rho }),
        CorrelationModel::Ar1 { rho } => {
            DMatrix::from_fn(m, m, |i, j| rho.powi((i as i64 - j as i64).unsigned_abs() as i32))
        }
        CorrelationModel::PolyDecay { a } => DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                1.0
            } else {
                1.0 / (1.0 + ((i as f64) - (j as f64)).abs().powf(*a))
            }
        }),
        CorrelationModel::Explicit(r) => r.clone(),
        CorrelationModel::SpikedEigen { d, base, seed } => {
            let target = spiked_eigenvalues(m, *d, *base);
            let q = haar_orthogonal(m, &SeedStreams::new(*seed, "spiked-haar"));
            let mut a = q;
            for (j, mut col) in a.column_iter_mut().enumerate() {
                col *= target[j].sqrt();
            }
            let sigma = &a * a.transpose();
            let scale: Vec<f64> = (0..m).map(|i| sigma[(i, i)].sqrt().recip()).collect();
            let mut r = DMatrix::from_fn(m, m, |i, j| sigma[(i, j)] * scale[i] * scale[j]);
            for i in 0..m {
                r[(i, i)] = 1.0;
                for j in 0..i {
                    let avg = 0.5 * (r[(i, j)] + r[(j, i)]);
                    r[(i, j)] = avg;
                    r[(j, i)] = avg;
                }
            }
            let mut out = CorrelationMatrix::from_entries(r)?;
            out.target_eigenvalues = Some(target);
            return Ok(out);
        }
    };
    CorrelationMatrix::from_entries(entries)
}

/// `λ_i = m / base^i` for `i ≤ d`, `1` otherwise.
pub fn spiked_eigenvalues(m: usize, d: usize, base: f64) -> Vec<f64> {
    (1..=m)
        .map(|i| {
            if i <= d {
                m as f64 / base.powi(i as i32)
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Placement {
    Prefix,
    Random(u64),
}

/// Sparse mean vector: `round(support_fraction · m)` coordinates equal to
/// `magnitude`, the rest zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSpec {
    pub support_fraction: f64,
    pub magnitude: f64,
    pub placement: Placement,
}

impl MeanSpec {
    pub fn new(support_fraction: f64, magnitude: f64, placement: Placement) -> Result<Self> {
        if !(0.0..=1.0).contains(&support_fraction) {
            return Err(Error::InvalidParameter {
                name: "support_fraction",
                reason: format!("{support_fraction} outside [0, 1]"),
            });
        }
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "magnitude",
                reason: format!("{magnitude} must be nonnegative"),
            });
        }
        Ok(Self {
            support_fraction,
            magnitude,
            placement,
        })
    }

    pub fn zero() -> Self {
        Self {
            support_fraction: 0.0,
            magnitude: 0.0,
            placement: Placement::Prefix,
        }
    }

    /// `√(2 · 0.6 · log m)`.
    pub fn default_magnitude(m: usize) -> f64 {
        (2.0 * 0.6 * (m as f64).ln()).sqrt()
    }

    pub fn support_size(&self, m: usize) -> usize {
        (self.support_fraction * m as f64).round() as usize
    }

    /// Indices carrying the signal, sorted.
    pub fn support(&self, m: usize) -> Vec<usize> {
        let k = self.support_size(m);
        match self.placement {
            Placement::Prefix => (0..k).collect(),
            Placement::Random(seed) => {
                let mut rng = SeedStreams::new(seed, "mean-placement").stream(m as u64);
                let mut idx: Vec<usize> = (0..m).collect();
                for i in 0..k {
                    let j = rng.random_range(i..m);
                    idx.swap(i, j);
                }
                let mut chosen = idx[..k].to_vec();
                chosen.sort_unstable();
                chosen
            }
        }
    }

    pub fn vector(&self, m: usize) -> Vec<f64> {
        let mut mu = vec![0.0; m];
        for i in self.support(m) {
            mu[i] = self.magnitude;
        }
        mu
    }
}

/// Draw standard normal rows `first..first + rows` of `N(0, R)` into the
/// columns of `out` (`m × rows`). Row `r` uses stream `r` of `streams`.
pub fn mvn_chunk(r: &CorrelationMatrix, streams: &SeedStreams, first: usize, rows: usize) -> DMatrix<f64> {
    let k = r.factor.ncols();
    let mut g = DMatrix::<f64>::zeros(k, rows);
    for c in 0..rows {
        let mut rng = streams.stream((first + c) as u64);
        for x in g.column_mut(c).iter_mut() {
            *x = rng.sample(StandardNormal);
        }
    }
    &r.factor * g
}

/// `n` iid rows of `N(μ, R)`, returned as an `n × m` matrix.
///
/// Rows are generated in fixed chunks of [`SAMPLE_CHUNK`] so the output is
/// bit-identical for any worker count.
pub fn mvn_sample(
    r: &CorrelationMatrix,
    mu: &MeanSpec,
    n: usize,
    streams: &SeedStreams,
    workers: Workers,
) -> DMatrix<f64> {
    let m = r.m();
    let mean = mu.vector(m);
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let blocks = workers.map_indexed(chunks, |c| {
        let first = c * SAMPLE_CHUNK;
        let rows = SAMPLE_CHUNK.min(n - first);
        mvn_chunk(r, streams, first, rows)
    });
    let mut out = DMatrix::<f64>::zeros(n, m);
    for (c, block) in blocks.into_iter().enumerate() {
        for (j, col) in block.column_iter().enumerate() {
            let row = c * SAMPLE_CHUNK + j;
            for i in 0..m {
                out[(row, i)] = col[i] + mean[i];
            }
        }
    }
    out
}

/// `p_i = 2(1 − Φ(|z_i|))`.
pub fn z_to_pvalues(z: &[f64]) -> Result<PValueVector> {
    let mut p = Vec::with_capacity(z.len());
    for (i, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        p.push(two_sided_normal_p(v));
    }
    PValueVector::new(p)
}

/// `ϱ_k = max_{|i−j| ≥ k} |ρ_ij|` for `k = 1..=k_max`.
pub fn varrho_profile(r: &CorrelationMatrix, k_max: usize) -> Result<Vec<f64>> {
    let m = r.m();
    if k_max >= m {
        return Err(Error::InvalidParameter {
            name: "k_max",
            reason: format!("{k_max} must be below m = {m}"),
        });
    }
    // Largest |ρ| on each diagonal, then a suffix maximum.
    let mut diag_max = vec![0.0f64; m];
    for j in 0..m {
        for i in (j + 1)..m {
            let lag = i - j;
            diag_max[lag] = diag_max[lag].max(r.entries[(i, j)].abs());
        }
    }
    for lag in (1..m - 1).rev() {
        diag_max[lag] = diag_max[lag].max(diag_max[lag + 1]);
    }
    Ok(diag_max[1..=k_max].to_vec())
}

/// `ϱ_k (log k)^{2+s}` for each entry of a profile (k starting at 1).
pub fn varrho_weighted(profile: &[f64], s: f64) -> Vec<f64> {
    profile
        .iter()
        .enumerate()
        .map(|(i, &v)| v * ((i + 1) as f64).ln().powf(2.0 + s))
        .collect()
}
