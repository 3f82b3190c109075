//! Two-group expression analysis: per-gene Wilcoxon rank-sum p-values,
//! restricted to a gene set and combined by CCT (analytic) and MINP (label
//! permutation).

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combiners::{cct, minp_pvalue_mc, PValueVector, TestOutcome, WeightVector};
use crate::error::{invalid, Error, Result};
use crate::rng::{SeedStreams, Workers};
use crate::special::{norm_sf, Probability};

/// Largest pooled sample for which AUTO uses the exact null.
pub const AUTO_EXACT_MAX: usize = 20;
pub const DEFAULT_MINP_REPLICATES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Group {
    Case,
    Control,
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CASE" => Ok(Group::Case),
            "CONTROL" => Ok(Group::Control),
            other => Err(Error::Invalid(format!("unknown group label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    fn delimiter(self) -> u8 {
        match self {
            TableFormat::Csv => b',',
            TableFormat::Tsv => b'\t',
        }
    }

    /// Guess from the file extension; anything but `.tsv`/`.txt` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => TableFormat::Tsv,
            _ => TableFormat::Csv,
        }
    }
}

/// Genes × samples matrix with a group label per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionDataset {
    pub gene_ids: Vec<String>,
    pub samples: Vec<String>,
    pub groups: Vec<Group>,
    pub values: Vec<Vec<f64>>,
    /// Genes dropped at ingestion for missing or non-numeric cells.
    pub dropped: Vec<String>,
}

impl ExpressionDataset {
    pub fn new(
        gene_ids: Vec<String>,
        samples: Vec<String>,
        groups: Vec<Group>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if samples.len() != groups.len() {
            return Err(Error::LengthMismatch {
                expected: samples.len(),
                actual: groups.len(),
            });
        }
        if gene_ids.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: gene_ids.len(),
                actual: values.len(),
            });
        }
        let mut seen = HashSet::new();
        for g in &gene_ids {
            if !seen.insert(g.as_str()) {
                return Err(Error::Invalid(format!("duplicate gene id `{g}`")));
            }
        }
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample id `{s}`")));
            }
        }
        for (g, row) in gene_ids.iter().zip(&values) {
            if row.len() != samples.len() {
                return Err(Error::Invalid(format!(
                    "gene `{g}` has {} values for {} samples",
                    row.len(),
                    samples.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("gene `{g}` has a non-finite value")));
            }
        }
        let n_case = groups.iter().filter(|&&g| g == Group::Case).count();
        if n_case == 0 || n_case == groups.len() {
            return Err(Error::Invalid(
                "both CASE and CONTROL groups must be nonempty".into(),
            ));
        }
        Ok(Self {
            gene_ids,
            samples,
            groups,
            values,
            dropped: Vec::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.gene_ids.len()
    }

    /// `(cases, controls)`.
    pub fn group_sizes(&self) -> (usize, usize) {
        let case = self.groups.iter().filter(|&&g| g == Group::Case).count();
        (case, self.groups.len() - case)
    }

    pub fn write(&self, matrix: &Path, labels: &Path, format: TableFormat) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(format.delimiter())
            .from_path(matrix)
            .map_err(csv_err)?;
        let mut header = vec!["gene_id".to_string()];
        header.extend(self.samples.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (g, row) in self.gene_ids.iter().zip(&self.values) {
            let mut rec = vec![g.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(format.delimiter())
            .from_path(labels)
            .map_err(csv_err)?;
        w.write_record(["sample_id", "group"]).map_err(csv_err)?;
        for (s, g) in self.samples.iter().zip(&self.groups) {
            let label = match g {
                Group::Case => "CASE",
                Group::Control => "CONTROL",
            };
            w.write_record([s.as_str(), label]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Parse {
            line,
            reason: format!("{other:?}"),
        },
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read an expression matrix (header `gene_id, sample…`, one gene per row)
/// and a two-column `sample_id, group` labels file.
pub fn load_expression(matrix: &Path, labels: &Path, format: TableFormat) -> Result<ExpressionDataset> {
    let matrix_text = std::fs::read_to_string(matrix)?;
    let labels_text = std::fs::read_to_string(labels)?;
    parse_expression(&matrix_text, &labels_text, format)
}

pub fn parse_expression(matrix: &str, labels: &str, format: TableFormat) -> Result<ExpressionDataset> {
    fn reader(text: &str, format: TableFormat) -> csv::Reader<&[u8]> {
        csv::ReaderBuilder::new()
            .delimiter(format.delimiter())
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes())
    }

    let mut label_of = HashMap::new();
    for (i, rec) in reader(labels, format).records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                reason: format!("labels need 2 columns, found {}", rec.len()),
            });
        }
        let group = match rec[1].parse::<Group>() {
            Ok(g) => g,
            Err(_) if i == 0 => continue, // header row
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    reason: e.to_string(),
                })
            }
        };
        if label_of.insert(rec[0].to_string(), group).is_some() {
            return Err(Error::Parse {
                line,
                reason: format!("sample `{}` labelled twice", &rec[0]),
            });
        }
    }

    let mut records = reader(matrix, format).into_records();
    let header = records
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            reason: "missing header".into(),
        })?
        .map_err(csv_err)?;
    if header.len() < 3 {
        return Err(Error::Parse {
            line: 1,
            reason: "header needs a gene column and at least two samples".into(),
        });
    }
    let samples: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if samples.iter().any(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            reason: "empty sample id in header".into(),
        });
    }
    let mut groups = Vec::with_capacity(samples.len());
    for s in &samples {
        groups.push(
            *label_of
                .get(s)
                .ok_or_else(|| Error::Invalid(format!("sample `{s}` has no label")))?,
        );
    }
    let known: HashSet<&str> = samples.iter().map(String::as_str).collect();
    let mut unknown: Vec<&String> = label_of.keys().filter(|k| !known.contains(k.as_str())).collect();
    unknown.sort();
    if let Some(s) = unknown.first() {
        return Err(Error::Invalid(format!("labels mention unknown sample `{s}`")));
    }

    let mut gene_ids = Vec::new();
    let mut values = Vec::new();
    let mut dropped = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != samples.len() + 1 {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", samples.len() + 1, rec.len()),
            });
        }
        let id = rec[0].to_string();
        if gene_ids.contains(&id) || dropped.contains(&id) {
            return Err(Error::Invalid(format!("duplicate gene id `{id}`")));
        }
        match rec.iter().skip(1).map(parse_cell).collect::<Option<Vec<f64>>>() {
            Some(row) => {
                gene_ids.push(id);
                values.push(row);
            }
            None => dropped.push(id),
        }
    }
    let mut data = ExpressionDataset::new(gene_ids, samples, groups, values)?;
    data.dropped = dropped;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSet {
    pub name: String,
    pub gene_ids: Vec<String>,
}

impl GeneSet {
    pub fn new(name: impl Into<String>, gene_ids: Vec<String>) -> Result<Self> {
        if gene_ids.is_empty() {
            return Err(Error::Empty);
        }
        let mut seen = HashSet::new();
        for g in &gene_ids {
            if !seen.insert(g.as_str()) {
                return Err(Error::Invalid(format!("gene `{g}` appears twice in the set")));
            }
        }
        Ok(Self {
            name: name.into(),
            gene_ids,
        })
    }

    /// Gene ids separated by whitespace or commas; `#` starts a comment.
    /// The set is named after the file stem.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ids = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("gene_set");
        Self::new(name, ids)
    }
}

// ---------------------------------------------------------------------------
// Wilcoxon rank-sum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WilcoxonMode {
    Exact,
    NormalApprox,
    Auto,
}

impl std::str::FromStr for WilcoxonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "exact" => Ok(WilcoxonMode::Exact),
            "normal" | "normal_approx" => Ok(WilcoxonMode::NormalApprox),
            "auto" => Ok(WilcoxonMode::Auto),
            other => Err(Error::Invalid(format!("unknown Wilcoxon mode `{other}`"))),
        }
    }
}

/// Null law of the rank sum for one pooled sample. Ranks are stored doubled
/// so mid-ranks are integers and every rank sum is exact.
#[derive(Debug, Clone)]
pub struct RankSumNull {
    ranks2: Vec<u64>,
    n_x: usize,
    tie_term: f64,
    /// `P(W2 ≤ s)` for the exact law, when used.
    exact_cdf: Option<Vec<f64>>,
}

impl RankSumNull {
    /// `pooled` holds the `x` group followed by anything else; only its
    /// tie structure and `n_x` matter for the null law.
    pub fn new(pooled: &[f64], n_x: usize, mode: WilcoxonMode) -> Result<Self> {
        let n = pooled.len();
        if n_x == 0 || n_x >= n {
            return Err(Error::Empty);
        }
        if let Some(i) = pooled.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
        let mut ranks2 = vec![0u64; n];
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && pooled[order[j]] == pooled[order[i]] {
                j += 1;
            }
            // Positions i+1..=j share the mid-rank (i+1+j)/2.
            let r2 = (i + 1 + j) as u64;
            for &k in &order[i..j] {
                ranks2[k] = r2;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let exact = match mode {
            WilcoxonMode::Exact => true,
            WilcoxonMode::NormalApprox => false,
            WilcoxonMode::Auto => n <= AUTO_EXACT_MAX && tie_term == 0.0,
        };
        let exact_cdf = exact.then(|| exact_rank_sum_cdf(&ranks2, n_x));
        Ok(Self {
            ranks2,
            n_x,
            tie_term,
            exact_cdf,
        })
    }

    pub fn is_exact(&self) -> bool {
        self.exact_cdf.is_some()
    }

    /// Doubled rank sum of the samples at `idx`.
    pub fn statistic2(&self, idx: impl IntoIterator<Item = usize>) -> u64 {
        idx.into_iter().map(|i| self.ranks2[i]).sum()
    }

    /// Two-sided p-value of a doubled rank sum.
    pub fn p_value(&self, w2: u64) -> f64 {
        let n = self.ranks2.len() as f64;
        let (nx, ny) = (self.n_x as f64, n - self.n_x as f64);
        match &self.exact_cdf {
            Some(cdf) => {
                let s = w2 as usize;
                let lower = cdf[s.min(cdf.len() - 1)];
                let upper = 1.0
                    - if s == 0 {
                        0.0
                    } else {
                        cdf[(s - 1).min(cdf.len() - 1)]
                    };
                (2.0 * lower.min(upper)).min(1.0)
            }
            None => {
                let w = w2 as f64 / 2.0;
                let mean = nx * (n + 1.0) / 2.0;
                let var = nx * ny / 12.0 * ((n + 1.0) - self.tie_term / (n * (n - 1.0)));
                if var <= 0.0 {
                    return 1.0;
                }
                let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
                (2.0 * norm_sf(z)).min(1.0)
            }
        }
    }
}

/// Exact null CDF of the doubled rank sum when `n_x` of the pooled ranks
/// are drawn without replacement; subset counts by dynamic programming.
fn exact_rank_sum_cdf(ranks2: &[u64], n_x: usize) -> Vec<f64> {
    let total: u64 = ranks2.iter().sum();
    let width = total as usize + 1;
    // ways[k][s]: subsets of size k with doubled sum s.
    let mut ways = vec![vec![0.0f64; width]; n_x + 1];
    ways[0][0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        reach += r;
        for k in (1..=n_x).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            let (prev, cur) = (&lo[k - 1], &mut hi[0]);
            for s in (r..=reach.min(width - 1)).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let all: f64 = ways[n_x].iter().sum();
    let mut acc = 0.0;
    ways[n_x]
        .iter()
        .map(|&c| {
            acc += c;
            (acc / all).min(1.0)
        })
        .collect()
}

/// Two-sided Wilcoxon rank-sum p-value of `x` against `y`.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64], mode: WilcoxonMode) -> Result<Probability> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let null = RankSumNull::new(&pooled, x.len(), mode)?;
    Probability::new(null.p_value(null.statistic2(0..x.len())))
}

// ---------------------------------------------------------------------------
// Pathway test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum PathwayWeights {
    Equal,
    /// One weight per gene in the set that is present in the data, in set order.
    Supplied(WeightVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayReport {
    pub gene_set: String,
    pub m_used: usize,
    pub genes: Vec<String>,
    pub missing_genes: Vec<String>,
    pub per_gene_p: Vec<f64>,
    pub cct: TestOutcome,
    pub minp: TestOutcome,
    pub seed: u64,
}

impl PathwayReport {
    pub fn per_gene_csv(&self) -> String {
        let mut s = String::from("gene_id,p_value\n");
        for (g, p) in self.genes.iter().zip(&self.per_gene_p) {
            s.push_str(&format!("{g},{p}\n"));
        }
        s
    }
}

/// Per-gene Wilcoxon p-values (AUTO) with CCT and label-permutation MINP.
///
/// Genes are taken in gene-set order. For the CCT, p-values equal to 1
/// (common with rank statistics) are set to `1 − 1/m_used`, since a Cauchy
/// transform at 1 diverges and would swamp the other genes.
pub fn pathway_test(
    data: &ExpressionDataset,
    set: &GeneSet,
    weights: &PathwayWeights,
    minp_replicates: usize,
    seed: u64,
    workers: Workers,
) -> Result<PathwayReport> {
    let row_of: HashMap<&str, usize> = data
        .gene_ids
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let (mut genes, mut rows, mut missing) = (Vec::new(), Vec::new(), Vec::new());
    for g in &set.gene_ids {
        match row_of.get(g.as_str()) {
            Some(&r) => {
                genes.push(g.clone());
                rows.push(r);
            }
            None => missing.push(g.clone()),
        }
    }
    let m = rows.len();
    if m == 0 {
        return Err(Error::Invalid(format!(
            "gene set `{}` shares no genes with the dataset",
            set.name
        )));
    }
    let w = match weights {
        PathwayWeights::Equal => WeightVector::equal(m)?,
        PathwayWeights::Supplied(w) if w.len() == m => w.clone(),
        PathwayWeights::Supplied(w) => {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: w.len(),
            })
        }
    };

    let n_x = data.group_sizes().0;
    let nulls = workers.try_map_indexed(m, |k| {
        RankSumNull::new(&data.values[rows[k]], n_x, WilcoxonMode::Auto)
    })?;
    let case_idx: Vec<usize> = (0..data.groups.len())
        .filter(|&i| data.groups[i] == Group::Case)
        .collect();
    let observed: Vec<f64> = nulls
        .iter()
        .map(|nl| nl.p_value(nl.statistic2(case_idx.iter().copied())))
        .collect();

    let cap = if m > 1 { 1.0 - 1.0 / m as f64 } else { 1.0 };
    let capped = observed.iter().filter(|&&p| p >= 1.0).count();
    let for_cct: Vec<f64> = observed.iter().map(|&p| if p >= 1.0 { cap } else { p }).collect();
    let mut cct_out = cct(&PValueVector::new(for_cct)?, &w)?;
    if capped > 0 && m > 1 {
        cct_out.warnings.push(format!(
            "{capped} per-gene p-value(s) equal to 1 set to 1 - 1/{m}"
        ));
    }

    let n = data.groups.len();
    let sampler = |rng: &mut crate::rng::StreamRng| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let cases = &perm[..n_x];
        Ok(nulls
            .iter()
            .map(|nl| nl.p_value(nl.statistic2(cases.iter().copied())))
            .collect())
    };
    let minp_out = minp_pvalue_mc(
        &PValueVector::new(observed.clone())?,
        sampler,
        minp_replicates,
        seed,
        workers,
    )?;

    Ok(PathwayReport {
        gene_set: set.name.clone(),
        m_used: m,
        genes,
        missing_genes: missing,
        per_gene_p: observed,
        cct: cct_out,
        minp: minp_out,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Synthetic fixtures
// ---------------------------------------------------------------------------

/// Seeded two-group expression data with block-correlated genes and a
/// location shift on a subset of genes in the CASE group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub genes: usize,
    pub n_case: usize,
    pub n_control: usize,
    pub shifted: usize,
    pub shift: f64,
    pub block_size: usize,
    pub block_corr: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    /// 163 genes, 52 cases and 50 controls, 20 shifted genes.
    fn default() -> Self {
        Self {
            genes: 163,
            n_case: 52,
            n_control: 50,
            shifted: 20,
            shift: 0.6,
            block_size: 10,
            block_corr: 0.3,
            seed: 0,
        }
    }
}

/// The dataset and a gene set covering all of its genes.
pub fn synthetic_fixture(spec: &FixtureSpec) -> Result<(ExpressionDataset, GeneSet)> {
    if spec.genes == 0 || spec.n_case == 0 || spec.n_control == 0 || spec.block_size == 0 {
        return Err(invalid("fixture", "sizes must be positive"));
    }
    if spec.shifted > spec.genes {
        return Err(invalid("shifted", "cannot exceed the number of genes"));
    }
    if !(0.0..1.0).contains(&spec.block_corr) {
        return Err(invalid("block_corr", "must lie in [0, 1)"));
    }
    let streams = SeedStreams::new(spec.seed, "fixture");
    let n = spec.n_case + spec.n_control;
    let mut rng = streams.stream(0);
    let mut order: Vec<usize> = (0..spec.genes).collect();
    order.shuffle(&mut rng);
    let mut is_shifted = vec![false; spec.genes];
    for &g in &order[..spec.shifted] {
        is_shifted[g] = true;
    }
    let blocks = spec.genes.div_ceil(spec.block_size);
    let factors: Vec<Vec<f64>> = (0..blocks)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let (a, b) = (spec.block_corr.sqrt(), (1.0 - spec.block_corr).sqrt());
    let values: Vec<Vec<f64>> = (0..spec.genes)
        .map(|g| {
            let f = &factors[g / spec.block_size];
            (0..n)
                .map(|s| {
                    let e: f64 = rng.sample(StandardNormal);
                    let mu = if is_shifted[g] && s < spec.n_case {
                        spec.shift
                    } else {
                        0.0
                    };
                    a * f[s] + b * e + mu
                })
                .collect()
        })
        .collect();
    let gene_ids: Vec<String> = (0..spec.genes).map(|g| format!("G{:05}", g + 1)).collect();
    let samples: Vec<String> = (0..n).map(|s| format!("S{:03}", s + 1)).collect();
    let groups = (0..n)
        .map(|s| {
            if s < spec.n_case {
                Group::Case
            } else {
                Group::Control
            }
        })
        .collect();
    let set = GeneSet::new("synthetic", gene_ids.clone())?;
    Ok((ExpressionDataset::new(gene_ids, samples, groups, values)?, set))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_small_example() {
        let p = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], WilcoxonMode::Exact).unwrap();
        assert!((p.value() - 0.1).abs() < 1e-15);
        let p = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], WilcoxonMode::Auto).unwrap();
        assert!((p.value() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_give_one() {
        let x = [1.0, 2.0, 3.0];
        let p = wilcoxon_rank_sum(&x, &x, WilcoxonMode::NormalApprox).unwrap();
        assert_eq!(p.value(), 1.0);
        let p = wilcoxon_rank_sum(&x, &x, WilcoxonMode::Exact).unwrap();
        assert_eq!(p.value(), 1.0);
        assert!(wilcoxon_rank_sum(&[], &x, WilcoxonMode::Auto).is_err());
    }

    #[test]
    fn midranks_are_doubled_integers() {
        let null = RankSumNull::new(&[3.0, 1.0, 3.0, 2.0, 3.0], 2, WilcoxonMode::Auto).unwrap();
        // Sorted: 1 → 1, 2 → 2, three 3s share rank 4.
        assert_eq!(null.ranks2, vec![8, 2, 8, 4, 8]);
        assert_eq!(null.tie_term, 24.0);
        assert!(!null.is_exact());
    }

    #[test]
    fn exact_cdf_matches_enumeration() {
        // x of size 2 from ranks 1..5: sums 3..9 with counts 1,1,2,2,2,1,1.
        let cdf = exact_rank_sum_cdf(&[2, 4, 6, 8, 10], 2);
        let want = [1.0, 2.0, 4.0, 6.0, 8.0, 9.0, 10.0];
        for (i, w) in want.iter().enumerate() {
            assert!((cdf[2 * (i + 3)] - w / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_fixture_and_drop_bad_rows() {
        let m = "gene,a,b,c,d\ng1,1,2,3,4\ng2,1,x,3,4\ng3,5,6,7,NA\ng4,0.5,0.1,0.2,0.3\n";
        let l = "sample_id,group\na,CASE\nb,CASE\nc,CONTROL\nd,control\n";
        let d = parse_expression(m, l, TableFormat::Csv).unwrap();
        assert_eq!(d.gene_ids, vec!["g1", "g4"]);
        assert_eq!(d.dropped, vec!["g2", "g3"]);
        assert_eq!(d.group_sizes(), (2, 2));

        let dup = "gene,a,b,c,d\ng1,1,2,3,4\ng1,1,2,3,4\n";
        let err = parse_expression(dup, l, TableFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("g1"));
        let extra = format!("{l}e,CASE\n");
        assert!(parse_expression(m, &extra, TableFormat::Csv).is_err());
        let one_group = "a,CASE\nb,CASE\nc,CASE\nd,CASE\n";
        assert!(parse_expression(m, one_group, TableFormat::Csv).is_err());
        let tsv = m.replace(',', "\t");
        let ltsv = l.replace(',', "\t");
        assert_eq!(
            parse_expression(&tsv, &ltsv, TableFormat::Tsv).unwrap().gene_ids,
            d.gene_ids
        );
        assert!(parse_expression("gene,a,b,c,d\ng1,1,2\n", l, TableFormat::Csv).is_err());
    }

    #[test]
    fn gene_set_validation() {
        assert!(GeneSet::new("s", vec![]).is_err());
        assert!(GeneSet::new("s", vec!["a".into(), "a".into()]).is_err());
    }
}
