//! One handler per subcommand. Each reads its settings, runs the library
//! pipeline and renders the artifact body.

use std::path::{Path, PathBuf};

use cct_core::combiners::{combine as combine_p, Method, PValueVector, WeightVector};
use cct_core::copulas::{
    condition_decay_check_with, default_gamma, log_grid, normal_gamma_from_beta, CopulaSpec, DeltaSchedule,
    Family, MRule,
};
use cct_core::correlation::{read_binary, CorrelationModel, CorrelationSpec, Placement};
use cct_core::pipeline::{parse_expression, pathway_test, GeneSet, PathwayWeights, TableFormat};
use cct_core::rng::Workers;
use cct_core::simulation::{
    default_tail_grid, power_study, size_check_levels, sizes_to_csv, tail_calibration_at, Envelope,
    Magnitude, PowerModel, PowerOptions, Scenario,
};

use crate::settings::{invalid, Fail, Settings};
use crate::Format;

pub struct Artifact {
    pub body: String,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

impl Artifact {
    fn new(body: String, seed: Option<u64>) -> Self {
        Self {
            body,
            seed,
            warnings: Vec::new(),
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Fail> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Fail::Runtime(e.to_string()))
}

fn read_input(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn model_name(s: &mut Settings) -> Result<String, Fail> {
    let raw: String = s.req("model")?;
    Ok(raw.to_ascii_lowercase().replace('_', "-"))
}

fn scenario(s: &mut Settings) -> Result<Scenario, Fail> {
    let model = model_name(s)?;
    if model == "explicit" {
        let path: PathBuf = s.req("matrix")?;
        let matrix = read_binary(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        return Ok(Scenario::Gaussian(CorrelationSpec::explicit(matrix)?));
    }
    let m: usize = s.req("m")?;
    let spec = match model.as_str() {
        "equal-corr" | "equal" => CorrelationSpec::equal_corr(s.req("rho")?, m)?,
        "spiked" => CorrelationSpec::new(
            CorrelationModel::SpikedEigen {
                d: s.req("d")?,
                base: s.get("base", 3.0)?,
                seed: s.get("matrix_seed", 0)?,
            },
            m,
        )?,
        "ar1" => CorrelationSpec::ar1(s.req("rho")?, m)?,
        "poly-decay" => CorrelationSpec::poly_decay(s.req("a")?, m)?,
        "fgm" | "amh" => {
            let family = if model == "fgm" { Family::Fgm } else { Family::Amh };
            let theta: f64 = s.req("theta")?;
            CopulaSpec::new(family, theta)?;
            return Ok(Scenario::MixedCopula { family, theta, m });
        }
        other => {
            return Err(invalid(format!(
                "unknown model `{other}` (equal-corr, spiked, ar1, poly-decay, explicit, fgm, amh)"
            )))
        }
    };
    Ok(Scenario::Gaussian(spec))
}

pub fn calibrate_tail(s: &mut Settings, format: Format, workers: Workers) -> Result<Artifact, Fail> {
    let sc = scenario(s)?;
    let replicates = s.get("replicates", 100_000usize)?;
    let seed: u64 = s.req("seed")?;
    let grid = match s.opt::<String>("t_grid")? {
        Some(_) => s.list("t_grid", "")?,
        None => default_tail_grid(),
    };
    let tc = tail_calibration_at(&sc, &grid, replicates, seed, workers)?;
    let body = match format {
        Format::Csv => tc.to_csv(),
        Format::Json => json(&Envelope::new("tail_calibration", seed, sc.describe(), &tc))?,
    };
    Ok(Artifact::new(body, Some(seed)))
}

pub fn size(s: &mut Settings, format: Format, workers: Workers) -> Result<Artifact, Fail> {
    let sc = scenario(s)?;
    let alphas: Vec<f64> = s.list("alpha", "0.05,0.01,0.001")?;
    let replicates = s.get("replicates", 100_000usize)?;
    let seed: u64 = s.req("seed")?;
    let sizes = size_check_levels(&sc, &alphas, replicates, seed, workers)?;
    let body = match format {
        Format::Csv => sizes_to_csv(&sizes),
        Format::Json => json(&Envelope::new("size", seed, sc.describe(), &sizes))?,
    };
    Ok(Artifact::new(body, Some(seed)))
}

pub fn power(s: &mut Settings, format: Format, workers: Workers) -> Result<Artifact, Fail> {
    let model = match model_name(s)?.as_str() {
        "ar1" => PowerModel::Ar1 { rho: s.req("rho")? },
        "poly-decay" => PowerModel::PolyDecay { a: s.req("a")? },
        other => {
            return Err(invalid(format!(
                "unknown power model `{other}` (ar1, poly-decay)"
            )))
        }
    };
    let m_grid: Vec<usize> = s.list("m_grid", "1000,1100,1200,1300,1400,1500")?;
    let support = s.get("support", 0.1)?;
    let magnitude = match s
        .get("magnitude", "auto".to_string())?
        .to_ascii_lowercase()
        .as_str()
    {
        "auto" => {
            let band: Vec<f64> = s.list("power_band", "0.2,0.8")?;
            let [lo, hi] = band[..] else {
                return Err(invalid("`power_band` needs exactly two values lo,hi"));
            };
            Magnitude::Tuned { lo, hi }
        }
        "default" => Magnitude::Default,
        v => Magnitude::Fixed(v.parse().map_err(|_| {
            invalid(format!(
                "`magnitude`: expected a number, `default` or `auto`, got `{v}`"
            ))
        })?),
    };
    let alpha = s.get("alpha", 0.05)?;
    let replicates = s.get("replicates", 5000usize)?;
    let mc_max: Option<usize> = s.opt("mc_max")?;
    let pilot = s.get("pilot_replicates", 1000usize)?;
    let seed: u64 = s.req("seed")?;
    let placement = match s.get("placement", "prefix".to_string())?.as_str() {
        "prefix" => Placement::Prefix,
        "random" => Placement::Random(seed),
        other => return Err(invalid(format!("unknown placement `{other}` (prefix, random)"))),
    };
    let opts = PowerOptions {
        placement,
        mc_max_replicates: mc_max,
        pilot_replicates: pilot,
        ..PowerOptions::new(support, magnitude)
    };
    let res = power_study(model, &opts, &m_grid, alpha, replicates, seed, workers)?;
    let body = match format {
        Format::Csv => res.to_csv(),
        Format::Json => json(&Envelope::new("power", seed, res.scenario.clone(), &res))?,
    };
    Ok(Artifact::new(body, Some(seed)))
}

pub fn check_copula(s: &mut Settings, format: Format) -> Result<Artifact, Fail> {
    let family: Family = s.req::<String>("family")?.parse()?;
    let theta = match (s.opt::<f64>("theta")?, s.opt::<f64>("rho")?) {
        (Some(_), Some(_)) => return Err(invalid("give either `theta` or `rho`, not both")),
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) if family == Family::Product => 0.0,
        (None, None) => return Err(invalid("`--theta` (or `--rho`) is required")),
    };
    let spec = CopulaSpec::new(family, theta)?;
    let beta: Option<f64> = s.opt("beta")?;
    if beta.is_some() && family != Family::Normal {
        return Err(invalid("`beta` applies to the normal copula only"));
    }
    let override_exp: Option<f64> = s.opt("delta_exponent")?;
    let regime = s.get("regime", "fixed".to_string())?.to_ascii_lowercase();
    let (rule, w_default, schedule) = match regime.as_str() {
        "fixed" => {
            let m = s.get("m", 10usize)?;
            if m == 0 {
                return Err(invalid("`m` must be at least 1"));
            }
            let schedule = match (override_exp, beta) {
                (Some(e), _) => DeltaSchedule::Power(e),
                (None, Some(b)) => DeltaSchedule::Power(b - 1.0),
                (None, None) => DeltaSchedule::FamilyDefault,
            };
            (MRule::Fixed(m), 1.0 / m as f64, schedule)
        }
        "divergent" => {
            let gamma = match (s.opt::<f64>("gamma")?, beta) {
                (Some(_), Some(_)) => return Err(invalid("give either `gamma` or `beta`, not both")),
                (Some(g), None) => g,
                (None, Some(b)) => normal_gamma_from_beta(theta, b),
                (None, None) => default_gamma(&spec),
            };
            let schedule = override_exp.map_or(DeltaSchedule::FamilyDefault, DeltaSchedule::Power);
            (MRule::Divergent(gamma), 1.0, schedule)
        }
        other => return Err(invalid(format!("unknown regime `{other}` (fixed, divergent)"))),
    };
    let w_i = s.get("weight_i", w_default)?;
    let w_j = s.get("weight_j", w_default)?;
    let t_min: f64 = s.get("t_min", 1e3)?;
    let t_max: f64 = s.get("t_max", 1e7)?;
    let points = s.get("points", 9usize)?;
    if !(t_min > 0.0 && t_max > t_min) || points < 2 {
        return Err(invalid("need 0 < t_min < t_max and points ≥ 2"));
    }
    let grid = log_grid(t_min.log10(), t_max.log10(), points);
    let report = condition_decay_check_with(&spec, w_i, w_j, rule, &grid, schedule)?;
    let certified = report.is_certified();
    let body = match format {
        Format::Csv => report.to_csv(),
        Format::Json => json(&serde_json::json!({
            "kind": "decay_report",
            "version": env!("CARGO_PKG_VERSION"),
            "scenario": format!("{family:?}(theta={theta}), {rule:?}"),
            "certified": certified,
            "result": report,
        }))?,
    };
    let mut art = Artifact::new(body, None);
    if !certified {
        art.warnings
            .push("scaled probabilities are not strictly decreasing on this grid".into());
    }
    Ok(art)
}

/// Numbers from a one-column file, or from the column named by one of
/// `names` in a headed CSV. Errors carry the line number.
pub fn read_column(text: &str, source: &Path, names: &[&str]) -> Result<Vec<(u64, f64)>, Fail> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let here = |line: u64, msg: String| invalid(format!("{} line {line}: {msg}", source.display()));
    let mut column: Option<usize> = None;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| invalid(format!("{}: {e}", source.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let col = match column {
            Some(c) => c,
            None => {
                let header = rec
                    .iter()
                    .position(|f| names.iter().any(|n| f.eq_ignore_ascii_case(n)));
                match header {
                    Some(c) => {
                        column = Some(c);
                        continue;
                    }
                    None if rec.len() == 1 => {
                        column = Some(0);
                        0
                    }
                    None => return Err(here(line, format!("no column named `{}`", names[0]))),
                }
            }
        };
        let field = rec
            .get(col)
            .ok_or_else(|| here(line, format!("expected at least {} fields", col + 1)))?;
        let v: f64 = field
            .parse()
            .map_err(|_| here(line, format!("cannot parse `{field}` as a number")))?;
        out.push((line, v));
    }
    if out.is_empty() {
        return Err(invalid(format!("{}: no values", source.display())));
    }
    Ok(out)
}

fn read_weights(spec: &str) -> Result<Option<WeightVector>, Fail> {
    if spec.eq_ignore_ascii_case("equal") {
        return Ok(None);
    }
    let path = Path::new(spec);
    let raw = read_column(&read_input(path)?, path, &["w", "weight"])?;
    Ok(Some(WeightVector::normalized(
        raw.into_iter().map(|(_, w)| w).collect(),
    )?))
}

pub fn analyze(s: &mut Settings, format: Format, workers: Workers) -> Result<Artifact, Fail> {
    let expression: PathBuf = s.req("expression")?;
    let labels: PathBuf = s.req("labels")?;
    let set_path: PathBuf = s.req("gene_set")?;
    let table = match s.opt::<String>("table_format")?.map(|f| f.to_ascii_lowercase()) {
        None => TableFormat::from_path(&expression),
        Some(f) if f == "csv" => TableFormat::Csv,
        Some(f) if f == "tsv" => TableFormat::Tsv,
        Some(f) => return Err(invalid(format!("unknown table format `{f}` (csv, tsv)"))),
    };
    let weights = read_weights(&s.get("weights", "equal".to_string())?)?;
    let replicates = s.get("minp_replicates", cct_core::pipeline::DEFAULT_MINP_REPLICATES)?;
    let per_gene: Option<PathBuf> = s.opt("per_gene")?;
    let seed: u64 = s.req("seed")?;

    let data = parse_expression(&read_input(&expression)?, &read_input(&labels)?, table)?;
    if !set_path.is_file() {
        return Err(invalid(format!("cannot read {}", set_path.display())));
    }
    let set = GeneSet::from_file(&set_path)?;
    let weights = weights.map_or(PathwayWeights::Equal, PathwayWeights::Supplied);
    let report = pathway_test(&data, &set, &weights, replicates, seed, workers)?;

    let mut art = Artifact::new(
        match format {
            Format::Json => json(&report)?,
            Format::Csv => report.per_gene_csv(),
        },
        Some(seed),
    );
    if !data.dropped.is_empty() {
        art.warnings.push(format!(
            "{} gene rows with non-numeric values dropped",
            data.dropped.len()
        ));
    }
    if !report.missing_genes.is_empty() {
        art.warnings.push(format!(
            "{} of {} gene-set members not in the data",
            report.missing_genes.len(),
            set.gene_ids.len()
        ));
    }
    art.warnings.extend(report.cct.warnings.iter().cloned());
    if let Some(path) = per_gene {
        std::fs::write(&path, report.per_gene_csv())
            .map_err(|e| Fail::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(art)
}

pub fn combine(s: &mut Settings, format: Format, workers: Workers) -> Result<Artifact, Fail> {
    let path: PathBuf = s.req("pvalues")?;
    let method: Method = s.get("method", "cct".to_string())?.parse()?;
    let weights = read_weights(&s.get("weights", "equal".to_string())?)?;
    let mc = if method == Method::Minp {
        let replicates = s.get("replicates", 10_000usize)?;
        let seed: u64 = s.req("seed")?;
        Some((replicates, seed))
    } else {
        None
    };

    let values = read_column(&read_input(&path)?, &path, &["p", "pvalue", "p_value"])?;
    if let Some(&(line, v)) = values.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
        return Err(invalid(format!(
            "{} line {line}: p-value {v} outside [0, 1]",
            path.display()
        )));
    }
    let p = PValueVector::new(values.into_iter().map(|(_, v)| v).collect())?;
    let w = match weights {
        Some(w) => w,
        None => WeightVector::equal(p.len())?,
    };
    if w.len() != p.len() {
        return Err(invalid(format!("{} weights for {} p-values", w.len(), p.len())));
    }
    let outcome = combine_p(method, &p, &w, mc, workers)?;
    let body = match format {
        Format::Json => json(&outcome)?,
        Format::Csv => format!(
            "method,statistic,p_value\n{},{},{}\n",
            format!("{:?}", outcome.method).to_ascii_uppercase(),
            outcome.statistic,
            outcome.p_value.value()
        ),
    };
    let mut art = Artifact::new(body, mc.map(|(_, seed)| seed));
    art.warnings.extend(outcome.warnings.iter().cloned());
    Ok(art)
}
