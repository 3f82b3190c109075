use std::path::Path;
use std::process::{Command, Output};

use cct_core::pipeline::{synthetic_fixture, FixtureSpec, TableFormat};
use tempfile::TempDir;

fn cct(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cct"))
        .args(args)
        .current_dir(dir)
        .env_remove("CCT_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

const TAIL: &[&str] = &[
    "calibrate-tail",
    "--model",
    "equal-corr",
    "--rho",
    "0.5",
    "--m",
    "10",
    "--seed",
    "7",
];

#[test]
fn calibrate_tail_writes_forty_rows_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    ok(&cct(
        &[TAIL, &["--replicates", "100000", "-o", "tail.csv"]].concat(),
        dir.path(),
    ));
    let csv = std::fs::read_to_string(dir.path().join("tail.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t_or_m,empirical,reference,stderr");
    assert_eq!(lines.len(), 41);
    for row in &lines[1..] {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 4);
        assert!((0.0..=1.0).contains(&v[1]) && v[2] > 0.0 && v[3] > 0.0);
    }

    let manifest = json(&std::fs::read_to_string(dir.path().join("tail.csv.manifest.json")).unwrap());
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "calibrate-tail");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config"]["rho"], "0.5");
    assert_eq!(manifest["config"]["replicates"], "100000");
    assert_eq!(manifest["config"]["m"], "10");
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn manifest_config_reproduces_the_artifact() {
    let dir = TempDir::new().unwrap();
    let tail = [TAIL, &["--replicates", "50000"]].concat();
    let runs: [&[&str]; 3] = [
        &tail,
        &[
            "size",
            "--model",
            "fgm",
            "--theta",
            "0.5",
            "--m",
            "11",
            "--replicates",
            "20000",
            "--seed",
            "3",
        ],
        &[
            "power",
            "--model",
            "ar1",
            "--rho",
            "0.5",
            "--m-grid",
            "40,60",
            "--support",
            "0.2",
            "--replicates",
            "500",
            "--pilot-replicates",
            "300",
            "--seed",
            "5",
        ],
    ];
    for (i, args) in runs.iter().enumerate() {
        let first = format!("a{i}.csv");
        ok(&cct(&[*args, &["-o", &first]].concat(), dir.path()));
        let manifest = format!("{first}.manifest.json");
        let second = format!("b{i}.csv");
        let rerun = [args[0], "--config", &manifest, "-o", &second, "--workers", "4"];
        ok(&cct(&rerun, dir.path()));
        let a = std::fs::read(dir.path().join(&first)).unwrap();
        let b = std::fs::read(dir.path().join(&second)).unwrap();
        assert_eq!(a, b, "{}", args[0]);
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("run.conf"),
        "# tail run\nmodel = ar1\nrho = 0.2\nm = 5\nreplicates = 10000\nseed = 1\n",
    )
    .unwrap();
    ok(&cct(
        &[
            "calibrate-tail",
            "--config",
            "run.conf",
            "--rho",
            "0.7",
            "-o",
            "t.csv",
        ],
        dir.path(),
    ));
    let manifest = json(&std::fs::read_to_string(dir.path().join("t.csv.manifest.json")).unwrap());
    assert_eq!(manifest["config"]["rho"], "0.7");
    assert_eq!(manifest["config"]["m"], "5");

    std::fs::write(dir.path().join("bad.conf"), "model = ar1\nthis line is wrong\n").unwrap();
    let out = cct(&["calibrate-tail", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn workers_come_from_the_environment_by_default() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cct"))
        .args(TAIL)
        .args(["--replicates", "20000", "-o", "w.csv"])
        .current_dir(dir.path())
        .env("CCT_WORKERS", "3")
        .output()
        .unwrap();
    ok(&out);
    let manifest = json(&std::fs::read_to_string(dir.path().join("w.csv.manifest.json")).unwrap());
    assert_eq!(manifest["workers"], 3);
    let single = ok(&cct(&[TAIL, &["--replicates", "20000"]].concat(), dir.path()));
    assert_eq!(single, std::fs::read_to_string(dir.path().join("w.csv")).unwrap());
}

#[test]
fn exit_codes_separate_validation_from_runtime_errors() {
    let dir = TempDir::new().unwrap();
    let cases: [(&[&str], &str); 5] = [
        (
            &[
                "calibrate-tail",
                "--model",
                "equal-corr",
                "--rho",
                "0.5",
                "--m",
                "10",
            ],
            "--seed",
        ),
        (&["no-such-command"], "unrecognized"),
        (
            &[
                "size", "--model", "ar1", "--rho", "1.5", "--m", "10", "--seed", "1",
            ],
            "rho",
        ),
        (
            &[
                "size", "--model", "ar1", "--rho", "0.5", "--m", "ten", "--seed", "1",
            ],
            "ten",
        ),
        (&["check-copula", "--family", "nope", "--theta", "0.5"], "nope"),
    ];
    for (args, needle) in cases {
        let out = cct(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(stderr(&out).contains(needle), "{args:?}: {}", stderr(&out));
    }
    let out = cct(
        &[
            "size",
            "--model",
            "ar1",
            "--rho",
            "0.5",
            "--m",
            "10",
            "--replicates",
            "10000",
            "--seed",
            "1",
            "-o",
            "missing/dir/out.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn combine_examples() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("one.txt"), "0.5\n").unwrap();
    let out = json(&ok(&cct(
        &[
            "combine",
            "--pvalues",
            "one.txt",
            "--weights",
            "equal",
            "--method",
            "cct",
        ],
        d,
    )));
    assert_eq!(out["method"], "CCT");
    assert_eq!(out["statistic"], 0.0);
    assert_eq!(out["p_value"], 0.5);

    std::fs::write(d.join("half.txt"), "0.5\n".repeat(163)).unwrap();
    let out = json(&ok(&cct(&["combine", "--pvalues", "half.txt"], d)));
    assert!(out["statistic"].as_f64().unwrap().abs() < 1e-12);
    assert!((out["p_value"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    // 163 distinct p-values: the printed p keeps full precision.
    let ps: String = (1..=163)
        .map(|i| format!("{}\n", (i as f64 * 0.61803398875).fract()))
        .collect();
    std::fs::write(d.join("many.txt"), ps).unwrap();
    let text = ok(&cct(&["combine", "--pvalues", "many.txt"], d));
    let raw = text.lines().find(|l| l.contains("\"p_value\"")).unwrap();
    let digits: String = raw
        .split(':')
        .nth(1)
        .unwrap()
        .chars()
        .take_while(|c| *c != 'e' && *c != 'E')
        .filter(|c| c.is_ascii_digit())
        .collect();
    assert!(digits.trim_start_matches('0').len() >= 6, "{raw}");

    std::fs::write(d.join("zero.csv"), "gene,p\nA,0.2\nB,0\nC,0.7\n").unwrap();
    let out = cct(&["combine", "--pvalues", "zero.csv"], d);
    let v = json(&ok(&out));
    assert!(!v["warnings"].as_array().unwrap().is_empty());
    assert!(stderr(&out).contains("clamped"));
    assert!(v["p_value"].as_f64().unwrap() < 1e-290);

    std::fs::write(d.join("bad.txt"), "0.1\n0.2\nnot-a-number\n").unwrap();
    let out = cct(&["combine", "--pvalues", "bad.txt"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(d.join("range.txt"), "0.1\n1.2\n").unwrap();
    let out = cct(&["combine", "--pvalues", "range.txt"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    std::fs::write(d.join("empty.txt"), "").unwrap();
    assert_eq!(
        cct(&["combine", "--pvalues", "empty.txt"], d).status.code(),
        Some(1)
    );

    let out = cct(&["combine", "--pvalues", "many.txt", "--method", "minp"], d);
    assert_eq!(out.status.code(), Some(1), "minp is stochastic and needs a seed");
    let a = ok(&cct(
        &[
            "combine",
            "--pvalues",
            "many.txt",
            "--method",
            "minp",
            "--seed",
            "2",
        ],
        d,
    ));
    let b = ok(&cct(
        &[
            "combine",
            "--pvalues",
            "many.txt",
            "--method",
            "minp",
            "--seed",
            "2",
            "--workers",
            "4",
        ],
        d,
    ));
    assert_eq!(a, b);

    std::fs::write(d.join("w.txt"), "1\n3\n").unwrap();
    std::fs::write(d.join("two.txt"), "0.01\n0.5\n").unwrap();
    let out = json(&ok(&cct(
        &["combine", "--pvalues", "two.txt", "--weights", "w.txt"],
        d,
    )));
    let expected = 0.25 * (0.49 * std::f64::consts::PI).tan();
    assert!((out["statistic"].as_f64().unwrap() - expected).abs() < 1e-9);
    let csv = ok(&cct(
        &[
            "combine",
            "--pvalues",
            "two.txt",
            "--format",
            "csv",
            "--method",
            "fisher",
        ],
        d,
    ));
    assert!(csv.starts_with("method,statistic,p_value\nFISHER,"), "{csv}");
}

#[test]
fn check_copula_example_is_certified() {
    let dir = TempDir::new().unwrap();
    let args = [
        "check-copula",
        "--family",
        "normal",
        "--rho",
        "0.5",
        "--regime",
        "divergent",
        "--beta",
        "0.8",
    ];
    let out = cct(&args, dir.path());
    let csv = ok(&out);
    assert!(!stderr(&out).contains("not strictly decreasing"));
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() >= 2);
    for w in rows.windows(2) {
        assert!(w[1][5] < w[0][5] && w[1][6] < w[0][6], "{w:?}");
    }
    let v = json(&ok(&cct(
        &[&args[..], &["--format", "json"]].concat(),
        dir.path(),
    )));
    assert_eq!(v["certified"], true);
    assert!((v["result"]["gamma"].as_f64().unwrap() - 1.0 / 15.0).abs() < 1e-12);

    // The comonotone endpoint is not certified; the run still succeeds but warns.
    let out = cct(
        &["check-copula", "--family", "cuadras-auge", "--theta", "1"],
        dir.path(),
    );
    ok(&out);
    assert!(stderr(&out).contains("not strictly decreasing"));
}

#[test]
fn analyze_runs_the_pathway_pipeline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let spec = FixtureSpec {
        genes: 40,
        shifted: 8,
        shift: 1.0,
        ..FixtureSpec::default()
    };
    let (data, set) = synthetic_fixture(&spec).unwrap();
    data.write(&d.join("expr.tsv"), &d.join("labels.tsv"), TableFormat::Tsv)
        .unwrap();
    std::fs::write(d.join("set.txt"), set.gene_ids.join("\n")).unwrap();
    let args = [
        "analyze",
        "--expression",
        "expr.tsv",
        "--labels",
        "labels.tsv",
        "--gene-set",
        "set.txt",
        "--minp-replicates",
        "500",
        "--seed",
        "11",
        "--per-gene",
        "genes.csv",
        "-o",
        "report.json",
    ];
    ok(&cct(&args, d));
    let report = json(&std::fs::read_to_string(d.join("report.json")).unwrap());
    assert_eq!(report["m_used"], 40);
    assert_eq!(report["seed"], 11);
    let cct_p = report["cct"]["p_value"].as_f64().unwrap();
    let minp_p = report["minp"]["p_value"].as_f64().unwrap();
    assert!(cct_p > 0.0 && cct_p < 0.05, "{cct_p}");
    assert!((1.0 / 501.0..=1.0).contains(&minp_p));
    let genes = std::fs::read_to_string(d.join("genes.csv")).unwrap();
    assert!(genes.starts_with("gene_id,p_value\n"));
    assert_eq!(genes.lines().count(), 41);

    let again = ok(&cct(&[&args[..11], &["--workers", "4"]].concat(), d));
    assert_eq!(json(&again), report);

    let out = cct(&args[..9], d);
    assert_eq!(out.status.code(), Some(1), "seed is required");
    let out = cct(
        &[
            "analyze",
            "--expression",
            "nope.tsv",
            "--labels",
            "labels.tsv",
            "--gene-set",
            "set.txt",
            "--seed",
            "1",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn json_outputs_carry_the_seed() {
    let dir = TempDir::new().unwrap();
    let v = json(&ok(&cct(
        &[TAIL, &["--replicates", "10000", "--format", "json"]].concat(),
        dir.path(),
    )));
    assert_eq!(v["seed"], 7);
    assert_eq!(v["kind"], "tail_calibration");
    assert_eq!(v["result"]["t_grid"].as_array().unwrap().len(), 40);

    let v = json(&ok(&cct(
        &[
            "size",
            "--model",
            "spiked",
            "--d",
            "3",
            "--m",
            "10",
            "--alpha",
            "0.05,0.01",
            "--replicates",
            "10000",
            "--seed",
            "4",
            "--format",
            "json",
        ],
        dir.path(),
    )));
    assert_eq!(v["seed"], 4);
    assert_eq!(v["result"].as_array().unwrap().len(), 2);
}
