use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sp2::eval::rmse;
use sp2::ingest::{kfold, load_tsv, ColumnSpec};
use sp2_cli::ExperimentConfig;

fn sp2() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sp2"))
}

/// Deterministic low-rank ratings on a 1..5 scale.
fn write_dataset(path: &Path, users: u32, items: u32) {
    let mut rows = String::new();
    let mut state = 0x2545_f491_4f6c_dd1du64;
    for u in 0..users {
        for i in 0..items {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if (state >> 33) % 3 != 0 {
                continue;
            }
            let affinity = ((u % 4) as f64 - 1.5) * ((i % 4) as f64 - 1.5) / 2.25;
            let noise = ((state >> 40) % 100) as f64 / 100.0 - 0.5;
            let r = (3.0 + 1.5 * affinity + noise).round().clamp(1.0, 5.0);
            rows.push_str(&format!("{}\t{}\t{}\t0\n", u + 1, i + 1, r));
        }
    }
    fs::write(path, rows).unwrap();
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
}

fn fixture(users: u32, items: u32) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("ratings.tsv");
    write_dataset(&data, users, items);
    Fixture { _dir: dir, root, data }
}

fn small_config(data: &Path, extra: &str) -> String {
    format!(
        r#"
seed = 7
n_folds = 3
dataset = {{ path = "{}" }}
hyperparams = {{ k = 4, epochs = 5 }}
{extra}
"#,
        data.display()
    )
}

fn run_with(config: &Path, args: &[&str]) -> Output {
    let out = sp2()
        .env("RUST_LOG", "warn")
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    out
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_owned(), v.to_owned())).collect()
        })
        .collect()
}

#[test]
fn print_config_round_trips() {
    for example in [false, true] {
        let mut cmd = sp2();
        cmd.arg("print-config");
        if example {
            cmd.arg("--example");
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let parsed = ExperimentConfig::from_toml(&text).unwrap();
        let expected = if example {
            ExperimentConfig::example()
        } else {
            ExperimentConfig::default()
        };
        assert_eq!(parsed, expected);
    }
}

#[test]
fn preflight_lists_every_violation() {
    let fx = fixture(10, 10);
    let cfg = fx.root.join("bad.toml");
    fs::write(
        &cfg,
        r#"
n_folds = 1
dataset = { path = "/nonexistent/ratings.tsv" }
[[methods]]
method = "joint"
n_clusters = 2
top_r = 3
"#,
    )
    .unwrap();
    let out = run_with(&cfg, &["run", "--out", fx.root.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("does not exist"), "{err}");
    assert!(err.contains("R must satisfy 1 <= R <= z"), "{err}");
    assert!(err.contains("n_folds must be at least 2"), "{err}");
    assert!(!fx.root.join("o").exists(), "nothing is written when pre-flight fails");

    fs::write(&cfg, "n_folds = 1\n[sweep]\nratios = [1.5]\n").unwrap();
    let out = run_with(&cfg, &["privacy-sweep"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("sweep.ratios: 1.5 must lie in [0, 1]"), "{err}");
    assert!(err.contains("n_folds must be at least 2"), "{err}");
}

#[test]
fn preflight_checks_data_dependent_limits() {
    let fx = fixture(12, 8);
    let cfg = fx.root.join("c.toml");
    fs::write(
        &cfg,
        small_config(&fx.data, "[[methods]]\nmethod = \"cluster\"\nn_clusters = 9\n[ablation]\nclusters = [9]\n"),
    )
    .unwrap();
    let out = run_with(&cfg, &["run", "--out", fx.root.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("K must not exceed the 8 items"), "{err}");
    let out = run_with(&cfg, &["ablate-clusters", "--out", fx.root.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("ablation.clusters: K = 9 exceeds the 8 items"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let fx = fixture(5, 5);
    let cfg = fx.root.join("c.toml");
    fs::write(&cfg, small_config(&fx.data, "learning_rate = 0.1\n")).unwrap();
    let out = run_with(&cfg, &["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("learning_rate"));
}

#[test]
fn run_is_byte_reproducible_and_rows_follow_the_cross_product() {
    let fx = fixture(30, 20);
    let cfg = fx.root.join("c.toml");
    fs::write(
        &cfg,
        small_config(
            &fx.data,
            r#"hypotheses = ["H1", "H2"]
betas = ["balanced", "extreme", "pessimistic", "optimistic"]
[[methods]]
method = "only_public"
[[methods]]
method = "naive"
[[methods]]
method = "cluster"
n_clusters = 4
"#,
        ),
    )
    .unwrap();
    let a = fx.root.join("a");
    let b = fx.root.join("b");
    for dir in [&a, &b] {
        let out = run_with(&cfg, &["run", "--out", dir.to_str().unwrap(), "--threads", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(bytes, &fb[name], "{name} differs between runs");
    }
    let out = run_with(&cfg, &["run", "--out", a.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(files(&a), fa, "rerun into the same directory changed some file");

    let summary = read_csv(&a.join("summary.csv"));
    assert_eq!(summary.len(), 2 * 4 * 3);
    assert_eq!(summary.iter().filter(|r| r["method"] == "naive").count(), 8);
    assert!(summary.iter().all(|r| r["failed_folds"] == "0"));
    for stem in ["h1_balanced", "h2_optimistic"] {
        assert!(a.join(format!("{stem}.csv")).exists());
        assert!(a.join(format!("{stem}.json")).exists());
    }

    let manifest: serde_json::Value = serde_json::from_slice(&fa["manifest.json"]).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["points"].as_array().unwrap().len(), 8);
    let listed = manifest["files"].as_object().unwrap();
    assert_eq!(listed.len(), fa.len() - 1);
    for (name, sha) in listed {
        assert_eq!(sha.as_str().unwrap(), sp2_cli::commands::sha256_hex(&fa[name]));
    }
}

#[test]
fn seed_override_changes_results() {
    let fx = fixture(20, 15);
    let cfg = fx.root.join("c.toml");
    fs::write(&cfg, small_config(&fx.data, "")).unwrap();
    let mut outs = Vec::new();
    for seed in ["1", "2"] {
        let dir = fx.root.join(format!("s{seed}"));
        let out = run_with(&cfg, &["run", "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert!(out.status.success());
        outs.push(fs::read(dir.join("h1_balanced.csv")).unwrap());
    }
    assert_ne!(outs[0], outs[1]);
}

#[test]
fn ablation_singleton_clusters_match_naive_and_sizes_grow() {
    let fx = fixture(30, 12);
    let cfg = fx.root.join("c.toml");
    fs::write(&cfg, small_config(&fx.data, "")).unwrap();
    let dir = fx.root.join("abl");
    let out = run_with(&cfg, &["ablate-clusters", "--k", "2,4,12", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.join("ablation.csv"));
    let get = |k: &str, m: &str| rows.iter().find(|r| r["k"] == k && r["method"] == m).unwrap().clone();

    assert_eq!(get("12", "cluster")["rmse"], get("12", "naive")["rmse"]);
    let naive_bytes: Vec<String> = ["2", "4", "12"].iter().map(|k| get(k, "naive")["aux_bytes"].clone()).collect();
    assert!(naive_bytes.iter().all(|b| b == &naive_bytes[0]));
    for m in ["cluster", "joint"] {
        let b: Vec<u64> = ["2", "4", "12"].iter().map(|k| get(k, m)["aux_bytes"].parse().unwrap()).collect();
        assert!(b[0] < b[1] && b[1] < b[2], "{m}: {b:?}");
    }
}

#[test]
fn privacy_sweep_endpoints() {
    let fx = fixture(30, 15);
    let cfg = fx.root.join("c.toml");
    fs::write(&cfg, small_config(&fx.data, "")).unwrap();
    let dir = fx.root.join("sw");
    let out = run_with(&cfg, &["privacy-sweep", "--ratios", "0,0.5,1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.join("sweep.csv"));
    let at = |r: &str, m: &str| -> f64 {
        rows.iter().find(|x| x["target_ratio"] == r && x["method"] == m).unwrap()["rmse_mean"].parse().unwrap()
    };

    let opt = at("0", "abs_optimistic");
    for m in ["only_public", "naive"] {
        assert_eq!(at("0", m), opt, "{m} at ratio 0");
    }
    assert!(rows.iter().filter(|x| x["target_ratio"] == "0.5").all(|x| x["alpha"] == "2"));

    // Ratio 1 leaves no public ratings: only-public predicts the scale midpoint.
    let ds = load_tsv(&fx.data, ColumnSpec::tsv()).unwrap();
    let (lo, hi) = ds.scale();
    let folds = kfold(&ds, 3, 7).unwrap();
    let mid: f64 = folds
        .iter()
        .map(|f| {
            let truth: Vec<f64> = f.test.ratings().iter().map(|r| r.value).collect();
            rmse(&vec![(lo + hi) / 2.0; truth.len()], &truth).unwrap()
        })
        .sum::<f64>()
        / 3.0;
    approx::assert_relative_eq!(at("1", "only_public"), mid, epsilon = 1e-12);
}

#[test]
fn prepare_data_writes_folds_and_partitions() {
    let fx = fixture(15, 10);
    let cfg = fx.root.join("c.toml");
    fs::write(&cfg, small_config(&fx.data, "")).unwrap();
    let dir = fx.root.join("prep");
    let out = run_with(&cfg, &["prepare-data", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let all = files(&dir);
    assert!(all.contains_key("ratings.tsv"));
    for f in 0..3 {
        assert!(all.contains_key(&format!("fold{f}/train.tsv")));
        assert!(all.contains_key(&format!("fold{f}/test.tsv")));
        assert!(all.contains_key(&format!("fold{f}/privacy/public.tsv")));
    }
    let ds = load_tsv(dir.join("ratings.tsv"), ColumnSpec::tsv()).unwrap();
    assert_eq!(ds.len(), load_tsv(&fx.data, ColumnSpec::tsv()).unwrap().len());
    let manifest: serde_json::Value = serde_json::from_slice(&all["manifest.json"]).unwrap();
    assert_eq!(manifest["files"].as_object().unwrap().len(), all.len() - 1);
}

#[test]
fn shipped_configs_parse_and_pass_preflight() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert!(!cfg.run_points().is_empty(), "{}", path.display());
        let v = cfg.violations(sp2_cli::Scope::Run, None);
        assert!(v.is_empty(), "{}: {v:?}", path.display());
        n += 1;
    }
    assert!(n >= 2);
}
