use std::path::Path;

use fusestrata_cli::run;
use serde_json::Value;

fn fs(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["fusestrata".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn body(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn params_reports_midflow_ratio() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fs(dir.path(), &["params", "--channels", "32", "--kernel", "5"]), 0);
    let rows = body(&dir.path().join("midflow.csv"));
    assert_eq!(rows[0], "channels,kernel,standard_weights,separable_weights,weight_ratio,standard_trainable,separable_trainable");
    let cells: Vec<&str> = rows[1].split(',').collect();
    let (std_w, sep_w): (usize, usize) = (cells[2].parse().unwrap(), cells[3].parse().unwrap());
    let convs = std_w / (125 * 32 * 32);
    assert_eq!(std_w, convs * 125 * 32 * 32);
    assert_eq!(sep_w, convs * (125 * 32 + 32 * 32));
    let ratio: f64 = cells[4].parse().unwrap();
    assert!((ratio - 4000.0 / 157.0).abs() < 1e-12);

    let totals = body(&dir.path().join("params.csv"));
    assert!(totals.last().unwrap().ends_with(",79522"), "{:?}", totals.last());
}

#[test]
fn params_defaults_to_level_widths() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fs(dir.path(), &["params"]), 0);
    let rows = body(&dir.path().join("midflow.csv"));
    let widths: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(widths, ["2", "4", "8"]);
}

#[test]
fn synth_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["synth", "--n", "6", "--dims", "16x16x8", "--groups", "3", "--seed", "7"];
    assert_eq!(fs(a.path(), &args), 0);
    assert_eq!(fs(b.path(), &args), 0);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.iter().any(|(n, _)| n.ends_with(".mmfv")));
    assert_eq!(ta, tb);

    // rerunning into the same directory leaves it unchanged
    assert_eq!(fs(a.path(), &args), 0);
    assert_eq!(tree(a.path()), tb);

    let c = tempfile::tempdir().unwrap();
    assert_eq!(fs(c.path(), &["synth", "--n", "6", "--dims", "16x16x8", "--groups", "3", "--seed", "8"]), 0);
    assert_ne!(tree(c.path()), tb);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(fs(out, &["--help"]), 0);
    assert_eq!(fs(out, &["frobnicate"]), 1);
    assert_eq!(fs(out, &["params", "--no-such-flag"]), 1);
    assert_eq!(fs(out, &[]), 1);
    assert_eq!(fs(out, &["--dims", "32x32", "params"]), 1);
    assert_eq!(fs(out, &["--kernel", "4", "params"]), 1);
    assert_eq!(fs(out, &["--set", "stats.mode=jackknife", "params"]), 1);
    assert_eq!(fs(out, &["synth", "--n", "2", "--groups", "3"]), 1);
    assert_eq!(fs(out, &["embed"]), 1, "missing inputs");

    // output path occupied by a file
    let file = out.join("occupied");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(fs(&file, &["params"]), 2);
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 3\n[synth]\nn = 9\ngroups = 3\n[model]\ndims = 16x16x8\n").unwrap();
    let cfg = cfg.display().to_string();

    let a = dir.path().join("a");
    assert_eq!(fs(&a, &["--config", &cfg, "synth"]), 0);
    let s = json(&a.join("synth.json"));
    assert_eq!(s["result"]["n_subjects"], 9);
    assert_eq!(s["provenance"]["seed"], 3);
    assert_eq!(s["provenance"]["config"]["synth.n"], "9");

    let b = dir.path().join("b");
    assert_eq!(fs(&b, &["--config", &cfg, "synth", "--n", "6", "--seed", "4"]), 0);
    let s = json(&b.join("synth.json"));
    assert_eq!(s["result"]["n_subjects"], 6);
    assert_eq!(s["provenance"]["seed"], 4);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[synth]\nsubjects = 9\n").unwrap();
    assert_eq!(fs(&b, &["--config", &bad.display().to_string(), "synth"]), 1);
}

#[test]
fn every_text_output_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(fs(out, &["--seed", "11", "synth", "--n", "6", "--dims", "16x16x8", "--depth", "2"]), 0);
    assert_eq!(fs(out, &["--seed", "11", "cv", "--k", "3", "--reconstructor", "identity"]), 0);
    for name in ["phenotypes.csv", "labels.csv", "cv_folds.csv", "cv_rows.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert!(text.starts_with("# fusestrata "), "{name}");
        assert!(text.contains("# seed = 11\n"), "{name}");
        assert!(text.contains("# cv.k = "), "{name}");
    }
    let svg = std::fs::read_to_string(out.join("cv_boxplot_mse.svg")).unwrap();
    assert!(svg.contains("<!--\n# fusestrata"));
    let j = json(&out.join("cv_summary.json"));
    assert_eq!(j["provenance"]["seed"], 11);
    assert!(j["provenance"]["inputs"]["dataset"].as_str().unwrap().len() == 64);
}

#[test]
fn identity_cv_degenerate_boxplot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(fs(out, &["synth", "--n", "6", "--dims", "16x16x8", "--depth", "2"]), 0);
    assert_eq!(fs(out, &["cv", "--k", "3", "--reconstructor", "identity"]), 0);
    let folds = body(&out.join("cv_folds.csv"));
    assert_eq!(folds.len(), 4);
    assert!(folds[1..].iter().all(|r| r.ends_with(",0,0,0")));
    let svg = std::fs::read_to_string(out.join("cv_boxplot_normdiff.svg")).unwrap();
    assert!(!svg.contains("NaN") && !svg.contains("inf"));
    // the box has zero height and the whisker zero length, both on the median line
    let attr = |tag: &str, name: &str| -> String {
        let at = svg.find(tag).unwrap();
        let rest = &svg[at..];
        let key = format!("{name}=\"");
        let s = rest.find(&key).unwrap() + key.len();
        rest[s..s + rest[s..].find('"').unwrap()].to_string()
    };
    assert_eq!(attr("class=\"box\"", "height"), "0.00");
    let median_y = attr("class=\"median\"", "y1");
    assert_eq!(attr("class=\"whisker\"", "y1"), median_y);
    assert_eq!(attr("class=\"whisker\"", "y2"), median_y);
}

#[test]
fn empty_factor_table_gives_empty_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    std::fs::write(out.join("scores.csv"), "subject_id\na\nb\nc\nd\n").unwrap();
    std::fs::write(out.join("clusters.csv"), "subject_id,cluster\na,0\nb,0\nc,1\nd,1\n").unwrap();
    assert_eq!(fs(out, &["stats"]), 0);
    assert_eq!(body(&out.join("stats.csv")).len(), 1);
    assert_eq!(json(&out.join("stats.json"))["result"], Value::Array(vec![]));
    assert_eq!(fs(out, &["profile"]), 0);
    assert_eq!(body(&out.join("profile.csv")), ["factor,cluster,quantile,log10_quantile"]);
    assert_eq!(json(&out.join("profile.json"))["result"], Value::Array(vec![]));
    let svg = std::fs::read_to_string(out.join("profile.svg")).unwrap();
    assert_eq!(svg.matches("class=\"cell\"").count(), 0);
}

#[test]
fn downstream_stages_consume_upstream_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(fs(out, &["synth", "--n", "18", "--dims", "16x16x8", "--depth", "2"]), 0);
    assert_eq!(fs(out, &["factors"]), 0);
    let labels = out.join("labels.csv").display().to_string();
    assert_eq!(fs(out, &["--bootstrap-m", "200", "stats", "--clusters", &labels]), 0);
    assert_eq!(fs(out, &["profile", "--clusters", &labels]), 0);

    let k = json(&out.join("factors.json"))["summary"]["k"].as_u64().unwrap() as usize;
    let scores = body(&out.join("scores.csv"));
    assert_eq!(scores.len(), 19);
    assert_eq!(scores[0].split(',').count(), k + 1);
    let stats = body(&out.join("stats.csv"));
    assert_eq!(stats.len(), k + 1);
    let svg = std::fs::read_to_string(out.join("profile.svg")).unwrap();
    assert_eq!(svg.matches("class=\"cell\"").count(), k * 3);
    assert_eq!(body(&out.join("profile.csv")).len(), k * 3 + 1);
    let sj = json(&out.join("stats.json"));
    assert_eq!(sj["summary"]["bootstrap"]["replicates"], 200);
    assert_eq!(sj["summary"]["bootstrap"]["mode"], "permutation");

    assert_eq!(fs(out, &["--bootstrap-m", "50", "--replacement", "stats", "--clusters", &labels]), 0);
    assert_eq!(json(&out.join("stats.json"))["summary"]["bootstrap"]["mode"], "replacement");
}

#[test]
fn train_embed_cluster_on_a_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let common = ["--dims", "16x16x8", "--depth", "2", "--seed", "2"];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|s| s.to_string()).collect() };
    let call = |extra: &[&str]| {
        let args = with(extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        fs(out, &refs)
    };
    assert_eq!(call(&["synth", "--n", "9"]), 0);
    assert_eq!(call(&["--epochs", "1", "train"]), 0);
    assert_eq!(body(&out.join("loss.csv")).len(), 2);
    assert_eq!(call(&["embed"]), 0);
    let emb = body(&out.join("embeddings.csv"));
    assert_eq!(emb.len(), 10);
    // 8 embedding channels × (16,16,8)/4
    assert_eq!(emb[0].split(',').count(), 1 + 8 * 4 * 4 * 2);
    assert_eq!(call(&["--grid", "2x5", "cluster"]), 0);
    assert_eq!(body(&out.join("grid.csv")).len(), 11);
    assert_eq!(body(&out.join("clusters.csv")).len(), 10);
    assert_eq!(call(&["metrics"]), 0);
    assert_eq!(body(&out.join("metrics.csv")).len(), 1 + 9 * 2);

    // a model trained at other dims does not fit this dataset
    let other = tempfile::tempdir().unwrap();
    assert_eq!(fs(other.path(), &["synth", "--n", "3", "--dims", "8x8x8", "--depth", "2"]), 0);
    let model = out.join("model.ckpt").display().to_string();
    assert_eq!(fs(other.path(), &["embed", "--model", &model]), 1);
}
