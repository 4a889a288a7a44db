use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ptree_core::{kmeans, Dataset, PosteriorTree};

fn ptree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptree"))
        .current_dir(dir)
        .env_remove("POSTREE_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_CONFIG: &str = "epochs = 2\n[layout]\nK = 2\nd = 2\n[model]\nhidden = 8\nlayers = 2\n";

fn small_model(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("small.toml"), SMALL_CONFIG).unwrap();
    ok(&ptree(dir, &["gen-data", "--n", "200", "--seed", "1", "--out", "d.csv"]));
    ok(&ptree(
        dir,
        &["train", "--config", "small.toml", "--data", "d.csv", "--out-model", "m.json", "--out-history", "h.csv"],
    ));
    dir.join("m.json")
}

#[test]
fn gen_data_rejects_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = ptree(dir.path(), &["gen-data", "--n", "0", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error: empty dataset"));
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn gen_data_without_noise_copies_x() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ptree(dir.path(), &["gen-data", "--n", "50", "--sigma", "0", "--out", "d.csv"]));
    let data = Dataset::load(&dir.path().join("d.csv")).unwrap();
    assert_eq!(data.noise_std, 0.0);
    for p in &data.pairs {
        assert_eq!(p.x, p.y);
    }
}

#[test]
fn gen_data_writes_requested_rows_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ptree(dir.path(), &["gen-data", "--n", "10000", "--seed", "3", "--out", "a.csv"]));
    ok(&ptree(dir.path(), &["gen-data", "--n", "10000", "--seed", "3", "--out", "b.csv"]));
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let header = a.lines().next().unwrap();
    assert!(header.contains("sigma=1"), "{header}");
    let data = Dataset::load(&dir.path().join("a.csv")).unwrap();
    assert_eq!(data.len(), 10000);
    assert!(dir.path().join("a.csv.manifest.json").exists());
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_ptree"));
        c.current_dir(dir.path()).env_remove("POSTREE_SEED").args(["gen-data", "--n", "20", "--out", out]);
        if let Some(s) = seed {
            c.env("POSTREE_SEED", s);
        }
        ok(&c.output().unwrap());
        std::fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let explicit = {
        ok(&ptree(dir.path(), &["gen-data", "--n", "20", "--seed", "9", "--out", "x.csv"]));
        std::fs::read_to_string(dir.path().join("x.csv")).unwrap()
    };
    assert_eq!(run(Some("9"), "e.csv"), explicit);
    assert_ne!(run(None, "n.csv"), explicit);
}

#[test]
fn train_names_missing_layout_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[layout]\nd = 2\n").unwrap();
    ok(&ptree(dir.path(), &["gen-data", "--n", "20", "--out", "d.csv"]));
    let out = ptree(dir.path(), &["train", "--config", "c.toml", "--data", "d.csv", "--out-model", "m.json", "--out-history", "h.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error: layout.K"), "{}", stderr(&out));
    assert!(!dir.path().join("m.json").exists());
    assert!(!dir.path().join("h.csv").exists());
}

#[test]
fn train_validates_inputs_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL_CONFIG).unwrap();
    let out = ptree(dir.path(), &["train", "--config", "c.toml", "--data", "missing.csv", "--out-model", "m.json", "--out-history", "h.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.csv"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn train_warns_when_epsilon_never_decays() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    assert!(model.exists());
    let out = ptree(dir.path(), &["train", "--config", "small.toml", "--data", "d.csv", "--out-model", "m2.json", "--out-history", "h2.csv"]);
    ok(&out);
    assert!(stderr(&out).contains("warning: epsilon never decays"));
    let history = std::fs::read_to_string(dir.path().join("h2.csv")).unwrap();
    assert!(history.starts_with("# manifest "));
    assert_eq!(history.lines().count(), 2 + 2);
    // Identical flags and seeds give identical artifacts.
    assert_eq!(std::fs::read(dir.path().join("m.json")).unwrap(), std::fs::read(dir.path().join("m2.json")).unwrap());
    assert_eq!(std::fs::read(dir.path().join("h.csv")).unwrap(), history.as_bytes());
}

#[test]
fn train_reports_numerical_faults_with_exit_code_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), format!("lr_leaf = 1e200\nlr_prob = 1e200\n{SMALL_CONFIG}")).unwrap();
    ok(&ptree(dir.path(), &["gen-data", "--n", "100", "--out", "d.csv"]));
    let out = ptree(dir.path(), &["train", "--config", "c.toml", "--data", "d.csv", "--out-model", "m.json", "--out-history", "h.csv"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("error: non-finite loss at epoch"));
}

#[test]
fn default_toy_config_runs_all_epochs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.toml"), "[layout]\nK = 2\nd = 2\n").unwrap();
    ok(&ptree(dir.path(), &["gen-data", "--n", "1000", "--out", "d.csv"]));
    ok(&ptree(dir.path(), &["train", "--config", "toy.toml", "--data", "d.csv", "--out-model", "m.json", "--out-history", "h.csv"]));
    let history = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let rows: Vec<&str> = history.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 70);
    assert!(rows[69].starts_with("70,"));
}

#[test]
fn baseline_pads_when_samples_are_scarce() {
    let dir = tempfile::tempdir().unwrap();
    let out = ptree(dir.path(), &["baseline", "--y=-2.5,2.5", "--n-samples", "3", "--K", "2", "--d", "2", "--out-tree", "t.txt"]);
    ok(&out);
    assert!(stderr(&out).contains("warning:"));
    let tree = PosteriorTree::load(&dir.path().join("t.txt")).unwrap();
    tree.check_invariants(1e-9).unwrap();
}

#[test]
fn baseline_depth_one_is_plain_kmeans() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ptree(dir.path(), &["gen-data", "--n", "300", "--seed", "2", "--out", "d.csv"]));
    ok(&ptree(dir.path(), &["baseline", "--data", "d.csv", "--K", "3", "--d", "1", "--seed", "4", "--out-tree", "t.txt"]));
    let tree = PosteriorTree::load(&dir.path().join("t.txt")).unwrap();
    let points = Dataset::load(&dir.path().join("d.csv")).unwrap().xs();
    let flat = kmeans(&points, 3, 4, 5).unwrap();
    for j in 0..3 {
        assert_eq!(tree.value(1, j), flat.centroids[j].as_slice());
        assert!((tree.prob(1, j) - flat.sizes()[j] as f64 / 300.0).abs() < 1e-15);
    }
}

#[test]
fn baseline_from_posterior_samples_is_a_valid_tree() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ptree(dir.path(), &["baseline", "--y=-2.5,2.5", "--n-samples", "10000", "--K", "2", "--d", "2", "--out-tree", "t.txt"]));
    let text = std::fs::read_to_string(dir.path().join("t.txt")).unwrap();
    assert!(text.contains("# manifest "));
    let tree = PosteriorTree::load(&dir.path().join("t.txt")).unwrap();
    tree.check_invariants(1e-9).unwrap();
    let out = ptree(dir.path(), &["baseline", "--n-samples", "10", "--K", "2", "--d", "2", "--out-tree", "u.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_writes_one_row_per_input() {
    let dir = tempfile::tempdir().unwrap();
    small_model(dir.path());
    std::fs::write(dir.path().join("ys.csv"), "-2.5,2.5\n0,0\n1,1\n").unwrap();
    let out = ptree(
        dir.path(),
        &["eval", "--model", "m.json", "--test-ys", "ys.csv", "--oracle-samples", "500", "--out-report", "r.csv"],
    );
    ok(&out);
    let report = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let rows: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("row,y_0,y_1,root_error,dist_1,dist_2,gap_1,gap_2"));
    assert_eq!(rows.len(), 1 + 3 + 2);
    assert!(rows[4].starts_with("mean,"));
}

#[test]
fn eval_rejects_layout_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    small_model(dir.path());
    let out = ptree(dir.path(), &["eval", "--model", "m.json", "--K", "3", "--out-report", "r.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("layout mismatch"));
    assert!(!dir.path().join("r.csv").exists());
}

fn svg_for(dir: &Path, k: &str, d: &str) -> String {
    ok(&ptree(dir, &["baseline", "--y=-2.5,2.5", "--n-samples", "2000", "--K", k, "--d", d, "--out-tree", "t.txt"]));
    ok(&ptree(dir, &["plot", "--tree", "t.txt", "--y=-2.5,2.5", "--samples", "500", "--out-svg", "p.svg"]));
    std::fs::read_to_string(dir.join("p.svg")).unwrap()
}

fn count(doc: &roxmltree::Document, class: &str) -> usize {
    doc.descendants().filter(|n| n.attribute("class") == Some(class)).count()
}

#[test]
fn plot_is_well_formed_with_one_marker_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let svg = svg_for(dir.path(), "2", "2");
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(count(&doc, "node"), 4 + (1 + 2));
    assert_eq!(count(&doc, "sample"), 500);
    assert_eq!(count(&doc, "mean"), 1);
    assert_eq!(count(&doc, "measurement"), 1);
    let colors: std::collections::BTreeSet<&str> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("sample"))
        .filter_map(|n| n.attribute("fill"))
        .collect();
    assert!(colors.len() <= 4);
    let leaf_colors: std::collections::BTreeSet<&str> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("node") && n.attribute("data-level") == Some("2"))
        .filter_map(|n| n.attribute("fill"))
        .collect();
    assert_eq!(leaf_colors.len(), 4);
}

#[test]
fn plot_of_single_leaf_tree_uses_one_color() {
    let dir = tempfile::tempdir().unwrap();
    let svg = svg_for(dir.path(), "1", "1");
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let colors: std::collections::BTreeSet<&str> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("sample"))
        .filter_map(|n| n.attribute("fill"))
        .collect();
    assert_eq!(colors.len(), 1);
    assert_eq!(count(&doc, "node"), 2);
}

#[test]
fn plot_requires_two_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("prior.json"),
        r#"{"weights":[0.5,0.5],"means":[[-1.0],[1.0]],"covariances":[[[1.0]],[[1.0]]]}"#,
    )
    .unwrap();
    ok(&ptree(dir.path(), &["baseline", "--task", "prior.json", "--y=0.5", "--n-samples", "100", "--K", "2", "--d", "1", "--out-tree", "t.txt"]));
    let out = ptree(dir.path(), &["plot", "--task", "prior.json", "--tree", "t.txt", "--y=0.5", "--out-svg", "p.svg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error: plotting supports 2-D tasks only"));
    assert!(!dir.path().join("p.svg").exists());
}
