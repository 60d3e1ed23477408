use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "epochs = 1
batch_size = 4
max_steps = 2
[model]
embed_dim = 16
encoder_blocks = 1
decoder_blocks = 1
heads = 2
text_width = 16
levels = 1
[remesh]
subdivision_levels = 1
";

fn abutment(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abutment")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of the last CSV block: lines after the last header line starting with `header`.
fn csv_rows(out: &str, header: &str) -> Vec<Vec<String>> {
    let lines: Vec<&str> = out.lines().collect();
    let start = lines.iter().rposition(|l| l.starts_with(header) && l.contains(',')).expect("csv header");
    lines[start + 1..]
        .iter()
        .take_while(|l| l.contains(','))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn dataset(n: usize) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    stdout(&abutment(dir.path(), &["generate", "--n", &n.to_string(), "--seed", "4", "--out", "data"]));
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let manifest = dir.path().join("data/manifest.jsonl");
    (dir, manifest)
}

#[test]
fn generate_splits_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| stdout(&abutment(dir.path(), &["generate", "--n", "100", "--split", "0.85", "--out", out]));
    let (a, b) = (run("a"), run("b"));
    let (ra, rb) = (csv_rows(&a, "manifest"), csv_rows(&b, "manifest"));
    assert_eq!((ra[0][1].as_str(), ra[0][2].as_str()), ("85", "15"));
    assert_eq!(ra[0][3], rb[0][3]);

    let small = abutment(dir.path(), &["generate", "--n", "10", "--out", "c"]);
    assert!(!small.status.success());
    assert!(String::from_utf8_lossy(&small.stderr).contains("at least 20"));
}

#[test]
fn preprocess_reports_patch_layout() {
    let (dir, _) = dataset(20);
    let out = stdout(&abutment(dir.path(), &["preprocess", "--manifest", "data/manifest.jsonl", "--out", "cache"]));
    let rows = csv_rows(&out, "id");
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[2..] == ["32000", "500", "64"]));

    let out = stdout(&abutment(
        dir.path(),
        &["preprocess", "--manifest", "data/manifest.jsonl", "--levels", "0", "--out", "flat"],
    ));
    assert!(csv_rows(&out, "id").iter().all(|r| r[2..] == ["500", "500", "1"]));
}

#[test]
fn corrupt_mesh_names_the_sample() {
    let (dir, manifest) = dataset(20);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    let (id, mesh) = (first["id"].as_u64().unwrap(), first["mesh"].as_str().unwrap());
    std::fs::write(dir.path().join("data").join(mesh), "not a mesh\n").unwrap();
    let o = abutment(dir.path(), &["preprocess", "--manifest", "data/manifest.jsonl", "--levels", "1", "--out", "c"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!("sample {id}:")), "{err}");
}

#[test]
fn train_then_eval_reproduces_the_final_row() {
    let (dir, _) = dataset(20);
    let out = stdout(&abutment(
        dir.path(),
        &["train", "--config", "small.toml", "--manifest", "data/manifest.jsonl", "--out", "run", "--seed", "3"],
    ));
    assert!(out.starts_with("# resolved config\n"));
    assert!(out.contains("seed = 3") && out.contains("[model]"));
    let trained = csv_rows(&out, "split");
    assert_eq!(trained[0][0], "test");

    let eval = stdout(&abutment(dir.path(), &["eval", "--checkpoint", "run/model.ckpt", "--split", "test"]));
    assert_eq!(csv_rows(&eval, "split"), trained);
    let again = stdout(&abutment(dir.path(), &["eval", "--checkpoint", "run/model.ckpt", "--split", "test"]));
    assert_eq!(again, eval);

    let mesh = std::fs::read_dir(dir.path().join("data/meshes")).unwrap().next().unwrap().unwrap().path();
    let mesh = std::fs::read_dir(mesh).unwrap().next().unwrap().unwrap().path();
    let mesh = mesh.to_str().unwrap();
    let args = [
        "predict",
        "--checkpoint",
        "run/model.ckpt",
        "--mesh",
        mesh,
        "--location",
        "Top-11",
        "--system",
        "OSSTEM",
        "--series",
        "R",
    ];
    let pred = stdout(&abutment(dir.path(), &args));
    let row = &csv_rows(&pred, "mesh")[0];
    assert!(row[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    assert_eq!(pred, stdout(&abutment(dir.path(), &args)));
}

#[test]
fn missing_checkpoint_and_bad_flags_exit_with_two() {
    let (dir, _) = dataset(20);
    let o = abutment(dir.path(), &["eval", "--checkpoint", "nowhere/model.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint not found"));
    assert_eq!(abutment(dir.path(), &["eval", "--checkpoint", "x", "--colour"]).status.code(), Some(2));
    assert_eq!(abutment(dir.path(), &["sweep", "--manifest", "data/manifest.jsonl"]).status.code(), Some(2));
}

#[test]
fn sweeps_print_one_row_per_value() {
    let (dir, _) = dataset(20);
    let base = ["sweep", "--config", "small.toml", "--manifest", "data/manifest.jsonl", "--max-steps", "1"];
    let masks = stdout(&abutment(dir.path(), &[&base[..], &["--mask-ratios", "0.3,0.4,0.5,0.6"]].concat()));
    let rows = csv_rows(&masks, "mask_ratio");
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["0.3", "0.4", "0.5", "0.6"]);

    let fr = stdout(&abutment(dir.path(), &[&base[..], &["--fractions", "0.2,0.4,0.6,0.8,1.0"]].concat()));
    let rows = csv_rows(&fr, "train_fraction");
    assert_eq!(rows.len(), 5);
    for r in rows {
        assert_eq!(r.len(), 6);
        assert!(r[1..5].iter().all(|v| (0.0..=100.0).contains(&v.parse::<f64>().unwrap())));
    }
}
