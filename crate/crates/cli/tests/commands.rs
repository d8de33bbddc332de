//! End-to-end checks of the `mdcoop` subcommands on a small toy dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mdcoop_cli::checkpoint::CheckpointBundle;
use mdcoop_cli::metrics::read_rows;
use mdcoop_core::eval::MetricRecord;
use mdcoop_core::Module;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mdcoop(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_mdcoop")).args(args).env_remove("MDCOOP_OUT").output().unwrap();
    Run { code: out.status.code().unwrap_or(-1), stdout: String::from_utf8_lossy(&out.stdout).into(), stderr: String::from_utf8_lossy(&out.stderr).into() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        let r = mdcoop(&["make-toy-data", "--out", s(&ws.data()), "--per-domain", "100", "--seed", "3"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn config(&self, extra: &str) -> PathBuf {
        let text = format!(
            "schema_version = 1\ndataset = {:?}\nseed = 5\n[model]\nmax_levels = 2\n[train]\nbatch_size = 8\nstage_budgets = [64, 64]\n[output]\ngrid_every = 4\nwall_time = false\n{extra}",
            s(&self.data())
        );
        let p = self.path("run.toml");
        fs::write(&p, text).unwrap();
        p
    }

    /// Train the default config into `name` and return the output directory.
    fn trained(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        let r = mdcoop(&["train", "--config", s(&self.config("")), "--out", s(&out)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        out
    }
}

#[test]
fn two_stage_run_writes_checkpoints_grids_and_resolved_config() {
    let ws = Workspace::new();
    let out = ws.trained("run");
    for f in ["checkpoints/stage1.ckpt", "checkpoints/stage2.ckpt", "checkpoints/final.ckpt", "config.resolved.toml", "metrics.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for stage in [1, 2] {
        for domain in ["a_warm_circles", "b_cool_squares"] {
            assert!(out.join(format!("grids/stage{stage}_end_to_{domain}.png")).is_file());
        }
    }
    assert!(out.join("grids/stage1_step0000004_to_a_warm_circles.png").is_file());
    let resolved = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("channel_base_exp") && resolved.contains("k0 = 16"), "{resolved}");

    let rows = read_rows(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 16);
    let k: Vec<&str> = rows.iter().map(|r| r[3].as_str()).collect();
    assert_eq!(&k[..8], ["16"; 8]);
    assert_eq!(&k[8..], ["12"; 8]);
    // each row carries the omega its step trained with
    assert_eq!((rows[8][2].as_str(), rows[15][2].as_str()), ("0", "0.875"));
}

#[test]
fn same_seed_reproduces_the_metrics_file() {
    let ws = Workspace::new();
    let a = fs::read(ws.trained("a").join("metrics.csv")).unwrap();
    let b = fs::read(ws.trained("b").join("metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn interrupted_run_resumes_onto_the_same_trajectory() {
    let ws = Workspace::new();
    let full = ws.trained("full");
    let out = ws.path("halted");
    let r = mdcoop(&["train", "--config", s(&ws.config("")), "--out", s(&out), "--halt-after", "11"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(read_rows(&out.join("metrics.csv")).unwrap().len(), 11);
    let r = mdcoop(&["resume", "--checkpoint", s(&out.join("checkpoints/step0000011.ckpt"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(full.join("metrics.csv")).unwrap());
    let params = |dir: &Path| CheckpointBundle::load(&dir.join("checkpoints/final.ckpt")).unwrap().trainer.bundle.named_params("");
    assert!(params(&out) == params(&full));

    // Resuming a finished run is a no-op.
    let before = fs::read(full.join("metrics.csv")).unwrap();
    let r = mdcoop(&["resume", "--checkpoint", s(&full.join("checkpoints/final.ckpt"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("finished after 16 steps"), "{}", r.stdout);
    assert_eq!(fs::read(full.join("metrics.csv")).unwrap(), before);
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let ws = Workspace::new();
    let r = mdcoop(&["train", "--config", s(&ws.config("[train.weights]\nmdoe = 0.0\n"))]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("mdoe"), "{}", r.stderr);

    assert_eq!(mdcoop(&["train"]).code, 1);
    assert_eq!(mdcoop(&["make-toy-data", "--out", s(&ws.path("few")), "--per-domain", "3"]).code, 1);

    let missing = fs::read_to_string(ws.config("")).unwrap().replace(s(&ws.data()), s(&ws.path("nowhere")));
    fs::write(ws.path("missing.toml"), missing).unwrap();
    assert_eq!(mdcoop(&["train", "--config", s(&ws.path("missing.toml"))]).code, 2);

    let out = ws.trained("run");
    let good = fs::read(out.join("checkpoints/final.ckpt")).unwrap();
    let mut flipped = good.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    fs::write(ws.path("flipped.ckpt"), &flipped).unwrap();
    let r = mdcoop(&["resume", "--checkpoint", s(&ws.path("flipped.ckpt"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("checksum"), "{}", r.stderr);

    let mut future = good;
    future[8..12].copy_from_slice(&7u32.to_le_bytes());
    fs::write(ws.path("future.ckpt"), &future).unwrap();
    let r = mdcoop(&["resume", "--checkpoint", s(&ws.path("future.ckpt"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("version 7") && r.stderr.contains("version 1"), "{}", r.stderr);
}

#[test]
fn translate_in_both_modes() {
    let ws = Workspace::new();
    let ckpt = ws.trained("run").join("checkpoints/final.ckpt");
    let src = ws.data().join("a_warm_circles");
    let inputs = [src.join("00000.png"), src.join("00001.png")];
    let diverse = |out: &Path| {
        mdcoop(&["translate", "--checkpoint", s(&ckpt), "--input", s(&inputs[0]), s(&inputs[1]), "--target", "b_cool_squares", "--num-styles", "4", "--seed", "9", "--out", s(out)])
    };
    assert_eq!(diverse(&ws.path("d1")).code, 0);
    assert_eq!(diverse(&ws.path("d2")).code, 0);
    for stem in ["00000", "00001"] {
        for j in 0..4 {
            let name = format!("{stem}_to_b_cool_squares_{j}.png");
            assert_eq!(fs::read(ws.path("d1").join(&name)).unwrap(), fs::read(ws.path("d2").join(&name)).unwrap());
        }
        assert!(!ws.path("d1").join(format!("{stem}_to_b_cool_squares_4.png")).exists());
    }
    assert_eq!(fs::read(ws.path("d1/grid_diverse.png")).unwrap(), fs::read(ws.path("d2/grid_diverse.png")).unwrap());

    let reference = ws.data().join("b_cool_squares/00003.png");
    let r_out = ws.path("r");
    let base = ["translate", "--checkpoint", s(&ckpt), "--input", s(&inputs[0]), "--mode", "reference", "--ref", s(&reference), "--out", s(&r_out)];
    let r = mdcoop(&base);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("--ref-label"), "{}", r.stderr);
    let mut labelled = base.to_vec();
    labelled.extend(["--ref-label", "b_cool_squares"]);
    assert_eq!(mdcoop(&labelled).code, 0);
    assert!(ws.path("r/00000_ref_00003.png").is_file() && ws.path("r/grid_reference.png").is_file());
    labelled.pop();
    labelled.push("c_nowhere");
    assert_eq!(mdcoop(&labelled).code, 1);

    let r = mdcoop(&["translate", "--checkpoint", s(&ckpt), "--input", s(&inputs[0]), "--out", s(&ws.path("x"))]);
    assert_eq!(r.code, 1, "diverse mode without a target");
}

#[test]
fn evaluate_reports_every_ordered_pair_and_the_aggregate() {
    let ws = Workspace::new();
    let ckpt = ws.trained("run").join("checkpoints/final.ckpt");
    let out = ws.path("eval");
    let r = mdcoop(&["evaluate", "--checkpoint", s(&ckpt), "--extractor", "random-projection", "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let records: Vec<MetricRecord> = fs::read_to_string(out.join("eval_report.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for metric in ["fid_diverse", "kid_diverse", "fid_reference", "kid_reference"] {
        let rows: Vec<&MetricRecord> = records.iter().filter(|r| r.metric == metric).collect();
        let pairs: Vec<&str> = rows.iter().map(|r| r.domain_pair.as_str()).collect();
        assert_eq!(pairs.len(), 5, "{metric}: {pairs:?}");
        assert!(pairs.contains(&"all") && pairs.contains(&"a_warm_circles->a_warm_circles") && pairs.contains(&"b_cool_squares->a_warm_circles"));
        // ten held-out sources per domain, ten styles each
        assert!(rows.iter().filter(|r| r.domain_pair != "all").all(|r| r.n == 100 && r.extractor_id == "random_projection"));
        let mean = rows.iter().filter(|r| r.domain_pair != "all").map(|r| r.value).sum::<f64>() / 4.0;
        let all = rows.iter().find(|r| r.domain_pair == "all").unwrap().value;
        assert!((mean - all).abs() < 1e-9);
    }
    assert!(records.iter().all(|r| !r.extractor_id.is_empty()));

    let r = mdcoop(&["evaluate", "--checkpoint", s(&ckpt), "--extractor", "random-projection", "--num-styles", "1", "--out", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("at least 65"), "{}", r.stderr);
}

#[test]
fn cycle_check_writes_figures_and_a_consistent_summary() {
    let ws = Workspace::new();
    let ckpt = ws.trained("run").join("checkpoints/final.ckpt");
    let out = ws.path("cycle");
    let r = mdcoop(&["cycle-check", "--checkpoint", s(&ckpt), "-n", "8", "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(fs::read_dir(out.join("cycle")).unwrap().count(), 16);

    let mut per_image = csv::Reader::from_path(out.join("cycle_images.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<String, (f64, usize)>::new();
    for row in per_image.records() {
        let row = row.unwrap();
        let e = sums.entry(row[0].to_string()).or_default();
        e.0 += row[2].parse::<f64>().unwrap();
        e.1 += 1;
    }
    let mut summary = csv::Reader::from_path(out.join("cycle_summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let (sum, n) = sums[&row[0]];
        assert_eq!(row[1].parse::<usize>().unwrap(), n);
        assert!((row[2].parse::<f64>().unwrap() - sum / n as f64).abs() < 1e-12);
    }
}
