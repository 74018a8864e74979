//! End-to-end tests of the binary: flag surface, CSV stability, exit codes
//! and the files each subcommand leaves behind.

use mixemu::gemm::GemmMode;
use mixemu::net::DenseNet;
use std::path::Path;
use std::process::{Command, Output};

fn mixemu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixemu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn parse_rows(csv: &str, header: &str) -> Vec<Vec<String>> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(header), "header of:\n{csv}");
    lines
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn final_loss(csv: &str) -> f64 {
    csv.lines()
        .rfind(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let out = mixemu(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("split-report"));
    assert!(text.contains("gemm-accuracy"));
    assert!(text.contains("train"));
    assert!(mixemu(&["--version"]).status.success());
}

#[test]
fn split_report_emits_one_row_per_seed_with_unit_scales() {
    let out = mixemu(&["split-report", "--n", "64", "--seeds", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = parse_rows(&stdout(&out), "seed,n,scale,a1,a2,max_rel_err,frob_rel_err");
    assert_eq!(rows.len(), 5);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], i.to_string());
        assert_eq!(row[1], "64");
        assert_eq!(row[3].parse::<f64>().unwrap(), 1.0, "a1 in row {i}");
        assert_eq!(row[4].parse::<f64>().unwrap(), (2.0f64).powi(-11));
        let frob: f64 = row[6].parse().unwrap();
        assert!(frob <= (2.0f64).powi(-21), "frob {frob:e} in row {i}");
    }
}

#[test]
fn split_report_zero_scale_gives_zero_errors() {
    let out = mixemu(&["split-report", "--n", "1", "--seeds", "1", "--scale", "0"]);
    assert!(out.status.success());
    let rows = parse_rows(&stdout(&out), "seed,n,scale,a1,a2,max_rel_err,frob_rel_err");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][5].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][6].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn negative_dimension_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.csv");
    let out = mixemu(&[
        "split-report",
        "--n",
        "-3",
        "--seeds",
        "1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());
    assert!(!stderr(&out).is_empty());
}

#[test]
fn gemm_accuracy_reports_counts_and_error_ordering() {
    let out = mixemu(&[
        "gemm-accuracy",
        "--n",
        "64",
        "--seeds",
        "20",
        "--modes",
        "naive16,threeterm,fourterm",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = parse_rows(&stdout(&out), "seed,n,mode,half_products,frob_rel_err");
    assert_eq!(rows.len(), 60);
    for chunk in rows.chunks(3) {
        assert_eq!(chunk[0][2], "naive16");
        assert_eq!(chunk[0][3], "1");
        assert_eq!(chunk[1][2], "threeterm");
        assert_eq!(chunk[1][3], "3");
        assert_eq!(chunk[2][2], "fourterm");
        assert_eq!(chunk[2][3], "4");
        let naive: f64 = chunk[0][4].parse().unwrap();
        let three: f64 = chunk[1][4].parse().unwrap();
        let four: f64 = chunk[2][4].parse().unwrap();
        assert!(
            naive > three,
            "seed {}: {naive:e} vs {three:e}",
            chunk[0][0]
        );
        assert!(three >= four, "seed {}: {three:e} vs {four:e}", chunk[0][0]);
    }
}

#[test]
fn gemm_accuracy_oracle_rows_have_zero_error() {
    let out = mixemu(&[
        "gemm-accuracy",
        "--n",
        "8",
        "--seeds",
        "3",
        "--modes",
        "oracle64",
    ]);
    assert!(out.status.success());
    for row in parse_rows(&stdout(&out), "seed,n,mode,half_products,frob_rel_err") {
        assert_eq!(row[3], "0");
        assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn unknown_mode_lists_the_valid_ones() {
    let out = mixemu(&[
        "gemm-accuracy",
        "--n",
        "4",
        "--seeds",
        "1",
        "--modes",
        "fp8",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for name in ["exact32", "oracle64", "naive16", "fourterm", "threeterm"] {
        assert!(err.contains(name), "stderr should list {name}: {err}");
    }
}

fn train_lsq(dir: &Path, name: &str, engine: &str, lr: &str, extra: &[&str]) -> (String, Output) {
    let out_path = dir.join(name);
    let path_str = out_path.to_str().unwrap().to_string();
    let mut args = vec![
        "train",
        "--engine",
        engine,
        "--problem",
        "lsq",
        "--epochs",
        "40",
        "--lr",
        lr,
        "--seed",
        "9",
        "--out",
        &path_str,
    ];
    args.extend_from_slice(extra);
    let out = mixemu(&args);
    let csv = std::fs::read_to_string(&out_path).unwrap_or_default();
    (csv, out)
}

#[test]
fn sync_training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (csv_a, out_a) = train_lsq(dir.path(), "a.csv", "sync", "0.05", &[]);
    assert!(out_a.status.success(), "{}", stderr(&out_a));
    let (csv_b, out_b) = train_lsq(dir.path(), "b.csv", "sync", "0.05", &[]);
    assert!(out_b.status.success());
    assert!(!csv_a.is_empty());
    assert_eq!(csv_a, csv_b);
    assert!(csv_a.starts_with("epoch,loss\n"));
    assert_eq!(csv_a.lines().count(), 41);

    // Final parameters land beside the trace in SPMX form.
    let params_path = dir.path().join("a.params.spmx");
    let bytes = std::fs::read(&params_path).unwrap();
    let m = mixemu::spmx::read_f32(&mut bytes.as_slice()).unwrap();
    assert_eq!(m.dims(), (1, 20));
}

#[test]
fn hogwild_final_loss_tracks_sync() {
    let dir = tempfile::tempdir().unwrap();
    let (sync_csv, out) = train_lsq(dir.path(), "sync.csv", "sync", "0.05", &[]);
    assert!(out.status.success());
    let (hog_csv, out) = train_lsq(
        dir.path(),
        "hog.csv",
        "hogwild",
        "0.05",
        &["--workers", "4"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let sync_final = final_loss(&sync_csv);
    let hog_final = final_loss(&hog_csv);
    assert!(
        hog_final <= 1.05 * sync_final,
        "hogwild {hog_final:e} vs sync {sync_final:e}"
    );
}

#[test]
fn zero_staleness_pserver_writes_an_identical_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (sync_csv, out) = train_lsq(dir.path(), "sync.csv", "sync", "0.05", &[]);
    assert!(out.status.success());
    let (ps_csv, out) = train_lsq(
        dir.path(),
        "ps.csv",
        "pserver",
        "0.05",
        &["--staleness", "0"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(sync_csv, ps_csv);
}

#[test]
fn staleness_flag_pairing_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = train_lsq(dir.path(), "x.csv", "pserver", "0.05", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("staleness"));

    let (_, out) = train_lsq(dir.path(), "y.csv", "sync", "0.05", &["--staleness", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn blobs_training_records_accuracy_and_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("blobs.csv");
    let out = mixemu(&[
        "train",
        "--engine",
        "sync",
        "--problem",
        "blobs",
        "--gemm",
        "threeterm",
        "--epochs",
        "10",
        "--lr",
        "0.3",
        "--seed",
        "3",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let tail = csv.lines().last().unwrap();
    let accuracy: f64 = tail
        .strip_prefix("# test_accuracy=")
        .expect("trailing accuracy comment")
        .parse()
        .unwrap();
    assert!(accuracy >= 0.95, "accuracy {accuracy}");

    let bytes = std::fs::read(dir.path().join("blobs.ckpt")).unwrap();
    let net = DenseNet::load_checkpoint(&mut bytes.as_slice(), GemmMode::Exact32).unwrap();
    assert_eq!(net.sizes(), &[2, 16, 3]);
}

#[test]
fn divergence_maps_to_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = train_lsq(dir.path(), "boom.csv", "sync", "1000000", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn unwritable_output_maps_to_exit_code_three() {
    let out = mixemu(&[
        "split-report",
        "--n",
        "2",
        "--seeds",
        "1",
        "--out",
        "/nonexistent-dir/report.csv",
    ]);
    assert_eq!(out.status.code(), Some(3));
}
