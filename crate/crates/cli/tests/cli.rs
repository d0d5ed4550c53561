use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sitn::calibration::CalibrationModel;
use sitn::eval::score_latents;
use sitn::io::{read_calibration, read_latents, read_scores, write_latents};

fn sitn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sitn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sitn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
}

/// Trains a deliberately tiny flow so the file pipeline stays fast.
fn tiny_flow(dir: &Path) -> PathBuf {
    let m = dir.join("m.bin");
    ok(&["train-flow", "--out", p(&m), "--steps", "30", "--hidden", "16,16", "--seed", "1"]);
    m
}

#[test]
fn file_pipeline_composes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = tiny_flow(d);
    let (cal_x, test_x, z_cal, z_test) = (d.join("cal.sitn"), d.join("x.sitn"), d.join("zc.sitn"), d.join("z.sitn"));
    ok(&["generate", "--scenario", "identical", "--dim", "8", "--n", "120", "--out", p(&cal_x), "--seed", "1"]);
    ok(&["generate", "--scenario", "variance_scaled", "--dim", "8", "--n", "40", "--ood", "--model", p(&model), "--out", p(&test_x), "--seed", "2"]);
    let ll = d.join("ll.csv");
    ok(&["invert", "--model", p(&model), "--data", p(&cal_x), "--out", p(&z_cal)]);
    ok(&["invert", "--model", p(&model), "--data", p(&test_x), "--out", p(&z_test), "--likelihood", p(&ll), "--tolerance", "1e-4"]);
    assert_eq!(read_latents::<f64>(&z_test).unwrap().dim(), (40, 8));
    let ll_text = std::fs::read_to_string(&ll).unwrap();
    assert!(ll_text.starts_with("id,log_likelihood,latent_log_prob,divergence_integral"));
    assert_eq!(ll_text.lines().count(), 41);

    let cal = d.join("c.json");
    ok(&["calibrate", "--latents", p(&z_cal), "--out", p(&cal), "--alpha", "0.1", "--seed", "3"]);
    let scores = d.join("s.csv");
    ok(&["score", "--latents", p(&z_test), "--calibration", p(&cal), "--label", "ood", "--out", p(&scores)]);
    let header = std::fs::read_to_string(&scores).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "id,s_ad,s_cv,q_ad,q_cv,s_sitn,label");
    let out = ok(&["classify", "--calibration", p(&cal), "--scores", p(&scores)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("id,m_hat,quantile,decision\n"));
    assert_eq!(text.lines().count(), 41);
    let from_latents = ok(&["classify", "--calibration", p(&cal), "--latents", p(&z_test)]);
    assert_eq!(String::from_utf8(from_latents.stdout).unwrap(), text);
}

#[test]
fn cli_and_library_scores_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (zc, zt, cal, out) = (d.join("zc.sitn"), d.join("zt.sitn"), d.join("c.json"), d.join("s.csv"));
    write_latents(&zc, gaussian(400, 32, 1).view()).unwrap();
    write_latents(&zt, gaussian(50, 32, 2).view()).unwrap();
    ok(&["calibrate", "--latents", p(&zc), "--out", p(&cal), "--statistics", "ad,cv,ks"]);
    ok(&["score", "--latents", p(&zt), "--calibration", p(&cal), "--out", p(&out)]);
    let model: CalibrationModel<f64> = read_calibration(&cal).unwrap();
    let z = read_latents::<f64>(&zt).unwrap();
    let lib = score_latents(z.view(), model.statistics(), Some(&model)).unwrap();
    assert_eq!(read_scores(&out).unwrap(), lib);

    // Without a calibration only the raw statistics are filled in.
    let out = ok(&["score", "--latents", p(&zt)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lib = score_latents(z.view(), &[sitn::Statistic::AndersonDarling, sitn::Statistic::SpectralCv], None).unwrap();
    assert_eq!(sitn::io::records_from_csv(&text).unwrap(), lib);
}

#[test]
fn classify_controls_type_one_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (zc, zt, cal) = (d.join("zc.sitn"), d.join("zt.sitn"), d.join("c.json"));
    write_latents(&zc, gaussian(10_000, 16, 10).view()).unwrap();
    write_latents(&zt, gaussian(10_000, 16, 11).view()).unwrap();
    ok(&["calibrate", "--latents", p(&zc), "--out", p(&cal), "--seed", "4"]);
    let out = ok(&["classify", "--calibration", p(&cal), "--latents", p(&zt), "--alpha", "0.05"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let flagged = text.lines().skip(1).filter(|l| l.ends_with(",ood")).count();
    let frac = flagged as f64 / 10_000.0;
    assert!((0.03..=0.07).contains(&frac), "{frac}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("flagged"));
}

const TOY: &str = r#"
methods = ["sitn", "ad", "cv", "sitn_kde", "loglik", "typicality", "dose", "complexity"]

[scenario]
name = "variance_scaled"
dim = 4

[flow]
dim = 2
hidden = [16, 16]

[train]
steps = 40

[samples]
calibration = 60
test_id = 30
test_ood = 30
bootstrap_iterations = 200
"#;

#[test]
fn evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("toy.toml");
    std::fs::write(&cfg, TOY).unwrap();
    let (a, b) = (d.join("a"), d.join("b"));
    let run = |out: &Path| ok(&["evaluate", "--config", p(&cfg), "--seed", "5", "--out-dir", p(out)]);
    let first = run(&a);
    run(&b);
    for f in ["report.json", "scores.csv", "fpr_curve.csv", "auroc.csv", "summary.txt", "calibration.json", "flow.bin"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let auroc = std::fs::read_to_string(a.join("auroc.csv")).unwrap();
    assert!(auroc.starts_with("scenario,method,auroc,ci_low,ci_high\n"));
    assert!(auroc.contains("variance_scaled,dose,"));
    assert!(String::from_utf8(first.stdout).unwrap().contains("AUROC"));

    // The score table feeds `report`, which reproduces the bootstrap.
    let out = ok(&["report", "--scores", p(&a.join("scores.csv")), "--methods", "sitn,loglik", "--iterations", "200"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("method,auroc,ci_low,ci_high,iterations,seed\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn errors_carry_categories_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sitn(&["score", "--latents", "/nonexistent/z.sitn"]);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]:"));

    let bad = d.join("bad.sitn");
    std::fs::write(&bad, b"NOPE0000000000000000000000000000").unwrap();
    let out = sitn(&["score", "--latents", p(&bad)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[format]"));

    let cfg = d.join("c.toml");
    std::fs::write(&cfg, format!("{TOY}\nsurprise = 1\n")).unwrap();
    let out = sitn(&["evaluate", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));

    let z = d.join("z.sitn");
    write_latents(&z, gaussian(100, 8, 0).view()).unwrap();
    let out = sitn(&["calibrate", "--latents", p(&z), "--out", p(&d.join("c.json")), "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(3));

    let small = d.join("small.sitn");
    write_latents(&small, gaussian(5, 8, 0).view()).unwrap();
    let out = sitn(&["calibrate", "--latents", p(&small), "--out", p(&d.join("c.json"))]);
    assert_eq!(out.status.code(), Some(9));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[calibration]"));

    // Usage errors come from the argument parser.
    assert_eq!(sitn(&["score"]).status.code(), Some(2));
}
