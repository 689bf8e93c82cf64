use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/synthetic")
        .join(name)
}

fn pmiris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmiris"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = pmiris(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn identical_files_score_zero() {
    let a = fixture("id000_c0.png");
    let v = ok_json(&["match", "--encoder", "gabor2d", p(&a), p(&a)]);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["score"], 0.0);
    assert_eq!(results[0]["best_shift"], 0);
}

#[test]
fn run_eval_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("one");
    let out2 = dir.path().join("two");
    let meta = fixture("metadata.csv");
    let masks = fixture("");
    let report = ok_json(&[
        "run-eval",
        "--metadata",
        p(&meta),
        "--masks",
        p(&masks),
        "--out",
        p(&out1),
        "--jobs",
        "1",
    ]);
    assert_eq!(report["n_genuine_pairs"], 6);
    assert_eq!(report["n_impostor_pairs"], 9);
    let encoders = report["encoders"].as_array().unwrap();
    assert_eq!(encoders.len(), 3);
    for e in encoders {
        let labels: Vec<&str> = e["slices"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["slice"].as_str().unwrap())
            .collect();
        assert_eq!(labels, ["0-24h", "0-72h", "0-240h", "all"]);
        let all = &e["slices"][3];
        assert_eq!(all["n_genuine"], 6);
        assert_eq!(all["n_impostor"], 9);
        assert_eq!(all["eer"], 0.0);
        assert!(e["by_gender"]["male"]["n_genuine"] == 3);
        assert!(e["by_gender"]["mixed"]["n_impostor"] == 9);
    }
    let csv = std::fs::read_to_string(out1.join("scores_gabor2d.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    assert_eq!(rows.iter().filter(|r| r.contains(",genuine,")).count(), 6);
    assert_eq!(rows.iter().filter(|r| r.contains(",impostor,")).count(), 9);

    // Output does not depend on the worker count.
    ok_json(&[
        "run-eval",
        "--metadata",
        p(&meta),
        "--masks",
        p(&masks),
        "--out",
        p(&out2),
        "--jobs",
        "3",
    ]);
    for enc in ["gabor2d", "loggabor1d", "bif"] {
        let f = format!("scores_{enc}.csv");
        assert_eq!(
            std::fs::read(out1.join(&f)).unwrap(),
            std::fs::read(out2.join(&f)).unwrap()
        );
    }

    let stats = ok_json(&[
        "stats",
        "--scores",
        p(&out1.join("scores_bif.csv")),
        "--by",
        "gender",
        "--seed",
        "3",
    ]);
    assert!(stats["groups"]["male"]["error"].is_string(), "{stats}");
}

#[test]
fn pairs_enumeration() {
    let v = ok_json(&["pairs", "--metadata", p(&fixture("metadata.csv"))]);
    assert_eq!(v["n_genuine"], 6);
    assert_eq!(v["n_impostor"], 9);
    assert_eq!(v["pairs"][0]["probe_id"], "id000_c0");
    assert_eq!(v["pairs"][0]["gallery_id"], "id000_c1");
}

#[test]
fn pad_eval_reports_both_levels() {
    let dir = tempfile::tempdir().unwrap();
    let bf = dir.path().join("bf.csv");
    let pa = dir.path().join("pa.csv");
    std::fs::write(&bf, "sample,score\na,0.1\nb,0.2\nc,0.3\n").unwrap();
    std::fs::write(&pa, "0.7\n0.8\n0.9\n").unwrap();
    let v = ok_json(&[
        "pad-eval",
        "--bona-fide",
        p(&bf),
        "--attacks",
        p(&pa),
        "--apcer",
        "0.0001,0.01",
    ]);
    let levels = v["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    for l in levels {
        assert_eq!(l["one_minus_bpcer"], 1.0);
    }
    assert_eq!(v["auc"], 1.0);
    let v = ok_json(&["pad-eval", "--bona-fide", p(&bf), "--attacks", p(&pa), "--apcer", "0.5"]);
    assert_eq!(v["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    assert_eq!(pmiris(&["match"]).status.code(), Some(1));
    assert_eq!(pmiris(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        pmiris(&["--set", "bogus=1", "pairs", "--metadata", "x.csv"])
            .status
            .code(),
        Some(1)
    );
    let missing = pmiris(&["quality", "/definitely/not/here.png"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not/here.png"));
    assert_eq!(pmiris(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let blank = dir.path().join("blank.pgm");
    let mut pgm = b"P5\n64 64\n255\n".to_vec();
    pgm.extend(std::iter::repeat_n(90u8, 64 * 64));
    std::fs::write(&blank, pgm).unwrap();
    assert_eq!(pmiris(&["segment", p(&blank)]).status.code(), Some(2));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pm.conf");
    std::fs::write(&cfg, "# no rotation search\nmax_shift = 0\n").unwrap();
    let a = fixture("id000_c0.png");
    let b = fixture("id000_c1.png");
    let v = ok_json(&["--config", p(&cfg), "match", "--encoder", "loggabor1d", p(&a), p(&b)]);
    assert_eq!(v["results"][0]["best_shift"], 0);
    let v = ok_json(&[
        "--config",
        p(&cfg),
        "--set",
        "max_shift=16",
        "match",
        "--encoder",
        "loggabor1d",
        p(&a),
        p(&b),
    ]);
    assert_ne!(v["results"][0]["best_shift"], 0);

    std::fs::write(&cfg, "max_shift 3\n").unwrap();
    assert_eq!(
        pmiris(&["--config", p(&cfg), "pairs", "--metadata", "x"]).status.code(),
        Some(1)
    );
}

#[test]
fn stage_commands_and_template_matching() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture("id001_c0.png");
    let b = fixture("id001_c1.png");
    let seg = ok_json(&["segment", p(&a), "--mask", p(&fixture("id001_c0_mask.png"))]);
    assert!(seg["iris"]["r"].as_f64().unwrap() > 100.0);

    let prefix = dir.path().join("polar");
    let norm = ok_json(&["normalize", p(&a), "--out", p(&prefix)]);
    assert_eq!(norm["rows"], 64);
    assert_eq!(norm["cols"], 512);
    assert!(dir.path().join("polar.pgm").exists());

    let q = ok_json(&["quality", p(&a)]);
    assert!(q["SHARPNESS"].is_number());

    let ta = dir.path().join("a.pmit");
    let tb = dir.path().join("b.pmit");
    let info = ok_json(&["encode", p(&a), "--encoder", "bif", "--out", p(&ta)]);
    assert_eq!(info["encoder"], "bif");
    ok_json(&["encode", p(&b), "--encoder", "bif", "--out", p(&tb)]);
    let from_templates = ok_json(&["match", p(&ta), p(&tb)]);
    let from_images = ok_json(&["match", "--encoder", "bif", p(&a), p(&b)]);
    assert_eq!(
        from_templates["results"][0]["score"],
        from_images["results"][0]["score"]
    );
    assert_eq!(pmiris(&["match", p(&ta), p(&b)]).status.code(), Some(1));
}

#[test]
fn gallery_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    let meta = fixture("metadata.csv");
    // Enroll the first capture of each subject through a reduced metadata file.
    let text = std::fs::read_to_string(&meta).unwrap();
    let reduced: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains("_c1") && !l.contains("_c2"))
        .collect();
    let reduced_path = dir.path().join("enroll.csv");
    std::fs::write(&reduced_path, reduced.join("\n") + "\n").unwrap();
    let images = fixture("");
    let v = ok_json(&[
        "enroll",
        "--gallery",
        p(&gallery),
        "--encoder",
        "loggabor1d",
        "--metadata",
        p(&reduced_path),
        "--images",
        p(&images),
    ]);
    assert_eq!(v["enrolled"].as_array().unwrap().len(), 2);
    let again = pmiris(&[
        "enroll",
        "--gallery",
        p(&gallery),
        "--encoder",
        "loggabor1d",
        "--metadata",
        p(&reduced_path),
        "--images",
        p(&images),
    ]);
    assert_eq!(again.status.code(), Some(2));

    let probe = fixture("id001_c2.png");
    let v = ok_json(&[
        "identify",
        "--gallery",
        p(&gallery),
        "--encoder",
        "loggabor1d",
        "-k",
        "5",
        p(&probe),
    ]);
    let c = v["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c[0]["subject_id"], "subj001");
}

#[test]
fn synth_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        ok_json(&[
            "synth",
            "--out",
            p(&dir.path().join(run)),
            "--identities",
            "1",
            "--captures",
            "1",
            "--seed",
            "42",
            "--format",
            "pgm",
        ]);
    }
    let f = |run: &str| std::fs::read(dir.path().join(run).join("id000_c0.pgm")).unwrap();
    assert_eq!(f("a"), f("b"));
}

#[test]
fn balance_reports_audit_trail() {
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("m.csv");
    std::fs::write(
        &meta,
        "sample_id,subject_id,eye,session,pmi_hours,age_years,gender,image_path\n\
         a1,a,left,1,10,40,male,a1.png\n\
         a2,a,left,1,20,40,male,a2.png\n\
         b1,b,left,1,10,40,female,b1.png\n\
         b2,b,left,1,20,40,female,b2.png\n\
         b3,b,left,1,90,40,female,b3.png\n",
    )
    .unwrap();
    let v = ok_json(&["balance", "--metadata", p(&meta), "--by", "gender", "--min-size", "1"]);
    assert_eq!(v["removed"][0]["sample_id"], "b3");
    assert_eq!(v["means"]["female"], 15.0);
    assert_eq!(v["means"]["male"], 15.0);
}
