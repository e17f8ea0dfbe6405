//! Exit-code contract and subcommand behavior of the `ccp` binary.

use std::process::{Command, Output};

fn ccp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

#[test]
fn help_exits_zero_with_usage() {
    let out = ccp(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "{text}");
    assert!(text.contains("attack"));
    assert!(text.contains("experiment"));
}

#[test]
fn unknown_flag_exits_one() {
    let out = ccp(&["attack", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("out.bin");
    let out = ccp(&[
        "attack",
        "--method",
        "ccp",
        "--in",
        dir.path().join("absent.bin").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    // all-or-nothing: nothing written on a failed invocation
    assert!(!out_path.exists());
}

#[test]
fn invalid_population_exits_one_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.bin");
    assert_eq!(
        code(&ccp(&[
            "gen-synthetic",
            "--num-per-class",
            "2",
            "--size",
            "8",
            "--seed",
            "3",
            "--out",
            data.to_str().unwrap(),
        ])),
        0
    );
    // train a throwaway checkpoint first
    let ckpt = dir.path().join("model.ckpt");
    assert_eq!(
        code(&ccp(&[
            "train",
            "--train",
            data.to_str().unwrap(),
            "--height",
            "8",
            "--width",
            "8",
            "--epochs",
            "1",
            "--batch",
            "3",
            "--out",
            ckpt.to_str().unwrap(),
        ])),
        0
    );
    let out_path = dir.path().join("attacked.bin");
    let out = ccp(&[
        "attack",
        "--method",
        "onepixel",
        "--pop",
        "2",
        "--iters",
        "1",
        "--model",
        ckpt.to_str().unwrap(),
        "--in",
        data.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_path.exists());
}

#[test]
fn gen_synthetic_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for path in [&a, &b] {
        let out = ccp(&[
            "gen-synthetic",
            "--num-per-class",
            "3",
            "--size",
            "8",
            "--seed",
            "77",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // 9 records of 1 + 8*8*3 bytes
    assert_eq!(std::fs::read(&a).unwrap().len(), 9 * 193);
}

#[test]
fn ccp_attack_round_trips_through_ppm_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.bin");
    ccp(&[
        "gen-synthetic",
        "--num-per-class",
        "2",
        "--size",
        "8",
        "--seed",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    let ppm_dir = dir.path().join("attacked");
    let out = ccp(&[
        "attack",
        "--method",
        "ccp",
        "--scheme",
        "fixed",
        "--scale",
        "1",
        "--bias",
        "0",
        "--seed",
        "4",
        "--in",
        data.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
        "--out",
        ppm_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let count = std::fs::read_dir(&ppm_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().and_then(|x| x.to_str()) == Some("ppm")
        })
        .count();
    assert_eq!(count, 6);
}

#[test]
fn hist_emits_769_lines() {
    let dir = tempfile::tempdir().unwrap();
    let ppm = dir.path().join("img.ppm");
    // 2x2 gray pixels
    std::fs::write(&ppm, b"P6\n2 2\n255\n\x10\x10\x10\x20\x20\x20\x30\x30\x30\x40\x40\x40")
        .unwrap();
    let csv = dir.path().join("hist.csv");
    let out = ccp(&[
        "hist",
        "--in",
        ppm.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 3 * 256);
    assert_eq!(lines[0], "channel,bin,count");
    assert!(lines.contains(&"r,16,1"));
    assert!(lines.contains(&"g,32,1"));
}

#[test]
fn train_then_eval_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.bin");
    ccp(&[
        "gen-synthetic",
        "--num-per-class",
        "8",
        "--size",
        "8",
        "--seed",
        "21",
        "--out",
        data.to_str().unwrap(),
    ]);
    let ckpt = dir.path().join("model.ckpt");
    let out = ccp(&[
        "train",
        "--train",
        data.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
        "--epochs",
        "3",
        "--batch",
        "8",
        "--seed",
        "1",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    let out = ccp(&[
        "eval",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("accuracy 0.") || text.starts_with("accuracy 1."), "{text}");
}

#[test]
fn bad_lr_schedule_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.bin");
    ccp(&[
        "gen-synthetic",
        "--num-per-class",
        "2",
        "--size",
        "8",
        "--seed",
        "2",
        "--out",
        data.to_str().unwrap(),
    ]);
    let ckpt = dir.path().join("model.ckpt");
    let out = ccp(&[
        "train",
        "--train",
        data.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
        "--epochs",
        "4",
        "--lr-schedule",
        "2x0.001",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(!ckpt.exists());
}

#[test]
fn corrupt_record_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.bin");
    ccp(&[
        "gen-synthetic",
        "--num-per-class",
        "2",
        "--size",
        "8",
        "--seed",
        "6",
        "--out",
        good.to_str().unwrap(),
    ]);
    let ckpt = dir.path().join("model.ckpt");
    ccp(&[
        "train",
        "--train",
        good.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
        "--epochs",
        "1",
        "--batch",
        "3",
        "--out",
        ckpt.to_str().unwrap(),
    ]);

    let data = dir.path().join("corrupt.bin");
    // one 8x8 record with a label byte outside the declared class range
    let mut bytes = vec![250u8];
    bytes.extend(vec![0u8; 192]);
    std::fs::write(&data, bytes).unwrap();
    let out = ccp(&[
        "eval",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--height",
        "8",
        "--width",
        "8",
        "--num-classes",
        "3",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
