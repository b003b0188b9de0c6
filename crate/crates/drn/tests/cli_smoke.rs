//! End-to-end CLI contract: synth -> train -> eval -> upscale through the
//! real binary, with a deliberately tiny config so the whole chain runs in
//! seconds. Also pins the exit-code convention (0 ok, 1 usage, 2 runtime).

use std::process::{Command, Output};

fn drn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drn"))
        .args(args)
        .output()
        .expect("spawn drn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

#[test]
fn synth_train_eval_upscale_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run1");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "scale = 2\nwidth = 4\nn_res = 1\ncrop = 16\nbatch = 1\niterations = 3\n",
    )
    .unwrap();

    let out = drn(&["synth", "--count", "3", "--size", "32", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "synth failed: {}", String::from_utf8_lossy(&out.stderr));

    let out = drn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "train failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("final.drn").exists(), "missing final.drn");
    let log = std::fs::read_to_string(run.join("metrics.log")).expect("missing metrics.log");
    assert_eq!(log.lines().count(), 3, "one log line per iteration:\n{log}");
    for line in log.lines() {
        assert_eq!(line.split('\t').count(), 3, "iteration\\tloss\\tlr: {line}");
    }

    let ckpt = run.join("final.drn");
    let out = drn(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--scale",
        "2",
    ]);
    assert_eq!(code(&out), 0, "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("psnr"), "missing header in:\n{table}");
    assert!(table.contains("synth000"), "missing per-image row in:\n{table}");
    assert!(table.contains("MEAN"), "missing MEAN row in:\n{table}");

    // checkpoint says 2x; asking for 4x is a runtime error
    let out = drn(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--scale",
        "4",
    ]);
    assert_eq!(code(&out), 2, "scale mismatch must exit 2");

    let sr = dir.path().join("sr.png");
    let input = data.join("synth000.png");
    let out = drn(&[
        "upscale",
        input.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        sr.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "upscale failed: {}", String::from_utf8_lossy(&out.stderr));
    let img = drn::imaging::load_image(&sr).unwrap();
    assert_eq!((img.height(), img.width()), (64, 64), "2x of a 32px input");
}

#[test]
fn gradcheck_exit_codes() {
    let out = drn(&["gradcheck", "--eps", "1e-5", "--tolerance", "1e-4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("objective_eq7"), "suite listing missing:\n{text}");

    // an impossible tolerance turns the same run into a runtime failure
    let out = drn(&["gradcheck", "--eps", "1e-5", "--tolerance", "1e-18"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_input_is_runtime_error() {
    let out = drn(&["eval", "--checkpoint", "/no/such.drn", "--data", "/no/dir"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty(), "runtime errors report on stderr");
}
