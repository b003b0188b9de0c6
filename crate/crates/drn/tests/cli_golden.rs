//! Golden-file checks for `--help`: the rendered text is pinned under
//! tests/golden/ so flag renames or removals show up in review, and every
//! accepted flag must be enumerated in the help of its subcommand.
//!
//! Regenerate after an intentional CLI change with
//! `UPDATE_GOLDEN=1 cargo test -p drn --test cli_golden`.

use std::path::PathBuf;
use std::process::Command;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn help_output(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_drn"))
        .args(args)
        .arg("--help")
        .output()
        .expect("spawn drn");
    assert!(
        out.status.success(),
        "`drn {} --help` exited with {:?}",
        args.join(" "),
        out.status.code()
    );
    assert!(out.stderr.is_empty(), "help must go to stdout");
    String::from_utf8(out.stdout).expect("help is utf-8")
}

fn check_golden(name: &str, args: &[&str], flags: &[&str]) {
    let text = help_output(args);
    for flag in flags {
        assert!(
            text.contains(flag),
            "`drn {} --help` does not mention {flag}",
            args.join(" ")
        );
    }
    let path = golden_dir().join(format!("help_{name}.txt"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, &text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(
        text,
        want,
        "`drn {} --help` drifted from {}; rerun with UPDATE_GOLDEN=1 if intended",
        args.join(" "),
        path.display()
    );
}

#[test]
fn top_level_help_lists_every_subcommand() {
    check_golden(
        "main",
        &[],
        &[
            "train", "eval", "upscale", "ablate", "bounds", "gradcheck", "synth", "--help",
            "--version",
        ],
    );
}

#[test]
fn train_help_lists_every_flag() {
    check_golden(
        "train",
        &["train"],
        &[
            "--config",
            "--preset",
            "--scale",
            "--seed",
            "--no-dual",
            "--no-progressive",
            "--data",
            "--eval-data",
            "--out",
        ],
    );
}

#[test]
fn eval_help_lists_every_flag() {
    check_golden(
        "eval",
        &["eval"],
        &["--checkpoint", "--data", "--scale", "--channel", "--shave"],
    );
}

#[test]
fn upscale_help_lists_every_flag() {
    check_golden("upscale", &["upscale"], &["<INPUT>", "--checkpoint", "--out"]);
}

#[test]
fn ablate_help_lists_every_flag() {
    check_golden(
        "ablate",
        &["ablate"],
        &[
            "--config",
            "--preset",
            "--scale",
            "--seed",
            "--data",
            "--eval-data",
            "--out",
        ],
    );
}

#[test]
fn bounds_help_lists_every_flag() {
    check_golden(
        "bounds",
        &["bounds"],
        &["--table", "--delta", "--draws", "--seed"],
    );
}

#[test]
fn gradcheck_help_lists_every_flag() {
    check_golden("gradcheck", &["gradcheck"], &["--eps", "--tolerance"]);
}

#[test]
fn synth_help_lists_every_flag() {
    check_golden(
        "synth",
        &["synth"],
        &["--count", "--size", "--seed", "--out"],
    );
}
