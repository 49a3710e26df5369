#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn m3(dir: &Path, args: &[&str]) -> Output {
    m3_threads(dir, args, None)
}

/// Runs the binary in `dir`, optionally capping its worker threads.
pub fn m3_threads(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_m3"));
    cmd.current_dir(dir).args(args).env_remove("M3_THREADS");
    if let Some(t) = threads {
        cmd.env("M3_THREADS", t);
    }
    cmd.output().expect("m3 runs")
}

pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "m3 failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Writes the synthetic dataset into `dir`.
pub fn synth(dir: &Path) {
    ok(&m3(dir, &["synth", "--out", "."]));
}
