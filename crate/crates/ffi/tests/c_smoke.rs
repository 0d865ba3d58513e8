//! Compiles a C program against the generated header and links it to the
//! static library built alongside these tests.

use std::path::PathBuf;
use std::process::Command;

/// `cargo test` links integration tests against the rlib only, so build the
/// static library explicitly and return the directory holding it.
fn build_static_lib() -> PathBuf {
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = Command::new(cargo)
        .args(["build", "--quiet", "--lib", "-p", "reward-lab-ffi"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .unwrap();
    assert!(status.success(), "building the static library failed");
    // tests run from target/<profile>/deps; `cargo build` writes to target/debug
    let exe = std::env::current_exe().unwrap();
    exe.ancestors().nth(3).unwrap().join("debug")
}

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = build_static_lib();
    assert!(lib_dir.join("libreward_lab_ffi.a").exists(), "static library not built in {lib_dir:?}");
    let out = tempfile::TempDir::new().unwrap();
    let exe = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c11", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(lib_dir.join("libreward_lab_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{}{}", stdout, String::from_utf8_lossy(&run.stderr));
    assert_eq!(stdout.trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn header_declares_every_export() {
    // build.rs rewrites the header on every build; pin the exported names
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/reward_lab.h")).unwrap();
    for name in [
        "rl_last_error",
        "rl_version",
        "rl_reward_spec_new",
        "rl_reward_spec_default",
        "rl_reward_spec_free",
        "rl_reward_spec_kind",
        "rl_derive_param",
        "rl_accuracy_reward",
        "rl_parse_response",
        "rl_composite_reward",
        "rl_correlation",
        "rl_group_advantages",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
