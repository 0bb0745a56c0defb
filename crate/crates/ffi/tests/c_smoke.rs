use std::path::PathBuf;
use std::process::Command;

/// `target/<profile>/deps` under `cargo test`, `target/<profile>` after a build.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let found = [deps, deps.parent().unwrap()]
        .into_iter()
        .find(|d| d.join("libxlzero_ffi.so").exists())
        .unwrap_or(deps)
        .to_path_buf();
    found
}

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = artifact_dir();
    assert!(
        lib_dir.join("libxlzero_ffi.so").exists(),
        "shared library missing in {}",
        lib_dir.display()
    );
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests").join("smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lxlzero_ffi", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler");
    assert!(status.success());
    let lexicon = tmp.path().join("lex.txt");
    std::fs::write(&lexicon, "hello hallo\nworld welt\n").unwrap();
    let out = Command::new(&exe).arg(&lexicon).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("c smoke ok"));
}
