// Build metadata for `mmx --version`.
use std::process::Command;

fn main() {
    let var = |k: &str| std::env::var(k).unwrap_or_else(|_| "unknown".into());
    println!("cargo:rustc-env=MMX_BUILD_TARGET={}", var("TARGET"));
    println!("cargo:rustc-env=MMX_BUILD_PROFILE={}", var("PROFILE"));
    let rustc = Command::new(var("RUSTC"))
        .arg("--version")
        .output()
        .ok()
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into());
    println!("cargo:rustc-env=MMX_BUILD_RUSTC={rustc}");
    println!("cargo:rerun-if-changed=build.rs");
}
