//! Compiles and runs a small C program against the generated header and the
//! static library. Skipped (with a note) when no C compiler is available.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "mortpanel.h"

int main(void) {
    double x[5] = {1.0, 2.0, 3.0, 4.0, 5.0};
    double trend[5], cycle[5];
    if (mp_hp_filter(x, 5, 100.0, trend, cycle) != MP_STATUS_OK) return 10;
    for (int i = 0; i < 5; i++) if (cycle[i] != 0.0) return 11;

    const char *cfg = "{\"n_states\": 3, \"n_years\": 8, \"true_beta_u\": -0.5,"
        "\"error_process\": {\"kind\": \"iid\", \"sigma\": 0.0},"
        "\"trend_process\": {\"kind\": \"none\"}, \"seed\": 1}";
    MpPanel *panel = NULL;
    if (mp_panel_simulate(cfg, &panel) != MP_STATUS_OK) return 12;
    MpSpec spec = { MP_MODEL_TYPE_B, 2, "total", 100.0, MP_WEIGHTS_POP, true };
    MpFit *fit = NULL;
    if (mp_fit(panel, &spec, &fit) != MP_STATUS_OK) return 13;
    MpEffect e;
    if (mp_fit_effect(fit, false, &e) != MP_STATUS_OK) return 14;
    if (fabs(e.effect_100beta + 50.0) > 1e-8) return 15;
    if (mp_fit_aic(fit, &e.se_ols) != MP_STATUS_NOT_AVAILABLE) return 16;
    if (strlen(mp_last_error_message()) == 0) return 17;
    mp_fit_free(fit);
    mp_panel_free(panel);
    puts("ok");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_builds_and_runs() {
    let lib_dir = target_dir();
    if !lib_dir.join("libmortpanel_ffi.a").exists() {
        eprintln!("skipping: static library not found in {}", lib_dir.display());
        return;
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler ({cc})");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(lib_dir.join("libmortpanel_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mortpanel.h")).unwrap();
    for name in [
        "typedef struct MpPanel MpPanel",
        "typedef struct MpFit MpFit",
        "MP_STATUS_OK = 0",
        "mp_panel_load(",
        "mp_fit(",
        "mp_fit_effect(",
        "mp_hp_filter(",
        "mp_last_error_message(void)",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
