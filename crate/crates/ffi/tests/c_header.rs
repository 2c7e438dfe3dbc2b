//! Compile and run a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "fedmvc.h"

int main(void) {
    size_t dims[2] = {4, 5};
    FmvcDataset *ds = NULL;
    if (fmvc_dataset_synth(40, 2, dims, 2, 6.0, 3, &ds) != FMVC_STATUS_OK) return 10;
    if (fmvc_dataset_apply_missing(ds, 0.3, 3, 0.0) != FMVC_STATUS_OK) return 11;

    FmvcConfig cfg;
    if (fmvc_config_default(2, &cfg) != FMVC_STATUS_OK) return 12;
    cfg.rounds = 1; cfg.epochs = 3; cfg.pretrain_epochs = 3; cfg.k_neighbors = 5;
    cfg.ablation = FMVC_ABLATION_NO_MIGRATION;

    FmvcOutcome *out = NULL;
    if (fmvc_run(ds, &cfg, &out) != FMVC_STATUS_OK) { fprintf(stderr, "%s\n", fmvc_last_error()); return 13; }
    unsigned int labels[40];
    if (fmvc_outcome_labels(out, labels, 40) != FMVC_STATUS_OK) return 14;
    FmvcScores s;
    if (fmvc_outcome_metrics(out, fmvc_outcome_records(out) - 1, &s) != FMVC_STATUS_OK) return 15;
    if (fmvc_run(NULL, &cfg, &out) != FMVC_STATUS_NULL_POINTER) return 16;
    if (strlen(fmvc_last_error()) == 0) return 17;
    printf("version %s acc %.3f\n", fmvc_version(), s.acc);
    fmvc_outcome_free(out);
    fmvc_dataset_free(ds);
    return 0;
}
"#;

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn c_program_links_and_runs() {
    if !have_cc() {
        eprintln!("skipping: no C compiler on PATH");
        return;
    }
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = target_dir.join("libfedmvc_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let src = tmp.join("fedmvc_smoke.c");
    let bin = tmp.join("fedmvc_smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        run.status.success(),
        "C program exited with {:?}: {stdout} {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout.starts_with(&format!("version {}", env!("CARGO_PKG_VERSION"))), "{stdout}");
}
