//! Compiles and links a C program against the generated header and static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "poem_lab.h"

int main(void) {
    PoemChainDag *dag = NULL;
    if (poem_chaindag_new(256, 20, 5, POEM_RULE_POEM, false, &dag) != POEM_STATUS_OK) return 1;
    PoemBlock b;
    memset(&b, 0, sizeof b);
    b.id = 1;
    b.level = POEM_LEVEL_SUBORDINATE;
    b.height = 1;
    b.hash[31 - 235 / 8] = 1 << (235 % 8);
    PoemInsertOutcome outcome;
    if (poem_chaindag_insert(dag, &b, &outcome) != POEM_STATUS_OK || outcome != POEM_INSERT_OUTCOME_NEW_TIP) return 2;
    PoemWeight w;
    if (poem_chaindag_weight(dag, 1, &w) != POEM_STATUS_OK || w.whole != 21 || w.fraction != 0) return 3;
    if (poem_chaindag_weight(dag, 7, &w) != POEM_STATUS_UNKNOWN_BLOCK || poem_last_error() == NULL) return 4;
    poem_chaindag_free(dag);
    char *json = NULL;
    if (poem_bounds_json(20, 5, 0, 256, &json) != POEM_STATUS_OK || strstr(json, "\"entropy_min_blocks\":2") == NULL) return 5;
    poem_string_free(json);
    puts("ok");
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    // Integration test binaries live in target/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libpoem_lab_ffi.a");
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let src = tmp.join("ffi_smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();

    let syntax = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"]).arg(&include).arg(&src).status();
    let Ok(syntax) = syntax else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(syntax.success(), "header does not compile as C99");
    if !lib.exists() {
        eprintln!("{} not built; header checked only", lib.display());
        return;
    }
    let bin = tmp.join("ffi_smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "link failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
