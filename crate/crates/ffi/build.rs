//! Regenerates the committed C header from the exported items. A
//! generation failure only warns, so downstream builds never depend on
//! cbindgen succeeding in their environment.

use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("set by cargo"));
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(crate_dir.join("include").join("phenovlp.h"));
        }
        Err(e) => println!("cargo:warning=header not regenerated: {e}"),
    }
}
