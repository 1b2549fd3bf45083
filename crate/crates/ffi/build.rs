use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(
        env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR env var is not defined"),
    );
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml"))
        .expect("unable to read cbindgen.toml");
    match cbindgen::generate_with_config(&crate_dir, config) {
        Ok(writer) => {
            writer.write_to_file(crate_dir.join("include").join("graphwave.h"));
        }
        Err(e) => {
            // header generation failures should not mask compile errors in
            // the crate itself; surface them as a warning
            println!("cargo:warning=cbindgen failed: {e}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
