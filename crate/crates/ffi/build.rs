use std::env;
use std::fs;
use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let config = cbindgen::Config::from_file(dir.join("cbindgen.toml")).expect("reading cbindgen.toml");
    let bindings = cbindgen::Builder::new()
        .with_crate(&dir)
        .with_config(config)
        .generate()
        .expect("generating C header");
    let mut header = Vec::new();
    bindings.write(&mut header);
    let target = dir.join("include").join("hcg.h");
    // rewrite only on change so the header's mtime stays stable
    if fs::read(&target).ok().as_deref() != Some(&header[..]) {
        fs::create_dir_all(target.parent().unwrap()).unwrap();
        fs::write(&target, header).unwrap();
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
