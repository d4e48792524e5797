fn main() {
    #[cfg(feature = "generate-header")]
    {
        let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
        let config = cbindgen::Config::from_file(format!("{crate_dir}/cbindgen.toml"))
            .expect("cbindgen.toml");
        cbindgen::Builder::new()
            .with_config(config)
            .with_crate(&crate_dir)
            .generate()
            .expect("unable to generate bindings")
            .write_to_file(format!("{crate_dir}/include/contrail_seg.h"));
    }
}
