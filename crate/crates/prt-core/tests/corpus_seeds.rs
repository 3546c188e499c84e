//! Every fuzz corpus seed must be a *valid* input for its parser — stale or
//! malformed seeds quietly gut coverage-guided fuzzing.

use std::fs;
use std::path::PathBuf;

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("missing corpus dir {}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn check<T, E: std::fmt::Display>(target: &str, parse: impl Fn(&[u8]) -> Result<T, E>) {
    for (path, bytes) in corpus(target) {
        if let Err(e) = parse(&bytes) {
            panic!("seed {} does not parse: {e}", path.display());
        }
    }
}

fn text<T>(parse: impl Fn(&str) -> prt_core::Result<T>) -> impl Fn(&[u8]) -> prt_core::Result<T> {
    move |bytes| {
        let s = std::str::from_utf8(bytes)
            .map_err(|e| prt_core::Error::format(format!("not utf-8: {e}")))?;
        parse(s)
    }
}

#[test]
fn every_corpus_seed_parses() {
    check("obj_parse", text(prt_core::mesh::parse_obj));
    check("sdf_scene_parse", text(prt_core::sdf::parse_sdf_scene));
    check("dataset_parse", |b| prt_core::bake::parse_dataset(b));
    check("model_parse", text(prt_core::mlp::model_from_json));
    check("clustered_parse", text(prt_core::partition::clustered_from_json));
    check("pfm_parse", |b| prt_core::image::parse_pfm(b));
    check("hdr_parse", |b| prt_core::image::parse_hdr(b));
    check("tau_parse", |b| prt_core::triple::parse_tau(b));
    check("scene_config_parse", text(prt_core::scene::SceneConfig::from_json));
}
