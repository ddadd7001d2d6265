use std::path::Path;

use heavyball::dataio::{load_libsvm, parse_libsvm_str, write_synthetic_libsvm};
use heavyball::HingeLossProblem;
use heavyball::ProblemOracle;

fn bundled() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synth-10k.libsvm")
}

#[test]
fn bundled_dataset_matches_generator() {
    let mut buf = Vec::new();
    write_synthetic_libsvm(&mut buf, 10_000, 100, 10, 0.1, 7).unwrap();
    let on_disk = std::fs::read(bundled()).unwrap();
    assert!(on_disk == buf, "data/synth-10k.libsvm differs from `heavyball synth` defaults");
}

#[test]
fn bundled_dataset_loads_as_hinge_problem() {
    let data = load_libsvm(&bundled()).unwrap();
    assert_eq!(data.len(), 10_000);
    let p = HingeLossProblem::from_dataset(&data, 20.0).unwrap();
    assert_eq!(p.dim(), 100);
    // the origin classifies nothing, so every sample contributes margin 1
    assert!((p.value(&heavyball::Vector::zeros(100)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn generated_text_round_trips() {
    let mut buf = Vec::new();
    write_synthetic_libsvm(&mut buf, 50, 8, 3, 0.0, 1).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let data = parse_libsvm_str(&text, "inline").unwrap();
    assert_eq!(data.len(), 50);
}
