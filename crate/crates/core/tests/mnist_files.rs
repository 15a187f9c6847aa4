//! Checks against the real MNIST files. Skipped (with a note) when the
//! files are not present.

mod common;

use ssnn_bp::data::{
    load_dataset, load_idx_images, load_idx_labels, parse_idx_images, subsample, write_idx_images, write_idx_labels,
    DatasetKind,
};
use ssnn_bp::rng::RngStream;
use ssnn_bp::Error;

fn mnist_present() -> bool {
    let ok = common::has_dataset("mnist");
    if !ok {
        eprintln!("MNIST not found under {}; skipping", common::data_dir().display());
    }
    ok
}

#[test]
fn published_shapes_and_label_range() {
    if !mnist_present() {
        return;
    }
    let [tr_img, tr_lbl, te_img, te_lbl] = DatasetKind::Mnist.paths(&common::data_dir());
    let images = load_idx_images(&tr_img).unwrap();
    assert_eq!((images.n, images.rows, images.cols), (60_000, 28, 28));
    let labels = load_idx_labels(&tr_lbl).unwrap();
    assert_eq!(labels.len(), 60_000);
    assert!(labels.iter().all(|&l| l <= 9));
    assert_eq!(load_idx_images(&te_img).unwrap().n, 10_000);
    assert_eq!(load_idx_labels(&te_lbl).unwrap().len(), 10_000);

    let (train, test) = load_dataset(DatasetKind::Mnist, &common::data_dir(), false).unwrap();
    DatasetKind::Mnist.check_published_sizes(train.len(), test.len()).unwrap();
}

#[test]
fn idx_roundtrip_is_byte_identical() {
    if !mnist_present() {
        return;
    }
    let [_, _, te_img, te_lbl] = DatasetKind::Mnist.paths(&common::data_dir());
    let dir = tempfile::tempdir().unwrap();
    let images = load_idx_images(&te_img).unwrap();
    let labels = load_idx_labels(&te_lbl).unwrap();
    write_idx_images(dir.path().join("img"), &images).unwrap();
    write_idx_labels(dir.path().join("lbl"), &labels).unwrap();
    assert_eq!(std::fs::read(dir.path().join("img")).unwrap(), std::fs::read(&te_img).unwrap());
    assert_eq!(std::fs::read(dir.path().join("lbl")).unwrap(), std::fs::read(&te_lbl).unwrap());
}

#[test]
fn truncated_and_mislabeled_files_are_rejected() {
    if !mnist_present() {
        return;
    }
    let [_, _, te_img, te_lbl] = DatasetKind::Mnist.paths(&common::data_dir());
    let bytes = std::fs::read(&te_img).unwrap();
    match parse_idx_images(&bytes[..bytes.len() - 10]) {
        Err(Error::Format { message, .. }) => assert!(message.contains("7840000"), "{message}"),
        other => panic!("expected format error, got {other:?}"),
    }
    let labels = std::fs::read(&te_lbl).unwrap();
    assert!(matches!(parse_idx_images(&labels), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn stratified_subsample_of_real_training_set() {
    if !mnist_present() {
        return;
    }
    let (train, _) = load_dataset(DatasetKind::Mnist, &common::data_dir(), false).unwrap();
    let counts = train.class_counts();
    let sub = subsample(&train, 30_000, &RngStream::new(5, 0)).unwrap();
    assert_eq!(sub.len(), 30_000);
    for (c, (&full, &got)) in counts.iter().zip(&sub.class_counts()).enumerate() {
        let exact = 30_000.0 * full as f64 / 60_000.0;
        assert!((got as f64 - exact).abs() <= 1.0, "class {c}: {got} vs {exact}");
    }
    let again = subsample(&train, 30_000, &RngStream::new(5, 0)).unwrap();
    assert_eq!(sub.labels(), again.labels());
    assert!(matches!(subsample(&train, 60_001, &RngStream::new(5, 0)), Err(Error::InputDomain(_))));
}
