//! Model file robustness and dataset format interchange.

use acqh::io::{
    load_dataset, model_from_bytes, model_to_bytes, read_model, write_labels_csv, write_model,
    write_real_matrix_csv, DatasetFormat, DatasetPaths,
};
use acqh::synth::synth_dataset;
use acqh::trainer::init_model;
use acqh::{Error, Hyperparams};

fn small_model() -> acqh::AcqhModel {
    let bundle = synth_dataset(3, 5, 6, 5, 0.05, 4).unwrap();
    let hyper = Hyperparams {
        k: 4,
        m: 2,
        n: 5,
        max_iters: 0,
        ..Hyperparams::default()
    };
    init_model(&bundle.x, &bundle.y, &bundle.labels, &hyper).unwrap()
}

#[test]
fn model_file_round_trips_through_disk() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.acqh");
    write_model(&path, &model).unwrap();
    let loaded = read_model(&path).unwrap();
    assert_eq!(model, loaded);
    // The atomic write leaves no temp file behind.
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("model.acqh")]);
}

#[test]
fn model_with_flipped_magic_is_rejected() {
    let mut bytes = model_to_bytes(&small_model());
    bytes[0] ^= 0x01;
    assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn model_with_unknown_version_is_rejected() {
    let mut bytes = model_to_bytes(&small_model());
    bytes[4] = 99;
    assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn truncated_model_is_rejected() {
    let bytes = model_to_bytes(&small_model());
    for cut in [bytes.len() - 1, bytes.len() / 2, 7] {
        assert!(
            matches!(model_from_bytes(&bytes[..cut]), Err(Error::Format(_))),
            "cut at {}",
            cut
        );
    }
}

#[test]
fn oversized_model_payload_is_rejected() {
    let mut bytes = model_to_bytes(&small_model());
    bytes.push(0);
    assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn wide_codebooks_use_sixteen_bit_codes() {
    let bundle = synth_dataset(3, 4, 5, 4, 0.05, 6).unwrap();
    let hyper = Hyperparams {
        k: 3,
        m: 2,
        n: 300,
        max_iters: 0,
        ..Hyperparams::default()
    };
    let model = init_model(&bundle.x, &bundle.y, &bundle.labels, &hyper).unwrap();
    assert_eq!(acqh::io::code_entry_bytes(300), 2);
    let bytes = model_to_bytes(&model);
    let header = 4 + 4 + 7 * 4 + 8 + 8 + 4 + 8 + 8 + 8;
    let reals = (5 * 3 + 4 * 3 + 3 * 2 * 300 + 3 * 3 + 12) * 8;
    assert_eq!(bytes.len() - header - reals, 12 * 2 * 2, "codes at 2 bytes per atom");
    let loaded = model_from_bytes(&bytes).unwrap();
    assert_eq!(model, loaded);
}

#[test]
fn csv_and_binary_datasets_load_identically() {
    let bundle = synth_dataset(3, 6, 4, 3, 0.1, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save_binary(dir.path()).unwrap();

    let q = bundle.query.as_ref().unwrap();
    write_real_matrix_csv(&dir.path().join("x.csv"), bundle.x.data()).unwrap();
    write_real_matrix_csv(&dir.path().join("y.csv"), bundle.y.data()).unwrap();
    write_labels_csv(&dir.path().join("labels.csv"), &bundle.labels).unwrap();
    write_real_matrix_csv(&dir.path().join("query_x.csv"), q.x.data()).unwrap();
    write_real_matrix_csv(&dir.path().join("query_y.csv"), q.y.data()).unwrap();
    write_labels_csv(&dir.path().join("query_labels.csv"), &q.labels).unwrap();

    let binary = load_dataset(
        &DatasetPaths {
            x: dir.path().join("x.acqd"),
            y: dir.path().join("y.acqd"),
            labels: dir.path().join("labels.acqd"),
            query_x: Some(dir.path().join("query_x.acqd")),
            query_y: Some(dir.path().join("query_y.acqd")),
            query_labels: Some(dir.path().join("query_labels.acqd")),
        },
        DatasetFormat::Binary,
    )
    .unwrap();
    let csv = load_dataset(
        &DatasetPaths {
            x: dir.path().join("x.csv"),
            y: dir.path().join("y.csv"),
            labels: dir.path().join("labels.csv"),
            query_x: Some(dir.path().join("query_x.csv")),
            query_y: Some(dir.path().join("query_y.csv")),
            query_labels: Some(dir.path().join("query_labels.csv")),
        },
        DatasetFormat::Csv,
    )
    .unwrap();
    assert_eq!(binary, csv);
    assert_eq!(binary, bundle);
}

#[test]
fn partial_query_split_is_rejected() {
    let bundle = synth_dataset(3, 6, 4, 3, 0.1, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save_binary(dir.path()).unwrap();
    let result = load_dataset(
        &DatasetPaths {
            x: dir.path().join("x.acqd"),
            y: dir.path().join("y.acqd"),
            labels: dir.path().join("labels.acqd"),
            query_x: Some(dir.path().join("query_x.acqd")),
            query_y: None,
            query_labels: None,
        },
        DatasetFormat::Binary,
    );
    assert!(matches!(result, Err(Error::InvalidArgument(_))));
}

#[test]
fn mismatched_item_counts_are_rejected() {
    let bundle = synth_dataset(3, 6, 4, 3, 0.1, 12).unwrap();
    let other = synth_dataset(3, 4, 4, 3, 0.1, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save_binary(dir.path()).unwrap();
    // Overwrite y with a file holding a different item count.
    acqh::io::write_real_matrix(&dir.path().join("y.acqd"), other.y.data()).unwrap();
    let result = load_dataset(
        &DatasetPaths {
            x: dir.path().join("x.acqd"),
            y: dir.path().join("y.acqd"),
            labels: dir.path().join("labels.acqd"),
            ..Default::default()
        },
        DatasetFormat::Binary,
    );
    assert!(matches!(result, Err(Error::Dimension { .. })));
}
