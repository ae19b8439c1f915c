use std::path::Path;

use evagraph_core::gnn::{ModelKind, ModelWeights};
use evagraph_core::graph::{Container, NodeData, Split};
use evagraph_core::rng::from_seed;
use evagraph_core::Graph;

/// Independent writer following the byte layout: magic, u32 version,
/// u64 header length, JSON header, then 8-byte aligned little-endian payloads.
fn encode(sections: &[(&str, &str, Vec<usize>, Vec<u8>)]) -> Vec<u8> {
    let entries: Vec<String> = sections
        .iter()
        .map(|(name, dtype, shape, _)| {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            format!(r#"{{"name":"{name}","dtype":"{dtype}","shape":[{}]}}"#, dims.join(","))
        })
        .collect();
    let header = format!(r#"{{"sections":[{}]}}"#, entries.join(","));
    let mut out = b"GRPH".to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let pad = |v: &mut Vec<u8>| v.resize(v.len().next_multiple_of(8), 0);
    pad(&mut out);
    for (_, _, _, payload) in sections {
        out.extend_from_slice(payload);
        pad(&mut out);
    }
    out
}

fn le<T: Copy, const W: usize>(xs: &[T], f: impl Fn(T) -> [u8; W]) -> Vec<u8> {
    xs.iter().flat_map(|&x| f(x)).collect()
}

/// Path 0-1-2 with node 3 attached to 1; one node per split.
fn sample() -> (Graph, Vec<u8>) {
    let features = [0.5f32, -1.0, 2.0, 0.25, 0.0, 1.5, -0.75, 3.0];
    let labels = [0i64, 1, 1, 2];
    let data = NodeData {
        features: features.to_vec(),
        num_features: 2,
        labels: labels.iter().map(|&y| y as usize).collect(),
        num_classes: 3,
        splits: vec![Split::Train, Split::Val, Split::Test, Split::Unlabeled],
    };
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (1, 3)], data).unwrap();
    let mask = |k: usize| (0..4).map(|i| u8::from(i == k)).collect::<Vec<u8>>();
    let bytes = encode(&[
        ("row_offsets", "u32", vec![5], le(&[0u32, 1, 4, 5, 6], u32::to_le_bytes)),
        ("col_indices", "u32", vec![6], le(&[1u32, 0, 2, 3, 1, 1], u32::to_le_bytes)),
        ("features", "f32", vec![4, 2], le(&features, f32::to_le_bytes)),
        ("labels", "i64", vec![4], le(&labels, i64::to_le_bytes)),
        ("mask_train", "u8", vec![4], mask(0)),
        ("mask_val", "u8", vec![4], mask(1)),
        ("mask_test", "u8", vec![4], mask(2)),
        ("mask_unlabeled", "u8", vec![4], mask(3)),
    ]);
    (g, bytes)
}

#[test]
fn writer_matches_reference_bytes() {
    let (g, expected) = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.grph");
    g.write_grph(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), expected);
}

#[test]
fn reader_accepts_reference_bytes() {
    let (g, bytes) = sample();
    let c = Container::from_bytes(&bytes, Path::new("ref.grph")).unwrap();
    let back = Graph::from_container(&c, Path::new("ref.grph")).unwrap();
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.labels(), g.labels());
    assert_eq!(back.splits(), g.splits());
    assert_eq!(back.node_data().features, g.node_data().features);
    assert_eq!(back.num_classes(), 3);
}

#[test]
fn payloads_are_eight_byte_aligned() {
    let (_, bytes) = sample();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let first = (16 + header_len).next_multiple_of(8);
    assert_eq!(first % 8, 0);
    assert_eq!(bytes.len() % 8, 0);
}

#[test]
fn bad_magic_names_the_file() {
    let (_, mut bytes) = sample();
    bytes[0] = b'X';
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.grph");
    std::fs::write(&path, bytes).unwrap();
    let err = Graph::read_grph(&path).unwrap_err().to_string();
    assert!(err.contains("broken.grph"), "{err}");
}

#[test]
fn truncated_payload_is_rejected() {
    let (_, bytes) = sample();
    let cut = &bytes[..bytes.len() - 9];
    assert!(Container::from_bytes(cut, Path::new("cut.grph")).is_err());
}

#[test]
fn weights_round_trip_bitwise() {
    let w = ModelWeights::<f32>::glorot(ModelKind::Mlp, 7, 5, 3, &mut from_seed(4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.grph");
    w.write(&path).unwrap();
    let back = ModelWeights::read(&path).unwrap();
    assert_eq!(back, w);
    let c = Container::read(&path).unwrap();
    let names: Vec<&str> = c.sections.iter().map(|s| s.name.as_str()).collect();
    for want in ["kind", "W0", "b0", "W1", "b1"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
}
