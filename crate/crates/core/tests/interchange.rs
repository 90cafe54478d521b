//! Files written by the offline ingest tool are plain little-endian byte
//! layouts. These tests build them byte by byte, the way any other writer
//! would, and check the loaders accept them and reject malformed ones.

use cbdsel::embstore::{
    decode_labels, decode_matrix, encode_labels, encode_matrix, load_concepts, load_matrix,
};
use cbdsel::{EmbeddingMatrix, Error, LabelVector, ProbabilityMatrix};
use tempfile::TempDir;

fn header(magic: &[u8; 4], n: u32, d: u32) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend(n.to_le_bytes());
    out.extend(d.to_le_bytes());
    out
}

fn f32_payload(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn hand_written_embedding_file_loads() {
    let values = [0.5f32, -1.25, 3.0, 0.0, 2.5, -0.125];
    let mut bytes = header(b"EMB1", 2, 3);
    bytes.extend(f32_payload(&values));
    let m: EmbeddingMatrix = decode_matrix(&bytes).unwrap();
    assert_eq!((m.rows(), m.cols()), (2, 3));
    assert_eq!(m.row(1), &[0.0, 2.5, -0.125]);
    assert_eq!(encode_matrix(&m).unwrap(), bytes);
}

#[test]
fn hand_written_probability_file_loads_and_validates() {
    let mut bytes = header(b"PRB1", 2, 3);
    bytes.extend(f32_payload(&[0.7, 0.2, 0.1, 0.0, 0.0, 1.0]));
    let p: ProbabilityMatrix = decode_matrix(&bytes).unwrap();
    assert_eq!(p.argmax_labels().as_slice(), &[0, 2]);

    let mut off = header(b"PRB1", 1, 2);
    off.extend(f32_payload(&[0.6, 0.5]));
    let err = decode_matrix::<ProbabilityMatrix>(&off).unwrap_err();
    assert!(matches!(err, Error::Format { offset: 12, .. }), "{err}");

    let mut wrong_magic = header(b"EMB1", 1, 2);
    wrong_magic.extend(f32_payload(&[0.5, 0.5]));
    assert!(matches!(decode_matrix::<ProbabilityMatrix>(&wrong_magic), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn hand_written_label_file_loads() {
    let mut bytes = header(b"LBL1", 4, 3);
    for l in [2u32, 0, 1, 2] {
        bytes.extend(l.to_le_bytes());
    }
    let labels = decode_labels(&bytes).unwrap();
    assert_eq!(labels.as_slice(), &[2, 0, 1, 2]);
    assert_eq!(labels.classes(), 3);
    assert_eq!(encode_labels(&LabelVector::new(vec![2, 0, 1, 2], 3).unwrap()).unwrap(), bytes);

    let mut out_of_range = header(b"LBL1", 1, 2);
    out_of_range.extend(5u32.to_le_bytes());
    assert!(decode_labels(&out_of_range).is_err());
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let mut bytes = header(b"EMB1", 2, 2);
    bytes.extend(f32_payload(&[1.0, 2.0, 3.0]));
    assert!(matches!(decode_matrix::<EmbeddingMatrix>(&bytes), Err(Error::Format { .. })));
    bytes.extend(f32_payload(&[4.0, 5.0]));
    assert!(matches!(decode_matrix::<EmbeddingMatrix>(&bytes), Err(Error::Format { .. })));
    assert!(matches!(decode_matrix::<EmbeddingMatrix>(&bytes[..7]), Err(Error::Format { .. })));
}

#[test]
fn concept_files_with_and_without_trailing_newline() {
    let dir = TempDir::new().unwrap();
    let mut emb = header(b"EMB1", 2, 2);
    emb.extend(f32_payload(&[1.0, 0.0, 0.0, 1.0]));
    std::fs::write(dir.path().join("c.ebin"), &emb).unwrap();
    for text in ["dog\ncat", "dog\ncat\n"] {
        std::fs::write(dir.path().join("c.txt"), text).unwrap();
        let space = load_concepts(dir.path().join("c.txt"), dir.path().join("c.ebin")).unwrap();
        assert_eq!(space.names(), &["dog".to_string(), "cat".to_string()]);
    }
    std::fs::write(dir.path().join("c.txt"), "dog\ncat\nbird\n").unwrap();
    assert!(matches!(
        load_concepts(dir.path().join("c.txt"), dir.path().join("c.ebin")),
        Err(Error::Alignment { names: 3, rows: 2 })
    ));
}

#[test]
fn load_errors_name_the_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.ebin");
    std::fs::write(&path, b"EMB1\x01\x00").unwrap();
    let err = load_matrix::<EmbeddingMatrix>(&path).unwrap_err().to_string();
    assert!(err.contains("broken.ebin"), "{err}");
}
