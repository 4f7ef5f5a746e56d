//! Stores written byte by byte, the way an external embedding tool would.

use fedrank::embedding::{read_store, EmbeddingStore, StoreKind, STORE_MAGIC};

fn entry(buf: &mut Vec<u8>, id: &str, values: &[f32]) {
    buf.extend((id.len() as u16).to_le_bytes());
    buf.extend(id.as_bytes());
    for v in values {
        buf.extend(v.to_le_bytes());
    }
}

fn header(dim: u32, count: u32) -> Vec<u8> {
    let mut buf = STORE_MAGIC.to_vec();
    buf.extend(dim.to_le_bytes());
    buf.extend(count.to_le_bytes());
    buf
}

fn vector(seed: usize, dim: usize) -> Vec<f32> {
    (0..dim).map(|i| ((i * 31 + seed * 7) % 97) as f32 / 97.0 - 0.5).collect()
}

#[test]
fn external_768_dim_store_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("documents.emb");
    let mut buf = header(768, 3);
    // any entry order is accepted
    for (i, id) in ["doc-c", "doc-a", "doc-b"].iter().enumerate() {
        entry(&mut buf, id, &vector(i, 768));
    }
    std::fs::write(&path, &buf).unwrap();
    let store = read_store(&path, StoreKind::Document).unwrap();
    assert_eq!(store.dim(), 768);
    assert_eq!(store.len(), 3);
    assert_eq!(store.ids().collect::<Vec<_>>(), vec!["doc-a", "doc-b", "doc-c"]);
    let a = store.get("doc-a").unwrap().as_slice();
    assert!(a.iter().zip(vector(1, 768)).all(|(x, y)| *x == f64::from(y)));
    // re-encoding is canonical and stable
    let again = EmbeddingStore::decode(&store.encode(), StoreKind::Document).unwrap();
    assert_eq!(again.encode(), store.encode());
}

#[test]
fn malformed_external_stores_are_rejected() {
    let mut good = header(2, 1);
    entry(&mut good, "q", &[1.0, 2.0]);
    assert!(EmbeddingStore::decode(&good, StoreKind::Query).is_ok());

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(EmbeddingStore::decode(&bad_magic, StoreKind::Query).is_err());

    let truncated = &good[..good.len() - 1];
    assert!(EmbeddingStore::decode(truncated, StoreKind::Query).is_err());

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(EmbeddingStore::decode(&trailing, StoreKind::Query).is_err());

    let mut dup = header(2, 2);
    entry(&mut dup, "q", &[1.0, 2.0]);
    entry(&mut dup, "q", &[3.0, 4.0]);
    assert!(EmbeddingStore::decode(&dup, StoreKind::Query).is_err());

    let mut nan = header(2, 1);
    entry(&mut nan, "q", &[f32::NAN, 0.0]);
    assert!(EmbeddingStore::decode(&nan, StoreKind::Query).is_err());

    assert!(EmbeddingStore::decode(&header(0, 0), StoreKind::Query).is_err());
}
