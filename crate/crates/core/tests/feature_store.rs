mod common;

use proptest::prelude::*;
use report_qc::feature_store::{load_store, FeatureStore, StoreError, StoreFormat};

#[test]
fn large_binary_round_trip_is_byte_identical() {
    let store = common::random_store(10_000, 512, 1);
    let bytes = store.to_binary();
    assert_eq!(bytes.len(), 12 + 10_000 * 8 + 10_000 * 512 * 4);
    let back = FeatureStore::from_binary("rand", &bytes).unwrap();
    assert_eq!(back.to_binary(), bytes);
    assert_eq!(back.count(), 10_000);
    assert_eq!(back.coords(), store.coords());
}

#[test]
fn save_and_load_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::random_store(50, 16, 2);
    for (name, fmt) in [("s.qcf", StoreFormat::Binary), ("s.jsonl", StoreFormat::Jsonl)] {
        let path = dir.path().join(name);
        store.save(&path, fmt).unwrap();
        assert_eq!(StoreFormat::from_path(&path), fmt);
        let back = load_store(&path, fmt).unwrap();
        assert_eq!(back.to_binary(), store.to_binary());
    }
}

#[test]
fn malformed_inputs_rejected() {
    assert!(matches!(
        FeatureStore::from_binary("x", b"NOPE\0\0\0\0\0\0\0\0"),
        Err(StoreError::MagicMismatch)
    ));
    let mut bytes = common::random_store(3, 4, 3).to_binary();
    bytes.truncate(bytes.len() - 4);
    assert!(FeatureStore::from_binary("x", &bytes).is_err());
    assert!(matches!(
        FeatureStore::new("x", 2, vec![0.0, 0.0], &[(0, 0)]).unwrap().normalize(),
        Err(StoreError::ZeroVector(0))
    ));
    assert!(FeatureStore::new("x", 2, vec![1.0, 0.0], &[(-1, 0)]).is_err());
    assert!(FeatureStore::new("x", 2, vec![1.0, 0.0, 1.0], &[(0, 0)]).is_err());
}

fn arb_store() -> impl Strategy<Value = FeatureStore> {
    (1usize..20, 1usize..12).prop_flat_map(|(n, d)| {
        (
            proptest::collection::vec(-1e3f32..1e3f32, n * d),
            proptest::collection::vec((0i64..100_000, 0i64..100_000), n),
        )
            .prop_map(move |(f, c)| {
                let feats = f.into_iter().map(f64::from).collect();
                FeatureStore::new("p", d, feats, &c).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn binary_round_trip(store in arb_store()) {
        let bytes = store.to_binary();
        let back = FeatureStore::from_binary("p", &bytes).unwrap();
        prop_assert_eq!(back.to_binary(), bytes);
        prop_assert_eq!(back.features(), store.features());
    }

    #[test]
    fn jsonl_round_trip(store in arb_store()) {
        let back = FeatureStore::from_jsonl(store.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back.to_binary(), store.to_binary());
        prop_assert_eq!(back.slide_id(), "p");
    }

    #[test]
    fn normalize_gives_unit_rows_and_is_idempotent(store in arb_store()) {
        if let Ok(n) = store.normalize() {
            for row in n.rows() {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
            let again = n.normalize().unwrap();
            prop_assert_eq!(again.features(), n.features());
        }
    }
}
