use std::fs;

use medledger_core::testkit::{extend, Cast};
use medledger_core::vault::{
    anchor_record, open_record, seal_record, BlobStore, DataKey, Decimal, VaultError,
};
use medledger_core::{Canonical, Chain, ContentAddress, KeyPair, PatientRecord, Role};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_record() -> impl Strategy<Value = PatientRecord> {
    (
        "[a-zA-Z0-9 ]{1,40}",
        0u32..=200,
        -500i32..5000,
        0u32..2400,
        1u64..u64::MAX,
        proptest::collection::btree_map("[a-z]{1,6}", "[ -~]{0,20}", 0..3),
    )
        .prop_map(
            |(username, age, temp, time, patient_id, extra)| PatientRecord {
                username,
                age,
                temperature: Decimal::new(format!("{}.{}", temp / 10, temp.rem_euclid(10)))
                    .unwrap(),
                time: Decimal::new(format!("{}", time as f64 / 100.0)).unwrap(),
                patient_id,
                extra,
            },
        )
}

proptest! {
    #[test]
    fn seal_open_round_trip(record in arb_record(), key in any::<[u8; 32]>(), nonce in any::<[u8; 12]>()) {
        let key = DataKey::from_bytes(key);
        let sealed = seal_record(&record, &key, nonce).unwrap();
        prop_assert_eq!(sealed.ciphertext.len(), record.to_canonical_bytes().len() + 16);
        prop_assert_eq!(open_record(&sealed, &key, record.patient_id).unwrap(), record);
    }

    #[test]
    fn record_encoding_round_trips(record in arb_record()) {
        let bytes = record.to_canonical_bytes();
        prop_assert_eq!(PatientRecord::from_canonical_bytes(&bytes).unwrap(), record);
    }
}

#[test]
fn ciphertext_flips_fail_authentication() {
    let key = DataKey::from_bytes([3; 32]);
    let record = PatientRecord::new("hanu", 20, "100", "20.8", 52).unwrap();
    let sealed = seal_record(&record, &key, [9; 12]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mut bad = sealed.clone();
        let i = rng.gen_range(0..bad.ciphertext.len());
        bad.ciphertext[i] ^= rng.gen_range(1..=255u8);
        assert!(matches!(
            open_record(&bad, &key, 52),
            Err(VaultError::AuthFailure)
        ));
    }
    let mut bad_nonce = sealed.clone();
    bad_nonce.nonce[0] ^= 1;
    assert!(matches!(
        open_record(&bad_nonce, &key, 52),
        Err(VaultError::AuthFailure)
    ));
}

#[test]
fn every_single_byte_blob_mutation_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let store = BlobStore::open(dir.path()).unwrap();
    let key = DataKey::from_bytes([3; 32]);
    let record = PatientRecord::new("hanu", 20, "100", "20.8", 52).unwrap();
    let addr = store
        .store_blob(&seal_record(&record, &key, [9; 12]).unwrap())
        .unwrap();
    let path = store.blob_path(&addr);
    let original = fs::read(&path).unwrap();
    for i in 0..original.len() {
        let mut bytes = original.clone();
        bytes[i] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(
            matches!(store.fetch_blob(&addr), Err(VaultError::CorruptBlob(_))),
            "byte {i}"
        );
    }
    fs::write(&path, &original).unwrap();
    assert_eq!(
        open_record(&store.fetch_blob(&addr).unwrap(), &key, 52).unwrap(),
        record
    );
}

#[test]
fn anchor_requires_registered_patient_or_provider() {
    let cast = Cast::new(1, 1);
    let chain = extend(&Chain::new(0), cast.registrations(), 1);
    let addr = ContentAddress(medledger_core::hash_bytes(b"blob"));
    let patient = &cast.patients[0];
    let tx = anchor_record(chain.state(), addr, 1, patient.identity_id(), patient, 5).unwrap();
    let chain = extend(&chain, vec![tx], 2);
    assert_eq!(chain.state().anchors[&1][0].content_address, addr);

    let stranger = KeyPair::from_label("x", Role::Patient, "x");
    assert!(matches!(
        anchor_record(chain.state(), addr, 1, stranger.identity_id(), &stranger, 6),
        Err(VaultError::UnknownIdentity(_))
    ));
    assert!(matches!(
        anchor_record(
            chain.state(),
            addr,
            1,
            cast.admin.identity_id(),
            &cast.admin,
            6
        ),
        Err(VaultError::UnknownIdentity(_))
    ));
}

#[test]
fn on_chain_growth_is_independent_of_record_size() {
    let cast = Cast::new(1, 0);
    let chain = extend(&Chain::new(0), cast.registrations(), 1);
    let key = DataKey::from_bytes([1; 32]);
    let patient = &cast.patients[0];
    let growth = |size: usize, issued: u64| {
        let mut record = PatientRecord::new("p", 30, "37", "9", 1).unwrap();
        record.extra.insert("payload".into(), "x".repeat(size));
        let sealed = seal_record(&record, &key, [0; 12]).unwrap();
        let tx = anchor_record(
            chain.state(),
            sealed.address(),
            1,
            patient.identity_id(),
            patient,
            issued,
        )
        .unwrap();
        let next = extend(&chain, vec![tx], 2);
        next.tip().to_canonical_bytes().len()
    };
    assert_eq!(growth(1 << 10, 5), growth(1 << 20, 5));
}
