//! Byte-exact fixtures for genesis and three sample blocks. Regenerate with
//! `MEDLEDGER_BLESS=1 cargo test -p medledger-core --test golden`;
//! `tests/fixtures/crosscheck.py` re-derives the same bytes independently.

use std::path::PathBuf;

use medledger_core::block::mine_block;
use medledger_core::policy::{make_appointment, make_grant, make_registration, make_revoke};
use medledger_core::tx::TxKind;
use medledger_core::{
    genesis_block, hash_bytes, verify_chain, Block, Canonical, Chain, KeyPair, Role, Scope,
    Transaction,
};

const DIFFICULTY: u8 = 8;

fn golden_blocks() -> Vec<Block> {
    let admin = KeyPair::from_label("golden:admin", Role::Admin, "admin");
    let patient = KeyPair::from_label("golden:patient", Role::Patient, "hanu");
    let provider = KeyPair::from_label("golden:provider", Role::Provider, "dr-lee");
    let batches: Vec<(u64, Vec<Transaction>)> = vec![
        (
            1_000,
            vec![
                make_registration(&admin, &admin.public_key(), Role::Admin, "admin", None, 1),
                make_registration(
                    &admin,
                    &patient.public_key(),
                    Role::Patient,
                    "hanu",
                    Some(52),
                    2,
                ),
                make_registration(
                    &admin,
                    &provider.public_key(),
                    Role::Provider,
                    "dr-lee",
                    None,
                    3,
                ),
            ],
        ),
        (
            2_000,
            vec![
                Transaction::sign(
                    &patient,
                    4,
                    TxKind::RecordAnchor {
                        patient_id: 52,
                        content_address: hash_bytes(b"golden-blob"),
                        author_id: patient.identity_id(),
                    },
                ),
                make_grant(
                    &patient,
                    52,
                    provider.identity_id(),
                    Scope::Read,
                    Some(10_000),
                    5,
                ),
            ],
        ),
        (
            3_000,
            vec![
                make_appointment(&provider, 52, provider.identity_id(), 5_000, "checkup", 6),
                make_revoke(&patient, 52, provider.identity_id(), 7),
            ],
        ),
    ];
    let mut blocks = vec![genesis_block()];
    for (ts, txs) in batches {
        let parent = blocks.last().unwrap().header.clone();
        blocks.push(mine_block(&parent, txs, DIFFICULTY, ts, 0).unwrap().block);
    }
    blocks
}

fn render(blocks: &[Block]) -> String {
    let mut out = String::from("# index digest canonical_block_hex\n");
    for b in blocks {
        out.push_str(&format!(
            "{} {} {}\n",
            b.header.index,
            b.digest().to_hex(),
            hex::encode(b.to_canonical_bytes())
        ));
    }
    out
}

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_blocks.txt")
}

#[test]
fn golden_blocks_match_fixture() {
    let blocks = golden_blocks();
    let chain = Chain::replay(blocks.clone(), DIFFICULTY).expect("golden chain is valid");
    assert!(verify_chain(&chain).ok);
    let rendered = render(&blocks);
    if std::env::var_os("MEDLEDGER_BLESS").is_some() {
        std::fs::write(fixture_path(), &rendered).unwrap();
    }
    let expected = std::fs::read_to_string(fixture_path()).expect("fixture present");
    assert_eq!(rendered, expected);
}

#[test]
fn fixture_bytes_decode_to_the_same_blocks() {
    let expected = std::fs::read_to_string(fixture_path()).unwrap();
    let blocks: Vec<Block> = expected
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let hex_block = l.split(' ').nth(2).unwrap();
            Block::from_canonical_bytes(&hex::decode(hex_block).unwrap()).unwrap()
        })
        .collect();
    assert_eq!(blocks, golden_blocks());
}
