#[path = "support/access_oracle.rs"]
mod access_oracle;

use std::collections::BTreeMap;

use medledger_core::chain::TxRejection;
use medledger_core::policy::{
    make_appointment, make_grant, make_revoke, materialize_blocks, TxRule,
};
use medledger_core::testkit::{extend, random_chain, Cast};
use medledger_core::{
    audit_trail, evaluate_access, hash_bytes, materialize, mine_block, Access, Action, AppendError,
    Chain, DenyReason, Digest, KeyPair, Role, Scope, Transaction, TxKind,
};
use proptest::prelude::*;

fn base() -> (Cast, Chain) {
    let cast = Cast::new(2, 2);
    let chain = extend(&Chain::new(4), cast.registrations(), 1);
    (cast, chain)
}

fn try_extend(chain: &Chain, txs: Vec<Transaction>) -> Result<Chain, AppendError> {
    let mined = mine_block(chain.tip_header(), txs, chain.difficulty_bits(), 10, 0).unwrap();
    chain.append_block(mined.block)
}

#[test]
fn access_truth_table_matches_oracle() {
    let cases = access_oracle::all_cases();
    assert!(cases.len() <= 48);
    for case in cases {
        assert_eq!(
            access_oracle::evaluate(case),
            access_oracle::reference(case),
            "{case:?}"
        );
    }
}

#[test]
fn genesis_only_state_is_empty() {
    let state = materialize(&Chain::new(4));
    assert!(state.identities.is_empty());
    assert!(state.anchors.is_empty());
    assert!(state.grants.is_empty());
    assert!(state.appointments.is_empty());
}

#[test]
fn anchor_shows_up_in_state() {
    let (cast, chain) = base();
    let addr = hash_bytes(b"record");
    let tx = Transaction::sign(
        &cast.patients[0],
        5,
        TxKind::RecordAnchor {
            patient_id: 1,
            content_address: addr,
            author_id: cast.patients[0].identity_id(),
        },
    );
    let chain = extend(&chain, vec![tx], 2);
    let state = materialize(&chain);
    assert_eq!(state.anchors[&1].len(), 1);
    assert_eq!(state.anchors[&1][0].content_address.0, addr);
    assert_eq!(&state, chain.state());
}

#[test]
fn grant_read_then_write_denied_then_revoke() {
    let (cast, chain) = base();
    let patient = &cast.patients[0];
    let doc = cast.providers[0].identity_id();
    assert_eq!(
        evaluate_access(chain.state(), &doc, 1, Action::Read, 0),
        Access::Deny(DenyReason::NoGrant)
    );
    let chain = extend(
        &chain,
        vec![make_grant(patient, 1, doc, Scope::Read, None, 5)],
        2,
    );
    assert!(evaluate_access(chain.state(), &doc, 1, Action::Read, 0).is_allowed());
    assert_eq!(
        evaluate_access(chain.state(), &doc, 1, Action::Write, 0),
        Access::Deny(DenyReason::InsufficientScope)
    );
    let chain = extend(&chain, vec![make_revoke(patient, 1, doc, 6)], 3);
    assert_eq!(
        evaluate_access(chain.state(), &doc, 1, Action::Read, 0),
        Access::Deny(DenyReason::NoGrant)
    );
    assert!(!materialize(&chain).grants.contains_key(&(1, doc)));
    // Re-grant restores access.
    let chain = extend(
        &chain,
        vec![make_grant(patient, 1, doc, Scope::ReadWrite, None, 7)],
        4,
    );
    assert!(evaluate_access(chain.state(), &doc, 1, Action::Write, 0).is_allowed());
}

#[test]
fn non_owner_grant_and_orphan_revoke_rejected() {
    let (cast, chain) = base();
    let provider = &cast.providers[0];
    let grant = make_grant(
        provider,
        1,
        cast.providers[1].identity_id(),
        Scope::Read,
        None,
        5,
    );
    assert!(matches!(
        try_extend(&chain, vec![grant]),
        Err(AppendError::RejectBadTx {
            reason: TxRejection::Rule(TxRule::NotOwner(1)),
            ..
        })
    ));
    let revoke = make_revoke(&cast.patients[0], 1, provider.identity_id(), 5);
    assert!(matches!(
        try_extend(&chain, vec![revoke]),
        Err(AppendError::RejectBadTx {
            reason: TxRejection::Rule(TxRule::NoSuchGrant(..)),
            ..
        })
    ));
    // Patient 0 cannot grant on patient 1's id either.
    let grant = make_grant(
        &cast.patients[0],
        2,
        provider.identity_id(),
        Scope::Read,
        None,
        5,
    );
    assert!(try_extend(&chain, vec![grant]).is_err());
}

#[test]
fn appointments() {
    let (cast, chain) = base();
    let patient = &cast.patients[0];
    let doc = &cast.providers[0];
    let a1 = make_appointment(patient, 1, doc.identity_id(), 500, "checkup", 5);
    let a2 = make_appointment(doc, 1, doc.identity_id(), 500, "same slot", 6);
    let chain = extend(&chain, vec![a1.clone(), a2.clone()], 2);
    let appts = &chain.state().appointments;
    assert_eq!(appts.len(), 2, "no double-booking rule");
    assert_eq!((appts[0].tx_id, appts[1].tx_id), (a1.tx_id, a2.tx_id));
    assert_eq!((appts[0].block_index, appts[0].tx_index), (2, 0));

    let stranger = KeyPair::from_label("nobody", Role::Provider, "nobody");
    let bad = make_appointment(patient, 1, stranger.identity_id(), 1, "", 7);
    assert!(matches!(
        try_extend(&chain, vec![bad]),
        Err(AppendError::RejectBadTx {
            reason: TxRejection::Rule(TxRule::UnknownProvider(_)),
            ..
        })
    ));
    // Another patient cannot book for patient 1.
    let bad = make_appointment(&cast.patients[1], 1, doc.identity_id(), 1, "", 8);
    assert!(matches!(
        try_extend(&chain, vec![bad]),
        Err(AppendError::RejectBadTx {
            reason: TxRejection::Rule(TxRule::NotParticipant),
            ..
        })
    ));
}

#[test]
fn provider_anchor_needs_write_grant_at_block_time() {
    let (cast, chain) = base();
    let patient = &cast.patients[0];
    let doc = &cast.providers[0];
    let anchor = |issued| {
        Transaction::sign(
            doc,
            issued,
            TxKind::RecordAnchor {
                patient_id: 1,
                content_address: hash_bytes(b"x"),
                author_id: doc.identity_id(),
            },
        )
    };
    assert!(try_extend(&chain, vec![anchor(1)]).is_err());
    let chain = extend(
        &chain,
        vec![make_grant(
            patient,
            1,
            doc.identity_id(),
            Scope::ReadWrite,
            Some(5),
            2,
        )],
        2,
    );
    // try_extend stamps blocks at t=10, after expiry.
    assert!(matches!(
        try_extend(&chain, vec![anchor(3)]),
        Err(AppendError::RejectBadTx {
            reason: TxRejection::Rule(TxRule::WriteDenied(1, DenyReason::Expired)),
            ..
        })
    ));
    assert!(extend(&chain, vec![anchor(4)], 4)
        .state()
        .anchors
        .contains_key(&1));
}

#[test]
fn audit_trail_examples() {
    let (cast, chain) = base();
    let fresh = Cast::new(3, 0);
    assert!(audit_trail(&chain, fresh.patient_id(2)).is_empty());

    let patient = &cast.patients[0];
    let anchor = Transaction::sign(
        patient,
        5,
        TxKind::RecordAnchor {
            patient_id: 1,
            content_address: hash_bytes(b"r"),
            author_id: patient.identity_id(),
        },
    );
    let grant = make_grant(
        patient,
        1,
        cast.providers[0].identity_id(),
        Scope::Read,
        None,
        6,
    );
    let chain = extend(&chain, vec![anchor.clone()], 2);
    let chain = extend(&chain, vec![grant.clone()], 3);
    let trail = audit_trail(&chain, 1);
    assert_eq!(trail.len(), 3);
    assert_eq!(
        trail.iter().map(|e| e.kind.as_str()).collect::<Vec<_>>(),
        ["identity_reg", "record_anchor", "access_grant"]
    );
    assert_eq!(trail[1].tx_id, anchor.tx_id);
    assert_eq!(trail[2].block_index, 3);
}

/// Hand-rolled fold of grant/revoke effects, independent of `ChainState`.
fn reference_grants(chain: &Chain) -> BTreeMap<(u64, Digest), Scope> {
    let mut grants = BTreeMap::new();
    for block in chain.blocks() {
        for tx in &block.transactions {
            match tx.kind() {
                TxKind::AccessGrant {
                    patient_id,
                    grantee_id,
                    scope,
                    ..
                } => {
                    grants.insert((*patient_id, *grantee_id), *scope);
                }
                TxKind::AccessRevoke {
                    patient_id,
                    grantee_id,
                } => {
                    grants.remove(&(*patient_id, *grantee_id));
                }
                _ => {}
            }
        }
    }
    grants
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn materialize_matches_reference_fold(seed in any::<u64>(), blocks in 2usize..10) {
        let cast = Cast::new(3, 2);
        let chain = random_chain(&cast, blocks, 4, 0, seed);
        let state = materialize(&chain);
        let got: BTreeMap<_, _> = state.grants.iter().map(|(k, g)| (*k, g.scope)).collect();
        prop_assert_eq!(got, reference_grants(&chain));
        // Pure fold: same chain, byte-identical dump.
        prop_assert_eq!(state.dump(), materialize(&chain).dump());
        prop_assert_eq!(&state, chain.state());
    }

    #[test]
    fn prefixes_are_never_rewritten(seed in any::<u64>()) {
        let cast = Cast::new(3, 2);
        let chain = random_chain(&cast, 8, 3, 0, seed);
        for cut in 1..chain.len() {
            let prefix = Chain::replay(chain.blocks()[..cut].to_vec(), 0).unwrap();
            prop_assert_eq!(materialize_blocks(&chain.blocks()[..cut]).dump(), prefix.state().dump());
        }
    }

    #[test]
    fn owners_always_have_full_access(seed in any::<u64>(), now in any::<u64>()) {
        let cast = Cast::new(3, 2);
        let chain = random_chain(&cast, 6, 4, 0, seed);
        for (i, p) in cast.patients.iter().enumerate() {
            for action in [Action::Read, Action::Write] {
                prop_assert_eq!(
                    evaluate_access(chain.state(), &p.identity_id(), cast.patient_id(i), action, now),
                    Access::Allow
                );
            }
        }
    }

    #[test]
    fn revocation_is_final(seed in any::<u64>(), now in any::<u64>()) {
        let cast = Cast::new(2, 2);
        let mut chain = random_chain(&cast, 5, 4, 0, seed);
        let doc = cast.providers[0].identity_id();
        if !chain.state().grants.contains_key(&(1, doc)) {
            chain = extend(&chain, vec![make_grant(&cast.patients[0], 1, doc, Scope::ReadWrite, None, 90_000)], 90);
        }
        chain = extend(&chain, vec![make_revoke(&cast.patients[0], 1, doc, 90_001)], 91);
        for action in [Action::Read, Action::Write] {
            prop_assert!(!evaluate_access(chain.state(), &doc, 1, action, now).is_allowed());
        }
    }

    #[test]
    fn audit_trails_partition_patient_transactions(seed in any::<u64>()) {
        let cast = Cast::new(3, 2);
        let chain = random_chain(&cast, 6, 4, 0, seed);
        let mut from_trails: Vec<Digest> = (0..cast.patients.len())
            .flat_map(|i| audit_trail(&chain, cast.patient_id(i)))
            .map(|e| e.tx_id)
            .collect();
        let mut expected: Vec<Digest> = chain
            .blocks()
            .iter()
            .flat_map(|b| &b.transactions)
            .filter(|tx| !matches!(tx.kind(), TxKind::IdentityReg { patient_id: None, .. }))
            .map(|tx| tx.tx_id)
            .collect();
        let total = from_trails.len();
        from_trails.sort();
        from_trails.dedup();
        prop_assert_eq!(total, from_trails.len(), "trails overlap");
        expected.sort();
        prop_assert_eq!(from_trails, expected);
    }
}

#[test]
fn dump_is_sorted_and_stable() {
    let cast = Cast::new(3, 2);
    let chain = random_chain(&cast, 4, 3, 0, 11);
    let dump = chain.state().dump();
    assert!(dump.starts_with("policy_version 1\nheight 4\n"));
    let ids: Vec<&str> = dump
        .split("[identities]\n")
        .nth(1)
        .unwrap()
        .split("[owners]")
        .next()
        .unwrap()
        .lines()
        .map(|l| l.split(' ').next().unwrap())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}
