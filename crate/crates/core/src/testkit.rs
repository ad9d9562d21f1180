//! Deterministic chain builders shared by tests, benchmarks and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::mine_block;
use crate::chain::Chain;
use crate::digest::hash_bytes;
use crate::keys::{KeyPair, Role};
use crate::policy::{
    make_appointment, make_grant, make_revoke, make_self_registration, ChainState,
};
use crate::tx::{Scope, Transaction, TxKind};

/// A fixed cast of identities. Patient `i` owns patient id `i + 1`.
#[derive(Debug, Clone)]
pub struct Cast {
    pub admin: KeyPair,
    pub patients: Vec<KeyPair>,
    pub providers: Vec<KeyPair>,
}

impl Cast {
    pub fn new(patients: usize, providers: usize) -> Self {
        Cast {
            admin: KeyPair::from_label("cast:admin", Role::Admin, "admin"),
            patients: (0..patients)
                .map(|i| {
                    KeyPair::from_label(
                        &format!("cast:patient:{i}"),
                        Role::Patient,
                        format!("patient{i}"),
                    )
                })
                .collect(),
            providers: (0..providers)
                .map(|i| {
                    KeyPair::from_label(
                        &format!("cast:provider:{i}"),
                        Role::Provider,
                        format!("provider{i}"),
                    )
                })
                .collect(),
        }
    }

    pub fn patient_id(&self, i: usize) -> u64 {
        i as u64 + 1
    }

    /// Registrations for the whole cast, admin first.
    pub fn registrations(&self) -> Vec<Transaction> {
        let mut txs = vec![make_self_registration(&self.admin, None, 0)];
        for (i, p) in self.patients.iter().enumerate() {
            txs.push(make_self_registration(p, Some(self.patient_id(i)), 0));
        }
        for p in &self.providers {
            txs.push(make_self_registration(p, None, 0));
        }
        txs
    }
}

/// Mines `txs` onto `chain` and appends. Panics if the block is rejected.
pub fn extend(chain: &Chain, txs: Vec<Transaction>, timestamp_ms: u64) -> Chain {
    let mined = mine_block(
        chain.tip_header(),
        txs,
        chain.difficulty_bits(),
        timestamp_ms,
        0,
    )
    .expect("mines");
    chain.append_block(mined.block).expect("valid block")
}

/// Generates one random transaction admissible against `state`.
pub fn random_tx(
    cast: &Cast,
    state: &ChainState,
    rng: &mut ChaCha8Rng,
    issued_ms: u64,
) -> Transaction {
    loop {
        let pi = rng.gen_range(0..cast.patients.len());
        let patient = &cast.patients[pi];
        let pid = cast.patient_id(pi);
        let provider = cast.providers.choose(rng).expect("at least one provider");
        let tx = match rng.gen_range(0..5) {
            0 | 1 => Transaction::sign(
                patient,
                issued_ms,
                TxKind::RecordAnchor {
                    patient_id: pid,
                    content_address: hash_bytes(&rng.gen::<[u8; 16]>()),
                    author_id: patient.identity_id(),
                },
            ),
            2 => make_grant(
                patient,
                pid,
                provider.identity_id(),
                if rng.gen() {
                    Scope::Read
                } else {
                    Scope::ReadWrite
                },
                if rng.gen() {
                    Some(rng.gen_range(0..10_000))
                } else {
                    None
                },
                issued_ms,
            ),
            3 => make_revoke(patient, pid, provider.identity_id(), issued_ms),
            _ => make_appointment(
                if rng.gen() { patient } else { provider },
                pid,
                provider.identity_id(),
                rng.gen_range(0..1_000_000),
                "visit",
                issued_ms,
            ),
        };
        if state.check_tx(&tx, issued_ms).is_ok() {
            return tx;
        }
    }
}

/// A chain of `1 + n_blocks` blocks: the first mined block registers the
/// cast, each later block carries `txs_per_block` random admissible
/// transactions.
pub fn random_chain(
    cast: &Cast,
    n_blocks: usize,
    txs_per_block: usize,
    difficulty_bits: u8,
    seed: u64,
) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = extend(&Chain::new(difficulty_bits), cast.registrations(), 1);
    let mut issued = 1_000u64;
    for b in 1..n_blocks {
        let mut state = chain.state().clone();
        let mut txs = Vec::with_capacity(txs_per_block);
        for _ in 0..txs_per_block {
            issued += 1;
            let tx = random_tx(cast, &state, &mut rng, issued);
            state.admit_tx(&tx, issued).expect("checked admissible");
            txs.push(tx);
        }
        chain = extend(&chain, txs, 1 + b as u64);
    }
    chain
}
