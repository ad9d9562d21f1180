//! Core of the medledger health-record ledger.
//!
//! * [`block`], [`chain`]: canonical blocks, proof-of-work mining, full
//!   verification and longest-chain fork choice.
//! * [`vault`], [`keystore`]: encrypted, content-addressed off-chain record storage.
//! * [`policy`]: the deterministic state fold and access rules.
//! * [`sim`]: a deterministic multi-node network simulator.
//! * [`ledger`]: a deployment on disk with a single-writer commit path.

pub mod block;
pub mod chain;
pub mod chain_log;
pub mod codec;
pub mod config;
pub mod digest;
pub mod keys;
pub mod keystore;
pub mod ledger;
pub mod policy;
pub mod sim;
pub mod testkit;
pub mod tx;
pub mod vault;

pub use block::{
    genesis_block, genesis_header, header_digest, meets_difficulty, mine_block, tx_root, Block,
    BlockHeader, Mined,
};
pub use chain::{
    fork_choice, verify_chain, AppendError, Chain, Failure, FailureReason, ForkChoiceError,
    VerificationReport,
};
pub use codec::Canonical;
pub use config::Config;
pub use digest::{hash_bytes, Digest};
pub use keys::{KeyPair, PublicKey, Role, Signature};
pub use ledger::{Ledger, LedgerError};
pub use policy::{
    audit_trail, evaluate_access, materialize, Access, Action, ChainState, DenyReason,
};
pub use tx::{verify_transaction, Scope, Transaction, TxKind};
pub use vault::{ContentAddress, PatientRecord, SealedRecord};
