//! The access policy: a deterministic fold of chain transactions into
//! identities, ownership, grants, anchors and appointments, plus the access
//! rules evaluated against that state.
//!
//! The rule set is fixed and versioned ([`POLICY_VERSION`]); there is no
//! user-deployable contract code. A transaction is admitted to a block only
//! if [`ChainState::check_tx`] accepts it against the state produced by
//! everything before it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::Block;
use crate::chain::Chain;
use crate::digest::Digest;
use crate::keys::{KeyPair, PublicKey, Role};
use crate::tx::{Scope, Transaction, TxKind};
use crate::vault::ContentAddress;

pub const POLICY_VERSION: u32 = 1;
pub const MAX_DISPLAY_NAME_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub identity_id: Digest,
    pub public_key: PublicKey,
    pub role: Role,
    pub display_name: String,
    pub patient_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub patient_id: u64,
    pub grantee_id: Digest,
    pub scope: Scope,
    pub expires_at_ms: Option<u64>,
    pub granted_in_block: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRef {
    pub content_address: ContentAddress,
    pub author_id: Digest,
    pub block_index: u64,
    pub tx_id: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppointmentEntry {
    pub block_index: u64,
    pub tx_index: u32,
    pub tx_id: Digest,
    pub patient_id: u64,
    pub provider_id: Digest,
    pub slot_ms: u64,
    pub note: String,
    pub booked_by: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    NoGrant,
    Expired,
    InsufficientScope,
    UnknownIdentity,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::NoGrant => "NoGrant",
            DenyReason::Expired => "Expired",
            DenyReason::InsufficientScope => "InsufficientScope",
            DenyReason::UnknownIdentity => "UnknownIdentity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Allow,
    Deny(DenyReason),
}

impl Access {
    pub fn is_allowed(self) -> bool {
        self == Access::Allow
    }
}

/// Why a transaction is not admissible against the current state.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxRule {
    #[error("transaction {0} already on chain")]
    Replay(Digest),
    #[error("signer is not a registered identity")]
    UnknownSigner,
    #[error("identity {0} is not registered")]
    UnknownIdentity(Digest),
    #[error("public key already registered")]
    DuplicateIdentity,
    #[error("display name {0:?} already registered")]
    DuplicateName(String),
    #[error("invalid registration: {0}")]
    InvalidRegistration(&'static str),
    #[error("patient id {0} already owned")]
    PatientIdTaken(u64),
    #[error("patient id {0} has no registered owner")]
    UnknownPatient(u64),
    #[error("registration must be self-signed or signed by an admin")]
    RegistrationNotAuthorized,
    #[error("signer does not own patient {0}")]
    NotOwner(u64),
    #[error("record author must be a patient or provider")]
    BadAuthorRole,
    #[error("signer may not act for author {0}")]
    NotAuthor(Digest),
    #[error("author lacks write access to patient {0}: {1:?}")]
    WriteDenied(u64, DenyReason),
    #[error("no grant on patient {0} for {1}")]
    NoSuchGrant(u64, Digest),
    #[error("{0} is not a registered provider")]
    UnknownProvider(Digest),
    #[error("signer is neither the patient nor the provider")]
    NotParticipant,
}

impl TxRule {
    /// Stable machine-readable name, used as the API error code.
    pub fn code(&self) -> &'static str {
        match self {
            TxRule::Replay(_) => "Replay",
            TxRule::UnknownSigner => "UnknownSigner",
            TxRule::UnknownIdentity(_) => "UnknownIdentity",
            TxRule::DuplicateIdentity => "DuplicateIdentity",
            TxRule::DuplicateName(_) => "DuplicateName",
            TxRule::InvalidRegistration(_) => "InvalidRegistration",
            TxRule::PatientIdTaken(_) => "PatientIdTaken",
            TxRule::UnknownPatient(_) => "UnknownPatient",
            TxRule::RegistrationNotAuthorized => "RegistrationNotAuthorized",
            TxRule::NotOwner(_) => "NotOwner",
            TxRule::BadAuthorRole => "BadAuthorRole",
            TxRule::NotAuthor(_) => "NotAuthor",
            TxRule::WriteDenied(_, reason) => reason.as_str(),
            TxRule::NoSuchGrant(..) => "NoSuchGrant",
            TxRule::UnknownProvider(_) => "UnknownProvider",
            TxRule::NotParticipant => "NotParticipant",
        }
    }
}

/// Materialized chain state. Every map is ordered so iteration, equality and
/// [`ChainState::dump`] are deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainState {
    pub identities: BTreeMap<Digest, Identity>,
    pub patient_owner: BTreeMap<u64, Digest>,
    pub anchors: BTreeMap<u64, Vec<AnchorRef>>,
    pub grants: BTreeMap<(u64, Digest), Grant>,
    pub appointments: Vec<AppointmentEntry>,
    names: BTreeMap<String, Digest>,
    tx_ids: BTreeSet<Digest>,
    height: u64,
}

impl ChainState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the last folded block.
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn identity(&self, id: &Digest) -> Option<&Identity> {
        self.identities.get(id)
    }

    pub fn identity_by_name(&self, name: &str) -> Option<&Identity> {
        self.names.get(name).and_then(|id| self.identities.get(id))
    }

    pub fn owner_of(&self, patient_id: u64) -> Option<&Identity> {
        self.patient_owner
            .get(&patient_id)
            .and_then(|id| self.identities.get(id))
    }

    pub fn contains_tx(&self, tx_id: &Digest) -> bool {
        self.tx_ids.contains(tx_id)
    }

    pub fn providers(&self) -> impl Iterator<Item = &Identity> {
        self.identities
            .values()
            .filter(|i| i.role == Role::Provider)
    }

    fn signer(&self, key: &PublicKey) -> Option<&Identity> {
        self.identities.get(&key.identity_id())
    }

    fn signer_is_admin(&self, key: &PublicKey) -> bool {
        self.signer(key).is_some_and(|i| i.role == Role::Admin)
    }

    fn signer_owns(&self, key: &PublicKey, patient_id: u64) -> bool {
        self.patient_owner.get(&patient_id) == Some(&key.identity_id())
    }

    /// Checks admissibility of `tx` in a block stamped `block_time_ms`.
    /// Signature validity is checked separately by the chain.
    pub fn check_tx(&self, tx: &Transaction, block_time_ms: u64) -> Result<(), TxRule> {
        if self.tx_ids.contains(&tx.tx_id) {
            return Err(TxRule::Replay(tx.tx_id));
        }
        let signer_key = tx.author();
        match tx.kind() {
            TxKind::IdentityReg {
                public_key,
                role,
                display_name,
                patient_id,
            } => {
                let self_signed = signer_key == public_key;
                let authorized = if self.signer_is_admin(signer_key) {
                    true
                } else if !self_signed {
                    false
                } else if *role == Role::Admin {
                    // Bootstrap: the very first identity may make itself admin.
                    self.identities.is_empty()
                } else {
                    true
                };
                if !authorized {
                    return Err(TxRule::RegistrationNotAuthorized);
                }
                if self.identities.contains_key(&public_key.identity_id()) {
                    return Err(TxRule::DuplicateIdentity);
                }
                if display_name.is_empty() || display_name.len() > MAX_DISPLAY_NAME_BYTES {
                    return Err(TxRule::InvalidRegistration(
                        "display name must be 1..=256 bytes",
                    ));
                }
                if self.names.contains_key(display_name) {
                    return Err(TxRule::DuplicateName(display_name.clone()));
                }
                match (role, patient_id) {
                    (Role::Patient, Some(0)) => {
                        return Err(TxRule::InvalidRegistration("patient id must be >= 1"))
                    }
                    (Role::Patient, Some(p)) => {
                        if self.patient_owner.contains_key(p) {
                            return Err(TxRule::PatientIdTaken(*p));
                        }
                    }
                    (Role::Patient, None) => {
                        return Err(TxRule::InvalidRegistration(
                            "patients must name a patient id",
                        ))
                    }
                    (_, Some(_)) => {
                        return Err(TxRule::InvalidRegistration(
                            "only patients carry a patient id",
                        ))
                    }
                    (_, None) => {}
                }
                Ok(())
            }
            TxKind::RecordAnchor {
                patient_id,
                author_id,
                ..
            } => {
                let signer = self.signer(signer_key).ok_or(TxRule::UnknownSigner)?;
                let author = self
                    .identities
                    .get(author_id)
                    .ok_or(TxRule::UnknownIdentity(*author_id))?;
                if !matches!(author.role, Role::Patient | Role::Provider) {
                    return Err(TxRule::BadAuthorRole);
                }
                if signer.identity_id != *author_id && signer.role != Role::Admin {
                    return Err(TxRule::NotAuthor(*author_id));
                }
                if !self.patient_owner.contains_key(patient_id) {
                    return Err(TxRule::UnknownPatient(*patient_id));
                }
                match evaluate_access(self, author_id, *patient_id, Action::Write, block_time_ms) {
                    Access::Allow => Ok(()),
                    Access::Deny(reason) => Err(TxRule::WriteDenied(*patient_id, reason)),
                }
            }
            TxKind::AccessGrant {
                patient_id,
                grantee_id,
                ..
            } => {
                self.signer(signer_key).ok_or(TxRule::UnknownSigner)?;
                if !self.signer_owns(signer_key, *patient_id) && !self.signer_is_admin(signer_key) {
                    return Err(TxRule::NotOwner(*patient_id));
                }
                if !self.patient_owner.contains_key(patient_id) {
                    return Err(TxRule::UnknownPatient(*patient_id));
                }
                if !self.identities.contains_key(grantee_id) {
                    return Err(TxRule::UnknownIdentity(*grantee_id));
                }
                Ok(())
            }
            TxKind::AccessRevoke {
                patient_id,
                grantee_id,
            } => {
                self.signer(signer_key).ok_or(TxRule::UnknownSigner)?;
                if !self.signer_owns(signer_key, *patient_id) && !self.signer_is_admin(signer_key) {
                    return Err(TxRule::NotOwner(*patient_id));
                }
                if !self.grants.contains_key(&(*patient_id, *grantee_id)) {
                    return Err(TxRule::NoSuchGrant(*patient_id, *grantee_id));
                }
                Ok(())
            }
            TxKind::Appointment {
                patient_id,
                provider_id,
                ..
            } => {
                let signer = self.signer(signer_key).ok_or(TxRule::UnknownSigner)?;
                match self.identities.get(provider_id) {
                    Some(p) if p.role == Role::Provider => {}
                    _ => return Err(TxRule::UnknownProvider(*provider_id)),
                }
                if !self.patient_owner.contains_key(patient_id) {
                    return Err(TxRule::UnknownPatient(*patient_id));
                }
                let participant = self.signer_owns(signer_key, *patient_id)
                    || signer.identity_id == *provider_id
                    || signer.role == Role::Admin;
                if !participant {
                    return Err(TxRule::NotParticipant);
                }
                Ok(())
            }
        }
    }

    /// Applies the effect of an admitted transaction. Total: never fails.
    fn apply_tx(&mut self, tx: &Transaction, block_index: u64, tx_index: u32) {
        self.tx_ids.insert(tx.tx_id);
        match tx.kind() {
            TxKind::IdentityReg {
                public_key,
                role,
                display_name,
                patient_id,
            } => {
                let identity_id = public_key.identity_id();
                self.identities.insert(
                    identity_id,
                    Identity {
                        identity_id,
                        public_key: *public_key,
                        role: *role,
                        display_name: display_name.clone(),
                        patient_id: *patient_id,
                    },
                );
                self.names.insert(display_name.clone(), identity_id);
                if let Some(p) = patient_id {
                    self.patient_owner.insert(*p, identity_id);
                }
            }
            TxKind::RecordAnchor {
                patient_id,
                content_address,
                author_id,
            } => {
                self.anchors
                    .entry(*patient_id)
                    .or_default()
                    .push(AnchorRef {
                        content_address: ContentAddress(*content_address),
                        author_id: *author_id,
                        block_index,
                        tx_id: tx.tx_id,
                    });
            }
            TxKind::AccessGrant {
                patient_id,
                grantee_id,
                scope,
                expires_at_ms,
            } => {
                // Last writer wins per (patient, grantee).
                self.grants.insert(
                    (*patient_id, *grantee_id),
                    Grant {
                        patient_id: *patient_id,
                        grantee_id: *grantee_id,
                        scope: *scope,
                        expires_at_ms: *expires_at_ms,
                        granted_in_block: block_index,
                    },
                );
            }
            TxKind::AccessRevoke {
                patient_id,
                grantee_id,
            } => {
                self.grants.remove(&(*patient_id, *grantee_id));
            }
            TxKind::Appointment {
                patient_id,
                provider_id,
                slot_ms,
                note,
            } => self.appointments.push(AppointmentEntry {
                block_index,
                tx_index,
                tx_id: tx.tx_id,
                patient_id: *patient_id,
                provider_id: *provider_id,
                slot_ms: *slot_ms,
                note: note.clone(),
                booked_by: tx.author().identity_id(),
            }),
        }
    }

    /// Checks and applies every transaction of `block` in order. On error the
    /// state is left partially updated; callers work on a copy.
    pub fn admit_block(&mut self, block: &Block) -> Result<(), (usize, TxRule)> {
        let time = block.header.timestamp_ms;
        for (i, tx) in block.transactions.iter().enumerate() {
            self.check_tx(tx, time).map_err(|e| (i, e))?;
            self.apply_tx(tx, block.header.index, i as u32);
        }
        self.height = block.header.index;
        Ok(())
    }

    /// Checks and applies a single transaction as if it were the next one
    /// in a block at `height + 1`. Used to validate pending pools.
    pub fn admit_tx(&mut self, tx: &Transaction, time_ms: u64) -> Result<(), TxRule> {
        self.check_tx(tx, time_ms)?;
        self.apply_tx(tx, self.height + 1, 0);
        Ok(())
    }

    /// Applies a block's effects without admission checks.
    pub(crate) fn fold_block(&mut self, block: &Block) {
        for (i, tx) in block.transactions.iter().enumerate() {
            self.apply_tx(tx, block.header.index, i as u32);
        }
        self.height = block.header.index;
    }

    /// Deterministic text rendering with sorted keys.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "policy_version {POLICY_VERSION}");
        let _ = writeln!(out, "height {}", self.height);
        let _ = writeln!(out, "transactions {}", self.tx_ids.len());
        let _ = writeln!(out, "[identities]");
        for (id, ident) in &self.identities {
            let _ = writeln!(
                out,
                "{id} role={} name={:?} pubkey={} patient_id={}",
                ident.role,
                ident.display_name,
                ident.public_key.to_hex(),
                ident.patient_id.map_or("-".to_string(), |p| p.to_string())
            );
        }
        let _ = writeln!(out, "[owners]");
        for (pid, owner) in &self.patient_owner {
            let _ = writeln!(out, "{pid} {owner}");
        }
        let _ = writeln!(out, "[anchors]");
        for (pid, list) in &self.anchors {
            for a in list {
                let _ = writeln!(
                    out,
                    "{pid} {} author={} block={} tx={}",
                    a.content_address.0, a.author_id, a.block_index, a.tx_id
                );
            }
        }
        let _ = writeln!(out, "[grants]");
        for ((pid, grantee), g) in &self.grants {
            let _ = writeln!(
                out,
                "{pid} {grantee} scope={} expires={} block={}",
                g.scope.as_str(),
                g.expires_at_ms.map_or("-".to_string(), |t| t.to_string()),
                g.granted_in_block
            );
        }
        let _ = writeln!(out, "[appointments]");
        for a in &self.appointments {
            let _ = writeln!(
                out,
                "{}:{} patient={} provider={} slot={} by={} note={:?}",
                a.block_index,
                a.tx_index,
                a.patient_id,
                a.provider_id,
                a.slot_ms,
                a.booked_by,
                a.note
            );
        }
        out
    }
}

/// Left fold over the chain's blocks and transactions.
pub fn materialize(chain: &Chain) -> ChainState {
    materialize_blocks(chain.blocks())
}

pub fn materialize_blocks(blocks: &[Block]) -> ChainState {
    let mut state = ChainState::new();
    for block in blocks {
        state.fold_block(block);
    }
    state
}

/// Allow iff the requester owns the patient id, is an admin, or holds an
/// unexpired grant of sufficient scope. A grant expires once
/// `now_ms >= expires_at_ms`.
pub fn evaluate_access(
    state: &ChainState,
    requester: &Digest,
    patient_id: u64,
    action: Action,
    now_ms: u64,
) -> Access {
    let Some(identity) = state.identities.get(requester) else {
        return Access::Deny(DenyReason::UnknownIdentity);
    };
    if state.patient_owner.get(&patient_id) == Some(requester) || identity.role == Role::Admin {
        return Access::Allow;
    }
    let Some(grant) = state.grants.get(&(patient_id, *requester)) else {
        return Access::Deny(DenyReason::NoGrant);
    };
    if grant.expires_at_ms.is_some_and(|t| now_ms >= t) {
        return Access::Deny(DenyReason::Expired);
    }
    match (action, grant.scope) {
        (Action::Read, _) | (Action::Write, Scope::ReadWrite) => Access::Allow,
        (Action::Write, Scope::Read) => Access::Deny(DenyReason::InsufficientScope),
    }
}

pub fn make_registration(
    signer: &KeyPair,
    subject: &PublicKey,
    role: Role,
    display_name: &str,
    patient_id: Option<u64>,
    issued_ms: u64,
) -> Transaction {
    Transaction::sign(
        signer,
        issued_ms,
        TxKind::IdentityReg {
            public_key: *subject,
            role,
            display_name: display_name.to_string(),
            patient_id,
        },
    )
}

pub fn make_self_registration(
    key: &KeyPair,
    patient_id: Option<u64>,
    issued_ms: u64,
) -> Transaction {
    make_registration(
        key,
        &key.public_key(),
        key.role,
        &key.name,
        patient_id,
        issued_ms,
    )
}

pub fn make_grant(
    patient_key: &KeyPair,
    patient_id: u64,
    grantee_id: Digest,
    scope: Scope,
    expires_at_ms: Option<u64>,
    issued_ms: u64,
) -> Transaction {
    Transaction::sign(
        patient_key,
        issued_ms,
        TxKind::AccessGrant {
            patient_id,
            grantee_id,
            scope,
            expires_at_ms,
        },
    )
}

pub fn make_revoke(
    patient_key: &KeyPair,
    patient_id: u64,
    grantee_id: Digest,
    issued_ms: u64,
) -> Transaction {
    Transaction::sign(
        patient_key,
        issued_ms,
        TxKind::AccessRevoke {
            patient_id,
            grantee_id,
        },
    )
}

pub fn make_appointment(
    author_key: &KeyPair,
    patient_id: u64,
    provider_id: Digest,
    slot_ms: u64,
    note: &str,
    issued_ms: u64,
) -> Transaction {
    Transaction::sign(
        author_key,
        issued_ms,
        TxKind::Appointment {
            patient_id,
            provider_id,
            slot_ms,
            note: note.to_string(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub block_index: u64,
    pub tx_index: u32,
    pub tx_id: Digest,
    pub kind: String,
    pub signer_id: Digest,
    pub summary: String,
}

/// Every committed transaction concerning `patient_id`, in chain order.
/// A patient's own registration counts as touching their id.
pub fn audit_trail(chain: &Chain, patient_id: u64) -> Vec<AuditEntry> {
    let mut out = Vec::new();
    for block in chain.blocks() {
        for (i, tx) in block.transactions.iter().enumerate() {
            if tx.kind().patient_id() == Some(patient_id) {
                out.push(AuditEntry {
                    block_index: block.header.index,
                    tx_index: i as u32,
                    tx_id: tx.tx_id,
                    kind: tx.kind().name().to_string(),
                    signer_id: tx.author().identity_id(),
                    summary: tx.summary(),
                });
            }
        }
    }
    out
}
