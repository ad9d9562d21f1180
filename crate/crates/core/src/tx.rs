//! Signed transactions.

use std::collections::HashMap;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::digest::{hash_bytes, Digest};
use crate::keys::{verify_with, KeyPair, PublicKey, Role, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Read,
    ReadWrite,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Read => "read",
            Scope::ReadWrite => "read_write",
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Scope::Read),
            "read_write" => Ok(Scope::ReadWrite),
            other => Err(format!("unknown scope {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TxKind {
    /// Registers `public_key`. Patients name the patient id they own.
    IdentityReg {
        public_key: PublicKey,
        role: Role,
        display_name: String,
        patient_id: Option<u64>,
    },
    /// Commits the content address of an off-chain sealed record.
    /// `author_id` is the identity the record was submitted by; the signer
    /// is either that identity or an admin acting for it.
    RecordAnchor {
        patient_id: u64,
        content_address: Digest,
        author_id: Digest,
    },
    AccessGrant {
        patient_id: u64,
        grantee_id: Digest,
        scope: Scope,
        expires_at_ms: Option<u64>,
    },
    AccessRevoke {
        patient_id: u64,
        grantee_id: Digest,
    },
    Appointment {
        patient_id: u64,
        provider_id: Digest,
        slot_ms: u64,
        note: String,
    },
}

impl TxKind {
    pub fn name(&self) -> &'static str {
        match self {
            TxKind::IdentityReg { .. } => "identity_reg",
            TxKind::RecordAnchor { .. } => "record_anchor",
            TxKind::AccessGrant { .. } => "access_grant",
            TxKind::AccessRevoke { .. } => "access_revoke",
            TxKind::Appointment { .. } => "appointment",
        }
    }

    /// Patient id the transaction concerns, if any.
    pub fn patient_id(&self) -> Option<u64> {
        match self {
            TxKind::IdentityReg { patient_id, .. } => *patient_id,
            TxKind::RecordAnchor { patient_id, .. }
            | TxKind::AccessGrant { patient_id, .. }
            | TxKind::AccessRevoke { patient_id, .. }
            | TxKind::Appointment { patient_id, .. } => Some(*patient_id),
        }
    }

    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            TxKind::IdentityReg {
                public_key,
                role,
                display_name,
                patient_id,
            } => {
                enc.u8(0).fixed(&public_key.0);
                role.encode_into(enc);
                enc.str(display_name).option(patient_id.as_ref(), |e, v| {
                    e.u64(*v);
                });
            }
            TxKind::RecordAnchor {
                patient_id,
                content_address,
                author_id,
            } => {
                enc.u8(1).u64(*patient_id);
                content_address.encode_into(enc);
                author_id.encode_into(enc);
            }
            TxKind::AccessGrant {
                patient_id,
                grantee_id,
                scope,
                expires_at_ms,
            } => {
                enc.u8(2).u64(*patient_id);
                grantee_id.encode_into(enc);
                enc.u8(*scope as u8).option(expires_at_ms.as_ref(), |e, v| {
                    e.u64(*v);
                });
            }
            TxKind::AccessRevoke {
                patient_id,
                grantee_id,
            } => {
                enc.u8(3).u64(*patient_id);
                grantee_id.encode_into(enc);
            }
            TxKind::Appointment {
                patient_id,
                provider_id,
                slot_ms,
                note,
            } => {
                enc.u8(4).u64(*patient_id);
                provider_id.encode_into(enc);
                enc.u64(*slot_ms).str(note);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.tag("transaction kind", 5)? {
            0 => TxKind::IdentityReg {
                public_key: PublicKey(dec.fixed()?),
                role: Role::decode_from(dec)?,
                display_name: dec.str()?,
                patient_id: dec.option(|d| d.u64())?,
            },
            1 => TxKind::RecordAnchor {
                patient_id: dec.u64()?,
                content_address: Digest::decode_from(dec)?,
                author_id: Digest::decode_from(dec)?,
            },
            2 => TxKind::AccessGrant {
                patient_id: dec.u64()?,
                grantee_id: Digest::decode_from(dec)?,
                scope: match dec.tag("scope", 2)? {
                    0 => Scope::Read,
                    _ => Scope::ReadWrite,
                },
                expires_at_ms: dec.option(|d| d.u64())?,
            },
            3 => TxKind::AccessRevoke {
                patient_id: dec.u64()?,
                grantee_id: Digest::decode_from(dec)?,
            },
            _ => TxKind::Appointment {
                patient_id: dec.u64()?,
                provider_id: Digest::decode_from(dec)?,
                slot_ms: dec.u64()?,
                note: dec.str()?,
            },
        })
    }
}

/// The signed part of a transaction. `issued_ms` makes repeated identical
/// actions (re-anchoring the same blob, re-granting) distinct transactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxBody {
    pub author_pubkey: PublicKey,
    pub issued_ms: u64,
    pub kind: TxKind,
}

impl Canonical for TxBody {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(&self.author_pubkey.0).u64(self.issued_ms);
        self.kind.encode_into(enc);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(TxBody {
            author_pubkey: PublicKey(dec.fixed()?),
            issued_ms: dec.u64()?,
            kind: TxKind::decode_from(dec)?,
        })
    }
}

impl TxBody {
    pub fn id(&self) -> Digest {
        hash_bytes(&self.to_canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Digest,
    #[serde(flatten)]
    pub body: TxBody,
    pub signature: Signature,
}

/// Why a transaction fails its self-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TxFault {
    #[error("tx_id does not match the body hash")]
    BadTxId,
    #[error("signature does not verify")]
    BadSignature,
}

impl TxFault {
    pub fn code(self) -> &'static str {
        match self {
            TxFault::BadTxId => "BadTxId",
            TxFault::BadSignature => "BadSignature",
        }
    }
}

impl Transaction {
    pub fn sign(key: &KeyPair, issued_ms: u64, kind: TxKind) -> Self {
        let body = TxBody {
            author_pubkey: key.public_key(),
            issued_ms,
            kind,
        };
        let tx_id = body.id();
        let signature = key.sign(tx_id.as_bytes());
        Transaction {
            tx_id,
            body,
            signature,
        }
    }

    pub fn author(&self) -> &PublicKey {
        &self.body.author_pubkey
    }

    pub fn kind(&self) -> &TxKind {
        &self.body.kind
    }

    pub fn check(&self) -> Result<(), TxFault> {
        self.check_with(&mut HashMap::new())
    }

    /// [`Self::check`] reusing decompressed author keys across calls; chain
    /// verification sees the same few authors over and over.
    pub(crate) fn check_with(
        &self,
        keys: &mut HashMap<PublicKey, Option<VerifyingKey>>,
    ) -> Result<(), TxFault> {
        if self.body.id() != self.tx_id {
            return Err(TxFault::BadTxId);
        }
        let author = self.body.author_pubkey;
        let key = keys.entry(author).or_insert_with(|| author.decompress());
        match key {
            Some(k) if verify_with(k, self.tx_id.as_bytes(), &self.signature) => Ok(()),
            _ => Err(TxFault::BadSignature),
        }
    }

    /// One-line human summary used by audit trails and logs.
    pub fn summary(&self) -> String {
        match &self.body.kind {
            TxKind::IdentityReg {
                role,
                display_name,
                patient_id,
                ..
            } => match patient_id {
                Some(p) => format!("register {role} {display_name:?} for patient {p}"),
                None => format!("register {role} {display_name:?}"),
            },
            TxKind::RecordAnchor {
                patient_id,
                content_address,
                author_id,
            } => format!("anchor {content_address} for patient {patient_id} by {author_id}"),
            TxKind::AccessGrant {
                patient_id,
                grantee_id,
                scope,
                expires_at_ms,
            } => match expires_at_ms {
                Some(t) => format!(
                    "grant {} on patient {patient_id} to {grantee_id} until {t}",
                    scope.as_str()
                ),
                None => format!(
                    "grant {} on patient {patient_id} to {grantee_id}",
                    scope.as_str()
                ),
            },
            TxKind::AccessRevoke {
                patient_id,
                grantee_id,
            } => format!("revoke patient {patient_id} from {grantee_id}"),
            TxKind::Appointment {
                patient_id,
                provider_id,
                slot_ms,
                ..
            } => format!("appointment for patient {patient_id} with {provider_id} at {slot_ms}"),
        }
    }
}

/// True iff the id matches the body hash and the signature verifies.
pub fn verify_transaction(tx: &Transaction) -> bool {
    tx.check().is_ok()
}

impl Canonical for Transaction {
    fn encode_into(&self, enc: &mut Encoder) {
        self.tx_id.encode_into(enc);
        self.body.encode_into(enc);
        enc.fixed(&self.signature.0);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Transaction {
            tx_id: Digest::decode_from(dec)?,
            body: TxBody::decode_from(dec)?,
            signature: Signature(dec.fixed()?),
        })
    }
}
