//! Ed25519 identities and the on-disk keypair file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::digest::{hash_bytes, Digest};

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Provider,
    Admin,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Patient, Role::Provider, Role::Admin];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Patient => "patient",
            Role::Provider => "provider",
            Role::Admin => "admin",
        }
    }

    pub(crate) fn encode_into(self, enc: &mut Encoder) {
        enc.u8(self as u8);
    }

    pub(crate) fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Role::ALL[dec.tag("role", 3)? as usize])
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown role {0:?} (expected patient, provider or admin)")]
pub struct ParseRoleError(String);

impl FromStr for Role {
    type Err = ParseRoleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patient" => Ok(Role::Patient),
            "provider" => Ok(Role::Provider),
            "admin" => Ok(Role::Admin),
            _ => Err(ParseRoleError(s.to_string())),
        }
    }
}

/// Raw Ed25519 public key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    /// Identity ids are the SHA-256 of the public key bytes.
    pub fn identity_id(&self) -> Digest {
        hash_bytes(&self.0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; PUBLIC_KEY_LEN];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(PublicKey(out))
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        self.decompress()
            .is_some_and(|key| verify_with(&key, msg, sig))
    }

    /// `None` if the bytes are not a valid curve point.
    pub(crate) fn decompress(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.0).ok()
    }
}

pub(crate) fn verify_with(key: &VerifyingKey, msg: &[u8], sig: &Signature) -> bool {
    key.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig.0))
        .is_ok()
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad public key hex"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; SIGNATURE_LEN];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Signature(out))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Signature::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad signature hex"))
    }
}

/// A signing key together with the role and display name it was issued for.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    pub role: Role,
    pub name: String,
}

#[derive(Debug, Error)]
pub enum KeyFileError {
    #[error("io error on key file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed key file: {0}")]
    Malformed(String),
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32], role: Role, name: impl Into<String>) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
            role,
            name: name.into(),
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(
        rng: &mut R,
        role: Role,
        name: impl Into<String>,
    ) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed, role, name)
    }

    /// Deterministic key for fixtures and simulations.
    pub fn from_label(label: &str, role: Role, name: impl Into<String>) -> Self {
        Self::from_seed(*hash_bytes(label.as_bytes()).as_bytes(), role, name)
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn identity_id(&self) -> Digest {
        self.public_key().identity_id()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }

    /// Three lines: seed hex, role, display name.
    pub fn to_file_contents(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            hex::encode(self.seed()),
            self.role,
            self.name
        )
    }

    pub fn from_file_contents(text: &str) -> Result<Self, KeyFileError> {
        let mut lines = text.lines();
        let seed_hex = lines
            .next()
            .ok_or_else(|| KeyFileError::Malformed("missing seed line".into()))?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(seed_hex.trim(), &mut seed)
            .map_err(|_| KeyFileError::Malformed("seed must be 64 hex characters".into()))?;
        let role = lines
            .next()
            .ok_or_else(|| KeyFileError::Malformed("missing role line".into()))?
            .parse::<Role>()
            .map_err(|e| KeyFileError::Malformed(e.to_string()))?;
        let name = lines
            .next()
            .ok_or_else(|| KeyFileError::Malformed("missing name line".into()))?
            .to_string();
        if name.is_empty() {
            return Err(KeyFileError::Malformed("empty name".into()));
        }
        Ok(Self::from_seed(seed, role, name))
    }

    pub fn load(path: &Path) -> Result<Self, KeyFileError> {
        Self::from_file_contents(&std::fs::read_to_string(path)?)
    }

    /// Writes the key file readable by the owner only (on unix).
    pub fn save(&self, path: &Path) -> Result<(), KeyFileError> {
        use std::io::Write;
        let mut opts = std::fs::OpenOptions::new();
        opts.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut file = opts.open(path)?;
        file.write_all(self.to_file_contents().as_bytes())?;
        Ok(())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .field("role", &self.role)
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfc8032_test_vector_1() {
        let seed: [u8; 32] =
            hex::decode("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
                .unwrap()
                .try_into()
                .unwrap();
        let kp = KeyPair::from_seed(seed, Role::Patient, "t");
        assert_eq!(
            kp.public_key().to_hex(),
            "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
        );
        let sig = kp.sign(b"");
        assert_eq!(
            sig.to_hex(),
            "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155\
             5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
        );
        assert!(kp.public_key().verify(b"", &sig));
        assert!(!kp.public_key().verify(b"x", &sig));
    }

    #[test]
    fn key_file_round_trip() {
        let kp = KeyPair::from_label("alice", Role::Provider, "Dr Alice");
        let back = KeyPair::from_file_contents(&kp.to_file_contents()).unwrap();
        assert_eq!(back.seed(), kp.seed());
        assert_eq!(back.role, Role::Provider);
        assert_eq!(back.name, "Dr Alice");
        assert!(KeyPair::from_file_contents("zz\npatient\nx\n").is_err());
        assert!(KeyPair::from_file_contents(&format!("{}\nnurse\nx\n", "00".repeat(32))).is_err());
    }

    #[test]
    fn identity_id_is_hash_of_public_key() {
        let kp = KeyPair::from_label("bob", Role::Patient, "bob");
        assert_eq!(kp.identity_id(), hash_bytes(&kp.public_key().0));
    }
}
