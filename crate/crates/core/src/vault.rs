//! Off-chain record storage.
//!
//! Patient records are encrypted with AES-256-GCM under a per-patient data
//! key, with the patient id (8 bytes, big-endian) as associated data. The
//! sealed bytes are stored in a flat directory keyed by their SHA-256, and
//! only that digest goes on chain in a `RecordAnchor` transaction.
//!
//! Layout: `<dir>/<hex digest>` per blob, plus `<dir>/MANIFEST` listing every
//! stored digest, one per line, sorted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::sync::Mutex;
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::digest::{hash_bytes, Digest};
use crate::keys::{KeyPair, Role};
use crate::policy::ChainState;
use crate::tx::{Transaction, TxKind};

pub const MAX_USERNAME_BYTES: usize = 256;
pub const MAX_AGE: u32 = 200;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const MANIFEST: &str = "MANIFEST";

/// A decimal reading kept exactly as entered (`"100"`, `"20.8"`). The only
/// validation is that it parses as a finite number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Decimal(String);

impl Decimal {
    pub fn new(text: impl Into<String>) -> Result<Self, VaultError> {
        let text = text.into();
        let trimmed = text.trim();
        match trimmed.parse::<f64>() {
            Ok(v) if v.is_finite() && !trimmed.is_empty() => Ok(Decimal(trimmed.to_string())),
            _ => Err(VaultError::InvalidRecord(format!(
                "{text:?} is not a decimal number"
            ))),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn value(&self) -> f64 {
        self.0.parse().expect("validated at construction")
    }
}

impl TryFrom<String> for Decimal {
    type Error = VaultError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Decimal::new(s)
    }
}

impl From<Decimal> for String {
    fn from(d: Decimal) -> String {
        d.0
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub username: String,
    pub age: u32,
    pub temperature: Decimal,
    pub time: Decimal,
    pub patient_id: u64,
    /// Free-form extension fields; carried but not validated.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl PatientRecord {
    pub fn new(
        username: &str,
        age: u32,
        temperature: &str,
        time: &str,
        patient_id: u64,
    ) -> Result<Self, VaultError> {
        let record = PatientRecord {
            username: username.to_string(),
            age,
            temperature: Decimal::new(temperature)?,
            time: Decimal::new(time)?,
            patient_id,
            extra: BTreeMap::new(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), VaultError> {
        if self.username.is_empty() || self.username.len() > MAX_USERNAME_BYTES {
            return Err(VaultError::InvalidRecord(
                "username must be 1..=256 bytes".into(),
            ));
        }
        if self.age > MAX_AGE {
            return Err(VaultError::InvalidRecord(format!(
                "age {} exceeds {MAX_AGE}",
                self.age
            )));
        }
        if self.patient_id == 0 {
            return Err(VaultError::InvalidRecord("patient id must be >= 1".into()));
        }
        Ok(())
    }
}

impl Canonical for PatientRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.username)
            .u32(self.age)
            .str(self.temperature.as_str())
            .str(self.time.as_str())
            .u64(self.patient_id)
            .u32(self.extra.len() as u32);
        for (k, v) in &self.extra {
            enc.str(k).str(v);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let invalid = |e: VaultError| CodecError::Invalid(e.to_string());
        let username = dec.str()?;
        let age = dec.u32()?;
        let temperature = Decimal::new(dec.str()?).map_err(invalid)?;
        let time = Decimal::new(dec.str()?).map_err(invalid)?;
        let patient_id = dec.u64()?;
        let count = dec.u32()?;
        let mut extra = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..count {
            let k = dec.str()?;
            if last.as_ref().is_some_and(|prev| *prev >= k) {
                return Err(CodecError::Invalid(
                    "extra keys must be strictly sorted".into(),
                ));
            }
            let v = dec.str()?;
            last = Some(k.clone());
            extra.insert(k, v);
        }
        Ok(PatientRecord {
            username,
            age,
            temperature,
            time,
            patient_id,
            extra,
        })
    }
}

/// A 256-bit data key. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct DataKey([u8; 32]);

impl DataKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Self(b)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Public identifier of the key: SHA-256 over a domain tag and the key.
    pub fn key_id(&self) -> Digest {
        let mut buf = b"medledger-data-key:".to_vec();
        buf.extend_from_slice(&self.0);
        hash_bytes(&buf)
    }
}

impl fmt::Debug for DataKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataKey(id={})", self.key_id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedRecord {
    pub nonce: [u8; NONCE_LEN],
    pub key_id: Digest,
    pub ciphertext: Vec<u8>,
}

impl Canonical for SealedRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(&self.nonce);
        self.key_id.encode_into(enc);
        enc.bytes(&self.ciphertext);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(SealedRecord {
            nonce: dec.fixed()?,
            key_id: Digest::decode_from(dec)?,
            ciphertext: dec.bytes()?,
        })
    }
}

impl SealedRecord {
    pub fn address(&self) -> ContentAddress {
        ContentAddress(hash_bytes(&self.to_canonical_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentAddress(pub Digest);

impl fmt::Display for ContentAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("authentication failed")]
    AuthFailure,
    #[error("blob {0} not found")]
    NotFound(ContentAddress),
    #[error("blob {0} is corrupt")]
    CorruptBlob(ContentAddress),
    #[error("vault storage full")]
    StorageFull,
    #[error("vault io error: {0}")]
    Io(#[from] io::Error),
    #[error("identity {0} is not a registered patient or provider")]
    UnknownIdentity(Digest),
}

fn associated_data(patient_id: u64) -> [u8; 8] {
    patient_id.to_be_bytes()
}

/// Nonce derived from the key and the record bytes. Identical records under
/// the same key seal to identical blobs (so resubmission is idempotent);
/// distinct records never share a nonce except by hash collision.
pub fn derived_nonce(record: &PatientRecord, key: &DataKey) -> [u8; NONCE_LEN] {
    let mut h = Sha256::new();
    h.update(b"medledger-record-nonce:");
    h.update(key.as_bytes());
    h.update(record.to_canonical_bytes());
    let mut nonce = [0u8; NONCE_LEN];
    nonce.copy_from_slice(&h.finalize()[..NONCE_LEN]);
    nonce
}

pub fn seal_record(
    record: &PatientRecord,
    key: &DataKey,
    nonce: [u8; NONCE_LEN],
) -> Result<SealedRecord, VaultError> {
    record.validate()?;
    let cipher = Aes256Gcm::new(key.as_bytes().into());
    let plaintext = record.to_canonical_bytes();
    let aad = associated_data(record.patient_id);
    let ciphertext = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: &plaintext,
                aad: &aad,
            },
        )
        .expect("AES-GCM encryption of in-memory data cannot fail");
    Ok(SealedRecord {
        nonce,
        key_id: key.key_id(),
        ciphertext,
    })
}

pub fn open_record(
    sealed: &SealedRecord,
    key: &DataKey,
    patient_id: u64,
) -> Result<PatientRecord, VaultError> {
    let cipher = Aes256Gcm::new(key.as_bytes().into());
    let aad = associated_data(patient_id);
    let plaintext = cipher
        .decrypt(
            Nonce::from_slice(&sealed.nonce),
            Payload {
                msg: &sealed.ciphertext,
                aad: &aad,
            },
        )
        .map_err(|_| VaultError::AuthFailure)?;
    let record =
        PatientRecord::from_canonical_bytes(&plaintext).map_err(|_| VaultError::AuthFailure)?;
    if record.patient_id != patient_id {
        return Err(VaultError::AuthFailure);
    }
    Ok(record)
}

/// Content-addressed blob directory.
#[derive(Debug)]
pub struct BlobStore {
    dir: PathBuf,
    manifest: Mutex<BTreeSet<Digest>>,
    max_blobs: Option<usize>,
}

impl BlobStore {
    /// Opens (creating if needed) the vault directory and loads its manifest.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, VaultError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut manifest = BTreeSet::new();
        match fs::read_to_string(dir.join(MANIFEST)) {
            Ok(text) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let d = line.trim().parse::<Digest>().map_err(|_| {
                        io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("bad manifest line {line:?}"),
                        )
                    })?;
                    manifest.insert(d);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            dir,
            manifest: Mutex::new(manifest),
            max_blobs: None,
        })
    }

    /// Caps the number of stored blobs; further distinct puts fail with `StorageFull`.
    pub fn with_capacity_limit(mut self, max_blobs: usize) -> Self {
        self.max_blobs = Some(max_blobs);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn blob_path(&self, addr: &ContentAddress) -> PathBuf {
        self.dir.join(addr.0.to_hex())
    }

    pub fn addresses(&self) -> Vec<ContentAddress> {
        self.manifest
            .lock()
            .unwrap()
            .iter()
            .copied()
            .map(ContentAddress)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.manifest.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Idempotent put keyed by the SHA-256 of the canonical sealed bytes.
    pub fn store_blob(&self, sealed: &SealedRecord) -> Result<ContentAddress, VaultError> {
        let bytes = sealed.to_canonical_bytes();
        let addr = ContentAddress(hash_bytes(&bytes));
        let mut manifest = self.manifest.lock().unwrap();
        let path = self.blob_path(&addr);
        if manifest.contains(&addr.0) && path.exists() {
            return Ok(addr);
        }
        if let Some(max) = self.max_blobs {
            if manifest.len() >= max && !manifest.contains(&addr.0) {
                return Err(VaultError::StorageFull);
            }
        }
        write_atomically(&path, &bytes)?;
        manifest.insert(addr.0);
        let mut text = String::with_capacity(manifest.len() * 65);
        for d in manifest.iter() {
            text.push_str(&d.to_hex());
            text.push('\n');
        }
        write_atomically(&self.dir.join(MANIFEST), text.as_bytes())?;
        Ok(addr)
    }

    pub fn fetch_raw(&self, addr: &ContentAddress) -> Result<Vec<u8>, VaultError> {
        match fs::read(self.blob_path(addr)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(VaultError::NotFound(*addr)),
            Err(e) => Err(e.into()),
        }
    }

    /// Reads a blob and checks it still hashes to its address.
    pub fn fetch_blob(&self, addr: &ContentAddress) -> Result<SealedRecord, VaultError> {
        let bytes = self.fetch_raw(addr)?;
        if hash_bytes(&bytes) != addr.0 {
            return Err(VaultError::CorruptBlob(*addr));
        }
        SealedRecord::from_canonical_bytes(&bytes).map_err(|_| VaultError::CorruptBlob(*addr))
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

/// Builds the signed anchor for a stored blob. `author_id` must be a
/// registered patient or provider; `signer` is the author's own key or an
/// admin key acting for the author.
pub fn anchor_record(
    state: &ChainState,
    addr: ContentAddress,
    patient_id: u64,
    author_id: Digest,
    signer: &KeyPair,
    issued_ms: u64,
) -> Result<Transaction, VaultError> {
    match state.identity(&author_id) {
        Some(ident) if matches!(ident.role, Role::Patient | Role::Provider) => {}
        _ => return Err(VaultError::UnknownIdentity(author_id)),
    }
    Ok(Transaction::sign(
        signer,
        issued_ms,
        TxKind::RecordAnchor {
            patient_id,
            content_address: addr.0,
            author_id,
        },
    ))
}
