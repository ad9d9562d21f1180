//! A deployment on disk: chain log, vault, keystore and node key, with the
//! single-writer commit path used by the service, the CLI and the benchmark.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::rngs::OsRng;
use serde::Serialize;
use thiserror::Error;

use crate::block::{mine_block, MineError};
use crate::chain::{AppendError, Chain, TxRejection, VerificationReport};
use crate::chain_log::{self, LogError};
use crate::config::{Config, ConfigError, CONFIG_FILE};
use crate::digest::Digest;
use crate::keys::{KeyFileError, KeyPair, PublicKey, Role};
use crate::keystore::Keystore;
use crate::policy::{make_registration, AnchorRef, ChainState, TxRule};
use crate::tx::Transaction;
use crate::vault::{
    anchor_record, derived_nonce, open_record, seal_record, BlobStore, ContentAddress,
    PatientRecord, VaultError,
};

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("deployment already initialized at {0}")]
    AlreadyInitialized(PathBuf),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error(transparent)]
    KeyFile(#[from] KeyFileError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("transaction rejected: {0}")]
    Rejected(TxRejection),
    #[error("no pending transactions to mine")]
    NothingToMine,
    #[error(transparent)]
    Mine(#[from] MineError),
    #[error("mined block failed to append: {0}")]
    Append(#[from] AppendError),
    #[error("node key {0} is not a registered admin")]
    NodeKeyNotAdmin(Digest),
    #[error("patient {0} has no records")]
    NoRecords(u64),
}

impl From<TxRule> for LedgerError {
    fn from(r: TxRule) -> Self {
        LedgerError::Rejected(TxRejection::Rule(r))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MinedInfo {
    pub block_index: u64,
    pub digest: Digest,
    pub tx_count: usize,
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Submitted {
    pub tx_id: Digest,
    /// Present when the submission was mined immediately.
    pub mined: Option<MinedInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredRecord {
    pub anchor: AnchorRef,
    pub record: PatientRecord,
}

#[derive(Debug, Default)]
struct Writer {
    pending: Vec<Transaction>,
    last_issued_ms: u64,
}

pub struct Ledger {
    config: Config,
    snapshot: RwLock<Arc<Chain>>,
    writer: Mutex<Writer>,
    vault: BlobStore,
    keystore: Keystore,
    node_key: KeyPair,
    clock: Clock,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("chain_log", &self.config.chain_log)
            .field("height", &self.snapshot().tip_header().index)
            .finish_non_exhaustive()
    }
}

/// Creates a deployment directory: config, genesis-only chain log, empty
/// vault and keystore, and a fresh node key. Returns the resolved config.
pub fn init_deployment(dir: &Path, difficulty_bits: u8) -> Result<Config, LedgerError> {
    let cfg = Config {
        difficulty_bits,
        ..Config::default()
    };
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let config_path = dir.join(CONFIG_FILE);
    let resolved = cfg.clone().resolved_against(dir);
    if config_path.exists() || resolved.chain_log.exists() {
        return Err(LedgerError::AlreadyInitialized(dir.to_path_buf()));
    }
    chain_log::create(&resolved.chain_log)?;
    BlobStore::open(&resolved.vault_dir)?;
    Keystore::open(&resolved.keystore_dir)?;
    if !resolved.node_key.exists() {
        KeyPair::generate(&mut OsRng, Role::Admin, "node").save(&resolved.node_key)?;
    }
    std::fs::write(&config_path, cfg.to_toml())?;
    Ok(resolved)
}

impl Ledger {
    pub fn open(config: Config) -> Result<Self, LedgerError> {
        Self::open_with_clock(config, system_clock())
    }

    /// Replays the chain log and makes sure the node key is a registered
    /// admin, bootstrapping it into block 1 on a fresh chain.
    pub fn open_with_clock(config: Config, clock: Clock) -> Result<Self, LedgerError> {
        config.validate()?;
        let chain = chain_log::load_chain(&config.chain_log, config.difficulty_bits)?;
        let node_key = KeyPair::load(&config.node_key)?;
        let ledger = Ledger {
            vault: BlobStore::open(&config.vault_dir)?,
            keystore: Keystore::open(&config.keystore_dir)?,
            snapshot: RwLock::new(Arc::new(chain)),
            writer: Mutex::new(Writer::default()),
            node_key,
            clock,
            config,
        };
        let node_id = ledger.node_key.identity_id();
        let snapshot = ledger.snapshot();
        match snapshot.state().identity(&node_id) {
            Some(i) if i.role == Role::Admin => {}
            None if snapshot.state().identities.is_empty() => {
                let now = ledger.now_ms();
                let reg = make_registration(
                    &ledger.node_key,
                    &ledger.node_key.public_key(),
                    Role::Admin,
                    &ledger.node_key.name,
                    None,
                    now,
                );
                let mut w = ledger.writer.lock().unwrap();
                ledger.enqueue(&mut w, reg)?;
                ledger.mine_locked(&mut w)?;
            }
            _ => return Err(LedgerError::NodeKeyNotAdmin(node_id)),
        }
        Ok(ledger)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn now_ms(&self) -> u64 {
        (self.clock)()
    }

    pub fn node_key(&self) -> &KeyPair {
        &self.node_key
    }

    pub fn vault(&self) -> &BlobStore {
        &self.vault
    }

    pub fn keystore(&self) -> &Keystore {
        &self.keystore
    }

    /// Current committed chain. Cheap; never blocks on mining.
    pub fn snapshot(&self) -> Arc<Chain> {
        self.snapshot.read().unwrap().clone()
    }

    pub fn state(&self) -> ChainState {
        self.snapshot().state().clone()
    }

    pub fn pending(&self) -> Vec<Transaction> {
        self.writer.lock().unwrap().pending.clone()
    }

    /// A strictly increasing issue time for transactions signed here, so
    /// repeated identical actions get distinct ids.
    pub fn next_issued_ms(&self) -> u64 {
        let mut w = self.writer.lock().unwrap();
        let t = self.now_ms().max(w.last_issued_ms + 1);
        w.last_issued_ms = t;
        t
    }

    /// State after the committed chain plus the pending pool.
    fn pending_state(&self, w: &Writer, now: u64) -> ChainState {
        let mut state = self.snapshot().state().clone();
        for tx in &w.pending {
            // Pending entries were admitted on entry; re-admission can only
            // fail if the clock crossed a grant expiry, which mining rechecks.
            let _ = state.admit_tx(tx, now);
        }
        state
    }

    fn enqueue(&self, w: &mut Writer, tx: Transaction) -> Result<(), LedgerError> {
        tx.check().map_err(|f| LedgerError::Rejected(f.into()))?;
        let now = self.now_ms();
        let state = self.pending_state(w, now);
        state.check_tx(&tx, now)?;
        w.last_issued_ms = w.last_issued_ms.max(tx.body.issued_ms);
        w.pending.push(tx);
        Ok(())
    }

    /// Validates `tx` against committed and pending state, queues it, and
    /// mines immediately when `auto_mine` is on.
    pub fn submit(&self, tx: Transaction) -> Result<Submitted, LedgerError> {
        let mut w = self.writer.lock().unwrap();
        let tx_id = tx.tx_id;
        self.enqueue(&mut w, tx)?;
        let mined = if self.config.auto_mine {
            Some(self.mine_locked(&mut w)?)
        } else {
            None
        };
        Ok(Submitted { tx_id, mined })
    }

    /// Drains the pending pool into a new block.
    pub fn mine(&self) -> Result<MinedInfo, LedgerError> {
        let mut w = self.writer.lock().unwrap();
        self.mine_locked(&mut w)
    }

    fn mine_locked(&self, w: &mut Writer) -> Result<MinedInfo, LedgerError> {
        if w.pending.is_empty() {
            return Err(LedgerError::NothingToMine);
        }
        let now = self.now_ms();
        let current = self.snapshot();
        let mut state = current.state().clone();
        let txs: Vec<Transaction> = std::mem::take(&mut w.pending)
            .into_iter()
            .filter(|tx| state.admit_tx(tx, now).is_ok())
            .collect();
        if txs.is_empty() {
            return Err(LedgerError::NothingToMine);
        }
        let mined = mine_block(
            current.tip_header(),
            txs,
            self.config.difficulty_bits,
            now,
            0,
        )?;
        let next = current.append_block(mined.block.clone())?;
        chain_log::append(&self.config.chain_log, &mined.block)?;
        let info = MinedInfo {
            block_index: mined.block.header.index,
            digest: mined.block.digest(),
            tx_count: mined.block.transactions.len(),
            attempts: mined.attempts,
        };
        *self.snapshot.write().unwrap() = Arc::new(next);
        Ok(info)
    }

    /// Registers `subject` with an admin-signed registration.
    pub fn register(
        &self,
        subject: &PublicKey,
        role: Role,
        display_name: &str,
        patient_id: Option<u64>,
    ) -> Result<Submitted, LedgerError> {
        let tx = make_registration(
            &self.node_key,
            subject,
            role,
            display_name,
            patient_id,
            self.next_issued_ms(),
        );
        let out = self.submit(tx)?;
        if let Some(p) = patient_id {
            self.keystore.get_or_create(p)?;
        }
        Ok(out)
    }

    /// Seals, stores and anchors a record on behalf of `author_id`. The
    /// caller is responsible for the write-access decision.
    pub fn submit_record(
        &self,
        record: &PatientRecord,
        author_id: Digest,
    ) -> Result<(ContentAddress, Submitted), LedgerError> {
        record.validate()?;
        let key = self.keystore.get_or_create(record.patient_id)?;
        let sealed = seal_record(record, &key, derived_nonce(record, &key))?;
        let addr = self.vault.store_blob(&sealed)?;
        let issued = self.next_issued_ms();
        let tx = anchor_record(
            self.snapshot().state(),
            addr,
            record.patient_id,
            author_id,
            &self.node_key,
            issued,
        )?;
        Ok((addr, self.submit(tx)?))
    }

    /// Decrypts every committed record of the patient, oldest first. The
    /// caller is responsible for the read-access decision.
    pub fn read_records(&self, patient_id: u64) -> Result<Vec<StoredRecord>, LedgerError> {
        let snapshot = self.snapshot();
        let anchors = snapshot
            .state()
            .anchors
            .get(&patient_id)
            .filter(|a| !a.is_empty())
            .ok_or(LedgerError::NoRecords(patient_id))?;
        let key = self
            .keystore
            .get(patient_id)?
            .ok_or(LedgerError::Vault(VaultError::AuthFailure))?;
        anchors
            .iter()
            .map(|anchor| {
                let sealed = self.vault.fetch_blob(&anchor.content_address)?;
                let record = open_record(&sealed, &key, patient_id)?;
                Ok(StoredRecord {
                    anchor: anchor.clone(),
                    record,
                })
            })
            .collect()
    }

    /// Fetches and decrypts one stored blob of the patient. The caller is
    /// responsible for the read-access decision.
    pub fn fetch_record(
        &self,
        patient_id: u64,
        addr: &ContentAddress,
    ) -> Result<PatientRecord, LedgerError> {
        let key = self
            .keystore
            .get(patient_id)?
            .ok_or(LedgerError::Vault(VaultError::AuthFailure))?;
        let sealed = self.vault.fetch_blob(addr)?;
        Ok(open_record(&sealed, &key, patient_id)?)
    }

    /// Verifies the chain as persisted on disk.
    pub fn verify_log(&self) -> Result<VerificationReport, LedgerError> {
        Ok(chain_log::read_records(&self.config.chain_log)?.verify())
    }

    /// Flips the last byte of a persisted block record. Demo/test hook only.
    pub fn corrupt_persisted_block(&self, index: usize) -> Result<(), LedgerError> {
        let _w = self.writer.lock().unwrap();
        let (_, len) = chain_log::record_span(&self.config.chain_log, index)?;
        chain_log::corrupt_record(&self.config.chain_log, index, len.saturating_sub(1), 0x01)?;
        Ok(())
    }
}
